use stein_llt::dist::{poisson_log_pmf, poisson_mode_constant, LatticePmf, TpParams};
use stein_llt::metrics::{d_loc, d_tv};
use stein_llt::stein::{delta_g, g_singleton, PoissonKernel};

const POISSON_GRID: &str = include_str!("fixtures/poisson_log_pmf.csv");
const STEIN_VALUES: &str = include_str!("fixtures/stein_values.csv");

fn rows(text: &str) -> impl Iterator<Item = Vec<&str>> {
    text.lines().skip(1).map(|l| l.split(',').collect())
}

#[test]
fn poisson_log_pmf_matches_high_precision_grid() {
    let mut worst: f64 = 0.0;
    let mut count = 0;
    for r in rows(POISSON_GRID) {
        let lam: f64 = r[0].parse().unwrap();
        let k: u64 = r[1].parse().unwrap();
        let expect: f64 = r[2].parse().unwrap();
        let got = poisson_log_pmf(lam, k).unwrap();
        let rel = (got - expect).abs() / expect.abs().max(1e-300);
        worst = worst.max(rel);
        count += 1;
    }
    assert_eq!(count, 1000);
    assert!(worst <= 1e-12, "worst relative error {worst:e}");
}

#[test]
fn poisson_log_pmf_examples() {
    assert_eq!(poisson_log_pmf(1.0, 0).unwrap(), -1.0);
    let v = poisson_log_pmf(4.0, 4).unwrap();
    assert!((v - (256.0 * (-4f64).exp() / 24.0).ln()).abs() < 1e-14);
    assert!((v.exp() - 0.195_366_814_813_165).abs() < 1e-14);
    assert!(poisson_log_pmf(0.0, 1).is_err());
    assert!(poisson_log_pmf(f64::NAN, 1).is_err());
    assert!(poisson_log_pmf(-1.0, 1).is_err());
}

#[test]
fn poisson_mode_bound() {
    for i in 0..200 {
        let lam = 1.0 + 1.07f64.powi(i);
        let k = lam.floor() as u64;
        let v = poisson_log_pmf(lam, k).unwrap().exp() * lam.sqrt();
        assert!(v <= poisson_mode_constant(), "lambda={lam}");
    }
}

#[test]
fn stein_solution_matches_high_precision() {
    for r in rows(STEIN_VALUES) {
        let lam: f64 = r[0].parse().unwrap();
        let a: u64 = r[1].parse().unwrap();
        let k: i64 = r[2].parse().unwrap();
        let g: f64 = r[3].parse().unwrap();
        let d: f64 = r[4].parse().unwrap();
        let got_g = g_singleton(lam, a, k).unwrap();
        let got_d = delta_g(lam, a, k).unwrap();
        let tol = |x: f64| 1e-12 * x.abs() + 1e-300;
        assert!(
            (got_g - g).abs() <= tol(g),
            "g({lam},{a},{k}) = {got_g} vs {g}"
        );
        assert!(
            (got_d - d).abs() <= tol(d),
            "dg({lam},{a},{k}) = {got_d} vs {d}"
        );
    }
}

#[test]
fn kernel_tails_are_complementary() {
    let ker = PoissonKernel::new(250.0, 600).unwrap();
    for k in [0u64, 100, 200, 250, 251, 300, 400] {
        let lo = ker.ln_lower_tail(k).unwrap().exp();
        let hi = ker.ln_upper_tail(k).exp();
        assert!((lo + hi - 1.0).abs() < 1e-13, "k={k}");
    }
}

#[test]
fn poisson_vs_translated_distance() {
    let p = LatticePmf::poisson(4.0, 1e-14).unwrap();
    let q = TpParams::new(5.0, 4.0).unwrap().to_lattice(1e-14).unwrap();
    let direct: f64 = (0..80)
        .map(|n| {
            let a = if n >= 0 {
                (poisson_log_pmf(4.0, n as u64).unwrap()).exp()
            } else {
                0.0
            };
            let b = if n >= 1 {
                (poisson_log_pmf(4.0, n as u64 - 1).unwrap()).exp()
            } else {
                0.0
            };
            (a - b).abs()
        })
        .sum::<f64>()
        * 0.5;
    let m = d_tv(&p, &q).unwrap();
    assert!((m.value - direct).abs() <= 1e-13 + m.slack);
    let l = d_loc(&p, &q).unwrap();
    assert!(l.value <= m.value);
}
