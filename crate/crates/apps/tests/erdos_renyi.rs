use std::time::Instant;

use stein_llt::coupling::{substream, verify_identity, EstimationConfig};
use stein_llt::dist::LatticePmf;
use stein_llt::Error;
use stein_llt_apps::erdos_renyi::*;

fn fixture() -> Vec<(u64, f64, usize, f64)> {
    include_str!("fixtures/isolated_pmf.csv")
        .lines()
        .skip(1)
        .map(|l| {
            let f: Vec<&str> = l.split(',').collect();
            (
                f[0].parse().unwrap(),
                f[1].parse().unwrap(),
                f[2].parse().unwrap(),
                f[3].parse().unwrap(),
            )
        })
        .collect()
}

#[test]
fn matches_independent_recursion() {
    let rows = fixture();
    let mut cases: Vec<(u64, f64)> = rows.iter().map(|r| (r.0, r.1)).collect();
    cases.dedup();
    for (n, p) in cases {
        let c = exact_isolated_pmf(n, p, default_bits(n)).unwrap();
        for r in rows.iter().filter(|r| r.0 == n && r.1 == p) {
            let got = c.pmf.probs[r.2];
            assert!(
                (got - r.3).abs() <= 1e-15 + 1e-12 * r.3,
                "n={n} k={}: {got} vs {}",
                r.2,
                r.3
            );
            assert!((got - r.3).abs() <= c.entry_error[r.2] + 1e-16 * r.3.max(1e-300) + 1e-300);
        }
    }
}

#[test]
fn matches_enumeration() {
    for n in 1..=6u64 {
        for i in 1..=9 {
            let p = i as f64 / 10.0;
            let e = exact_isolated_pmf(n, p, 128).unwrap();
            let b = brute_force_isolated_pmf(n, p).unwrap();
            for (x, y) in e.pmf.probs.iter().zip(&b.probs) {
                assert!((x - y).abs() <= 1e-14, "n={n} p={p}: {x} {y}");
            }
        }
    }
}

#[test]
fn moments_reproduce_closed_forms() {
    for (n, lam) in [(20u64, 1.0), (100, 2.0), (400, 1.0), (800, 2.0)] {
        let inst = ErInstance::with_lambda(n, lam).unwrap();
        let c = exact_isolated_pmf(n, inst.p, default_bits(n)).unwrap();
        assert!((c.pmf.total_mass() - 1.0).abs() < 1e-12);
        assert!((c.pmf.mean() - inst.mu).abs() <= 1e-10 * inst.mu, "n={n}");
        assert!(
            (c.pmf.variance() - inst.sigma2).abs() <= 1e-10 * inst.sigma2,
            "n={n}"
        );
    }
}

#[test]
fn largest_size_is_fast_enough() {
    let t = Instant::now();
    let c = exact_isolated_pmf(800, 2.0 / 800.0, default_bits(800)).unwrap();
    assert!(c.max_error() <= TARGET_ERROR);
    println!("n=800 exact pmf in {:?}", t.elapsed());
    match exact_isolated_pmf(800, 2.0 / 800.0, 256) {
        Err(Error::PrecisionInsufficient {
            certified,
            suggested_bits,
            ..
        }) => {
            assert!(certified > TARGET_ERROR);
            assert!(suggested_bits > 1000);
        }
        other => panic!("{other:?}"),
    }
    assert!(exact_isolated_pmf(801, 0.01, 2000).is_err());
}

#[test]
fn sampler_mean() {
    let inst = ErInstance::with_lambda(100, 2.0).unwrap();
    let (m, se) = mc_mean(100, inst.p, 1_000_000, 3, 0);
    assert!((m - inst.mu).abs() < 4.0 * se, "{m} +- {se} vs {}", inst.mu);
}

#[test]
fn sampler_law_within_dkw_band() {
    let n = 100u64;
    let p = 0.02;
    let exact = exact_isolated_pmf(n, p, default_bits(n)).unwrap().pmf;
    let mut rng = substream(4, 0);
    let draws: Vec<i64> = (0..200_000)
        .map(|_| sample_isolated(n, p, &mut rng).0)
        .collect();
    let emp = LatticePmf::from_samples(&draws).unwrap();
    let eps = ((2.0f64 / 0.001).ln() / (2.0 * draws.len() as f64)).sqrt();
    let (mut fe, mut fx) = (0.0, 0.0);
    for k in 0..=n as i64 {
        fe += emp.prob_at(k);
        fx += exact.prob_at(k);
        assert!((fe - fx).abs() <= eps, "k={k}");
    }
}

#[test]
fn size_bias_identity() {
    let inst = ErInstance::with_lambda(100, 2.0).unwrap();
    let rep = verify_identity(&er_coupling(&inst).unwrap(), 200_000, 6, 0).unwrap();
    assert!(rep.passed, "{:?}", rep.diagnostics);
    assert!((rep.e_gd.value - inst.sigma2).abs() <= 4.0 * rep.e_gd.se);
}

#[test]
fn degree_one_mean() {
    let inst = ErInstance::with_lambda(60, 1.5).unwrap();
    let mut rng = substream(8, 0);
    let n = 400_000;
    let mut acc = 0.0;
    let mut acc2 = 0.0;
    for _ in 0..n {
        let w1 = sample_isolated(60, inst.p, &mut rng).1 as f64;
        acc += w1;
        acc2 += w1 * w1;
    }
    let m = acc / n as f64;
    let se = ((acc2 / n as f64 - m * m) / n as f64).sqrt();
    assert!((m - inst.mean_degree_one()).abs() < 4.0 * se);
}

#[test]
fn degree_tails_below_bound() {
    let n = 200u64;
    let ts: Vec<f64> = [0.0, 0.5, 1.0, 2.0, 3.0]
        .iter()
        .map(|c| c * (n as f64).sqrt())
        .collect();
    for d in [0, 1] {
        let r = degree_count_tail_check(n, 2.0 / n as f64, d, &ts, 20_000, 9, 0).unwrap();
        assert!(r.passed, "{r:?}");
        assert_eq!(r.points[0].bound, 2.0);
    }
    assert!(degree_count_tail_check(n, 0.01, 2, &ts, 10, 1, 0).is_err());
}

#[test]
fn small_rate_experiment_runs() {
    let cfg = EstimationConfig {
        n_outer: 20_000,
        n_inner: 500,
        upsilon_outer: 200,
        max_moment: 4,
        seed: 3,
        workers: 2,
    };
    let s = er_rate_experiment(1.0, &[50, 100, 200, 400], &cfg).unwrap();
    assert_eq!(s.records.len(), 4);
    for r in &s.records {
        assert!(r.tv_bound > r.d_tv && r.loc_bound > r.d_loc);
        assert!(r.extras.contains_key("loc_diag"));
    }
}
