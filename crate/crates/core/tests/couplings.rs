use rand::Rng;
use stein_llt::coupling::{
    build_local_dependence, build_one_sided_pair, build_size_bias, conditional_smoothness,
    estimate_components, substream, verify_identity, CouplingSample, Decomposition,
    EstimationConfig, LocalAux, SteinCoupling, Stream,
};
use stein_llt::dist::{LatticePmf, TpParams};
use stein_llt::metrics::smoothness;

fn bernoulli_local(n: usize, p: f64) -> impl SteinCoupling<Aux = LocalAux> {
    build_local_dependence(
        move |rng| (0..n).map(|_| rng.gen_bool(p) as i64).collect(),
        vec![p; n],
        (0..n).map(|i| vec![i]).collect(),
        n as f64 * p * (1.0 - p),
        true,
    )
    .unwrap()
}

fn binomial_size_bias(n: usize, p: f64) -> impl SteinCoupling<Aux = i64> {
    let mu = n as f64 * p;
    build_size_bias(
        move |rng: &mut Stream| {
            let x: Vec<i64> = (0..n).map(|_| rng.gen_bool(p) as i64).collect();
            let w: i64 = x.iter().sum();
            let i = rng.gen_range(0..n);
            (w, w + 1 - x[i], w)
        },
        mu,
        mu * (1.0 - p),
    )
    .unwrap()
    .with_conditional_gd(move |s: &CouplingSample<i64>| mu * (1.0 - s.aux as f64 / n as f64))
}

fn small_cfg(n_outer: usize) -> EstimationConfig {
    EstimationConfig {
        n_outer,
        n_inner: 4000,
        upsilon_outer: 300,
        max_moment: 4,
        seed: 21,
        workers: 0,
    }
}

#[test]
fn local_dependence_bernoulli_variance() {
    let c = bernoulli_local(40, 0.5);
    let rep = verify_identity(&c, 50_000, 3, 0).unwrap();
    assert!(rep.passed, "{:?}", rep.diagnostics);
    assert!((rep.e_gd.value - 10.0).abs() <= 4.0 * rep.e_gd.se);
}

#[test]
fn psi_closed_form_for_ten_fair_coins() {
    let c = bernoulli_local(10, 0.5);
    let comps = estimate_components(&c, &Decomposition::default(), &small_cfg(200_000)).unwrap();
    let bin = LatticePmf::binomial(10, 0.5).unwrap();
    let exact: f64 = bin
        .iter()
        .map(|(w, p)| p * (w as f64 - 5.0).abs() / 2.0)
        .sum();
    assert!(
        (comps.e_psi.value - exact).abs() <= 4.0 * comps.e_psi.se + 1e-9,
        "{} vs {exact}",
        comps.e_psi.value
    );
    assert!(comps.e_r2.value == 0.0);
}

#[test]
fn size_bias_binomial_identity_and_psi() {
    let c = binomial_size_bias(30, 0.3);
    let rep = verify_identity(&c, 60_000, 8, 2).unwrap();
    assert!(rep.passed, "{:?}", rep.diagnostics);
    let comps = estimate_components(&c, &Decomposition::default(), &small_cfg(100_000)).unwrap();
    // Psi = mu |W - mu| / n, so E Psi = p E|W - mu|
    let bin = LatticePmf::binomial(30, 0.3).unwrap();
    let exact: f64 = bin
        .iter()
        .map(|(w, q)| q * 0.3 * (w as f64 - 9.0).abs())
        .sum();
    assert!((comps.e_psi.value - exact).abs() <= 4.0 * comps.e_psi.se + 1e-9);
}

#[test]
fn size_bias_poisson_is_exact() {
    let lam = 7.5;
    let c = build_size_bias(
        move |rng: &mut Stream| {
            let l = LatticePmf::poisson(lam, 1e-14).unwrap();
            let u: f64 = rng.gen();
            let mut acc = 0.0;
            let mut w = l.max_value();
            for (k, p) in l.iter() {
                acc += p;
                if u < acc {
                    w = k;
                    break;
                }
            }
            (w, w + 1, ())
        },
        lam,
        lam,
    )
    .unwrap()
    .with_conditional_gd(move |_| lam);
    let rep = verify_identity(&c, 20_000, 1, 0).unwrap();
    assert!(rep.passed);
    let comps = estimate_components(&c, &Decomposition::default(), &small_cfg(20_000)).unwrap();
    assert_eq!(comps.e_psi.value, 0.0);
}

#[test]
fn one_sided_unit_steps_have_no_smoothness_term() {
    let n = 25usize;
    let p = 0.4;
    let c = build_one_sided_pair(
        move |rng: &mut Stream| {
            let x: Vec<i64> = (0..n).map(|_| rng.gen_bool(p) as i64).collect();
            let w: i64 = x.iter().sum();
            let i = rng.gen_range(0..n);
            let fresh = rng.gen_bool(p) as i64;
            (w, w - x[i] + fresh, w)
        },
        1.0 / n as f64,
        |_, _| 0.0,
        n as f64 * p,
        n as f64 * p * (1.0 - p),
    )
    .unwrap()
    .with_conditional_gd(move |s: &CouplingSample<i64>| (n as f64 - s.aux as f64) * p);
    let rep = verify_identity(&c, 50_000, 4, 0).unwrap();
    assert!(rep.passed, "{:?}", rep.diagnostics);
    let comps = estimate_components(&c, &Decomposition::default(), &small_cfg(20_000)).unwrap();
    assert!(comps.remark1_regime);
    assert_eq!(comps.upsilon.value, 0.0);
}

#[test]
fn zero_remainder_gives_zero_t() {
    let c = bernoulli_local(12, 0.5);
    let zero = |_: &CouplingSample<LocalAux>| 0.0;
    let dec = Decomposition {
        kappa: Some(0.5),
        k_order: Some(1),
        t: Some(&zero),
    };
    let comps = estimate_components(&c, &dec, &small_cfg(10_000)).unwrap();
    assert_eq!(comps.t_mean.value, 0.0);
    assert_eq!(comps.t_second.value, 0.0);
    assert!(comps.sup_pmf_poly.is_some());
    assert_eq!(comps.moments.len(), 5);
}

#[test]
fn nested_smoothness_matches_conditional_binomial() {
    let n = 30usize;
    let c = bernoulli_local(n, 0.5);
    let mut rng = substream(9, 0);
    let s = c.sample(&mut rng);
    let st = conditional_smoothness(&c, &s, 400_000, &mut rng).unwrap();
    // Given I and X_I, W is X_I plus an independent Bin(n - 1, 1/2).
    let exact = smoothness(&LatticePmf::binomial(n as u64 - 1, 0.5).unwrap(), 2)
        .unwrap()
        .value;
    let debiased = (st.raw - st.floor).max(0.0);
    println!(
        "raw={} floor={} debiased={debiased} plugin={} exact={exact}",
        st.raw, st.floor, st.plugin
    );
    assert!(st.raw >= exact * 0.95);
    assert!((debiased - exact).abs() < 0.25 * exact);
    let tp = TpParams::new(14.5, 29.0 / 4.0).unwrap();
    let tp_s2 = smoothness(&tp.to_lattice(1e-12).unwrap(), 2).unwrap().value;
    assert!((st.plugin - tp_s2).abs() < 0.1 * tp_s2);
}

#[test]
fn estimates_do_not_depend_on_workers() {
    let c = bernoulli_local(20, 0.3);
    let mut a = small_cfg(30_000);
    a.workers = 1;
    let mut b = a;
    b.workers = 4;
    let ra = estimate_components(&c, &Decomposition::default(), &a).unwrap();
    let rb = estimate_components(&c, &Decomposition::default(), &b).unwrap();
    assert_eq!(ra, rb);
}
