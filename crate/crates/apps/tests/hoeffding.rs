use proptest::prelude::*;
use stein_llt::coupling::{substream, verify_identity};
use stein_llt::dist::LatticePmf;
use stein_llt::Error;
use stein_llt_apps::hoeffding::*;

fn square(n: usize, mut f: impl FnMut(usize, usize) -> i64) -> Vec<Vec<i64>> {
    (0..n).map(|i| (0..n).map(|j| f(i, j)).collect()).collect()
}

fn small_matrix() -> impl Strategy<Value = Vec<Vec<i64>>> {
    (2usize..7)
        .prop_flat_map(|n| proptest::collection::vec(proptest::collection::vec(-4i64..5, n), n))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn centering_identities(rows in small_matrix(), c in -20i64..20) {
        let inst = build_instance(&rows).unwrap();
        let n = inst.n;
        prop_assert!(inst.mu.abs() <= n as f64 / 2.0 + 1e-12);
        for i in 0..n {
            let r: f64 = inst.hat[i * n..(i + 1) * n].iter().sum();
            let col: f64 = (0..n).map(|k| inst.hat[k * n + i]).sum();
            prop_assert!(r.abs() < 1e-12 && col.abs() < 1e-12);
        }
        let shifted: Vec<Vec<i64>> = rows.iter().map(|r| r.iter().map(|x| x + c).collect()).collect();
        let other = build_instance(&shifted).unwrap();
        prop_assert!((other.sigma2 - inst.sigma2).abs() <= 1e-12 * inst.sigma2.max(1.0));
    }

    #[test]
    fn moments_match_enumeration(rows in small_matrix()) {
        let inst = build_instance(&rows).unwrap();
        let p = brute_force_pmf(&inst).unwrap();
        prop_assert!((p.mean() - inst.mu).abs() < 1e-12 * inst.mu.abs().max(1.0));
        prop_assert!((p.variance() - inst.sigma2).abs() < 1e-12 * inst.sigma2.max(1.0));
    }

    #[test]
    fn t_means_match_enumeration(rows in small_matrix()) {
        let inst = build_instance(&rows).unwrap();
        let n = inst.n;
        if n > 5 { return Ok(()); }
        let mut acc = [0.0f64; 4];
        let mut count = 0.0;
        let mut perm: Vec<usize> = (0..n).collect();
        permute(&mut perm, 0, &mut |p| {
            let t = inst.t_values(p);
            for l in 0..4 { acc[l] += t[l]; }
            count += 1.0;
        });
        for (a, e) in acc.iter().zip(inst.t_means()) {
            prop_assert!((a / count - e).abs() < 1e-10 * e.abs().max(1.0));
        }
    }
}

fn permute(p: &mut Vec<usize>, k: usize, f: &mut impl FnMut(&[usize])) {
    if k == p.len() {
        f(p);
        return;
    }
    for i in k..p.len() {
        p.swap(k, i);
        permute(p, k + 1, f);
        p.swap(k, i);
    }
}

#[test]
fn two_point_law() {
    let inst = build_instance(&[vec![0, 1], vec![1, 0]]).unwrap();
    assert_eq!((inst.mu, inst.sigma2), (1.0, 1.0));
    let mut rng = substream(3, 0);
    let draws: Vec<i64> = (0..10_000).map(|_| sample_w(&inst, &mut rng)).collect();
    assert!(draws.iter().all(|&w| w == 0 || w == 2));
    let twos = draws.iter().filter(|&&w| w == 2).count() as f64;
    assert!((twos / 1e4 - 0.5).abs() < 4.0 * 0.005);
}

#[test]
fn constant_matrix_gives_constant_draws() {
    let inst = build_instance(&square(5, |_, _| 2)).unwrap();
    assert!(inst.degenerate);
    let mut rng = substream(1, 0);
    assert!((0..100).all(|_| sample_w(&inst, &mut rng) == inst.mu as i64));
}

#[test]
fn sampler_mean() {
    let inst = build_instance(&MatrixFamily::Bernoulli.generate(30, 4)).unwrap();
    let draws = sample_many(&inst, 1_000_000, 9, 0);
    let n = draws.len() as f64;
    let m = draws.iter().sum::<i64>() as f64 / n;
    assert!((m - inst.mu).abs() < 4.0 * (inst.sigma2 / n).sqrt());
}

#[test]
fn brute_force_size_limit() {
    let inst = build_instance(&square(10, |i, j| (i * j % 3) as i64)).unwrap();
    assert!(matches!(brute_force_pmf(&inst), Err(Error::Size(_))));
}

#[test]
fn conditional_gd_enumeration_is_exact() {
    for (n, seed) in [(2, 1), (3, 2), (4, 3), (5, 4), (5, 5)] {
        let inst = build_instance(&MatrixFamily::ParityNoise.generate(n, seed)).unwrap();
        if inst.degenerate {
            continue;
        }
        let (cgd, direct) = enumerate_gd(&inst).unwrap();
        assert!(
            (cgd - inst.sigma2).abs() < 1e-12 * inst.sigma2.max(1.0),
            "n={n}: {cgd} vs {}",
            inst.sigma2
        );
        assert!(
            (direct - inst.sigma2).abs() < 1e-12 * inst.sigma2.max(1.0),
            "n={n}: {direct}"
        );
    }
}

#[test]
fn identity_at_fifty() {
    let mut rng = substream(77, 0);
    use rand::Rng;
    let rows = square(50, |_, _| if rng.gen_bool(0.5) { 1 } else { -1 });
    let inst = build_instance(&rows).unwrap();
    let rep = verify_identity(&hoeffding_coupling(&inst).unwrap(), 200_000, 5, 0).unwrap();
    assert!(rep.passed, "{rep:?}");
}

#[test]
fn degenerate_coupling_refused() {
    let inst = build_instance(&square(4, |_, _| 1)).unwrap();
    assert!(hoeffding_coupling(&inst).is_err());
}

#[test]
fn assumption_checks() {
    let even = build_instance(&square(8, |i, j| 2 * ((i + 2 * j) % 3) as i64)).unwrap();
    assert_eq!(check_assumptions(&even, 0).alpha1, 0.0);

    let id = build_instance(&square(6, |i, j| (i == j) as i64)).unwrap();
    let rep = check_assumptions(&id, 0);
    assert!(rep.alpha2 > 0.0 && rep.n1 == 3, "{rep:?}");
    // rows 0 and 1: column pairs touching column 0 or 1 give a unit sum, except {0, 1}
    assert_eq!(rep.pair_counts[0], 8);

    let mut b = build_instance(&MatrixFamily::Bernoulli.generate(50, 11)).unwrap();
    let rep = b.assess(50 * 50 / 20).clone();
    assert!(rep.alpha1 > 0.2 && rep.alpha2 > 0.05, "{rep:?}");
    assert_eq!(b.assumption_report.as_ref(), Some(&rep));
    assert!(rep.pairs.iter().all(|&(x, y)| x < y));
    let mut seen = std::collections::HashSet::new();
    assert!(rep
        .pairs
        .iter()
        .all(|&(x, y)| seen.insert(x) && seen.insert(y)));
}

#[test]
fn moment_bound() {
    let inst = build_instance(&MatrixFamily::Bernoulli.generate(40, 2)).unwrap();
    let draws = sample_many(&inst, 100_000, 8, 0);
    let sigma = inst.sigma2.sqrt();
    let a1 = inst.a1_bound as f64;
    let n = inst.n as f64;
    for j in 1..=4i32 {
        let m = draws
            .iter()
            .map(|&w| ((w as f64 - inst.mu) / sigma).abs().powi(2 * j))
            .sum::<f64>()
            / draws.len() as f64;
        let bound = ((2 * j - 1) as f64 * a1 / sigma).powi(2 * j) * n.powi(j);
        assert!(m <= bound, "j={j}: {m} > {bound}");
    }
}

#[test]
fn brute_force_cross_check_at_eight() {
    let inst = build_instance(&MatrixFamily::Bernoulli.generate(8, 3)).unwrap();
    let exact = brute_force_pmf(&inst).unwrap();
    let n = 400_000;
    let emp = LatticePmf::from_samples(&sample_many(&inst, n, 12, 0)).unwrap();
    for (k, p) in exact.iter() {
        let se = (p * (1.0 - p) / n as f64).sqrt();
        assert!(
            (emp.prob_at(k) - p).abs() <= 4.5 * se + 1.0 / n as f64,
            "k={k}"
        );
    }
    assert!(emp.iter().all(|(k, q)| q == 0.0 || exact.prob_at(k) > 0.0));
}

#[test]
fn t_deviation_grows_like_sqrt_n() {
    let grid = [25usize, 50, 100, 200];
    let mut ratios = Vec::new();
    for &n in &grid {
        let inst = build_instance(&MatrixFamily::Bernoulli.generate(n, 5)).unwrap();
        let c = hoeffding_coupling(&inst).unwrap();
        let t = remainder(&inst);
        let mut rng = substream(21, n as u64);
        let m = 4000;
        let mean = (0..m)
            .map(|_| t(&stein_llt::coupling::SteinCoupling::sample(&c, &mut rng)))
            .sum::<f64>()
            / m as f64;
        ratios.push(mean / (n as f64).sqrt());
    }
    let hi = ratios.iter().cloned().fold(0.0, f64::max);
    let lo = ratios.iter().cloned().fold(f64::INFINITY, f64::min);
    assert!(hi / lo < 2.0, "{ratios:?}");
}

#[test]
fn t_tails_decay_exponentially() {
    let inst = build_instance(&MatrixFamily::ParityNoise.generate(100, 6)).unwrap();
    let ts: Vec<f64> = (0..=8).map(|k| 0.25 * k as f64).collect();
    for (l, prof) in t_tail_profiles(&inst, 50_000, &ts, 4, 0)
        .unwrap()
        .iter()
        .enumerate()
    {
        let d = tail_decay(prof);
        assert!(d.exponential(), "T{}: {d:?}", l + 1);
    }
}

#[test]
fn sample_floor_enforced() {
    let inst = build_instance(&MatrixFamily::Bernoulli.generate(50, 1)).unwrap();
    let cfg = HoeffdingRateConfig {
        n_samples: Some(100),
        ..Default::default()
    };
    match hoeffding_record(&inst, &cfg) {
        Err(Error::Domain(m)) => assert!(m.contains(&required_samples(inst.sigma2).to_string())),
        other => panic!("expected refusal, got {other:?}"),
    }
}

#[test]
fn worker_count_does_not_change_draws() {
    let inst = build_instance(&MatrixFamily::Bernoulli.generate(20, 1)).unwrap();
    assert_eq!(
        sample_many(&inst, 20_000, 3, 1),
        sample_many(&inst, 20_000, 3, 4)
    );
}
