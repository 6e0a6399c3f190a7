//! Empirical constants for the normal comparison of the translated Poisson
//! law and for its smoothness coefficients.

use stein_llt::dist::{lemma1_deviation, LatticePmf, TpParams};
use stein_llt::metrics::smoothness;

#[test]
fn normal_deviation_scales_like_inverse_variance() {
    let mut scaled = Vec::new();
    for e in 1..=6 {
        let s2 = 10f64.powi(e);
        for mu in [s2, s2 + 0.37, s2 + 1234.5] {
            let d = lemma1_deviation(&TpParams::new(mu, s2).unwrap()).unwrap();
            assert!(d.certified(), "sigma2={s2}");
            scaled.push(d.value * s2);
        }
    }
    let max = scaled.iter().cloned().fold(0.0, f64::max);
    let min = scaled.iter().cloned().fold(f64::MAX, f64::min);
    println!("sup |TP - phi| * sigma^2 over sigma^2 in 10..1e6: [{min:.4}, {max:.4}]");
    assert!(max < 0.2, "{scaled:?}");
    let tail = &scaled[scaled.len() - 6..];
    assert!(tail.iter().all(|v| *v > 0.5 * max / 4.0));
}

#[test]
fn zero_shift_matches_plain_poisson_scan() {
    let tp = TpParams::new(400.0, 400.0).unwrap();
    assert_eq!(tp.s, 0);
    let d = lemma1_deviation(&tp).unwrap();
    let direct = (0..=640)
        .map(|n| (tp.pmf(n) - stein_llt::dist::normal_density_at(400.0, 400.0, n).unwrap()).abs())
        .fold(0.0, f64::max);
    assert_eq!(d.value, direct);
}

#[test]
fn tp_smoothness_scales_like_sigma_power() {
    for l in 1..=3u32 {
        let mut scaled = Vec::new();
        for sigma in [10.0f64, 31.6, 100.0, 316.0, 1000.0] {
            let tp = TpParams::new(sigma * sigma + 0.25, sigma * sigma).unwrap();
            let s = smoothness(&tp.to_lattice(1e-13).unwrap(), l).unwrap().value;
            scaled.push(s * sigma.powi(l as i32));
        }
        let max = scaled.iter().cloned().fold(0.0, f64::max);
        let min = scaled.iter().cloned().fold(f64::MAX, f64::min);
        println!("S_{l}(TP) * sigma^{l}: [{min:.4}, {max:.4}]");
        assert!(max / min < 1.1, "l={l}: {scaled:?}");
    }
}

#[test]
fn binomial_half_second_smoothness() {
    for k in 10..=200u64 {
        let s = smoothness(&LatticePmf::binomial(k, 0.5).unwrap(), 2)
            .unwrap()
            .value;
        assert!(s <= 10.0 / k as f64, "k={k}: {s}");
    }
}

#[test]
fn exponential_tail_profile() {
    use rand::{Rng, SeedableRng};
    use stein_llt::metrics::{tail_profile, BootstrapConfig};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(17);
    let samples: Vec<f64> = (0..200_000)
        .map(|_| -(1.0 - rng.gen::<f64>()).ln())
        .collect();
    let ts = [0.5, 1.0, 2.0, 3.0, 4.0];
    let prof = tail_profile(&samples, 1.0, &ts, &BootstrapConfig::default()).unwrap();
    for (i, t) in ts.iter().enumerate() {
        let exact = (-t).exp() * (t + 1.0);
        assert!(
            prof.lower[i] - 0.01 <= exact && exact <= prof.upper[i] + 0.01,
            "t={t}"
        );
        assert!((prof.values[i] - exact).abs() < 0.02 * exact.max(0.1));
    }
}
