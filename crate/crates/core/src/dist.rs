//! Lattice pmfs, the translated Poisson law and the normal density.

use std::f64::consts::{E, PI};

use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};
use crate::numeric::{kahan_sum, poisson_log_pmf as ln_poisson, snap_integer, NeumaierSum};

/// Current on-disk version of the [`LatticePmf`] JSON format.
pub const PMF_FORMAT_VERSION: u32 = 1;

fn default_version() -> u32 {
    PMF_FORMAT_VERSION
}

/// A probability mass function on `offset + step * i`, `i = 0..probs.len()`.
///
/// `tail_tol` bounds the probability mass that lies outside the stored support
/// (zero for exact distributions).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatticePmf {
    #[serde(default = "default_version")]
    pub version: u32,
    pub offset: i64,
    pub step: u32,
    pub probs: Vec<f64>,
    #[serde(default)]
    pub tail_tol: f64,
}

impl LatticePmf {
    pub fn new(offset: i64, step: u32, probs: Vec<f64>, tail_tol: f64) -> Result<Self> {
        if step == 0 {
            return domain("lattice step must be positive");
        }
        if probs.is_empty() {
            return domain("pmf must have at least one support point");
        }
        if probs.iter().any(|p| !p.is_finite() || *p < 0.0) {
            return domain("probabilities must be finite and non-negative");
        }
        if !(0.0..=1.0).contains(&tail_tol) {
            return domain("tail_tol must lie in [0, 1]");
        }
        let total = kahan_sum(probs.iter().cloned());
        if total > 1.0 + 1e-9 || total < 1.0 - tail_tol - 1e-9 {
            return domain(format!(
                "probabilities sum to {total}, outside [1 - tail_tol, 1]"
            ));
        }
        Ok(Self {
            version: PMF_FORMAT_VERSION,
            offset,
            step,
            probs,
            tail_tol,
        })
    }

    /// Point mass at `v`.
    pub fn point_mass(v: i64) -> Self {
        Self {
            version: PMF_FORMAT_VERSION,
            offset: v,
            step: 1,
            probs: vec![1.0],
            tail_tol: 0.0,
        }
    }

    /// Uniform law on `lo..=hi`.
    pub fn uniform(lo: i64, hi: i64) -> Result<Self> {
        if hi < lo {
            return domain("empty uniform support");
        }
        let m = (hi - lo + 1) as usize;
        Self::new(lo, 1, vec![1.0 / m as f64; m], 0.0)
    }

    /// Binomial(`k`, `p`) on `0..=k`.
    pub fn binomial(k: u64, p: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&p) {
            return domain("binomial success probability must lie in [0, 1]");
        }
        let probs = (0..=k)
            .map(|i| {
                if p == 0.0 {
                    return if i == 0 { 1.0 } else { 0.0 };
                }
                if p == 1.0 {
                    return if i == k { 1.0 } else { 0.0 };
                }
                (crate::numeric::ln_binomial(k, i)
                    + i as f64 * p.ln()
                    + (k - i) as f64 * (-p).ln_1p())
                .exp()
            })
            .collect();
        Self::new(0, 1, probs, 0.0)
    }

    /// Poisson(`lambda`) truncated to `0..=K` with omitted mass at most `tail_tol`.
    pub fn poisson(lambda: f64, tail_tol: f64) -> Result<Self> {
        TpParams::new(lambda, lambda)?.to_lattice(tail_tol)
    }

    /// Empirical pmf of integer samples.
    pub fn from_samples(samples: &[i64]) -> Result<Self> {
        if samples.is_empty() {
            return domain("no samples");
        }
        let lo = *samples.iter().min().unwrap();
        let hi = *samples.iter().max().unwrap();
        let mut counts = vec![0u64; (hi - lo + 1) as usize];
        for &s in samples {
            counts[(s - lo) as usize] += 1;
        }
        Self::from_counts(lo, &counts)
    }

    /// Empirical pmf from counts on `lo, lo+1, ...`.
    pub fn from_counts(lo: i64, counts: &[u64]) -> Result<Self> {
        let total: u64 = counts.iter().sum();
        if total == 0 {
            return domain("no samples");
        }
        let probs = counts.iter().map(|&c| c as f64 / total as f64).collect();
        Ok(Self {
            version: PMF_FORMAT_VERSION,
            offset: lo,
            step: 1,
            probs,
            tail_tol: 0.0,
        })
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    /// Largest stored support value.
    pub fn max_value(&self) -> i64 {
        self.offset + self.step as i64 * (self.probs.len() as i64 - 1)
    }

    /// Iterator over `(value, probability)`.
    pub fn iter(&self) -> impl Iterator<Item = (i64, f64)> + '_ {
        let step = self.step as i64;
        self.probs
            .iter()
            .enumerate()
            .map(move |(i, &p)| (self.offset + step * i as i64, p))
    }

    /// Probability of the value `x` (zero off the lattice).
    pub fn prob_at(&self, x: i64) -> f64 {
        let d = x - self.offset;
        let step = self.step as i64;
        if d < 0 || d % step != 0 {
            return 0.0;
        }
        self.probs.get((d / step) as usize).copied().unwrap_or(0.0)
    }

    pub fn total_mass(&self) -> f64 {
        kahan_sum(self.probs.iter().cloned())
    }

    pub fn mean(&self) -> f64 {
        let mut s = NeumaierSum::new();
        for (x, p) in self.iter() {
            s.add(x as f64 * p);
        }
        s.value() / self.total_mass()
    }

    pub fn variance(&self) -> f64 {
        let m = self.mean();
        let mut s = NeumaierSum::new();
        for (x, p) in self.iter() {
            let d = x as f64 - m;
            s.add(d * d * p);
        }
        s.value() / self.total_mass()
    }

    /// Law of `X + shift`.
    pub fn shifted(&self, shift: i64) -> Self {
        let mut out = self.clone();
        out.offset += shift;
        out
    }
}

/// Translated Poisson parameters: `Z - s ~ Poisson(lambda)` with `E Z = mu`
/// and `Var Z = sigma2 + gamma`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TpParams {
    pub mu: f64,
    pub sigma2: f64,
    pub s: i64,
    pub gamma: f64,
    pub lambda: f64,
}

impl TpParams {
    pub fn new(mu: f64, sigma2: f64) -> Result<Self> {
        if !mu.is_finite() || !sigma2.is_finite() {
            return domain("translated Poisson parameters must be finite");
        }
        if sigma2 <= 0.0 {
            return domain(format!("sigma2 must be positive, got {sigma2}"));
        }
        let diff = snap_integer(mu - sigma2);
        let s = diff.floor();
        let gamma = (diff - s).max(0.0);
        Ok(Self {
            mu,
            sigma2,
            s: s as i64,
            gamma,
            lambda: sigma2 + gamma,
        })
    }

    pub fn sigma(&self) -> f64 {
        self.sigma2.sqrt()
    }

    /// Exact variance `sigma2 + gamma`.
    pub fn variance(&self) -> f64 {
        self.lambda
    }

    pub fn ln_pmf(&self, n: i64) -> f64 {
        if n < self.s {
            return f64::NEG_INFINITY;
        }
        ln_poisson(self.lambda, (n - self.s) as u64)
    }

    pub fn pmf(&self, n: i64) -> f64 {
        self.ln_pmf(n).exp()
    }

    /// Rigorous upper bound on `P(Z - s > k)`, valid once `k + 2 > lambda`.
    fn upper_tail_bound(&self, k: u64) -> f64 {
        let r = self.lambda / (k + 2) as f64;
        if r >= 1.0 {
            return 1.0;
        }
        ln_poisson(self.lambda, k + 1).exp() / (1.0 - r)
    }

    /// Truncated lattice representation with omitted mass at most `tail_tol`.
    pub fn to_lattice(&self, tail_tol: f64) -> Result<LatticePmf> {
        if !(tail_tol > 0.0 && tail_tol <= 1e-6) {
            return domain("tail_tol must lie in (0, 1e-6]");
        }
        let window = (self.mu + 12.0 * self.sigma()).ceil() as i64 - self.s;
        let mut k = window.max(0) as u64;
        let mut omitted = self.upper_tail_bound(k);
        while omitted > tail_tol {
            k = k + 1 + k / 8;
            omitted = self.upper_tail_bound(k);
        }
        let probs: Vec<f64> = (0..=k).map(|i| ln_poisson(self.lambda, i).exp()).collect();
        Ok(LatticePmf {
            version: PMF_FORMAT_VERSION,
            offset: self.s,
            step: 1,
            probs,
            tail_tol: omitted,
        })
    }
}

/// Poisson log-pmf `k ln(lambda) - lambda - ln k!`.
pub fn poisson_log_pmf(lambda: f64, k: u64) -> Result<f64> {
    if !lambda.is_finite() || lambda <= 0.0 {
        return domain(format!(
            "Poisson mean must be finite and positive, got {lambda}"
        ));
    }
    Ok(crate::numeric::poisson_log_pmf(lambda, k))
}

/// Normal density `(2 pi sigma2)^{-1/2} exp(-(n - mu)^2 / (2 sigma2))` at an integer.
pub fn normal_density_at(mu: f64, sigma2: f64, n: i64) -> Result<f64> {
    if !(sigma2 > 0.0) {
        return domain("sigma2 must be positive");
    }
    let d = n as f64 - mu;
    Ok((-(d * d) / (2.0 * sigma2)).exp() / (2.0 * PI * sigma2).sqrt())
}

/// Sup-distance between the translated Poisson pmf and the normal density.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormalDeviation {
    pub value: f64,
    pub argmax: i64,
    pub window: (i64, i64),
    /// Upper bound on the deviation at any point outside `window`.
    pub outside_bound: f64,
}

impl NormalDeviation {
    /// The scan window provably contains the supremum.
    pub fn certified(&self) -> bool {
        self.outside_bound <= self.value
    }
}

/// `sup_n |TP(n) - phi(n)|` over `[s, mu + 12 sigma]`, with a bound on the rest.
pub fn lemma1_deviation(tp: &TpParams) -> Result<NormalDeviation> {
    let lo = tp.s;
    let hi = (tp.mu + 12.0 * tp.sigma()).ceil() as i64;
    let mut value = 0.0;
    let mut argmax = lo;
    for n in lo..=hi {
        let d = (tp.pmf(n) - normal_density_at(tp.mu, tp.sigma2, n)?).abs();
        if d > value {
            value = d;
            argmax = n;
        }
    }
    let below = normal_density_at(tp.mu, tp.sigma2, lo - 1)?;
    let above = tp
        .pmf(hi + 1)
        .max(normal_density_at(tp.mu, tp.sigma2, hi + 1)?);
    Ok(NormalDeviation {
        value,
        argmax,
        window: (lo, hi),
        outside_bound: below.max(above),
    })
}

/// `(2e)^{-1/2}`, the sharp bound on `sqrt(lambda) * max_k P_lambda(k)`.
pub fn poisson_mode_constant() -> f64 {
    1.0 / (2.0 * E).sqrt()
}

/// Checks a user supplied pmf for self-consistency (used on deserialized input).
pub fn validate(p: &LatticePmf) -> Result<()> {
    LatticePmf::new(p.offset, p.step, p.probs.clone(), p.tail_tol).map(|_| ())
}

impl std::str::FromStr for LatticePmf {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let p: LatticePmf = serde_json::from_str(s).map_err(|e| Error::Parse(e.to_string()))?;
        if p.version != PMF_FORMAT_VERSION {
            return Err(Error::Parse(format!(
                "unsupported pmf format version {}",
                p.version
            )));
        }
        validate(&p)?;
        Ok(p)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn make_tp_examples() {
        let t = TpParams::new(5.0, 4.0).unwrap();
        assert_eq!((t.s, t.gamma, t.lambda), (1, 0.0, 4.0));
        let t = TpParams::new(3.7, 2.5).unwrap();
        assert_eq!(t.s, 1);
        assert!((t.gamma - 0.2).abs() < 1e-12 && (t.lambda - 2.7).abs() < 1e-12);
        let t = TpParams::new(0.3, 4.0).unwrap();
        assert_eq!(t.s, -4);
        assert!((t.gamma - 0.3).abs() < 1e-12 && (t.lambda - 4.3).abs() < 1e-12);
        assert!(TpParams::new(1.0, 0.0).is_err());
        assert!(TpParams::new(1.0, -2.0).is_err());
    }

    #[test]
    fn floor_guard_snaps_near_integers() {
        let t = TpParams::new(3.0 + 1e-14, 1.0).unwrap();
        assert_eq!(t.s, 2);
        assert_eq!(t.gamma, 0.0);
        let t = TpParams::new(3.0 - 1e-14, 1.0).unwrap();
        assert_eq!(t.s, 2);
        assert_eq!(t.gamma, 0.0);
    }

    #[test]
    fn tp_pmf_examples() {
        let t = TpParams::new(5.0, 4.0).unwrap();
        assert!((t.pmf(1) - (-4f64).exp()).abs() < 1e-17);
        assert_eq!(t.pmf(0), 0.0);
        let l = t.to_lattice(1e-12).unwrap();
        assert!((l.mean() - 5.0).abs() < 1e-12);
        let mass = l.total_mass();
        assert!(mass >= 1.0 - 1e-12 && mass <= 1.0 + 1e-15);
        assert_eq!(
            TpParams::new(0.0, 1.0)
                .unwrap()
                .to_lattice(1e-12)
                .unwrap()
                .offset,
            -1
        );
    }

    #[test]
    fn lattice_variance_matches_lambda() {
        let t = TpParams::new(10.3, 7.9).unwrap();
        let l = t.to_lattice(1e-12).unwrap();
        let w = l.len() as f64;
        assert!((l.variance() - t.lambda).abs() <= 10.0 * 1e-12 * w * w);
    }

    #[test]
    fn tail_tol_must_be_small() {
        let t = TpParams::new(5.0, 4.0).unwrap();
        assert!(t.to_lattice(0.0).is_err());
        assert!(t.to_lattice(1e-3).is_err());
    }

    #[test]
    fn normal_density_examples() {
        let v = normal_density_at(0.0, 1.0, 0).unwrap();
        assert!((v - 1.0 / (2.0 * PI).sqrt()).abs() < 1e-16);
        assert_eq!(
            normal_density_at(0.0, 1.0, 3).unwrap(),
            normal_density_at(0.0, 1.0, -3).unwrap()
        );
        let v = normal_density_at(10.0, 4.0, 10).unwrap();
        assert!((v - 1.0 / (8.0 * PI).sqrt()).abs() < 1e-16);
    }

    #[test]
    fn lemma1_translation_invariant() {
        let a = lemma1_deviation(&TpParams::new(50.0, 50.0).unwrap()).unwrap();
        let b = lemma1_deviation(&TpParams::new(57.0, 50.0).unwrap()).unwrap();
        assert!((a.value - b.value).abs() < 1e-15);
        assert_eq!(a.argmax + 7, b.argmax);
        assert!(a.value >= 0.0 && a.certified());
    }

    #[test]
    fn pmf_json_round_trip() {
        let p = LatticePmf::uniform(-2, 3).unwrap();
        let s = serde_json::to_string(&p).unwrap();
        let q: LatticePmf = s.parse().unwrap();
        assert_eq!(p, q);
        assert!("{\"offset\":0,\"step\":1,\"probs\":[0.5]}"
            .parse::<LatticePmf>()
            .is_err());
        assert!("{\"version\":9,\"offset\":0,\"step\":1,\"probs\":[1.0]}"
            .parse::<LatticePmf>()
            .is_err());
    }

    #[test]
    fn binomial_mean_and_variance() {
        let b = LatticePmf::binomial(20, 0.3).unwrap();
        assert!((b.mean() - 6.0).abs() < 1e-12);
        assert!((b.variance() - 4.2).abs() < 1e-12);
    }
}
