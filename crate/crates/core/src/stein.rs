//! Solutions of the Poisson Stein equation
//!
//! `λ Δg(k) - (k - λ) g(k) = 1{k ∈ A} - P_λ(A)`, `g(k) = 0` for `k <= 0`,
//!
//! and their translated counterparts `f_a(k) = g_a(k - s)`.
//!
//! Everything is expressed through four tail ratios of `X ~ Poisson(λ)`,
//! each obtained from a recurrence with positive terms only:
//!
//! * `A(k) = P(X >= k) / p(k)`
//! * `B(k) = P(X <= k-1) / p(k)`
//! * `C(k) = E(k - X)^+ / p(k)`
//! * `D(k) = E(X - k)^+ / p(k)`
//!
//! The ratios are stored as logarithms. A tail is obtained by complement only
//! on the side of the mode where it is at least about one half.

use std::f64::consts::E;

use serde::{Deserialize, Serialize};

use crate::dist::TpParams;
use crate::error::{domain, Result};
use crate::numeric::{log_add_exp, log_sum_exp, poisson_log_pmf, NeumaierSum};

/// Largest admissible number of points in a set target.
pub const MAX_TARGET_POINTS: usize = 1_000_000;

/// Right-hand side indicator set of the Stein equation.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum Target {
    Point(u64),
    Points(Vec<u64>),
    /// `{lo, ..., hi}`, unbounded above when `hi` is `None`.
    Interval {
        lo: u64,
        hi: Option<u64>,
    },
}

impl Target {
    pub fn contains(&self, k: u64) -> bool {
        match self {
            Target::Point(a) => *a == k,
            Target::Points(v) => v.contains(&k),
            Target::Interval { lo, hi } => k >= *lo && hi.map_or(true, |h| k <= h),
        }
    }

    /// Largest finite point mentioned by the target.
    fn max_point(&self) -> u64 {
        match self {
            Target::Point(a) => *a,
            Target::Points(v) => v.iter().copied().max().unwrap_or(0),
            Target::Interval { lo, hi } => hi.unwrap_or(*lo).max(*lo),
        }
    }

    fn validate(&self) -> Result<()> {
        match self {
            Target::Points(v) if v.len() > MAX_TARGET_POINTS => domain(format!(
                "set targets are limited to {MAX_TARGET_POINTS} points"
            )),
            Target::Interval { lo, hi: Some(h) } if h < lo => domain("empty interval target"),
            _ => Ok(()),
        }
    }
}

/// Precomputed Poisson tail ratios on `0..=kmax`.
#[derive(Debug, Clone)]
pub struct PoissonKernel {
    lambda: f64,
    ln_lambda: f64,
    ln_p: Vec<f64>,
    ln_a: Vec<f64>,
    ln_b: Vec<f64>,
    ln_c: Vec<f64>,
    ln_d: Vec<f64>,
}

/// `(ln A(k), ln D(k))` by direct summation; requires `k + 1 > λ`.
fn upper_series(lambda: f64, k: u64) -> (f64, f64) {
    let mut term = 1.0;
    let mut a = NeumaierSum::new();
    let mut d = NeumaierSum::new();
    a.add(1.0);
    let mut m = 1u64;
    loop {
        term *= lambda / (k + m) as f64;
        a.add(term);
        d.add(m as f64 * term);
        if m as f64 * term < 1e-18 * d.value().max(1e-300) && term < 1e-18 * a.value() {
            break;
        }
        m += 1;
    }
    let dv = d.value();
    (
        a.value().ln(),
        if dv > 0.0 { dv.ln() } else { f64::NEG_INFINITY },
    )
}

impl PoissonKernel {
    /// Kernel valid for all `k <= kmax`.
    pub fn new(lambda: f64, kmax: u64) -> Result<Self> {
        if !lambda.is_finite() || lambda <= 0.0 {
            return domain(format!("lambda must be finite and positive, got {lambda}"));
        }
        if kmax > 100_000_000 {
            return domain("evaluation window too large");
        }
        let far = (lambda + 10.0 * lambda.sqrt() + 20.0).ceil() as u64;
        let top = (kmax + 2).max(far);
        let n = top as usize + 1;
        let ln_lambda = lambda.ln();
        let ln_p: Vec<f64> = (0..=top).map(|k| poisson_log_pmf(lambda, k)).collect();
        let ln_k = |k: u64| (k as f64).ln();

        // Each recurrence runs only where it contracts errors: forward below
        // the mode, backward above it. The other side uses complements.
        let m = (lambda.floor() as u64).min(top) as usize;
        let mut ln_b = vec![f64::NEG_INFINITY; n];
        let mut ln_c = vec![f64::NEG_INFINITY; n];
        for k in 0..m {
            let step = ln_k(k as u64 + 1) - ln_lambda;
            ln_b[k + 1] = step + log_add_exp(0.0, ln_b[k]);
            ln_c[k + 1] = step + log_sum_exp(&[ln_c[k], 0.0, ln_b[k]]);
        }

        let mut ln_a = vec![0.0; n];
        let mut ln_d = vec![f64::NEG_INFINITY; n];
        let (a_top, d_top) = upper_series(lambda, top);
        ln_a[top as usize] = a_top;
        ln_d[top as usize] = d_top;
        for k in (m..top as usize).rev() {
            let step = ln_lambda - ln_k(k as u64 + 1);
            ln_a[k] = log_add_exp(0.0, step + ln_a[k + 1]);
            ln_d[k] = step + log_add_exp(ln_d[k + 1], ln_a[k + 1]);
        }

        for k in 0..m {
            let ln_lower = ln_p[k] + ln_b[k];
            ln_a[k] = (-ln_lower.exp()).ln_1p() - ln_p[k];
            // D(k) = A(k)(λ - k) + k
            ln_d[k] = log_add_exp(ln_a[k] + (lambda - k as f64).ln(), ln_k(k as u64));
        }
        for k in m + 1..n {
            let ln_upper = ln_p[k] + ln_a[k];
            ln_b[k] = (-(ln_upper.exp_m1())).ln() - ln_p[k];
            // C(k) = B(k)(k - λ) + k
            ln_c[k] = log_add_exp(ln_b[k] + (k as f64 - lambda).ln(), ln_k(k as u64));
        }
        Ok(Self {
            lambda,
            ln_lambda,
            ln_p,
            ln_a,
            ln_b,
            ln_c,
            ln_d,
        })
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    /// Largest `k` at which all ratios are tabulated.
    pub fn kmax(&self) -> u64 {
        self.ln_p.len() as u64 - 2
    }

    fn check(&self, k: u64) -> Result<usize> {
        if k > self.kmax() + 1 {
            return domain(format!("k = {k} beyond kernel range {}", self.kmax()));
        }
        Ok(k as usize)
    }

    pub fn ln_pmf(&self, k: u64) -> f64 {
        match self.ln_p.get(k as usize) {
            Some(v) => *v,
            None => poisson_log_pmf(self.lambda, k),
        }
    }

    pub fn pmf(&self, k: u64) -> f64 {
        self.ln_pmf(k).exp()
    }

    fn ln_a_at(&self, k: u64) -> f64 {
        match self.ln_a.get(k as usize) {
            Some(v) => *v,
            None => upper_series(self.lambda, k).0,
        }
    }

    /// `ln P(X >= k)`.
    pub fn ln_upper_tail(&self, k: u64) -> f64 {
        self.ln_pmf(k) + self.ln_a_at(k)
    }

    /// `ln P(X <= k - 1)`; requires `k <= kmax + 1`.
    pub fn ln_lower_tail(&self, k: u64) -> Result<f64> {
        let i = self.check(k)?;
        Ok(self.ln_p[i] + self.ln_b[i])
    }

    /// `ln P(lo <= X <= hi)`.
    pub fn ln_interval_prob(&self, lo: u64, hi: Option<u64>) -> Result<f64> {
        let Some(hi) = hi else {
            return Ok(self.ln_upper_tail(lo));
        };
        if hi < lo {
            return Ok(f64::NEG_INFINITY);
        }
        if hi - lo < 64 {
            let terms: Vec<f64> = (lo..=hi).map(|k| self.ln_pmf(k)).collect();
            return Ok(log_sum_exp(&terms));
        }
        // Differences of same-side tails lose little: the larger tail is at
        // most a bounded multiple of the interval mass in these regions.
        let diff = |big: f64, small: f64| big + (-(small - big).exp()).ln_1p();
        if (hi + 1) as f64 <= self.lambda {
            Ok(diff(self.ln_lower_tail(hi + 1)?, self.ln_lower_tail(lo)?))
        } else if lo as f64 >= self.lambda {
            Ok(diff(self.ln_upper_tail(lo), self.ln_upper_tail(hi + 1)))
        } else {
            let out = self.ln_lower_tail(lo)?.exp() + self.ln_upper_tail(hi + 1).exp();
            Ok((-out).ln_1p())
        }
    }

    /// `P(lo <= X <= hi)`.
    pub fn interval_prob(&self, lo: u64, hi: Option<u64>) -> Result<f64> {
        Ok(self.ln_interval_prob(lo, hi)?.exp())
    }

    /// `P_λ(A)`.
    pub fn target_prob(&self, target: &Target) -> Result<f64> {
        match target {
            Target::Point(a) => Ok(self.pmf(*a)),
            Target::Points(v) => {
                let mut s = NeumaierSum::new();
                for (lo, hi) in runs(v) {
                    s.add(self.interval_prob(lo, Some(hi))?);
                }
                Ok(s.value())
            }
            Target::Interval { lo, hi } => self.interval_prob(*lo, *hi),
        }
    }

    /// `g_a(k)` for a singleton target.
    pub fn g_point(&self, a: u64, k: i64) -> Result<f64> {
        if k <= 0 {
            return Ok(0.0);
        }
        let i = self.check(k as u64)?;
        let ln_pa = self.ln_pmf(a);
        let ln_k = (k as f64).ln();
        if k as u64 > a {
            Ok((ln_pa + self.ln_a[i] - ln_k).exp())
        } else {
            Ok(-(ln_pa + self.ln_b[i] - ln_k).exp())
        }
    }

    /// `Δg_a(k) = g_a(k + 1) - g_a(k)`, evaluated without subtraction.
    pub fn delta_g_point(&self, a: u64, k: i64) -> Result<f64> {
        if k < 0 {
            return Ok(0.0);
        }
        if k == 0 {
            return self.g_point(a, 1);
        }
        self.check(k as u64 + 1)?;
        let ku = k as u64;
        let i = ku as usize;
        let ln_pa = self.ln_pmf(a);
        let ln_k = (k as f64).ln();
        if ku > a {
            Ok(-(ln_pa + self.ln_d[i] - self.ln_lambda - ln_k).exp())
        } else if ku < a {
            Ok(-(ln_pa + self.ln_c[i] - self.ln_lambda - ln_k).exp())
        } else {
            let up = self.ln_a[i + 1] - ((ku + 1) as f64).ln();
            let down = self.ln_b[i] - ln_k;
            Ok((ln_pa + log_add_exp(up, down)).exp())
        }
    }

    /// Bound on the rounding error of [`Self::delta_g_point`]: the value is the
    /// exponential of a sum of log terms, so its relative error is a small
    /// multiple of `ε` times the magnitude of those terms.
    pub fn delta_g_point_error(&self, a: u64, k: i64) -> Result<f64> {
        let d = self.delta_g_point(a, k)?.abs();
        let kk = k.max(0) as u64;
        let magnitude = self.ln_pmf(a).abs()
            + self.ln_pmf(kk).abs()
            + (self.lambda + 1.0).ln()
            + (kk as f64 + 2.0).ln();
        Ok(8.0 * f64::EPSILON * magnitude * d)
    }

    /// `g_A(k)` for `A = {lo..=hi}` through the tail representation
    /// `g_A(k) = [P(A ∩ U_k) A(k) - P(A \ U_k) B(k)] / k`, `U_k = {0..k-1}`.
    pub fn g_interval(&self, lo: u64, hi: Option<u64>, k: i64) -> Result<f64> {
        if k <= 0 {
            return Ok(0.0);
        }
        let ku = k as u64;
        let i = self.check(ku)?;
        let below = if lo < ku {
            let top = hi.map_or(ku - 1, |h| h.min(ku - 1));
            self.ln_interval_prob(lo, Some(top))?
        } else {
            f64::NEG_INFINITY
        };
        let above = match hi {
            Some(h) if h < ku => f64::NEG_INFINITY,
            _ => self.ln_interval_prob(lo.max(ku), hi)?,
        };
        let ln_k = (k as f64).ln();
        Ok((below + self.ln_a[i] - ln_k).exp() - (above + self.ln_b[i] - ln_k).exp())
    }

    /// `g_A(k)` for any target: singletons are summed for short runs,
    /// contiguous runs use [`Self::g_interval`].
    pub fn g(&self, target: &Target, k: i64) -> Result<f64> {
        match target {
            Target::Point(a) => self.g_point(*a, k),
            Target::Interval { lo, hi } => self.g_interval(*lo, *hi, k),
            Target::Points(v) => {
                let mut s = NeumaierSum::new();
                for (lo, hi) in runs(v) {
                    if hi - lo < 8 {
                        for a in lo..=hi {
                            s.add(self.g_point(a, k)?);
                        }
                    } else {
                        s.add(self.g_interval(lo, Some(hi), k)?);
                    }
                }
                Ok(s.value())
            }
        }
    }

    /// `Σ_{a ∈ A} g_a(k)` for a finite target, always by singletons.
    pub fn g_by_singletons(&self, points: &[u64], k: i64) -> Result<f64> {
        let mut s = NeumaierSum::new();
        for &a in points {
            s.add(self.g_point(a, k)?);
        }
        Ok(s.value())
    }

    /// `Δg_A(k)`.
    pub fn delta_g(&self, target: &Target, k: i64) -> Result<f64> {
        match target {
            Target::Point(a) => self.delta_g_point(*a, k),
            _ => Ok(self.g(target, k + 1)? - self.g(target, k)?),
        }
    }

    /// `max_{0 <= k <= k_max} |λΔg(k) - (k - λ)g(k) - (1{k ∈ A} - P_λ(A))|`.
    pub fn residual(&self, target: &Target, k_max: u64) -> Result<f64> {
        let pa = self.target_prob(target)?;
        let mut worst: f64 = 0.0;
        let mut g_k = 0.0;
        for k in 0..=k_max {
            let g_next = self.g(target, k as i64 + 1)?;
            let ind = if target.contains(k) { 1.0 } else { 0.0 };
            let r = self.lambda * (g_next - g_k) - (k as f64 - self.lambda) * g_k - (ind - pa);
            worst = worst.max(r.abs());
            g_k = g_next;
        }
        Ok(worst)
    }
}

/// Maximal runs of consecutive integers in a (not necessarily sorted) point list.
fn runs(points: &[u64]) -> Vec<(u64, u64)> {
    let mut v = points.to_vec();
    v.sort_unstable();
    v.dedup();
    let mut out: Vec<(u64, u64)> = Vec::new();
    for x in v {
        match out.last_mut() {
            Some((_, hi)) if *hi + 1 == x => *hi = x,
            _ => out.push((x, x)),
        }
    }
    out
}

fn kernel_for(lambda: f64, reach: u64) -> Result<PoissonKernel> {
    if !lambda.is_finite() {
        return domain("lambda must be finite");
    }
    PoissonKernel::new(lambda, reach + 2)
}

/// `g_a(k)` for a singleton target.
pub fn g_singleton(lambda: f64, a: u64, k: i64) -> Result<f64> {
    kernel_for(lambda, a.max(k.max(0) as u64))?.g_point(a, k)
}

/// `g_A(k)` for a general target.
pub fn g_set(lambda: f64, target: &Target, k: i64) -> Result<f64> {
    target.validate()?;
    kernel_for(lambda, target.max_point().max(k.max(0) as u64))?.g(target, k)
}

/// `Δg_a(k)`.
pub fn delta_g(lambda: f64, a: u64, k: i64) -> Result<f64> {
    kernel_for(lambda, a.max(k.max(0) as u64))?.delta_g_point(a, k)
}

/// Maximal absolute residual of the Stein equation on `0..=k_max`.
pub fn residual_check(lambda: f64, target: &Target, k_max: u64) -> Result<f64> {
    if k_max < 1 {
        return domain("k_max must be at least 1");
    }
    target.validate()?;
    kernel_for(lambda, target.max_point().max(k_max))?.residual(target, k_max)
}

/// The two non-uniform bounds on `|Δg_a(k)|`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DeltaBound {
    pub case_split: f64,
    pub simplified: f64,
}

/// Case-split and simplified bounds on `|Δg_a(k)|`.
pub fn nonuniform_delta_bound(lambda: f64, a: u64, k: u64) -> Result<DeltaBound> {
    if !lambda.is_finite() || lambda <= 0.0 {
        return domain("lambda must be finite and positive");
    }
    let base = 1.0 / (lambda.powf(1.5) * (2.0 * E).sqrt());
    let kf = k as f64;
    let pa = poisson_log_pmf(lambda, a).exp();
    let lam2 = lambda * lambda;
    let mut case_split = 0.0;
    if (k > a && kf >= lambda) || (k < a && kf < lambda) {
        case_split += base;
    }
    if a < k && kf < lambda {
        case_split += pa / (a + 1) as f64 + (lambda - kf) / lam2;
    }
    if lambda <= kf && k < a {
        case_split += pa / lambda + (kf - lambda) / lam2;
    }
    if k == a {
        case_split += 1.0 / lambda;
    }
    let simplified = base + (lambda - kf).abs() / lam2 + if k == a { 1.0 / lambda } else { 0.0 };
    Ok(DeltaBound {
        case_split,
        simplified,
    })
}

/// Translated solution `f_a(k) = g_a(k - s)`.
pub fn f_translated(tp: &TpParams, a: u64, k: i64) -> Result<f64> {
    g_singleton(tp.lambda, a, k - tp.s)
}

/// `Δf_a(k)`.
pub fn f_delta(tp: &TpParams, a: u64, k: i64) -> Result<f64> {
    delta_g(tp.lambda, a, k - tp.s)
}

/// `1/(σ³√(2e)) + |μ - k|/σ⁴ + 1{k = a + s}/σ²`.
pub fn f_delta_bound(tp: &TpParams, a: u64, k: i64) -> f64 {
    let s2 = tp.sigma2;
    let ind = if k == a as i64 + tp.s { 1.0 / s2 } else { 0.0 };
    1.0 / (s2.powf(1.5) * (2.0 * E).sqrt()) + (tp.mu - k as f64).abs() / (s2 * s2) + ind
}
