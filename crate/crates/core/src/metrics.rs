//! Distances and smoothness functionals between lattice pmfs.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dist::LatticePmf;
use crate::error::{domain, Error, Result};
use crate::numeric::{log_sum_exp, NeumaierSum};

/// A computed quantity together with a rigorous allowance for truncated mass.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Measured {
    pub value: f64,
    pub slack: f64,
}

/// Walks the union support of two pmfs in increasing order, yielding `(p(x), q(x))`.
fn merged(p: &LatticePmf, q: &LatticePmf) -> Vec<(f64, f64)> {
    let mut a = p.iter().peekable();
    let mut b = q.iter().peekable();
    let mut out = Vec::with_capacity(p.len() + q.len());
    loop {
        match (a.peek().copied(), b.peek().copied()) {
            (Some((x, px)), Some((y, qy))) => {
                if x == y {
                    out.push((px, qy));
                    a.next();
                    b.next();
                } else if x < y {
                    out.push((px, 0.0));
                    a.next();
                } else {
                    out.push((0.0, qy));
                    b.next();
                }
            }
            (Some((_, px)), None) => {
                out.push((px, 0.0));
                a.next();
            }
            (None, Some((_, qy))) => {
                out.push((0.0, qy));
                b.next();
            }
            (None, None) => return out,
        }
    }
}

fn check_spans(p: &LatticePmf, q: &LatticePmf) -> Result<()> {
    if p.step != q.step {
        return domain(format!(
            "mismatched lattice spans {} and {}; rescale first",
            p.step, q.step
        ));
    }
    Ok(())
}

/// Total variation distance `1/2 sum |p - q|`.
pub fn d_tv(p: &LatticePmf, q: &LatticePmf) -> Result<Measured> {
    check_spans(p, q)?;
    let s: NeumaierSum = merged(p, q)
        .into_iter()
        .map(|(a, b)| (a - b).abs())
        .collect();
    Ok(Measured {
        value: (0.5 * s.value()).min(1.0),
        slack: 0.5 * (p.tail_tol + q.tail_tol),
    })
}

/// Local distance `max_x |p(x) - q(x)|`.
pub fn d_loc(p: &LatticePmf, q: &LatticePmf) -> Result<Measured> {
    check_spans(p, q)?;
    let value = merged(p, q)
        .into_iter()
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    Ok(Measured {
        value,
        slack: p.tail_tol.max(q.tail_tol),
    })
}

/// `sup_x p(x)`.
pub fn sup_pmf(p: &LatticePmf) -> Measured {
    Measured {
        value: p.probs.iter().cloned().fold(0.0, f64::max),
        slack: p.tail_tol,
    }
}

/// Result of [`smoothness`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SmoothnessReport {
    pub order: u32,
    pub value: f64,
    /// Values `h(pattern_offset + i)` of a test function attaining the supremum.
    pub extremal_sign_pattern: Vec<i8>,
    pub pattern_offset: i64,
}

/// `l`-th backward difference of the zero-padded pmf, on `offset..offset+len+l`.
pub fn backward_difference(p: &LatticePmf, l: u32) -> Vec<f64> {
    let mut v = p.probs.clone();
    for _ in 0..l {
        let mut next = Vec::with_capacity(v.len() + 1);
        let mut prev = 0.0;
        for &x in &v {
            next.push(x - prev);
            prev = x;
        }
        next.push(-prev);
        v = next;
    }
    v
}

/// Smoothness coefficient `S_l = sup_{|h| <= 1} |E Δ^l h(W)|` for `l` in 1..=3.
pub fn smoothness(p: &LatticePmf, l: u32) -> Result<SmoothnessReport> {
    if !(1..=3).contains(&l) {
        return Err(Error::UnsupportedOrder { order: l });
    }
    if p.step != 1 {
        return domain("smoothness requires a span-1 lattice");
    }
    let diff = backward_difference(p, l);
    let value: f64 = diff
        .iter()
        .map(|d| d.abs())
        .collect::<NeumaierSum>()
        .value();
    let parity = if l % 2 == 0 { 1.0 } else { -1.0 };
    let extremal_sign_pattern = diff
        .iter()
        .map(|d| if parity * d >= 0.0 { 1 } else { -1 })
        .collect();
    Ok(SmoothnessReport {
        order: l,
        value,
        extremal_sign_pattern,
        pattern_offset: p.offset,
    })
}

/// `E Δ^l h(W)` for a test function given on `offset..offset+h.len()` (zero elsewhere).
pub fn expected_difference(p: &LatticePmf, l: u32, h_offset: i64, h: &[f64]) -> f64 {
    let hv = |x: i64| -> f64 {
        let i = x - h_offset;
        if i < 0 {
            0.0
        } else {
            h.get(i as usize).copied().unwrap_or(0.0)
        }
    };
    let binom = [
        [1.0, 0.0, 0.0, 0.0],
        [1.0, 1.0, 0.0, 0.0],
        [1.0, 2.0, 1.0, 0.0],
        [1.0, 3.0, 3.0, 1.0],
    ];
    let mut s = NeumaierSum::new();
    for (x, px) in p.iter() {
        let mut d = 0.0;
        for i in 0..=l as usize {
            let sign = if (l as usize - i) % 2 == 0 { 1.0 } else { -1.0 };
            d += sign * binom[l as usize][i] * hv(x + i as i64);
        }
        s.add(px * d);
    }
    s.value()
}

/// `E |W - center|^j` for `j <= 16`.
pub fn abs_central_moment(p: &LatticePmf, j: u32, center: f64) -> Result<f64> {
    if j > 16 {
        return domain("moment order must be at most 16");
    }
    if j == 0 {
        return Ok(p.total_mass());
    }
    if j < 8 {
        let s: NeumaierSum = p
            .iter()
            .map(|(x, px)| px * (x as f64 - center).abs().powi(j as i32))
            .collect();
        return Ok(s.value());
    }
    let logs: Vec<f64> = p
        .iter()
        .filter(|(_, px)| *px > 0.0)
        .map(|(x, px)| px.ln() + j as f64 * (x as f64 - center).abs().ln())
        .collect();
    Ok(log_sum_exp(&logs).exp())
}

/// Bootstrap settings for [`tail_profile`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BootstrapConfig {
    pub resamples: usize,
    pub level: f64,
    pub seed: u64,
}

impl Default for BootstrapConfig {
    fn default() -> Self {
        Self {
            resamples: 200,
            level: 0.95,
            seed: 0x5eed,
        }
    }
}

/// Empirical `ε(t) = E[T/σ · 1{T/σ >= t}]` with percentile bootstrap bands.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TailProfile {
    pub thresholds: Vec<f64>,
    pub values: Vec<f64>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub level: f64,
}

fn profile_values(scaled: &[f64], thresholds: &[f64]) -> Vec<f64> {
    let n = scaled.len() as f64;
    thresholds
        .iter()
        .map(|&t| {
            let s: NeumaierSum = scaled.iter().filter(|&&x| x >= t).cloned().collect();
            s.value() / n
        })
        .collect()
}

fn percentile(sorted: &[f64], q: f64) -> f64 {
    let idx = (q * (sorted.len() - 1) as f64).round() as usize;
    sorted[idx.min(sorted.len() - 1)]
}

pub fn tail_profile(
    samples: &[f64],
    sigma: f64,
    thresholds: &[f64],
    cfg: &BootstrapConfig,
) -> Result<TailProfile> {
    if samples.is_empty() {
        return domain("tail profile needs at least one sample");
    }
    if !(sigma > 0.0) {
        return domain("sigma must be positive");
    }
    if samples.iter().any(|x| !(*x >= 0.0)) {
        return domain("tail profile samples must be non-negative");
    }
    let mut thresholds = thresholds.to_vec();
    thresholds.sort_by(f64::total_cmp);
    let scaled: Vec<f64> = samples.iter().map(|x| x / sigma).collect();
    let values = profile_values(&scaled, &thresholds);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut boot: Vec<Vec<f64>> = vec![Vec::with_capacity(cfg.resamples); thresholds.len()];
    let mut buf = vec![0.0; scaled.len()];
    for _ in 0..cfg.resamples {
        for b in buf.iter_mut() {
            *b = scaled[rng.gen_range(0..scaled.len())];
        }
        for (i, v) in profile_values(&buf, &thresholds).into_iter().enumerate() {
            boot[i].push(v);
        }
    }
    let alpha = (1.0 - cfg.level) / 2.0;
    let (mut lower, mut upper) = (Vec::new(), Vec::new());
    for (i, b) in boot.iter_mut().enumerate() {
        if b.is_empty() {
            lower.push(values[i]);
            upper.push(values[i]);
            continue;
        }
        b.sort_by(f64::total_cmp);
        lower.push(percentile(b, alpha).min(values[i]));
        upper.push(percentile(b, 1.0 - alpha).max(values[i]));
    }
    Ok(TailProfile {
        thresholds,
        values,
        lower,
        upper,
        level: cfg.level,
    })
}
