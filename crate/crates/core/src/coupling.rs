//! Stein couplings `(W, W', G, R)` and Monte Carlo estimation of the
//! ingredients of the error bounds.
//!
//! Randomness is organised as one root seed split into independent ChaCha
//! streams. Samples are drawn in fixed-size chunks, chunk `c` using stream
//! `c`, and per-chunk results are reduced in chunk order. Estimates therefore
//! depend on the seed only, never on the number of worker threads.

use std::collections::{BTreeMap, HashMap};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dist::{LatticePmf, TpParams};
use crate::error::{domain, Error, Result};
use crate::metrics::smoothness;
use crate::numeric::NeumaierSum;

/// Random stream handed to samplers.
pub type Stream = ChaCha8Rng;

/// Samples per chunk of the deterministic parallel schedule.
pub const CHUNK: usize = 4096;

const INNER_KEYED_SALT: u64 = 0x9e37_79b9_7f4a_7c15;
const INNER_INDEXED_SALT: u64 = 0xd1b5_4a32_d192_ed03;

/// Independent stream number `index` under the root `seed`.
pub fn substream(seed: u64, index: u64) -> Stream {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(index);
    r
}

/// Runs `f(chunk_index, chunk_len)` over the chunks covering `n` draws and
/// returns the results in chunk order. `workers == 0` uses the rayon default.
pub fn run_chunks<T, F>(n: usize, workers: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(u64, usize) -> T + Sync + Send,
{
    let chunks = n.div_ceil(CHUNK);
    let job = || {
        (0..chunks)
            .into_par_iter()
            .map(|c| f(c as u64, CHUNK.min(n - c * CHUNK)))
            .collect()
    };
    if workers == 0 {
        return job();
    }
    match rayon::ThreadPoolBuilder::new().num_threads(workers).build() {
        Ok(pool) => pool.install(job),
        Err(_) => job(),
    }
}

/// One draw of a Stein coupling.
#[derive(Debug, Clone, PartialEq)]
pub struct CouplingSample<A> {
    pub w: i64,
    pub w_prime: i64,
    pub g: f64,
    /// The `R` of `E[G(f(W') - f(W))] = E[(W - μ) f(W)] + E[R f(W)]`.
    pub r: f64,
    pub aux: A,
}

impl<A> CouplingSample<A> {
    pub fn d(&self) -> i64 {
        self.w_prime - self.w
    }
}

/// An approximate Stein coupling together with whatever conditional
/// structure it can expose.
pub trait SteinCoupling: Sync {
    type Aux: Send + Sync;

    fn mean(&self) -> f64;
    fn variance(&self) -> f64;
    fn sample(&self, rng: &mut Stream) -> CouplingSample<Self::Aux>;

    /// Exact `E[GD | F₁]` for the sample's `F₁`, when available.
    fn conditional_gd(&self, _s: &CouplingSample<Self::Aux>) -> Option<f64> {
        None
    }

    /// A fresh draw of `W` from `L(W | F₂)`, when available.
    fn resample_given_f2(&self, _s: &CouplingSample<Self::Aux>, _rng: &mut Stream) -> Option<i64> {
        None
    }

    /// Key identifying `L(W | F₂)`; samples sharing a key share inner estimates.
    fn f2_key(&self, _s: &CouplingSample<Self::Aux>) -> Option<u64> {
        None
    }

    /// Built from an exchangeable pair in the one-sided form.
    fn one_sided(&self) -> bool {
        false
    }
}

type SampleFn<A> = Box<dyn Fn(&mut Stream) -> CouplingSample<A> + Send + Sync>;
type CondFn<A> = Box<dyn Fn(&CouplingSample<A>) -> f64 + Send + Sync>;
type ResampleFn<A> = Box<dyn Fn(&CouplingSample<A>, &mut Stream) -> i64 + Send + Sync>;
type KeyFn<A> = Box<dyn Fn(&CouplingSample<A>) -> u64 + Send + Sync>;

/// A coupling assembled from closures.
pub struct CouplingSpec<A> {
    sampler: SampleFn<A>,
    conditional_gd: Option<CondFn<A>>,
    resampler: Option<ResampleFn<A>>,
    key: Option<KeyFn<A>>,
    mu: f64,
    sigma2: f64,
    one_sided: bool,
}

impl<A> CouplingSpec<A> {
    pub fn new(
        sampler: impl Fn(&mut Stream) -> CouplingSample<A> + Send + Sync + 'static,
        mu: f64,
        sigma2: f64,
    ) -> Self {
        Self {
            sampler: Box::new(sampler),
            conditional_gd: None,
            resampler: None,
            key: None,
            mu,
            sigma2,
            one_sided: false,
        }
    }

    pub fn with_conditional_gd(
        mut self,
        f: impl Fn(&CouplingSample<A>) -> f64 + Send + Sync + 'static,
    ) -> Self {
        self.conditional_gd = Some(Box::new(f));
        self
    }

    pub fn with_resampler(
        mut self,
        f: impl Fn(&CouplingSample<A>, &mut Stream) -> i64 + Send + Sync + 'static,
    ) -> Self {
        self.resampler = Some(Box::new(f));
        self
    }

    pub fn with_f2_key(
        mut self,
        f: impl Fn(&CouplingSample<A>) -> u64 + Send + Sync + 'static,
    ) -> Self {
        self.key = Some(Box::new(f));
        self
    }
}

impl<A: Send + Sync> SteinCoupling for CouplingSpec<A> {
    type Aux = A;

    fn mean(&self) -> f64 {
        self.mu
    }

    fn variance(&self) -> f64 {
        self.sigma2
    }

    fn sample(&self, rng: &mut Stream) -> CouplingSample<A> {
        (self.sampler)(rng)
    }

    fn conditional_gd(&self, s: &CouplingSample<A>) -> Option<f64> {
        self.conditional_gd.as_ref().map(|f| f(s))
    }

    fn resample_given_f2(&self, s: &CouplingSample<A>, rng: &mut Stream) -> Option<i64> {
        self.resampler.as_ref().map(|f| f(s, rng))
    }

    fn f2_key(&self, s: &CouplingSample<A>) -> Option<u64> {
        self.key.as_ref().map(|f| f(s))
    }

    fn one_sided(&self) -> bool {
        self.one_sided
    }
}

fn check_moments(mu: f64, sigma2: f64) -> Result<()> {
    if !mu.is_finite() || !sigma2.is_finite() || sigma2 < 0.0 {
        return domain("coupling mean and variance must be finite, variance non-negative");
    }
    Ok(())
}

/// Exchangeable pair satisfying `E[W' - W | W] = -a(W - μ) + a R₅`, in the
/// one-sided form `G = (W' - W)/a · 1{W' > W}`.
///
/// `r_linear(w, aux)` returns `R₅`; the coupling's `R` is its negative.
pub fn build_one_sided_pair<A: Send + Sync + 'static>(
    pair_sampler: impl Fn(&mut Stream) -> (i64, i64, A) + Send + Sync + 'static,
    a: f64,
    r_linear: impl Fn(i64, &A) -> f64 + Send + Sync + 'static,
    mu: f64,
    sigma2: f64,
) -> Result<CouplingSpec<A>> {
    if !(a > 0.0) || !a.is_finite() {
        return domain(format!("linearity constant a must be positive, got {a}"));
    }
    check_moments(mu, sigma2)?;
    let mut spec = CouplingSpec::new(
        move |rng| {
            let (w, w_prime, aux) = pair_sampler(rng);
            let d = w_prime - w;
            CouplingSample {
                w,
                w_prime,
                g: if d > 0 { d as f64 / a } else { 0.0 },
                r: -r_linear(w, &aux),
                aux,
            }
        },
        mu,
        sigma2,
    );
    spec.one_sided = true;
    Ok(spec)
}

/// Exchangeable pair in the symmetric form `G = (W' - W)/(2a)`.
pub fn build_exchangeable_pair<A: Send + Sync + 'static>(
    pair_sampler: impl Fn(&mut Stream) -> (i64, i64, A) + Send + Sync + 'static,
    a: f64,
    r_linear: impl Fn(i64, &A) -> f64 + Send + Sync + 'static,
    mu: f64,
    sigma2: f64,
) -> Result<CouplingSpec<A>> {
    if !(a > 0.0) || !a.is_finite() {
        return domain(format!("linearity constant a must be positive, got {a}"));
    }
    check_moments(mu, sigma2)?;
    Ok(CouplingSpec::new(
        move |rng| {
            let (w, w_prime, aux) = pair_sampler(rng);
            CouplingSample {
                w,
                w_prime,
                g: (w_prime - w) as f64 / (2.0 * a),
                r: -r_linear(w, &aux),
                aux,
            }
        },
        mu,
        sigma2,
    ))
}

/// Payload of the local dependence coupling.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalAux {
    pub x: Vec<i64>,
    pub index: usize,
}

/// `(W, W - Σ_{j ∈ A_I} X_j, -n(X_I - μ_I))` with `I` uniform.
///
/// `E[GD | X] = Σ_i (X_i - μ_i) Σ_{j ∈ A_i} X_j` is supplied. When
/// `independent_summands` is set, `L(W | I, X_{A_I})` is resampled by redrawing
/// the summands outside `A_I`.
pub fn build_local_dependence(
    summands: impl Fn(&mut Stream) -> Vec<i64> + Send + Sync + 'static,
    means: Vec<f64>,
    neighborhoods: Vec<Vec<usize>>,
    sigma2: f64,
    independent_summands: bool,
) -> Result<CouplingSpec<LocalAux>> {
    let n = means.len();
    if n == 0 {
        return domain("local dependence needs at least one summand");
    }
    if neighborhoods.len() != n {
        return domain("one neighbourhood per summand is required");
    }
    for (i, a) in neighborhoods.iter().enumerate() {
        if !a.contains(&i) || a.iter().any(|&j| j >= n) {
            return domain(format!(
                "neighbourhood {i} must contain {i} and index summands only"
            ));
        }
    }
    let mu: f64 = means.iter().sum();
    check_moments(mu, sigma2)?;
    let summands = std::sync::Arc::new(summands);
    let nb = std::sync::Arc::new(neighborhoods);
    let means = std::sync::Arc::new(means);
    let (s1, nb1, m1) = (summands.clone(), nb.clone(), means.clone());
    let mut spec = CouplingSpec::new(
        move |rng| {
            let x = s1(rng);
            let index = rng.gen_range(0..n);
            let w: i64 = x.iter().sum();
            let removed: i64 = nb1[index].iter().map(|&j| x[j]).sum();
            CouplingSample {
                w,
                w_prime: w - removed,
                g: -(n as f64) * (x[index] as f64 - m1[index]),
                r: 0.0,
                aux: LocalAux { x, index },
            }
        },
        mu,
        sigma2,
    );
    let (nb2, m2) = (nb.clone(), means.clone());
    spec = spec.with_conditional_gd(move |s| {
        let x = &s.aux.x;
        let mut acc = NeumaierSum::new();
        for (i, a) in nb2.iter().enumerate() {
            let local: i64 = a.iter().map(|&j| x[j]).sum();
            acc.add((x[i] as f64 - m2[i]) * local as f64);
        }
        acc.value()
    });
    if independent_summands {
        let (s3, nb3) = (summands, nb);
        spec = spec.with_resampler(move |s, rng| {
            let fresh = s3(rng);
            let fixed = &nb3[s.aux.index];
            (0..n)
                .map(|j| {
                    if fixed.contains(&j) {
                        s.aux.x[j]
                    } else {
                        fresh[j]
                    }
                })
                .sum()
        });
    }
    Ok(spec)
}

/// `(W, W^s, μ)` for a size-biased `W^s`.
pub fn build_size_bias<A: Send + Sync + 'static>(
    sampler: impl Fn(&mut Stream) -> (i64, i64, A) + Send + Sync + 'static,
    mu: f64,
    sigma2: f64,
) -> Result<CouplingSpec<A>> {
    if !(mu > 0.0) {
        return domain(format!("size bias requires a positive mean, got {mu}"));
    }
    check_moments(mu, sigma2)?;
    Ok(CouplingSpec::new(
        move |rng| {
            let (w, w_s, aux) = sampler(rng);
            CouplingSample {
                w,
                w_prime: w_s,
                g: mu,
                r: 0.0,
                aux,
            }
        },
        mu,
        sigma2,
    ))
}

/// A Monte Carlo (or exact, `se = 0`) estimate.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Estimate {
    pub value: f64,
    pub se: f64,
}

impl Estimate {
    pub fn exact(value: f64) -> Self {
        Self { value, se: 0.0 }
    }
}

/// Streaming mean and variance (Chan et al. merge, deterministic order).
#[derive(Debug, Clone, Copy, Default)]
pub struct Moments {
    n: f64,
    mean: f64,
    m2: f64,
}

impl Moments {
    pub fn push(&mut self, x: f64) {
        self.n += 1.0;
        let d = x - self.mean;
        self.mean += d / self.n;
        self.m2 += d * (x - self.mean);
    }

    pub fn merge(&mut self, o: &Moments) {
        if o.n == 0.0 {
            return;
        }
        if self.n == 0.0 {
            *self = *o;
            return;
        }
        let n = self.n + o.n;
        let d = o.mean - self.mean;
        self.mean += d * o.n / n;
        self.m2 += o.m2 + d * d * self.n * o.n / n;
        self.n = n;
    }

    pub fn count(&self) -> u64 {
        self.n as u64
    }

    pub fn estimate(&self) -> Estimate {
        if self.n < 2.0 {
            return Estimate::exact(self.mean);
        }
        Estimate {
            value: self.mean,
            se: (self.m2 / (self.n - 1.0) / self.n).sqrt(),
        }
    }
}

/// Outcome of [`verify_identity`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IdentityReport {
    pub n_samples: u64,
    pub sigma2: f64,
    pub e_gd: Estimate,
    pub e_r_dev: Estimate,
    pub e_r: Estimate,
    /// `E[GD - σ² - R(W - μ)]`, zero for a valid coupling.
    pub discrepancy: Estimate,
    pub passed: bool,
    pub diagnostics: Vec<String>,
}

fn within(e: &Estimate, target: f64, k: f64) -> bool {
    (e.value - target).abs() <= k * e.se + 1e-12 * target.abs().max(1.0)
}

/// Checks `E[GD] = σ² + E[R(W - μ)]` and `E[R] = 0` at four standard errors.
pub fn verify_identity<C: SteinCoupling>(
    c: &C,
    n_samples: usize,
    seed: u64,
    workers: usize,
) -> Result<IdentityReport> {
    if n_samples < 10_000 {
        return domain("identity verification needs at least 10^4 samples");
    }
    let mu = c.mean();
    let s2 = c.variance();
    let parts = run_chunks(n_samples, workers, |chunk, len| {
        let mut rng = substream(seed, chunk);
        let mut m = [Moments::default(); 4];
        for _ in 0..len {
            let s = c.sample(&mut rng);
            let gd = s.g * s.d() as f64;
            let rd = s.r * (s.w as f64 - mu);
            m[0].push(gd);
            m[1].push(rd);
            m[2].push(s.r);
            m[3].push(gd - s2 - rd);
        }
        m
    });
    let mut m = [Moments::default(); 4];
    for p in &parts {
        for (a, b) in m.iter_mut().zip(p) {
            a.merge(b);
        }
    }
    let [e_gd, e_r_dev, e_r, discrepancy] = m.map(|x| x.estimate());
    let mut diagnostics = Vec::new();
    if !within(&discrepancy, 0.0, 4.0) {
        diagnostics.push(format!(
            "E[GD] - sigma^2 - E[R(W-mu)] = {:.6e} +- {:.2e} exceeds 4 SE",
            discrepancy.value, discrepancy.se
        ));
    }
    if !within(&e_r, 0.0, 4.0) {
        diagnostics.push(format!(
            "E[R] = {:.6e} +- {:.2e} exceeds 4 SE",
            e_r.value, e_r.se
        ));
    }
    Ok(IdentityReport {
        n_samples: n_samples as u64,
        sigma2: s2,
        e_gd,
        e_r_dev,
        e_r,
        discrepancy,
        passed: diagnostics.is_empty(),
        diagnostics,
    })
}

/// The estimated or exact ingredients of the error bounds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundComponents {
    pub mu: f64,
    pub sigma2: f64,
    /// Zero for exactly computed components.
    pub n_samples: u64,
    pub e_psi: Estimate,
    pub e_psi_absdev: Estimate,
    pub sup_psi_point: Estimate,
    pub e_r2: Estimate,
    pub upsilon: Estimate,
    /// Estimated upward bias of the raw inner smoothness estimator.
    pub upsilon_noise_floor: Option<f64>,
    pub upsilon_debiased: Option<Estimate>,
    /// Smoothness of the conditional law replaced by that of a matched translated Poisson law.
    pub upsilon_plugin: Option<Estimate>,
    pub remark1_regime: bool,
    pub kappa: Option<f64>,
    pub k_order: Option<u32>,
    pub t_mean: Estimate,
    pub t_second: Estimate,
    pub sup_t_point: Estimate,
    pub sup_pmf: Estimate,
    /// `sup_a P(W = a) Σ_{j ≤ k} |a - μ|^j / σ^{j-1}`.
    pub sup_pmf_poly: Option<Estimate>,
    /// `E|W - μ|^j / σ^j` for `j = 0, 1, ...`.
    pub moments: Vec<Estimate>,
}

impl BoundComponents {
    /// Components with every random term zero (`Ψ = R = Υ = 0`, `W` unobserved).
    pub fn zero(mu: f64, sigma2: f64) -> Self {
        let z = Estimate::default();
        Self {
            mu,
            sigma2,
            n_samples: 0,
            e_psi: z,
            e_psi_absdev: z,
            sup_psi_point: z,
            e_r2: z,
            upsilon: z,
            upsilon_noise_floor: None,
            upsilon_debiased: None,
            upsilon_plugin: None,
            remark1_regime: false,
            kappa: None,
            k_order: None,
            t_mean: z,
            t_second: z,
            sup_t_point: z,
            sup_pmf: z,
            sup_pmf_poly: None,
            moments: Vec::new(),
        }
    }

    pub fn sigma(&self) -> f64 {
        self.sigma2.sqrt()
    }

    /// Fills `sup_pmf`, `sup_pmf_poly` and `moments` from an exact pmf of `W`.
    pub fn fill_from_pmf(&mut self, pmf: &LatticePmf, max_moment: u32) -> Result<()> {
        let sigma = self.sigma();
        let mut moments = Vec::new();
        for j in 0..=max_moment {
            let m = crate::metrics::abs_central_moment(pmf, j, self.mu)?;
            moments.push(Estimate::exact(m / sigma.powi(j as i32)));
        }
        self.moments = moments;
        let sp = crate::metrics::sup_pmf(pmf);
        self.sup_pmf = Estimate::exact(sp.value + sp.slack);
        if let Some(k) = self.k_order {
            let v = pmf
                .iter()
                .map(|(a, p)| p * poly_weight(a, self.mu, sigma, k))
                .fold(0.0, f64::max);
            self.sup_pmf_poly = Some(Estimate::exact(v));
        }
        Ok(())
    }
}

/// `Σ_{j=0}^{k} |a - μ|^j / σ^{j-1}`.
pub fn poly_weight(a: i64, mu: f64, sigma: f64, k: u32) -> f64 {
    let x = (a as f64 - mu).abs();
    (0..=k)
        .map(|j| x.powi(j as i32) / sigma.powi(j as i32 - 1))
        .sum()
}

/// Settings for [`estimate_components`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EstimationConfig {
    pub n_outer: usize,
    /// Inner draws per conditional law when `Υ` must be estimated.
    pub n_inner: usize,
    /// Number of leading outer samples used for `Υ`.
    pub upsilon_outer: usize,
    pub max_moment: u32,
    pub seed: u64,
    pub workers: usize,
}

impl Default for EstimationConfig {
    fn default() -> Self {
        Self {
            n_outer: 100_000,
            n_inner: 2_000,
            upsilon_outer: 2_000,
            max_moment: 8,
            seed: 1,
            workers: 0,
        }
    }
}

/// Decomposition `Ψ ≤ σκ Σ_{j ≤ k} (|W - μ|/σ)^j + T`.
pub struct Decomposition<'a, A> {
    pub kappa: Option<f64>,
    pub k_order: Option<u32>,
    pub t: Option<&'a (dyn Fn(&CouplingSample<A>) -> f64 + Sync)>,
}

impl<A> Default for Decomposition<'_, A> {
    fn default() -> Self {
        Self {
            kappa: None,
            k_order: None,
            t: None,
        }
    }
}

struct Row {
    w: i64,
    cgd: f64,
    t: f64,
    r: f64,
    weight: f64,
    abs_d: i64,
}

/// Inner estimate of `S₂(L(W | F₂))` from conditional redraws.
///
/// `raw` is the smoothness of the empirical conditional pmf and is biased
/// upwards by sampling noise; `floor` estimates that bias as the expected
/// absolute second difference of pure multinomial noise; `plugin` is the
/// smoothness of the translated Poisson law matching the conditional mean
/// and variance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InnerStats {
    pub raw: f64,
    pub floor: f64,
    pub plugin: f64,
}

pub fn conditional_smoothness<C: SteinCoupling>(
    c: &C,
    s: &CouplingSample<C::Aux>,
    n_inner: usize,
    rng: &mut Stream,
) -> Result<InnerStats> {
    let mut draws = Vec::with_capacity(n_inner);
    for _ in 0..n_inner {
        match c.resample_given_f2(s, rng) {
            Some(w) => draws.push(w),
            None => {
                return Err(Error::UnsupportedEstimation {
                    missing: "conditional_resampler",
                })
            }
        }
    }
    let pmf = LatticePmf::from_samples(&draws)?;
    let raw = smoothness(&pmf, 2)?.value;
    let nf = n_inner as f64;
    let p = |i: i64| pmf.prob_at(i);
    let mut floor = NeumaierSum::new();
    for x in pmf.offset - 2..=pmf.max_value() {
        let v = p(x) + 4.0 * p(x + 1) + p(x + 2);
        floor.add((2.0 * v / (std::f64::consts::PI * nf)).sqrt());
    }
    let var = pmf.variance();
    let plugin = if var > 0.0 {
        let tp = TpParams::new(pmf.mean(), var)?;
        smoothness(&tp.to_lattice(1e-12)?, 2)?.value
    } else {
        4.0
    };
    Ok(InnerStats {
        raw,
        floor: floor.value(),
        plugin,
    })
}

fn bucket_sup(rows: &[Row], value: impl Fn(&Row) -> f64) -> Estimate {
    let n = rows.len() as f64;
    let mut buckets: BTreeMap<i64, Moments> = BTreeMap::new();
    for r in rows {
        buckets.entry(r.w).or_default().push(value(r));
    }
    let mut best = Estimate::default();
    for m in buckets.values() {
        let e = m.estimate();
        let c = m.count() as f64;
        let v = e.value * c / n;
        if v > best.value {
            // E[X 1{W=a}] = P(W=a) E[X | W=a]
            let p = c / n;
            let var = p * (m.m2 / c.max(1.0) + e.value * e.value) - v * v;
            best = Estimate {
                value: v,
                se: (var.max(0.0) / n).sqrt(),
            };
        }
    }
    best
}

/// Monte Carlo estimates of every bound component.
pub fn estimate_components<C: SteinCoupling>(
    c: &C,
    dec: &Decomposition<'_, C::Aux>,
    cfg: &EstimationConfig,
) -> Result<BoundComponents> {
    if cfg.n_outer < 2 {
        return domain("at least two outer samples are required");
    }
    let mu = c.mean();
    let sigma2 = c.variance();
    if !(sigma2 > 0.0) {
        return domain("component estimation needs a positive variance");
    }
    let sigma = sigma2.sqrt();
    {
        let mut probe = substream(cfg.seed, u64::MAX);
        let s = c.sample(&mut probe);
        if c.conditional_gd(&s).is_none() {
            return Err(Error::UnsupportedEstimation {
                missing: "conditional_gd",
            });
        }
    }
    let upsilon_outer = cfg.upsilon_outer.min(cfg.n_outer);
    let parts = run_chunks(cfg.n_outer, cfg.workers, |chunk, len| {
        let mut rng = substream(cfg.seed, chunk);
        let base = chunk as usize * CHUNK;
        let mut rows = Vec::with_capacity(len);
        let mut kept = Vec::new();
        for i in 0..len {
            let s = c.sample(&mut rng);
            let d = s.d();
            let weight = (s.g * (d * (d - 1)) as f64).abs();
            rows.push(Row {
                w: s.w,
                cgd: c.conditional_gd(&s).unwrap_or(f64::NAN),
                t: dec.t.map_or(0.0, |f| f(&s)),
                r: s.r,
                weight,
                abs_d: d.abs(),
            });
            if base + i < upsilon_outer && weight > 0.0 {
                kept.push((base + i, s));
            }
        }
        (rows, kept)
    });
    let mut rows = Vec::with_capacity(cfg.n_outer);
    let mut kept = Vec::new();
    for (r, k) in parts {
        rows.extend(r);
        kept.extend(k);
    }
    let n = rows.len() as f64;

    let mut rdev = Moments::default();
    for r in &rows {
        rdev.push(r.r * (r.w as f64 - mu));
    }
    let e_gd = sigma2 + rdev.estimate().value;
    let psi = |r: &Row| (r.cgd - e_gd).abs();

    let mean_of = |f: &dyn Fn(&Row) -> f64| {
        let mut m = Moments::default();
        for r in &rows {
            m.push(f(r));
        }
        m.estimate()
    };
    let e_psi = mean_of(&|r| psi(r));
    let e_psi_absdev = mean_of(&|r| psi(r) * (r.w as f64 - mu).abs());
    let e_r2 = mean_of(&|r| r.r * r.r);
    let t_mean = mean_of(&|r| r.t);
    let t_second = mean_of(&|r| r.t * r.t);
    let sup_psi_point = bucket_sup(&rows, psi);
    let sup_t_point = bucket_sup(&rows, |r| r.t);

    let mut counts: BTreeMap<i64, u64> = BTreeMap::new();
    for r in &rows {
        *counts.entry(r.w).or_default() += 1;
    }
    let mc = *counts.values().max().expect("at least two samples");
    let p_max = mc as f64 / n;
    let sup_pmf = Estimate {
        value: p_max,
        se: (p_max * (1.0 - p_max) / n).sqrt(),
    };
    let sup_pmf_poly = dec.k_order.map(|k| {
        let mut best = Estimate::default();
        for (&a, &cnt) in &counts {
            let p = cnt as f64 / n;
            let wgt = poly_weight(a, mu, sigma, k);
            if p * wgt > best.value {
                best = Estimate {
                    value: p * wgt,
                    se: wgt * (p * (1.0 - p) / n).sqrt(),
                };
            }
        }
        best
    });
    let moments = (0..=cfg.max_moment)
        .map(|j| mean_of(&|r| ((r.w as f64 - mu).abs() / sigma).powi(j as i32)))
        .collect();

    let max_d = rows.iter().map(|r| r.abs_d).max().unwrap_or(0);
    let remark1 = c.one_sided() && max_d <= 1;
    let mut comps = BoundComponents {
        mu,
        sigma2,
        n_samples: rows.len() as u64,
        e_psi,
        e_psi_absdev,
        sup_psi_point,
        e_r2,
        upsilon: Estimate::default(),
        upsilon_noise_floor: None,
        upsilon_debiased: None,
        upsilon_plugin: None,
        remark1_regime: remark1,
        kappa: dec.kappa,
        k_order: dec.k_order,
        t_mean,
        t_second,
        sup_t_point,
        sup_pmf,
        sup_pmf_poly,
        moments,
    };
    if remark1 || kept.is_empty() {
        if !remark1 && upsilon_outer > 0 {
            comps.upsilon_noise_floor = Some(0.0);
            comps.upsilon_debiased = Some(Estimate::default());
            comps.upsilon_plugin = Some(Estimate::default());
        }
        return Ok(comps);
    }
    if cfg.n_inner < 2 {
        return domain("n_inner must be at least 2 when the smoothness term is estimated");
    }

    let keys: Vec<Option<u64>> = kept.iter().map(|(_, s)| c.f2_key(s)).collect();
    let mut unique: Vec<u64> = keys.iter().flatten().copied().collect();
    unique.sort_unstable();
    unique.dedup();
    let key_index: HashMap<u64, usize> = unique.iter().enumerate().map(|(i, &k)| (k, i)).collect();
    let mut representative: Vec<Option<usize>> = vec![None; unique.len()];
    for (i, k) in keys.iter().enumerate() {
        if let Some(k) = k {
            let slot = &mut representative[key_index[k]];
            if slot.is_none() {
                *slot = Some(i);
            }
        }
    }
    let run = || -> Result<(Vec<InnerStats>, Vec<Option<InnerStats>>)> {
        let keyed: Result<Vec<InnerStats>> = unique
            .par_iter()
            .zip(representative.par_iter())
            .map(|(&key, rep)| {
                let s = &kept[rep.expect("every key has a sample")].1;
                let mut rng = substream(cfg.seed ^ INNER_KEYED_SALT, key);
                conditional_smoothness(c, s, cfg.n_inner, &mut rng)
            })
            .collect();
        let unkeyed: Result<Vec<Option<InnerStats>>> = kept
            .par_iter()
            .zip(keys.par_iter())
            .map(|((idx, s), k)| {
                if k.is_some() {
                    return Ok(None);
                }
                let mut rng = substream(cfg.seed ^ INNER_INDEXED_SALT, *idx as u64);
                conditional_smoothness(c, s, cfg.n_inner, &mut rng).map(Some)
            })
            .collect();
        Ok((keyed?, unkeyed?))
    };
    let (keyed, unkeyed) = if cfg.workers == 0 {
        run()?
    } else {
        match rayon::ThreadPoolBuilder::new()
            .num_threads(cfg.workers)
            .build()
        {
            Ok(pool) => pool.install(run)?,
            Err(_) => run()?,
        }
    };

    let mut stats_at: HashMap<usize, InnerStats> = HashMap::new();
    for (i, ((idx, _), k)) in kept.iter().zip(&keys).enumerate() {
        let st = match k {
            Some(k) => keyed[key_index[k]],
            None => unkeyed[i].expect("unkeyed samples are estimated"),
        };
        stats_at.insert(*idx, st);
    }
    let mut raw = Moments::default();
    let mut deb = Moments::default();
    let mut plug = Moments::default();
    let mut floor = Moments::default();
    for (i, r) in rows.iter().take(upsilon_outer).enumerate() {
        match stats_at.get(&i) {
            Some(st) => {
                raw.push(r.weight * st.raw);
                deb.push(r.weight * (st.raw - st.floor).max(0.0));
                plug.push(r.weight * st.plugin);
                floor.push(r.weight * st.floor);
            }
            None => {
                for m in [&mut raw, &mut deb, &mut plug, &mut floor] {
                    m.push(0.0);
                }
            }
        }
    }
    comps.upsilon = raw.estimate();
    comps.upsilon_debiased = Some(deb.estimate());
    comps.upsilon_plugin = Some(plug.estimate());
    comps.upsilon_noise_floor = Some(floor.estimate().value);
    Ok(comps)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bernoulli_sum(n: usize, p: f64) -> CouplingSpec<LocalAux> {
        build_local_dependence(
            move |rng| (0..n).map(|_| rng.gen_bool(p) as i64).collect(),
            vec![p; n],
            (0..n).map(|i| vec![i]).collect(),
            n as f64 * p * (1.0 - p),
            true,
        )
        .unwrap()
    }

    #[test]
    fn substreams_are_distinct_and_reproducible() {
        let a: u64 = substream(7, 0).gen();
        let b: u64 = substream(7, 1).gen();
        let c: u64 = substream(7, 0).gen();
        assert_ne!(a, b);
        assert_eq!(a, c);
    }

    #[test]
    fn chunk_results_do_not_depend_on_workers() {
        let f = |c: u64, len: usize| {
            let mut r = substream(3, c);
            (0..len).map(|_| r.gen::<u32>() as u64).sum::<u64>()
        };
        assert_eq!(run_chunks(50_000, 1, f), run_chunks(50_000, 4, f));
    }

    #[test]
    fn sample_d_is_difference() {
        let s = CouplingSample {
            w: 4,
            w_prime: 9,
            g: 0.0,
            r: 0.0,
            aux: (),
        };
        assert_eq!(s.d(), 5);
    }

    #[test]
    fn local_dependence_identity() {
        let c = bernoulli_sum(20, 0.5);
        let rep = verify_identity(&c, 40_000, 11, 0).unwrap();
        assert!(rep.passed, "{:?}", rep.diagnostics);
        assert!((rep.e_gd.value - 5.0).abs() < 4.0 * rep.e_gd.se);
    }

    #[test]
    fn builders_reject_bad_constants() {
        assert!(build_size_bias(|_r: &mut Stream| (0, 1, ()), 0.0, 1.0).is_err());
        assert!(
            build_one_sided_pair(|_r: &mut Stream| (0, 0, ()), 0.0, |_, _| 0.0, 0.0, 1.0).is_err()
        );
        assert!(build_local_dependence(
            |_r: &mut Stream| vec![1],
            vec![1.0],
            vec![vec![]],
            0.0,
            false
        )
        .is_err());
    }

    #[test]
    fn too_few_samples_rejected() {
        let c = bernoulli_sum(5, 0.5);
        assert!(verify_identity(&c, 100, 1, 0).is_err());
    }

    #[test]
    fn missing_conditional_structure_is_named() {
        let c = build_size_bias(
            |r: &mut Stream| {
                let w = r.gen_range(0..3i64);
                (w, w + 1, ())
            },
            1.0,
            1.0,
        )
        .unwrap();
        let err = estimate_components(&c, &Decomposition::default(), &EstimationConfig::default())
            .unwrap_err();
        assert!(matches!(
            err,
            Error::UnsupportedEstimation {
                missing: "conditional_gd"
            }
        ));
    }

    #[test]
    fn moments_merge_matches_single_pass() {
        let xs: Vec<f64> = (0..1000).map(|i| ((i * 37) % 101) as f64).collect();
        let mut all = Moments::default();
        xs.iter().for_each(|&x| all.push(x));
        let mut a = Moments::default();
        let mut b = Moments::default();
        xs[..300].iter().for_each(|&x| a.push(x));
        xs[300..].iter().for_each(|&x| b.push(x));
        a.merge(&b);
        assert!((a.estimate().value - all.estimate().value).abs() < 1e-12);
        assert!((a.estimate().se - all.estimate().se).abs() < 1e-12);
    }

    #[test]
    fn poly_weight_terms() {
        let w = poly_weight(7, 5.0, 2.0, 1);
        assert!((w - (2.0 + 2.0)).abs() < 1e-15);
    }
}
