//! Hoeffding permutation statistic `W = Σ_i a_{i ρ(i)}` for a uniform
//! permutation `ρ` and an integer matrix `a`.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use serde::{Deserialize, Serialize};
use stein_llt::bounds::{
    loc_bound_cor, rate_fit, rate_fit_points, tv_bound_cor, RateRecord, RateSeries,
};
use stein_llt::coupling::{
    estimate_components, run_chunks, substream, CouplingSample, CouplingSpec, Decomposition,
    EstimationConfig, Stream,
};
use stein_llt::dist::{LatticePmf, TpParams};
use stein_llt::metrics::{d_loc, d_tv, tail_profile, BootstrapConfig, TailProfile};
use stein_llt::{Error, Result};

pub const MAX_BRUTE_FORCE_N: usize = 9;
/// Monte Carlo draws per unit of `σ³` in the rate experiment.
pub const SAMPLES_PER_SIGMA3: f64 = 100.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HoeffdingInstance {
    pub n: usize,
    /// Row-major matrix after the integer shift.
    pub matrix: Vec<i64>,
    /// Integer added to every entry so that `|μ| ≤ n/2`.
    pub shift: i64,
    /// Row-major `â_{ij}`.
    pub hat: Vec<f64>,
    pub row_sums: Vec<i64>,
    pub col_sums: Vec<i64>,
    pub total: i64,
    pub mu: f64,
    pub sigma2: f64,
    pub a1_bound: i64,
    pub degenerate: bool,
    /// Filled by [`HoeffdingInstance::assess`].
    pub assumption_report: Option<AssumptionReport>,
}

/// Builds the instance from a square integer matrix, shifting it so that `|μ| ≤ n/2`.
pub fn build_instance(rows: &[Vec<i64>]) -> Result<HoeffdingInstance> {
    let n = rows.len();
    if n < 2 {
        return Err(Error::Domain(format!("need n >= 2, got {n}")));
    }
    if let Some(r) = rows.iter().position(|r| r.len() != n) {
        return Err(Error::Domain(format!(
            "matrix is not square: row {r} has {} entries, expected {n}",
            rows[r].len()
        )));
    }
    let ni = n as i64;
    let raw_total: i64 = rows.iter().flatten().sum();
    // μ = a_{++}/n; adding m to every entry moves μ by n·m. Ties keep the smaller |m|.
    let n2 = ni * ni;
    let lo = (-raw_total).div_euclid(n2);
    let shift = [lo, lo + 1]
        .into_iter()
        .min_by_key(|m| ((raw_total + n2 * m).abs(), m.abs()))
        .expect("two candidates");
    let matrix: Vec<i64> = rows.iter().flatten().map(|&x| x + shift).collect();
    let row_sums: Vec<i64> = (0..n)
        .map(|i| matrix[i * n..(i + 1) * n].iter().sum())
        .collect();
    let col_sums: Vec<i64> = (0..n)
        .map(|j| (0..n).map(|i| matrix[i * n + j]).sum())
        .collect();
    let total: i64 = row_sums.iter().sum();
    let mut hat = Vec::with_capacity(n * n);
    let mut ss: i128 = 0;
    for i in 0..n {
        for j in 0..n {
            // n² â_ij as an exact integer
            let h =
                (ni * ni * matrix[i * n + j] - ni * row_sums[i] - ni * col_sums[j] + total) as i128;
            ss += h * h;
            hat.push(h as f64 / (ni * ni) as f64);
        }
    }
    let n4 = (ni as f64).powi(4);
    let sigma2 = ss as f64 / n4 / (ni - 1) as f64;
    Ok(HoeffdingInstance {
        n,
        a1_bound: matrix.iter().map(|x| x.abs()).max().unwrap_or(0),
        shift,
        hat,
        row_sums,
        col_sums,
        total,
        mu: total as f64 / ni as f64,
        sigma2,
        degenerate: ss == 0,
        assumption_report: None,
        matrix,
    })
}

impl HoeffdingInstance {
    #[inline]
    pub fn a(&self, i: usize, j: usize) -> i64 {
        self.matrix[i * self.n + j]
    }

    /// Runs [`check_assumptions`] and stores the report.
    pub fn assess(&mut self, threshold: usize) -> &AssumptionReport {
        let rep = check_assumptions(self, threshold);
        self.assumption_report.insert(rep)
    }

    pub fn w_of(&self, perm: &[usize]) -> i64 {
        perm.iter().enumerate().map(|(i, &j)| self.a(i, j)).sum()
    }

    /// `(T_1, T_2, T_3, T_4)` at the permutation `perm`.
    pub fn t_values(&self, perm: &[usize]) -> [f64; 4] {
        let nf = self.n as f64;
        let (mut t1, mut t2, mut t3, mut w) = (0i64, 0i64, 0i64, 0i64);
        for (i, &j) in perm.iter().enumerate() {
            let x = self.a(i, j);
            w += x;
            t1 += x * x;
            t2 += x * self.row_sums[i];
            t3 += x * self.col_sums[j];
        }
        let dev = w as f64 - self.mu;
        [
            t1 as f64,
            -(t2 as f64) / nf,
            -(t3 as f64) / nf,
            dev * dev / nf,
        ]
    }

    /// `(E T_1, E T_2, E T_3, E T_4)`.
    pub fn t_means(&self) -> [f64; 4] {
        let nf = self.n as f64;
        let sq: i64 = self.matrix.iter().map(|x| x * x).sum();
        let rs: i64 = self.row_sums.iter().map(|x| x * x).sum();
        let cs: i64 = self.col_sums.iter().map(|x| x * x).sum();
        [
            sq as f64 / nf,
            -(rs as f64) / (nf * nf),
            -(cs as f64) / (nf * nf),
            self.sigma2 / nf,
        ]
    }

    /// `E[GD | ρ] = 2μ(W - μ)/n + Σ_l T_l + μ²/n`.
    pub fn conditional_gd(&self, w: i64, t: &[f64; 4]) -> f64 {
        let nf = self.n as f64;
        2.0 * self.mu * (w as f64 - self.mu) / nf + t.iter().sum::<f64>() + self.mu * self.mu / nf
    }
}

/// Exact law of `W` by enumerating all `n!` permutations.
pub fn brute_force_pmf(inst: &HoeffdingInstance) -> Result<LatticePmf> {
    let n = inst.n;
    if n > MAX_BRUTE_FORCE_N {
        return Err(Error::Size(format!(
            "enumeration supports n <= {MAX_BRUTE_FORCE_N}, got {n}"
        )));
    }
    let mut counts: std::collections::BTreeMap<i64, u64> = Default::default();
    let mut total = 0u64;
    for_each_permutation(n, |p| {
        *counts.entry(inst.w_of(p)).or_default() += 1;
        total += 1;
    });
    let lo = *counts.keys().next().expect("at least one permutation");
    let hi = *counts.keys().next_back().expect("at least one permutation");
    let mut c = vec![0u64; (hi - lo + 1) as usize];
    for (k, v) in counts {
        c[(k - lo) as usize] = v;
    }
    LatticePmf::from_counts(lo, &c)
}

/// Heap's algorithm.
fn for_each_permutation(n: usize, mut f: impl FnMut(&[usize])) {
    let mut p: Vec<usize> = (0..n).collect();
    let mut c = vec![0usize; n];
    f(&p);
    let mut i = 0;
    while i < n {
        if c[i] < i {
            if i % 2 == 0 {
                p.swap(0, i);
            } else {
                p.swap(c[i], i);
            }
            f(&p);
            c[i] += 1;
            i = 0;
        } else {
            c[i] = 0;
            i += 1;
        }
    }
}

fn random_perm(n: usize, rng: &mut Stream) -> Vec<usize> {
    let mut p: Vec<usize> = (0..n).collect();
    p.shuffle(rng);
    p
}

/// One draw of `W`.
pub fn sample_w(inst: &HoeffdingInstance, rng: &mut Stream) -> i64 {
    inst.w_of(&random_perm(inst.n, rng))
}

/// What a coupling draw records: `(I, J, ρ_I, ρ_J)` and the `T_l`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HoeffdingAux {
    pub i: usize,
    pub j: usize,
    pub rho_i: usize,
    pub rho_j: usize,
    pub t: [f64; 4],
}

/// Redraws `W` from a uniform permutation with `ρ_I` and `ρ_J` held fixed.
fn resample_given_pair(inst: &HoeffdingInstance, x: &HoeffdingAux, rng: &mut Stream) -> i64 {
    let n = inst.n;
    let mut cols: Vec<usize> = (0..n).filter(|&c| c != x.rho_i && c != x.rho_j).collect();
    cols.shuffle(rng);
    let mut w = inst.a(x.i, x.rho_i);
    if x.j != x.i {
        w += inst.a(x.j, x.rho_j);
    }
    let rows = (0..n).filter(|&r| r != x.i && r != x.j);
    for (r, c) in rows.zip(cols) {
        w += inst.a(r, c);
    }
    w
}

/// `W' = W - a_{Iρ_I} - a_{Jρ_J}` (one term when `I = J`) and `G = n(a_{Iρ_J} - a_{Iρ_I})`.
pub fn hoeffding_coupling(inst: &HoeffdingInstance) -> Result<CouplingSpec<HoeffdingAux>> {
    if inst.degenerate || !(inst.sigma2 > 0.0) {
        return Err(Error::Domain(
            "degenerate matrix: the variance is zero".into(),
        ));
    }
    let n = inst.n;
    let s1 = inst.clone();
    let s2 = inst.clone();
    let s3 = inst.clone();
    Ok(CouplingSpec::new(
        move |rng| {
            let perm = random_perm(n, rng);
            let i = rng.gen_range(0..n);
            let j = rng.gen_range(0..n);
            let w = s1.w_of(&perm);
            let mut w_prime = w - s1.a(i, perm[i]);
            if i != j {
                w_prime -= s1.a(j, perm[j]);
            }
            CouplingSample {
                w,
                w_prime,
                g: (n as i64 * (s1.a(i, perm[j]) - s1.a(i, perm[i]))) as f64,
                r: 0.0,
                aux: HoeffdingAux {
                    i,
                    j,
                    rho_i: perm[i],
                    rho_j: perm[j],
                    t: s1.t_values(&perm),
                },
            }
        },
        inst.mu,
        inst.sigma2,
    )
    .with_conditional_gd(move |s| s2.conditional_gd(s.w, &s.aux.t))
    .with_resampler(move |s, rng| resample_given_pair(&s3, &s.aux, rng)))
}

/// `T = Σ_l |T_l - E T_l|`.
pub fn remainder(inst: &HoeffdingInstance) -> impl Fn(&CouplingSample<HoeffdingAux>) -> f64 + Sync {
    let m = inst.t_means();
    move |s| s.aux.t.iter().zip(&m).map(|(t, e)| (t - e).abs()).sum()
}

/// Averages over every permutation (and every `(I, J)` for the direct form)
/// of `E[GD | ρ]` and of `G·D`; both equal `σ²` for an exact coupling.
pub fn enumerate_gd(inst: &HoeffdingInstance) -> Result<(f64, f64)> {
    let n = inst.n;
    if n > 7 {
        return Err(Error::Size(format!(
            "exhaustive coupling enumeration supports n <= 7, got {n}"
        )));
    }
    let (mut cgd, mut direct, mut count) = (0.0, 0.0, 0u64);
    for_each_permutation(n, |p| {
        let w = inst.w_of(p);
        cgd += inst.conditional_gd(w, &inst.t_values(p));
        let mut acc = 0i64;
        for i in 0..n {
            for j in 0..n {
                let d = -inst.a(i, p[i]) - if i != j { inst.a(j, p[j]) } else { 0 };
                acc += n as i64 * (inst.a(i, p[j]) - inst.a(i, p[i])) * d;
            }
        }
        direct += acc as f64 / (n * n) as f64;
        count += 1;
    });
    Ok((cgd / count as f64, direct / count as f64))
}

/// Constants of the boundedness and non-lattice assumptions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssumptionReport {
    pub a1: i64,
    pub alpha0: f64,
    pub alpha1: f64,
    pub alpha2: f64,
    /// Disjoint row pairs accepted by the greedy scan.
    pub pairs: Vec<(usize, usize)>,
    /// Column pairs with a unit alternating sum, per accepted row pair.
    pub pair_counts: Vec<usize>,
    pub n1: usize,
    pub n2_min: usize,
    pub threshold: usize,
}

fn unit_column_pairs(inst: &HoeffdingInstance, i1: usize, i2: usize) -> usize {
    let n = inst.n;
    let mut c = 0;
    for j1 in 0..n {
        for j2 in j1 + 1..n {
            let s = inst.a(i1, j1) + inst.a(i2, j2) - inst.a(i1, j2) - inst.a(i2, j1);
            if s.abs() == 1 {
                c += 1;
            }
        }
    }
    c
}

/// Greedy deterministic search for disjoint row pairs with more than
/// `threshold` unit alternating sums; `α₁` from it is a lower bound.
pub fn check_assumptions(inst: &HoeffdingInstance, threshold: usize) -> AssumptionReport {
    let n = inst.n;
    let mut used = vec![false; n];
    let mut pairs = Vec::new();
    let mut counts = Vec::new();
    for i1 in 0..n {
        if used[i1] {
            continue;
        }
        for i2 in i1 + 1..n {
            if used[i2] {
                continue;
            }
            let c = unit_column_pairs(inst, i1, i2);
            if c > threshold {
                used[i1] = true;
                used[i2] = true;
                pairs.push((i1, i2));
                counts.push(c);
                break;
            }
        }
    }
    let n1 = pairs.len();
    let n2_min = counts.iter().copied().min().unwrap_or(0);
    let nf = n as f64;
    AssumptionReport {
        a1: inst.a1_bound,
        alpha0: if inst.a1_bound > 0 {
            (inst.sigma2 / nf).sqrt() / inst.a1_bound as f64
        } else {
            0.0
        },
        alpha1: n1 as f64 / nf,
        alpha2: if n1 > 0 {
            n2_min as f64 / (nf * nf)
        } else {
            0.0
        },
        pairs,
        pair_counts: counts,
        n1,
        n2_min,
        threshold,
    }
}

/// Minimum constants a matrix must reach to enter a rate experiment.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AssumptionThresholds {
    pub alpha0: f64,
    pub alpha1: f64,
    pub alpha2: f64,
}

impl Default for AssumptionThresholds {
    fn default() -> Self {
        Self {
            alpha0: 0.1,
            alpha1: 0.2,
            alpha2: 0.05,
        }
    }
}

/// Shipped matrix generators.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum MatrixFamily {
    /// Independent fair `{0, 1}` entries.
    Bernoulli,
    /// `(i + j) mod 2` plus independent noise in `{-1, 0, 1}` with
    /// probabilities `1/8, 3/4, 1/8`.
    ParityNoise,
}

impl MatrixFamily {
    pub fn generate(self, n: usize, seed: u64) -> Vec<Vec<i64>> {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|i| {
                (0..n)
                    .map(|j| match self {
                        MatrixFamily::Bernoulli => rng.gen_bool(0.5) as i64,
                        MatrixFamily::ParityNoise => {
                            let u: f64 = rng.gen();
                            let noise = if u < 0.125 {
                                -1
                            } else if u < 0.25 {
                                1
                            } else {
                                0
                            };
                            ((i + j) % 2) as i64 + noise
                        }
                    })
                    .collect()
            })
            .collect()
    }

    pub fn name(self) -> &'static str {
        match self {
            MatrixFamily::Bernoulli => "bernoulli",
            MatrixFamily::ParityNoise => "parity-noise",
        }
    }
}

impl std::str::FromStr for MatrixFamily {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "bernoulli" => Ok(MatrixFamily::Bernoulli),
            "parity-noise" => Ok(MatrixFamily::ParityNoise),
            _ => Err(Error::Parse(format!("unknown matrix family {s:?}"))),
        }
    }
}

/// `n` draws of `W`, deterministic in `seed` for any worker count.
pub fn sample_many(
    inst: &HoeffdingInstance,
    n_samples: usize,
    seed: u64,
    workers: usize,
) -> Vec<i64> {
    run_chunks(n_samples, workers, |chunk, len| {
        let mut rng = substream(seed, chunk);
        (0..len)
            .map(|_| sample_w(inst, &mut rng))
            .collect::<Vec<_>>()
    })
    .concat()
}

/// Required Monte Carlo sample size `⌈100 σ³⌉`.
pub fn required_samples(sigma2: f64) -> usize {
    (SAMPLES_PER_SIGMA3 * sigma2.powf(1.5)).ceil() as usize
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HoeffdingRateConfig {
    /// Draws of `W` per grid point; `None` uses the `100 σ³` floor.
    pub n_samples: Option<usize>,
    pub estimation: EstimationConfig,
    pub thresholds: AssumptionThresholds,
    /// Seed of the matrix generator; grid point `n` uses `matrix_seed + n`.
    pub matrix_seed: u64,
}

impl Default for HoeffdingRateConfig {
    fn default() -> Self {
        Self {
            n_samples: None,
            estimation: EstimationConfig {
                n_outer: 50_000,
                n_inner: 2_000,
                upsilon_outer: 400,
                max_moment: 4,
                seed: 1,
                workers: 0,
            },
            thresholds: AssumptionThresholds::default(),
            matrix_seed: 7,
        }
    }
}

/// One row of the Monte Carlo rate experiment.
pub fn hoeffding_record(inst: &HoeffdingInstance, cfg: &HoeffdingRateConfig) -> Result<RateRecord> {
    let n = inst.n as u64;
    let need = required_samples(inst.sigma2);
    let n_samples = cfg.n_samples.unwrap_or(need);
    if n_samples < need {
        return Err(Error::Domain(format!(
            "n={n}: {n_samples} samples requested, at least {need} = 100 sigma^3 required"
        )));
    }
    let est = &cfg.estimation;
    let draws = sample_many(inst, n_samples, est.seed.wrapping_add(n), est.workers);
    let emp = LatticePmf::from_samples(&draws)?;
    let tp = TpParams::new(inst.mu, inst.sigma2)?.to_lattice(1e-15)?;
    let tv = d_tv(&emp, &tp)?;
    let loc = d_loc(&emp, &tp)?;
    let nf = n_samples as f64;
    let se_tv = 0.5 * (emp.probs.iter().map(|p| p * (1.0 - p)).sum::<f64>() / nf).sqrt();
    let p_max = emp.probs.iter().cloned().fold(0.0, f64::max);
    let se_loc = (p_max * (1.0 - p_max) / nf).sqrt();

    let c = hoeffding_coupling(inst)?;
    let t = remainder(inst);
    let dec = Decomposition {
        kappa: Some(2.0 * inst.a1_bound as f64),
        k_order: Some(1),
        t: Some(&t),
    };
    let mut ecfg = *est;
    ecfg.seed = est.seed.wrapping_add(n).wrapping_add(0x5851_f42d);
    let comps = estimate_components(&c, &dec, &ecfg)?;
    let tvb = tv_bound_cor(&comps)?;
    let locb = loc_bound_cor(&comps)?;
    let sigma = inst.sigma2.sqrt();
    let mut rec = RateRecord {
        n,
        sigma,
        d_tv: tv.value,
        d_tv_slack: tv.slack,
        d_loc: loc.value,
        d_loc_slack: loc.slack,
        tv_bound: tvb.total,
        loc_bound: locb.total,
        mc_se: Some(se_tv.max(se_loc)),
        extras: Default::default(),
    };
    let x = &mut rec.extras;
    x.insert("n_samples".into(), n_samples as f64);
    x.insert("se_tv".into(), se_tv);
    x.insert("se_loc".into(), se_loc);
    x.insert("loc_times_sigma2".into(), loc.value * inst.sigma2);
    x.insert(
        "loc_diag".into(),
        loc.value * inst.sigma2 / sigma.ln().sqrt(),
    );
    x.insert("tv_bound_se".into(), tvb.se);
    x.insert("loc_bound_se".into(), locb.se);
    x.insert("t_mean".into(), comps.t_mean.value);
    x.insert("upsilon".into(), comps.upsilon.value);
    if let Some(u) = comps.upsilon_debiased {
        x.insert("upsilon_debiased".into(), u.value);
    }
    Ok(rec)
}

/// Monte Carlo distances and bounds for one matrix per grid point.
///
/// Grids too short for [`rate_fit`] still get slopes from the available points.
pub fn hoeffding_rate_experiment(
    family: MatrixFamily,
    n_grid: &[usize],
    cfg: &HoeffdingRateConfig,
) -> Result<RateSeries> {
    let mut records = Vec::with_capacity(n_grid.len());
    for &n in n_grid {
        let mut inst = build_instance(&family.generate(n, cfg.matrix_seed.wrapping_add(n as u64)))?;
        let rep = inst.assess(n * n / 20).clone();
        let th = &cfg.thresholds;
        if rep.alpha0 < th.alpha0 || rep.alpha1 < th.alpha1 || rep.alpha2 < th.alpha2 {
            return Err(Error::Domain(format!(
                "n={n}: assumption constants ({:.3}, {:.3}, {:.3}) below the accepted minima ({}, {}, {})",
                rep.alpha0, rep.alpha1, rep.alpha2, th.alpha0, th.alpha1, th.alpha2
            )));
        }
        records.push(hoeffding_record(&inst, cfg)?);
    }
    let series = RateSeries {
        label: format!("hoeffding family={}", family.name()),
        records,
        ..Default::default()
    };
    match rate_fit(series.clone()) {
        Ok(s) => Ok(s),
        Err(Error::FitRefused(_)) => rate_fit_points(series),
        Err(e) => Err(e),
    }
}

/// Tail profiles of `|T_l - E T_l|/(A₁σ)` for `l = 1, 2, 3`.
pub fn t_tail_profiles(
    inst: &HoeffdingInstance,
    n_samples: usize,
    thresholds: &[f64],
    seed: u64,
    workers: usize,
) -> Result<Vec<TailProfile>> {
    let means = inst.t_means();
    let devs: Vec<[f64; 3]> = run_chunks(n_samples, workers, |chunk, len| {
        let mut rng = substream(seed, chunk);
        (0..len)
            .map(|_| {
                let t = inst.t_values(&random_perm(inst.n, &mut rng));
                [
                    (t[0] - means[0]).abs(),
                    (t[1] - means[1]).abs(),
                    (t[2] - means[2]).abs(),
                ]
            })
            .collect::<Vec<_>>()
    })
    .concat();
    let scale = inst.a1_bound.max(1) as f64 * inst.sigma2.sqrt();
    (0..3)
        .map(|l| {
            let xs: Vec<f64> = devs.iter().map(|d| d[l]).collect();
            tail_profile(&xs, scale, thresholds, &BootstrapConfig::default())
        })
        .collect()
}

/// Least-squares fit of `ln ε(t)` against `t` over the positive profile values.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TailDecay {
    pub slope: f64,
    pub monotone: bool,
    pub points: usize,
}

impl TailDecay {
    pub fn exponential(&self) -> bool {
        self.monotone && self.points >= 3 && self.slope < 0.0
    }
}

pub fn tail_decay(profile: &TailProfile) -> TailDecay {
    let monotone = profile.values.windows(2).all(|w| w[1] <= w[0]);
    let pts: Vec<(f64, f64)> = profile
        .thresholds
        .iter()
        .zip(&profile.values)
        .filter(|(_, v)| **v > 0.0)
        .map(|(t, v)| (*t, v.ln()))
        .collect();
    let k = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / k;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / k;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx) * (p.0 - mx)).sum();
    TailDecay {
        slope: if sxx > 0.0 { sxy / sxx } else { f64::NAN },
        monotone,
        points: pts.len(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_by_two() {
        let inst = build_instance(&[vec![0, 1], vec![1, 0]]).unwrap();
        assert_eq!(inst.mu, 1.0);
        assert!((inst.sigma2 - 1.0).abs() < 1e-15);
        let p = brute_force_pmf(&inst).unwrap();
        assert_eq!(p.prob_at(0), 0.5);
        assert_eq!(p.prob_at(2), 0.5);
    }

    #[test]
    fn identity_fixed_points() {
        let id: Vec<Vec<i64>> = (0..3)
            .map(|i| (0..3).map(|j| (i == j) as i64).collect())
            .collect();
        let p = brute_force_pmf(&build_instance(&id).unwrap()).unwrap();
        assert!((p.prob_at(0) - 1.0 / 3.0).abs() < 1e-15);
        assert!((p.prob_at(1) - 0.5).abs() < 1e-15);
        assert!((p.prob_at(3) - 1.0 / 6.0).abs() < 1e-15);
    }

    #[test]
    fn constant_matrix_is_degenerate() {
        let inst = build_instance(&vec![vec![3; 4]; 4]).unwrap();
        assert!(inst.degenerate);
        assert_eq!(inst.sigma2, 0.0);
        assert!(hoeffding_coupling(&inst).is_err());
    }

    #[test]
    fn non_square_refused() {
        assert!(build_instance(&[vec![1, 2], vec![3]]).is_err());
        assert!(brute_force_pmf(&build_instance(&vec![vec![0; 10]; 10]).unwrap()).is_err());
    }

    #[test]
    fn heap_visits_every_permutation_once() {
        let mut seen = std::collections::HashSet::new();
        for_each_permutation(5, |p| {
            assert!(seen.insert(p.to_vec()));
        });
        assert_eq!(seen.len(), 120);
    }

    #[test]
    fn family_names_round_trip() {
        for f in [MatrixFamily::Bernoulli, MatrixFamily::ParityNoise] {
            assert_eq!(f.name().parse::<MatrixFamily>().unwrap(), f);
        }
    }
}
