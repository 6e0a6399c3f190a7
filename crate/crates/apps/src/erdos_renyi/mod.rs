//! Isolated vertices of the Erdos-Renyi graph `G(n, p)` with `p = λ/n`.

mod exact;

pub use exact::{
    brute_force_isolated_pmf, default_bits, exact_isolated_pmf, CertifiedPmf, MAX_EXACT_N,
    TARGET_ERROR,
};

use rand::Rng;
use serde::{Deserialize, Serialize};
use stein_llt::bounds::{loc_bound_cor, rate_fit, tv_bound_cor, RateRecord, RateSeries};
use stein_llt::coupling::{
    build_size_bias, estimate_components, run_chunks, substream, CouplingSample, CouplingSpec,
    Decomposition, EstimationConfig, Moments, Stream,
};
use stein_llt::dist::TpParams;
use stein_llt::metrics::{d_loc, d_tv};
use stein_llt::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ErInstance {
    pub n: u64,
    pub p: f64,
    pub lambda_edge: f64,
    pub mu: f64,
    pub sigma2: f64,
}

impl ErInstance {
    pub fn new(n: u64, p: f64) -> Result<Self> {
        if n < 2 {
            return Err(Error::Domain(format!(
                "need at least two vertices, got {n}"
            )));
        }
        if !(p > 0.0 && p <= 1.0) {
            return Err(Error::Domain(format!("p must lie in (0, 1], got {p}")));
        }
        let nf = n as f64;
        let q = 1.0 - p;
        let mu = nf * q.powf(nf - 1.0);
        let sigma2 = mu * (1.0 + (nf * p - 1.0) * q.powf(nf - 2.0));
        Ok(Self {
            n,
            p,
            lambda_edge: nf * p,
            mu,
            sigma2,
        })
    }

    /// `G(n, λ/n)`.
    pub fn with_lambda(n: u64, lambda: f64) -> Result<Self> {
        Self::new(n, lambda / n as f64)
    }

    /// `E W_1 = n(n-1)p(1-p)^{n-2}`.
    pub fn mean_degree_one(&self) -> f64 {
        let nf = self.n as f64;
        nf * (nf - 1.0) * self.p * (1.0 - self.p).powf(nf - 2.0)
    }

    /// `E W_d` for `d ∈ {0, 1}`.
    pub fn mean_degree_count(&self, d: u32) -> Result<f64> {
        match d {
            0 => Ok(self.mu),
            1 => Ok(self.mean_degree_one()),
            _ => Err(Error::Domain(format!("degree {d} is not supported"))),
        }
    }
}

/// Calls `f(u, v)` for every edge of a `G(n, p)` draw, by geometric skipping.
pub fn for_each_edge(n: usize, p: f64, rng: &mut Stream, mut f: impl FnMut(usize, usize)) {
    if n < 2 || p <= 0.0 {
        return;
    }
    if p >= 1.0 {
        for v in 1..n {
            for w in 0..v {
                f(v, w);
            }
        }
        return;
    }
    let lq = (-p).ln_1p();
    let cap = (n * n) as f64;
    let (mut v, mut w) = (1usize, -1i64);
    loop {
        let r: f64 = rng.gen();
        let skip = ((1.0 - r).ln() / lq).floor().min(cap) as i64;
        w += 1 + skip;
        while w >= v as i64 && v < n {
            w -= v as i64;
            v += 1;
        }
        if v >= n {
            break;
        }
        f(v, w as usize);
    }
}

fn degrees(n: usize, p: f64, rng: &mut Stream) -> Vec<u32> {
    let mut deg = vec![0u32; n];
    for_each_edge(n, p, rng, |a, b| {
        deg[a] += 1;
        deg[b] += 1;
    });
    deg
}

/// Isolated and degree-one vertex counts of one `G(n, p)` draw.
pub fn sample_isolated(n: u64, p: f64, rng: &mut Stream) -> (i64, i64) {
    let deg = degrees(n as usize, p, rng);
    let w = deg.iter().filter(|&&d| d == 0).count() as i64;
    let w1 = deg.iter().filter(|&&d| d == 1).count() as i64;
    (w, w1)
}

/// What the size-bias draw records about the chosen vertex `I`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ErAux {
    pub w1: i64,
    pub deg_i: u32,
    /// Vertices at distance exactly two from `I`.
    pub n2: u32,
}

fn size_bias_draw(n: usize, p: f64, rng: &mut Stream) -> (i64, i64, ErAux) {
    let mut adj: Vec<Vec<u32>> = vec![Vec::new(); n];
    for_each_edge(n, p, rng, |a, b| {
        adj[a].push(b as u32);
        adj[b].push(a as u32);
    });
    let w = adj.iter().filter(|a| a.is_empty()).count() as i64;
    let w1 = adj.iter().filter(|a| a.len() == 1).count() as i64;
    let i = rng.gen_range(0..n);
    let nbrs = &adj[i];
    let d = (!nbrs.is_empty()) as i64
        + nbrs.iter().filter(|&&j| adj[j as usize].len() == 1).count() as i64;
    let mut mark = vec![false; n];
    mark[i] = true;
    for &j in nbrs {
        mark[j as usize] = true;
    }
    let mut n2 = 0u32;
    for &j in nbrs {
        for &k in &adj[j as usize] {
            if !mark[k as usize] {
                mark[k as usize] = true;
                n2 += 1;
            }
        }
    }
    let aux = ErAux {
        w1,
        deg_i: nbrs.len() as u32,
        n2,
    };
    (w, w + d, aux)
}

/// Redraws `W` given the closed neighbourhood of `I` and every edge meeting it.
fn resample_given_neighbourhood(n: usize, p: f64, aux: &ErAux, rng: &mut Stream) -> i64 {
    let rest = n - 1 - aux.deg_i as usize;
    let free = rest - aux.n2 as usize;
    let deg = degrees(rest, p, rng);
    let isolated = deg[..free].iter().filter(|&&d| d == 0).count() as i64;
    isolated + (aux.deg_i == 0) as i64
}

/// Size-bias coupling obtained by erasing the edges of a uniform vertex.
pub fn er_coupling(inst: &ErInstance) -> Result<CouplingSpec<ErAux>> {
    if inst.p >= 1.0 {
        return Err(Error::Domain("p = 1 gives W = 0 identically".into()));
    }
    let (n, p, mu) = (inst.n as usize, inst.p, inst.mu);
    let nf = inst.n as f64;
    let key_base = inst.n + 1;
    Ok(
        build_size_bias(move |rng| size_bias_draw(n, p, rng), mu, inst.sigma2)?
            .with_conditional_gd(move |s| mu / nf * (s.aux.w1 as f64 + nf - s.w as f64))
            .with_resampler(move |s, rng| resample_given_neighbourhood(n, p, &s.aux, rng))
            .with_f2_key(move |s| s.aux.deg_i as u64 * key_base + s.aux.n2 as u64),
    )
}

/// `T = |W_1 - E W_1|`.
pub fn remainder(inst: &ErInstance) -> impl Fn(&CouplingSample<ErAux>) -> f64 + Sync {
    let ew1 = inst.mean_degree_one();
    move |s| (s.aux.w1 as f64 - ew1).abs()
}

/// `2 exp(-t² / (4(n - E W_d) + 4t/3))`.
pub fn degree_tail_bound(n: u64, mean: f64, t: f64) -> f64 {
    2.0 * (-t * t / (4.0 * (n as f64 - mean) + 4.0 * t / 3.0)).exp()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TailPoint {
    pub t: f64,
    pub empirical: f64,
    pub se: f64,
    pub bound: f64,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TailReport {
    pub d: u32,
    pub mean: f64,
    pub n_samples: usize,
    pub points: Vec<TailPoint>,
    pub passed: bool,
}

/// Compares `P(|W_d - E W_d| > t)` with the concentration bound; a point
/// fails only if the empirical tail exceeds the bound by more than 4 SE.
pub fn degree_count_tail_check(
    n: u64,
    p: f64,
    d: u32,
    t_grid: &[f64],
    n_samples: usize,
    seed: u64,
    workers: usize,
) -> Result<TailReport> {
    let inst = ErInstance::new(n, p)?;
    let mean = inst.mean_degree_count(d)?;
    if n_samples == 0 {
        return Err(Error::Domain("need at least one sample".into()));
    }
    let parts = run_chunks(n_samples, workers, |chunk, len| {
        let mut rng = substream(seed, chunk);
        let mut hits = vec![0u64; t_grid.len()];
        for _ in 0..len {
            let (w0, w1) = sample_isolated(n, p, &mut rng);
            let x = if d == 0 { w0 } else { w1 } as f64;
            for (h, &t) in hits.iter_mut().zip(t_grid) {
                if (x - mean).abs() > t {
                    *h += 1;
                }
            }
        }
        hits
    });
    let nf = n_samples as f64;
    let points: Vec<TailPoint> = t_grid
        .iter()
        .enumerate()
        .map(|(i, &t)| {
            let hits: u64 = parts.iter().map(|h| h[i]).sum();
            let e = hits as f64 / nf;
            let se = (e * (1.0 - e) / nf).max(1.0 / (nf * nf)).sqrt();
            let bound = degree_tail_bound(n, mean, t);
            TailPoint {
                t,
                empirical: e,
                se,
                bound,
                passed: e - 4.0 * se <= bound,
            }
        })
        .collect();
    Ok(TailReport {
        d,
        mean,
        n_samples,
        passed: points.iter().all(|p| p.passed),
        points,
    })
}

/// Empirical mean of `W` with its standard error.
pub fn mc_mean(n: u64, p: f64, n_samples: usize, seed: u64, workers: usize) -> (f64, f64) {
    let parts = run_chunks(n_samples, workers, |chunk, len| {
        let mut rng = substream(seed, chunk);
        let mut m = Moments::default();
        for _ in 0..len {
            m.push(sample_isolated(n, p, &mut rng).0 as f64);
        }
        m
    });
    let mut m = Moments::default();
    for x in &parts {
        m.merge(x);
    }
    let e = m.estimate();
    (e.value, e.se)
}

/// One row of the rate experiment.
pub fn er_record(
    n: u64,
    lambda: f64,
    exact: &CertifiedPmf,
    cfg: &EstimationConfig,
) -> Result<RateRecord> {
    let inst = ErInstance::with_lambda(n, lambda)?;
    let tp = TpParams::new(inst.mu, inst.sigma2)?.to_lattice(1e-15)?;
    let tv = d_tv(&exact.pmf, &tp)?;
    let loc = d_loc(&exact.pmf, &tp)?;
    let err = exact.entry_error.iter().sum::<f64>();
    let c = er_coupling(&inst)?;
    let t = remainder(&inst);
    let dec = Decomposition {
        kappa: Some(1.0),
        k_order: Some(1),
        t: Some(&t),
    };
    let mut cfg = *cfg;
    cfg.seed = cfg.seed.wrapping_add(n);
    let comps = estimate_components(&c, &dec, &cfg)?;
    let tvb = tv_bound_cor(&comps)?;
    let locb = loc_bound_cor(&comps)?;
    let sigma = inst.sigma2.sqrt();
    let mut rec = RateRecord {
        n,
        sigma,
        d_tv: tv.value,
        d_tv_slack: tv.slack + err,
        d_loc: loc.value,
        d_loc_slack: loc.slack + exact.max_error(),
        tv_bound: tvb.total,
        loc_bound: locb.total,
        mc_se: None,
        extras: Default::default(),
    };
    let x = &mut rec.extras;
    x.insert(
        "loc_diag".into(),
        loc.value * inst.sigma2 / sigma.ln().sqrt(),
    );
    x.insert("loc_times_sigma2".into(), loc.value * inst.sigma2);
    x.insert("tv_bound_se".into(), tvb.se);
    x.insert("loc_bound_se".into(), locb.se);
    x.insert("upsilon".into(), comps.upsilon.value);
    if let Some(u) = comps.upsilon_debiased {
        x.insert("upsilon_debiased".into(), u.value);
    }
    if let Some(u) = comps.upsilon_plugin {
        x.insert("upsilon_plugin".into(), u.value);
    }
    x.insert("pmf_error".into(), exact.max_error());
    Ok(rec)
}

/// Exact distances and Monte Carlo bounds over `n_grid` with `p = λ/n`.
pub fn er_rate_experiment(
    lambda: f64,
    n_grid: &[u64],
    cfg: &EstimationConfig,
) -> Result<RateSeries> {
    use rayon::prelude::*;
    if !(lambda > 0.0) {
        return Err(Error::Domain(format!(
            "lambda must be positive, got {lambda}"
        )));
    }
    for &n in n_grid {
        if (n as f64) <= lambda || n > MAX_EXACT_N {
            return Err(Error::Domain(format!(
                "grid point {n} outside ({lambda}, {MAX_EXACT_N}]"
            )));
        }
    }
    let exact: Result<Vec<CertifiedPmf>> = crate::install(cfg.workers, || {
        n_grid
            .par_iter()
            .map(|&n| exact_isolated_pmf(n, lambda / n as f64, default_bits(n)))
            .collect()
    });
    let exact = exact?;
    let records: Result<Vec<RateRecord>> = n_grid
        .iter()
        .zip(&exact)
        .map(|(&n, e)| er_record(n, lambda, e, cfg))
        .collect();
    rate_fit(RateSeries {
        label: format!("erdos-renyi lambda={lambda}"),
        records: records?,
        ..Default::default()
    })
}
