//! Curie-Weiss magnetization.
//!
//! Everything here is computed from the exact law of the magnetization `W`,
//! so bounds and distances carry no Monte Carlo error. The translated Poisson
//! machinery is applied to `W̃ = (W + (n mod 2))/2`, which lives on a span-1
//! lattice.

use rand::Rng;
use serde::{Deserialize, Serialize};
use stein_llt::bounds::{
    fit_extra, loc_bound_thm1, rate_fit, tv_bound_thm1, RateRecord, RateSeries,
};
use stein_llt::coupling::{build_one_sided_pair, BoundComponents, CouplingSpec, Estimate, Stream};
use stein_llt::dist::{LatticePmf, TpParams};
use stein_llt::metrics::{d_loc, d_tv};
use stein_llt::numeric::{ln_binomial, log_sum_exp, NeumaierSum};
use stein_llt::{Error, Result};

use crate::sampling::CdfSampler;

pub const MAX_N: u64 = 100_000;
const TP_TAIL: f64 = 1e-15;
/// Points of the fine grid on `[-1, 1]` used to fit the Taylor constant.
const TAYLOR_GRID: usize = 20_001;

fn check_regime(beta: f64, h: f64) -> Result<()> {
    if !beta.is_finite() || !h.is_finite() || beta < 0.0 || h < 0.0 {
        return Err(Error::Regime(format!(
            "need beta >= 0 and h >= 0, got beta={beta}, h={h}"
        )));
    }
    if h == 0.0 && beta >= 1.0 {
        return Err(Error::Regime(format!(
            "h = 0 requires beta < 1, got beta={beta}"
        )));
    }
    Ok(())
}

/// The non-negative root of `m = tanh(βm + h)`.
pub fn solve_mh(beta: f64, h: f64) -> Result<f64> {
    check_regime(beta, h)?;
    if h == 0.0 {
        return Ok(0.0);
    }
    let f = |m: f64| m - (beta * m + h).tanh();
    let (mut lo, mut hi) = (0.0f64, 1.0f64);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if f(mid) < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo < 1e-16 {
            break;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Law of `W = Σ S_i` on `{-n, -n+2, ..., n}`.
pub fn exact_pmf(n: u64, beta: f64, h: f64) -> Result<LatticePmf> {
    check_regime(beta, h)?;
    if n == 0 {
        return Err(Error::Domain("n must be positive".into()));
    }
    if n > MAX_N {
        return Err(Error::Size(format!("n = {n} exceeds {MAX_N}")));
    }
    let nf = n as f64;
    let logw: Vec<f64> = (0..=n)
        .map(|k| {
            let w = 2.0 * k as f64 - nf;
            ln_binomial(n, k) + beta * (w * w - nf) / (2.0 * nf) + h * w
        })
        .collect();
    let z = log_sum_exp(&logw);
    let probs = logw.iter().map(|l| (l - z).exp()).collect();
    LatticePmf::new(-(n as i64), 2, probs, 0.0)
}

/// Relabels `W` as `W̃ = (W + (n mod 2))/2`.
pub fn tilde_transform(pmf: &LatticePmf) -> Result<LatticePmf> {
    if pmf.step != 2 {
        return Err(Error::Domain(format!(
            "expected a span-2 lattice, got step {}",
            pmf.step
        )));
    }
    let par = pmf.offset.rem_euclid(2);
    LatticePmf::new((pmf.offset + par) / 2, 1, pmf.probs.clone(), pmf.tail_tol)
}

fn logistic(x: f64, sign: f64) -> f64 {
    1.0 / (1.0 + (-2.0 * sign * x).exp())
}

/// `(P(W' = w + 2 | W = w), P(W' = w - 2 | W = w))` for one Gibbs update.
pub fn gibbs_transition_probs(n: u64, beta: f64, h: f64, w: i64) -> (f64, f64) {
    let nf = n as f64;
    let wf = w as f64;
    let up = (nf - wf) / (2.0 * nf) * logistic(beta / nf * (wf + 1.0) + h, 1.0);
    let down = (nf + wf) / (2.0 * nf) * logistic(beta / nf * (wf - 1.0) + h, -1.0);
    (up, down)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CwInstance {
    pub n: u64,
    pub beta: f64,
    pub h: f64,
    pub m_h: f64,
    pub a_coef: f64,
    pub exact_pmf: LatticePmf,
    pub mu_n: f64,
    pub sigma_n2: f64,
}

impl CwInstance {
    pub fn new(n: u64, beta: f64, h: f64) -> Result<Self> {
        let m_h = solve_mh(beta, h)?;
        let a_coef = (1.0 - beta * (1.0 - m_h * m_h)) / n as f64;
        if !(a_coef > 0.0) {
            return Err(Error::Regime(format!(
                "1 - beta(1 - m^2) must be positive, got {}",
                a_coef * n as f64
            )));
        }
        let exact_pmf = exact_pmf(n, beta, h)?;
        let mu_n = exact_pmf.mean();
        let sigma_n2 = exact_pmf.variance();
        Ok(Self {
            n,
            beta,
            h,
            m_h,
            a_coef,
            exact_pmf,
            mu_n,
            sigma_n2,
        })
    }

    fn parity(&self) -> i64 {
        (self.n % 2) as i64
    }

    /// Law of `W̃`.
    pub fn tilde_pmf(&self) -> LatticePmf {
        tilde_transform(&self.exact_pmf).expect("span-2 by construction")
    }

    pub fn tilde_mean(&self) -> f64 {
        (self.mu_n + self.parity() as f64) / 2.0
    }

    pub fn tilde_variance(&self) -> f64 {
        self.sigma_n2 / 4.0
    }

    pub fn transition(&self, w: i64) -> (f64, f64) {
        gibbs_transition_probs(self.n, self.beta, self.h, w)
    }

    /// `R` of `E[W̃' - W̃ | W] = -a(W̃ - μ̃) + aR`, exactly.
    pub fn r_linear(&self, w: i64) -> f64 {
        let (up, down) = self.transition(w);
        let x = ((w + self.parity()) / 2) as f64;
        (up - down) / self.a_coef + (x - self.tilde_mean())
    }

    /// Smallest `C` with `|tanh(βx+h) - tanh(βm+h) - β(x-m)(1-m²)| ≤ C(x-m)²`
    /// on the lattice `{W/n}` and a fine grid of `[-1, 1]`.
    pub fn taylor_constant(&self) -> f64 {
        let (b, h, m) = (self.beta, self.h, self.m_h);
        let t0 = (b * m + h).tanh();
        let ratio = |x: f64| {
            let dx = x - m;
            if dx.abs() < 1e-6 {
                return 0.0;
            }
            ((b * x + h).tanh() - t0 - b * dx * (1.0 - m * m)).abs() / (dx * dx)
        };
        let nf = self.n as f64;
        let lattice = (0..=self.n).map(|k| (2.0 * k as f64 - nf) / nf);
        let grid = (0..TAYLOR_GRID).map(|i| -1.0 + 2.0 * i as f64 / (TAYLOR_GRID - 1) as f64);
        // near x = m the ratio tends to the second-order coefficient
        let local = 0.5 * b * b * (2.0 * t0 * (1.0 - t0 * t0)).abs();
        lattice.chain(grid).map(ratio).fold(local, f64::max)
    }

    /// The majorant `R'` of `|R|` for the walk on `W`, evaluated at `w`.
    pub fn r_majorant(&self, w: i64, c: f64) -> f64 {
        let nf = self.n as f64;
        let denom = 1.0 - self.beta * (1.0 - self.m_h * self.m_h);
        let dev = w as f64 / nf - self.m_h;
        self.beta / denom + (self.mu_n - nf * self.m_h).abs() + c * nf * dev * dev / denom
    }

    /// Gibbs-sampler exchangeable pair on `W̃` in the one-sided form.
    pub fn coupling(&self) -> Result<CouplingSpec<i64>> {
        let me = self.clone();
        let sampler = CdfSampler::new(&self.exact_pmf);
        let par = self.parity();
        let inst = me.clone();
        let spec = build_one_sided_pair(
            move |rng: &mut Stream| {
                let w = sampler.sample(rng);
                let (up, down) = inst.transition(w);
                let u: f64 = rng.gen();
                let w2 = if u < up {
                    w + 2
                } else if u < up + down {
                    w - 2
                } else {
                    w
                };
                ((w + par) / 2, (w2 + par) / 2, w)
            },
            self.a_coef,
            {
                let inst = me.clone();
                move |_x, w: &i64| inst.r_linear(*w)
            },
            self.tilde_mean(),
            self.tilde_variance(),
        )?;
        let inst = me;
        Ok(spec.with_conditional_gd(move |s| inst.transition(s.aux).0 / inst.a_coef))
    }
}

/// Exact bound components for `W̃` plus diagnostics that are not bound inputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CwComponents {
    pub components: BoundComponents,
    /// Fitted Taylor constant behind `R'`.
    pub taylor_c: f64,
    /// `√E[R̃²]` for the exact regression remainder.
    pub r_rms_exact: f64,
    /// `max_w |R̃(w)| - R'(w)/2`; non-positive when the majorant holds.
    pub majorant_excess: f64,
    /// `P(D̃ = 1)/a - σ̃² + E[R̃(W̃ - μ̃)]`, zero up to rounding.
    pub identity_residual: f64,
}

/// Computes every bound component of the Gibbs pair as an exact sum.
pub fn exact_components(inst: &CwInstance) -> Result<CwComponents> {
    let pmf = &inst.exact_pmf;
    let a = inst.a_coef;
    let mu = inst.tilde_mean();
    let s2 = inst.tilde_variance();
    if !(s2 > 0.0) {
        return Err(Error::Domain("degenerate magnetization".into()));
    }
    let sigma = s2.sqrt();
    let par = inst.parity();
    let c = inst.taylor_constant();

    let mut p_up = NeumaierSum::new();
    for (w, p) in pmf.iter() {
        p_up.add(p * inst.transition(w).0);
    }
    let p_up = p_up.value();

    let mut e_psi = NeumaierSum::new();
    let mut e_psi_dev = NeumaierSum::new();
    let mut e_rmaj2 = NeumaierSum::new();
    let mut e_r2 = NeumaierSum::new();
    let mut e_rdev = NeumaierSum::new();
    let mut sup_point = 0.0f64;
    let mut kappa = 0.0f64;
    let mut excess = f64::NEG_INFINITY;
    for (w, p) in pmf.iter() {
        let x = ((w + par) / 2) as f64;
        let psi = (inst.transition(w).0 - p_up).abs() / a;
        let dev = (x - mu).abs();
        e_psi.add(p * psi);
        e_psi_dev.add(p * psi * dev);
        sup_point = sup_point.max(p * psi);
        kappa = kappa.max(psi / (sigma * (1.0 + dev / sigma)));
        let r = inst.r_linear(w);
        let rmaj = inst.r_majorant(w, c) / 2.0;
        e_r2.add(p * r * r);
        e_rmaj2.add(p * rmaj * rmaj);
        e_rdev.add(p * r * (x - mu));
        excess = excess.max(r.abs() - rmaj);
    }

    let mut comps = BoundComponents::zero(mu, s2);
    comps.e_psi = Estimate::exact(e_psi.value());
    comps.e_psi_absdev = Estimate::exact(e_psi_dev.value());
    comps.sup_psi_point = Estimate::exact(sup_point);
    comps.e_r2 = Estimate::exact(e_rmaj2.value());
    comps.upsilon = Estimate::exact(0.0);
    comps.remark1_regime = true;
    comps.kappa = Some(kappa);
    comps.k_order = Some(1);
    comps.fill_from_pmf(&inst.tilde_pmf(), 8)?;
    Ok(CwComponents {
        components: comps,
        taylor_c: c,
        r_rms_exact: e_r2.value().sqrt(),
        majorant_excess: excess,
        identity_residual: p_up / a - s2 + e_rdev.value(),
    })
}

/// `TP(n m_h / 2, n(1 - m_h²)/(4(1 - β + β m_h²)))`.
pub fn asymptotic_tp(inst: &CwInstance) -> Result<TpParams> {
    let (n, b, m) = (inst.n as f64, inst.beta, inst.m_h);
    TpParams::new(
        n * m / 2.0,
        n * (1.0 - m * m) / (4.0 * (1.0 - b + b * m * m)),
    )
}

/// One row of the exact rate experiment.
pub fn cw_record(n: u64, beta: f64, h: f64) -> Result<RateRecord> {
    let inst = CwInstance::new(n, beta, h)?;
    let tilde = inst.tilde_pmf();
    let tp = TpParams::new(inst.tilde_mean(), inst.tilde_variance())?.to_lattice(TP_TAIL)?;
    let tv = d_tv(&tilde, &tp)?;
    let loc = d_loc(&tilde, &tp)?;
    let asym = asymptotic_tp(&inst)?.to_lattice(TP_TAIL)?;
    let tv_a = d_tv(&tilde, &asym)?;
    let loc_a = d_loc(&tilde, &asym)?;
    let comps = exact_components(&inst)?;
    let tvb = tv_bound_thm1(&comps.components);
    let locb = loc_bound_thm1(&comps.components);
    let mut rec = RateRecord {
        n,
        sigma: inst.tilde_variance().sqrt(),
        d_tv: tv.value,
        d_tv_slack: tv.slack,
        d_loc: loc.value,
        d_loc_slack: loc.slack,
        tv_bound: tvb.total,
        loc_bound: locb.total,
        mc_se: None,
        extras: Default::default(),
    };
    rec.extras.insert("d_tv_asym".into(), tv_a.value);
    rec.extras.insert("d_loc_asym".into(), loc_a.value);
    rec.extras
        .insert("loc_times_n".into(), loc.value * n as f64);
    rec.extras
        .insert("kappa".into(), comps.components.kappa.unwrap_or(0.0));
    rec.extras.insert("taylor_c".into(), comps.taylor_c);
    rec.extras.insert("r_rms_exact".into(), comps.r_rms_exact);
    Ok(rec)
}

/// Exact distances and bounds over `n_grid`, with fitted slopes.
pub fn cw_rate_experiment(beta: f64, h: f64, n_grid: &[u64], workers: usize) -> Result<RateSeries> {
    use rayon::prelude::*;
    check_regime(beta, h)?;
    if let Some(&n) = n_grid.iter().find(|&&n| !(50..=10_000).contains(&n)) {
        return Err(Error::Domain(format!("grid point {n} outside [50, 10000]")));
    }
    let records: Result<Vec<RateRecord>> = crate::install(workers, || {
        n_grid.par_iter().map(|&n| cw_record(n, beta, h)).collect()
    });
    let mut series = rate_fit(RateSeries {
        label: format!("curie-weiss beta={beta} h={h}"),
        records: records?,
        ..Default::default()
    })?;
    fit_extra(&mut series, "d_tv_asym")?;
    fit_extra(&mut series, "d_loc_asym")?;
    Ok(series)
}
