//! Error-bound formulas, rate series and their diagnostics.

use std::collections::BTreeMap;
use std::f64::consts::E;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::coupling::{BoundComponents, Estimate};
use crate::error::{Error, Result};

/// One additive group of a bound.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundTerm {
    pub label: String,
    pub value: f64,
}

/// A bound value with its term breakdown and propagated Monte Carlo error.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundValue {
    pub total: f64,
    pub terms: Vec<BoundTerm>,
    pub se: f64,
}

fn term(label: &str, value: f64) -> BoundTerm {
    BoundTerm {
        label: label.to_string(),
        value,
    }
}

fn assemble(terms: Vec<BoundTerm>) -> (f64, Vec<BoundTerm>) {
    (terms.iter().map(|t| t.value).sum(), terms)
}

fn sqrt0(x: f64) -> f64 {
    x.max(0.0).sqrt()
}

fn tv_thm1_terms(c: &BoundComponents) -> Vec<BoundTerm> {
    let s = c.sigma();
    vec![
        term("psi", c.e_psi.value / c.sigma2),
        term("r", 2.0 * sqrt0(c.e_r2.value) / s),
        term("upsilon", 2.0 * (c.upsilon.value + 1.0) / s),
    ]
}

fn loc_thm1_terms(c: &BoundComponents) -> Vec<BoundTerm> {
    let s = c.sigma();
    let s2 = c.sigma2;
    let root2e = (2.0 * E).sqrt();
    vec![
        term("psi", c.e_psi.value / (s2 * s * root2e)),
        term("psi_absdev", c.e_psi_absdev.value / (s2 * s2)),
        term("psi_point", c.sup_psi_point.value / s2),
        term(
            "r",
            sqrt0(c.e_r2.value) / s2 * (2.0 + 1.0 / root2e + s * c.sup_pmf.value),
        ),
        term("upsilon", 2.0 * (c.upsilon.value + 1.0) / s2),
    ]
}

fn corollary_inputs(c: &BoundComponents, moments_needed: usize) -> Result<(f64, u32)> {
    let kappa = c
        .kappa
        .ok_or_else(|| Error::IncompleteComponents("kappa is missing".into()))?;
    let k = c
        .k_order
        .ok_or_else(|| Error::IncompleteComponents("k_order is missing".into()))?;
    let need = k as usize + moments_needed;
    if c.moments.len() < need {
        return Err(Error::IncompleteComponents(format!(
            "moments up to order {} required, {} supplied",
            need - 1,
            c.moments.len()
        )));
    }
    Ok((kappa, k))
}

fn moment_sum(c: &BoundComponents, upto: u32) -> f64 {
    c.moments[..=upto as usize].iter().map(|m| m.value).sum()
}

fn tv_cor_terms(c: &BoundComponents) -> Result<Vec<BoundTerm>> {
    let (kappa, k) = corollary_inputs(c, 1)?;
    let s = c.sigma();
    Ok(vec![
        term("kappa_moments", kappa / s * moment_sum(c, k)),
        term("t_mean", c.t_mean.value / c.sigma2),
        term("r", 2.0 * sqrt0(c.e_r2.value) / s),
        term("upsilon", 2.0 * (c.upsilon.value + 1.0) / s),
    ])
}

fn loc_cor_terms(c: &BoundComponents) -> Result<Vec<BoundTerm>> {
    let (kappa, k) = corollary_inputs(c, 2)?;
    let poly = c.sup_pmf_poly.ok_or_else(|| {
        Error::IncompleteComponents("sup_a P(W=a) polynomial term is missing".into())
    })?;
    let s = c.sigma();
    let s2 = c.sigma2;
    Ok(vec![
        term("kappa_moments", 2.0 * kappa / s2 * moment_sum(c, k + 1)),
        term("kappa_sup_pmf_poly", kappa / s2 * poly.value),
        term("t_second", 2.0 * sqrt0(c.t_second.value) / (s2 * s)),
        term("t_point", c.sup_t_point.value / s2),
        term("r", sqrt0(c.e_r2.value) / s2 * (3.0 + s * c.sup_pmf.value)),
        term("upsilon", 2.0 * (c.upsilon.value + 1.0) / s2),
    ])
}

/// Copies of `c` with one estimated field moved up by its standard error.
fn perturbed(c: &BoundComponents) -> Vec<BoundComponents> {
    let mut out = Vec::new();
    let fields: [fn(&mut BoundComponents) -> &mut Estimate; 9] = [
        |c| &mut c.e_psi,
        |c| &mut c.e_psi_absdev,
        |c| &mut c.sup_psi_point,
        |c| &mut c.e_r2,
        |c| &mut c.upsilon,
        |c| &mut c.t_mean,
        |c| &mut c.t_second,
        |c| &mut c.sup_t_point,
        |c| &mut c.sup_pmf,
    ];
    for f in fields {
        let mut d = c.clone();
        let e = f(&mut d);
        if e.se > 0.0 {
            e.value += e.se;
            out.push(d);
        }
    }
    if let Some(p) = c.sup_pmf_poly {
        if p.se > 0.0 {
            let mut d = c.clone();
            d.sup_pmf_poly = Some(Estimate {
                value: p.value + p.se,
                se: p.se,
            });
            out.push(d);
        }
    }
    for j in 0..c.moments.len() {
        if c.moments[j].se > 0.0 {
            let mut d = c.clone();
            d.moments[j].value += d.moments[j].se;
            out.push(d);
        }
    }
    out
}

fn evaluate(
    c: &BoundComponents,
    f: impl Fn(&BoundComponents) -> Result<Vec<BoundTerm>>,
) -> Result<BoundValue> {
    let (total, terms) = assemble(f(c)?);
    let mut var = 0.0;
    for d in perturbed(c) {
        let (t, _) = assemble(f(&d)?);
        var += (t - total) * (t - total);
    }
    Ok(BoundValue {
        total,
        terms,
        se: var.sqrt(),
    })
}

/// `EΨ/σ² + 2√(ER²)/σ + 2(Υ + 1)/σ`.
pub fn tv_bound_thm1(c: &BoundComponents) -> BoundValue {
    evaluate(c, |c| Ok(tv_thm1_terms(c))).expect("infallible")
}

/// The five-group local bound built from `Ψ`, `R` and `Υ`.
pub fn loc_bound_thm1(c: &BoundComponents) -> BoundValue {
    evaluate(c, |c| Ok(loc_thm1_terms(c))).expect("infallible")
}

/// Total variation bound under `Ψ ≤ σκ Σ_{j ≤ k} (|W - μ|/σ)^j + T`.
pub fn tv_bound_cor(c: &BoundComponents) -> Result<BoundValue> {
    evaluate(c, tv_cor_terms)
}

/// Local bound under `Ψ ≤ σκ Σ_{j ≤ k} (|W - μ|/σ)^j + T`.
pub fn loc_bound_cor(c: &BoundComponents) -> Result<BoundValue> {
    evaluate(c, loc_cor_terms)
}

/// One instance size of a rate experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateRecord {
    pub n: u64,
    pub sigma: f64,
    pub d_tv: f64,
    pub d_tv_slack: f64,
    pub d_loc: f64,
    pub d_loc_slack: f64,
    pub tv_bound: f64,
    pub loc_bound: f64,
    /// Monte Carlo standard error of the distance estimates, if any.
    pub mc_se: Option<f64>,
    /// Additional diagnostics (JSON only).
    #[serde(default)]
    pub extras: BTreeMap<String, f64>,
}

/// Least-squares slope of `ln y` on `ln x` with a residual-bootstrap interval.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SlopeFit {
    pub slope: f64,
    pub intercept: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub r_squared: f64,
    pub points: usize,
}

/// Abscissa of a log-log fit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Abscissa {
    Sigma,
    N,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct RateSeries {
    pub label: String,
    pub records: Vec<RateRecord>,
    /// Slopes against `ln σ`.
    pub tv_slope: Option<SlopeFit>,
    pub loc_slope: Option<SlopeFit>,
    /// Slopes against `ln n`.
    pub tv_slope_n: Option<SlopeFit>,
    pub loc_slope_n: Option<SlopeFit>,
    /// Fits of extra columns against `ln n`, keyed by column name.
    #[serde(default)]
    pub extra_fits: BTreeMap<String, SlopeFit>,
}

/// Number of bootstrap resamples behind every slope interval.
pub const BOOTSTRAP_RESAMPLES: usize = 1000;
const FIT_SEED: u64 = 0x00f1_7500;

fn ols(x: &[f64], y: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx) * (a - mx)).sum();
    let slope = sxy / sxx;
    (slope, my - slope * mx)
}

/// Log-log least-squares fit with a seeded residual bootstrap.
///
/// Needs three usable points; [`rate_fit`] additionally requires four records
/// spanning a factor of 8 in `n`.
pub fn fit_power_law(x: &[f64], y: &[f64]) -> Result<SlopeFit> {
    if x.len() != y.len() {
        return Err(Error::FitRefused("mismatched lengths".into()));
    }
    let pts: Vec<(f64, f64)> = x
        .iter()
        .zip(y)
        .filter(|(a, b)| **a > 0.0 && **b > 0.0 && a.is_finite() && b.is_finite())
        .map(|(a, b)| (a.ln(), b.ln()))
        .collect();
    if pts.len() < 3 {
        return Err(Error::FitRefused(format!(
            "{} usable points, at least 3 required",
            pts.len()
        )));
    }
    let lx: Vec<f64> = pts.iter().map(|p| p.0).collect();
    let ly: Vec<f64> = pts.iter().map(|p| p.1).collect();
    let spread =
        lx.iter().cloned().fold(f64::MIN, f64::max) - lx.iter().cloned().fold(f64::MAX, f64::min);
    if !(spread > 1e-9) {
        return Err(Error::FitRefused("degenerate abscissa spread".into()));
    }
    let (slope, intercept) = ols(&lx, &ly);
    let fitted: Vec<f64> = lx.iter().map(|a| intercept + slope * a).collect();
    let resid: Vec<f64> = ly.iter().zip(&fitted).map(|(a, b)| a - b).collect();
    let my = ly.iter().sum::<f64>() / ly.len() as f64;
    let ss_tot: f64 = ly.iter().map(|a| (a - my) * (a - my)).sum();
    let ss_res: f64 = resid.iter().map(|r| r * r).sum();
    let r_squared = if ss_tot > 0.0 {
        1.0 - ss_res / ss_tot
    } else {
        1.0
    };
    let mut rng = ChaCha8Rng::seed_from_u64(FIT_SEED);
    let mut slopes = Vec::with_capacity(BOOTSTRAP_RESAMPLES);
    let mut yb = vec![0.0; ly.len()];
    for _ in 0..BOOTSTRAP_RESAMPLES {
        for (i, v) in yb.iter_mut().enumerate() {
            *v = fitted[i] + resid[rng.gen_range(0..resid.len())];
        }
        slopes.push(ols(&lx, &yb).0);
    }
    slopes.sort_by(f64::total_cmp);
    let q =
        |p: f64| slopes[((p * (slopes.len() - 1) as f64).round() as usize).min(slopes.len() - 1)];
    Ok(SlopeFit {
        slope,
        intercept,
        ci_low: q(0.025).min(slope),
        ci_high: q(0.975).max(slope),
        r_squared,
        points: pts.len(),
    })
}

fn check_series(series: &RateSeries) -> Result<()> {
    if series.records.len() < 4 {
        return Err(Error::FitRefused(format!(
            "{} records, at least 4 required",
            series.records.len()
        )));
    }
    let lo = series.records.iter().map(|r| r.n).min().unwrap_or(0);
    let hi = series.records.iter().map(|r| r.n).max().unwrap_or(0);
    if lo == 0 || hi < 8 * lo {
        return Err(Error::FitRefused(format!(
            "sizes {lo}..{hi} span less than a factor of 8"
        )));
    }
    Ok(())
}

/// Fits one column against `ln σ` or `ln n`.
pub fn fit_column(
    series: &RateSeries,
    against: Abscissa,
    column: impl Fn(&RateRecord) -> Option<f64>,
) -> Result<SlopeFit> {
    check_series(series)?;
    let mut x = Vec::new();
    let mut y = Vec::new();
    for r in &series.records {
        if let Some(v) = column(r) {
            x.push(match against {
                Abscissa::Sigma => r.sigma,
                Abscissa::N => r.n as f64,
            });
            y.push(v);
        }
    }
    fit_power_law(&x, &y)
}

/// Sorts records by `n` and fits distance slopes against `ln σ` and `ln n`.
pub fn rate_fit(mut series: RateSeries) -> Result<RateSeries> {
    series.records.sort_by_key(|r| r.n);
    series.tv_slope = Some(fit_column(&series, Abscissa::Sigma, |r| Some(r.d_tv))?);
    series.loc_slope = Some(fit_column(&series, Abscissa::Sigma, |r| Some(r.d_loc))?);
    series.tv_slope_n = Some(fit_column(&series, Abscissa::N, |r| Some(r.d_tv))?);
    series.loc_slope_n = Some(fit_column(&series, Abscissa::N, |r| Some(r.d_loc))?);
    Ok(series)
}

/// Like [`rate_fit`] without the grid-size precondition: every slope is
/// fitted from whatever records are usable (at least three).
pub fn rate_fit_points(mut series: RateSeries) -> Result<RateSeries> {
    series.records.sort_by_key(|r| r.n);
    let fit = |against: Abscissa, col: fn(&RateRecord) -> f64| {
        let x: Vec<f64> = series
            .records
            .iter()
            .map(|r| match against {
                Abscissa::Sigma => r.sigma,
                Abscissa::N => r.n as f64,
            })
            .collect();
        let y: Vec<f64> = series.records.iter().map(col).collect();
        fit_power_law(&x, &y)
    };
    series.tv_slope = Some(fit(Abscissa::Sigma, |r| r.d_tv)?);
    series.loc_slope = Some(fit(Abscissa::Sigma, |r| r.d_loc)?);
    series.tv_slope_n = Some(fit(Abscissa::N, |r| r.d_tv)?);
    series.loc_slope_n = Some(fit(Abscissa::N, |r| r.d_loc)?);
    Ok(series)
}

/// Adds a fit of the extra column `key` against `ln n`.
pub fn fit_extra(series: &mut RateSeries, key: &str) -> Result<()> {
    let fit = fit_column(series, Abscissa::N, |r| r.extras.get(key).copied())?;
    series.extra_fits.insert(key.to_string(), fit);
    Ok(())
}

/// Per-record outcome of [`domination_report`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DominationEntry {
    pub n: u64,
    pub tv_margin: f64,
    pub loc_margin: f64,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DominationReport {
    pub entries: Vec<DominationEntry>,
    pub passed: bool,
    pub warnings: Vec<String>,
}

impl DominationReport {
    pub fn failures(&self) -> Vec<u64> {
        self.entries
            .iter()
            .filter(|e| !e.passed)
            .map(|e| e.n)
            .collect()
    }
}

/// Checks `bound + slack >= distance - 4 SE` for every record.
pub fn domination_report(series: &RateSeries) -> DominationReport {
    let mut warnings = Vec::new();
    if series.records.is_empty() {
        warnings.push("empty series: domination holds vacuously".to_string());
    }
    let entries: Vec<DominationEntry> = series
        .records
        .iter()
        .map(|r| {
            let allowance = 4.0 * r.mc_se.unwrap_or(0.0);
            let tv_margin = r.tv_bound + r.d_tv_slack - (r.d_tv - allowance);
            let loc_margin = r.loc_bound + r.d_loc_slack - (r.d_loc - allowance);
            DominationEntry {
                n: r.n,
                tv_margin,
                loc_margin,
                passed: tv_margin >= 0.0 && loc_margin >= 0.0,
            }
        })
        .collect();
    DominationReport {
        passed: entries.iter().all(|e| e.passed),
        entries,
        warnings,
    }
}

/// Reproducibility metadata written ahead of every output.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunHeader {
    pub seed: u64,
    pub workers: usize,
    pub config_hash: String,
    pub version: String,
}

impl RunHeader {
    /// Header for `config`, hashed as SHA-256 of its JSON form.
    pub fn new(seed: u64, workers: usize, config: &impl Serialize) -> Result<Self> {
        use sha2::{Digest, Sha256};
        let json = serde_json::to_vec(config).map_err(|e| Error::Parse(e.to_string()))?;
        let digest = Sha256::digest(&json);
        Ok(Self {
            seed,
            workers,
            config_hash: digest.iter().map(|b| format!("{b:02x}")).collect(),
            version: env!("CARGO_PKG_VERSION").to_string(),
        })
    }
}

/// Column order of the CSV form of a [`RateSeries`].
pub const CSV_COLUMNS: [&str; 9] = [
    "n",
    "sigma",
    "d_tv",
    "d_tv_slack",
    "d_loc",
    "d_loc_slack",
    "tv_bound",
    "loc_bound",
    "mc_se",
];

/// Round-trip exact, compact float formatting.
pub fn fmt_f64(x: f64) -> String {
    let a = x.abs();
    if x == 0.0 || (1e-4..1e15).contains(&a) {
        format!("{x}")
    } else {
        format!("{x:e}")
    }
}

/// CSV text: `#`-prefixed header lines, a column row, one row per record.
pub fn series_to_csv(series: &RateSeries, header: &RunHeader) -> Result<String> {
    let mut out = String::new();
    out.push_str(&format!("# label={}\n", series.label));
    out.push_str(&format!("# seed={}\n", header.seed));
    out.push_str(&format!("# workers={}\n", header.workers));
    out.push_str(&format!("# config_hash={}\n", header.config_hash));
    out.push_str(&format!("# version={}\n", header.version));
    let mut w = csv::Writer::from_writer(Vec::new());
    let csv_err = |e: csv::Error| Error::Parse(e.to_string());
    w.write_record(CSV_COLUMNS).map_err(csv_err)?;
    for r in &series.records {
        let row = [
            r.n.to_string(),
            fmt_f64(r.sigma),
            fmt_f64(r.d_tv),
            fmt_f64(r.d_tv_slack),
            fmt_f64(r.d_loc),
            fmt_f64(r.d_loc_slack),
            fmt_f64(r.tv_bound),
            fmt_f64(r.loc_bound),
            r.mc_se.map(fmt_f64).unwrap_or_default(),
        ];
        w.write_record(&row).map_err(csv_err)?;
    }
    let body = w.into_inner().map_err(|e| Error::Parse(e.to_string()))?;
    out.push_str(&String::from_utf8(body).map_err(|e| Error::Parse(e.to_string()))?);
    Ok(out)
}

/// Parses the CSV form written by [`series_to_csv`].
pub fn series_from_csv(text: &str) -> Result<RateSeries> {
    let label = text
        .lines()
        .find_map(|l| l.strip_prefix("# label="))
        .unwrap_or("")
        .to_string();
    let mut rdr = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .from_reader(text.as_bytes());
    let headers = rdr
        .headers()
        .map_err(|e| Error::Parse(e.to_string()))?
        .clone();
    let col = |name: &str| -> Result<usize> {
        headers
            .iter()
            .position(|h| h.trim() == name)
            .ok_or_else(|| Error::Parse(format!("missing column {name}")))
    };
    let idx: Vec<usize> = CSV_COLUMNS.iter().map(|c| col(c)).collect::<Result<_>>()?;
    let mut records = Vec::new();
    for row in rdr.records() {
        let row = row.map_err(|e| Error::Parse(e.to_string()))?;
        let get = |i: usize| row.get(idx[i]).unwrap_or("").trim().to_string();
        let num = |i: usize| -> Result<f64> {
            get(i)
                .parse::<f64>()
                .map_err(|e| Error::Parse(format!("column {}: {e}", CSV_COLUMNS[i])))
        };
        let mc = get(8);
        records.push(RateRecord {
            n: get(0)
                .parse()
                .map_err(|e| Error::Parse(format!("column n: {e}")))?,
            sigma: num(1)?,
            d_tv: num(2)?,
            d_tv_slack: num(3)?,
            d_loc: num(4)?,
            d_loc_slack: num(5)?,
            tv_bound: num(6)?,
            loc_bound: num(7)?,
            mc_se: if mc.is_empty() { None } else { Some(num(8)?) },
            extras: BTreeMap::new(),
        });
    }
    Ok(RateSeries {
        label,
        records,
        ..Default::default()
    })
}
