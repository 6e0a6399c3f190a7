use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use stein_llt::bounds::{
    domination_report, fmt_f64, rate_fit, rate_fit_points, series_from_csv, series_to_csv,
    RateSeries, RunHeader,
};
use stein_llt::coupling::EstimationConfig;
use stein_llt::dist::{validate, LatticePmf, TpParams};
use stein_llt::metrics::{d_loc, d_tv, Measured};
use stein_llt::stein::{nonuniform_delta_bound, residual_check, PoissonKernel, Target};
use stein_llt::Error;
use stein_llt_apps::curie_weiss::{cw_rate_experiment, cw_record, exact_components, CwInstance};
use stein_llt_apps::erdos_renyi::{
    default_bits, degree_count_tail_check, er_rate_experiment, exact_isolated_pmf, ErInstance,
};
use stein_llt_apps::hoeffding::{
    brute_force_pmf, build_instance, check_assumptions, hoeffding_rate_experiment, t_tail_profiles,
    tail_decay, HoeffdingRateConfig, MatrixFamily,
};

#[derive(Parser)]
#[command(
    name = "stein-llt",
    version,
    about = "Translated Poisson approximation experiments"
)]
struct Cli {
    /// Master seed of every random stream.
    #[arg(long, global = true, default_value_t = 1)]
    seed: u64,
    /// Worker threads; results do not depend on it.
    #[arg(long, global = true, env = "STEIN_LLT_WORKERS", value_parser = clap::value_parser!(u64).range(1..))]
    workers: Option<u64>,
    #[arg(long, global = true, value_enum, default_value_t = Format::Csv)]
    format: Format,
    /// Write to this file instead of standard output.
    #[arg(long, short, global = true)]
    output: Option<PathBuf>,
    /// JSON object of experiment parameters; flags take precedence.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Csv,
    Json,
}

#[derive(Subcommand)]
enum Command {
    /// Translated Poisson pmf values or moments.
    Tp {
        #[arg(long, allow_hyphen_values = true)]
        mu: f64,
        #[arg(long, allow_hyphen_values = true)]
        sigma2: f64,
        /// Single point.
        #[arg(long, allow_hyphen_values = true, conflicts_with = "range")]
        n: Option<i64>,
        /// Inclusive range `lo:hi`.
        #[arg(long, allow_hyphen_values = true)]
        range: Option<String>,
    },
    /// Distance between two pmf files.
    Distance {
        #[arg(long)]
        a: PathBuf,
        #[arg(long)]
        b: PathBuf,
        #[arg(long, value_enum, default_value_t = Metric::Tv)]
        metric: Metric,
    },
    /// Poisson Stein solutions.
    #[command(subcommand)]
    Stein(SteinCmd),
    /// Curie-Weiss magnetization.
    #[command(subcommand)]
    Cw(CwCmd),
    /// Isolated vertices of Erdos-Renyi graphs.
    #[command(subcommand)]
    Er(ErCmd),
    /// Hoeffding permutation statistics.
    #[command(subcommand)]
    Hoeffding(HoeffdingCmd),
    /// Slopes of a rate-series CSV.
    RateFit {
        #[arg(long)]
        input: PathBuf,
    },
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Metric {
    Tv,
    Loc,
    S1,
    S2,
}

#[derive(Subcommand)]
enum SteinCmd {
    /// Maximum residual of the Stein equation over `0..=k-max`.
    Check {
        #[arg(long)]
        lambda: f64,
        #[command(flatten)]
        target: TargetArgs,
        #[arg(long)]
        k_max: u64,
    },
    /// Values of `g` and `Δg` over a range, with the non-uniform bounds for point targets.
    Eval {
        #[arg(long)]
        lambda: f64,
        #[command(flatten)]
        target: TargetArgs,
        /// Inclusive range `lo:hi`.
        #[arg(long)]
        k_range: String,
    },
}

#[derive(Args)]
struct TargetArgs {
    /// Point target.
    #[arg(long, conflicts_with = "set")]
    a: Option<u64>,
    /// Comma-separated points, or an interval `lo:hi` / `lo:`.
    #[arg(long)]
    set: Option<String>,
}

#[derive(Subcommand)]
enum CwCmd {
    /// Exact law, bound components and distances at one `n`.
    Exact {
        #[arg(long)]
        n: u64,
        #[arg(long)]
        beta: f64,
        #[arg(long, allow_hyphen_values = true)]
        h: f64,
    },
    /// Exact rate experiment over a grid of `n`.
    Rate {
        #[command(flatten)]
        p: CwRateArgs,
    },
}

#[derive(Args, Default, Serialize, Deserialize)]
#[serde(default)]
struct CwRateArgs {
    #[arg(long)]
    beta: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    h: Option<f64>,
    #[arg(long, value_delimiter = ',')]
    grid: Option<Vec<u64>>,
}

#[derive(Subcommand)]
enum ErCmd {
    /// Exact law of the isolated-vertex count with certified errors.
    Exact {
        #[arg(long)]
        n: u64,
        #[arg(long)]
        lambda: f64,
        #[arg(long)]
        bits: Option<u32>,
    },
    /// Rate experiment with exact distances and Monte Carlo bounds.
    Rate {
        #[command(flatten)]
        p: ErRateArgs,
    },
    /// Degree-count concentration check.
    Tail {
        #[arg(long)]
        n: u64,
        #[arg(long)]
        lambda: f64,
        #[arg(long, default_value_t = 0)]
        d: u32,
        /// Deviation thresholds.
        #[arg(long, value_delimiter = ',')]
        t: Vec<f64>,
        #[arg(long, default_value_t = 100_000)]
        samples: usize,
    },
}

#[derive(Args, Default, Serialize, Deserialize)]
#[serde(default)]
struct ErRateArgs {
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long, value_delimiter = ',')]
    grid: Option<Vec<u64>>,
    #[command(flatten)]
    #[serde(flatten)]
    mc: McArgs,
}

#[derive(Args, Default, Clone, Copy, Serialize, Deserialize)]
#[serde(default)]
struct McArgs {
    /// Outer Monte Carlo draws for the Ψ and T terms.
    #[arg(long)]
    n_outer: Option<usize>,
    /// Inner draws per conditional smoothness estimate.
    #[arg(long)]
    n_inner: Option<usize>,
    /// Outer draws of the nested smoothness estimator.
    #[arg(long)]
    upsilon_outer: Option<usize>,
}

impl McArgs {
    fn or(self, o: McArgs) -> McArgs {
        McArgs {
            n_outer: self.n_outer.or(o.n_outer),
            n_inner: self.n_inner.or(o.n_inner),
            upsilon_outer: self.upsilon_outer.or(o.upsilon_outer),
        }
    }

    fn apply(self, mut cfg: EstimationConfig) -> EstimationConfig {
        cfg.n_outer = self.n_outer.unwrap_or(cfg.n_outer);
        cfg.n_inner = self.n_inner.unwrap_or(cfg.n_inner);
        cfg.upsilon_outer = self.upsilon_outer.unwrap_or(cfg.upsilon_outer);
        cfg
    }
}

#[derive(Subcommand)]
enum HoeffdingCmd {
    /// Exact law by enumeration (`n <= 9`).
    Exact {
        #[command(flatten)]
        m: MatrixArgs,
    },
    /// Monte Carlo rate experiment over a grid of `n`.
    Rate {
        #[command(flatten)]
        p: HoeffdingRateArgs,
    },
    /// Tail profiles of the remainder terms.
    Tail {
        #[command(flatten)]
        m: MatrixArgs,
        #[arg(long, default_value_t = 50_000)]
        samples: usize,
        #[arg(
            long,
            value_delimiter = ',',
            default_value = "0,0.25,0.5,0.75,1,1.25,1.5,1.75,2"
        )]
        t: Vec<f64>,
    },
}

#[derive(Args)]
struct MatrixArgs {
    /// CSV file of integers, one matrix row per line.
    #[arg(long, conflicts_with_all = ["family", "n"])]
    matrix: Option<PathBuf>,
    #[arg(long)]
    family: Option<String>,
    #[arg(long, requires = "family")]
    n: Option<usize>,
    /// Seed of the matrix generator.
    #[arg(long, default_value_t = 7)]
    matrix_seed: u64,
}

#[derive(Args, Default, Serialize, Deserialize)]
#[serde(default)]
struct HoeffdingRateArgs {
    #[arg(long)]
    family: Option<String>,
    #[arg(long, value_delimiter = ',')]
    grid: Option<Vec<usize>>,
    /// Draws of `W` per grid point; defaults to `100 σ³`.
    #[arg(long)]
    samples: Option<usize>,
    #[arg(long)]
    matrix_seed: Option<u64>,
    #[command(flatten)]
    #[serde(flatten)]
    mc: McArgs,
}

/// Failure of a command: a domain error or a violated claim.
enum Failure {
    Domain(Error),
    Claim(Value),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Domain(e)
    }
}

fn kind(e: &Error) -> &'static str {
    match e {
        Error::Domain(_) => "domain",
        Error::UnsupportedOrder { .. } => "unsupported_order",
        Error::UnsupportedEstimation { .. } => "unsupported_estimation",
        Error::IncompleteComponents(_) => "incomplete_components",
        Error::FitRefused(_) => "fit_refused",
        Error::PrecisionInsufficient { .. } => "precision_insufficient",
        Error::Regime(_) => "regime",
        Error::Size(_) => "size",
        Error::Io(_) => "io",
        Error::Parse(_) => "parse",
    }
}

type Outcome = Result<(), Failure>;

struct Ctx {
    seed: u64,
    workers: usize,
    format: Format,
    output: Option<PathBuf>,
    config: Option<PathBuf>,
}

impl Ctx {
    fn emit(&self, text: &str) -> Result<(), Error> {
        match &self.output {
            Some(p) => std::fs::write(p, text)?,
            None => std::io::stdout().write_all(text.as_bytes())?,
        }
        Ok(())
    }

    fn emit_json(&self, v: &Value) -> Result<(), Error> {
        let mut s = serde_json::to_string_pretty(v).map_err(|e| Error::Parse(e.to_string()))?;
        s.push('\n');
        self.emit(&s)
    }

    fn header(&self, command: &str, params: &impl Serialize) -> Result<RunHeader, Error> {
        RunHeader::new(self.seed, self.workers, &(command, params))
    }

    fn load_config<T: for<'de> Deserialize<'de> + Serialize + Default>(&self) -> Result<T, Error> {
        let Some(p) = &self.config else {
            return Ok(T::default());
        };
        let bad = |e: String| Error::Parse(format!("{}: {e}", p.display()));
        let v: Value =
            serde_json::from_str(&std::fs::read_to_string(p)?).map_err(|e| bad(e.to_string()))?;
        let known = serde_json::to_value(T::default()).map_err(|e| bad(e.to_string()))?;
        let (Some(obj), Some(known)) = (v.as_object(), known.as_object()) else {
            return Err(bad("expected a JSON object".into()));
        };
        if let Some(k) = obj.keys().find(|k| !known.contains_key(*k)) {
            let keys: Vec<&String> = known.keys().collect();
            return Err(bad(format!("unknown key {k:?}, expected one of {keys:?}")));
        }
        serde_json::from_value(v).map_err(|e| bad(e.to_string()))
    }

    fn emit_series(&self, series: &RateSeries, header: &RunHeader) -> Outcome {
        match self.format {
            Format::Csv => self.emit(&series_to_csv(series, header)?)?,
            Format::Json => self.emit_json(&json!({ "header": header, "series": series }))?,
        }
        let dom = domination_report(series);
        if dom.passed {
            Ok(())
        } else {
            Err(Failure::Claim(
                json!({ "claim": "bound domination", "failures": dom.failures() }),
            ))
        }
    }
}

fn required<T>(v: Option<T>, name: &str) -> Result<T, Error> {
    v.ok_or_else(|| Error::Domain(format!("missing parameter `{name}` (flag or config)")))
}

fn parse_range(s: &str) -> Result<(i64, i64), Error> {
    let bad = || Error::Parse(format!("expected `lo:hi`, got {s:?}"));
    let (lo, hi) = s.split_once(':').ok_or_else(bad)?;
    let lo: i64 = lo.trim().parse().map_err(|_| bad())?;
    let hi: i64 = hi.trim().parse().map_err(|_| bad())?;
    if hi < lo {
        return Err(Error::Domain(format!("empty range {s:?}")));
    }
    Ok((lo, hi))
}

fn parse_target(t: &TargetArgs) -> Result<Target, Error> {
    match (&t.a, &t.set) {
        (Some(a), None) => Ok(Target::Point(*a)),
        (None, Some(s)) => {
            if let Some((lo, hi)) = s.split_once(':') {
                let num = |x: &str| {
                    x.trim()
                        .parse::<u64>()
                        .map_err(|_| Error::Parse(format!("bad interval {s:?}")))
                };
                let hi = if hi.trim().is_empty() {
                    None
                } else {
                    Some(num(hi)?)
                };
                Ok(Target::Interval { lo: num(lo)?, hi })
            } else {
                let pts: Result<Vec<u64>, _> =
                    s.split(',').map(|x| x.trim().parse::<u64>()).collect();
                let mut pts = pts.map_err(|_| Error::Parse(format!("bad point list {s:?}")))?;
                pts.sort_unstable();
                pts.dedup();
                Ok(Target::Points(pts))
            }
        }
        _ => Err(Error::Domain("give exactly one of --a and --set".into())),
    }
}

fn read_pmf(p: &Path) -> Result<LatticePmf, Error> {
    let pmf: LatticePmf = serde_json::from_str(&std::fs::read_to_string(p)?)
        .map_err(|e| Error::Parse(format!("{}: {e}", p.display())))?;
    validate(&pmf)?;
    Ok(pmf)
}

fn read_matrix(p: &Path) -> Result<Vec<Vec<i64>>, Error> {
    std::fs::read_to_string(p)?
        .lines()
        .filter(|l| !l.trim().is_empty() && !l.starts_with('#'))
        .map(|l| {
            l.split(',')
                .map(|x| {
                    x.trim()
                        .parse::<i64>()
                        .map_err(|_| Error::Parse(format!("bad matrix entry {x:?}")))
                })
                .collect()
        })
        .collect()
}

fn matrix_rows(m: &MatrixArgs) -> Result<Vec<Vec<i64>>, Error> {
    match (&m.matrix, &m.family) {
        (Some(p), _) => read_matrix(p),
        (None, Some(f)) => Ok(f
            .parse::<MatrixFamily>()?
            .generate(required(m.n, "n")?, m.matrix_seed)),
        (None, None) => Err(Error::Domain("give --matrix or --family with --n".into())),
    }
}

/// `‖Δ^l (p - q)‖₁` on a common span-1 support.
fn smoothness_distance(p: &LatticePmf, q: &LatticePmf, l: u32) -> Result<Measured, Error> {
    if p.step != 1 || q.step != 1 {
        return Err(Error::Domain(
            "smoothness distances require span-1 lattices".into(),
        ));
    }
    let lo = p.offset.min(q.offset);
    let hi = p.max_value().max(q.max_value());
    let mut v: Vec<f64> = (lo..=hi).map(|x| p.prob_at(x) - q.prob_at(x)).collect();
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
    Ok(Measured {
        value: v.iter().map(|x| x.abs()).sum(),
        slack: (1u64 << l) as f64 * (p.tail_tol + q.tail_tol),
    })
}

fn cmd_tp(ctx: &Ctx, mu: f64, sigma2: f64, n: Option<i64>, range: Option<String>) -> Outcome {
    let tp = TpParams::new(mu, sigma2)?;
    let points: Vec<i64> = match (n, range) {
        (Some(n), _) => vec![n],
        (None, Some(r)) => {
            let (lo, hi) = parse_range(&r)?;
            if hi - lo > 10_000_000 {
                return Err(Error::Size("at most 10^7 points per range".into()).into());
            }
            (lo..=hi).collect()
        }
        (None, None) => Vec::new(),
    };
    let moments = json!({
        "mu": mu, "sigma2": sigma2, "s": tp.s, "gamma": tp.gamma, "lambda": tp.lambda,
        "mean": mu, "variance": tp.variance(),
    });
    match ctx.format {
        Format::Json => {
            let pts: Vec<Value> = points
                .iter()
                .map(|&k| json!({ "n": k, "pmf": tp.pmf(k) }))
                .collect();
            ctx.emit_json(&json!({ "params": moments, "points": pts }))?;
        }
        Format::Csv if points.is_empty() => {
            let mut s = String::from("mu,sigma2,s,gamma,lambda,variance\n");
            s.push_str(&format!(
                "{},{},{},{},{},{}\n",
                fmt_f64(mu),
                fmt_f64(sigma2),
                tp.s,
                fmt_f64(tp.gamma),
                fmt_f64(tp.lambda),
                fmt_f64(tp.variance())
            ));
            ctx.emit(&s)?;
        }
        Format::Csv => {
            let mut s = String::from("n,pmf\n");
            for k in points {
                s.push_str(&format!("{k},{}\n", fmt_f64(tp.pmf(k))));
            }
            ctx.emit(&s)?;
        }
    }
    Ok(())
}

fn cmd_distance(ctx: &Ctx, a: &Path, b: &Path, metric: Metric) -> Outcome {
    let (p, q) = (read_pmf(a)?, read_pmf(b)?);
    let (name, m) = match metric {
        Metric::Tv => ("tv", d_tv(&p, &q)?),
        Metric::Loc => ("loc", d_loc(&p, &q)?),
        Metric::S1 => ("s1", smoothness_distance(&p, &q, 1)?),
        Metric::S2 => ("s2", smoothness_distance(&p, &q, 2)?),
    };
    match ctx.format {
        Format::Json => {
            ctx.emit_json(&json!({ "metric": name, "value": m.value, "slack": m.slack }))?
        }
        Format::Csv => ctx.emit(&format!(
            "metric,value,slack\n{name},{},{}\n",
            fmt_f64(m.value),
            fmt_f64(m.slack)
        ))?,
    }
    Ok(())
}

const RESIDUAL_TOL: f64 = 1e-10;

fn cmd_stein(ctx: &Ctx, c: SteinCmd) -> Outcome {
    match c {
        SteinCmd::Check {
            lambda,
            target,
            k_max,
        } => {
            let t = parse_target(&target)?;
            let r = residual_check(lambda, &t, k_max)?;
            let passed = r <= RESIDUAL_TOL;
            match ctx.format {
                Format::Json => ctx.emit_json(&json!({ "lambda": lambda, "k_max": k_max, "max_residual": r, "tolerance": RESIDUAL_TOL, "passed": passed }))?,
                Format::Csv => ctx.emit(&format!("lambda,k_max,max_residual,passed\n{},{k_max},{},{passed}\n", fmt_f64(lambda), fmt_f64(r)))?,
            }
            if passed {
                Ok(())
            } else {
                Err(Failure::Claim(
                    json!({ "claim": "stein residual", "max_residual": r }),
                ))
            }
        }
        SteinCmd::Eval {
            lambda,
            target,
            k_range,
        } => {
            let t = parse_target(&target)?;
            let (lo, hi) = parse_range(&k_range)?;
            let top = hi.max(0) as u64 + 2;
            let ker = PoissonKernel::new(lambda, top)?;
            let mut rows = Vec::new();
            let mut violations = Vec::new();
            for k in lo..=hi {
                let g = ker.g(&t, k)?;
                let dg = ker.delta_g(&t, k)?;
                let mut row = json!({ "k": k, "g": g, "delta_g": dg });
                if let (Target::Point(a), true) = (&t, k >= 0) {
                    let b = nonuniform_delta_bound(lambda, *a, k as u64)?;
                    let err = ker.delta_g_point_error(*a, k)?;
                    let ok = b.case_split.min(b.simplified) >= dg.abs() - err;
                    if !ok {
                        violations.push(k);
                    }
                    row["bound_case_split"] = json!(b.case_split);
                    row["bound_simplified"] = json!(b.simplified);
                    row["dominated"] = json!(ok);
                }
                rows.push(row);
            }
            match ctx.format {
                Format::Json => {
                    ctx.emit_json(&json!({ "lambda": lambda, "target": t, "rows": rows }))?
                }
                Format::Csv => {
                    let point = matches!(t, Target::Point(_));
                    let mut s = String::from(if point {
                        "k,g,delta_g,bound_case_split,bound_simplified,dominated\n"
                    } else {
                        "k,g,delta_g\n"
                    });
                    for r in &rows {
                        let f = |k: &str| {
                            r.get(k)
                                .and_then(Value::as_f64)
                                .map(fmt_f64)
                                .unwrap_or_default()
                        };
                        s.push_str(&format!("{},{},{}", r["k"], f("g"), f("delta_g")));
                        if point {
                            let dom = r
                                .get("dominated")
                                .map(|d| d.to_string())
                                .unwrap_or_default();
                            s.push_str(&format!(
                                ",{},{},{dom}",
                                f("bound_case_split"),
                                f("bound_simplified")
                            ));
                        }
                        s.push('\n');
                    }
                    ctx.emit(&s)?;
                }
            }
            if violations.is_empty() {
                Ok(())
            } else {
                Err(Failure::Claim(
                    json!({ "claim": "non-uniform increment bound", "k": violations }),
                ))
            }
        }
    }
}

fn cmd_cw(ctx: &Ctx, c: CwCmd) -> Outcome {
    match c {
        CwCmd::Exact { n, beta, h } => {
            let inst = CwInstance::new(n, beta, h)?;
            let comps = exact_components(&inst)?;
            let rec = cw_record(n, beta, h)?;
            let header = ctx.header("cw exact", &(n, beta, h))?;
            ctx.emit_json(&json!({
                "header": header,
                "instance": { "n": n, "beta": beta, "h": h, "m_h": inst.m_h, "mu_n": inst.mu_n, "sigma_n2": inst.sigma_n2 },
                "tilde_pmf": inst.tilde_pmf(),
                "components": comps,
                "record": rec,
            }))?;
            if rec.tv_bound + rec.d_tv_slack >= rec.d_tv
                && rec.loc_bound + rec.d_loc_slack >= rec.d_loc
            {
                Ok(())
            } else {
                Err(Failure::Claim(
                    json!({ "claim": "bound domination", "n": n }),
                ))
            }
        }
        CwCmd::Rate { p } => {
            let cfg: CwRateArgs = ctx.load_config()?;
            let beta = required(p.beta.or(cfg.beta), "beta")?;
            let h = required(p.h.or(cfg.h), "h")?;
            let grid = required(p.grid.or(cfg.grid), "grid")?;
            let resolved = CwRateArgs {
                beta: Some(beta),
                h: Some(h),
                grid: Some(grid.clone()),
            };
            let header = ctx.header("cw rate", &resolved)?;
            let series = cw_rate_experiment(beta, h, &grid, ctx.workers)?;
            ctx.emit_series(&series, &header)
        }
    }
}

fn cmd_er(ctx: &Ctx, c: ErCmd) -> Outcome {
    match c {
        ErCmd::Exact { n, lambda, bits } => {
            let inst = ErInstance::with_lambda(n, lambda)?;
            let bits = bits.unwrap_or_else(|| default_bits(n));
            let c = exact_isolated_pmf(n, inst.p, bits)?;
            match ctx.format {
                Format::Json => ctx.emit_json(&json!({
                    "n": n, "p": inst.p, "mu": inst.mu, "sigma2": inst.sigma2, "bits": c.bits,
                    "pmf": c.pmf, "entry_error": c.entry_error,
                }))?,
                Format::Csv => {
                    let mut s = String::from("k,pmf,certified_error\n");
                    for (k, (p, e)) in c.pmf.probs.iter().zip(&c.entry_error).enumerate() {
                        s.push_str(&format!("{k},{},{}\n", fmt_f64(*p), fmt_f64(*e)));
                    }
                    ctx.emit(&s)?;
                }
            }
            Ok(())
        }
        ErCmd::Rate { p } => {
            let cfg: ErRateArgs = ctx.load_config()?;
            let lambda = required(p.lambda.or(cfg.lambda), "lambda")?;
            let grid = required(p.grid.or(cfg.grid), "grid")?;
            let mc = p.mc.or(cfg.mc);
            let est = mc.apply(EstimationConfig {
                seed: ctx.seed,
                workers: ctx.workers,
                ..Default::default()
            });
            let resolved = json!({ "lambda": lambda, "grid": grid, "estimation": { "n_outer": est.n_outer, "n_inner": est.n_inner, "upsilon_outer": est.upsilon_outer, "max_moment": est.max_moment } });
            let header = ctx.header("er rate", &resolved)?;
            let series = er_rate_experiment(lambda, &grid, &est)?;
            ctx.emit_series(&series, &header)
        }
        ErCmd::Tail {
            n,
            lambda,
            d,
            t,
            samples,
        } => {
            let inst = ErInstance::with_lambda(n, lambda)?;
            let rep = degree_count_tail_check(n, inst.p, d, &t, samples, ctx.seed, ctx.workers)?;
            let header = ctx.header("er tail", &(n, lambda, d, &t, samples))?;
            ctx.emit_json(&json!({ "header": header, "report": rep }))?;
            if rep.passed {
                Ok(())
            } else {
                Err(Failure::Claim(
                    json!({ "claim": "degree-count tail bound", "d": d }),
                ))
            }
        }
    }
}

fn cmd_hoeffding(ctx: &Ctx, c: HoeffdingCmd) -> Outcome {
    match c {
        HoeffdingCmd::Exact { m } => {
            let inst = build_instance(&matrix_rows(&m)?)?;
            let pmf = brute_force_pmf(&inst)?;
            ctx.emit_json(
                &json!({ "mu": inst.mu, "sigma2": inst.sigma2, "shift": inst.shift, "pmf": pmf }),
            )?;
            Ok(())
        }
        HoeffdingCmd::Rate { p } => {
            let cfg: HoeffdingRateArgs = ctx.load_config()?;
            let family: MatrixFamily = required(p.family.or(cfg.family), "family")?.parse()?;
            let grid = required(p.grid.or(cfg.grid), "grid")?;
            let mut rc = HoeffdingRateConfig {
                n_samples: p.samples.or(cfg.samples),
                ..Default::default()
            };
            rc.matrix_seed = p.matrix_seed.or(cfg.matrix_seed).unwrap_or(rc.matrix_seed);
            rc.estimation = p.mc.or(cfg.mc).apply(rc.estimation);
            rc.estimation.seed = ctx.seed;
            rc.estimation.workers = ctx.workers;
            let mut hashed = rc;
            hashed.estimation.workers = 0;
            let header = ctx.header("hoeffding rate", &(family, &grid, hashed))?;
            let series = hoeffding_rate_experiment(family, &grid, &rc)?;
            ctx.emit_series(&series, &header)
        }
        HoeffdingCmd::Tail { m, samples, t } => {
            let inst = build_instance(&matrix_rows(&m)?)?;
            let rep = check_assumptions(&inst, inst.n * inst.n / 20);
            let profiles = t_tail_profiles(&inst, samples, &t, ctx.seed, ctx.workers)?;
            let decays: Vec<_> = profiles.iter().map(tail_decay).collect();
            let ok = decays.iter().all(|d| d.exponential());
            ctx.emit_json(&json!({ "assumptions": rep, "profiles": profiles, "decay": decays }))?;
            if ok {
                Ok(())
            } else {
                Err(Failure::Claim(json!({ "claim": "exponential tail decay" })))
            }
        }
    }
}

fn cmd_rate_fit(ctx: &Ctx, input: &Path) -> Outcome {
    let series = series_from_csv(&std::fs::read_to_string(input).map_err(Error::from)?)?;
    let (fitted, full_grid) = match rate_fit(series.clone()) {
        Ok(s) => (s, true),
        Err(Error::FitRefused(_)) => (rate_fit_points(series)?, false),
        Err(e) => return Err(e.into()),
    };
    let dom = domination_report(&fitted);
    ctx.emit_json(&json!({
        "label": fitted.label,
        "records": fitted.records.len(),
        "grid_precondition_met": full_grid,
        "tv_slope": fitted.tv_slope,
        "loc_slope": fitted.loc_slope,
        "tv_slope_n": fitted.tv_slope_n,
        "loc_slope_n": fitted.loc_slope_n,
        "domination": dom,
    }))?;
    if dom.passed {
        Ok(())
    } else {
        Err(Failure::Claim(
            json!({ "claim": "bound domination", "failures": dom.failures() }),
        ))
    }
}

fn run(cli: Cli) -> Outcome {
    let workers = match cli.workers {
        Some(w) => w as usize,
        None => std::thread::available_parallelism().map_or(1, |n| n.get()),
    };
    let ctx = Ctx {
        seed: cli.seed,
        workers,
        format: cli.format,
        output: cli.output,
        config: cli.config,
    };
    match cli.command {
        Command::Tp {
            mu,
            sigma2,
            n,
            range,
        } => cmd_tp(&ctx, mu, sigma2, n, range),
        Command::Distance { a, b, metric } => cmd_distance(&ctx, &a, &b, metric),
        Command::Stein(c) => cmd_stein(&ctx, c),
        Command::Cw(c) => cmd_cw(&ctx, c),
        Command::Er(c) => cmd_er(&ctx, c),
        Command::Hoeffding(c) => cmd_hoeffding(&ctx, c),
        Command::RateFit { input } => cmd_rate_fit(&ctx, &input),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let msg = e.render().to_string();
            eprintln!("{}", json!({ "error": "usage", "message": msg.trim() }));
            return ExitCode::from(1);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Domain(e)) => {
            eprintln!("{}", json!({ "error": kind(&e), "message": e.to_string() }));
            ExitCode::from(1)
        }
        Err(Failure::Claim(v)) => {
            eprintln!("{}", json!({ "error": "claim_failed", "detail": v }));
            ExitCode::from(2)
        }
    }
}
