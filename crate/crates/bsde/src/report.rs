//! Convergence-study harness: runs the solver across a ladder of time-step
//! counts, tabulates errors against the closed-form solution when one is
//! known, and emits CSV or plain-text reports.

use std::io::Write;
use std::str::FromStr;

use crate::problems::ProblemSpec;
use crate::scheme::{solve_backward, SolverConfig};
use crate::{Error, Real, Result};

/// One experiment: a problem, a scheme order pair, and the N ladder.
#[derive(Debug, Clone)]
pub struct RunConfig<T> {
    pub problem: String,
    pub ky: usize,
    pub kz: usize,
    pub n_values: Vec<usize>,
    pub gh_points: usize,
    pub picard_max: usize,
    pub picard_tol: T,
    /// Worker threads; None lets the runtime pick.
    pub threads: Option<usize>,
    pub grid_intervals: Option<usize>,
    pub domain_override: Option<(T, T)>,
    pub smoothing: Option<bool>,
    /// Absolute mollifier half-width; None derives it from the grid.
    pub smoothing_width: Option<T>,
    /// Extra subdivision of the bootstrap fine step.
    pub bootstrap_refine: usize,
}

impl<T: Real> RunConfig<T> {
    pub fn new(problem: &str, ky: usize, kz: usize, n_values: Vec<usize>) -> Self {
        RunConfig {
            problem: problem.to_string(),
            ky,
            kz,
            n_values,
            gh_points: 32,
            picard_max: 30,
            picard_tol: T::from_f64(1e-14),
            threads: None,
            grid_intervals: None,
            domain_override: None,
            smoothing: None,
            smoothing_width: None,
            bootstrap_refine: 1,
        }
    }
}

/// One solver run. Errors are absolute against the closed form at the
/// evaluation point (the max over components), None when no closed form
/// is registered. A failed run keeps its message and NA data fields.
#[derive(Debug, Clone)]
pub struct ReportRow {
    pub k: usize,
    pub n: usize,
    pub m: usize,
    pub y_error: Option<f64>,
    pub z_error: Option<f64>,
    pub t_total_s: f64,
    pub t_interp_s: f64,
    pub t_expect_s: f64,
    pub t_update_s: f64,
    pub picard_avg: f64,
    pub failure: Option<String>,
}

/// Runs the full N ladder inside a dedicated thread pool. A solver failure
/// at one N becomes a marked row instead of aborting the ladder.
pub fn run_experiment<T: Real>(cfg: &RunConfig<T>) -> Result<Vec<ReportRow>> {
    if cfg.n_values.is_empty() {
        return Err(Error::Config("no time-step counts requested".into()));
    }
    let problem = ProblemSpec::<T>::by_name(&cfg.problem)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.threads.unwrap_or(0))
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    let k = cfg.ky.max(cfg.kz);
    let mut rows = Vec::with_capacity(cfg.n_values.len());
    for &n in &cfg.n_values {
        let mut sc = SolverConfig::new(cfg.ky, cfg.kz, n);
        sc.gh_points = cfg.gh_points;
        sc.picard_max = cfg.picard_max;
        sc.picard_tol = cfg.picard_tol;
        sc.grid_intervals = cfg.grid_intervals;
        sc.domain_override = cfg.domain_override;
        sc.smoothing = cfg.smoothing;
        sc.smoothing_width = cfg.smoothing_width;
        sc.bootstrap_refine = cfg.bootstrap_refine;
        match pool.install(|| solve_backward(&problem, &sc)) {
            Ok(res) => {
                let (y_error, z_error) = match &problem.analytic {
                    Some(analytic) => {
                        let (y_ref, z_ref) = analytic(T::zero(), &problem.eval_point);
                        let ye = res
                            .y0
                            .iter()
                            .zip(&y_ref)
                            .map(|(a, b)| (*a - *b).abs().to_f64_lossy())
                            .fold(0.0f64, f64::max);
                        let ze = res
                            .z0
                            .iter()
                            .zip(&z_ref)
                            .map(|(a, b)| (*a - *b).abs().to_f64_lossy())
                            .fold(0.0f64, f64::max);
                        (Some(ye), Some(ze))
                    }
                    None => (None, None),
                };
                rows.push(ReportRow {
                    k,
                    n,
                    m: res.n_intervals,
                    y_error,
                    z_error,
                    t_total_s: res.timings.total_s,
                    t_interp_s: res.timings.interp_s,
                    t_expect_s: res.timings.expect_s,
                    t_update_s: res.timings.update_s,
                    picard_avg: res.picard.average(),
                    failure: None,
                });
            }
            Err(e) => rows.push(ReportRow {
                k,
                n,
                m: 0,
                y_error: None,
                z_error: None,
                t_total_s: 0.0,
                t_interp_s: 0.0,
                t_expect_s: 0.0,
                t_update_s: 0.0,
                picard_avg: 0.0,
                failure: Some(e.to_string()),
            }),
        }
    }
    Ok(rows)
}

/// Least-squares convergence order from (N, error) pairs: the negated
/// slope of log error against log N. Needs at least two usable pairs
/// (finite, positive error).
pub fn estimate_order(points: &[(usize, f64)]) -> Result<f64> {
    let usable: Vec<(f64, f64)> = points
        .iter()
        .filter(|(_, e)| e.is_finite() && *e > 0.0)
        .map(|(n, e)| ((*n as f64).ln(), e.ln()))
        .collect();
    if usable.len() < 2 {
        return Err(Error::InsufficientData(format!(
            "order estimate needs at least 2 usable points, got {}",
            usable.len()
        )));
    }
    let n = usable.len() as f64;
    let sx: f64 = usable.iter().map(|(x, _)| x).sum();
    let sy: f64 = usable.iter().map(|(_, y)| y).sum();
    let sxx: f64 = usable.iter().map(|(x, _)| x * x).sum();
    let sxy: f64 = usable.iter().map(|(x, y)| x * y).sum();
    let denom = n * sxx - sx * sx;
    if denom == 0.0 {
        return Err(Error::InsufficientData(
            "order estimate needs distinct step counts".into(),
        ));
    }
    Ok(-(n * sxy - sx * sy) / denom)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Csv,
    Text,
}

impl FromStr for ReportFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "csv" => Ok(ReportFormat::Csv),
            "text" => Ok(ReportFormat::Text),
            other => Err(Error::Config(format!(
                "unknown report format {other:?}, expected csv or text"
            ))),
        }
    }
}

fn fmt_opt(v: Option<f64>) -> String {
    match v {
        Some(x) => format!("{x:.5e}"),
        None => "NA".to_string(),
    }
}

/// Writes rows in the chosen format. Failed rows carry NA data fields;
/// in CSV their messages follow as comment lines.
pub fn emit_report<W: Write>(
    rows: &[ReportRow],
    format: ReportFormat,
    out: &mut W,
) -> Result<()> {
    if rows.is_empty() {
        return Err(Error::InsufficientData("no rows to report".into()));
    }
    match format {
        ReportFormat::Csv => {
            writeln!(
                out,
                "K,N,M,y_error,z_error,t_total_s,t_interp_s,t_expect_s,t_update_s,picard_avg"
            )?;
            for r in rows {
                if r.failure.is_some() {
                    writeln!(out, "{},{},NA,NA,NA,NA,NA,NA,NA,NA", r.k, r.n)?;
                } else {
                    writeln!(
                        out,
                        "{},{},{},{},{},{:.5e},{:.5e},{:.5e},{:.5e},{:.5e}",
                        r.k,
                        r.n,
                        r.m,
                        fmt_opt(r.y_error),
                        fmt_opt(r.z_error),
                        r.t_total_s,
                        r.t_interp_s,
                        r.t_expect_s,
                        r.t_update_s,
                        r.picard_avg
                    )?;
                }
            }
            for r in rows {
                if let Some(msg) = &r.failure {
                    writeln!(out, "# N={}: {msg}", r.n)?;
                }
            }
        }
        ReportFormat::Text => {
            writeln!(
                out,
                "{:>2} {:>6} {:>7} {:>12} {:>12} {:>10} {:>10} {:>10} {:>10} {:>7}",
                "K", "N", "M", "y_error", "z_error", "total_s", "interp_s", "expect_s",
                "update_s", "picard"
            )?;
            for r in rows {
                if let Some(msg) = &r.failure {
                    writeln!(out, "{:>2} {:>6} FAILED: {msg}", r.k, r.n)?;
                } else {
                    writeln!(
                        out,
                        "{:>2} {:>6} {:>7} {:>12} {:>12} {:>10.3} {:>10.3} {:>10.3} {:>10.3} {:>7.2}",
                        r.k,
                        r.n,
                        r.m,
                        fmt_opt(r.y_error),
                        fmt_opt(r.z_error),
                        r.t_total_s,
                        r.t_interp_s,
                        r.t_expect_s,
                        r.t_update_s,
                        r.picard_avg
                    )?;
                }
            }
        }
    }
    Ok(())
}
