//! Benchmark CLI: runs convergence ladders of the backward solver and
//! prints a CSV or text report.
//!
//! Exit codes: 0 on success, 2 for configuration errors, 3 when any
//! solver run failed (the report, with failures marked, is still emitted).

use std::collections::HashMap;
use std::fs;
use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;

use bsde::report::{emit_report, run_experiment, ReportFormat, RunConfig};
use bsde::Error;

#[derive(Parser, Debug)]
#[command(
    name = "bsde-bench",
    about = "Convergence benchmarks for the multistep backward solver"
)]
struct Cli {
    /// Problem name: ex1, ex2, bs_call, ex4_2d, spread
    #[arg(long)]
    problem: Option<String>,

    /// Steps K_y of the y-recursion (1..=6)
    #[arg(long)]
    ky: Option<usize>,

    /// Steps K_z of the z-recursion (1..=6, defaults to K_y)
    #[arg(long)]
    kz: Option<usize>,

    /// Time-step count N; repeat for a convergence ladder
    #[arg(long = "n")]
    n: Vec<usize>,

    /// Gauss-Hermite points per dimension
    #[arg(long)]
    gh_points: Option<usize>,

    #[arg(long)]
    picard_max: Option<usize>,

    #[arg(long)]
    picard_tol: Option<f64>,

    /// Worker threads (default: all cores)
    #[arg(long)]
    threads: Option<usize>,

    /// Fixed space-grid intervals per dimension (default: balanced to dt)
    #[arg(long)]
    grid_intervals: Option<usize>,

    /// Space domain per dimension as lo:hi
    #[arg(long)]
    domain: Option<String>,

    /// Terminal-condition smoothing: on or off (default: per problem)
    #[arg(long)]
    smooth: Option<String>,

    /// Absolute mollifier half-width (default: 8 grid cells)
    #[arg(long)]
    smooth_width: Option<f64>,

    /// Extra subdivision of the bootstrap fine step (default: 1)
    #[arg(long)]
    boot_refine: Option<usize>,

    /// Write the report here instead of stdout
    #[arg(long)]
    out: Option<PathBuf>,

    /// Report format: csv or text
    #[arg(long)]
    format: Option<String>,

    /// key=value file supplying defaults for any of the above
    #[arg(long)]
    config: Option<PathBuf>,
}

/// key=value lines; '#' starts a comment, blank lines ignored.
fn parse_config_file(path: &PathBuf) -> Result<HashMap<String, String>, Error> {
    let text = fs::read_to_string(path)?;
    let mut map = HashMap::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| {
            Error::Config(format!(
                "{}:{}: expected key=value, got {line:?}",
                path.display(),
                lineno + 1
            ))
        })?;
        map.insert(key.trim().to_string(), value.trim().to_string());
    }
    Ok(map)
}

fn parse_value<T: std::str::FromStr>(key: &str, raw: &str) -> Result<T, Error> {
    raw.parse()
        .map_err(|_| Error::Config(format!("bad value for {key}: {raw:?}")))
}

fn parse_domain(raw: &str) -> Result<(f64, f64), Error> {
    let (lo, hi) = raw
        .split_once(':')
        .ok_or_else(|| Error::Config(format!("domain must be lo:hi, got {raw:?}")))?;
    Ok((parse_value("domain", lo)?, parse_value("domain", hi)?))
}

fn parse_smooth(raw: &str) -> Result<bool, Error> {
    match raw {
        "on" => Ok(true),
        "off" => Ok(false),
        other => Err(Error::Config(format!(
            "smooth must be on or off, got {other:?}"
        ))),
    }
}

struct Resolved {
    run: RunConfig<f64>,
    out: Option<PathBuf>,
    format: ReportFormat,
}

/// CLI flags override config-file entries, which override defaults.
fn resolve(cli: &Cli) -> Result<Resolved, Error> {
    let file = match &cli.config {
        Some(path) => parse_config_file(path)?,
        None => HashMap::new(),
    };
    let known = [
        "problem", "ky", "kz", "n", "gh_points", "picard_max", "picard_tol", "threads",
        "grid_intervals", "domain", "smooth", "smooth_width", "boot_refine", "format",
    ];
    for key in file.keys() {
        if !known.contains(&key.as_str()) {
            return Err(Error::Config(format!("unknown config key {key:?}")));
        }
    }
    let from_file = |key: &str| file.get(key).map(String::as_str);

    let problem = match (&cli.problem, from_file("problem")) {
        (Some(p), _) => p.clone(),
        (None, Some(p)) => p.to_string(),
        (None, None) => return Err(Error::Config("no problem selected".into())),
    };
    let ky = match (cli.ky, from_file("ky")) {
        (Some(v), _) => v,
        (None, Some(raw)) => parse_value("ky", raw)?,
        (None, None) => 1,
    };
    let kz = match (cli.kz, from_file("kz")) {
        (Some(v), _) => v,
        (None, Some(raw)) => parse_value("kz", raw)?,
        (None, None) => ky,
    };
    let n_values: Vec<usize> = if !cli.n.is_empty() {
        cli.n.clone()
    } else if let Some(raw) = from_file("n") {
        raw.split(',')
            .map(|s| parse_value("n", s.trim()))
            .collect::<Result<_, _>>()?
    } else {
        return Err(Error::Config("no time-step counts requested".into()));
    };

    let mut run = RunConfig::new(&problem, ky, kz, n_values);
    if let Some(v) = cli.gh_points.map(Ok).or_else(|| from_file("gh_points").map(|r| parse_value("gh_points", r))) {
        run.gh_points = v?;
    }
    if let Some(v) = cli.picard_max.map(Ok).or_else(|| from_file("picard_max").map(|r| parse_value("picard_max", r))) {
        run.picard_max = v?;
    }
    if let Some(v) = cli.picard_tol.map(Ok).or_else(|| from_file("picard_tol").map(|r| parse_value("picard_tol", r))) {
        run.picard_tol = v?;
    }
    if let Some(v) = cli.threads.map(Ok).or_else(|| from_file("threads").map(|r| parse_value("threads", r))) {
        run.threads = Some(v?);
    }
    if let Some(v) = cli.grid_intervals.map(Ok).or_else(|| from_file("grid_intervals").map(|r| parse_value("grid_intervals", r))) {
        run.grid_intervals = Some(v?);
    }
    if let Some(raw) = cli.domain.as_deref().or_else(|| from_file("domain")) {
        run.domain_override = Some(parse_domain(raw)?);
    }
    if let Some(raw) = cli.smooth.as_deref().or_else(|| from_file("smooth")) {
        run.smoothing = Some(parse_smooth(raw)?);
    }
    if let Some(v) = cli.smooth_width.map(Ok).or_else(|| from_file("smooth_width").map(|r| parse_value("smooth_width", r))) {
        run.smoothing_width = Some(v?);
    }
    if let Some(v) = cli.boot_refine.map(Ok).or_else(|| from_file("boot_refine").map(|r| parse_value("boot_refine", r))) {
        run.bootstrap_refine = v?;
    }
    let format = cli
        .format
        .as_deref()
        .or_else(|| from_file("format"))
        .unwrap_or("csv")
        .parse::<ReportFormat>()?;
    Ok(Resolved {
        run,
        out: cli.out.clone(),
        format,
    })
}

fn is_config_error(e: &Error) -> bool {
    matches!(e, Error::Config(_) | Error::Io(_))
}

fn run(cli: &Cli) -> Result<u8, Error> {
    let resolved = resolve(cli)?;
    let rows = run_experiment(&resolved.run)?;
    let mut buf = Vec::new();
    emit_report(&rows, resolved.format, &mut buf)?;
    match &resolved.out {
        Some(path) => fs::write(path, &buf)?,
        None => std::io::stdout().write_all(&buf)?,
    }
    let failures = rows.iter().filter(|r| r.failure.is_some()).count();
    if failures > 0 {
        eprintln!("{failures} of {} runs failed", rows.len());
        Ok(3)
    } else {
        Ok(0)
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if is_config_error(&e) { 2 } else { 3 })
        }
    }
}
