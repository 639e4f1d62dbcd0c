//! `phonon-bus`: run trapped-ion phonon-bus experiments from a JSON config
//! and write CSV tables (and optional SVG plots).

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, ValueEnum};
use phonon_bus::dynamics::derive_seed;
use rayon::prelude::*;
use serde_json::Value;

mod config;
mod jobs;
mod output;

use config::{expand_grid, Config, Units, DEFAULT_MAX_POINTS};
use output::{Cell, Table};

pub const THREADS_ENV: &str = "PHONON_BUS_THREADS";

#[derive(Debug)]
pub enum CliError {
    /// Exit 2.
    Config(String),
    /// Exit 3.
    Numerical(String),
    /// Exit 1.
    Io(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Numerical(_) => 3,
            CliError::Io(_) => 1,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Config(m) => write!(f, "config error: {m}"),
            CliError::Numerical(m) => write!(f, "numerical contract violated: {m}"),
            CliError::Io(m) => write!(f, "i/o error: {m}"),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Scheme {
    /// Equilibrium positions and normal modes of the chain.
    Modes,
    /// Monte Carlo heating by a stochastic uniform field.
    Heat,
    /// Two-kick conditional gate.
    Kick,
    /// Bichromatic entangling gate, exact against effective.
    Ms,
    /// Stark-shift phase gate.
    Dhm,
    /// Adiabatic passages between control levels.
    Stirap,
    /// Controlled phase gate from a step program.
    Crot,
    /// Phase error from populated spectator modes.
    Spectator,
}

impl Scheme {
    pub fn name(self) -> &'static str {
        match self {
            Scheme::Modes => "modes",
            Scheme::Heat => "heat",
            Scheme::Kick => "kick",
            Scheme::Ms => "ms",
            Scheme::Dhm => "dhm",
            Scheme::Stirap => "stirap",
            Scheme::Crot => "crot",
            Scheme::Spectator => "spectator",
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "phonon-bus", version, about = "Trapped-ion phonon-bus simulator")]
struct Args {
    scheme: Scheme,
    /// JSON experiment config; all defaults when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Master seed; overrides the config.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory; overrides the config.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    trials: Option<usize>,
    #[arg(long)]
    cutoff: Option<usize>,
    /// Ion count.
    #[arg(long)]
    n: Option<usize>,
    /// Also write SVG plots.
    #[arg(long)]
    svg: bool,
}

fn threads_from_env() -> Result<Option<usize>, CliError> {
    match std::env::var(THREADS_ENV) {
        Err(_) => Ok(None),
        Ok(s) => match s.trim().parse::<usize>() {
            Ok(k) if k >= 1 => Ok(Some(k)),
            _ => Err(CliError::Config(format!("{THREADS_ENV} must be a positive integer, got {s:?}"))),
        },
    }
}

struct Artifact {
    file: PathBuf,
    body: String,
}

fn execute(args: &Args) -> Result<Vec<Artifact>, CliError> {
    let text = match &args.config {
        Some(p) => std::fs::read_to_string(p).map_err(|e| CliError::Config(format!("cannot read {}: {e}", p.display())))?,
        None => "{}".to_string(),
    };
    let cfg = Config::parse(&text)?;
    let file = &cfg.file;
    if let Some(s) = &file.scheme {
        if s != args.scheme.name() {
            return Err(CliError::Config(format!("config is for scheme {s:?}, but {:?} was requested", args.scheme.name())));
        }
    }
    let master_seed = args.seed.or(file.seed).unwrap_or(0);
    let mut params = file.params.clone();
    let mut overrides = Vec::new();
    for (key, value) in [("trials", args.trials), ("cutoff", args.cutoff), ("n", args.n)] {
        if let Some(v) = value {
            params.insert(key.into(), Value::from(v));
            overrides.push(format!("{key}={v}"));
        }
    }
    let threads = threads_from_env()?;

    let grid = expand_grid(&params, &file.sweep, file.max_points.unwrap_or(DEFAULT_MAX_POINTS))?;
    let jobs: Vec<jobs::Job> = grid.iter().map(|p| jobs::prepare(args.scheme, file.units, &p.params)).collect::<Result<_, _>>()?;

    let run = || -> Vec<Result<jobs::PointResult, CliError>> {
        jobs.par_iter().enumerate().map(|(i, job)| job.run(derive_seed(master_seed, i as u64))).collect()
    };
    let results = match threads {
        Some(k) => rayon::ThreadPoolBuilder::new()
            .num_threads(k)
            .build()
            .map_err(|e| CliError::Io(e.to_string()))?
            .install(run),
        None => run(),
    };
    let results: Vec<jobs::PointResult> = results.into_iter().collect::<Result<_, _>>()?;

    let mut header = vec![
        format!("phonon-bus {}", env!("CARGO_PKG_VERSION")),
        format!("scheme: {}", args.scheme.name()),
        format!("units: {}", if file.units == Units::Si { "si" } else { "natural" }),
        format!("master-seed: {master_seed}"),
        format!("config-sha256: {}", cfg.hash),
    ];
    if !overrides.is_empty() {
        header.push(format!("overrides: {}", overrides.join(" ")));
    }
    header.extend(cfg.text.lines().map(|l| format!("config: {l}")));
    for (i, r) in results.iter().enumerate() {
        for w in &r.warnings {
            eprintln!("warning (point {i}): {w}");
            header.push(format!("warning (point {i}): {w}"));
        }
    }

    let axes: Vec<&str> = file.sweep.iter().map(|a| a.param.as_str()).collect();
    let tables = assemble(&axes, &grid, &results)?;
    let dir = args.out.clone().or_else(|| file.output.dir.as_ref().map(PathBuf::from)).unwrap_or_else(|| PathBuf::from("."));
    let prefix = file.output.prefix.clone().unwrap_or_else(|| args.scheme.name().to_string());
    let mut out = Vec::new();
    for t in &tables {
        out.push(Artifact { file: dir.join(format!("{prefix}_{}.csv", t.name)), body: t.to_csv(&header) });
        if args.svg {
            if let Some(svg) = t.to_svg() {
                out.push(Artifact { file: dir.join(format!("{prefix}_{}.svg", t.name)), body: svg });
            }
        }
    }
    Ok(out)
}

/// Concatenates the per-point tables, prefixing the swept values.
fn assemble(axes: &[&str], grid: &[config::GridPoint], results: &[jobs::PointResult]) -> Result<Vec<Table>, CliError> {
    let first = &results[0].tables;
    let mut tables = Vec::with_capacity(first.len());
    for (k, t) in first.iter().enumerate() {
        let mut cols: Vec<&str> = axes.to_vec();
        cols.extend(t.columns.iter().map(String::as_str));
        let mut merged = Table::new(&t.name, &cols);
        for (point, r) in grid.iter().zip(results) {
            let prefix: Vec<Cell> = point
                .values
                .iter()
                .map(|v| v.as_f64().map_or_else(|| Cell::Text(v.to_string()), Cell::Float))
                .collect();
            let part = r.tables.get(k).filter(|p| p.name == t.name && p.columns == t.columns).ok_or_else(|| {
                CliError::Numerical(format!("table {} differs between grid points", t.name))
            })?;
            for row in &part.rows {
                let mut full = prefix.clone();
                full.extend(row.iter().cloned());
                merged.push(full);
            }
        }
        tables.push(merged);
    }
    Ok(tables)
}

fn write_all(artifacts: &[Artifact]) -> Result<(), CliError> {
    let io = |p: &Path, e: std::io::Error| CliError::Io(format!("{}: {e}", p.display()));
    for a in artifacts {
        if let Some(dir) = a.file.parent() {
            std::fs::create_dir_all(dir).map_err(|e| io(dir, e))?;
        }
        std::fs::write(&a.file, &a.body).map_err(|e| io(&a.file, e))?;
        println!("{}", a.file.display());
    }
    Ok(())
}

fn main() -> ExitCode {
    let args = Args::parse();
    match execute(&args).and_then(|a| write_all(&a)) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code())
        }
    }
}
