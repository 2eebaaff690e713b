//! `billiard-lab`: runs billiard experiments and writes their artifacts.

mod config;
mod experiments;
mod output;
mod reproduce;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use config::{Experiment, ExperimentConfig, Probe};
use experiments::Failure;
use output::{ErrorReport, OutputDir, TOOL, VERSION};
use serde_json::{json, Value};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{Duration, Instant};

const EXIT_FAILURE: u8 = 1;
const EXIT_CONFIG: u8 = 2;
const EXIT_TIMEOUT: u8 = 3;
const EXIT_VALIDATION: u8 = 4;
const EXIT_MISMATCH: u8 = 5;

#[derive(Parser)]
#[command(name = "billiard-lab", version, about = "Experiments on planar billiards: orbits, return-time tails, cell measures, correlations and expansion diagnostics")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// Table: shorthand `family:key=val,...` or a path to a JSON file.
    #[arg(long)]
    table: String,
    /// Master seed; every random stream derives from it.
    #[arg(long, default_value_t = 42)]
    seed: u64,
    /// Sample budget (ensemble size, orbit steps, curves or points,
    /// depending on the experiment). Accepts `1e6`.
    #[arg(long, value_parser = parse_count)]
    samples: Option<u64>,
    /// Largest lag or index examined.
    #[arg(long, value_parser = parse_count)]
    nmax: Option<u64>,
    /// Return-time cap.
    #[arg(long, value_parser = parse_count)]
    rmax: Option<u64>,
    #[command(flatten)]
    run: RunOptions,
}

#[derive(Args, Clone)]
struct RunOptions {
    /// Worker threads. Results do not depend on it.
    #[arg(long, env = "BILLIARD_LAB_THREADS")]
    workers: Option<usize>,
    /// Output directory.
    #[arg(long, default_value = "billiard-lab-out")]
    out: PathBuf,
    /// Wall-clock limit in seconds.
    #[arg(long)]
    timeout: Option<f64>,
    /// Also write gnuplot scripts.
    #[arg(long)]
    plot: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Check a table against the hypotheses of its family.
    Validate {
        #[command(flatten)]
        common: Common,
    },
    /// Iterate the collision map and write the orbit.
    Orbit {
        #[command(flatten)]
        common: Common,
        /// Start point `r,phi`; drawn from the invariant measure if absent.
        #[arg(long, allow_hyphen_values = true)]
        start: Option<String>,
        /// Number of collisions.
        #[arg(long, value_parser = parse_count, default_value = "100")]
        n: u64,
    },
    /// Autocorrelation or cross-correlation of observables.
    Correlation {
        #[command(flatten)]
        common: Common,
        /// free-path, cos-phi, sin-phi, position-x, component-indicator(k), constant(c).
        #[arg(long, default_value = "free-path")]
        f: String,
        /// Defaults to `f`.
        #[arg(long)]
        g: Option<String>,
        /// `full` or `induced`.
        #[arg(long, default_value = "full")]
        map: String,
        #[arg(long, value_parser = parse_count, default_value = "1000")]
        burn_in: u64,
        #[arg(long, default_value_t = 50)]
        batches: u64,
        /// Clip both series above this upper quantile.
        #[arg(long)]
        winsorize: Option<f64>,
    },
    /// Return-time tail of the induced map and its power-law fit.
    Tail {
        #[command(flatten)]
        common: Common,
        /// Importance-sampling levels; 0 for plain sampling.
        #[arg(long, default_value_t = 10)]
        levels: u32,
        /// Smallest n in the fit window.
        #[arg(long, default_value_t = 10.0)]
        fit_nmin: f64,
        /// Raw samples required in every fitted bin.
        #[arg(long, default_value_t = 100)]
        min_count: u64,
    },
    /// Cell masses by kind and index, with their scaling fits.
    Cells {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 10)]
        levels: u32,
        #[arg(long, default_value_t = 10)]
        fit_nmin: u64,
        #[arg(long, default_value_t = 100)]
        min_count: u64,
        #[arg(long, default_value_t = 8)]
        bins_per_decade: u32,
        /// Relative threshold change of the sensitivity check.
        #[arg(long, default_value_t = 0.2)]
        delta: f64,
    },
    /// Hyperbolicity checks and exact identities.
    Diagnostics {
        #[command(flatten)]
        common: Common,
        /// invariants, invariance, mfp, sums, strips or expansion.
        #[arg(long)]
        probe: String,
        /// Cell kind for `expansion`.
        #[arg(long, default_value = "sliding")]
        kind: String,
        /// Points per curve for `sums`.
        #[arg(long, value_parser = parse_count, default_value = "1e4")]
        resolution: u64,
        #[arg(long, default_value_t = 0.02)]
        half_length: f64,
        /// Spread of curve bases around the accumulation points.
        #[arg(long, default_value_t = 0.02)]
        spread: f64,
        /// Smallest n1 counted by the cell-range check.
        #[arg(long, default_value_t = 20)]
        n1_min: u64,
        /// First homogeneity strip.
        #[arg(long, default_value_t = 10)]
        k0: u32,
        /// Smallest cell index of the expansion trend.
        #[arg(long, default_value_t = 2)]
        fit_nmin: u64,
        #[arg(long, default_value_t = 10)]
        levels: u32,
        /// Orbit length per chain for `mfp`.
        #[arg(long, value_parser = parse_count, default_value = "100")]
        steps: u64,
    },
    /// Re-run a previous experiment and compare its CSV outputs.
    Reproduce {
        /// `summary.json` of the run to check.
        summary: PathBuf,
        #[arg(long, env = "BILLIARD_LAB_THREADS")]
        workers: Option<usize>,
    },
}

/// Parses counts written as integers or in scientific notation.
fn parse_count(s: &str) -> Result<u64, String> {
    if let Ok(v) = s.parse::<u64>() {
        return Ok(v);
    }
    let x: f64 = s.parse().map_err(|_| format!("'{s}' is not a count"))?;
    if x >= 0.0 && x.fract() == 0.0 && x < u64::MAX as f64 {
        Ok(x as u64)
    } else {
        Err(format!("'{s}' is not a non-negative integer"))
    }
}

fn parse_start(s: &str) -> Result<[f64; 2]> {
    let parts: Vec<&str> = s.split(',').collect();
    let [r, phi] = parts.as_slice() else {
        return Err(Failure::new("config", format!("--start expects r,phi, got '{s}'")).into());
    };
    let num = |t: &str| t.trim().parse::<f64>().map_err(|_| Failure::new("config", format!("cannot parse '{t}' in --start")));
    Ok([num(r)?, num(phi)?])
}

fn config_for(common: &Common, experiment: Experiment) -> Result<ExperimentConfig> {
    let table = billiard_core::geometry::TableSpec::parse(&common.table).map_err(|e| Failure::new("config", e.to_string()))?;
    Ok(ExperimentConfig {
        table_arg: common.table.clone(),
        table,
        seed: common.seed,
        experiment,
    })
}

fn positive(name: &str, v: u64) -> Result<u64> {
    if v == 0 {
        return Err(Failure::new("config", format!("{name} must be positive")).into());
    }
    Ok(v)
}

/// Resolves the command line into a configuration and run options.
fn resolve(command: Command) -> Result<(ExperimentConfig, RunOptions)> {
    let default_rmax = billiard_core::induced::DEFAULT_R_MAX;
    Ok(match command {
        Command::Validate { common } => (config_for(&common, Experiment::Validate)?, common.run),
        Command::Orbit { common, start, n } => {
            let start = start.as_deref().map(parse_start).transpose()?;
            (config_for(&common, Experiment::Orbit { start, steps: n })?, common.run)
        }
        Command::Correlation {
            common,
            f,
            g,
            map,
            burn_in,
            batches,
            winsorize,
        } => {
            let g = g.unwrap_or_else(|| f.clone());
            let exp = Experiment::Correlation {
                g,
                f,
                map,
                n_max: positive("--nmax", common.nmax.unwrap_or(100))?,
                steps: positive("--samples", common.samples.unwrap_or(1_000_000))?,
                burn_in,
                batches: positive("--batches", batches)?,
                winsorize,
            };
            (config_for(&common, exp)?, common.run)
        }
        Command::Tail {
            common,
            levels,
            fit_nmin,
            min_count,
        } => {
            let exp = Experiment::Tail {
                samples: positive("--samples", common.samples.unwrap_or(1_000_000))?,
                r_max: positive("--rmax", common.rmax.unwrap_or(default_rmax))?,
                levels,
                n_min: fit_nmin,
                min_count,
            };
            (config_for(&common, exp)?, common.run)
        }
        Command::Cells {
            common,
            levels,
            fit_nmin,
            min_count,
            bins_per_decade,
            delta,
        } => {
            let exp = Experiment::Cells {
                samples: positive("--samples", common.samples.unwrap_or(1_000_000))?,
                r_max: positive("--rmax", common.rmax.unwrap_or(default_rmax))?,
                levels,
                n_min: fit_nmin,
                min_count,
                bins_per_decade: positive("--bins-per-decade", bins_per_decade as u64)? as u32,
                delta,
            };
            (config_for(&common, exp)?, common.run)
        }
        Command::Diagnostics {
            common,
            probe,
            kind,
            resolution,
            half_length,
            spread,
            n1_min,
            k0,
            fit_nmin,
            levels,
            steps,
        } => {
            let samples = |default: u64| positive("--samples", common.samples.unwrap_or(default));
            let probe = match probe.as_str() {
                "invariants" => Probe::Invariants { points: samples(10_000)? },
                "invariance" => Probe::Invariance { samples: samples(10_000_000)? },
                "mfp" => Probe::MeanFreePath {
                    chains: samples(100_000)?,
                    steps: positive("--steps", steps)?,
                },
                "sums" => Probe::Sums {
                    curves: samples(1000)?,
                    resolution: positive("--resolution", resolution)?,
                    half_length,
                    spread,
                    n1_min,
                },
                "strips" => Probe::Strips {
                    per_strip: samples(200)?,
                    k0,
                    k_max: common.nmax.unwrap_or(200) as u32,
                },
                "expansion" => Probe::Expansion {
                    cell_kind: kind,
                    samples: samples(200_000)?,
                    levels,
                    n_min: fit_nmin,
                },
                other => {
                    return Err(Failure::new(
                        "config",
                        format!("unknown probe '{other}'; expected invariants, invariance, mfp, sums, strips or expansion"),
                    )
                    .into())
                }
            };
            (config_for(&common, Experiment::Diagnostics { probe })?, common.run)
        }
        Command::Reproduce { .. } => unreachable!("handled before resolution"),
    })
}

fn init_workers(workers: Option<usize>) -> Result<()> {
    if let Some(n) = workers {
        if n == 0 {
            return Err(Failure::new("config", "--workers must be positive").into());
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .context("cannot start the worker pool")?;
    }
    Ok(())
}

/// Runs a configuration into `dir` and writes its summary. Returns the names
/// of the CSV files written.
pub fn execute(config: &ExperimentConfig, dir: &Path, plot: bool) -> Result<Vec<String>> {
    let hash = config.hash();
    let mut out = OutputDir::create(dir, &hash, config.seed)?;
    for stale in ["summary.json", "error.json"] {
        let path = dir.join(stale);
        if path.is_file() {
            std::fs::remove_file(&path).with_context(|| format!("cannot remove stale {}", path.display()))?;
        }
    }
    let started = Instant::now();
    let result = experiments::run(config, &mut out, plot)?;
    let summary = json!({
        "tool": TOOL,
        "version": VERSION,
        "experiment": config.experiment.name(),
        "config_hash": hash,
        "seed": config.seed,
        "config": config,
        "workers": rayon::current_num_threads(),
        "elapsed_seconds": started.elapsed().as_secs_f64(),
        "outputs": out.csv_files(),
        "result": result,
    });
    out.write_json("summary.json", &summary)?;
    Ok(out.csv_files().to_vec())
}

fn error_kind(e: &anyhow::Error) -> (&'static str, String, Value) {
    match e.downcast_ref::<Failure>() {
        Some(f) => (f.kind, f.message.clone(), f.details.clone()),
        None => ("runtime", format!("{e:#}"), Value::Null),
    }
}

fn write_error(dir: &Path, e: &anyhow::Error, run: Option<(&str, u64)>) {
    let (kind, message, details) = error_kind(e);
    let report = ErrorReport {
        tool: TOOL,
        version: VERSION,
        error: kind.to_string(),
        message,
        config_hash: run.map(|r| r.0.to_string()),
        seed: run.map(|r| r.1),
        details,
    };
    if std::fs::create_dir_all(dir).is_ok() {
        if let Ok(text) = serde_json::to_string_pretty(&report) {
            let _ = std::fs::write(dir.join("error.json"), text + "\n");
        }
    }
}

fn exit_code(e: &anyhow::Error) -> u8 {
    match error_kind(e).0 {
        "config" => EXIT_CONFIG,
        "validation" => EXIT_VALIDATION,
        "mismatch" => EXIT_MISMATCH,
        "timeout" => EXIT_TIMEOUT,
        _ => EXIT_FAILURE,
    }
}

/// Ends the process with an error report once `seconds` have passed.
fn arm_timeout(seconds: f64, dir: PathBuf) -> Result<()> {
    if !(seconds > 0.0 && seconds.is_finite()) {
        return Err(Failure::new("config", "--timeout must be a positive number of seconds").into());
    }
    std::thread::spawn(move || {
        std::thread::sleep(Duration::from_secs_f64(seconds));
        let e = Failure::new("timeout", format!("run exceeded the {seconds} s limit")).into();
        write_error(&dir, &e, None);
        eprintln!("error: {e}");
        std::process::exit(EXIT_TIMEOUT as i32);
    });
    Ok(())
}

/// Identity of a run, for error reports.
type RunId = Option<(String, u64)>;

fn main_inner(cli: Cli, id: &mut RunId) -> Result<()> {
    if let Command::Reproduce { summary, workers } = cli.command {
        init_workers(workers)?;
        return reproduce::reproduce(&summary);
    }
    let (config, run) = resolve(cli.command)?;
    *id = Some((config.hash(), config.seed));
    init_workers(run.workers)?;
    if let Some(t) = run.timeout {
        arm_timeout(t, run.out.clone())?;
    }
    let files = execute(&config, &run.out, run.plot)?;
    println!(
        "{} done: {} CSV files and summary.json in {}",
        config.experiment.name(),
        files.len(),
        run.out.display()
    );
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let out = match &cli.command {
        Command::Validate { common }
        | Command::Orbit { common, .. }
        | Command::Correlation { common, .. }
        | Command::Tail { common, .. }
        | Command::Cells { common, .. }
        | Command::Diagnostics { common, .. } => Some(common.run.out.clone()),
        Command::Reproduce { .. } => None,
    };
    let mut id = None;
    match main_inner(cli, &mut id) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            if let Some(dir) = &out {
                write_error(dir, &e, id.as_ref().map(|(h, s)| (h.as_str(), *s)));
            }
            eprintln!("error: {e:#}");
            let details = error_kind(&e).2;
            if !details.is_null() {
                eprintln!("{details}");
            }
            ExitCode::from(exit_code(&e))
        }
    }
}
