//! `paofed` command-line front end.
//!
//! Every subcommand writes its tables under the configured output directory
//! and prints a JSON summary on stdout. Failures print
//! `{"error": <category>, "message": <text>}` on stderr and exit with 1.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use paofed::algorithms::AlgorithmId;
use paofed::analysis::max_eigenvalue;
use paofed::error::{Error, Result};
use paofed::harness::{
    calibrate, feature_correlation, log_grid, output_path, predict, prediction_records, preset, run_algorithms,
    sweep, write_csv, write_experiment, write_json, DataSource, ExperimentConfig, ExperimentResult, Summary,
    PRESET_NAMES,
};
use serde_json::{json, Value};

#[derive(Parser)]
#[command(name = "paofed", version, about = "Asynchronous partial-sharing online federated learning simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run every configured algorithm.
    Run {
        config: PathBuf,
        /// Overrides `experiment.output_dir`.
        #[arg(long)]
        output_dir: Option<PathBuf>,
    },
    /// Run a chosen subset of algorithms, e.g. `pao-fed-u1,online-fedsgd`.
    Compare {
        config: PathBuf,
        #[arg(long, value_delimiter = ',', required = true)]
        algorithms: Vec<String>,
        #[arg(long)]
        output_dir: Option<PathBuf>,
    },
    /// Vary one parameter over a list of values.
    Sweep {
        config: PathBuf,
        #[arg(long)]
        param: String,
        #[arg(long, value_delimiter = ',', required = true, allow_hyphen_values = true)]
        values: Vec<f64>,
        #[arg(long)]
        output_dir: Option<PathBuf>,
    },
    /// Theoretical transient and steady-state MSD of `analysis.variant`.
    PredictMsd {
        config: PathBuf,
        #[arg(long)]
        output_dir: Option<PathBuf>,
    },
    /// Match the initial convergence speed of every variant to a reference.
    Calibrate {
        config: PathBuf,
        #[arg(long, default_value = "pao-fed-u1")]
        reference: String,
        /// Smallest grid rate.
        #[arg(long, default_value_t = 0.01)]
        lo: f64,
        /// Largest grid rate; defaults to `0.95 / lambda_max`.
        #[arg(long)]
        hi: Option<f64>,
        #[arg(long, default_value_t = 16)]
        points: usize,
        #[arg(long)]
        output_dir: Option<PathBuf>,
    },
    /// Print a named preset as TOML.
    Preset {
        #[arg(value_parser = clap::builder::PossibleValuesParser::new(PRESET_NAMES))]
        name: String,
        /// Multiplies clients, per-group samples and horizon.
        #[arg(long, default_value_t = 1.0)]
        scale: f64,
    },
}

fn load(path: &Path, output_dir: Option<PathBuf>) -> Result<ExperimentConfig> {
    let mut cfg = ExperimentConfig::load(path)?;
    if let Some(dir) = output_dir {
        cfg.experiment.output_dir = dir;
    }
    Ok(cfg)
}

fn lambda_max(cfg: &ExperimentConfig) -> Result<f64> {
    let data = DataSource::from_config(cfg)?;
    Ok(max_eigenvalue(&feature_correlation(cfg, &data)?))
}

fn finish(cfg: &ExperimentConfig, res: &ExperimentResult) -> Result<Value> {
    let mut s: Summary = write_experiment(cfg, res)?;
    let l = lambda_max(cfg)?;
    s.mu_bounds = Some((2.0 / l, 1.0 / l));
    write_json(&output_path(cfg, "summary.json"), &s)?;
    Ok(serde_json::to_value(s)?)
}

fn execute(cmd: Command) -> Result<Value> {
    match cmd {
        Command::Run { config, output_dir } => {
            let cfg = load(&config, output_dir)?;
            log::info!("running {} algorithms over {} runs", cfg.algorithms.variants.len(), cfg.experiment.mc_runs);
            let res = run_algorithms(&cfg, &cfg.algorithms.variants)?;
            finish(&cfg, &res)
        }
        Command::Compare { config, algorithms, output_dir } => {
            let cfg = load(&config, output_dir)?;
            let ids = algorithms.iter().map(|a| a.trim().parse()).collect::<Result<Vec<AlgorithmId>>>()?;
            let res = run_algorithms(&cfg, &ids)?;
            finish(&cfg, &res)
        }
        Command::Sweep { config, param, values, output_dir } => {
            let cfg = load(&config, output_dir)?;
            let rows = sweep(&cfg, &param, &values)?;
            let path = output_path(&cfg, &format!("sweep_{param}.csv"));
            write_csv(&path, &rows)?;
            log::info!("wrote {}", path.display());
            Ok(json!({ "parameter": param, "rows": rows }))
        }
        Command::PredictMsd { config, output_dir } => {
            let cfg = load(&config, output_dir)?;
            let (pred, summary) = predict(&cfg)?;
            write_csv(&output_path(&cfg, "msd.csv"), &prediction_records(&pred))?;
            write_json(&output_path(&cfg, "msd_summary.json"), &summary)?;
            Ok(serde_json::to_value(summary)?)
        }
        Command::Calibrate { config, reference, lo, hi, points, output_dir } => {
            let mut cfg = load(&config, output_dir)?;
            let reference: AlgorithmId = reference.parse()?;
            let hi = match hi {
                Some(h) => h,
                None => 0.95 / lambda_max(&cfg)?,
            };
            if !(lo > 0.0 && hi > lo) || points == 0 {
                return Err(Error::InvalidArgument(format!("grid needs 0 < lo < hi and points > 0, got {lo}, {hi}, {points}")));
            }
            let cal = calibrate(&mut cfg, reference, &log_grid(lo, hi, points))?;
            let path = output_path(&cfg, "calibrated.toml");
            if let Some(dir) = path.parent() {
                std::fs::create_dir_all(dir)?;
            }
            cfg.save(&path)?;
            write_json(&output_path(&cfg, "calibration.json"), &cal)?;
            Ok(json!({ "calibration": cal, "config": path }))
        }
        Command::Preset { name, scale } => {
            let cfg = preset(&name, scale)?;
            print!("{}", cfg.to_toml_string()?);
            Ok(Value::Null)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match execute(cli.command) {
        Ok(Value::Null) => ExitCode::SUCCESS,
        Ok(v) => {
            println!("{}", serde_json::to_string_pretty(&v).unwrap_or_default());
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("{}", json!({ "error": e.category(), "message": e.to_string() }));
            ExitCode::FAILURE
        }
    }
}
