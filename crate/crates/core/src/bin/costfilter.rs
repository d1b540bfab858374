use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use costfilter::io::CategoryMap;
use costfilter::pipeline::{self, ApplyOptions, RunConfig};
use costfilter::synth::ScenarioSpec;
use costfilter::{Error, Result};

#[derive(Parser)]
#[command(name = "costfilter", version, about = "Budgeted uncertainty thresholding for detector outputs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit weights and thresholds from detections and ground truth.
    Fit {
        /// TOML run configuration.
        #[arg(long)]
        config: PathBuf,
        /// Overrides the configured output directory.
        #[arg(long)]
        output_dir: Option<PathBuf>,
    },
    /// Filter detections with a fitted profile.
    Apply {
        #[arg(long)]
        profile: PathBuf,
        #[arg(long)]
        detections: PathBuf,
        #[arg(long, default_value_t = 0.5)]
        tau: f64,
        /// Labels for reporting the achieved rates.
        #[arg(long)]
        ground_truth: Option<PathBuf>,
        #[arg(long, default_value = "filtered")]
        output_dir: PathBuf,
    },
    /// Print a fit report and export its tables as CSV.
    Report {
        report: PathBuf,
        #[arg(long)]
        output_dir: Option<PathBuf>,
    },
    /// Generate a synthetic scenario with known ground truth.
    Synth {
        /// JSON scenario spec; defaults are used when omitted.
        #[arg(long)]
        spec: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value = "synthetic")]
        output_dir: PathBuf,
    },
    /// Check detection and label files for invariant violations.
    Validate {
        #[arg(long)]
        detections: PathBuf,
        #[arg(long)]
        ground_truth: Option<PathBuf>,
    },
}

fn load_spec(path: Option<&PathBuf>) -> Result<ScenarioSpec> {
    match path {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
            Ok(serde_json::from_str(&text)?)
        }
        None => Ok(ScenarioSpec::default()),
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Fit { config, output_dir } => {
            let mut config = RunConfig::load(&config)?;
            if let Some(dir) = output_dir {
                config.output_dir = dir;
            }
            let outcome = pipeline::run_fit(&config)?;
            print!("{}", pipeline::render_report(&outcome.report));
        }
        Command::Apply {
            profile,
            detections,
            tau,
            ground_truth,
            output_dir,
        } => {
            let summary = pipeline::run_apply(&ApplyOptions {
                profile,
                detections,
                tau,
                ground_truth,
                category_map: None::<CategoryMap>,
                output_dir,
            })?;
            println!("{}", serde_json::to_string_pretty(&summary)?);
        }
        Command::Report { report, output_dir } => {
            print!("{}", pipeline::run_report(&report, output_dir.as_deref())?);
        }
        Command::Synth { spec, seed, output_dir } => {
            let mut spec = load_spec(spec.as_ref())?;
            if let Some(seed) = seed {
                spec.seed = seed;
            }
            pipeline::run_synth(&spec, &output_dir)?;
            println!("wrote scenario to {}", output_dir.display());
        }
        Command::Validate {
            detections,
            ground_truth,
        } => {
            let report = pipeline::run_validate(&detections, ground_truth.as_deref(), None)?;
            for v in &report.violations {
                println!("{:?} {}: {}", v.kind, v.index, v.message);
            }
            if !report.is_valid() {
                return Err(Error::DegenerateData(format!(
                    "{} invalid records",
                    report.violations.len()
                )));
            }
            println!("ok");
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
