use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use mtal::experiments::{self, ExperimentConfig};

#[derive(Parser)]
#[command(name = "mtal", version, about = "Multi-task adaptive kernel sharing experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Experiment config file.
    #[arg(long, value_name = "PATH")]
    config: PathBuf,
    /// Run only this seed instead of the configured list.
    #[arg(long, value_name = "K")]
    seed: Option<u64>,
    /// Output directory (overrides the config's `out`).
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Train every configured method on every seed.
    Train(Common),
    /// Train MTAL across sharing thresholds and write sweep.csv.
    SweepDelta(Common),
    /// Report sharing ratios of a checkpoint (or of the initial networks).
    ReportSharing {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_name = "PATH")]
        checkpoint: Option<PathBuf>,
    },
    /// Write per-task, per-kernel activation maps of one conv layer as CSV grids.
    DumpActivations {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_name = "PATH")]
        checkpoint: Option<PathBuf>,
        /// 0-based conv layer.
        #[arg(long, default_value_t = 0)]
        layer: usize,
        /// Test inputs per task.
        #[arg(long, default_value_t = 1)]
        samples: usize,
    },
    /// Write the configured tasks' datasets in the on-disk format.
    GenData(Common),
}

fn threads() -> Result<Option<usize>, String> {
    match std::env::var("MTAL_THREADS") {
        Err(_) => Ok(None),
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n > 0 => Ok(Some(n)),
            _ => Err(format!("MTAL_THREADS must be a positive integer, got `{v}`")),
        },
    }
}

fn setup(c: &Common) -> mtal::Result<(ExperimentConfig, PathBuf, u64)> {
    let mut cfg = ExperimentConfig::load(&c.config)?;
    if let Some(s) = c.seed {
        cfg.seeds = vec![s];
    }
    let out = c
        .out
        .clone()
        .or_else(|| cfg.out.clone())
        .unwrap_or_else(|| Path::new("runs").to_path_buf());
    let seed = cfg.seeds[0];
    Ok((cfg, out, seed))
}

fn run(cli: Cli) -> Result<(), String> {
    let threads = threads()?;
    let err = |e: mtal::Error| e.to_string();
    match cli.command {
        Command::Train(c) => {
            let (cfg, out, _) = setup(&c).map_err(err)?;
            let summary = experiments::run_experiment(&cfg, &out, threads).map_err(err)?;
            for m in &cfg.methods {
                if let Some(acc) = summary.mean_accuracy(*m) {
                    println!("{m}: mean test accuracy {acc:.4}");
                }
            }
            println!("results written to {}", out.display());
        }
        Command::SweepDelta(c) => {
            let (cfg, out, _) = setup(&c).map_err(err)?;
            let rows = experiments::sweep_delta(&cfg, &out, threads).map_err(err)?;
            println!("{} rows written to {}", rows.len(), out.join("sweep.csv").display());
        }
        Command::ReportSharing { common, checkpoint } => {
            let (cfg, out, seed) = setup(&common).map_err(err)?;
            let report = experiments::report_sharing(&cfg, seed, checkpoint.as_deref(), &out).map_err(err)?;
            print!("{}", report.to_csv());
        }
        Command::DumpActivations {
            common,
            checkpoint,
            layer,
            samples,
        } => {
            let (cfg, out, seed) = setup(&common).map_err(err)?;
            let n = experiments::dump_activations(&cfg, seed, checkpoint.as_deref(), layer, samples, &out)
                .map_err(err)?;
            println!("{n} activation maps written to {}", out.display());
        }
        Command::GenData(c) => {
            let (cfg, out, seed) = setup(&c).map_err(err)?;
            for dir in experiments::gen_data(&cfg, seed, &out).map_err(err)? {
                println!("{}", dir.display());
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("mtal: {e}");
            ExitCode::FAILURE
        }
    }
}
