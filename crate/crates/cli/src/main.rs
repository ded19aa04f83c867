use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use fmce_lab::pipeline;
use fmce_lab::{ExperimentConfig, Overrides, Result};

/// Convergence-aware auxiliary training pipeline.
///
/// Stages communicate through files under the output directory, so each can
/// be re-run on its own. Exit status: 0 success, 2 configuration error or
/// missing upstream artifact, 3 malformed file, 4 numerical divergence,
/// 1 other failures.
#[derive(Parser)]
#[command(name = "fmce-lab", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    overrides: Overrides,
}

#[derive(Subcommand)]
enum Command {
    /// Subset the dataset, fit normalization, write IDX files.
    PrepareData,
    /// Classification-only training; saves a checkpoint every epoch.
    TrainBaseline,
    /// Select K checkpoints and store their training-set feature maps.
    Harvest,
    /// Train FMCE-Net on the harvested feature maps and freeze it.
    TrainFmce,
    /// Joint training with the frozen FMCE-Net for each RAF and seed.
    TrainPlusplus,
    /// The RAF × seed grid plus a summary CSV.
    Sweep,
    /// Table and accuracy chart from sweep runs.
    Report {
        /// Directory with `raf-*/seed-*/metrics.csv` (default: <out>/sweep).
        #[arg(long)]
        runs: Option<PathBuf>,
    },
    /// Grad-CAM overlays for selected test images.
    Gradcam {
        /// Model checkpoint (default: first seed's baseline).
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
}

fn run(cli: &Cli) -> Result<()> {
    let cfg = ExperimentConfig::resolve(&cli.overrides)?;
    match &cli.command {
        Command::PrepareData => {
            let info = pipeline::prepare_data(&cfg)?;
            println!("{} train / {} test images, {} classes", info.train_images, info.test_images, info.classes);
        }
        Command::TrainBaseline => {
            for (seed, out) in cfg.seeds.iter().zip(pipeline::train_baseline(&cfg)?) {
                println!("seed {seed}: test accuracy {:.2}% after {} epochs", out.final_test_acc(), out.metrics.len());
            }
        }
        Command::Harvest => {
            let path = pipeline::harvest(&cfg)?;
            println!("wrote {}", path.display());
        }
        Command::TrainFmce => {
            let r = pipeline::train_fmce(&cfg)?;
            println!(
                "held-out FMCS accuracy {:.4} (chance {:.4}), spearman {:.3}",
                r.val_acc,
                1.0 / r.levels as f64,
                r.spearman
            );
        }
        Command::TrainPlusplus => {
            for c in pipeline::train_plusplus(&cfg)? {
                println!("RAF {} seed {}: {:.2}%", c.raf, c.seed, c.final_acc);
            }
        }
        Command::Sweep => {
            let (cells, summary) = pipeline::sweep(&cfg)?;
            println!("{} runs, summary in {}", cells.len(), summary.display());
        }
        Command::Report { runs } => {
            let rep = pipeline::report(&cfg, runs.as_deref())?;
            print!("{}", rep.table);
        }
        Command::Gradcam { checkpoint } => {
            for p in pipeline::gradcam_stage(&cfg, checkpoint.as_deref())? {
                println!("{}", p.display());
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
