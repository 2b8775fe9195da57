use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use histoseg::pipeline::{cmd_evaluate, cmd_normalize, cmd_patchify, cmd_predict, cmd_train};
use histoseg::{Error, Manifest, PipelineConfig, Result};

/// Dual-view nuclei segmentation of H&E slides.
#[derive(Parser)]
#[command(name = "histoseg", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Pipeline configuration (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Worker threads for per-image stages.
    #[arg(long, default_value_t = 1)]
    jobs: usize,
    /// Overrides the model and training seeds.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Fit the target stain profile and normalize every manifest image.
    Normalize {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        manifest: PathBuf,
    },
    /// Cut normalized images and masks into patch archives.
    Patchify {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        manifest: PathBuf,
    },
    /// Train on the train split and write the checkpoint and history.
    Train {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        manifest: PathBuf,
    },
    /// Segment one image into probability and mask PNGs.
    Predict {
        #[command(flatten)]
        common: Common,
        /// Defaults to model.ckpt in the output directory.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        image: PathBuf,
    },
    /// Score the test split and write report.json.
    Evaluate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        manifest: PathBuf,
        /// Defaults to model.ckpt in the output directory.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Score the ground truth against itself instead of running the model.
        #[arg(long)]
        gt_as_prediction: bool,
    },
}

fn load_config(common: &Common) -> Result<PipelineConfig> {
    let config = PipelineConfig::load(&common.config)?;
    Ok(match common.seed {
        Some(seed) => config.with_seed(seed),
        None => config,
    })
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Normalize { common, manifest } => {
            let config = load_config(&common)?;
            let n = cmd_normalize(&config, &Manifest::load(&manifest)?, common.jobs)?;
            println!("normalized {n} images");
        }
        Command::Patchify { common, manifest } => {
            let config = load_config(&common)?;
            let n = cmd_patchify(&config, &Manifest::load(&manifest)?, common.jobs)?;
            println!("wrote {n} patches");
        }
        Command::Train { common, manifest } => {
            let config = load_config(&common)?;
            let summary = cmd_train(&config, &Manifest::load(&manifest)?)?;
            match summary.final_metrics() {
                Some((loss, dice)) => println!(
                    "epoch {}: loss {loss:.6} dice {dice:.4}",
                    summary.history.epochs()
                ),
                None => println!("0 epochs; checkpoint holds the initial model"),
            }
        }
        Command::Predict {
            common,
            checkpoint,
            image,
        } => {
            let config = load_config(&common)?;
            let checkpoint = checkpoint.unwrap_or_else(|| config.checkpoint_path());
            let out = cmd_predict(&config, &checkpoint, &image)?;
            println!("{}", out.probability_path.display());
            println!("{}", out.mask_path.display());
        }
        Command::Evaluate {
            common,
            manifest,
            checkpoint,
            gt_as_prediction,
        } => {
            let config = load_config(&common)?;
            let report = cmd_evaluate(
                &config,
                checkpoint.as_deref(),
                &Manifest::load(&manifest)?,
                gt_as_prediction,
                common.jobs,
            )?;
            for r in &report.images {
                println!("{}\t{:.4}", r.id, r.dice);
            }
            println!("mean dice {:.4}", report.mean_dice);
        }
    }
    Ok(())
}

fn error_line(e: &Error) -> String {
    serde_json::json!({ "error": e.kind(), "message": e.to_string() }).to_string()
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("HISTOSEG_LOG", "warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", error_line(&e));
            ExitCode::FAILURE
        }
    }
}
