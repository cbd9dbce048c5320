use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use sgrbm::commands::{
    cmd_eval, cmd_sample, cmd_train, cmd_visualize, exit_code, EvalOptions, SampleOptions,
    TrainOptions, VisualizeOptions,
};
use sgrbm::Result;

/// Sparse group RBM and DBM training and evaluation.
#[derive(Parser)]
#[command(name = "sgrbm", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model from a run config.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Training input, replacing data.images or data.image_dir.
        #[arg(long)]
        data: Option<PathBuf>,
        /// Output directory, replacing the config's `output`.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        seed_override: Option<u64>,
    },
    /// Evaluate a checkpoint and write report.txt and report.kv.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        /// Test images in IDX format.
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        seed_override: Option<u64>,
    },
    /// Export first-layer filters as a PGM tile grid.
    Visualize {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Image shape as ROWSxCOLS when the checkpoint does not record one.
        #[arg(long, value_parser = parse_shape)]
        shape: Option<(usize, usize)>,
    },
    /// Run Gibbs chains and export snapshots as a PGM mosaic.
    Sample {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 10)]
        chains: usize,
        #[arg(long, default_value_t = 1000)]
        steps: usize,
        #[arg(long, default_value_t = 100)]
        thinning: usize,
        #[arg(long, default_value_t = 0)]
        seed_override: u64,
        #[arg(long, value_parser = parse_shape)]
        shape: Option<(usize, usize)>,
    },
}

fn parse_shape(s: &str) -> std::result::Result<(usize, usize), String> {
    let (r, c) = s.split_once('x').ok_or("expected ROWSxCOLS")?;
    Ok((
        r.parse().map_err(|_| format!("bad row count '{r}'"))?,
        c.parse().map_err(|_| format!("bad column count '{c}'"))?,
    ))
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train {
            config,
            data,
            out,
            seed_override,
        } => {
            let output = cmd_train(&TrainOptions {
                config,
                data,
                out,
                seed_override,
            })?;
            println!("checkpoint: {}", output.checkpoint.display());
            println!("telemetry: {}", output.telemetry.display());
        }
        Command::Eval {
            checkpoint,
            config,
            data,
            out,
            seed_override,
        } => {
            let report = cmd_eval(&EvalOptions {
                checkpoint,
                config,
                data,
                out,
                seed_override,
            })?;
            print!("{}", report.to_text());
        }
        Command::Visualize {
            checkpoint,
            out,
            shape,
        } => {
            let image = cmd_visualize(&VisualizeOptions {
                checkpoint,
                out: out.clone(),
                shape,
            })?;
            println!(
                "wrote {}x{} image to {}",
                image.width,
                image.height,
                out.display()
            );
        }
        Command::Sample {
            checkpoint,
            out,
            chains,
            steps,
            thinning,
            seed_override,
            shape,
        } => {
            let output = cmd_sample(&SampleOptions {
                checkpoint,
                out: out.clone(),
                chains,
                steps,
                thinning,
                seed: seed_override,
                shape,
            })?;
            println!(
                "wrote {} snapshots to {}",
                output.snapshots.len(),
                out.display()
            );
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e) as u8)
        }
    }
}
