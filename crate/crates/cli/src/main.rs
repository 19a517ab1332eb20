mod commands;
mod config;
mod error;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use crate::commands::Ctx;
use crate::error::CliError;

/// Image completion with a gradient-penalty WGAN, followed by residual
/// enhancement.
#[derive(Parser, Debug)]
#[command(name = "inpaint", version)]
struct Cli {
    /// JSON configuration file; omitted keys keep their defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Seed for every stage, unless a stage seed is set explicitly.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Override one config key, e.g. `--set wgan.lambda=5`. Repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    set: Vec<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write a synthetic dataset (faces or 2-D mixture) under <out>/data.
    GenData,
    /// Train generator and critic; writes ckpt/{generator,critic}.wgck and logs/wgan.csv.
    TrainGan {
        /// Face dataset folder or mixture CSV; synthesized from the config if omitted.
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Train the enhancer on degraded copies of clean faces.
    TrainEnhance {
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Fill the masked region of an image (or every image in a folder).
    Complete {
        #[arg(long)]
        input: PathBuf,
        /// Mask image: positive pixels are intact. Built from the config if omitted.
        #[arg(long)]
        mask: Option<PathBuf>,
        #[arg(long)]
        generator: Option<PathBuf>,
        #[arg(long)]
        critic: Option<PathBuf>,
    },
    /// Remove the learned degradation from an image or folder.
    Enhance {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        enhancer: Option<PathBuf>,
    },
    /// Score a candidate folder against a reference folder (PSNR, SSIM).
    Evaluate {
        #[arg(long)]
        reference: PathBuf,
        #[arg(long)]
        candidate: PathBuf,
    },
    /// Complete, then enhance.
    Pipeline {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        mask: Option<PathBuf>,
        #[arg(long)]
        generator: Option<PathBuf>,
        #[arg(long)]
        critic: Option<PathBuf>,
        #[arg(long)]
        enhancer: Option<PathBuf>,
    },
}

fn run(cli: Cli) -> Result<(), CliError> {
    let cfg = config::parse_config(cli.config.as_deref(), cli.seed, &cli.set)?;
    let ctx = Ctx::new(cfg, cli.out)?;
    match cli.command {
        Command::GenData => commands::gen_data(&ctx),
        Command::TrainGan { data } => commands::train_gan(&ctx, data.as_deref()),
        Command::TrainEnhance { data } => commands::train_enhance(&ctx, data.as_deref()),
        Command::Complete {
            input,
            mask,
            generator,
            critic,
        } => commands::complete(&ctx, generator.as_deref(), critic.as_deref(), &input, mask.as_deref()),
        Command::Enhance { input, enhancer } => commands::enhance(&ctx, enhancer.as_deref(), &input),
        Command::Evaluate { reference, candidate } => commands::evaluate(&ctx, &reference, &candidate),
        Command::Pipeline {
            input,
            mask,
            generator,
            critic,
            enhancer,
        } => commands::pipeline(
            &ctx,
            generator.as_deref(),
            critic.as_deref(),
            enhancer.as_deref(),
            &input,
            mask.as_deref(),
        ),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
