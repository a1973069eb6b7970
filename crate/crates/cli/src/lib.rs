//! Command-line driver for the oralscan pipeline.
//!
//! Every subcommand reads a [`RunConfig`], works inside the run's output
//! root and leaves a manifest behind:
//!
//! ```text
//! <out>/data/        gen-data     train/ and test/ datasets
//! <out>/baseline/    train        checkpoint.json, training_log.jsonl
//! <out>/enhanced/    finetune     checkpoint.json, training_log.jsonl
//! <out>/eval/        eval         summary.{json,txt}, curves (csv, png)
//! <out>/calibration/ calibrate    operating_points.json
//! <out>/infer/       infer        overlays and per-image reports
//! <out>/sessions/    serve        exam sessions
//! ```

pub mod commands;
pub mod config;
pub mod error;
pub mod manifest;
pub mod overlay;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

pub use config::{RunConfig, Stage};
pub use error::CliError;

#[derive(Debug, Parser)]
#[command(name = "oralscan", version, about = "Synthetic oral-exam detector: data, training, evaluation, serving")]
pub struct Cli {
    #[command(flatten)]
    pub common: CommonArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args, Default)]
pub struct CommonArgs {
    /// TOML run config, or a manifest.json from an earlier run to repeat it.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Seed for data generation, splitting and training.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output root for all stages.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate the synthetic dataset and its person-disjoint split.
    GenData,
    /// Train the image-only model.
    Train,
    /// Fine-tune the prior-fused model from the trained baseline.
    Finetune,
    /// ROC/FROC evaluation and the AUC summary table.
    Eval,
    /// Pick per-condition operating points from the evaluation.
    Calibrate,
    /// Score photos and write overlay images.
    Infer(InferArgs),
    /// Run the exam-session HTTP service.
    Serve {
        /// Listen address, overriding the config.
        #[arg(long)]
        addr: Option<String>,
    },
}

#[derive(Debug, Args)]
pub struct InferArgs {
    /// PNG photo(s) to score.
    #[arg(long = "image", required = true)]
    pub images: Vec<PathBuf>,
    /// Comma-separated answer indices, one per question; selects the
    /// prior-fused model.
    #[arg(long, value_delimiter = ',')]
    pub answers: Option<Vec<usize>>,
    /// JSON file with pain/bleeding strokes.
    #[arg(long)]
    pub strokes: Option<PathBuf>,
    /// Solid guide box `x0,y0,x1,y1` (fractions); the photo is cropped to it.
    #[arg(long)]
    pub solid: Option<String>,
    /// Dashed alignment box `x0,y0,x1,y1`.
    #[arg(long)]
    pub dashed: Option<String>,
}

impl CommonArgs {
    pub fn resolve(&self) -> Result<RunConfig, CliError> {
        let mut config = match &self.config {
            Some(path) => RunConfig::load(path)?,
            None => RunConfig::default(),
        };
        if let Some(seed) = self.seed {
            config = config.with_seed(seed);
        }
        if let Some(out) = &self.out {
            config.out = out.clone();
        }
        config.validate()?;
        Ok(config)
    }
}

pub fn run(cli: Cli) -> Result<(), CliError> {
    let mut config = cli.common.resolve()?;
    match cli.command {
        Command::GenData => commands::gen_data(&config).map(drop),
        Command::Train => commands::train(&config).map(drop),
        Command::Finetune => commands::finetune(&config).map(drop),
        Command::Eval => commands::eval(&config).map(drop),
        Command::Calibrate => commands::calibrate(&config).map(drop),
        Command::Infer(args) => {
            let request = commands::InferRequest {
                images: args.images,
                answers: args.answers,
                strokes: args.strokes,
                solid: args.solid,
                dashed: args.dashed,
            };
            commands::infer(&config, &request).map(drop)
        }
        Command::Serve { addr } => {
            if let Some(a) = addr {
                config.serve.addr = a;
            }
            commands::serve(&config)
        }
    }
}
