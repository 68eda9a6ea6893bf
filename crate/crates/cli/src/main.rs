//! `vocseg`: synthetic data generation, training, evaluation, the ablation
//! grid, mask metrics and the oracle suites.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Args, Parser, Subcommand};
use vocseg_core::harness::AblationConfig;
use vocseg_core::model::FusionMode;
use vocseg_core::synthdata::GeneratorConfig;

use commands::{MissingInput, Suite};
use config::RunConfigFile;

#[derive(Parser)]
#[command(name = "vocseg", version, about = "Tri-modal articulator segmentation on synthetic rtMRI-like data")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic multimodal dataset.
    GenerateData {
        #[arg(long, default_value_t = 5)]
        speakers: usize,
        #[arg(long, default_value_t = 100)]
        frames_per_speaker: usize,
        /// Augmented copies per original frame.
        #[arg(long, default_value_t = 2)]
        augment: usize,
        #[arg(long, default_value_t = 17)]
        seed: u64,
        /// Audio feature frames per video frame.
        #[arg(long, default_value_t = 4)]
        audio_frames: usize,
        #[arg(long, default_value_t = 16)]
        audio_features: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train one model on a leave-one-speaker-out fold.
    Train {
        #[command(flatten)]
        run: RunArgs,
        /// Speaker held out for testing; its frames are never trained on.
        #[arg(long, default_value_t = 0)]
        held_out: u32,
        #[arg(long)]
        out: PathBuf,
    },
    /// Evaluate a checkpoint on the held-out speaker's frames.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value_t = 0)]
        held_out: u32,
        /// Withhold audio and phonology at inference.
        #[arg(long)]
        video_only: bool,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train and test every (config, fold, seed) cell of the ablation grid.
    Ablate {
        #[command(flatten)]
        run: RunArgs,
        /// Comma-separated subset of the seven configs (default all).
        #[arg(long, value_delimiter = ',')]
        configs: Option<Vec<AblationConfig>>,
        #[arg(long, value_delimiter = ',')]
        seeds: Option<Vec<u64>>,
        /// Held-out speakers (default all).
        #[arg(long, value_delimiter = ',')]
        folds: Option<Vec<u32>>,
        /// Worker threads; 0 uses every core. VOCSEG_THREADS caps this.
        #[arg(long)]
        threads: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Compare predicted and reference mask files with matching names.
    Metrics {
        pred_dir: PathBuf,
        truth_dir: PathBuf,
        /// Pixel spacing in mm; defaults to the spacing stored with the masks.
        #[arg(long)]
        spacing: Option<f64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the gradient, metric and loss oracle suites.
    Verify {
        #[arg(value_enum, default_value = "all")]
        suite: Suite,
    },
}

/// Config file plus the flags that override it.
#[derive(Args)]
struct RunArgs {
    /// JSON run config; unknown keys are rejected.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Dataset directory (overrides `data` in the config).
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    patience: Option<usize>,
    #[arg(long, value_parser = commands::parse_fusion)]
    fusion: Option<FusionMode>,
    /// Enable or disable the contrastive objective.
    #[arg(long)]
    contrastive: Option<bool>,
}

impl RunArgs {
    fn resolve(&self) -> Result<(RunConfigFile, Option<PathBuf>)> {
        let mut c = RunConfigFile::load_or_default(self.config.as_deref())?;
        let t = &mut c.train;
        if let Some(v) = self.seed {
            t.seed = v;
        }
        if let Some(v) = self.epochs {
            t.max_epochs = v;
        }
        if let Some(v) = self.lr {
            t.learning_rate = v;
        }
        if let Some(v) = self.batch_size {
            t.batch_size = v;
        }
        if let Some(v) = self.patience {
            t.patience = v;
        }
        if let Some(v) = self.contrastive {
            t.use_contrastive = v;
        }
        if let Some(v) = self.fusion {
            c.model.fusion_mode = v;
        }
        Ok((c, self.data.clone()))
    }
}

fn run(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::GenerateData {
            speakers,
            frames_per_speaker,
            augment,
            seed,
            audio_frames,
            audio_features,
            out,
        } => {
            let cfg = GeneratorConfig {
                n_speakers: speakers,
                frames_per_speaker,
                augmentations: augment,
                seed,
                audio_frames,
                n_audio_features: audio_features,
                ..GeneratorConfig::default()
            };
            commands::generate(&cfg, &out)?;
        }
        Command::Train { run, held_out, out } => {
            let (cfg, data) = run.resolve()?;
            let data = commands::data_path(data, &cfg)?;
            commands::train(&cfg, data, &out, held_out)?;
        }
        Command::Eval {
            checkpoint,
            data,
            held_out,
            video_only,
            out,
        } => commands::eval(&checkpoint, data, &out, held_out, video_only)?,
        Command::Ablate {
            run,
            configs,
            seeds,
            folds,
            threads,
            out,
        } => {
            let (mut cfg, data) = run.resolve()?;
            let a = &mut cfg.ablation;
            if let Some(v) = configs {
                a.configs = v;
            }
            if let Some(v) = seeds {
                a.seeds = v;
            }
            if let Some(v) = folds {
                a.folds = v;
            }
            if let Some(v) = threads {
                a.threads = v;
            }
            let data = commands::data_path(data, &cfg)?;
            commands::ablate(&cfg, data, &out)?;
        }
        Command::Metrics {
            pred_dir,
            truth_dir,
            spacing,
            out,
        } => commands::metrics_cmd(&pred_dir, &truth_dir, spacing, &out)?,
        Command::Verify { suite } => {
            if !commands::verify_suites(suite)? {
                return Ok(ExitCode::FAILURE);
            }
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.downcast_ref::<MissingInput>().is_some() {
                ExitCode::from(2)
            } else {
                ExitCode::FAILURE
            }
        }
    }
}
