//! Command-line front end for the underwater bioacoustic recognition
//! pipeline. All subcommands are batch jobs with file outputs; see the
//! project README for a full walkthrough.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Parser, Subcommand};

use commands::*;
use config::FileConfig;

#[derive(Parser)]
#[command(
    name = "mtbca",
    version,
    about = "Few-shot underwater acoustic target recognition: ingest, preprocess, train, eval, infer, ablate"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Scan a species-per-directory WAV tree and write a split manifest.
    Ingest {
        /// Dataset root (one subdirectory per species).
        #[arg(long)]
        root: PathBuf,
        /// Output manifest path.
        #[arg(long, default_value = "manifest.tsv")]
        out_manifest: PathBuf,
        /// Train fraction per class.
        #[arg(long, default_value_t = 0.8)]
        ratio: f64,
        #[arg(long, default_value_t = 42)]
        seed: u64,
    },
    /// Run the DSP pipeline over a manifest and write the feature cache.
    Preprocess {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long, default_value = "features.cache")]
        out_cache: PathBuf,
        /// TOML config file with [dsp] / [model] / [train] sections.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Oversubtraction factor override.
        #[arg(long)]
        alpha: Option<f64>,
        /// Mel band count override.
        #[arg(long)]
        n_mels: Option<usize>,
        /// Rebuild even when the existing cache matches the config.
        #[arg(long)]
        force: bool,
    },
    /// Train on the cache's train split and write checkpoint + history.
    Train {
        #[arg(long)]
        cache: PathBuf,
        /// Output directory (checkpoint.ckpt, history.csv, effective-config.toml).
        #[arg(long, default_value = "run")]
        out: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        batch_size: Option<usize>,
        /// Train the variant without channel attention.
        #[arg(long)]
        no_channel_attention: bool,
        /// Train the variant without frequency attention.
        #[arg(long)]
        no_frequency_attention: bool,
        /// Train the classification-only variant (no decoder).
        #[arg(long)]
        no_reconstruction: bool,
        /// Fixed task weights instead of learned uncertainty weighting.
        #[arg(long)]
        static_weights: bool,
        /// Stop when train loss stops improving (patience from config).
        #[arg(long)]
        early_stop: bool,
    },
    /// Evaluate a checkpoint on the cache's test split.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        cache: PathBuf,
        #[arg(long, default_value = "eval")]
        out: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Classify a single WAV clip.
    Infer {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        wav: PathBuf,
        #[arg(long, default_value_t = 3)]
        top_k: usize,
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Train and evaluate the four model variants with a shared seed.
    Ablate {
        #[arg(long)]
        cache: PathBuf,
        #[arg(long, default_value = "ablation")]
        out: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        epochs: Option<usize>,
    },
    /// Generate a synthetic tone dataset (for demos and self-tests).
    Synth {
        #[arg(long, default_value = "synth-data")]
        out: PathBuf,
        #[arg(long, default_value_t = 27)]
        classes: usize,
        #[arg(long, default_value_t = 8)]
        clips_per_class: usize,
        #[arg(long, default_value_t = 42)]
        seed: u64,
    },
}

fn run() -> Result<()> {
    match Cli::parse().command {
        Command::Ingest {
            root,
            out_manifest,
            ratio,
            seed,
        } => {
            ensure_parent_dir(&out_manifest)?;
            cmd_ingest(IngestParams {
                root,
                out_manifest,
                ratio,
                seed,
            })
        }
        Command::Preprocess {
            manifest,
            out_cache,
            config,
            alpha,
            n_mels,
            force,
        } => {
            let mut file_config = FileConfig::load(config.as_deref())?;
            if let Some(alpha) = alpha {
                file_config.dsp.oversubtraction = alpha;
            }
            if let Some(n_mels) = n_mels {
                file_config.dsp.n_mels = n_mels;
            }
            ensure_parent_dir(&out_cache)?;
            cmd_preprocess(
                PreprocessParams {
                    manifest,
                    out_cache,
                    force,
                },
                &file_config,
            )
        }
        Command::Train {
            cache,
            out,
            config,
            seed,
            epochs,
            batch_size,
            no_channel_attention,
            no_frequency_attention,
            no_reconstruction,
            static_weights,
            early_stop,
        } => {
            let mut file_config = FileConfig::load(config.as_deref())?;
            if let Some(seed) = seed {
                file_config.train.seed = seed;
            }
            if let Some(epochs) = epochs {
                file_config.train.epochs = epochs;
            }
            if let Some(batch_size) = batch_size {
                file_config.train.batch_size = batch_size;
            }
            if no_channel_attention {
                file_config.model.enable_channel_attention = false;
            }
            if no_frequency_attention {
                file_config.model.enable_frequency_attention = false;
            }
            if no_reconstruction {
                file_config.model.enable_reconstruction = false;
            }
            if static_weights {
                file_config.train.dynamic_weighting = false;
            }
            if early_stop {
                file_config.train.early_stop = true;
            }
            cmd_train(TrainParams { cache, out }, &file_config)
        }
        Command::Eval {
            checkpoint,
            cache,
            out,
            config,
        } => {
            let file_config = FileConfig::load(config.as_deref())?;
            cmd_eval(
                EvalParams {
                    checkpoint,
                    cache,
                    out,
                },
                &file_config,
            )
        }
        Command::Infer {
            checkpoint,
            wav,
            top_k,
            config,
        } => {
            let file_config = FileConfig::load(config.as_deref())?;
            cmd_infer(
                InferParams {
                    checkpoint,
                    wav,
                    top_k,
                },
                &file_config,
            )
        }
        Command::Ablate {
            cache,
            out,
            config,
            seed,
            epochs,
        } => {
            let mut file_config = FileConfig::load(config.as_deref())?;
            if let Some(seed) = seed {
                file_config.train.seed = seed;
            }
            if let Some(epochs) = epochs {
                file_config.train.epochs = epochs;
            }
            cmd_ablate(AblateParams { cache, out }, &file_config)
        }
        Command::Synth {
            out,
            classes,
            clips_per_class,
            seed,
        } => cmd_synth(SynthParams {
            out,
            classes,
            clips_per_class,
            seed,
        }),
    }
}

fn main() -> ExitCode {
    match run() {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
