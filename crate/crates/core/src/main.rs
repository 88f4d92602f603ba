use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use tumorscan::config::{PipelineConfig, TrainOn};
use tumorscan::dataset::ClassLabel;
use tumorscan::pipeline::{self, SplitName};
use tumorscan::synth::SynthConfig;
use tumorscan::Result;

#[derive(Parser)]
#[command(
    name = "tumorscan",
    version,
    about = "Tumor segmentation and classification pipeline"
)]
struct Cli {
    /// TOML pipeline configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Top-level seed; overrides the config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory; overrides the config.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic corpus with masks and a manifest.
    Synth {
        #[arg(long, default_value_t = 200)]
        n: usize,
        #[arg(long, default_value_t = 64)]
        size: usize,
        /// Comma-separated labels cycled over the positive samples.
        #[arg(long, value_delimiter = ',', default_value = "glioma")]
        classes: Vec<ClassLabel>,
    },
    /// Write `<id>_pre.png` for the given sample ids.
    Preprocess {
        ids: Vec<String>,
        /// Every sample in the manifest.
        #[arg(long, conflicts_with = "ids")]
        all: bool,
    },
    /// WCSS-vs-k scan; prints the chosen k.
    Elbow {
        /// Scan one image instead of the pooled sample.
        #[arg(long)]
        image: Option<String>,
        #[arg(long)]
        k_max: Option<usize>,
    },
    /// Cluster-based masks and the IoU report.
    Segment,
    /// Train the classifier; writes the report, plots and checkpoint.
    Train {
        #[arg(long)]
        train_on: Option<TrainOn>,
        #[arg(long)]
        epochs: Option<usize>,
    },
    /// Loss and accuracy of a checkpoint on a split.
    Evaluate {
        /// Defaults to `model.json` under the output directory.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long, default_value = "test")]
        split: SplitName,
        #[arg(long)]
        train_on: Option<TrainOn>,
    },
}

fn load_config(cli: &Cli) -> Result<PipelineConfig> {
    let mut cfg = match &cli.config {
        Some(path) => PipelineConfig::load(path)?,
        None => PipelineConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &cli.out {
        cfg.out = out.clone();
    }
    Ok(cfg)
}

fn run(cli: Cli) -> Result<bool> {
    let mut cfg = load_config(&cli)?;
    match cli.command {
        Command::Synth { n, size, classes } => {
            let synth = SynthConfig {
                n,
                size,
                seed: tumorscan::seed::derive_seed(cfg.seed, "synth", "corpus", 0),
                tumor_classes: classes,
            };
            let manifest = pipeline::cmd_synth(&cfg.out, &synth)?;
            println!("wrote {n} samples; manifest {}", manifest.display());
        }
        Command::Preprocess { ids, all } => {
            let ids = if all {
                tumorscan::dataset::load_manifest(&cfg.manifest_path())?.ids()
            } else {
                ids
            };
            let outcome = pipeline::cmd_preprocess(&cfg, &ids)?;
            for (id, e) in &outcome.failures {
                eprintln!("error: {id}: {e}");
            }
            println!("wrote {} preprocessed images", outcome.written.len());
            return Ok(outcome.failures.is_empty());
        }
        Command::Elbow { image, k_max } => {
            if let Some(k) = k_max {
                cfg.segment.k_max = k;
            }
            let result = pipeline::cmd_elbow(&cfg, image.as_deref())?;
            println!("chosen k: {}", result.chosen_k);
        }
        Command::Segment => {
            let outcome = pipeline::cmd_segment(&cfg)?;
            for id in &outcome.skipped {
                eprintln!("warning: {id}: no ground-truth mask, not scored");
            }
            println!("class,mean_iou,detection_rate,detected,total");
            for s in outcome.report.per_class.values() {
                println!(
                    "{},{},{:.4},{},{}",
                    s.class,
                    s.mean_iou
                        .map(|m| format!("{m:.4}"))
                        .unwrap_or_else(|| "n/a".into()),
                    s.detection_rate,
                    s.detected,
                    s.total
                );
            }
            println!(
                "scored {} samples, skipped {} without masks",
                outcome.report.per_image.len(),
                outcome.skipped.len()
            );
        }
        Command::Train { train_on, epochs } => {
            if let Some(t) = train_on {
                cfg.train.train_on = t;
            }
            if let Some(e) = epochs {
                cfg.train.epochs = e;
            }
            let outcome = pipeline::cmd_train(&cfg)?;
            let r = &outcome.report;
            println!("peak train accuracy: {:.4}", r.peak_train_acc());
            println!("peak test accuracy: {:.4}", r.peak_test_acc());
        }
        Command::Evaluate {
            checkpoint,
            split,
            train_on,
        } => {
            if let Some(t) = train_on {
                cfg.train.train_on = t;
            }
            let path = checkpoint.unwrap_or_else(|| cfg.out.join(pipeline::CHECKPOINT));
            let (loss, acc) = pipeline::cmd_evaluate(&cfg, &path, split)?;
            println!("loss: {loss}");
            println!("accuracy: {acc}");
        }
    }
    Ok(true)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
