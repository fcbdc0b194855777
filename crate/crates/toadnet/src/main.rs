//! Command-line front end: synthesize data, train, evaluate, predict,
//! export overlays. All knobs live in one TOML config; flags override the
//! few per-invocation values.

use clap::{Parser, Subcommand, ValueEnum};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use toadnet::config::{load_run_config, RunConfig};
use toadnet::data::{load_image_f32, load_manifest, save_gray, write_dataset, ClassCounts, Label};
use toadnet::error::{Error, Result};
use toadnet::eval::{
    center_crop_to_stride, classify, evaluate_dataset, gray_channel, overlay, pad_to_stride,
    predict_image, write_reports, DEFAULT_THRESHOLD,
};
use toadnet::losses::LossKind;
use toadnet::model::{load_checkpoint, Network};
use toadnet::train::{run_training, sample_seed, split_dataset};

#[derive(Parser)]
#[command(
    name = "toadnet",
    version,
    about = "Heat-map toad detector: synthetic data, training, evaluation"
)]
struct Cli {
    /// Run configuration TOML; built-in defaults apply when omitted.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum LossArg {
    Mse,
    WeightedBce,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic dataset described by the config.
    Synth {
        /// Override the generator seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Write the dataset here instead of the configured path.
        #[arg(long, value_name = "DIR")]
        out: Option<PathBuf>,
    },
    /// Run the full training protocol and keep the best checkpoint.
    Train {
        /// Run directory for checkpoints and history.
        #[arg(long, value_name = "DIR")]
        out: Option<PathBuf>,
        /// Training loss.
        #[arg(long, value_enum)]
        loss: Option<LossArg>,
        /// Positive-pixel weight for the weighted BCE loss.
        #[arg(long)]
        wt: Option<f64>,
        /// Override the train/validation split seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Write the first epoch's augmentation traces to this JSONL file.
        #[arg(long, value_name = "FILE")]
        trace: Option<PathBuf>,
    },
    /// Score a labeled dataset and write report, histogram and miss list.
    Eval {
        #[arg(long, value_name = "DIR")]
        checkpoint: PathBuf,
        /// Dataset to score; defaults to the configured dataset.
        #[arg(long, value_name = "DIR")]
        dataset: Option<PathBuf>,
        /// Report directory; defaults to <out_dir>/eval.
        #[arg(long, value_name = "DIR")]
        out: Option<PathBuf>,
        /// Decision threshold on the whole-image score.
        #[arg(long)]
        threshold: Option<f64>,
        /// Also write one overlay PNG per true positive into this directory.
        #[arg(long, value_name = "DIR")]
        overlay_dir: Option<PathBuf>,
    },
    /// Score one image and print its class and score.
    Predict {
        #[arg(long, value_name = "DIR")]
        checkpoint: PathBuf,
        image: PathBuf,
        #[arg(long)]
        threshold: Option<f64>,
        /// Write the heat-map overlay PNG here.
        #[arg(long, value_name = "FILE")]
        overlay: Option<PathBuf>,
        /// Reflect-pad images whose sides are not multiples of 32.
        #[arg(long)]
        pad: bool,
    },
    /// Export the heat-map overlay for one image.
    Overlay {
        #[arg(long, value_name = "DIR")]
        checkpoint: PathBuf,
        image: PathBuf,
        #[arg(long, value_name = "FILE")]
        out: PathBuf,
        /// Reflect-pad images whose sides are not multiples of 32.
        #[arg(long)]
        pad: bool,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    let config = match &cli.config {
        Some(path) => load_run_config(path)?,
        None => RunConfig::default(),
    };
    match cli.command {
        Command::Synth { seed, out } => cmd_synth(config, seed, out),
        Command::Train { out, loss, wt, seed, trace } => {
            cmd_train(config, out, loss, wt, seed, trace)
        }
        Command::Eval { checkpoint, dataset, out, threshold, overlay_dir } => {
            cmd_eval(config, &checkpoint, dataset, out, threshold, overlay_dir)
        }
        Command::Predict { checkpoint, image, threshold, overlay, pad } => {
            cmd_predict(&checkpoint, &image, threshold, overlay, pad)
        }
        Command::Overlay { checkpoint, image, out, pad } => {
            cmd_overlay(&checkpoint, &image, &out, pad)
        }
    }
}

fn cmd_synth(config: RunConfig, seed: Option<u64>, out: Option<PathBuf>) -> Result<()> {
    let mut synth = config.synth;
    if let Some(s) = seed {
        synth.seed = s;
    }
    synth.validate()?;
    let root = out.unwrap_or(config.dataset);
    let manifest = write_dataset(
        &root,
        ClassCounts { toad: synth.toad, not_toad: synth.not_toad },
        synth.seed,
        synth.shape(),
    )?;
    let counts = manifest.counts();
    println!(
        "wrote {} images ({} toad / {} not_toad) to {}",
        manifest.records.len(),
        counts.toad,
        counts.not_toad,
        root.display()
    );
    Ok(())
}

fn cmd_train(
    mut config: RunConfig,
    out: Option<PathBuf>,
    loss: Option<LossArg>,
    wt: Option<f64>,
    seed: Option<u64>,
    trace: Option<PathBuf>,
) -> Result<()> {
    if let Some(kind) = loss {
        config.train.loss.kind = match kind {
            LossArg::Mse => LossKind::Mse,
            LossArg::WeightedBce => LossKind::WeightedBce,
        };
    }
    if let Some(w) = wt {
        config.train.loss.positive_weight = w;
    }
    if let Some(s) = seed {
        config.train.split_seed = s;
    }
    let out_dir = out.unwrap_or_else(|| config.out_dir.clone());
    config.validate()?;

    let manifest = load_manifest(&config.dataset)?;
    let history =
        run_training(&manifest, &config.backbone, &config.augment, &config.train, &out_dir)?;
    println!(
        "finished after {} epochs: best val loss {:.6} at epoch {} (checkpoint {})",
        history.epochs.len(),
        history.best_val_loss,
        history.best_epoch,
        history.best_checkpoint.display()
    );

    if let Some(trace_path) = trace {
        write_augment_trace(&trace_path, &config, &manifest)?;
        println!("augmentation trace written to {}", trace_path.display());
    }
    Ok(())
}

/// Re-derive epoch 0's augmentation parameters (they are pure functions of
/// the seeds) and dump them one JSON object per line.
fn write_augment_trace(
    path: &Path,
    config: &RunConfig,
    manifest: &toadnet::data::DatasetManifest,
) -> Result<()> {
    let (train_recs, _) =
        split_dataset(manifest, config.train.split_ratio, config.train.split_seed)?;
    let mut file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    for record in &train_recs {
        let seed = sample_seed(config.train.split_seed, 0, record);
        let image = record.load_image()?;
        let mask = record.load_mask()?;
        let (_, trace) =
            toadnet::augment::augment_pair_traced(&image, mask.as_ref(), seed, &config.augment)?;
        let line = serde_json::json!({
            "uid": record.uid(),
            "seed": seed,
            "steps": trace.steps,
            "forward": trace.forward,
        });
        writeln!(file, "{line}").map_err(|e| Error::io(path, e))?;
    }
    Ok(())
}

fn cmd_eval(
    config: RunConfig,
    checkpoint: &Path,
    dataset: Option<PathBuf>,
    out: Option<PathBuf>,
    threshold: Option<f64>,
    overlay_dir: Option<PathBuf>,
) -> Result<()> {
    let (network, ckpt_manifest) = load_checkpoint(checkpoint)?;
    let dataset_root = dataset.unwrap_or(config.dataset);
    let manifest = load_manifest(&dataset_root)?;
    let threshold = threshold.unwrap_or(DEFAULT_THRESHOLD);

    let report = evaluate_dataset(&network, &manifest, threshold)?;
    let out_dir = out.unwrap_or_else(|| config.out_dir.join("eval"));
    write_reports(&out_dir, &report, Some(&ckpt_manifest))?;

    let cm = &report.confusion;
    let m = &report.metrics;
    println!(
        "confusion: tp={} fp={} fn={} tn={} (P={} N={})",
        cm.true_positives,
        cm.false_positives,
        cm.false_negatives,
        cm.true_negatives,
        cm.positives(),
        cm.negatives()
    );
    println!(
        "recall {}%  precision {}%  accuracy {}%  f-measure {}%",
        m.recall.percent(),
        m.precision.percent(),
        m.accuracy.percent(),
        m.f_measure.percent()
    );
    println!("report written to {}", out_dir.display());

    if let Some(dir) = overlay_dir {
        std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        let mut written = 0usize;
        for outcome in &report.outcomes {
            if !(outcome.label == Label::Toad && outcome.predicted == Label::Toad) {
                continue;
            }
            let record = manifest
                .records
                .iter()
                .find(|r| r.uid() == outcome.uid)
                .expect("outcome uids come from the manifest");
            let image = record.load_image()?;
            let out_path = dir.join(format!("{}.png", outcome.uid));
            write_overlay_png(&network, &image, &out_path, false)?;
            written += 1;
        }
        println!("{written} overlays written to {}", dir.display());
    }
    Ok(())
}

/// Predict on an image and write the overlay of its center-cropped gray
/// version. `pad` grows undersized images instead of failing.
fn write_overlay_png(network: &Network, image: &ndarray::Array3<f32>, out: &Path, pad: bool) -> Result<()> {
    let image = if pad { pad_to_stride(image)? } else { image.clone() };
    let (_, heat) = predict_image(network, &image)?;
    let cropped = center_crop_to_stride(&image)?;
    let gray = gray_channel(&cropped)?;
    let composed = overlay(&heat, &gray)?;
    if let Some(parent) = out.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
    }
    save_gray(out, &composed)
}

fn cmd_predict(
    checkpoint: &Path,
    image_path: &Path,
    threshold: Option<f64>,
    overlay_out: Option<PathBuf>,
    pad: bool,
) -> Result<()> {
    let (network, _) = load_checkpoint(checkpoint)?;
    let raw = load_image_f32(image_path)?;
    let image = if pad { pad_to_stride(&raw)? } else { raw };
    let (score, _) = predict_image(&network, &image)?;
    let threshold = threshold.unwrap_or(DEFAULT_THRESHOLD);
    println!("{}  score={:.4}", classify(score, threshold).dir_name(), score);
    if let Some(out) = overlay_out {
        write_overlay_png(&network, &image, &out, false)?;
        println!("overlay written to {}", out.display());
    }
    Ok(())
}

fn cmd_overlay(checkpoint: &Path, image_path: &Path, out: &Path, pad: bool) -> Result<()> {
    let (network, _) = load_checkpoint(checkpoint)?;
    let image = load_image_f32(image_path)?;
    write_overlay_png(&network, &image, out, pad)?;
    println!("overlay written to {}", out.display());
    Ok(())
}
