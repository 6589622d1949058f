use std::fs;
use std::path::PathBuf;

use anyhow::{Context, Result};
use clap::Args;
use graphtone::checkpoint::Checkpoint;
use graphtone::dataset::{DatasetManifest, ManifestEntry, Sample, Split};
use graphtone::model::PreparedSample;
use graphtone::trainer::{kfold_split, KFold, LrSchedule, SchedulePreset, TrainConfig, TrainReport, Trainer};
use graphtone::AblationMode;
use log::info;
use rayon::prelude::*;

use crate::plot::{self, Series, BLUE, ORANGE};
use crate::util::{create_out, invalid, require_file, write};
use crate::GlobalArgs;

pub const MODEL_FILE: &str = "model.ckpt";
pub const STATE_FILE: &str = "state.ckpt";

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Dataset manifest written by `prepare`.
    #[arg(long)]
    pub manifest: PathBuf,

    /// TOML training configuration; flags below override its fields.
    #[arg(long)]
    pub config: Option<PathBuf>,

    /// global_lut, local_lut or gsemtmo.
    #[arg(long)]
    pub ablation: Option<AblationMode>,

    /// ablation-flat, fivek-staged or hc200-staged.
    #[arg(long)]
    pub schedule: Option<SchedulePreset>,

    /// Total number of epochs, counting those already done when resuming.
    #[arg(long)]
    pub epochs: Option<usize>,

    /// Number of cross-validation folds over the train and val entries.
    #[arg(long, requires = "fold")]
    pub kfold: Option<usize>,

    /// Held-out fold index (0-based).
    #[arg(long, requires = "kfold")]
    pub fold: Option<usize>,

    /// Continue from a `state.ckpt` of an earlier run.
    #[arg(long)]
    pub resume: Option<PathBuf>,

    /// Write checkpoints every N epochs (always after the last one).
    #[arg(long, default_value_t = 10)]
    pub checkpoint_every: usize,
}

/// Configuration file merged with command-line overrides.
pub fn effective_config(args: &TrainArgs, global: &GlobalArgs) -> Result<TrainConfig> {
    let mut config = match &args.config {
        Some(path) => {
            require_file(path, "config file")?;
            let text = fs::read_to_string(path)?;
            toml::from_str(&text).map_err(|e| invalid(format!("{}: {e}", path.display())))?
        }
        None => TrainConfig::default(),
    };
    if let Some(mode) = args.ablation {
        config.ablation_mode = mode;
    }
    if let Some(preset) = args.schedule {
        config.lr_schedule = LrSchedule::Preset(preset);
    }
    if let Some(epochs) = args.epochs {
        config.epochs = epochs;
    }
    if let (Some(k), Some(fold)) = (args.kfold, args.fold) {
        config.kfold = Some(KFold { k, fold });
    }
    if let Some(seed) = global.seed {
        config.seed = seed;
    }
    config.validate()?;
    Ok(config)
}

fn prepare_all(entries: &[&ManifestEntry], mode: AblationMode) -> Result<Vec<PreparedSample>> {
    entries
        .par_iter()
        .map(|e| {
            let s = Sample::load(e)?;
            PreparedSample::new(s.id, &s.linear, &s.segmentation, &s.reference, mode)
                .with_context(|| format!("preparing `{}`", e.id))
        })
        .collect()
}

pub fn run(args: &TrainArgs, global: &GlobalArgs) -> Result<()> {
    require_file(&args.manifest, "manifest")?;
    let config = effective_config(args, global)?;
    if args.checkpoint_every == 0 {
        return Err(invalid("--checkpoint-every must be at least 1"));
    }
    let manifest = DatasetManifest::load(&args.manifest)?;
    manifest.validate()?;

    let (train_entries, val_entries): (Vec<&ManifestEntry>, Vec<&ManifestEntry>) = match config.kfold {
        Some(KFold { k, fold }) => {
            let pool: Vec<&ManifestEntry> = manifest.split(Split::Train).chain(manifest.split(Split::Val)).collect();
            kfold_split(&pool, k, fold, config.seed)?
        }
        None => (manifest.split(Split::Train).collect(), manifest.split(Split::Val).collect()),
    };
    if train_entries.is_empty() {
        return Err(invalid("the manifest has no training entries"));
    }
    let trainer = match &args.resume {
        Some(path) => {
            require_file(path, "resume checkpoint")?;
            let ckpt = Checkpoint::load(path).with_context(|| format!("cannot resume from {}", path.display()))?;
            Trainer::resume(&config, ckpt).with_context(|| format!("cannot resume from {}", path.display()))?
        }
        None => Trainer::new(&config)?,
    };
    let train_set = prepare_all(&train_entries, config.ablation_mode)?;
    let val_set = prepare_all(&val_entries, config.ablation_mode)?;
    info!(
        "{} training / {} validation images, mode {}, {} epochs",
        train_set.len(),
        val_set.len(),
        config.ablation_mode,
        config.epochs
    );

    let out = &global.out;
    create_out(out)?;
    write(out, "config.toml", toml::to_string_pretty(&config)?)?;
    let every = args.checkpoint_every;
    let last = config.epochs;
    let outcome = trainer.run(&train_set, &val_set, |state| {
        let done = state.epochs_completed();
        if done % every == 0 || done == last {
            state.to_checkpoint().save(out.join(STATE_FILE))?;
            state.best_checkpoint().save(out.join(MODEL_FILE))?;
        }
        Ok(())
    })?;
    // Covers runs with nothing left to do.
    outcome.state.to_checkpoint().save(out.join(STATE_FILE))?;
    outcome.state.best_checkpoint().save(out.join(MODEL_FILE))?;

    write(out, "report.csv", outcome.report.to_csv())?;
    plot::save(&loss_chart(&outcome.report), &out.join("loss.png"))?;
    match (outcome.report.best_epoch, outcome.report.best_loss) {
        (Some(e), Some(l)) => println!("best loss {l:.6} at epoch {e}; model written to {}", out.join(MODEL_FILE).display()),
        _ => println!("no epochs run; model written to {}", out.join(MODEL_FILE).display()),
    }
    Ok(())
}

/// Training loss in blue, validation loss in orange, log scale.
pub fn loss_chart(report: &TrainReport) -> image::RgbImage {
    let train: Vec<(f64, f64)> = report.epochs.iter().map(|r| (r.epoch as f64, r.train_loss)).collect();
    let val: Vec<(f64, f64)> = report
        .epochs
        .iter()
        .filter_map(|r| r.val_loss.map(|v| (r.epoch as f64, v)))
        .collect();
    plot::line_chart(
        &[
            Series {
                points: &train,
                color: BLUE,
            },
            Series {
                points: &val,
                color: ORANGE,
            },
        ],
        true,
    )
}
