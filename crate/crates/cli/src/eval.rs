use std::path::PathBuf;

use anyhow::{Context, Result};
use clap::{Args, ValueEnum};
use graphtone::dataset::{self, DatasetManifest};
use graphtone::metrics::{hc_select, image_contrast, score_pair, MetricSummary, ScoreReport, Transfer, CONTRAST_LEVELS};
use log::warn;
use rayon::prelude::*;
use serde::Serialize;

use crate::plot;
use crate::util::{create_out, images_by_stem, invalid, require_dir, require_file, write};
use crate::GlobalArgs;

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum TransferArg {
    Srgb,
    Gamma22,
}

impl From<TransferArg> for Transfer {
    fn from(t: TransferArg) -> Self {
        match t {
            TransferArg::Srgb => Transfer::Srgb,
            TransferArg::Gamma22 => Transfer::Gamma22,
        }
    }
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Directory of predicted images.
    #[arg(long)]
    pub pred: PathBuf,

    /// Directory of reference images, matched by file stem.
    #[arg(long = "ref")]
    pub reference: PathBuf,

    /// Decoding applied before the CIELAB conversion.
    #[arg(long, value_enum, default_value = "srgb")]
    pub transfer: TransferArg,

    /// Histogram bins per metric.
    #[arg(long, default_value_t = 20)]
    pub bins: usize,

    /// Bootstrap resamples for the median confidence intervals.
    #[arg(long, default_value_t = 10_000)]
    pub resamples: usize,
}

#[derive(Serialize)]
struct Unmatched {
    missing_reference: Vec<String>,
    missing_prediction: Vec<String>,
}

pub fn run(args: &EvalArgs, global: &GlobalArgs) -> Result<()> {
    require_dir(&args.pred, "prediction directory")?;
    require_dir(&args.reference, "reference directory")?;
    if args.bins == 0 || args.resamples == 0 {
        return Err(invalid("--bins and --resamples must be positive"));
    }
    let preds = images_by_stem(&args.pred)?;
    let refs = images_by_stem(&args.reference)?;
    let unmatched = Unmatched {
        missing_reference: preds.keys().filter(|k| !refs.contains_key(*k)).cloned().collect(),
        missing_prediction: refs.keys().filter(|k| !preds.contains_key(*k)).cloned().collect(),
    };
    for id in &unmatched.missing_reference {
        warn!("skipping `{id}`: no reference");
    }
    for id in &unmatched.missing_prediction {
        warn!("skipping `{id}`: no prediction");
    }
    let pairs: Vec<(&String, &PathBuf, &PathBuf)> = preds
        .iter()
        .filter_map(|(id, p)| refs.get(id).map(|r| (id, p, r)))
        .collect();
    if pairs.is_empty() {
        return Err(invalid("no prediction has a reference with the same file name"));
    }

    let transfer = Transfer::from(args.transfer);
    let scored: Vec<_> = pairs
        .par_iter()
        .map(|&(id, p, r)| {
            let pred = dataset::load_reference(p)?;
            let reference = dataset::load_reference(r)?;
            score_pair(id.clone(), &pred, &reference, transfer).with_context(|| format!("scoring `{id}`"))
        })
        .collect();
    let mut scores = Vec::new();
    for s in scored {
        match s {
            Ok(s) => scores.push(s),
            Err(e) => warn!("{e:#}"),
        }
    }
    if scores.is_empty() {
        return Err(anyhow::anyhow!("no pair could be scored"));
    }
    let report = ScoreReport::new(scores, args.bins, args.resamples, global.seed.unwrap_or(0))?;

    let out = &global.out;
    create_out(out)?;
    write(out, "scores.csv", report.to_csv())?;
    write(out, "summary.json", serde_json::to_string_pretty(&report)?)?;
    if !unmatched.missing_reference.is_empty() || !unmatched.missing_prediction.is_empty() {
        write(out, "unmatched.json", serde_json::to_string_pretty(&unmatched)?)?;
    }
    for (name, m) in summaries(&report) {
        plot::save(
            &plot::histogram_chart(&m.histogram, m.median, m.ci_lo, m.ci_hi),
            &out.join(format!("hist_{name}.png")),
        )?;
    }
    for (name, m) in summaries(&report) {
        println!("{name:>8}: median {} (95% CI {} .. {})", m.median, m.ci_lo, m.ci_hi);
    }
    println!("scored {} pairs; skipped {} unmatched", report.count, unmatched.missing_reference.len() + unmatched.missing_prediction.len());
    Ok(())
}

fn summaries(r: &ScoreReport) -> [(&'static str, &MetricSummary); 4] {
    [("psnr", &r.psnr), ("hyab", &r.hyab), ("ms_ssim", &r.ms_ssim), ("c_ml", &r.c_ml)]
}

#[derive(Debug, Args)]
pub struct ContrastSelectArgs {
    /// Manifest to select from.
    #[arg(long)]
    pub manifest: PathBuf,

    /// Number of entries to keep.
    #[arg(long, default_value_t = 200)]
    pub count: usize,
}

pub fn contrast_select(args: &ContrastSelectArgs, global: &GlobalArgs) -> Result<()> {
    require_file(&args.manifest, "manifest")?;
    let mut manifest = DatasetManifest::load(&args.manifest)?;
    manifest.validate()?;
    for e in &mut manifest.entries {
        for p in [&mut e.linear, &mut e.segmentation, &mut e.reference] {
            *p = p.canonicalize().with_context(|| format!("resolving {}", p.display()))?;
        }
    }
    let contrast: Vec<f64> = manifest
        .entries
        .par_iter()
        .map(|e| -> Result<f64> {
            let reference = dataset::load_reference(&e.reference)?;
            Ok(image_contrast(&reference, CONTRAST_LEVELS)?)
        })
        .collect::<Result<_>>()?;
    let keep = hc_select(&contrast, args.count);

    let mut csv = String::from("id,c_ml,selected\n");
    for (i, (e, c)) in manifest.entries.iter().zip(&contrast).enumerate() {
        csv.push_str(&format!("{},{},{}\n", e.id, c, keep.binary_search(&i).is_ok()));
    }
    let ids: Vec<&str> = keep.iter().map(|&i| manifest.entries[i].id.as_str()).collect();
    let selected = DatasetManifest {
        entries: keep.iter().map(|&i| manifest.entries[i].clone()).collect(),
        report: manifest
            .report
            .iter()
            .filter(|r| ids.contains(&r.id.as_str()))
            .cloned()
            .collect(),
    };
    create_out(&global.out)?;
    write(&global.out, "contrast.csv", csv)?;
    selected.save(global.out.join("manifest.json"))?;
    println!("selected {} of {} entries", selected.entries.len(), manifest.entries.len());
    Ok(())
}
