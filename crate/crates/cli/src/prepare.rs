use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use clap::Args;
use graphtone::dataset::{
    self, evaluate_filters, DatasetManifest, FilterConfig, FilterRecord, LabelTable, ManifestEntry, Split,
    DEFAULT_SATURATION_CUTOFF, DEFAULT_SATURATION_THRESHOLD,
};
use graphtone::rng::{stream_rng, Stream};
use graphtone::{DisplayImage, LinearImage, SegmentationMap};
use log::{info, warn};
use rand::seq::SliceRandom;
use rayon::prelude::*;

use crate::util::{create_out, images_by_stem, invalid, parse_size, require_dir, require_file, write};
use crate::GlobalArgs;

#[derive(Debug, Args)]
pub struct PrepareArgs {
    /// Directory of 16-bit linear RGB images.
    #[arg(long)]
    pub input: PathBuf,

    /// Directory of segmentation maps, matched to inputs by file stem.
    #[arg(long)]
    pub seg: PathBuf,

    /// Directory of display-encoded references, matched by file stem.
    #[arg(long = "ref")]
    pub reference: PathBuf,

    /// Treat segmentation files as fine labels and merge them to the coarse
    /// classes with this table (`default` for the built-in ADE20K table).
    #[arg(long)]
    pub label_table: Option<String>,

    /// Reject images whose saturated-pixel fraction exceeds this.
    #[arg(long, default_value_t = DEFAULT_SATURATION_THRESHOLD)]
    pub saturation_threshold: f64,

    /// A pixel is saturated when any channel exceeds this value.
    #[arg(long, default_value_t = DEFAULT_SATURATION_CUTOFF)]
    pub saturation_cutoff: f64,

    /// Disable the saturation filter.
    #[arg(long)]
    pub no_saturation_filter: bool,

    /// Keep only images with at least this log10(P99/P1) luminance range.
    #[arg(long)]
    pub min_dynamic_range: Option<f64>,

    /// Keep only images with at least this many distinct segment labels.
    #[arg(long)]
    pub min_segments: Option<usize>,

    /// Output resolution of the prepared triples.
    #[arg(long, default_value = "100x100", value_parser = parse_size)]
    pub resize: (usize, usize),

    /// Keep the original resolution.
    #[arg(long, conflicts_with = "resize")]
    pub no_resize: bool,

    /// Fraction of kept entries tagged `val`.
    #[arg(long, default_value_t = 0.0)]
    pub val_fraction: f64,

    /// Fraction of kept entries tagged `test`.
    #[arg(long, default_value_t = 0.0)]
    pub test_fraction: f64,
}

impl PrepareArgs {
    fn filters(&self) -> FilterConfig {
        FilterConfig {
            saturation_threshold: (!self.no_saturation_filter).then_some(self.saturation_threshold),
            saturation_cutoff: self.saturation_cutoff,
            min_dynamic_range: self.min_dynamic_range,
            min_segments: self.min_segments,
        }
    }
}

struct Candidate {
    id: String,
    linear: PathBuf,
    seg: PathBuf,
    reference: PathBuf,
}

struct Prepared {
    record: FilterRecord,
    triple: Option<(LinearImage, SegmentationMap, DisplayImage)>,
}

fn load_seg(path: &Path, table: Option<&LabelTable>) -> graphtone::Result<SegmentationMap> {
    match table {
        Some(t) => Ok(dataset::merge_labels(&dataset::load_fine_labels(path)?, t)?.0),
        None => dataset::load_segmentation(path),
    }
}

fn process(c: &Candidate, table: Option<&LabelTable>, filters: &FilterConfig, size: Option<(usize, usize)>) -> graphtone::Result<Prepared> {
    let linear = dataset::load_linear(&c.linear)?;
    let seg = load_seg(&c.seg, table)?;
    let reference = dataset::load_reference(&c.reference)?;
    let record = evaluate_filters(&c.id, &linear, &seg, &reference, filters)?;
    if !record.kept {
        return Ok(Prepared { record, triple: None });
    }
    let (w, h) = size.unwrap_or(linear.dims());
    let triple = dataset::resize_pair(&linear, &seg, &reference, w, h)?;
    Ok(Prepared {
        record,
        triple: Some(triple),
    })
}

pub fn run(args: &PrepareArgs, global: &GlobalArgs) -> Result<()> {
    require_dir(&args.input, "input directory")?;
    require_dir(&args.seg, "segmentation directory")?;
    require_dir(&args.reference, "reference directory")?;
    let filters = args.filters();
    filters.validate()?;
    for (name, f) in [("val", args.val_fraction), ("test", args.test_fraction)] {
        if !(0.0..=1.0).contains(&f) {
            return Err(invalid(format!("--{name}-fraction must lie in [0, 1], got {f}")));
        }
    }
    if args.val_fraction + args.test_fraction > 1.0 {
        return Err(invalid("val and test fractions add up to more than 1"));
    }
    let table = match args.label_table.as_deref() {
        None => None,
        Some("default") => Some(LabelTable::ade20k()),
        Some(path) => {
            require_file(Path::new(path), "label table")?;
            Some(LabelTable::load(path)?)
        }
    };

    let inputs = images_by_stem(&args.input)?;
    if inputs.is_empty() {
        return Err(invalid(format!("no images found in {}", args.input.display())));
    }
    let segs = images_by_stem(&args.seg)?;
    let refs = images_by_stem(&args.reference)?;
    let mut candidates = Vec::new();
    for (id, linear) in &inputs {
        match (segs.get(id), refs.get(id)) {
            (Some(seg), Some(reference)) => candidates.push(Candidate {
                id: id.clone(),
                linear: linear.clone(),
                seg: seg.clone(),
                reference: reference.clone(),
            }),
            (None, _) => warn!("skipping `{id}`: no segmentation map"),
            (_, None) => warn!("skipping `{id}`: no reference"),
        }
    }
    if candidates.is_empty() {
        return Err(invalid("no input has both a segmentation map and a reference"));
    }

    let size = (!args.no_resize).then_some(args.resize);
    let results: Vec<Option<Prepared>> = candidates
        .par_iter()
        .map(|c| match process(c, table.as_ref(), &filters, size) {
            Ok(p) => Some(p),
            Err(e) => {
                warn!("skipping `{}`: {e}", c.id);
                None
            }
        })
        .collect();

    let out = &global.out;
    create_out(out)?;
    let mut report = Vec::new();
    let mut entries = Vec::new();
    for p in results.into_iter().flatten() {
        if let Some((linear, seg, reference)) = &p.triple {
            let id = &p.record.id;
            let rel = |dir: &str| PathBuf::from(dir).join(format!("{id}.png"));
            dataset::save_linear(linear, out.join(rel("linear")))?;
            dataset::save_segmentation(seg, out.join(rel("segmentation")))?;
            dataset::save_display(reference, out.join(rel("reference")), true)?;
            entries.push(ManifestEntry {
                id: id.clone(),
                linear: rel("linear"),
                segmentation: rel("segmentation"),
                reference: rel("reference"),
                split: Split::Train,
            });
        } else {
            info!("rejected `{}`: {}", p.record.id, p.record.reasons.join("; "));
        }
        report.push(p.record);
    }
    assign_splits(&mut entries, args.val_fraction, args.test_fraction, global.seed.unwrap_or(0));

    let manifest = DatasetManifest { entries, report };
    manifest.save(out.join("manifest.json")).context("writing manifest")?;
    write(out, "filter_report.csv", report_csv(&manifest.report))?;
    let kept = manifest.entries.len();
    println!(
        "kept {kept} of {} candidates ({} rejected); manifest at {}",
        manifest.report.len(),
        manifest.report.len() - kept,
        out.join("manifest.json").display()
    );
    Ok(())
}

/// Seeded assignment of `test` and `val` tags; the rest stay `train`.
fn assign_splits(entries: &mut [ManifestEntry], val: f64, test: f64, seed: u64) {
    let n = entries.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut stream_rng(seed, Stream::Split));
    let n_test = (test * n as f64).round() as usize;
    let n_val = ((val * n as f64).round() as usize).min(n - n_test);
    for (k, &i) in order.iter().enumerate() {
        entries[i].split = if k < n_test {
            Split::Test
        } else if k < n_test + n_val {
            Split::Val
        } else {
            Split::Train
        };
    }
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(String::new, |v| v.to_string())
}

fn report_csv(report: &[FilterRecord]) -> String {
    let mut s = String::from("id,saturation_fraction,dynamic_range,segment_count,contrast,kept,reasons\n");
    for r in report {
        s.push_str(&format!(
            "{},{},{},{},{},{},\"{}\"\n",
            r.id,
            r.saturation_fraction,
            opt(r.dynamic_range),
            r.segment_count,
            opt(r.contrast),
            r.kept,
            r.reasons.join("; ")
        ));
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    fn entry(i: usize) -> ManifestEntry {
        ManifestEntry {
            id: format!("e{i}"),
            linear: PathBuf::new(),
            segmentation: PathBuf::new(),
            reference: PathBuf::new(),
            split: Split::Train,
        }
    }

    #[test]
    fn split_counts_follow_fractions() {
        let mut e: Vec<_> = (0..20).map(entry).collect();
        assign_splits(&mut e, 0.25, 0.1, 3);
        let count = |s| e.iter().filter(|x| x.split == s).count();
        assert_eq!((count(Split::Train), count(Split::Val), count(Split::Test)), (13, 5, 2));
        let mut again: Vec<_> = (0..20).map(entry).collect();
        assign_splits(&mut again, 0.25, 0.1, 3);
        assert_eq!(e, again);
    }
}
