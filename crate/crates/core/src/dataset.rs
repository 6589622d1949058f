//! Loading image triples, dataset filters, label merging and manifests.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};

use image::{DynamicImage, ImageBuffer, Luma, Rgb};
use log::warn;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::raster::{luma, CoarseClass, DisplayImage, LinearImage, RgbImage, SegmentationMap};
use crate::stats::percentile_sorted;

pub const DEFAULT_SATURATION_CUTOFF: f64 = 0.99;
pub const DEFAULT_SATURATION_THRESHOLD: f64 = 0.03;
pub const DEFAULT_MIN_DYNAMIC_RANGE: f64 = 2.2;
pub const DEFAULT_MIN_SEGMENTS: usize = 3;
pub const TRAINING_SIZE: (usize, usize) = (100, 100);

/// Smallest non-zero 16-bit code value, used as the floor for the low
/// luminance percentile.
pub const LUMINANCE_FLOOR: f64 = 1.0 / 65535.0;

const DEFAULT_LABEL_TABLE: &str = include_str!("../data/ade20k_coarse.txt");

fn decode(path: &Path) -> Result<DynamicImage> {
    if !path.exists() {
        return Err(Error::ingest(path, "file not found"));
    }
    image::ImageReader::open(path)
        .map_err(|e| Error::ingest(path, e.to_string()))?
        .with_guessed_format()
        .map_err(|e| Error::ingest(path, e.to_string()))?
        .decode()
        .map_err(|e| Error::ingest(path, e.to_string()))
}

fn bytes_per_channel(img: &DynamicImage) -> usize {
    let c = img.color();
    c.bytes_per_pixel() as usize / c.channel_count() as usize
}

/// Loads a 16-bit linear RGB file, normalising by 65535 with no transfer
/// curve applied.
pub fn load_linear(path: impl AsRef<Path>) -> Result<LinearImage> {
    let path = path.as_ref();
    let img = decode(path)?;
    if bytes_per_channel(&img) != 2 {
        return Err(Error::ingest(path, "unsupported bit depth: expected 16 bits per channel"));
    }
    if img.color().channel_count() != 3 {
        return Err(Error::ingest(
            path,
            format!("expected 3 channels, found {}", img.color().channel_count()),
        ));
    }
    let buf = img.into_rgb16();
    let (w, h) = (buf.width() as usize, buf.height() as usize);
    let pixels = buf
        .pixels()
        .map(|p| p.0.map(|v| v as f64 / 65535.0))
        .collect();
    Ok(LinearImage(RgbImage::new(w, h, pixels)?))
}

/// Loads a display-encoded reference in 8 or 16 bits; an alpha channel is
/// dropped.
pub fn load_reference(path: impl AsRef<Path>) -> Result<DisplayImage> {
    let path = path.as_ref();
    let img = decode(path)?;
    let channels = img.color().channel_count();
    if channels < 3 {
        return Err(Error::ingest(path, format!("expected RGB, found {channels} channel(s)")));
    }
    let (w, h) = (img.width() as usize, img.height() as usize);
    let pixels = match bytes_per_channel(&img) {
        1 => img.into_rgb8().pixels().map(|p| p.0.map(|v| v as f64 / 255.0)).collect(),
        2 => img.into_rgb16().pixels().map(|p| p.0.map(|v| v as f64 / 65535.0)).collect(),
        _ => return Err(Error::ingest(path, "unsupported bit depth: expected 8 or 16 bits")),
    };
    Ok(DisplayImage(RgbImage::new(w, h, pixels)?))
}

/// Loads an 8-bit single-channel map of coarse labels.
pub fn load_segmentation(path: impl AsRef<Path>) -> Result<SegmentationMap> {
    let path = path.as_ref();
    let img = decode(path)?;
    if img.color() != image::ColorType::L8 {
        return Err(Error::ingest(path, "segmentation must be 8-bit single channel"));
    }
    let buf = img.into_luma8();
    let (w, h) = (buf.width() as usize, buf.height() as usize);
    SegmentationMap::new(w, h, buf.into_raw()).map_err(|e| Error::ingest(path, e.to_string()))
}

/// Loads a fine-label map (8- or 16-bit single channel) for [`merge_labels`].
pub fn load_fine_labels(path: impl AsRef<Path>) -> Result<FineLabelMap> {
    let path = path.as_ref();
    let img = decode(path)?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    let labels = match img.color() {
        image::ColorType::L8 => img.into_luma8().into_raw().into_iter().map(u16::from).collect(),
        image::ColorType::L16 => img.into_luma16().into_raw(),
        other => {
            return Err(Error::ingest(path, format!("fine labels must be single channel, found {other:?}")))
        }
    };
    Ok(FineLabelMap {
        width: w,
        height: h,
        labels,
    })
}

fn ensure_parent(path: &Path) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent)?;
        }
    }
    Ok(())
}

fn to_u16(v: f64) -> u16 {
    (v.clamp(0.0, 1.0) * 65535.0).round() as u16
}

fn to_u8(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

fn save_rgb16(img: &RgbImage, path: &Path) -> Result<()> {
    ensure_parent(path)?;
    let mut raw = Vec::with_capacity(img.pixels().len() * 3);
    for p in img.pixels() {
        raw.extend(p.iter().map(|&v| to_u16(v)));
    }
    let buf: ImageBuffer<Rgb<u16>, _> =
        ImageBuffer::from_raw(img.width() as u32, img.height() as u32, raw)
            .ok_or_else(|| Error::Internal("buffer size".into()))?;
    buf.save(path).map_err(|e| Error::ingest(path, e.to_string()))
}

pub fn save_linear(img: &LinearImage, path: impl AsRef<Path>) -> Result<()> {
    save_rgb16(img, path.as_ref())
}

/// Writes a display-encoded image at 8 or 16 bits per channel.
pub fn save_display(img: &DisplayImage, path: impl AsRef<Path>, sixteen_bit: bool) -> Result<()> {
    let path = path.as_ref();
    if sixteen_bit {
        return save_rgb16(img, path);
    }
    ensure_parent(path)?;
    let mut raw = Vec::with_capacity(img.pixels().len() * 3);
    for p in img.pixels() {
        raw.extend(p.iter().map(|&v| to_u8(v)));
    }
    let buf: ImageBuffer<Rgb<u8>, _> =
        ImageBuffer::from_raw(img.width() as u32, img.height() as u32, raw)
            .ok_or_else(|| Error::Internal("buffer size".into()))?;
    buf.save(path).map_err(|e| Error::ingest(path, e.to_string()))
}

/// Writes a single-channel `[0, 1]` map as an 8-bit grey PNG.
pub fn save_gray(values: &[f64], width: usize, height: usize, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    ensure_parent(path)?;
    let raw = values.iter().map(|&v| to_u8(v)).collect();
    let buf: ImageBuffer<Luma<u8>, Vec<u8>> = ImageBuffer::from_raw(width as u32, height as u32, raw)
        .ok_or_else(|| Error::Internal("buffer size".into()))?;
    buf.save(path).map_err(|e| Error::ingest(path, e.to_string()))
}

pub fn save_segmentation(seg: &SegmentationMap, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    ensure_parent(path)?;
    let buf: ImageBuffer<Luma<u8>, Vec<u8>> =
        ImageBuffer::from_raw(seg.width() as u32, seg.height() as u32, seg.labels().to_vec())
            .ok_or_else(|| Error::Internal("buffer size".into()))?;
    buf.save(path).map_err(|e| Error::ingest(path, e.to_string()))
}

/// Fraction of pixels with any channel strictly above `cutoff`.
pub fn saturation_fraction(img: &LinearImage, cutoff: f64) -> f64 {
    let n = img.pixels().len();
    if n == 0 {
        return 0.0;
    }
    let saturated = img
        .pixels()
        .iter()
        .filter(|p| p.iter().any(|&v| v > cutoff))
        .count();
    saturated as f64 / n as f64
}

/// `log10(P99 / P1)` of Rec.709 luminance; the low percentile is floored at
/// [`LUMINANCE_FLOOR`].
pub fn dynamic_range(img: &LinearImage) -> Result<f64> {
    let mut lum: Vec<f64> = img.pixels().iter().map(|&p| luma(p)).collect();
    if !lum.iter().any(|&l| l > 0.0) {
        return Err(Error::UndefinedRange);
    }
    lum.sort_by(f64::total_cmp);
    let p99 = percentile_sorted(&lum, 99.0).unwrap_or(0.0);
    let p1 = percentile_sorted(&lum, 1.0).unwrap_or(0.0).max(LUMINANCE_FLOOR);
    Ok((p99.max(LUMINANCE_FLOOR) / p1).log10())
}

/// True iff at least `min_labels` distinct labels are present.
pub fn segment_count_filter(seg: &SegmentationMap, min_labels: usize) -> Result<bool> {
    if seg.is_empty() {
        return Err(Error::EmptyMap);
    }
    Ok(seg.distinct_labels().len() >= min_labels)
}

/// Which dataset filters run and their thresholds. `None` disables the
/// dynamic-range or segment-count filter.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FilterConfig {
    /// Reject when more than this fraction of pixels is saturated.
    pub saturation_threshold: Option<f64>,
    pub saturation_cutoff: f64,
    /// Keep only images with at least this `log10(P99/P1)`.
    pub min_dynamic_range: Option<f64>,
    pub min_segments: Option<usize>,
}

impl Default for FilterConfig {
    fn default() -> Self {
        Self {
            saturation_threshold: Some(DEFAULT_SATURATION_THRESHOLD),
            saturation_cutoff: DEFAULT_SATURATION_CUTOFF,
            min_dynamic_range: None,
            min_segments: None,
        }
    }
}

impl FilterConfig {
    /// Every filter disabled.
    pub fn none() -> Self {
        Self {
            saturation_threshold: None,
            min_dynamic_range: None,
            min_segments: None,
            ..Self::default()
        }
    }

    /// Saturation, dynamic-range and segment-count filters at their
    /// default thresholds.
    pub fn all() -> Self {
        Self {
            min_dynamic_range: Some(DEFAULT_MIN_DYNAMIC_RANGE),
            min_segments: Some(DEFAULT_MIN_SEGMENTS),
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.saturation_cutoff > 0.0 && self.saturation_cutoff < 1.0) {
            return Err(Error::Usage(format!(
                "saturation cutoff must lie in (0, 1), got {}",
                self.saturation_cutoff
            )));
        }
        if let Some(t) = self.saturation_threshold {
            if !(0.0..=1.0).contains(&t) {
                return Err(Error::Usage(format!("saturation threshold must lie in [0, 1], got {t}")));
            }
        }
        Ok(())
    }
}

/// Computes the filter statistics of one candidate and decides whether it
/// is kept. Contrast is measured on the reference.
pub fn evaluate_filters(
    id: &str,
    img: &LinearImage,
    seg: &SegmentationMap,
    reference: &DisplayImage,
    config: &FilterConfig,
) -> Result<FilterRecord> {
    let saturation = saturation_fraction(img, config.saturation_cutoff);
    let range = dynamic_range(img).ok();
    let segment_count = seg.distinct_labels().len();
    if seg.is_empty() {
        return Err(Error::EmptyMap);
    }
    let contrast = crate::metrics::image_contrast(reference, crate::metrics::CONTRAST_LEVELS).ok();
    let mut reasons = Vec::new();
    if let Some(t) = config.saturation_threshold {
        if saturation > t {
            reasons.push(format!("saturated fraction {saturation:.4} above {t}"));
        }
    }
    if let Some(min) = config.min_dynamic_range {
        match range {
            Some(r) if r >= min => {}
            Some(r) => reasons.push(format!("dynamic range {r:.3} below {min}")),
            None => reasons.push("dynamic range undefined (all-zero luminance)".into()),
        }
    }
    if let Some(min) = config.min_segments {
        if segment_count < min {
            reasons.push(format!("{segment_count} segments, need {min}"));
        }
    }
    Ok(FilterRecord {
        id: id.to_string(),
        saturation_fraction: saturation,
        dynamic_range: range,
        segment_count,
        contrast,
        kept: reasons.is_empty(),
        reasons,
    })
}

/// Resizes a training triple: bilinear for the two images, nearest-neighbour
/// for labels. The segmentation may arrive at a different resolution as long
/// as its aspect ratio matches.
pub fn resize_pair(
    img: &LinearImage,
    seg: &SegmentationMap,
    reference: &DisplayImage,
    width: usize,
    height: usize,
) -> Result<(LinearImage, SegmentationMap, DisplayImage)> {
    if img.dims() != reference.dims() {
        return Err(Error::ingest(
            "<reference>",
            format!(
                "image is {}x{} but reference is {}x{}",
                img.width(),
                img.height(),
                reference.width(),
                reference.height()
            ),
        ));
    }
    let aspect = |w: usize, h: usize| w as f64 / h as f64;
    if (aspect(img.width(), img.height()) - aspect(seg.width(), seg.height())).abs()
        > 0.01 * aspect(img.width(), img.height())
    {
        return Err(Error::ingest(
            "<segmentation>",
            format!(
                "segmentation {}x{} does not match image aspect {}x{}",
                seg.width(),
                seg.height(),
                img.width(),
                img.height()
            ),
        ));
    }
    Ok((
        LinearImage(img.resize_bilinear(width, height)),
        seg.resize_nearest(width, height),
        DisplayImage(reference.resize_bilinear(width, height)),
    ))
}

/// Per-pixel fine labels (e.g. a 150-class scene parser output).
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FineLabelMap {
    pub width: usize,
    pub height: usize,
    pub labels: Vec<u16>,
}

/// Fine → coarse label lookup.
#[derive(Clone, Debug, PartialEq, Eq, Default)]
pub struct LabelTable {
    map: BTreeMap<u16, CoarseClass>,
}

impl LabelTable {
    /// The shipped ADE20K grouping.
    pub fn ade20k() -> Self {
        Self::parse(DEFAULT_LABEL_TABLE).expect("built-in label table parses")
    }

    pub fn from_pairs(pairs: impl IntoIterator<Item = (u16, CoarseClass)>) -> Self {
        Self {
            map: pairs.into_iter().collect(),
        }
    }

    /// Parses `<fine> <coarse>` lines; `#` starts a comment. The coarse class
    /// may be given by name or by index.
    pub fn parse(text: &str) -> Result<Self> {
        let mut map = BTreeMap::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let mut parts = line.split_whitespace();
            let (Some(fine), Some(coarse)) = (parts.next(), parts.next()) else {
                return Err(Error::Config(format!("label table line {}: expected two fields", lineno + 1)));
            };
            let fine: u16 = fine
                .parse()
                .map_err(|_| Error::Config(format!("label table line {}: bad index `{fine}`", lineno + 1)))?;
            let class = CoarseClass::from_name(coarse)
                .or_else(|| coarse.parse::<u8>().ok().and_then(CoarseClass::from_index))
                .ok_or_else(|| {
                    Error::Config(format!("label table line {}: unknown class `{coarse}`", lineno + 1))
                })?;
            map.insert(fine, class);
        }
        Ok(Self { map })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::parse(&fs::read_to_string(path)?)
    }

    pub fn get(&self, fine: u16) -> Option<CoarseClass> {
        self.map.get(&fine).copied()
    }
}

/// Maps every fine label through `table`; unmapped labels become
/// [`CoarseClass::Others`] and are returned so callers can report them.
pub fn merge_labels(fine: &FineLabelMap, table: &LabelTable) -> Result<(SegmentationMap, BTreeSet<u16>)> {
    let mut unmapped = BTreeSet::new();
    let labels = fine
        .labels
        .iter()
        .map(|&l| match table.get(l) {
            Some(c) => c as u8,
            None => {
                unmapped.insert(l);
                CoarseClass::Others as u8
            }
        })
        .collect();
    if !unmapped.is_empty() {
        warn!("fine labels {unmapped:?} have no coarse mapping; assigned to `others`");
    }
    Ok((SegmentationMap::new(fine.width, fine.height, labels)?, unmapped))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub id: String,
    pub linear: PathBuf,
    pub segmentation: PathBuf,
    pub reference: PathBuf,
    pub split: Split,
}

/// Filter statistics for one candidate image, kept or not.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FilterRecord {
    pub id: String,
    pub saturation_fraction: f64,
    pub dynamic_range: Option<f64>,
    pub segment_count: usize,
    pub contrast: Option<f64>,
    pub kept: bool,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub reasons: Vec<String>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub entries: Vec<ManifestEntry>,
    pub report: Vec<FilterRecord>,
}

impl DatasetManifest {
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        ensure_parent(path)?;
        fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }

    /// Reads a manifest; relative paths are resolved against the manifest's
    /// directory.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let mut manifest: DatasetManifest = serde_json::from_str(&fs::read_to_string(path)?)?;
        if let Some(dir) = path.parent() {
            for e in &mut manifest.entries {
                for p in [&mut e.linear, &mut e.segmentation, &mut e.reference] {
                    if p.is_relative() {
                        *p = dir.join(&*p);
                    }
                }
            }
        }
        Ok(manifest)
    }

    pub fn split(&self, split: Split) -> impl Iterator<Item = &ManifestEntry> {
        self.entries.iter().filter(move |e| e.split == split)
    }

    pub fn record(&self, id: &str) -> Option<&FilterRecord> {
        self.report.iter().find(|r| r.id == id)
    }

    /// Checks that every referenced file exists.
    pub fn validate(&self) -> Result<()> {
        for e in &self.entries {
            for p in [&e.linear, &e.segmentation, &e.reference] {
                if !p.exists() {
                    return Err(Error::ingest(p, format!("missing file for entry `{}`", e.id)));
                }
            }
        }
        Ok(())
    }
}

/// A loaded training triple.
#[derive(Clone, Debug)]
pub struct Sample {
    pub id: String,
    pub linear: LinearImage,
    pub segmentation: SegmentationMap,
    pub reference: DisplayImage,
}

impl Sample {
    pub fn load(entry: &ManifestEntry) -> Result<Self> {
        let linear = load_linear(&entry.linear)?;
        let segmentation = load_segmentation(&entry.segmentation)?;
        let reference = load_reference(&entry.reference)?;
        if linear.dims() != segmentation.dims() || linear.dims() != reference.dims() {
            return Err(Error::ingest(&entry.linear, "image, segmentation and reference sizes differ"));
        }
        Ok(Self {
            id: entry.id.clone(),
            linear,
            segmentation,
            reference,
        })
    }
}
