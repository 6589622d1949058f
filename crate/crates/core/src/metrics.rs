//! Image quality metrics and score summaries.
//!
//! Colour metrics work in CIELAB (D65 white, Rec.709 primaries) after
//! decoding the display encoding. MS-SSIM and the multi-level contrast use
//! Rec.709 luma of the display-encoded values.

use log::warn;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::raster::RgbImage;
use crate::rng::{stream_rng, Stream};
use crate::stats::{median, percentile_sorted};

/// How display-encoded values are decoded before colour conversion.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Transfer {
    #[default]
    Srgb,
    /// Pure `v^2.2`.
    Gamma22,
}

impl Transfer {
    pub fn decode(self, v: f64) -> f64 {
        match self {
            Transfer::Srgb => {
                if v <= 0.04045 {
                    v / 12.92
                } else {
                    ((v + 0.055) / 1.055).powf(2.4)
                }
            }
            Transfer::Gamma22 => v.max(0.0).powf(2.2),
        }
    }
}

/// Linear Rec.709 to CIE XYZ (D65).
pub const RGB_TO_XYZ: [[f64; 3]; 3] = [
    [0.4124564, 0.3575761, 0.1804375],
    [0.2126729, 0.7151522, 0.0721750],
    [0.0193339, 0.1191920, 0.9503041],
];

pub const D65_WHITE: [f64; 3] = [0.95047, 1.0, 1.08883];

fn lab_f(t: f64) -> f64 {
    const DELTA: f64 = 6.0 / 29.0;
    if t > DELTA * DELTA * DELTA {
        t.cbrt()
    } else {
        t / (3.0 * DELTA * DELTA) + 4.0 / 29.0
    }
}

/// `(L*, a*, b*)` of one display-encoded pixel.
pub fn rgb_to_lab(rgb: [f64; 3], transfer: Transfer) -> [f64; 3] {
    let lin = rgb.map(|v| transfer.decode(v));
    let xyz: [f64; 3] =
        std::array::from_fn(|r| RGB_TO_XYZ[r][0] * lin[0] + RGB_TO_XYZ[r][1] * lin[1] + RGB_TO_XYZ[r][2] * lin[2]);
    let [fx, fy, fz] = std::array::from_fn(|i| lab_f(xyz[i] / D65_WHITE[i]));
    [116.0 * fy - 16.0, 500.0 * (fx - fy), 200.0 * (fy - fz)]
}

#[derive(Clone, Debug, PartialEq)]
pub struct LabImage {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<[f64; 3]>,
}

pub fn lab_image(img: &RgbImage, transfer: Transfer) -> LabImage {
    LabImage {
        width: img.width(),
        height: img.height(),
        pixels: img.pixels().iter().map(|&p| rgb_to_lab(p, transfer)).collect(),
    }
}

fn same_dims(op: &'static str, a: &RgbImage, b: &RgbImage) -> Result<()> {
    if a.dims() != b.dims() {
        return Err(Error::dim(op, (a.height(), a.width()), (b.height(), b.width())));
    }
    if a.pixels().is_empty() {
        return Err(Error::Usage(format!("{op}: images are empty")));
    }
    Ok(())
}

/// Mean over pixels of `|ΔL*| + √(Δa*² + Δb*²)`.
pub fn hyab(pred: &RgbImage, reference: &RgbImage, transfer: Transfer) -> Result<f64> {
    same_dims("hyab", pred, reference)?;
    let total: f64 = pred
        .pixels()
        .iter()
        .zip(reference.pixels())
        .map(|(&p, &r)| {
            let (a, b) = (rgb_to_lab(p, transfer), rgb_to_lab(r, transfer));
            (a[0] - b[0]).abs() + (a[1] - b[1]).hypot(a[2] - b[2])
        })
        .sum();
    Ok(total / pred.pixels().len() as f64)
}

pub fn mse(pred: &RgbImage, reference: &RgbImage) -> Result<f64> {
    same_dims("mse", pred, reference)?;
    let total: f64 = pred
        .pixels()
        .iter()
        .flatten()
        .zip(reference.pixels().iter().flatten())
        .map(|(a, b)| (a - b) * (a - b))
        .sum();
    Ok(total / (3 * pred.pixels().len()) as f64)
}

/// `10·log10(peak² / MSE)`; `+∞` for identical images.
pub fn psnr(pred: &RgbImage, reference: &RgbImage, peak: f64) -> Result<f64> {
    let m = mse(pred, reference)?;
    if m == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (peak * peak / m).log10())
}

pub const MS_SSIM_WEIGHTS: [f64; 5] = [0.0448, 0.2856, 0.3001, 0.2363, 0.1333];
pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
const K1: f64 = 0.01;
const K2: f64 = 0.03;

/// Single-channel plane for the structural metrics.
#[derive(Clone, Debug, PartialEq)]
pub struct LumaPlane {
    pub width: usize,
    pub height: usize,
    pub values: Vec<f64>,
}

impl LumaPlane {
    pub fn from_image(img: &RgbImage) -> Self {
        Self {
            width: img.width(),
            height: img.height(),
            values: img.luma(),
        }
    }

    /// 2×2 box average; an odd trailing row or column is dropped.
    pub fn downsample(&self) -> Self {
        let (w, h) = (self.width / 2, self.height / 2);
        let mut values = Vec::with_capacity(w * h);
        for y in 0..h {
            for x in 0..w {
                let at = |dx: usize, dy: usize| self.values[(2 * y + dy) * self.width + 2 * x + dx];
                values.push((at(0, 0) + at(1, 0) + at(0, 1) + at(1, 1)) / 4.0);
            }
        }
        Self {
            width: w,
            height: h,
            values,
        }
    }
}

fn gaussian_taps() -> [f64; SSIM_WINDOW] {
    let c = (SSIM_WINDOW / 2) as f64;
    let mut taps: [f64; SSIM_WINDOW] = std::array::from_fn(|i| {
        let d = i as f64 - c;
        (-(d * d) / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp()
    });
    let s: f64 = taps.iter().sum();
    for t in &mut taps {
        *t /= s;
    }
    taps
}

/// Separable "valid" filtering with the normalised Gaussian window.
fn filter_valid(values: &[f64], width: usize, height: usize, taps: &[f64; SSIM_WINDOW]) -> (Vec<f64>, usize, usize) {
    let (ow, oh) = (width + 1 - SSIM_WINDOW, height + 1 - SSIM_WINDOW);
    let mut rows = vec![0.0; ow * height];
    for y in 0..height {
        for x in 0..ow {
            rows[y * ow + x] = taps.iter().enumerate().map(|(k, t)| t * values[y * width + x + k]).sum();
        }
    }
    let mut out = vec![0.0; ow * oh];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = taps.iter().enumerate().map(|(k, t)| t * rows[(y + k) * ow + x]).sum();
        }
    }
    (out, ow, oh)
}

/// Mean SSIM and mean contrast-structure term of one scale.
fn ssim_components(a: &LumaPlane, b: &LumaPlane) -> (f64, f64) {
    let taps = gaussian_taps();
    let (w, h) = (a.width, a.height);
    let f = |v: &[f64]| filter_valid(v, w, h, &taps).0;
    let mu_a = f(&a.values);
    let mu_b = f(&b.values);
    let aa: Vec<f64> = a.values.iter().map(|v| v * v).collect();
    let bb: Vec<f64> = b.values.iter().map(|v| v * v).collect();
    let ab: Vec<f64> = a.values.iter().zip(&b.values).map(|(x, y)| x * y).collect();
    let (e_aa, e_bb, e_ab) = (f(&aa), f(&bb), f(&ab));
    let c1 = K1 * K1;
    let c2 = K2 * K2;
    let n = mu_a.len() as f64;
    let (mut ssim, mut cs) = (0.0, 0.0);
    for i in 0..mu_a.len() {
        let (ma, mb) = (mu_a[i], mu_b[i]);
        let va = e_aa[i] - ma * ma;
        let vb = e_bb[i] - mb * mb;
        let cov = e_ab[i] - ma * mb;
        let cs_i = (2.0 * cov + c2) / (va + vb + c2);
        let l_i = (2.0 * ma * mb + c1) / (ma * ma + mb * mb + c1);
        ssim += l_i * cs_i;
        cs += cs_i;
    }
    (ssim / n, cs / n)
}

/// Number of scales usable for a `min_dim`-pixel side (at most 5).
pub fn ms_ssim_scales(min_dim: usize) -> usize {
    (1..=MS_SSIM_WEIGHTS.len())
        .rev()
        .find(|&s| min_dim >= (1 << (s - 1)) * SSIM_WINDOW)
        .unwrap_or(0)
}

/// Multi-scale SSIM of the display luma. Images too small for five scales
/// use fewer, with the remaining weights renormalised to sum to one.
pub fn ms_ssim(pred: &RgbImage, reference: &RgbImage) -> Result<f64> {
    same_dims("ms_ssim", pred, reference)?;
    ms_ssim_luma(&LumaPlane::from_image(pred), &LumaPlane::from_image(reference))
}

pub fn ms_ssim_luma(a: &LumaPlane, b: &LumaPlane) -> Result<f64> {
    if (a.width, a.height) != (b.width, b.height) {
        return Err(Error::dim("ms_ssim", (a.height, a.width), (b.height, b.width)));
    }
    let min_dim = a.width.min(a.height);
    let scales = ms_ssim_scales(min_dim);
    if scales == 0 {
        return Err(Error::TooSmall {
            width: a.width,
            height: a.height,
            min: SSIM_WINDOW,
        });
    }
    if scales < MS_SSIM_WEIGHTS.len() {
        warn!(
            "{}x{} is too small for {} MS-SSIM scales; using {scales}",
            a.width,
            a.height,
            MS_SSIM_WEIGHTS.len()
        );
    }
    let weight_sum: f64 = MS_SSIM_WEIGHTS[..scales].iter().sum();
    let (mut pa, mut pb) = (a.clone(), b.clone());
    let mut score = 1.0;
    for s in 0..scales {
        let wgt = MS_SSIM_WEIGHTS[s] / weight_sum;
        let (ssim, cs) = ssim_components(&pa, &pb);
        let term = if s + 1 == scales { ssim } else { cs };
        score *= term.max(0.0).powf(wgt);
        if s + 1 < scales {
            pa = pa.downsample();
            pb = pb.downsample();
        }
    }
    Ok(score)
}

/// Mean over levels `i = 1..=levels` of `√(mean patch variance)` on an
/// `i × i` grid of patches. Patch sides are `⌊dim / i⌋`, with the last patch
/// per axis absorbing the remainder; empty patches are skipped.
pub fn multi_level_contrast(luma: &[f64], width: usize, height: usize, levels: usize) -> Result<f64> {
    if luma.len() != width * height {
        return Err(Error::dim("multi_level_contrast", (height, width), (luma.len(), 1)));
    }
    if levels == 0 || luma.is_empty() {
        return Err(Error::Usage("contrast needs at least one level and one pixel".into()));
    }
    let bounds = |dim: usize, i: usize, k: usize| {
        let step = dim / i;
        let start = k * step;
        let end = if k + 1 == i { dim } else { start + step };
        (start, end)
    };
    let mut total = 0.0;
    for i in 1..=levels {
        let (mut var_sum, mut patches) = (0.0, 0usize);
        for py in 0..i {
            let (y0, y1) = bounds(height, i, py);
            for px in 0..i {
                let (x0, x1) = bounds(width, i, px);
                let count = (y1 - y0) * (x1 - x0);
                if count == 0 {
                    continue;
                }
                let mut mean = 0.0;
                for y in y0..y1 {
                    mean += luma[y * width + x0..y * width + x1].iter().sum::<f64>();
                }
                mean /= count as f64;
                let mut var = 0.0;
                for y in y0..y1 {
                    var += luma[y * width + x0..y * width + x1]
                        .iter()
                        .map(|v| (v - mean) * (v - mean))
                        .sum::<f64>();
                }
                var_sum += var / count as f64;
                patches += 1;
            }
        }
        total += (var_sum / patches as f64).sqrt();
    }
    Ok(total / levels as f64)
}

/// [`multi_level_contrast`] of an image's display luma.
pub fn image_contrast(img: &RgbImage, levels: usize) -> Result<f64> {
    multi_level_contrast(&img.luma(), img.width(), img.height(), levels)
}

/// Median with a bootstrap percentile confidence interval.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MedianCi {
    pub median: f64,
    pub lo: f64,
    pub hi: f64,
}

/// Sample median and a `level` (e.g. 0.95) bootstrap percentile interval
/// from `resamples` seeded resamples. The interval is widened to include
/// the sample median if the bootstrap distribution misses it.
pub fn median_ci(scores: &[f64], level: f64, resamples: usize, seed: u64) -> Result<MedianCi> {
    let m = median(scores).ok_or_else(|| Error::Usage("no scores to summarise".into()))?;
    if !(0.0..1.0).contains(&level) || resamples == 0 {
        return Err(Error::Usage(format!(
            "confidence level must lie in [0, 1) and resamples be positive (got {level}, {resamples})"
        )));
    }
    let mut rng = stream_rng(seed, Stream::Bootstrap);
    let n = scores.len();
    let mut buf = vec![0.0; n];
    let mut medians: Vec<f64> = (0..resamples)
        .map(|_| {
            for b in &mut buf {
                *b = scores[rng.random_range(0..n)];
            }
            median(&buf).expect("non-empty")
        })
        .collect();
    medians.sort_by(f64::total_cmp);
    let tail = (1.0 - level) / 2.0 * 100.0;
    let lo = percentile_sorted(&medians, tail).expect("non-empty");
    let hi = percentile_sorted(&medians, 100.0 - tail).expect("non-empty");
    Ok(MedianCi {
        median: m,
        lo: lo.min(m),
        hi: hi.max(m),
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct HistogramBin {
    pub lo: f64,
    pub hi: f64,
    pub count: usize,
}

/// Equal-width histogram over the finite scores.
pub fn histogram(scores: &[f64], bins: usize) -> Vec<HistogramBin> {
    let finite: Vec<f64> = scores.iter().copied().filter(|v| v.is_finite()).collect();
    if finite.is_empty() || bins == 0 {
        return Vec::new();
    }
    let lo = finite.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = finite.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let width = if hi > lo { (hi - lo) / bins as f64 } else { 1.0 };
    let mut out: Vec<HistogramBin> = (0..bins)
        .map(|b| HistogramBin {
            lo: lo + b as f64 * width,
            hi: lo + (b + 1) as f64 * width,
            count: 0,
        })
        .collect();
    for v in finite {
        let b = (((v - lo) / width) as usize).min(bins - 1);
        out[b].count += 1;
    }
    out
}

/// Indices (ascending) of the `count` entries with the highest contrast.
/// Ties keep manifest order.
pub fn hc_select(contrast: &[f64], count: usize) -> Vec<usize> {
    if contrast.len() < count {
        warn!("asked for {count} entries but only {} are available", contrast.len());
    }
    let mut order: Vec<usize> = (0..contrast.len()).collect();
    order.sort_by(|&a, &b| contrast[b].total_cmp(&contrast[a]));
    let mut chosen: Vec<usize> = order.into_iter().take(count).collect();
    chosen.sort_unstable();
    chosen
}

/// Scores of one prediction against its reference.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImageScores {
    pub id: String,
    #[serde(with = "nonfinite")]
    pub psnr: f64,
    pub hyab: f64,
    pub ms_ssim: f64,
    pub c_ml: f64,
}

pub const CONTRAST_LEVELS: usize = 5;

pub fn score_pair(id: impl Into<String>, pred: &RgbImage, reference: &RgbImage, transfer: Transfer) -> Result<ImageScores> {
    Ok(ImageScores {
        id: id.into(),
        psnr: psnr(pred, reference, 1.0)?,
        hyab: hyab(pred, reference, transfer)?,
        ms_ssim: ms_ssim(pred, reference)?,
        c_ml: image_contrast(pred, CONTRAST_LEVELS)?,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    #[serde(with = "nonfinite")]
    pub median: f64,
    #[serde(with = "nonfinite")]
    pub ci_lo: f64,
    #[serde(with = "nonfinite")]
    pub ci_hi: f64,
    pub histogram: Vec<HistogramBin>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoreReport {
    pub images: Vec<ImageScores>,
    pub count: usize,
    pub psnr: MetricSummary,
    pub hyab: MetricSummary,
    pub ms_ssim: MetricSummary,
    pub c_ml: MetricSummary,
}

impl ScoreReport {
    pub fn new(images: Vec<ImageScores>, bins: usize, resamples: usize, seed: u64) -> Result<Self> {
        let summary = |f: fn(&ImageScores) -> f64| -> Result<MetricSummary> {
            let values: Vec<f64> = images.iter().map(f).collect();
            let ci = median_ci(&values, 0.95, resamples, seed)?;
            Ok(MetricSummary {
                median: ci.median,
                ci_lo: ci.lo,
                ci_hi: ci.hi,
                histogram: histogram(&values, bins),
            })
        };
        Ok(Self {
            count: images.len(),
            psnr: summary(|s| s.psnr)?,
            hyab: summary(|s| s.hyab)?,
            ms_ssim: summary(|s| s.ms_ssim)?,
            c_ml: summary(|s| s.c_ml)?,
            images,
        })
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("id,psnr,hyab,ms_ssim,c_ml\n");
        for r in &self.images {
            s.push_str(&format!(
                "{},{},{},{},{}\n",
                r.id,
                format_score(r.psnr),
                r.hyab,
                r.ms_ssim,
                r.c_ml
            ));
        }
        s
    }
}

/// `inf` / `-inf` / `nan` for non-finite values, the shortest round-trip
/// form otherwise.
pub fn format_score(v: f64) -> String {
    if v.is_nan() {
        "nan".into()
    } else if v == f64::INFINITY {
        "inf".into()
    } else if v == f64::NEG_INFINITY {
        "-inf".into()
    } else {
        v.to_string()
    }
}

/// Serialises non-finite floats as the strings `"inf"`, `"-inf"`, `"nan"`.
mod nonfinite {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_finite() {
            s.serialize_f64(*v)
        } else {
            s.serialize_str(&super::format_score(*v))
        }
    }

    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Num(f64),
        Text(String),
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        match Repr::deserialize(d)? {
            Repr::Num(v) => Ok(v),
            Repr::Text(t) => match t.as_str() {
                "inf" => Ok(f64::INFINITY),
                "-inf" => Ok(f64::NEG_INFINITY),
                "nan" => Ok(f64::NAN),
                other => Err(serde::de::Error::custom(format!("not a score: {other}"))),
            },
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn ramp(w: usize, h: usize) -> RgbImage {
        RgbImage::from_fn(w, h, |x, y| {
            let t = (x as f64 / w as f64 + (y as f64 * 0.37).sin() * 0.2).clamp(0.0, 1.0);
            [t, 1.0 - t, 0.5 * t]
        })
    }

    #[test]
    fn lab_endpoints() {
        let white = rgb_to_lab([1.0; 3], Transfer::Srgb);
        assert!((white[0] - 100.0).abs() < 0.01);
        assert!(white[1].abs() < 0.01 && white[2].abs() < 0.01);
        assert_eq!(rgb_to_lab([0.0; 3], Transfer::Srgb), [0.0, 0.0, 0.0]);
        let gray = rgb_to_lab([0.5; 3], Transfer::Gamma22);
        assert!(gray[1].abs() < 0.01 && gray[2].abs() < 0.01);
    }

    #[test]
    fn psnr_cases() {
        let a = RgbImage::filled(4, 4, [0.5; 3]);
        let b = RgbImage::filled(4, 4, [0.6; 3]);
        assert_eq!(psnr(&a, &a, 1.0).unwrap(), f64::INFINITY);
        assert!((psnr(&a, &b, 1.0).unwrap() - 20.0).abs() < 1e-9);
        assert_eq!(psnr(&a, &b, 1.0).unwrap(), psnr(&b, &a, 1.0).unwrap());
        assert!(psnr(&a, &RgbImage::filled(3, 4, [0.5; 3]), 1.0).is_err());
    }

    #[test]
    fn hyab_zero_and_symmetric() {
        let a = ramp(8, 5);
        let b = a.map(|p| p.map(|v| v * 0.8));
        assert_eq!(hyab(&a, &a, Transfer::Srgb).unwrap(), 0.0);
        assert_eq!(hyab(&a, &b, Transfer::Srgb).unwrap(), hyab(&b, &a, Transfer::Srgb).unwrap());
    }

    #[test]
    fn ms_ssim_identity_and_ordering() {
        let a = ramp(180, 180);
        let inv = a.map(|p| p.map(|v| 1.0 - v));
        assert!((ms_ssim(&a, &a).unwrap() - 1.0).abs() < 1e-12);
        assert!(ms_ssim(&a, &inv).unwrap() < ms_ssim(&a, &a).unwrap());
        let small = ramp(30, 30);
        assert!((ms_ssim(&small, &small).unwrap() - 1.0).abs() < 1e-12);
        assert!(matches!(ms_ssim(&ramp(10, 40), &ramp(10, 40)), Err(Error::TooSmall { .. })));
    }

    #[test]
    fn scale_count() {
        assert_eq!(ms_ssim_scales(176), 5);
        assert_eq!(ms_ssim_scales(175), 4);
        assert_eq!(ms_ssim_scales(11), 1);
        assert_eq!(ms_ssim_scales(10), 0);
    }

    #[test]
    fn contrast_fixture() {
        assert_eq!(multi_level_contrast(&[0.0, 0.0, 1.0, 1.0], 2, 2, 2).unwrap(), 0.25);
        assert_eq!(multi_level_contrast(&[0.3; 12], 4, 3, 5).unwrap(), 0.0);
        let v = [0.1, 0.9, 0.4, 0.2, 0.7, 0.3];
        let m = v.iter().sum::<f64>() / 6.0;
        let var = v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / 6.0;
        assert!((multi_level_contrast(&v, 3, 2, 1).unwrap() - var.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn bootstrap_degenerate_cases() {
        assert_eq!(median_ci(&[2.5], 0.95, 100, 0).unwrap(), MedianCi { median: 2.5, lo: 2.5, hi: 2.5 });
        let c = median_ci(&[1.0; 7], 0.95, 100, 0).unwrap();
        assert_eq!((c.lo, c.hi), (1.0, 1.0));
        assert!(median_ci(&[], 0.95, 100, 0).is_err());
    }

    #[test]
    fn selection_order() {
        assert_eq!(hc_select(&[0.1, 0.3, 0.2], 2), vec![1, 2]);
        assert_eq!(hc_select(&[0.1, 0.3, 0.2], 3), vec![0, 1, 2]);
        assert_eq!(hc_select(&[0.5, 0.5, 0.5], 2), vec![0, 1]);
        assert_eq!(hc_select(&[0.5], 4), vec![0]);
    }

    #[test]
    fn report_serialises_infinite_psnr() {
        let a = ramp(12, 12);
        let s = score_pair("a", &a, &a, Transfer::Srgb).unwrap();
        let report = ScoreReport::new(vec![s.clone(), s], 4, 50, 0).unwrap();
        let json = serde_json::to_string(&report).unwrap();
        assert!(json.contains("\"inf\""));
        let back: ScoreReport = serde_json::from_str(&json).unwrap();
        assert_eq!(back, report);
        assert!(report.to_csv().lines().nth(1).unwrap().starts_with("a,inf,0,1,"));
    }

    #[test]
    fn histogram_counts_everything_finite() {
        let h = histogram(&[0.0, 1.0, 2.0, 3.0, f64::INFINITY], 3);
        assert_eq!(h.iter().map(|b| b.count).sum::<usize>(), 4);
        assert_eq!(h[2].count, 2);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn distances_are_symmetric(
            a in proptest::collection::vec(0.0f64..1.0, 12 * 12 * 3),
            b in proptest::collection::vec(0.0f64..1.0, 12 * 12 * 3),
        ) {
            let img = |v: &[f64]| RgbImage::new(12, 12, v.chunks(3).map(|c| [c[0], c[1], c[2]]).collect()).unwrap();
            let (x, y) = (img(&a), img(&b));
            prop_assert_eq!(hyab(&x, &y, Transfer::Srgb).unwrap(), hyab(&y, &x, Transfer::Srgb).unwrap());
            prop_assert_eq!(psnr(&x, &y, 1.0).unwrap(), psnr(&y, &x, 1.0).unwrap());
            let (s1, s2) = (ms_ssim(&x, &y).unwrap(), ms_ssim(&y, &x).unwrap());
            prop_assert!((s1 - s2).abs() < 1e-12);
            prop_assert!(hyab(&x, &y, Transfer::Srgb).unwrap() >= 0.0);
        }
    }
}
