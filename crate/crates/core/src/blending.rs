//! Seam removal between segments.
//!
//! Each label gets a binary mask, the mask is feathered inside a band of
//! `radius` pixels on both sides of its border, the feathered map is
//! bilateral-filtered, and the maps are normalised to sum to one per pixel.
//! The output is the per-pixel weighted sum of one rendering per segment,
//! each made with that segment's context for every pixel.

use log::warn;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fc::{infer_uniform, FcParams};
use crate::graph::SemanticGraph;
use crate::model::{contexts, ModelParams};
use crate::raster::{DisplayImage, LinearImage, RgbImage, SegmentationMap};
use crate::tensor::Tensor2;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BlendConfig {
    /// Half-width of the feathering band, in pixels.
    pub radius: f64,
    /// Bilateral window diameter, in pixels.
    pub diameter: f64,
    /// Range sigma on the `alpha × 255` scale.
    pub sigma_color: f64,
    pub sigma_space: f64,
}

impl Default for BlendConfig {
    fn default() -> Self {
        Self {
            radius: 25.0,
            diameter: 50.0,
            sigma_color: 30.0,
            sigma_space: 12.5,
        }
    }
}

/// A single-channel `width × height` map, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct Plane {
    pub width: usize,
    pub height: usize,
    pub values: Vec<f64>,
}

impl Plane {
    pub fn new(width: usize, height: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != width * height {
            return Err(Error::dim("plane", (height, width), (values.len(), 1)));
        }
        Ok(Self { width, height, values })
    }

    pub fn filled(width: usize, height: usize, v: f64) -> Self {
        Self {
            width,
            height,
            values: vec![v; width * height],
        }
    }

    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.values[y * self.width + x]
    }
}

/// One mask per distinct label, in ascending label order.
#[derive(Clone, Debug, PartialEq)]
pub struct BinaryMask {
    pub label: u8,
    pub width: usize,
    pub height: usize,
    pub inside: Vec<bool>,
}

pub fn binary_maps(seg: &SegmentationMap) -> Vec<BinaryMask> {
    seg.distinct_labels()
        .into_iter()
        .map(|label| BinaryMask {
            label,
            width: seg.width(),
            height: seg.height(),
            inside: seg.labels().iter().map(|&l| l == label).collect(),
        })
        .collect()
}

const FAR: f64 = 1e20;

/// One-dimensional squared distance transform of `f` (lower envelope of
/// parabolas).
fn dt_1d(f: &[f64], out: &mut [f64], v: &mut [usize], z: &mut [f64]) {
    let n = f.len();
    if n == 0 {
        return;
    }
    let mut k = 0usize;
    v[0] = 0;
    z[0] = f64::NEG_INFINITY;
    z[1] = f64::INFINITY;
    for q in 1..n {
        let qf = q as f64;
        let mut s;
        loop {
            let vk = v[k] as f64;
            s = ((f[q] + qf * qf) - (f[v[k]] + vk * vk)) / (2.0 * qf - 2.0 * vk);
            // z[0] is -inf, so this stops at k = 0 at the latest.
            if s > z[k] {
                break;
            }
            k -= 1;
        }
        k += 1;
        v[k] = q;
        z[k] = s;
        z[k + 1] = f64::INFINITY;
    }
    k = 0;
    for (q, o) in out.iter_mut().enumerate() {
        let qf = q as f64;
        while z[k + 1] < qf {
            k += 1;
        }
        let d = qf - v[k] as f64;
        *o = d * d + f[v[k]];
    }
}

/// Exact squared Euclidean distance from every pixel to the nearest pixel
/// where `features` is set; `+∞` when there is none.
pub fn squared_distance_transform(features: &[bool], width: usize, height: usize) -> Vec<f64> {
    let mut grid: Vec<f64> = features.iter().map(|&f| if f { 0.0 } else { FAR }).collect();
    let n = width.max(height);
    let mut f = vec![0.0; n];
    let mut out = vec![0.0; n];
    let mut v = vec![0usize; n];
    let mut z = vec![0.0; n + 1];
    for x in 0..width {
        for y in 0..height {
            f[y] = grid[y * width + x];
        }
        dt_1d(&f[..height], &mut out[..height], &mut v, &mut z);
        for y in 0..height {
            grid[y * width + x] = out[y];
        }
    }
    for y in 0..height {
        let row = &mut grid[y * width..(y + 1) * width];
        f[..width].copy_from_slice(row);
        dt_1d(&f[..width], &mut out[..width], &mut v, &mut z);
        row.copy_from_slice(&out[..width]);
    }
    for d in &mut grid {
        if *d >= FAR / 2.0 {
            *d = f64::INFINITY;
        }
    }
    grid
}

/// Feathered alpha for one mask.
///
/// Pixels farther than `radius` from every non-mask pixel are definitely
/// inside (alpha 1); pixels farther than `radius` from every mask pixel are
/// definitely outside (alpha 0). In between, alpha is
/// `d_out / (d_in + d_out)` with distances to those two sets. Pixels beyond
/// the image border count as neither. If nothing survives as definitely
/// inside, the mask itself is returned.
pub fn feather_alpha(mask: &BinaryMask, radius: f64) -> Result<Plane> {
    if !(radius >= 1.0) {
        return Err(Error::Usage(format!("feather radius must be at least 1, got {radius}")));
    }
    let (w, h) = (mask.width, mask.height);
    let r2 = radius * radius;
    let outside: Vec<bool> = mask.inside.iter().map(|&m| !m).collect();
    let to_outside = squared_distance_transform(&outside, w, h);
    let to_inside = squared_distance_transform(&mask.inside, w, h);
    let definite_in: Vec<bool> = mask.inside.iter().zip(&to_outside).map(|(&m, &d)| m && d > r2).collect();
    let definite_out: Vec<bool> = outside.iter().zip(&to_inside).map(|(&o, &d)| o && d > r2).collect();
    if !definite_in.iter().any(|&b| b) {
        warn!(
            "segment {} vanishes when eroded by {radius} px; using its hard mask",
            mask.label
        );
        return Plane::new(w, h, mask.inside.iter().map(|&m| f64::from(u8::from(m))).collect());
    }
    let d_in = squared_distance_transform(&definite_in, w, h);
    let d_out = squared_distance_transform(&definite_out, w, h);
    let values = (0..w * h)
        .map(|p| {
            if definite_in[p] {
                1.0
            } else if definite_out[p] {
                0.0
            } else if d_out[p].is_infinite() {
                1.0
            } else {
                let (a, b) = (d_in[p].sqrt(), d_out[p].sqrt());
                b / (a + b)
            }
        })
        .collect();
    Plane::new(w, h, values)
}

/// Circular-window bilateral filter. Range distances are measured on the
/// `alpha × 255` scale; neighbours outside the image are skipped.
pub fn bilateral_smooth(alpha: &Plane, diameter: f64, sigma_color: f64, sigma_space: f64) -> Result<Plane> {
    if !(diameter > 0.0 && sigma_color > 0.0 && sigma_space > 0.0) {
        return Err(Error::Usage("bilateral diameter and sigmas must be positive".into()));
    }
    let (w, h) = (alpha.width, alpha.height);
    let r = diameter / 2.0;
    let ri = r.floor() as isize;
    let mut kernel = Vec::new();
    for dy in -ri..=ri {
        for dx in -ri..=ri {
            let d2 = (dx * dx + dy * dy) as f64;
            if d2 <= r * r {
                kernel.push((dx, dy, (-d2 / (2.0 * sigma_space * sigma_space)).exp()));
            }
        }
    }
    // A window holding a single value leaves it unchanged; detect windows
    // that are entirely 0 or entirely 1 without scanning them.
    let r2 = r * r;
    let not_one: Vec<bool> = alpha.values.iter().map(|&v| v != 1.0).collect();
    let not_zero: Vec<bool> = alpha.values.iter().map(|&v| v != 0.0).collect();
    let far_from_not_one = squared_distance_transform(&not_one, w, h);
    let far_from_not_zero = squared_distance_transform(&not_zero, w, h);
    let range = -(255.0 * 255.0) / (2.0 * sigma_color * sigma_color);

    let mut values = vec![0.0; w * h];
    values.par_chunks_mut(w.max(1)).enumerate().for_each(|(y, row)| {
        for (x, out) in row.iter_mut().enumerate() {
            let p = y * w + x;
            let c = alpha.values[p];
            if (c == 1.0 && far_from_not_one[p] > r2) || (c == 0.0 && far_from_not_zero[p] > r2) {
                *out = c;
                continue;
            }
            // Accumulating offsets from the centre keeps constant windows exact.
            let (mut num, mut den) = (0.0, 0.0);
            let (mut lo, mut hi) = (c, c);
            for &(dx, dy, ws) in &kernel {
                let (nx, ny) = (x as isize + dx, y as isize + dy);
                if nx < 0 || ny < 0 || nx >= w as isize || ny >= h as isize {
                    continue;
                }
                let v = alpha.values[ny as usize * w + nx as usize];
                let d = v - c;
                let wgt = ws * (range * d * d).exp();
                num += wgt * d;
                den += wgt;
                lo = lo.min(v);
                hi = hi.max(v);
            }
            *out = (c + num / den).clamp(lo, hi);
        }
    });
    Plane::new(w, h, values)
}

/// Normalised alpha maps `S_i`, summing to one at every pixel.
#[derive(Clone, Debug, PartialEq)]
pub struct AlphaStack {
    pub width: usize,
    pub height: usize,
    pub maps: Vec<Plane>,
}

impl AlphaStack {
    pub fn len(&self) -> usize {
        self.maps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.maps.is_empty()
    }
}

/// `S_i(p) = α_i(p) / Σ_j α_j(p)`. Pixels where every map is zero get the
/// uniform weight `1/n`.
pub fn normalize_stack(alphas: Vec<Plane>) -> Result<AlphaStack> {
    let first = alphas.first().ok_or_else(|| Error::Usage("alpha stack is empty".into()))?;
    let (w, h) = (first.width, first.height);
    if let Some(bad) = alphas.iter().find(|a| (a.width, a.height) != (w, h)) {
        return Err(Error::dim("normalize_stack", (h, w), (bad.height, bad.width)));
    }
    let n = alphas.len();
    let mut maps = alphas;
    let mut zero_pixels = 0usize;
    for p in 0..w * h {
        let total: f64 = maps.iter().map(|m| m.values[p]).sum();
        if total > 0.0 {
            for m in &mut maps {
                m.values[p] /= total;
            }
        } else {
            zero_pixels += 1;
            for m in &mut maps {
                m.values[p] = 1.0 / n as f64;
            }
        }
    }
    if zero_pixels > 0 {
        warn!("{zero_pixels} pixels had no alpha coverage; weighted uniformly");
    }
    Ok(AlphaStack {
        width: w,
        height: h,
        maps,
    })
}

/// Renderings `F_i`, one per segment.
#[derive(Clone, Debug, PartialEq)]
pub struct FrameStack {
    pub frames: Vec<RgbImage>,
}

/// `F_i`: every pixel of `img` mapped with context row `i`.
pub fn per_hint_frames(
    img: &LinearImage,
    contexts: &Tensor2,
    fc: &FcParams,
    negative_slope: f64,
) -> Result<FrameStack> {
    let frames = (0..contexts.rows())
        .map(|i| Ok(infer_uniform(img, contexts.row(i), fc, negative_slope)?.into_inner()))
        .collect::<Result<Vec<_>>>()?;
    Ok(FrameStack { frames })
}

/// `O(p) = Σ_i S_i(p) · F_i(p)` per channel.
pub fn blend(stack: &AlphaStack, frames: &FrameStack) -> Result<RgbImage> {
    if stack.len() != frames.frames.len() {
        return Err(Error::dim("blend", (stack.len(), 0), (frames.frames.len(), 0)));
    }
    if let Some(bad) = frames.frames.iter().find(|f| f.dims() != (stack.width, stack.height)) {
        return Err(Error::dim("blend", (stack.height, stack.width), (bad.height(), bad.width())));
    }
    let mut pixels = vec![[0.0; 3]; stack.width * stack.height];
    pixels.par_iter_mut().enumerate().for_each(|(p, out)| {
        for (s, f) in stack.maps.iter().zip(&frames.frames) {
            let wgt = s.values[p];
            let rgb = f.pixels()[p];
            for c in 0..3 {
                out[c] += wgt * rgb[c];
            }
        }
    });
    RgbImage::new(stack.width, stack.height, pixels)
}

/// Smoothed, normalised alphas for every label of `seg`, in ascending label
/// order (the node order of a graph built from `seg`).
pub fn alpha_stack(seg: &SegmentationMap, config: &BlendConfig) -> Result<AlphaStack> {
    let alphas = binary_maps(seg)
        .iter()
        .map(|m| {
            let a = feather_alpha(m, config.radius)?;
            bilateral_smooth(&a, config.diameter, config.sigma_color, config.sigma_space)
        })
        .collect::<Result<Vec<_>>>()?;
    normalize_stack(alphas)
}

/// Intermediate products of [`blend_image`].
#[derive(Clone, Debug)]
pub struct BlendOutput {
    pub image: DisplayImage,
    pub stack: AlphaStack,
    pub frames: FrameStack,
}

/// Full seam-free rendering of `img` with a trained model.
pub fn blend_image(
    params: &ModelParams,
    img: &LinearImage,
    seg: &SegmentationMap,
    graph: &SemanticGraph,
    config: &BlendConfig,
) -> Result<BlendOutput> {
    if img.dims() != seg.dims() || (graph.width(), graph.height()) != img.dims() {
        return Err(Error::dim("blend_image", (img.height(), img.width()), (seg.height(), seg.width())));
    }
    let stack = alpha_stack(seg, config)?;
    let ctx = contexts(params, Some(graph))?;
    let ctx = if ctx.rows() == graph.node_count() {
        ctx
    } else {
        // global_lut has a single context shared by every node.
        let mut rows = Tensor2::zeros(graph.node_count(), ctx.cols());
        for r in 0..graph.node_count() {
            rows.row_mut(r).copy_from_slice(ctx.row(0));
        }
        rows
    };
    let frames = per_hint_frames(img, &ctx, &params.fc, params.config.fc_negative_slope)?;
    let out = blend(&stack, &frames)?;
    // Weights sum to one only up to rounding.
    let image = DisplayImage(out.map(|p| p.map(|v| v.clamp(0.0, 1.0))));
    Ok(BlendOutput { image, stack, frames })
}
