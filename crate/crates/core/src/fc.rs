//! Per-pixel tone mapper.
//!
//! Each pixel's gamma-lifted RGB (`rgb^(1/2.2)`) is concatenated with a
//! per-segment context vector and passed through `in→32`, Leaky-ReLU, `32→32`
//! and a linear `32→3` head. The context is empty for the global mapper, the
//! 16 node features for the local mapper and the 34-wide `[X | H]` for the
//! graph-conditioned mapper.
//!
//! Because the context is constant within a segment, the first layer is split
//! as `rgb · W[0..3] + (ctx · W[3..] + b)`, and the second term is computed
//! once per node rather than once per pixel.

use std::sync::Arc;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::graph::SemanticGraph;
use crate::raster::{luma, DisplayImage, LinearImage, RgbImage};
use crate::tape::{leaky_relu, GradTape, Var};
use crate::tensor::Tensor2;

pub const FC_HIDDEN: usize = 32;
pub const INPUT_GAMMA: f64 = 1.0 / 2.2;

#[inline]
pub fn gamma_lift(v: f64) -> f64 {
    if v > 0.0 || v.is_nan() {
        v.powf(INPUT_GAMMA)
    } else {
        0.0
    }
}

/// Layer weights (`in×32`, `32×32`, `32×3`) and bias rows.
#[derive(Clone, Debug, PartialEq)]
pub struct FcParams {
    pub weights: [Tensor2; 3],
    pub biases: [Tensor2; 3],
}

impl FcParams {
    pub fn zeros(input_width: usize) -> Self {
        Self {
            weights: [
                Tensor2::zeros(input_width, FC_HIDDEN),
                Tensor2::zeros(FC_HIDDEN, FC_HIDDEN),
                Tensor2::zeros(FC_HIDDEN, 3),
            ],
            biases: [
                Tensor2::zeros(1, FC_HIDDEN),
                Tensor2::zeros(1, FC_HIDDEN),
                Tensor2::zeros(1, 3),
            ],
        }
    }

    pub fn input_width(&self) -> usize {
        self.weights[0].rows()
    }

    pub fn context_width(&self) -> usize {
        self.input_width() - 3
    }

    pub fn check_shapes(&self) -> Result<()> {
        let w = self.input_width();
        if w < 3 {
            return Err(Error::dim("fc_weight", self.weights[0].shape(), (3, FC_HIDDEN)));
        }
        let want_w = [(w, FC_HIDDEN), (FC_HIDDEN, FC_HIDDEN), (FC_HIDDEN, 3)];
        let want_b = [(1, FC_HIDDEN), (1, FC_HIDDEN), (1, 3)];
        for i in 0..3 {
            if self.weights[i].shape() != want_w[i] {
                return Err(Error::dim("fc_weight", self.weights[i].shape(), want_w[i]));
            }
            if self.biases[i].shape() != want_b[i] {
                return Err(Error::dim("fc_bias", self.biases[i].shape(), want_b[i]));
            }
        }
        Ok(())
    }

    /// Context contribution to the first layer plus its bias, per node.
    pub fn node_preactivations(&self, contexts: &Tensor2) -> Result<Tensor2> {
        if contexts.cols() != self.context_width() {
            return Err(Error::dim(
                "fc_context",
                contexts.shape(),
                (contexts.rows(), self.context_width()),
            ));
        }
        let mut out = Tensor2::zeros(contexts.rows(), FC_HIDDEN);
        for r in 0..contexts.rows() {
            let pre = self.context_preactivation(contexts.row(r));
            out.row_mut(r).copy_from_slice(&pre);
        }
        Ok(out)
    }

    fn context_preactivation(&self, context: &[f64]) -> [f64; FC_HIDDEN] {
        let mut pre = [0.0; FC_HIDDEN];
        pre.copy_from_slice(self.biases[0].values());
        let w = &self.weights[0];
        for (k, &c) in context.iter().enumerate() {
            for (p, &wv) in pre.iter_mut().zip(w.row(3 + k)) {
                *p += c * wv;
            }
        }
        pre
    }

    /// Output for one pixel given its node's first-layer preactivation.
    fn pixel_output(&self, rgb: [f64; 3], node_pre: &[f64], negative_slope: f64) -> [f64; 3] {
        let w0 = &self.weights[0];
        let mut h1 = [0.0; FC_HIDDEN];
        h1.copy_from_slice(node_pre);
        for c in 0..3 {
            let g = gamma_lift(rgb[c]);
            for (h, &wv) in h1.iter_mut().zip(w0.row(c)) {
                *h += g * wv;
            }
        }
        for h in &mut h1 {
            *h = leaky_relu(*h, negative_slope);
        }
        let mut h2 = [0.0; FC_HIDDEN];
        h2.copy_from_slice(self.biases[1].values());
        for (k, &a) in h1.iter().enumerate() {
            for (h, &wv) in h2.iter_mut().zip(self.weights[1].row(k)) {
                *h += a * wv;
            }
        }
        let mut out = [0.0; 3];
        out.copy_from_slice(self.biases[2].values());
        for (k, &a) in h2.iter().enumerate() {
            for (o, &wv) in out.iter_mut().zip(self.weights[2].row(k)) {
                *o += a * wv;
            }
        }
        out
    }
}

/// Tape handles for an [`FcParams`].
#[derive(Clone, Debug)]
pub struct FcVars {
    pub weights: [Var; 3],
    pub biases: [Var; 3],
}

impl FcVars {
    pub fn register(tape: &mut GradTape, params: &FcParams) -> Self {
        Self {
            weights: params.weights.clone().map(|w| tape.param(w)),
            biases: params.biases.clone().map(|b| tape.param(b)),
        }
    }
}

/// Unclamped output of the mapper for one pixel.
pub fn fc_forward(rgb: [f64; 3], context: &[f64], params: &FcParams, negative_slope: f64) -> Result<[f64; 3]> {
    if context.len() != params.context_width() {
        return Err(Error::dim(
            "fc_forward",
            (1, 3 + context.len()),
            (1, params.input_width()),
        ));
    }
    let pre = params.context_preactivation(context);
    Ok(params.pixel_output(rgb, &pre, negative_slope))
}

/// Records the mapper over all pixels on `tape`.
///
/// `rgb` is the `N × 3` linear input (gamma is applied on the tape),
/// `contexts` is `n × c` with one row per node, and `pixel_node[p]` names the
/// node of pixel `p`. `contexts` is `None` for the global mapper.
pub fn fc_forward_tape(
    tape: &mut GradTape,
    rgb: Var,
    contexts: Option<Var>,
    pixel_node: &Arc<[usize]>,
    vars: &FcVars,
    negative_slope: f64,
) -> Result<Var> {
    let in_width = tape.shape(vars.weights[0]).0;
    let lifted = tape.pow(rgb, INPUT_GAMMA);
    let w_rgb = tape.slice_rows(vars.weights[0], 0, 3)?;
    let mut z1 = tape.matmul(lifted, w_rgb)?;
    match contexts {
        Some(ctx) => {
            let w_ctx = tape.slice_rows(vars.weights[0], 3, in_width)?;
            let per_node = tape.matmul(ctx, w_ctx)?;
            let per_node = tape.add_row_bias(per_node, vars.biases[0])?;
            let per_pixel = tape.gather_rows(per_node, pixel_node.clone())?;
            z1 = tape.add(z1, per_pixel)?;
        }
        None => {
            if in_width != 3 {
                return Err(Error::dim("fc_forward", (1, 3), (in_width, FC_HIDDEN)));
            }
            z1 = tape.add_row_bias(z1, vars.biases[0])?;
        }
    }
    let a1 = tape.leaky_relu(z1, negative_slope);
    let z2 = tape.matmul(a1, vars.weights[1])?;
    let z2 = tape.add_row_bias(z2, vars.biases[1])?;
    let z3 = tape.matmul(z2, vars.weights[2])?;
    tape.add_row_bias(z3, vars.biases[2])
}

/// Maps every pixel of `img` with the context row of its node and clamps to
/// `[0, 1]`.
pub fn infer_image(
    img: &LinearImage,
    graph: &SemanticGraph,
    contexts: &Tensor2,
    params: &FcParams,
    negative_slope: f64,
) -> Result<DisplayImage> {
    if graph.pixel_index().len() != img.pixels().len() || graph.width() != img.width() {
        return Err(Error::dim(
            "infer_image",
            (img.height(), img.width()),
            (graph.height(), graph.width()),
        ));
    }
    infer_with_nodes(img, graph.pixel_index(), contexts, params, negative_slope)
}

/// Like [`infer_image`] but with an explicit per-pixel node index.
pub fn infer_with_nodes(
    img: &LinearImage,
    pixel_node: &[usize],
    contexts: &Tensor2,
    params: &FcParams,
    negative_slope: f64,
) -> Result<DisplayImage> {
    let pixels = map_pixels(img.pixels(), pixel_node, contexts, params, negative_slope, true)?;
    Ok(DisplayImage(RgbImage::new(img.width(), img.height(), pixels)?))
}

/// Runs the mapper over `pixels`, each with the context row named by
/// `pixel_node`. Outputs are clamped to `[0, 1]` when `clamp` is set.
pub fn map_pixels(
    pixels: &[[f64; 3]],
    pixel_node: &[usize],
    contexts: &Tensor2,
    params: &FcParams,
    negative_slope: f64,
    clamp: bool,
) -> Result<Vec<[f64; 3]>> {
    params.check_shapes()?;
    if pixel_node.len() != pixels.len() {
        return Err(Error::dim("infer_image", (pixels.len(), 1), (pixel_node.len(), 1)));
    }
    let pre = params.node_preactivations(contexts)?;
    if let Some(&bad) = pixel_node.iter().find(|&&n| n >= pre.rows()) {
        return Err(Error::Internal(format!("pixel maps to missing node {bad}")));
    }
    Ok(pixels
        .par_iter()
        .zip(pixel_node.par_iter())
        .map(|(&rgb, &node)| {
            let out = params.pixel_output(rgb, pre.row(node), negative_slope);
            if clamp {
                out.map(|v| v.clamp(0.0, 1.0))
            } else {
                out
            }
        })
        .collect())
}

/// Maps every pixel of `img` with a single context vector, clamped.
pub fn infer_uniform(
    img: &LinearImage,
    context: &[f64],
    params: &FcParams,
    negative_slope: f64,
) -> Result<DisplayImage> {
    let ctx = Tensor2::from_vec(1, context.len(), context.to_vec())?;
    infer_with_nodes(img, &vec![0; img.pixels().len()], &ctx, params, negative_slope)
}

/// Sampled grey-ramp response of one segment's mapping.
#[derive(Clone, Debug, PartialEq)]
pub struct ToneCurve {
    pub node_id: usize,
    /// `(input grey, output luma)`, inputs strictly increasing.
    pub points: Vec<(f64, f64)>,
}

impl ToneCurve {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("input_gray,output_luma\n");
        for (x, y) in &self.points {
            s.push_str(&format!("{x},{y}\n"));
        }
        s
    }
}

/// Feeds log-spaced greys `g ∈ [1/65535, 1]` as `(g, g, g)` through the
/// mapper and records the Rec.709 luma of the output.
pub fn per_segment_tonecurve(
    params: &FcParams,
    context: &[f64],
    samples: usize,
    node_id: usize,
    negative_slope: f64,
) -> Result<ToneCurve> {
    if samples < 2 {
        return Err(Error::Usage("a tone curve needs at least 2 samples".into()));
    }
    let lo = (1.0f64 / 65535.0).log10();
    let points = (0..samples)
        .map(|k| {
            let g = if k + 1 == samples {
                1.0
            } else {
                10f64.powf(lo - lo * k as f64 / (samples - 1) as f64)
            };
            let out = fc_forward([g, g, g], context, params, negative_slope)?;
            Ok((g, luma(out)))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ToneCurve { node_id, points })
}
