//! The three model variants, their parameters, and the forward passes the
//! trainer and the inference commands share.
//!
//! * `global_lut`: the tone mapper sees only the pixel colour.
//! * `local_lut`: it also sees the 16 statistics of the pixel's segment.
//! * `gsemtmo`: it sees the segment statistics plus 18 hints from the GCN.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fc::{fc_forward_tape, map_pixels, FcParams, FcVars};
use crate::gcn::{eval_hints, gcn_forward_tape, GcnConfig, GcnParams, GcnVars, BROADCAST_WIDTH};
use crate::graph::{build_graph, SemanticGraph, FEATURE_WIDTH};
use crate::raster::{DisplayImage, LinearImage, RgbImage, SegmentationMap};
use crate::rng::{stream_rng, Stream};
use crate::tape::{GradTape, Reduction, Var};
use crate::tensor::Tensor2;
use crate::Mode;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AblationMode {
    GlobalLut,
    LocalLut,
    Gsemtmo,
}

impl AblationMode {
    pub const ALL: [AblationMode; 3] = [AblationMode::GlobalLut, AblationMode::LocalLut, AblationMode::Gsemtmo];

    pub fn name(self) -> &'static str {
        match self {
            AblationMode::GlobalLut => "global_lut",
            AblationMode::LocalLut => "local_lut",
            AblationMode::Gsemtmo => "gsemtmo",
        }
    }

    /// Width of the per-segment vector appended to the pixel colour.
    pub fn context_width(self) -> usize {
        match self {
            AblationMode::GlobalLut => 0,
            AblationMode::LocalLut => FEATURE_WIDTH,
            AblationMode::Gsemtmo => BROADCAST_WIDTH,
        }
    }

    pub fn uses_graph(self) -> bool {
        self != AblationMode::GlobalLut
    }

    pub fn uses_gcn(self) -> bool {
        self == AblationMode::Gsemtmo
    }
}

impl fmt::Display for AblationMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for AblationMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::Usage(format!("unknown ablation mode `{s}` (expected global_lut, local_lut or gsemtmo)")))
    }
}

/// Architecture choices stored alongside the weights.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub mode: AblationMode,
    pub gcn: GcnConfig,
    pub fc_negative_slope: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            mode: AblationMode::Gsemtmo,
            gcn: GcnConfig::default(),
            fc_negative_slope: 0.01,
        }
    }
}

impl ModelConfig {
    pub fn with_mode(mode: AblationMode) -> Self {
        Self {
            mode,
            ..Self::default()
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams {
    pub config: ModelConfig,
    /// Present only for `gsemtmo`.
    pub gcn: Option<GcnParams>,
    pub fc: FcParams,
}

impl ModelParams {
    pub fn zeros(config: ModelConfig) -> Self {
        Self {
            config,
            gcn: config.mode.uses_gcn().then(|| GcnParams::zeros(config.gcn.bias)),
            fc: FcParams::zeros(3 + config.mode.context_width()),
        }
    }

    pub fn mode(&self) -> AblationMode {
        self.config.mode
    }

    /// Every tensor with a stable name, in optimizer order.
    pub fn named_tensors(&self) -> Vec<(String, &Tensor2)> {
        let mut out = Vec::new();
        if let Some(gcn) = &self.gcn {
            for (l, w) in gcn.weights.iter().enumerate() {
                out.push((format!("gcn.w{l}"), w));
            }
            for (l, b) in gcn.biases.iter().enumerate() {
                out.push((format!("gcn.b{l}"), b));
            }
        }
        for l in 0..3 {
            out.push((format!("fc.w{l}"), &self.fc.weights[l]));
            out.push((format!("fc.b{l}"), &self.fc.biases[l]));
        }
        out
    }

    /// Same order as [`named_tensors`](Self::named_tensors).
    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor2> {
        let mut out: Vec<&mut Tensor2> = Vec::new();
        if let Some(gcn) = &mut self.gcn {
            out.extend(gcn.weights.iter_mut());
            out.extend(gcn.biases.iter_mut());
        }
        for (w, b) in self.fc.weights.iter_mut().zip(self.fc.biases.iter_mut()) {
            out.push(w);
            out.push(b);
        }
        out
    }

    /// Rebuilds parameters from named tensors; every expected name must be
    /// present with the architecture's shape. Extra names are ignored.
    pub fn from_named(config: ModelConfig, tensors: &BTreeMap<String, Tensor2>) -> Result<Self> {
        let mut params = Self::zeros(config);
        let names: Vec<String> = params.named_tensors().into_iter().map(|(n, _)| n).collect();
        for (name, slot) in names.iter().zip(params.tensors_mut()) {
            let t = tensors
                .get(name)
                .ok_or_else(|| Error::Checkpoint(format!("missing tensor `{name}`")))?;
            if t.shape() != slot.shape() {
                return Err(Error::Checkpoint(format!(
                    "tensor `{name}` has shape {:?}, architecture expects {:?}",
                    t.shape(),
                    slot.shape()
                )));
            }
            *slot = t.clone();
        }
        params.check()?;
        Ok(params)
    }

    pub fn check(&self) -> Result<()> {
        if self.gcn.is_some() != self.config.mode.uses_gcn() {
            return Err(Error::Internal(format!("GCN presence does not match mode {}", self.config.mode)));
        }
        if let Some(gcn) = &self.gcn {
            gcn.check_shapes()?;
        }
        self.fc.check_shapes()?;
        if self.fc.context_width() != self.config.mode.context_width() {
            return Err(Error::dim(
                "fc_input",
                self.fc.weights[0].shape(),
                (3 + self.config.mode.context_width(), self.fc.weights[0].cols()),
            ));
        }
        if let Some((name, _)) = self.named_tensors().into_iter().find(|(_, t)| !t.all_finite()) {
            return Err(Error::Checkpoint(format!("tensor `{name}` has non-finite values")));
        }
        Ok(())
    }

    pub fn parameter_count(&self) -> usize {
        self.named_tensors().iter().map(|(_, t)| t.len()).sum()
    }
}

/// Weights uniform in `±√(1/fan_in)` (fan-in = rows), biases zero.
pub fn init_params(config: ModelConfig, seed: u64) -> ModelParams {
    let mut params = ModelParams::zeros(config);
    let mut rng = stream_rng(seed, Stream::Init);
    let names: Vec<String> = params.named_tensors().into_iter().map(|(n, _)| n).collect();
    for (name, t) in names.iter().zip(params.tensors_mut()) {
        if name.contains(".w") {
            let bound = (1.0 / t.rows() as f64).sqrt();
            for v in t.values_mut() {
                *v = rng.random_range(-bound..bound);
            }
        }
    }
    params
}

/// One training or validation pair in the layout the forward pass wants.
#[derive(Clone, Debug)]
pub struct PreparedSample {
    pub id: String,
    pub width: usize,
    pub height: usize,
    /// `N × 3` linear input.
    pub input: Tensor2,
    /// `N × 3` display-encoded target.
    pub target: Arc<Tensor2>,
    pub graph: Option<SemanticGraph>,
    pub pixel_node: Arc<[usize]>,
}

impl PreparedSample {
    /// Builds the graph when `mode` needs one.
    pub fn new(
        id: impl Into<String>,
        img: &LinearImage,
        seg: &SegmentationMap,
        reference: &DisplayImage,
        mode: AblationMode,
    ) -> Result<Self> {
        if img.dims() != reference.dims() {
            return Err(Error::dim(
                "prepared_sample",
                (img.height(), img.width()),
                (reference.height(), reference.width()),
            ));
        }
        let graph = if mode.uses_graph() {
            Some(build_graph(img, seg)?)
        } else {
            if img.dims() != seg.dims() {
                return Err(Error::dim(
                    "prepared_sample",
                    (img.height(), img.width()),
                    (seg.height(), seg.width()),
                ));
            }
            None
        };
        let pixel_node: Arc<[usize]> = match &graph {
            Some(g) => g.pixel_index().into(),
            None => vec![0; img.pixels().len()].into(),
        };
        Ok(Self {
            id: id.into(),
            width: img.width(),
            height: img.height(),
            input: pixels_to_tensor(img.pixels()),
            target: Arc::new(pixels_to_tensor(reference.pixels())),
            graph,
            pixel_node,
        })
    }

    pub fn input_pixels(&self) -> Vec<[f64; 3]> {
        tensor_to_pixels(&self.input)
    }

    pub fn target_image(&self) -> RgbImage {
        RgbImage::new(self.width, self.height, tensor_to_pixels(&self.target)).expect("shape checked on construction")
    }
}

pub(crate) fn pixels_to_tensor(pixels: &[[f64; 3]]) -> Tensor2 {
    Tensor2::from_vec(pixels.len(), 3, pixels.iter().flatten().copied().collect()).expect("length is 3·N")
}

pub(crate) fn tensor_to_pixels(t: &Tensor2) -> Vec<[f64; 3]> {
    t.values().chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect()
}

/// Tape handles for a [`ModelParams`], in the same order as its tensors.
#[derive(Clone, Debug)]
pub struct ModelVars {
    pub gcn: Option<GcnVars>,
    pub fc: FcVars,
}

impl ModelVars {
    pub fn register(tape: &mut GradTape, params: &ModelParams) -> Self {
        Self {
            gcn: params.gcn.as_ref().map(|g| GcnVars::register(tape, g)),
            fc: FcVars::register(tape, &params.fc),
        }
    }

    pub fn all(&self) -> Vec<Var> {
        let mut out = Vec::new();
        if let Some(g) = &self.gcn {
            out.extend(&g.weights);
            out.extend(&g.biases);
        }
        for (w, b) in self.fc.weights.iter().zip(&self.fc.biases) {
            out.push(*w);
            out.push(*b);
        }
        out
    }
}

fn require_graph<'a>(graph: Option<&'a SemanticGraph>, mode: AblationMode) -> Result<&'a SemanticGraph> {
    graph.ok_or_else(|| Error::Usage(format!("mode {mode} needs a semantic graph")))
}

/// Records the full forward pass for `sample` and returns the `N × 3`
/// unclamped prediction.
pub fn forward_tape<R: Rng + ?Sized>(
    tape: &mut GradTape,
    params: &ModelParams,
    vars: &ModelVars,
    sample: &PreparedSample,
    mode: Mode,
    rng: &mut R,
) -> Result<Var> {
    let ablation = params.mode();
    let rgb = tape.constant(sample.input.clone());
    let contexts = match ablation {
        AblationMode::GlobalLut => None,
        AblationMode::LocalLut => {
            let graph = require_graph(sample.graph.as_ref(), ablation)?;
            Some(tape.constant(graph.features().clone()))
        }
        AblationMode::Gsemtmo => {
            let graph = require_graph(sample.graph.as_ref(), ablation)?;
            let gcn = vars
                .gcn
                .as_ref()
                .ok_or_else(|| Error::Internal("gsemtmo model without GCN variables".into()))?;
            let h = gcn_forward_tape(tape, graph, gcn, &params.config.gcn, mode, rng)?;
            let x = tape.constant(graph.features().clone());
            Some(tape.concat_cols(x, h)?)
        }
    };
    fc_forward_tape(tape, rgb, contexts, &sample.pixel_node, &vars.fc, params.config.fc_negative_slope)
}

/// Mean and summed L1 of one sample.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossValue {
    pub mean: f64,
    pub sum: f64,
}

/// Training-mode loss of one sample and the gradient of its mean L1 with
/// respect to every parameter tensor (in [`ModelParams::named_tensors`]
/// order).
pub fn loss_and_gradients<R: Rng + ?Sized>(
    params: &ModelParams,
    sample: &PreparedSample,
    mode: Mode,
    rng: &mut R,
) -> Result<(LossValue, Vec<Tensor2>)> {
    let mut tape = GradTape::new();
    let vars = ModelVars::register(&mut tape, params);
    let pred = forward_tape(&mut tape, params, &vars, sample, mode, rng)?;
    let loss = tape.l1(pred, sample.target.clone(), Reduction::Mean)?;
    let mean = tape.value(loss).values()[0];
    let value = LossValue {
        mean,
        sum: mean * sample.target.len() as f64,
    };
    let mut grads = tape.backward(loss)?;
    Ok((value, vars.all().into_iter().map(|v| grads.take(v)).collect()))
}

/// Per-node context rows used at inference (eval-mode hints).
pub fn contexts(params: &ModelParams, graph: Option<&SemanticGraph>) -> Result<Tensor2> {
    match params.mode() {
        AblationMode::GlobalLut => Ok(Tensor2::zeros(1, 0)),
        AblationMode::LocalLut => Ok(require_graph(graph, params.mode())?.features().clone()),
        AblationMode::Gsemtmo => {
            let graph = require_graph(graph, params.mode())?;
            let gcn = params
                .gcn
                .as_ref()
                .ok_or_else(|| Error::Internal("gsemtmo model without GCN weights".into()))?;
            Ok(eval_hints(graph, gcn, &params.config.gcn)?.broadcast)
        }
    }
}

/// Eval-mode prediction for every pixel.
pub fn predict_pixels(
    params: &ModelParams,
    pixels: &[[f64; 3]],
    graph: Option<&SemanticGraph>,
    clamp: bool,
) -> Result<Vec<[f64; 3]>> {
    let ctx = contexts(params, graph)?;
    let pixel_node: Vec<usize> = match (params.mode(), graph) {
        (AblationMode::GlobalLut, _) | (_, None) => vec![0; pixels.len()],
        (_, Some(g)) => g.pixel_index().to_vec(),
    };
    map_pixels(pixels, &pixel_node, &ctx, &params.fc, params.config.fc_negative_slope, clamp)
}

/// Clamped eval-mode rendering of `img`. `graph` may be omitted for
/// `global_lut`.
pub fn predict(params: &ModelParams, img: &LinearImage, graph: Option<&SemanticGraph>) -> Result<DisplayImage> {
    if let Some(g) = graph {
        if (g.width(), g.height()) != img.dims() {
            return Err(Error::dim("predict", (img.height(), img.width()), (g.height(), g.width())));
        }
    }
    let pixels = predict_pixels(params, img.pixels(), graph, true)?;
    Ok(DisplayImage(RgbImage::new(img.width(), img.height(), pixels)?))
}

/// Eval-mode, unclamped mean L1 of one sample.
pub fn eval_loss(params: &ModelParams, sample: &PreparedSample) -> Result<f64> {
    let pred = predict_pixels(params, &sample.input_pixels(), sample.graph.as_ref(), false)?;
    let total: f64 = pred
        .iter()
        .flatten()
        .zip(sample.target.values())
        .map(|(a, b)| (a - b).abs())
        .sum();
    Ok(total / sample.target.len() as f64)
}
