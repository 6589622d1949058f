//! Semantic hint network: six graph convolutions plus a projection to 18
//! hints per node, with DropEdge and node dropout while training.
//!
//! Layer `l` computes `σ(Â · Y · W)` where `Â` is the (optionally
//! normalised) adjacency of the graph after DropEdge and `σ` is Leaky-ReLU.
//! The final 64→18 projection uses the same propagation without `σ`.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{adjacency_from_edges, AdjacencyMode, SemanticGraph, FEATURE_WIDTH};
use crate::rng::{stream_rng, Stream};
use crate::tape::{GradTape, Var};
use crate::tensor::Tensor2;
use crate::Mode;

pub const HINT_WIDTH: usize = 18;
/// Width of the per-node vector handed to the tone mapper: features + hints.
pub const BROADCAST_WIDTH: usize = FEATURE_WIDTH + HINT_WIDTH;
/// Input width, the six convolution widths, then the projection width.
pub const GCN_WIDTHS: [usize; 8] = [FEATURE_WIDTH, 128, 128, 256, 256, 128, 64, HINT_WIDTH];

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GcnConfig {
    pub negative_slope: f64,
    pub dropedge: f64,
    pub input_dropout: f64,
    pub output_dropout: f64,
    pub adjacency: AdjacencyMode,
    pub bias: bool,
}

impl Default for GcnConfig {
    fn default() -> Self {
        Self {
            negative_slope: 0.01,
            dropedge: 0.2,
            input_dropout: 0.2,
            output_dropout: 0.5,
            adjacency: AdjacencyMode::Normalized,
            bias: false,
        }
    }
}

/// Weights `16→128→128→256→256→128→64` plus the `64→18` projection.
#[derive(Clone, Debug, PartialEq)]
pub struct GcnParams {
    pub weights: Vec<Tensor2>,
    /// Empty when the layers have no bias.
    pub biases: Vec<Tensor2>,
}

impl GcnParams {
    pub fn zeros(bias: bool) -> Self {
        let weights = GCN_WIDTHS.windows(2).map(|w| Tensor2::zeros(w[0], w[1])).collect();
        let biases = if bias {
            GCN_WIDTHS[1..].iter().map(|&w| Tensor2::zeros(1, w)).collect()
        } else {
            Vec::new()
        };
        Self { weights, biases }
    }

    pub fn check_shapes(&self) -> Result<()> {
        if self.weights.len() != GCN_WIDTHS.len() - 1 {
            return Err(Error::Checkpoint(format!(
                "expected {} GCN weight matrices, found {}",
                GCN_WIDTHS.len() - 1,
                self.weights.len()
            )));
        }
        for (l, w) in self.weights.iter().enumerate() {
            let want = (GCN_WIDTHS[l], GCN_WIDTHS[l + 1]);
            if w.shape() != want {
                return Err(Error::dim("gcn_weight", w.shape(), want));
            }
        }
        if !self.biases.is_empty() {
            for (l, b) in self.biases.iter().enumerate() {
                if b.shape() != (1, GCN_WIDTHS[l + 1]) {
                    return Err(Error::dim("gcn_bias", b.shape(), (1, GCN_WIDTHS[l + 1])));
                }
            }
        }
        Ok(())
    }
}

/// Tape handles for a [`GcnParams`].
#[derive(Clone, Debug)]
pub struct GcnVars {
    pub weights: Vec<Var>,
    pub biases: Vec<Var>,
}

impl GcnVars {
    pub fn register(tape: &mut GradTape, params: &GcnParams) -> Self {
        Self {
            weights: params.weights.iter().map(|w| tape.param(w.clone())).collect(),
            biases: params.biases.iter().map(|b| tape.param(b.clone())).collect(),
        }
    }

    pub fn constants(tape: &mut GradTape, params: &GcnParams) -> Self {
        Self {
            weights: params.weights.iter().map(|w| tape.constant(w.clone())).collect(),
            biases: params.biases.iter().map(|b| tape.constant(b.clone())).collect(),
        }
    }
}

/// Semantic hints `H` (n×18) and the broadcast form `Ĥ = [X | H]` (n×34).
#[derive(Clone, Debug, PartialEq)]
pub struct HintMatrix {
    pub hints: Tensor2,
    pub broadcast: Tensor2,
}

impl HintMatrix {
    pub fn new(features: &Tensor2, hints: Tensor2) -> Result<Self> {
        if features.rows() != hints.rows() {
            return Err(Error::dim("hint_matrix", features.shape(), hints.shape()));
        }
        let mut broadcast = Tensor2::zeros(hints.rows(), features.cols() + hints.cols());
        for r in 0..hints.rows() {
            let row = broadcast.row_mut(r);
            row[..features.cols()].copy_from_slice(features.row(r));
            row[features.cols()..].copy_from_slice(hints.row(r));
        }
        Ok(Self { hints, broadcast })
    }
}

/// Keeps each undirected edge with probability `1 − p`. Both directions go
/// together since only undirected pairs are stored. Eval mode keeps all.
pub fn dropedge<R: Rng + ?Sized>(
    edges: &[(usize, usize)],
    p: f64,
    rng: &mut R,
    mode: Mode,
) -> Vec<(usize, usize)> {
    if mode == Mode::Eval || p <= 0.0 {
        return edges.to_vec();
    }
    edges
        .iter()
        .copied()
        .filter(|_| rng.random::<f64>() >= p)
        .collect()
}

/// Row multipliers for inverted node dropout: 0 with probability `p`,
/// otherwise `1/(1−p)`. All ones in eval mode.
pub fn dropout_factors<R: Rng + ?Sized>(n: usize, p: f64, rng: &mut R, mode: Mode) -> Vec<f64> {
    if mode == Mode::Eval || p <= 0.0 {
        return vec![1.0; n];
    }
    let keep = 1.0 / (1.0 - p);
    (0..n)
        .map(|_| if rng.random::<f64>() < p { 0.0 } else { keep })
        .collect()
}

/// Zeroes whole node rows of `x` at rate `p` and rescales survivors.
pub fn node_dropout<R: Rng + ?Sized>(x: &Tensor2, p: f64, rng: &mut R, mode: Mode) -> Tensor2 {
    let factors = dropout_factors(x.rows(), p, rng, mode);
    let mut out = x.clone();
    for (r, f) in factors.iter().enumerate() {
        if *f != 1.0 {
            for v in out.row_mut(r) {
                *v *= f;
            }
        }
    }
    out
}

/// Records the hint network on `tape` and returns the `n × 18` hint handle.
///
/// Random draws happen in a fixed order: DropEdge per undirected edge, then
/// the input dropout per node, then the output dropout per node.
pub fn gcn_forward_tape<R: Rng + ?Sized>(
    tape: &mut GradTape,
    graph: &SemanticGraph,
    vars: &GcnVars,
    config: &GcnConfig,
    mode: Mode,
    rng: &mut R,
) -> Result<Var> {
    let x = graph.features();
    if x.cols() != FEATURE_WIDTH {
        return Err(Error::dim("gcn_forward", x.shape(), (x.rows(), FEATURE_WIDTH)));
    }
    let n = graph.node_count();
    let kept = dropedge(graph.undirected_edges(), config.dropedge, rng, mode);
    let adj = tape.constant(adjacency_from_edges(n, &kept, config.adjacency));

    let mut y = tape.constant(x.clone());
    let factors = dropout_factors(n, config.input_dropout, rng, mode);
    y = tape.scale_rows(y, factors)?;

    let layers = vars.weights.len();
    for (l, &w) in vars.weights.iter().enumerate() {
        let last = l + 1 == layers;
        if last {
            let factors = dropout_factors(n, config.output_dropout, rng, mode);
            y = tape.scale_rows(y, factors)?;
        }
        let yw = tape.matmul(y, w)?;
        let mut z = tape.matmul(adj, yw)?;
        if let Some(&b) = vars.biases.get(l) {
            z = tape.add_row_bias(z, b)?;
        }
        y = if last { z } else { tape.leaky_relu(z, config.negative_slope) };
    }
    Ok(y)
}

/// Hints for `graph` without gradient tracking.
pub fn gcn_forward<R: Rng + ?Sized>(
    graph: &SemanticGraph,
    params: &GcnParams,
    config: &GcnConfig,
    mode: Mode,
    rng: &mut R,
) -> Result<HintMatrix> {
    params.check_shapes()?;
    let mut tape = GradTape::new();
    let vars = GcnVars::constants(&mut tape, params);
    let h = gcn_forward_tape(&mut tape, graph, &vars, config, mode, rng)?;
    HintMatrix::new(graph.features(), tape.value(h).clone())
}

/// Eval-mode hints; a pure function of the graph and the parameters.
pub fn eval_hints(graph: &SemanticGraph, params: &GcnParams, config: &GcnConfig) -> Result<HintMatrix> {
    // No draws happen in eval mode; the generator is never consulted.
    gcn_forward(graph, params, config, Mode::Eval, &mut stream_rng(0, Stream::Dropout))
}

/// Per-pixel copy of each node's `Ĥ` row, `(width·height) × 34`.
pub fn broadcast_hints(graph: &SemanticGraph, hints: &HintMatrix) -> Result<Tensor2> {
    let table = &hints.broadcast;
    let mut out = Tensor2::zeros(graph.pixel_index().len(), table.cols());
    for (p, &node) in graph.pixel_index().iter().enumerate() {
        if node >= table.rows() {
            return Err(Error::Internal(format!("pixel {p} maps to missing node {node}")));
        }
        out.row_mut(p).copy_from_slice(table.row(node));
    }
    Ok(out)
}
