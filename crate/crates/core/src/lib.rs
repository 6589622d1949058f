//! Semantic-graph conditioned tone mapping.
//!
//! A linear HDR image and its coarse segmentation are turned into a region
//! adjacency graph ([`graph`]), a graph convolutional network turns node
//! statistics into per-segment hints ([`gcn`]), and a small per-pixel network
//! maps each pixel using those hints ([`fc`]). [`trainer`] fits both networks
//! end to end, [`blending`] stitches per-segment renderings together with soft
//! masks and [`metrics`] scores the results.
//!
//! Everything is written against a small reverse-mode tape ([`tape`]) over
//! dense `f64` matrices ([`Tensor2`]).

pub mod adamw;
pub mod blending;
pub mod checkpoint;
pub mod dataset;
mod error;
pub mod fc;
pub mod gcn;
pub mod graph;
pub mod metrics;
pub mod model;
pub mod raster;
pub mod rng;
pub mod stats;
pub mod synthetic;
pub mod tape;
mod tensor;
pub mod trainer;

use serde::{Deserialize, Serialize};

pub use error::{Error, Result};
pub use graph::{build_graph, AdjacencyMode, SemanticGraph};
pub use model::{AblationMode, ModelParams};
pub use raster::{CoarseClass, DisplayImage, LinearImage, ReferenceImage, RgbImage, SegmentationMap};
pub use tape::{GradTape, Gradients, Reduction, Var};
pub use tensor::Tensor2;

/// Whether stochastic regularisers (edge and node dropout) are active.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Train,
    Eval,
}

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/graph.md")]
    mod graph {}
    #[doc = include_str!("../../../book/src/hints.md")]
    mod hints {}
    #[doc = include_str!("../../../book/src/tonemap.md")]
    mod tonemap {}
    #[doc = include_str!("../../../book/src/training.md")]
    mod training {}
    #[doc = include_str!("../../../book/src/blending.md")]
    mod blending {}
    #[doc = include_str!("../../../book/src/metrics.md")]
    mod metrics {}
}
