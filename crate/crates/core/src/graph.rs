//! Segment graphs: one node per coarse label present, edges between labels
//! that touch under 4-connectivity, and a 16-wide feature row per node.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::raster::{luma, CoarseClass, LinearImage, SegmentationMap, NUM_CLASSES};
use crate::stats::{median, std_dev};
use crate::tensor::Tensor2;

pub const FEATURE_WIDTH: usize = 16;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GraphNode {
    pub label: u8,
    pub pixel_count: usize,
}

/// Per-node statistics over linear pixel values.
#[derive(Clone, Debug, PartialEq)]
pub struct NodeFeatures {
    pub one_hot: [f64; NUM_CLASSES],
    pub median_rgb: [f64; 3],
    pub std_rgb: [f64; 3],
    pub median_luma: f64,
}

impl NodeFeatures {
    /// `[one_hot(9), median RGB, std RGB, median luma]`.
    pub fn to_row(&self) -> [f64; FEATURE_WIDTH] {
        let mut row = [0.0; FEATURE_WIDTH];
        row[..9].copy_from_slice(&self.one_hot);
        row[9..12].copy_from_slice(&self.median_rgb);
        row[12..15].copy_from_slice(&self.std_rgb);
        row[15] = self.median_luma;
        row
    }
}

/// How the GCN propagates over edges.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AdjacencyMode {
    /// `D^-1/2 (A + I) D^-1/2`.
    #[default]
    Normalized,
    /// Plain 0/1 adjacency without self-loops.
    Raw,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SemanticGraph {
    width: usize,
    height: usize,
    nodes: Vec<GraphNode>,
    /// Undirected edges as `(i, j)` with `i < j`, sorted.
    edges: Vec<(usize, usize)>,
    features: Tensor2,
    pixel_index: Vec<usize>,
}

/// Builds the graph of `seg`, with node features taken from `img`.
pub fn build_graph(img: &LinearImage, seg: &SegmentationMap) -> Result<SemanticGraph> {
    if seg.is_empty() {
        return Err(Error::EmptyMap);
    }
    if img.dims() != seg.dims() {
        return Err(Error::dim(
            "build_graph",
            (img.height(), img.width()),
            (seg.height(), seg.width()),
        ));
    }
    let labels = seg.distinct_labels();
    let mut node_of_label = [usize::MAX; NUM_CLASSES];
    for (i, &l) in labels.iter().enumerate() {
        node_of_label[l as usize] = i;
    }
    let pixel_index: Vec<usize> = seg.labels().iter().map(|&l| node_of_label[l as usize]).collect();

    let (w, h) = seg.dims();
    let mut edges = BTreeSet::new();
    for y in 0..h {
        for x in 0..w {
            let a = pixel_index[y * w + x];
            if x + 1 < w {
                let b = pixel_index[y * w + x + 1];
                if a != b {
                    edges.insert((a.min(b), a.max(b)));
                }
            }
            if y + 1 < h {
                let b = pixel_index[(y + 1) * w + x];
                if a != b {
                    edges.insert((a.min(b), a.max(b)));
                }
            }
        }
    }

    let mut members: Vec<Vec<usize>> = vec![Vec::new(); labels.len()];
    for (p, &n) in pixel_index.iter().enumerate() {
        members[n].push(p);
    }
    let mut features = Tensor2::zeros(labels.len(), FEATURE_WIDTH);
    for (i, pixels) in members.iter().enumerate() {
        let f = features_of(img, pixels, labels[i])?;
        features.row_mut(i).copy_from_slice(&f.to_row());
    }
    let nodes = labels
        .iter()
        .zip(&members)
        .map(|(&label, m)| GraphNode {
            label,
            pixel_count: m.len(),
        })
        .collect();

    Ok(SemanticGraph {
        width: w,
        height: h,
        nodes,
        edges: edges.into_iter().collect(),
        features,
        pixel_index,
    })
}

/// Features of the node whose pixels carry `node_id` in `pixel_index`.
pub fn node_features(
    img: &LinearImage,
    pixel_index: &[usize],
    node_id: usize,
    label: u8,
) -> Result<NodeFeatures> {
    if pixel_index.len() != img.pixels().len() {
        return Err(Error::dim(
            "node_features",
            (img.pixels().len(), 1),
            (pixel_index.len(), 1),
        ));
    }
    let pixels: Vec<usize> = pixel_index
        .iter()
        .enumerate()
        .filter(|&(_, &n)| n == node_id)
        .map(|(p, _)| p)
        .collect();
    features_of(img, &pixels, label)
}

fn features_of(img: &LinearImage, pixels: &[usize], label: u8) -> Result<NodeFeatures> {
    if pixels.is_empty() {
        return Err(Error::Internal(format!("node for label {label} has no pixels")));
    }
    if label as usize >= NUM_CLASSES {
        return Err(Error::Internal(format!("label {label} out of range")));
    }
    let all = img.pixels();
    let channel = |c: usize| -> Vec<f64> { pixels.iter().map(|&p| all[p][c]).collect() };
    let mut one_hot = [0.0; NUM_CLASSES];
    one_hot[label as usize] = 1.0;
    let mut median_rgb = [0.0; 3];
    let mut std_rgb = [0.0; 3];
    for c in 0..3 {
        let v = channel(c);
        median_rgb[c] = median(&v).unwrap_or(0.0);
        std_rgb[c] = std_dev(&v).unwrap_or(0.0);
    }
    let lum: Vec<f64> = pixels.iter().map(|&p| luma(all[p])).collect();
    Ok(NodeFeatures {
        one_hot,
        median_rgb,
        std_rgb,
        median_luma: median(&lum).unwrap_or(0.0),
    })
}

/// Dense adjacency for `n` nodes from undirected `edges`.
pub fn adjacency_from_edges(n: usize, edges: &[(usize, usize)], mode: AdjacencyMode) -> Tensor2 {
    let mut a = match mode {
        AdjacencyMode::Normalized => Tensor2::identity(n),
        AdjacencyMode::Raw => Tensor2::zeros(n, n),
    };
    for &(i, j) in edges {
        if i != j {
            a.set(i, j, 1.0);
            a.set(j, i, 1.0);
        }
    }
    if mode == AdjacencyMode::Normalized {
        let inv_sqrt: Vec<f64> = (0..n)
            .map(|i| 1.0 / a.row(i).iter().sum::<f64>().sqrt())
            .collect();
        for i in 0..n {
            for j in 0..n {
                let v = a.get(i, j);
                if v != 0.0 {
                    a.set(i, j, v * inv_sqrt[i] * inv_sqrt[j]);
                }
            }
        }
    }
    a
}

impl SemanticGraph {
    /// Assembles a graph from parts, checking the structural invariants.
    pub fn from_parts(
        width: usize,
        height: usize,
        nodes: Vec<GraphNode>,
        edges: Vec<(usize, usize)>,
        features: Tensor2,
        pixel_index: Vec<usize>,
    ) -> Result<Self> {
        let n = nodes.len();
        if features.rows() != n {
            return Err(Error::dim("graph_features", features.shape(), (n, FEATURE_WIDTH)));
        }
        if pixel_index.len() != width * height {
            return Err(Error::dim("pixel_index", (height, width), (pixel_index.len(), 1)));
        }
        if pixel_index.iter().any(|&p| p >= n) {
            return Err(Error::Internal("pixel mapped to a missing node".into()));
        }
        let mut set = BTreeSet::new();
        for (i, j) in edges {
            if i == j || i >= n || j >= n {
                return Err(Error::Internal(format!("invalid edge ({i}, {j})")));
            }
            set.insert((i.min(j), i.max(j)));
        }
        Ok(Self {
            width,
            height,
            nodes,
            edges: set.into_iter().collect(),
            features,
            pixel_index,
        })
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn nodes(&self) -> &[GraphNode] {
        &self.nodes
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    /// Undirected edges, `(i, j)` with `i < j`, sorted.
    pub fn undirected_edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn features(&self) -> &Tensor2 {
        &self.features
    }

    pub fn pixel_index(&self) -> &[usize] {
        &self.pixel_index
    }

    /// Node holding `label`, if present.
    pub fn node_of_label(&self, label: u8) -> Option<usize> {
        self.nodes.iter().position(|n| n.label == label)
    }

    /// Both directions of every edge, sorted lexicographically (COO order).
    pub fn edge_list(&self) -> Vec<(usize, usize)> {
        let mut out: Vec<_> = self
            .edges
            .iter()
            .flat_map(|&(i, j)| [(i, j), (j, i)])
            .collect();
        out.sort_unstable();
        out
    }

    pub fn normalized_adjacency(&self) -> Tensor2 {
        adjacency_from_edges(self.node_count(), &self.edges, AdjacencyMode::Normalized)
    }

    pub fn adjacency(&self, mode: AdjacencyMode) -> Tensor2 {
        adjacency_from_edges(self.node_count(), &self.edges, mode)
    }

    /// Renumbers nodes so that old node `i` becomes node `perm[i]`.
    pub fn permute_nodes(&self, perm: &[usize]) -> Result<Self> {
        let n = self.node_count();
        let mut seen = vec![false; n];
        if perm.len() != n || perm.iter().any(|&p| p >= n || std::mem::replace(&mut seen[p], true)) {
            return Err(Error::Usage("not a permutation of the node ids".into()));
        }
        let mut nodes = self.nodes.clone();
        let mut features = Tensor2::zeros(n, self.features.cols());
        for i in 0..n {
            nodes[perm[i]] = self.nodes[i].clone();
            features.row_mut(perm[i]).copy_from_slice(self.features.row(i));
        }
        let edges = self.edges.iter().map(|&(i, j)| (perm[i], perm[j])).collect();
        let pixel_index = self.pixel_index.iter().map(|&p| perm[p]).collect();
        Self::from_parts(self.width, self.height, nodes, edges, features, pixel_index)
    }

    pub fn dump(&self) -> GraphDump {
        GraphDump {
            width: self.width,
            height: self.height,
            nodes: self
                .nodes
                .iter()
                .enumerate()
                .map(|(i, n)| DumpNode {
                    id: i,
                    label: n.label,
                    class: CoarseClass::from_index(n.label).map_or("?", CoarseClass::name).to_string(),
                    pixel_count: n.pixel_count,
                    features: self.features.row(i).to_vec(),
                })
                .collect(),
            edges: self.edges.clone(),
        }
    }
}

/// JSON-friendly view of a graph.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GraphDump {
    pub width: usize,
    pub height: usize,
    pub nodes: Vec<DumpNode>,
    pub edges: Vec<(usize, usize)>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DumpNode {
    pub id: usize,
    pub label: u8,
    pub class: String,
    pub pixel_count: usize,
    pub features: Vec<f64>,
}
