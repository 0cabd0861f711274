//! Graph representation of a single floor image.
//!
//! Every keypoint becomes a node; the graph is complete, with each edge
//! weighted by the Euclidean pixel distance between its endpoints. The
//! encoder consumes the symmetric normalization of that adjacency.

use std::fmt;

use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// Length of a keypoint descriptor vector.
pub const DESCRIPTOR_LEN: usize = 128;

/// Identifier of a source image / view.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ViewId(pub u64);

impl fmt::Display for ViewId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// One detected floor feature: pixel position, detector response and a
/// 128-dimensional descriptor.
#[derive(Debug, Clone, PartialEq)]
pub struct Keypoint {
    /// Pixel row coordinate.
    pub m: f32,
    /// Pixel column coordinate.
    pub n: f32,
    /// Detector response, used to rank keypoints when a view holds more of
    /// them than the requested node count.
    pub response: f32,
    /// Descriptor of length [`DESCRIPTOR_LEN`].
    pub descriptor: Vec<f32>,
}

impl Keypoint {
    pub fn new(m: f32, n: f32, response: f32, descriptor: Vec<f32>) -> Self {
        Self {
            m,
            n,
            response,
            descriptor,
        }
    }

    /// Squared Euclidean distance between two descriptors, in f64.
    pub fn descriptor_distance_sq(&self, other: &Keypoint) -> f64 {
        self.descriptor
            .iter()
            .zip(&other.descriptor)
            .map(|(&a, &b)| {
                let d = a as f64 - b as f64;
                d * d
            })
            .sum()
    }
}

/// Complete graph over the keypoints of one view.
#[derive(Debug, Clone, PartialEq)]
pub struct FloorGraph {
    nodes: Vec<Keypoint>,
    adjacency: DMatrix<f64>,
    view_id: ViewId,
}

impl FloorGraph {
    /// Builds a graph directly from an already-selected node list, computing
    /// the complete pairwise pixel-distance adjacency.
    pub fn from_nodes(nodes: Vec<Keypoint>, view_id: ViewId) -> Result<Self> {
        if nodes.is_empty() {
            return Err(Error::EmptyView(view_id));
        }
        for kp in &nodes {
            if kp.descriptor.len() != DESCRIPTOR_LEN {
                return Err(Error::Shape(format!(
                    "descriptor length {} != {DESCRIPTOR_LEN}",
                    kp.descriptor.len()
                )));
            }
        }
        let n = nodes.len();
        let mut adjacency = DMatrix::zeros(n, n);
        for i in 0..n {
            for j in (i + 1)..n {
                let dm = nodes[i].m as f64 - nodes[j].m as f64;
                let dn = nodes[i].n as f64 - nodes[j].n as f64;
                let d = (dm * dm + dn * dn).sqrt();
                adjacency[(i, j)] = d;
                adjacency[(j, i)] = d;
            }
        }
        Ok(Self {
            nodes,
            adjacency,
            view_id,
        })
    }

    pub fn nodes(&self) -> &[Keypoint] {
        &self.nodes
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn adjacency(&self) -> &DMatrix<f64> {
        &self.adjacency
    }

    pub fn view_id(&self) -> ViewId {
        self.view_id
    }
}

/// Symmetrically normalized adjacency with self-loops, ready for the encoder.
#[derive(Debug, Clone, PartialEq)]
pub struct NormalizedAdjacency {
    matrix: DMatrix<f64>,
}

impl NormalizedAdjacency {
    pub(crate) fn from_matrix(matrix: DMatrix<f64>) -> Self {
        Self { matrix }
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }
}

/// Builds the graph of one view from its keypoints.
///
/// Keeps the `node_count` keypoints of highest detector response (ties broken
/// by ascending `(m, n)`, then descriptor bytes), in that order, and computes
/// the complete pairwise-distance adjacency. Node order is deterministic and
/// independent of the input order.
pub fn build_graph(keypoints: &[Keypoint], node_count: usize, view_id: ViewId) -> Result<FloorGraph> {
    if keypoints.is_empty() {
        return Err(Error::EmptyView(view_id));
    }
    if node_count == 0 {
        return Err(Error::InvalidConfig("node_count must be >= 1".into()));
    }
    let mut order: Vec<usize> = (0..keypoints.len()).collect();
    order.sort_by(|&a, &b| {
        let ka = &keypoints[a];
        let kb = &keypoints[b];
        kb.response
            .partial_cmp(&ka.response)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then_with(|| ka.m.partial_cmp(&kb.m).unwrap_or(std::cmp::Ordering::Equal))
            .then_with(|| ka.n.partial_cmp(&kb.n).unwrap_or(std::cmp::Ordering::Equal))
            .then_with(|| {
                ka.descriptor
                    .iter()
                    .map(|v| v.to_bits())
                    .cmp(kb.descriptor.iter().map(|v| v.to_bits()))
            })
    });
    let kept = order.len().min(node_count);
    let nodes: Vec<Keypoint> = order[..kept].iter().map(|&i| keypoints[i].clone()).collect();
    FloorGraph::from_nodes(nodes, view_id)
}

/// Symmetric normalization of the adjacency with self-loops: with
/// `a~ = a + I` and `d_i` the row sums of `a~`, each entry becomes
/// `a~_ij / sqrt(d_i * d_j)`.
pub fn normalize_adjacency(graph: &FloorGraph) -> NormalizedAdjacency {
    normalize_adjacency_scaled(graph, 1.0)
}

/// Like [`normalize_adjacency`], with the raw pixel distances multiplied by
/// `distance_scale` before the self-loops are added. The default pipeline
/// uses scale 1.0 (raw pixels); other values are an experimental knob.
pub fn normalize_adjacency_scaled(graph: &FloorGraph, distance_scale: f64) -> NormalizedAdjacency {
    let n = graph.node_count();
    let a = graph.adjacency();
    let mut tilde = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            tilde[(i, j)] = if i == j { 1.0 } else { a[(i, j)] * distance_scale };
        }
    }
    let degrees: Vec<f64> = (0..n).map(|i| tilde.row(i).sum()).collect();
    let inv_sqrt: Vec<f64> = degrees.iter().map(|d| 1.0 / d.sqrt()).collect();
    let mut matrix = DMatrix::zeros(n, n);
    for i in 0..n {
        matrix[(i, i)] = inv_sqrt[i] * tilde[(i, i)] * inv_sqrt[i];
        for j in (i + 1)..n {
            let v = inv_sqrt[i] * tilde[(i, j)] * inv_sqrt[j];
            matrix[(i, j)] = v;
            matrix[(j, i)] = v;
        }
    }
    NormalizedAdjacency { matrix }
}

/// Stacks node descriptors into an `N x 128` matrix, row i matching node i.
pub fn feature_matrix(graph: &FloorGraph) -> DMatrix<f64> {
    let n = graph.node_count();
    DMatrix::from_fn(n, DESCRIPTOR_LEN, |i, j| graph.nodes[i].descriptor[j] as f64)
}
