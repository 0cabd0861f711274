//! Graph-level embedding network.
//!
//! Three graph-convolution layers propagate node descriptors through the
//! normalized adjacency, a row-wise softmax turns the final node features
//! into per-node distributions, and a gated attention sum pools them into a
//! single fixed-length embedding:
//!
//! ```text
//! H1 = relu(A^ X W0)
//! H2 = relu(A^ H1 W1)
//! Z  = A^ H2 W2
//! S  = row_softmax(Z)
//! a_i = sigmoid(S_i . gate + bias)
//! e  = sum_i a_i S_i
//! ```
//!
//! Training needs exact gradients of a scalar objective with respect to every
//! parameter; [`EncoderParams::encode_with_gradients`] backpropagates an
//! upstream vector through pooling, softmax and all three layers analytically.

use std::fs;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::distributions::{Distribution, Uniform};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::graph::{NormalizedAdjacency, DESCRIPTOR_LEN};

const PARAMS_MAGIC: &[u8; 6] = b"FGENC1";

/// Hidden and output widths of the encoder.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EncoderDims {
    pub h0: usize,
    pub h1: usize,
    pub h2: usize,
}

impl Default for EncoderDims {
    fn default() -> Self {
        Self { h0: 64, h1: 64, h2: 32 }
    }
}

/// All trainable parameters of the encoder.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderParams {
    w0: DMatrix<f64>,
    w1: DMatrix<f64>,
    w2: DMatrix<f64>,
    gate: DVector<f64>,
    gate_bias: f64,
}

/// Fixed-length embedding of one graph.
#[derive(Debug, Clone, PartialEq)]
pub struct Embedding {
    values: DVector<f64>,
}

impl Embedding {
    pub fn from_vec(values: Vec<f64>) -> Self {
        Self { values: DVector::from_vec(values) }
    }

    pub fn values(&self) -> &DVector<f64> {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.len() == 0
    }
}

/// Euclidean distance between two embeddings.
pub fn embedding_distance(a: &Embedding, b: &Embedding) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::Shape(format!(
            "embedding lengths differ: {} vs {}",
            a.len(),
            b.len()
        )));
    }
    Ok((&a.values - &b.values).norm())
}

/// Gradients of a scalar objective, one entry per parameter of
/// [`EncoderParams`], with matching shapes.
#[derive(Debug, Clone)]
pub struct GradientSet {
    pub w0: DMatrix<f64>,
    pub w1: DMatrix<f64>,
    pub w2: DMatrix<f64>,
    pub gate: DVector<f64>,
    pub gate_bias: f64,
}

impl GradientSet {
    fn zeros(dims: EncoderDims) -> Self {
        Self {
            w0: DMatrix::zeros(DESCRIPTOR_LEN, dims.h0),
            w1: DMatrix::zeros(dims.h0, dims.h1),
            w2: DMatrix::zeros(dims.h1, dims.h2),
            gate: DVector::zeros(dims.h2),
            gate_bias: 0.0,
        }
    }

    pub fn add_assign(&mut self, other: &GradientSet) {
        self.w0 += &other.w0;
        self.w1 += &other.w1;
        self.w2 += &other.w2;
        self.gate += &other.gate;
        self.gate_bias += other.gate_bias;
    }

    pub fn scale(&mut self, factor: f64) {
        self.w0 *= factor;
        self.w1 *= factor;
        self.w2 *= factor;
        self.gate *= factor;
        self.gate_bias *= factor;
    }
}

/// Intermediate activations of one forward pass, kept so the backward pass
/// does not recompute them.
pub(crate) struct ForwardCache {
    ax: DMatrix<f64>,    // A^ X
    p1: DMatrix<f64>,    // A^ X W0 (pre-relu)
    ah1: DMatrix<f64>,   // A^ H1
    p2: DMatrix<f64>,    // A^ H1 W1 (pre-relu)
    ah2: DMatrix<f64>,   // A^ H2
    s: DMatrix<f64>,     // row softmax of Z
    alpha: DVector<f64>, // attention scores
    pub(crate) embedding: Embedding,
}

fn relu(m: &DMatrix<f64>) -> DMatrix<f64> {
    m.map(|v| v.max(0.0))
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn row_softmax(z: &DMatrix<f64>) -> DMatrix<f64> {
    let mut out = z.clone();
    for mut row in out.row_iter_mut() {
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        for v in row.iter_mut() {
            *v /= sum;
        }
    }
    out
}

impl EncoderParams {
    /// Deterministic initialization: every matrix uniform in `[-s, s]` with
    /// `s = sqrt(6 / (fan_in + fan_out))`, gate bias zero.
    pub fn init(seed: u64, dims: EncoderDims) -> Self {
        assert!(dims.h0 > 0 && dims.h1 > 0 && dims.h2 > 0, "dims must be positive");
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut sample = |rows: usize, cols: usize, fan_in: usize, fan_out: usize| {
            let s = (6.0 / (fan_in + fan_out) as f64).sqrt();
            let dist = Uniform::new_inclusive(-s, s);
            DMatrix::from_fn(rows, cols, |_, _| dist.sample(&mut rng))
        };
        let w0 = sample(DESCRIPTOR_LEN, dims.h0, DESCRIPTOR_LEN, dims.h0);
        let w1 = sample(dims.h0, dims.h1, dims.h0, dims.h1);
        let w2 = sample(dims.h1, dims.h2, dims.h1, dims.h2);
        let gate_mat = sample(dims.h2, 1, dims.h2, 1);
        let gate = DVector::from_column_slice(gate_mat.as_slice());
        Self { w0, w1, w2, gate, gate_bias: 0.0 }
    }

    /// Builds parameters from explicit matrices. Shapes must be consistent.
    pub fn from_parts(
        w0: DMatrix<f64>,
        w1: DMatrix<f64>,
        w2: DMatrix<f64>,
        gate: DVector<f64>,
        gate_bias: f64,
    ) -> Result<Self> {
        if w0.nrows() != DESCRIPTOR_LEN
            || w0.ncols() != w1.nrows()
            || w1.ncols() != w2.nrows()
            || w2.ncols() != gate.len()
        {
            return Err(Error::Shape("inconsistent encoder parameter shapes".into()));
        }
        Ok(Self { w0, w1, w2, gate, gate_bias })
    }

    pub fn dims(&self) -> EncoderDims {
        EncoderDims {
            h0: self.w0.ncols(),
            h1: self.w1.ncols(),
            h2: self.w2.ncols(),
        }
    }

    pub fn embedding_len(&self) -> usize {
        self.w2.ncols()
    }

    fn check_shapes(&self, x: &DMatrix<f64>, a_hat: &NormalizedAdjacency) -> Result<()> {
        if x.nrows() != a_hat.dim() {
            return Err(Error::Shape(format!(
                "feature rows {} != adjacency dim {}",
                x.nrows(),
                a_hat.dim()
            )));
        }
        if x.ncols() != DESCRIPTOR_LEN {
            return Err(Error::Shape(format!(
                "feature columns {} != {DESCRIPTOR_LEN}",
                x.ncols()
            )));
        }
        Ok(())
    }

    pub(crate) fn forward(&self, x: &DMatrix<f64>, a_hat: &NormalizedAdjacency) -> Result<ForwardCache> {
        self.check_shapes(x, a_hat)?;
        let a = a_hat.matrix();
        let ax = a * x;
        let p1 = &ax * &self.w0;
        let h1 = relu(&p1);
        let ah1 = a * &h1;
        let p2 = &ah1 * &self.w1;
        let h2 = relu(&p2);
        let ah2 = a * &h2;
        let z = &ah2 * &self.w2;
        let s = row_softmax(&z);
        let n = s.nrows();
        let h_out = s.ncols();
        let mut alpha = DVector::zeros(n);
        let mut e = DVector::zeros(h_out);
        for i in 0..n {
            let row = s.row(i);
            let score = row.transpose().dot(&self.gate) + self.gate_bias;
            let a_i = sigmoid(score);
            alpha[i] = a_i;
            for j in 0..h_out {
                e[j] += a_i * row[j];
            }
        }
        Ok(ForwardCache {
            ax,
            p1,
            ah1,
            p2,
            ah2,
            s,
            alpha,
            embedding: Embedding { values: e },
        })
    }

    /// Encodes one graph into an embedding. Pure and deterministic.
    pub fn encode(&self, x: &DMatrix<f64>, a_hat: &NormalizedAdjacency) -> Result<Embedding> {
        Ok(self.forward(x, a_hat)?.embedding)
    }

    /// Encodes one graph and returns the gradients of `upstream . e` with
    /// respect to every parameter.
    pub fn encode_with_gradients(
        &self,
        x: &DMatrix<f64>,
        a_hat: &NormalizedAdjacency,
        upstream: &DVector<f64>,
    ) -> Result<(Embedding, GradientSet)> {
        let cache = self.forward(x, a_hat)?;
        let grads = self.backward(a_hat, &cache, upstream)?;
        Ok((cache.embedding, grads))
    }

    pub(crate) fn backward(
        &self,
        a_hat: &NormalizedAdjacency,
        cache: &ForwardCache,
        upstream: &DVector<f64>,
    ) -> Result<GradientSet> {
        let h_out = self.w2.ncols();
        if upstream.len() != h_out {
            return Err(Error::Shape(format!(
                "upstream length {} != embedding length {h_out}",
                upstream.len()
            )));
        }
        let a = a_hat.matrix();
        let n = cache.s.nrows();
        let mut grads = GradientSet::zeros(self.dims());

        // Pooling and attention: e = sum_i alpha_i S_i, alpha_i = sigmoid(S_i . g + b).
        let mut d_s = DMatrix::zeros(n, h_out);
        for i in 0..n {
            let s_row = cache.s.row(i);
            let alpha_i = cache.alpha[i];
            let d_alpha = s_row.transpose().dot(upstream);
            let d_score = d_alpha * alpha_i * (1.0 - alpha_i);
            grads.gate_bias += d_score;
            for j in 0..h_out {
                grads.gate[j] += d_score * s_row[j];
                d_s[(i, j)] = alpha_i * upstream[j] + d_score * self.gate[j];
            }
        }

        // Row-wise softmax: dZ_ij = S_ij * (dS_ij - sum_k dS_ik S_ik).
        let mut d_z = DMatrix::zeros(n, h_out);
        for i in 0..n {
            let dot: f64 = (0..h_out).map(|k| d_s[(i, k)] * cache.s[(i, k)]).sum();
            for j in 0..h_out {
                d_z[(i, j)] = cache.s[(i, j)] * (d_s[(i, j)] - dot);
            }
        }

        // Z = (A^ H2) W2
        grads.w2 = cache.ah2.transpose() * &d_z;
        let d_h2 = a * &d_z * self.w2.transpose();
        let d_p2 = d_h2.zip_map(&cache.p2, |g, p| if p > 0.0 { g } else { 0.0 });

        // P2 = (A^ H1) W1
        grads.w1 = cache.ah1.transpose() * &d_p2;
        let d_h1 = a * &d_p2 * self.w1.transpose();
        let d_p1 = d_h1.zip_map(&cache.p1, |g, p| if p > 0.0 { g } else { 0.0 });

        // P1 = (A^ X) W0
        grads.w0 = cache.ax.transpose() * &d_p1;

        Ok(grads)
    }

    /// Applies one gradient-descent step: `theta -= rate * grad`.
    pub fn apply_gradient(&mut self, grads: &GradientSet, rate: f64) {
        self.w0 -= rate * &grads.w0;
        self.w1 -= rate * &grads.w1;
        self.w2 -= rate * &grads.w2;
        self.gate -= rate * &grads.gate;
        self.gate_bias -= rate * grads.gate_bias;
    }

    pub fn is_finite(&self) -> bool {
        self.w0.iter().all(|v| v.is_finite())
            && self.w1.iter().all(|v| v.is_finite())
            && self.w2.iter().all(|v| v.is_finite())
            && self.gate.iter().all(|v| v.is_finite())
            && self.gate_bias.is_finite()
    }

    /// Canonical byte serialization: magic, dims as little-endian u32, then
    /// every matrix row-major as little-endian f32, then gate and bias.
    pub fn to_bytes(&self) -> Vec<u8> {
        let dims = self.dims();
        let mut out = Vec::new();
        out.extend_from_slice(PARAMS_MAGIC);
        for d in [dims.h0, dims.h1, dims.h2] {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        let mut push_matrix = |m: &DMatrix<f64>| {
            for i in 0..m.nrows() {
                for j in 0..m.ncols() {
                    out.extend_from_slice(&(m[(i, j)] as f32).to_le_bytes());
                }
            }
        };
        push_matrix(&self.w0);
        push_matrix(&self.w1);
        push_matrix(&self.w2);
        for v in self.gate.iter() {
            out.extend_from_slice(&(*v as f32).to_le_bytes());
        }
        out.extend_from_slice(&(self.gate_bias as f32).to_le_bytes());
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < PARAMS_MAGIC.len() + 12 {
            return Err(Error::Format("parameter file too short".into()));
        }
        if &bytes[..PARAMS_MAGIC.len()] != PARAMS_MAGIC {
            return Err(Error::Version {
                expected: String::from_utf8_lossy(PARAMS_MAGIC).into_owned(),
                found: String::from_utf8_lossy(&bytes[..PARAMS_MAGIC.len().min(bytes.len())])
                    .into_owned(),
            });
        }
        let mut offset = PARAMS_MAGIC.len();
        let mut read_u32 = |off: &mut usize| -> Result<u32> {
            let end = *off + 4;
            if end > bytes.len() {
                return Err(Error::Format("truncated parameter file".into()));
            }
            let v = u32::from_le_bytes(bytes[*off..end].try_into().unwrap());
            *off = end;
            Ok(v)
        };
        let h0 = read_u32(&mut offset)? as usize;
        let h1 = read_u32(&mut offset)? as usize;
        let h2 = read_u32(&mut offset)? as usize;
        if h0 == 0 || h1 == 0 || h2 == 0 {
            return Err(Error::Format("zero encoder dimension".into()));
        }
        let float_count = DESCRIPTOR_LEN * h0 + h0 * h1 + h1 * h2 + h2 + 1;
        let expected_len = offset + 4 * float_count;
        if bytes.len() != expected_len {
            return Err(Error::Format(format!(
                "parameter file length {} != expected {expected_len}",
                bytes.len()
            )));
        }
        let mut read_f32 = |off: &mut usize| -> f64 {
            let v = f32::from_le_bytes(bytes[*off..*off + 4].try_into().unwrap());
            *off += 4;
            v as f64
        };
        let mut read_matrix = |rows: usize, cols: usize, off: &mut usize| {
            let mut m = DMatrix::zeros(rows, cols);
            for i in 0..rows {
                for j in 0..cols {
                    m[(i, j)] = read_f32(off);
                }
            }
            m
        };
        let w0 = read_matrix(DESCRIPTOR_LEN, h0, &mut offset);
        let w1 = read_matrix(h0, h1, &mut offset);
        let w2 = read_matrix(h1, h2, &mut offset);
        let mut gate = DVector::zeros(h2);
        for j in 0..h2 {
            gate[j] = read_f32(&mut offset);
        }
        let gate_bias = read_f32(&mut offset);
        Ok(Self { w0, w1, w2, gate, gate_bias })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path)?;
        Self::from_bytes(&bytes)
    }

    /// Hex SHA-256 of the canonical serialization; stored in map files so a
    /// map is never queried with embeddings from a different encoder.
    pub fn fingerprint(&self) -> String {
        let digest = Sha256::digest(self.to_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }
}
