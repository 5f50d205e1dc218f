//! Structural equation models: noise specifications, linear weight matrices,
//! and per-node multilayer perceptrons.

use ndarray::{Array1, Array2, ArrayView1};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::is_acyclic;

/// Noise distribution families used for data generation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum NoiseFamily {
    /// Gaussian with a single shared scale across all nodes.
    GaussianEv,
    /// Gaussian with per-node scales.
    GaussianNv,
    Gumbel,
    Laplace,
    Exponential,
}

impl NoiseFamily {
    pub fn is_gaussian(self) -> bool {
        matches!(self, NoiseFamily::GaussianEv | NoiseFamily::GaussianNv)
    }
}

/// Per-node noise scales for one family. `scales[j]` is the distribution's
/// scale parameter for node `j` (the standard deviation for Gaussians).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    pub family: NoiseFamily,
    scales: Array1<f64>,
}

impl NoiseSpec {
    pub fn new(family: NoiseFamily, scales: Array1<f64>) -> Result<Self> {
        if scales.iter().any(|s| *s <= 0.0 || !s.is_finite()) {
            return Err(Error::Config(
                "noise scales must be strictly positive".into(),
            ));
        }
        if family == NoiseFamily::GaussianEv {
            let first = scales[0];
            if scales.iter().any(|s| *s != first) {
                return Err(Error::Config(
                    "equal-variance Gaussian requires constant scales".into(),
                ));
            }
        }
        Ok(NoiseSpec { family, scales })
    }

    /// All nodes share one scale.
    pub fn equal(family: NoiseFamily, scale: f64, d: usize) -> Result<Self> {
        Self::new(family, Array1::from_elem(d, scale))
    }

    /// Per-node scales drawn from Uniform[1, 2], one draw per node.
    pub fn sample_scales<R: Rng + ?Sized>(family: NoiseFamily, d: usize, rng: &mut R) -> Result<Self> {
        let scales = Array1::from_shape_fn(d, |_| 1.0 + rng.random::<f64>());
        Self::new(family, scales)
    }

    pub fn scales(&self) -> &Array1<f64> {
        &self.scales
    }

    pub fn dim(&self) -> usize {
        self.scales.len()
    }
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// One node's MLP: a single hidden layer with sigmoid activation and a scalar
/// output. Input column `k` of `w1` carries the weights attached to variable
/// `k`; a zero column makes the output invariant to that variable.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpNode {
    /// hidden x d input weights.
    pub w1: Array2<f64>,
    /// hidden biases.
    pub b1: Array1<f64>,
    /// output weights, length hidden.
    pub w2: Array1<f64>,
    /// output bias.
    pub b2: f64,
}

impl MlpNode {
    pub fn eval_row(&self, x: &ArrayView1<f64>) -> f64 {
        let pre = self.w1.dot(x) + &self.b1;
        let mut out = self.b2;
        for (h, p) in pre.iter().enumerate() {
            out += self.w2[h] * sigmoid(*p);
        }
        out
    }

    /// Batch evaluation over the rows of `x`.
    pub fn eval_batch(&self, x: &Array2<f64>) -> Array1<f64> {
        // pre = X W1^T + b1 broadcast: (n x hidden)
        let pre = x.dot(&self.w1.t());
        let n = x.nrows();
        let mut out = Array1::from_elem(n, self.b2);
        for i in 0..n {
            let mut acc = 0.0;
            for h in 0..self.w2.len() {
                acc += self.w2[h] * sigmoid(pre[[i, h]] + self.b1[h]);
            }
            out[i] += acc;
        }
        out
    }
}

/// Per-node MLPs for a whole system. `None` marks a root node whose function
/// is identically zero.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpSem {
    pub d: usize,
    pub nodes: Vec<Option<MlpNode>>,
}

impl MlpSem {
    /// Candidate adjacency: entry `(k, j)` is the l2 norm of node `j`'s
    /// first-layer weights attached to input `k`.
    pub fn input_group_norms(&self) -> Array2<f64> {
        let mut a = Array2::<f64>::zeros((self.d, self.d));
        for (j, node) in self.nodes.iter().enumerate() {
            if let Some(node) = node {
                for k in 0..self.d {
                    let norm = node.w1.column(k).iter().map(|v| v * v).sum::<f64>().sqrt();
                    a[[k, j]] = norm;
                }
            }
        }
        a
    }
}

/// The function part of a structural equation model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum SemFunction {
    /// `f_j(x) = sum_i w[i][j] * x_i`.
    Linear(Array2<f64>),
    Mlp(MlpSem),
}

impl SemFunction {
    pub fn dim(&self) -> usize {
        match self {
            SemFunction::Linear(w) => w.nrows(),
            SemFunction::Mlp(m) => m.d,
        }
    }

    pub fn eval_node(&self, j: usize, x: &ArrayView1<f64>) -> f64 {
        match self {
            SemFunction::Linear(w) => w.column(j).dot(x),
            SemFunction::Mlp(m) => m.nodes[j].as_ref().map_or(0.0, |n| n.eval_row(x)),
        }
    }

    /// `n x d` matrix of predictions `f_j(x_i)`.
    pub fn predictions(&self, x: &Array2<f64>) -> Array2<f64> {
        match self {
            SemFunction::Linear(w) => x.dot(w),
            SemFunction::Mlp(m) => {
                let mut out = Array2::<f64>::zeros(x.dim());
                for j in 0..m.d {
                    if let Some(node) = &m.nodes[j] {
                        out.column_mut(j).assign(&node.eval_batch(x));
                    }
                }
                out
            }
        }
    }

    pub fn residuals(&self, x: &Array2<f64>) -> Array2<f64> {
        x - &self.predictions(x)
    }

    /// The candidate structure matrix: the weight matrix itself for linear
    /// models, the input group norms for MLPs.
    pub fn structure(&self) -> Array2<f64> {
        match self {
            SemFunction::Linear(w) => w.clone(),
            SemFunction::Mlp(m) => m.input_group_norms(),
        }
    }

    pub fn is_acyclic(&self) -> Result<bool> {
        is_acyclic(&self.structure().view())
    }
}

/// A generative structural equation model: functions plus noise.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SemModel {
    pub f: SemFunction,
    pub noise: NoiseSpec,
}

impl SemModel {
    pub fn new(f: SemFunction, noise: NoiseSpec) -> Result<Self> {
        if f.dim() != noise.dim() {
            return Err(Error::Shape(format!(
                "function dimension {} != noise dimension {}",
                f.dim(),
                noise.dim()
            )));
        }
        Ok(SemModel { f, noise })
    }

    pub fn dim(&self) -> usize {
        self.f.dim()
    }
}
