//! GCN/linear encoder stacks with hand-written backpropagation and the
//! self-supervised training loop.

mod train;

use serde::{Deserialize, Serialize};

pub use train::{
    default_arch, default_opts, encoder_input, train_joint, train_ssl, EncoderInput, JointOutcome,
    Trained,
};

use crate::error::{Error, Result};
use crate::numeric::{Matrix, Rng};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LayerKind {
    Gcn,
    Linear,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Prelu,
    None,
}

/// Layer counts and widths. GCN layers come first, then linear layers;
/// hidden layers use `hidden_activation`, the output layer none.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EncoderArch {
    pub gcn_layers: usize,
    pub linear_layers: usize,
    pub embed_dim: usize,
    pub hidden_activation: Activation,
}

impl EncoderArch {
    pub fn new(gcn_layers: usize, linear_layers: usize, embed_dim: usize) -> Self {
        Self {
            gcn_layers,
            linear_layers,
            embed_dim,
            hidden_activation: Activation::Relu,
        }
    }

    pub fn depth(&self) -> usize {
        self.gcn_layers + self.linear_layers
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub kind: LayerKind,
    pub activation: Activation,
}

/// Encoder weights. Each layer owns three parameter slots: weight `in×out`,
/// bias `1×out`, and a `1×1` PReLU slope (unused for other activations).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EncoderParams {
    pub layers: Vec<LayerSpec>,
    pub params: Vec<Matrix>,
    pub embed_dim: usize,
}

/// Intermediate values kept for the backward pass.
pub struct ForwardCache {
    inputs: Vec<Matrix>,
    pre: Vec<Matrix>,
}

const PRELU_INIT: f64 = 0.25;

impl EncoderParams {
    /// Glorot-uniform weights, zero biases.
    pub fn init(arch: &EncoderArch, in_dim: usize, rng: &mut Rng) -> Result<Self> {
        if arch.depth() == 0 || arch.embed_dim == 0 {
            return Err(Error::Parameter(
                "encoder needs at least one layer and a positive width".into(),
            ));
        }
        let depth = arch.depth();
        let mut layers = Vec::with_capacity(depth);
        let mut params = Vec::with_capacity(3 * depth);
        let mut fan_in = in_dim;
        for l in 0..depth {
            let kind = if l < arch.gcn_layers {
                LayerKind::Gcn
            } else {
                LayerKind::Linear
            };
            let activation = if l + 1 == depth {
                Activation::None
            } else {
                arch.hidden_activation
            };
            layers.push(LayerSpec { kind, activation });
            params.push(rng.glorot(fan_in, arch.embed_dim));
            params.push(Matrix::zeros(1, arch.embed_dim));
            params.push(Matrix::filled(1, 1, PRELU_INIT));
            fan_in = arch.embed_dim;
        }
        Ok(Self {
            layers,
            params,
            embed_dim: arch.embed_dim,
        })
    }

    /// Parameter slots that never receive gradient (slopes of non-PReLU layers).
    pub fn frozen_mask(&self) -> Vec<bool> {
        self.layers
            .iter()
            .flat_map(|l| [false, false, l.activation != Activation::Prelu])
            .collect()
    }

    pub fn weight(&self, layer: usize) -> &Matrix {
        &self.params[3 * layer]
    }

    pub fn encode(&self, a_hat: &Matrix, x: &Matrix) -> Result<Matrix> {
        Ok(self.forward(a_hat, x)?.0)
    }

    pub fn forward(&self, a_hat: &Matrix, x: &Matrix) -> Result<(Matrix, ForwardCache)> {
        let mut cache = ForwardCache {
            inputs: Vec::with_capacity(self.layers.len()),
            pre: Vec::with_capacity(self.layers.len()),
        };
        let mut cur = x.clone();
        for (l, spec) in self.layers.iter().enumerate() {
            let w = &self.params[3 * l];
            if cur.cols() != w.rows() {
                return Err(Error::dims("encoder layer input", w.rows(), cur.cols()));
            }
            let mut pre = cur.matmul(w)?;
            if spec.kind == LayerKind::Gcn {
                pre = a_hat.matmul(&pre)?;
            }
            pre.add_row_vector(self.params[3 * l + 1].data());
            let slope = self.params[3 * l + 2][(0, 0)];
            let out = match spec.activation {
                Activation::Relu => pre.map(|v| v.max(0.0)),
                Activation::Prelu => pre.map(|v| if v > 0.0 { v } else { slope * v }),
                Activation::None => pre.clone(),
            };
            cache.inputs.push(cur);
            cache.pre.push(pre);
            cur = out;
        }
        Ok((cur, cache))
    }

    /// Gradients of every parameter slot given `d_out = ∂L/∂H`.
    pub fn backward(
        &self,
        a_hat: &Matrix,
        cache: &ForwardCache,
        d_out: &Matrix,
    ) -> Result<Vec<Matrix>> {
        let mut grads: Vec<Matrix> = self
            .params
            .iter()
            .map(|p| Matrix::zeros(p.rows(), p.cols()))
            .collect();
        let mut upstream = d_out.clone();
        for (l, spec) in self.layers.iter().enumerate().rev() {
            let pre = &cache.pre[l];
            let slope = self.params[3 * l + 2][(0, 0)];
            let mut d_pre = upstream;
            match spec.activation {
                Activation::Relu => {
                    for (g, &p) in d_pre.data_mut().iter_mut().zip(pre.data()) {
                        if p <= 0.0 {
                            *g = 0.0;
                        }
                    }
                }
                Activation::Prelu => {
                    let mut d_slope = 0.0;
                    for (g, &p) in d_pre.data_mut().iter_mut().zip(pre.data()) {
                        if p <= 0.0 {
                            d_slope += *g * p;
                            *g *= slope;
                        }
                    }
                    grads[3 * l + 2][(0, 0)] = d_slope;
                }
                Activation::None => {}
            }
            grads[3 * l + 1] = Matrix::row_vector(&d_pre.column_sums());
            // a_hat is symmetric, so its transpose is itself
            let d_xw = match spec.kind {
                LayerKind::Gcn => a_hat.matmul(&d_pre)?,
                LayerKind::Linear => d_pre,
            };
            let w = &self.params[3 * l];
            grads[3 * l] = cache.inputs[l].t_matmul(&d_xw)?;
            upstream = if l > 0 {
                d_xw.matmul_t(w)?
            } else {
                Matrix::zeros(0, 0)
            };
        }
        Ok(grads)
    }
}

/// A node-embedding matrix tagged with its producer.
#[derive(Clone, Debug, PartialEq)]
pub struct Representation {
    pub task: String,
    pub seed: u64,
    pub dataset: String,
    pub matrix: Matrix,
}

#[derive(Serialize, Deserialize)]
struct RepresentationFile {
    task: String,
    seed: u64,
    dataset: String,
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Serialize for Representation {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        RepresentationFile {
            task: self.task.clone(),
            seed: self.seed,
            dataset: self.dataset.clone(),
            rows: self.matrix.rows(),
            cols: self.matrix.cols(),
            data: self.matrix.data().to_vec(),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for Representation {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let f = RepresentationFile::deserialize(d)?;
        let matrix = Matrix::from_vec(f.rows, f.cols, f.data).map_err(serde::de::Error::custom)?;
        if !matrix.is_finite() {
            return Err(serde::de::Error::custom(
                "representation has non-finite entries",
            ));
        }
        Ok(Representation {
            task: f.task,
            seed: f.seed,
            dataset: f.dataset,
            matrix,
        })
    }
}

impl Representation {
    pub fn n_nodes(&self) -> usize {
        self.matrix.rows()
    }

    pub fn dim(&self) -> usize {
        self.matrix.cols()
    }
}
