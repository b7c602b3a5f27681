//! GIN backbone: stacked graph-isomorphism layers followed by a linear head and a
//! sigmoid, producing one Bernoulli probability per node.
//!
//! Layer update: `h' = relu(W2 · relu(W1 · ((1 + eps) h + sum_{j in N(i)} h_j) + b1) + b2)`.
//! `eps` is the constant 0 unless the model is built with `learn_eps`, in which
//! case each layer carries a scalar `gin{l}.eps` parameter.

use std::fs;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::seed;
use crate::tensor::{Gradients, Tape, Tensor, Var};

/// Shape hyperparameters of the backbone.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub d_in: usize,
    pub d: usize,
    pub layers: usize,
    pub learn_eps: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            d_in: 16,
            d: 16,
            layers: 4,
            learn_eps: false,
        }
    }
}

impl ModelConfig {
    fn validate(&self) -> Result<()> {
        if self.d_in == 0 || self.d == 0 || self.layers == 0 {
            return Err(Error::InvalidParameter(format!(
                "model widths and depth must be >= 1, got {self:?}"
            )));
        }
        Ok(())
    }

    /// Names and shapes of every parameter tensor, in storage order.
    pub fn layout(&self) -> Vec<(String, Vec<usize>)> {
        let mut out = Vec::new();
        for l in 0..self.layers {
            let fan_in = if l == 0 { self.d_in } else { self.d };
            out.push((format!("gin{l}.w1"), vec![fan_in, self.d]));
            out.push((format!("gin{l}.b1"), vec![self.d]));
            out.push((format!("gin{l}.w2"), vec![self.d, self.d]));
            out.push((format!("gin{l}.b2"), vec![self.d]));
            if self.learn_eps {
                out.push((format!("gin{l}.eps"), vec![]));
            }
        }
        out.push(("head.w".into(), vec![self.d, 1]));
        out.push(("head.b".into(), vec![1]));
        out
    }
}

/// All trainable tensors of the backbone, stored in [`ModelConfig::layout`] order.
#[derive(Debug, Clone, PartialEq)]
pub struct ParameterSet {
    config: ModelConfig,
    names: Vec<String>,
    tensors: Vec<Tensor>,
}

impl ParameterSet {
    /// Weights `U(-1/sqrt(fan_in), 1/sqrt(fan_in))`, biases and `eps` zero.
    pub fn init(config: ModelConfig, rng_seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = seed::rng(rng_seed);
        let (names, tensors) = config
            .layout()
            .into_iter()
            .map(|(name, shape)| {
                let len = shape.iter().product();
                let data = if shape.len() == 2 {
                    let bound = 1.0 / (shape[0] as f64).sqrt();
                    (0..len).map(|_| rng.random_range(-bound..bound)).collect()
                } else {
                    vec![0.0; len]
                };
                (name, Tensor::from_parts(shape, data))
            })
            .unzip();
        Ok(Self {
            config,
            names,
            tensors,
        })
    }

    pub fn from_tensors(config: ModelConfig, tensors: Vec<Tensor>) -> Result<Self> {
        config.validate()?;
        let layout = config.layout();
        if layout.len() != tensors.len() {
            return Err(Error::LengthMismatch {
                expected: layout.len(),
                actual: tensors.len(),
            });
        }
        for ((name, shape), t) in layout.iter().zip(&tensors) {
            if t.shape() != shape.as_slice() {
                return Err(Error::shape(
                    "parameter set",
                    format!("{name}: expected {shape:?}, got {:?}", t.shape()),
                ));
            }
            if !t.is_finite() {
                return Err(Error::NonFinite("parameter set"));
            }
        }
        Ok(Self {
            config,
            names: layout.into_iter().map(|(n, _)| n).collect(),
            tensors,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn tensors(&self) -> &[Tensor] {
        &self.tensors
    }

    pub(crate) fn tensors_mut(&mut self) -> &mut [Tensor] {
        &mut self.tensors
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.names
            .iter()
            .position(|n| n == name)
            .map(|i| &self.tensors[i])
    }

    pub fn num_scalars(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    /// All values concatenated in storage order.
    pub fn flatten(&self) -> Vec<f64> {
        self.tensors
            .iter()
            .flat_map(|t| t.data().iter().copied())
            .collect()
    }

    /// Inverse of [`ParameterSet::flatten`].
    pub fn with_flat(&self, values: &[f64]) -> Result<Self> {
        if values.len() != self.num_scalars() {
            return Err(Error::LengthMismatch {
                expected: self.num_scalars(),
                actual: values.len(),
            });
        }
        let mut out = self.clone();
        let mut offset = 0;
        for t in &mut out.tensors {
            let len = t.len();
            t.data_mut().copy_from_slice(&values[offset..offset + len]);
            offset += len;
        }
        if !out.tensors.iter().all(Tensor::is_finite) {
            return Err(Error::NonFinite("parameter set"));
        }
        Ok(out)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let json = serde_json::to_string(&Checkpoint::from(self))?;
        fs::write(path, json).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let ckpt: Checkpoint = serde_json::from_str(&text)?;
        ckpt.try_into()
    }
}

pub const CHECKPOINT_FORMAT: &str = "taco-checkpoint/1";

/// On-disk checkpoint. JSON numbers are written in shortest round-trip form
/// and parsed with correct rounding, so every `f64` survives exactly.
#[derive(Debug, Serialize, Deserialize)]
struct Checkpoint {
    format: String,
    model: ModelConfig,
    tensors: Vec<CheckpointTensor>,
}

#[derive(Debug, Serialize, Deserialize)]
struct CheckpointTensor {
    name: String,
    shape: Vec<usize>,
    values: Vec<f64>,
}

impl From<&ParameterSet> for Checkpoint {
    fn from(p: &ParameterSet) -> Self {
        Checkpoint {
            format: CHECKPOINT_FORMAT.into(),
            model: p.config,
            tensors: p
                .names
                .iter()
                .zip(&p.tensors)
                .map(|(name, t)| CheckpointTensor {
                    name: name.clone(),
                    shape: t.shape().to_vec(),
                    values: t.data().to_vec(),
                })
                .collect(),
        }
    }
}

impl TryFrom<Checkpoint> for ParameterSet {
    type Error = Error;

    fn try_from(ckpt: Checkpoint) -> Result<Self> {
        if ckpt.format != CHECKPOINT_FORMAT {
            return Err(Error::InvalidParameter(format!(
                "unknown checkpoint format {:?}",
                ckpt.format
            )));
        }
        let layout = ckpt.model.layout();
        if layout.len() != ckpt.tensors.len() {
            return Err(Error::LengthMismatch {
                expected: layout.len(),
                actual: ckpt.tensors.len(),
            });
        }
        let mut tensors = Vec::with_capacity(layout.len());
        for ((name, _), t) in layout.iter().zip(ckpt.tensors) {
            if *name != t.name {
                return Err(Error::InvalidParameter(format!(
                    "checkpoint tensor {:?} where {name:?} was expected",
                    t.name
                )));
            }
            tensors.push(Tensor::new(t.shape, t.values)?);
        }
        ParameterSet::from_tensors(ckpt.model, tensors)
    }
}

/// Per-node Bernoulli probabilities.
#[derive(Debug, Clone, PartialEq)]
pub struct NodeProbabilities(Vec<f64>);

impl NodeProbabilities {
    pub fn new(p: Vec<f64>) -> Result<Self> {
        if p.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::InvalidParameter(
                "probabilities must lie in [0, 1]".into(),
            ));
        }
        Ok(Self(p))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Random one-hot node features. The hot column of row `i` depends only on
/// `(seed, i)`, so graphs of different sizes agree on shared indices.
pub fn make_input(g: &Graph, seed: u64, d_in: usize) -> Result<Tensor> {
    if d_in == 0 {
        return Err(Error::InvalidParameter("d_in must be >= 1".into()));
    }
    let n = g.n();
    let mut data = vec![0.0; n * d_in];
    for i in 0..n {
        let hot = seed::rng(seed::derive(seed, &[i as u64])).random_range(0..d_in);
        data[i * d_in + hot] = 1.0;
    }
    Ok(Tensor::from_parts(vec![n, d_in], data))
}

/// Result of [`forward`]: the probability column and the tape handles of every
/// parameter, aligned with [`ParameterSet::tensors`].
#[derive(Debug, Clone)]
pub struct ForwardPass {
    pub probs: Var,
    pub params: Vec<Var>,
}

impl ForwardPass {
    pub fn probabilities(&self, tape: &Tape<'_>) -> NodeProbabilities {
        NodeProbabilities(tape.value(self.probs).data().to_vec())
    }

    /// Gradients aligned with [`ParameterSet::tensors`]; zeros where nothing flowed.
    pub fn param_grads(&self, grads: &Gradients, params: &ParameterSet) -> Vec<Tensor> {
        self.params
            .iter()
            .zip(params.tensors())
            .map(|(&v, t)| grads.get_or_zeros(v, t.shape()))
            .collect()
    }
}

pub fn forward<'g>(
    params: &ParameterSet,
    g: &'g Graph,
    input: &Tensor,
    tape: &mut Tape<'g>,
) -> Result<ForwardPass> {
    let cfg = params.config;
    if input.shape() != [g.n(), cfg.d_in] {
        return Err(Error::shape(
            "gnn forward",
            format!(
                "input {:?} for n = {}, d_in = {}",
                input.shape(),
                g.n(),
                cfg.d_in
            ),
        ));
    }
    let vars: Vec<Var> = params
        .tensors
        .iter()
        .map(|t| tape.param(t.clone()))
        .collect();
    let per_layer = if cfg.learn_eps { 5 } else { 4 };

    let mut h = tape.constant(input.clone());
    for l in 0..cfg.layers {
        let v = &vars[l * per_layer..(l + 1) * per_layer];
        let agg = tape.neighbor_aggregate(h, g.adjacency())?;
        let self_term = if cfg.learn_eps {
            let scaled = tape.scale_by(v[4], h)?;
            tape.add(h, scaled)?
        } else {
            h
        };
        let z = tape.add(self_term, agg)?;
        let z = tape.matmul(z, v[0])?;
        let z = tape.add_row(z, v[1])?;
        let z = tape.relu(z)?;
        let z = tape.matmul(z, v[2])?;
        let z = tape.add_row(z, v[3])?;
        h = tape.relu(z)?;
    }
    let head = cfg.layers * per_layer;
    let logits = tape.matmul(h, vars[head])?;
    let logits = tape.add_row(logits, vars[head + 1])?;
    let probs = tape.sigmoid(logits)?;
    Ok(ForwardPass {
        probs,
        params: vars,
    })
}

/// Forward pass without keeping the tape.
pub fn predict(params: &ParameterSet, g: &Graph, input: &Tensor) -> Result<NodeProbabilities> {
    let mut tape = Tape::new();
    let fp = forward(params, g, input, &mut tape)?;
    Ok(fp.probabilities(&tape))
}
