//! The speaker encoder: frame mean-pooling, a two-layer projection head,
//! the gradient-reversal layer and a small language classifier.
//!
//! Weight matrices are stored `[out, in]`; a batch `x[B, in]` maps to
//! `x · Wᵀ + b`. Parameters are kept in a fixed declaration order
//! (see [`PARAM_NAMES`]) which is also the checkpoint order.

pub mod checkpoint;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::tensor::{column_means, l2_normalize, norm, NORM_FLOOR};
use crate::numerics::{Graph, Rng, Tensor, Var};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub input_dim: usize,
    pub hidden_dim: usize,
    pub embed_dim: usize,
    pub classifier_hidden: usize,
    pub num_languages: usize,
    pub dropout_rate: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            input_dim: 768,
            hidden_dim: 512,
            embed_dim: 256,
            classifier_hidden: 128,
            num_languages: 4,
            dropout_rate: 0.1,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let dims = [
            self.input_dim,
            self.hidden_dim,
            self.embed_dim,
            self.classifier_hidden,
            self.num_languages,
        ];
        if dims.contains(&0) {
            return Err(Error::invalid(format!("model dimensions must be >= 1: {self:?}")));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(Error::invalid(format!("dropout rate {} outside [0, 1)", self.dropout_rate)));
        }
        Ok(())
    }

    /// Shapes of the eight parameter tensors in declaration order.
    pub fn param_shapes(&self) -> [Vec<usize>; 8] {
        [
            vec![self.hidden_dim, self.input_dim],
            vec![self.hidden_dim],
            vec![self.embed_dim, self.hidden_dim],
            vec![self.embed_dim],
            vec![self.classifier_hidden, self.embed_dim],
            vec![self.classifier_hidden],
            vec![self.num_languages, self.classifier_hidden],
            vec![self.num_languages],
        ]
    }

    pub fn param_count(&self) -> usize {
        self.param_shapes().iter().map(|s| s.iter().product::<usize>()).sum()
    }
}

pub const PARAM_NAMES: [&str; 8] = [
    "proj.w1", "proj.b1", "proj.w2", "proj.b2", "cls.w1", "cls.b1", "cls.w2", "cls.b2",
];

/// Indices `0..4` are the projection head, `4..8` the language classifier.
pub const HEAD_PARAMS: std::ops::Range<usize> = 0..4;
pub const CLASSIFIER_PARAMS: std::ops::Range<usize> = 4..8;

/// True for weight matrices, false for bias vectors.
pub fn is_weight(index: usize) -> bool {
    index.is_multiple_of(2)
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams {
    tensors: Vec<Tensor>,
}

impl ModelParams {
    /// He-normal weights (`std = sqrt(2 / fan_in)`), zero biases.
    pub fn init(config: &ModelConfig, rng: &mut Rng) -> Result<Self> {
        config.validate()?;
        let tensors = config
            .param_shapes()
            .into_iter()
            .enumerate()
            .map(|(i, shape)| {
                if is_weight(i) {
                    let std = (2.0 / shape[1] as f64).sqrt();
                    let n = shape[0] * shape[1];
                    Tensor::new(shape, (0..n).map(|_| std * rng.normal()).collect())
                } else {
                    Ok(Tensor::zeros(&shape))
                }
            })
            .collect::<Result<_>>()?;
        Ok(Self { tensors })
    }

    pub fn zeros(config: &ModelConfig) -> Self {
        Self {
            tensors: config.param_shapes().iter().map(|s| Tensor::zeros(s)).collect(),
        }
    }

    pub fn from_tensors(config: &ModelConfig, tensors: Vec<Tensor>) -> Result<Self> {
        let shapes = config.param_shapes();
        if tensors.len() != shapes.len() {
            return Err(Error::shape("model params", format!("expected 8 tensors, got {}", tensors.len())));
        }
        for ((t, s), name) in tensors.iter().zip(&shapes).zip(PARAM_NAMES) {
            if t.shape() != s.as_slice() {
                return Err(Error::shape("model params", format!("{name}: {:?} vs {s:?}", t.shape())));
            }
        }
        Ok(Self { tensors })
    }

    pub fn tensors(&self) -> &[Tensor] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor] {
        &mut self.tensors
    }

    pub fn into_tensors(self) -> Vec<Tensor> {
        self.tensors
    }

    pub fn count(&self) -> usize {
        self.tensors.iter().map(Tensor::numel).sum()
    }

    /// Registers every tensor as a trainable leaf of `g`.
    pub fn bind(&self, g: &mut Graph) -> ParamVars {
        let v: Vec<Var> = self.tensors.iter().map(|t| g.param(t.clone())).collect();
        ParamVars(v.try_into().expect("eight parameters"))
    }
}

/// Graph handles of the eight parameters, in declaration order.
#[derive(Clone, Copy, Debug)]
pub struct ParamVars(pub [Var; 8]);

impl ParamVars {
    pub fn grads(&self, g: &Graph) -> Vec<Tensor> {
        self.0.iter().map(|&v| g.grad(v)).collect()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Embedding {
    pub vector: Vec<f64>,
    pub normalized: bool,
}

impl Embedding {
    /// Normalizes with the `1e-12` norm floor; a zero vector stays zero and
    /// is flagged as not normalized.
    pub fn from_raw(raw: &[f64]) -> Self {
        let n = norm(raw);
        Self {
            vector: l2_normalize(raw),
            normalized: n >= NORM_FLOOR,
        }
    }
}

/// Column-wise mean over the `T` frames of a `T × D` matrix.
pub fn mean_pool(frames: &Tensor) -> Result<Vec<f64>> {
    column_means(frames)
}

fn linear(g: &mut Graph, x: Var, w: Var, b: Var) -> Result<Var> {
    let wt = g.transpose(w)?;
    let y = g.matmul(x, wt)?;
    g.add_bias(y, b)
}

/// Projection head over pooled features `x[B, input_dim]`, returning
/// L2-normalized rows `z[B, embed_dim]`. Dropout is applied after the hidden
/// ReLU only when `dropout_rng` is given.
pub fn embed_batch(
    g: &mut Graph,
    vars: &ParamVars,
    config: &ModelConfig,
    pooled: Var,
    dropout_rng: Option<&mut Rng>,
) -> Result<Var> {
    let [w1, b1, w2, b2, ..] = vars.0;
    match g.value(pooled).dims2() {
        Some((_, d)) if d == config.input_dim => {}
        _ => {
            return Err(Error::shape(
                "embed",
                format!("features {:?}, model expects input_dim {}", g.value(pooled).shape(), config.input_dim),
            ))
        }
    }
    let h = linear(g, pooled, w1, b1)?;
    let mut h = g.relu(h)?;
    if let Some(rng) = dropout_rng {
        if config.dropout_rate > 0.0 {
            h = g.dropout(h, config.dropout_rate, rng)?;
        }
    }
    let z = linear(g, h, w2, b2)?;
    g.l2_normalize_rows(z)
}

/// Gradient reversal with strength `lambda_t`.
pub fn grl_forward(g: &mut Graph, z: Var, lambda_t: f64) -> Result<Var> {
    g.grl(z, lambda_t)
}

/// Language logits `C2·relu(C1·z + c1) + c2`, shape `[B, num_languages]`.
pub fn classify_language(g: &mut Graph, vars: &ParamVars, config: &ModelConfig, z: Var) -> Result<Var> {
    let [.., c1, cb1, c2, cb2] = vars.0;
    match g.value(z).dims2() {
        Some((_, d)) if d == config.embed_dim => {}
        _ => {
            return Err(Error::shape(
                "classify_language",
                format!("embedding {:?}, classifier expects {}", g.value(z).shape(), config.embed_dim),
            ))
        }
    }
    let h = linear(g, z, c1, cb1)?;
    let h = g.relu(h)?;
    linear(g, h, c2, cb2)
}

/// Evaluation-mode embeddings for a set of pooled feature vectors. Pure: no
/// randomness is consumed.
pub fn embed_pooled(params: &ModelParams, config: &ModelConfig, pooled: &[Vec<f64>]) -> Result<Vec<Embedding>> {
    if pooled.is_empty() {
        return Ok(Vec::new());
    }
    let mut g = Graph::new();
    let vars = params.bind(&mut g);
    let x = g.constant(Tensor::from_rows(pooled)?);
    // Work on the unnormalized output so the normalized flag is exact.
    let [w1, b1, w2, b2, ..] = vars.0;
    if pooled[0].len() != config.input_dim {
        return Err(Error::shape(
            "embed",
            format!("features have dim {}, model expects {}", pooled[0].len(), config.input_dim),
        ));
    }
    let h = linear(&mut g, x, w1, b1)?;
    let h = g.relu(h)?;
    let z = linear(&mut g, h, w2, b2)?;
    let raw = g.value(z);
    Ok((0..pooled.len()).map(|i| Embedding::from_raw(raw.row(i))).collect())
}

/// Evaluation-mode embedding of one clip's `T × D` frame matrix.
pub fn embed(params: &ModelParams, config: &ModelConfig, frames: &Tensor) -> Result<Embedding> {
    let pooled = mean_pool(frames)?;
    Ok(embed_pooled(params, config, &[pooled])?.remove(0))
}
