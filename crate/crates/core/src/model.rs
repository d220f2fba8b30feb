//! Snippet-level network: a two-layer temporal convolution embedder feeding a
//! classification head (class activation sequence, background in the last
//! column) and a class-agnostic attention head.

use rand::Rng;
use rand_distr::{Bernoulli, Distribution, Uniform};
use serde::{Deserialize, Serialize};

use crate::checkpoint::Checkpoint;
use crate::error::{Error, Result};
use crate::numeric::{Graph, Tensor, Var};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    /// Width of the embedder; `None` keeps the feature dimension.
    pub hidden: Option<usize>,
    /// Temporal kernel of the two embedder layers (odd).
    pub kernel: usize,
    pub dropout: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            hidden: None,
            kernel: 3,
            dropout: 0.5,
        }
    }
}

/// Fixed dimensions of a model instance.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ModelShape {
    pub feature_dim: usize,
    pub hidden: usize,
    pub num_classes: usize,
    pub kernel: usize,
}

impl ModelShape {
    pub fn new(feature_dim: usize, num_classes: usize, config: &ModelConfig) -> Result<Self> {
        let shape = ModelShape {
            feature_dim,
            hidden: config.hidden.unwrap_or(feature_dim),
            num_classes,
            kernel: config.kernel,
        };
        if feature_dim == 0
            || shape.hidden == 0
            || num_classes == 0
            || shape.kernel.is_multiple_of(2)
        {
            return Err(Error::Config(format!("invalid model shape {shape:?}")));
        }
        if !(0.0..1.0).contains(&config.dropout) {
            return Err(Error::Config(format!(
                "dropout {} outside [0, 1)",
                config.dropout
            )));
        }
        Ok(shape)
    }

    /// Background is the last category.
    pub fn background(&self) -> usize {
        self.num_classes
    }

    pub fn categories(&self) -> usize {
        self.num_classes + 1
    }
}

pub const PARAM_NAMES: [&str; 8] = [
    "embed1.weight",
    "embed1.bias",
    "embed2.weight",
    "embed2.bias",
    "cls.weight",
    "cls.bias",
    "att.weight",
    "att.bias",
];

#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams {
    pub shape: ModelShape,
    pub dropout: f64,
    /// Tensors in [`PARAM_NAMES`] order.
    tensors: Vec<Tensor>,
}

fn param_shapes(s: &ModelShape) -> [Vec<usize>; 8] {
    let out = s.categories();
    [
        vec![s.kernel, s.feature_dim, s.hidden],
        vec![s.hidden],
        vec![s.kernel, s.hidden, s.hidden],
        vec![s.hidden],
        vec![1, s.hidden, out],
        vec![out],
        vec![1, s.hidden, 1],
        vec![1],
    ]
}

fn fan_in(shape: &ModelShape, index: usize) -> usize {
    match index {
        0 | 1 => shape.kernel * shape.feature_dim,
        2 | 3 => shape.kernel * shape.hidden,
        _ => shape.hidden,
    }
}

impl ModelParams {
    /// Uniform `(-a, a)` initialisation with `a = sqrt(1 / fan_in)`.
    pub fn init(shape: ModelShape, dropout: f64, rng: &mut impl Rng) -> Self {
        let tensors = param_shapes(&shape)
            .iter()
            .enumerate()
            .map(|(i, dims)| {
                let a = (1.0 / fan_in(&shape, i) as f64).sqrt();
                let dist = Uniform::new(-a, a).expect("finite bound");
                let n = dims.iter().product();
                Tensor::new(dims.clone(), (0..n).map(|_| dist.sample(rng)).collect())
                    .expect("shape")
            })
            .collect();
        ModelParams {
            shape,
            dropout,
            tensors,
        }
    }

    pub fn zeros(shape: ModelShape, dropout: f64) -> Self {
        let tensors = param_shapes(&shape)
            .iter()
            .map(|d| Tensor::zeros(d))
            .collect();
        ModelParams {
            shape,
            dropout,
            tensors,
        }
    }

    pub fn tensors(&self) -> &[Tensor] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor] {
        &mut self.tensors
    }

    pub fn named(&self) -> impl Iterator<Item = (&'static str, &Tensor)> {
        PARAM_NAMES.iter().copied().zip(&self.tensors)
    }

    pub fn is_finite(&self) -> bool {
        self.tensors.iter().all(Tensor::is_finite)
    }

    /// Registers every tensor as a trainable leaf of `graph`.
    pub fn bind(&self, graph: &mut Graph) -> ParamVars {
        let vars = self
            .tensors
            .iter()
            .map(|t| graph.leaf(t.clone()))
            .collect::<Vec<_>>();
        ParamVars(vars.try_into().expect("eight parameters"))
    }

    pub fn to_checkpoint(&self, prefix: &str, ckpt: &mut Checkpoint) {
        let s = &self.shape;
        ckpt.set_meta(&format!("{prefix}feature_dim"), s.feature_dim);
        ckpt.set_meta(&format!("{prefix}hidden"), s.hidden);
        ckpt.set_meta(&format!("{prefix}num_classes"), s.num_classes);
        ckpt.set_meta(&format!("{prefix}kernel"), s.kernel);
        ckpt.set_meta(&format!("{prefix}dropout"), self.dropout);
        for (name, t) in self.named() {
            ckpt.insert(format!("{prefix}{name}"), t.clone());
        }
    }

    pub fn from_checkpoint(prefix: &str, ckpt: &Checkpoint) -> Result<Self> {
        let shape = ModelShape {
            feature_dim: ckpt.meta(&format!("{prefix}feature_dim"))?,
            hidden: ckpt.meta(&format!("{prefix}hidden"))?,
            num_classes: ckpt.meta(&format!("{prefix}num_classes"))?,
            kernel: ckpt.meta(&format!("{prefix}kernel"))?,
        };
        let dropout = ckpt.meta(&format!("{prefix}dropout"))?;
        let expected = param_shapes(&shape);
        let mut tensors = Vec::with_capacity(PARAM_NAMES.len());
        for (name, dims) in PARAM_NAMES.iter().zip(expected.iter()) {
            let key = format!("{prefix}{name}");
            let t = ckpt
                .tensor(&key)
                .ok_or_else(|| Error::format("checkpoint", format!("missing tensor `{key}`")))?;
            if t.shape() != dims.as_slice() {
                return Err(Error::format(
                    "checkpoint",
                    format!(
                        "tensor `{key}` has shape {:?}, expected {dims:?}",
                        t.shape()
                    ),
                ));
            }
            tensors.push(t.clone());
        }
        Ok(ModelParams {
            shape,
            dropout,
            tensors,
        })
    }
}

/// Graph handles for the parameters, in [`PARAM_NAMES`] order.
#[derive(Clone, Copy, Debug)]
pub struct ParamVars(pub [Var; 8]);

/// Graph handles of one forward pass.
#[derive(Clone, Copy, Debug)]
pub struct ActivationVars {
    /// Class activation sequence `[T, C+1]`.
    pub s: Var,
    /// Foreground attention `[T, 1]`.
    pub a: Var,
    /// Background-suppressed activations `S * A`.
    pub s_hat: Var,
    /// Row softmax of `s`.
    pub p: Var,
}

/// Forward outputs for one video at one scale, detached from any graph.
#[derive(Clone, Debug, PartialEq)]
pub struct ActivationBundle {
    pub s: Tensor,
    pub a: Vec<f64>,
    pub b: Vec<f64>,
    pub s_hat: Tensor,
    pub p: Tensor,
}

impl ActivationBundle {
    pub fn from_graph(graph: &Graph, vars: &ActivationVars) -> Self {
        let a = graph.value(vars.a).data().to_vec();
        ActivationBundle {
            s: graph.value(vars.s).clone(),
            b: a.iter().map(|v| 1.0 - v).collect(),
            a,
            s_hat: graph.value(vars.s_hat).clone(),
            p: graph.value(vars.p).clone(),
        }
    }

    pub fn len(&self) -> usize {
        self.a.len()
    }

    pub fn is_empty(&self) -> bool {
        self.a.is_empty()
    }
}

fn check_input(features: &Tensor, shape: &ModelShape) -> Result<()> {
    if !features.is_matrix() || features.cols() != shape.feature_dim {
        return Err(Error::shape(
            "forward",
            format!(
                "features {:?} for feature dim {}",
                features.shape(),
                shape.feature_dim
            ),
        ));
    }
    if features.rows() < 2 {
        return Err(Error::InvalidInput(format!(
            "need at least 2 snippets, got {}",
            features.rows()
        )));
    }
    if !features.is_finite() {
        return Err(Error::NonFinite("input features".into()));
    }
    Ok(())
}

/// Records a forward pass on `graph`.
///
/// Dropout after the first embedder layer is applied only when `dropout_rng`
/// is given (training mode).
pub fn forward_graph<R: Rng>(
    graph: &mut Graph,
    params: &ModelParams,
    vars: &ParamVars,
    features: &Tensor,
    dropout_rng: Option<&mut R>,
) -> Result<ActivationVars> {
    check_input(features, &params.shape)?;
    let [w1, b1, w2, b2, wc, bc, wa, ba] = vars.0;
    let x = graph.constant(features.clone());

    let h = graph.conv1d(x, w1, b1)?;
    let mut h = graph.relu(h);
    if let Some(rng) = dropout_rng {
        if params.dropout > 0.0 {
            let keep = 1.0 - params.dropout;
            let bern = Bernoulli::new(keep).expect("probability");
            let mut mask = Tensor::zeros(graph.shape(h));
            for m in mask.data_mut() {
                *m = if bern.sample(rng) { 1.0 / keep } else { 0.0 };
            }
            let mask = graph.constant(mask);
            h = graph.mul(h, mask)?;
        }
    }
    let h = graph.conv1d(h, w2, b2)?;
    let h = graph.relu(h);

    let s = graph.conv1d(h, wc, bc)?;
    let att_logits = graph.conv1d(h, wa, ba)?;
    let a = graph.sigmoid(att_logits);
    let s_hat = graph.mul_column(s, a)?;
    let p = graph.softmax(s)?;
    Ok(ActivationVars { s, a, s_hat, p })
}

/// Evaluation-mode forward pass (no dropout).
pub fn forward(params: &ModelParams, features: &Tensor) -> Result<ActivationBundle> {
    let mut graph = Graph::new();
    let vars = params.bind(&mut graph);
    let out = forward_graph::<rand_chacha::ChaCha8Rng>(&mut graph, params, &vars, features, None)?;
    Ok(ActivationBundle::from_graph(&graph, &out))
}

/// Training-mode forward pass with seeded dropout.
pub fn forward_train(
    params: &ModelParams,
    features: &Tensor,
    rng: &mut impl Rng,
) -> Result<ActivationBundle> {
    let mut graph = Graph::new();
    let vars = params.bind(&mut graph);
    let out = forward_graph(&mut graph, params, &vars, features, Some(rng))?;
    Ok(ActivationBundle::from_graph(&graph, &out))
}

/// Number of snippets averaged by top-k pooling: `max(1, floor(T / gamma))`.
pub fn topk_count(len: usize, gamma: f64) -> usize {
    ((len as f64 / gamma).floor() as usize).clamp(1, len.max(1))
}

/// Video-level scores: per class, the mean of the `k` largest activations.
pub fn topk_pool(s: &Tensor, gamma: f64) -> Result<Vec<f64>> {
    if gamma <= 0.0 || !gamma.is_finite() {
        return Err(Error::InvalidInput(format!(
            "gamma must be positive, got {gamma}"
        )));
    }
    if s.rows() == 0 {
        return Err(Error::InvalidInput("empty activation sequence".into()));
    }
    let k = topk_count(s.rows(), gamma);
    let mut graph = Graph::new();
    let x = graph.constant(s.clone());
    let pooled = graph.topk_mean(x, k)?;
    Ok(graph.value(pooled).data().to_vec())
}
