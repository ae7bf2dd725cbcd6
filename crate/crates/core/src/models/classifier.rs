use std::fmt;
use std::str::FromStr;

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis, Zip};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::centers::ClassCenters;
use crate::data::LabeledDataset;
use crate::error::{invalid, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Tanh,
    Relu,
}

impl Activation {
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Tanh => z.tanh(),
            Activation::Relu => z.max(0.0),
        }
    }

    /// Derivative expressed through the pre-activation `z` and output `h`.
    fn derivative(self, z: f64, h: f64) -> f64 {
        match self {
            Activation::Tanh => 1.0 - h * h,
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Activation::Tanh => "tanh",
            Activation::Relu => "relu",
        }
    }
}

/// Shape of the embedding network.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum EmbeddingKind {
    /// `phi(x) = x`.
    Identity,
    /// `phi(x) = A x + b`.
    Projection { width: usize },
    /// `phi(x) = act(A x + b)`.
    Mlp { width: usize, activation: Activation },
}

/// Architecture descriptor, written as `linear`, `proj<d>`, `mlp<d>` or
/// `mlp<d>-relu`, optionally followed by `+norm` (unit-normalised features)
/// and `+bias` (bias in the head).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Architecture {
    pub embedding: EmbeddingKind,
    pub normalize_features: bool,
    pub head_bias: bool,
}

impl Architecture {
    pub fn linear() -> Self {
        Self {
            embedding: EmbeddingKind::Identity,
            normalize_features: false,
            head_bias: false,
        }
    }

    pub fn mlp(width: usize) -> Self {
        Self {
            embedding: EmbeddingKind::Mlp {
                width,
                activation: Activation::Tanh,
            },
            normalize_features: false,
            head_bias: false,
        }
    }

    pub fn with_normalized_features(mut self) -> Self {
        self.normalize_features = true;
        self
    }

    pub fn feature_dim(&self, input_dim: usize) -> usize {
        match self.embedding {
            EmbeddingKind::Identity => input_dim,
            EmbeddingKind::Projection { width } | EmbeddingKind::Mlp { width, .. } => width,
        }
    }
}

impl fmt::Display for Architecture {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.embedding {
            EmbeddingKind::Identity => write!(f, "linear")?,
            EmbeddingKind::Projection { width } => write!(f, "proj{width}")?,
            EmbeddingKind::Mlp { width, activation } => {
                write!(f, "mlp{width}")?;
                if activation != Activation::Tanh {
                    write!(f, "-{}", activation.name())?;
                }
            }
        }
        if self.normalize_features {
            write!(f, "+norm")?;
        }
        if self.head_bias {
            write!(f, "+bias")?;
        }
        Ok(())
    }
}

impl FromStr for Architecture {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let mut parts = s.trim().split('+');
        let base = parts.next().unwrap_or_default();
        let parse_width = |digits: &str| -> Result<usize> {
            match digits.parse::<usize>() {
                Ok(w) if w > 0 => Ok(w),
                _ => Err(invalid(format!("bad width in architecture {s:?}"))),
            }
        };
        let embedding = if base == "linear" {
            EmbeddingKind::Identity
        } else if let Some(rest) = base.strip_prefix("proj") {
            EmbeddingKind::Projection { width: parse_width(rest)? }
        } else if let Some(rest) = base.strip_prefix("mlp") {
            let (digits, activation) = match rest.split_once('-') {
                Some((d, "tanh")) => (d, Activation::Tanh),
                Some((d, "relu")) => (d, Activation::Relu),
                Some(_) => return Err(invalid(format!("unknown activation in {s:?}"))),
                None => (rest, Activation::Tanh),
            };
            EmbeddingKind::Mlp {
                width: parse_width(digits)?,
                activation,
            }
        } else {
            return Err(invalid(format!("unknown architecture {s:?}")));
        };
        let mut arch = Architecture {
            embedding,
            normalize_features: false,
            head_bias: false,
        };
        for flag in parts {
            match flag {
                "norm" => arch.normalize_features = true,
                "bias" => arch.head_bias = true,
                other => return Err(invalid(format!("unknown architecture flag {other:?}"))),
            }
        }
        Ok(arch)
    }
}

/// The feature map `phi`.
#[derive(Debug, Clone, PartialEq)]
pub struct Embedding {
    input_dim: usize,
    /// `D x d` weight and length-`d` bias; absent for the identity map.
    affine: Option<(Array2<f64>, Array1<f64>)>,
    activation: Option<Activation>,
    normalize: bool,
}

impl Embedding {
    pub fn identity(input_dim: usize) -> Self {
        Self {
            input_dim,
            affine: None,
            activation: None,
            normalize: false,
        }
    }

    pub fn affine(weight: Array2<f64>, bias: Array1<f64>, activation: Option<Activation>) -> Result<Self> {
        if weight.ncols() != bias.len() {
            return Err(invalid(format!(
                "embedding weight has {} columns but bias has {} entries",
                weight.ncols(),
                bias.len()
            )));
        }
        if weight.is_empty() {
            return Err(invalid("embedding weight is empty"));
        }
        Ok(Self {
            input_dim: weight.nrows(),
            affine: Some((weight, bias)),
            activation,
            normalize: false,
        })
    }

    pub fn with_normalization(mut self, normalize: bool) -> Self {
        self.normalize = normalize;
        self
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn output_dim(&self) -> usize {
        self.affine.as_ref().map_or(self.input_dim, |(w, _)| w.ncols())
    }

    pub fn weights(&self) -> Option<(&Array2<f64>, &Array1<f64>)> {
        self.affine.as_ref().map(|(w, b)| (w, b))
    }

    pub fn activation(&self) -> Option<Activation> {
        self.activation
    }

    pub fn normalizes(&self) -> bool {
        self.normalize
    }

    pub fn kind(&self) -> EmbeddingKind {
        match (&self.affine, self.activation) {
            (None, _) => EmbeddingKind::Identity,
            (Some((w, _)), None) => EmbeddingKind::Projection { width: w.ncols() },
            (Some((w, _)), Some(activation)) => EmbeddingKind::Mlp {
                width: w.ncols(),
                activation,
            },
        }
    }

    fn num_params(&self) -> usize {
        self.affine.as_ref().map_or(0, |(w, b)| w.len() + b.len())
    }

    /// Features of a batch of instances (one per row).
    pub fn embed(&self, x: ArrayView2<f64>) -> Array2<f64> {
        self.forward(x).2
    }

    pub fn embed_one(&self, x: ArrayView1<f64>) -> Array1<f64> {
        let batch = x.insert_axis(Axis(0));
        self.embed(batch).row(0).to_owned()
    }

    /// Returns (pre-activation, activation, features).
    fn forward(&self, x: ArrayView2<f64>) -> (Option<Array2<f64>>, Array2<f64>, Array2<f64>) {
        let (z, h) = match &self.affine {
            None => (None, x.to_owned()),
            Some((w, b)) => {
                let z = x.dot(w) + b;
                let h = match self.activation {
                    None => z.clone(),
                    Some(act) => z.mapv(|v| act.apply(v)),
                };
                (Some(z), h)
            }
        };
        let features = if self.normalize {
            let mut phi = h.clone();
            for mut row in phi.outer_iter_mut() {
                let norm = row.dot(&row).sqrt();
                if norm > 0.0 {
                    row /= norm;
                }
            }
            phi
        } else {
            h.clone()
        };
        (z, h, features)
    }
}

/// Linear head `W` (`d x C`) with optional bias.
#[derive(Debug, Clone, PartialEq)]
pub struct Head {
    pub weight: Array2<f64>,
    pub bias: Option<Array1<f64>>,
}

#[derive(Debug, Clone)]
pub struct ForwardCache {
    pre_activation: Option<Array2<f64>>,
    activation: Array2<f64>,
    pub features: Array2<f64>,
    pub logits: Array2<f64>,
}

/// A classifier factored as embedding network plus linear head.
#[derive(Debug, Clone, PartialEq)]
pub struct Classifier {
    embedding: Embedding,
    head: Head,
    label_set: Vec<usize>,
    /// Class centers stored after training, used when the empirical-mean
    /// provenance is requested for this model's own classes.
    pub class_centers: Option<ClassCenters>,
}

impl Classifier {
    pub fn from_parts(embedding: Embedding, head: Head, label_set: Vec<usize>) -> Result<Self> {
        if head.weight.nrows() != embedding.output_dim() {
            return Err(invalid(format!(
                "head expects {} features but the embedding produces {}",
                head.weight.nrows(),
                embedding.output_dim()
            )));
        }
        if head.weight.ncols() != label_set.len() {
            return Err(invalid(format!(
                "head has {} columns but the label set has {} entries",
                head.weight.ncols(),
                label_set.len()
            )));
        }
        if let Some(b) = &head.bias {
            if b.len() != label_set.len() {
                return Err(invalid("head bias length does not match the label set"));
            }
        }
        if label_set.is_empty() {
            return Err(invalid("classifier needs at least one class"));
        }
        Ok(Self {
            embedding,
            head,
            label_set,
            class_centers: None,
        })
    }

    /// Random initialisation, `uniform(-1/sqrt(fan_in), 1/sqrt(fan_in))` per layer.
    pub fn init<R: Rng>(arch: &Architecture, input_dim: usize, label_set: Vec<usize>, rng: &mut R) -> Result<Self> {
        if input_dim == 0 {
            return Err(invalid("input dimension must be positive"));
        }
        let mut uniform = |rows: usize, cols: usize, fan_in: usize| {
            let bound = 1.0 / (fan_in as f64).sqrt();
            Array2::from_shape_fn((rows, cols), |_| rng.random_range(-bound..bound))
        };
        let embedding = match arch.embedding {
            EmbeddingKind::Identity => Embedding::identity(input_dim),
            EmbeddingKind::Projection { width } | EmbeddingKind::Mlp { width, .. } => {
                let w = uniform(input_dim, width, input_dim);
                let b = uniform(1, width, input_dim).remove_axis(Axis(0));
                let act = match arch.embedding {
                    EmbeddingKind::Mlp { activation, .. } => Some(activation),
                    _ => None,
                };
                Embedding::affine(w, b, act)?
            }
        }
        .with_normalization(arch.normalize_features);
        let d = embedding.output_dim();
        let classes = label_set.len();
        let weight = uniform(d, classes, d);
        let bias = arch.head_bias.then(|| uniform(1, classes, d).remove_axis(Axis(0)));
        Self::from_parts(embedding, Head { weight, bias }, label_set)
    }

    pub fn architecture(&self) -> Architecture {
        Architecture {
            embedding: self.embedding.kind(),
            normalize_features: self.embedding.normalize,
            head_bias: self.head.bias.is_some(),
        }
    }

    pub fn embedding(&self) -> &Embedding {
        &self.embedding
    }

    pub fn head(&self) -> &Head {
        &self.head
    }

    pub fn label_set(&self) -> &[usize] {
        &self.label_set
    }

    pub fn num_classes(&self) -> usize {
        self.label_set.len()
    }

    pub fn input_dim(&self) -> usize {
        self.embedding.input_dim()
    }

    /// Replaces the head, keeping the embedding. Used to build students that
    /// share a frozen feature map.
    pub fn with_head(&self, head: Head, label_set: Vec<usize>) -> Result<Self> {
        Self::from_parts(self.embedding.clone(), head, label_set)
    }

    pub fn logits(&self, x: ArrayView2<f64>) -> Array2<f64> {
        self.forward(x).logits
    }

    pub fn forward(&self, x: ArrayView2<f64>) -> ForwardCache {
        let (pre_activation, activation, features) = self.embedding.forward(x);
        let logits = self.head_logits(&features);
        ForwardCache {
            pre_activation,
            activation,
            features,
            logits,
        }
    }

    pub(crate) fn head_logits(&self, features: &Array2<f64>) -> Array2<f64> {
        let mut logits = features.dot(&self.head.weight);
        if let Some(b) = &self.head.bias {
            logits += b;
        }
        logits
    }

    /// Predicted label indices (argmax, lowest index on ties).
    pub fn predict(&self, x: ArrayView2<f64>) -> Vec<usize> {
        self.logits(x).outer_iter().map(argmax).collect()
    }

    pub fn accuracy(&self, data: &LabeledDataset) -> f64 {
        if data.is_empty() {
            return 0.0;
        }
        let hits = self
            .predict(data.instances().view())
            .iter()
            .zip(data.labels())
            .filter(|(p, y)| p == y)
            .count();
        hits as f64 / data.len() as f64
    }

    pub fn num_params(&self) -> usize {
        self.embedding.num_params() + self.head.weight.len() + self.head.bias.as_ref().map_or(0, |b| b.len())
    }

    /// Parameters in the order: embedding weight, embedding bias, head
    /// weight, head bias (row-major).
    pub fn flat_params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_params());
        if let Some((w, b)) = &self.embedding.affine {
            out.extend(w.iter());
            out.extend(b.iter());
        }
        out.extend(self.head.weight.iter());
        if let Some(b) = &self.head.bias {
            out.extend(b.iter());
        }
        out
    }

    pub fn set_flat_params(&mut self, params: &[f64]) -> Result<()> {
        if params.len() != self.num_params() {
            return Err(invalid(format!(
                "expected {} parameters, got {}",
                self.num_params(),
                params.len()
            )));
        }
        let mut rest = params;
        let mut fill = |target: &mut dyn Iterator<Item = &mut f64>| {
            for t in target {
                *t = rest[0];
                rest = &rest[1..];
            }
        };
        if let Some((w, b)) = &mut self.embedding.affine {
            fill(&mut w.iter_mut());
            fill(&mut b.iter_mut());
        }
        fill(&mut self.head.weight.iter_mut());
        if let Some(b) = &mut self.head.bias {
            fill(&mut b.iter_mut());
        }
        Ok(())
    }

    /// Gradient of a loss with respect to [`Self::flat_params`], given the
    /// gradient with respect to the logits of the cached batch.
    pub fn backward(&self, x: ArrayView2<f64>, cache: &ForwardCache, dlogits: &Array2<f64>) -> Vec<f64> {
        let mut grad = Vec::with_capacity(self.num_params());
        let d_head_w = cache.features.t().dot(dlogits);
        if let Some((w, _)) = &self.embedding.affine {
            let d_features = dlogits.dot(&self.head.weight.t());
            let mut d_act = if self.embedding.normalize {
                normalization_backward(&cache.activation, &cache.features, &d_features)
            } else {
                d_features
            };
            if let (Some(act), Some(z)) = (self.embedding.activation, &cache.pre_activation) {
                Zip::from(&mut d_act)
                    .and(z)
                    .and(&cache.activation)
                    .for_each(|g, &z, &h| *g *= act.derivative(z, h));
            }
            let d_w = x.t().dot(&d_act);
            debug_assert_eq!(d_w.dim(), w.dim());
            grad.extend(d_w.iter());
            grad.extend(d_act.sum_axis(Axis(0)).iter());
        }
        grad.extend(d_head_w.iter());
        if self.head.bias.is_some() {
            grad.extend(dlogits.sum_axis(Axis(0)).iter());
        }
        grad
    }
}

/// Backpropagates through `phi = h / |h|` row-wise.
fn normalization_backward(h: &Array2<f64>, phi: &Array2<f64>, d_phi: &Array2<f64>) -> Array2<f64> {
    let mut out = Array2::zeros(h.raw_dim());
    for i in 0..h.nrows() {
        let norm = h.row(i).dot(&h.row(i)).sqrt();
        if norm == 0.0 {
            continue;
        }
        let proj = phi.row(i).dot(&d_phi.row(i));
        let row = (&d_phi.row(i) - &(&phi.row(i) * proj)) / norm;
        out.row_mut(i).assign(&row);
    }
    out
}

/// Index of the largest entry; the lowest index wins ties.
pub fn argmax(values: ArrayView1<f64>) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}
