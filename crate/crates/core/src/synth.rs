//! Synthetic class pools and the sliding-window task protocols.

use std::collections::HashSet;

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::data::LabeledDataset;
use crate::error::{invalid, Result};
use crate::models::softmax_rows;
use crate::ot::{CostMatrix, ProbabilityVector};
use crate::seed;

/// Gaussian class universe: class `c` has mean `prototypes[c]` and
/// covariance `covariance_scale * I`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassPool {
    pub prototypes: Array2<f64>,
    pub spread: f64,
    pub covariance_scale: f64,
    pub seed: u64,
    /// Random class order the windows slide over.
    pub permutation: Vec<usize>,
}

impl ClassPool {
    pub fn num_classes(&self) -> usize {
        self.prototypes.nrows()
    }

    pub fn dim(&self) -> usize {
        self.prototypes.ncols()
    }

    pub fn validate(&self) -> Result<()> {
        let p = self.num_classes();
        if p < 2 || self.dim() == 0 {
            return Err(invalid("a pool needs at least two classes and one dimension"));
        }
        if !(self.covariance_scale >= 0.0) || !(self.spread >= 0.0) {
            return Err(invalid("spread and covariance scale must be nonnegative"));
        }
        let mut seen = vec![false; p];
        if self.permutation.len() != p {
            return Err(invalid("permutation length does not match the pool"));
        }
        for &c in &self.permutation {
            if c >= p || std::mem::replace(&mut seen[c], true) {
                return Err(invalid("permutation is not a permutation of the pool classes"));
            }
        }
        if self.prototypes.iter().any(|v| !v.is_finite()) {
            return Err(invalid("prototypes must be finite"));
        }
        Ok(())
    }
}

pub fn make_pool(num_classes: usize, dim: usize, spread: f64, covariance_scale: f64, seed: u64) -> Result<ClassPool> {
    if num_classes < 2 {
        return Err(invalid("a pool needs at least two classes"));
    }
    if dim == 0 {
        return Err(invalid("input dimension must be positive"));
    }
    if !(spread >= 0.0) || !spread.is_finite() {
        return Err(invalid("prototype spread must be nonnegative"));
    }
    if !(covariance_scale >= 0.0) || !covariance_scale.is_finite() {
        return Err(invalid("covariance scale must be nonnegative"));
    }
    let mut rng = seed::rng(seed::derive(seed, &[&"prototypes"]));
    let prototypes = Array2::from_shape_fn((num_classes, dim), |_| {
        let z: f64 = StandardNormal.sample(&mut rng);
        spread * z
    });
    let mut permutation: Vec<usize> = (0..num_classes).collect();
    permutation.shuffle(&mut seed::rng(seed::derive(seed, &[&"permutation"])));
    Ok(ClassPool {
        prototypes,
        spread,
        covariance_scale,
        seed,
        permutation,
    })
}

/// One classification task drawn from a pool.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskSpec {
    pub label_set: Vec<usize>,
    pub instances_per_class_train: usize,
    pub instances_per_class_test: usize,
    pub seed: u64,
}

/// Label sets of windows of `window_size` consecutive classes in the pool's
/// permutation, starting at offset 0 and advancing by `step`.
pub fn sliding_windows(pool: &ClassPool, window_size: usize, step: usize) -> Result<Vec<Vec<usize>>> {
    let p = pool.permutation.len();
    if window_size == 0 || window_size > p {
        return Err(invalid(format!("window size {window_size} does not fit a pool of {p} classes")));
    }
    if step == 0 {
        return Err(invalid("window step must be positive"));
    }
    Ok((0..=(p - window_size))
        .step_by(step)
        .map(|offset| pool.permutation[offset..offset + window_size].to_vec())
        .collect())
}

/// `|a ∩ b| / window_size`.
pub fn overlap_ratio(a: &[usize], b: &[usize], window_size: usize) -> f64 {
    let a: HashSet<_> = a.iter().collect();
    let shared = b.iter().filter(|c| a.contains(c)).count();
    shared as f64 / window_size as f64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowPair {
    pub teacher_window: usize,
    pub student_window: usize,
    pub teacher_labels: Vec<usize>,
    pub student_labels: Vec<usize>,
    pub overlap: f64,
}

/// Every (teacher window, student window) combination, teacher-major.
pub fn double_sliding_windows(pool: &ClassPool, window_size: usize, step: usize) -> Result<Vec<WindowPair>> {
    let windows = sliding_windows(pool, window_size, step)?;
    let mut pairs = Vec::with_capacity(windows.len() * windows.len());
    for (t, teacher) in windows.iter().enumerate() {
        for (s, student) in windows.iter().enumerate() {
            pairs.push(WindowPair {
                teacher_window: t,
                student_window: s,
                teacher_labels: teacher.clone(),
                student_labels: student.clone(),
                overlap: overlap_ratio(teacher, student, window_size),
            });
        }
    }
    Ok(pairs)
}

/// Draws train and test sets for `spec`. Each class and split has its own
/// seed derived from `spec.seed`, so the two splits never share draws.
pub fn sample_dataset(pool: &ClassPool, spec: &TaskSpec) -> Result<(LabeledDataset, LabeledDataset)> {
    if spec.label_set.is_empty() {
        return Err(invalid("task has no classes"));
    }
    let mut seen = HashSet::new();
    for &c in &spec.label_set {
        if c >= pool.num_classes() {
            return Err(invalid(format!("class {c} is not in the pool")));
        }
        if !seen.insert(c) {
            return Err(invalid(format!("class {c} appears twice in the task")));
        }
    }
    let train = sample_split(pool, spec, "train", spec.instances_per_class_train)?;
    let test = sample_split(pool, spec, "test", spec.instances_per_class_test)?;
    Ok((train, test))
}

fn sample_split(pool: &ClassPool, spec: &TaskSpec, split: &str, per_class: usize) -> Result<LabeledDataset> {
    let dim = pool.dim();
    let n = per_class * spec.label_set.len();
    let std = pool.covariance_scale.sqrt();
    let mut x = Array2::zeros((n, dim));
    let mut labels = Vec::with_capacity(n);
    let mut row = 0;
    for (index, &class) in spec.label_set.iter().enumerate() {
        let mut rng = seed::rng(seed::derive(spec.seed, &[&split, &class]));
        let proto = pool.prototypes.row(class);
        for _ in 0..per_class {
            for j in 0..dim {
                let z: f64 = StandardNormal.sample(&mut rng);
                x[[row, j]] = proto[j] + std * z;
            }
            labels.push(index);
            row += 1;
        }
    }
    LabeledDataset::new(x, labels, spec.label_set.clone())
}

/// How the cost matrix of a random transport problem is drawn.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CostModel {
    /// i.i.d. entries uniform on `[0, 1]`.
    Uniform,
    /// Euclidean distances between random unit vectors in `R^dim`.
    Sphere { dim: usize },
}

impl std::str::FromStr for CostModel {
    type Err = crate::error::Error;

    fn from_str(s: &str) -> Result<Self> {
        if s == "uniform" {
            return Ok(Self::Uniform);
        }
        if let Some(dim) = s.strip_prefix("sphere") {
            let dim = dim.parse().map_err(|_| invalid(format!("bad cost model {s:?}")))?;
            if dim == 0 {
                return Err(invalid("sphere dimension must be positive"));
            }
            return Ok(Self::Sphere { dim });
        }
        Err(invalid(format!("unknown cost model {s:?} (expected uniform or sphere<d>)")))
    }
}

impl std::fmt::Display for CostModel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Self::Uniform => f.write_str("uniform"),
            Self::Sphere { dim } => write!(f, "sphere{dim}"),
        }
    }
}

#[derive(Debug, Clone)]
pub struct TransportProblem {
    pub mu: ProbabilityVector,
    pub nu: ProbabilityVector,
    pub cost: CostMatrix,
}

/// Square transport problem of side `size`: both marginals are tempered
/// softmaxes of logits `logit_scale * N(0, 1)`.
pub fn random_transport_problem(size: usize, cost_model: CostModel, logit_scale: f64, tau: f64, seed: u64) -> Result<TransportProblem> {
    if size == 0 {
        return Err(invalid("problem size must be positive"));
    }
    let mut rng = seed::rng(seed);
    let entries = match cost_model {
        CostModel::Uniform => {
            use rand::Rng;
            Array2::from_shape_fn((size, size), |_| rng.random::<f64>())
        }
        CostModel::Sphere { dim } => {
            let mut points: Array2<f64> = Array2::from_shape_fn((size, dim), |_| StandardNormal.sample(&mut rng));
            for mut row in points.rows_mut() {
                let norm = row.dot(&row).sqrt();
                row /= norm;
            }
            Array2::from_shape_fn((size, size), |(i, j)| {
                let diff = &points.row(i) - &points.row(j);
                diff.dot(&diff).sqrt()
            })
        }
    };
    let logits = Array2::from_shape_fn((2, size), |_| {
        let z: f64 = StandardNormal.sample(&mut rng);
        logit_scale * z
    });
    let p = softmax_rows(logits.view(), tau);
    Ok(TransportProblem {
        mu: ProbabilityVector::new(p.row(0).to_owned())?,
        nu: ProbabilityVector::new(p.row(1).to_owned())?,
        cost: CostMatrix::unlabeled(entries)?,
    })
}
