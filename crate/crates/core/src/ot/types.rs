use ndarray::{Array1, Array2, ArrayView1};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

/// Tolerance on the total mass of a [`ProbabilityVector`].
pub const MASS_TOLERANCE: f64 = 1e-12;

/// A point on the probability simplex.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbabilityVector(Array1<f64>);

impl ProbabilityVector {
    pub fn new(values: Array1<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(invalid("probability vector is empty"));
        }
        if let Some(bad) = values.iter().find(|v| !v.is_finite() || **v < 0.0) {
            return Err(invalid(format!("probability entry {bad} is negative or not finite")));
        }
        let mass: f64 = values.sum();
        if (mass - 1.0).abs() > MASS_TOLERANCE {
            return Err(invalid(format!("probability vector sums to {mass}, not 1")));
        }
        Ok(Self(values))
    }

    /// Rescales a nonnegative vector to unit mass.
    pub fn normalized(values: Array1<f64>) -> Result<Self> {
        let mass: f64 = values.sum();
        if !(mass > 0.0) || !mass.is_finite() {
            return Err(invalid("cannot normalize a vector without positive finite mass"));
        }
        Self::new(values / mass)
    }

    pub fn uniform(len: usize) -> Result<Self> {
        if len == 0 {
            return Err(invalid("probability vector is empty"));
        }
        Ok(Self(Array1::from_elem(len, 1.0 / len as f64)))
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn view(&self) -> ArrayView1<'_, f64> {
        self.0.view()
    }

    pub fn as_array(&self) -> &Array1<f64> {
        &self.0
    }

    pub fn into_inner(self) -> Array1<f64> {
        self.0
    }

    pub fn is_strictly_positive(&self) -> bool {
        self.0.iter().all(|&v| v > 0.0)
    }
}

/// Nonnegative costs between a source label set (rows) and a target label
/// set (columns).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostMatrix {
    entries: Array2<f64>,
    source_labels: Vec<usize>,
    target_labels: Vec<usize>,
}

impl CostMatrix {
    pub fn new(entries: Array2<f64>, source_labels: Vec<usize>, target_labels: Vec<usize>) -> Result<Self> {
        let (rows, cols) = entries.dim();
        if rows == 0 || cols == 0 {
            return Err(invalid("cost matrix must be nonempty"));
        }
        if rows != source_labels.len() || cols != target_labels.len() {
            return Err(invalid(format!(
                "cost matrix is {rows}x{cols} but label sets have sizes {} and {}",
                source_labels.len(),
                target_labels.len()
            )));
        }
        if let Some(bad) = entries.iter().find(|v| !v.is_finite() || **v < 0.0) {
            return Err(invalid(format!("cost entry {bad} is negative or not finite")));
        }
        Ok(Self {
            entries,
            source_labels,
            target_labels,
        })
    }

    /// Cost matrix whose labels are the positions `0..rows` and `0..cols`.
    pub fn unlabeled(entries: Array2<f64>) -> Result<Self> {
        let (rows, cols) = entries.dim();
        Self::new(entries, (0..rows).collect(), (0..cols).collect())
    }

    pub fn entries(&self) -> &Array2<f64> {
        &self.entries
    }

    pub fn source_labels(&self) -> &[usize] {
        &self.source_labels
    }

    pub fn target_labels(&self) -> &[usize] {
        &self.target_labels
    }

    pub fn dim(&self) -> (usize, usize) {
        self.entries.dim()
    }

    pub fn transpose(&self) -> Self {
        Self {
            entries: self.entries.t().to_owned(),
            source_labels: self.target_labels.clone(),
            target_labels: self.source_labels.clone(),
        }
    }

    pub fn mean(&self) -> f64 {
        self.entries.mean().unwrap_or(0.0)
    }

    pub fn max(&self) -> f64 {
        self.entries.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }
}

/// `K = exp(-M / epsilon)`, kept alongside its logarithm so that contraction
/// diagnostics stay exact when `K` underflows.
#[derive(Debug, Clone)]
pub struct GibbsKernel {
    entries: Array2<f64>,
    log_entries: Array2<f64>,
    epsilon: f64,
}

impl GibbsKernel {
    pub fn new(cost: &CostMatrix, epsilon: f64) -> Result<Self> {
        if !(epsilon > 0.0) || !epsilon.is_finite() {
            return Err(invalid(format!("epsilon must be positive, got {epsilon}")));
        }
        let log_entries = cost.entries().mapv(|m| -m / epsilon);
        let entries = log_entries.mapv(f64::exp);
        Ok(Self {
            entries,
            log_entries,
            epsilon,
        })
    }

    pub fn entries(&self) -> &Array2<f64> {
        &self.entries
    }

    pub fn log_entries(&self) -> &Array2<f64> {
        &self.log_entries
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn dim(&self) -> (usize, usize) {
        self.entries.dim()
    }
}
