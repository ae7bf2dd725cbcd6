use ndarray::{Array2, ArrayView1, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

/// Instances with labels indexing into an ordered label set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledDataset {
    instances: Array2<f64>,
    labels: Vec<usize>,
    label_set: Vec<usize>,
}

impl LabeledDataset {
    pub fn new(instances: Array2<f64>, labels: Vec<usize>, label_set: Vec<usize>) -> Result<Self> {
        if instances.nrows() != labels.len() {
            return Err(invalid(format!(
                "{} instances but {} labels",
                instances.nrows(),
                labels.len()
            )));
        }
        if let Some(bad) = labels.iter().find(|&&y| y >= label_set.len()) {
            return Err(invalid(format!(
                "label index {bad} out of range for {} classes",
                label_set.len()
            )));
        }
        let mut sorted = label_set.clone();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted.len() != label_set.len() {
            return Err(invalid("label set contains duplicates"));
        }
        if instances.iter().any(|v| !v.is_finite()) {
            return Err(invalid("instances contain non-finite values"));
        }
        Ok(Self {
            instances,
            labels,
            label_set,
        })
    }

    pub fn instances(&self) -> &Array2<f64> {
        &self.instances
    }

    /// Label indices (positions in [`Self::label_set`]).
    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    /// Global class ids in index order.
    pub fn label_set(&self) -> &[usize] {
        &self.label_set
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.instances.ncols()
    }

    pub fn num_classes(&self) -> usize {
        self.label_set.len()
    }

    pub fn instance(&self, i: usize) -> ArrayView1<'_, f64> {
        self.instances.row(i)
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.label_set.len()];
        for &y in &self.labels {
            counts[y] += 1;
        }
        counts
    }

    /// Rows selected by `indices`, in that order.
    pub fn subset(&self, indices: &[usize]) -> Self {
        Self {
            instances: self.instances.select(Axis(0), indices),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            label_set: self.label_set.clone(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn validates_labels() {
        let x = array![[0.0], [1.0]];
        assert!(LabeledDataset::new(x.clone(), vec![0, 2], vec![5, 6]).is_err());
        assert!(LabeledDataset::new(x.clone(), vec![0], vec![5, 6]).is_err());
        assert!(LabeledDataset::new(x.clone(), vec![0, 0], vec![5, 5]).is_err());
        let d = LabeledDataset::new(x, vec![1, 1], vec![5, 6]).unwrap();
        assert_eq!(d.class_counts(), vec![0, 2]);
        assert_eq!(d.subset(&[1]).len(), 1);
    }
}
