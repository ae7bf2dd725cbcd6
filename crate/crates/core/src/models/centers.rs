use ndarray::{Array2, ArrayView1};
use serde::{Deserialize, Serialize};

use super::classifier::{Classifier, Embedding};
use crate::data::LabeledDataset;
use crate::error::{invalid, Error, Result};
use crate::ot::CostMatrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CenterProvenance {
    EmpiricalMean,
    NormalizedHeadWeights,
}

impl std::str::FromStr for CenterProvenance {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "empirical-mean" => Ok(Self::EmpiricalMean),
            "normalized-head-weights" => Ok(Self::NormalizedHeadWeights),
            other => Err(invalid(format!("unknown center provenance {other:?}"))),
        }
    }
}

impl std::fmt::Display for CenterProvenance {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::EmpiricalMean => "empirical-mean",
            Self::NormalizedHeadWeights => "normalized-head-weights",
        })
    }
}

/// One center per class, in embedding space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassCenters {
    pub centers: Array2<f64>,
    pub label_set: Vec<usize>,
    pub provenance: CenterProvenance,
}

impl ClassCenters {
    pub fn new(centers: Array2<f64>, label_set: Vec<usize>, provenance: CenterProvenance) -> Result<Self> {
        if centers.nrows() != label_set.len() {
            return Err(invalid(format!(
                "{} centers for {} labels",
                centers.nrows(),
                label_set.len()
            )));
        }
        if label_set.is_empty() {
            return Err(invalid("no class centers"));
        }
        if centers.iter().any(|v| !v.is_finite()) {
            return Err(invalid("class centers must be finite"));
        }
        Ok(Self {
            centers,
            label_set,
            provenance,
        })
    }

    pub fn dim(&self) -> usize {
        self.centers.ncols()
    }

    pub fn len(&self) -> usize {
        self.label_set.len()
    }

    pub fn is_empty(&self) -> bool {
        self.label_set.is_empty()
    }
}

/// Mean embedding of each class.
pub fn empirical_centers(embedding: &Embedding, data: &LabeledDataset) -> Result<ClassCenters> {
    if data.dim() != embedding.input_dim() {
        return Err(invalid(format!(
            "data has dimension {} but the embedding expects {}",
            data.dim(),
            embedding.input_dim()
        )));
    }
    let counts = data.class_counts();
    if let Some(empty) = counts.iter().position(|&c| c == 0) {
        return Err(Error::DegenerateClass {
            label: data.label_set()[empty],
        });
    }
    let features = embedding.embed(data.instances().view());
    let mut centers = Array2::zeros((data.num_classes(), embedding.output_dim()));
    for (row, &y) in features.outer_iter().zip(data.labels()) {
        let mut c = centers.row_mut(y);
        c += &row;
    }
    for (mut c, &n) in centers.outer_iter_mut().zip(&counts) {
        c /= n as f64;
    }
    ClassCenters::new(centers, data.label_set().to_vec(), CenterProvenance::EmpiricalMean)
}

/// Unit-normalised head columns, one per class.
pub fn head_weight_centers(classifier: &Classifier) -> Result<ClassCenters> {
    let w = &classifier.head().weight;
    let mut centers = w.t().to_owned();
    for (m, mut row) in centers.outer_iter_mut().enumerate() {
        let norm = row.dot(&row).sqrt();
        if !(norm > 0.0) || !norm.is_finite() {
            return Err(Error::DegenerateHead {
                label: classifier.label_set()[m],
            });
        }
        row /= norm;
    }
    ClassCenters::new(
        centers,
        classifier.label_set().to_vec(),
        CenterProvenance::NormalizedHeadWeights,
    )
}

fn nearest(features: ArrayView1<f64>, centers: &ClassCenters) -> usize {
    let mut best = 0;
    let mut best_dist = f64::INFINITY;
    for (m, c) in centers.centers.outer_iter().enumerate() {
        let dist: f64 = features.iter().zip(c).map(|(a, b)| (a - b) * (a - b)).sum();
        if dist < best_dist {
            best = m;
            best_dist = dist;
        }
    }
    best
}

/// Label id of the nearest center to `phi(x)`; lowest index wins ties.
pub fn ncm_classify(embedding: &Embedding, centers: &ClassCenters, x: ArrayView1<f64>) -> Result<usize> {
    check_dims(embedding, centers, x.len())?;
    let phi = embedding.embed_one(x);
    Ok(centers.label_set[nearest(phi.view(), centers)])
}

/// Nearest-center label indices (into `centers.label_set`) for a batch.
pub fn ncm_predict(embedding: &Embedding, centers: &ClassCenters, x: ndarray::ArrayView2<f64>) -> Result<Vec<usize>> {
    check_dims(embedding, centers, x.ncols())?;
    let phi = embedding.embed(x);
    Ok(phi.outer_iter().map(|row| nearest(row, centers)).collect())
}

fn check_dims(embedding: &Embedding, centers: &ClassCenters, input_dim: usize) -> Result<()> {
    if input_dim != embedding.input_dim() {
        return Err(invalid("input dimension does not match the embedding"));
    }
    if centers.dim() != embedding.output_dim() {
        return Err(invalid("center dimension does not match the embedding"));
    }
    Ok(())
}

/// Euclidean distances between teacher centers (rows) and student centers
/// (columns).
pub fn cost_matrix(teacher: &ClassCenters, student: &ClassCenters) -> Result<CostMatrix> {
    if teacher.dim() != student.dim() {
        return Err(invalid(format!(
            "teacher centers have dimension {} but student centers {}",
            teacher.dim(),
            student.dim()
        )));
    }
    let entries = Array2::from_shape_fn((teacher.len(), student.len()), |(m, n)| {
        let a = teacher.centers.row(m);
        let b = student.centers.row(n);
        a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
    });
    CostMatrix::new(entries, teacher.label_set.clone(), student.label_set.clone())
}
