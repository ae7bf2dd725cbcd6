//! Model, pool, task-set and distillation-run files.

use std::collections::BTreeMap;
use std::path::Path;

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use super::canonical::{decode_document, read_document, write_canonical, SCHEMA_VERSION};
use crate::distill::{DistillConfig, DistillRun};
use crate::error::{Error, Result};
use crate::models::{Activation, Architecture, CenterProvenance, ClassCenters, Classifier, Embedding, EpochStats, Head};
use crate::synth::{ClassPool, TaskSpec};

pub const MODEL_SCHEMA: &str = "crosskd/model";
pub const POOL_SCHEMA: &str = "crosskd/pool";
pub const TASKS_SCHEMA: &str = "crosskd/tasks";
pub const RUN_SCHEMA: &str = "crosskd/run";

/// Free-form provenance stored with a model.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelMetadata {
    pub teacher_id: Option<usize>,
    /// Task (window) the model was trained on.
    pub task_id: Option<usize>,
    pub seed: Option<u64>,
    pub train_accuracy: Option<f64>,
    pub test_accuracy: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct LayerFile {
    weight: Vec<Vec<f64>>,
    bias: Vec<f64>,
    activation: Option<Activation>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct EmbeddingFile {
    normalize: bool,
    /// Empty for the identity map, otherwise one affine layer.
    layers: Vec<LayerFile>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct HeadFile {
    weight: Vec<Vec<f64>>,
    bias: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct CentersFile {
    provenance: CenterProvenance,
    centers: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub(crate) struct ModelFile {
    schema: String,
    version: u64,
    architecture: String,
    input_dim: usize,
    feature_dim: usize,
    num_classes: usize,
    label_set: Vec<usize>,
    embedding: EmbeddingFile,
    head: HeadFile,
    class_centers: Option<CentersFile>,
    metadata: ModelMetadata,
}

fn rows(a: &Array2<f64>) -> Vec<Vec<f64>> {
    a.outer_iter().map(|r| r.to_vec()).collect()
}

fn matrix(path: &Path, what: &str, data: &[Vec<f64>], rows: usize, cols: usize) -> Result<Array2<f64>> {
    if data.len() != rows || data.iter().any(|r| r.len() != cols) {
        return Err(malformed(path, format!("{what} must be {rows}x{cols}")));
    }
    if data.iter().flatten().any(|v| !v.is_finite()) {
        return Err(malformed(path, format!("{what} has non-finite entries")));
    }
    Ok(Array2::from_shape_fn((rows, cols), |(i, j)| data[i][j]))
}

fn vector(path: &Path, what: &str, data: &[f64], len: usize) -> Result<Array1<f64>> {
    if data.len() != len {
        return Err(malformed(path, format!("{what} must have {len} entries")));
    }
    if data.iter().any(|v| !v.is_finite()) {
        return Err(malformed(path, format!("{what} has non-finite entries")));
    }
    Ok(Array1::from(data.to_vec()))
}

fn malformed(path: &Path, reason: impl Into<String>) -> Error {
    Error::Malformed {
        path: path.to_path_buf(),
        reason: reason.into(),
    }
}

impl ModelFile {
    pub(crate) fn from_model(model: &Classifier, metadata: &ModelMetadata) -> Self {
        let embedding = model.embedding();
        let layers = embedding
            .weights()
            .map(|(w, b)| LayerFile {
                weight: rows(w),
                bias: b.to_vec(),
                activation: embedding.activation(),
            })
            .into_iter()
            .collect();
        Self {
            schema: MODEL_SCHEMA.into(),
            version: SCHEMA_VERSION,
            architecture: model.architecture().to_string(),
            input_dim: model.input_dim(),
            feature_dim: embedding.output_dim(),
            num_classes: model.num_classes(),
            label_set: model.label_set().to_vec(),
            embedding: EmbeddingFile {
                normalize: embedding.normalizes(),
                layers,
            },
            head: HeadFile {
                weight: rows(&model.head().weight),
                bias: model.head().bias.as_ref().map(|b| b.to_vec()),
            },
            class_centers: model.class_centers.as_ref().map(|c| CentersFile {
                provenance: c.provenance,
                centers: rows(&c.centers),
            }),
            metadata: metadata.clone(),
        }
    }

    /// Checks every declared dimension before building anything.
    pub(crate) fn into_model(self, path: &Path) -> Result<(Classifier, ModelMetadata)> {
        let (d_in, d, c) = (self.input_dim, self.feature_dim, self.num_classes);
        if d_in == 0 || d == 0 || c == 0 {
            return Err(malformed(path, "dimensions must be positive"));
        }
        if self.label_set.len() != c {
            return Err(malformed(path, "label_set length differs from num_classes"));
        }
        let embedding = match self.embedding.layers.as_slice() {
            [] => {
                if d_in != d {
                    return Err(malformed(path, "identity embedding needs feature_dim == input_dim"));
                }
                Embedding::identity(d_in)
            }
            [layer] => {
                let w = matrix(path, "embedding weight", &layer.weight, d_in, d)?;
                let b = vector(path, "embedding bias", &layer.bias, d)?;
                Embedding::affine(w, b, layer.activation).map_err(|e| malformed(path, e.to_string()))?
            }
            _ => return Err(malformed(path, "at most one embedding layer is supported")),
        }
        .with_normalization(self.embedding.normalize);
        let head = Head {
            weight: matrix(path, "head weight", &self.head.weight, d, c)?,
            bias: match &self.head.bias {
                Some(b) => Some(vector(path, "head bias", b, c)?),
                None => None,
            },
        };
        let mut model = Classifier::from_parts(embedding, head, self.label_set.clone()).map_err(|e| malformed(path, e.to_string()))?;
        let declared: Architecture = self.architecture.parse().map_err(|e: Error| malformed(path, e.to_string()))?;
        if declared != model.architecture() {
            return Err(malformed(
                path,
                format!("architecture {} does not match the stored layers ({})", self.architecture, model.architecture()),
            ));
        }
        if let Some(centers) = self.class_centers {
            let m = matrix(path, "class centers", &centers.centers, c, d)?;
            model.class_centers = Some(ClassCenters::new(m, self.label_set, centers.provenance).map_err(|e| malformed(path, e.to_string()))?);
        }
        Ok((model, self.metadata))
    }
}

/// Writes `model` and returns the file's SHA-256.
pub fn save_model(path: &Path, model: &Classifier, metadata: &ModelMetadata) -> Result<String> {
    write_canonical(path, &ModelFile::from_model(model, metadata))
}

pub fn load_model(path: &Path) -> Result<Classifier> {
    Ok(load_model_with_metadata(path)?.0)
}

pub fn load_model_with_metadata(path: &Path) -> Result<(Classifier, ModelMetadata)> {
    read_document::<ModelFile>(path, MODEL_SCHEMA)?.into_model(path)
}

/// Loads a model only if its bytes hash to `expected_sha256`.
pub fn load_model_checked(path: &Path, expected_sha256: &str) -> Result<(Classifier, ModelMetadata)> {
    let bytes = std::fs::read(path)?;
    if super::canonical::sha256_hex(&bytes) != expected_sha256 {
        return Err(Error::HashMismatch { path: path.to_path_buf() });
    }
    decode_document::<ModelFile>(path, &bytes, MODEL_SCHEMA)?.into_model(path)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct PoolFile {
    schema: String,
    version: u64,
    num_classes: usize,
    dim: usize,
    spread: f64,
    covariance_scale: f64,
    seed: u64,
    permutation: Vec<usize>,
    prototypes: Vec<Vec<f64>>,
}

pub fn save_pool(path: &Path, pool: &ClassPool) -> Result<String> {
    pool.validate()?;
    write_canonical(
        path,
        &PoolFile {
            schema: POOL_SCHEMA.into(),
            version: SCHEMA_VERSION,
            num_classes: pool.num_classes(),
            dim: pool.dim(),
            spread: pool.spread,
            covariance_scale: pool.covariance_scale,
            seed: pool.seed,
            permutation: pool.permutation.clone(),
            prototypes: rows(&pool.prototypes),
        },
    )
}

pub fn load_pool(path: &Path) -> Result<ClassPool> {
    let file: PoolFile = read_document(path, POOL_SCHEMA)?;
    let pool = ClassPool {
        prototypes: matrix(path, "prototypes", &file.prototypes, file.num_classes, file.dim)?,
        spread: file.spread,
        covariance_scale: file.covariance_scale,
        seed: file.seed,
        permutation: file.permutation,
    };
    pool.validate().map_err(|e| malformed(path, e.to_string()))?;
    Ok(pool)
}

/// A file referenced by path together with its content hash.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileRef {
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TaskRole {
    /// Source task a repository teacher is trained on.
    Teacher,
    /// Downstream task a student is trained on.
    Target,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskEntry {
    pub task_id: usize,
    pub role: TaskRole,
    pub window: usize,
    pub spec: TaskSpec,
}

/// The sliding-window tasks drawn from one pool.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskSet {
    pub schema: String,
    pub version: u64,
    pub pool: FileRef,
    pub window_size: usize,
    pub step: usize,
    pub tasks: Vec<TaskEntry>,
}

impl TaskSet {
    pub fn new(pool: FileRef, window_size: usize, step: usize, tasks: Vec<TaskEntry>) -> Self {
        Self {
            schema: TASKS_SCHEMA.into(),
            version: SCHEMA_VERSION,
            pool,
            window_size,
            step,
            tasks,
        }
    }

    pub fn with_role(&self, role: TaskRole) -> impl Iterator<Item = &TaskEntry> {
        self.tasks.iter().filter(move |t| t.role == role)
    }

    pub fn find(&self, role: TaskRole, window: usize) -> Option<&TaskEntry> {
        self.with_role(role).find(|t| t.window == window)
    }
}

pub fn save_tasks(path: &Path, tasks: &TaskSet) -> Result<String> {
    write_canonical(path, tasks)
}

pub fn load_tasks(path: &Path) -> Result<TaskSet> {
    read_document(path, TASKS_SCHEMA)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct CostFile {
    source_labels: Vec<usize>,
    target_labels: Vec<usize>,
    entries: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct RunFile {
    schema: String,
    version: u64,
    teacher_id: Option<usize>,
    seed: u64,
    train_accuracy: f64,
    test_accuracy: f64,
    unconverged_solves: usize,
    sinkhorn_solves: usize,
    sinkhorn_iterations: usize,
    config: DistillConfig,
    cost_matrix: Option<CostFile>,
    trace: Vec<EpochStats>,
    student: ModelFile,
    extra: BTreeMap<String, serde_json::Value>,
}

/// Writes a distillation run, including the student, as one JSON file.
pub fn save_distill_run(path: &Path, run: &DistillRun, teacher_id: Option<usize>) -> Result<String> {
    write_canonical(
        path,
        &RunFile {
            schema: RUN_SCHEMA.into(),
            version: SCHEMA_VERSION,
            teacher_id,
            seed: run.seed,
            train_accuracy: run.train_accuracy,
            test_accuracy: run.test_accuracy,
            unconverged_solves: run.unconverged_solves,
            sinkhorn_solves: run.sinkhorn_solves,
            sinkhorn_iterations: run.sinkhorn_iterations,
            config: run.config.clone(),
            cost_matrix: run.cost_matrix.as_ref().map(|m| CostFile {
                source_labels: m.source_labels().to_vec(),
                target_labels: m.target_labels().to_vec(),
                entries: rows(m.entries()),
            }),
            trace: run.trace.clone(),
            student: ModelFile::from_model(&run.student, &ModelMetadata::default()),
            extra: BTreeMap::new(),
        },
    )
}

/// Reads back the student and test accuracy of a saved run.
pub fn load_distill_run_student(path: &Path) -> Result<(Classifier, f64)> {
    let file: RunFile = read_document(path, RUN_SCHEMA)?;
    let test = file.test_accuracy;
    Ok((file.student.into_model(path)?.0, test))
}
