#![allow(dead_code)]

use crosskd::data::LabeledDataset;
use crosskd::models::{empirical_centers, train_supervised, Architecture, Classifier, OptimizerConfig};
use crosskd::synth::{make_pool, sample_dataset, ClassPool, TaskSpec};

pub fn pool(classes: usize, dim: usize, spread: f64, seed: u64) -> ClassPool {
    make_pool(classes, dim, spread, 1.0, seed).unwrap()
}

pub fn task(pool: &ClassPool, labels: Vec<usize>, train: usize, test: usize, seed: u64) -> (LabeledDataset, LabeledDataset) {
    let spec = TaskSpec {
        label_set: labels,
        instances_per_class_train: train,
        instances_per_class_test: test,
        seed,
    };
    sample_dataset(pool, &spec).unwrap()
}

pub fn quick_optimizer(epochs: usize, seed: u64) -> OptimizerConfig {
    OptimizerConfig {
        epochs,
        lr_milestones: vec![],
        seed,
        ..Default::default()
    }
}

/// Trains a teacher and stores its empirical centers.
pub fn teacher(arch: &str, data: &LabeledDataset, epochs: usize, seed: u64) -> Classifier {
    let arch: Architecture = arch.parse().unwrap();
    let init = Classifier::init(&arch, data.dim(), data.label_set().to_vec(), &mut crosskd::seed::rng(seed)).unwrap();
    let (mut model, _) = train_supervised(&init, data, &quick_optimizer(epochs, seed)).unwrap();
    model.class_centers = Some(empirical_centers(model.embedding(), data).unwrap());
    model
}

pub fn student(data: &LabeledDataset, seed: u64) -> Classifier {
    Classifier::init(&Architecture::linear(), data.dim(), data.label_set().to_vec(), &mut crosskd::seed::rng(seed)).unwrap()
}
