use ndarray::{Array2, Axis};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::classifier::{argmax, Classifier};
use super::softmax::cross_entropy;
use crate::data::LabeledDataset;
use crate::error::{invalid, Error, Result};
use crate::seed;

/// Mini-batch SGD with momentum and weight decay, step-decayed learning rate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OptimizerConfig {
    pub learning_rate: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub epochs: usize,
    /// Epochs after which the learning rate is multiplied by `lr_gamma`.
    pub lr_milestones: Vec<usize>,
    pub lr_gamma: f64,
    pub seed: u64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.1,
            momentum: 0.9,
            weight_decay: 5e-4,
            batch_size: 64,
            epochs: 100,
            lr_milestones: vec![60, 80],
            lr_gamma: 0.2,
            seed: 0,
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() {
            return Err(Error::InvalidConfig("learning rate must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::InvalidConfig("momentum must lie in [0, 1)".into()));
        }
        if !(self.weight_decay >= 0.0) {
            return Err(Error::InvalidConfig("weight decay must be nonnegative".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidConfig("batch size must be positive".into()));
        }
        if !(self.lr_gamma > 0.0) {
            return Err(Error::InvalidConfig("lr_gamma must be positive".into()));
        }
        Ok(())
    }

    fn learning_rate_at(&self, epoch: usize) -> f64 {
        let decays = self.lr_milestones.iter().filter(|&&m| epoch >= m).count();
        self.learning_rate * self.lr_gamma.powi(decays as i32)
    }
}

/// Loss terms of one mini-batch, summed over its instances, and the gradient
/// of `ce_sum + weighted_distill_sum` with respect to the batch logits.
#[derive(Debug, Clone)]
pub struct BatchObjective {
    pub ce_sum: f64,
    pub distill_sum: f64,
    pub weighted_distill_sum: f64,
    pub dlogits: Array2<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    /// Per-instance means over the epoch.
    pub ce_loss: f64,
    pub distill_loss: f64,
    pub weighted_distill_loss: f64,
    /// Accuracy on the full training set after the epoch.
    pub train_accuracy: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub epochs: Vec<EpochStats>,
}

impl TrainReport {
    pub fn final_train_accuracy(&self) -> Option<f64> {
        self.epochs.last().map(|e| e.train_accuracy)
    }
}

/// Minimises mean cross-entropy.
pub fn train_supervised(
    initial: &Classifier,
    data: &LabeledDataset,
    config: &OptimizerConfig,
) -> Result<(Classifier, TrainReport)> {
    let labels = data.labels();
    train_with_objective(initial, data, config, |batch, logits| {
        let batch_labels: Vec<usize> = batch.iter().map(|&i| labels[i]).collect();
        let (ce_sum, dlogits) = cross_entropy(logits.view(), &batch_labels);
        Ok(BatchObjective {
            ce_sum,
            distill_sum: 0.0,
            weighted_distill_sum: 0.0,
            dlogits,
        })
    })
}

/// Runs the SGD loop on a copy of `initial`. `objective` receives the
/// training-set indices of each batch and the model's logits for them.
pub fn train_with_objective<F>(
    initial: &Classifier,
    data: &LabeledDataset,
    config: &OptimizerConfig,
    mut objective: F,
) -> Result<(Classifier, TrainReport)>
where
    F: FnMut(&[usize], &Array2<f64>) -> Result<BatchObjective>,
{
    config.validate()?;
    if data.dim() != initial.input_dim() {
        return Err(invalid(format!(
            "data has dimension {} but the model expects {}",
            data.dim(),
            initial.input_dim()
        )));
    }
    if data.num_classes() != initial.num_classes() {
        return Err(invalid("data label set size does not match the model head"));
    }
    let mut model = initial.clone();
    let mut report = TrainReport::default();
    if data.is_empty() {
        return if config.epochs == 0 {
            Ok((model, report))
        } else {
            Err(Error::EmptyInput("training set is empty".into()))
        };
    }

    let n = data.len();
    let mut params = model.flat_params();
    let mut velocity = vec![0.0; params.len()];
    let mut order: Vec<usize> = (0..n).collect();

    for epoch in 0..config.epochs {
        let mut rng = seed::rng(seed::derive(config.seed, &[&"shuffle", &epoch]));
        order.shuffle(&mut rng);
        let lr = config.learning_rate_at(epoch);
        let (mut ce, mut dist, mut weighted) = (0.0, 0.0, 0.0);

        for batch in order.chunks(config.batch_size) {
            let x = data.instances().select(Axis(0), batch);
            let cache = model.forward(x.view());
            let obj = objective(batch, &cache.logits)?;
            if !obj.ce_sum.is_finite() || !obj.weighted_distill_sum.is_finite() {
                return Err(Error::TrainingDiverged { epoch });
            }
            ce += obj.ce_sum;
            dist += obj.distill_sum;
            weighted += obj.weighted_distill_sum;
            let scale = 1.0 / batch.len() as f64;
            let grad = model.backward(x.view(), &cache, &obj.dlogits);
            for ((p, v), g) in params.iter_mut().zip(velocity.iter_mut()).zip(&grad) {
                let g = g * scale + config.weight_decay * *p;
                *v = config.momentum * *v + g;
                *p -= lr * *v;
            }
            if params.iter().any(|p| !p.is_finite()) {
                return Err(Error::TrainingDiverged { epoch });
            }
            model.set_flat_params(&params)?;
        }

        let logits = model.logits(data.instances().view());
        let hits = logits
            .outer_iter()
            .zip(data.labels())
            .filter(|(row, &y)| argmax(row.view()) == y)
            .count();
        report.epochs.push(EpochStats {
            epoch,
            ce_loss: ce / n as f64,
            distill_loss: dist / n as f64,
            weighted_distill_loss: weighted / n as f64,
            train_accuracy: hits as f64 / n as f64,
        });
    }
    Ok((model, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::Architecture;
    use rand_distr::{Distribution, StandardNormal};

    fn blobs(seed: u64) -> LabeledDataset {
        let mut rng = crate::seed::rng(seed);
        let mut x = Array2::zeros((200, 2));
        let mut labels = Vec::new();
        for i in 0..200 {
            let y = i % 2;
            let sign = if y == 0 { -2.0 } else { 2.0 };
            for j in 0..2 {
                let z: f64 = StandardNormal.sample(&mut rng);
                x[[i, j]] = sign + z;
            }
            labels.push(y);
        }
        LabeledDataset::new(x, labels, vec![0, 1]).unwrap()
    }

    fn linear_model(seed: u64) -> Classifier {
        Classifier::init(&Architecture::linear(), 2, vec![0, 1], &mut crate::seed::rng(seed)).unwrap()
    }

    #[test]
    fn separates_gaussian_blobs() {
        let data = blobs(1);
        let (_, report) = train_supervised(&linear_model(2), &data, &OptimizerConfig::default()).unwrap();
        assert_eq!(report.epochs.len(), 100);
        assert!(report.final_train_accuracy().unwrap() >= 0.95);
    }

    #[test]
    fn zero_epochs_leave_parameters_alone() {
        let model = linear_model(3);
        let config = OptimizerConfig {
            epochs: 0,
            ..Default::default()
        };
        let (trained, report) = train_supervised(&model, &blobs(1), &config).unwrap();
        assert_eq!(trained, model);
        assert!(report.epochs.is_empty());
    }

    #[test]
    fn training_is_bitwise_reproducible() {
        let data = blobs(4);
        let model = Classifier::init(&Architecture::mlp(8), 2, vec![0, 1], &mut crate::seed::rng(5)).unwrap();
        let config = OptimizerConfig {
            epochs: 5,
            seed: 11,
            ..Default::default()
        };
        let (a, ra) = train_supervised(&model, &data, &config).unwrap();
        let (b, rb) = train_supervised(&model, &data, &config).unwrap();
        let bits = |m: &Classifier| m.flat_params().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&a), bits(&b));
        assert_eq!(ra, rb);
    }

    #[test]
    fn huge_learning_rate_diverges() {
        let config = OptimizerConfig {
            learning_rate: 1e300,
            momentum: 0.0,
            epochs: 5,
            ..Default::default()
        };
        let model = Classifier::init(&Architecture::mlp(8), 2, vec![0, 1], &mut crate::seed::rng(5)).unwrap();
        assert!(matches!(
            train_supervised(&model, &blobs(1), &config),
            Err(Error::TrainingDiverged { .. })
        ));
    }

    #[test]
    fn milestones_decay_the_rate() {
        let config = OptimizerConfig::default();
        assert_eq!(config.learning_rate_at(0), 0.1);
        assert!((config.learning_rate_at(60) - 0.02).abs() < 1e-15);
        assert!((config.learning_rate_at(99) - 0.004).abs() < 1e-15);
    }
}
