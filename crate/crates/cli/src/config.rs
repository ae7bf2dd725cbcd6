//! Experiment configuration. Values come from built-in defaults, then the
//! optional `--config` JSON file, then explicit command-line flags.

use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use crosskd::assess::{AssessmentConfig, FictitiousConfig, Regime};
use crosskd::distill::{DistillConfig, UnconvergedPolicy};
use crosskd::models::{Architecture, CenterProvenance, OptimizerConfig};
use crosskd::ot::SinkhornConfig;
use crosskd::seed;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PoolParams {
    pub classes: usize,
    pub dim: usize,
    pub spread: f64,
    pub covariance: f64,
}

impl Default for PoolParams {
    fn default() -> Self {
        Self {
            classes: 40,
            dim: 16,
            spread: 1.0,
            covariance: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WindowParams {
    pub size: usize,
    pub step: usize,
}

impl Default for WindowParams {
    fn default() -> Self {
        Self { size: 20, step: 5 }
    }
}

/// Instances per class in each split.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitSizes {
    pub train: usize,
    pub test: usize,
}

/// Assessment settings; the Sinkhorn settings and center provenance default
/// to those of the distillation config.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AssessmentParams {
    pub regime: Regime,
    /// `None` couples the metric temperature to the distillation temperature.
    pub tau: Option<f64>,
    pub epsilon: Option<f64>,
    pub sinkhorn: Option<SinkhornConfig>,
    pub teacher_center_provenance: Option<CenterProvenance>,
    pub unconverged_policy: UnconvergedPolicy,
    pub fictitious: FictitiousConfig,
}

impl Default for AssessmentParams {
    fn default() -> Self {
        Self {
            regime: Regime::ApproxII,
            tau: None,
            epsilon: None,
            sinkhorn: None,
            teacher_center_provenance: None,
            unconverged_policy: UnconvergedPolicy::Error,
            fictitious: FictitiousConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Master seed; every sub-task derives its own seed from it.
    pub seed: u64,
    pub out_dir: Option<PathBuf>,
    pub pool: PoolParams,
    pub windows: WindowParams,
    pub teacher_task: SplitSizes,
    pub target_task: SplitSizes,
    pub teacher_architectures: Vec<String>,
    pub teacher_optimizer: OptimizerConfig,
    pub student_architecture: String,
    pub distill: DistillConfig,
    pub assessment: AssessmentParams,
}

/// The student schedule of the desk-scale benchmark.
pub fn benchmark_student_optimizer() -> OptimizerConfig {
    OptimizerConfig {
        epochs: 30,
        lr_milestones: vec![18, 24],
        ..OptimizerConfig::default()
    }
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            out_dir: None,
            pool: PoolParams::default(),
            windows: WindowParams::default(),
            teacher_task: SplitSizes { train: 200, test: 50 },
            target_task: SplitSizes { train: 50, test: 200 },
            teacher_architectures: vec!["linear+norm".into(), "mlp32+norm".into()],
            teacher_optimizer: OptimizerConfig::default(),
            student_architecture: "linear".into(),
            distill: DistillConfig {
                optimizer: benchmark_student_optimizer(),
                ..DistillConfig::default()
            },
            assessment: AssessmentParams::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        match path {
            None => Ok(Self::default()),
            Some(p) => {
                let text = std::fs::read_to_string(p).with_context(|| format!("reading config {}", p.display()))?;
                serde_json::from_str(&text).with_context(|| format!("parsing config {}", p.display()))
            }
        }
    }

    pub fn teacher_architectures(&self) -> Result<Vec<Architecture>> {
        self.teacher_architectures
            .iter()
            .map(|a| a.parse::<Architecture>().map_err(anyhow::Error::from))
            .collect()
    }

    /// Seed of everything student-side for one target task.
    pub fn student_seed(&self, target_window: usize) -> u64 {
        seed::derive(self.seed, &[&"student", &target_window])
    }

    pub fn assessment_config(&self, target_window: usize) -> Result<AssessmentConfig> {
        let a = &self.assessment;
        Ok(AssessmentConfig {
            regime: a.regime,
            tau: a.tau,
            epsilon: a.epsilon.unwrap_or(self.distill.epsilon),
            sinkhorn: a.sinkhorn.unwrap_or(self.distill.sinkhorn),
            unconverged_policy: a.unconverged_policy,
            fictitious: a.fictitious.clone(),
            teacher_center_provenance: a.teacher_center_provenance.unwrap_or(self.distill.teacher_center_provenance),
            distill: self.distill.clone(),
            student_architecture: self.student_architecture.parse()?,
            seed: self.student_seed(target_window),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_file_round_trip_and_partial_files() {
        let config = ExperimentConfig::default();
        let text = serde_json::to_string(&config).unwrap();
        let back: ExperimentConfig = serde_json::from_str(&text).unwrap();
        assert_eq!(back, config);
        let partial: ExperimentConfig = serde_json::from_str(r#"{"seed": 4, "pool": {"classes": 30}}"#).unwrap();
        assert_eq!(partial.seed, 4);
        assert_eq!(partial.pool.classes, 30);
        assert_eq!(partial.pool.dim, 16);
        assert!(serde_json::from_str::<ExperimentConfig>(r#"{"sede": 4}"#).is_err());
    }

    #[test]
    fn tau_coupling_defaults_on() {
        let config = ExperimentConfig::default();
        let a = config.assessment_config(0).unwrap();
        assert!(a.tau_coupled());
        assert_eq!(a.metric_tau(), config.distill.tau);
        assert_ne!(config.student_seed(0), config.student_seed(1));
    }
}
