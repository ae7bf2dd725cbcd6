//! Teacher assessment: score each teacher by the mean Sinkhorn distance
//! between its tempered predictions and those of a surrogate student.

use std::collections::BTreeMap;
use std::time::Instant;

use ndarray::{Array1, Array2, ArrayView2};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::LabeledDataset;
use crate::distill::{build_cost_matrix_for_pair, run_baseline, run_distillation, DistillConfig, DistillMode, UnconvergedPolicy};
use crate::error::{Error, Result};
use crate::models::{cross_entropy, softmax_rows, Architecture, CenterProvenance, Classifier, Head};
use crate::ot::{ProbabilityVector, SinkhornConfig, SinkhornSolver};
use crate::seed;
use crate::stats::{pearson, spearman};

/// Which surrogate stands in for the distilled student.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Regime {
    /// The student actually distilled from each teacher.
    Vanilla,
    /// One student trained without any teacher, shared by all teachers.
    #[serde(rename = "approx-I")]
    ApproxI,
    /// A linear head fit on each teacher's own features.
    #[serde(rename = "approx-II")]
    ApproxII,
}

impl std::str::FromStr for Regime {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "vanilla" => Ok(Self::Vanilla),
            "approx-i" | "approx1" => Ok(Self::ApproxI),
            "approx-ii" | "approx2" => Ok(Self::ApproxII),
            other => Err(Error::InvalidConfig(format!("unknown regime {other:?}"))),
        }
    }
}

impl std::fmt::Display for Regime {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Vanilla => "vanilla",
            Self::ApproxI => "approx-I",
            Self::ApproxII => "approx-II",
        })
    }
}

/// Full-batch trainer for the fictitious student: accelerated gradient
/// descent on mean cross-entropy plus `l2 / 2 * |W|^2`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FictitiousConfig {
    /// Step size; `None` uses `1 / L` for the smoothness bound `L` of the objective.
    pub learning_rate: Option<f64>,
    pub l2: f64,
    pub max_iters: usize,
    /// Stop once the Frobenius norm of the gradient falls to this value.
    pub grad_tol: f64,
}

impl Default for FictitiousConfig {
    fn default() -> Self {
        Self {
            learning_rate: None,
            l2: 1e-3,
            max_iters: 2000,
            grad_tol: 1e-6,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AssessmentConfig {
    pub regime: Regime,
    /// Temperature of the metric; `None` uses the distillation temperature.
    pub tau: Option<f64>,
    pub epsilon: f64,
    pub sinkhorn: SinkhornConfig,
    pub unconverged_policy: UnconvergedPolicy,
    pub fictitious: FictitiousConfig,
    pub teacher_center_provenance: CenterProvenance,
    /// Student training used by the vanilla and approx-I regimes.
    pub distill: DistillConfig,
    pub student_architecture: Architecture,
    pub seed: u64,
}

impl Default for AssessmentConfig {
    fn default() -> Self {
        let distill = DistillConfig::default();
        Self {
            regime: Regime::ApproxII,
            tau: None,
            epsilon: distill.epsilon,
            sinkhorn: distill.sinkhorn,
            unconverged_policy: UnconvergedPolicy::Error,
            fictitious: FictitiousConfig::default(),
            teacher_center_provenance: distill.teacher_center_provenance,
            distill,
            student_architecture: Architecture::linear(),
            seed: 0,
        }
    }
}

impl AssessmentConfig {
    pub fn metric_tau(&self) -> f64 {
        self.tau.unwrap_or(self.distill.tau)
    }

    pub fn tau_coupled(&self) -> bool {
        self.tau.is_none() || self.tau == Some(self.distill.tau)
    }

    /// The initial student for `data`; identical for every teacher.
    pub fn init_student(&self, data: &LabeledDataset) -> Result<Classifier> {
        Classifier::init(
            &self.student_architecture,
            data.dim(),
            data.label_set().to_vec(),
            &mut seed::rng(seed::derive(self.seed, &[&"student-init"])),
        )
    }

    /// Distillation settings for students, with the shuffling seed derived from `seed`.
    pub fn student_distill_config(&self, mode: DistillMode) -> DistillConfig {
        let mut config = self.distill.clone();
        config.mode = mode;
        config.optimizer.seed = seed::derive(self.seed, &[&"student-train"]);
        config
    }
}

/// Linear classifier on top of a frozen teacher embedding.
#[derive(Debug, Clone)]
pub struct FictitiousStudent {
    pub model: Classifier,
    pub converged: bool,
    pub iterations: usize,
    pub grad_norm: f64,
    pub train_accuracy: f64,
}

/// Fits a multinomial-logistic head on the teacher's features of
/// `student_data`, starting from zero weights.
pub fn fit_fictitious_student(
    teacher: &Classifier,
    student_data: &LabeledDataset,
    config: &FictitiousConfig,
) -> Result<FictitiousStudent> {
    if student_data.is_empty() {
        return Err(Error::EmptyInput("student data is empty".into()));
    }
    if student_data.dim() != teacher.input_dim() {
        return Err(Error::InvalidInput("student data dimension does not match the teacher".into()));
    }
    if !(config.l2 >= 0.0) || config.max_iters == 0 || !(config.grad_tol > 0.0) {
        return Err(Error::InvalidConfig("fictitious trainer needs l2 >= 0, max_iters > 0, grad_tol > 0".into()));
    }
    let features = teacher.embedding().embed(student_data.instances().view());
    let (w, converged, iterations, grad_norm) = fit_logistic_head(features.view(), student_data.labels(), student_data.num_classes(), config)?;
    let model = teacher.with_head(Head { weight: w, bias: None }, student_data.label_set().to_vec())?;
    let train_accuracy = model.accuracy(student_data);
    Ok(FictitiousStudent {
        model,
        converged,
        iterations,
        grad_norm,
        train_accuracy,
    })
}

fn logistic_objective(features: ArrayView2<f64>, labels: &[usize], w: &Array2<f64>, l2: f64) -> (f64, Array2<f64>) {
    let n = features.nrows() as f64;
    let logits = features.dot(w);
    let (ce, dlogits) = cross_entropy(logits.view(), labels);
    let grad = features.t().dot(&dlogits) / n + w * l2;
    let value = ce / n + 0.5 * l2 * w.iter().map(|v| v * v).sum::<f64>();
    (value, grad)
}

/// Accelerated gradient descent with function-value restarts.
fn fit_logistic_head(
    features: ArrayView2<f64>,
    labels: &[usize],
    classes: usize,
    config: &FictitiousConfig,
) -> Result<(Array2<f64>, bool, usize, f64)> {
    let d = features.ncols();
    let n = features.nrows() as f64;
    let step = match config.learning_rate {
        Some(lr) if lr > 0.0 => lr,
        Some(_) => return Err(Error::InvalidConfig("learning rate must be positive".into())),
        None => {
            // The softmax cross-entropy Hessian is bounded by 1/2 * X^T X / n.
            let gram = features.t().dot(&features) / n;
            1.0 / (0.5 * largest_eigenvalue(&gram) + config.l2)
        }
    };
    let mut w = Array2::<f64>::zeros((d, classes));
    let mut y = w.clone();
    let mut t = 1.0f64;
    let (mut value, mut grad) = logistic_objective(features, labels, &w, config.l2);
    let mut grad_norm = frobenius(&grad);
    let mut iterations = 0;
    while grad_norm > config.grad_tol && iterations < config.max_iters {
        iterations += 1;
        let (_, grad_y) = logistic_objective(features, labels, &y, config.l2);
        let next = &y - &(grad_y * step);
        let (next_value, next_grad) = logistic_objective(features, labels, &next, config.l2);
        if !next_value.is_finite() {
            return Err(Error::TrainingDiverged { epoch: iterations });
        }
        if next_value > value {
            // Momentum overshot: restart from the current iterate.
            t = 1.0;
            y = w.clone();
            continue;
        }
        let t_next = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
        y = &next + &((&next - &w) * ((t - 1.0) / t_next));
        t = t_next;
        w = next;
        value = next_value;
        grad = next_grad;
        grad_norm = frobenius(&grad);
    }
    Ok((w, grad_norm <= config.grad_tol, iterations, grad_norm))
}

fn frobenius(a: &Array2<f64>) -> f64 {
    a.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// Largest eigenvalue of a symmetric positive semidefinite matrix by power
/// iteration from a deterministic start.
fn largest_eigenvalue(a: &Array2<f64>) -> f64 {
    let dim = a.nrows();
    let mut v = Array1::from_shape_fn(dim, |i| 1.0 + i as f64 / dim as f64);
    let mut lambda = 0.0;
    for _ in 0..200 {
        let next = a.dot(&v);
        let norm = next.dot(&next).sqrt();
        if norm == 0.0 {
            return 0.0;
        }
        let estimate = v.dot(&next) / v.dot(&v);
        v = next / norm;
        if (estimate - lambda).abs() <= 1e-9 * estimate.abs() {
            lambda = estimate;
            break;
        }
        lambda = estimate;
    }
    // Power iteration approaches from below; the margin keeps the step safe.
    lambda * 1.01
}

/// Mean Sinkhorn distance between the teacher's and the surrogate's tempered
/// predictions on `student_data`. Lower means a more relevant teacher.
pub fn assess_teacher(
    teacher: &Classifier,
    surrogate: &Classifier,
    student_data: &LabeledDataset,
    config: &AssessmentConfig,
) -> Result<TeacherScore> {
    if surrogate.label_set() != student_data.label_set() {
        return Err(Error::InvalidInput("surrogate label set differs from the student task".into()));
    }
    if student_data.is_empty() {
        return Err(Error::EmptyInput("student data is empty".into()));
    }
    let cost = build_cost_matrix_for_pair(teacher, student_data, config.teacher_center_provenance)?;
    let solver = SinkhornSolver::new(&cost, config.epsilon, config.sinkhorn)?;
    let tau = config.metric_tau();
    let x = student_data.instances().view();
    let p_t = softmax_rows(teacher.logits(x).view(), tau);
    let p_s = softmax_rows(surrogate.logits(x).view(), tau);
    let policy = config.unconverged_policy;
    let per_instance: Vec<(f64, bool)> = (0..student_data.len())
        .into_par_iter()
        .map(|i| {
            let mu = ProbabilityVector::new(p_t.row(i).to_owned())?;
            let nu = ProbabilityVector::new(p_s.row(i).to_owned())?;
            let solution = solver.solve(&mu, &nu)?;
            if !solution.converged && policy == UnconvergedPolicy::Error {
                return Err(Error::NotConverged {
                    iterations: solution.iterations_used,
                    violation: solution.marginal_violation,
                });
            }
            Ok((solution.primal_value, solution.converged))
        })
        .collect::<Result<_>>()?;
    let total: f64 = per_instance.iter().map(|(v, _)| v).sum();
    Ok(TeacherScore {
        metric: total / student_data.len() as f64,
        unconverged_solves: per_instance.iter().filter(|(_, c)| !c).count(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TeacherScore {
    pub metric: f64,
    pub unconverged_solves: usize,
}

/// One row of an assessment report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssessmentRow {
    pub teacher_id: usize,
    /// Absent when assessing this teacher failed.
    pub metric: Option<f64>,
    pub rank: Option<usize>,
    /// Whether the surrogate's trainer converged (always true outside approx-II).
    pub converged: bool,
    pub seconds: f64,
    pub ground_truth_acc: Option<f64>,
    pub external: BTreeMap<String, f64>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssessmentReport {
    pub regime: Regime,
    pub rows: Vec<AssessmentRow>,
    pub tau: f64,
    pub tau_coupled: bool,
    /// Time spent on the shared approx-I surrogate.
    pub surrogate_seconds: f64,
    /// Correlations of `-metric` with ground truth, once it is attached.
    pub pearson: Option<f64>,
    pub spearman: Option<f64>,
    pub config: AssessmentConfig,
}

impl AssessmentReport {
    /// Teacher id ranked first.
    pub fn selected(&self) -> Option<usize> {
        self.rows.iter().find(|r| r.rank == Some(1)).map(|r| r.teacher_id)
    }

    pub fn row(&self, teacher_id: usize) -> Option<&AssessmentRow> {
        self.rows.iter().find(|r| r.teacher_id == teacher_id)
    }

    /// Attaches realized student accuracies keyed by teacher id.
    pub fn set_ground_truth(&mut self, truth: &BTreeMap<usize, f64>) {
        for row in &mut self.rows {
            row.ground_truth_acc = truth.get(&row.teacher_id).copied();
        }
        let stats = correlation_stats(self).ok();
        self.pearson = stats.map(|s| s.0);
        self.spearman = stats.map(|s| s.1);
    }
}

/// Ranks rows by metric (ascending), ties by teacher id; failed rows get no rank.
pub fn assign_ranks(rows: &mut [AssessmentRow]) {
    let mut order: Vec<usize> = (0..rows.len()).filter(|&i| rows[i].metric.is_some()).collect();
    order.sort_by(|&a, &b| {
        rows[a]
            .metric
            .unwrap()
            .total_cmp(&rows[b].metric.unwrap())
            .then(rows[a].teacher_id.cmp(&rows[b].teacher_id))
    });
    for row in rows.iter_mut() {
        row.rank = None;
    }
    for (r, &i) in order.iter().enumerate() {
        rows[i].rank = Some(r + 1);
    }
}

/// Scores every teacher against `student_data`. Teachers are independent:
/// failures are recorded in their row and rows come back in input order.
pub fn assess_repository(
    teachers: &[(usize, Classifier)],
    student_data: &LabeledDataset,
    config: &AssessmentConfig,
) -> Result<AssessmentReport> {
    if teachers.is_empty() {
        return Err(Error::EmptyInput("repository has no teachers".into()));
    }
    let mut seen = std::collections::HashSet::new();
    for (id, _) in teachers {
        if !seen.insert(*id) {
            return Err(Error::DuplicateTeacher(*id));
        }
    }
    let student_init = || config.init_student(student_data);

    let started = Instant::now();
    let shared = match config.regime {
        Regime::ApproxI => {
            let run = run_baseline(
                &student_init()?,
                student_data,
                student_data,
                &config.student_distill_config(DistillMode::None),
            )?;
            Some(run.student)
        }
        _ => None,
    };
    let surrogate_seconds = started.elapsed().as_secs_f64();

    let mut rows: Vec<AssessmentRow> = teachers
        .par_iter()
        .map(|(id, teacher)| {
            let started = Instant::now();
            let outcome = (|| -> Result<(f64, bool)> {
                let (surrogate, converged) = match config.regime {
                    Regime::ApproxII => {
                        let fit = fit_fictitious_student(teacher, student_data, &config.fictitious)?;
                        (fit.model, fit.converged)
                    }
                    Regime::ApproxI => (shared.clone().expect("shared surrogate"), true),
                    Regime::Vanilla => {
                        log::info!("distilling a student from teacher {id}");
                        let run = run_distillation(
                            teacher,
                            &student_init()?,
                            student_data,
                            student_data,
                            &config.student_distill_config(DistillMode::Sinkhorn),
                        )?;
                        (run.student, true)
                    }
                };
                let score = assess_teacher(teacher, &surrogate, student_data, config)?;
                Ok((score.metric, converged))
            })();
            let seconds = started.elapsed().as_secs_f64();
            match outcome {
                Ok((metric, converged)) => AssessmentRow {
                    teacher_id: *id,
                    metric: Some(metric),
                    rank: None,
                    converged,
                    seconds,
                    ground_truth_acc: None,
                    external: BTreeMap::new(),
                    error: None,
                },
                Err(e) => AssessmentRow {
                    teacher_id: *id,
                    metric: None,
                    rank: None,
                    converged: false,
                    seconds,
                    ground_truth_acc: None,
                    external: BTreeMap::new(),
                    error: Some(e.to_string()),
                },
            }
        })
        .collect();
    assign_ranks(&mut rows);
    Ok(AssessmentReport {
        regime: config.regime,
        rows,
        tau: config.metric_tau(),
        tau_coupled: config.tau_coupled(),
        surrogate_seconds,
        pearson: None,
        spearman: None,
        config: config.clone(),
    })
}

/// Pearson and Spearman correlation between `-metric` and ground-truth
/// accuracy over the rows that have both.
pub fn correlation_stats(report: &AssessmentReport) -> Result<(f64, f64)> {
    let (q, g): (Vec<f64>, Vec<f64>) = report
        .rows
        .iter()
        .filter_map(|r| Some((-r.metric?, r.ground_truth_acc?)))
        .unzip();
    if q.len() < 3 {
        return Err(Error::UndefinedCorrelation(format!(
            "need at least 3 teachers with metric and ground truth, have {}",
            q.len()
        )));
    }
    Ok((pearson(&q, &g)?, spearman(&q, &g)?))
}

/// Mean over `data` of `KL(rho_tau(a(x)) || rho_tau(b(x)))`.
pub fn kl_between_students(a: &Classifier, b: &Classifier, data: &LabeledDataset, tau: f64) -> Result<f64> {
    if a.label_set() != b.label_set() {
        return Err(Error::InvalidInput("students have different label sets".into()));
    }
    if data.is_empty() {
        return Err(Error::EmptyInput("no instances to compare on".into()));
    }
    if !(tau > 0.0) {
        return Err(Error::InvalidConfig("tau must be positive".into()));
    }
    let x = data.instances().view();
    let p = softmax_rows(a.logits(x).view(), tau);
    let q = softmax_rows(b.logits(x).view(), tau);
    let mut total = 0.0;
    for (pr, qr) in p.outer_iter().zip(q.outer_iter()) {
        for (&pi, &qi) in pr.iter().zip(qr) {
            if pi > 0.0 {
                total += pi * (pi / qi).ln();
            }
        }
    }
    Ok(total / data.len() as f64)
}
