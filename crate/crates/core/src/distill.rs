//! Cross-task distillation: cross-entropy plus a per-instance Sinkhorn
//! distance between the teacher's and the student's tempered predictions.

use std::sync::atomic::{AtomicUsize, Ordering};

use log::warn;
use ndarray::{Array1, Array2, ArrayView1, ArrayView2};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::LabeledDataset;
use crate::error::{Error, Result};
use crate::models::{
    cost_matrix, cross_entropy, empirical_centers, head_weight_centers, softmax_row, softmax_rows, train_with_objective,
    BatchObjective, CenterProvenance, Classifier, EpochStats, OptimizerConfig,
};
use crate::ot::{logit_gradient_from_potential, CostMatrix, ProbabilityVector, SinkhornConfig, SinkhornSolver};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DistillMode {
    Sinkhorn,
    KlBaseline,
    None,
}

impl std::str::FromStr for DistillMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sinkhorn" => Ok(Self::Sinkhorn),
            "kl-baseline" => Ok(Self::KlBaseline),
            "none" => Ok(Self::None),
            other => Err(Error::InvalidConfig(format!("unknown distillation mode {other:?}"))),
        }
    }
}

impl std::fmt::Display for DistillMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Sinkhorn => "sinkhorn",
            Self::KlBaseline => "kl-baseline",
            Self::None => "none",
        })
    }
}

/// What to do when a per-instance Sinkhorn solve hits its iteration cap.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum UnconvergedPolicy {
    Error,
    /// Use the last iterate's potentials and count the occurrence.
    UseLastIterate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DistillConfig {
    pub mode: DistillMode,
    pub lambda: f64,
    pub tau: f64,
    pub epsilon: f64,
    pub sinkhorn: SinkhornConfig,
    pub optimizer: OptimizerConfig,
    pub teacher_center_provenance: CenterProvenance,
    /// Multiply the Sinkhorn logit gradient by `1 / tau`, the exact
    /// derivative through the tempered softmax.
    pub temperature_chain_rule: bool,
    pub unconverged_policy: UnconvergedPolicy,
}

impl Default for DistillConfig {
    fn default() -> Self {
        Self {
            mode: DistillMode::Sinkhorn,
            lambda: 10.0,
            tau: 3.0,
            epsilon: 0.1,
            sinkhorn: SinkhornConfig {
                max_iters: 100_000,
                ..SinkhornConfig::default()
            },
            optimizer: OptimizerConfig::default(),
            teacher_center_provenance: CenterProvenance::NormalizedHeadWeights,
            temperature_chain_rule: true,
            unconverged_policy: UnconvergedPolicy::Error,
        }
    }
}

impl DistillConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0) || !self.lambda.is_finite() {
            return Err(Error::InvalidConfig("lambda must be nonnegative".into()));
        }
        if !(self.tau > 0.0) || !self.tau.is_finite() {
            return Err(Error::InvalidConfig("tau must be positive".into()));
        }
        if !(self.epsilon > 0.0) || !self.epsilon.is_finite() {
            return Err(Error::InvalidConfig("epsilon must be positive".into()));
        }
        if !(self.sinkhorn.tol > 0.0) || self.sinkhorn.max_iters == 0 {
            return Err(Error::InvalidConfig("Sinkhorn tolerance and iteration cap must be positive".into()));
        }
        self.optimizer.validate()
    }

    fn logit_scale(&self) -> f64 {
        if self.temperature_chain_rule {
            1.0 / self.tau
        } else {
            1.0
        }
    }
}

/// Cost matrix between the teacher's classes (rows) and the classes of
/// `student_data` (columns), both centered in the teacher's embedding space.
///
/// Empirical-mean provenance needs class centers stored with the teacher.
pub fn build_cost_matrix_for_pair(
    teacher: &Classifier,
    student_data: &LabeledDataset,
    provenance: CenterProvenance,
) -> Result<CostMatrix> {
    let teacher_centers = match provenance {
        CenterProvenance::NormalizedHeadWeights => head_weight_centers(teacher)?,
        CenterProvenance::EmpiricalMean => match &teacher.class_centers {
            Some(c) if c.provenance == CenterProvenance::EmpiricalMean => c.clone(),
            _ => {
                return Err(Error::InvalidConfig(
                    "empirical-mean provenance needs class centers stored with the teacher".into(),
                ))
            }
        },
    };
    let student_centers = empirical_centers(teacher.embedding(), student_data)?;
    cost_matrix(&teacher_centers, &student_centers)
}

/// Batch loss and its gradient with respect to the student logits.
#[derive(Debug, Clone)]
pub struct DistillLoss {
    /// Mean of cross-entropy plus weighted distillation term.
    pub loss: f64,
    pub ce: f64,
    /// Mean unweighted distillation term.
    pub distill: f64,
    pub dlogits: Array2<f64>,
    pub unconverged: usize,
}

/// Per-instance Sinkhorn terms against a fixed cost matrix.
pub struct SinkhornTerm {
    solver: SinkhornSolver,
    tau: f64,
    logit_scale: f64,
    policy: UnconvergedPolicy,
    unconverged: AtomicUsize,
    solves: AtomicUsize,
    iterations: AtomicUsize,
}

impl SinkhornTerm {
    pub fn new(cost: &CostMatrix, config: &DistillConfig) -> Result<Self> {
        Ok(Self {
            solver: SinkhornSolver::new(cost, config.epsilon, config.sinkhorn)?,
            tau: config.tau,
            logit_scale: config.logit_scale(),
            policy: config.unconverged_policy,
            unconverged: AtomicUsize::new(0),
            solves: AtomicUsize::new(0),
            iterations: AtomicUsize::new(0),
        })
    }

    pub fn unconverged(&self) -> usize {
        self.unconverged.load(Ordering::Relaxed)
    }

    /// Number of solves so far and the iterations they used in total.
    pub fn work(&self) -> (usize, usize) {
        (self.solves.load(Ordering::Relaxed), self.iterations.load(Ordering::Relaxed))
    }

    /// `S(p_T, rho_tau(z))`, its gradient in `z`, and the target potential.
    pub fn value_and_gradient(
        &self,
        p_t: &ProbabilityVector,
        student_logits: ArrayView1<f64>,
        warm_start: Option<ArrayView1<f64>>,
    ) -> Result<(f64, Array1<f64>, Array1<f64>)> {
        let p_s = ProbabilityVector::new(softmax_row(student_logits, self.tau))?;
        let solution = self.solver.solve_from(p_t, &p_s, warm_start)?;
        self.solves.fetch_add(1, Ordering::Relaxed);
        self.iterations.fetch_add(solution.iterations_used, Ordering::Relaxed);
        if !solution.converged {
            match self.policy {
                UnconvergedPolicy::Error => {
                    return Err(Error::NotConverged {
                        iterations: solution.iterations_used,
                        violation: solution.marginal_violation,
                    })
                }
                UnconvergedPolicy::UseLastIterate => {
                    self.unconverged.fetch_add(1, Ordering::Relaxed);
                }
            }
        }
        let grad = logit_gradient_from_potential(&solution.beta, &solution, &p_s)? * self.logit_scale;
        Ok((solution.primal_value, grad, solution.beta))
    }

    /// Values and gradients for a batch; rows are solved in parallel and
    /// returned in input order. `warm` holds one optional starting potential
    /// per row and receives the new potentials.
    pub fn batch(
        &self,
        p_t: &[&ProbabilityVector],
        student_logits: ArrayView2<f64>,
        warm: &mut [Option<Array1<f64>>],
    ) -> Result<(Vec<f64>, Array2<f64>)> {
        if warm.len() != p_t.len() || student_logits.nrows() != p_t.len() {
            return Err(Error::InvalidInput("batch rows do not line up".into()));
        }
        let rows: Vec<_> = (0..p_t.len())
            .into_par_iter()
            .map(|i| self.value_and_gradient(p_t[i], student_logits.row(i), warm[i].as_ref().map(|b| b.view())))
            .collect::<Result<_>>()?;
        let mut grad = Array2::zeros(student_logits.raw_dim());
        let mut values = Vec::with_capacity(rows.len());
        for (i, (v, g, beta)) in rows.into_iter().enumerate() {
            values.push(v);
            grad.row_mut(i).assign(&g);
            warm[i] = Some(beta);
        }
        Ok((values, grad))
    }
}

fn teacher_distributions(teacher_logits: ArrayView2<f64>, tau: f64) -> Result<Vec<ProbabilityVector>> {
    softmax_rows(teacher_logits, tau)
        .outer_iter()
        .map(|row| ProbabilityVector::new(row.to_owned()))
        .collect()
}

/// Mean over the batch of `CE(y, z_S) + lambda * S(rho_tau(z_T), rho_tau(z_S))`.
pub fn distill_loss(
    student_logits: ArrayView2<f64>,
    teacher_logits: ArrayView2<f64>,
    labels: &[usize],
    cost: &CostMatrix,
    config: &DistillConfig,
) -> Result<DistillLoss> {
    config.validate()?;
    check_batch(student_logits, teacher_logits, labels)?;
    if cost.dim() != (teacher_logits.ncols(), student_logits.ncols()) {
        return Err(Error::InvalidInput("cost matrix does not match the label sets".into()));
    }
    let term = SinkhornTerm::new(cost, config)?;
    let p_t = teacher_distributions(teacher_logits, config.tau)?;
    let (ce_sum, mut dlogits) = cross_entropy(student_logits, labels);
    let mut distill_sum = 0.0;
    if config.lambda != 0.0 {
        let targets: Vec<&ProbabilityVector> = p_t.iter().collect();
        let mut warm = vec![None; targets.len()];
        let (values, grad) = term.batch(&targets, student_logits, &mut warm)?;
        distill_sum = values.iter().sum();
        dlogits.scaled_add(config.lambda, &grad);
    }
    Ok(finish(ce_sum, distill_sum, dlogits, config.lambda, term.unconverged()))
}

/// Mean over the batch of `CE(y, z_S) + lambda * KL(rho_tau(z_T) || rho_tau(z_S))`.
/// Both logit batches must be over the same classes in the same order.
pub fn kl_baseline_loss(
    student_logits: ArrayView2<f64>,
    teacher_logits: ArrayView2<f64>,
    labels: &[usize],
    config: &DistillConfig,
) -> Result<DistillLoss> {
    config.validate()?;
    check_batch(student_logits, teacher_logits, labels)?;
    if student_logits.ncols() != teacher_logits.ncols() {
        return Err(Error::InvalidConfig(
            "the KL baseline needs identical teacher and student label sets".into(),
        ));
    }
    let p_t = softmax_rows(teacher_logits, config.tau);
    let (ce_sum, dlogits) = cross_entropy(student_logits, labels);
    let (kl_sum, grad) = kl_rows(&p_t, student_logits, config.tau);
    let mut dlogits = dlogits;
    dlogits.scaled_add(config.lambda, &grad);
    Ok(finish(ce_sum, kl_sum, dlogits, config.lambda, 0))
}

/// Summed `KL(p_t || rho_tau(z))` over rows and its gradient in `z`.
fn kl_rows(p_t: &Array2<f64>, student_logits: ArrayView2<f64>, tau: f64) -> (f64, Array2<f64>) {
    let mut grad = Array2::zeros(student_logits.raw_dim());
    let mut total = 0.0;
    for (i, z) in student_logits.outer_iter().enumerate() {
        let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = (z.iter().map(|v| ((v - max) / tau).exp()).sum::<f64>()).ln();
        for (c, &zc) in z.iter().enumerate() {
            let p = p_t[[i, c]];
            let log_q = (zc - max) / tau - lse;
            if p > 0.0 {
                total += p * (p.ln() - log_q);
            }
            grad[[i, c]] = (log_q.exp() - p) / tau;
        }
    }
    (total, grad)
}

fn check_batch(student_logits: ArrayView2<f64>, teacher_logits: ArrayView2<f64>, labels: &[usize]) -> Result<()> {
    if student_logits.nrows() != teacher_logits.nrows() || student_logits.nrows() != labels.len() {
        return Err(Error::InvalidInput("teacher logits, student logits and labels differ in length".into()));
    }
    if labels.is_empty() {
        return Err(Error::EmptyInput("empty batch".into()));
    }
    if labels.iter().any(|&y| y >= student_logits.ncols()) {
        return Err(Error::InvalidInput("label index outside the student's classes".into()));
    }
    Ok(())
}

fn finish(ce_sum: f64, distill_sum: f64, dlogits: Array2<f64>, lambda: f64, unconverged: usize) -> DistillLoss {
    let n = dlogits.nrows() as f64;
    DistillLoss {
        loss: (ce_sum + lambda * distill_sum) / n,
        ce: ce_sum / n,
        distill: distill_sum / n,
        dlogits: dlogits / n,
        unconverged,
    }
}

/// Result of one distillation run.
#[derive(Debug, Clone)]
pub struct DistillRun {
    pub student: Classifier,
    pub trace: Vec<EpochStats>,
    pub train_accuracy: f64,
    pub test_accuracy: f64,
    /// Cost matrix held fixed during training; absent unless mode is sinkhorn.
    pub cost_matrix: Option<CostMatrix>,
    pub config: DistillConfig,
    pub seed: u64,
    /// Sinkhorn solves that stopped at the iteration cap.
    pub unconverged_solves: usize,
    pub sinkhorn_solves: usize,
    pub sinkhorn_iterations: usize,
}

impl DistillRun {
    /// Trace rows `epoch, ce_loss, distill_loss, train_acc`, where
    /// `distill_loss` is the lambda-weighted term.
    pub fn trace_csv(&self) -> String {
        let mut out = String::from("epoch,ce_loss,distill_loss,train_acc\n");
        for e in &self.trace {
            out.push_str(&format!(
                "{},{:.16e},{:.16e},{:.16e}\n",
                e.epoch, e.ce_loss, e.weighted_distill_loss, e.train_accuracy
            ));
        }
        out
    }
}

/// Trains a copy of `student` on `train` with the teacher held fixed.
pub fn run_distillation(
    teacher: &Classifier,
    student: &Classifier,
    train: &LabeledDataset,
    test: &LabeledDataset,
    config: &DistillConfig,
) -> Result<DistillRun> {
    config.validate()?;
    if student.label_set() != train.label_set() {
        return Err(Error::InvalidInput("student label set does not match the training data".into()));
    }
    if teacher.input_dim() != train.dim() {
        return Err(Error::InvalidInput("teacher input dimension does not match the data".into()));
    }
    let labels = train.labels();
    let active = config.lambda != 0.0;
    let (cost, trained, report, unconverged, (solves, iterations)) = match config.mode {
        DistillMode::None => return run_baseline(student, train, test, config),
        DistillMode::Sinkhorn => {
            let cost = build_cost_matrix_for_pair(teacher, train, config.teacher_center_provenance)?;
            let term = SinkhornTerm::new(&cost, config)?;
            let p_t = teacher_distributions(teacher.logits(train.instances().view()).view(), config.tau)?;
            // Each instance's solve starts from its potential of the previous epoch.
            let mut potentials: Vec<Option<Array1<f64>>> = vec![None; train.len()];
            let (m, r) = train_with_objective(student, train, &config.optimizer, |batch, logits| {
                let batch_labels: Vec<usize> = batch.iter().map(|&i| labels[i]).collect();
                let (ce_sum, mut dlogits) = cross_entropy(logits.view(), &batch_labels);
                let mut distill_sum = 0.0;
                if active {
                    let targets: Vec<&ProbabilityVector> = batch.iter().map(|&i| &p_t[i]).collect();
                    let mut warm: Vec<_> = batch.iter().map(|&i| potentials[i].take()).collect();
                    let (values, grad) = term.batch(&targets, logits.view(), &mut warm)?;
                    for (&i, beta) in batch.iter().zip(warm) {
                        potentials[i] = beta;
                    }
                    distill_sum = values.iter().sum();
                    dlogits.scaled_add(config.lambda, &grad);
                }
                Ok(BatchObjective {
                    ce_sum,
                    distill_sum,
                    weighted_distill_sum: config.lambda * distill_sum,
                    dlogits,
                })
            })?;
            let unconverged = term.unconverged();
            if unconverged > 0 {
                warn!("{unconverged} Sinkhorn solves stopped at the iteration cap");
            }
            (Some(cost), m, r, unconverged, term.work())
        }
        DistillMode::KlBaseline => {
            let order = align_labels(teacher.label_set(), train.label_set())?;
            let t_logits = teacher.logits(train.instances().view());
            let p_t = softmax_rows(t_logits.view(), config.tau).select(ndarray::Axis(1), &order);
            let (m, r) = train_with_objective(student, train, &config.optimizer, |batch, logits| {
                let batch_labels: Vec<usize> = batch.iter().map(|&i| labels[i]).collect();
                let (ce_sum, mut dlogits) = cross_entropy(logits.view(), &batch_labels);
                let targets = p_t.select(ndarray::Axis(0), batch);
                let (kl_sum, grad) = kl_rows(&targets, logits.view(), config.tau);
                if active {
                    dlogits.scaled_add(config.lambda, &grad);
                }
                Ok(BatchObjective {
                    ce_sum,
                    distill_sum: if active { kl_sum } else { 0.0 },
                    weighted_distill_sum: config.lambda * kl_sum,
                    dlogits,
                })
            })?;
            (None, m, r, 0, (0, 0))
        }
    };
    Ok(DistillRun {
        train_accuracy: report.final_train_accuracy().unwrap_or_else(|| trained.accuracy(train)),
        test_accuracy: trained.accuracy(test),
        student: trained,
        trace: report.epochs,
        cost_matrix: cost,
        config: config.clone(),
        seed: config.optimizer.seed,
        unconverged_solves: unconverged,
        sinkhorn_solves: solves,
        sinkhorn_iterations: iterations,
    })
}

/// Trains a copy of `student` with cross-entropy only; no teacher involved.
pub fn run_baseline(
    student: &Classifier,
    train: &LabeledDataset,
    test: &LabeledDataset,
    config: &DistillConfig,
) -> Result<DistillRun> {
    config.validate()?;
    if student.label_set() != train.label_set() {
        return Err(Error::InvalidInput("student label set does not match the training data".into()));
    }
    let (trained, report) = train_with_objective(student, train, &config.optimizer, ce_objective(train.labels()))?;
    let mut config = config.clone();
    config.mode = DistillMode::None;
    Ok(DistillRun {
        train_accuracy: report.final_train_accuracy().unwrap_or_else(|| trained.accuracy(train)),
        test_accuracy: trained.accuracy(test),
        student: trained,
        trace: report.epochs,
        cost_matrix: None,
        seed: config.optimizer.seed,
        config,
        unconverged_solves: 0,
        sinkhorn_solves: 0,
        sinkhorn_iterations: 0,
    })
}

fn ce_objective(labels: &[usize]) -> impl FnMut(&[usize], &Array2<f64>) -> Result<BatchObjective> + '_ {
    move |batch, logits| {
        let batch_labels: Vec<usize> = batch.iter().map(|&i| labels[i]).collect();
        let (ce_sum, dlogits) = cross_entropy(logits.view(), &batch_labels);
        Ok(BatchObjective {
            ce_sum,
            distill_sum: 0.0,
            weighted_distill_sum: 0.0,
            dlogits,
        })
    }
}

/// For each student label, the teacher column holding the same class.
fn align_labels(teacher: &[usize], student: &[usize]) -> Result<Vec<usize>> {
    let mismatch = || Error::InvalidConfig("the KL baseline needs identical teacher and student label sets".into());
    if teacher.len() != student.len() {
        return Err(mismatch());
    }
    student
        .iter()
        .map(|s| teacher.iter().position(|t| t == s).ok_or_else(mismatch))
        .collect()
}
