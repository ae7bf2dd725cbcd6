use ndarray::{Array1, Array2, ArrayView1, Zip};
use serde::{Deserialize, Serialize};

use super::types::{CostMatrix, GibbsKernel, ProbabilityVector};
use crate::error::{invalid, Error, Result};

/// Denominators below this are treated as underflow.
const TINY: f64 = 1e-300;

/// Largest `max(M) / epsilon` for which [`Domain::Auto`] still picks the
/// plain-domain iteration.
const AUTO_PLAIN_MAX_EXPONENT: f64 = 600.0;

/// Smallest epsilon for which [`Domain::Auto`] picks the plain-domain iteration.
const AUTO_PLAIN_MIN_EPSILON: f64 = 0.05;

/// Arithmetic used for the fixed-point updates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Domain {
    /// Scalings `u`, `v` updated against the precomputed kernel.
    Plain,
    /// Potentials `alpha`, `beta` updated with log-sum-exp.
    Log,
    /// Plain for moderate `M / epsilon`, log otherwise; falls back to log if
    /// the plain iteration reports numeric instability.
    Auto,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SinkhornConfig {
    /// Stop once the L1 marginal violation drops to this value.
    pub tol: f64,
    pub max_iters: usize,
    pub domain: Domain,
}

impl Default for SinkhornConfig {
    fn default() -> Self {
        Self {
            tol: 1e-9,
            max_iters: 1000,
            domain: Domain::Auto,
        }
    }
}

/// Output of one entropic OT solve.
#[derive(Debug, Clone)]
pub struct SinkhornSolution {
    pub plan: Array2<f64>,
    /// Dual potential of the source marginal, `epsilon * log u`.
    pub alpha: Array1<f64>,
    /// Dual potential of the target marginal, `epsilon * log v`.
    pub beta: Array1<f64>,
    pub primal_value: f64,
    pub dual_value: f64,
    pub iterations_used: usize,
    /// `|plan 1 - mu|_1 + |plan^T 1 - nu|_1` at the last iterate.
    pub marginal_violation: f64,
    pub converged: bool,
    /// Domain that actually produced the solution.
    pub domain: Domain,
    pub(crate) target: Array1<f64>,
}

impl SinkhornSolution {
    /// The target marginal the solution was computed for.
    pub fn target_marginal(&self) -> &Array1<f64> {
        &self.target
    }
}

/// `H(T) = -sum T (log T - 1)`, with `0 log 0 = 0`.
pub fn entropy(plan: &Array2<f64>) -> Result<f64> {
    let mut total = 0.0;
    for &t in plan {
        if !(t >= 0.0) || !t.is_finite() {
            return Err(invalid(format!("plan entry {t} is negative or not finite")));
        }
        if t > 0.0 {
            total -= t * (t.ln() - 1.0);
        }
    }
    Ok(total)
}

/// Value of the entropic dual objective at potentials `(alpha, beta)`.
pub fn dual_value(
    alpha: ArrayView1<f64>,
    beta: ArrayView1<f64>,
    mu: ArrayView1<f64>,
    nu: ArrayView1<f64>,
    cost: &CostMatrix,
    epsilon: f64,
) -> f64 {
    let mut mass = 0.0;
    for (m, row) in cost.entries().outer_iter().enumerate() {
        for (n, &c) in row.iter().enumerate() {
            mass += ((alpha[m] + beta[n] - c) / epsilon).exp();
        }
    }
    alpha.dot(&mu) + beta.dot(&nu) - epsilon * mass
}

/// A Sinkhorn solver bound to one cost matrix and regularisation strength.
///
/// The Gibbs kernel is computed once, so repeated solves against the same
/// cost matrix (one per training instance) only pay for the iterations.
#[derive(Debug, Clone)]
pub struct SinkhornSolver {
    cost: CostMatrix,
    kernel: GibbsKernel,
    kernel_rows: Array2<f64>,
    kernel_t: Array2<f64>,
    epsilon: f64,
    config: SinkhornConfig,
}

impl SinkhornSolver {
    pub fn new(cost: &CostMatrix, epsilon: f64, config: SinkhornConfig) -> Result<Self> {
        if !(config.tol > 0.0) {
            return Err(invalid(format!("tolerance must be positive, got {}", config.tol)));
        }
        if config.max_iters == 0 {
            return Err(invalid("max_iters must be positive"));
        }
        let kernel = GibbsKernel::new(cost, epsilon)?;
        let kernel_rows = kernel.entries().as_standard_layout().into_owned();
        let kernel_t = kernel.entries().t().as_standard_layout().into_owned();
        Ok(Self {
            cost: cost.clone(),
            kernel,
            kernel_rows,
            kernel_t,
            epsilon,
            config,
        })
    }

    pub fn cost(&self) -> &CostMatrix {
        &self.cost
    }

    pub fn kernel(&self) -> &GibbsKernel {
        &self.kernel
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn config(&self) -> &SinkhornConfig {
        &self.config
    }

    pub fn solve(&self, mu: &ProbabilityVector, nu: &ProbabilityVector) -> Result<SinkhornSolution> {
        self.solve_from(mu, nu, None)
    }

    /// Like [`Self::solve`], but starts the iteration from the target
    /// potential `beta0` (typically the solution of a nearby problem)
    /// instead of zero. Converged solutions agree with cold starts up to the
    /// tolerance and the additive constant of the potentials.
    pub fn solve_from(
        &self,
        mu: &ProbabilityVector,
        nu: &ProbabilityVector,
        beta0: Option<ArrayView1<f64>>,
    ) -> Result<SinkhornSolution> {
        let (rows, cols) = self.cost.dim();
        if mu.len() != rows || nu.len() != cols {
            return Err(invalid(format!(
                "marginals have lengths {} and {} but cost matrix is {rows}x{cols}",
                mu.len(),
                nu.len()
            )));
        }
        if !mu.is_strictly_positive() || !nu.is_strictly_positive() {
            return Err(invalid("Sinkhorn marginals must be strictly positive"));
        }
        let beta0 = match beta0 {
            Some(b) if b.len() != cols => return Err(invalid("warm-start potential has the wrong length")),
            Some(b) if b.iter().all(|x| x.is_finite()) => Some(b),
            _ => None,
        };
        match self.config.domain {
            Domain::Plain => self.solve_plain(mu.view(), nu.view(), beta0),
            Domain::Log => self.solve_log(mu.view(), nu.view(), beta0),
            Domain::Auto => {
                let exponent = self.cost.max() / self.epsilon;
                if self.epsilon >= AUTO_PLAIN_MIN_EPSILON && exponent <= AUTO_PLAIN_MAX_EXPONENT {
                    match self.solve_plain(mu.view(), nu.view(), beta0) {
                        Err(Error::NumericInstability(_)) => self.solve_log(mu.view(), nu.view(), beta0),
                        other => other,
                    }
                } else {
                    self.solve_log(mu.view(), nu.view(), beta0)
                }
            }
        }
    }

    fn solve_plain(
        &self,
        mu: ArrayView1<f64>,
        nu: ArrayView1<f64>,
        beta0: Option<ArrayView1<f64>>,
    ) -> Result<SinkhornSolution> {
        let k = self.kernel.entries();
        let (rows, cols) = k.dim();
        let k_rows = self.kernel_rows.as_slice().expect("kernel is contiguous");
        let k_cols = self.kernel_t.as_slice().expect("kernel transpose is contiguous");
        let mu = mu.to_vec();
        let nu = nu.to_vec();
        let mut u = vec![1.0; rows];
        let mut v = match beta0 {
            Some(b) => b.iter().map(|x| (x / self.epsilon).exp()).collect(),
            None => vec![1.0; cols],
        };
        let mut kv = vec![0.0; rows];
        let mut ktu = vec![0.0; cols];
        matvec(k_rows, &v, &mut kv);
        let mut violation = f64::INFINITY;
        let mut iterations = 0;
        let mut converged = false;

        while iterations < self.config.max_iters {
            iterations += 1;
            check_denominators(&kv)?;
            for m in 0..rows {
                u[m] = mu[m] / kv[m];
            }
            matvec(k_cols, &u, &mut ktu);
            check_denominators(&ktu)?;
            let mut col_err = 0.0;
            for n in 0..cols {
                v[n] = nu[n] / ktu[n];
                col_err += (v[n] * ktu[n] - nu[n]).abs();
            }
            matvec(k_rows, &v, &mut kv);
            let mut row_err = 0.0;
            let mut finite = true;
            for m in 0..rows {
                row_err += (u[m] * kv[m] - mu[m]).abs();
                finite &= u[m].is_finite() && u[m] > 0.0;
            }
            violation = row_err + col_err;
            if !violation.is_finite() || !finite || v.iter().any(|x| !x.is_finite() || *x <= 0.0) {
                return Err(Error::NumericInstability(format!(
                    "plain-domain scaling overflowed at iteration {iterations} (epsilon = {}); use the log domain",
                    self.epsilon
                )));
            }
            if violation <= self.config.tol {
                converged = true;
                break;
            }
        }

        let u = Array1::from(u);
        let v = Array1::from(v);
        let mu = ArrayView1::from(&mu);
        let nu = ArrayView1::from(&nu);
        let alpha = u.mapv(|x| self.epsilon * x.ln());
        let beta = v.mapv(|x| self.epsilon * x.ln());
        let mut plan = k.clone();
        for (m, mut row) in plan.outer_iter_mut().enumerate() {
            Zip::from(&mut row).and(&v).for_each(|t, &vn| *t *= u[m] * vn);
        }
        self.finish(plan, alpha, beta, mu, nu, iterations, violation, converged, Domain::Plain)
    }

    fn solve_log(
        &self,
        mu: ArrayView1<f64>,
        nu: ArrayView1<f64>,
        beta0: Option<ArrayView1<f64>>,
    ) -> Result<SinkhornSolution> {
        let eps = self.epsilon;
        let cost = self.cost.entries();
        let (rows, cols) = cost.dim();
        let log_mu = mu.mapv(f64::ln);
        let log_nu = nu.mapv(f64::ln);
        let mut alpha = Array1::<f64>::zeros(rows);
        let mut beta = beta0.map_or_else(|| Array1::<f64>::zeros(cols), |b| b.to_owned());
        let mut row_lse = row_logsumexp(cost, beta.view(), eps);
        let mut col_lse = Array1::<f64>::zeros(cols);
        let mut scratch = Array1::<f64>::zeros(rows);
        let mut violation = f64::INFINITY;
        let mut iterations = 0;
        let mut converged = false;

        while iterations < self.config.max_iters {
            iterations += 1;
            Zip::from(&mut alpha).and(&log_mu).and(&row_lse).for_each(|a, &lp, &l| *a = eps * (lp - l));
            for n in 0..cols {
                for m in 0..rows {
                    scratch[m] = (alpha[m] - cost[[m, n]]) / eps;
                }
                col_lse[n] = logsumexp(scratch.view());
            }
            Zip::from(&mut beta).and(&log_nu).and(&col_lse).for_each(|b, &lq, &l| *b = eps * (lq - l));
            row_lse = row_logsumexp(cost, beta.view(), eps);

            let row_err: f64 = (0..rows)
                .map(|m| ((alpha[m] / eps + row_lse[m]).exp() - mu[m]).abs())
                .sum();
            let col_err: f64 = (0..cols)
                .map(|n| ((beta[n] / eps + col_lse[n]).exp() - nu[n]).abs())
                .sum();
            violation = row_err + col_err;
            if !violation.is_finite() {
                return Err(Error::NumericInstability(format!(
                    "log-domain potentials became non-finite at iteration {iterations}"
                )));
            }
            if violation <= self.config.tol {
                converged = true;
                break;
            }
        }

        let mut plan = Array2::<f64>::zeros((rows, cols));
        for m in 0..rows {
            for n in 0..cols {
                plan[[m, n]] = ((alpha[m] + beta[n] - cost[[m, n]]) / eps).exp();
            }
        }
        self.finish(plan, alpha, beta, mu, nu, iterations, violation, converged, Domain::Log)
    }

    #[allow(clippy::too_many_arguments)]
    fn finish(
        &self,
        plan: Array2<f64>,
        alpha: Array1<f64>,
        beta: Array1<f64>,
        mu: ArrayView1<f64>,
        nu: ArrayView1<f64>,
        iterations: usize,
        violation: f64,
        converged: bool,
        domain: Domain,
    ) -> Result<SinkhornSolution> {
        let transport_cost: f64 = Zip::from(&plan).and(self.cost.entries()).fold(0.0, |acc, &t, &c| acc + t * c);
        let primal_value = transport_cost - self.epsilon * entropy(&plan)?;
        let dual = dual_value(alpha.view(), beta.view(), mu, nu, &self.cost, self.epsilon);
        Ok(SinkhornSolution {
            plan,
            alpha,
            beta,
            primal_value,
            dual_value: dual,
            iterations_used: iterations,
            marginal_violation: violation,
            converged,
            domain,
            target: nu.to_owned(),
        })
    }
}

/// `out = A x` for a row-major `A` with `out.len()` rows.
fn matvec(a: &[f64], x: &[f64], out: &mut [f64]) {
    let cols = x.len();
    for (o, row) in out.iter_mut().zip(a.chunks_exact(cols)) {
        *o = row.iter().zip(x).map(|(p, q)| p * q).sum();
    }
}

fn check_denominators(values: &[f64]) -> Result<()> {
    if values.iter().any(|&d| !(d >= TINY) || !d.is_finite()) {
        return Err(Error::NumericInstability(
            "kernel product underflowed in the plain domain; use the log domain".into(),
        ));
    }
    Ok(())
}

fn logsumexp(values: ArrayView1<f64>) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + values.iter().map(|&x| (x - max).exp()).sum::<f64>().ln()
}

fn row_logsumexp(cost: &Array2<f64>, beta: ArrayView1<f64>, eps: f64) -> Array1<f64> {
    let mut scratch = Array1::<f64>::zeros(beta.len());
    cost.outer_iter()
        .map(|row| {
            Zip::from(&mut scratch).and(&beta).and(&row).for_each(|s, &b, &c| *s = (b - c) / eps);
            logsumexp(scratch.view())
        })
        .collect()
}

/// Solves one entropic OT problem.
///
/// `log_domain` forces the stabilised iteration; otherwise the plain
/// iteration is used and numeric trouble is reported as an error.
pub fn solve_sinkhorn(
    mu: &ProbabilityVector,
    nu: &ProbabilityVector,
    cost: &CostMatrix,
    epsilon: f64,
    tol: f64,
    max_iters: usize,
    log_domain: bool,
) -> Result<SinkhornSolution> {
    let domain = if log_domain { Domain::Log } else { Domain::Plain };
    SinkhornSolver::new(cost, epsilon, SinkhornConfig { tol, max_iters, domain })?.solve(mu, nu)
}

/// Sinkhorn distance `min <T, M> - epsilon H(T)` over the transport polytope.
pub fn sinkhorn_distance(
    mu: &ProbabilityVector,
    nu: &ProbabilityVector,
    cost: &CostMatrix,
    epsilon: f64,
    config: &SinkhornConfig,
) -> Result<f64> {
    let solution = SinkhornSolver::new(cost, epsilon, *config)?.solve(mu, nu)?;
    if !solution.converged {
        return Err(Error::NotConverged {
            iterations: solution.iterations_used,
            violation: solution.marginal_violation,
        });
    }
    Ok(solution.primal_value)
}
