use ndarray::{Array1, Zip};
use serde::{Deserialize, Serialize};

use super::hilbert::{contraction_coefficient, log_psi, variation_seminorm};
use super::types::{CostMatrix, GibbsKernel, ProbabilityVector};
use crate::error::{invalid, Result};

/// Kernels whose smallest entry is above this are iterated in the plain
/// domain; otherwise the trace runs on logarithms.
const PLAIN_KERNEL_FLOOR: f64 = 1e-200;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TracePoint {
    pub iteration: usize,
    /// `|grad_t - grad_ref|_var`.
    pub seminorm_error: f64,
    /// `kappa^(2t) * |grad_0 - grad_ref|_var`.
    pub bound: f64,
    /// `|grad_t - grad_ref|_2`.
    pub l2_error: f64,
}

/// Per-iteration distance of the approximate target gradient
/// `epsilon * log v_t` to a reference gradient, next to the linear-rate bound.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ConvergenceTrace {
    pub kappa: f64,
    pub log_psi: f64,
    pub epsilon: f64,
    pub reference_iteration: usize,
    /// Points for `t = 0..=total_iters`.
    pub points: Vec<TracePoint>,
}

impl ConvergenceTrace {
    pub fn initial_error(&self) -> f64 {
        self.points.first().map_or(0.0, |p| p.seminorm_error)
    }

    /// Iterations at which the observed error exceeds the bound by more than `slack`.
    pub fn bound_violations(&self, slack: f64) -> Vec<usize> {
        self.points
            .iter()
            .filter(|p| p.seminorm_error > p.bound + slack)
            .map(|p| p.iteration)
            .collect()
    }

    /// Iterations `t` with `error_(t+1) / error_t > kappa^2 + slack`. Steps
    /// whose error is already below `floor` are skipped: their ratio is
    /// rounding noise.
    pub fn ratio_violations(&self, slack: f64, floor: f64) -> Vec<usize> {
        let rate = self.kappa * self.kappa;
        self.points
            .windows(2)
            .filter(|w| w[0].seminorm_error > floor && w[1].seminorm_error > floor)
            .filter(|w| w[1].seminorm_error / w[0].seminorm_error > rate + slack)
            .map(|w| w[0].iteration)
            .collect()
    }

    /// First iteration whose observed error is at or below `threshold`.
    pub fn first_below(&self, threshold: f64) -> Option<usize> {
        self.points
            .iter()
            .find(|p| p.seminorm_error <= threshold)
            .map(|p| p.iteration)
    }
}

/// Traces `total_iters` Sinkhorn iterations, using the last one as the
/// reference gradient.
pub fn convergence_trace(
    mu: &ProbabilityVector,
    nu: &ProbabilityVector,
    cost: &CostMatrix,
    epsilon: f64,
    total_iters: usize,
) -> Result<ConvergenceTrace> {
    convergence_trace_with_reference(mu, nu, cost, epsilon, total_iters, total_iters)
}

/// Like [`convergence_trace`], but keeps iterating up to `reference_iters`
/// to obtain the reference gradient.
pub fn convergence_trace_with_reference(
    mu: &ProbabilityVector,
    nu: &ProbabilityVector,
    cost: &CostMatrix,
    epsilon: f64,
    total_iters: usize,
    reference_iters: usize,
) -> Result<ConvergenceTrace> {
    let (rows, cols) = cost.dim();
    if mu.len() != rows || nu.len() != cols {
        return Err(invalid("marginal lengths do not match the cost matrix"));
    }
    if !mu.is_strictly_positive() || !nu.is_strictly_positive() {
        return Err(invalid("marginals must be strictly positive"));
    }
    if reference_iters < total_iters {
        return Err(invalid("reference iteration precedes the traced range"));
    }
    let kernel = GibbsKernel::new(cost, epsilon)?;
    let kappa = contraction_coefficient(&kernel);
    let psi = log_psi(&kernel);

    let mut gradients = Vec::with_capacity(total_iters + 1);
    let plain = kernel.entries().iter().all(|&k| k > PLAIN_KERNEL_FLOOR);
    let reference = if plain {
        iterate_plain(&kernel, mu, nu, epsilon, total_iters, reference_iters, &mut gradients)
    } else {
        iterate_log(&kernel, mu, nu, epsilon, total_iters, reference_iters, &mut gradients)
    };

    let mut points = Vec::with_capacity(gradients.len());
    let mut initial = 0.0;
    for (t, grad) in gradients.iter().enumerate() {
        let diff = grad - &reference;
        let seminorm_error = variation_seminorm(diff.view());
        if t == 0 {
            initial = seminorm_error;
        }
        points.push(TracePoint {
            iteration: t,
            seminorm_error,
            bound: kappa.powi(2 * t as i32) * initial,
            l2_error: diff.dot(&diff).sqrt(),
        });
    }
    Ok(ConvergenceTrace {
        kappa,
        log_psi: psi,
        epsilon,
        reference_iteration: reference_iters,
        points,
    })
}

fn iterate_plain(
    kernel: &GibbsKernel,
    mu: &ProbabilityVector,
    nu: &ProbabilityVector,
    epsilon: f64,
    total_iters: usize,
    reference_iters: usize,
    gradients: &mut Vec<Array1<f64>>,
) -> Array1<f64> {
    let k = kernel.entries();
    let mut v = Array1::<f64>::ones(nu.len());
    let mut u = Array1::<f64>::ones(mu.len());
    gradients.push(Array1::zeros(nu.len()));
    let mut grad = Array1::zeros(nu.len());
    for t in 1..=reference_iters {
        let kv = k.dot(&v);
        Zip::from(&mut u).and(mu.as_array()).and(&kv).for_each(|u, &p, &d| *u = p / d);
        let ktu = k.t().dot(&u);
        Zip::from(&mut v).and(nu.as_array()).and(&ktu).for_each(|v, &q, &d| *v = q / d);
        grad = v.mapv(|x| epsilon * x.ln());
        if t <= total_iters {
            gradients.push(grad.clone());
        }
    }
    grad
}

fn iterate_log(
    kernel: &GibbsKernel,
    mu: &ProbabilityVector,
    nu: &ProbabilityVector,
    epsilon: f64,
    total_iters: usize,
    reference_iters: usize,
    gradients: &mut Vec<Array1<f64>>,
) -> Array1<f64> {
    let log_k = kernel.log_entries();
    let (rows, cols) = log_k.dim();
    let log_mu = mu.as_array().mapv(f64::ln);
    let log_nu = nu.as_array().mapv(f64::ln);
    let mut log_u = Array1::<f64>::zeros(rows);
    let mut log_v = Array1::<f64>::zeros(cols);
    gradients.push(Array1::zeros(cols));
    let mut scratch_r = vec![0.0; rows];
    let mut scratch_c = vec![0.0; cols];
    for t in 1..=reference_iters {
        for m in 0..rows {
            for n in 0..cols {
                scratch_c[n] = log_k[[m, n]] + log_v[n];
            }
            log_u[m] = log_mu[m] - lse(&scratch_c);
        }
        for n in 0..cols {
            for m in 0..rows {
                scratch_r[m] = log_k[[m, n]] + log_u[m];
            }
            log_v[n] = log_nu[n] - lse(&scratch_r);
        }
        if t <= total_iters {
            gradients.push(&log_v * epsilon);
        }
    }
    &log_v * epsilon
}

fn lse(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    max + values.iter().map(|&x| (x - max).exp()).sum::<f64>().ln()
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{array, Array2};
    use rand::Rng;

    #[test]
    fn constant_cost_converges_after_one_step() {
        let cost = CostMatrix::unlabeled(Array2::from_elem((3, 4), 1.3)).unwrap();
        let mu = ProbabilityVector::normalized(array![1.0, 2.0, 3.0]).unwrap();
        let nu = ProbabilityVector::normalized(array![4.0, 1.0, 1.0, 2.0]).unwrap();
        let trace = convergence_trace(&mu, &nu, &cost, 0.1, 10).unwrap();
        assert_eq!(trace.kappa, 0.0);
        assert!(trace.points[1..].iter().all(|p| p.seminorm_error < 1e-12));
        assert!(trace.bound_violations(1e-9).is_empty());
    }

    #[test]
    fn log_and_plain_traces_agree() {
        let mut rng = crate::seed::rng(13);
        let cost = CostMatrix::unlabeled(Array2::from_shape_fn((6, 5), |_| rng.random::<f64>())).unwrap();
        let mu = ProbabilityVector::normalized(Array1::from_shape_fn(6, |_| rng.random::<f64>() + 0.1)).unwrap();
        let nu = ProbabilityVector::normalized(Array1::from_shape_fn(5, |_| rng.random::<f64>() + 0.1)).unwrap();
        let kernel = GibbsKernel::new(&cost, 0.2).unwrap();
        let (mut a, mut b) = (Vec::new(), Vec::new());
        let ra = iterate_plain(&kernel, &mu, &nu, 0.2, 30, 60, &mut a);
        let rb = iterate_log(&kernel, &mu, &nu, 0.2, 30, 60, &mut b);
        assert_eq!(a.len(), 31);
        for (x, y) in a.iter().zip(&b).chain(std::iter::once((&ra, &rb))) {
            for (p, q) in x.iter().zip(y) {
                assert!((p - q).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn observed_error_respects_bound_and_ratio() {
        let mut rng = crate::seed::rng(2);
        for _ in 0..20 {
            let cost = CostMatrix::unlabeled(Array2::from_shape_fn((5, 5), |_| 0.3 * rng.random::<f64>())).unwrap();
            let mu = ProbabilityVector::normalized(Array1::from_shape_fn(5, |_| rng.random::<f64>() + 0.1)).unwrap();
            let nu = ProbabilityVector::normalized(Array1::from_shape_fn(5, |_| rng.random::<f64>() + 0.1)).unwrap();
            let trace = convergence_trace_with_reference(&mu, &nu, &cost, 0.5, 40, 400).unwrap();
            assert!(trace.kappa < 1.0);
            assert!(trace.bound_violations(1e-9).is_empty());
            assert!(trace.ratio_violations(1e-6, 1e-11).is_empty());
        }
    }
}
