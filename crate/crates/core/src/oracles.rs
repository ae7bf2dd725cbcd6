//! Independent reference computations for tests.
//!
//! Nothing here calls into the solver, the gradient code or the statistics
//! module; each routine recomputes its quantity from the definition.

use ndarray::{Array1, Array2, ArrayView1};

/// Double-loop `-sum T (log T - 1)`.
pub fn entropy_naive(plan: &Array2<f64>) -> f64 {
    let (rows, cols) = plan.dim();
    let mut total = 0.0;
    for m in 0..rows {
        for n in 0..cols {
            let t = plan[[m, n]];
            if t > 0.0 {
                total += -t * (t.ln() - 1.0);
            }
        }
    }
    total
}

/// Quadruple-loop `log max K_ik K_jl / (K_jk K_il)` from `log K`.
pub fn log_psi_quadruple(log_k: &Array2<f64>) -> f64 {
    let (rows, cols) = log_k.dim();
    let mut best = 0.0f64;
    for i in 0..rows {
        for j in 0..rows {
            for k in 0..cols {
                for l in 0..cols {
                    let v = log_k[[i, k]] + log_k[[j, l]] - log_k[[j, k]] - log_k[[i, l]];
                    best = best.max(v);
                }
            }
        }
    }
    best
}

pub struct DualOracle {
    pub plan: Array2<f64>,
    pub alpha: Array1<f64>,
    pub beta: Array1<f64>,
    /// Dual objective at the returned potentials.
    pub value: f64,
    pub gradient_norm: f64,
}

fn dual_objective(alpha: &Array1<f64>, beta: &Array1<f64>, mu: ArrayView1<f64>, nu: ArrayView1<f64>, cost: &Array2<f64>, eps: f64) -> (f64, Array2<f64>) {
    let (rows, cols) = cost.dim();
    let mut plan = Array2::zeros((rows, cols));
    let mut mass = 0.0;
    for m in 0..rows {
        for n in 0..cols {
            let t = ((alpha[m] + beta[n] - cost[[m, n]]) / eps).exp();
            plan[[m, n]] = t;
            mass += t;
        }
    }
    let value = alpha.dot(&mu) + beta.dot(&nu) - eps * mass;
    (value, plan)
}

/// Maximises the entropic dual by damped Newton ascent with the last target
/// potential pinned to zero, starting from zero potentials.
pub fn dual_ascent(mu: ArrayView1<f64>, nu: ArrayView1<f64>, cost: &Array2<f64>, eps: f64) -> DualOracle {
    let (rows, cols) = cost.dim();
    let free = rows + cols - 1;
    let mut alpha = Array1::<f64>::zeros(rows);
    let mut beta = Array1::<f64>::zeros(cols);
    let (mut value, mut plan) = dual_objective(&alpha, &beta, mu, nu, cost, eps);
    let mut gradient_norm = f64::INFINITY;

    for _ in 0..500 {
        let row = plan.sum_axis(ndarray::Axis(1));
        let col = plan.sum_axis(ndarray::Axis(0));
        let mut grad = vec![0.0; free];
        for m in 0..rows {
            grad[m] = mu[m] - row[m];
        }
        for n in 0..cols - 1 {
            grad[rows + n] = nu[n] - col[n];
        }
        gradient_norm = grad.iter().map(|g| g.abs()).sum::<f64>() + (nu[cols - 1] - col[cols - 1]).abs();
        if gradient_norm < 1e-15 {
            break;
        }
        // Negative Hessian of the concave dual, scaled by eps.
        let mut h = vec![vec![0.0; free]; free];
        for m in 0..rows {
            h[m][m] = row[m];
            for n in 0..cols - 1 {
                h[m][rows + n] = plan[[m, n]];
                h[rows + n][m] = plan[[m, n]];
            }
        }
        for n in 0..cols - 1 {
            h[rows + n][rows + n] = col[n];
        }
        let step: Vec<f64> = solve_dense(h, grad.clone()).into_iter().map(|s| s * eps).collect();

        let mut t = 1.0;
        let slope: f64 = step.iter().zip(&grad).map(|(s, g)| s * g).sum();
        loop {
            let mut a = alpha.clone();
            let mut b = beta.clone();
            for m in 0..rows {
                a[m] += t * step[m];
            }
            for n in 0..cols - 1 {
                b[n] += t * step[rows + n];
            }
            let (candidate, candidate_plan) = dual_objective(&a, &b, mu, nu, cost, eps);
            // Near the optimum the objective change is lost to rounding, so a
            // step that halves the marginal residual is accepted as well.
            let shrinks = residual(&candidate_plan, mu, nu) < 0.5 * gradient_norm;
            if candidate >= value + 1e-4 * t * slope || shrinks || t < 1e-12 {
                alpha = a;
                beta = b;
                value = candidate;
                plan = candidate_plan;
                break;
            }
            t *= 0.5;
        }
    }
    DualOracle {
        plan,
        alpha,
        beta,
        value,
        gradient_norm,
    }
}

fn residual(plan: &Array2<f64>, mu: ArrayView1<f64>, nu: ArrayView1<f64>) -> f64 {
    let row = plan.sum_axis(ndarray::Axis(1));
    let col = plan.sum_axis(ndarray::Axis(0));
    (&row - &mu).mapv(f64::abs).sum() + (&col - &nu).mapv(f64::abs).sum()
}

/// Gaussian elimination with partial pivoting.
fn solve_dense(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Vec<f64> {
    let n = b.len();
    for col in 0..n {
        let pivot = (col..n)
            .max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))
            .unwrap();
        a.swap(col, pivot);
        b.swap(col, pivot);
        let p = a[col][col];
        for row in (col + 1)..n {
            let f = a[row][col] / p;
            if f != 0.0 {
                for k in col..n {
                    a[row][k] -= f * a[col][k];
                }
                b[row] -= f * b[col];
            }
        }
    }
    let mut x = vec![0.0; n];
    for row in (0..n).rev() {
        let s: f64 = ((row + 1)..n).map(|k| a[row][k] * x[k]).sum();
        x[row] = (b[row] - s) / a[row][row];
    }
    x
}

/// Textbook sample Pearson correlation.
pub fn pearson_textbook(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let sx: f64 = x.iter().sum();
    let sy: f64 = y.iter().sum();
    let sxx: f64 = x.iter().map(|v| v * v).sum();
    let syy: f64 = y.iter().map(|v| v * v).sum();
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| a * b).sum();
    (n * sxy - sx * sy) / ((n * sxx - sx * sx).sqrt() * (n * syy - sy * sy).sqrt())
}

/// `sum p log(p / q)` by direct summation.
pub fn kl_direct(p: &[f64], q: &[f64]) -> f64 {
    p.iter()
        .zip(q)
        .filter(|(a, _)| **a > 0.0)
        .map(|(a, b)| a * (a / b).ln())
        .sum()
}

/// Softmax at temperature `tau` evaluated term by term without max-shifting.
pub fn softmax_direct(logits: &[f64], tau: f64) -> Vec<f64> {
    let exps: Vec<f64> = logits.iter().map(|z| (z / tau).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.iter().map(|e| e / total).collect()
}
