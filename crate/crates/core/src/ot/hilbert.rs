use ndarray::ArrayView1;

use super::types::GibbsKernel;
use crate::error::{invalid, Result};

/// `max(v) - min(v)`; zero exactly on constant vectors.
pub fn variation_seminorm(values: ArrayView1<f64>) -> f64 {
    let (lo, hi) = values
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    if values.is_empty() {
        0.0
    } else {
        hi - lo
    }
}

/// Hilbert projective metric `log max_{i,j} (x_i y_j) / (x_j y_i)`, evaluated
/// as the variation seminorm of `log x - log y`.
pub fn hilbert_metric(x: ArrayView1<f64>, y: ArrayView1<f64>) -> Result<f64> {
    if x.len() != y.len() {
        return Err(invalid(format!("vectors have lengths {} and {}", x.len(), y.len())));
    }
    if x.iter().chain(y.iter()).any(|&v| !(v > 0.0) || !v.is_finite()) {
        return Err(invalid("Hilbert metric needs strictly positive finite entries"));
    }
    let diff = ndarray::Zip::from(&x).and(&y).map_collect(|&a, &b| a.ln() - b.ln());
    Ok(variation_seminorm(diff.view()))
}

/// `log psi(K)` where `psi(K) = max K_ik K_jl / (K_jk K_il)`.
///
/// For a fixed row pair `(i, j)` the cross ratio separates into
/// `D_k - D_l` with `D_k = log K_ik - log K_jk`, so the maximum over column
/// pairs is `max D - min D`.
pub fn log_psi(kernel: &GibbsKernel) -> f64 {
    let log_k = kernel.log_entries();
    let (rows, cols) = log_k.dim();
    let mut best = 0.0f64;
    let mut diff = vec![0.0; cols];
    for i in 0..rows {
        for j in (i + 1)..rows {
            for (k, d) in diff.iter_mut().enumerate() {
                *d = log_k[[i, k]] - log_k[[j, k]];
            }
            let (lo, hi) = diff
                .iter()
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
            best = best.max(hi - lo);
        }
    }
    best
}

/// Birkhoff contraction coefficient `kappa = (sqrt(psi) - 1) / (sqrt(psi) + 1)`,
/// computed as `tanh(log(psi) / 4)`.
pub fn contraction_coefficient(kernel: &GibbsKernel) -> f64 {
    (log_psi(kernel) / 4.0).tanh()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ot::CostMatrix;
    use ndarray::{array, Array1, Array2};
    use rand::Rng;

    #[test]
    fn seminorm_ignores_shifts() {
        let v = array![1.0, -2.0, 0.5];
        assert_eq!(variation_seminorm(v.view()), 3.0);
        assert_eq!(variation_seminorm((&v + 10.0).view()), 3.0);
    }

    #[test]
    fn projective_invariance_and_known_value() {
        let x = array![0.3, 1.5, 2.0];
        assert!(hilbert_metric(x.view(), (&x * 4.2).view()).unwrap() < 1e-14);
        let d = hilbert_metric(array![1.0, 2.0].view(), array![2.0, 1.0].view()).unwrap();
        assert!((d - 4.0f64.ln()).abs() < 1e-15);
        assert!(hilbert_metric(array![1.0, 0.0].view(), array![1.0, 1.0].view()).is_err());
    }

    #[test]
    fn degenerate_kernels_do_not_contract() {
        let constant = CostMatrix::unlabeled(Array2::from_elem((3, 3), 0.8)).unwrap();
        assert_eq!(contraction_coefficient(&GibbsKernel::new(&constant, 0.1).unwrap()), 0.0);
        let row = CostMatrix::unlabeled(array![[0.0, 1.0, 2.0]]).unwrap();
        assert_eq!(contraction_coefficient(&GibbsKernel::new(&row, 0.1).unwrap()), 0.0);
        let col = CostMatrix::unlabeled(array![[0.0], [1.0], [2.0]]).unwrap();
        assert_eq!(contraction_coefficient(&GibbsKernel::new(&col, 0.1).unwrap()), 0.0);
    }

    #[test]
    fn matches_quadruple_loop() {
        let mut rng = crate::seed::rng(21);
        for _ in 0..20 {
            let cost = CostMatrix::unlabeled(Array2::from_shape_fn((4, 4), |_| rng.random::<f64>())).unwrap();
            let kernel = GibbsKernel::new(&cost, 0.5).unwrap();
            assert_eq!(log_psi(&kernel), crate::oracles::log_psi_quadruple(kernel.log_entries()));
        }
    }

    #[test]
    fn larger_epsilon_contracts_more() {
        let mut rng = crate::seed::rng(4);
        let cost = CostMatrix::unlabeled(Array2::from_shape_fn((5, 6), |_| rng.random::<f64>())).unwrap();
        let k1 = contraction_coefficient(&GibbsKernel::new(&cost, 0.5).unwrap());
        let k2 = contraction_coefficient(&GibbsKernel::new(&cost, 1.0).unwrap());
        assert!(k2 <= k1);
    }

    #[test]
    fn birkhoff_contraction_holds_on_random_draws() {
        let mut rng = crate::seed::rng(8);
        for _ in 0..200 {
            let cost = CostMatrix::unlabeled(Array2::from_shape_fn((4, 5), |_| 2.0 * rng.random::<f64>())).unwrap();
            let kernel = GibbsKernel::new(&cost, 0.7).unwrap();
            let kappa = contraction_coefficient(&kernel);
            let x = Array1::from_shape_fn(5, |_| rng.random::<f64>() + 0.01);
            let y = Array1::from_shape_fn(5, |_| rng.random::<f64>() + 0.01);
            let kx = kernel.entries().dot(&x);
            let ky = kernel.entries().dot(&y);
            let lhs = hilbert_metric(kx.view(), ky.view()).unwrap();
            let rhs = kappa * hilbert_metric(x.view(), y.view()).unwrap();
            assert!(lhs <= rhs + 1e-12, "{lhs} > {rhs}");
        }
    }
}
