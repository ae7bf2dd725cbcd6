use ndarray::Array1;

use super::sinkhorn::SinkhornSolution;
use super::types::ProbabilityVector;
use crate::error::{invalid, Error, Result};

/// Gradient of the Sinkhorn distance with respect to the target marginal.
///
/// This is the optimal target potential `beta`. It is unique only up to an
/// additive constant, so it is meaningful on zero-sum directions.
pub fn gradient_wrt_target(solution: &SinkhornSolution) -> Result<Array1<f64>> {
    if !solution.converged {
        return Err(Error::StaleGradient {
            iterations: solution.iterations_used,
            violation: solution.marginal_violation,
        });
    }
    Ok(solution.beta.clone())
}

/// Gradient of the Sinkhorn distance with respect to the logits that produced
/// `p_s` through a unit-temperature softmax: `(beta - <beta, p_s>) * p_s`.
///
/// For a softmax at temperature `tau` the exact derivative carries an extra
/// factor `1 / tau`, which callers apply.
pub fn gradient_wrt_logits(solution: &SinkhornSolution, p_s: &ProbabilityVector) -> Result<Array1<f64>> {
    let beta = gradient_wrt_target(solution)?;
    logit_gradient_from_potential(&beta, solution, p_s)
}

pub(crate) fn logit_gradient_from_potential(
    beta: &Array1<f64>,
    solution: &SinkhornSolution,
    p_s: &ProbabilityVector,
) -> Result<Array1<f64>> {
    if p_s.len() != beta.len() {
        return Err(invalid(format!(
            "student distribution has {} entries but the potential has {}",
            p_s.len(),
            beta.len()
        )));
    }
    let drift = p_s
        .as_array()
        .iter()
        .zip(solution.target_marginal())
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    if drift > 1e-12 {
        return Err(invalid("student distribution differs from the target marginal that was solved"));
    }
    let p = p_s.as_array();
    let mean = beta.dot(p);
    Ok((beta - mean) * p)
}
