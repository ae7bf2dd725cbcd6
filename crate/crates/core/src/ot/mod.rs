//! Entropic optimal transport.
//!
//! Sinkhorn distances between discrete distributions, their dual potentials
//! and gradients, and the Hilbert-metric machinery that bounds how fast the
//! approximate gradient converges.

mod gradient;
mod hilbert;
mod sinkhorn;
mod trace;
mod types;

pub use gradient::{gradient_wrt_logits, gradient_wrt_target};
pub(crate) use gradient::logit_gradient_from_potential;
pub use hilbert::{contraction_coefficient, hilbert_metric, log_psi, variation_seminorm};
pub use sinkhorn::{
    dual_value, entropy, sinkhorn_distance, solve_sinkhorn, Domain, SinkhornConfig,
    SinkhornSolution, SinkhornSolver,
};
pub use trace::{convergence_trace, convergence_trace_with_reference, ConvergenceTrace, TracePoint};
pub use types::{CostMatrix, GibbsKernel, ProbabilityVector};
