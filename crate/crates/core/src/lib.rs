//! Selective cross-task knowledge distillation.
//!
//! The crate is organised bottom-up:
//!
//! - [`ot`]: entropic optimal transport (Sinkhorn distance, dual potentials,
//!   gradients, Hilbert-metric convergence diagnostics).
//! - [`models`]: small classifiers factored as embedding network plus linear
//!   head, tempered softmax, class centers and nearest-class-mean prediction.
//! - [`synth`]: synthetic class pools and the sliding-window task protocols.
//! - [`distill`]: cross-task distillation with a Sinkhorn term, plus the KL
//!   and no-teacher baselines.
//! - [`assess`]: teacher assessment over a model repository.
//! - [`store`]: canonical JSON/CSV persistence and repository manifests.

pub mod assess;
pub mod data;
pub mod distill;
pub mod error;
pub mod models;
pub mod ot;
pub mod seed;
pub mod stats;
pub mod store;
pub mod synth;

#[cfg(any(test, feature = "oracles"))]
pub mod oracles;

pub use error::{Error, Result};
