//! Small classifiers `f(x) = W^T phi(x)`: an embedding network followed by a
//! linear head, plus the class-center machinery built on top of them.

mod centers;
mod classifier;
mod softmax;
mod train;

pub use centers::{cost_matrix, empirical_centers, head_weight_centers, ncm_classify, ncm_predict, CenterProvenance, ClassCenters};
pub use classifier::{argmax, Activation, Architecture, Classifier, Embedding, EmbeddingKind, ForwardCache, Head};
pub use softmax::{cross_entropy, softmax_rows, tempered_softmax};
pub(crate) use softmax::softmax_row;
pub use train::{train_supervised, train_with_objective, BatchObjective, EpochStats, OptimizerConfig, TrainReport};
