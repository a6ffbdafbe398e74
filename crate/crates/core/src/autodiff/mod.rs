//! Dense `f64` tensors, a define-by-run graph with reverse-mode
//! differentiation, optimizers and the checkpoint container.

mod checkpoint;
pub mod gradcheck;
mod graph;
mod optim;
mod params;
mod tensor;

pub use checkpoint::{Checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use graph::{log_sum_exp, sigmoid, softmax_in_place, Gradients, Graph, NodeId};
pub use optim::{Optimizer, OptimizerKind};
pub use params::{he_normal, lecun_normal, ParamId, ParamStore};
pub use tensor::{cosine, dot, norm, normalized, Tensor};
