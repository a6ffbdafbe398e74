//! Task-specific scoring on top of the multi-task embeddings: a linear
//! score blend and a trained attention module.

mod scm;
mod trm;

pub use scm::{alpha_grid, scm_combine, scm_frr, scm_grid_search, ScmParams, ScmProvenance};
pub use trm::{
    train_trm, trm_input, GateKind, TrmConfig, TrmEpochLog, TrmModule, TrmTrainConfig, TrmTrainLog, TrmValidation,
};
