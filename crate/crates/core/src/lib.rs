//! Personalized keyword spotting.
//!
//! A shared convolutional encoder feeds a keyword head and a speaker head,
//! both trained jointly with cosine classifiers. Their embeddings are then
//! turned into target-user-biased (TB) and target-user-only (TO) detection
//! scores, either by blending the two cosine scores or by a small trained
//! attention module over the concatenated embeddings. The [`eval`] module
//! implements the pair-based protocol used to measure all of this.

pub mod adapt;
pub mod autodiff;
pub mod dataset;
mod error;
pub mod eval;
pub mod exec;
pub mod features;
pub mod model;
pub mod system;
pub mod verify;

pub use error::{Error, ErrorKind, Result};
