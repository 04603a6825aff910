//! One-shot path-aggregation architecture search for feature pyramids.
//!
//! The crate is organised bottom-up:
//!
//! - [`tensor`], [`autodiff`]: dense tensors, a reverse-mode tape, SGD.
//! - [`paths`]: the six pyramid-to-pyramid information paths.
//! - [`supernet`]: the densely connected DAG super-net, fair sampling and
//!   super-net training with learnable edge importance weights.
//! - [`proxy`]: a synthetic multi-scale heatmap task, backbone and head,
//!   and stand-alone training of a single architecture.
//! - [`search`]: evolutionary and random search over genotypes.
//! - [`analysis`]: Kendall tau, ablations, and the end-to-end pipeline.

pub mod analysis;
pub mod autodiff;
pub mod checkpoint;
pub mod error;
pub mod paths;
pub mod proxy;
pub mod search;
pub mod supernet;
pub mod tensor;

pub use error::{Error, Result};
pub use tensor::Tensor;
