//! Gated-fusion two-stream video saliency at toy scale.
//!
//! * [`tensor`]: dense tensors, a reverse-mode autodiff tape and gradient checking.
//! * [`blocks`]: residual backbone, attention blocks, multi-level fusion, gated fusion.
//! * [`model`], [`loss`], [`optim`], [`train`]: the two-stream network and its training loop.
//! * [`metrics`]: AUC-Judd, CC, NSS, SIM, KL divergence and fixation density maps.
//! * [`io`]: manifests, image and tensor files, checkpoints, configuration.

pub mod blocks;
pub mod error;
pub mod io;
pub mod loss;
pub mod metrics;
pub mod model;
pub mod optim;
pub mod synth;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
