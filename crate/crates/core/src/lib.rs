//! Desk-scale laboratory for class-incremental continual learning with
//! diffusion-based generative replay.
//!
//! The crate bundles everything the experiment driver needs:
//!
//! - [`tensor`] / [`graph`]: dense f64 tensors with a tape-based reverse-mode
//!   autodiff engine (input gradients are first-class).
//! - [`nn`] / [`optim`]: MLPs, SGD and AdamW.
//! - [`diffusion`]: noise schedules, ε-prediction training and deterministic
//!   DDIM sampling for a class-conditional MLP denoiser.
//! - [`guidance`]: classifier-guided rehearsal sampling (boundary-seeking
//!   guidance toward current-task classes plus the PREV+/PREV−/CURR−
//!   variants and a dual-guidance demo).
//! - [`classifier`]: the continually trained softmax classifier and an FGSM
//!   boundary-proximity probe.
//! - [`continual`]: the end-to-end class-incremental protocol.
//! - [`data`], [`metrics`], [`checkpoint`], [`rng`]: synthetic task streams,
//!   CL metrics, versioned model checkpoints and deterministic seed streams.

pub mod checkpoint;
pub mod classifier;
pub mod continual;
pub mod data;
pub mod diffusion;
pub mod error;
pub mod graph;
pub mod guidance;
pub mod metrics;
pub mod nn;
pub mod optim;
pub mod rng;
pub mod tensor;

pub use error::{Error, Result};
pub use tensor::Tensor;
