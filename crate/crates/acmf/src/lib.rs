//! Frequency-masked training augmentation and attention-consistency test-time
//! refinement for small-image forgery detection, built on a self-contained
//! reverse-mode autodiff tensor core.
//!
//! The crate is organized around the stages of the method:
//!
//! - [`tensor`]: dense tensors, an autodiff [`tensor::Graph`], Adam, and a
//!   finite-difference gradient checker.
//! - [`spectral`]: centered 2-D DFTs, the Chebyshev-box frequency mask,
//!   high/low decomposition and the random patch-mask recombination that
//!   erases high-frequency content during training.
//! - [`model`]: a small separable-convolution residual detector with a
//!   designated Grad-CAM tap layer and checkpoint serialization.
//! - [`attention`]: Grad-CAM attention maps, the classification loss and the
//!   attention-consistency loss.
//! - [`pipeline`]: synthetic video dataset generation, training, per-video
//!   refinement, perturbations and AUC evaluation.
//! - [`config`] / [`cli`]: reproducible key=value configuration and the
//!   `acmf` command-line binary.
//!
//! See the crate `examples/` directory for one runnable example per major
//! capability.

pub mod attention;
pub mod cli;
pub mod config;
pub mod model;
pub mod pipeline;
pub mod rng;
pub mod spectral;
pub mod tensor;

pub use rng::SplitMix64;
pub use tensor::{Graph, NodeId, Scalar, Tensor};
