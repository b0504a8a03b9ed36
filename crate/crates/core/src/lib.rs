//! Conditional neural networks (CLNN) and masked conditional neural networks
//! (MCLNN) for classifying multi-dimensional temporal signals.
//!
//! A CLNN layer consumes a window of `2n + 1` consecutive frames, each with its
//! own weight matrix, and emits one vector for the window's middle frame.
//! Scanning a block of `t` frames therefore yields `t - 2n` frames. An MCLNN
//! layer gates every weight matrix with a fixed binary band mask so each hidden
//! node only sees a local region of the feature vector.
//!
//! Crate layout:
//!
//! - [`mask`]: band-pattern mask generation and application.
//! - [`layers`]: CLNN layer, dense layers, pooling, activations and gradients.
//! - [`model`]: full classifier assembly, the segment-size law, serialization.
//! - [`features`]: resampling, STFT, mel filterbank, log-mel, z-score.
//! - [`dataset`]: segmentation, stratified folds, split plans, manifests.
//! - [`training`]: loss, optimizer loop, majority voting, gradient checking.
//! - [`config`] and [`cli`]: experiment configuration and the command line.

pub mod cli;
pub mod config;
pub mod dataset;
pub mod error;
pub mod features;
pub mod layers;
pub mod mask;
pub mod model;
pub mod tensor;
pub mod training;

mod bytes;

pub use error::{Error, Result};
pub use layers::{Activation, ClnnLayer, DenseLayer, FrameBlock};
pub use mask::{BinaryMask, MaskSpec};
pub use model::{LayerSpec, ModelSpec, TrainedModel};
pub use tensor::Matrix;
