//! Eye-closedness classification with a small LeNet-style CNN.
//!
//! Everything is implemented from scratch on `f32` tensors: layer kernels
//! with hand-written backward passes, binary cross-entropy with Adam,
//! affine augmentation, corpus loading, classification metrics, and a
//! checksummed frozen-weight format.

pub mod augment;
pub mod cli;
pub mod data;
pub mod error;
pub mod image;
pub mod layers;
pub mod loss;
pub mod metrics;
pub mod model_io;
pub mod network;
pub mod optim;
pub mod rng;
pub mod tensor;
pub mod train;

pub use error::{Error, FormatError, Result};
pub use image::GrayImage;
pub use network::{build_fatigue_net, Grads, Network};
pub use rng::Rng;
pub use tensor::Tensor;
