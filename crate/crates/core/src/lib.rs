//! Brain-tumor segmentation with a U-Net that can be extended with
//! coordinate attention on its skip connections and an atrous spatial
//! pyramid pooling bottleneck, built on a small reverse-mode autodiff core.

pub mod error;
pub mod metrics;
pub mod model;
pub mod preprocess;
pub mod rng;
pub mod tensor;
pub mod training;

pub use error::{Error, Result};
