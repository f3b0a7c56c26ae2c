//! U-Net blocks and the network builder.

pub mod blocks;
mod config;
mod params;
mod unet;

pub use config::{NetworkConfig, MIN_ATTENTION_CHANNELS};
pub use params::{Bound, Layout, ParamSpec, Parameters};
pub use unet::{build_network, init_parameters, UNet};
