//! Image I/O and the grayscale + histogram-equalization pipeline.

mod equalize;
mod image;
mod pnm;

pub use equalize::{compute_histogram, equalize, rgb_to_gray, Histogram, LEVELS};
pub use image::{GrayImage, Image, RgbImage};
pub use pnm::{decode_pnm, encode_pnm, read_gray, read_pnm, write_gray, write_pnm};
