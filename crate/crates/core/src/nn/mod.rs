//! Minimal CPU tensor and layer stack with hand-written backward passes:
//! strided convolutions (im2col + SGEMM), transposed convolutions, batch
//! normalization, linear layers, (leaky) ReLU and Adam.

pub mod adam;
pub mod layers;
pub mod ops;
pub mod tensor;

pub use adam::{Adam, AdamConfig};
pub use layers::{BatchNorm2d, Conv2d, ConvTranspose2d, Linear, Param};
pub use ops::ConvGeom;
pub use tensor::Tensor;
