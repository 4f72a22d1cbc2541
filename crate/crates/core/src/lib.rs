//! Lung segmentation of thoracic CT volumes.
//!
//! The pipeline reads MetaImage volumes ([`volume`]), windows them to
//! [-1000, 400] HU ([`preprocess`]), packs consecutive slices into
//! three-channel samples ([`slab`]), runs an Inception-encoder U-Net
//! ([`net`]) trained with binary cross-entropy and Adam ([`train`]), and
//! scores predictions with 2D and 3D Dice ([`metrics`]). [`pipeline`] wires
//! the stages into the commands exposed by the CLI.
//!
//! Numeric code is generic over [`Scalar`] (`f32` or `f64`); the aliases below
//! name the common instantiations.

pub mod config;
pub mod error;
pub mod metrics;
pub mod net;
pub mod overlay;
pub mod pipeline;
pub mod preprocess;
pub mod report;
pub mod scalar;
pub mod slab;
pub mod tensor;
pub mod train;
pub mod volume;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type Tensor32 = tensor::Tensor<f32>;
pub type Tensor64 = tensor::Tensor<f64>;
pub type Network32 = net::Network<f32>;
pub type Network64 = net::Network<f64>;
pub type Slab32 = slab::Slab<f32>;
pub type NormalizedSlice32 = preprocess::NormalizedSlice<f32>;
