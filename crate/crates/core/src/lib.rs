//! Compact-representation image compression.
//!
//! A three-layer network (`ComCNN`) shrinks an image to a half-resolution
//! compact representation, a block-transform codec compresses that, and a
//! twenty-layer residual network (`RecCNN`) restores the decoded, upscaled
//! result. Training alternates between the two networks so the codec's
//! non-differentiable quantization never sits on a gradient path.

pub mod codec;
pub mod error;
pub mod fixtures;
pub mod gradcheck;
pub mod metrics;
pub mod models;
pub mod rng;
pub mod tensor;
pub mod training;

pub use error::{Error, Result};
