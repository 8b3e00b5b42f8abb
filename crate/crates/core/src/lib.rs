//! Core library for the super-resolution training laboratory: tensors with
//! reverse-mode autodiff, bicubic resampling, the upscaler model, training
//! objectives and loop, stability analysis, and a brute-force oracle testbed.

pub mod analysis;
pub mod error;
pub mod img;
pub mod model;
pub mod objectives;
pub mod oracle;
pub mod pipeline;
pub mod resample;
pub mod tensor;
pub mod trainer;

pub use error::{Error, Result};
