//! Table-to-text generation with fused field/value attention and gated
//! orthogonalization, on a small reverse-mode autodiff engine.

pub mod attention;
pub mod autodiff;
pub mod cli;
pub mod data;
pub mod decoder;
pub mod encoder;
pub mod error;
pub mod gating;
pub mod layers;
pub mod metrics;
pub mod model;
pub mod params;
pub mod training;

pub use error::ModelError;
