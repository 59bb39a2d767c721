//! Minimal neural-network building blocks with hand-written backward passes.
//! Parameters always live in one flat `Vec<f64>` per model; layers only
//! remember their offsets into it.

pub mod adam;
pub mod conv;
pub mod dense;
pub mod linalg;

pub use adam::Adam;
pub use conv::Conv3x3;
pub use dense::{sigmoid, softplus, Linear};
