//! Super-resolved neural radiance fields from low-resolution views.
//!
//! The pipeline has four stages:
//!
//! 1. [`scene`] generates posed multi-view images of an analytic scene and
//!    degrades them with an `s x s` box filter.
//! 2. [`field`] holds the radiance fields (a small LR field and a larger HR
//!    field) and the differentiable volume renderer.
//! 3. [`ccsr`] is the latent-controlled super-resolution module: a compact
//!    residual generator, one dense latent code per view, and the projection
//!    that makes every output downsample exactly to its LR input.
//! 4. [`train`] pretrains the LR field and the generator, then runs the
//!    mutual-learning loop that jointly fits the HR field and the latents.
//!
//! [`eval`] measures PSNR, LR consistency and depth-warped cross-view
//! consistency, and writes reports.

pub mod ccsr;
pub mod checkpoint;
pub mod error;
pub mod eval;
pub mod field;
pub mod nn;
pub mod rng;
pub mod scene;
pub mod train;

pub use error::{Error, Result};
