//! Consistency enforcement: the affine projection onto the set of HR images
//! that the degradation operator maps exactly to a given LR image.
//!
//! With `H` the `s x s` box average, `H Hᵀ = s⁻² I`, so the pseudo-inverse is
//! `H⁺ = Hᵀ (H Hᵀ)⁻¹ = s² Hᵀ`, which is plain pixel replication. The
//! projection `(I - H⁺H) x + H⁺ y` therefore reduces to
//! `x - replicate(box(x)) + replicate(y)`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scene::{box_downsample, replicate, ImageBuffer};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KernelKind {
    Box,
}

/// The degradation operator `H`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlurKernel {
    pub scale: usize,
    pub kind: KernelKind,
}

impl BlurKernel {
    pub fn box_filter(scale: usize) -> Self {
        Self {
            scale,
            kind: KernelKind::Box,
        }
    }

    /// `H x`.
    pub fn apply(&self, hr: &ImageBuffer) -> Result<ImageBuffer> {
        match self.kind {
            KernelKind::Box => box_downsample(hr, self.scale),
        }
    }

    /// `H⁺ y`.
    pub fn pseudo_inverse(&self, lr: &ImageBuffer) -> ImageBuffer {
        match self.kind {
            KernelKind::Box => replicate(lr, self.scale),
        }
    }

    fn check(&self, hr: &ImageBuffer, lr: &ImageBuffer) -> Result<()> {
        let s = self.scale;
        if hr.height() != lr.height() * s || hr.width() != lr.width() * s {
            return Err(Error::Shape(format!(
                "HR {}x{} is not {s}x the LR {}x{}",
                hr.height(),
                hr.width(),
                lr.height(),
                lr.width()
            )));
        }
        Ok(())
    }
}

/// `C = (I - H⁺H) Ĉ + H⁺ C_lr`: the closest image to `candidate` whose
/// degradation equals `lr` exactly.
pub fn cem_project(candidate: &ImageBuffer, lr: &ImageBuffer, kernel: &BlurKernel) -> Result<ImageBuffer> {
    kernel.check(candidate, lr)?;
    let s = kernel.scale;
    // Per-block correction: add (lr - block mean) to every pixel of the block.
    let mean = kernel.apply(candidate)?;
    let shift = lr.zip_map(&mean, |y, m| y - m)?;
    let mut out = candidate.clone();
    let w = out.width();
    let data = out.as_mut_slice();
    for (i, v) in data.iter_mut().enumerate() {
        let pixel = i / 3;
        let (y, x, c) = (pixel / w, pixel % w, i % 3);
        *v += shift.get(y / s, x / s)[c];
    }
    Ok(out)
}

/// Vector-Jacobian product of [`cem_project`] with respect to the candidate.
/// The Jacobian `I - H⁺H` is an orthogonal projector, so this applies the
/// same map to the incoming gradient: subtract each block's mean.
pub fn cem_vjp(grad: &mut [f64], height: usize, width: usize, scale: usize) {
    debug_assert_eq!(grad.len(), height * width * 3);
    let (bh, bw) = (height / scale, width / scale);
    let mut means = vec![0.0; bh * bw * 3];
    for y in 0..height {
        for x in 0..width {
            let b = ((y / scale) * bw + x / scale) * 3;
            let o = (y * width + x) * 3;
            for c in 0..3 {
                means[b + c] += grad[o + c];
            }
        }
    }
    let inv = 1.0 / (scale * scale) as f64;
    means.iter_mut().for_each(|m| *m *= inv);
    for y in 0..height {
        for x in 0..width {
            let b = ((y / scale) * bw + x / scale) * 3;
            let o = (y * width + x) * 3;
            for c in 0..3 {
                grad[o + c] -= means[b + c];
            }
        }
    }
}
