//! Mutual-learning losses. Both reduce by the mean over every pixel and
//! channel.

use crate::error::Result;
use crate::scene::ImageBuffer;

/// `a * mean|c_ln - c_hr| + (1 - a) * mean|c_hn - c_hr|`.
pub fn loss_sr(c_ln: &ImageBuffer, c_hn: &ImageBuffer, c_hr: &ImageBuffer, a: f64) -> Result<f64> {
    c_ln.ensure_same_shape(c_hr, "LR-field render")?;
    c_hn.ensure_same_shape(c_hr, "HR-field render")?;
    // Skip a vanishing term entirely so the boundary cases are exact.
    let mut loss = 0.0;
    if a != 0.0 {
        loss += a * c_ln.mean_abs_diff(c_hr)?;
    }
    if a != 1.0 {
        loss += (1.0 - a) * c_hn.mean_abs_diff(c_hr)?;
    }
    Ok(loss)
}

/// Mean distance of every entry to `[0, 1]`.
pub fn loss_range(x: &ImageBuffer) -> f64 {
    range_penalty(x.as_slice())
}

/// [`loss_range`] over a raw slice of entries.
pub fn range_penalty(values: &[f64]) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    values.iter().map(|&v| (v - v.clamp(0.0, 1.0)).abs()).sum::<f64>() / values.len() as f64
}

/// Gradient of [`range_penalty`], accumulated into `grad` with weight `scale`.
pub(crate) fn range_penalty_grad(values: &[f64], scale: f64, grad: &mut [f64]) {
    let inv = scale / values.len() as f64;
    for (g, &v) in grad.iter_mut().zip(values) {
        if v > 1.0 {
            *g += inv;
        } else if v < 0.0 {
            *g -= inv;
        }
    }
}

pub(crate) fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hand_evaluated_blend() {
        let ln = ImageBuffer::filled(2, 2, 0.0);
        let hn = ImageBuffer::filled(2, 2, 1.0);
        let hr = ImageBuffer::filled(2, 2, 0.25);
        assert!((loss_sr(&ln, &hn, &hr, 0.5).unwrap() - 0.5).abs() < 1e-15);
        assert_eq!(loss_sr(&hr, &hr, &hr, 0.3).unwrap(), 0.0);
    }

    #[test]
    fn range_cases() {
        assert_eq!(loss_range(&ImageBuffer::filled(3, 3, 0.7)), 0.0);
        assert_eq!(range_penalty(&[1.5, 0.2, 0.3, 1.0]), 0.125);
        assert_eq!(range_penalty(&[-0.5, 0.5]), 0.25);
    }

    #[test]
    fn shape_mismatch() {
        let a = ImageBuffer::zeros(2, 2);
        assert!(loss_sr(&a, &a, &ImageBuffer::zeros(2, 3), 0.5).is_err());
    }
}
