use std::fmt;

use serde::{Deserialize, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::scene::{box_downsample, ImageBuffer};

/// Peak signal-to-noise ratio at unit peak, or `Identical` when the MSE is
/// exactly zero.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Psnr {
    Identical,
    Db(f64),
}

impl Psnr {
    /// Decibels, with `Identical` mapped to infinity.
    pub fn db(self) -> f64 {
        match self {
            Psnr::Identical => f64::INFINITY,
            Psnr::Db(v) => v,
        }
    }
}

impl fmt::Display for Psnr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Psnr::Identical => f.write_str("identical"),
            Psnr::Db(v) => write!(f, "{v:.3}"),
        }
    }
}

impl Serialize for Psnr {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            Psnr::Identical => s.serialize_str("identical"),
            Psnr::Db(v) => s.serialize_f64(*v),
        }
    }
}

impl<'de> Deserialize<'de> for Psnr {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Num(f64),
            Text(String),
        }
        match Raw::deserialize(d)? {
            Raw::Num(v) => Ok(Psnr::Db(v)),
            Raw::Text(t) if t == "identical" => Ok(Psnr::Identical),
            Raw::Text(t) => Err(serde::de::Error::custom(format!("unexpected PSNR value {t:?}"))),
        }
    }
}

pub fn mse(a: &ImageBuffer, b: &ImageBuffer) -> Result<f64> {
    a.ensure_same_shape(b, "PSNR operand")?;
    let n = a.as_slice().len();
    Ok(a.as_slice().iter().zip(b.as_slice()).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / n as f64)
}

/// `10 log10(1 / MSE)`.
pub fn psnr(a: &ImageBuffer, b: &ImageBuffer) -> Result<Psnr> {
    let m = mse(a, b)?;
    Ok(if m == 0.0 { Psnr::Identical } else { Psnr::Db(-10.0 * m.log10()) })
}

/// Mean PSNR over image pairs, `Identical` only if every pair is.
pub fn mean_psnr<'a>(pairs: impl IntoIterator<Item = (&'a ImageBuffer, &'a ImageBuffer)>) -> Result<Psnr> {
    let mut finite = Vec::new();
    for (a, b) in pairs {
        if let Psnr::Db(v) = psnr(a, b)? {
            finite.push(v);
        }
    }
    if finite.is_empty() {
        return Ok(Psnr::Identical);
    }
    Ok(Psnr::Db(finite.iter().sum::<f64>() / finite.len() as f64))
}

/// Largest absolute entry of `box_downsample(hr, s) - lr`.
pub fn lr_consistency_residual(hr: &ImageBuffer, lr: &ImageBuffer, s: usize) -> Result<f64> {
    if hr.height() != lr.height() * s || hr.width() != lr.width() * s {
        return Err(Error::Shape(format!(
            "HR {}x{} is not {s}x the LR {}x{}",
            hr.height(),
            hr.width(),
            lr.height(),
            lr.width()
        )));
    }
    box_downsample(hr, s)?.max_abs_diff(lr)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn psnr_cases() {
        let a = ImageBuffer::filled(4, 4, 0.3);
        assert_eq!(psnr(&a, &a).unwrap(), Psnr::Identical);
        let b = ImageBuffer::filled(4, 4, 0.4);
        assert!((psnr(&a, &b).unwrap().db() - 20.0).abs() < 1e-9);
        let zero = ImageBuffer::zeros(4, 4);
        assert_eq!(psnr(&zero, &ImageBuffer::filled(4, 4, 1.0)).unwrap(), Psnr::Db(0.0));
        assert!(psnr(&a, &ImageBuffer::zeros(4, 5)).is_err());
    }

    #[test]
    fn psnr_serializes_sentinel() {
        assert_eq!(serde_json::to_string(&Psnr::Identical).unwrap(), "\"identical\"");
        let back: Psnr = serde_json::from_str("31.5").unwrap();
        assert_eq!(back, Psnr::Db(31.5));
    }

    #[test]
    fn residual_of_single_pixel_bump() {
        let lr = ImageBuffer::from_fn(2, 2, |y, x| [0.1 * (y + x) as f64, 0.2, 0.3]);
        let mut hr = crate::scene::replicate(&lr, 4);
        assert!(lr_consistency_residual(&hr, &lr, 4).unwrap() < 1e-15);
        let mut p = hr.get(5, 2);
        p[1] += 0.08;
        hr.set(5, 2, p);
        assert!((lr_consistency_residual(&hr, &lr, 4).unwrap() - 0.08 / 16.0).abs() < 1e-15);
    }
}
