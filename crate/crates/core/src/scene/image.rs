use crate::error::{Error, Result};

/// An `height x width x 3` image stored row-major with interleaved channels.
///
/// Values are nominally in `[0, 1]` but nothing enforces it; generator
/// outputs are allowed to leave the range before the range penalty applies.
#[derive(Clone, Debug, PartialEq)]
pub struct ImageBuffer {
    height: usize,
    width: usize,
    data: Vec<f64>,
}

impl ImageBuffer {
    pub const CHANNELS: usize = 3;

    pub fn zeros(height: usize, width: usize) -> Self {
        Self::filled(height, width, 0.0)
    }

    pub fn filled(height: usize, width: usize, value: f64) -> Self {
        Self {
            height,
            width,
            data: vec![value; height * width * 3],
        }
    }

    pub fn from_vec(height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != height * width * 3 {
            return Err(Error::Shape(format!(
                "expected {} values for a {height}x{width}x3 image, got {}",
                height * width * 3,
                data.len()
            )));
        }
        Ok(Self {
            height,
            width,
            data,
        })
    }

    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> [f64; 3]) -> Self {
        let mut data = Vec::with_capacity(height * width * 3);
        for y in 0..height {
            for x in 0..width {
                data.extend_from_slice(&f(y, x));
            }
        }
        Self {
            height,
            width,
            data,
        }
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn shape(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn pixel_count(&self) -> usize {
        self.height * self.width
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    fn offset(&self, y: usize, x: usize) -> usize {
        (y * self.width + x) * 3
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize) -> [f64; 3] {
        let o = self.offset(y, x);
        [self.data[o], self.data[o + 1], self.data[o + 2]]
    }

    #[inline]
    pub fn set(&mut self, y: usize, x: usize, rgb: [f64; 3]) {
        let o = self.offset(y, x);
        self.data[o..o + 3].copy_from_slice(&rgb);
    }

    pub fn ensure_same_shape(&self, other: &ImageBuffer, what: &str) -> Result<()> {
        if self.shape() != other.shape() {
            return Err(Error::Shape(format!(
                "{what}: {}x{} vs {}x{}",
                self.height, self.width, other.height, other.width
            )));
        }
        Ok(())
    }

    /// Rectangular sub-image `[y0, y0 + h) x [x0, x0 + w)`.
    pub fn crop(&self, y0: usize, x0: usize, h: usize, w: usize) -> Result<ImageBuffer> {
        if y0 + h > self.height || x0 + w > self.width {
            return Err(Error::Shape(format!(
                "crop {h}x{w} at ({y0},{x0}) exceeds {}x{}",
                self.height, self.width
            )));
        }
        let mut data = Vec::with_capacity(h * w * 3);
        for y in y0..y0 + h {
            let start = self.offset(y, x0);
            data.extend_from_slice(&self.data[start..start + w * 3]);
        }
        Ok(ImageBuffer {
            height: h,
            width: w,
            data,
        })
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> ImageBuffer {
        ImageBuffer {
            height: self.height,
            width: self.width,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn zip_map(&self, other: &ImageBuffer, f: impl Fn(f64, f64) -> f64) -> Result<ImageBuffer> {
        self.ensure_same_shape(other, "elementwise operation")?;
        Ok(ImageBuffer {
            height: self.height,
            width: self.width,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    pub fn clamp01(&self) -> ImageBuffer {
        self.map(|v| v.clamp(0.0, 1.0))
    }

    pub fn mean_abs_diff(&self, other: &ImageBuffer) -> Result<f64> {
        self.ensure_same_shape(other, "mean absolute difference")?;
        let sum: f64 = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .sum();
        Ok(sum / self.data.len().max(1) as f64)
    }

    pub fn max_abs_diff(&self, other: &ImageBuffer) -> Result<f64> {
        self.ensure_same_shape(other, "max absolute difference")?;
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max))
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

/// Averages every `s x s` block. This is the degradation operator `H`.
pub fn box_downsample(img: &ImageBuffer, s: usize) -> Result<ImageBuffer> {
    if s == 0 || img.height % s != 0 || img.width % s != 0 {
        return Err(Error::Shape(format!(
            "{}x{} image is not divisible by scale {s}",
            img.height, img.width
        )));
    }
    let (h, w) = (img.height / s, img.width / s);
    let inv = 1.0 / (s * s) as f64;
    let mut out = ImageBuffer::zeros(h, w);
    for y in 0..img.height {
        for x in 0..img.width {
            let src = img.offset(y, x);
            let dst = out.offset(y / s, x / s);
            for c in 0..3 {
                out.data[dst + c] += img.data[src + c];
            }
        }
    }
    out.data.iter_mut().for_each(|v| *v *= inv);
    Ok(out)
}

/// Repeats every pixel into an `s x s` block (nearest-neighbour upsampling).
pub fn replicate(img: &ImageBuffer, s: usize) -> ImageBuffer {
    let (h, w) = (img.height * s, img.width * s);
    let mut out = ImageBuffer::zeros(h, w);
    for y in 0..h {
        for x in 0..w {
            let src = img.offset(y / s, x / s);
            let dst = out.offset(y, x);
            out.data[dst..dst + 3].copy_from_slice(&img.data[src..src + 3]);
        }
    }
    out
}

/// Bilinear sample at continuous pixel coordinates (pixel centres at `+0.5`),
/// clamping to the border.
pub fn sample_bilinear(img: &ImageBuffer, u: f64, v: f64) -> [f64; 3] {
    let fx = (u - 0.5).clamp(0.0, (img.width - 1) as f64);
    let fy = (v - 0.5).clamp(0.0, (img.height - 1) as f64);
    let x0 = fx.floor() as usize;
    let y0 = fy.floor() as usize;
    let x1 = (x0 + 1).min(img.width - 1);
    let y1 = (y0 + 1).min(img.height - 1);
    let tx = fx - x0 as f64;
    let ty = fy - y0 as f64;
    let (a, b, c, d) = (img.get(y0, x0), img.get(y0, x1), img.get(y1, x0), img.get(y1, x1));
    let mut out = [0.0; 3];
    for k in 0..3 {
        let top = a[k] + (b[k] - a[k]) * tx;
        let bottom = c[k] + (d[k] - c[k]) * tx;
        out[k] = top + (bottom - top) * ty;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn downsample_of_constant() {
        let img = ImageBuffer::filled(4, 4, 1.0);
        let out = box_downsample(&img, 4).unwrap();
        assert_eq!(out.shape(), (1, 1));
        assert_eq!(out.get(0, 0), [1.0; 3]);
    }

    #[test]
    fn downsample_single_hot_pixel() {
        let mut img = ImageBuffer::zeros(4, 4);
        img.set(2, 1, [1.0, 1.0, 1.0]);
        let out = box_downsample(&img, 4).unwrap();
        assert_eq!(out.get(0, 0), [1.0 / 16.0; 3]);
    }

    #[test]
    fn downsample_rejects_indivisible() {
        let img = ImageBuffer::zeros(4, 4);
        assert!(matches!(box_downsample(&img, 3), Err(Error::Shape(_))));
    }

    #[test]
    fn bilinear_hits_pixel_centres() {
        let img = ImageBuffer::from_fn(3, 3, |y, x| [(y * 3 + x) as f64, 0.0, 1.0]);
        assert_eq!(sample_bilinear(&img, 1.5, 2.5)[0], 7.0);
        assert!((sample_bilinear(&img, 1.0, 0.5)[0] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn crop_matches_source() {
        let img = ImageBuffer::from_fn(6, 5, |y, x| [y as f64, x as f64, 0.0]);
        let c = img.crop(2, 1, 3, 4).unwrap();
        assert_eq!(c.get(0, 0), [2.0, 1.0, 0.0]);
        assert_eq!(c.get(2, 3), [4.0, 4.0, 0.0]);
        assert!(img.crop(4, 0, 3, 1).is_err());
    }
}
