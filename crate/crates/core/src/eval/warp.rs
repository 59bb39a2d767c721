//! Depth-based warping between views and the warped-consistency metric.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::{render_view, RadianceField};
use crate::scene::image::sample_bilinear;
use crate::scene::{math, CameraPose, ImageBuffer};

/// Masking thresholds for [`build_warp`].
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct WarpOptions {
    /// Minimum total compositing weight for a depth to be trusted.
    pub min_weight: f64,
    /// Maximum relative disagreement between the reprojected distance and
    /// the target view's own depth.
    pub depth_tolerance: f64,
}

impl Default for WarpOptions {
    fn default() -> Self {
        Self {
            min_weight: 0.1,
            depth_tolerance: 0.05,
        }
    }
}

/// Expected ray distance and total weight per pixel of one view.
#[derive(Clone, Debug)]
pub struct DepthMap {
    pub pose: CameraPose,
    pub height: usize,
    pub width: usize,
    pub depth: Vec<f64>,
    pub weight: Vec<f64>,
}

impl DepthMap {
    /// Midpoint-sampled depth expectation of `field` from `pose`.
    pub fn render(field: &RadianceField, pose: &CameraPose, height: usize, width: usize) -> Result<Self> {
        let view = render_view(field, pose, height, width)?;
        Ok(Self {
            pose: pose.rescaled(width, height),
            height,
            width,
            depth: view.depth,
            weight: view.opacity,
        })
    }

    fn nearest(&self, u: f64, v: f64) -> Option<usize> {
        if !(u >= 0.0 && v >= 0.0 && u < self.width as f64 && v < self.height as f64) {
            return None;
        }
        Some(v as usize * self.width + u as usize)
    }
}

/// Per-pixel correspondence from a source view into a target view.
#[derive(Clone, Debug, PartialEq)]
pub struct WarpField {
    pub source_view: usize,
    pub target_view: usize,
    pub height: usize,
    pub width: usize,
    /// Continuous target-view coordinates `(u, v)` per source pixel.
    pub mapping: Vec<[f64; 2]>,
    pub valid: Vec<bool>,
}

impl WarpField {
    pub fn identity(source_view: usize, target_view: usize, height: usize, width: usize) -> Self {
        let mapping = (0..height)
            .flat_map(|y| (0..width).map(move |x| [x as f64 + 0.5, y as f64 + 0.5]))
            .collect();
        Self {
            source_view,
            target_view,
            height,
            width,
            mapping,
            valid: vec![true; height * width],
        }
    }

    pub fn valid_fraction(&self) -> f64 {
        self.valid.iter().filter(|&&v| v).count() as f64 / self.valid.len().max(1) as f64
    }

    /// Mean distance in pixels between each valid source pixel and its
    /// target location; `None` with an empty mask.
    pub fn mean_displacement(&self) -> Option<f64> {
        let mut sum = 0.0;
        let mut n = 0usize;
        for (i, (m, &ok)) in self.mapping.iter().zip(&self.valid).enumerate() {
            if ok {
                let (x, y) = ((i % self.width) as f64 + 0.5, (i / self.width) as f64 + 0.5);
                sum += ((m[0] - x).powi(2) + (m[1] - y).powi(2)).sqrt();
                n += 1;
            }
        }
        (n > 0).then(|| sum / n as f64)
    }
}

fn same_camera(a: &CameraPose, b: &CameraPose) -> bool {
    a.position == b.position && a.orientation == b.orientation
}

/// Warp from precomputed depth maps of both views (same resolution).
pub fn build_warp_from_depth(
    source: &DepthMap,
    target: &DepthMap,
    source_view: usize,
    target_view: usize,
    options: &WarpOptions,
) -> Result<WarpField> {
    let (h, w) = (source.height, source.width);
    if (target.height, target.width) != (h, w) || source.depth.len() != h * w || target.depth.len() != h * w {
        return Err(Error::Shape("depth maps of a warp pair must share one resolution".into()));
    }
    if same_camera(&source.pose, &target.pose) {
        return Ok(WarpField::identity(source_view, target_view, h, w));
    }
    let mut mapping = Vec::with_capacity(h * w);
    let mut valid = Vec::with_capacity(h * w);
    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            let dir = source.pose.direction(x as f64 + 0.5, y as f64 + 0.5);
            let point = math::add(source.pose.position, math::scale(dir, source.depth[i]));
            let Some((u, v, dist)) = target.pose.project(point) else {
                mapping.push([f64::NAN, f64::NAN]);
                valid.push(false);
                continue;
            };
            mapping.push([u, v]);
            let ok = source.weight[i] >= options.min_weight
                && match target.nearest(u, v) {
                    Some(j) => {
                        target.weight[j] >= options.min_weight
                            && (dist - target.depth[j]).abs() <= options.depth_tolerance * target.depth[j]
                    }
                    None => false,
                };
            valid.push(ok);
        }
    }
    Ok(WarpField {
        source_view,
        target_view,
        height: h,
        width: w,
        mapping,
        valid,
    })
}

/// Back-projects every pixel of view `i` through the field's depth
/// expectation and reprojects it into view `j`. Pixels are masked when they
/// land outside view `j`, carry total weight below `min_weight`, or fail the
/// relative depth check against view `j`'s own depth.
#[allow(clippy::too_many_arguments)]
pub fn build_warp(
    field: &RadianceField,
    pose_i: &CameraPose,
    pose_j: &CameraPose,
    target_h: usize,
    target_w: usize,
    source_view: usize,
    target_view: usize,
    options: &WarpOptions,
) -> Result<WarpField> {
    if same_camera(pose_i, pose_j) {
        return Ok(WarpField::identity(source_view, target_view, target_h, target_w));
    }
    let a = DepthMap::render(field, pose_i, target_h, target_w)?;
    let b = DepthMap::render(field, pose_j, target_h, target_w)?;
    build_warp_from_depth(&a, &b, source_view, target_view, options)
}

/// A distance between corresponding pixel sets; lower is more similar.
pub trait PixelDistance {
    fn name(&self) -> &str;
    fn distance(&self, a: &[[f64; 3]], b: &[[f64; 3]]) -> f64;
}

/// Mean absolute difference over pixels and channels.
#[derive(Clone, Copy, Debug, Default)]
pub struct MaskedMae;

impl PixelDistance for MaskedMae {
    fn name(&self) -> &str {
        "masked_mae"
    }

    fn distance(&self, a: &[[f64; 3]], b: &[[f64; 3]]) -> f64 {
        let sum: f64 = a
            .iter()
            .zip(b)
            .map(|(p, q)| (p[0] - q[0]).abs() + (p[1] - q[1]).abs() + (p[2] - q[2]).abs())
            .sum();
        sum / (3 * a.len()) as f64
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Consistency {
    Value(f64),
    /// The warp has no valid pixel.
    NoOverlap,
}

impl Consistency {
    pub fn value(self) -> Option<f64> {
        match self {
            Consistency::Value(v) => Some(v),
            Consistency::NoOverlap => None,
        }
    }
}

/// Distance between `img_i` and `img_j` resampled (bilinearly) through the
/// warp, over valid pixels only.
pub fn warped_consistency(
    img_i: &ImageBuffer,
    img_j: &ImageBuffer,
    warp: &WarpField,
    metric: &dyn PixelDistance,
) -> Result<Consistency> {
    if img_i.shape() != (warp.height, warp.width) {
        return Err(Error::Shape(format!(
            "source image {}x{} does not match the {}x{} warp",
            img_i.height(),
            img_i.width(),
            warp.height,
            warp.width
        )));
    }
    let mut a = Vec::new();
    let mut b = Vec::new();
    for (i, (m, &ok)) in warp.mapping.iter().zip(&warp.valid).enumerate() {
        if ok {
            a.push(img_i.get(i / warp.width, i % warp.width));
            b.push(sample_bilinear(img_j, m[0], m[1]));
        }
    }
    if a.is_empty() {
        return Ok(Consistency::NoOverlap);
    }
    Ok(Consistency::Value(metric.distance(&a, &b)))
}

/// Disparity bucket of a view pair by mean warp displacement.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum DisparityBucket {
    #[serde(rename = "3 pix")]
    Small,
    #[serde(rename = "10 pix")]
    Medium,
    #[serde(rename = "15 pix")]
    Large,
}

impl DisparityBucket {
    pub const ALL: [DisparityBucket; 3] = [DisparityBucket::Small, DisparityBucket::Medium, DisparityBucket::Large];

    /// Edges `[0, 6.5)`, `[6.5, 12.5)`, `[12.5, inf)` in pixels.
    pub fn from_displacement(pixels: f64) -> Self {
        if pixels < 6.5 {
            DisparityBucket::Small
        } else if pixels < 12.5 {
            DisparityBucket::Medium
        } else {
            DisparityBucket::Large
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            DisparityBucket::Small => "3 pix",
            DisparityBucket::Medium => "10 pix",
            DisparityBucket::Large => "15 pix",
        }
    }
}
