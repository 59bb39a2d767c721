use super::math::{self, Mat3, Vec3};
use crate::error::{Error, Result};

/// Pinhole camera with a world-to-camera rotation.
///
/// Convention: right-handed camera frame, `+x` right, `+y` up, looking down
/// `-z`. Image rows grow downwards and pixel centres sit at half-integer
/// coordinates, so pixel `(row, col)` has centre `(col + 0.5, row + 0.5)`.
#[derive(Clone, Debug, PartialEq)]
pub struct CameraPose {
    pub position: Vec3,
    /// Rows are the camera axes expressed in world coordinates.
    pub orientation: Mat3,
    pub focal: f64,
    pub width: usize,
    pub height: usize,
    pub near: f64,
    pub far: f64,
}

impl CameraPose {
    pub fn new(
        position: Vec3,
        orientation: Mat3,
        focal: f64,
        width: usize,
        height: usize,
        near: f64,
        far: f64,
    ) -> Result<Self> {
        let pose = Self {
            position,
            orientation,
            focal,
            width,
            height,
            near,
            far,
        };
        pose.validate()?;
        Ok(pose)
    }

    /// Camera at `position` looking at `target` with `up` roughly vertical.
    #[allow(clippy::too_many_arguments)]
    pub fn look_at(
        position: Vec3,
        target: Vec3,
        up: Vec3,
        focal: f64,
        width: usize,
        height: usize,
        near: f64,
        far: f64,
    ) -> Result<Self> {
        let back = math::sub(position, target);
        if math::norm(back) < 1e-12 {
            return Err(Error::Config("camera position coincides with its target".into()));
        }
        let z = math::normalize(back);
        let x = math::cross(up, z);
        if math::norm(x) < 1e-12 {
            return Err(Error::Config("camera up vector is parallel to the view axis".into()));
        }
        let x = math::normalize(x);
        let y = math::cross(z, x);
        Self::new(position, [x, y, z], focal, width, height, near, far)
    }

    pub fn validate(&self) -> Result<()> {
        let r = &self.orientation;
        for i in 0..3 {
            for j in 0..3 {
                let expected = if i == j { 1.0 } else { 0.0 };
                if (math::dot(r[i], r[j]) - expected).abs() > 1e-6 {
                    return Err(Error::Config("camera orientation is not orthonormal".into()));
                }
            }
        }
        if !(self.focal > 0.0) {
            return Err(Error::Config(format!("focal must be positive, got {}", self.focal)));
        }
        if self.width < 8 || self.height < 8 {
            return Err(Error::Config(format!(
                "camera resolution {}x{} is below the 8x8 minimum",
                self.width, self.height
            )));
        }
        if !(self.near > 0.0 && self.near < self.far) {
            return Err(Error::Config(format!(
                "need 0 < near < far, got near={} far={}",
                self.near, self.far
            )));
        }
        Ok(())
    }

    /// The same camera with intrinsics rescaled to another resolution.
    pub fn rescaled(&self, width: usize, height: usize) -> CameraPose {
        CameraPose {
            focal: self.focal * width as f64 / self.width as f64,
            width,
            height,
            ..self.clone()
        }
    }

    /// Unit optical axis in world coordinates.
    pub fn forward(&self) -> Vec3 {
        math::scale(self.orientation[2], -1.0)
    }

    /// World point to `(u, v, distance)` in this camera's pixel grid. `None`
    /// for points on or behind the image plane.
    pub fn project(&self, point: Vec3) -> Option<(f64, f64, f64)> {
        let rel = math::sub(point, self.position);
        let cam = math::mat_vec(&self.orientation, rel);
        if cam[2] >= -1e-12 {
            return None;
        }
        let depth = -cam[2];
        let u = self.width as f64 * 0.5 + self.focal * cam[0] / depth;
        let v = self.height as f64 * 0.5 - self.focal * cam[1] / depth;
        Some((u, v, math::norm(rel)))
    }

    /// World-space unit direction through continuous pixel coordinates `(u, v)`.
    pub fn direction(&self, u: f64, v: f64) -> Vec3 {
        let d_cam = [
            (u - self.width as f64 * 0.5) / self.focal,
            -(v - self.height as f64 * 0.5) / self.focal,
            -1.0,
        ];
        math::normalize(math::mat_t_vec(&self.orientation, d_cam))
    }
}

/// One ray per pixel for a single view.
#[derive(Clone, Debug)]
pub struct RayBatch {
    pub origins: Vec<Vec3>,
    pub directions: Vec<Vec3>,
    /// `(u, v)` sub-pixel centres in the target grid.
    pub pixel_coords: Vec<[f64; 2]>,
    pub view_index: usize,
    pub near: f64,
    pub far: f64,
}

impl RayBatch {
    pub fn len(&self) -> usize {
        self.origins.len()
    }

    pub fn is_empty(&self) -> bool {
        self.origins.is_empty()
    }

    /// Rays at the given indices, preserving order.
    pub fn select(&self, indices: &[usize]) -> RayBatch {
        RayBatch {
            origins: indices.iter().map(|&i| self.origins[i]).collect(),
            directions: indices.iter().map(|&i| self.directions[i]).collect(),
            pixel_coords: indices.iter().map(|&i| self.pixel_coords[i]).collect(),
            view_index: self.view_index,
            near: self.near,
            far: self.far,
        }
    }
}

/// Rays through the centre of every pixel of a `target_h x target_w` grid
/// for the same camera. The focal length is rescaled by
/// `target_w / pose.width`, so a grid `s` times finer subdivides every
/// original pixel into `s x s` sub-pixels.
pub fn generate_rays(pose: &CameraPose, target_h: usize, target_w: usize, view_index: usize) -> RayBatch {
    let cam = pose.rescaled(target_w, target_h);
    let n = target_h * target_w;
    let mut origins = Vec::with_capacity(n);
    let mut directions = Vec::with_capacity(n);
    let mut pixel_coords = Vec::with_capacity(n);
    for row in 0..target_h {
        for col in 0..target_w {
            let (u, v) = (col as f64 + 0.5, row as f64 + 0.5);
            origins.push(pose.position);
            directions.push(cam.direction(u, v));
            pixel_coords.push([u, v]);
        }
    }
    RayBatch {
        origins,
        directions,
        pixel_coords,
        view_index,
        near: pose.near,
        far: pose.far,
    }
}

/// `frames` poses along the polyline through `keyframes`: centres and clip
/// planes are interpolated linearly, orientations by blending rotation rows
/// and re-orthonormalising. Intrinsics come from the first keyframe.
pub fn interpolate_poses(keyframes: &[CameraPose], frames: usize) -> Result<Vec<CameraPose>> {
    let first = keyframes
        .first()
        .ok_or_else(|| Error::Config("a pose path needs at least one keyframe".into()))?;
    let last = keyframes.len() - 1;
    (0..frames)
        .map(|f| {
            let u = if frames > 1 { f as f64 * last as f64 / (frames - 1) as f64 } else { 0.0 };
            let k = (u.floor() as usize).min(last.saturating_sub(1));
            let (a, b) = (&keyframes[k], &keyframes[(k + 1).min(last)]);
            let w = (u - k as f64).clamp(0.0, 1.0);
            let lerp = |x: Vec3, y: Vec3| math::add(math::scale(x, 1.0 - w), math::scale(y, w));
            let z = math::normalize(lerp(a.orientation[2], b.orientation[2]));
            let x0 = lerp(a.orientation[0], b.orientation[0]);
            let x = math::normalize(math::sub(x0, math::scale(z, math::dot(x0, z))));
            let y = math::cross(z, x);
            CameraPose::new(
                lerp(a.position, b.position),
                [x, y, z],
                first.focal,
                first.width,
                first.height,
                a.near * (1.0 - w) + b.near * w,
                a.far * (1.0 - w) + b.far * w,
            )
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn axis_pose(focal: f64, size: usize) -> CameraPose {
        let identity = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];
        CameraPose::new([0.0, 0.0, 5.0], identity, focal, size, size, 1.0, 9.0).unwrap()
    }

    #[test]
    fn centre_ray_is_optical_axis() {
        // Odd resolution puts a pixel centre exactly on the principal point.
        let pose = axis_pose(20.0, 9);
        let rays = generate_rays(&pose, 9, 9, 0);
        let d = rays.directions[4 * 9 + 4];
        let axis = pose.forward();
        for k in 0..3 {
            assert!((d[k] - axis[k]).abs() < 1e-12);
        }
    }

    #[test]
    fn corner_direction_matches_pinhole_formula() {
        let pose = axis_pose(100.0, 100);
        let rays = generate_rays(&pose, 100, 100, 0);
        // Independent oracle: camera-frame direction ((x - cx)/f, -(y - cy)/f, -1).
        let (cx, cy, f) = (50.0, 50.0, 100.0);
        let (u, v) = (0.5, 0.5);
        let raw: [f64; 3] = [(u - cx) / f, -(v - cy) / f, -1.0];
        let n = (raw[0] * raw[0] + raw[1] * raw[1] + raw[2] * raw[2]).sqrt();
        let d = rays.directions[0];
        for k in 0..3 {
            assert!((d[k] - raw[k] / n).abs() < 1e-12);
        }
        assert!((raw[0] - (-0.495)).abs() < 1e-12);
    }

    #[test]
    fn fine_grid_brackets_coarse_ray() {
        let pose = axis_pose(12.0, 8);
        let coarse = generate_rays(&pose, 8, 8, 0);
        let fine = generate_rays(&pose, 32, 32, 0);
        let (row, col) = (3, 5);
        let d = coarse.directions[row * 8 + col];
        let mut xs = vec![];
        let mut ys = vec![];
        for dy in 0..4 {
            for dx in 0..4 {
                let f = fine.directions[(row * 4 + dy) * 32 + col * 4 + dx];
                xs.push(f[0] / -f[2]);
                ys.push(f[1] / -f[2]);
            }
        }
        let (x, y) = (d[0] / -d[2], d[1] / -d[2]);
        let min = |v: &[f64]| v.iter().cloned().fold(f64::INFINITY, f64::min);
        let max = |v: &[f64]| v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        assert!(min(&xs) < x && x < max(&xs));
        assert!(min(&ys) < y && y < max(&ys));
    }

    #[test]
    fn projection_inverts_direction() {
        let pose = CameraPose::look_at([3.0, 1.0, 2.0], [0.0, 0.0, 0.0], [0.0, 1.0, 0.0], 40.0, 32, 24, 0.5, 8.0)
            .unwrap();
        let d = pose.direction(7.25, 19.5);
        let p = math::add(pose.position, math::scale(d, 2.5));
        let (u, v, dist) = pose.project(p).unwrap();
        assert!((u - 7.25).abs() < 1e-9 && (v - 19.5).abs() < 1e-9 && (dist - 2.5).abs() < 1e-9);
    }

    #[test]
    fn rejects_bad_intrinsics() {
        let identity = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];
        assert!(CameraPose::new([0.0; 3], identity, 10.0, 8, 8, 2.0, 1.0).is_err());
        assert!(CameraPose::new([0.0; 3], identity, 10.0, 4, 8, 1.0, 2.0).is_err());
        assert!(CameraPose::new([0.0; 3], identity, -1.0, 8, 8, 1.0, 2.0).is_err());
        let skew = [[1.0, 0.1, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];
        assert!(CameraPose::new([0.0; 3], skew, 10.0, 8, 8, 1.0, 2.0).is_err());
    }

    #[test]
    fn pose_path_hits_keyframes() {
        let a = CameraPose::look_at([0.0, 0.0, 4.0], [0.0; 3], [0.0, 1.0, 0.0], 10.0, 8, 8, 1.0, 6.0).unwrap();
        let b = CameraPose::look_at([4.0, 0.0, 0.0], [0.0; 3], [0.0, 1.0, 0.0], 10.0, 8, 8, 1.0, 6.0).unwrap();
        let path = interpolate_poses(&[a.clone(), b.clone()], 5).unwrap();
        assert_eq!(path.len(), 5);
        assert_eq!(path[0], a);
        for r in 0..3 {
            for c in 0..3 {
                assert!((path[4].orientation[r][c] - b.orientation[r][c]).abs() < 1e-12);
            }
        }
        let m = &path[2].orientation;
        for r in 0..3 {
            assert!((math::norm(m[r]) - 1.0).abs() < 1e-12);
        }
        assert!(interpolate_poses(&[], 3).is_err());
    }
}
