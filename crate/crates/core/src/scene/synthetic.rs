//! Procedural scenes: textured spheres over a finite ground square, lit by a
//! directional light and rendered in closed form over a black background.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::camera::CameraPose;
use super::dataset::{MultiViewDataset, Resolution, View};
use super::image::ImageBuffer;
use super::math::{self, Vec3};
use crate::error::{Error, Result};

/// Multiplicative albedo modulation `1 + amplitude * p(x)` where `p` is the
/// mean of three axis-aligned sinusoids of the surface point.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Texture {
    pub amplitude: f64,
    /// Angular frequency in radians per world unit.
    pub frequency: f64,
}

impl Texture {
    pub const FLAT: Texture = Texture {
        amplitude: 0.0,
        frequency: 0.0,
    };
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Sphere {
    pub center: Vec3,
    pub radius: f64,
    pub albedo: [f64; 3],
    pub texture: Texture,
}

/// Horizontal square `|x|, |z| <= half_extent` at height `y`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Ground {
    pub y: f64,
    pub half_extent: f64,
    pub albedo: [f64; 3],
    pub texture: Texture,
}

/// Cameras on a horizontal arc around `target`, all looking at it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CameraRig {
    pub radius: f64,
    pub elevation_deg: f64,
    pub azimuth_start_deg: f64,
    pub azimuth_span_deg: f64,
    /// Uniform azimuth jitter in `[-jitter, jitter]` drawn from the seed.
    pub jitter_deg: f64,
    pub fov_deg: f64,
    pub target: Vec3,
    pub near: f64,
    pub far: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub spheres: Vec<Sphere>,
    pub ground: Option<Ground>,
    /// Unit direction pointing towards the light.
    pub light_dir: Vec3,
    pub ambient: f64,
    pub rig: CameraRig,
    /// LR image side length; HR images are `scale` times larger.
    pub lr_size: usize,
    pub scale: usize,
    /// Sub-samples per HR pixel side for anti-aliasing.
    pub supersample: usize,
}

impl SceneSpec {
    /// The reference toy scene: two textured spheres on a textured floor,
    /// 32x32 LR views, 4x scale.
    pub fn toy() -> Self {
        SceneSpec {
            spheres: vec![
                Sphere {
                    center: [-0.45, 0.0, 0.1],
                    radius: 0.5,
                    albedo: [0.85, 0.3, 0.25],
                    texture: Texture {
                        amplitude: 0.25,
                        frequency: 40.0,
                    },
                },
                Sphere {
                    center: [0.55, -0.15, -0.2],
                    radius: 0.35,
                    albedo: [0.25, 0.45, 0.85],
                    texture: Texture {
                        amplitude: 0.25,
                        frequency: 55.0,
                    },
                },
            ],
            ground: Some(Ground {
                y: -0.5,
                half_extent: 1.2,
                albedo: [0.7, 0.65, 0.45],
                texture: Texture {
                    amplitude: 0.3,
                    frequency: 30.0,
                },
            }),
            light_dir: math::normalize([0.4, 0.8, 0.45]),
            ambient: 0.25,
            rig: CameraRig {
                radius: 3.2,
                elevation_deg: 25.0,
                azimuth_start_deg: -60.0,
                azimuth_span_deg: 120.0,
                jitter_deg: 2.0,
                fov_deg: 50.0,
                target: [0.0, -0.2, 0.0],
                near: 1.6,
                far: 4.8,
            },
            lr_size: 32,
            scale: 4,
            supersample: 2,
        }
    }

    /// A single flat-coloured sphere, handy for shading checks.
    pub fn one_sphere() -> Self {
        SceneSpec {
            spheres: vec![Sphere {
                center: [0.0, 0.0, 0.0],
                radius: 0.6,
                albedo: [0.8, 0.5, 0.2],
                texture: Texture::FLAT,
            }],
            ground: None,
            ..SceneSpec::toy()
        }
    }

    pub fn hr_size(&self) -> usize {
        self.lr_size * self.scale
    }

    pub fn validate(&self) -> Result<()> {
        if self.spheres.is_empty() && self.ground.is_none() {
            return Err(Error::Config("scene has no objects".into()));
        }
        if self.spheres.iter().any(|s| !(s.radius > 0.0)) {
            return Err(Error::Config("sphere radius must be positive".into()));
        }
        let rig = &self.rig;
        if !(rig.radius > 1e-6) {
            return Err(Error::Config(format!("degenerate camera ring radius {}", rig.radius)));
        }
        if !(rig.fov_deg > 0.0 && rig.fov_deg < 180.0) {
            return Err(Error::Config(format!("field of view {} out of range", rig.fov_deg)));
        }
        if self.scale == 0 || self.supersample == 0 {
            return Err(Error::Config("scale and supersample must be positive".into()));
        }
        if self.lr_size < 8 {
            return Err(Error::Config(format!("LR size {} is below 8", self.lr_size)));
        }
        Ok(())
    }

    fn pose_at(&self, azimuth_deg: f64) -> Result<CameraPose> {
        let rig = &self.rig;
        let (az, el) = (azimuth_deg.to_radians(), rig.elevation_deg.to_radians());
        let offset = [rig.radius * el.cos() * az.sin(), rig.radius * el.sin(), rig.radius * el.cos() * az.cos()];
        let size = self.hr_size();
        let focal = size as f64 * 0.5 / (rig.fov_deg.to_radians() * 0.5).tan();
        let pose = CameraPose::look_at(
            math::add(rig.target, offset),
            rig.target,
            [0.0, 1.0, 0.0],
            focal,
            size,
            size,
            rig.near,
            rig.far,
        )?;
        Ok(quantize_pose(pose))
    }

    /// HR-resolution poses for `n` training views spread evenly over the arc.
    pub fn training_poses(&self, n: usize, seed: u64) -> Result<Vec<CameraPose>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let rig = &self.rig;
        (0..n)
            .map(|k| {
                let jitter = if rig.jitter_deg > 0.0 {
                    rng.gen_range(-rig.jitter_deg..=rig.jitter_deg)
                } else {
                    0.0
                };
                let az = rig.azimuth_start_deg + rig.azimuth_span_deg * (k as f64 + 0.5) / n as f64;
                self.pose_at(az + jitter)
            })
            .collect()
    }

    /// HR-resolution poses half-way between consecutive training views, for
    /// held-out evaluation.
    pub fn held_out_poses(&self, n_train: usize) -> Result<Vec<CameraPose>> {
        let rig = &self.rig;
        (1..n_train)
            .map(|k| self.pose_at(rig.azimuth_start_deg + rig.azimuth_span_deg * k as f64 / n_train as f64))
            .collect()
    }
}

/// Rounds every pose scalar to single precision so that the text format of
/// [`super::dataset::save_dataset`] round-trips exactly.
pub fn quantize_pose(mut pose: CameraPose) -> CameraPose {
    let q = |v: f64| v as f32 as f64;
    pose.position = pose.position.map(q);
    pose.orientation = pose.orientation.map(|row| row.map(q));
    pose.focal = q(pose.focal);
    pose.near = q(pose.near);
    pose.far = q(pose.far);
    pose
}

/// Per-seed texture phases; one triple per object (spheres first, then ground).
#[derive(Clone, Debug)]
struct Phases(Vec<[f64; 3]>);

impl Phases {
    fn draw(spec: &SceneSpec, seed: u64) -> Self {
        // Separate stream from the pose jitter.
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x7e57_u64.rotate_left(40));
        let n = spec.spheres.len() + 1;
        Phases(
            (0..n)
                .map(|_| {
                    [
                        rng.gen_range(0.0..std::f64::consts::TAU),
                        rng.gen_range(0.0..std::f64::consts::TAU),
                        rng.gen_range(0.0..std::f64::consts::TAU),
                    ]
                })
                .collect(),
        )
    }
}

fn textured(albedo: [f64; 3], texture: &Texture, phase: [f64; 3], p: Vec3) -> [f64; 3] {
    let f = texture.frequency;
    let pattern = ((f * p[0] + phase[0]).sin() + (f * p[1] + phase[1]).sin() + (f * p[2] + phase[2]).sin()) / 3.0;
    let m = 1.0 + texture.amplitude * pattern;
    albedo.map(|a| (a * m).clamp(0.0, 1.0))
}

/// First intersection of a unit-direction ray with the scene: `(t, normal,
/// albedo)`. Shared by the renderer and by the tests' shading checks.
pub(crate) fn intersect(spec: &SceneSpec, phases: &[[f64; 3]], origin: Vec3, dir: Vec3) -> Option<(f64, Vec3, [f64; 3])> {
    let mut best: Option<(f64, Vec3, [f64; 3])> = None;
    for (k, s) in spec.spheres.iter().enumerate() {
        let oc = math::sub(origin, s.center);
        let b = math::dot(oc, dir);
        let c = math::dot(oc, oc) - s.radius * s.radius;
        let disc = b * b - c;
        if disc < 0.0 {
            continue;
        }
        let sq = disc.sqrt();
        let t = if -b - sq > 1e-9 { -b - sq } else { -b + sq };
        if t <= 1e-9 || best.as_ref().is_some_and(|b| b.0 <= t) {
            continue;
        }
        let p = math::add(origin, math::scale(dir, t));
        let n = math::scale(math::sub(p, s.center), 1.0 / s.radius);
        best = Some((t, n, textured(s.albedo, &s.texture, phases[k], p)));
    }
    if let Some(g) = &spec.ground {
        if dir[1].abs() > 1e-12 {
            let t = (g.y - origin[1]) / dir[1];
            if t > 1e-9 && best.as_ref().map_or(true, |b| t < b.0) {
                let p = math::add(origin, math::scale(dir, t));
                if p[0].abs() <= g.half_extent && p[2].abs() <= g.half_extent {
                    let n = if origin[1] >= g.y { [0.0, 1.0, 0.0] } else { [0.0, -1.0, 0.0] };
                    best = Some((t, n, textured(g.albedo, &g.texture, phases[spec.spheres.len()], p)));
                }
            }
        }
    }
    best
}

/// Lambertian shading with ambient term; black where nothing is hit.
pub(crate) fn shade_ray(spec: &SceneSpec, phases: &[[f64; 3]], origin: Vec3, dir: Vec3) -> [f64; 3] {
    match intersect(spec, phases, origin, dir) {
        Some((_, n, albedo)) => {
            let diffuse = math::dot(n, spec.light_dir).max(0.0);
            let k = spec.ambient + (1.0 - spec.ambient) * diffuse;
            albedo.map(|a| a * k)
        }
        None => [0.0; 3],
    }
}

/// Anti-aliased closed-form render of the scene from `pose` at the pose's own
/// resolution.
pub fn render_ground_truth(spec: &SceneSpec, pose: &CameraPose, seed: u64) -> ImageBuffer {
    let phases = Phases::draw(spec, seed);
    let ss = spec.supersample;
    let inv = 1.0 / (ss * ss) as f64;
    ImageBuffer::from_fn(pose.height, pose.width, |row, col| {
        let mut acc = [0.0; 3];
        for a in 0..ss {
            for b in 0..ss {
                let u = col as f64 + (b as f64 + 0.5) / ss as f64;
                let v = row as f64 + (a as f64 + 0.5) / ss as f64;
                let c = shade_ray(spec, &phases.0, pose.position, pose.direction(u, v));
                for k in 0..3 {
                    acc[k] += c[k];
                }
            }
        }
        acc.map(|v| v * inv)
    })
}

/// Renders `n_views` HR ground-truth views of the scene on the camera arc.
/// Identical `(spec, n_views, seed)` always give identical datasets.
pub fn generate_synthetic_scene(spec: &SceneSpec, n_views: usize, seed: u64) -> Result<MultiViewDataset> {
    spec.validate()?;
    if n_views < 2 {
        return Err(Error::Config(format!("need at least 2 views, got {n_views}")));
    }
    let views = spec
        .training_poses(n_views, seed)?
        .into_iter()
        .enumerate()
        .map(|(index, pose)| View {
            index,
            image: render_ground_truth(spec, &pose, seed),
            pose,
            resolution: Resolution::Hr,
        })
        .collect();
    MultiViewDataset::new(views, spec.scale)
}

/// Ground-truth HR views at the held-out poses between training views.
pub fn generate_held_out_views(spec: &SceneSpec, n_train: usize, seed: u64) -> Result<MultiViewDataset> {
    spec.validate()?;
    let views = spec
        .held_out_poses(n_train)?
        .into_iter()
        .enumerate()
        .map(|(index, pose)| View {
            index,
            image: render_ground_truth(spec, &pose, seed),
            pose,
            resolution: Resolution::Hr,
        })
        .collect();
    MultiViewDataset::new(views, spec.scale)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_for_fixed_seed() {
        let mut spec = SceneSpec::one_sphere();
        spec.lr_size = 8;
        let a = generate_synthetic_scene(&spec, 8, 0).unwrap();
        let b = generate_synthetic_scene(&spec, 8, 0).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.views().len(), 8);
    }

    #[test]
    fn one_view_is_rejected() {
        assert!(matches!(
            generate_synthetic_scene(&SceneSpec::toy(), 1, 0),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn empty_or_degenerate_specs_are_rejected() {
        let mut spec = SceneSpec::toy();
        spec.spheres.clear();
        spec.ground = None;
        assert!(generate_synthetic_scene(&spec, 4, 0).is_err());
        let mut spec = SceneSpec::toy();
        spec.rig.radius = 0.0;
        assert!(generate_synthetic_scene(&spec, 4, 0).is_err());
    }

    #[test]
    fn quantized_poses_stay_orthonormal() {
        let spec = SceneSpec::toy();
        for pose in spec.training_poses(8, 3).unwrap() {
            pose.validate().unwrap();
        }
    }

    /// Sphere-traced reference: march along the ray with the scene's signed
    /// distance until the surface, then apply the same shading model.
    fn sphere_trace_centre(spec: &SceneSpec, origin: Vec3, dir: Vec3) -> [f64; 3] {
        let sdf = |p: Vec3| {
            spec.spheres
                .iter()
                .map(|s| math::norm(math::sub(p, s.center)) - s.radius)
                .fold(f64::INFINITY, f64::min)
        };
        let mut t = 0.0;
        for _ in 0..10_000 {
            let p = math::add(origin, math::scale(dir, t));
            let d = sdf(p);
            if d < 1e-10 {
                let s = spec
                    .spheres
                    .iter()
                    .min_by(|a, b| {
                        let da = math::norm(math::sub(p, a.center)) - a.radius;
                        let db = math::norm(math::sub(p, b.center)) - b.radius;
                        da.total_cmp(&db)
                    })
                    .unwrap();
                let n = math::normalize(math::sub(p, s.center));
                let k = spec.ambient + (1.0 - spec.ambient) * math::dot(n, spec.light_dir).max(0.0);
                return s.albedo.map(|a| a * k);
            }
            t += d;
        }
        [0.0; 3]
    }

    #[test]
    fn sphere_centre_pixel_matches_reference_marcher() {
        let mut spec = SceneSpec::toy();
        for s in &mut spec.spheres {
            s.texture = Texture::FLAT;
        }
        spec.ground = None;
        spec.lr_size = 16;
        let data = generate_synthetic_scene(&spec, 8, 0).unwrap();
        let view = &data.views()[2];
        let (u, v, _) = view.pose.project(spec.spheres[0].center).unwrap();
        let (col, row) = (u.floor() as usize, v.floor() as usize);
        let pixel = view.image.get(row, col);
        let dir = view.pose.direction(col as f64 + 0.5, row as f64 + 0.5);
        let expected = sphere_trace_centre(&spec, view.pose.position, dir);
        for k in 0..3 {
            // Sub-pixel samples see a slightly different normal.
            assert!((pixel[k] - expected[k]).abs() < 5e-3, "{pixel:?} vs {expected:?}");
        }
    }
}
