use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::network::{FieldTape, RadianceField};
use crate::error::{Error, Result};
use crate::scene::{generate_rays, CameraPose, ImageBuffer, RayBatch};

/// Denominator floor for the depth expectation.
pub const DEPTH_EPS: f64 = 1e-10;

/// Rays rendered per batched forward pass when no gradients are needed.
const RENDER_CHUNK: usize = 1024;

/// Where samples sit inside each of the `n` equal strata of `[near, far]`.
pub enum Sampling<'a> {
    /// Stratum centres; fully deterministic.
    Midpoint,
    /// One uniform draw per stratum.
    Stratified(&'a mut ChaCha8Rng),
}

/// Composited result for one ray. Background is black, so `color` already
/// contains the weight deficit.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RenderSample {
    pub color: [f64; 3],
    /// Sum of compositing weights.
    pub opacity: f64,
    /// `sum w_k t_k / max(sum w_k, eps)`.
    pub depth: f64,
}

/// Per-sample compositing quantities along one ray.
#[derive(Clone, Debug, PartialEq)]
pub struct Composite {
    pub sample: RenderSample,
    pub weights: Vec<f64>,
    /// `T_k = exp(-sum_{j<k} sigma_j delta_j)`, evaluated before sample `k`.
    pub transmittance: Vec<f64>,
}

/// Volume-rendering quadrature: `w_k = T_k (1 - exp(-sigma_k delta_k))`,
/// `color = sum w_k c_k`.
pub fn composite(densities: &[f64], colors: &[[f64; 3]], ts: &[f64], deltas: &[f64]) -> Composite {
    let s = densities.len();
    let mut weights = Vec::with_capacity(s);
    let mut transmittance = Vec::with_capacity(s);
    let mut optical_depth = 0.0_f64;
    let mut color = [0.0; 3];
    let (mut opacity, mut depth_acc) = (0.0, 0.0);
    for k in 0..s {
        let t = (-optical_depth).exp();
        let tau = densities[k] * deltas[k];
        let w = t * -(-tau).exp_m1();
        transmittance.push(t);
        weights.push(w);
        for c in 0..3 {
            color[c] += w * colors[k][c];
        }
        opacity += w;
        depth_acc += w * ts[k];
        optical_depth += tau;
    }
    Composite {
        sample: RenderSample {
            color,
            opacity,
            depth: depth_acc / opacity.max(DEPTH_EPS),
        },
        weights,
        transmittance,
    }
}

/// Everything the backward pass needs from a training render.
pub struct RenderTape {
    field_tape: FieldTape,
    n_rays: usize,
    n_samples: usize,
    delta: f64,
    weights: Vec<f64>,
    /// `T_{k+1}` per sample.
    transmittance_after: Vec<f64>,
}

fn sample_positions(rays: &RayBatch, n: usize, sampling: &mut Sampling<'_>) -> (Vec<f64>, f64) {
    let delta = (rays.far - rays.near) / n as f64;
    let mut ts = Vec::with_capacity(rays.len() * n);
    for _ in 0..rays.len() {
        for k in 0..n {
            let u = match sampling {
                Sampling::Midpoint => 0.5,
                Sampling::Stratified(rng) => rng.gen::<f64>(),
            };
            ts.push(rays.near + (k as f64 + u) * delta);
        }
    }
    (ts, delta)
}

fn check_rays(field: &RadianceField, rays: &RayBatch) -> Result<()> {
    if !(rays.near < rays.far) {
        return Err(Error::Config(format!(
            "ray bounds need near < far, got near={} far={}",
            rays.near, rays.far
        )));
    }
    field.check_finite()
}

/// Renders every ray keeping the tape for [`backward`]. Each sample stands
/// for its stratum, so `delta` is the stratum width.
pub fn render_rays_train(field: &RadianceField, rays: &RayBatch, mut sampling: Sampling<'_>) -> Result<(Vec<RenderSample>, RenderTape)> {
    check_rays(field, rays)?;
    let n = field.config().n_samples_per_ray;
    let (ts, delta) = sample_positions(rays, n, &mut sampling);
    let mut points = Vec::with_capacity(ts.len());
    let mut dirs = Vec::with_capacity(ts.len());
    for (r, (o, d)) in rays.origins.iter().zip(&rays.directions).enumerate() {
        for &t in &ts[r * n..(r + 1) * n] {
            points.push([o[0] + t * d[0], o[1] + t * d[1], o[2] + t * d[2]]);
            dirs.push(*d);
        }
    }
    let tape = field.forward(&points, &dirs);
    let densities = tape.densities();
    let colors = tape.colors();
    let deltas = vec![delta; n];
    let mut out = Vec::with_capacity(rays.len());
    let mut weights = Vec::with_capacity(ts.len());
    let mut transmittance_after = Vec::with_capacity(ts.len());
    for r in 0..rays.len() {
        let span = r * n..(r + 1) * n;
        let c = composite(&densities[span.clone()], &colors[span.clone()], &ts[span.clone()], &deltas);
        for k in 0..n {
            transmittance_after.push(c.transmittance[k] - c.weights[k]);
        }
        weights.extend_from_slice(&c.weights);
        out.push(c.sample);
    }
    Ok((
        out,
        RenderTape {
            field_tape: tape,
            n_rays: rays.len(),
            n_samples: n,
            delta,
            weights,
            transmittance_after,
        },
    ))
}

/// Accumulates `dL/dparams` into `grad` given `dL/dcolor` per ray.
pub fn backward(field: &RadianceField, tape: &RenderTape, d_color: &[[f64; 3]], grad: &mut [f64]) {
    assert_eq!(d_color.len(), tape.n_rays);
    let n = tape.n_samples;
    let total = tape.n_rays * n;
    let mut d_density = vec![0.0; total];
    let mut d_sample_color = vec![0.0; total * 3];
    for (r, g) in d_color.iter().enumerate() {
        // suffix = sum_{j > k} w_j (g . c_j)
        let mut suffix = 0.0;
        for k in (0..n).rev() {
            let i = r * n + k;
            let c = tape.field_tape.color(i);
            let gc = g[0] * c[0] + g[1] * c[1] + g[2] * c[2];
            let w = tape.weights[i];
            d_density[i] = tape.delta * (tape.transmittance_after[i] * gc - suffix);
            suffix += w * gc;
            for ch in 0..3 {
                d_sample_color[3 * i + ch] = w * g[ch];
            }
        }
    }
    field.backward(&tape.field_tape, &d_density, &d_sample_color, grad);
}

/// Renders rays without keeping gradients, in fixed-size chunks.
pub fn render_rays(field: &RadianceField, rays: &RayBatch, sampling: Sampling<'_>) -> Result<Vec<RenderSample>> {
    check_rays(field, rays)?;
    let mut sampling = sampling;
    let mut out = Vec::with_capacity(rays.len());
    let idx: Vec<usize> = (0..rays.len()).collect();
    for chunk in idx.chunks(RENDER_CHUNK) {
        let sub = rays.select(chunk);
        let s = match &mut sampling {
            Sampling::Midpoint => Sampling::Midpoint,
            Sampling::Stratified(rng) => Sampling::Stratified(rng),
        };
        out.extend(render_rays_train(field, &sub, s)?.0);
    }
    Ok(out)
}

/// Colour, depth expectation and opacity maps of one view.
#[derive(Clone, Debug)]
pub struct RenderedView {
    pub color: ImageBuffer,
    pub depth: Vec<f64>,
    pub opacity: Vec<f64>,
}

/// Midpoint-sampled render of `pose` at `target_h x target_w`.
pub fn render_view(field: &RadianceField, pose: &CameraPose, target_h: usize, target_w: usize) -> Result<RenderedView> {
    let rays = generate_rays(pose, target_h, target_w, 0);
    let samples = render_rays(field, &rays, Sampling::Midpoint)?;
    let data = samples.iter().flat_map(|s| s.color).collect();
    Ok(RenderedView {
        color: ImageBuffer::from_vec(target_h, target_w, data)?,
        depth: samples.iter().map(|s| s.depth).collect(),
        opacity: samples.iter().map(|s| s.opacity).collect(),
    })
}

pub fn render_image(field: &RadianceField, pose: &CameraPose, target_h: usize, target_w: usize) -> Result<ImageBuffer> {
    Ok(render_view(field, pose, target_h, target_w)?.color)
}
