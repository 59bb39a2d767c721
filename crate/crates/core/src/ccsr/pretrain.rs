//! Generator pretraining on a procedural corpus.
//!
//! Each step crops an HR patch, degrades it with the box kernel and runs the
//! generator twice with independent random codes. The loss is the L1 error
//! of both projected outputs against the patch, a hinge that keeps the two
//! projected outputs at least `diversity_margin` apart on average, and a
//! penalty on values outside `[0, 1]`.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::backbone::{BackboneConfig, Region, SRBackbone};
use super::cem::{cem_project, cem_vjp, BlurKernel};
use super::latent::LATENT_INIT_STD;
use crate::error::{Error, Result};
use crate::nn::Adam;
use crate::rng;
use crate::scene::{box_downsample, ImageBuffer};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SrPretrainConfig {
    pub steps: usize,
    /// HR crop side; must be a multiple of the scale.
    pub crop: usize,
    pub learning_rate: f64,
    pub diversity_weight: f64,
    pub diversity_margin: f64,
    pub range_weight: f64,
}

impl Default for SrPretrainConfig {
    fn default() -> Self {
        Self {
            steps: 300,
            crop: 32,
            learning_rate: 2e-3,
            diversity_weight: 1.0,
            diversity_margin: 0.01,
            range_weight: 1.0,
        }
    }
}

/// Per-step diagnostics.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct SrPretrainStats {
    pub reconstruction: f64,
    pub diversity: f64,
    pub range: f64,
}

/// `n` anti-aliased `size x size` images of shaded, sinusoidally textured
/// discs over a dark or textured background.
pub fn texture_corpus(n: usize, size: usize, seed: u64) -> Vec<ImageBuffer> {
    (0..n).map(|i| texture_image(size, seed, i as u64)).collect()
}

fn texture_image(size: usize, seed: u64, index: u64) -> ImageBuffer {
    use std::f64::consts::TAU;
    let mut rng = rng::stream(seed, "texture_corpus", index);
    let color = |rng: &mut rand_chacha::ChaCha8Rng| [rng.gen_range(0.1..0.95), rng.gen_range(0.1..0.95), rng.gen_range(0.1..0.95)];
    let background = if rng.gen_bool(0.5) { [0.0; 3] } else { color(&mut rng) };
    let bg_freq = rng.gen_range(0.1..0.8);
    let bg_angle = rng.gen_range(0.0..TAU);
    let n_discs = rng.gen_range(1..=3);
    let discs: Vec<_> = (0..n_discs)
        .map(|_| {
            let r = rng.gen_range(0.15..0.45) * size as f64;
            (
                [rng.gen_range(0.0..size as f64), rng.gen_range(0.0..size as f64)],
                r,
                color(&mut rng),
                rng.gen_range(0.1..1.2),
                [rng.gen_range(0.0..TAU), rng.gen_range(0.0..TAU)],
            )
        })
        .collect();
    let light = {
        let a: f64 = rng.gen_range(0.0..TAU);
        [0.6 * a.cos(), 0.6 * a.sin(), 0.8]
    };
    let ss = 2;
    ImageBuffer::from_fn(size, size, |row, col| {
        let mut acc = [0.0; 3];
        for a in 0..ss {
            for b in 0..ss {
                let y = row as f64 + (a as f64 + 0.5) / ss as f64;
                let x = col as f64 + (b as f64 + 0.5) / ss as f64;
                let mut c = if background == [0.0; 3] {
                    [0.0; 3]
                } else {
                    let t = bg_freq * (x * bg_angle.cos() + y * bg_angle.sin());
                    background.map(|v| (v * (1.0 + 0.3 * t.sin())).clamp(0.0, 1.0))
                };
                for (center, r, albedo, freq, phase) in &discs {
                    let (dx, dy) = ((x - center[0]) / r, (y - center[1]) / r);
                    let d2 = dx * dx + dy * dy;
                    if d2 < 1.0 {
                        let nz = (1.0 - d2).sqrt();
                        let lambert = (dx * light[0] - dy * light[1] + nz * light[2]).max(0.0);
                        let pattern = ((freq * x + phase[0]).sin() + (freq * y + phase[1]).sin()) / 2.0;
                        let k = 0.2 + 0.8 * lambert;
                        c = albedo.map(|v| (v * (1.0 + 0.4 * pattern)).clamp(0.0, 1.0) * k);
                    }
                }
                for k in 0..3 {
                    acc[k] += c[k];
                }
            }
        }
        acc.map(|v| v / (ss * ss) as f64)
    })
}

/// Trains a fresh generator on `corpus`. Deterministic in `seed`.
pub fn pretrain_sr_backbone(
    corpus: &[ImageBuffer],
    backbone: BackboneConfig,
    config: &SrPretrainConfig,
    seed: u64,
) -> Result<SRBackbone> {
    pretrain_sr_backbone_with(corpus, backbone, config, seed, |_, _| {})
}

/// [`pretrain_sr_backbone`] with a per-step callback receiving the step
/// index and its losses.
pub fn pretrain_sr_backbone_with(
    corpus: &[ImageBuffer],
    backbone: BackboneConfig,
    config: &SrPretrainConfig,
    seed: u64,
    mut on_step: impl FnMut(usize, SrPretrainStats),
) -> Result<SRBackbone> {
    if corpus.is_empty() {
        return Err(Error::Config("generator pretraining needs a nonempty corpus".into()));
    }
    let s = backbone.scale;
    if config.crop == 0 || config.crop % s != 0 {
        return Err(Error::Config(format!("crop {} is not a positive multiple of scale {s}", config.crop)));
    }
    for (i, img) in corpus.iter().enumerate() {
        if img.height() % s != 0 || img.width() % s != 0 || img.height() < config.crop || img.width() < config.crop {
            return Err(Error::Config(format!(
                "corpus image {i} ({}x{}) is not divisible by {s} or smaller than the {} crop",
                img.height(),
                img.width(),
                config.crop
            )));
        }
    }
    let mut model = SRBackbone::new(backbone, seed)?;
    let mut adam = Adam::new(model.parameter_count(), config.learning_rate);
    let kernel = BlurKernel::box_filter(s);
    let normal = Normal::new(0.0, LATENT_INIT_STD).expect("finite std");
    let crop = config.crop;
    for step in 0..config.steps {
        let mut rng = rng::stream(seed, "sr_pretrain_step", step as u64);
        let img = &corpus[rng.gen_range(0..corpus.len())];
        let y0 = s * rng.gen_range(0..=(img.height() - crop) / s);
        let x0 = s * rng.gen_range(0..=(img.width() - crop) / s);
        let target = img.crop(y0, x0, crop, crop)?;
        let lr = box_downsample(&target, s)?;
        let n = crop * crop * 3;
        let codes: [Vec<f64>; 2] = [0, 1].map(|_| (0..n).map(|_| normal.sample(&mut rng)).collect());

        let mut outs = Vec::with_capacity(2);
        let mut tapes = Vec::with_capacity(2);
        for code in &codes {
            let (raw, tape) = model.generate_region(&lr, code, Region::full(crop, crop), true)?;
            outs.push(cem_project(&raw, &lr, &kernel)?);
            tapes.push(tape.expect("tape requested"));
        }
        let inv = 1.0 / n as f64;
        let mut grads = [vec![0.0; n], vec![0.0; n]];
        let mut stats = SrPretrainStats::default();
        for k in 0..2 {
            for (i, (&o, &t)) in outs[k].as_slice().iter().zip(target.as_slice()).enumerate() {
                stats.reconstruction += 0.5 * (o - t).abs() * inv;
                grads[k][i] += 0.5 * sign(o - t) * inv;
                let over = (o - 1.0).max(0.0) + (-o).max(0.0);
                stats.range += config.range_weight * over * inv;
                if o > 1.0 {
                    grads[k][i] += config.range_weight * inv;
                } else if o < 0.0 {
                    grads[k][i] -= config.range_weight * inv;
                }
            }
        }
        let spread = outs[0].mean_abs_diff(&outs[1])?;
        if spread < config.diversity_margin {
            stats.diversity = config.diversity_weight * (config.diversity_margin - spread);
            for (i, (a, b)) in outs[0].as_slice().iter().zip(outs[1].as_slice()).enumerate() {
                let g = config.diversity_weight * sign(a - b) * inv;
                grads[0][i] -= g;
                grads[1][i] += g;
            }
        }
        let mut grad = vec![0.0; model.parameter_count()];
        for k in 0..2 {
            cem_vjp(&mut grads[k], crop, crop, s);
            model.backward_region(&tapes[k], &grads[k], Some(&mut grad), None);
        }
        adam.update(model.parameters_mut(), &grad);
        if model.parameters().iter().any(|p| !p.is_finite()) {
            return Err(Error::Numerical(format!("generator parameters diverged at step {step}")));
        }
        on_step(step, stats);
    }
    Ok(model)
}

fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}
