use std::path::Path;

use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::cem::{cem_project, BlurKernel};
use super::latent::LatentCode;
use crate::checkpoint::Container;
use crate::error::{Error, Result};
use crate::nn::Conv3x3;
use crate::rng;
use crate::scene::ImageBuffer;

/// LR colour (replicated to HR) plus the three latent channels.
pub const INPUT_CHANNELS: usize = 6;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BackboneConfig {
    pub scale: usize,
    pub channels: usize,
    pub n_blocks: usize,
}

impl Default for BackboneConfig {
    fn default() -> Self {
        Self {
            scale: 4,
            channels: 8,
            n_blocks: 4,
        }
    }
}

impl BackboneConfig {
    pub fn validate(&self) -> Result<()> {
        if self.scale < 2 || self.channels == 0 {
            return Err(Error::Config(format!(
                "backbone needs scale >= 2 and at least one channel, got scale={} channels={}",
                self.scale, self.channels
            )));
        }
        Ok(())
    }

    /// Receptive-field radius in HR pixels.
    pub fn halo(&self) -> usize {
        2 * self.n_blocks + 2
    }
}

/// Axis-aligned HR pixel rectangle.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Region {
    pub y0: usize,
    pub x0: usize,
    pub height: usize,
    pub width: usize,
}

impl Region {
    pub fn full(height: usize, width: usize) -> Self {
        Self {
            y0: 0,
            x0: 0,
            height,
            width,
        }
    }
}

struct Layers {
    head: Conv3x3,
    blocks: Vec<(Conv3x3, Conv3x3)>,
    tail: Conv3x3,
}

fn layers(config: &BackboneConfig) -> Layers {
    let c = config.channels;
    let head = Conv3x3 {
        cin: INPUT_CHANNELS,
        cout: c,
        offset: 0,
    };
    let mut offset = head.end();
    let mut blocks = Vec::with_capacity(config.n_blocks);
    for _ in 0..config.n_blocks {
        let a = Conv3x3 { cin: c, cout: c, offset };
        let b = Conv3x3 {
            cin: c,
            cout: c,
            offset: a.end(),
        };
        offset = b.end();
        blocks.push((a, b));
    }
    let tail = Conv3x3 { cin: c, cout: 3, offset };
    Layers { head, blocks, tail }
}

/// Residual convolutional generator: `out = replicate(lr) + G([replicate(lr), code])`
/// where `G` is a head convolution, `n_blocks` residual blocks
/// `x + conv(relu(conv(x)))` and a tail convolution back to RGB.
#[derive(Clone, Debug, PartialEq)]
pub struct SRBackbone {
    config: BackboneConfig,
    params: Vec<f64>,
}

/// Intermediate values of a windowed forward pass.
pub struct GeneratorTape {
    window: Region,
    region: Region,
    code_height: usize,
    code_width: usize,
    head_cols: Vec<f64>,
    head_pre: Vec<f64>,
    block_cols: Vec<(Vec<f64>, Vec<f64>)>,
    block_pre: Vec<Vec<f64>>,
    tail_cols: Vec<f64>,
}

impl SRBackbone {
    pub fn new(config: BackboneConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let l = layers(&config);
        let mut params = vec![0.0; l.tail.end()];
        let mut rng = rng::stream(seed, "backbone", 0);
        let mut fill = |conv: &Conv3x3, gain: f64, params: &mut [f64]| {
            let std = gain * (2.0 / (9 * conv.cin) as f64).sqrt();
            let normal = Normal::new(0.0, std).expect("finite std");
            let n = 9 * conv.cin * conv.cout;
            for p in &mut params[conv.offset..conv.offset + n] {
                *p = normal.sample(&mut rng);
            }
        };
        fill(&l.head, 1.0, &mut params);
        for (a, b) in &l.blocks {
            fill(a, 1.0, &mut params);
            fill(b, 0.1, &mut params);
        }
        fill(&l.tail, 0.1, &mut params);
        Ok(Self { config, params })
    }

    pub fn from_parameters(config: BackboneConfig, params: Vec<f64>) -> Result<Self> {
        config.validate()?;
        let expected = Self::count(&config);
        if params.len() != expected {
            return Err(Error::Shape(format!(
                "backbone expects {expected} parameters, got {}",
                params.len()
            )));
        }
        Ok(Self { config, params })
    }

    fn count(config: &BackboneConfig) -> usize {
        layers(config).tail.end()
    }

    pub fn config(&self) -> &BackboneConfig {
        &self.config
    }

    pub fn scale(&self) -> usize {
        self.config.scale
    }

    pub fn input_channels(&self) -> usize {
        INPUT_CHANNELS
    }

    pub fn parameters(&self) -> &[f64] {
        &self.params
    }

    pub fn parameters_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn parameter_count(&self) -> usize {
        self.params.len()
    }

    fn check_inputs(&self, lr: &ImageBuffer, code_hr: &[f64]) -> Result<(usize, usize)> {
        let s = self.config.scale;
        let (h, w) = (lr.height() * s, lr.width() * s);
        if code_hr.len() != h * w * 3 {
            return Err(Error::Shape(format!(
                "latent code has {} entries, expected 3x{h}x{w} for a {}x{} input at scale {s}",
                code_hr.len(),
                lr.height(),
                lr.width()
            )));
        }
        Ok((h, w))
    }

    /// Pre-projection output on `region`. Only the region plus a halo of
    /// [`BackboneConfig::halo`] pixels (clipped to the image) is evaluated,
    /// which yields exactly the values of a full-image pass.
    pub fn generate_region(
        &self,
        lr: &ImageBuffer,
        code_hr: &[f64],
        region: Region,
        keep_tape: bool,
    ) -> Result<(ImageBuffer, Option<GeneratorTape>)> {
        let (h, w) = self.check_inputs(lr, code_hr)?;
        if region.height == 0 || region.width == 0 || region.y0 + region.height > h || region.x0 + region.width > w {
            return Err(Error::Shape(format!("region {region:?} lies outside the {h}x{w} output")));
        }
        let s = self.config.scale;
        let halo = self.config.halo();
        let wy0 = region.y0.saturating_sub(halo);
        let wx0 = region.x0.saturating_sub(halo);
        let wy1 = (region.y0 + region.height + halo).min(h);
        let wx1 = (region.x0 + region.width + halo).min(w);
        let window = Region {
            y0: wy0,
            x0: wx0,
            height: wy1 - wy0,
            width: wx1 - wx0,
        };
        let (wh, ww) = (window.height, window.width);

        let mut input = Vec::with_capacity(wh * ww * INPUT_CHANNELS);
        for y in wy0..wy1 {
            for x in wx0..wx1 {
                input.extend_from_slice(&lr.get(y / s, x / s));
                let o = (y * w + x) * 3;
                input.extend_from_slice(&code_hr[o..o + 3]);
            }
        }

        let l = layers(&self.config);
        let p = &self.params;
        let (head_pre, head_cols) = l.head.forward(p, &input, wh, ww);
        let mut x: Vec<f64> = head_pre.iter().map(|v| v.max(0.0)).collect();
        let mut block_cols = Vec::new();
        let mut block_pre = Vec::new();
        for (a, b) in &l.blocks {
            let (pre, cols_a) = a.forward(p, &x, wh, ww);
            let act: Vec<f64> = pre.iter().map(|v| v.max(0.0)).collect();
            let (delta, cols_b) = b.forward(p, &act, wh, ww);
            for (xi, d) in x.iter_mut().zip(&delta) {
                *xi += d;
            }
            if keep_tape {
                block_cols.push((cols_a, cols_b));
                block_pre.push(pre);
            }
        }
        let (residual, tail_cols) = l.tail.forward(p, &x, wh, ww);

        let mut out = Vec::with_capacity(region.height * region.width * 3);
        for y in region.y0..region.y0 + region.height {
            for x in region.x0..region.x0 + region.width {
                let base = lr.get(y / s, x / s);
                let o = ((y - wy0) * ww + (x - wx0)) * 3;
                for c in 0..3 {
                    out.push(base[c] + residual[o + c]);
                }
            }
        }
        let image = ImageBuffer::from_vec(region.height, region.width, out)?;
        let tape = keep_tape.then(|| GeneratorTape {
            window,
            region,
            code_height: h,
            code_width: w,
            head_cols,
            head_pre,
            block_cols,
            block_pre,
            tail_cols,
        });
        Ok((image, tape))
    }

    /// Backpropagates `d_out` (gradient on the region output, interleaved
    /// RGB). Parameter gradients are accumulated into `grad_params` and
    /// HR-code gradients into `d_code_hr` when those are given.
    pub fn backward_region(
        &self,
        tape: &GeneratorTape,
        d_out: &[f64],
        grad_params: Option<&mut [f64]>,
        d_code_hr: Option<&mut [f64]>,
    ) {
        let GeneratorTape { window, region, .. } = *tape;
        assert_eq!(d_out.len(), region.height * region.width * 3);
        let (wh, ww) = (window.height, window.width);
        let mut d_res = vec![0.0; wh * ww * 3];
        for y in 0..region.height {
            for x in 0..region.width {
                let src = (y * region.width + x) * 3;
                let dst = ((y + region.y0 - window.y0) * ww + (x + region.x0 - window.x0)) * 3;
                d_res[dst..dst + 3].copy_from_slice(&d_out[src..src + 3]);
            }
        }
        let l = layers(&self.config);
        let p = &self.params;
        let mut grad_params = grad_params;
        let mut dx = l
            .tail
            .backward(p, &tape.tail_cols, &d_res, wh, ww, grad_params.as_deref_mut(), true)
            .expect("dx requested");
        for (i, (a, b)) in l.blocks.iter().enumerate().rev() {
            let (cols_a, cols_b) = &tape.block_cols[i];
            let mut d_act = b
                .backward(p, cols_b, &dx, wh, ww, grad_params.as_deref_mut(), true)
                .expect("dx requested");
            for (g, pre) in d_act.iter_mut().zip(&tape.block_pre[i]) {
                if *pre <= 0.0 {
                    *g = 0.0;
                }
            }
            let d_in = a
                .backward(p, cols_a, &d_act, wh, ww, grad_params.as_deref_mut(), true)
                .expect("dx requested");
            for (g, d) in dx.iter_mut().zip(&d_in) {
                *g += d;
            }
        }
        for (g, pre) in dx.iter_mut().zip(&tape.head_pre) {
            if *pre <= 0.0 {
                *g = 0.0;
            }
        }
        let want_code = d_code_hr.is_some();
        let d_input = l.head.backward(p, &tape.head_cols, &dx, wh, ww, grad_params, want_code);
        if let (Some(d_code), Some(d_input)) = (d_code_hr, d_input) {
            assert_eq!(d_code.len(), tape.code_height * tape.code_width * 3);
            for y in 0..wh {
                for x in 0..ww {
                    let src = (y * ww + x) * INPUT_CHANNELS + 3;
                    let dst = ((y + window.y0) * tape.code_width + x + window.x0) * 3;
                    for c in 0..3 {
                        d_code[dst + c] += d_input[src + c];
                    }
                }
            }
        }
    }

    pub fn to_container(&self) -> Container {
        let meta = serde_json::to_value(self.config).expect("config serializes");
        Container::new("sr_backbone", meta).with_tensor("parameters", self.params.clone())
    }

    pub fn from_container(mut c: Container) -> Result<Self> {
        let config: BackboneConfig =
            serde_json::from_value(c.meta.clone()).map_err(|e| Error::Config(format!("backbone header: {e}")))?;
        let params = c
            .take_tensor("parameters")
            .ok_or_else(|| Error::Config("backbone checkpoint has no parameters".into()))?;
        Self::from_parameters(config, params)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.to_container().save(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_container(Container::load(path, "sr_backbone")?)
    }
}

fn check_code(backbone: &SRBackbone, lr: &ImageBuffer, code: &LatentCode) -> Result<()> {
    let s = backbone.scale();
    if code.height != lr.height() * s || code.width != lr.width() * s {
        return Err(Error::Shape(format!(
            "latent code is {}x{}, expected {}x{}",
            code.height,
            code.width,
            lr.height() * s,
            lr.width() * s
        )));
    }
    Ok(())
}

/// Pre-projection super-resolved image for `lr` under `code`.
pub fn sr_generate(backbone: &SRBackbone, lr: &ImageBuffer, code: &LatentCode) -> Result<ImageBuffer> {
    check_code(backbone, lr, code)?;
    let s = backbone.scale();
    let region = Region::full(lr.height() * s, lr.width() * s);
    Ok(backbone.generate_region(lr, &code.expanded(), region, false)?.0)
}

/// Generator output projected onto the set of images consistent with `lr`.
pub fn ccsr_forward(backbone: &SRBackbone, lr: &ImageBuffer, code: &LatentCode, kernel: &BlurKernel) -> Result<ImageBuffer> {
    if kernel.scale != backbone.scale() {
        return Err(Error::Shape(format!(
            "kernel scale {} differs from backbone scale {}",
            kernel.scale,
            backbone.scale()
        )));
    }
    cem_project(&sr_generate(backbone, lr, code)?, lr, kernel)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ccsr::cem::cem_vjp;
    use crate::ccsr::latent::init_latent;
    use crate::scene::box_downsample;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn small() -> BackboneConfig {
        BackboneConfig {
            scale: 4,
            channels: 4,
            n_blocks: 2,
        }
    }

    fn random_lr(seed: u64, h: usize, w: usize) -> ImageBuffer {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        ImageBuffer::from_fn(h, w, |_, _| [rng.gen(), rng.gen(), rng.gen()])
    }

    #[test]
    fn output_shape_follows_scale() {
        let b = SRBackbone::new(small(), 0).unwrap();
        let lr = random_lr(0, 16, 16);
        let out = sr_generate(&b, &lr, &init_latent(0, 16, 16, 4, 0)).unwrap();
        assert_eq!(out.shape(), (64, 64));
    }

    #[test]
    fn deterministic_and_code_sensitive() {
        let b = SRBackbone::new(small(), 3).unwrap();
        let lr = random_lr(1, 4, 4);
        let c1 = init_latent(0, 4, 4, 4, 1);
        let c2 = init_latent(0, 4, 4, 4, 2);
        let a = sr_generate(&b, &lr, &c1).unwrap();
        assert_eq!(a, sr_generate(&b, &lr, &c1).unwrap());
        assert!(a.max_abs_diff(&sr_generate(&b, &lr, &c2).unwrap()).unwrap() > 1e-4);
    }

    #[test]
    fn wrong_code_shape_is_rejected() {
        let b = SRBackbone::new(small(), 0).unwrap();
        let lr = random_lr(0, 4, 4);
        let code = init_latent(0, 4, 2, 4, 0);
        assert!(matches!(sr_generate(&b, &lr, &code), Err(Error::Shape(_))));
    }

    #[test]
    fn region_pass_matches_full_image() {
        let b = SRBackbone::new(small(), 5).unwrap();
        let lr = random_lr(2, 8, 6);
        let code = init_latent(0, 8, 6, 4, 4);
        let full = sr_generate(&b, &lr, &code).unwrap();
        for region in [
            Region { y0: 8, x0: 4, height: 8, width: 8 },
            Region { y0: 0, x0: 0, height: 4, width: 4 },
            Region { y0: 28, x0: 16, height: 4, width: 8 },
        ] {
            let (part, _) = b.generate_region(&lr, &code.values, region, false).unwrap();
            let expected = full.crop(region.y0, region.x0, region.height, region.width).unwrap();
            assert!(part.max_abs_diff(&expected).unwrap() < 1e-12, "{region:?}");
        }
    }

    fn loss(b: &SRBackbone, lr: &ImageBuffer, code: &[f64], weights: &[f64], region: Region) -> f64 {
        let (out, _) = b.generate_region(lr, code, region, false).unwrap();
        out.as_slice().iter().zip(weights).map(|(o, w)| o * w).sum()
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut b = SRBackbone::new(small(), 7).unwrap();
        // Nudge biases away from zero so ReLU kinks are not hit exactly.
        for p in b.parameters_mut().iter_mut() {
            if *p == 0.0 {
                *p = 0.01;
            }
        }
        let lr = random_lr(3, 3, 3);
        let code = init_latent(0, 3, 3, 4, 9).values;
        let region = Region { y0: 4, x0: 2, height: 5, width: 6 };
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let weights: Vec<f64> = (0..region.height * region.width * 3).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let (_, tape) = b.generate_region(&lr, &code, region, true).unwrap();
        let mut gp = vec![0.0; b.parameter_count()];
        let mut gc = vec![0.0; code.len()];
        b.backward_region(&tape.unwrap(), &weights, Some(&mut gp), Some(&mut gc));

        let h = 1e-6;
        for i in (0..b.parameter_count()).step_by(17) {
            let mut bp = b.clone();
            bp.parameters_mut()[i] += h;
            let mut bm = b.clone();
            bm.parameters_mut()[i] -= h;
            let fd = (loss(&bp, &lr, &code, &weights, region) - loss(&bm, &lr, &code, &weights, region)) / (2.0 * h);
            assert!((fd - gp[i]).abs() < 1e-6 * (1.0 + fd.abs()), "param {i}: {fd} vs {}", gp[i]);
        }
        for i in (0..code.len()).step_by(7) {
            let mut cp = code.clone();
            cp[i] += h;
            let mut cm = code.clone();
            cm[i] -= h;
            let fd = (loss(&b, &lr, &cp, &weights, region) - loss(&b, &lr, &cm, &weights, region)) / (2.0 * h);
            assert!((fd - gc[i]).abs() < 1e-6 * (1.0 + fd.abs()), "code {i}: {fd} vs {}", gc[i]);
        }
    }

    #[test]
    fn projected_output_gradient_never_moves_the_downsample() {
        let b = SRBackbone::new(small(), 2).unwrap();
        let lr = random_lr(4, 4, 4);
        let code = init_latent(1, 4, 4, 4, 0);
        let region = Region::full(16, 16);
        let (out, tape) = b.generate_region(&lr, &code.values, region, true).unwrap();
        // d ||P(G)||^2 / d code through the projection.
        let projected = cem_project(&out, &lr, &BlurKernel::box_filter(4)).unwrap();
        let mut d: Vec<f64> = projected.as_slice().iter().map(|v| 2.0 * v).collect();
        cem_vjp(&mut d, 16, 16, 4);
        let mut gc = vec![0.0; code.values.len()];
        b.backward_region(tape.as_ref().unwrap(), &d, None, Some(&mut gc));
        assert!(gc.iter().map(|g| g.abs()).fold(0.0, f64::max) > 1e-8);

        // Gradient of one downsampled output entry with respect to the code.
        let mut d = vec![0.0; 16 * 16 * 3];
        for y in 4..8 {
            for x in 8..12 {
                d[(y * 16 + x) * 3 + 1] = 1.0 / 16.0;
            }
        }
        cem_vjp(&mut d, 16, 16, 4);
        let mut gc = vec![0.0; code.values.len()];
        b.backward_region(tape.as_ref().unwrap(), &d, None, Some(&mut gc));
        assert!(gc.iter().all(|g| g.abs() < 1e-12));
    }

    #[test]
    fn ccsr_output_is_lr_consistent() {
        let b = SRBackbone::new(small(), 1).unwrap();
        let lr = random_lr(6, 5, 3);
        let k = BlurKernel::box_filter(4);
        let a = ccsr_forward(&b, &lr, &init_latent(0, 5, 3, 4, 1), &k).unwrap();
        let z = ccsr_forward(&b, &lr, &init_latent(0, 5, 3, 4, 2), &k).unwrap();
        assert!(box_downsample(&a, 4).unwrap().max_abs_diff(&lr).unwrap() < 1e-12);
        assert!(box_downsample(&a, 4)
            .unwrap()
            .max_abs_diff(&box_downsample(&z, 4).unwrap())
            .unwrap()
            < 1e-12);
        assert!(a.max_abs_diff(&z).unwrap() > 1e-6);
    }

    #[test]
    fn checkpoint_round_trip() {
        let b = SRBackbone::new(small(), 8).unwrap();
        let bytes = b.to_container().to_bytes();
        let back = SRBackbone::from_container(Container::from_bytes(&bytes).unwrap()).unwrap();
        assert_eq!(back, b);
    }
}
