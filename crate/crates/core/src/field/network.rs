use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::encoding::{encoded_dim, positional_encode_into};
use crate::checkpoint::Container;
use crate::error::{Error, Result};
use crate::nn::{sigmoid, softplus, Linear};
use crate::scene::Resolution;

/// Architecture of a radiance field.
///
/// The network is an encoded-position trunk of `n_layers` ReLU layers of
/// `hidden_width` units, a softplus density head on the trunk output and a
/// sigmoid colour head on `[trunk, view direction]`.
///
/// The shipped defaults ([`FieldConfig::lr_default`], [`FieldConfig::hr_default`])
/// are free choices sized for a single CPU core: the LR field uses fewer
/// octaves and roughly a quarter of the HR field's parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FieldConfig {
    pub n_frequencies: usize,
    pub hidden_width: usize,
    pub n_layers: usize,
    pub n_samples_per_ray: usize,
    pub role: Resolution,
}

impl FieldConfig {
    pub fn lr_default() -> Self {
        FieldConfig {
            n_frequencies: 6,
            hidden_width: 32,
            n_layers: 3,
            n_samples_per_ray: 64,
            role: Resolution::Lr,
        }
    }

    pub fn hr_default() -> Self {
        FieldConfig {
            n_frequencies: 10,
            hidden_width: 64,
            n_layers: 3,
            n_samples_per_ray: 64,
            role: Resolution::Hr,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.hidden_width == 0 || self.n_layers == 0 || self.n_samples_per_ray == 0 {
            return Err(Error::Config(
                "field width, depth and samples per ray must be positive".into(),
            ));
        }
        Ok(())
    }

    fn layout(&self) -> Layout {
        let mut offset = 0;
        let mut trunk = Vec::with_capacity(self.n_layers);
        let mut in_dim = encoded_dim(self.n_frequencies);
        for _ in 0..self.n_layers {
            let l = Linear {
                in_dim,
                out_dim: self.hidden_width,
                offset,
            };
            offset = l.end();
            trunk.push(l);
            in_dim = self.hidden_width;
        }
        let density = Linear {
            in_dim,
            out_dim: 1,
            offset,
        };
        let color = Linear {
            in_dim: in_dim + 3,
            out_dim: 3,
            offset: density.end(),
        };
        Layout {
            trunk,
            density,
            color,
        }
    }

    pub fn parameter_count(&self) -> usize {
        self.layout().color.end()
    }
}

#[derive(Clone, Debug)]
struct Layout {
    trunk: Vec<Linear>,
    density: Linear,
    color: Linear,
}

/// A density + colour field with a flat parameter vector.
#[derive(Clone, Debug)]
pub struct RadianceField {
    config: FieldConfig,
    layout: Layout,
    params: Vec<f64>,
}

impl PartialEq for RadianceField {
    fn eq(&self, other: &Self) -> bool {
        self.config == other.config && self.params == other.params
    }
}

/// Intermediate values of a batched forward pass, consumed by
/// [`RadianceField::backward`].
pub struct FieldTape {
    n: usize,
    /// Input of every trunk layer (the encoding first), then the trunk output.
    activations: Vec<Vec<f64>>,
    color_input: Vec<f64>,
    raw_density: Vec<f64>,
    colors: Vec<f64>,
}

impl RadianceField {
    /// He-initialised trunk, small heads, zero biases; deterministic in `seed`.
    pub fn new(config: FieldConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let layout = config.layout();
        let mut params = vec![0.0; layout.color.end()];
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut fill = |l: &Linear, std: f64| {
            let normal = Normal::new(0.0, std).expect("finite std");
            for p in &mut params[l.offset..l.offset + l.in_dim * l.out_dim] {
                *p = normal.sample(&mut rng);
            }
        };
        for l in &layout.trunk {
            fill(l, (2.0 / l.in_dim as f64).sqrt());
        }
        fill(&layout.density, (1.0 / layout.density.in_dim as f64).sqrt());
        fill(&layout.color, (1.0 / layout.color.in_dim as f64).sqrt());
        Ok(Self {
            config,
            layout,
            params,
        })
    }

    pub fn from_parameters(config: FieldConfig, params: Vec<f64>) -> Result<Self> {
        config.validate()?;
        let layout = config.layout();
        if params.len() != layout.color.end() {
            return Err(Error::Shape(format!(
                "field config expects {} parameters, got {}",
                layout.color.end(),
                params.len()
            )));
        }
        Ok(Self {
            config,
            layout,
            params,
        })
    }

    pub fn config(&self) -> &FieldConfig {
        &self.config
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

    pub fn check_finite(&self) -> Result<()> {
        if self.params.iter().all(|p| p.is_finite()) {
            Ok(())
        } else {
            Err(Error::Numerical("radiance field parameters contain NaN or Inf".into()))
        }
    }

    fn encode(&self, points: &[[f64; 3]]) -> Vec<f64> {
        let e = encoded_dim(self.config.n_frequencies);
        let mut enc = vec![0.0; points.len() * e];
        for (p, out) in points.iter().zip(enc.chunks_exact_mut(e)) {
            positional_encode_into(*p, self.config.n_frequencies, out);
        }
        enc
    }

    /// Batched evaluation keeping everything needed for the backward pass.
    pub fn forward(&self, points: &[[f64; 3]], dirs: &[[f64; 3]]) -> FieldTape {
        assert_eq!(points.len(), dirs.len());
        let n = points.len();
        let mut activations = Vec::with_capacity(self.layout.trunk.len() + 1);
        activations.push(self.encode(points));
        for layer in &self.layout.trunk {
            let mut h = layer.forward(&self.params, activations.last().unwrap(), n);
            h.iter_mut().for_each(|v| *v = v.max(0.0));
            activations.push(h);
        }
        let trunk = activations.last().unwrap();
        let raw_density = self.layout.density.forward(&self.params, trunk, n);
        let width = self.config.hidden_width;
        let mut color_input = Vec::with_capacity(n * (width + 3));
        for (row, d) in trunk.chunks_exact(width).zip(dirs) {
            color_input.extend_from_slice(row);
            color_input.extend_from_slice(d);
        }
        let mut colors = self.layout.color.forward(&self.params, &color_input, n);
        colors.iter_mut().for_each(|v| *v = sigmoid(*v));
        FieldTape {
            n,
            activations,
            color_input,
            raw_density,
            colors,
        }
    }

    /// Densities (softplus, so nonnegative) and colours (sigmoid, so in `[0, 1]`).
    pub fn query(&self, points: &[[f64; 3]], dirs: &[[f64; 3]]) -> Result<(Vec<f64>, Vec<[f64; 3]>)> {
        self.check_finite()?;
        let tape = self.forward(points, dirs);
        Ok((tape.densities(), tape.colors()))
    }

    /// Accumulates `dL/dparams` into `grad` given `dL/ddensity` and
    /// `dL/dcolour` per point.
    pub fn backward(&self, tape: &FieldTape, d_density: &[f64], d_color: &[f64], grad: &mut [f64]) {
        let n = tape.n;
        assert_eq!(d_density.len(), n);
        assert_eq!(d_color.len(), n * 3);
        assert_eq!(grad.len(), self.params.len());
        let width = self.config.hidden_width;

        let d_raw_color: Vec<f64> = d_color
            .iter()
            .zip(&tape.colors)
            .map(|(g, c)| g * c * (1.0 - c))
            .collect();
        let d_color_input = self
            .layout
            .color
            .backward(&self.params, &tape.color_input, &d_raw_color, n, grad, true)
            .unwrap();

        let d_raw_density: Vec<f64> = d_density
            .iter()
            .zip(&tape.raw_density)
            .map(|(g, r)| g * sigmoid(*r))
            .collect();
        let trunk = tape.activations.last().unwrap();
        let mut dh = self
            .layout
            .density
            .backward(&self.params, trunk, &d_raw_density, n, grad, true)
            .unwrap();
        for (row, src) in dh.chunks_exact_mut(width).zip(d_color_input.chunks_exact(width + 3)) {
            for (a, b) in row.iter_mut().zip(&src[..width]) {
                *a += b;
            }
        }

        for (k, layer) in self.layout.trunk.iter().enumerate().rev() {
            // ReLU gate from this layer's output.
            for (g, h) in dh.iter_mut().zip(&tape.activations[k + 1]) {
                if *h <= 0.0 {
                    *g = 0.0;
                }
            }
            let want_dx = k > 0;
            match layer.backward(&self.params, &tape.activations[k], &dh, n, grad, want_dx) {
                Some(dx) => dh = dx,
                None => break,
            }
        }
    }

    pub fn to_container(&self) -> Container {
        Container::new(
            "radiance_field",
            serde_json::to_value(&self.config).expect("config serializes"),
        )
        .with_tensor("parameters", self.params.clone())
    }

    pub fn from_container(mut c: Container) -> Result<Self> {
        let config: FieldConfig =
            serde_json::from_value(c.meta.clone()).map_err(|e| Error::Config(format!("field config: {e}")))?;
        let params = c
            .take_tensor("parameters")
            .ok_or_else(|| Error::Config("field checkpoint has no `parameters` tensor".into()))?;
        Self::from_parameters(config, params)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.to_container().save(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_container(Container::load(path, "radiance_field")?)
    }
}

impl FieldTape {
    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn densities(&self) -> Vec<f64> {
        self.raw_density.iter().map(|&r| softplus(r)).collect()
    }

    pub fn density(&self, i: usize) -> f64 {
        softplus(self.raw_density[i])
    }

    pub fn color(&self, i: usize) -> [f64; 3] {
        [self.colors[3 * i], self.colors[3 * i + 1], self.colors[3 * i + 2]]
    }

    pub fn colors(&self) -> Vec<[f64; 3]> {
        self.colors.chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_size_ratio() {
        let lr = FieldConfig::lr_default().parameter_count() as f64;
        let hr = FieldConfig::hr_default().parameter_count() as f64;
        let ratio = lr / hr;
        assert!((0.2..=0.3).contains(&ratio), "ratio {ratio}");
        assert!(FieldConfig::hr_default().n_frequencies > FieldConfig::lr_default().n_frequencies);
    }

    #[test]
    fn fresh_field_outputs_are_in_range_and_deterministic() {
        let field = RadianceField::new(FieldConfig::lr_default(), 7).unwrap();
        let pts = [[0.1, 0.2, -0.3], [1.5, -2.0, 0.0], [0.0; 3]];
        let dirs = [[0.0, 0.0, -1.0]; 3];
        let (d1, c1) = field.query(&pts, &dirs).unwrap();
        let (d2, c2) = field.query(&pts, &dirs).unwrap();
        assert_eq!(d1, d2);
        assert_eq!(c1, c2);
        assert!(d1.iter().all(|d| d.is_finite() && *d >= 0.0));
        assert!(c1.iter().flatten().all(|c| (0.0..=1.0).contains(c)));
    }

    #[test]
    fn nan_parameters_are_a_numerical_error() {
        let mut field = RadianceField::new(FieldConfig::lr_default(), 0).unwrap();
        field.parameters_mut()[3] = f64::NAN;
        assert!(matches!(
            field.query(&[[0.0; 3]], &[[0.0, 0.0, 1.0]]),
            Err(Error::Numerical(_))
        ));
    }

    #[test]
    fn checkpoint_round_trip() {
        let field = RadianceField::new(FieldConfig::lr_default(), 3).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("f.ckpt");
        field.save(&path).unwrap();
        assert_eq!(RadianceField::load(&path).unwrap(), field);
    }
}
