use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::schedule::AlphaSchedule;
use crate::ccsr::{BackboneConfig, SrPretrainConfig};
use crate::error::{Error, Result};
use crate::field::FieldConfig;
use crate::scene::Resolution;

/// Every tunable of the pipeline as one flat key/value table. Unknown keys
/// are rejected; missing keys take the defaults below.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub seed: u64,
    pub scale: usize,
    pub n_views: usize,

    pub lr_frequencies: usize,
    pub lr_width: usize,
    pub lr_layers: usize,
    pub lr_samples: usize,
    pub lr_iterations: usize,
    pub lr_rays_per_step: usize,
    pub lr_learning_rate: f64,

    pub hr_frequencies: usize,
    pub hr_width: usize,
    pub hr_layers: usize,
    pub hr_samples: usize,

    pub sr_channels: usize,
    pub sr_blocks: usize,
    pub sr_steps: usize,
    pub sr_crop: usize,
    pub sr_learning_rate: f64,
    pub sr_diversity_weight: f64,
    pub sr_diversity_margin: f64,
    pub sr_range_weight: f64,
    pub sr_corpus_size: usize,
    pub sr_corpus_image_size: usize,

    pub iterations: usize,
    /// HR-field rays traced per mutual-learning step.
    pub rays_per_step: usize,
    pub hr_learning_rate: f64,
    /// Steps over which the HR-field learning rate ramps up linearly.
    pub hr_warmup_steps: usize,
    pub latent_learning_rate: f64,
    /// Decay constant of the blend weight; `0` means `iterations / 5`.
    pub alpha_tau: f64,
    pub alpha_floor: f64,
    pub checkpoint_every: usize,
    pub use_lr_nerf: bool,
    pub range_on_projected: bool,
    pub hybrid_hr_fraction: f64,
    pub latent_downsample: usize,

    pub warp_min_weight: f64,
    pub warp_depth_tolerance: f64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            scale: 4,
            n_views: 8,

            lr_frequencies: 6,
            lr_width: 32,
            lr_layers: 3,
            lr_samples: 64,
            lr_iterations: 1500,
            lr_rays_per_step: 256,
            lr_learning_rate: 3e-3,

            hr_frequencies: 10,
            hr_width: 64,
            hr_layers: 3,
            hr_samples: 64,

            sr_channels: 8,
            sr_blocks: 4,
            sr_steps: 600,
            sr_crop: 32,
            sr_learning_rate: 2e-3,
            sr_diversity_weight: 1.0,
            sr_diversity_margin: 0.01,
            sr_range_weight: 1.0,
            sr_corpus_size: 48,
            sr_corpus_image_size: 64,

            iterations: 2000,
            rays_per_step: 256,
            hr_learning_rate: 3e-3,
            hr_warmup_steps: 100,
            latent_learning_rate: 1e-2,
            alpha_tau: 0.0,
            alpha_floor: 0.0,
            checkpoint_every: 500,
            use_lr_nerf: true,
            range_on_projected: false,
            hybrid_hr_fraction: 0.0,
            latent_downsample: 1,

            warp_min_weight: 0.1,
            warp_depth_tolerance: 0.05,
        }
    }
}

impl PipelineConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let config: Self = toml::from_str(text).map_err(|e| Error::Config(format!("config: {}", e.message())))?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e.to_string()))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("flat config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("scale", self.scale),
            ("n_views", self.n_views),
            ("lr_width", self.lr_width),
            ("lr_layers", self.lr_layers),
            ("lr_samples", self.lr_samples),
            ("lr_rays_per_step", self.lr_rays_per_step),
            ("hr_width", self.hr_width),
            ("hr_layers", self.hr_layers),
            ("hr_samples", self.hr_samples),
            ("sr_channels", self.sr_channels),
            ("sr_crop", self.sr_crop),
            ("iterations", self.iterations),
            ("rays_per_step", self.rays_per_step),
            ("latent_downsample", self.latent_downsample),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        let rates = [
            ("lr_learning_rate", self.lr_learning_rate),
            ("sr_learning_rate", self.sr_learning_rate),
            ("hr_learning_rate", self.hr_learning_rate),
            ("latent_learning_rate", self.latent_learning_rate),
        ];
        for (name, v) in rates {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be a positive number, got {v}")));
            }
        }
        if self.hr_frequencies <= self.lr_frequencies {
            return Err(Error::Config(format!(
                "the HR field needs more encoding octaves than the LR field ({} <= {})",
                self.hr_frequencies, self.lr_frequencies
            )));
        }
        if self.sr_crop % self.scale != 0 {
            return Err(Error::Config(format!(
                "sr_crop {} must be a multiple of scale {}",
                self.sr_crop, self.scale
            )));
        }
        if !(0.0..=1.0).contains(&self.hybrid_hr_fraction) {
            return Err(Error::Config(format!(
                "hybrid_hr_fraction {} outside [0, 1]",
                self.hybrid_hr_fraction
            )));
        }
        if !(self.alpha_tau >= 0.0) || !(0.0..=1.0).contains(&self.alpha_floor) {
            return Err(Error::Config("alpha_tau must be >= 0 and alpha_floor in [0, 1]".into()));
        }
        Ok(())
    }

    /// Hex prefix of the SHA-256 of the canonical serialization.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        let digest = Sha256::digest(json.as_bytes());
        digest.iter().take(8).map(|b| format!("{b:02x}")).collect()
    }

    pub fn lr_field(&self) -> FieldConfig {
        FieldConfig {
            n_frequencies: self.lr_frequencies,
            hidden_width: self.lr_width,
            n_layers: self.lr_layers,
            n_samples_per_ray: self.lr_samples,
            role: Resolution::Lr,
        }
    }

    pub fn hr_field(&self) -> FieldConfig {
        FieldConfig {
            n_frequencies: self.hr_frequencies,
            hidden_width: self.hr_width,
            n_layers: self.hr_layers,
            n_samples_per_ray: self.hr_samples,
            role: Resolution::Hr,
        }
    }

    pub fn lr_pretrain(&self) -> LrPretrainConfig {
        LrPretrainConfig {
            field: self.lr_field(),
            iterations: self.lr_iterations,
            rays_per_step: self.lr_rays_per_step,
            learning_rate: self.lr_learning_rate,
            seed: self.seed,
        }
    }

    pub fn backbone(&self) -> BackboneConfig {
        BackboneConfig {
            scale: self.scale,
            channels: self.sr_channels,
            n_blocks: self.sr_blocks,
        }
    }

    pub fn sr_pretrain(&self) -> SrPretrainConfig {
        SrPretrainConfig {
            steps: self.sr_steps,
            crop: self.sr_crop,
            learning_rate: self.sr_learning_rate,
            diversity_weight: self.sr_diversity_weight,
            diversity_margin: self.sr_diversity_margin,
            range_weight: self.sr_range_weight,
        }
    }

    pub fn train(&self) -> TrainConfig {
        let mut alpha = AlphaSchedule::for_iterations(self.iterations);
        if self.alpha_tau > 0.0 {
            alpha.tau = self.alpha_tau;
        }
        alpha.floor = self.alpha_floor;
        TrainConfig {
            iterations: self.iterations,
            rays_per_step: self.rays_per_step,
            hr_field: self.hr_field(),
            hr_learning_rate: self.hr_learning_rate,
            hr_warmup_steps: self.hr_warmup_steps,
            latent_learning_rate: self.latent_learning_rate,
            alpha,
            seed: self.seed,
            scale: self.scale,
            checkpoint_every: self.checkpoint_every,
            use_lr_nerf: self.use_lr_nerf,
            range_on_projected: self.range_on_projected,
            latent_downsample: self.latent_downsample,
            config_hash: self.hash(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LrPretrainConfig {
    pub field: FieldConfig,
    pub iterations: usize,
    pub rays_per_step: usize,
    pub learning_rate: f64,
    pub seed: u64,
}

/// Settings of the mutual-learning loop.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub iterations: usize,
    pub rays_per_step: usize,
    pub hr_field: FieldConfig,
    pub hr_learning_rate: f64,
    pub hr_warmup_steps: usize,
    pub latent_learning_rate: f64,
    pub alpha: AlphaSchedule,
    pub seed: u64,
    pub scale: usize,
    pub checkpoint_every: usize,
    /// `false` pins the blend weight to zero.
    pub use_lr_nerf: bool,
    pub range_on_projected: bool,
    pub latent_downsample: usize,
    pub config_hash: String,
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.iterations == 0 {
            return Err(Error::Config("iterations must be positive".into()));
        }
        if !(self.hr_learning_rate > 0.0) || !(self.latent_learning_rate > 0.0) {
            return Err(Error::Config("learning rates must be positive".into()));
        }
        if self.rays_per_step == 0 {
            return Err(Error::Config("rays_per_step must be positive".into()));
        }
        if !(self.alpha.tau > 0.0) {
            return Err(Error::Config("alpha tau must be positive".into()));
        }
        if self.latent_downsample == 0 {
            return Err(Error::Config("latent downsample must be positive".into()));
        }
        self.hr_field.validate()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn toml_round_trip_and_overrides() {
        let c = PipelineConfig::default();
        assert_eq!(PipelineConfig::from_toml_str(&c.to_toml_string()).unwrap(), c);
        let o = PipelineConfig::from_toml_str("seed = 7\niterations = 10\n").unwrap();
        assert_eq!((o.seed, o.iterations, o.scale), (7, 10, 4));
        assert_ne!(o.hash(), c.hash());
        assert_eq!(c.hash(), PipelineConfig::default().hash());
        assert_eq!(c.hash().len(), 16);
    }

    #[test]
    fn schema_violations() {
        assert!(matches!(PipelineConfig::from_toml_str("bogus = 1"), Err(Error::Config(_))));
        assert!(matches!(PipelineConfig::from_toml_str("scale = \"four\""), Err(Error::Config(_))));
        assert!(matches!(PipelineConfig::from_toml_str("sr_crop = 10"), Err(Error::Config(_))));
        assert!(matches!(PipelineConfig::from_toml_str("hr_frequencies = 3"), Err(Error::Config(_))));
    }

    #[test]
    fn alpha_tau_defaults_to_a_fifth_of_the_run() {
        let c = PipelineConfig {
            iterations: 1000,
            ..PipelineConfig::default()
        };
        assert_eq!(c.train().alpha.tau, 200.0);
    }
}
