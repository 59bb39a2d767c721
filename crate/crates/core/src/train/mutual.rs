//! The mutual-learning loop that jointly fits the HR field and the per-view
//! latent codes.
//!
//! Each step picks a view and super-resolves it in full (generator output
//! projected onto LR consistency). At a random subset of its pixels the
//! result is compared with the frozen LR field's render and with the HR
//! field's render; gradients reach the HR field through its render and the
//! latent code through the projection and the generator.

use std::collections::BTreeMap;
use std::fmt;
use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use rand::seq::index;
use rand::Rng;

use super::config::TrainConfig;
use super::loss::{range_penalty, range_penalty_grad, sign};
use crate::ccsr::{cem_project, cem_vjp, ccsr_forward, init_latent_downsampled, BlurKernel, LatentCodeStore, Region, SRBackbone};
use crate::checkpoint::Container;
use crate::error::{Error, Result};
use crate::field::{render, render_image, RadianceField, Sampling};
use crate::nn::Adam;
use crate::rng;
use crate::scene::{generate_rays, CameraPose, ImageBuffer, MultiViewDataset, RayBatch, Resolution};

/// One mutual-learning step's losses.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossReport {
    pub t: usize,
    pub view_index: usize,
    /// Blend weight actually applied at this step.
    pub alpha_t: f64,
    pub loss_sr: f64,
    pub loss_range: f64,
    pub loss_total: f64,
    pub wall_ms: f64,
}

impl LossReport {
    /// Everything except the wall-clock time.
    pub fn same_values(&self, other: &LossReport) -> bool {
        (self.t, self.view_index) == (other.t, other.view_index)
            && self.alpha_t.to_bits() == other.alpha_t.to_bits()
            && self.loss_sr.to_bits() == other.loss_sr.to_bits()
            && self.loss_range.to_bits() == other.loss_range.to_bits()
            && self.loss_total.to_bits() == other.loss_total.to_bits()
    }
}

/// Log line: `t view alpha loss_sr loss_range loss_total ms`, floats in
/// shortest round-trip form.
impl fmt::Display for LossReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} {} {} {} {} {} {:.3}",
            self.t, self.view_index, self.alpha_t, self.loss_sr, self.loss_range, self.loss_total, self.wall_ms
        )
    }
}

impl FromStr for LossReport {
    type Err = Error;

    fn from_str(line: &str) -> Result<Self> {
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 7 {
            return Err(Error::Config(format!("loss log line needs 7 fields, got {}: {line:?}", fields.len())));
        }
        let bad = |name: &str| Error::Config(format!("loss log field {name} is malformed in {line:?}"));
        Ok(Self {
            t: fields[0].parse().map_err(|_| bad("t"))?,
            view_index: fields[1].parse().map_err(|_| bad("view"))?,
            alpha_t: fields[2].parse().map_err(|_| bad("alpha"))?,
            loss_sr: fields[3].parse().map_err(|_| bad("loss_sr"))?,
            loss_range: fields[4].parse().map_err(|_| bad("loss_range"))?,
            loss_total: fields[5].parse().map_err(|_| bad("loss_total"))?,
            wall_ms: fields[6].parse().map_err(|_| bad("ms"))?,
        })
    }
}

pub const LOSS_LOG_HEADER: &str = "# t view alpha loss_sr loss_range loss_total ms";

/// Appends reports to a line-delimited log, writing the header first when
/// the file is new.
pub fn append_loss_log(path: &Path, reports: &[LossReport]) -> Result<()> {
    let fresh = !path.exists();
    let mut file = OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map_err(|e| Error::io(path, e.to_string()))?;
    let mut text = String::new();
    if fresh {
        text.push_str(LOSS_LOG_HEADER);
        text.push('\n');
    }
    for r in reports {
        text.push_str(&r.to_string());
        text.push('\n');
    }
    file.write_all(text.as_bytes()).map_err(|e| Error::io(path, e.to_string()))
}

pub fn read_loss_log(path: &Path) -> Result<Vec<LossReport>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e.to_string()))?;
    text.lines()
        .filter(|l| !l.trim().is_empty() && !l.starts_with('#'))
        .map(str::parse)
        .collect()
}

/// Resumable state of a mutual-learning run.
#[derive(Clone, Debug, PartialEq)]
pub struct CheckpointBundle {
    pub hr_field: RadianceField,
    pub latent_store: LatentCodeStore,
    /// Number of completed steps.
    pub t: usize,
    pub config_hash: String,
    pub hr_optimizer: Adam,
    pub latent_optimizers: BTreeMap<usize, Adam>,
}

fn adam_meta(a: &Adam) -> serde_json::Value {
    serde_json::json!({ "lr": a.lr, "beta1": a.beta1, "beta2": a.beta2, "eps": a.eps, "step": a.step })
}

fn adam_from(meta: &serde_json::Value, m: Vec<f64>, v: Vec<f64>) -> Result<Adam> {
    let get = |k: &str| meta.get(k).and_then(|x| x.as_f64()).ok_or_else(|| Error::Config(format!("optimizer state lacks {k}")));
    if m.len() != v.len() {
        return Err(Error::Shape("optimizer moment vectors differ in length".into()));
    }
    Ok(Adam {
        lr: get("lr")?,
        beta1: get("beta1")?,
        beta2: get("beta2")?,
        eps: get("eps")?,
        step: meta.get("step").and_then(|x| x.as_u64()).ok_or_else(|| Error::Config("optimizer state lacks step".into()))?,
        m,
        v,
    })
}

impl CheckpointBundle {
    pub const KIND: &'static str = "super_nerf_bundle";

    pub fn to_container(&self) -> Container {
        let field = self.hr_field.to_container();
        let latents = self.latent_store.to_container();
        let latent_opts: BTreeMap<String, serde_json::Value> =
            self.latent_optimizers.iter().map(|(k, a)| (k.to_string(), adam_meta(a))).collect();
        let meta = serde_json::json!({
            "t": self.t,
            "config_hash": self.config_hash,
            "hr_field": field.meta,
            "latents": latents.meta,
            "hr_optimizer": adam_meta(&self.hr_optimizer),
            "latent_optimizers": latent_opts,
        });
        let mut c = Container::new(Self::KIND, meta);
        for (name, values) in field.tensors {
            c = c.with_tensor(format!("hr_field/{name}"), values);
        }
        for (name, values) in latents.tensors {
            c = c.with_tensor(format!("latents/{name}"), values);
        }
        c = c
            .with_tensor("hr_optimizer/m", self.hr_optimizer.m.clone())
            .with_tensor("hr_optimizer/v", self.hr_optimizer.v.clone());
        for (k, a) in &self.latent_optimizers {
            c = c
                .with_tensor(format!("latent_optimizer/{k}/m"), a.m.clone())
                .with_tensor(format!("latent_optimizer/{k}/v"), a.v.clone());
        }
        c
    }

    pub fn from_container(mut c: Container) -> Result<Self> {
        let meta = c.meta.clone();
        let missing = |k: &str| Error::Config(format!("checkpoint bundle lacks {k}"));
        let t = meta.get("t").and_then(|v| v.as_u64()).ok_or_else(|| missing("t"))? as usize;
        let config_hash = meta
            .get("config_hash")
            .and_then(|v| v.as_str())
            .ok_or_else(|| missing("config_hash"))?
            .to_string();
        let mut take_prefixed = |prefix: &str| -> Vec<(String, Vec<f64>)> {
            let (mine, rest): (Vec<_>, Vec<_>) = c.tensors.drain(..).partition(|(n, _)| n.starts_with(prefix));
            c.tensors = rest;
            mine.into_iter().map(|(n, v)| (n[prefix.len()..].to_string(), v)).collect()
        };
        let mut field = Container::new("radiance_field", meta.get("hr_field").cloned().ok_or_else(|| missing("hr_field"))?);
        field.tensors = take_prefixed("hr_field/");
        let hr_field = RadianceField::from_container(field)?;
        let mut latents = Container::new("latent_store", meta.get("latents").cloned().ok_or_else(|| missing("latents"))?);
        latents.tensors = take_prefixed("latents/");
        let latent_store = LatentCodeStore::from_container(latents)?;
        let hr_m = c.take_tensor("hr_optimizer/m").ok_or_else(|| missing("hr_optimizer/m"))?;
        let hr_v = c.take_tensor("hr_optimizer/v").ok_or_else(|| missing("hr_optimizer/v"))?;
        let hr_optimizer = adam_from(meta.get("hr_optimizer").ok_or_else(|| missing("hr_optimizer"))?, hr_m, hr_v)?;
        let mut latent_optimizers = BTreeMap::new();
        if let Some(opts) = meta.get("latent_optimizers").and_then(|v| v.as_object()) {
            for (k, m) in opts {
                let view: usize = k.parse().map_err(|_| missing("latent optimizer index"))?;
                let mm = c.take_tensor(&format!("latent_optimizer/{k}/m")).ok_or_else(|| missing("latent optimizer m"))?;
                let vv = c.take_tensor(&format!("latent_optimizer/{k}/v")).ok_or_else(|| missing("latent optimizer v"))?;
                latent_optimizers.insert(view, adam_from(m, mm, vv)?);
            }
        }
        Ok(Self {
            hr_field,
            latent_store,
            t,
            config_hash,
            hr_optimizer,
            latent_optimizers,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.to_container().save(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_container(Container::load(path, Self::KIND)?)
    }
}

/// Per-view data fixed for the whole run.
struct ViewData {
    index: usize,
    resolution: Resolution,
    /// LR image (box-downsampled for HR views).
    lr: ImageBuffer,
    /// Ground truth for HR views.
    hr_truth: Option<ImageBuffer>,
    /// LR-field render at HR resolution.
    lr_field_render: Option<ImageBuffer>,
    pose: CameraPose,
    rays: RayBatch,
}

/// The mutual-learning state: frozen LR field and generator, trainable HR
/// field and latent codes.
pub struct MutualLearning<'a> {
    config: TrainConfig,
    backbone: &'a SRBackbone,
    kernel: BlurKernel,
    views: Vec<ViewData>,
    hr_size: (usize, usize),
    hr_field: RadianceField,
    hr_optimizer: Adam,
    latents: LatentCodeStore,
    latent_optimizers: BTreeMap<usize, Adam>,
    t: usize,
}

impl<'a> MutualLearning<'a> {
    pub fn new(dataset: &MultiViewDataset, lr_field: &RadianceField, backbone: &'a SRBackbone, config: &TrainConfig) -> Result<Self> {
        config.validate()?;
        let s = config.scale;
        if dataset.scale() != s || backbone.scale() != s {
            return Err(Error::Config(format!(
                "scale mismatch: config {s}, dataset {}, generator {}",
                dataset.scale(),
                backbone.scale()
            )));
        }
        let (lh, lw) = dataset.lr_shape();
        let (hh, hw) = (lh * s, lw * s);
        let mut views = Vec::with_capacity(dataset.views().len());
        let mut latents = LatentCodeStore::new();
        let mut latent_optimizers = BTreeMap::new();
        for view in dataset.views() {
            let lr = dataset.lr_image(view)?;
            let hr_truth = (view.resolution == Resolution::Hr).then(|| view.image.clone());
            let pose = view.pose.rescaled(hw, hh);
            let lr_field_render = if config.use_lr_nerf && view.resolution == Resolution::Lr {
                Some(render_image(lr_field, &pose, hh, hw)?)
            } else {
                None
            };
            if view.resolution == Resolution::Lr {
                let code = init_latent_downsampled(view.index, lh, lw, s, config.latent_downsample, config.seed)?;
                latent_optimizers.insert(view.index, Adam::new(code.values.len(), config.latent_learning_rate));
                latents.insert(code);
            }
            views.push(ViewData {
                index: view.index,
                resolution: view.resolution,
                lr,
                hr_truth,
                lr_field_render,
                rays: generate_rays(&view.pose, hh, hw, view.index),
                pose,
            });
        }
        let init_seed = rng::stream(config.seed, "hr_field_init", 0).gen::<u64>();
        let hr_field = RadianceField::new(config.hr_field.clone(), init_seed)?;
        let hr_optimizer = Adam::new(hr_field.parameter_count(), config.hr_learning_rate);
        Ok(Self {
            config: config.clone(),
            backbone,
            kernel: BlurKernel::box_filter(s),
            views,
            hr_size: (hh, hw),
            hr_field,
            hr_optimizer,
            latents,
            latent_optimizers,
            t: 0,
        })
    }

    /// Continues a run from `bundle`.
    pub fn resume(
        dataset: &MultiViewDataset,
        lr_field: &RadianceField,
        backbone: &'a SRBackbone,
        config: &TrainConfig,
        bundle: CheckpointBundle,
    ) -> Result<Self> {
        if bundle.config_hash != config.config_hash {
            return Err(Error::Config(format!(
                "checkpoint was written under config {} but the current config is {}",
                bundle.config_hash, config.config_hash
            )));
        }
        let mut state = Self::new(dataset, lr_field, backbone, config)?;
        if bundle.hr_field.config() != state.hr_field.config()
            || bundle.latent_store.iter().map(|c| c.view_index).ne(state.latents.iter().map(|c| c.view_index))
        {
            return Err(Error::Config("checkpoint does not match the dataset or field config".into()));
        }
        state.hr_field = bundle.hr_field;
        state.hr_optimizer = bundle.hr_optimizer;
        state.latents = bundle.latent_store;
        state.latent_optimizers = bundle.latent_optimizers;
        state.t = bundle.t;
        Ok(state)
    }

    pub fn t(&self) -> usize {
        self.t
    }

    pub fn hr_field(&self) -> &RadianceField {
        &self.hr_field
    }

    pub fn latents(&self) -> &LatentCodeStore {
        &self.latents
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    pub fn view_indices(&self) -> Vec<usize> {
        self.views.iter().map(|v| v.index).collect()
    }

    pub fn bundle(&self) -> CheckpointBundle {
        CheckpointBundle {
            hr_field: self.hr_field.clone(),
            latent_store: self.latents.clone(),
            t: self.t,
            config_hash: self.config.config_hash.clone(),
            hr_optimizer: self.hr_optimizer.clone(),
            latent_optimizers: self.latent_optimizers.clone(),
        }
    }

    /// Uniform view choice for step `t`, with replacement.
    pub fn select_view(&self, t: usize) -> usize {
        let mut rng = rng::stream(self.config.seed, "mutual_view", t as u64);
        self.views[rng.gen_range(0..self.views.len())].index
    }

    fn view(&self, index: usize) -> Result<&ViewData> {
        self.views
            .iter()
            .find(|v| v.index == index)
            .ok_or_else(|| Error::Config(format!("view {index} is not in the training set")))
    }

    /// Blend weight used for `view_index` at step `t`: the schedule value
    /// for LR views, zero for ground-truth HR views or without the LR field.
    pub fn applied_alpha(&self, view_index: usize, t: usize) -> Result<f64> {
        let view = self.view(view_index)?;
        Ok(if !self.config.use_lr_nerf || view.resolution == Resolution::Hr {
            0.0
        } else {
            self.config.alpha.value(t)
        })
    }

    /// The current super-resolved image of an LR view (or the ground truth of
    /// an HR view).
    pub fn super_resolved(&self, view_index: usize) -> Result<ImageBuffer> {
        let view = self.view(view_index)?;
        match &view.hr_truth {
            Some(img) => Ok(img.clone()),
            None => {
                let code = self.latents.get(view_index).expect("LR views own a code");
                ccsr_forward(self.backbone, &view.lr, code, &self.kernel)
            }
        }
    }

    /// One optimisation step on `view_index` at iteration `t`.
    pub fn step(&mut self, view_index: usize, t: usize) -> Result<LossReport> {
        let start = Instant::now();
        let a = self.applied_alpha(view_index, t)?;
        let view_pos = self.views.iter().position(|v| v.index == view_index).expect("checked above");
        let (hh, hw) = self.hr_size;
        let mut rng = rng::stream(self.config.seed, "mutual_step", t as u64);
        let n_rays = self.config.rays_per_step.min(hh * hw);
        let mut pixel_ids = index::sample(&mut rng, hh * hw, n_rays).into_vec();
        pixel_ids.sort_unstable();

        let view = &self.views[view_pos];
        let rays = view.rays.select(&pixel_ids);
        let (hn_samples, hn_tape) = render::render_rays_train(&self.hr_field, &rays, Sampling::Stratified(&mut rng))?;

        let (projected, gen_tape, raw) = match &view.hr_truth {
            Some(truth) => (truth.clone(), None, None),
            None => {
                let code = self.latents.get(view_index).expect("LR views own a code");
                let (raw, tape) = self.backbone.generate_region(&view.lr, &code.expanded(), Region::full(hh, hw), true)?;
                (cem_project(&raw, &view.lr, &self.kernel)?, tape, Some(raw))
            }
        };
        let c_ln = match (&view.lr_field_render, a > 0.0) {
            (Some(img), true) => Some(img.as_slice()),
            _ => None,
        };

        let c_hr = projected.as_slice();
        let n = (n_rays * 3) as f64;
        let mut loss_ln = 0.0;
        let mut loss_hn = 0.0;
        let mut d_hr = vec![0.0; c_hr.len()];
        let mut d_color = vec![[0.0; 3]; n_rays];
        for (r, &px) in pixel_ids.iter().enumerate() {
            for c in 0..3 {
                let i = px * 3 + c;
                if let Some(c_ln) = c_ln {
                    let e = c_hr[i] - c_ln[i];
                    loss_ln += e.abs();
                    d_hr[i] += a * sign(e) / n;
                }
                if a != 1.0 {
                    let e = hn_samples[r].color[c] - c_hr[i];
                    loss_hn += e.abs();
                    d_color[r][c] = (1.0 - a) * sign(e) / n;
                    d_hr[i] -= (1.0 - a) * sign(e) / n;
                }
            }
        }
        let mut loss_sr = 0.0;
        if a != 0.0 {
            loss_sr += a * loss_ln / n;
        }
        if a != 1.0 {
            loss_sr += (1.0 - a) * loss_hn / n;
        }
        let loss_range = match (&raw, self.config.range_on_projected) {
            (Some(_), true) => range_penalty(c_hr),
            (Some(raw), false) => range_penalty(raw.as_slice()),
            (None, _) => 0.0,
        };
        let loss_total = loss_sr + loss_range;
        if !loss_total.is_finite() {
            return Err(Error::Numerical(format!("non-finite loss at step {t} on view {view_index}")));
        }

        // HR field update.
        let mut grad = vec![0.0; self.hr_field.parameter_count()];
        render::backward(&self.hr_field, &hn_tape, &d_color, &mut grad);

        // Latent update through the projection and the generator.
        let code_update = match (gen_tape, raw) {
            (Some(tape), Some(raw)) => {
                if self.config.range_on_projected {
                    range_penalty_grad(c_hr, 1.0, &mut d_hr);
                }
                cem_vjp(&mut d_hr, hh, hw, self.config.scale);
                if !self.config.range_on_projected {
                    range_penalty_grad(raw.as_slice(), 1.0, &mut d_hr);
                }
                let code = self.latents.get(view_index).expect("LR views own a code");
                let mut d_code_hr = vec![0.0; code.height * code.width * 3];
                self.backbone.backward_region(&tape, &d_hr, None, Some(&mut d_code_hr));
                Some(code.reduce_gradient(&d_code_hr))
            }
            _ => None,
        };
        if grad.iter().any(|g| !g.is_finite()) || code_update.as_ref().is_some_and(|g| g.iter().any(|v| !v.is_finite())) {
            return Err(Error::Numerical(format!("non-finite gradient at step {t} on view {view_index}")));
        }
        let warmup = ((t + 1) as f64 / self.config.hr_warmup_steps.max(1) as f64).min(1.0);
        self.hr_optimizer.lr = self.config.hr_learning_rate * warmup;
        self.hr_optimizer.update(self.hr_field.parameters_mut(), &grad);
        self.hr_field.check_finite()?;
        if let Some(g) = code_update {
            let code = self.latents.get_mut(view_index).expect("LR views own a code");
            let opt = self.latent_optimizers.get_mut(&view_index).expect("one optimizer per code");
            opt.update(&mut code.values, &g);
        }
        Ok(LossReport {
            t,
            view_index,
            alpha_t: a,
            loss_sr,
            loss_range,
            loss_total,
            wall_ms: start.elapsed().as_secs_f64() * 1e3,
        })
    }

    /// Runs steps until `until` steps are complete. With `checkpoint_dir`,
    /// a bundle is written every `checkpoint_every` steps as
    /// `checkpoint_<t>.snrf` plus `latest.snrf`.
    pub fn run(
        &mut self,
        until: usize,
        checkpoint_dir: Option<&Path>,
        mut on_report: impl FnMut(&LossReport) -> Result<()>,
    ) -> Result<()> {
        while self.t < until {
            let t = self.t;
            let view = self.select_view(t);
            let report = self.step(view, t)?;
            self.t = t + 1;
            on_report(&report)?;
            let every = self.config.checkpoint_every;
            if let Some(dir) = checkpoint_dir {
                if every > 0 && self.t % every == 0 {
                    let bundle = self.bundle();
                    bundle.save(&checkpoint_path(dir, self.t))?;
                    bundle.save(&dir.join("latest.snrf"))?;
                }
            }
        }
        Ok(())
    }

    pub fn lr_field_render(&self, view_index: usize) -> Result<Option<&ImageBuffer>> {
        Ok(self.view(view_index)?.lr_field_render.as_ref())
    }

    pub fn hr_pose(&self, view_index: usize) -> Result<&CameraPose> {
        Ok(&self.view(view_index)?.pose)
    }
}

pub fn checkpoint_path(dir: &Path, t: usize) -> PathBuf {
    dir.join(format!("checkpoint_{t:06}.snrf"))
}

/// Runs the whole loop from scratch and returns the final state.
pub fn train_super_nerf(
    dataset: &MultiViewDataset,
    lr_field: &RadianceField,
    backbone: &SRBackbone,
    config: &TrainConfig,
) -> Result<CheckpointBundle> {
    let mut state = MutualLearning::new(dataset, lr_field, backbone, config)?;
    state.run(config.iterations, None, |_| Ok(()))?;
    Ok(state.bundle())
}
