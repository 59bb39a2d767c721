use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde_json::json;
use supernerf::ccsr::{ccsr_forward, pretrain_sr_backbone_with, texture_corpus, BlurKernel, SRBackbone};
use supernerf::eval::{emit_report, evaluate_run, EvaluationOptions, MaskedMae, RunArtifacts, WarpOptions};
use supernerf::field::{render_image, RadianceField};
use supernerf::scene::dataset::write_png;
use supernerf::scene::{
    generate_held_out_views, generate_synthetic_scene, interpolate_poses, load_dataset, save_dataset, BitDepth,
    ImageBuffer, MultiViewDataset, SceneSpec,
};
use supernerf::train::{
    append_loss_log, pretrain_lr_nerf_with, read_loss_log, CheckpointBundle, LossReport, MutualLearning, PipelineConfig,
};

use crate::manifest::RunManifest;
use crate::{Common, Stages, TrainFlags};

/// A problem with the invocation rather than with the run itself.
#[derive(Debug)]
pub struct UsageError(pub String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

/// 2 for usage and config-schema errors, 1 for everything else.
pub fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if cause.downcast_ref::<UsageError>().is_some() {
            return 2;
        }
        if let Some(supernerf::Error::Config(_)) = cause.downcast_ref::<supernerf::Error>() {
            return 2;
        }
    }
    1
}

fn require(path: &Path, what: &str) -> Result<()> {
    if path.exists() {
        Ok(())
    } else {
        Err(UsageError(format!("{what} {} does not exist", path.display())).into())
    }
}

fn resolve_config(common: &Common, flags: Option<&TrainFlags>) -> Result<PipelineConfig> {
    let mut cfg = match &common.config {
        Some(path) => {
            require(path, "config file")?;
            PipelineConfig::load(path)?
        }
        None => PipelineConfig::default(),
    };
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    if let Some(scale) = common.scale {
        cfg.scale = scale;
    }
    if let Some(flags) = flags {
        if let Some(f) = flags.hybrid_hr_fraction {
            cfg.hybrid_hr_fraction = f;
        }
        if flags.no_lr_nerf {
            cfg.use_lr_nerf = false;
        }
        if let Some(d) = &flags.latent_downsample {
            cfg.latent_downsample = d.parse().expect("restricted by the argument parser");
        }
    }
    cfg.validate()?;
    Ok(cfg)
}

fn prepare_out(common: &Common, cfg: &PipelineConfig) -> Result<()> {
    fs::create_dir_all(&common.out).with_context(|| format!("creating {}", common.out.display()))?;
    let path = common.out.join("config.toml");
    fs::write(&path, cfg.to_toml_string()).with_context(|| format!("writing {}", path.display()))
}

fn load_training_data(dir: &Path, cfg: &PipelineConfig) -> Result<MultiViewDataset> {
    require(dir, "dataset directory")?;
    let dataset = load_dataset(dir)?;
    if dataset.scale() != cfg.scale {
        return Err(UsageError(format!(
            "dataset scale {} differs from the configured scale {}",
            dataset.scale(),
            cfg.scale
        ))
        .into());
    }
    Ok(dataset.hybrid(cfg.hybrid_hr_fraction)?)
}

fn load_stages(stages: &Stages, cfg: &PipelineConfig) -> Result<(MultiViewDataset, RadianceField, SRBackbone)> {
    let dataset = load_training_data(&stages.data, cfg)?;
    require(&stages.lr_field, "LR field checkpoint")?;
    require(&stages.backbone, "generator checkpoint")?;
    let lr_field = RadianceField::load(&stages.lr_field)?;
    let backbone = SRBackbone::load(&stages.backbone)?;
    Ok((dataset, lr_field, backbone))
}

fn write_images<'a>(
    dir: &Path,
    prefix: &str,
    images: impl IntoIterator<Item = (usize, &'a ImageBuffer)>,
) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    for (i, img) in images {
        write_png(img, &dir.join(format!("{prefix}_{i:03}.png")), BitDepth::Eight)?;
    }
    Ok(())
}

pub fn gen_data(common: &Common) -> Result<()> {
    let cfg = resolve_config(common, None)?;
    prepare_out(common, &cfg)?;
    let mut manifest = RunManifest::start("gen-data", cfg.hash(), cfg.seed);
    let spec = SceneSpec {
        scale: cfg.scale,
        ..SceneSpec::toy()
    };
    let train = generate_synthetic_scene(&spec, cfg.n_views, cfg.seed)?;
    let held_out = generate_held_out_views(&spec, cfg.n_views, cfg.seed)?;
    let (train_dir, held_dir) = (common.out.join("train"), common.out.join("held_out"));
    save_dataset(&train, &train_dir, BitDepth::Sixteen)?;
    save_dataset(&held_out, &held_dir, BitDepth::Sixteen)?;
    manifest.output(&train_dir);
    manifest.output(&held_dir);
    manifest.detail("training_views", train.views().len());
    manifest.detail("held_out_views", held_out.views().len());
    manifest.detail("hr_size", json!([spec.hr_size(), spec.hr_size()]));
    manifest.detail("lr_size", json!([spec.lr_size, spec.lr_size]));
    manifest.finish(&common.out)
}

pub fn pretrain_lr(common: &Common, data: &Path) -> Result<()> {
    let cfg = resolve_config(common, None)?;
    require(data, "dataset directory")?;
    let dataset = load_dataset(data)?.degrade()?;
    prepare_out(common, &cfg)?;
    let mut manifest = RunManifest::start("pretrain-lr", cfg.hash(), cfg.seed);
    let mut log = String::from("# step mse\n");
    let field = pretrain_lr_nerf_with(&dataset, &cfg.lr_pretrain(), |step, loss, _| {
        log.push_str(&format!("{step} {loss}\n"));
        Ok(())
    })?;
    let field_path = common.out.join("lr_field.snrf");
    field.save(&field_path)?;
    let log_path = common.out.join("lr_loss.txt");
    fs::write(&log_path, log).with_context(|| format!("writing {}", log_path.display()))?;
    let mut psnrs = Vec::new();
    for v in dataset.views() {
        let render = render_image(&field, &v.pose, v.image.height(), v.image.width())?;
        psnrs.push(supernerf::eval::psnr(&render, &v.image)?.db());
    }
    manifest.output(&field_path);
    manifest.output(&log_path);
    manifest.detail("parameters", field.parameter_count());
    manifest.detail("train_psnr_db", psnrs.iter().sum::<f64>() / psnrs.len() as f64);
    manifest.finish(&common.out)
}

pub fn pretrain_sr(common: &Common) -> Result<()> {
    let cfg = resolve_config(common, None)?;
    prepare_out(common, &cfg)?;
    let mut manifest = RunManifest::start("pretrain-sr", cfg.hash(), cfg.seed);
    let corpus = texture_corpus(cfg.sr_corpus_size, cfg.sr_corpus_image_size, cfg.seed);
    let mut log = String::from("# step reconstruction diversity range\n");
    let backbone = pretrain_sr_backbone_with(&corpus, cfg.backbone(), &cfg.sr_pretrain(), cfg.seed, |step, s| {
        log.push_str(&format!("{step} {} {} {}\n", s.reconstruction, s.diversity, s.range));
    })?;
    let path = common.out.join("backbone.snrf");
    backbone.save(&path)?;
    let log_path = common.out.join("sr_loss.txt");
    fs::write(&log_path, log).with_context(|| format!("writing {}", log_path.display()))?;
    manifest.output(&path);
    manifest.output(&log_path);
    manifest.detail("parameters", backbone.parameter_count());
    manifest.finish(&common.out)
}

/// Keeps the log entries before `t` so a resumed run continues it seamlessly.
fn truncate_log(path: &Path, t: usize) -> Result<()> {
    if !path.exists() {
        return Ok(());
    }
    let kept: Vec<LossReport> = read_loss_log(path)?.into_iter().filter(|r| r.t < t).collect();
    fs::remove_file(path).with_context(|| format!("removing {}", path.display()))?;
    append_loss_log(path, &kept)?;
    Ok(())
}

pub fn train(common: &Common, stages: &Stages, flags: &TrainFlags, resume: Option<&Path>) -> Result<()> {
    let cfg = resolve_config(common, Some(flags))?;
    let (dataset, lr_field, backbone) = load_stages(stages, &cfg)?;
    let tc = cfg.train();
    let mut state = match resume {
        Some(path) => {
            require(path, "checkpoint")?;
            MutualLearning::resume(&dataset, &lr_field, &backbone, &tc, CheckpointBundle::load(path)?)?
        }
        None => MutualLearning::new(&dataset, &lr_field, &backbone, &tc)?,
    };
    prepare_out(common, &cfg)?;
    let mut manifest = RunManifest::start("train", cfg.hash(), cfg.seed);
    let ckpt_dir = common.out.join("checkpoints");
    fs::create_dir_all(&ckpt_dir).with_context(|| format!("creating {}", ckpt_dir.display()))?;
    let log_path = common.out.join("loss_log.txt");
    truncate_log(&log_path, state.t())?;
    manifest.detail("start_step", state.t());

    let mut pending = Vec::new();
    state.run(tc.iterations, Some(&ckpt_dir), |r| {
        pending.push(*r);
        if pending.len() >= 50 {
            append_loss_log(&log_path, &pending)?;
            pending.clear();
        }
        Ok(())
    })?;
    append_loss_log(&log_path, &pending)?;

    let final_path = common.out.join("final.snrf");
    state.bundle().save(&final_path)?;
    let kernel = BlurKernel::box_filter(cfg.scale);
    let mut sr = Vec::new();
    for code in state.latents().iter() {
        let view = dataset.view(code.view_index).expect("codes belong to dataset views");
        sr.push((code.view_index, ccsr_forward(&backbone, &view.image, code, &kernel)?));
    }
    let sr_dir = common.out.join("super_resolved");
    write_images(&sr_dir, "view", sr.iter().map(|(i, img)| (*i, img)))?;

    manifest.output(&final_path);
    manifest.output(&ckpt_dir);
    manifest.output(&log_path);
    manifest.output(&sr_dir);
    manifest.detail("latent_codes", state.latents().len());
    manifest.detail("hr_views", dataset.hr_views().count());
    manifest.detail("lr_views", dataset.lr_views().count());
    manifest.detail("steps", state.t());
    manifest.finish(&common.out)
}

pub fn render(common: &Common, checkpoint: &Path, data: &Path, frames: usize) -> Result<()> {
    let cfg = resolve_config(common, None)?;
    require(checkpoint, "checkpoint")?;
    require(data, "dataset directory")?;
    if frames == 0 {
        return Err(UsageError("--frames must be positive".into()).into());
    }
    let bundle = CheckpointBundle::load(checkpoint)?;
    let dataset = load_dataset(data)?;
    prepare_out(common, &cfg)?;
    let mut manifest = RunManifest::start("render", bundle.config_hash.clone(), cfg.seed);
    let (h, w) = dataset.hr_shape();
    let keyframes: Vec<_> = dataset.views().iter().map(|v| v.pose.rescaled(w, h)).collect();
    let path = interpolate_poses(&keyframes, frames)?;
    let frames_dir = common.out.join("frames");
    let mut images = Vec::with_capacity(path.len());
    for pose in &path {
        images.push(render_image(&bundle.hr_field, pose, h, w)?);
    }
    write_images(&frames_dir, "frame", images.iter().enumerate())?;
    manifest.output(&frames_dir);
    manifest.detail("frames", frames);
    manifest.detail("checkpoint_step", bundle.t);
    manifest.finish(&common.out)
}

fn default_held_out(data: &Path) -> Option<PathBuf> {
    let candidate = data.parent()?.join("held_out");
    candidate.join("poses.txt").exists().then_some(candidate)
}

fn find_loss_log(checkpoint: &Path) -> Option<PathBuf> {
    checkpoint
        .ancestors()
        .skip(1)
        .take(2)
        .map(|d| d.join("loss_log.txt"))
        .find(|p| p.exists())
}

pub fn eval(
    common: &Common,
    stages: &Stages,
    flags: &TrainFlags,
    checkpoint: &Path,
    held_out: Option<&Path>,
    loss_log: Option<&Path>,
) -> Result<()> {
    let cfg = resolve_config(common, Some(flags))?;
    let (dataset, lr_field, backbone) = load_stages(stages, &cfg)?;
    require(checkpoint, "checkpoint")?;
    let bundle = CheckpointBundle::load(checkpoint)?;
    let held_dir = match held_out {
        Some(p) => {
            require(p, "held-out dataset")?;
            Some(p.to_path_buf())
        }
        None => default_held_out(&stages.data),
    };
    let held = held_dir.as_deref().map(load_dataset).transpose()?;
    let losses = match loss_log.map(Path::to_path_buf).or_else(|| find_loss_log(checkpoint)) {
        Some(p) => {
            require(&p, "loss log")?;
            Some(read_loss_log(&p)?)
        }
        None => None,
    };
    prepare_out(common, &cfg)?;
    let mut manifest = RunManifest::start("eval", bundle.config_hash.clone(), cfg.seed);

    let run = RunArtifacts {
        dataset: &dataset,
        depth_field: &lr_field,
        hr_field: &bundle.hr_field,
        backbone: &backbone,
        latents: &bundle.latent_store,
    };
    let options = EvaluationOptions {
        run_id: run_id(&common.out),
        config_hash: bundle.config_hash.clone(),
        warp: WarpOptions {
            min_weight: cfg.warp_min_weight,
            depth_tolerance: cfg.warp_depth_tolerance,
        },
        baseline_seed: Some(cfg.seed),
    };
    let evaluation = evaluate_run(&run, held.as_ref(), &MaskedMae, &options)?;
    emit_report(&evaluation.report, &common.out, losses.as_deref())?;
    write_images(&common.out.join("renders"), "view", evaluation.renders.iter().map(|(i, img)| (*i, img)))?;
    write_images(&common.out.join("baseline"), "view", evaluation.baseline.iter().map(|(i, img)| (*i, img)))?;

    for name in ["metrics.json", "metrics.txt", "plots", "renders", "baseline"] {
        manifest.output(common.out.join(name));
    }
    manifest.detail("checkpoint_step", bundle.t);
    manifest.detail("held_out", held_dir.map(|p| p.display().to_string()));
    manifest.finish(&common.out)
}

fn run_id(out: &Path) -> String {
    out.file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| "run".into())
}

pub fn ablate_latent(common: &Common, stages: &Stages, factors: &[usize], held_out: Option<&Path>) -> Result<()> {
    let cfg = resolve_config(common, None)?;
    if factors.is_empty() {
        return Err(UsageError("--factors needs at least one value".into()).into());
    }
    let mut variants = Vec::with_capacity(factors.len());
    for &d in factors {
        let mut c = cfg.clone();
        c.latent_downsample = d;
        c.validate()?;
        variants.push(c);
    }
    let (dataset, lr_field, backbone) = load_stages(stages, &cfg)?;
    let held_dir = match held_out {
        Some(p) => {
            require(p, "held-out dataset")?;
            Some(p.to_path_buf())
        }
        None => default_held_out(&stages.data),
    };
    let held = held_dir.as_deref().map(load_dataset).transpose()?;
    prepare_out(common, &cfg)?;
    let mut manifest = RunManifest::start("ablate-latent", cfg.hash(), cfg.seed);

    let mut rows = Vec::new();
    for c in &variants {
        let dir = common.out.join(format!("downsample_{}", c.latent_downsample));
        fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
        let tc = c.train();
        let mut state = MutualLearning::new(&dataset, &lr_field, &backbone, &tc)?;
        let mut losses = Vec::new();
        state.run(tc.iterations, None, |r| {
            losses.push(*r);
            Ok(())
        })?;
        let log_path = dir.join("loss_log.txt");
        if log_path.exists() {
            fs::remove_file(&log_path).with_context(|| format!("removing {}", log_path.display()))?;
        }
        append_loss_log(&log_path, &losses)?;
        state.bundle().save(&dir.join("final.snrf"))?;
        let run = RunArtifacts {
            dataset: &dataset,
            depth_field: &lr_field,
            hr_field: state.hr_field(),
            backbone: &backbone,
            latents: state.latents(),
        };
        let options = EvaluationOptions {
            run_id: format!("downsample_{}", c.latent_downsample),
            config_hash: c.hash(),
            warp: WarpOptions {
                min_weight: c.warp_min_weight,
                depth_tolerance: c.warp_depth_tolerance,
            },
            baseline_seed: None,
        };
        let evaluation = evaluate_run(&run, held.as_ref(), &MaskedMae, &options)?;
        emit_report(&evaluation.report, &dir, Some(&losses))?;
        rows.push(json!({
            "latent_downsample": c.latent_downsample,
            "config_hash": c.hash(),
            "psnr": evaluation.report.psnr.map(|p| p.db()),
            "lr_residual": evaluation.report.lr_residual,
            "warped_consistency": evaluation.report.warped_consistency.aggregate,
        }));
        manifest.output(&dir);
    }
    let summary = common.out.join("ablation.json");
    let mut text = serde_json::to_string_pretty(&rows)?;
    text.push('\n');
    fs::write(&summary, text).with_context(|| format!("writing {}", summary.display()))?;
    manifest.output(&summary);
    manifest.detail("factors", factors.to_vec());
    manifest.finish(&common.out)
}
