use std::collections::BTreeMap;

use super::metrics::{lr_consistency_residual, mean_psnr, psnr, Psnr};
use super::report::{consistency_over_pairs, pair_warps, MetricReport};
use super::warp::{DepthMap, PixelDistance, WarpOptions};
use crate::ccsr::{ccsr_forward, init_latent, BlurKernel, LatentCodeStore, SRBackbone};
use crate::error::Result;
use crate::field::{render_image, RadianceField};
use crate::scene::{box_downsample, ImageBuffer, MultiViewDataset};

/// Everything a finished run is scored on.
pub struct RunArtifacts<'a> {
    /// The dataset the run was trained on (LR-only or hybrid).
    pub dataset: &'a MultiViewDataset,
    /// Field whose depth expectation defines the warps.
    pub depth_field: &'a RadianceField,
    pub hr_field: &'a RadianceField,
    pub backbone: &'a SRBackbone,
    pub latents: &'a LatentCodeStore,
}

#[derive(Clone, Debug)]
pub struct EvaluationOptions {
    pub run_id: String,
    pub config_hash: String,
    pub warp: WarpOptions,
    /// Seed of the per-view random codes of the independent-SR baseline.
    /// `None` skips the baseline.
    pub baseline_seed: Option<u64>,
}

/// A scored run together with the images the scores were computed from.
pub struct Evaluation {
    pub report: MetricReport,
    /// HR-field renders at the training views.
    pub renders: BTreeMap<usize, ImageBuffer>,
    /// Independent-SR baseline images at the training views.
    pub baseline: BTreeMap<usize, ImageBuffer>,
    /// HR-field renders at the held-out views.
    pub held_out_renders: BTreeMap<usize, ImageBuffer>,
}

impl Evaluation {
    /// Fraction of pairs with overlap on which the run beats the baseline.
    pub fn fraction_below_baseline(&self) -> Option<f64> {
        let base = self.report.baseline_consistency.as_ref()?;
        let mut wins = 0usize;
        let mut total = 0usize;
        for (p, b) in self.report.warped_consistency.pairs.iter().zip(&base.pairs) {
            if let (Some(d), Some(db)) = (p.distance, b.distance) {
                total += 1;
                if d < db {
                    wins += 1;
                }
            }
        }
        (total > 0).then(|| wins as f64 / total as f64)
    }
}

/// Independent super-resolution of every training view with a fresh random
/// code per view and no joint optimisation.
pub fn independent_sr(dataset: &MultiViewDataset, backbone: &SRBackbone, seed: u64) -> Result<BTreeMap<usize, ImageBuffer>> {
    let s = dataset.scale();
    let (h, w) = dataset.lr_shape();
    let kernel = BlurKernel::box_filter(s);
    dataset
        .views()
        .iter()
        .map(|v| {
            let lr = dataset.lr_image(v)?;
            let code = init_latent(v.index, h, w, s, seed);
            Ok((v.index, ccsr_forward(backbone, &lr, &code, &kernel)?))
        })
        .collect()
}

/// Renders `field` at every view of `dataset` at HR resolution.
pub fn render_views(field: &RadianceField, dataset: &MultiViewDataset) -> Result<BTreeMap<usize, ImageBuffer>> {
    let (h, w) = dataset.hr_shape();
    dataset.views().iter().map(|v| Ok((v.index, render_image(field, &v.pose, h, w)?))).collect()
}

/// Mean held-out PSNR of `field` against the HR ground truth in `held_out`.
pub fn held_out_psnr(field: &RadianceField, held_out: &MultiViewDataset) -> Result<(Psnr, BTreeMap<usize, ImageBuffer>)> {
    let renders = render_views(field, held_out)?;
    let mut pairs = Vec::new();
    for v in held_out.hr_views() {
        pairs.push((&renders[&v.index], &v.image));
    }
    Ok((mean_psnr(pairs)?, renders))
}

/// Scores a run: HR-field PSNR on held-out views, the LR-consistency residual
/// of the learned super-resolutions, and warped consistency of the HR-field
/// renders (and optionally the independent-SR baseline) over all view pairs.
pub fn evaluate_run(
    run: &RunArtifacts<'_>,
    held_out: Option<&MultiViewDataset>,
    metric: &dyn PixelDistance,
    options: &EvaluationOptions,
) -> Result<Evaluation> {
    let dataset = run.dataset;
    let s = dataset.scale();
    let (h, w) = dataset.hr_shape();
    let kernel = BlurKernel::box_filter(s);

    let mut depths = BTreeMap::new();
    for v in dataset.views() {
        depths.insert(v.index, DepthMap::render(run.depth_field, &v.pose, h, w)?);
    }
    let warps = pair_warps(&depths, &options.warp)?;
    let mask_fraction = if warps.is_empty() {
        0.0
    } else {
        warps.iter().map(|w| w.valid_fraction()).sum::<f64>() / warps.len() as f64
    };

    let renders = render_views(run.hr_field, dataset)?;
    let warped_consistency = consistency_over_pairs(&renders, &warps, metric)?;

    let baseline = match options.baseline_seed {
        Some(seed) => independent_sr(dataset, run.backbone, seed)?,
        None => BTreeMap::new(),
    };
    let baseline_consistency = match options.baseline_seed {
        Some(_) => Some(consistency_over_pairs(&baseline, &warps, metric)?),
        None => None,
    };

    let mut lr_residual = 0.0f64;
    for v in dataset.lr_views() {
        if let Some(code) = run.latents.get(v.index) {
            let sr = ccsr_forward(run.backbone, &v.image, code, &kernel)?;
            lr_residual = lr_residual.max(lr_consistency_residual(&sr, &v.image, s)?);
        }
    }

    let mut extra = BTreeMap::new();
    let mut train_lr = Vec::new();
    for v in dataset.views() {
        let lr = dataset.lr_image(v)?;
        let down = box_downsample(&renders[&v.index], s)?;
        if let Psnr::Db(db) = psnr(&down, &lr)? {
            train_lr.push(db);
        }
    }
    if !train_lr.is_empty() {
        extra.insert("train_lr_psnr".into(), train_lr.iter().sum::<f64>() / train_lr.len() as f64);
    }

    let (psnr_value, held_out_renders) = match held_out {
        Some(ho) => {
            let (p, r) = held_out_psnr(run.hr_field, ho)?;
            (Some(p), r)
        }
        None => {
            let truths: Vec<_> = dataset.hr_views().map(|v| (&renders[&v.index], &v.image)).collect();
            let value = if truths.is_empty() { None } else { Some(mean_psnr(truths)?) };
            (value, BTreeMap::new())
        }
    };

    let mut evaluation = Evaluation {
        report: MetricReport {
            run_id: options.run_id.clone(),
            config_hash: options.config_hash.clone(),
            psnr: psnr_value,
            lr_residual,
            mask_fraction,
            warped_consistency,
            baseline_consistency,
            extra,
        },
        renders,
        baseline,
        held_out_renders,
    };
    if let Some(f) = evaluation.fraction_below_baseline() {
        evaluation.report.extra.insert("pairs_below_baseline".into(), f);
    }
    Ok(evaluation)
}
