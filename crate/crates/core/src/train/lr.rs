use rand::Rng;

use super::config::LrPretrainConfig;
use crate::error::{Error, Result};
use crate::field::{render, RadianceField, Sampling};
use crate::nn::Adam;
use crate::rng;
use crate::scene::{generate_rays, MultiViewDataset, RayBatch};

/// All LR rays of a dataset with their target colours.
struct RayPool {
    rays: Vec<RayBatch>,
    colors: Vec<Vec<[f64; 3]>>,
    /// `(view, ray)` for every pixel.
    index: Vec<(usize, usize)>,
}

impl RayPool {
    fn build(dataset: &MultiViewDataset) -> Result<Self> {
        let (h, w) = dataset.lr_shape();
        let mut rays = Vec::new();
        let mut colors = Vec::new();
        let mut index = Vec::new();
        for (k, view) in dataset.views().iter().enumerate() {
            let img = dataset.lr_image(view)?;
            rays.push(generate_rays(&view.pose, h, w, view.index));
            colors.push(img.as_slice().chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect());
            index.extend((0..h * w).map(|r| (k, r)));
        }
        Ok(Self { rays, colors, index })
    }
}

/// Fits the LR field to the LR images of every view (HR views are
/// box-downsampled first) with a photometric MSE on random ray batches.
pub fn pretrain_lr_nerf(dataset: &MultiViewDataset, config: &LrPretrainConfig) -> Result<RadianceField> {
    pretrain_lr_nerf_with(dataset, config, |_, _, _| Ok(()))
}

/// [`pretrain_lr_nerf`] with a callback after every step receiving the step,
/// the batch MSE and the updated field. A non-finite loss aborts with a
/// numerical error before the field is handed to the callback again, so the
/// last state the callback saw is the last good one.
pub fn pretrain_lr_nerf_with(
    dataset: &MultiViewDataset,
    config: &LrPretrainConfig,
    mut on_step: impl FnMut(usize, f64, &RadianceField) -> Result<()>,
) -> Result<RadianceField> {
    if dataset.views().len() < 2 {
        return Err(Error::Config("LR pretraining needs at least two views".into()));
    }
    if config.rays_per_step == 0 {
        return Err(Error::Config("rays_per_step must be positive".into()));
    }
    let pool = RayPool::build(dataset)?;
    let mut field = RadianceField::new(config.field.clone(), config.seed)?;
    let mut adam = Adam::new(field.parameter_count(), config.learning_rate);
    let mut grad = vec![0.0; field.parameter_count()];
    for step in 0..config.iterations {
        let mut rng = rng::stream(config.seed, "lr_pretrain", step as u64);
        // Rays from several views share one batch; group them per view so
        // each group keeps its own near/far bounds.
        let mut picks: Vec<(usize, usize)> = (0..config.rays_per_step)
            .map(|_| pool.index[rng.gen_range(0..pool.index.len())])
            .collect();
        picks.sort_unstable();
        grad.iter_mut().for_each(|g| *g = 0.0);
        let mut loss = 0.0;
        let n = picks.len() as f64;
        for group in picks.chunk_by(|a, b| a.0 == b.0) {
            let view = group[0].0;
            let idx: Vec<usize> = group.iter().map(|p| p.1).collect();
            let batch = pool.rays[view].select(&idx);
            let (samples, tape) = render::render_rays_train(&field, &batch, Sampling::Stratified(&mut rng))?;
            let mut d_color = Vec::with_capacity(idx.len());
            for (s, &r) in samples.iter().zip(&idx) {
                let target = pool.colors[view][r];
                let mut d = [0.0; 3];
                for c in 0..3 {
                    let e = s.color[c] - target[c];
                    loss += e * e / (3.0 * n);
                    d[c] = 2.0 * e / (3.0 * n);
                }
                d_color.push(d);
            }
            render::backward(&field, &tape, &d_color, &mut grad);
        }
        if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::Numerical(format!("LR pretraining diverged at step {step} (loss {loss})")));
        }
        adam.update(field.parameters_mut(), &grad);
        field.check_finite()?;
        on_step(step, loss, &field)?;
    }
    Ok(field)
}
