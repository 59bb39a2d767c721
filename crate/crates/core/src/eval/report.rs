use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use image::{Rgb, RgbImage};
use serde::{Deserialize, Serialize};

use super::metrics::Psnr;
use super::warp::{warped_consistency, Consistency, DepthMap, DisparityBucket, PixelDistance, WarpField, WarpOptions};
use crate::error::{Error, Result};
use crate::scene::ImageBuffer;
use crate::train::LossReport;

/// Consistency of one ordered view pair.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairConsistency {
    pub source_view: usize,
    pub target_view: usize,
    pub bucket: Option<DisparityBucket>,
    pub mean_displacement: Option<f64>,
    pub valid_fraction: f64,
    /// `None` when the warp has no valid pixel.
    pub distance: Option<f64>,
}

/// Warped consistency of one set of images over all evaluated pairs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConsistencySummary {
    pub metric: String,
    pub pairs: Vec<PairConsistency>,
    /// Mean distance per bucket label; buckets without pairs are absent.
    pub buckets: BTreeMap<String, f64>,
    /// Mean over every pair with overlap.
    pub aggregate: Option<f64>,
}

impl ConsistencySummary {
    pub fn from_pairs(metric: &str, pairs: Vec<PairConsistency>) -> Self {
        let mut per_bucket: BTreeMap<String, Vec<f64>> = BTreeMap::new();
        let mut all = Vec::new();
        for p in &pairs {
            if let (Some(b), Some(d)) = (p.bucket, p.distance) {
                per_bucket.entry(b.label().to_string()).or_default().push(d);
                all.push(d);
            }
        }
        let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
        Self {
            metric: metric.to_string(),
            buckets: per_bucket.iter().map(|(k, v)| (k.clone(), mean(v))).collect(),
            aggregate: (!all.is_empty()).then(|| mean(&all)),
            pairs,
        }
    }
}

/// Builds one warp per ordered pair `(i, j)` with `i < j` from depth maps.
pub fn pair_warps(depths: &BTreeMap<usize, DepthMap>, options: &WarpOptions) -> Result<Vec<WarpField>> {
    let keys: Vec<usize> = depths.keys().copied().collect();
    let mut warps = Vec::new();
    for (a, &i) in keys.iter().enumerate() {
        for &j in &keys[a + 1..] {
            warps.push(super::warp::build_warp_from_depth(&depths[&i], &depths[&j], i, j, options)?);
        }
    }
    Ok(warps)
}

/// Scores `images` (keyed by view index) under every warp.
pub fn consistency_over_pairs(
    images: &BTreeMap<usize, ImageBuffer>,
    warps: &[WarpField],
    metric: &dyn PixelDistance,
) -> Result<ConsistencySummary> {
    let mut pairs = Vec::with_capacity(warps.len());
    for w in warps {
        let get = |k: usize| images.get(&k).ok_or_else(|| Error::Config(format!("no image for view {k}")));
        let c = warped_consistency(get(w.source_view)?, get(w.target_view)?, w, metric)?;
        let disp = w.mean_displacement();
        pairs.push(PairConsistency {
            source_view: w.source_view,
            target_view: w.target_view,
            bucket: disp.map(DisparityBucket::from_displacement),
            mean_displacement: disp,
            valid_fraction: w.valid_fraction(),
            distance: match c {
                Consistency::Value(v) => Some(v),
                Consistency::NoOverlap => None,
            },
        });
    }
    Ok(ConsistencySummary::from_pairs(metric.name(), pairs))
}

/// Evaluation results of one run. Serialized keys are part of the output
/// format: `run_id`, `config_hash`, `psnr`, `lr_residual`, `mask_fraction`,
/// `warped_consistency`, `baseline_consistency`, `extra`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub run_id: String,
    pub config_hash: String,
    /// HR-field renders against HR ground truth on held-out views; `None`
    /// when no ground truth was available.
    pub psnr: Option<Psnr>,
    /// Largest LR-consistency residual over the super-resolved views.
    pub lr_residual: f64,
    /// Mean valid fraction over all warps.
    pub mask_fraction: f64,
    pub warped_consistency: ConsistencySummary,
    pub baseline_consistency: Option<ConsistencySummary>,
    pub extra: BTreeMap<String, f64>,
}

impl MetricReport {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }

    /// Human-readable table: a summary block and one row per view pair.
    pub fn to_table(&self) -> String {
        let fmt = |v: Option<f64>| v.map_or_else(|| "-".to_string(), |x| format!("{x:.5}"));
        let mut out = String::new();
        out.push_str(&format!("run            {}\n", self.run_id));
        out.push_str(&format!("config         {}\n", self.config_hash));
        out.push_str(&format!("psnr_db        {}\n", self.psnr.map_or_else(|| "-".to_string(), |p| p.to_string())));
        out.push_str(&format!("lr_residual    {:.3e}\n", self.lr_residual));
        out.push_str(&format!("mask_fraction  {:.4}\n", self.mask_fraction));
        out.push_str(&format!("consistency    {}\n", fmt(self.warped_consistency.aggregate)));
        if let Some(b) = &self.baseline_consistency {
            out.push_str(&format!("baseline       {}\n", fmt(b.aggregate)));
        }
        for (k, v) in &self.extra {
            out.push_str(&format!("{k:<14} {v:.5}\n"));
        }
        out.push('\n');
        out.push_str("source target bucket  displacement valid   distance baseline\n");
        for (i, p) in self.warped_consistency.pairs.iter().enumerate() {
            let base = self.baseline_consistency.as_ref().and_then(|b| b.pairs.get(i)).and_then(|p| p.distance);
            out.push_str(&format!(
                "{:>6} {:>6} {:<7} {:>12} {:>6.3} {:>10} {:>8}\n",
                p.source_view,
                p.target_view,
                p.bucket.map_or("-", |b| b.label()),
                fmt(p.mean_displacement),
                p.valid_fraction,
                fmt(p.distance),
                fmt(base),
            ));
        }
        out
    }
}

/// Writes `metrics.json`, `metrics.txt` and `plots/*.png` into `out_dir`.
/// The loss-curve plot is drawn only when a loss log is given.
pub fn emit_report(report: &MetricReport, out_dir: &Path, losses: Option<&[LossReport]>) -> Result<()> {
    let plots = out_dir.join("plots");
    fs::create_dir_all(&plots).map_err(|e| Error::io(&plots, e.to_string()))?;
    let write = |name: &str, text: String| {
        let p = out_dir.join(name);
        fs::write(&p, text).map_err(|e| Error::io(&p, e.to_string()))
    };
    write("metrics.json", report.to_json())?;
    write("metrics.txt", report.to_table())?;
    let bars = bucket_chart(report);
    let path = plots.join("consistency_buckets.png");
    bars.save(&path).map_err(|e| Error::io(&path, e.to_string()))?;
    if let Some(losses) = losses {
        let path = plots.join("loss.png");
        loss_chart(losses).save(&path).map_err(|e| Error::io(&path, e.to_string()))?;
    }
    Ok(())
}

const W: u32 = 480;
const H: u32 = 320;
const MARGIN: u32 = 30;

fn canvas() -> RgbImage {
    let mut img = RgbImage::from_pixel(W, H, Rgb([255, 255, 255]));
    for x in MARGIN..W - MARGIN / 2 {
        img.put_pixel(x, H - MARGIN, Rgb([0, 0, 0]));
    }
    for y in MARGIN / 2..=H - MARGIN {
        img.put_pixel(MARGIN, y, Rgb([0, 0, 0]));
    }
    img
}

fn line(img: &mut RgbImage, (x0, y0): (f64, f64), (x1, y1): (f64, f64), color: Rgb<u8>) {
    let steps = ((x1 - x0).abs().max((y1 - y0).abs()).ceil() as usize).max(1);
    for k in 0..=steps {
        let t = k as f64 / steps as f64;
        let (x, y) = (x0 + t * (x1 - x0), y0 + t * (y1 - y0));
        if x >= 0.0 && y >= 0.0 && (x as u32) < W && (y as u32) < H {
            img.put_pixel(x as u32, y as u32, color);
        }
    }
}

/// Bars per disparity bucket: Super-NeRF in blue, baseline in orange.
fn bucket_chart(report: &MetricReport) -> RgbImage {
    let mut img = canvas();
    let series: Vec<(&ConsistencySummary, Rgb<u8>)> = std::iter::once((&report.warped_consistency, Rgb([40, 90, 200])))
        .chain(report.baseline_consistency.iter().map(|b| (b, Rgb([230, 130, 30]))))
        .collect();
    let max = series
        .iter()
        .flat_map(|(s, _)| s.buckets.values().copied())
        .fold(0.0f64, f64::max)
        .max(1e-12);
    let plot_w = (W - 2 * MARGIN) as f64;
    let plot_h = (H - 2 * MARGIN) as f64;
    let group = plot_w / DisparityBucket::ALL.len() as f64;
    let bar = group / (series.len() as f64 + 1.0);
    for (g, bucket) in DisparityBucket::ALL.iter().enumerate() {
        for (k, (s, color)) in series.iter().enumerate() {
            if let Some(v) = s.buckets.get(bucket.label()) {
                let x0 = MARGIN as f64 + g as f64 * group + (k as f64 + 0.5) * bar;
                let top = (H - MARGIN) as f64 - plot_h * v / max;
                for x in x0 as u32..(x0 + bar * 0.9) as u32 {
                    for y in top as u32..H - MARGIN {
                        img.put_pixel(x, y, *color);
                    }
                }
            }
        }
    }
    img
}

/// `loss_total` (black) and `loss_sr` (blue) against the step index.
fn loss_chart(losses: &[LossReport]) -> RgbImage {
    let mut img = canvas();
    if losses.is_empty() {
        return img;
    }
    let max = losses.iter().map(|r| r.loss_total).fold(0.0f64, f64::max).max(1e-12);
    let t_max = losses.last().map_or(1, |r| r.t.max(1)) as f64;
    let plot_w = (W - 2 * MARGIN) as f64;
    let plot_h = (H - 2 * MARGIN) as f64;
    let to_xy = |t: usize, v: f64| (MARGIN as f64 + plot_w * t as f64 / t_max, (H - MARGIN) as f64 - plot_h * v / max);
    for (values, color) in [
        (losses.iter().map(|r| r.loss_total).collect::<Vec<_>>(), Rgb([0, 0, 0])),
        (losses.iter().map(|r| r.loss_sr).collect::<Vec<_>>(), Rgb([40, 90, 200])),
    ] {
        // Exponential smoothing keeps single-patch noise readable.
        let mut ema = values[0];
        let mut prev = to_xy(losses[0].t, ema);
        for (r, v) in losses.iter().zip(&values).skip(1) {
            ema = 0.95 * ema + 0.05 * v;
            let p = to_xy(r.t, ema);
            line(&mut img, prev, p, color);
            prev = p;
        }
    }
    img
}
