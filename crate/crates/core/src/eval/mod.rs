//! Quantitative evaluation: PSNR, LR consistency, depth-warped cross-view
//! consistency, and report emission.

pub mod metrics;
pub mod pipeline;
pub mod report;
pub mod warp;

pub use metrics::{lr_consistency_residual, mean_psnr, mse, psnr, Psnr};
pub use pipeline::{evaluate_run, held_out_psnr, independent_sr, render_views, Evaluation, EvaluationOptions, RunArtifacts};
pub use report::{consistency_over_pairs, emit_report, pair_warps, ConsistencySummary, MetricReport, PairConsistency};
pub use warp::{
    build_warp, build_warp_from_depth, warped_consistency, Consistency, DepthMap, DisparityBucket, MaskedMae,
    PixelDistance, WarpField, WarpOptions,
};
