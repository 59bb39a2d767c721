//! Consistency-controlling super-resolution: a latent-conditioned generator,
//! per-view latent codes and the projection that makes every output agree
//! exactly with its LR input.

pub mod backbone;
pub mod cem;
pub mod latent;
pub mod pretrain;

pub use backbone::{ccsr_forward, sr_generate, BackboneConfig, GeneratorTape, Region, SRBackbone};
pub use cem::{cem_project, cem_vjp, BlurKernel, KernelKind};
pub use latent::{init_latent, init_latent_downsampled, LatentCode, LatentCodeStore, LATENT_INIT_STD};
pub use pretrain::{pretrain_sr_backbone, pretrain_sr_backbone_with, texture_corpus, SrPretrainConfig, SrPretrainStats};
