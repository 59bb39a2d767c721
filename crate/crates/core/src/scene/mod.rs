//! Posed multi-view image data: cameras, rays, images, the synthetic scene
//! generator and dataset persistence.

pub mod camera;
pub mod dataset;
pub mod image;
pub mod math;
pub mod synthetic;

pub use camera::{generate_rays, interpolate_poses, CameraPose, RayBatch};
pub use dataset::{load_dataset, save_dataset, BitDepth, MultiViewDataset, Resolution, View};
pub use image::{box_downsample, replicate, ImageBuffer};
pub use synthetic::{generate_held_out_views, generate_synthetic_scene, SceneSpec};
