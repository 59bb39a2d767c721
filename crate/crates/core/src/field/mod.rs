//! Radiance fields: positional encoding, the field network and the
//! differentiable volume renderer.

pub mod encoding;
pub mod network;
pub mod render;

pub use encoding::{encoded_dim, positional_encode};
pub use network::{FieldConfig, RadianceField};
pub use render::{
    composite, render_image, render_rays, render_rays_train, render_view, Composite, RenderSample, RenderedView,
    Sampling,
};
