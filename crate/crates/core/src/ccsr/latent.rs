use std::collections::BTreeMap;
use std::path::Path;

use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::checkpoint::Container;
use crate::error::{Error, Result};
use crate::rng;

/// Standard deviation of freshly initialised codes.
pub const LATENT_INIT_STD: f64 = 0.1;

/// A per-view dense control code of shape `3 x (sH / d) x (sW / d)`, stored
/// interleaved (`row, col, channel`). `d` is the spatial downsample factor
/// (1 for the full-resolution code); coarser codes are expanded to HR by
/// nearest-neighbour replication before they reach the generator.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LatentCode {
    pub view_index: usize,
    pub height: usize,
    pub width: usize,
    pub downsample: usize,
    pub learnable: bool,
    pub values: Vec<f64>,
}

impl LatentCode {
    /// `(channels, rows, cols)` of the stored code.
    pub fn shape(&self) -> (usize, usize, usize) {
        (3, self.height / self.downsample, self.width / self.downsample)
    }

    /// HR-resolution code values (`height x width x 3`).
    pub fn expanded(&self) -> Vec<f64> {
        if self.downsample == 1 {
            return self.values.clone();
        }
        let d = self.downsample;
        let cw = self.width / d;
        let mut out = Vec::with_capacity(self.height * self.width * 3);
        for y in 0..self.height {
            for x in 0..self.width {
                let o = ((y / d) * cw + x / d) * 3;
                out.extend_from_slice(&self.values[o..o + 3]);
            }
        }
        out
    }

    /// Pulls a gradient on the HR-resolution code back to the stored values.
    pub fn reduce_gradient(&self, hr_grad: &[f64]) -> Vec<f64> {
        if self.downsample == 1 {
            return hr_grad.to_vec();
        }
        let d = self.downsample;
        let cw = self.width / d;
        let mut out = vec![0.0; self.values.len()];
        for y in 0..self.height {
            for x in 0..self.width {
                let o = ((y / d) * cw + x / d) * 3;
                let i = (y * self.width + x) * 3;
                for c in 0..3 {
                    out[o + c] += hr_grad[i + c];
                }
            }
        }
        out
    }
}

/// Full-resolution code for an `h x w` LR view at scale `s`, drawn i.i.d.
/// from `N(0, 0.1²)`; deterministic in `(view_index, seed)`.
pub fn init_latent(view_index: usize, h: usize, w: usize, s: usize, seed: u64) -> LatentCode {
    init_latent_downsampled(view_index, h, w, s, 1, seed).expect("factor 1 always divides")
}

/// Like [`init_latent`] but storing the code at `1/downsample` of the HR
/// size per side.
pub fn init_latent_downsampled(view_index: usize, h: usize, w: usize, s: usize, downsample: usize, seed: u64) -> Result<LatentCode> {
    let (height, width) = (h * s, w * s);
    if downsample == 0 || height % downsample != 0 || width % downsample != 0 {
        return Err(Error::Config(format!(
            "latent downsample {downsample} does not divide the {height}x{width} code"
        )));
    }
    let mut rng = rng::stream(seed, "latent", view_index as u64);
    let normal = Normal::new(0.0, LATENT_INIT_STD).expect("finite std");
    let n = 3 * (height / downsample) * (width / downsample);
    Ok(LatentCode {
        view_index,
        height,
        width,
        downsample,
        learnable: true,
        values: (0..n).map(|_| normal.sample(&mut rng)).collect(),
    })
}

/// One code per LR training view.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct LatentCodeStore {
    codes: BTreeMap<usize, LatentCode>,
}

impl LatentCodeStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, code: LatentCode) {
        self.codes.insert(code.view_index, code);
    }

    pub fn get(&self, view_index: usize) -> Option<&LatentCode> {
        self.codes.get(&view_index)
    }

    pub fn get_mut(&mut self, view_index: usize) -> Option<&mut LatentCode> {
        self.codes.get_mut(&view_index)
    }

    pub fn len(&self) -> usize {
        self.codes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.codes.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &LatentCode> {
        self.codes.values()
    }

    pub fn to_container(&self) -> Container {
        let meta: Vec<_> = self
            .codes
            .values()
            .map(|c| {
                serde_json::json!({
                    "view_index": c.view_index,
                    "height": c.height,
                    "width": c.width,
                    "downsample": c.downsample,
                    "learnable": c.learnable,
                })
            })
            .collect();
        let mut container = Container::new("latent_store", serde_json::Value::Array(meta));
        for c in self.codes.values() {
            container = container.with_tensor(format!("view_{}", c.view_index), c.values.clone());
        }
        container
    }

    pub fn from_container(mut c: Container) -> Result<Self> {
        #[derive(Deserialize)]
        struct Meta {
            view_index: usize,
            height: usize,
            width: usize,
            downsample: usize,
            learnable: bool,
        }
        let metas: Vec<Meta> =
            serde_json::from_value(c.meta.clone()).map_err(|e| Error::Config(format!("latent store header: {e}")))?;
        let mut store = LatentCodeStore::new();
        for m in metas {
            let values = c
                .take_tensor(&format!("view_{}", m.view_index))
                .ok_or_else(|| Error::Config(format!("latent store lacks view {}", m.view_index)))?;
            let code = LatentCode {
                view_index: m.view_index,
                height: m.height,
                width: m.width,
                downsample: m.downsample,
                learnable: m.learnable,
                values,
            };
            let (ch, h, w) = code.shape();
            if code.values.len() != ch * h * w {
                return Err(Error::Shape(format!("latent code for view {} has wrong size", m.view_index)));
            }
            store.insert(code);
        }
        Ok(store)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.to_container().save(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_container(Container::load(path, "latent_store")?)
    }
}
