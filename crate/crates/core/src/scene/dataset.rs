use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use image::{ImageBuffer as PngBuffer, Rgb};
use serde::{Deserialize, Serialize};

use super::camera::CameraPose;
use super::image::{box_downsample, ImageBuffer};
use super::synthetic::quantize_pose;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Resolution {
    #[serde(rename = "LR")]
    Lr,
    #[serde(rename = "HR")]
    Hr,
}

impl Resolution {
    pub fn tag(self) -> &'static str {
        match self {
            Resolution::Lr => "LR",
            Resolution::Hr => "HR",
        }
    }
}

/// One posed image. The pose intrinsics describe the image's own resolution.
#[derive(Clone, Debug, PartialEq)]
pub struct View {
    pub index: usize,
    pub pose: CameraPose,
    pub image: ImageBuffer,
    pub resolution: Resolution,
}

/// Posed images at one or two resolutions related by `scale`.
#[derive(Clone, Debug, PartialEq)]
pub struct MultiViewDataset {
    views: Vec<View>,
    scale: usize,
}

impl MultiViewDataset {
    pub fn new(views: Vec<View>, scale: usize) -> Result<Self> {
        if scale == 0 {
            return Err(Error::Config("scale factor must be positive".into()));
        }
        if views.len() < 2 {
            return Err(Error::Config(format!("dataset needs at least 2 views, got {}", views.len())));
        }
        let mut seen = BTreeSet::new();
        let mut lr_shape = None;
        let mut hr_shape = None;
        for v in &views {
            if !seen.insert(v.index) {
                return Err(Error::Config(format!("duplicate view index {}", v.index)));
            }
            if v.image.shape() != (v.pose.height, v.pose.width) {
                return Err(Error::Shape(format!(
                    "view {}: image {}x{} does not match pose {}x{}",
                    v.index,
                    v.image.height(),
                    v.image.width(),
                    v.pose.height,
                    v.pose.width
                )));
            }
            let slot = match v.resolution {
                Resolution::Lr => &mut lr_shape,
                Resolution::Hr => &mut hr_shape,
            };
            match slot {
                None => *slot = Some(v.image.shape()),
                Some(shape) if *shape != v.image.shape() => {
                    return Err(Error::Shape(format!(
                        "view {} ({}): resolution differs from other {} views",
                        v.index,
                        v.resolution.tag(),
                        v.resolution.tag()
                    )))
                }
                _ => {}
            }
        }
        if let (Some((h, w)), Some((hh, hw))) = (lr_shape, hr_shape) {
            if (h * scale, w * scale) != (hh, hw) {
                return Err(Error::Shape(format!(
                    "HR views are {hh}x{hw}, expected {}x{} for scale {scale}",
                    h * scale,
                    w * scale
                )));
            }
        }
        if let Some((hh, hw)) = hr_shape {
            if hh % scale != 0 || hw % scale != 0 {
                return Err(Error::Shape(format!("HR size {hh}x{hw} not divisible by scale {scale}")));
            }
        }
        Ok(Self { views, scale })
    }

    pub fn views(&self) -> &[View] {
        &self.views
    }

    pub fn scale(&self) -> usize {
        self.scale
    }

    pub fn view(&self, index: usize) -> Option<&View> {
        self.views.iter().find(|v| v.index == index)
    }

    pub fn lr_views(&self) -> impl Iterator<Item = &View> {
        self.views.iter().filter(|v| v.resolution == Resolution::Lr)
    }

    pub fn hr_views(&self) -> impl Iterator<Item = &View> {
        self.views.iter().filter(|v| v.resolution == Resolution::Hr)
    }

    /// LR `(height, width)`, derived from HR views when no LR view exists.
    pub fn lr_shape(&self) -> (usize, usize) {
        let v = &self.views[0];
        match v.resolution {
            Resolution::Lr => v.image.shape(),
            Resolution::Hr => (v.image.height() / self.scale, v.image.width() / self.scale),
        }
    }

    pub fn hr_shape(&self) -> (usize, usize) {
        let (h, w) = self.lr_shape();
        (h * self.scale, w * self.scale)
    }

    /// The LR image of a view, downsampling HR views on the fly.
    pub fn lr_image(&self, view: &View) -> Result<ImageBuffer> {
        match view.resolution {
            Resolution::Lr => Ok(view.image.clone()),
            Resolution::Hr => box_downsample(&view.image, self.scale),
        }
    }

    /// Every view degraded to LR with the box kernel.
    pub fn degrade(&self) -> Result<MultiViewDataset> {
        self.hybrid(0.0)
    }

    /// Keeps `round(fraction * n)` evenly spaced views at HR and degrades the
    /// rest. The HR views must carry HR images.
    pub fn hybrid(&self, fraction_hr: f64) -> Result<MultiViewDataset> {
        if !(0.0..=1.0).contains(&fraction_hr) {
            return Err(Error::Config(format!("hybrid HR fraction {fraction_hr} outside [0, 1]")));
        }
        let keep = hybrid_selection(self.views.len(), fraction_hr);
        let (lr_h, lr_w) = self.lr_shape();
        let views = self
            .views
            .iter()
            .enumerate()
            .map(|(k, v)| {
                if keep.contains(&k) {
                    if v.resolution != Resolution::Hr {
                        return Err(Error::Config(format!(
                            "view {} selected as HR ground truth but only has an LR image",
                            v.index
                        )));
                    }
                    Ok(v.clone())
                } else {
                    let pose = match v.resolution {
                        Resolution::Lr => v.pose.clone(),
                        Resolution::Hr => quantize_pose(v.pose.rescaled(lr_w, lr_h)),
                    };
                    Ok(View {
                        index: v.index,
                        image: self.lr_image(v)?,
                        pose,
                        resolution: Resolution::Lr,
                    })
                }
            })
            .collect::<Result<Vec<_>>>()?;
        MultiViewDataset::new(views, self.scale)
    }
}

/// Positions (in `0..n`) of the views kept at HR for a hybrid fraction:
/// `round(fraction * n)` positions spaced as evenly as possible.
pub fn hybrid_selection(n: usize, fraction_hr: f64) -> BTreeSet<usize> {
    let k = ((fraction_hr * n as f64).round() as usize).min(n);
    (0..k).map(|j| j * n / k).collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum BitDepth {
    Eight,
    Sixteen,
}

impl BitDepth {
    fn bits(self) -> u32 {
        match self {
            BitDepth::Eight => 8,
            BitDepth::Sixteen => 16,
        }
    }
}

const POSES_FILE: &str = "poses.txt";
const HEADER: &str = "# supernerf dataset v1";

fn view_file(index: usize) -> String {
    format!("view_{index}.png")
}

/// Writes `poses.txt` and one PNG per view under `dir`.
///
/// `poses.txt` starts with `#` header lines (`scale`, `bit_depth`) followed by
/// one line per view: `index tag r00 r01 r02 c0 r10 r11 r12 c1 r20 r21 r22 c2
/// focal near far`, where `r` is the world-to-camera rotation and `c` the
/// camera centre in world coordinates. Scalars are written at single
/// precision, which is exact for poses produced by the scene generator.
pub fn save_dataset(dataset: &MultiViewDataset, dir: &Path, depth: BitDepth) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut text = String::new();
    let _ = writeln!(text, "{HEADER}");
    let _ = writeln!(text, "# scale {}", dataset.scale);
    let _ = writeln!(text, "# bit_depth {}", depth.bits());
    for v in &dataset.views {
        let p = &v.pose;
        let mut fields = vec![v.index.to_string(), v.resolution.tag().to_string()];
        for r in 0..3 {
            for c in 0..3 {
                fields.push(fmt_scalar(p.orientation[r][c]));
            }
            fields.push(fmt_scalar(p.position[r]));
        }
        fields.push(fmt_scalar(p.focal));
        fields.push(fmt_scalar(p.near));
        fields.push(fmt_scalar(p.far));
        let _ = writeln!(text, "{}", fields.join(" "));
        write_png(&v.image, &dir.join(view_file(v.index)), depth)?;
    }
    let path = dir.join(POSES_FILE);
    fs::write(&path, text).map_err(|e| Error::io(&path, e))
}

fn fmt_scalar(v: f64) -> String {
    format!("{}", v as f32)
}

pub fn load_dataset(dir: &Path) -> Result<MultiViewDataset> {
    let path = dir.join(POSES_FILE);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let mut lines = text.lines();
    if lines.next() != Some(HEADER) {
        return Err(Error::io(&path, "missing or corrupt header line"));
    }
    let mut header_value = |key: &str| -> Result<usize> {
        let line = lines.next().unwrap_or_default();
        line.strip_prefix("# ")
            .and_then(|rest| rest.strip_prefix(key))
            .and_then(|rest| rest.trim().parse().ok())
            .ok_or_else(|| Error::io(&path, format!("corrupt header field `{key}`")))
    };
    let scale = header_value("scale")?;
    let bits = header_value("bit_depth")?;
    if bits != 8 && bits != 16 {
        return Err(Error::io(&path, format!("unsupported bit_depth {bits}")));
    }
    let mut views = Vec::new();
    for (lineno, line) in lines.enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        let fields: Vec<&str> = line.split_whitespace().collect();
        let at = |name: &str| format!("line {} field `{name}`", lineno + 4);
        if fields.len() != 17 {
            return Err(Error::io(&path, format!("{}: expected 17 fields, found {}", at("count"), fields.len())));
        }
        let index: usize = fields[0].parse().map_err(|_| Error::io(&path, at("index")))?;
        let resolution = match fields[1] {
            "LR" => Resolution::Lr,
            "HR" => Resolution::Hr,
            _ => return Err(Error::io(&path, at("tag"))),
        };
        let num = |k: usize, name: &str| -> Result<f64> {
            fields[k]
                .parse::<f32>()
                .map(f64::from)
                .map_err(|_| Error::io(&path, at(name)))
        };
        let mut orientation = [[0.0; 3]; 3];
        let mut position = [0.0; 3];
        for r in 0..3 {
            for c in 0..3 {
                orientation[r][c] = num(2 + r * 4 + c, "rotation")?;
            }
            position[r] = num(2 + r * 4 + 3, "centre")?;
        }
        let (focal, near, far) = (num(14, "focal")?, num(15, "near")?, num(16, "far")?);
        let img_path = dir.join(view_file(index));
        let image = read_png(&img_path)?;
        let pose = CameraPose::new(position, orientation, focal, image.width(), image.height(), near, far)
            .map_err(|e| Error::io(&path, format!("{}: {e}", at("pose"))))?;
        views.push(View {
            index,
            pose,
            image,
            resolution,
        });
    }
    MultiViewDataset::new(views, scale).map_err(|e| Error::io(&path, format!("tag/shape mismatch: {e}")))
}

pub fn write_png(img: &ImageBuffer, path: &Path, depth: BitDepth) -> Result<()> {
    let (w, h) = (img.width() as u32, img.height() as u32);
    let result = match depth {
        BitDepth::Eight => {
            let raw: Vec<u8> = img
                .as_slice()
                .iter()
                .map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
                .collect();
            PngBuffer::<Rgb<u8>, _>::from_raw(w, h, raw).map(|b| b.save(path))
        }
        BitDepth::Sixteen => {
            let raw: Vec<u16> = img
                .as_slice()
                .iter()
                .map(|v| (v.clamp(0.0, 1.0) * 65535.0).round() as u16)
                .collect();
            PngBuffer::<Rgb<u16>, _>::from_raw(w, h, raw).map(|b| b.save(path))
        }
    };
    match result {
        Some(Ok(())) => Ok(()),
        Some(Err(e)) => Err(Error::io(path, e)),
        None => Err(Error::io(path, "image buffer size mismatch")),
    }
}

pub fn read_png(path: &Path) -> Result<ImageBuffer> {
    let decoded = image::open(path).map_err(|e| Error::io(path, e))?;
    let (w, h) = (decoded.width() as usize, decoded.height() as usize);
    let data = match decoded {
        image::DynamicImage::ImageRgb16(b) => b.into_raw().into_iter().map(|v| v as f64 / 65535.0).collect(),
        other => other.into_rgb8().into_raw().into_iter().map(|v| v as f64 / 255.0).collect(),
    };
    ImageBuffer::from_vec(h, w, data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::synthetic::{generate_synthetic_scene, SceneSpec};

    fn small() -> MultiViewDataset {
        let mut spec = SceneSpec::toy();
        spec.lr_size = 8;
        generate_synthetic_scene(&spec, 3, 1).unwrap()
    }

    #[test]
    fn sixteen_bit_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let data = small().hybrid(0.34).unwrap();
        save_dataset(&data, dir.path(), BitDepth::Sixteen).unwrap();
        let back = load_dataset(dir.path()).unwrap();
        assert_eq!(back.scale(), data.scale());
        for (a, b) in data.views().iter().zip(back.views()) {
            assert_eq!(a.pose, b.pose);
            assert_eq!(a.resolution, b.resolution);
            assert!(a.image.max_abs_diff(&b.image).unwrap() <= 0.5 / 65535.0 + 1e-12);
        }
    }

    #[test]
    fn sixteen_bit_gradient_quantization_bound() {
        let dir = tempfile::tempdir().unwrap();
        let img = ImageBuffer::from_fn(16, 64, |y, x| [x as f64 / 63.0, y as f64 / 15.0, 0.3]);
        let path = dir.path().join("g.png");
        write_png(&img, &path, BitDepth::Sixteen).unwrap();
        let back = read_png(&path).unwrap();
        assert!(img.max_abs_diff(&back).unwrap() <= 1.0 / 65535.0);
    }

    #[test]
    fn truncated_pose_file_is_an_io_error() {
        let dir = tempfile::tempdir().unwrap();
        save_dataset(&small(), dir.path(), BitDepth::Eight).unwrap();
        let p = dir.path().join(POSES_FILE);
        let text = fs::read_to_string(&p).unwrap();
        fs::write(&p, &text[..text.len() - 20]).unwrap();
        assert!(matches!(load_dataset(dir.path()), Err(Error::Io { .. })));
    }

    #[test]
    fn missing_directory_is_an_io_error() {
        let err = load_dataset(Path::new("/nonexistent/dataset")).unwrap_err();
        assert!(matches!(err, Error::Io { .. }));
    }

    #[test]
    fn tag_mismatch_is_reported() {
        let dir = tempfile::tempdir().unwrap();
        save_dataset(&small().degrade().unwrap(), dir.path(), BitDepth::Eight).unwrap();
        let p = dir.path().join(POSES_FILE);
        let text = fs::read_to_string(&p).unwrap().replacen(" LR ", " HR ", 1);
        fs::write(&p, text).unwrap();
        let err = load_dataset(dir.path()).unwrap_err().to_string();
        assert!(err.contains("mismatch"), "{err}");
    }

    #[test]
    fn hybrid_selection_counts() {
        assert!(hybrid_selection(8, 0.0).is_empty());
        assert_eq!(hybrid_selection(8, 1.0).len(), 8);
        assert_eq!(hybrid_selection(8, 0.2), [0, 4].into_iter().collect());
        assert_eq!(hybrid_selection(8, 0.8).len(), 6);
    }

    #[test]
    fn degrade_downsamples_everything() {
        let lr = small().degrade().unwrap();
        assert_eq!(lr.hr_views().count(), 0);
        assert_eq!(lr.lr_shape(), (8, 8));
        assert_eq!(lr.hr_shape(), (32, 32));
    }
}
