//! Synthetic hazy datasets and on-disk paired datasets.
//!
//! A dataset split lives in one directory:
//!
//! ```text
//! <root>/manifest.json
//! <root>/hazy/<id>.png    8-bit RGB
//! <root>/clean/<id>.png   8-bit RGB
//! <root>/trans/<id>.png   16-bit gray, only when has_transmission
//! ```

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::mpsc;
use std::thread;

use image::{ImageBuffer, Luma, Rgb};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::haze_physics::{
    synthesize_haze, transmission_from_depth, AtmosphericLight, Image, PhysicsConstants, TransmissionMap,
};
use crate::tensor::{Shape, Tensor};

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Test];

    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }

    fn stream(self) -> u64 {
        match self {
            Split::Train => 1,
            Split::Val => 2,
            Split::Test => 3,
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// One paired example; every image has batch size 1.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub id: String,
    pub hazy: Image<f32>,
    pub clean: Image<f32>,
    pub transmission: Option<TransmissionMap<f32>>,
    pub airlight: Option<AtmosphericLight<f32>>,
}

impl Sample {
    pub fn new(
        id: impl Into<String>,
        hazy: Image<f32>,
        clean: Image<f32>,
        transmission: Option<TransmissionMap<f32>>,
        airlight: Option<AtmosphericLight<f32>>,
    ) -> Result<Self> {
        let id = id.into();
        let s = hazy.shape();
        if s.n != 1 || clean.shape() != s {
            return Err(Error::Shape(format!(
                "sample `{id}`: hazy {s} and clean {} must be single images of equal size",
                clean.shape()
            )));
        }
        if let Some(t) = &transmission {
            if t.tensor().shape() != Shape::new(1, 1, s.h, s.w) {
                return Err(Error::Shape(format!(
                    "sample `{id}`: transmission {} does not match image {s}",
                    t.tensor().shape()
                )));
            }
        }
        Ok(Self {
            id,
            hazy,
            clean,
            transmission,
            airlight,
        })
    }

    /// Central `h × w` window of every field.
    pub fn center_crop(&self, h: usize, w: usize) -> Result<Self> {
        let s = self.hazy.shape();
        if h > s.h || w > s.w {
            return Err(Error::Shape(format!(
                "sample `{}` ({}×{}) is smaller than the {h}×{w} crop",
                self.id, s.h, s.w
            )));
        }
        let (y0, x0) = ((s.h - h) / 2, (s.w - w) / 2);
        Sample::new(
            self.id.clone(),
            Image::new(self.hazy.tensor().crop(y0, x0, h, w)?)?,
            Image::new(self.clean.tensor().crop(y0, x0, h, w)?)?,
            self.transmission
                .as_ref()
                .map(|t| TransmissionMap::new(t.tensor().crop(y0, x0, h, w)?))
                .transpose()?,
            self.airlight.clone(),
        )
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub split: Split,
    pub has_transmission: bool,
    pub ids: Vec<String>,
    /// Atmospheric light used to synthesize each sample, when known.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub atmospheric_light: Option<BTreeMap<String, [f64; 3]>>,
}

/// A manifest together with the directory its paths are relative to.
#[derive(Clone, Debug, PartialEq)]
pub struct DatasetManifest {
    pub root: PathBuf,
    pub manifest: Manifest,
}

impl DatasetManifest {
    /// Reads `manifest.json` from a dataset directory or from the file itself.
    pub fn open(path: &Path) -> Result<Self> {
        let (root, file) = if path.is_dir() {
            (path.to_path_buf(), path.join(MANIFEST_FILE))
        } else {
            let root = path.parent().map(Path::to_path_buf).unwrap_or_default();
            (root, path.to_path_buf())
        };
        let text = fs::read_to_string(&file).map_err(|e| Error::io(&file, e))?;
        let manifest: Manifest = serde_json::from_str(&text)
            .map_err(|e| Error::Config(format!("{}: {e}", file.display())))?;
        let out = Self { root, manifest };
        out.validate()?;
        Ok(out)
    }

    pub fn count(&self) -> usize {
        self.manifest.ids.len()
    }

    pub fn hazy_path(&self, id: &str) -> PathBuf {
        self.root.join("hazy").join(format!("{id}.png"))
    }

    pub fn clean_path(&self, id: &str) -> PathBuf {
        self.root.join("clean").join(format!("{id}.png"))
    }

    pub fn trans_path(&self, id: &str) -> PathBuf {
        self.root.join("trans").join(format!("{id}.png"))
    }

    /// `(hazy, clean, transmission)` paths of one sample.
    pub fn files(&self, id: &str) -> (PathBuf, PathBuf, Option<PathBuf>) {
        (
            self.hazy_path(id),
            self.clean_path(id),
            self.manifest.has_transmission.then(|| self.trans_path(id)),
        )
    }

    /// Checks id uniqueness and that every listed file exists.
    pub fn validate(&self) -> Result<()> {
        let mut seen = std::collections::BTreeSet::new();
        for id in &self.manifest.ids {
            if id.is_empty() || id.contains(['/', '\\']) || !seen.insert(id) {
                return Err(Error::Config(format!("invalid or duplicate sample id `{id}`")));
            }
            let (h, c, t) = self.files(id);
            for p in [Some(h), Some(c), t].into_iter().flatten() {
                if !p.is_file() {
                    return Err(Error::MissingSample { id: id.clone(), path: p });
                }
            }
        }
        Ok(())
    }

    pub fn load_sample(&self, id: &str) -> Result<Sample> {
        let (h, c, t) = self.files(id);
        let need = |p: &Path| {
            if p.is_file() {
                Ok(())
            } else {
                Err(Error::MissingSample {
                    id: id.to_string(),
                    path: p.to_path_buf(),
                })
            }
        };
        need(&h)?;
        need(&c)?;
        let hazy = read_rgb(&h)?;
        let clean = read_rgb(&c)?;
        let transmission = match t {
            Some(p) => {
                need(&p)?;
                Some(read_transmission(&p)?)
            }
            None => None,
        };
        let airlight = self
            .manifest
            .atmospheric_light
            .as_ref()
            .and_then(|m| m.get(id))
            .map(|a| AtmosphericLight::rgb([a[0] as f32, a[1] as f32, a[2] as f32]))
            .transpose()?;
        Sample::new(id, hazy, clean, transmission, airlight)
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct LoadOptions {
    pub center_crop: Option<(usize, usize)>,
    /// Decode the next sample on a background thread.
    pub prefetch: bool,
}

/// Samples in manifest order; with prefetching the order is unchanged.
pub fn iter_dataset(ds: &DatasetManifest, opts: &LoadOptions) -> Box<dyn Iterator<Item = Result<Sample>> + Send> {
    let ids = ds.manifest.ids.clone();
    let ds = ds.clone();
    let crop = opts.center_crop;
    let load = move |id: &str| -> Result<Sample> {
        let s = ds.load_sample(id)?;
        match crop {
            Some((h, w)) => s.center_crop(h, w),
            None => Ok(s),
        }
    };
    if !opts.prefetch {
        return Box::new(ids.into_iter().map(move |id| load(&id)));
    }
    let (tx, rx) = mpsc::sync_channel(2);
    thread::spawn(move || {
        for id in ids {
            if tx.send(load(&id)).is_err() {
                break;
            }
        }
    });
    Box::new(rx.into_iter())
}

/// Every sample of a dataset, in manifest order.
pub fn load_dataset(ds: &DatasetManifest, opts: &LoadOptions) -> Result<Vec<Sample>> {
    iter_dataset(ds, opts).collect()
}

fn decode_error(path: &Path, e: impl fmt::Display) -> Error {
    Error::Decode {
        path: path.to_path_buf(),
        message: e.to_string(),
    }
}

pub fn read_rgb(path: &Path) -> Result<Image<f32>> {
    let img = image::open(path).map_err(|e| decode_error(path, e))?.to_rgb8();
    let (w, h) = img.dimensions();
    Image::new(Tensor::from_fn(Shape::new(1, 3, h as usize, w as usize), |_, c, y, x| {
        img.get_pixel(x as u32, y as u32)[c] as f32 / 255.0
    }))
}

pub fn read_transmission(path: &Path) -> Result<TransmissionMap<f32>> {
    let img = image::open(path).map_err(|e| decode_error(path, e))?.to_luma16();
    let (w, h) = img.dimensions();
    TransmissionMap::new(Tensor::from_fn(Shape::new(1, 1, h as usize, w as usize), |_, _, y, x| {
        img.get_pixel(x as u32, y as u32)[0] as f32 / 65535.0
    }))
}

pub fn quantize_u8(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

pub fn quantize_u16(v: f32) -> u16 {
    (v.clamp(0.0, 1.0) * 65535.0).round() as u16
}

/// Writes image `index` of a batch as 8-bit RGB.
pub fn write_rgb(path: &Path, t: &Tensor<f32>, index: usize) -> Result<()> {
    let s = t.shape();
    if s.c != 3 || index >= s.n {
        return Err(Error::Shape(format!("cannot write image {index} of {s} as RGB")));
    }
    let img = ImageBuffer::<Rgb<u8>, _>::from_fn(s.w as u32, s.h as u32, |x, y| {
        Rgb([0, 1, 2].map(|c| quantize_u8(t.at(index, c, y as usize, x as usize))))
    });
    ensure_parent(path)?;
    img.save(path).map_err(|e| decode_error(path, e))
}

pub fn write_transmission(path: &Path, t: &TransmissionMap<f32>) -> Result<()> {
    let s = t.tensor().shape();
    let img = ImageBuffer::<Luma<u16>, _>::from_fn(s.w as u32, s.h as u32, |x, y| {
        Luma([quantize_u16(t.tensor().at(0, 0, y as usize, x as usize))])
    });
    ensure_parent(path)?;
    img.save(path).map_err(|e| decode_error(path, e))
}

fn ensure_parent(path: &Path) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthesisConfig {
    pub beta_range: [f64; 2],
    #[serde(alias = "A_range")]
    pub airlight_range: [f64; 2],
    /// Largest value of the synthetic depth field.
    pub depth_max: f64,
    pub seed: u64,
}

impl Default for SynthesisConfig {
    fn default() -> Self {
        Self {
            beta_range: [0.4, 1.6],
            airlight_range: [0.7, 1.0],
            depth_max: 5.0,
            seed: 0,
        }
    }
}

impl SynthesisConfig {
    pub fn validate(&self) -> Result<()> {
        let [b0, b1] = self.beta_range;
        let [a0, a1] = self.airlight_range;
        if !(b0 > 0.0 && b0 <= b1 && b1.is_finite()) {
            return Err(Error::Config(format!("beta_range must lie in (0, ∞), got {:?}", self.beta_range)));
        }
        if !(0.6..=1.0).contains(&a0) || !(0.6..=1.0).contains(&a1) || a0 > a1 {
            return Err(Error::Config(format!(
                "A_range must lie in [0.6, 1.0], got {:?}",
                self.airlight_range
            )));
        }
        if !(self.depth_max > 0.0 && self.depth_max.is_finite()) {
            return Err(Error::Config("depth_max must be positive".into()));
        }
        Ok(())
    }
}

/// A clean image to synthesize haze for.
#[derive(Clone, Debug)]
pub enum CleanSource {
    File(PathBuf),
    Memory { id: String, image: Image<f32> },
}

impl CleanSource {
    fn id(&self) -> String {
        match self {
            CleanSource::File(p) => p
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_else(|| "image".into()),
            CleanSource::Memory { id, .. } => id.clone(),
        }
    }

    fn load(&self) -> Result<Image<f32>> {
        match self {
            CleanSource::File(p) => read_rgb(p),
            CleanSource::Memory { image, .. } => {
                if image.shape().n != 1 {
                    return Err(Error::Shape(format!("clean image must be a single image, got {}", image.shape())));
                }
                Ok(image.clone())
            }
        }
    }
}

/// Smooth random depth: three seeded cosine ramps, min-max normalised to `[0, d_max]`.
pub fn cosine_depth(rng: &mut ChaCha8Rng, height: usize, width: usize, d_max: f64) -> Tensor<f32> {
    let size = height.max(width) as f64;
    let ramps: Vec<(f64, f64, f64, f64)> = (0..3)
        .map(|_| {
            let theta = rng.random_range(0.0..std::f64::consts::TAU);
            let cycles = rng.random_range(0.25..1.5);
            let phase = rng.random_range(0.0..std::f64::consts::TAU);
            let amp = rng.random_range(0.5..1.0);
            (theta, cycles, phase, amp)
        })
        .collect();
    let raw: Vec<f64> = (0..height * width)
        .map(|i| {
            let (y, x) = ((i / width) as f64, (i % width) as f64);
            ramps
                .iter()
                .map(|&(th, cy, ph, a)| {
                    let u = (x * th.cos() + y * th.sin()) / size;
                    a * (std::f64::consts::TAU * cy * u + ph).cos()
                })
                .sum()
        })
        .collect();
    let lo = raw.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = raw.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let span = if hi - lo > 1e-12 { hi - lo } else { 1.0 };
    Tensor::from_vec(
        Shape::new(1, 1, height, width),
        raw.iter().map(|v| ((v - lo) / span * d_max) as f32).collect(),
    )
    .expect("length matches shape")
}

/// Synthetic scene with smooth shading, flat shapes and striped texture.
pub fn procedural_scene(seed: u64, height: usize, width: usize) -> Image<f32> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let color = |rng: &mut ChaCha8Rng| [0; 3].map(|_: i32| rng.random_range(0.05f32..0.95));
    let top = color(&mut rng);
    let bottom = color(&mut rng);
    enum Shape2 {
        Rect { y0: f32, x0: f32, y1: f32, x1: f32 },
        Disc { cy: f32, cx: f32, r: f32 },
    }
    let (h, w) = (height as f32, width as f32);
    let shapes: Vec<(Shape2, [f32; 3], f32)> = (0..rng.random_range(3..7))
        .map(|_| {
            let shape = if rng.random_bool(0.5) {
                let (y0, x0) = (rng.random_range(0.0..h), rng.random_range(0.0..w));
                Shape2::Rect {
                    y0,
                    x0,
                    y1: y0 + rng.random_range(h * 0.1..h * 0.6),
                    x1: x0 + rng.random_range(w * 0.1..w * 0.6),
                }
            } else {
                Shape2::Disc {
                    cy: rng.random_range(0.0..h),
                    cx: rng.random_range(0.0..w),
                    r: rng.random_range(0.05..0.3) * h.max(w),
                }
            };
            let stripes = if rng.random_bool(0.4) { rng.random_range(0.2f32..0.9) } else { 0.0 };
            (shape, color(&mut rng), stripes)
        })
        .collect();
    Image::from_fn(height, width, |_, c, y, x| {
        let (yf, xf) = (y as f32, x as f32);
        let v = yf / h.max(1.0);
        let mut out = top[c] * (1.0 - v) + bottom[c] * v;
        for (s, col, stripes) in &shapes {
            let inside = match *s {
                Shape2::Rect { y0, x0, y1, x1 } => yf >= y0 && yf < y1 && xf >= x0 && xf < x1,
                Shape2::Disc { cy, cx, r } => (yf - cy).powi(2) + (xf - cx).powi(2) < r * r,
            };
            if inside {
                out = col[c];
                if *stripes > 0.0 && ((xf + yf) * stripes).sin() > 0.0 {
                    out *= 0.6;
                }
            }
        }
        out.clamp(0.0, 1.0)
    })
}

/// Prefixes `id` with the split so ids never collide across splits.
pub fn split_id(split: Split, id: &str) -> String {
    format!("{split}-{id}")
}

/// Synthesizes a hazy dataset split under `root` and returns its manifest.
///
/// Clean images are quantized to 8 bits and transmission to 16 bits before
/// the hazy image is formed, so the stored triple satisfies the scattering
/// model up to the 8-bit rounding of the hazy image.
pub fn generate_synthetic(
    sources: &[CleanSource],
    split: Split,
    root: &Path,
    cfg: &SynthesisConfig,
    k: &PhysicsConstants,
) -> Result<DatasetManifest> {
    cfg.validate()?;
    k.validate()?;
    let mut ids = Vec::new();
    let mut lights = BTreeMap::new();
    let ds = DatasetManifest {
        root: root.to_path_buf(),
        manifest: Manifest {
            split,
            has_transmission: true,
            ids: Vec::new(),
            atmospheric_light: None,
        },
    };
    for (i, src) in sources.iter().enumerate() {
        let clean = match src.load() {
            Ok(img) => img,
            Err(e) => {
                log::warn!("skipping clean image `{}`: {e}", src.id());
                continue;
            }
        };
        let id = split_id(split, &src.id());
        if lights.contains_key(&id) {
            return Err(Error::Config(format!("duplicate clean image id `{id}`")));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(split.stream() << 32 | i as u64);
        let beta = rng.random_range(cfg.beta_range[0]..=cfg.beta_range[1]);
        let a = rng.random_range(cfg.airlight_range[0]..=cfg.airlight_range[1]) as f32;
        let s = clean.shape();
        let depth = cosine_depth(&mut rng, s.h, s.w, cfg.depth_max);
        let t = transmission_from_depth(&depth, beta, k)?;
        let t_q = TransmissionMap::new(t.tensor().map(|v| quantize_u16(v) as f32 / 65535.0))?;
        let j_q = Image::new(clean.tensor().map(|v| quantize_u8(v) as f32 / 255.0))?;
        let airlight = AtmosphericLight::gray(a)?;
        let hazy = synthesize_haze(&j_q, &t_q, &airlight)?;
        write_rgb(&ds.hazy_path(&id), hazy.tensor(), 0)?;
        write_rgb(&ds.clean_path(&id), j_q.tensor(), 0)?;
        write_transmission(&ds.trans_path(&id), &t_q)?;
        lights.insert(id.clone(), [a as f64; 3]);
        ids.push(id);
    }
    let manifest = Manifest {
        split,
        has_transmission: true,
        ids,
        atmospheric_light: Some(lights),
    };
    fs::create_dir_all(root).map_err(|e| Error::io(root, e))?;
    let path = root.join(MANIFEST_FILE);
    let mut text = serde_json::to_string_pretty(&manifest)?;
    text.push('\n');
    fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    Ok(DatasetManifest {
        root: root.to_path_buf(),
        manifest,
    })
}
