//! The two model inputs: a resized full-image view and a randomly sampled
//! square texture patch, both augmented with flips only.

use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use ndarray::{s, Array3, Array4, Axis};
use rand::RngCore;
use serde::{Deserialize, Serialize};

use crate::data_manifest::Sample;
use crate::error::{Error, Result};
use crate::rng;

/// Channel statistics of the ImageNet training set, used by the pretrained
/// backbones.
pub const IMAGENET_MEAN: [f32; 3] = [0.485, 0.456, 0.406];
pub const IMAGENET_STD: [f32; 3] = [0.229, 0.224, 0.225];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub global_size: usize,
    pub local_size: usize,
    pub min_fraction: f64,
    pub max_fraction: f64,
    pub flip_prob: f64,
    pub mean: [f32; 3],
    pub std: [f32; 3],
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            global_size: 192,
            local_size: 96,
            min_fraction: 0.1,
            max_fraction: 0.5,
            flip_prob: 0.5,
            mean: IMAGENET_MEAN,
            std: IMAGENET_STD,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        if self.global_size == 0 || self.local_size == 0 {
            return Err(Error::Config("view sizes must be positive".into()));
        }
        if !(0.0 < self.min_fraction && self.min_fraction <= self.max_fraction && self.max_fraction <= 1.0) {
            return Err(Error::Config(format!(
                "patch fraction range [{}, {}] must lie in (0, 1]",
                self.min_fraction, self.max_fraction
            )));
        }
        if self.std.iter().any(|&s| s <= 0.0) {
            return Err(Error::Config("normalization std must be positive".into()));
        }
        Ok(())
    }
}

/// A decoded 8-bit RGB image, row-major `HWC`.
#[derive(Debug, Clone, PartialEq)]
pub struct RawImage {
    pub height: usize,
    pub width: usize,
    pub data: Vec<u8>,
    pub source: String,
}

impl RawImage {
    pub fn from_rgb(height: usize, width: usize, data: Vec<u8>, source: impl Into<String>) -> Result<Self> {
        if height == 0 || width == 0 || data.len() != height * width * 3 {
            return Err(Error::Validation(format!(
                "RGB buffer of {} bytes does not match {height}x{width}x3",
                data.len()
            )));
        }
        Ok(Self {
            height,
            width,
            data,
            source: source.into(),
        })
    }

    /// Decodes any supported raster; grayscale and alpha images become RGB.
    pub fn open(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let decode_err = |msg: String| Error::Decode {
            path: path.display().to_string(),
            msg,
        };
        let img = image::ImageReader::open(path)
            .map_err(|e| decode_err(e.to_string()))?
            .with_guessed_format()
            .map_err(|e| decode_err(e.to_string()))?
            .decode()
            .map_err(|e| decode_err(e.to_string()))?
            .to_rgb8();
        let (w, h) = img.dimensions();
        Self::from_rgb(h as usize, w as usize, img.into_raw(), path.display().to_string())
    }

    fn at(&self, y: usize, x: usize, c: usize) -> f32 {
        self.data[(y * self.width + x) * 3 + c] as f32 / 255.0
    }
}

/// A normalized 3-channel float image, `CHW`.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageTensor {
    pub data: Array3<f32>,
    pub source_path: String,
}

/// Where a local patch was taken from.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PatchSpec {
    pub fraction: f64,
    pub top: usize,
    pub left: usize,
    pub side: usize,
}

impl PatchSpec {
    /// Side length for `fraction` of the shorter image side.
    pub fn side_for(fraction: f64, height: usize, width: usize) -> usize {
        ((fraction * height.min(width) as f64).round() as usize).clamp(1, height.min(width))
    }
}

/// Bilinear resize (half-pixel centers, edge clamped) of a rectangle of `raw`
/// into a `[0, 1]`-valued `3 x out_h x out_w` array.
fn resize_region(raw: &RawImage, top: usize, left: usize, rh: usize, rw: usize, out_h: usize, out_w: usize) -> Array3<f32> {
    fn taps(src: usize, dst: usize) -> Vec<(usize, usize, f32)> {
        let scale = src as f64 / dst as f64;
        (0..dst)
            .map(|o| {
                let f = ((o as f64 + 0.5) * scale - 0.5).clamp(0.0, (src - 1) as f64);
                let i0 = f.floor() as usize;
                let i1 = (i0 + 1).min(src - 1);
                (i0, i1, (f - i0 as f64) as f32)
            })
            .collect()
    }
    let ys = taps(rh, out_h);
    let xs = taps(rw, out_w);
    let mut out = Array3::<f32>::zeros((3, out_h, out_w));
    for c in 0..3 {
        for (oy, &(y0, y1, wy)) in ys.iter().enumerate() {
            for (ox, &(x0, x1, wx)) in xs.iter().enumerate() {
                let p = |y: usize, x: usize| raw.at(top + y, left + x, c);
                // lerp form keeps constant regions exactly constant
                let a = p(y0, x0) + wx * (p(y0, x1) - p(y0, x0));
                let b = p(y1, x0) + wx * (p(y1, x1) - p(y1, x0));
                out[[c, oy, ox]] = a + wy * (b - a);
            }
        }
    }
    out
}

pub fn flip_horizontal(x: &Array3<f32>) -> Array3<f32> {
    x.slice(s![.., .., ..;-1]).to_owned()
}

pub fn flip_vertical(x: &Array3<f32>) -> Array3<f32> {
    x.slice(s![.., ..;-1, ..]).to_owned()
}

fn augment_and_normalize(mut x: Array3<f32>, cfg: &PipelineConfig, train_mode: bool, rng: &mut impl RngCore) -> Array3<f32> {
    if train_mode {
        let h = rng::unit(rng) < cfg.flip_prob;
        let v = rng::unit(rng) < cfg.flip_prob;
        if h {
            x = flip_horizontal(&x);
        }
        if v {
            x = flip_vertical(&x);
        }
    }
    for (c, mut plane) in x.axis_iter_mut(Axis(0)).enumerate() {
        let (m, s) = (cfg.mean[c], cfg.std[c]);
        plane.mapv_inplace(|v| (v - m) / s);
    }
    x
}

/// Full-image view: resize to `global_size`, flips in train mode, normalize.
pub fn preprocess_global(raw: &RawImage, cfg: &PipelineConfig, train_mode: bool, rng: &mut impl RngCore) -> ImageTensor {
    let x = resize_region(raw, 0, 0, raw.height, raw.width, cfg.global_size, cfg.global_size);
    ImageTensor {
        data: augment_and_normalize(x, cfg, train_mode, rng),
        source_path: raw.source.clone(),
    }
}

/// Local view: a square crop whose side is a uniform fraction in
/// `[min_fraction, max_fraction]` of the shorter image side, at a uniform
/// valid position, resized to `local_size`, then the global-view flips.
pub fn sample_local_patch(
    raw: &RawImage,
    cfg: &PipelineConfig,
    train_mode: bool,
    rng: &mut impl RngCore,
) -> Result<(ImageTensor, PatchSpec)> {
    let short = raw.height.min(raw.width);
    if (cfg.min_fraction * short as f64).round() < 1.0 {
        return Err(Error::Validation(format!(
            "{}: {}x{} image is too small for a {} fraction patch",
            raw.source, raw.height, raw.width, cfg.min_fraction
        )));
    }
    let fraction = rng::uniform(rng, cfg.min_fraction, cfg.max_fraction);
    let side = PatchSpec::side_for(fraction, raw.height, raw.width);
    let top = rng::index(rng, raw.height - side + 1);
    let left = rng::index(rng, raw.width - side + 1);
    let spec = PatchSpec { fraction, top, left, side };
    let x = resize_region(raw, top, left, side, side, cfg.local_size, cfg.local_size);
    Ok((
        ImageTensor {
            data: augment_and_normalize(x, cfg, train_mode, rng),
            source_path: raw.source.clone(),
        },
        spec,
    ))
}

/// Supplies decoded images by manifest-relative path.
pub trait ImageSource: Send + Sync {
    fn load(&self, rel_path: &str) -> Result<Arc<RawImage>>;
}

/// Decodes from a dataset root on every call.
#[derive(Debug, Clone)]
pub struct DirectorySource {
    root: PathBuf,
}

impl DirectorySource {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }
}

impl ImageSource for DirectorySource {
    fn load(&self, rel_path: &str) -> Result<Arc<RawImage>> {
        let mut img = RawImage::open(self.root.join(rel_path))?;
        img.source = rel_path.to_string();
        Ok(Arc::new(img))
    }
}

/// Memoizes another source; training revisits the same few images constantly.
pub struct CachedSource<S> {
    inner: S,
    cache: Mutex<HashMap<String, Arc<RawImage>>>,
}

impl<S: ImageSource> CachedSource<S> {
    pub fn new(inner: S) -> Self {
        Self {
            inner,
            cache: Mutex::new(HashMap::new()),
        }
    }
}

impl<S: ImageSource> ImageSource for CachedSource<S> {
    fn load(&self, rel_path: &str) -> Result<Arc<RawImage>> {
        if let Some(img) = self.cache.lock().expect("cache lock").get(rel_path) {
            return Ok(img.clone());
        }
        let img = self.inner.load(rel_path)?;
        self.cache
            .lock()
            .expect("cache lock")
            .insert(rel_path.to_string(), img.clone());
        Ok(img)
    }
}

/// Images held in memory, keyed by relative path.
#[derive(Debug, Clone, Default)]
pub struct MemorySource {
    images: HashMap<String, Arc<RawImage>>,
}

impl MemorySource {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, rel_path: impl Into<String>, image: RawImage) {
        self.images.insert(rel_path.into(), Arc::new(image));
    }
}

impl ImageSource for MemorySource {
    fn load(&self, rel_path: &str) -> Result<Arc<RawImage>> {
        self.images.get(rel_path).cloned().ok_or_else(|| Error::Path {
            path: PathBuf::from(rel_path),
            msg: "image not in memory source".into(),
        })
    }
}

/// Aligned global views, local views and labels for one step.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    /// N x 3 x global_size x global_size
    pub global: Array4<f32>,
    /// N x 3 x local_size x local_size
    pub local: Array4<f32>,
    pub labels: Vec<usize>,
    pub patches: Vec<PatchSpec>,
    pub paths: Vec<String>,
    /// False for eval batches: local views exist but only the global
    /// branch is evaluated.
    pub local_used: bool,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// One `step<TAB>path<TAB>fraction<TAB>top<TAB>left<TAB>side` line per patch.
    pub fn patch_log(&self, step: usize) -> String {
        self.paths
            .iter()
            .zip(&self.patches)
            .map(|(p, s)| format!("{step}\t{p}\t{:.6}\t{}\t{}\t{}\n", s.fraction, s.top, s.left, s.side))
            .collect()
    }
}

/// One global and one local view per entry, drawn in entry order.
pub fn make_batch(
    entries: &[Sample],
    source: &dyn ImageSource,
    cfg: &PipelineConfig,
    train_mode: bool,
    rng: &mut impl RngCore,
) -> Result<Batch> {
    if entries.is_empty() {
        return Err(Error::Validation("cannot build an empty batch".into()));
    }
    let n = entries.len();
    let (g, l) = (cfg.global_size, cfg.local_size);
    let mut global = Array4::<f32>::zeros((n, 3, g, g));
    let mut local = Array4::<f32>::zeros((n, 3, l, l));
    let mut patches = Vec::with_capacity(n);
    for (i, entry) in entries.iter().enumerate() {
        let wrap = |e: Error| Error::Batch {
            entry: entry.path.clone(),
            source: Box::new(e),
        };
        let raw = source.load(&entry.path).map_err(wrap)?;
        let gv = preprocess_global(&raw, cfg, train_mode, rng);
        let (lv, spec) = sample_local_patch(&raw, cfg, train_mode, rng).map_err(wrap)?;
        global.index_axis_mut(Axis(0), i).assign(&gv.data);
        local.index_axis_mut(Axis(0), i).assign(&lv.data);
        patches.push(spec);
    }
    Ok(Batch {
        global,
        local,
        labels: entries.iter().map(|e| e.class_id).collect(),
        patches,
        paths: entries.iter().map(|e| e.path.clone()).collect(),
        local_used: train_mode,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn gradient_image(h: usize, w: usize) -> RawImage {
        let data = (0..h * w * 3).map(|i| ((i * 37) % 251) as u8).collect();
        RawImage::from_rgb(h, w, data, "test.png").unwrap()
    }

    #[test]
    fn global_view_size() {
        let raw = gradient_image(150, 150);
        let t = preprocess_global(&raw, &PipelineConfig::default(), true, &mut rng::seeded(0));
        assert_eq!(t.data.dim(), (3, 192, 192));
    }

    #[test]
    fn eval_mode_is_deterministic_and_unflipped() {
        let raw = gradient_image(40, 30);
        let cfg = PipelineConfig::default();
        let a = preprocess_global(&raw, &cfg, false, &mut rng::seeded(0));
        let b = preprocess_global(&raw, &cfg, false, &mut rng::seeded(99));
        assert_eq!(a, b);
    }

    #[test]
    fn constant_image_stays_constant() {
        let raw = RawImage::from_rgb(23, 31, vec![77; 23 * 31 * 3], "c").unwrap();
        let cfg = PipelineConfig::default();
        let t = preprocess_global(&raw, &cfg, true, &mut rng::seeded(4));
        for c in 0..3 {
            let want = (77.0 / 255.0 - cfg.mean[c]) / cfg.std[c];
            assert!(t.data.index_axis(Axis(0), c).iter().all(|&v| v == want));
        }
        let (p, _) = sample_local_patch(&raw, &cfg, true, &mut rng::seeded(5)).unwrap();
        assert!(p.data.index_axis(Axis(0), 1).iter().all(|&v| v == p.data[[1, 0, 0]]));
    }

    #[test]
    fn identity_resize_is_exact() {
        let raw = gradient_image(8, 8);
        let x = resize_region(&raw, 0, 0, 8, 8, 8, 8);
        assert_eq!(x[[2, 3, 4]], raw.at(3, 4, 2));
    }

    #[test]
    fn patch_sides_at_fraction_extremes() {
        assert_eq!(PatchSpec::side_for(0.1, 150, 150), 15);
        assert_eq!(PatchSpec::side_for(0.5, 150, 150), 75);
        assert_eq!(PatchSpec::side_for(0.5, 150, 224), 75);
    }

    #[test]
    fn too_small_images_are_rejected() {
        let raw = gradient_image(4, 40);
        assert!(matches!(
            sample_local_patch(&raw, &PipelineConfig::default(), true, &mut rng::seeded(0)),
            Err(Error::Validation(_))
        ));
    }

    #[test]
    fn flips_are_involutions() {
        let raw = gradient_image(9, 7);
        let x = resize_region(&raw, 0, 0, 9, 7, 9, 7);
        assert_eq!(flip_horizontal(&flip_horizontal(&x)), x);
        assert_eq!(flip_vertical(&flip_vertical(&x)), x);
        assert_ne!(flip_horizontal(&x), x);
    }

    #[test]
    fn batch_layout_and_missing_entry() {
        let mut src = MemorySource::new();
        src.insert("a/1.png", gradient_image(50, 50));
        src.insert("b/1.png", gradient_image(60, 50));
        let cfg = PipelineConfig { global_size: 32, local_size: 16, ..Default::default() };
        let entries = vec![
            Sample { path: "a/1.png".into(), class_id: 0 },
            Sample { path: "b/1.png".into(), class_id: 1 },
        ];
        let b = make_batch(&entries, &src, &cfg, true, &mut rng::seeded(1)).unwrap();
        assert_eq!(b.global.dim(), (2, 3, 32, 32));
        assert_eq!(b.local.dim(), (2, 3, 16, 16));
        assert_eq!(b.labels, vec![0, 1]);
        assert!(b.local_used);
        let eval = make_batch(&entries[..1], &src, &cfg, false, &mut rng::seeded(1)).unwrap();
        assert!(!eval.local_used);
        assert_eq!(eval.len(), 1);

        let missing = vec![Sample { path: "c/9.png".into(), class_id: 0 }];
        match make_batch(&missing, &src, &cfg, true, &mut rng::seeded(1)) {
            Err(Error::Batch { entry, .. }) => assert_eq!(entry, "c/9.png"),
            other => panic!("unexpected {other:?}"),
        }
    }
}
