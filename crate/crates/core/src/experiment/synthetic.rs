//! Procedural texture dataset for desk-scale runs.
//!
//! Class `c` is a sinusoidal grating with orientation `(c mod 2) * 90` degrees
//! and period `size / (3 + 2 * (c / 2))` pixels. Both are invariant under the
//! horizontal and vertical flips used in training. Each image gets a phase
//! jitter of at most a sixth of a period, a small contrast jitter and
//! Gaussian pixel noise.

use std::f64::consts::PI;
use std::fs;
use std::path::{Path, PathBuf};

use image::RgbImage;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::rng;

pub const NOISE_STD: f64 = 20.0;
pub const AMPLITUDE: f64 = 80.0;

pub fn class_name(c: usize) -> String {
    format!("class_{c:02}")
}

/// `(orientation in radians, period in pixels)` of class `c`.
pub fn class_grating(c: usize, size: usize) -> (f64, f64) {
    let orientation = (c % 2) as f64 * PI / 2.0;
    let period = size as f64 / (3.0 + 2.0 * (c / 2) as f64);
    (orientation, period)
}

/// Renders one image of class `c`; `rng` supplies the jitter and noise.
pub fn render_texture(c: usize, size: usize, rng: &mut impl rand::RngCore) -> RgbImage {
    let (theta, period) = class_grating(c, size);
    let phase = rng::uniform(rng, -PI / 3.0, PI / 3.0);
    let amplitude = AMPLITUDE * rng::uniform(rng, 0.8, 1.2);
    let noise = Normal::new(0.0, NOISE_STD).expect("valid std");
    let (ct, st) = (theta.cos(), theta.sin());
    let mut img = RgbImage::new(size as u32, size as u32);
    for y in 0..size {
        for x in 0..size {
            let u = x as f64 * ct + y as f64 * st;
            let base = 128.0 + amplitude * (2.0 * PI * u / period + phase).sin();
            let px = img.get_pixel_mut(x as u32, y as u32);
            for ch in 0..3 {
                px[ch] = (base + noise.sample(rng)).round().clamp(0.0, 255.0) as u8;
            }
        }
    }
    img
}

/// Writes `out_root/class_XX/img_YYYY.png`; the same arguments always produce
/// byte-identical files.
pub fn generate_synthetic_texture_dataset(
    n_classes: usize,
    n_per_class: usize,
    image_size: usize,
    seed: u64,
    out_root: impl AsRef<Path>,
) -> Result<PathBuf> {
    let out_root = out_root.as_ref();
    if n_classes < 2 {
        return Err(Error::Validation(format!("need at least 2 classes, got {n_classes}")));
    }
    if n_per_class < 1 {
        return Err(Error::Validation("need at least 1 image per class".into()));
    }
    if image_size < 8 {
        return Err(Error::Validation(format!("image size {image_size} is below 8 pixels")));
    }
    for c in 0..n_classes {
        let dir = out_root.join(class_name(c));
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        let mut rng = rng::seeded_stream(seed, c as u64);
        for i in 0..n_per_class {
            let path = dir.join(format!("img_{i:04}.png"));
            render_texture(c, image_size, &mut rng)
                .save(&path)
                .map_err(|e| Error::Path {
                    path: path.clone(),
                    msg: e.to_string(),
                })?;
        }
    }
    Ok(out_root.to_path_buf())
}
