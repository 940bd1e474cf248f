//! Deterministic separable corpus: bright images are class 1, dark ones
//! class 0. Written as `covid/*.png` and `normal/*.png` under one root.

use std::path::Path;

use image::{GrayImage, Luma};
use rand::Rng;

use super::manifest::{SampleRecord, COVID, NORMAL};
use crate::error::{Error, Result};
use crate::rng::{derive_seed, seeded};

pub const BRIGHT_RANGE: (f64, f64) = (0.78, 0.90);
pub const DARK_RANGE: (f64, f64) = (0.10, 0.22);
const NOISE: f64 = 0.05;

/// Writes `per_class` grayscale PNGs of `size x size` per class and returns
/// their (unassigned) records. Class-1 pixels stay above 0.7, class-0
/// pixels below 0.3.
pub fn generate_synthetic(
    root: &Path,
    per_class: usize,
    size: u32,
    seed: u64,
) -> Result<Vec<SampleRecord>> {
    let mut records = Vec::with_capacity(2 * per_class);
    for (label, dir, (lo, hi)) in [
        (COVID, "covid", BRIGHT_RANGE),
        (NORMAL, "normal", DARK_RANGE),
    ] {
        let class_dir = root.join(dir);
        std::fs::create_dir_all(&class_dir).map_err(|e| Error::io(&class_dir, e))?;
        let mut rng = seeded(derive_seed(seed, dir));
        for i in 0..per_class {
            let base = rng.random_range(lo..hi);
            let img = GrayImage::from_fn(size, size, |_, _| {
                let v = base + rng.random_range(-NOISE..NOISE);
                Luma([(v.clamp(0.0, 1.0) * 255.0).round() as u8])
            });
            let rel = format!("{dir}/{dir}_{i:04}.png");
            let path = root.join(&rel);
            img.save(&path)
                .map_err(|e| Error::format(&path, e.to_string()))?;
            records.push(SampleRecord::new(rel, label));
        }
    }
    Ok(records)
}
