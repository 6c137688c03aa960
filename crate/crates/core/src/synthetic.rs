//! Small synthetic stand-in for the chest X-ray folders.
//!
//! Each class gets a grayscale texture that survives 90° rotation: concentric
//! rings (Normal), a checkerboard (COVID-19) and a diagonal cross-hatch
//! (Pneumonia). Phase, period, contrast and pixel noise vary per image.

use std::f64::consts::PI;
use std::fs;
use std::path::Path;

use rand::Rng;

use crate::dataset::{scan_dataset, Manifest, Split, CLASS_NAMES, NUM_CLASSES};
use crate::error::{Error, Result};
use crate::raster::Raster;
use crate::seed;

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSpec {
    pub size: usize,
    pub train_counts: [usize; NUM_CLASSES],
    pub test_counts: [usize; NUM_CLASSES],
    /// Peak amplitude of uniform pixel noise.
    pub noise: u8,
}

impl Default for SyntheticSpec {
    /// 300 images at 64×64, imbalanced like the real data.
    fn default() -> Self {
        SyntheticSpec {
            size: 64,
            train_counts: [50, 25, 135],
            test_counts: [20, 10, 60],
            noise: 24,
        }
    }
}

impl SyntheticSpec {
    pub fn total(&self) -> usize {
        self.train_counts.iter().chain(&self.test_counts).sum()
    }
}

pub fn generate_image(class_id: usize, size: usize, noise: u8, rng: &mut impl Rng) -> Result<Raster> {
    if class_id >= NUM_CLASSES {
        return Err(Error::invalid(format!("class id {class_id} out of range")));
    }
    let period: f64 = rng.gen_range(7.0..11.0);
    let phase: f64 = rng.gen_range(0.0..2.0 * PI);
    let cx = rng.gen_range(0.35..0.65) * size as f64;
    let cy = rng.gen_range(0.35..0.65) * size as f64;
    let base: f64 = rng.gen_range(90.0..140.0);
    let contrast: f64 = rng.gen_range(60.0..100.0);
    let w = 2.0 * PI / period;
    let mut values = Vec::with_capacity(size * size);
    for y in 0..size {
        for x in 0..size {
            let (fx, fy) = (x as f64, y as f64);
            let t = match class_id {
                0 => ((fx - cx).hypot(fy - cy) * w + phase).sin(),
                1 => ((fx * w + phase).sin() * (fy * w + phase).sin()).signum(),
                _ => 0.5 * (((fx + fy) * w * 0.7071 + phase).sin() + ((fx - fy) * w * 0.7071 + phase).sin()),
            };
            let n = if noise > 0 {
                rng.gen_range(-f64::from(noise)..=f64::from(noise))
            } else {
                0.0
            };
            values.push((base + contrast * t + n).round().clamp(0.0, 255.0) as u8);
        }
    }
    Raster::from_fn(size, size, |x, y| [values[y * size + x]; 3])
}

/// Writes `<root>/{train,test}/<class>/NNNN.png` and returns the scanned manifest.
pub fn write_dataset(root: impl AsRef<Path>, spec: &SyntheticSpec, seed: u64) -> Result<Manifest> {
    let root = root.as_ref();
    let mut rng = seed::rng(seed::derive_seed(seed, "synthetic"));
    for (split, counts) in [(Split::Train, spec.train_counts), (Split::Test, spec.test_counts)] {
        for (class_id, &count) in counts.iter().enumerate() {
            let dir = root.join(split.name()).join(CLASS_NAMES[class_id]);
            fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
            for i in 0..count {
                generate_image(class_id, spec.size, spec.noise, &mut rng)?.save_png(dir.join(format!("{i:04}.png")))?;
            }
        }
    }
    scan_dataset(root)
}
