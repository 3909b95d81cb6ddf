//! Synthetic inspection datasets.
//!
//! Each image gets a latent clutter level in `[0, 1]` that drives texture
//! amplitude and sensor noise, so the complexity score spreads across the
//! set. Defect images carry a small dark blemish.

use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::HarnessError;
use crate::imgproc::{encode_pgm, GrayImage};
use crate::quantkernel::Label;

pub fn synth_image(rng: &mut impl Rng, side: usize, label: Label) -> GrayImage {
    let clutter: f64 = rng.random();
    let base = 70.0 + 110.0 * rng.random::<f64>();
    let tilt = 40.0 * (rng.random::<f64>() - 0.5);
    let freq = 0.15 + 0.6 * rng.random::<f64>();
    let texture = 60.0 * clutter;
    let noise = 70.0 * clutter * clutter;
    let (cx, cy) = (
        side as f64 * (0.2 + 0.6 * rng.random::<f64>()),
        side as f64 * (0.2 + 0.6 * rng.random::<f64>()),
    );
    let radius = side as f64 * (0.05 + 0.06 * rng.random::<f64>());
    let mut data = Vec::with_capacity(side * side);
    for y in 0..side {
        for x in 0..side {
            let (fx, fy) = (x as f64, y as f64);
            let mut v = base
                + tilt * (fx / side as f64 - 0.5)
                + texture * (freq * fx).sin() * (0.7 * freq * fy).cos()
                + noise * (rng.random::<f64>() - 0.5);
            if label == Label::Defect {
                let d2 = (fx - cx).powi(2) + (fy - cy).powi(2);
                v -= 90.0 * (-d2 / (radius * radius)).exp();
            }
            data.push(v.round().clamp(0.0, 255.0) as u8);
        }
    }
    GrayImage::new(side, side, data).expect("square buffer")
}

/// Writes `per_class` PGM images into each of `root/val/{good,defect}`.
pub fn write_dataset(
    root: &Path,
    per_class: usize,
    side: usize,
    seed: u64,
) -> Result<(), HarnessError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for label in [Label::Good, Label::Defect] {
        let dir = root.join("val").join(label.as_str());
        fs::create_dir_all(&dir).map_err(|e| HarnessError::io(&dir, e))?;
        for i in 0..per_class {
            let img = synth_image(&mut rng, side, label);
            let path = dir.join(format!("{}_{i:05}.pgm", label.as_str()));
            fs::write(&path, encode_pgm(&img)).map_err(|e| HarnessError::io(&path, e))?;
        }
    }
    Ok(())
}
