//! Multiscale scene-complexity scoring.
//!
//! Five statistics are measured on the canonical 192×192 canvas and blended
//! into a single score:
//!
//! ```text
//! S_c = w1·H_I + w2·E_d + w3·ln(1 + σ_L²)/8 + w4·M̄_S/16 + w5·r_J
//! ```
//!
//! * `H_I`: histogram entropy normalized by `ln 256`
//! * `E_d`: fraction of Canny edge pixels
//! * `σ_L²`: population variance of the 4-neighbour Laplacian response
//! * `M̄_S`: mean 3×3 Sobel gradient magnitude
//! * `r_J`: mean absolute JPEG-cycle residual over 255
//!
//! All convolutions use replicate border padding.

use std::collections::VecDeque;
use std::fmt;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::codec::{self, QualityFactor};
use crate::imgproc::{self, GrayImage, ImageError, CANVAS_SIDE};

/// Stabilizer inside the entropy logarithm.
pub const ENTROPY_EPS: f64 = 1e-12;

pub const CANNY_SIGMA: f64 = 1.4;
pub const CANNY_LOW: f64 = 50.0;
pub const CANNY_HIGH: f64 = 150.0;

#[derive(Debug, Error)]
pub enum ComplexityError {
    #[error("expected a {expected}x{expected} canvas, got {width}x{height}")]
    DimensionMismatch {
        expected: usize,
        width: usize,
        height: usize,
    },
    #[error("invalid weights: {0}")]
    InvalidWeights(String),
    #[error(transparent)]
    Image(#[from] ImageError),
}

/// Nonnegative blend weights for the five features.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "[f64; 5]", into = "[f64; 5]")]
pub struct ComplexityWeights([f64; 5]);

impl ComplexityWeights {
    pub const DEFAULT: [f64; 5] = [0.30, 0.25, 0.20, 0.15, 0.10];

    pub fn new(w: [f64; 5]) -> Result<Self, ComplexityError> {
        if w.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(ComplexityError::InvalidWeights(format!(
                "weights must be finite and nonnegative, got {w:?}"
            )));
        }
        if w.iter().all(|&v| v == 0.0) {
            return Err(ComplexityError::InvalidWeights(
                "at least one weight must be positive".into(),
            ));
        }
        Ok(Self(w))
    }

    pub fn as_array(&self) -> [f64; 5] {
        self.0
    }
}

impl Default for ComplexityWeights {
    fn default() -> Self {
        Self(Self::DEFAULT)
    }
}

impl TryFrom<[f64; 5]> for ComplexityWeights {
    type Error = ComplexityError;

    fn try_from(w: [f64; 5]) -> Result<Self, Self::Error> {
        Self::new(w)
    }
}

impl From<ComplexityWeights> for [f64; 5] {
    fn from(w: ComplexityWeights) -> Self {
        w.0
    }
}

impl std::str::FromStr for ComplexityWeights {
    type Err = ComplexityError;

    /// Parses `w1,w2,w3,w4,w5`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let parts: Vec<&str> = s.split(',').map(str::trim).collect();
        if parts.len() != 5 {
            return Err(ComplexityError::InvalidWeights(format!(
                "expected 5 comma-separated weights, got {}",
                parts.len()
            )));
        }
        let mut w = [0.0; 5];
        for (dst, p) in w.iter_mut().zip(&parts) {
            *dst = p
                .parse()
                .map_err(|_| ComplexityError::InvalidWeights(format!("not a number: {p:?}")))?;
        }
        Self::new(w)
    }
}

/// The five raw scene statistics.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComplexityFeatures {
    pub h_i: f64,
    pub e_d: f64,
    pub lap_var: f64,
    pub sobel_mean: f64,
    pub r_j: f64,
}

impl ComplexityFeatures {
    /// Features after scale alignment, in weight order.
    pub fn aligned(&self) -> [f64; 5] {
        [
            self.h_i,
            self.e_d,
            self.lap_var.ln_1p() / 8.0,
            self.sobel_mean / 16.0,
            self.r_j,
        ]
    }

    pub fn combine(&self, weights: &ComplexityWeights) -> f64 {
        self.aligned()
            .iter()
            .zip(weights.0.iter())
            .map(|(f, w)| f * w)
            .sum()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComplexityScore {
    pub s_c: f64,
    pub features: ComplexityFeatures,
    pub weights: ComplexityWeights,
}

impl fmt::Display for ComplexityScore {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let ft = &self.features;
        write!(
            f,
            "{:.6},{:.6},{:.6},{:.6},{:.6},{:.6}",
            ft.h_i, ft.e_d, ft.lap_var, ft.sobel_mean, ft.r_j, self.s_c
        )
    }
}

fn require_canvas(img: &GrayImage) -> Result<(), ComplexityError> {
    if img.is_canvas() {
        Ok(())
    } else {
        Err(ComplexityError::DimensionMismatch {
            expected: CANVAS_SIDE,
            width: img.width(),
            height: img.height(),
        })
    }
}

/// Normalized Shannon entropy of the 256-bin intensity histogram.
pub fn intensity_entropy(img: &GrayImage) -> f64 {
    let mut hist = [0u64; 256];
    for &v in img.pixels() {
        hist[v as usize] += 1;
    }
    let n = img.pixels().len() as f64;
    let h: f64 = hist
        .iter()
        .filter(|&&c| c > 0)
        .map(|&c| {
            let p = c as f64 / n;
            -p * (p + ENTROPY_EPS).ln()
        })
        .sum();
    (h / 256f64.ln()).clamp(0.0, 1.0)
}

/// Applies a 3×3 kernel with replicate borders, returning integer responses.
fn convolve3(img: &GrayImage, k: &[[i32; 3]; 3]) -> Vec<i32> {
    let (w, h) = (img.width(), img.height());
    let mut out = Vec::with_capacity(w * h);
    for y in 0..h as isize {
        for x in 0..w as isize {
            let mut acc = 0i32;
            for (ky, row) in k.iter().enumerate() {
                for (kx, &c) in row.iter().enumerate() {
                    if c != 0 {
                        acc += c * img.get_clamped(x + kx as isize - 1, y + ky as isize - 1) as i32;
                    }
                }
            }
            out.push(acc);
        }
    }
    out
}

const SOBEL_X: [[i32; 3]; 3] = [[-1, 0, 1], [-2, 0, 2], [-1, 0, 1]];
const SOBEL_Y: [[i32; 3]; 3] = [[-1, -2, -1], [0, 0, 0], [1, 2, 1]];
const LAPLACE4: [[i32; 3]; 3] = [[0, 1, 0], [1, -4, 1], [0, 1, 0]];

/// Population variance of the 4-neighbour Laplacian response.
pub fn laplacian_variance(img: &GrayImage) -> f64 {
    let resp = convolve3(img, &LAPLACE4);
    population_variance(resp.iter().map(|&v| v as f64))
}

pub(crate) fn population_variance(values: impl Iterator<Item = f64> + Clone) -> f64 {
    let (n, sum) = values
        .clone()
        .fold((0usize, 0.0), |(n, s), v| (n + 1, s + v));
    if n == 0 {
        return 0.0;
    }
    let mean = sum / n as f64;
    values.map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64
}

/// Mean 3×3 Sobel gradient magnitude over the canonical canvas.
pub fn sobel_mean_magnitude(img: &GrayImage) -> Result<f64, ComplexityError> {
    require_canvas(img)?;
    let gx = convolve3(img, &SOBEL_X);
    let gy = convolve3(img, &SOBEL_Y);
    let total: f64 = gx
        .iter()
        .zip(&gy)
        .map(|(&x, &y)| ((x * x + y * y) as f64).sqrt())
        .sum();
    Ok(total / (CANVAS_SIDE * CANVAS_SIDE) as f64)
}

fn gaussian_kernel5(sigma: f64) -> [f64; 5] {
    let mut k = [0.0; 5];
    for (i, v) in k.iter_mut().enumerate() {
        let d = i as f64 - 2.0;
        *v = (-d * d / (2.0 * sigma * sigma)).exp();
    }
    let sum: f64 = k.iter().sum();
    k.map(|v| v / sum)
}

/// Separable 5×5 Gaussian blur with replicate borders, rounded back to 8 bits.
pub fn gaussian_blur5(img: &GrayImage, sigma: f64) -> GrayImage {
    let k = gaussian_kernel5(sigma);
    let (w, h) = (img.width(), img.height());
    let mut horiz = vec![0.0f64; w * h];
    for y in 0..h {
        for x in 0..w {
            horiz[y * w + x] = k
                .iter()
                .enumerate()
                .map(|(i, c)| c * img.get_clamped(x as isize + i as isize - 2, y as isize) as f64)
                .sum();
        }
    }
    let mut out = Vec::with_capacity(w * h);
    for y in 0..h {
        for x in 0..w {
            let v: f64 = k
                .iter()
                .enumerate()
                .map(|(i, c)| {
                    let yy = (y as isize + i as isize - 2).clamp(0, h as isize - 1) as usize;
                    c * horiz[yy * w + x]
                })
                .sum();
            out.push(v.round().clamp(0.0, 255.0) as u8);
        }
    }
    GrayImage::new(w, h, out).expect("same dimensions")
}

/// Binary Canny edge map: Gaussian blur, Sobel gradients, non-maximum
/// suppression over four direction sectors, double threshold and 8-connected
/// hysteresis.
pub fn canny(img: &GrayImage, sigma: f64, low: f64, high: f64) -> Vec<bool> {
    let blurred = gaussian_blur5(img, sigma);
    let (w, h) = (img.width(), img.height());
    let gx = convolve3(&blurred, &SOBEL_X);
    let gy = convolve3(&blurred, &SOBEL_Y);
    let mag: Vec<f64> = gx
        .iter()
        .zip(&gy)
        .map(|(&x, &y)| ((x * x + y * y) as f64).sqrt())
        .collect();

    let at = |x: isize, y: isize| -> f64 {
        if x < 0 || y < 0 || x >= w as isize || y >= h as isize {
            0.0
        } else {
            mag[y as usize * w + x as usize]
        }
    };

    // tan(22.5°) and tan(67.5°)
    const TAN22: f64 = 0.414_213_562_373_095_1;
    const TAN67: f64 = 2.414_213_562_373_095;

    let mut thin = vec![0.0f64; w * h];
    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            let m = mag[i];
            if m == 0.0 {
                continue;
            }
            let (dx, dy) = (gx[i] as f64, gy[i] as f64);
            let (ax, ay) = (dx.abs(), dy.abs());
            let (xi, yi) = (x as isize, y as isize);
            // neighbours along the gradient: (before, after)
            let (before, after) = if ay <= ax * TAN22 {
                (at(xi - 1, yi), at(xi + 1, yi))
            } else if ay >= ax * TAN67 {
                (at(xi, yi - 1), at(xi, yi + 1))
            } else if (dx > 0.0) == (dy > 0.0) {
                (at(xi - 1, yi - 1), at(xi + 1, yi + 1))
            } else {
                (at(xi + 1, yi - 1), at(xi - 1, yi + 1))
            };
            // Asymmetric test so a plateau of two equal maxima keeps one pixel.
            if m > before && m >= after {
                thin[i] = m.min(255.0);
            }
        }
    }

    let mut edges = vec![false; w * h];
    let mut queue = VecDeque::new();
    for (i, &m) in thin.iter().enumerate() {
        if m > high {
            edges[i] = true;
            queue.push_back(i);
        }
    }
    while let Some(i) = queue.pop_front() {
        let (x, y) = ((i % w) as isize, (i / w) as isize);
        for dy in -1..=1isize {
            for dx in -1..=1isize {
                let (nx, ny) = (x + dx, y + dy);
                if (dx, dy) == (0, 0) || nx < 0 || ny < 0 || nx >= w as isize || ny >= h as isize {
                    continue;
                }
                let j = ny as usize * w + nx as usize;
                if !edges[j] && thin[j] > low {
                    edges[j] = true;
                    queue.push_back(j);
                }
            }
        }
    }
    edges
}

/// Fraction of Canny edge pixels on the canonical canvas.
pub fn edge_density(img: &GrayImage) -> Result<f64, ComplexityError> {
    require_canvas(img)?;
    let count = canny(img, CANNY_SIGMA, CANNY_LOW, CANNY_HIGH)
        .iter()
        .filter(|&&e| e)
        .count();
    Ok(count as f64 / (CANVAS_SIDE * CANVAS_SIDE) as f64)
}

/// Mean absolute JPEG-cycle residual, normalized to `[0, 1]`.
pub fn jpeg_residual(img: &GrayImage, q: QualityFactor) -> f64 {
    let cycled = codec::lossy_cycle(img, q);
    codec::mean_abs_diff(img, &cycled) / 255.0
}

/// Computes all five features of an image already on the canonical canvas.
pub fn features_on_canvas(
    canvas: &GrayImage,
    q: QualityFactor,
) -> Result<ComplexityFeatures, ComplexityError> {
    Ok(ComplexityFeatures {
        h_i: intensity_entropy(canvas),
        e_d: edge_density(canvas)?,
        lap_var: laplacian_variance(canvas),
        sobel_mean: sobel_mean_magnitude(canvas)?,
        r_j: jpeg_residual(canvas, q),
    })
}

/// Resizes `img` to the canonical canvas and scores it.
pub fn complexity_score(
    img: &GrayImage,
    weights: &ComplexityWeights,
    q: QualityFactor,
) -> Result<ComplexityScore, ComplexityError> {
    let canvas = imgproc::resize_to_canvas(img, CANVAS_SIDE)?;
    let features = features_on_canvas(&canvas, q)?;
    Ok(ComplexityScore {
        s_c: features.combine(weights),
        features,
        weights: *weights,
    })
}

/// Loads and scores every path concurrently; results keep input order.
pub fn score_paths(
    paths: &[PathBuf],
    weights: &ComplexityWeights,
    q: QualityFactor,
) -> Vec<Result<ComplexityScore, ComplexityError>> {
    paths
        .par_iter()
        .map(|p| score_file(p, weights, q))
        .collect()
}

pub fn score_file(
    path: &Path,
    weights: &ComplexityWeights,
    q: QualityFactor,
) -> Result<ComplexityScore, ComplexityError> {
    let img = imgproc::load_grayscale(path)?;
    complexity_score(&img, weights, q)
}

pub const CSV_HEADER: &str = "path,h_i,e_d,lap_var,sobel_mean,r_j,s_c";

/// One row of the batch-scoring CSV.
pub fn csv_row(path: &str, score: &ComplexityScore) -> String {
    format!("{path},{score}")
}
