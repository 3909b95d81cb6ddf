//! A deterministic baseline-JPEG-style compression cycle for grayscale images.
//!
//! Only the reconstruction matters, so there is no entropy coding: each 8×8
//! block is level-shifted, transformed with an orthonormal DCT, quantized
//! with the scaled Annex K luminance table and reconstructed.

use std::f64::consts::PI;
use std::sync::OnceLock;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::imgproc::GrayImage;

pub const BLOCK: usize = 8;

pub type Block = [[f64; BLOCK]; BLOCK];

/// Annex K luminance quantization table, row-major.
pub const LUMA_QUANT_BASE: [u16; 64] = [
    16, 11, 10, 16, 24, 40, 51, 61, //
    12, 12, 14, 19, 26, 58, 60, 55, //
    14, 13, 16, 24, 40, 57, 69, 56, //
    14, 17, 22, 29, 51, 87, 80, 62, //
    18, 22, 37, 56, 68, 109, 103, 77, //
    24, 35, 55, 64, 81, 104, 113, 92, //
    49, 64, 78, 87, 103, 121, 120, 101, //
    72, 92, 95, 98, 112, 100, 103, 99,
];

#[derive(Debug, Error, PartialEq, Eq)]
#[error("quality factor must be in 1..=100, got {0}")]
pub struct InvalidQuality(pub u32);

/// JPEG quality knob in `1..=100`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "u32", into = "u32")]
pub struct QualityFactor(u8);

impl TryFrom<u32> for QualityFactor {
    type Error = InvalidQuality;

    fn try_from(q: u32) -> Result<Self, Self::Error> {
        Self::new(q)
    }
}

impl From<QualityFactor> for u32 {
    fn from(q: QualityFactor) -> Self {
        q.get()
    }
}

impl QualityFactor {
    pub fn new(q: u32) -> Result<Self, InvalidQuality> {
        if (1..=100).contains(&q) {
            Ok(Self(q as u8))
        } else {
            Err(InvalidQuality(q))
        }
    }

    pub fn get(self) -> u32 {
        self.0 as u32
    }

    /// The luminance table scaled by this quality, row-major.
    pub fn quant_table(self) -> [f64; 64] {
        let q = self.0 as f64;
        let scale = if self.0 < 50 {
            5000.0 / q
        } else {
            200.0 - 2.0 * q
        };
        let mut table = [0.0; 64];
        for (dst, &base) in table.iter_mut().zip(LUMA_QUANT_BASE.iter()) {
            *dst = (base as f64 * scale / 100.0).round().max(1.0);
        }
        table
    }
}

impl Default for QualityFactor {
    fn default() -> Self {
        Self(50)
    }
}

/// `basis[u][x] = c(u) * cos((2x + 1) u π / 16)` with the orthonormal `c(u)`.
fn basis() -> &'static Block {
    static BASIS: OnceLock<Block> = OnceLock::new();
    BASIS.get_or_init(|| {
        let mut m = [[0.0; BLOCK]; BLOCK];
        for (u, row) in m.iter_mut().enumerate() {
            let c = if u == 0 {
                (1.0 / BLOCK as f64).sqrt()
            } else {
                (2.0 / BLOCK as f64).sqrt()
            };
            for (x, v) in row.iter_mut().enumerate() {
                *v = c * ((2 * x + 1) as f64 * u as f64 * PI / 16.0).cos();
            }
        }
        m
    })
}

/// Orthonormal 2-D type-II DCT of an 8×8 block.
pub fn dct8_forward(block: &Block) -> Block {
    let b = basis();
    // rows first, then columns: out = B · X · Bᵀ
    let mut tmp = [[0.0; BLOCK]; BLOCK];
    for y in 0..BLOCK {
        for u in 0..BLOCK {
            tmp[y][u] = (0..BLOCK).map(|x| b[u][x] * block[y][x]).sum();
        }
    }
    let mut out = [[0.0; BLOCK]; BLOCK];
    for v in 0..BLOCK {
        for u in 0..BLOCK {
            out[v][u] = (0..BLOCK).map(|y| b[v][y] * tmp[y][u]).sum();
        }
    }
    out
}

/// Orthonormal 2-D type-III DCT, the inverse of [`dct8_forward`].
pub fn dct8_inverse(coeffs: &Block) -> Block {
    let b = basis();
    let mut tmp = [[0.0; BLOCK]; BLOCK];
    for v in 0..BLOCK {
        for x in 0..BLOCK {
            tmp[v][x] = (0..BLOCK).map(|u| b[u][x] * coeffs[v][u]).sum();
        }
    }
    let mut out = [[0.0; BLOCK]; BLOCK];
    for y in 0..BLOCK {
        for x in 0..BLOCK {
            out[y][x] = (0..BLOCK).map(|v| b[v][y] * tmp[v][x]).sum();
        }
    }
    out
}

/// Runs one block through shift, DCT, quantize, dequantize, IDCT and unshift.
/// Output samples are clamped and rounded to 8 bits.
pub fn cycle_block(block: &[[u8; BLOCK]; BLOCK], table: &[f64; 64]) -> [[u8; BLOCK]; BLOCK] {
    let mut shifted = [[0.0; BLOCK]; BLOCK];
    for (dst, src) in shifted.iter_mut().zip(block.iter()) {
        for (d, &s) in dst.iter_mut().zip(src.iter()) {
            *d = s as f64 - 128.0;
        }
    }
    let mut coeffs = dct8_forward(&shifted);
    for (i, row) in coeffs.iter_mut().enumerate() {
        for (j, c) in row.iter_mut().enumerate() {
            let step = table[i * BLOCK + j];
            // f64::round rounds half away from zero
            *c = (*c / step).round() * step;
        }
    }
    let recon = dct8_inverse(&coeffs);
    let mut out = [[0u8; BLOCK]; BLOCK];
    for (dst, src) in out.iter_mut().zip(recon.iter()) {
        for (d, &s) in dst.iter_mut().zip(src.iter()) {
            *d = (s + 128.0).clamp(0.0, 255.0).round() as u8;
        }
    }
    out
}

/// Compresses and decompresses `img` at quality `q`.
///
/// Images whose sides are not multiples of eight are padded by edge
/// replication and cropped back afterwards.
pub fn lossy_cycle(img: &GrayImage, q: QualityFactor) -> GrayImage {
    let table = q.quant_table();
    cycle_with_table(img, &table)
}

pub(crate) fn cycle_with_table(img: &GrayImage, table: &[f64; 64]) -> GrayImage {
    let (w, h) = (img.width(), img.height());
    let bw = w.div_ceil(BLOCK);
    let bh = h.div_ceil(BLOCK);

    let blocks: Vec<[[u8; BLOCK]; BLOCK]> = (0..bw * bh)
        .into_par_iter()
        .map(|idx| {
            let (bx, by) = (idx % bw, idx / bw);
            let mut block = [[0u8; BLOCK]; BLOCK];
            for (dy, row) in block.iter_mut().enumerate() {
                for (dx, px) in row.iter_mut().enumerate() {
                    *px = img.get_clamped((bx * BLOCK + dx) as isize, (by * BLOCK + dy) as isize);
                }
            }
            cycle_block(&block, table)
        })
        .collect();

    let mut out = vec![0u8; w * h];
    for (idx, block) in blocks.iter().enumerate() {
        let (bx, by) = (idx % bw, idx / bw);
        for (dy, row) in block.iter().enumerate() {
            let y = by * BLOCK + dy;
            if y >= h {
                break;
            }
            for (dx, &px) in row.iter().enumerate() {
                let x = bx * BLOCK + dx;
                if x < w {
                    out[y * w + x] = px;
                }
            }
        }
    }
    GrayImage::new(w, h, out).expect("dimensions preserved")
}

/// Mean absolute per-pixel difference between two equally sized images.
pub fn mean_abs_diff(a: &GrayImage, b: &GrayImage) -> f64 {
    assert_eq!((a.width(), a.height()), (b.width(), b.height()));
    let total: u64 = a
        .pixels()
        .iter()
        .zip(b.pixels())
        .map(|(&x, &y)| x.abs_diff(y) as u64)
        .sum();
    total as f64 / a.pixels().len() as f64
}
