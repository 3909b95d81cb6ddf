//! Straight-line reference implementations used as test oracles. None of
//! these call into the crate's metric code.

#![allow(dead_code, clippy::needless_range_loop)]

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use saec::imgproc::GrayImage;

pub const C: usize = 192;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn noise_image(seed: u64, w: usize, h: usize) -> GrayImage {
    let mut r = rng(seed);
    GrayImage::from_fn(w, h, |_, _| r.random::<u8>()).unwrap()
}

pub fn step_image() -> GrayImage {
    GrayImage::from_fn(C, C, |x, _| if x < C / 2 { 0 } else { 255 }).unwrap()
}

pub fn gradient_image(w: usize, h: usize) -> GrayImage {
    GrayImage::from_fn(w, h, |x, y| ((x + y) * 255 / (w + h - 2)) as u8).unwrap()
}

/// Scalar bilinear sample at destination pixel `(dx, dy)`.
pub fn bilinear_oracle(src: &GrayImage, dw: usize, dh: usize, dx: usize, dy: usize) -> u8 {
    let sx = ((dx as f64 + 0.5) * src.width() as f64 / dw as f64 - 0.5)
        .max(0.0)
        .min((src.width() - 1) as f64);
    let sy = ((dy as f64 + 0.5) * src.height() as f64 / dh as f64 - 0.5)
        .max(0.0)
        .min((src.height() - 1) as f64);
    let x0 = sx.floor() as usize;
    let y0 = sy.floor() as usize;
    let x1 = if x0 + 1 < src.width() { x0 + 1 } else { x0 };
    let y1 = if y0 + 1 < src.height() { y0 + 1 } else { y0 };
    let (tx, ty) = (sx - x0 as f64, sy - y0 as f64);
    let p = |x: usize, y: usize| src.pixels()[y * src.width() + x] as f64;
    let v = (1.0 - ty) * ((1.0 - tx) * p(x0, y0) + tx * p(x1, y0))
        + ty * ((1.0 - tx) * p(x0, y1) + tx * p(x1, y1));
    v.round().clamp(0.0, 255.0) as u8
}

/// Copies the image into a buffer with `pad` replicated pixels per side.
pub fn padded(img: &GrayImage, pad: usize) -> (Vec<f64>, usize) {
    let (w, h) = (img.width(), img.height());
    let pw = w + 2 * pad;
    let mut out = vec![0.0; pw * (h + 2 * pad)];
    for py in 0..h + 2 * pad {
        for px in 0..pw {
            let x = (px as isize - pad as isize).max(0).min(w as isize - 1) as usize;
            let y = (py as isize - pad as isize).max(0).min(h as isize - 1) as usize;
            out[py * pw + px] = img.pixels()[y * w + x] as f64;
        }
    }
    (out, pw)
}

pub fn conv3_oracle(img: &GrayImage, k: [[f64; 3]; 3]) -> Vec<f64> {
    let (buf, pw) = padded(img, 1);
    let (w, h) = (img.width(), img.height());
    let mut out = Vec::with_capacity(w * h);
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for j in 0..3 {
                for i in 0..3 {
                    acc += k[j][i] * buf[(y + j) * pw + x + i];
                }
            }
            out.push(acc);
        }
    }
    out
}

pub const SOBEL_X: [[f64; 3]; 3] = [[-1.0, 0.0, 1.0], [-2.0, 0.0, 2.0], [-1.0, 0.0, 1.0]];
pub const SOBEL_Y: [[f64; 3]; 3] = [[-1.0, -2.0, -1.0], [0.0, 0.0, 0.0], [1.0, 2.0, 1.0]];
pub const LAPLACE: [[f64; 3]; 3] = [[0.0, 1.0, 0.0], [1.0, -4.0, 1.0], [0.0, 1.0, 0.0]];

pub fn entropy_oracle(img: &GrayImage) -> f64 {
    let n = img.pixels().len() as f64;
    let mut h = 0.0;
    for k in 0..256u32 {
        let count = img.pixels().iter().filter(|&&v| v as u32 == k).count();
        let p = count as f64 / n;
        h -= p * (p + 1e-12).ln();
    }
    (h / (256f64).ln()).clamp(0.0, 1.0)
}

pub fn laplacian_var_oracle(img: &GrayImage) -> f64 {
    let r = conv3_oracle(img, LAPLACE);
    let mean = r.iter().sum::<f64>() / r.len() as f64;
    r.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / r.len() as f64
}

pub fn sobel_mean_oracle(img: &GrayImage) -> f64 {
    let gx = conv3_oracle(img, SOBEL_X);
    let gy = conv3_oracle(img, SOBEL_Y);
    let s: f64 = gx
        .iter()
        .zip(&gy)
        .map(|(a, b)| (a * a + b * b).sqrt())
        .sum();
    s / (C * C) as f64
}

/// Canny with a 5×5 σ=1.4 Gaussian (8-bit rounded), Sobel gradients,
/// atan2-sector NMS (strict against the spatially preceding neighbour,
/// non-strict against the following one), thresholds 50/150 and 8-connected
/// hysteresis via an explicit stack.
pub fn canny_oracle(img: &GrayImage) -> Vec<bool> {
    let (w, h) = (img.width(), img.height());
    let sigma: f64 = 1.4;
    let mut k = [0.0; 5];
    for i in 0..5 {
        let d = i as f64 - 2.0;
        k[i] = (-(d * d) / (2.0 * sigma * sigma)).exp();
    }
    let ks: f64 = k.iter().sum();
    for v in k.iter_mut() {
        *v /= ks;
    }
    let (buf, pw) = padded(img, 2);
    let ph = h + 4;
    // horizontal pass over the padded rows, then vertical
    let mut hor = vec![0.0; pw * ph];
    for y in 0..ph {
        for x in 2..w + 2 {
            let mut acc = 0.0;
            for i in 0..5 {
                acc += k[i] * buf[y * pw + x + i - 2];
            }
            hor[y * pw + x] = acc;
        }
    }
    let mut blurred = vec![0u8; w * h];
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for i in 0..5 {
                acc += k[i] * hor[(y + i) * pw + x + 2];
            }
            blurred[y * w + x] = acc.round().clamp(0.0, 255.0) as u8;
        }
    }
    let blurred = GrayImage::new(w, h, blurred).unwrap();
    let gx = conv3_oracle(&blurred, SOBEL_X);
    let gy = conv3_oracle(&blurred, SOBEL_Y);
    let mag: Vec<f64> = gx
        .iter()
        .zip(&gy)
        .map(|(a, b)| (a * a + b * b).sqrt())
        .collect();
    let m_at = |x: i64, y: i64| {
        if x < 0 || y < 0 || x >= w as i64 || y >= h as i64 {
            0.0
        } else {
            mag[y as usize * w + x as usize]
        }
    };
    let mut thin = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            if mag[i] == 0.0 {
                continue;
            }
            let mut deg = gy[i].atan2(gx[i]).to_degrees();
            if deg < 0.0 {
                deg += 180.0;
            }
            if deg >= 180.0 {
                deg -= 180.0;
            }
            let (x, y) = (x as i64, y as i64);
            let (before, after) = if !(22.5..157.5).contains(&deg) {
                (m_at(x - 1, y), m_at(x + 1, y))
            } else if deg < 67.5 {
                (m_at(x - 1, y - 1), m_at(x + 1, y + 1))
            } else if deg < 112.5 {
                (m_at(x, y - 1), m_at(x, y + 1))
            } else {
                (m_at(x + 1, y - 1), m_at(x - 1, y + 1))
            };
            if mag[i] > before && mag[i] >= after {
                thin[i] = mag[i].min(255.0);
            }
        }
    }
    let mut edge = vec![false; w * h];
    let mut stack: Vec<usize> = Vec::new();
    for i in 0..w * h {
        if thin[i] > 150.0 {
            edge[i] = true;
            stack.push(i);
        }
    }
    while let Some(i) = stack.pop() {
        let (x, y) = ((i % w) as i64, (i / w) as i64);
        for ny in y - 1..=y + 1 {
            for nx in x - 1..=x + 1 {
                if nx < 0 || ny < 0 || nx >= w as i64 || ny >= h as i64 {
                    continue;
                }
                let j = ny as usize * w + nx as usize;
                if !edge[j] && thin[j] > 50.0 {
                    edge[j] = true;
                    stack.push(j);
                }
            }
        }
    }
    edge
}

pub fn edge_density_oracle(img: &GrayImage) -> f64 {
    canny_oracle(img).iter().filter(|&&e| e).count() as f64 / (C * C) as f64
}

/// Orthonormal 2-D DCT-II by the direct double sum.
pub fn dct_oracle(x: &[[f64; 8]; 8]) -> [[f64; 8]; 8] {
    let c = |u: usize| if u == 0 { (0.5f64).sqrt() } else { 1.0 };
    let mut out = [[0.0; 8]; 8];
    for v in 0..8 {
        for u in 0..8 {
            let mut s = 0.0;
            for y in 0..8 {
                for xx in 0..8 {
                    s += x[y][xx]
                        * ((2 * xx + 1) as f64 * u as f64 * PI / 16.0).cos()
                        * ((2 * y + 1) as f64 * v as f64 * PI / 16.0).cos();
                }
            }
            out[v][u] = 0.25 * c(u) * c(v) * s;
        }
    }
    out
}

pub fn idct_oracle(coef: &[[f64; 8]; 8]) -> [[f64; 8]; 8] {
    let c = |u: usize| if u == 0 { (0.5f64).sqrt() } else { 1.0 };
    let mut out = [[0.0; 8]; 8];
    for y in 0..8 {
        for x in 0..8 {
            let mut s = 0.0;
            for v in 0..8 {
                for u in 0..8 {
                    s += c(u)
                        * c(v)
                        * coef[v][u]
                        * ((2 * x + 1) as f64 * u as f64 * PI / 16.0).cos()
                        * ((2 * y + 1) as f64 * v as f64 * PI / 16.0).cos();
                }
            }
            out[y][x] = 0.25 * s;
        }
    }
    out
}

pub const ANNEX_K: [f64; 64] = [
    16., 11., 10., 16., 24., 40., 51., 61., 12., 12., 14., 19., 26., 58., 60., 55., 14., 13., 16.,
    24., 40., 57., 69., 56., 14., 17., 22., 29., 51., 87., 80., 62., 18., 22., 37., 56., 68., 109.,
    103., 77., 24., 35., 55., 64., 81., 104., 113., 92., 49., 64., 78., 87., 103., 121., 120.,
    101., 72., 92., 95., 98., 112., 100., 103., 99.,
];

pub fn table_oracle(q: u32) -> [f64; 64] {
    let scale = if q < 50 {
        5000.0 / q as f64
    } else {
        200.0 - 2.0 * q as f64
    };
    let mut t = [0.0; 64];
    for i in 0..64 {
        t[i] = (ANNEX_K[i] * scale / 100.0).round().max(1.0);
    }
    t
}

/// The whole compression cycle by direct evaluation.
pub fn cycle_oracle(img: &GrayImage, table: &[f64; 64]) -> GrayImage {
    let (w, h) = (img.width(), img.height());
    let (bw, bh) = (w.div_ceil(8), h.div_ceil(8));
    let mut out = vec![0u8; w * h];
    for by in 0..bh {
        for bx in 0..bw {
            let mut blk = [[0.0; 8]; 8];
            for y in 0..8 {
                for x in 0..8 {
                    let sx = (bx * 8 + x).min(w - 1);
                    let sy = (by * 8 + y).min(h - 1);
                    blk[y][x] = img.pixels()[sy * w + sx] as f64 - 128.0;
                }
            }
            let mut co = dct_oracle(&blk);
            for v in 0..8 {
                for u in 0..8 {
                    let q = table[v * 8 + u];
                    co[v][u] = (co[v][u] / q).round() * q;
                }
            }
            let rec = idct_oracle(&co);
            for y in 0..8 {
                for x in 0..8 {
                    let (px, py) = (bx * 8 + x, by * 8 + y);
                    if px < w && py < h {
                        out[py * w + px] = (rec[y][x] + 128.0).clamp(0.0, 255.0).round() as u8;
                    }
                }
            }
        }
    }
    GrayImage::new(w, h, out).unwrap()
}

pub fn residual_oracle(img: &GrayImage, q: u32) -> f64 {
    let cyc = cycle_oracle(img, &table_oracle(q));
    let s: f64 = img
        .pixels()
        .iter()
        .zip(cyc.pixels())
        .map(|(&a, &b)| (a as f64 - b as f64).abs())
        .sum();
    s / img.pixels().len() as f64 / 255.0
}

/// Weighted blend assembled from the five oracles on a canvas image.
pub fn score_oracle(canvas: &GrayImage, w: [f64; 5], q: u32) -> f64 {
    w[0] * entropy_oracle(canvas)
        + w[1] * edge_density_oracle(canvas)
        + w[2] * (1.0 + laplacian_var_oracle(canvas)).ln() / 8.0
        + w[3] * sobel_mean_oracle(canvas) / 16.0
        + w[4] * residual_oracle(canvas, q)
}

/// Index of the nearest level by exhaustive search, ties to the lower index.
pub fn argmin_oracle(levels: &[f64], x: f64) -> usize {
    let mut best = 0;
    for k in 1..levels.len() {
        if (x - levels[k]).abs() < (x - levels[best]).abs() {
            best = k;
        }
    }
    best
}

/// Standard-normal samples via Box–Muller.
pub fn normals(seed: u64, n: usize) -> Vec<f64> {
    use rand_distr::{Distribution, StandardNormal};
    let mut r = rng(seed);
    (0..n).map(|_| StandardNormal.sample(&mut r)).collect()
}
