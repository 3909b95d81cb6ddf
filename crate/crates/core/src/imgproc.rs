//! Grayscale rasters: loading, BT.601 luma conversion, bilinear resize and
//! PGM output.
//!
//! Every complexity metric is computed on a [`GrayImage`] that has been
//! resized to the canonical `CANVAS_SIDE × CANVAS_SIDE` field.

use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use image::{DynamicImage, ImageReader};
use thiserror::Error;

/// Side length of the canonical analysis canvas.
pub const CANVAS_SIDE: usize = 192;

#[derive(Debug, Error)]
pub enum ImageError {
    #[error("file not found: {0}")]
    FileNotFound(PathBuf),
    #[error("unsupported image format: {0}")]
    UnsupportedFormat(PathBuf),
    #[error("corrupt image {path}: {reason}")]
    CorruptImage { path: PathBuf, reason: String },
    #[error("invalid dimension: {0}")]
    InvalidDimension(String),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
}

/// An 8-bit single-channel raster stored row-major.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GrayImage {
    width: usize,
    height: usize,
    data: Vec<u8>,
}

impl GrayImage {
    pub fn new(width: usize, height: usize, data: Vec<u8>) -> Result<Self, ImageError> {
        if width == 0 || height == 0 {
            return Err(ImageError::InvalidDimension(format!(
                "image must be nonempty, got {width}x{height}"
            )));
        }
        if data.len() != width * height {
            return Err(ImageError::InvalidDimension(format!(
                "{} pixels supplied for a {width}x{height} image",
                data.len()
            )));
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    /// An image where every pixel holds `value`.
    pub fn filled(width: usize, height: usize, value: u8) -> Result<Self, ImageError> {
        Self::new(width, height, vec![value; width * height])
    }

    /// Builds an image by evaluating `f(x, y)` at every pixel.
    pub fn from_fn(
        width: usize,
        height: usize,
        mut f: impl FnMut(usize, usize) -> u8,
    ) -> Result<Self, ImageError> {
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        Self::new(width, height, data)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn pixels(&self) -> &[u8] {
        &self.data
    }

    pub fn into_pixels(self) -> Vec<u8> {
        self.data
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> u8 {
        self.data[y * self.width + x]
    }

    /// Pixel lookup with replicate (clamp-to-edge) border handling.
    #[inline]
    pub fn get_clamped(&self, x: isize, y: isize) -> u8 {
        let x = x.clamp(0, self.width as isize - 1) as usize;
        let y = y.clamp(0, self.height as isize - 1) as usize;
        self.data[y * self.width + x]
    }

    /// Rotates the image by 90 degrees clockwise.
    pub fn rotate90(&self) -> GrayImage {
        let (w, h) = (self.width, self.height);
        let mut data = vec![0u8; w * h];
        for y in 0..h {
            for x in 0..w {
                // (x, y) lands at column h-1-y, row x of a h×w image
                data[x * h + (h - 1 - y)] = self.data[y * w + x];
            }
        }
        GrayImage {
            width: h,
            height: w,
            data,
        }
    }

    pub fn is_canvas(&self) -> bool {
        self.width == CANVAS_SIDE && self.height == CANVAS_SIDE
    }
}

/// ITU-R BT.601 luma, rounded half-up.
#[inline]
pub fn luma_bt601(r: u8, g: u8, b: u8) -> u8 {
    // Integer weights in thousandths keep the rounding exact.
    let scaled = 299 * r as u32 + 587 * g as u32 + 114 * b as u32;
    ((scaled + 500) / 1000).min(255) as u8
}

/// Loads a PNG, PGM, BMP or JPEG file as 8-bit grayscale.
pub fn load_grayscale(path: impl AsRef<Path>) -> Result<GrayImage, ImageError> {
    let path = path.as_ref();
    if !path.exists() {
        return Err(ImageError::FileNotFound(path.to_path_buf()));
    }
    let reader = ImageReader::open(path)
        .map_err(|source| ImageError::Io {
            path: path.to_path_buf(),
            source,
        })?
        .with_guessed_format()
        .map_err(|source| ImageError::Io {
            path: path.to_path_buf(),
            source,
        })?;
    match reader.format() {
        Some(
            image::ImageFormat::Png
            | image::ImageFormat::Pnm
            | image::ImageFormat::Bmp
            | image::ImageFormat::Jpeg,
        ) => {}
        _ => return Err(ImageError::UnsupportedFormat(path.to_path_buf())),
    }
    let decoded = reader.decode().map_err(|e| match e {
        image::ImageError::Unsupported(_) => ImageError::UnsupportedFormat(path.to_path_buf()),
        other => ImageError::CorruptImage {
            path: path.to_path_buf(),
            reason: other.to_string(),
        },
    })?;
    Ok(from_dynamic(decoded))
}

fn from_dynamic(img: DynamicImage) -> GrayImage {
    let (w, h) = (img.width() as usize, img.height() as usize);
    let data = match img {
        DynamicImage::ImageLuma8(buf) => buf.into_raw(),
        DynamicImage::ImageLumaA8(buf) => buf.pixels().map(|p| p.0[0]).collect(),
        other => other
            .to_rgb8()
            .pixels()
            .map(|p| luma_bt601(p.0[0], p.0[1], p.0[2]))
            .collect(),
    };
    GrayImage {
        width: w,
        height: h,
        data,
    }
}

/// Resamples `img` to a `side × side` canvas with bilinear interpolation.
///
/// Sample positions follow the half-pixel-center convention and out-of-range
/// taps clamp to the nearest edge pixel. Images already at the target size
/// are returned unchanged.
pub fn resize_to_canvas(img: &GrayImage, side: usize) -> Result<GrayImage, ImageError> {
    if side < 2 {
        return Err(ImageError::InvalidDimension(format!(
            "canvas side must be at least 2, got {side}"
        )));
    }
    if img.width == side && img.height == side {
        return Ok(img.clone());
    }
    let taps_x = axis_taps(img.width, side);
    let taps_y = axis_taps(img.height, side);
    let mut data = Vec::with_capacity(side * side);
    for &(y0, y1, fy) in &taps_y {
        for &(x0, x1, fx) in &taps_x {
            let top = lerp(img.get(x0, y0) as f64, img.get(x1, y0) as f64, fx);
            let bottom = lerp(img.get(x0, y1) as f64, img.get(x1, y1) as f64, fx);
            let v = lerp(top, bottom, fy);
            data.push(v.round().clamp(0.0, 255.0) as u8);
        }
    }
    Ok(GrayImage {
        width: side,
        height: side,
        data,
    })
}

#[inline]
fn lerp(a: f64, b: f64, t: f64) -> f64 {
    a + (b - a) * t
}

/// Source index pair and fractional weight for every destination index.
fn axis_taps(src: usize, dst: usize) -> Vec<(usize, usize, f64)> {
    let scale = src as f64 / dst as f64;
    let max = (src - 1) as f64;
    (0..dst)
        .map(|i| {
            let pos = ((i as f64 + 0.5) * scale - 0.5).clamp(0.0, max);
            let i0 = pos.floor() as usize;
            let i1 = (i0 + 1).min(src - 1);
            (i0, i1, pos - i0 as f64)
        })
        .collect()
}

/// Serializes as binary PGM (P5, maxval 255).
pub fn encode_pgm(img: &GrayImage) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n255\n", img.width, img.height).into_bytes();
    out.extend_from_slice(&img.data);
    out
}

pub fn save_pgm(img: &GrayImage, path: impl AsRef<Path>) -> Result<(), ImageError> {
    let path = path.as_ref();
    let io_err = |source| ImageError::Io {
        path: path.to_path_buf(),
        source,
    };
    let mut file = fs::File::create(path).map_err(io_err)?;
    file.write_all(&encode_pgm(img)).map_err(io_err)?;
    Ok(())
}
