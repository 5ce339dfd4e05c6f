//! The five image primitives the box generator needs.

use image::{GrayImage, RgbImage};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Inclusive pixel rectangle.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PixelBox {
    pub x_min: u32,
    pub y_min: u32,
    pub x_max: u32,
    pub y_max: u32,
}

impl PixelBox {
    pub fn new(x_min: u32, y_min: u32, x_max: u32, y_max: u32) -> Result<Self> {
        if x_min > x_max || y_min > y_max {
            return Err(Error::DegenerateBox);
        }
        Ok(Self {
            x_min,
            y_min,
            x_max,
            y_max,
        })
    }

    pub fn width(&self) -> u32 {
        self.x_max - self.x_min + 1
    }

    pub fn height(&self) -> u32 {
        self.y_max - self.y_min + 1
    }

    /// Pixel count, inclusive of both edges.
    pub fn area(&self) -> u64 {
        u64::from(self.width()) * u64::from(self.height())
    }

    pub fn intersection(&self, other: &PixelBox) -> Option<PixelBox> {
        let b = PixelBox {
            x_min: self.x_min.max(other.x_min),
            y_min: self.y_min.max(other.y_min),
            x_max: self.x_max.min(other.x_max),
            y_max: self.y_max.min(other.y_max),
        };
        (b.x_min <= b.x_max && b.y_min <= b.y_max).then_some(b)
    }

    pub fn contains_box(&self, other: &PixelBox) -> bool {
        self.intersection(other) == Some(*other)
    }

    pub fn fits(&self, width: u32, height: u32) -> bool {
        self.x_max < width && self.y_max < height
    }

    pub fn to_array(&self) -> [u32; 4] {
        [self.x_min, self.y_min, self.x_max, self.y_max]
    }
}

/// Integer luma, `round(0.299 R + 0.587 G + 0.114 B)` with halves rounded up.
pub fn luma(rgb: [u8; 3]) -> u8 {
    let [r, g, b] = rgb.map(u32::from);
    ((299 * r + 587 * g + 114 * b + 500) / 1000) as u8
}

pub fn gray(rgb: &RgbImage) -> GrayImage {
    let (w, h) = rgb.dimensions();
    let data = rgb.pixels().map(|p| luma(p.0)).collect();
    GrayImage::from_raw(w, h, data).expect("one byte per pixel")
}

const GAUSS_RADIUS: i64 = 2;
const GAUSS_SIGMA: f64 = 1.0;

/// Normalized 5x5 Gaussian weights, row-major.
pub fn gauss_kernel() -> [[f64; 5]; 5] {
    let mut k = [[0.0; 5]; 5];
    let mut sum = 0.0;
    for (j, row) in k.iter_mut().enumerate() {
        for (i, w) in row.iter_mut().enumerate() {
            let dx = i as f64 - GAUSS_RADIUS as f64;
            let dy = j as f64 - GAUSS_RADIUS as f64;
            *w = (-(dx * dx + dy * dy) / (2.0 * GAUSS_SIGMA * GAUSS_SIGMA)).exp();
            sum += *w;
        }
    }
    for w in k.iter_mut().flatten() {
        *w /= sum;
    }
    k
}

fn clamp_index(i: i64, n: u32) -> u32 {
    i.clamp(0, i64::from(n) - 1) as u32
}

/// 5x5 Gaussian blur (sigma 1) with clamp-to-edge borders.
pub fn gauss(img: &GrayImage) -> GrayImage {
    let k = gauss_kernel();
    let (w, h) = img.dimensions();
    GrayImage::from_fn(w, h, |x, y| {
        let mut acc = 0.0;
        for (j, row) in k.iter().enumerate() {
            for (i, wt) in row.iter().enumerate() {
                let sx = clamp_index(i64::from(x) + i as i64 - GAUSS_RADIUS, w);
                let sy = clamp_index(i64::from(y) + j as i64 - GAUSS_RADIUS, h);
                acc += wt * f64::from(img.get_pixel(sx, sy).0[0]);
            }
        }
        image::Luma([(acc + 0.5).floor().clamp(0.0, 255.0) as u8])
    })
}

/// Foreground (255) where the pixel is darker than `t`, background (0) elsewhere.
pub fn binarize(img: &GrayImage, t: u8) -> GrayImage {
    let (w, h) = img.dimensions();
    let data = img
        .as_raw()
        .iter()
        .map(|&v| if v < t { 255 } else { 0 })
        .collect();
    GrayImage::from_raw(w, h, data).expect("one byte per pixel")
}

fn rank_filter(img: &GrayImage, radius: i64, pick_max: bool) -> GrayImage {
    let (w, h) = img.dimensions();
    // separable: a square window is a row pass followed by a column pass
    let pass = |src: &GrayImage, horizontal: bool| {
        GrayImage::from_fn(w, h, |x, y| {
            let mut best = if pick_max { 0u8 } else { 255u8 };
            for d in -radius..=radius {
                let (sx, sy) = if horizontal {
                    (clamp_index(i64::from(x) + d, w), y)
                } else {
                    (x, clamp_index(i64::from(y) + d, h))
                };
                let v = src.get_pixel(sx, sy).0[0];
                best = if pick_max { best.max(v) } else { best.min(v) };
            }
            image::Luma([best])
        })
    };
    pass(&pass(img, true), false)
}

pub fn dilate(img: &GrayImage, kernel: usize) -> Result<GrayImage> {
    check_kernel(kernel)?;
    Ok(rank_filter(img, (kernel / 2) as i64, true))
}

pub fn erode(img: &GrayImage, kernel: usize) -> Result<GrayImage> {
    check_kernel(kernel)?;
    Ok(rank_filter(img, (kernel / 2) as i64, false))
}

fn check_kernel(kernel: usize) -> Result<()> {
    if kernel.is_multiple_of(2) {
        return Err(Error::EvenKernel(kernel));
    }
    Ok(())
}

/// Grayscale close: max filter then min filter over a `kernel x kernel` square.
///
/// With a white background this fills in dark specks narrower than the kernel.
pub fn close(img: &GrayImage, kernel: usize) -> Result<GrayImage> {
    check_kernel(kernel)?;
    if kernel == 1 {
        return Ok(img.clone());
    }
    erode(&dilate(img, kernel)?, kernel)
}

/// Tight box over all 255 pixels, or `None` when there are none.
pub fn bbox(binary: &GrayImage) -> Option<PixelBox> {
    let mut b: Option<PixelBox> = None;
    for (x, y, p) in binary.enumerate_pixels() {
        if p.0[0] != 255 {
            continue;
        }
        b = Some(match b {
            None => PixelBox {
                x_min: x,
                y_min: y,
                x_max: x,
                y_max: y,
            },
            Some(b) => PixelBox {
                x_min: b.x_min.min(x),
                y_min: b.y_min.min(y),
                x_max: b.x_max.max(x),
                y_max: b.y_max.max(y),
            },
        });
    }
    b
}

/// Round-half-up of `factor * max`, the image-relative threshold rule.
pub fn relative_threshold(factor: f64, max: u8) -> u8 {
    (factor * f64::from(max) + 0.5).floor().clamp(0.0, 255.0) as u8
}

pub fn max_value(img: &GrayImage) -> u8 {
    img.as_raw().iter().copied().max().unwrap_or(0)
}
