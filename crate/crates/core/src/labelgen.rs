//! Ground-truth box synthesis from a rendered image set.
//!
//! The occupied region is the box of the mean image's dark footprint; it gates
//! every per-image box. Per-image boxes come from a growing close-kernel schedule
//! that stops at the first box mostly inside the occupied region.

use image::RgbImage;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::Viewpoint;
use crate::imgproc::{self, PixelBox};
use crate::render::RenderedImage;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LabelGenConfig {
    pub t_occ_factor: f64,
    pub t_single_factor: f64,
    pub t_rect: f64,
    pub kernel_start: usize,
    pub kernel_step: usize,
    pub kernel_max: usize,
}

impl Default for LabelGenConfig {
    fn default() -> Self {
        Self {
            t_occ_factor: 0.95,
            t_single_factor: 0.9,
            t_rect: 0.75,
            kernel_start: 3,
            kernel_step: 2,
            kernel_max: 31,
        }
    }
}

impl LabelGenConfig {
    pub fn validate(&self) -> Result<()> {
        let frac = |v: f64| v > 0.0 && v < 1.0;
        if !frac(self.t_occ_factor) || !frac(self.t_single_factor) {
            return Err(Error::InvalidConfig(format!(
                "threshold factors must lie in (0, 1): t_occ {}, t_single {}",
                self.t_occ_factor, self.t_single_factor
            )));
        }
        // t_rect = 0 is accepted as the degenerate "any foreground" setting
        if !(0.0..1.0).contains(&self.t_rect) {
            return Err(Error::InvalidConfig(format!(
                "t_rect {} must lie in [0, 1)",
                self.t_rect
            )));
        }
        if self.kernel_start.is_multiple_of(2) || self.kernel_max.is_multiple_of(2) {
            return Err(Error::InvalidConfig(format!(
                "kernel bounds must be odd ({}..{})",
                self.kernel_start, self.kernel_max
            )));
        }
        if self.kernel_step == 0 || self.kernel_step % 2 == 1 {
            return Err(Error::InvalidConfig(format!(
                "kernel_step {} must be even and > 0",
                self.kernel_step
            )));
        }
        if self.kernel_start > self.kernel_max {
            return Err(Error::InvalidConfig(format!(
                "kernel_start {} exceeds kernel_max {}",
                self.kernel_start, self.kernel_max
            )));
        }
        Ok(())
    }

    /// Close kernels tried in order.
    pub fn kernels(&self) -> impl Iterator<Item = usize> + '_ {
        (self.kernel_start..=self.kernel_max).step_by(self.kernel_step.max(1))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Annotation {
    pub viewpoint: Viewpoint,
    pub bbox: Option<PixelBox>,
    pub valid: bool,
    pub kernel_used: Option<usize>,
}

impl Annotation {
    pub fn invalid(viewpoint: Viewpoint) -> Self {
        Self {
            viewpoint,
            bbox: None,
            valid: false,
            kernel_used: None,
        }
    }
}

/// Per-pixel mean of the images, rounded half-up per channel.
pub fn mean_image(images: &[&RgbImage]) -> Result<RgbImage> {
    let first = images.first().ok_or(Error::EmptyInput("images"))?;
    let (w, h) = first.dimensions();
    if let Some(bad) = images.iter().find(|i| i.dimensions() != (w, h)) {
        return Err(Error::DimensionMismatch(format!(
            "expected {w}x{h}, got {}x{}",
            bad.width(),
            bad.height()
        )));
    }
    let mut sums = vec![0u64; (w * h * 3) as usize];
    for img in images {
        for (s, &v) in sums.iter_mut().zip(img.as_raw()) {
            *s += u64::from(v);
        }
    }
    let n = images.len() as u64;
    // integer round-half-up keeps the mean independent of image order
    let data = sums.iter().map(|&s| ((2 * s + n) / (2 * n)) as u8).collect();
    Ok(RgbImage::from_raw(w, h, data).expect("three bytes per pixel"))
}

/// Threshold applied to the blurred mean image.
pub fn occupied_threshold(gauss_img: &image::GrayImage, cfg: &LabelGenConfig) -> u8 {
    imgproc::relative_threshold(cfg.t_occ_factor, imgproc::max_value(gauss_img))
}

/// Bounding box of the footprint shared across the image set.
pub fn occupied_region(images: &[RenderedImage], cfg: &LabelGenConfig) -> Result<PixelBox> {
    let refs: Vec<&RgbImage> = images.iter().map(|i| &i.pixels).collect();
    occupied_region_of(&refs, cfg)
}

pub fn occupied_region_of(images: &[&RgbImage], cfg: &LabelGenConfig) -> Result<PixelBox> {
    let occ = mean_image(images)?;
    let blurred = imgproc::gauss(&imgproc::gray(&occ));
    let t = occupied_threshold(&blurred, cfg);
    imgproc::bbox(&imgproc::binarize(&blurred, t)).ok_or(Error::EmptyOccupiedRegion)
}

/// Fraction of `temp` that lies inside `occ`, in inclusive pixel counts.
pub fn inside_ratio(temp: &PixelBox, occ: &PixelBox) -> f64 {
    let inter = temp.intersection(occ).map_or(0, |b| b.area());
    inter as f64 / temp.area() as f64
}

/// Box for one image: the first close kernel whose box is mostly inside `occ`.
pub fn rect_region(image: &RenderedImage, occ: &PixelBox, cfg: &LabelGenConfig) -> Annotation {
    rect_region_of(&image.pixels, image.viewpoint, occ, cfg)
}

pub fn rect_region_of(
    pixels: &RgbImage,
    viewpoint: Viewpoint,
    occ: &PixelBox,
    cfg: &LabelGenConfig,
) -> Annotation {
    let gray = imgproc::gray(pixels);
    let t_single = imgproc::relative_threshold(cfg.t_single_factor, imgproc::max_value(&gray));
    for kernel in cfg.kernels() {
        let closed = imgproc::close(&gray, kernel).expect("kernel schedule is odd");
        let Some(temp) = imgproc::bbox(&imgproc::binarize(&closed, t_single)) else {
            // larger kernels only brighten further, so nothing will appear
            break;
        };
        if inside_ratio(&temp, occ) > cfg.t_rect {
            return Annotation {
                viewpoint,
                bbox: Some(temp),
                valid: true,
                kernel_used: Some(kernel),
            };
        }
    }
    Annotation::invalid(viewpoint)
}

/// Occupied region once, then one annotation per image in input order.
pub fn annotate_set(
    images: &[RenderedImage],
    cfg: &LabelGenConfig,
) -> Result<(PixelBox, Vec<Annotation>)> {
    if images.is_empty() {
        return Err(Error::EmptyInput("images"));
    }
    cfg.validate()?;
    let occ = occupied_region(images, cfg)?;
    let anns = images
        .par_iter()
        .map(|img| rect_region(img, &occ, cfg))
        .collect();
    Ok((occ, anns))
}
