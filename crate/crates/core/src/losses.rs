//! Scalar losses for pose and box supervision.

use image::RgbImage;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::Viewpoint;

/// Pose triple in degrees / scene units.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PoseAngles {
    pub theta: f64,
    pub phi: f64,
    pub gamma: f64,
}

impl PoseAngles {
    pub fn new(theta: f64, phi: f64, gamma: f64) -> Self {
        Self { theta, phi, gamma }
    }
}

impl From<Viewpoint> for PoseAngles {
    fn from(v: Viewpoint) -> Self {
        Self::new(v.theta(), v.phi(), v.gamma())
    }
}

/// Normalized box in `[0, 1]` image coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormBox {
    pub x_min: f64,
    pub y_min: f64,
    pub x_max: f64,
    pub y_max: f64,
}

impl NormBox {
    pub fn new(x_min: f64, y_min: f64, x_max: f64, y_max: f64) -> Self {
        Self {
            x_min,
            y_min,
            x_max,
            y_max,
        }
    }

    /// Continuous footprint of an inclusive pixel box.
    pub fn from_pixels(b: &crate::PixelBox, width: u32, height: u32) -> Self {
        let (w, h) = (f64::from(width), f64::from(height));
        Self::new(
            f64::from(b.x_min) / w,
            f64::from(b.y_min) / h,
            (f64::from(b.x_max) + 1.0) / w,
            (f64::from(b.y_max) + 1.0) / h,
        )
    }

    pub fn area(&self) -> f64 {
        (self.x_max - self.x_min).max(0.0) * (self.y_max - self.y_min).max(0.0)
    }

    pub fn intersection_area(&self, o: &NormBox) -> f64 {
        let w = (self.x_max.min(o.x_max) - self.x_min.max(o.x_min)).max(0.0);
        let h = (self.y_max.min(o.y_max) - self.y_min.max(o.y_min)).max(0.0);
        w * h
    }

    pub fn iou(&self, o: &NormBox) -> f64 {
        let inter = self.intersection_area(o);
        let union = self.area() + o.area() - inter;
        if union <= 0.0 {
            0.0
        } else {
            inter / union
        }
    }
}

const ANGLE_EPS: f64 = 1e-9;

/// Pose loss treating `(theta, phi)` as a rectangle's width and height.
///
/// No angular wraparound: `theta = 359` and `theta = 1` are far apart here.
pub fn angle_iou_loss(prd: &PoseAngles, trt: &PoseAngles) -> Result<f64> {
    for a in [prd.theta, prd.phi, trt.theta, trt.phi] {
        if a.is_nan() || a < 0.0 {
            return Err(Error::NegativeAngle(a));
        }
    }
    let area_p = prd.theta * prd.phi;
    let area_t = trt.theta * trt.phi;
    if area_p == 0.0 && area_t == 0.0 {
        return Ok(0.0);
    }
    let inter = prd.theta.min(trt.theta) * prd.phi.min(trt.phi);
    Ok(1.0 - inter / (area_p + area_t - inter + ANGLE_EPS))
}

/// `1 - GIoU`, in `[0, 2)`.
pub fn giou_loss(a: &NormBox, b: &NormBox) -> f64 {
    let inter = a.intersection_area(b);
    let union = a.area() + b.area() - inter;
    let hull = (a.x_max.max(b.x_max) - a.x_min.min(b.x_min))
        * (a.y_max.max(b.y_max) - a.y_min.min(b.y_min));
    if hull <= 0.0 {
        return 0.0;
    }
    let iou = if union > 0.0 { inter / union } else { 0.0 };
    let giou = iou - (hull - union) / hull;
    1.0 - giou
}

pub fn l1_loss(prd: f64, trt: f64) -> f64 {
    (prd - trt).abs()
}

/// `-log softmax(logits)[target]`, computed with the log-sum-exp shift.
pub fn cross_entropy(logits: &[f64], target: usize) -> Result<f64> {
    if target >= logits.len() {
        return Err(Error::ClassOutOfRange {
            index: target,
            classes: logits.len(),
        });
    }
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = m + logits.iter().map(|&z| (z - m).exp()).sum::<f64>().ln();
    Ok((lse - logits[target]).max(0.0))
}

/// Mean squared error over pixels and channels, with channels scaled to `[0, 1]`.
pub fn mse_pixels(a: &RgbImage, b: &RgbImage) -> Result<f64> {
    if a.dimensions() != b.dimensions() {
        return Err(Error::DimensionMismatch(format!(
            "{:?} vs {:?}",
            a.dimensions(),
            b.dimensions()
        )));
    }
    let n = a.as_raw().len();
    if n == 0 {
        return Ok(0.0);
    }
    let sum: f64 = a
        .as_raw()
        .iter()
        .zip(b.as_raw())
        .map(|(&x, &y)| {
            let d = (f64::from(x) - f64::from(y)) / 255.0;
            d * d
        })
        .sum();
    Ok(sum / n as f64)
}
