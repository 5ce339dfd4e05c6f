//! Detection and pose evaluation, plus a nearest-rendered-view baseline.
//!
//! mAP is single-class AP at IoU 0.5 with all-point interpolation. Pose error
//! pairs each image's top-confidence detection with its ground-truth pose;
//! theta error is circular.

use image::RgbImage;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imgproc;
use crate::labelgen::Annotation;
use crate::losses::{NormBox, PoseAngles};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub bbox: NormBox,
    pub confidence: f64,
    pub pose: PoseAngles,
}

/// Ground truth for one image; `bbox` is absent when the image has no usable box.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub bbox: Option<NormBox>,
    pub pose: PoseAngles,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub map_50: f64,
    /// Degrees.
    pub ave_theta: f64,
    /// Degrees.
    pub ave_phi: f64,
    /// Scene units.
    pub ave_gamma: f64,
    pub n_images: usize,
    /// Images without any detection, left out of the pose averages.
    pub n_excluded: usize,
}

/// Area under the all-point interpolated precision/recall curve.
///
/// Detections are ranked by confidence across all images; each one greedily
/// claims the unmatched ground truth of its image with the highest IoU, if that
/// IoU reaches `iou_threshold`. Tied confidences are scored as one step of the
/// curve, so the result does not depend on image order.
pub fn average_precision(
    detections: &[Vec<Detection>],
    ground_truths: &[Vec<NormBox>],
    iou_threshold: f64,
) -> Result<f64> {
    if detections.len() != ground_truths.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} detection lists for {} images",
            detections.len(),
            ground_truths.len()
        )));
    }
    let n_gt: usize = ground_truths.iter().map(Vec::len).sum();
    if n_gt == 0 {
        return Err(Error::UndefinedAp);
    }
    let mut ranked: Vec<(f64, usize, usize)> = detections
        .iter()
        .enumerate()
        .flat_map(|(img, ds)| ds.iter().enumerate().map(move |(k, d)| (d.confidence, img, k)))
        .collect();
    if let Some(bad) = ranked.iter().find(|r| !r.0.is_finite()) {
        return Err(Error::InvalidConfig(format!("confidence {} not finite", bad.0)));
    }
    ranked.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));

    let mut claimed: Vec<Vec<bool>> = ground_truths.iter().map(|g| vec![false; g.len()]).collect();
    let mut tp = 0usize;
    let mut fp = 0usize;
    let mut curve: Vec<(f64, f64)> = Vec::new();
    for (i, &(conf, img, k)) in ranked.iter().enumerate() {
        let det = &detections[img][k].bbox;
        let best = ground_truths[img]
            .iter()
            .enumerate()
            .filter(|(g, _)| !claimed[img][*g])
            .map(|(g, gt)| (g, det.iou(gt)))
            .filter(|&(_, iou)| iou >= iou_threshold)
            .max_by(|a, b| a.1.total_cmp(&b.1).then(b.0.cmp(&a.0)));
        match best {
            Some((g, _)) => {
                claimed[img][g] = true;
                tp += 1;
            }
            None => fp += 1,
        }
        let group_ends = ranked.get(i + 1).is_none_or(|next| next.0 != conf);
        if group_ends {
            curve.push((tp as f64 / n_gt as f64, tp as f64 / (tp + fp) as f64));
        }
    }

    Ok(interpolated_area(&curve))
}

/// All-point interpolation over `(recall, precision)` points in ranking order.
fn interpolated_area(curve: &[(f64, f64)]) -> f64 {
    let mut envelope: Vec<f64> = curve.iter().map(|p| p.1).collect();
    for i in (0..envelope.len().saturating_sub(1)).rev() {
        envelope[i] = envelope[i].max(envelope[i + 1]);
    }
    let mut prev_recall = 0.0;
    let mut ap = 0.0;
    for (&(recall, _), &p) in curve.iter().zip(&envelope) {
        ap += (recall - prev_recall) * p;
        prev_recall = recall;
    }
    ap
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AngularError {
    pub theta: f64,
    pub phi: f64,
    pub gamma: f64,
}

pub fn angular_error(prd: &PoseAngles, trt: &PoseAngles) -> AngularError {
    let dt = (prd.theta - trt.theta).abs().rem_euclid(360.0);
    AngularError {
        theta: dt.min(360.0 - dt),
        phi: (prd.phi - trt.phi).abs(),
        gamma: (prd.gamma - trt.gamma).abs(),
    }
}

fn order_free_mean(mut v: Vec<f64>) -> f64 {
    if v.is_empty() {
        return 0.0;
    }
    v.sort_by(f64::total_cmp);
    v.iter().sum::<f64>() / v.len() as f64
}

pub fn evaluate(predictions: &[Vec<Detection>], ground_truths: &[GroundTruth]) -> Result<EvalReport> {
    if ground_truths.is_empty() {
        return Err(Error::EmptyEvaluation);
    }
    if predictions.len() != ground_truths.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} prediction lists for {} images",
            predictions.len(),
            ground_truths.len()
        )));
    }
    let gt_boxes: Vec<Vec<NormBox>> = ground_truths
        .iter()
        .map(|g| g.bbox.into_iter().collect())
        .collect();
    let map_50 = average_precision(predictions, &gt_boxes, 0.5)?;

    let mut errs = (Vec::new(), Vec::new(), Vec::new());
    let mut n_excluded = 0;
    for (dets, gt) in predictions.iter().zip(ground_truths) {
        let top = dets
            .iter()
            .reduce(|best, d| if d.confidence > best.confidence { d } else { best });
        match top {
            Some(d) => {
                let e = angular_error(&d.pose, &gt.pose);
                errs.0.push(e.theta);
                errs.1.push(e.phi);
                errs.2.push(e.gamma);
            }
            None => n_excluded += 1,
        }
    }
    Ok(EvalReport {
        map_50,
        ave_theta: order_free_mean(errs.0),
        ave_phi: order_free_mean(errs.1),
        ave_gamma: order_free_mean(errs.2),
        n_images: ground_truths.len(),
        n_excluded,
    })
}

pub const THUMB_SIZE: u32 = 16;

/// 16x16 grayscale thumbnail by area averaging over the pixels whose
/// centers fall in each cell. Cells that receive no pixel take the nearest one.
pub fn thumbnail(img: &RgbImage) -> Vec<f64> {
    let gray = imgproc::gray(img);
    let (w, h) = gray.dimensions();
    let n = THUMB_SIZE as usize;
    let mut sum = vec![0.0f64; n * n];
    let mut count = vec![0u32; n * n];
    for (x, y, p) in gray.enumerate_pixels() {
        let bx = (u64::from(x) * u64::from(THUMB_SIZE) / u64::from(w)) as usize;
        let by = (u64::from(y) * u64::from(THUMB_SIZE) / u64::from(h)) as usize;
        sum[by * n + bx] += f64::from(p.0[0]);
        count[by * n + bx] += 1;
    }
    (0..n * n)
        .map(|i| {
            if count[i] > 0 {
                sum[i] / f64::from(count[i])
            } else {
                let (bx, by) = ((i % n) as f64, (i / n) as f64);
                let sx = ((bx + 0.5) * f64::from(w) / f64::from(THUMB_SIZE)) as u32;
                let sy = ((by + 0.5) * f64::from(h) / f64::from(THUMB_SIZE)) as u32;
                f64::from(gray.get_pixel(sx.min(w - 1), sy.min(h - 1)).0[0])
            }
        })
        .collect()
}

#[derive(Debug, Clone)]
struct GalleryEntry {
    index: usize,
    thumb: Vec<f64>,
    bbox: NormBox,
    pose: PoseAngles,
}

/// Annotated renders searchable by thumbnail distance. Invalid annotations are
/// left out.
#[derive(Debug, Clone)]
pub struct Gallery {
    entries: Vec<GalleryEntry>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Match {
    pub detection: Detection,
    /// Index into the list the gallery was built from.
    pub gallery_index: usize,
    pub distance: f64,
}

impl Gallery {
    pub fn new(items: &[(&RgbImage, &Annotation)]) -> Result<Self> {
        let entries: Vec<GalleryEntry> = items
            .par_iter()
            .enumerate()
            .filter_map(|(index, (img, ann))| {
                let b = ann.bbox.filter(|_| ann.valid)?;
                Some(GalleryEntry {
                    index,
                    thumb: thumbnail(img),
                    bbox: NormBox::from_pixels(&b, img.width(), img.height()),
                    pose: ann.viewpoint.into(),
                })
            })
            .collect();
        if entries.is_empty() {
            return Err(Error::EmptyGallery);
        }
        Ok(Self { entries })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Closest entry by L2 thumbnail distance; ties go to the lowest index.
    pub fn nearest(&self, query: &RgbImage) -> Match {
        let q = thumbnail(query);
        let pixel_count = q.len() as f64;
        let (distance, slot) = self
            .entries
            .par_iter()
            .enumerate()
            .map(|(slot, e)| {
                let d2: f64 = e.thumb.iter().zip(&q).map(|(a, b)| (a - b) * (a - b)).sum();
                (d2.sqrt(), slot)
            })
            .reduce(
                || (f64::INFINITY, usize::MAX),
                |a, b| if b.0 < a.0 || (b.0 == a.0 && b.1 < a.1) { b } else { a },
            );
        let e = &self.entries[slot];
        Match {
            detection: Detection {
                bbox: e.bbox,
                confidence: 1.0 / (1.0 + distance / pixel_count),
                pose: e.pose,
            },
            gallery_index: e.index,
            distance,
        }
    }
}

/// Baseline estimator: the pose and box of the most similar gallery render.
pub fn nearest_view_estimate(query: &RgbImage, gallery: &Gallery) -> Detection {
    gallery.nearest(query).detection
}
