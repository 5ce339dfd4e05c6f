//! In-plane augmentation and cut-and-fuse composites onto background images.
//!
//! All randomness comes from `ChaCha8Rng` seeded by the caller. Composite sample
//! `i` uses stream `i` of the seed, so a sample does not depend on how many
//! others were drawn or in what order they were computed.

use image::{Rgb, RgbImage};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::Viewpoint;
use crate::imgproc::{self, PixelBox};
use crate::labelgen::Annotation;
use crate::render::RenderedImage;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AugmentSpec {
    /// Maximum shift as a fraction of the image size, in both directions.
    pub shift_range: f64,
    pub scale_range: [f64; 2],
    pub background_color_random: bool,
    /// Fraction of the image's max gray level below which a pixel is object.
    pub object_threshold_factor: f64,
    pub seed: u64,
}

impl Default for AugmentSpec {
    fn default() -> Self {
        Self {
            shift_range: 0.25,
            scale_range: [0.5, 1.5],
            background_color_random: false,
            object_threshold_factor: 0.9,
            seed: 0,
        }
    }
}

impl AugmentSpec {
    pub fn validate(&self) -> Result<()> {
        let [lo, hi] = self.scale_range;
        if !(lo > 0.0 && lo <= hi && hi.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "scale_range {:?} needs 0 < min <= max",
                self.scale_range
            )));
        }
        if !(self.shift_range.is_finite() && self.shift_range >= 0.0) {
            return Err(Error::InvalidConfig(format!(
                "shift_range {} must be >= 0",
                self.shift_range
            )));
        }
        if !(self.object_threshold_factor > 0.0 && self.object_threshold_factor < 1.0) {
            return Err(Error::InvalidConfig(format!(
                "object_threshold_factor {} must lie in (0, 1)",
                self.object_threshold_factor
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CompositeSample {
    pub image: RgbImage,
    pub bbox: PixelBox,
    /// Traceability only; composites carry no pose label.
    pub source_viewpoint: Viewpoint,
    pub source_index: usize,
    pub background_index: usize,
}

/// Scale about the image center followed by a shift, in pixels.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InPlaneTransform {
    pub dx: f64,
    pub dy: f64,
    pub scale: f64,
    /// Replaces the solid background, when set.
    pub background: Option<[u8; 3]>,
}

impl InPlaneTransform {
    pub fn identity() -> Self {
        Self {
            dx: 0.0,
            dy: 0.0,
            scale: 1.0,
            background: None,
        }
    }

    /// Forward map of a continuous x coordinate in an image of width `w`.
    pub fn map_x(&self, x: f64, w: u32) -> f64 {
        let c = f64::from(w) / 2.0;
        self.scale * (x - c) + c + self.dx
    }

    pub fn map_y(&self, y: f64, h: u32) -> f64 {
        let c = f64::from(h) / 2.0;
        self.scale * (y - c) + c + self.dy
    }

    fn unmap_x(&self, x: f64, w: u32) -> f64 {
        let c = f64::from(w) / 2.0;
        (x - c - self.dx) / self.scale + c
    }

    fn unmap_y(&self, y: f64, h: u32) -> f64 {
        let c = f64::from(h) / 2.0;
        (y - c - self.dy) / self.scale + c
    }

    /// Maps the box's pixel footprint and clips it to the image.
    pub fn map_box(&self, b: &PixelBox, w: u32, h: u32) -> Result<PixelBox> {
        let left = self.map_x(f64::from(b.x_min), w);
        let right = self.map_x(f64::from(b.x_max) + 1.0, w);
        let top = self.map_y(f64::from(b.y_min), h);
        let bottom = self.map_y(f64::from(b.y_max) + 1.0, h);
        let clip = |lo: f64, hi: f64, n: u32| -> Option<(u32, u32)> {
            let a = lo.floor().max(0.0);
            let z = (hi.ceil() - 1.0).min(f64::from(n) - 1.0);
            (a <= z).then_some((a as u32, z as u32))
        };
        let (x_min, x_max) = clip(left, right, w).ok_or(Error::DegenerateBox)?;
        let (y_min, y_max) = clip(top, bottom, h).ok_or(Error::DegenerateBox)?;
        PixelBox::new(x_min, y_min, x_max, y_max)
    }
}

/// Object pixels: gray closed with a 3x3 kernel, darker than
/// `round(factor * max_gray)`.
pub fn object_mask(img: &RgbImage, factor: f64) -> Vec<bool> {
    let gray = imgproc::gray(img);
    let t = imgproc::relative_threshold(factor, imgproc::max_value(&gray));
    let closed = imgproc::close(&gray, 3).expect("odd kernel");
    closed.as_raw().iter().map(|&v| v < t).collect()
}

/// Applies a fixed in-plane transform to an annotated image.
pub fn augment_with(
    img: &RenderedImage,
    ann: &Annotation,
    t: &InPlaneTransform,
    object_threshold_factor: f64,
) -> Result<CompositeSample> {
    let b = ann.bbox.filter(|_| ann.valid).ok_or(Error::DegenerateBox)?;
    let src = &img.pixels;
    let (w, h) = src.dimensions();
    let bbox = t.map_box(&b, w, h)?;
    let mask = t
        .background
        .map(|_| object_mask(src, object_threshold_factor));
    let fill = t.background.unwrap_or([255; 3]);

    let out = RgbImage::from_fn(w, h, |u, v| {
        let sx = t.unmap_x(f64::from(u) + 0.5, w).floor();
        let sy = t.unmap_y(f64::from(v) + 0.5, h).floor();
        if sx < 0.0 || sy < 0.0 || sx >= f64::from(w) || sy >= f64::from(h) {
            return Rgb(fill);
        }
        let (sx, sy) = (sx as u32, sy as u32);
        match &mask {
            Some(m) if !m[(sy * w + sx) as usize] => Rgb(fill),
            _ => *src.get_pixel(sx, sy),
        }
    });
    Ok(CompositeSample {
        image: out,
        bbox,
        source_viewpoint: img.viewpoint,
        source_index: 0,
        background_index: 0,
    })
}

/// Draws a seeded shift, scale and optional background color, then applies it.
/// A fully clipped box is reported as `Error::DegenerateBox`.
pub fn augment_simple(
    img: &RenderedImage,
    ann: &Annotation,
    spec: &AugmentSpec,
) -> Result<CompositeSample> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let t = draw_transform(&mut rng, spec, img.pixels.width(), img.pixels.height());
    augment_with(img, ann, &t, spec.object_threshold_factor)
}

fn draw_transform(rng: &mut ChaCha8Rng, spec: &AugmentSpec, w: u32, h: u32) -> InPlaneTransform {
    let s = spec.shift_range;
    let dx = if s > 0.0 { rng.gen_range(-s..=s) * f64::from(w) } else { 0.0 };
    let dy = if s > 0.0 { rng.gen_range(-s..=s) * f64::from(h) } else { 0.0 };
    let [lo, hi] = spec.scale_range;
    let scale = if hi > lo { rng.gen_range(lo..=hi) } else { lo };
    let background = spec.background_color_random.then(|| rng.gen::<[u8; 3]>());
    InPlaneTransform {
        dx,
        dy,
        scale,
        background,
    }
}

/// A cut-out patch with its object mask (row-major, patch-sized).
#[derive(Debug, Clone, PartialEq)]
pub struct Rect {
    pub patch: RgbImage,
    pub mask: Vec<bool>,
}

impl Rect {
    pub fn width(&self) -> u32 {
        self.patch.width()
    }

    pub fn height(&self) -> u32 {
        self.patch.height()
    }
}

/// Copies the box region and marks its object pixels.
pub fn cut_rect(img: &RgbImage, b: &PixelBox, object_threshold_factor: f64) -> Result<Rect> {
    if !b.fits(img.width(), img.height()) {
        return Err(Error::PlacementOutOfBounds(format!(
            "box {:?} outside {}x{} image",
            b.to_array(),
            img.width(),
            img.height()
        )));
    }
    let full = object_mask(img, object_threshold_factor);
    let patch = image::imageops::crop_imm(img, b.x_min, b.y_min, b.width(), b.height()).to_image();
    let mask = (b.y_min..=b.y_max)
        .flat_map(|y| (b.x_min..=b.x_max).map(move |x| (x, y)))
        .map(|(x, y)| full[(y * img.width() + x) as usize])
        .collect();
    Ok(Rect { patch, mask })
}

/// Where a rect lands on a background: top-left pixel and scale.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Placement {
    pub x: i64,
    pub y: i64,
    pub scale: f64,
}

impl Placement {
    pub fn scaled_size(&self, rect: &Rect) -> (u32, u32) {
        let sw = (f64::from(rect.width()) * self.scale).round().max(1.0) as u32;
        let sh = (f64::from(rect.height()) * self.scale).round().max(1.0) as u32;
        (sw, sh)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Fused {
    pub image: RgbImage,
    /// Tight box of the placed mask; `None` when the mask is empty.
    pub bbox: Option<PixelBox>,
}

/// Mask-gated overwrite of the (nearest-neighbour scaled) rect onto the background.
pub fn fuse(rect: &Rect, background: &RgbImage, placement: &Placement) -> Result<Fused> {
    if !(placement.scale.is_finite() && placement.scale > 0.0) {
        return Err(Error::PlacementOutOfBounds(format!(
            "scale {} must be > 0",
            placement.scale
        )));
    }
    let (sw, sh) = placement.scaled_size(rect);
    let (bw, bh) = background.dimensions();
    if placement.x < 0
        || placement.y < 0
        || placement.x + i64::from(sw) > i64::from(bw)
        || placement.y + i64::from(sh) > i64::from(bh)
    {
        return Err(Error::PlacementOutOfBounds(format!(
            "{sw}x{sh} rect at ({}, {}) on {bw}x{bh} background",
            placement.x, placement.y
        )));
    }
    let (ox, oy) = (placement.x as u32, placement.y as u32);
    let mut image = background.clone();
    let mut bbox: Option<PixelBox> = None;
    for v in 0..sh {
        let sy = ((f64::from(v) + 0.5) / placement.scale).floor().min(f64::from(rect.height() - 1)) as u32;
        for u in 0..sw {
            let sx = ((f64::from(u) + 0.5) / placement.scale).floor().min(f64::from(rect.width() - 1)) as u32;
            if !rect.mask[(sy * rect.width() + sx) as usize] {
                continue;
            }
            let (x, y) = (ox + u, oy + v);
            image.put_pixel(x, y, *rect.patch.get_pixel(sx, sy));
            bbox = Some(match bbox {
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
    }
    Ok(Fused { image, bbox })
}

#[derive(Debug, Clone, PartialEq)]
pub struct CheckingSet {
    pub samples: Vec<CompositeSample>,
    /// Sample slots abandoned after exhausting placement attempts.
    pub skipped: usize,
}

const PLACEMENT_ATTEMPTS: usize = 16;

/// Draws `n` composites of annotated renders over backgrounds.
pub fn synthesize_checking_set(
    sources: &[(&RenderedImage, &Annotation)],
    backgrounds: &[RgbImage],
    n: usize,
    spec: &AugmentSpec,
) -> Result<CheckingSet> {
    spec.validate()?;
    if n == 0 {
        return Ok(CheckingSet {
            samples: Vec::new(),
            skipped: 0,
        });
    }
    if backgrounds.is_empty() {
        return Err(Error::EmptyInput("backgrounds"));
    }
    let rects: Vec<(usize, Rect)> = sources
        .par_iter()
        .enumerate()
        .filter_map(|(i, (img, ann))| {
            let b = ann.bbox.filter(|_| ann.valid)?;
            cut_rect(&img.pixels, &b, spec.object_threshold_factor)
                .ok()
                .map(|r| (i, r))
        })
        .collect();
    if rects.is_empty() {
        return Err(Error::EmptyInput("valid annotations"));
    }

    let drawn: Vec<Option<CompositeSample>> = (0..n)
        .into_par_iter()
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
            rng.set_stream(i as u64);
            for _ in 0..PLACEMENT_ATTEMPTS {
                let (src_index, rect) = &rects[rng.gen_range(0..rects.len())];
                let bg_index = rng.gen_range(0..backgrounds.len());
                let bg = &backgrounds[bg_index];
                let [lo, hi] = spec.scale_range;
                let scale = if hi > lo { rng.gen_range(lo..=hi) } else { lo };
                let probe = Placement { x: 0, y: 0, scale };
                let (sw, sh) = probe.scaled_size(rect);
                if sw > bg.width() || sh > bg.height() {
                    continue;
                }
                let placement = Placement {
                    x: i64::from(rng.gen_range(0..=bg.width() - sw)),
                    y: i64::from(rng.gen_range(0..=bg.height() - sh)),
                    scale,
                };
                let Ok(fused) = fuse(rect, bg, &placement) else {
                    continue;
                };
                if let Some(bbox) = fused.bbox {
                    return Some(CompositeSample {
                        image: fused.image,
                        bbox,
                        source_viewpoint: sources[*src_index].0.viewpoint,
                        source_index: *src_index,
                        background_index: bg_index,
                    });
                }
            }
            None
        })
        .collect();

    let skipped = drawn.iter().filter(|s| s.is_none()).count();
    Ok(CheckingSet {
        samples: drawn.into_iter().flatten().collect(),
        skipped,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{pose_from_viewpoint, Intrinsics};

    fn render_fixture() -> (RenderedImage, Annotation) {
        let mut img = RgbImage::from_pixel(32, 32, Rgb([255; 3]));
        for y in 10..20 {
            for x in 8..24 {
                img.put_pixel(x, y, Rgb([200, 30, 30]));
            }
        }
        let v = Viewpoint::new(10.0, 20.0, 4.0).unwrap();
        let ann = Annotation {
            viewpoint: v,
            bbox: Some(PixelBox::new(8, 10, 23, 19).unwrap()),
            valid: true,
            kernel_used: Some(3),
        };
        (
            RenderedImage {
                pixels: img,
                viewpoint: v,
                pose: pose_from_viewpoint(&v, Intrinsics::new(32.0, 32, 32).unwrap()),
            },
            ann,
        )
    }

    fn textured_background(w: u32, h: u32) -> RgbImage {
        RgbImage::from_fn(w, h, |x, y| Rgb([(x * 7 % 256) as u8, (y * 5 % 256) as u8, ((x + y) % 256) as u8]))
    }

    #[test]
    fn identity_transform_is_a_no_op() {
        let (img, ann) = render_fixture();
        let spec = AugmentSpec {
            shift_range: 0.0,
            scale_range: [1.0, 1.0],
            ..AugmentSpec::default()
        };
        let out = augment_simple(&img, &ann, &spec).unwrap();
        assert_eq!(out.image, img.pixels);
        assert_eq!(Some(out.bbox), ann.bbox);
    }

    #[test]
    fn scale_two_about_center() {
        let (img, ann) = render_fixture();
        let t = InPlaneTransform {
            scale: 2.0,
            ..InPlaneTransform::identity()
        };
        let out = augment_with(&img, &ann, &t, 0.9).unwrap();
        // x' = 2 (x - 16) + 16: [8, 24) -> [0, 32), [10, 20) -> [4, 24)
        assert_eq!(out.bbox, PixelBox::new(0, 4, 31, 23).unwrap());
        // the image agrees with the box: object pixels sit inside it only
        let gray = imgproc::gray(&out.image);
        let drawn = imgproc::bbox(&imgproc::binarize(&gray, 230)).unwrap();
        assert_eq!(drawn, out.bbox);
    }

    #[test]
    fn shifted_box_matches_image() {
        let (img, ann) = render_fixture();
        for (dx, dy, s) in [(3.0, -2.0, 1.0), (-5.5, 4.25, 0.75), (2.0, 1.0, 1.3)] {
            let t = InPlaneTransform {
                dx,
                dy,
                scale: s,
                background: None,
            };
            let out = augment_with(&img, &ann, &t, 0.9).unwrap();
            let drawn = imgproc::bbox(&imgproc::binarize(&imgproc::gray(&out.image), 230)).unwrap();
            for (a, b) in drawn.to_array().iter().zip(out.bbox.to_array()) {
                assert!(a.abs_diff(b) <= 1, "{drawn:?} vs {:?}", out.bbox);
            }
        }
    }

    #[test]
    fn fully_clipped_box_is_rejected() {
        let (img, ann) = render_fixture();
        let t = InPlaneTransform {
            dx: 40.0,
            ..InPlaneTransform::identity()
        };
        assert_eq!(augment_with(&img, &ann, &t, 0.9).unwrap_err(), Error::DegenerateBox);
    }

    #[test]
    fn random_background_is_seeded() {
        let (img, ann) = render_fixture();
        let spec = AugmentSpec {
            background_color_random: true,
            seed: 42,
            ..AugmentSpec::default()
        };
        let a = augment_simple(&img, &ann, &spec).unwrap();
        let b = augment_simple(&img, &ann, &spec).unwrap();
        assert_eq!(a, b);
        let corner = a.image.get_pixel(0, 0).0;
        assert_ne!(corner, [255; 3]);
        let c = augment_simple(&img, &ann, &AugmentSpec { seed: 43, ..spec }).unwrap();
        assert_ne!(a.image, c.image);
    }

    #[test]
    fn cut_rect_masks() {
        let (img, ann) = render_fixture();
        let white = cut_rect(&img.pixels, &PixelBox::new(0, 0, 5, 5).unwrap(), 0.9).unwrap();
        assert!(white.mask.iter().all(|m| !m));
        let r = cut_rect(&img.pixels, &ann.bbox.unwrap(), 0.9).unwrap();
        assert_eq!((r.width(), r.height()), (16, 10));
        assert!(r.mask.iter().all(|&m| m));
        assert!(cut_rect(&img.pixels, &PixelBox::new(0, 0, 40, 3).unwrap(), 0.9).is_err());
    }

    #[test]
    fn cut_then_paste_in_place_is_identity() {
        let (img, ann) = render_fixture();
        let b = PixelBox::new(4, 6, 27, 25).unwrap();
        let r = cut_rect(&img.pixels, &b, 0.9).unwrap();
        let fused = fuse(&r, &img.pixels, &Placement { x: 4, y: 6, scale: 1.0 }).unwrap();
        assert_eq!(fused.image, img.pixels);
        assert_eq!(fused.bbox, ann.bbox);
    }

    #[test]
    fn empty_mask_leaves_background_untouched() {
        let bg = textured_background(40, 30);
        let rect = Rect {
            patch: RgbImage::from_pixel(6, 5, Rgb([1, 2, 3])),
            mask: vec![false; 30],
        };
        let fused = fuse(&rect, &bg, &Placement { x: 3, y: 4, scale: 1.5 }).unwrap();
        assert_eq!(fused.image, bg);
        assert_eq!(fused.bbox, None);
    }

    #[test]
    fn full_mask_replaces_region() {
        let bg = textured_background(40, 30);
        let patch = RgbImage::from_fn(6, 5, |x, y| Rgb([x as u8, y as u8, 9]));
        let rect = Rect {
            patch: patch.clone(),
            mask: vec![true; 30],
        };
        let fused = fuse(&rect, &bg, &Placement { x: 10, y: 20, scale: 1.0 }).unwrap();
        for (x, y, p) in fused.image.enumerate_pixels() {
            let inside = (10..16).contains(&x) && (20..25).contains(&y);
            if inside {
                assert_eq!(*p, *patch.get_pixel(x - 10, y - 20));
            } else {
                assert_eq!(p, bg.get_pixel(x, y));
            }
        }
        assert_eq!(fused.bbox, Some(PixelBox::new(10, 20, 15, 24).unwrap()));
    }

    #[test]
    fn fused_box_is_translated_mask_box() {
        let bg = textured_background(50, 50);
        let mut mask = vec![false; 8 * 6];
        for (x, y) in [(2, 1), (5, 4), (3, 3)] {
            mask[y * 8 + x] = true;
        }
        let rect = Rect {
            patch: RgbImage::from_pixel(8, 6, Rgb([0; 3])),
            mask,
        };
        let fused = fuse(&rect, &bg, &Placement { x: 17, y: 30, scale: 1.0 }).unwrap();
        // pixel-scan oracle over the mask
        assert_eq!(fused.bbox, Some(PixelBox::new(19, 31, 22, 34).unwrap()));
        assert!(fuse(&rect, &bg, &Placement { x: 45, y: 0, scale: 1.0 }).is_err());
        assert!(fuse(&rect, &bg, &Placement { x: -1, y: 0, scale: 1.0 }).is_err());
    }

    #[test]
    fn checking_set_is_deterministic_and_valid() {
        let (img, ann) = render_fixture();
        let bgs = vec![textured_background(64, 48), textured_background(40, 40)];
        let spec = AugmentSpec {
            seed: 5,
            ..AugmentSpec::default()
        };
        let sources = [(&img, &ann)];
        assert!(synthesize_checking_set(&sources, &bgs, 0, &spec)
            .unwrap()
            .samples
            .is_empty());
        let a = synthesize_checking_set(&sources, &bgs, 40, &spec).unwrap();
        let b = synthesize_checking_set(&sources, &bgs, 40, &spec).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.samples.len() + a.skipped, 40);
        for s in &a.samples {
            assert!(s.bbox.fits(s.image.width(), s.image.height()));
        }
        // sample i does not depend on n
        let c = synthesize_checking_set(&sources, &bgs, 10, &spec).unwrap();
        assert_eq!(&a.samples[..c.samples.len()], &c.samples[..]);
        assert!(synthesize_checking_set(&sources, &[], 3, &spec).is_err());
    }
}
