//! Emission-absorption volume rendering of a [`VoxelScene`].
//!
//! Each ray is cut into a fixed lattice of steps `[t_enter + k * delta, t_enter + (k + 1) * delta)`,
//! where `t_enter` is the entry into the scene cube. A step is further split
//! where the ray crosses a voxel plane and every piece is sampled at its
//! midpoint with its own length, so the piecewise-constant field is integrated
//! without aliasing at silhouette edges. Empty-space skipping only drops steps
//! outside the occupied segments, so it yields exactly the same floating-point
//! result as marching every step.

use image::RgbImage;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{pose_from_viewpoint, CameraPose, Intrinsics, Ray, Viewpoint};
use crate::scene::{Interpolation, VoxelScene};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RenderConfig {
    pub samples_per_unit: f64,
    pub background: [f64; 3],
    pub width: u32,
    pub height: u32,
    pub focal: f64,
}

impl Default for RenderConfig {
    fn default() -> Self {
        Self {
            samples_per_unit: 128.0,
            background: [1.0; 3],
            width: 64,
            height: 64,
            focal: 64.0,
        }
    }
}

impl RenderConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.samples_per_unit.is_finite() && self.samples_per_unit >= 8.0) {
            return Err(Error::InvalidConfig(format!(
                "samples_per_unit {} must be >= 8",
                self.samples_per_unit
            )));
        }
        if self.width < 8 || self.height < 8 {
            return Err(Error::InvalidConfig(format!(
                "image {}x{} must be at least 8x8",
                self.width, self.height
            )));
        }
        if !self.background.iter().all(|c| (0.0..=1.0).contains(c)) {
            return Err(Error::InvalidConfig(format!(
                "background {:?} outside [0, 1]",
                self.background
            )));
        }
        Intrinsics::new(self.focal, self.width, self.height)?;
        Ok(())
    }

    pub fn intrinsics(&self) -> Intrinsics {
        Intrinsics {
            focal: self.focal,
            width: self.width,
            height: self.height,
        }
    }
}

#[derive(Debug, Clone)]
pub struct RenderedImage {
    pub pixels: RgbImage,
    pub viewpoint: Viewpoint,
    pub pose: CameraPose,
}

/// How lattice samples along a ray are chosen.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Marching {
    /// Only samples inside occupied coarse cells.
    #[default]
    Skipping,
    /// Every sample between cube entry and exit.
    Dense,
}

/// Result of integrating one ray, before quantization.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RayIntegral {
    pub color: [f64; 3],
    /// Sum of the sample weights.
    pub weight_sum: f64,
    /// Remaining transmittance, i.e. the background weight.
    pub transmittance: f64,
}

const MIN_TRANSMITTANCE: f64 = 1e-12;

pub fn integrate_ray(
    scene: &VoxelScene,
    ray: &Ray,
    cfg: &RenderConfig,
    marching: Marching,
) -> RayIntegral {
    let delta = 1.0 / cfg.samples_per_unit;
    let mut acc = [0.0f64; 3];
    let mut weight_sum = 0.0f64;
    let mut transmittance = 1.0f64;

    if let Some((t_enter, t_exit)) = scene.cube_span(ray) {
        let last = (((t_exit - t_enter) / delta).ceil() as i64 - 1).max(-1);
        let segments = match marching {
            Marching::Dense => vec![(t_enter, t_exit)],
            Marching::Skipping => scene.occupied_segments(ray),
        };
        let faces = FaceGrid::new(scene, ray);
        let mut cuts = Vec::new();
        let mut next_k = 0i64;
        'segments: for (lo, hi) in segments {
            let k0 = (((lo - t_enter) / delta).floor() as i64).max(next_k);
            let k1 = (((hi - t_enter) / delta).ceil() as i64 - 1).min(last);
            next_k = next_k.max(k1 + 1);
            for k in k0..=k1 {
                let a = t_enter + k as f64 * delta;
                let b = (t_enter + (k + 1) as f64 * delta).min(t_exit);
                faces.cuts(a, b, &mut cuts);
                for w in cuts.windows(2) {
                    let len = w[1] - w[0];
                    if len <= 0.0 {
                        continue;
                    }
                    let (sigma, color) = scene.query(&ray.at(0.5 * (w[0] + w[1])));
                    if sigma <= 0.0 {
                        continue;
                    }
                    let alpha = 1.0 - (-sigma * len).exp();
                    let wt = transmittance * alpha;
                    for c in 0..3 {
                        acc[c] += wt * color[c];
                    }
                    weight_sum += wt;
                    transmittance *= 1.0 - alpha;
                    if transmittance < MIN_TRANSMITTANCE {
                        break 'segments;
                    }
                }
            }
        }
    }

    let mut color = [0.0; 3];
    for c in 0..3 {
        color[c] = acc[c] + transmittance * cfg.background[c];
    }
    RayIntegral {
        color,
        weight_sum,
        transmittance,
    }
}

/// Planes where the looked-up field changes along a ray: fine voxel faces
/// for nearest lookup, voxel centers for trilinear.
struct FaceGrid {
    /// Per axis: origin and direction in grid units, or `None` when parallel.
    axes: [Option<(f64, f64)>; 3],
}

impl FaceGrid {
    fn new(scene: &VoxelScene, ray: &Ray) -> Self {
        let h = scene.voxel_size();
        let offset = match scene.interpolation() {
            Interpolation::Nearest => 0.0,
            Interpolation::Trilinear => 0.5,
        };
        let axes = std::array::from_fn(|i| {
            let d = ray.direction[i] / h;
            (d != 0.0).then(|| ((ray.origin[i] + scene.bounds()) / h - offset, d))
        });
        Self { axes }
    }

    /// Fills `out` with `a`, every plane crossing inside `(a, b)`, and `b`, sorted.
    fn cuts(&self, a: f64, b: f64, out: &mut Vec<f64>) {
        out.clear();
        out.push(a);
        for &(o, d) in self.axes.iter().flatten() {
            let (ua, ub) = (o + d * a, o + d * b);
            let (lo, hi) = if ua < ub { (ua, ub) } else { (ub, ua) };
            let mut m = lo.floor() + 1.0;
            while m < hi {
                let t = (m - o) / d;
                if t > a && t < b {
                    out.push(t);
                }
                m += 1.0;
            }
        }
        out.push(b);
        out.sort_unstable_by(f64::total_cmp);
    }
}

/// Round-half-up to 8 bits.
pub fn quantize(v: f64) -> u8 {
    (v * 255.0 + 0.5).floor().clamp(0.0, 255.0) as u8
}

pub fn render(scene: &VoxelScene, pose: &CameraPose, cfg: &RenderConfig) -> RgbImage {
    render_with(scene, pose, cfg, Marching::Skipping)
}

pub fn render_with(
    scene: &VoxelScene,
    pose: &CameraPose,
    cfg: &RenderConfig,
    marching: Marching,
) -> RgbImage {
    let (w, h) = (pose.intrinsics.width, pose.intrinsics.height);
    let mut data = vec![0u8; (w * h * 3) as usize];
    data.par_chunks_mut((w * 3) as usize)
        .enumerate()
        .for_each(|(py, row)| {
            for px in 0..w {
                let ray = pose.ray_for_pixel(px, py as u32);
                let r = integrate_ray(scene, &ray, cfg, marching);
                let o = (px * 3) as usize;
                for c in 0..3 {
                    row[o + c] = quantize(r.color[c]);
                }
            }
        });
    RgbImage::from_raw(w, h, data).expect("buffer sized to image")
}

pub fn render_viewpoint(scene: &VoxelScene, v: &Viewpoint, cfg: &RenderConfig) -> RenderedImage {
    let pose = pose_from_viewpoint(v, cfg.intrinsics());
    RenderedImage {
        pixels: render(scene, &pose, cfg),
        viewpoint: *v,
        pose,
    }
}

/// Renders every viewpoint, preserving input order.
pub fn render_set(
    scene: &VoxelScene,
    viewpoints: &[Viewpoint],
    cfg: &RenderConfig,
) -> Result<Vec<RenderedImage>> {
    if viewpoints.is_empty() {
        return Err(Error::EmptyInput("viewpoints"));
    }
    cfg.validate()?;
    Ok(viewpoints
        .par_iter()
        .map(|v| render_viewpoint(scene, v, cfg))
        .collect())
}
