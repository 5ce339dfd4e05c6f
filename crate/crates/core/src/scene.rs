//! Procedural primitives baked into a two-level voxel cache.
//!
//! The coarse level is a dense grid of occupancy flags and per-cell maximum
//! density over the cube `[-bounds, bounds]^3`. Each occupied coarse cell owns a
//! fine brick of `fine_res^3` voxels. Voxels store a material id that indexes the
//! baked primitive list, which keeps bricks at two bytes per voxel.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Ray, Vec3};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Axis {
    X,
    Y,
    Z,
}

impl Axis {
    fn index(self) -> usize {
        match self {
            Axis::X => 0,
            Axis::Y => 1,
            Axis::Z => 2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Shape {
    Box { half_extents: [f64; 3] },
    Sphere { radius: f64 },
    /// Capped cylinder; `half_height` runs along `axis`.
    Cylinder {
        radius: f64,
        half_height: f64,
        axis: Axis,
    },
}

impl Shape {
    pub fn name(&self) -> &'static str {
        match self {
            Shape::Box { .. } => "box",
            Shape::Sphere { .. } => "sphere",
            Shape::Cylinder { .. } => "cylinder",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Primitive {
    pub shape: Shape,
    pub center: [f64; 3],
    /// Linear RGB in `[0, 1]`.
    pub color: [f64; 3],
    /// Extinction per scene unit.
    pub density: f64,
}

impl Primitive {
    pub fn validate(&self) -> Result<()> {
        let extents_ok = match self.shape {
            Shape::Box { half_extents } => half_extents.iter().all(|&e| e > 0.0 && e.is_finite()),
            Shape::Sphere { radius } => radius > 0.0 && radius.is_finite(),
            Shape::Cylinder {
                radius,
                half_height,
                ..
            } => radius > 0.0 && half_height > 0.0 && radius.is_finite() && half_height.is_finite(),
        };
        if !extents_ok {
            return Err(Error::InvalidPrimitive(format!(
                "{} extents must be positive and finite",
                self.shape.name()
            )));
        }
        if !(self.density.is_finite() && self.density >= 0.0) {
            return Err(Error::InvalidPrimitive(format!(
                "density {} must be finite and >= 0",
                self.density
            )));
        }
        if !self.center.iter().all(|c| c.is_finite()) {
            return Err(Error::InvalidPrimitive("center must be finite".into()));
        }
        if !self.color.iter().all(|c| (0.0..=1.0).contains(c)) {
            return Err(Error::InvalidPrimitive(format!(
                "color {:?} outside [0, 1]",
                self.color
            )));
        }
        Ok(())
    }

    fn center(&self) -> Vec3 {
        Vec3::from(self.center)
    }

    pub fn contains(&self, p: &Vec3) -> bool {
        let d = p - self.center();
        match self.shape {
            Shape::Box { half_extents } => (0..3).all(|i| d[i].abs() <= half_extents[i]),
            Shape::Sphere { radius } => d.norm_squared() <= radius * radius,
            Shape::Cylinder {
                radius,
                half_height,
                axis,
            } => {
                let a = axis.index();
                let radial: f64 = (0..3).filter(|&i| i != a).map(|i| d[i] * d[i]).sum();
                d[a].abs() <= half_height && radial <= radius * radius
            }
        }
    }

    /// Axis-aligned bounding box `(min, max)`.
    pub fn aabb(&self) -> (Vec3, Vec3) {
        let half = match self.shape {
            Shape::Box { half_extents } => Vec3::from(half_extents),
            Shape::Sphere { radius } => Vec3::repeat(radius),
            Shape::Cylinder {
                radius,
                half_height,
                axis,
            } => {
                let mut h = Vec3::repeat(radius);
                h[axis.index()] = half_height;
                h
            }
        };
        (self.center() - half, self.center() + half)
    }

    /// Upper bound on the distance from the origin to any point of the primitive.
    pub fn reach(&self) -> f64 {
        let c = self.center();
        match self.shape {
            Shape::Box { half_extents } => (0..3)
                .map(|i| (c[i].abs() + half_extents[i]).powi(2))
                .sum::<f64>()
                .sqrt(),
            Shape::Sphere { radius } => c.norm() + radius,
            Shape::Cylinder {
                radius,
                half_height,
                axis,
            } => {
                let a = axis.index();
                let radial = (0..3)
                    .filter(|&i| i != a)
                    .map(|i| c[i] * c[i])
                    .sum::<f64>()
                    .sqrt();
                ((c[a].abs() + half_height).powi(2) + (radial + radius).powi(2)).sqrt()
            }
        }
    }

    /// Exact entry/exit parameters of a ray through the solid, clipped to `t >= 0`.
    pub fn intersect_ray(&self, ray: &Ray) -> Option<(f64, f64)> {
        let o = ray.origin - self.center();
        let d = ray.direction;
        let (t0, t1) = match self.shape {
            Shape::Box { half_extents } => slab(&o, &d, &Vec3::from(half_extents))?,
            Shape::Sphere { radius } => {
                let b = o.dot(&d);
                let c = o.norm_squared() - radius * radius;
                let disc = b * b - c;
                if disc < 0.0 {
                    return None;
                }
                let s = disc.sqrt();
                (-b - s, -b + s)
            }
            Shape::Cylinder {
                radius,
                half_height,
                axis,
            } => {
                let a = axis.index();
                // axial slab
                let (mut lo, mut hi) = if d[a].abs() < 1e-300 {
                    if o[a].abs() > half_height {
                        return None;
                    }
                    (f64::NEG_INFINITY, f64::INFINITY)
                } else {
                    let ta = (-half_height - o[a]) / d[a];
                    let tb = (half_height - o[a]) / d[a];
                    (ta.min(tb), ta.max(tb))
                };
                // radial quadratic in the plane orthogonal to the axis
                let (i, j) = match a {
                    0 => (1, 2),
                    1 => (0, 2),
                    _ => (0, 1),
                };
                let qa = d[i] * d[i] + d[j] * d[j];
                let qb = o[i] * d[i] + o[j] * d[j];
                let qc = o[i] * o[i] + o[j] * o[j] - radius * radius;
                if qa < 1e-300 {
                    if qc > 0.0 {
                        return None;
                    }
                } else {
                    let disc = qb * qb - qa * qc;
                    if disc < 0.0 {
                        return None;
                    }
                    let s = disc.sqrt();
                    lo = lo.max((-qb - s) / qa);
                    hi = hi.min((-qb + s) / qa);
                }
                (lo, hi)
            }
        };
        let t0 = t0.max(0.0);
        (t0 <= t1).then_some((t0, t1))
    }
}

/// Slab test against the box `[-half, half]` for a ray with origin `o`.
fn slab(o: &Vec3, d: &Vec3, half: &Vec3) -> Option<(f64, f64)> {
    let mut lo = f64::NEG_INFINITY;
    let mut hi = f64::INFINITY;
    for i in 0..3 {
        if d[i].abs() < 1e-300 {
            if o[i].abs() > half[i] {
                return None;
            }
            continue;
        }
        let ta = (-half[i] - o[i]) / d[i];
        let tb = (half[i] - o[i]) / d[i];
        lo = lo.max(ta.min(tb));
        hi = hi.min(ta.max(tb));
    }
    (lo <= hi).then_some((lo, hi))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Interpolation {
    #[default]
    Nearest,
    Trilinear,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BakeConfig {
    pub coarse_res: usize,
    pub fine_res: usize,
    /// Half-width of the baked cube.
    pub bounds: f64,
    pub interpolation: Interpolation,
}

impl Default for BakeConfig {
    fn default() -> Self {
        Self {
            coarse_res: 64,
            fine_res: 8,
            bounds: 1.0,
            interpolation: Interpolation::Nearest,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Material {
    sigma: f64,
    color: [f64; 3],
}

const EMPTY_BRICK: u32 = u32::MAX;

#[derive(Debug, Clone)]
pub struct VoxelScene {
    bounds: f64,
    coarse_res: usize,
    fine_res: usize,
    interpolation: Interpolation,
    coarse_max_density: Vec<f32>,
    brick_of_cell: Vec<u32>,
    /// Material ids; 0 is empty space, `k` is `materials[k - 1]`.
    bricks: Vec<u16>,
    materials: Vec<Material>,
}

/// Bakes a primitive union into a voxel cache.
///
/// Each fine voxel center takes the density and color of the densest primitive
/// containing it; ties go to the earlier primitive.
pub fn bake(primitives: &[Primitive], cfg: &BakeConfig) -> Result<VoxelScene> {
    if primitives.is_empty() {
        return Err(Error::EmptyInput("primitives"));
    }
    if primitives.len() >= usize::from(u16::MAX) {
        return Err(Error::InvalidConfig(format!(
            "at most {} primitives supported",
            u16::MAX - 1
        )));
    }
    if cfg.coarse_res < 2 || cfg.fine_res < 2 {
        return Err(Error::InvalidConfig(format!(
            "resolutions must be >= 2 (coarse {}, fine {})",
            cfg.coarse_res, cfg.fine_res
        )));
    }
    if !(cfg.bounds.is_finite() && cfg.bounds > 0.0) {
        return Err(Error::InvalidConfig(format!(
            "bounds {} must be > 0",
            cfg.bounds
        )));
    }
    for (index, p) in primitives.iter().enumerate() {
        p.validate()?;
        let reach = p.reach();
        if reach >= cfg.bounds {
            return Err(Error::PrimitiveOutOfBounds {
                index,
                shape: p.shape.name().to_string(),
                reach,
                bounds: cfg.bounds,
            });
        }
    }

    let materials: Vec<Material> = primitives
        .iter()
        .map(|p| Material {
            sigma: p.density,
            color: p.color,
        })
        .collect();
    let aabbs: Vec<(Vec3, Vec3)> = primitives.iter().map(Primitive::aabb).collect();

    let cr = cfg.coarse_res;
    let fr = cfg.fine_res;
    let cell = 2.0 * cfg.bounds / cr as f64;
    let voxel = cell / fr as f64;
    let fine_total = cr * fr;

    let cells: Vec<Option<Vec<u16>>> = (0..cr * cr * cr)
        .into_par_iter()
        .map(|ci| {
            let (cx, cy, cz) = (ci % cr, (ci / cr) % cr, ci / (cr * cr));
            let lo = Vec3::new(cx as f64, cy as f64, cz as f64) * cell - Vec3::repeat(cfg.bounds);
            let hi = lo + Vec3::repeat(cell);
            let candidates: Vec<usize> = aabbs
                .iter()
                .enumerate()
                .filter(|(k, (amin, amax))| {
                    primitives[*k].density > 0.0
                        && (0..3).all(|i| amin[i] <= hi[i] && amax[i] >= lo[i])
                })
                .map(|(k, _)| k)
                .collect();
            if candidates.is_empty() {
                return None;
            }
            let mut brick = vec![0u16; fr * fr * fr];
            let mut any = false;
            for (fi, slot) in brick.iter_mut().enumerate() {
                let gx = cx * fr + fi % fr;
                let gy = cy * fr + (fi / fr) % fr;
                let gz = cz * fr + fi / (fr * fr);
                let p = voxel_center(gx, gy, gz, voxel, cfg.bounds);
                let mut best: Option<usize> = None;
                for &k in &candidates {
                    if primitives[k].contains(&p)
                        && best.is_none_or(|b| primitives[k].density > primitives[b].density)
                    {
                        best = Some(k);
                    }
                }
                if let Some(k) = best {
                    *slot = (k + 1) as u16;
                    any = true;
                }
            }
            debug_assert!(fine_total == cr * fr);
            any.then_some(brick)
        })
        .collect();

    let mut coarse_max_density = vec![0f32; cr * cr * cr];
    let mut brick_of_cell = vec![EMPTY_BRICK; cr * cr * cr];
    let mut bricks = Vec::new();
    let mut n_bricks = 0u32;
    for (ci, brick) in cells.into_iter().enumerate() {
        if let Some(brick) = brick {
            coarse_max_density[ci] = brick
                .iter()
                .filter(|&&m| m != 0)
                .map(|&m| materials[usize::from(m) - 1].sigma as f32)
                .fold(0.0, f32::max);
            brick_of_cell[ci] = n_bricks;
            n_bricks += 1;
            bricks.extend_from_slice(&brick);
        }
    }

    Ok(VoxelScene {
        bounds: cfg.bounds,
        coarse_res: cr,
        fine_res: fr,
        interpolation: cfg.interpolation,
        coarse_max_density,
        brick_of_cell,
        bricks,
        materials,
    })
}

fn voxel_center(gx: usize, gy: usize, gz: usize, voxel: f64, bounds: f64) -> Vec3 {
    Vec3::new(
        (gx as f64 + 0.5) * voxel - bounds,
        (gy as f64 + 0.5) * voxel - bounds,
        (gz as f64 + 0.5) * voxel - bounds,
    )
}

impl VoxelScene {
    /// A scene with no content, for background-only renders.
    pub fn empty(bounds: f64) -> Self {
        Self {
            bounds,
            coarse_res: 2,
            fine_res: 2,
            interpolation: Interpolation::Nearest,
            coarse_max_density: vec![0.0; 8],
            brick_of_cell: vec![EMPTY_BRICK; 8],
            bricks: Vec::new(),
            materials: Vec::new(),
        }
    }

    pub fn bounds(&self) -> f64 {
        self.bounds
    }

    pub fn coarse_res(&self) -> usize {
        self.coarse_res
    }

    pub fn fine_res(&self) -> usize {
        self.fine_res
    }

    pub fn interpolation(&self) -> Interpolation {
        self.interpolation
    }

    pub fn set_interpolation(&mut self, interpolation: Interpolation) {
        self.interpolation = interpolation;
    }

    /// Edge length of one fine voxel.
    pub fn voxel_size(&self) -> f64 {
        2.0 * self.bounds / (self.coarse_res * self.fine_res) as f64
    }

    pub fn cell_size(&self) -> f64 {
        2.0 * self.bounds / self.coarse_res as f64
    }

    pub fn occupied_cell_count(&self) -> usize {
        self.brick_of_cell
            .iter()
            .filter(|&&b| b != EMPTY_BRICK)
            .count()
    }

    pub fn is_cell_occupied(&self, cx: usize, cy: usize, cz: usize) -> bool {
        self.brick_of_cell[self.cell_index(cx, cy, cz)] != EMPTY_BRICK
    }

    pub fn coarse_max_density(&self, cx: usize, cy: usize, cz: usize) -> f64 {
        f64::from(self.coarse_max_density[self.cell_index(cx, cy, cz)])
    }

    fn cell_index(&self, cx: usize, cy: usize, cz: usize) -> usize {
        (cz * self.coarse_res + cy) * self.coarse_res + cx
    }

    /// Coarse cell containing `x`, if inside the cube.
    pub fn cell_of(&self, x: &Vec3) -> Option<(usize, usize, usize)> {
        let [gx, gy, gz] = self.fine_index_of(x)?;
        let f = self.fine_res;
        Some((gx / f, gy / f, gz / f))
    }

    fn fine_index_of(&self, x: &Vec3) -> Option<[usize; 3]> {
        let b = self.bounds;
        if x.iter().any(|c| !c.is_finite() || c.abs() > b) {
            return None;
        }
        let n = self.coarse_res * self.fine_res;
        let h = self.voxel_size();
        let idx = |c: f64| (((c + b) / h).floor().max(0.0) as usize).min(n - 1);
        Some([idx(x.x), idx(x.y), idx(x.z)])
    }

    /// Material at a global fine voxel index; consults the coarse level first.
    fn material_at(&self, gx: usize, gy: usize, gz: usize) -> Option<&Material> {
        let f = self.fine_res;
        let brick = self.brick_of_cell[self.cell_index(gx / f, gy / f, gz / f)];
        if brick == EMPTY_BRICK {
            return None;
        }
        let local = ((gz % f) * f + (gy % f)) * f + (gx % f);
        let id = self.bricks[brick as usize * f * f * f + local];
        (id != 0).then(|| &self.materials[usize::from(id) - 1])
    }

    /// Density and color at `x`. Outside the cube the answer is `(0, black)`.
    pub fn query(&self, x: &Vec3) -> (f64, [f64; 3]) {
        match self.interpolation {
            Interpolation::Nearest => self.query_nearest(x),
            Interpolation::Trilinear => self.query_trilinear(x),
        }
    }

    pub fn query_nearest(&self, x: &Vec3) -> (f64, [f64; 3]) {
        match self.fine_index_of(x) {
            Some([gx, gy, gz]) => self
                .material_at(gx, gy, gz)
                .map_or((0.0, [0.0; 3]), |m| (m.sigma, m.color)),
            None => (0.0, [0.0; 3]),
        }
    }

    /// Trilinear density; color is density-weighted over the eight neighbours.
    pub fn query_trilinear(&self, x: &Vec3) -> (f64, [f64; 3]) {
        let b = self.bounds;
        if x.iter().any(|c| !c.is_finite() || c.abs() > b) {
            return (0.0, [0.0; 3]);
        }
        let h = self.voxel_size();
        let n = (self.coarse_res * self.fine_res) as i64;
        let u = (x + Vec3::repeat(b)) / h - Vec3::repeat(0.5);
        let base = u.map(f64::floor);
        let frac = u - base;
        let mut sigma = 0.0;
        let mut color = [0.0; 3];
        for corner in 0..8 {
            let off = [corner & 1, (corner >> 1) & 1, (corner >> 2) & 1];
            let mut w = 1.0;
            let mut g = [0usize; 3];
            let mut inside = true;
            for a in 0..3 {
                let i = base[a] as i64 + off[a] as i64;
                w *= if off[a] == 1 { frac[a] } else { 1.0 - frac[a] };
                if i < 0 || i >= n {
                    inside = false;
                } else {
                    g[a] = i as usize;
                }
            }
            if !inside || w == 0.0 {
                continue;
            }
            if let Some(m) = self.material_at(g[0], g[1], g[2]) {
                sigma += w * m.sigma;
                for (c, mc) in color.iter_mut().zip(m.color) {
                    *c += w * m.sigma * mc;
                }
            }
        }
        if sigma > 0.0 {
            for c in &mut color {
                *c /= sigma;
            }
        }
        (sigma, color)
    }

    /// Entry and exit of the ray through the bounding cube, clipped to `t >= 0`.
    pub fn cube_span(&self, ray: &Ray) -> Option<(f64, f64)> {
        let (t0, t1) = slab(&ray.origin, &ray.direction, &Vec3::repeat(self.bounds))?;
        let t0 = t0.max(0.0);
        (t0 < t1).then_some((t0, t1))
    }

    /// Parameter intervals where the ray crosses occupied coarse cells.
    ///
    /// Intervals are padded by one fine voxel on both sides so that every
    /// sample with nonzero density lies inside the union, under either lookup
    /// mode. The result is sorted and non-overlapping.
    pub fn occupied_segments(&self, ray: &Ray) -> Vec<(f64, f64)> {
        let Some((t_enter, t_exit)) = self.cube_span(ray) else {
            return Vec::new();
        };
        let n = self.coarse_res;
        let cell = self.cell_size();
        let b = self.bounds;
        let o = ray.origin;
        let d = ray.direction;

        let start = ray.at(t_enter);
        let mut idx = [0i64; 3];
        let mut step = [0i64; 3];
        let mut t_max = [f64::INFINITY; 3];
        let mut t_delta = [f64::INFINITY; 3];
        for a in 0..3 {
            idx[a] = (((start[a] + b) / cell).floor() as i64).clamp(0, n as i64 - 1);
            if d[a] > 0.0 {
                step[a] = 1;
                t_max[a] = (-b + (idx[a] + 1) as f64 * cell - o[a]) / d[a];
                t_delta[a] = cell / d[a];
            } else if d[a] < 0.0 {
                step[a] = -1;
                t_max[a] = (-b + idx[a] as f64 * cell - o[a]) / d[a];
                t_delta[a] = -cell / d[a];
            }
        }

        let mut raw: Vec<(f64, f64)> = Vec::new();
        let mut t_cur = t_enter;
        for _ in 0..(3 * n + 3) {
            let axis = (0..3)
                .min_by(|&i, &j| t_max[i].total_cmp(&t_max[j]))
                .unwrap_or(0);
            let t_next = t_max[axis].min(t_exit).max(t_cur);
            if self.is_cell_occupied(idx[0] as usize, idx[1] as usize, idx[2] as usize) {
                match raw.last_mut() {
                    Some(last) if last.1 >= t_cur => last.1 = t_next,
                    _ => raw.push((t_cur, t_next)),
                }
            }
            t_cur = t_next;
            if t_cur >= t_exit {
                break;
            }
            idx[axis] += step[axis];
            if idx[axis] < 0 || idx[axis] >= n as i64 {
                break;
            }
            t_max[axis] += t_delta[axis];
        }

        let pad = self.voxel_size();
        let mut out: Vec<(f64, f64)> = Vec::with_capacity(raw.len());
        for (lo, hi) in raw {
            let lo = (lo - pad).max(0.0);
            let hi = hi + pad;
            match out.last_mut() {
                Some(last) if lo <= last.1 => last.1 = last.1.max(hi),
                _ => out.push((lo, hi)),
            }
        }
        out
    }
}

/// The canonical fixture: a toy locomotive of boxes and cylinders, about 1.5
/// units long, centred on the origin with every part inside the unit sphere.
pub fn toy_locomotive() -> Vec<Primitive> {
    let wheel = |x: f64| Primitive {
        shape: Shape::Cylinder {
            radius: 0.13,
            half_height: 0.24,
            axis: Axis::Y,
        },
        center: [x, 0.0, -0.24],
        color: [0.08, 0.08, 0.08],
        density: 400.0,
    };
    vec![
        // chassis
        Primitive {
            shape: Shape::Box {
                half_extents: [0.62, 0.22, 0.07],
            },
            center: [0.0, 0.0, -0.12],
            color: [0.25, 0.25, 0.3],
            density: 400.0,
        },
        // boiler
        Primitive {
            shape: Shape::Cylinder {
                radius: 0.17,
                half_height: 0.34,
                axis: Axis::X,
            },
            center: [0.2, 0.0, 0.12],
            color: [0.75, 0.1, 0.1],
            density: 400.0,
        },
        // cab
        Primitive {
            shape: Shape::Box {
                half_extents: [0.2, 0.22, 0.22],
            },
            center: [-0.38, 0.0, 0.12],
            color: [0.15, 0.3, 0.7],
            density: 400.0,
        },
        // chimney
        Primitive {
            shape: Shape::Cylinder {
                radius: 0.09,
                half_height: 0.1,
                axis: Axis::Z,
            },
            center: [0.4, 0.0, 0.34],
            color: [0.2, 0.2, 0.2],
            density: 400.0,
        },
        wheel(0.4),
        wheel(0.0),
        wheel(-0.4),
    ]
}
