//! Spherical camera parameterization and pinhole ray generation.
//!
//! World frame: +z up. A viewpoint `(theta, phi, gamma)` places the camera at
//! `gamma * (cos phi cos theta, cos phi sin theta, sin phi)` looking at the origin.
//! Camera frame columns are `(right, down, forward)`, so `det = +1` and pixel
//! rows grow downward in the image.

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Vec3 = Vector3<f64>;

/// Spherical camera pose label in degrees / scene units.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Viewpoint {
    theta: f64,
    phi: f64,
    gamma: f64,
}

impl Viewpoint {
    /// `theta` is wrapped into `[0, 360)`. `phi` outside `[0, 90]` and non-positive
    /// `gamma` are rejected.
    pub fn new(theta: f64, phi: f64, gamma: f64) -> Result<Self> {
        if !theta.is_finite() || !phi.is_finite() || !gamma.is_finite() {
            return Err(Error::InvalidViewpoint(format!(
                "non-finite component ({theta}, {phi}, {gamma})"
            )));
        }
        if !(0.0..=90.0).contains(&phi) {
            return Err(Error::InvalidViewpoint(format!(
                "elevation {phi} outside [0, 90]"
            )));
        }
        if gamma <= 0.0 {
            return Err(Error::InvalidViewpoint(format!("radius {gamma} must be > 0")));
        }
        Ok(Self {
            theta: normalize_degrees(theta),
            phi,
            gamma,
        })
    }

    pub fn theta(&self) -> f64 {
        self.theta
    }

    pub fn phi(&self) -> f64 {
        self.phi
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }
}

/// Wraps an angle into `[0, 360)`.
pub fn normalize_degrees(deg: f64) -> f64 {
    let wrapped = deg.rem_euclid(360.0);
    // rem_euclid of a tiny negative value rounds up to exactly 360.0
    if wrapped >= 360.0 {
        0.0
    } else {
        wrapped
    }
}

/// Pinhole intrinsics with a single focal length in pixels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Intrinsics {
    pub focal: f64,
    pub width: u32,
    pub height: u32,
}

impl Default for Intrinsics {
    fn default() -> Self {
        Self {
            focal: 64.0,
            width: 64,
            height: 64,
        }
    }
}

impl Intrinsics {
    pub fn new(focal: f64, width: u32, height: u32) -> Result<Self> {
        if !(focal.is_finite() && focal > 0.0) || width == 0 || height == 0 {
            return Err(Error::InvalidConfig(format!(
                "intrinsics must be positive (focal {focal}, {width}x{height})"
            )));
        }
        Ok(Self {
            focal,
            width,
            height,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CameraPose {
    pub position: Vec3,
    /// Camera-to-world rotation; columns are the right, down and forward axes.
    pub rotation: Matrix3<f64>,
    pub intrinsics: Intrinsics,
}

impl CameraPose {
    pub fn right(&self) -> Vec3 {
        self.rotation.column(0).into_owned()
    }

    pub fn down(&self) -> Vec3 {
        self.rotation.column(1).into_owned()
    }

    pub fn forward(&self) -> Vec3 {
        self.rotation.column(2).into_owned()
    }

    /// Ray through the center of pixel `(px, py)`.
    ///
    /// The principal point sits on the center of pixel `(width / 2, height / 2)`,
    /// so that pixel's ray is exactly the forward axis.
    pub fn ray_for_pixel(&self, px: u32, py: u32) -> Ray {
        let k = &self.intrinsics;
        let x = (f64::from(px) - f64::from(k.width / 2)) / k.focal;
        let y = (f64::from(py) - f64::from(k.height / 2)) / k.focal;
        let dir = self.rotation * Vec3::new(x, y, 1.0);
        Ray::new(self.position, dir)
    }

    /// Projects a world point to continuous pixel coordinates, where pixel
    /// `(px, py)` covers `[px, px + 1) x [py, py + 1)`. `None` behind the camera.
    pub fn project(&self, point: &Vec3) -> Option<(f64, f64)> {
        let cam = self.rotation.transpose() * (point - self.position);
        if cam.z <= 0.0 {
            return None;
        }
        let k = &self.intrinsics;
        let u = k.focal * cam.x / cam.z + f64::from(k.width / 2) + 0.5;
        let v = k.focal * cam.y / cam.z + f64::from(k.height / 2) + 0.5;
        Some((u, v))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Ray {
    pub origin: Vec3,
    pub direction: Vec3,
}

impl Ray {
    /// Normalizes `direction`.
    pub fn new(origin: Vec3, direction: Vec3) -> Self {
        Self {
            origin,
            direction: direction.normalize(),
        }
    }

    pub fn at(&self, t: f64) -> Vec3 {
        self.origin + self.direction * t
    }
}

/// Roll-free look-at pose for a viewpoint. The image x axis is the azimuthal
/// tangent `(-sin θ, cos θ, 0)`, which stays defined on the pole, so top-down
/// views at different `theta` are in-plane rotations of each other.
pub fn pose_from_viewpoint(v: &Viewpoint, intrinsics: Intrinsics) -> CameraPose {
    let (st, ct) = v.theta.to_radians().sin_cos();
    let (sp, cp) = v.phi.to_radians().sin_cos();
    let position = Vec3::new(cp * ct, cp * st, sp) * v.gamma;
    let forward = -position.normalize();

    let right = Vec3::new(-st, ct, 0.0);
    let down = forward.cross(&right);

    CameraPose {
        position,
        rotation: Matrix3::from_columns(&[right, down, forward]),
        intrinsics,
    }
}

/// One ray per pixel, row-major (`index = py * width + px`).
pub fn rays_for_pose(pose: &CameraPose) -> Vec<Ray> {
    let k = pose.intrinsics;
    (0..k.height)
        .flat_map(|py| (0..k.width).map(move |px| pose.ray_for_pixel(px, py)))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn pose(theta: f64, phi: f64, gamma: f64) -> CameraPose {
        pose_from_viewpoint(
            &Viewpoint::new(theta, phi, gamma).unwrap(),
            Intrinsics::default(),
        )
    }

    fn assert_orthonormal(r: &Matrix3<f64>) {
        let gram = r.transpose() * r;
        assert_abs_diff_eq!(gram, Matrix3::identity(), epsilon = 1e-9);
        assert_abs_diff_eq!(r.determinant(), 1.0, epsilon = 1e-9);
    }

    #[test]
    fn viewpoint_normalizes_theta() {
        assert_eq!(Viewpoint::new(370.0, 0.0, 1.0).unwrap().theta(), 10.0);
        assert_eq!(Viewpoint::new(-90.0, 0.0, 1.0).unwrap().theta(), 270.0);
        assert_eq!(Viewpoint::new(-1e-20, 0.0, 1.0).unwrap().theta(), 0.0);
        assert_eq!(Viewpoint::new(360.0, 0.0, 1.0).unwrap().theta(), 0.0);
    }

    #[test]
    fn viewpoint_rejects_bad_phi_and_gamma() {
        assert!(Viewpoint::new(0.0, -0.1, 1.0).is_err());
        assert!(Viewpoint::new(0.0, 90.5, 1.0).is_err());
        assert!(Viewpoint::new(0.0, 90.0, 1.0).is_ok());
        assert!(Viewpoint::new(0.0, 10.0, 0.0).is_err());
        assert!(Viewpoint::new(f64::NAN, 10.0, 1.0).is_err());
    }

    #[test]
    fn axis_aligned_pose() {
        let p = pose(0.0, 0.0, 4.0);
        assert_abs_diff_eq!(p.position, Vec3::new(4.0, 0.0, 0.0), epsilon = 1e-12);
        assert_abs_diff_eq!(p.forward(), Vec3::new(-1.0, 0.0, 0.0), epsilon = 1e-12);
        // image "up" is world +z
        assert_abs_diff_eq!(p.down(), Vec3::new(0.0, 0.0, -1.0), epsilon = 1e-12);
        assert_orthonormal(&p.rotation);
    }

    #[test]
    fn quarter_turn_pose() {
        let p = pose(90.0, 0.0, 4.0);
        assert_abs_diff_eq!(p.position, Vec3::new(0.0, 4.0, 0.0), epsilon = 1e-12);
    }

    #[test]
    fn pole_frame_follows_theta() {
        let p = pose(0.0, 90.0, 2.0);
        assert_abs_diff_eq!(p.position, Vec3::new(0.0, 0.0, 2.0), epsilon = 1e-12);
        assert_abs_diff_eq!(p.forward(), Vec3::new(0.0, 0.0, -1.0), epsilon = 1e-12);
        assert_orthonormal(&p.rotation);
        let q = pose(90.0, 90.0, 2.0);
        assert_abs_diff_eq!(q.right(), Vec3::new(-1.0, 0.0, 0.0), epsilon = 1e-12);
        // limit of the off-pole frame
        let near = pose(90.0, 89.9999, 2.0);
        assert_abs_diff_eq!(near.right(), q.right(), epsilon = 1e-9);
    }

    #[test]
    fn center_pixel_ray_is_forward() {
        let p = pose(33.0, 21.0, 3.0);
        let k = p.intrinsics;
        let ray = p.ray_for_pixel(k.width / 2, k.height / 2);
        assert_abs_diff_eq!(ray.direction, p.forward(), epsilon = 1e-6);
    }

    #[test]
    fn ray_grid_count_and_origin() {
        let p = pose_from_viewpoint(
            &Viewpoint::new(10.0, 20.0, 3.0).unwrap(),
            Intrinsics::new(2.0, 2, 2).unwrap(),
        );
        let rays = rays_for_pose(&p);
        assert_eq!(rays.len(), 4);
        for r in &rays {
            assert_eq!(r.origin, p.position);
            assert_abs_diff_eq!(r.direction.norm(), 1.0, epsilon = 1e-9);
        }
    }

    #[test]
    fn projection_inverts_pixel_rays() {
        let p = pose(123.0, 40.0, 4.0);
        let ray = p.ray_for_pixel(10, 50);
        let (u, v) = p.project(&ray.at(3.0)).unwrap();
        assert_abs_diff_eq!(u, 10.5, epsilon = 1e-9);
        assert_abs_diff_eq!(v, 50.5, epsilon = 1e-9);
    }

    proptest! {
        #[test]
        fn pose_invariants(theta in -720.0f64..720.0, phi in 0.0f64..=90.0, gamma in 0.1f64..20.0) {
            let p = pose(theta, phi, gamma);
            prop_assert!((p.position.norm() - gamma).abs() < 1e-9);
            let gram = p.rotation.transpose() * p.rotation;
            prop_assert!((gram - Matrix3::identity()).abs().max() < 1e-9);
            prop_assert!((p.rotation.determinant() - 1.0).abs() < 1e-9);
            let look = (-p.position).normalize();
            prop_assert!((look - p.forward()).norm() < 1e-9);
        }

        #[test]
        fn theta_full_turns_give_identical_pose(theta in 0.0f64..360.0, phi in 0.0f64..=90.0, turns in -3i32..4) {
            let a = pose(theta, phi, 2.5);
            let b = pose(theta + 360.0 * f64::from(turns), phi, 2.5);
            prop_assert!((a.position - b.position).norm() < 1e-9);
            prop_assert!((a.rotation - b.rotation).abs().max() < 1e-9);
        }

        #[test]
        fn rays_are_unit(theta in 0.0f64..360.0, phi in 0.0f64..=90.0) {
            let p = pose_from_viewpoint(&Viewpoint::new(theta, phi, 3.0).unwrap(), Intrinsics::new(16.0, 16, 16).unwrap());
            for r in rays_for_pose(&p) {
                prop_assert!((r.direction.norm() - 1.0).abs() < 1e-9);
            }
        }
    }
}
