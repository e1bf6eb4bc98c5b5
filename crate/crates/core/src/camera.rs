//! Pinhole cameras orbiting the scene origin and the rays they emit.

#[allow(unused_imports)]
use num_traits::Float;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math::Vec3;

/// Radius of the ball that holds every scene point in canonical units.
pub const SCENE_RADIUS: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Ray {
    pub origin: Vec3,
    /// Unit length.
    pub direction: Vec3,
}

impl Ray {
    pub fn at(&self, t: f64) -> Vec3 {
        self.origin + self.direction * t
    }
}

/// Perspective camera. Pixel (row, col) has its center at
/// (col + 0.5, row + 0.5) in image coordinates with rows growing downward.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Camera {
    pub position: Vec3,
    pub target: Vec3,
    pub up: Vec3,
    /// Vertical field of view in degrees.
    pub fov_y_deg: f64,
    pub width: usize,
    pub height: usize,
}

/// Spherical placement around the origin. Azimuth 0 looks at the front
/// (+z side) of the model; positive azimuth moves the camera toward +x.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Orbit {
    pub azimuth_deg: f64,
    pub elevation_deg: f64,
    pub distance: f64,
}

impl Orbit {
    pub fn new(azimuth_deg: f64, elevation_deg: f64, distance: f64) -> Self {
        Orbit {
            azimuth_deg,
            elevation_deg,
            distance,
        }
    }

    pub fn position(&self) -> Vec3 {
        let (az, el) = (
            self.azimuth_deg.to_radians(),
            self.elevation_deg.to_radians(),
        );
        Vec3::new(el.cos() * az.sin(), el.sin(), el.cos() * az.cos()) * self.distance
    }

    pub fn camera(&self, fov_y_deg: f64, width: usize, height: usize) -> Camera {
        Camera {
            position: self.position(),
            target: Vec3::zeros(),
            up: Vec3::y(),
            fov_y_deg,
            width,
            height,
        }
    }
}

impl Camera {
    /// Rejects cameras inside the scene ball or with a degenerate frame.
    pub fn validate(&self) -> Result<()> {
        if self.width == 0 || self.height == 0 {
            return Err(Error::config("camera resolution must be positive"));
        }
        if !(self.fov_y_deg > 0.0 && self.fov_y_deg < 180.0) {
            return Err(Error::config(alloc::format!(
                "field of view {} outside (0, 180) degrees",
                self.fov_y_deg
            )));
        }
        if self.position.norm() <= SCENE_RADIUS {
            return Err(Error::config(alloc::format!(
                "camera at distance {:.4} is inside the scene bounds (radius {SCENE_RADIUS})",
                self.position.norm()
            )));
        }
        let f = self.target - self.position;
        if f.norm() == 0.0 || f.cross(&self.up).norm() < 1e-12 {
            return Err(Error::config(
                "camera forward and up vectors are degenerate",
            ));
        }
        Ok(())
    }

    /// Orthonormal (right, up, forward) frame.
    pub fn basis(&self) -> (Vec3, Vec3, Vec3) {
        let forward = (self.target - self.position).normalize();
        let right = forward.cross(&self.up).normalize();
        let up = right.cross(&forward);
        (right, up, forward)
    }

    fn tan_half(&self) -> f64 {
        (self.fov_y_deg.to_radians() * 0.5).tan()
    }

    /// Ray through image coordinates (x, y) measured in pixels.
    pub fn ray_through(&self, x: f64, y: f64) -> Ray {
        let (right, up, forward) = self.basis();
        let th = self.tan_half();
        let aspect = self.width as f64 / self.height as f64;
        let sx = (2.0 * x / self.width as f64 - 1.0) * th * aspect;
        let sy = (1.0 - 2.0 * y / self.height as f64) * th;
        Ray {
            origin: self.position,
            direction: (forward + right * sx + up * sy).normalize(),
        }
    }

    pub fn pixel_ray(&self, row: usize, col: usize) -> Ray {
        self.ray_through(col as f64 + 0.5, row as f64 + 0.5)
    }

    /// Image coordinates (x, y) and view depth of a world point, `None` when
    /// the point is behind the camera.
    pub fn project(&self, p: &Vec3) -> Option<(f64, f64, f64)> {
        let (right, up, forward) = self.basis();
        let rel = p - self.position;
        let z = rel.dot(&forward);
        if z <= 0.0 {
            return None;
        }
        let th = self.tan_half();
        let aspect = self.width as f64 / self.height as f64;
        let sx = rel.dot(&right) / z / (th * aspect);
        let sy = rel.dot(&up) / z / th;
        Some((
            (sx + 1.0) * 0.5 * self.width as f64,
            (1.0 - sy) * 0.5 * self.height as f64,
            z,
        ))
    }

    pub fn with_resolution(&self, width: usize, height: usize) -> Camera {
        Camera {
            width,
            height,
            ..*self
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn front_orbit_sits_on_positive_z() {
        let p = Orbit::new(0.0, 0.0, 3.0).position();
        assert!((p - Vec3::new(0.0, 0.0, 3.0)).norm() < 1e-15);
        let p = Orbit::new(90.0, 0.0, 2.0).position();
        assert!((p - Vec3::new(2.0, 0.0, 0.0)).norm() < 1e-12);
    }

    #[test]
    fn projection_inverts_pixel_rays() {
        let cam = Orbit::new(30.0, 15.0, 3.0).camera(40.0, 64, 48);
        let ray = cam.ray_through(10.25, 40.5);
        let (x, y, _) = cam.project(&ray.at(2.7)).unwrap();
        assert!((x - 10.25).abs() < 1e-9 && (y - 40.5).abs() < 1e-9);
    }

    #[test]
    fn camera_inside_scene_is_rejected() {
        let cam = Orbit::new(0.0, 0.0, 0.5).camera(40.0, 8, 8);
        assert!(matches!(cam.validate(), Err(Error::Config(_))));
    }
}
