//! Stratified depth samples along a ray, parameterized by signed distance ℓ
//! from the ray's point of closest approach to the scene origin.

use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::camera::Ray;
use crate::math::Vec3;

pub const DEFAULT_NEAR: f64 = -1.0;
pub const DEFAULT_FAR: f64 = 1.0;
pub const TRAINING_BINS: usize = 96;
pub const REFINEMENT_BINS: usize = 128;

/// Depths ℓ_1 < … < ℓ_n, one per uniform bin of [near, far], and the step
/// lengths Δℓ_i = ℓ_{i+1} − ℓ_i with Δℓ_n = far − ℓ_n.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RaySamples {
    pub origin: Vec3,
    pub direction: Vec3,
    pub near: f64,
    pub far: f64,
    pub depths: Vec<f64>,
    pub deltas: Vec<f64>,
}

/// Re-anchors a camera ray at its closest point to the origin. Returns the new
/// origin o' and the camera-ray distance s of o', so that t = s + ℓ.
pub fn centered_ray(ray: &Ray) -> (Vec3, f64) {
    let s = -ray.origin.dot(&ray.direction);
    (ray.origin + ray.direction * s, s)
}

impl RaySamples {
    /// One sample per bin at relative offset `jitter(i)` ∈ [0, 1) inside bin i.
    pub fn stratified(
        origin: Vec3,
        direction: Vec3,
        near: f64,
        far: f64,
        bins: usize,
        mut jitter: impl FnMut(usize) -> f64,
    ) -> Self {
        let width = (far - near) / bins as f64;
        let depths: Vec<f64> = (0..bins)
            .map(|i| near + (i as f64 + jitter(i).clamp(0.0, 1.0 - f64::EPSILON)) * width)
            .collect();
        let deltas = (0..bins)
            .map(|i| {
                if i + 1 < bins {
                    depths[i + 1] - depths[i]
                } else {
                    far - depths[i]
                }
            })
            .collect();
        RaySamples {
            origin,
            direction,
            near,
            far,
            depths,
            deltas,
        }
    }

    /// Bin-start samples with equal steps.
    pub fn uniform(origin: Vec3, direction: Vec3, near: f64, far: f64, bins: usize) -> Self {
        RaySamples::stratified(origin, direction, near, far, bins, |_| 0.0)
    }

    pub fn len(&self) -> usize {
        self.depths.len()
    }

    pub fn is_empty(&self) -> bool {
        self.depths.is_empty()
    }

    pub fn point(&self, i: usize) -> Vec3 {
        self.origin + self.direction * self.depths[i]
    }
}

/// Counter-based uniform variate in [0, 1) from (seed, a, b).
pub fn hash_uniform(seed: u64, a: u64, b: u64) -> f64 {
    let mut z = seed
        ^ a.wrapping_mul(0x9E37_79B9_7F4A_7C15)
        ^ b.wrapping_mul(0xC2B2_AE3D_27D4_EB4F).rotate_left(31);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^= z >> 31;
    (z >> 11) as f64 / (1u64 << 53) as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn one_sample_per_bin_in_order() {
        let s = RaySamples::stratified(Vec3::zeros(), Vec3::z(), -1.0, 1.0, 16, |i| {
            hash_uniform(3, 0, i as u64)
        });
        for i in 0..16 {
            let lo = -1.0 + i as f64 / 8.0;
            assert!(s.depths[i] >= lo && s.depths[i] < lo + 0.125);
        }
        let total: f64 = s.deltas.iter().sum();
        assert!((total - (1.0 - s.depths[0])).abs() < 1e-12);
    }

    #[test]
    fn centered_origin_is_closest_point() {
        let ray = Ray {
            origin: Vec3::new(0.3, 0.2, 3.0),
            direction: Vec3::new(0.1, -0.05, -1.0).normalize(),
        };
        let (o, s) = centered_ray(&ray);
        assert!(o.dot(&ray.direction).abs() < 1e-12);
        assert!((ray.at(s) - o).norm() < 1e-12);
    }
}
