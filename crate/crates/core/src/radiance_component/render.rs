//! Rendering a field over an image, optionally terminated at the mesh and
//! composited over a base image, with the parameter-gradient pass.

use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::canonical::CanonicalMap;
use super::field::{Field, TrainableField};
use super::sampling::{
    centered_ray, hash_uniform, RaySamples, DEFAULT_FAR, DEFAULT_NEAR, TRAINING_BINS,
};
use super::volume::{composite, composite_backward};
use crate::bvh::Bvh;
use crate::camera::Camera;
use crate::error::{Error, Result};
use crate::image::FeatureImage;
use crate::math::Vec3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RenderSettings {
    /// n_ℓ: samples on rays that miss the mesh; hits use n_ℓ − 1.
    pub bins: usize,
    pub near: f64,
    pub far: f64,
    /// Stratified jitter inside each bin; bin centers otherwise.
    pub jitter: bool,
    pub seed: u64,
}

impl Default for RenderSettings {
    fn default() -> Self {
        RenderSettings {
            bins: TRAINING_BINS,
            near: DEFAULT_NEAR,
            far: DEFAULT_FAR,
            jitter: true,
            seed: 0,
        }
    }
}

/// One pixel's ray re-anchored at its closest point to the origin, with the
/// ℓ of its first mesh hit.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PixelRay {
    pub origin: Vec3,
    pub direction: Vec3,
    pub hit: Option<f64>,
}

/// Per-pixel rays of one camera.
#[derive(Debug, Clone)]
pub struct ViewRays {
    pub width: usize,
    pub height: usize,
    pub rays: Vec<PixelRay>,
}

impl ViewRays {
    pub fn new(camera: &Camera, mesh: Option<&Bvh>) -> Result<Self> {
        camera.validate()?;
        let mut rays = Vec::with_capacity(camera.width * camera.height);
        for row in 0..camera.height {
            for col in 0..camera.width {
                let ray = camera.pixel_ray(row, col);
                let (origin, s) = centered_ray(&ray);
                let hit = mesh.and_then(|b| b.intersect_first(&ray)).map(|h| h.t - s);
                rays.push(PixelRay {
                    origin,
                    direction: ray.direction,
                    hit,
                });
            }
        }
        Ok(ViewRays {
            width: camera.width,
            height: camera.height,
            rays,
        })
    }

    pub fn hit_mask(&self) -> Vec<bool> {
        self.rays.iter().map(|r| r.hit.is_some()).collect()
    }
}

impl RenderSettings {
    pub fn validate(&self) -> Result<()> {
        if self.bins < 2 {
            return Err(Error::config("need at least 2 samples per ray"));
        }
        if !(self.near < self.far) {
            return Err(Error::config("near bound must be below far bound"));
        }
        Ok(())
    }

    /// Samples for one pixel, `None` when a hit lies at or before `near`.
    pub fn samples(&self, ray: &PixelRay, pixel: usize) -> Option<RaySamples> {
        let (far, bins) = match ray.hit {
            Some(h) => (h.min(self.far), self.bins - 1),
            None => (self.far, self.bins),
        };
        if far <= self.near {
            return None;
        }
        let seed = self.seed;
        let jitter = self.jitter;
        Some(RaySamples::stratified(
            ray.origin,
            ray.direction,
            self.near,
            far,
            bins,
            |i| {
                if jitter {
                    hash_uniform(seed, pixel as u64, i as u64)
                } else {
                    0.5
                }
            },
        ))
    }
}

/// Field evaluation point for one sample: canonical position and direction,
/// or `None` when the sample lies outside the canonical influence region.
fn sample_point(canonical: Option<&CanonicalMap>, x: &Vec3, d: &Vec3) -> Option<(Vec3, Vec3)> {
    match canonical {
        None => Some((*x, *d)),
        Some(map) => map.canonicalize(x).map(|c| {
            let dir = c.rotation * d;
            let n = dir.norm();
            (c.position, if n > 0.0 { dir / n } else { *d })
        }),
    }
}

/// Per-pixel samples of a forward render, reused by the backward pass.
#[derive(Debug, Clone)]
pub struct RenderCache {
    channels: usize,
    pixels: Vec<Option<PixelSamples>>,
}

#[derive(Debug, Clone)]
struct PixelSamples {
    sigmas: Vec<f64>,
    colors: Vec<f64>,
    deltas: Vec<f64>,
    points: Vec<Option<(Vec3, Vec3)>>,
}

fn evaluate(
    field: &dyn Field,
    canonical: Option<&CanonicalMap>,
    samples: &RaySamples,
) -> PixelSamples {
    let ch = field.channels();
    let n = samples.len();
    let mut sigmas = vec![0.0; n];
    let mut colors = vec![0.0; n * ch];
    let mut points = Vec::with_capacity(n);
    for i in 0..n {
        let p = sample_point(canonical, &samples.point(i), &samples.direction);
        if let Some((x, d)) = &p {
            sigmas[i] = field.query(x, d, &mut colors[i * ch..(i + 1) * ch]);
        }
        points.push(p);
    }
    PixelSamples {
        sigmas,
        colors,
        deltas: samples.deltas.clone(),
        points,
    }
}

fn check_base(base: Option<&FeatureImage>, rays: &ViewRays, channels: usize) -> Result<()> {
    if let Some(b) = base {
        if b.width != rays.width || b.height != rays.height || b.channels != channels {
            return Err(Error::param(alloc::format!(
                "base image {}x{}x{} does not match render {}x{}x{channels}",
                b.width,
                b.height,
                b.channels,
                rays.width,
                rays.height
            )));
        }
    }
    Ok(())
}

/// Per pixel: Σα_i c_i + T_end · base (base = 0 when absent); alpha = Σα.
pub fn render_image(
    field: &dyn Field,
    canonical: Option<&CanonicalMap>,
    rays: &ViewRays,
    base: Option<&FeatureImage>,
    settings: &RenderSettings,
) -> Result<FeatureImage> {
    render_image_cached(field, canonical, rays, base, settings).map(|(img, _)| img)
}

/// [`render_image`] that also returns the evaluated samples.
pub fn render_image_cached(
    field: &dyn Field,
    canonical: Option<&CanonicalMap>,
    rays: &ViewRays,
    base: Option<&FeatureImage>,
    settings: &RenderSettings,
) -> Result<(FeatureImage, RenderCache)> {
    settings.validate()?;
    let ch = field.channels();
    check_base(base, rays, ch)?;
    let zeros = vec![0.0; ch];
    let mut out = FeatureImage::new(rays.width, rays.height, ch);
    let mut pixels = Vec::with_capacity(rays.rays.len());
    for (p, ray) in rays.rays.iter().enumerate() {
        let behind = base.map_or(&zeros[..], |b| &b.data[p * ch..(p + 1) * ch]);
        let Some(samples) = settings.samples(ray, p) else {
            out.data[p * ch..(p + 1) * ch].copy_from_slice(behind);
            pixels.push(None);
            continue;
        };
        let s = evaluate(field, canonical, &samples);
        let c = composite(&s.sigmas, &s.colors, &s.deltas, ch, Some(behind));
        out.data[p * ch..(p + 1) * ch].copy_from_slice(&c.color);
        out.alpha[p] = c.mask;
        pixels.push(Some(s));
    }
    Ok((
        out,
        RenderCache {
            channels: ch,
            pixels,
        },
    ))
}

/// ∂L/∂Φ of a loss whose gradient w.r.t. the rendered features is
/// `d_out.data` and w.r.t. the rendered mask is `d_out.alpha`.
pub fn render_image_backward(
    field: &dyn TrainableField,
    canonical: Option<&CanonicalMap>,
    rays: &ViewRays,
    base: Option<&FeatureImage>,
    settings: &RenderSettings,
    d_out: &FeatureImage,
) -> Result<Vec<f64>> {
    let (_, cache) = render_image_cached(field, canonical, rays, base, settings)?;
    render_cache_backward(field, &cache, base, d_out)
}

/// Backward pass over samples cached by [`render_image_cached`] with the
/// same field parameters and base image.
pub fn render_cache_backward(
    field: &dyn TrainableField,
    cache: &RenderCache,
    base: Option<&FeatureImage>,
    d_out: &FeatureImage,
) -> Result<Vec<f64>> {
    let ch = field.channels();
    if cache.channels != ch || d_out.channels != ch || d_out.pixel_count() != cache.pixels.len() {
        return Err(Error::param("render cotangent has the wrong shape"));
    }
    if base.is_some_and(|b| !b.same_shape(d_out)) {
        return Err(Error::param("base image does not match the render"));
    }
    let zeros = vec![0.0; ch];
    let mut grad = vec![0.0; field.params().len()];
    for (p, s) in cache.pixels.iter().enumerate() {
        let Some(s) = s else {
            continue;
        };
        let d_color = &d_out.data[p * ch..(p + 1) * ch];
        let d_mask = d_out.alpha[p];
        if d_mask == 0.0 && d_color.iter().all(|&v| v == 0.0) {
            continue;
        }
        let behind = base.map_or(&zeros[..], |b| &b.data[p * ch..(p + 1) * ch]);
        let (d_sigma, d_colors) = composite_backward(
            &s.sigmas,
            &s.colors,
            &s.deltas,
            ch,
            Some(behind),
            d_color,
            d_mask,
        );
        for (i, point) in s.points.iter().enumerate() {
            if let Some((x, d)) = point {
                let dc = &d_colors[i * ch..(i + 1) * ch];
                if d_sigma[i] != 0.0 || dc.iter().any(|&v| v != 0.0) {
                    field.backward(x, d, d_sigma[i], dc, &mut grad);
                }
            }
        }
    }
    Ok(grad)
}
