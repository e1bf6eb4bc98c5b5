//! Ray-cast mesh rasterizer with texel sampling expressed as a sparse linear
//! map from texels to pixels, so its texel gradient is the transposed map.

use alloc::vec;
use alloc::vec::Vec;
#[allow(unused_imports)]
use num_traits::Float;

use serde::{Deserialize, Serialize};

use super::TextureMap;
use crate::bvh::{Bvh, Hit};
use crate::camera::Camera;
use crate::error::{Error, Result};
use crate::image::FeatureImage;
use crate::mesh::Mesh;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Sampling {
    Nearest,
    #[default]
    Bilinear,
}

/// One covered pixel: the surface hit and up to four weighted texel taps.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RasterPixel {
    pub hit: Hit,
    pub taps: [(u32, f64); 4],
}

/// Per-pixel sampling plan for one (mesh, camera, texture size) triple.
#[derive(Debug, Clone)]
pub struct RasterPlan {
    pub width: usize,
    pub height: usize,
    pub texture_width: usize,
    pub texture_height: usize,
    pub pixels: Vec<Option<RasterPixel>>,
}

/// Texel taps and weights for a UV coordinate (v = 1 is the top texel row).
pub fn texel_taps(
    uv: [f64; 2],
    width: usize,
    height: usize,
    sampling: Sampling,
) -> [(u32, f64); 4] {
    let (w, h) = (width as f64, height as f64);
    match sampling {
        Sampling::Nearest => {
            let col = ((uv[0] * w).floor() as isize).clamp(0, width as isize - 1) as usize;
            let row = (((1.0 - uv[1]) * h).floor() as isize).clamp(0, height as isize - 1) as usize;
            [
                ((row * width + col) as u32, 1.0),
                (0, 0.0),
                (0, 0.0),
                (0, 0.0),
            ]
        }
        Sampling::Bilinear => {
            let x = (uv[0] * w - 0.5).clamp(0.0, w - 1.0);
            let y = ((1.0 - uv[1]) * h - 0.5).clamp(0.0, h - 1.0);
            let (x0, y0) = (x.floor() as usize, y.floor() as usize);
            let (x1, y1) = ((x0 + 1).min(width - 1), (y0 + 1).min(height - 1));
            let (fx, fy) = (x - x0 as f64, y - y0 as f64);
            let t = |r: usize, c: usize| (r * width + c) as u32;
            [
                (t(y0, x0), (1.0 - fx) * (1.0 - fy)),
                (t(y0, x1), fx * (1.0 - fy)),
                (t(y1, x0), (1.0 - fx) * fy),
                (t(y1, x1), fx * fy),
            ]
        }
    }
}

impl RasterPlan {
    pub fn build(
        mesh: &Mesh,
        bvh: &Bvh,
        camera: &Camera,
        texture_width: usize,
        texture_height: usize,
        sampling: Sampling,
    ) -> Result<Self> {
        camera.validate()?;
        if mesh.uvs.is_none() {
            return Err(Error::config("mesh has no texture coordinates"));
        }
        if texture_width == 0 || texture_height == 0 {
            return Err(Error::config("texture resolution must be positive"));
        }
        let mut pixels = Vec::with_capacity(camera.width * camera.height);
        for row in 0..camera.height {
            for col in 0..camera.width {
                let ray = camera.pixel_ray(row, col);
                pixels.push(bvh.intersect_first(&ray).map(|hit| {
                    let uv = mesh.uv_at(hit.face, hit.bary).expect("uvs checked above");
                    RasterPixel {
                        hit,
                        taps: texel_taps(uv, texture_width, texture_height, sampling),
                    }
                }));
            }
        }
        Ok(RasterPlan {
            width: camera.width,
            height: camera.height,
            texture_width,
            texture_height,
            pixels,
        })
    }

    fn check_texture(&self, texture: &TextureMap) {
        assert!(
            texture.width == self.texture_width && texture.height == self.texture_height,
            "plan built for a {}x{} texture, got {}x{}",
            self.texture_width,
            self.texture_height,
            texture.width,
            texture.height
        );
    }

    /// RGB image with alpha 1 on covered pixels and 0 on background.
    pub fn render(&self, texture: &TextureMap) -> FeatureImage {
        self.check_texture(texture);
        let mut img = FeatureImage::new(self.width, self.height, 3);
        for (p, px) in self.pixels.iter().enumerate() {
            if let Some(px) = px {
                let out = &mut img.data[p * 3..p * 3 + 3];
                for &(t, w) in &px.taps {
                    if w != 0.0 {
                        let c = texture.texel(t as usize);
                        for k in 0..3 {
                            out[k] += w * c[k];
                        }
                    }
                }
                img.alpha[p] = 1.0;
            }
        }
        img
    }

    /// Coverage-weighted fraction of already painted texels per pixel.
    pub fn render_validity(&self, texture: &TextureMap) -> Vec<f64> {
        self.check_texture(texture);
        self.pixels
            .iter()
            .map(|px| match px {
                Some(px) => px
                    .taps
                    .iter()
                    .filter(|(t, _)| texture.valid[*t as usize])
                    .map(|(_, w)| w)
                    .sum(),
                None => 0.0,
            })
            .collect()
    }

    /// Pulls a per-pixel RGB cotangent (length 3·H·W) back onto texels.
    pub fn backward(&self, d_pixels: &[f64]) -> Vec<f64> {
        let mut grad = vec![0.0; self.texture_width * self.texture_height * 3];
        for (p, px) in self.pixels.iter().enumerate() {
            if let Some(px) = px {
                let d = &d_pixels[p * 3..p * 3 + 3];
                for &(t, w) in &px.taps {
                    if w != 0.0 {
                        let t = t as usize;
                        for k in 0..3 {
                            grad[t * 3 + k] += w * d[k];
                        }
                    }
                }
            }
        }
        grad
    }

    /// Texels with non-zero weight in at least one pixel.
    pub fn visible_texels(&self) -> Vec<bool> {
        let mut vis = vec![false; self.texture_width * self.texture_height];
        for px in self.pixels.iter().flatten() {
            for &(t, w) in &px.taps {
                if w != 0.0 {
                    vis[t as usize] = true;
                }
            }
        }
        vis
    }

    /// Inverse depth normalized to [0, 1] over covered pixels; background 0.
    pub fn inverse_depth(&self) -> FeatureImage {
        let inv: Vec<Option<f64>> = self
            .pixels
            .iter()
            .map(|p| p.map(|p| 1.0 / p.hit.t))
            .collect();
        let (lo, hi) = inv
            .iter()
            .flatten()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
                (lo.min(v), hi.max(v))
            });
        let span = hi - lo;
        let mut img = FeatureImage::new(self.width, self.height, 1);
        for (p, v) in inv.iter().enumerate() {
            if let Some(v) = v {
                img.data[p] = if span > 0.0 {
                    0.1 + 0.9 * (v - lo) / span
                } else {
                    1.0
                };
                img.alpha[p] = 1.0;
            }
        }
        img
    }

    pub fn coverage(&self) -> Vec<bool> {
        self.pixels.iter().map(Option::is_some).collect()
    }
}

/// Renders `texture` on `mesh` seen from `camera`.
pub fn rasterize(
    texture: &TextureMap,
    camera: &Camera,
    mesh: &Mesh,
    sampling: Sampling,
) -> Result<FeatureImage> {
    let bvh = Bvh::build(mesh);
    let plan = RasterPlan::build(mesh, &bvh, camera, texture.width, texture.height, sampling)?;
    Ok(plan.render(texture))
}
