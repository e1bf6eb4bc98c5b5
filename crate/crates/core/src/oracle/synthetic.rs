//! Deterministic in-process oracles: closed-form critics, a fixed affine
//! latent codec and a procedural oracle whose targets are known analytically.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
#[allow(unused_imports)]
use num_traits::Float;

use nalgebra::{Matrix3, Matrix3x4, Matrix4x3, Vector3, Vector4};

use super::{
    Capability, DenoiseRequest, DenoiseResponse, GenerateRequest, GuidanceOracle, NoiseSchedule,
    SegmentRequest,
};
use crate::bvh::Bvh;
use crate::camera::{Camera, Ray};
use crate::error::OracleError;
use crate::image::FeatureImage;
use crate::mesh::Mesh;
use crate::radiance_component::field::ShellField;
use crate::radiance_component::render::{render_image, RenderSettings, ViewRays};
use crate::radiance_component::sampling::hash_uniform;
use crate::texture_paint::raster::{RasterPlan, Sampling};
use crate::texture_paint::TextureMap;

pub const LATENT_CHANNELS: usize = 4;

fn protocol(msg: impl Into<String>) -> OracleError {
    OracleError::Protocol(msg.into())
}

/// Latent codec z = W·rgb + b on `factor`×`factor` average-pooled pixels;
/// decoding applies the pseudo-inverse and nearest upsampling.
#[derive(Debug, Clone, PartialEq)]
pub struct AffineCodec {
    pub factor: usize,
    pub weight: Matrix4x3<f64>,
    pub bias: Vector4<f64>,
}

impl AffineCodec {
    pub fn new(factor: usize) -> Self {
        AffineCodec {
            factor,
            weight: Matrix4x3::new(0.8, 0.3, 0.1, -0.2, 0.6, 0.4, 0.1, -0.3, 0.9, 0.5, 0.5, 0.5),
            bias: Vector4::new(0.1, -0.1, 0.05, -0.5),
        }
    }

    pub fn encode_pixel(&self, rgb: &[f64]) -> [f64; 4] {
        let z = self.weight * Vector3::new(rgb[0], rgb[1], rgb[2]) + self.bias;
        [z.x, z.y, z.z, z.w]
    }

    fn pseudo_inverse(&self) -> Matrix3x4<f64> {
        let wt = self.weight.transpose();
        let gram: Matrix3<f64> = wt * self.weight;
        gram.try_inverse()
            .expect("codec weight has full column rank")
            * wt
    }

    pub fn decode_pixel(&self, z: &[f64]) -> [f64; 3] {
        let rgb = self.pseudo_inverse() * (Vector4::new(z[0], z[1], z[2], z[3]) - self.bias);
        [rgb.x, rgb.y, rgb.z]
    }

    pub fn encode(&self, image: &FeatureImage) -> Result<FeatureImage, OracleError> {
        if image.channels != 3 {
            return Err(protocol(alloc::format!(
                "encode expects 3 channels, got {}",
                image.channels
            )));
        }
        let pooled = image
            .downsample(self.factor)
            .map_err(|e| protocol(alloc::format!("{e}")))?;
        let mut out = FeatureImage::new(pooled.width, pooled.height, LATENT_CHANNELS);
        for (src, dst) in pooled
            .data
            .chunks(3)
            .zip(out.data.chunks_mut(LATENT_CHANNELS))
        {
            dst.copy_from_slice(&self.encode_pixel(src));
        }
        out.alpha = pooled.alpha;
        Ok(out)
    }

    pub fn decode(&self, latent: &FeatureImage) -> Result<FeatureImage, OracleError> {
        if latent.channels != LATENT_CHANNELS {
            return Err(protocol(alloc::format!(
                "decode expects 4 channels, got {}",
                latent.channels
            )));
        }
        let pinv = self.pseudo_inverse();
        let mut small = FeatureImage::new(latent.width, latent.height, 3);
        for (src, dst) in latent
            .data
            .chunks(LATENT_CHANNELS)
            .zip(small.data.chunks_mut(3))
        {
            let rgb = pinv * (Vector4::new(src[0], src[1], src[2], src[3]) - self.bias);
            dst.copy_from_slice(rgb.as_slice());
        }
        small.alpha = latent.alpha.clone();
        Ok(small.upsample(self.factor))
    }
}

/// Paints every view with one flat color.
#[derive(Debug, Clone, PartialEq)]
pub struct ConstantOracle {
    pub color: [f64; 3],
}

impl GuidanceOracle for ConstantOracle {
    fn capabilities(&self) -> Vec<Capability> {
        vec![Capability::Generate]
    }

    fn generate(&self, req: &GenerateRequest) -> Result<FeatureImage, OracleError> {
        Ok(FeatureImage::filled(
            req.init.width,
            req.init.height,
            &self.color,
            1.0,
        ))
    }
}

/// Critic that predicts exactly the injected noise.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PerfectCritic {
    pub schedule: NoiseSchedule,
}

impl GuidanceOracle for PerfectCritic {
    fn capabilities(&self) -> Vec<Capability> {
        vec![Capability::Denoise]
    }

    fn noise_schedule(&self) -> Result<NoiseSchedule, OracleError> {
        Ok(self.schedule.clone())
    }

    fn denoise(&self, req: &DenoiseRequest) -> Result<DenoiseResponse, OracleError> {
        Ok(DenoiseResponse {
            noise_pred: req.noise.clone(),
            weight: 1.0,
        })
    }
}

/// Critic ε̂ = Q_t with weight u_t = 1 − ᾱ_t.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct LinearCritic {
    pub schedule: NoiseSchedule,
}

impl GuidanceOracle for LinearCritic {
    fn capabilities(&self) -> Vec<Capability> {
        vec![Capability::Denoise]
    }

    fn noise_schedule(&self) -> Result<NoiseSchedule, OracleError> {
        Ok(self.schedule.clone())
    }

    fn denoise(&self, req: &DenoiseRequest) -> Result<DenoiseResponse, OracleError> {
        Ok(DenoiseResponse {
            noise_pred: req.noisy.clone(),
            weight: 1.0 - self.schedule.alpha_bar(req.t),
        })
    }
}

/// Texture rendered on the mesh at `camera`, in RGB (3 channels) or encoded
/// latent (4 channels) at `camera`'s resolution. Latent surfaces are
/// rasterized at `latent_factor` times the resolution and then encoded.
pub fn surface_features(
    mesh: &Mesh,
    bvh: &Bvh,
    texture: &TextureMap,
    camera: &Camera,
    channels: usize,
    oracle: &dyn GuidanceOracle,
) -> crate::Result<FeatureImage> {
    match channels {
        3 => Ok(RasterPlan::build(
            mesh,
            bvh,
            camera,
            texture.width,
            texture.height,
            Sampling::Bilinear,
        )?
        .render(texture)),
        LATENT_CHANNELS => {
            let f = oracle.latent_factor();
            let full = camera.with_resolution(camera.width * f, camera.height * f);
            let rgb = RasterPlan::build(
                mesh,
                bvh,
                &full,
                texture.width,
                texture.height,
                Sampling::Bilinear,
            )?
            .render(texture);
            oracle
                .encode(&rgb)
                .map_err(|e| crate::Error::oracle("encode surface", e))
        }
        c => Err(crate::Error::config(alloc::format!(
            "no surface rendering for {c} channels"
        ))),
    }
}

fn sphere_interval(ray: &Ray, center: &crate::math::Vec3, radius: f64) -> Option<(f64, f64)> {
    let oc = ray.origin - center;
    let b = oc.dot(&ray.direction);
    let c = oc.norm_squared() - radius * radius;
    let disc = b * b - c;
    (disc > 0.0).then(|| (-b - disc.sqrt(), -b + disc.sqrt()))
}

/// Whether the ray crosses the shell before reaching `limit`.
pub fn ray_crosses_shell(ray: &Ray, shell: &ShellField, limit: f64) -> bool {
    let Some((a0, a1)) = sphere_interval(ray, &shell.center, shell.outer) else {
        return false;
    };
    let pieces = match sphere_interval(ray, &shell.center, shell.inner) {
        Some((b0, b1)) => vec![(a0, b0), (b1, a1)],
        None => vec![(a0, a1)],
    };
    // {t : o.y + t d.y ≥ min_y}
    let (h0, h1) = if ray.direction.y > 0.0 {
        (
            (shell.min_y - ray.origin.y) / ray.direction.y,
            f64::INFINITY,
        )
    } else if ray.direction.y < 0.0 {
        (
            f64::NEG_INFINITY,
            (shell.min_y - ray.origin.y) / ray.direction.y,
        )
    } else if ray.origin.y >= shell.min_y {
        (f64::NEG_INFINITY, f64::INFINITY)
    } else {
        return false;
    };
    pieces.iter().any(|&(lo, hi)| {
        let lo = lo.max(h0).max(0.0);
        let hi = hi.min(h1).min(limit);
        lo < hi
    })
}

/// Per-pixel silhouette of the shell, occluded by the mesh when given.
pub fn shell_silhouette(shell: &ShellField, mesh: Option<&Bvh>, camera: &Camera) -> Vec<bool> {
    let mut out = Vec::with_capacity(camera.width * camera.height);
    for row in 0..camera.height {
        for col in 0..camera.width {
            let ray = camera.pixel_ray(row, col);
            let limit = mesh
                .and_then(|b| b.intersect_first(&ray))
                .map_or(f64::INFINITY, |h| h.t);
            out.push(ray_crosses_shell(&ray, shell, limit));
        }
    }
    out
}

/// Oracle with analytically known answers on a fixed textured mesh:
/// `generate` renders the reference texture, the critic pulls renders toward
/// the target shell composited over the textured mesh, segmentation returns
/// the shell's silhouette and embeddings are fixed random projections.
#[derive(Debug, Clone)]
pub struct ProceduralOracle {
    pub mesh: Mesh,
    bvh: Bvh,
    pub texture: TextureMap,
    /// RGB target; `None` makes the target the bare textured mesh.
    pub target: Option<ShellField>,
    pub codec: AffineCodec,
    pub schedule: NoiseSchedule,
    pub target_bins: usize,
    pub embed_dim: usize,
    pub seed: u64,
}

impl ProceduralOracle {
    pub fn new(
        mesh: Mesh,
        texture: TextureMap,
        target: Option<ShellField>,
        latent_factor: usize,
    ) -> Self {
        let bvh = Bvh::build(&mesh);
        ProceduralOracle {
            mesh,
            bvh,
            texture,
            target,
            codec: AffineCodec::new(latent_factor),
            schedule: NoiseSchedule::default(),
            target_bins: 64,
            embed_dim: 16,
            seed: 0,
        }
    }

    pub fn bvh(&self) -> &Bvh {
        &self.bvh
    }

    fn camera_for(
        &self,
        view: Option<&super::ViewContext>,
        image: &FeatureImage,
    ) -> Result<Camera, OracleError> {
        let view = view.ok_or_else(|| protocol("request lacks a view context"))?;
        Ok(view.camera.with_resolution(image.width, image.height))
    }

    /// Q*: the target shell composited over the textured mesh at `camera`.
    pub fn target_render(&self, camera: &Camera, channels: usize) -> crate::Result<FeatureImage> {
        let base = surface_features(&self.mesh, &self.bvh, &self.texture, camera, channels, self)?;
        let Some(shell) = &self.target else {
            return Ok(base);
        };
        let shell = match channels {
            3 => shell.clone(),
            _ => ShellField {
                color: self.codec.encode_pixel(&shell.color).to_vec(),
                ..shell.clone()
            },
        };
        let rays = ViewRays::new(camera, Some(&self.bvh))?;
        let settings = RenderSettings {
            bins: self.target_bins,
            jitter: false,
            ..Default::default()
        };
        render_image(&shell, None, &rays, Some(&base), &settings)
    }

    /// Target silhouette at `camera`, empty without a target.
    pub fn target_silhouette(&self, camera: &Camera) -> Vec<bool> {
        match &self.target {
            Some(shell) => shell_silhouette(shell, Some(&self.bvh), camera),
            None => vec![false; camera.width * camera.height],
        }
    }

    fn projection(&self, row: usize, col: usize) -> f64 {
        2.0 * hash_uniform(self.seed ^ 0x5EED, row as u64, col as u64) - 1.0
    }
}

impl GuidanceOracle for ProceduralOracle {
    fn capabilities(&self) -> Vec<Capability> {
        vec![
            Capability::Generate,
            Capability::Denoise,
            Capability::Segment,
            Capability::EmbedImage,
            Capability::EmbedText,
            Capability::Encode,
            Capability::Decode,
        ]
    }

    fn noise_schedule(&self) -> Result<NoiseSchedule, OracleError> {
        Ok(self.schedule.clone())
    }

    fn latent_factor(&self) -> usize {
        self.codec.factor
    }

    fn generate(&self, req: &GenerateRequest) -> Result<FeatureImage, OracleError> {
        let camera = self.camera_for(req.view.as_ref(), &req.init)?;
        let plan = RasterPlan::build(
            &self.mesh,
            &self.bvh,
            &camera,
            self.texture.width,
            self.texture.height,
            Sampling::Bilinear,
        )
        .map_err(|e| protocol(alloc::format!("{e}")))?;
        Ok(plan.render(&self.texture))
    }

    /// ε̂ = (Q_t − √ᾱ Q*) / √(1 − ᾱ) with u_t = 1 − ᾱ, so u_t (ε̂ − ε) is
    /// √(ᾱ(1 − ᾱ)) (Q − Q*).
    fn denoise(&self, req: &DenoiseRequest) -> Result<DenoiseResponse, OracleError> {
        let camera = self.camera_for(req.view.as_ref(), &req.noisy)?;
        let target = self
            .target_render(&camera, req.noisy.channels)
            .map_err(|e| protocol(alloc::format!("{e}")))?;
        let ab = self.schedule.alpha_bar(req.t);
        let mut pred = req.noisy.clone();
        for (p, q) in pred.data.iter_mut().zip(&target.data) {
            *p = (*p - ab.sqrt() * q) / (1.0 - ab).sqrt();
        }
        Ok(DenoiseResponse {
            noise_pred: pred,
            weight: 1.0 - ab,
        })
    }

    fn segment(&self, req: &SegmentRequest) -> Result<FeatureImage, OracleError> {
        let camera = self.camera_for(req.view.as_ref(), &req.image)?;
        let sil = self.target_silhouette(&camera);
        let data = sil.iter().map(|&s| if s { 1.0 } else { 0.0 }).collect();
        FeatureImage::from_data(camera.width, camera.height, 1, data)
            .map_err(|e| protocol(alloc::format!("{e}")))
    }

    /// z_k = Σ_j P_kj x_j / √n with fixed pseudo-random P ∈ [−1, 1].
    fn embed_image(&self, image: &FeatureImage) -> Result<Vec<f64>, OracleError> {
        let n = image.data.len() as f64;
        Ok((0..self.embed_dim)
            .map(|k| {
                image
                    .data
                    .iter()
                    .enumerate()
                    .map(|(j, x)| self.projection(k, j) * x)
                    .sum::<f64>()
                    / n.sqrt()
            })
            .collect())
    }

    fn embed_image_vjp(
        &self,
        image: &FeatureImage,
        cotangent: &[f64],
    ) -> Result<FeatureImage, OracleError> {
        if cotangent.len() != self.embed_dim {
            return Err(protocol("cotangent length differs from the embedding size"));
        }
        let n = (image.data.len() as f64).sqrt();
        let mut out = FeatureImage::new(image.width, image.height, image.channels);
        for (j, g) in out.data.iter_mut().enumerate() {
            *g = cotangent
                .iter()
                .enumerate()
                .map(|(k, c)| c * self.projection(k, j))
                .sum::<f64>()
                / n;
        }
        Ok(out)
    }

    fn embed_text(&self, prompt: &str) -> Result<Vec<f64>, OracleError> {
        let key = prompt.bytes().fold(0xcbf2_9ce4_8422_2325u64, |h, b| {
            (h ^ b as u64).wrapping_mul(0x0100_0000_01b3)
        });
        Ok((0..self.embed_dim)
            .map(|k| 2.0 * hash_uniform(key, k as u64, 7) - 1.0)
            .collect())
    }

    fn encode(&self, image: &FeatureImage) -> Result<FeatureImage, OracleError> {
        self.codec.encode(image)
    }

    fn decode(&self, latent: &FeatureImage) -> Result<FeatureImage, OracleError> {
        self.codec.decode(latent)
    }
}
