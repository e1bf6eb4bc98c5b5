//! The guidance oracle protocol: every learned-model capability the pipeline
//! consumes (generation, denoising critic, segmentation, embeddings, latent
//! codec, landmark detection) behind one trait. Capabilities an implementation
//! lacks answer [`OracleError::Unsupported`].

use alloc::string::String;
use alloc::vec::Vec;
#[allow(unused_imports)]
use num_traits::Float;

use serde::{Deserialize, Serialize};

use crate::camera::Camera;
use crate::error::OracleError;
use crate::image::FeatureImage;

pub mod synthetic;

/// Wire schema version shared with remote oracles.
pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Capability {
    Generate,
    Denoise,
    Segment,
    EmbedImage,
    EmbedText,
    Encode,
    Decode,
    Landmarks,
}

impl Capability {
    pub const ALL: [Capability; 8] = [
        Capability::Generate,
        Capability::Denoise,
        Capability::Segment,
        Capability::EmbedImage,
        Capability::EmbedText,
        Capability::Encode,
        Capability::Decode,
        Capability::Landmarks,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            Capability::Generate => "generate",
            Capability::Denoise => "denoise",
            Capability::Segment => "segment",
            Capability::EmbedImage => "embed_image",
            Capability::EmbedText => "embed_text",
            Capability::Encode => "encode",
            Capability::Decode => "decode",
            Capability::Landmarks => "landmarks",
        }
    }
}

/// Discrete diffusion schedule: ᾱ_t for t = 0..len, and the valid t range.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseSchedule {
    pub alphas_cumprod: Vec<f64>,
    pub t_min: usize,
    pub t_max: usize,
}

impl NoiseSchedule {
    /// β_t linear in √β between the endpoints, the common latent-diffusion choice.
    pub fn scaled_linear(steps: usize, beta_start: f64, beta_end: f64) -> Self {
        let (a, b) = (beta_start.sqrt(), beta_end.sqrt());
        let mut prod = 1.0;
        let alphas_cumprod = (0..steps)
            .map(|i| {
                let s = a + (b - a) * i as f64 / (steps - 1).max(1) as f64;
                prod *= 1.0 - s * s;
                prod
            })
            .collect();
        NoiseSchedule {
            alphas_cumprod,
            t_min: steps / 50,
            t_max: steps - steps / 50 - 1,
        }
    }

    pub fn alpha_bar(&self, t: usize) -> f64 {
        self.alphas_cumprod[t]
    }

    pub fn validate(&self) -> Result<(), OracleError> {
        let n = self.alphas_cumprod.len();
        if n == 0 || self.t_min > self.t_max || self.t_max >= n {
            return Err(OracleError::Protocol(alloc::format!(
                "noise schedule range [{}, {}] invalid for {n} steps",
                self.t_min,
                self.t_max
            )));
        }
        if self.alphas_cumprod.iter().any(|a| !(*a > 0.0 && *a < 1.0)) {
            return Err(OracleError::Protocol(
                "alphas_cumprod must lie in (0, 1)".into(),
            ));
        }
        Ok(())
    }
}

impl Default for NoiseSchedule {
    fn default() -> Self {
        NoiseSchedule::scaled_linear(1000, 0.00085, 0.012)
    }
}

/// Camera of the view being optimized, for oracles that render references.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ViewContext {
    pub camera: Camera,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerateRequest {
    pub prompt: String,
    pub seed: u64,
    /// Normalized inverse depth, one channel, background 0.
    pub depth: FeatureImage,
    /// Current texture rendering; alpha carries the painted-so-far mask.
    pub init: FeatureImage,
    pub view: Option<ViewContext>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenoiseRequest {
    pub prompt: String,
    /// Clean rendering Q.
    pub clean: FeatureImage,
    /// Q_t = √ᾱ_t Q + √(1−ᾱ_t) ε.
    pub noisy: FeatureImage,
    /// The noise ε used to form `noisy`.
    pub noise: FeatureImage,
    pub t: usize,
    pub view: Option<ViewContext>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenoiseResponse {
    /// ε̂ with the request's shape.
    pub noise_pred: FeatureImage,
    /// Timestep weight u_t.
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentRequest {
    /// RGB image.
    pub image: FeatureImage,
    pub keyword: String,
    pub view: Option<ViewContext>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectedLandmark {
    pub position: [f64; 3],
    pub confidence: f64,
}

/// Client side of the guidance protocol.
pub trait GuidanceOracle {
    fn capabilities(&self) -> Vec<Capability>;

    fn noise_schedule(&self) -> Result<NoiseSchedule, OracleError> {
        Err(OracleError::Unsupported("noise_schedule"))
    }

    /// Pixel downsampling factor of the latent encoder.
    fn latent_factor(&self) -> usize {
        8
    }

    fn generate(&self, _req: &GenerateRequest) -> Result<FeatureImage, OracleError> {
        Err(OracleError::Unsupported("generate"))
    }

    fn denoise(&self, _req: &DenoiseRequest) -> Result<DenoiseResponse, OracleError> {
        Err(OracleError::Unsupported("denoise"))
    }

    /// Single-channel soft mask in [0, 1] at the image's resolution.
    fn segment(&self, _req: &SegmentRequest) -> Result<FeatureImage, OracleError> {
        Err(OracleError::Unsupported("segment"))
    }

    fn embed_image(&self, _image: &FeatureImage) -> Result<Vec<f64>, OracleError> {
        Err(OracleError::Unsupported("embed_image"))
    }

    /// Vector-Jacobian product of [`GuidanceOracle::embed_image`]: the image
    /// gradient of ⟨cotangent, embed_image(image)⟩.
    fn embed_image_vjp(
        &self,
        _image: &FeatureImage,
        _cotangent: &[f64],
    ) -> Result<FeatureImage, OracleError> {
        Err(OracleError::Unsupported("embed_image_vjp"))
    }

    fn embed_text(&self, _prompt: &str) -> Result<Vec<f64>, OracleError> {
        Err(OracleError::Unsupported("embed_text"))
    }

    /// RGB image → latent features (C = 4) at 1/`latent_factor` resolution.
    fn encode(&self, _image: &FeatureImage) -> Result<FeatureImage, OracleError> {
        Err(OracleError::Unsupported("encode"))
    }

    fn decode(&self, _latent: &FeatureImage) -> Result<FeatureImage, OracleError> {
        Err(OracleError::Unsupported("decode"))
    }

    fn landmarks(&self, _image: &FeatureImage) -> Result<Vec<DetectedLandmark>, OracleError> {
        Err(OracleError::Unsupported("landmarks"))
    }
}

impl<T: GuidanceOracle + ?Sized> GuidanceOracle for &T {
    fn capabilities(&self) -> Vec<Capability> {
        (**self).capabilities()
    }
    fn noise_schedule(&self) -> Result<NoiseSchedule, OracleError> {
        (**self).noise_schedule()
    }
    fn latent_factor(&self) -> usize {
        (**self).latent_factor()
    }
    fn generate(&self, req: &GenerateRequest) -> Result<FeatureImage, OracleError> {
        (**self).generate(req)
    }
    fn denoise(&self, req: &DenoiseRequest) -> Result<DenoiseResponse, OracleError> {
        (**self).denoise(req)
    }
    fn segment(&self, req: &SegmentRequest) -> Result<FeatureImage, OracleError> {
        (**self).segment(req)
    }
    fn embed_image(&self, image: &FeatureImage) -> Result<Vec<f64>, OracleError> {
        (**self).embed_image(image)
    }
    fn embed_image_vjp(
        &self,
        image: &FeatureImage,
        cotangent: &[f64],
    ) -> Result<FeatureImage, OracleError> {
        (**self).embed_image_vjp(image, cotangent)
    }
    fn embed_text(&self, prompt: &str) -> Result<Vec<f64>, OracleError> {
        (**self).embed_text(prompt)
    }
    fn encode(&self, image: &FeatureImage) -> Result<FeatureImage, OracleError> {
        (**self).encode(image)
    }
    fn decode(&self, latent: &FeatureImage) -> Result<FeatureImage, OracleError> {
        (**self).decode(latent)
    }
    fn landmarks(&self, image: &FeatureImage) -> Result<Vec<DetectedLandmark>, OracleError> {
        (**self).landmarks(image)
    }
}
