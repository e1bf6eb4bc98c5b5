//! Losses that steer a radiance component: score-distillation gradients from a
//! denoising critic, the segmentation mask loss, binary-entropy sparsity and
//! embedding similarity, plus the training loops that combine them.

use alloc::string::String;
use alloc::vec::Vec;
#[allow(unused_imports)]
use num_traits::Float;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, OracleError, Result};
use crate::image::FeatureImage;
use crate::oracle::{DenoiseRequest, GuidanceOracle, NoiseSchedule, ViewContext};

pub mod train;

pub use train::{
    refine_component, train_component, CameraSampling, IterationLog, IterationProbe, LossBreakdown,
    LossTerms, RefineConfig, TrainCheckpoint, TrainConfig, TrainObserver, TrainSession,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossWeights {
    pub mask: f64,
    pub sparse: f64,
    pub sim: f64,
    pub sym: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            mask: 0.1,
            sparse: 0.0005,
            sim: 1.0,
            sym: 0.5,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        let all = [self.mask, self.sparse, self.sim, self.sym];
        if all.iter().any(|w| !(*w >= 0.0 && w.is_finite())) {
            return Err(Error::config("loss weights must be finite and nonnegative"));
        }
        Ok(())
    }
}

/// Scalar loss and its gradient with respect to its first input.
#[derive(Debug, Clone, PartialEq)]
pub struct LossValue {
    pub value: f64,
    pub grad: Vec<f64>,
}

/// Mean |Ω − Ω̂| over pixels, with ∂/∂Ω̂ (0 where Ω = Ω̂).
pub fn mask_loss(target: &[f64], rendered: &[f64]) -> Result<LossValue> {
    if target.len() != rendered.len() {
        return Err(Error::param(alloc::format!(
            "mask shapes differ: {} vs {} pixels",
            target.len(),
            rendered.len()
        )));
    }
    if target.is_empty() {
        return Err(Error::param("mask loss over zero pixels"));
    }
    let n = target.len() as f64;
    let value = target
        .iter()
        .zip(rendered)
        .map(|(a, b)| (a - b).abs())
        .sum::<f64>()
        / n;
    let grad = target
        .iter()
        .zip(rendered)
        .map(|(a, b)| {
            if b > a {
                1.0 / n
            } else if b < a {
                -1.0 / n
            } else {
                0.0
            }
        })
        .collect();
    Ok(LossValue { value, grad })
}

/// Clamp applied to mask values inside the entropy derivative.
pub const ENTROPY_CLAMP: f64 = 1e-6;

/// F_BE(a) = −a ln a − (1 − a) ln(1 − a), zero at (and outside) 0 and 1.
pub fn binary_entropy(a: f64) -> f64 {
    if a <= 0.0 || a >= 1.0 {
        0.0
    } else {
        -a * a.ln() - (1.0 - a) * (1.0 - a).ln()
    }
}

/// F'_BE(a) = ln((1 − a) / a), evaluated with a clamped to [ε, 1 − ε].
pub fn binary_entropy_derivative(a: f64) -> f64 {
    let a = a.clamp(ENTROPY_CLAMP, 1.0 - ENTROPY_CLAMP);
    ((1.0 - a) / a).ln()
}

/// Σ_pixels F_BE(Ω̂) with ∂/∂Ω̂.
pub fn sparsity_loss(rendered: &[f64]) -> LossValue {
    LossValue {
        value: rendered.iter().map(|&a| binary_entropy(a)).sum(),
        grad: rendered
            .iter()
            .map(|&a| binary_entropy_derivative(a))
            .collect(),
    }
}

/// −cos(z_img, z_text) with ∂/∂z_img.
pub fn similarity_loss(image_embedding: &[f64], text_embedding: &[f64]) -> Result<LossValue> {
    if image_embedding.len() != text_embedding.len() {
        return Err(Error::param(alloc::format!(
            "embedding sizes differ: {} vs {}",
            image_embedding.len(),
            text_embedding.len()
        )));
    }
    let na = norm(image_embedding);
    let nb = norm(text_embedding);
    if !(na > 0.0 && nb > 0.0) {
        return Err(Error::param("similarity of a zero-norm embedding"));
    }
    let cos = dot(image_embedding, text_embedding) / (na * nb);
    let grad = image_embedding
        .iter()
        .zip(text_embedding)
        .map(|(a, b)| -(b / (na * nb) - cos * a / (na * na)))
        .collect();
    Ok(LossValue { value: -cos, grad })
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Fraction of the run after which the timestep upper bound anneals.
pub const ANNEAL_START: f64 = 0.8;

/// Uniform t over the schedule's range. During the last 20% of the run the
/// upper bound falls linearly toward the middle of the range.
pub fn sample_timestep(schedule: &NoiseSchedule, progress: f64, rng: &mut impl Rng) -> usize {
    let (lo, hi) = (schedule.t_min, schedule.t_max);
    let anneal = ((progress - ANNEAL_START) / (1.0 - ANNEAL_START)).clamp(0.0, 1.0);
    let mid = lo + (hi - lo) / 2;
    let upper = hi - ((hi - mid) as f64 * anneal).round() as usize;
    rng.random_range(lo..=upper)
}

/// One critic query: the timestep, noise, weight and pixel gradient.
#[derive(Debug, Clone, PartialEq)]
pub struct SdsSample {
    pub t: usize,
    pub weight: f64,
    pub noise: FeatureImage,
    pub gradient: FeatureImage,
}

/// u_t (ε̂ − ε) for Q_t = √ᾱ_t Q + √(1 − ᾱ_t) ε, used directly as ∂L/∂Q.
pub fn sds_gradient(
    render: &FeatureImage,
    prompt: &str,
    oracle: &dyn GuidanceOracle,
    schedule: &NoiseSchedule,
    t: usize,
    view: Option<ViewContext>,
    rng: &mut impl Rng,
) -> core::result::Result<SdsSample, OracleError> {
    if t >= schedule.alphas_cumprod.len() {
        return Err(OracleError::Protocol(alloc::format!(
            "timestep {t} outside the schedule"
        )));
    }
    let ab = schedule.alpha_bar(t);
    let mut noise = FeatureImage::new(render.width, render.height, render.channels);
    for e in noise.data.iter_mut() {
        *e = rng.sample(StandardNormal);
    }
    let mut noisy = noise.clone();
    for (q, (x, e)) in noisy
        .data
        .iter_mut()
        .zip(render.data.iter().zip(&noise.data))
    {
        *q = ab.sqrt() * x + (1.0 - ab).sqrt() * e;
    }
    let mut clean = render.clone();
    clean.alpha.fill(1.0);
    noise.alpha.fill(1.0);
    noisy.alpha.fill(1.0);
    let response = oracle.denoise(&DenoiseRequest {
        prompt: String::from(prompt),
        clean,
        noisy,
        noise: noise.clone(),
        t,
        view,
    })?;
    let pred = &response.noise_pred;
    if !pred.same_shape(&noise) {
        return Err(OracleError::Protocol(alloc::format!(
            "noise prediction is {}x{}x{}, expected {}x{}x{}",
            pred.width,
            pred.height,
            pred.channels,
            noise.width,
            noise.height,
            noise.channels
        )));
    }
    if !response.weight.is_finite() {
        return Err(OracleError::Protocol("non-finite timestep weight".into()));
    }
    let mut gradient = FeatureImage::new(render.width, render.height, render.channels);
    for (g, (p, e)) in gradient
        .data
        .iter_mut()
        .zip(pred.data.iter().zip(&noise.data))
    {
        *g = response.weight * (p - e);
    }
    Ok(SdsSample {
        t,
        weight: response.weight,
        noise,
        gradient,
    })
}
