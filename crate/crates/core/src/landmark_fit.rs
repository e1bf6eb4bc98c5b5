//! Recovering shape coefficients from 3D facial landmarks by minimizing a
//! confidence-weighted L1 distance between model vertices and targets.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;
#[allow(unused_imports)]
use num_traits::Float;

use nalgebra::SymmetricEigen;
use serde::{Deserialize, Serialize};

use crate::body_model::{AvatarParams, BodyModel, ParamGradient};
use crate::error::{Error, Result};
use crate::math::{Mat3, Vec3};
use crate::optim::{Adam, AdamConfig};

/// Landmark count of the reference detection pipeline.
pub const REFERENCE_LANDMARK_COUNT: usize = 68;

/// Target points e_i with vertex correspondences κ(i).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LandmarkSet {
    pub points: Vec<Vec3>,
    pub vertices: Vec<u32>,
    pub confidence: Vec<f64>,
}

impl LandmarkSet {
    pub fn new(points: Vec<Vec3>, vertices: Vec<u32>, confidence: Vec<f64>) -> Result<Self> {
        let set = LandmarkSet {
            points,
            vertices,
            confidence,
        };
        set.check_shape()?;
        Ok(set)
    }

    /// Landmarks placed on posed model vertices with unit confidence.
    pub fn from_model(model: &BodyModel, params: &AvatarParams) -> Result<Self> {
        params.validate(model)?;
        let vertices: Vec<u32> = model.landmarks().iter().map(|l| l.vertex).collect();
        let idx: Vec<usize> = vertices.iter().map(|&v| v as usize).collect();
        let points = model.posed_vertices(params, &idx);
        let n = points.len();
        Ok(LandmarkSet {
            points,
            vertices,
            confidence: vec![1.0; n],
        })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    fn check_shape(&self) -> Result<()> {
        if self.vertices.len() != self.points.len() || self.confidence.len() != self.points.len() {
            return Err(Error::param(format!(
                "landmark arrays disagree: {} points, {} vertices, {} confidences",
                self.points.len(),
                self.vertices.len(),
                self.confidence.len()
            )));
        }
        if let Some(i) = self
            .confidence
            .iter()
            .position(|c| !(0.0..=1.0).contains(c))
        {
            return Err(Error::param(format!(
                "landmark {i} confidence outside [0, 1]"
            )));
        }
        if let Some(i) = self
            .points
            .iter()
            .position(|p| !p.iter().all(|x| x.is_finite()))
        {
            return Err(Error::param(format!(
                "landmark {i} has a non-finite coordinate"
            )));
        }
        Ok(())
    }

    fn check_against(&self, model: &BodyModel) -> Result<()> {
        self.check_shape()?;
        let n_v = model.vertex_count();
        if let Some(i) = self.vertices.iter().position(|&v| v as usize >= n_v) {
            return Err(Error::param(format!(
                "landmark {i} maps to vertex {} past {n_v}",
                self.vertices[i]
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FitConfig {
    pub max_iters: usize,
    pub learning_rate: f64,
    /// Learning rate reached at `max_iters`, as a fraction of the initial one;
    /// the rate decays geometrically in between.
    pub final_lr_fraction: f64,
    pub reg_weight_shape: f64,
    pub reg_weight_expr: f64,
    /// Stop once the loss changes by less than this for `patience` steps.
    pub tolerance: f64,
    pub patience: usize,
    /// Smoothing of |x| as sqrt(x^2 + eps^2) - eps.
    pub l1_epsilon: f64,
    pub optimize_pose: bool,
    pub optimize_expression: bool,
}

impl Default for FitConfig {
    fn default() -> Self {
        FitConfig {
            max_iters: 2000,
            learning_rate: 1e-3,
            final_lr_fraction: 1.0,
            reg_weight_shape: 5e-5,
            reg_weight_expr: 5e-5,
            tolerance: 1e-12,
            patience: 20,
            l1_epsilon: 1e-8,
            optimize_pose: true,
            optimize_expression: true,
        }
    }
}

impl FitConfig {
    /// Faster schedule for synthetic recovery: a larger step with a decayed
    /// tail, shape and expression only.
    pub fn recovery() -> Self {
        FitConfig {
            max_iters: 3000,
            learning_rate: 1e-2,
            final_lr_fraction: 1e-3,
            optimize_pose: false,
            ..Default::default()
        }
    }
}

#[inline]
fn smooth_abs(x: f64, eps: f64) -> f64 {
    (x * x + eps * eps).sqrt() - eps
}

#[inline]
fn smooth_abs_grad(x: f64, eps: f64) -> f64 {
    x / (x * x + eps * eps).sqrt()
}

/// Σ_i c_i ‖v_κ(i) − e_i‖₁ + λ_β‖β‖² + λ_ψ‖ψ‖².
pub fn fit_residual(
    model: &BodyModel,
    params: &AvatarParams,
    landmarks: &LandmarkSet,
    config: &FitConfig,
) -> Result<f64> {
    params.validate(model)?;
    landmarks.check_against(model)?;
    Ok(residual_and_gradient(model, params, landmarks, config, false).0)
}

/// Loss and its exact gradient w.r.t. (β, θ, ψ).
pub fn fit_residual_with_gradient(
    model: &BodyModel,
    params: &AvatarParams,
    landmarks: &LandmarkSet,
    config: &FitConfig,
) -> Result<(f64, ParamGradient)> {
    params.validate(model)?;
    landmarks.check_against(model)?;
    let (loss, grad) = residual_and_gradient(model, params, landmarks, config, true);
    Ok((loss, grad.expect("gradient requested")))
}

fn residual_and_gradient(
    model: &BodyModel,
    params: &AvatarParams,
    landmarks: &LandmarkSet,
    config: &FitConfig,
    want_grad: bool,
) -> (f64, Option<ParamGradient>) {
    let idx: Vec<usize> = landmarks.vertices.iter().map(|&v| v as usize).collect();
    let posed = model.posed_vertices(params, &idx);
    let eps = config.l1_epsilon;
    let mut loss = 0.0;
    let mut grads = Vec::with_capacity(posed.len());
    for ((v, e), c) in posed
        .iter()
        .zip(&landmarks.points)
        .zip(&landmarks.confidence)
    {
        let r = v - e;
        loss += c * (smooth_abs(r.x, eps) + smooth_abs(r.y, eps) + smooth_abs(r.z, eps));
        if want_grad {
            grads.push(r.map(|x| c * smooth_abs_grad(x, eps)));
        }
    }
    let beta_sq: f64 = params.beta.iter().map(|b| b * b).sum();
    let psi_sq: f64 = params.psi.iter().map(|b| b * b).sum();
    loss += config.reg_weight_shape * beta_sq + config.reg_weight_expr * psi_sq;
    if !want_grad {
        return (loss, None);
    }
    let mut g = model.pullback_vertices(params, &idx, &grads);
    for (d, b) in g.beta.iter_mut().zip(&params.beta) {
        *d += 2.0 * config.reg_weight_shape * b;
    }
    for (d, p) in g.psi.iter_mut().zip(&params.psi) {
        *d += 2.0 * config.reg_weight_expr * p;
    }
    (loss, Some(g))
}

/// Result of [`fit_shape`].
#[derive(Debug, Clone, PartialEq)]
pub struct FitOutcome {
    /// (β*, θ^c, 0): the rig handed to downstream stages.
    pub params: AvatarParams,
    /// The raw minimizer including the fitted pose and expression.
    pub optimum: AvatarParams,
    pub loss: f64,
    pub iterations: usize,
    /// `false` when `max_iters` ran out first; `optimum` is then best-so-far.
    pub converged: bool,
}

fn check_not_degenerate(landmarks: &LandmarkSet) -> Result<()> {
    let active: Vec<&Vec3> = landmarks
        .points
        .iter()
        .zip(&landmarks.confidence)
        .filter(|(_, &c)| c > 0.0)
        .map(|(p, _)| p)
        .collect();
    if active.len() < 4 {
        return Err(Error::Fit(format!(
            "need at least 4 landmarks with positive confidence, got {}",
            active.len()
        )));
    }
    let n = active.len() as f64;
    let mean = active.iter().fold(Vec3::zeros(), |a, p| a + *p) / n;
    let cov = active.iter().fold(Mat3::zeros(), |a, p| {
        a + (*p - mean) * (*p - mean).transpose()
    }) / n;
    let mut eig = SymmetricEigen::new(cov).eigenvalues;
    eig.as_mut_slice()
        .sort_by(|a, b| b.partial_cmp(a).unwrap_or(core::cmp::Ordering::Equal));
    if eig[0] <= 1e-18 || eig[1] <= 1e-12 * eig[0] {
        return Err(Error::Fit(
            "landmarks are degenerate (coincident or collinear)".into(),
        ));
    }
    Ok(())
}

/// Adam minimization of [`fit_residual`] starting from the rest parameters.
pub fn fit_shape(
    model: &BodyModel,
    landmarks: &LandmarkSet,
    config: &FitConfig,
) -> Result<FitOutcome> {
    landmarks.check_against(model)?;
    check_not_degenerate(landmarks)?;
    let nb = model.shape_dim();
    let nt = model.pose_dim();
    let rest = AvatarParams::rest(model);
    let mut flat: Vec<f64> = rest
        .beta
        .iter()
        .chain(&rest.theta)
        .chain(&rest.psi)
        .copied()
        .collect();
    let active: Vec<bool> = (0..flat.len())
        .map(|i| {
            if i < nb {
                true
            } else if i < nb + nt {
                config.optimize_pose
            } else {
                config.optimize_expression
            }
        })
        .collect();
    let unflatten = |flat: &[f64]| AvatarParams {
        beta: flat[..nb].to_vec(),
        theta: flat[nb..nb + nt].to_vec(),
        psi: flat[nb + nt..].to_vec(),
    };

    let mut adam = Adam::new(AdamConfig::with_lr(config.learning_rate), flat.len());
    let mut best = (f64::INFINITY, flat.clone());
    let mut previous = f64::INFINITY;
    let mut calm = 0;
    let mut converged = false;
    let mut iterations = 0;
    let mut grad = vec![0.0; flat.len()];
    let decay = config
        .final_lr_fraction
        .powf(1.0 / config.max_iters.max(1) as f64);
    for it in 0..config.max_iters {
        let params = unflatten(&flat);
        let (loss, g) = residual_and_gradient(model, &params, landmarks, config, true);
        if !loss.is_finite() {
            return Err(Error::Numeric {
                iteration: it,
                detail: format!("landmark loss became {loss}"),
            });
        }
        if loss < best.0 {
            best = (loss, flat.clone());
        }
        if (previous - loss).abs() < config.tolerance {
            calm += 1;
            if calm >= config.patience {
                converged = true;
                iterations = it;
                break;
            }
        } else {
            calm = 0;
        }
        previous = loss;
        let g = g.expect("gradient requested");
        grad[..nb].copy_from_slice(&g.beta);
        grad[nb..nb + nt].copy_from_slice(&g.theta);
        grad[nb + nt..].copy_from_slice(&g.psi);
        adam.step_masked(&mut flat, &grad, &active);
        adam.config.learning_rate *= decay;
        iterations = it + 1;
    }
    // The loop evaluates before stepping; score the final iterate too.
    let final_loss = residual_and_gradient(model, &unflatten(&flat), landmarks, config, false).0;
    if final_loss < best.0 {
        best = (final_loss, flat);
    }
    let optimum = unflatten(&best.1);
    let params = AvatarParams::with_shape(model, &optimum.beta);
    Ok(FitOutcome {
        params,
        optimum,
        loss: best.0,
        iterations,
        converged,
    })
}
