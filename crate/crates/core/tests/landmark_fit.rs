mod common;

use std::time::Instant;

use common::{central_difference, naive_skin, random_params, relative_error, rng};
use compavatar_core::body_model::toy::{toy_model, ToyModelConfig};
use compavatar_core::body_model::{AvatarParams, BodyModel};
use compavatar_core::landmark_fit::{
    fit_residual, fit_residual_with_gradient, fit_shape, FitConfig, LandmarkSet,
};
use compavatar_core::math::Vec3;
use rand::Rng;

fn loop_loss(model: &BodyModel, params: &AvatarParams, lm: &LandmarkSet, cfg: &FitConfig) -> f64 {
    let posed = naive_skin(model, params);
    let mut loss = 0.0;
    for i in 0..lm.len() {
        let v = posed[lm.vertices[i] as usize];
        let mut l1 = 0.0;
        for c in 0..3 {
            let r: f64 = v[c] - lm.points[i][c];
            l1 += (r * r + cfg.l1_epsilon * cfg.l1_epsilon).sqrt() - cfg.l1_epsilon;
        }
        loss += lm.confidence[i] * l1;
    }
    let b: f64 = params.beta.iter().map(|x| x * x).sum();
    let p: f64 = params.psi.iter().map(|x| x * x).sum();
    loss + cfg.reg_weight_shape * b + cfg.reg_weight_expr * p
}

fn jittered_landmarks(model: &BodyModel, seed: u64) -> LandmarkSet {
    let mut r = rng(seed);
    let mut lm = LandmarkSet::from_model(model, &AvatarParams::rest(model)).unwrap();
    for p in &mut lm.points {
        *p += Vec3::from_fn(|_, _| r.random_range(-0.05..0.05));
    }
    for c in &mut lm.confidence {
        *c = r.random_range(0.2..1.0);
    }
    lm
}

fn ground_truth_shape(model: &BodyModel, active: usize, seed: u64) -> Vec<f64> {
    let mut r = rng(seed);
    let mut beta = vec![0.0; model.shape_dim()];
    for b in beta.iter_mut().take(active) {
        *b = r.random_range(-1.0..1.0);
    }
    beta
}

fn mean_landmark_error(model: &BodyModel, params: &AvatarParams, lm: &LandmarkSet) -> f64 {
    let posed = naive_skin(model, params);
    let total: f64 = lm
        .vertices
        .iter()
        .zip(&lm.points)
        .map(|(&v, e)| (posed[v as usize] - e).norm())
        .sum();
    total / lm.len() as f64
}

#[test]
fn residual_matches_naive_loop() {
    let model = toy_model(&ToyModelConfig::coarse());
    let cfg = FitConfig::default();
    let mut r = rng(3);
    for seed in 0..10 {
        let params = random_params(&model, &mut r, 0.4);
        let lm = jittered_landmarks(&model, seed);
        let got = fit_residual(&model, &params, &lm, &cfg).unwrap();
        let want = loop_loss(&model, &params, &lm, &cfg);
        assert!(relative_error(got, want, 1e-12) < 1e-12, "{got} vs {want}");
    }
}

#[test]
fn residual_gradient_matches_central_differences() {
    let model = toy_model(&ToyModelConfig::coarse());
    let cfg = FitConfig {
        reg_weight_shape: 0.3,
        reg_weight_expr: 0.2,
        ..Default::default()
    };
    let mut r = rng(8);
    let mut probes = 0;
    for seed in 0..2 {
        let params = random_params(&model, &mut r, 0.3);
        let lm = jittered_landmarks(&model, seed);
        let (_, g) = fit_residual_with_gradient(&model, &params, &lm, &cfg).unwrap();
        let (nb, nt) = (model.shape_dim(), model.pose_dim());
        let flat: Vec<f64> = params
            .beta
            .iter()
            .chain(&params.theta)
            .chain(&params.psi)
            .copied()
            .collect();
        let f = |x: &[f64]| {
            let p = AvatarParams {
                beta: x[..nb].to_vec(),
                theta: x[nb..nb + nt].to_vec(),
                psi: x[nb + nt..].to_vec(),
            };
            loop_loss(&model, &p, &lm, &cfg)
        };
        let fd = central_difference(f, &flat, 1e-6);
        let analytic: Vec<f64> = g
            .beta
            .iter()
            .chain(&g.theta)
            .chain(&g.psi)
            .copied()
            .collect();
        for (i, (a, n)) in analytic.iter().zip(&fd).enumerate() {
            assert!(
                relative_error(*a, *n, 1e-6) < 1e-4,
                "coordinate {i}: {a} vs {n}"
            );
            probes += 1;
        }
    }
    assert!(probes >= 50);
}

#[test]
fn loss_is_nonnegative_and_zero_only_at_exact_fit() {
    let model = toy_model(&ToyModelConfig::coarse());
    let cfg = FitConfig::default();
    let mut r = rng(12);
    for seed in 0..5 {
        let params = random_params(&model, &mut r, 0.3);
        let lm = jittered_landmarks(&model, seed);
        assert!(fit_residual(&model, &params, &lm, &cfg).unwrap() > 0.0);
    }
    let rest = AvatarParams::rest(&model);
    let lm = LandmarkSet::from_model(&model, &rest).unwrap();
    assert_eq!(fit_residual(&model, &rest, &lm, &cfg).unwrap(), 0.0);
}

#[test]
fn recovers_ten_active_shape_coefficients() {
    let model = toy_model(&ToyModelConfig::default());
    let beta = ground_truth_shape(&model, 10, 21);
    let truth = AvatarParams::with_shape(&model, &beta);
    let lm = LandmarkSet::from_model(&model, &truth).unwrap();
    assert_eq!(lm.len(), 68);
    let start = Instant::now();
    let out = fit_shape(&model, &lm, &FitConfig::recovery()).unwrap();
    let elapsed = start.elapsed().as_secs_f64();
    let err = mean_landmark_error(&model, &out.params, &lm);
    assert!(err < 1e-3, "mean landmark error {err}");
    assert!(elapsed < 60.0, "{elapsed} s");
}

#[test]
fn rest_landmarks_recover_zero_shape() {
    let model = toy_model(&ToyModelConfig::default());
    let lm = LandmarkSet::from_model(&model, &AvatarParams::rest(&model)).unwrap();
    let out = fit_shape(&model, &lm, &FitConfig::default()).unwrap();
    let max = out.params.beta.iter().fold(0.0f64, |m, b| m.max(b.abs()));
    assert!(max < 1e-2, "{max}");
}

#[test]
fn stronger_regularization_shrinks_the_shape() {
    let model = toy_model(&ToyModelConfig::default());
    for seed in [1, 2, 3] {
        let beta = ground_truth_shape(&model, 10, seed);
        let lm = LandmarkSet::from_model(&model, &AvatarParams::with_shape(&model, &beta)).unwrap();
        let base = FitConfig::recovery();
        let heavy = FitConfig {
            reg_weight_shape: base.reg_weight_shape * 100.0,
            reg_weight_expr: base.reg_weight_expr * 100.0,
            ..base.clone()
        };
        let norm = |c: &FitConfig| {
            let out = fit_shape(&model, &lm, c).unwrap();
            out.params.beta.iter().map(|b| b * b).sum::<f64>().sqrt()
        };
        let (a, b) = (norm(&base), norm(&heavy));
        assert!(b < a, "seed {seed}: {b} >= {a}");
    }
}
