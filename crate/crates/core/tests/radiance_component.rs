#![allow(clippy::needless_range_loop)]

mod common;

use common::{central_difference, relative_error, rng};
use compavatar_core::body_model::toy::{toy_model, ToyModelConfig, HEAD_CENTER, HEAD_RADIUS};
use compavatar_core::body_model::AvatarParams;
use compavatar_core::bvh::Bvh;
use compavatar_core::camera::{Orbit, Ray};
use compavatar_core::image::FeatureImage;
use compavatar_core::math::{affine, rodrigues, Mat3, Mat4, Vec3};
use compavatar_core::mesh::Mesh;
use compavatar_core::oracle::synthetic::{surface_features, AffineCodec, ProceduralOracle};
use compavatar_core::radiance_component::canonical::{CanonicalFrame, CanonicalMap};
use compavatar_core::radiance_component::component::calibration_pairs;
use compavatar_core::radiance_component::field::{
    ChannelMode, ConstantField, EmptyField, Field, MlpConfig, NerfMlp, RgbAdapter, SphereField,
    TrainableField,
};
use compavatar_core::radiance_component::render::{
    render_image, render_image_backward, RenderSettings, ViewRays,
};
use compavatar_core::radiance_component::sampling::{hash_uniform, RaySamples};
use compavatar_core::radiance_component::volume::{
    alphas, composite, render_mask, render_ray, render_ray_hybrid,
};
use compavatar_core::texture_paint::TextureMap;
use compavatar_core::Error;
use rand::Rng;

fn random_unit(r: &mut impl Rng) -> Vec3 {
    loop {
        let v = Vec3::new(
            r.random_range(-1.0..1.0),
            r.random_range(-1.0..1.0),
            r.random_range(-1.0..1.0),
        );
        let n = v.norm();
        if n > 0.1 && n <= 1.0 {
            return v / n;
        }
    }
}

/// Plane intersection followed by signed-area barycentrics.
fn plane_hit(ray: &Ray, tri: &[Vec3; 3]) -> Option<(f64, [f64; 3])> {
    let e1 = tri[1] - tri[0];
    let e2 = tri[2] - tri[0];
    let n = e1.cross(&e2);
    let denom = n.dot(&ray.direction);
    if denom.abs() <= 1e-12 * e1.norm() * e2.norm() {
        return None;
    }
    let t = n.dot(&(tri[0] - ray.origin)) / denom;
    if t <= 1e-9 {
        return None;
    }
    let p = ray.origin + ray.direction * t;
    let area = n.norm_squared();
    let w0 = (tri[1] - p).cross(&(tri[2] - p)).dot(&n) / area;
    let w1 = (tri[2] - p).cross(&(tri[0] - p)).dot(&n) / area;
    let w2 = 1.0 - w0 - w1;
    (w0 >= 0.0 && w1 >= 0.0 && w2 >= 0.0).then_some((t, [w0, w1, w2]))
}

fn brute_force_first(ray: &Ray, mesh: &Mesh) -> Option<(f64, usize)> {
    let mut best: Option<(f64, usize)> = None;
    for f in 0..mesh.faces.len() {
        if let Some((t, _)) = plane_hit(ray, &mesh.triangle(f)) {
            if best.is_none_or(|(bt, _)| t < bt) {
                best = Some((t, f));
            }
        }
    }
    best
}

fn triangle_soup(faces: usize, seed: u64) -> Mesh {
    let mut r = rng(seed);
    let mut vertices = Vec::new();
    let mut tris = Vec::new();
    for f in 0..faces {
        let c = Vec3::new(
            r.random_range(-1.0..1.0),
            r.random_range(-1.0..1.0),
            r.random_range(-1.0..1.0),
        );
        for _ in 0..3 {
            vertices.push(c + random_unit(&mut r) * r.random_range(0.05..0.3));
        }
        tris.push([3 * f as u32, 3 * f as u32 + 1, 3 * f as u32 + 2]);
    }
    Mesh::new(vertices, tris, None).unwrap()
}

#[test]
fn bvh_matches_exhaustive_intersection() {
    let mesh = triangle_soup(500, 3);
    let bvh = Bvh::build(&mesh);
    let mut r = rng(4);
    let mut hits = 0;
    for _ in 0..10_000 {
        let origin = random_unit(&mut r) * 2.5;
        let aim = Vec3::new(
            r.random_range(-0.8..0.8),
            r.random_range(-0.8..0.8),
            r.random_range(-0.8..0.8),
        );
        let ray = Ray {
            origin,
            direction: (aim - origin).normalize(),
        };
        let fast = bvh.intersect_first(&ray);
        let slow = brute_force_first(&ray, &mesh);
        match (fast, slow) {
            (None, None) => {}
            (Some(h), Some((t, f))) => {
                hits += 1;
                assert_eq!(h.face, f);
                assert!((h.t - t).abs() < 1e-9);
            }
            other => panic!("bvh and exhaustive search disagree: {other:?}"),
        }
    }
    assert!(hits > 1000, "only {hits} rays hit");
}

#[test]
fn zero_density_renders_nothing() {
    let s = RaySamples::uniform(Vec3::zeros(), Vec3::z(), -1.0, 1.0, 32);
    let c = render_ray(&EmptyField { channels: 4 }, &s);
    assert_eq!(c.color, vec![0.0; 4]);
    assert_eq!(c.mask, 0.0);
    let (a, t) = alphas(&[0.0; 32], &s.deltas);
    assert!(a.iter().all(|&v| v == 0.0));
    assert_eq!(t, 1.0);
}

#[test]
fn constant_density_matches_closed_form() {
    for (sigma, bins) in [(0.3, 16), (2.5, 96), (40.0, 128)] {
        let field = ConstantField {
            sigma,
            color: vec![0.2, -0.7, 1.3, 0.5],
        };
        let s = RaySamples::uniform(Vec3::zeros(), Vec3::x(), -1.0, 1.0, bins);
        let c = render_ray(&field, &s);
        let expect = 1.0 - (-sigma * 2.0f64).exp();
        for k in 0..4 {
            assert!((c.color[k] - field.color[k] * expect).abs() < 1e-6);
        }
        assert!((render_mask(&field, &s) - expect).abs() < 1e-6);
    }
}

#[test]
fn two_sample_ray_matches_hand_arithmetic() {
    let sigmas = [1.5, 0.4];
    let deltas = [0.2, 0.5];
    let colors = [1.0, 0.0, 0.25, 0.75];
    let a1 = 1.0 - (-0.3f64).exp();
    let a2 = (-0.3f64).exp() * (1.0 - (-0.2f64).exp());
    let c = composite(&sigmas, &colors, &deltas, 2, None);
    assert!((c.color[0] - (a1 * 1.0 + a2 * 0.25)).abs() < 1e-15);
    assert!((c.color[1] - (a1 * 0.0 + a2 * 0.75)).abs() < 1e-15);
    assert!((c.mask - (a1 + a2)).abs() < 1e-15);
    assert!((c.transmittance - (-0.5f64).exp()).abs() < 1e-15);
}

#[test]
fn accumulated_opacity_telescopes() {
    let mut r = rng(11);
    for _ in 0..1000 {
        let n = r.random_range(2..130);
        let sigmas: Vec<f64> = (0..n)
            .map(|_| r.random_range(0.0..20.0) * r.random::<f64>())
            .collect();
        let deltas: Vec<f64> = (0..n).map(|_| r.random_range(0.0..0.05)).collect();
        let (a, t) = alphas(&sigmas, &deltas);
        let optical: f64 = sigmas.iter().zip(&deltas).map(|(s, d)| s * d).sum();
        let sum: f64 = a.iter().sum();
        assert!((sum - (1.0 - (-optical).exp())).abs() < 1e-6);
        assert!((sum + t - 1.0).abs() < 1e-6);
    }
}

#[test]
fn transparent_hybrid_returns_surface_bit_exactly() {
    let mut r = rng(12);
    for _ in 0..100 {
        let surface: Vec<f64> = (0..4).map(|_| r.random_range(-2.0..2.0)).collect();
        let hit = r.random_range(-0.9..1.0);
        let s = RaySamples::uniform(Vec3::zeros(), Vec3::y(), -1.0, hit, 95);
        let c = render_ray_hybrid(&EmptyField { channels: 4 }, &s, &surface);
        assert_eq!(c.color, surface);
    }
}

#[test]
fn opaque_first_sample_hides_surface() {
    let field = SphereField {
        center: Vec3::new(0.0, 0.0, -0.95),
        radius: 0.04,
        sigma: 1e5,
        color: vec![0.9, 0.1, 0.3],
    };
    let s = RaySamples::uniform(Vec3::zeros(), Vec3::z(), -1.0, 0.5, 95);
    let c = render_ray_hybrid(&field, &s, &[1.0, 1.0, 1.0]);
    assert!(c.transmittance < 1e-6);
    for k in 0..3 {
        assert!((c.color[k] - field.color[k]).abs() < 1e-6);
    }
}

#[test]
fn hybrid_is_pure_render_plus_remaining_surface() {
    let field = NerfMlp::new(MlpConfig {
        hidden_width: 16,
        position_bands: 3,
        direction_bands: 1,
        density_shift: 0.5,
        seed: 5,
        ..Default::default()
    })
    .unwrap();
    let mut r = rng(13);
    for _ in 0..50 {
        let d = random_unit(&mut r);
        let hit = r.random_range(-0.5..1.0);
        let s = RaySamples::stratified(Vec3::zeros(), d, -1.0, hit, 63, |_| r.random());
        let surface = [0.3, -0.2, 0.8, 1.1];
        let hybrid = render_ray_hybrid(&field, &s, &surface);
        let pure = render_ray(&field, &s);
        // Second pass: transmittance from the summed optical depth.
        let mut optical = 0.0;
        let mut c = [0.0; 4];
        for i in 0..s.len() {
            c.iter_mut().for_each(|v| *v = 0.0);
            optical += field.query(&s.point(i), &d, &mut c) * s.deltas[i];
        }
        let rest = (-optical).exp();
        for k in 0..4 {
            assert!((hybrid.color[k] - (pure.color[k] + rest * surface[k])).abs() < 1e-9);
        }
    }
}

#[test]
fn degenerate_hit_returns_surface() {
    let surface = [0.1, 0.2, 0.3];
    let s = RaySamples::uniform(Vec3::zeros(), Vec3::z(), -1.0, -1.0, 10);
    let field = ConstantField {
        sigma: 5.0,
        color: vec![1.0; 3],
    };
    assert_eq!(
        render_ray_hybrid(&field, &s, &surface).color,
        surface.to_vec()
    );
}

#[test]
fn more_density_never_exposes_more_surface() {
    let mut r = rng(14);
    for _ in 0..200 {
        let n = 20;
        let sigmas: Vec<f64> = (0..n).map(|_| r.random_range(0.0..5.0)).collect();
        let deltas = vec![0.05; n];
        let (_, before) = alphas(&sigmas, &deltas);
        let mut more = sigmas.clone();
        more[r.random_range(0..n)] += r.random_range(0.0..3.0);
        let (_, after) = alphas(&more, &deltas);
        assert!(after <= before);
    }
}

#[test]
fn rgb_hybrid_stays_in_unit_cube() {
    let field = NerfMlp::new(MlpConfig {
        hidden_width: 16,
        position_bands: 3,
        direction_bands: 1,
        mode: ChannelMode::Rgb,
        density_shift: 1.0,
        seed: 8,
        ..Default::default()
    })
    .unwrap();
    let mut r = rng(15);
    for _ in 0..200 {
        let surface = [r.random(), r.random(), r.random()];
        let s = RaySamples::stratified(Vec3::zeros(), random_unit(&mut r), -1.0, 0.7, 31, |_| {
            r.random()
        });
        let c = render_ray_hybrid(&field, &s, &surface);
        assert!(c.color.iter().all(|&v| (0.0..=1.0).contains(&v)));
    }
}

fn rest_scene() -> (
    compavatar_core::body_model::BodyModel,
    AvatarParams,
    Mesh,
    Bvh,
) {
    let model = toy_model(&ToyModelConfig::coarse());
    let params = AvatarParams::rest(&model);
    let mesh = model.skin_mesh(&params).unwrap();
    let bvh = Bvh::build(&mesh);
    (model, params, mesh, bvh)
}

#[test]
fn empty_field_renders_the_encoded_surface() {
    let (model, params, mesh, bvh) = rest_scene();
    let texture = TextureMap::from_fn(32, 32, |r, c| [r as f64 / 32.0, c as f64 / 32.0, 0.5]);
    let oracle = ProceduralOracle::new(mesh.clone(), texture.clone(), None, 2);
    let camera = Orbit::new(25.0, 10.0, 2.8).camera(45.0, 16, 16);
    let base = surface_features(&mesh, &bvh, &texture, &camera, 4, &oracle).unwrap();
    let canonical = CanonicalMap::new(&model, &params, &CanonicalFrame::for_model(&model)).unwrap();
    let rays = ViewRays::new(&camera, Some(&bvh)).unwrap();
    let out = render_image(
        &EmptyField { channels: 4 },
        Some(&canonical),
        &rays,
        Some(&base),
        &RenderSettings::default(),
    )
    .unwrap();
    assert_eq!(out.data, base.data);
    assert!(out.alpha.iter().all(|&a| a == 0.0));
}

fn ray_sphere_entry(ray: &Ray, center: &Vec3, radius: f64) -> Option<f64> {
    let oc = ray.origin - center;
    let b = oc.dot(&ray.direction);
    let disc = b * b - (oc.norm_squared() - radius * radius);
    (disc > 0.0).then(|| -b - disc.sqrt())
}

#[test]
fn sphere_above_scalp_matches_analytic_silhouette() {
    let (model, params, _, bvh) = rest_scene();
    let canonical = CanonicalMap::new(&model, &params, &CanonicalFrame::for_model(&model)).unwrap();
    let center = Vec3::new(
        HEAD_CENTER[0],
        HEAD_CENTER[1] + HEAD_RADIUS + 0.15,
        HEAD_CENTER[2],
    );
    let field = SphereField {
        center,
        radius: 0.12,
        sigma: 500.0,
        color: vec![1.0; 4],
    };
    let settings = RenderSettings {
        bins: 128,
        jitter: false,
        ..Default::default()
    };
    for (az, el) in [(0.0, 0.0), (90.0, 0.0), (-90.0, 15.0)] {
        let camera = Orbit::new(az, el, 2.8).camera(40.0, 48, 48);
        let rays = ViewRays::new(&camera, Some(&bvh)).unwrap();
        let img = render_image(&field, Some(&canonical), &rays, None, &settings).unwrap();
        let (mut inter, mut union) = (0, 0);
        for row in 0..48 {
            for col in 0..48 {
                let ray = camera.pixel_ray(row, col);
                let limit = bvh.intersect_first(&ray).map_or(f64::INFINITY, |h| h.t);
                let truth = ray_sphere_entry(&ray, &center, 0.12).is_some_and(|t| t < limit);
                let got = img.alpha[row * 48 + col] > 0.5;
                inter += (truth && got) as usize;
                union += (truth || got) as usize;
            }
        }
        let iou = inter as f64 / union as f64;
        assert!(iou > 0.95, "view ({az}, {el}) IoU {iou}");
    }
}

#[test]
fn render_is_deterministic_for_a_seed() {
    let (model, params, _, bvh) = rest_scene();
    let canonical = CanonicalMap::new(&model, &params, &CanonicalFrame::for_model(&model)).unwrap();
    let field = NerfMlp::new(MlpConfig {
        hidden_width: 16,
        density_shift: 0.0,
        ..Default::default()
    })
    .unwrap();
    let camera = Orbit::new(-30.0, 5.0, 2.8).camera(45.0, 12, 12);
    let rays = ViewRays::new(&camera, Some(&bvh)).unwrap();
    let settings = RenderSettings {
        seed: 99,
        ..Default::default()
    };
    let a = render_image(&field, Some(&canonical), &rays, None, &settings).unwrap();
    let b = render_image(&field, Some(&canonical), &rays, None, &settings).unwrap();
    assert_eq!(a, b);
    let other = render_image(
        &field,
        Some(&canonical),
        &rays,
        None,
        &RenderSettings {
            seed: 100,
            ..settings
        },
    )
    .unwrap();
    assert_ne!(a.data, other.data);
}

#[test]
fn camera_inside_scene_is_a_configuration_error() {
    let camera = Orbit::new(0.0, 0.0, 0.8).camera(45.0, 8, 8);
    assert!(matches!(
        ViewRays::new(&camera, None),
        Err(Error::Config(_))
    ));
}

#[test]
fn field_gradient_through_render_matches_finite_differences() {
    let (model, params, mesh, bvh) = rest_scene();
    let canonical = CanonicalMap::new(&model, &params, &CanonicalFrame::for_model(&model)).unwrap();
    let config = MlpConfig {
        hidden_width: 12,
        hidden_layers: 3,
        position_bands: 3,
        direction_bands: 1,
        density_shift: 0.0,
        seed: 21,
        ..Default::default()
    };
    let field = NerfMlp::new(config.clone()).unwrap();
    let camera = Orbit::new(40.0, 10.0, 2.8).camera(45.0, 8, 8);
    let rays = ViewRays::new(&camera, Some(&bvh)).unwrap();
    let texture = TextureMap::filled(8, 8, [0.4, 0.5, 0.6]);
    let oracle = ProceduralOracle::new(mesh.clone(), texture.clone(), None, 1);
    let base = surface_features(&mesh, &bvh, &texture, &camera, 4, &oracle).unwrap();
    let settings = RenderSettings {
        bins: 24,
        seed: 3,
        ..Default::default()
    };
    let mut r = rng(22);
    let mut d_out = FeatureImage::new(8, 8, 4);
    d_out
        .data
        .iter_mut()
        .for_each(|v| *v = r.random_range(-1.0..1.0));
    d_out
        .alpha
        .iter_mut()
        .for_each(|v| *v = r.random_range(-1.0..1.0));
    let loss = |p: &[f64]| {
        let f = NerfMlp::from_params(config.clone(), p.to_vec(), false).unwrap();
        let img = render_image(&f, Some(&canonical), &rays, Some(&base), &settings).unwrap();
        let a: f64 = img.data.iter().zip(&d_out.data).map(|(x, w)| x * w).sum();
        let b: f64 = img.alpha.iter().zip(&d_out.alpha).map(|(x, w)| x * w).sum();
        a + b
    };
    let grad = render_image_backward(
        &field,
        Some(&canonical),
        &rays,
        Some(&base),
        &settings,
        &d_out,
    )
    .unwrap();
    let n = field.params().len();
    let probes: Vec<usize> = (0..60).map(|_| r.random_range(0..n)).collect();
    for &i in &probes {
        let fd = central_difference(
            |x| {
                let mut p = field.params().to_vec();
                p[i] = x[0];
                loss(&p)
            },
            &[field.params()[i]],
            1e-5,
        )[0];
        let err = relative_error(grad[i], fd, 1e-7);
        assert!(err < 1e-3, "param {i}: analytic {} numeric {fd}", grad[i]);
    }
}

#[test]
fn canonicalization_is_identity_at_rest() {
    let (model, params, mesh, _) = rest_scene();
    let map = CanonicalMap::new(&model, &params, &CanonicalFrame::for_model(&model)).unwrap();
    let mut r = rng(30);
    for _ in 0..500 {
        let v = mesh.vertices[r.random_range(0..mesh.vertices.len())];
        let x = v + random_unit(&mut r) * r.random_range(0.0..0.3);
        let c = map.canonicalize(&x).unwrap();
        assert!((c.position - x).norm() < 1e-9);
    }
}

#[test]
fn canonicalization_ignores_global_rigid_motion() {
    let model = toy_model(&ToyModelConfig::coarse());
    let mut r = rng(31);
    let base = common::random_params(&model, &mut r, 0.3);
    let frame = CanonicalFrame::for_model(&model);
    let g = rodrigues(&Vec3::new(-0.3, 0.9, 0.2));
    let shift = Vec3::new(0.1, 0.05, -0.2);
    let base_root = rodrigues(&Vec3::from_column_slice(&base.theta[..3]));
    let axis = nalgebra::Rotation3::from_matrix(&(g * base_root)).scaled_axis();
    let mut moved = base.clone();
    moved.theta[..3].copy_from_slice(axis.as_slice());
    let n = moved.theta.len();
    for c in 0..3 {
        moved.theta[n - 3 + c] += shift[c];
    }
    let root = model.joint_positions(&base.beta).unwrap()[0];
    let pivot = root + Vec3::from_column_slice(&base.theta[n - 3..])
        - Vec3::from_column_slice(&model.canonical_pose()[n - 3..]);
    let a = CanonicalMap::new(&model, &base, &frame).unwrap();
    let b = CanonicalMap::new(&model, &moved, &frame).unwrap();
    let posed = a.posed_vertices().to_vec();
    for _ in 0..500 {
        let x =
            posed[r.random_range(0..posed.len())] + random_unit(&mut r) * r.random_range(0.0..0.2);
        let y = g * (x - pivot) + pivot + shift;
        let ca = a.canonicalize(&x).unwrap();
        let cb = b.canonicalize(&y).unwrap();
        assert!((ca.position - cb.position).norm() < 1e-9);
    }
}

#[test]
fn single_joint_rotation_unskins_analytically() {
    let mut r = rng(32);
    let rest: Vec<Vec3> = (0..300)
        .map(|_| {
            Vec3::new(
                r.random_range(-0.4..0.4),
                r.random_range(-0.4..0.4),
                r.random_range(-0.4..0.4),
            )
        })
        .collect();
    let pivot = Vec3::new(0.0, -0.3, 0.05);
    let rot: Mat3 = rodrigues(&Vec3::new(0.2, -0.6, 0.35));
    let posed: Vec<Vec3> = rest.iter().map(|v| rot * (v - pivot) + pivot).collect();
    // Undo the rotation about the pivot: x ↦ Rᵀ (x − p) + p.
    let undo: Mat4 = affine(&rot.transpose(), &(pivot - rot.transpose() * pivot));
    let map = CanonicalMap::from_parts(
        CanonicalFrame::default(),
        posed.clone(),
        vec![undo; rest.len()],
        vec![vec![1.0]; rest.len()],
    );
    for (p, v) in posed.iter().zip(&rest) {
        let c = map.canonicalize(p).unwrap();
        assert!((c.position - v).norm() < 1e-6);
        assert!((c.rotation - rot.transpose()).norm() < 1e-12);
    }
    for _ in 0..200 {
        let y = rest[r.random_range(0..rest.len())] + random_unit(&mut r) * 0.05;
        let x = rot * (y - pivot) + pivot;
        assert!((map.canonicalize(&x).unwrap().position - y).norm() < 1e-6);
    }
}

#[test]
fn points_far_from_the_mesh_are_outside() {
    let (model, params, _, _) = rest_scene();
    let map = CanonicalMap::new(&model, &params, &CanonicalFrame::for_model(&model)).unwrap();
    assert!(map.canonicalize(&Vec3::new(5.0, 5.0, 5.0)).is_none());
}

#[test]
fn jitter_hash_is_uniform_in_unit_interval() {
    let mut sum = 0.0;
    for i in 0..10_000u64 {
        let u = hash_uniform(7, i, i % 13);
        assert!((0.0..1.0).contains(&u));
        sum += u;
    }
    assert!((sum / 10_000.0 - 0.5).abs() < 0.02);
}

#[test]
fn adapter_fit_recovers_an_exact_affine_map() {
    let mut r = rng(40);
    let truth = RgbAdapter {
        weight: core::array::from_fn(|_| r.random_range(-1.0..1.0)),
        bias: core::array::from_fn(|_| r.random_range(-0.5..0.5)),
    };
    let pairs: Vec<([f64; 4], [f64; 3])> = (0..40)
        .map(|_| {
            let z: [f64; 4] = core::array::from_fn(|_| r.random_range(-2.0..2.0));
            let mut c = [0.0; 3];
            for row in 0..3 {
                c[row] = truth.bias[row]
                    + (0..4)
                        .map(|k| truth.weight[row * 4 + k] * z[k])
                        .sum::<f64>();
            }
            (z, c)
        })
        .collect();
    let fit = RgbAdapter::fit(&pairs).unwrap();
    for k in 0..12 {
        assert!((fit.weight[k] - truth.weight[k]).abs() < 1e-6);
    }
    for k in 0..3 {
        assert!((fit.bias[k] - truth.bias[k]).abs() < 1e-6);
    }
}

#[test]
fn adapter_fit_needs_five_pairs() {
    let pairs = vec![([1.0, 0.0, 0.0, 0.0], [0.5; 3]); 4];
    assert!(matches!(RgbAdapter::fit(&pairs), Err(Error::Config(_))));
}

#[test]
fn adapter_fit_inverts_an_affine_codec_on_its_range() {
    let codec = AffineCodec::new(1);
    let rgb = FeatureImage::from_data(
        6,
        1,
        3,
        vec![
            0.1, 0.2, 0.3, 0.9, 0.1, 0.4, 0.5, 0.5, 0.5, 0.0, 1.0, 0.2, 0.7, 0.3, 0.8, 0.2, 0.6,
            0.1,
        ],
    )
    .unwrap();
    let latent = codec.encode(&rgb).unwrap();
    // The codec's latents span only an affine 3-space of the 4 channels.
    let pairs = calibration_pairs(&latent, &rgb).unwrap();
    let fit = RgbAdapter::fit(&pairs).unwrap();
    for (z, c) in &pairs {
        for row in 0..3 {
            let out = fit.bias[row] + (0..4).map(|k| fit.weight[row * 4 + k] * z[k]).sum::<f64>();
            assert!((out - c[row]).abs() < 1e-9, "{out} vs {}", c[row]);
        }
    }
}

#[test]
fn adapter_fit_rejects_identical_latents() {
    let pairs = vec![([0.3, -0.2, 0.1, 0.4], [0.5; 3]); 8];
    assert!(matches!(RgbAdapter::fit(&pairs), Err(Error::Config(_))));
}

#[test]
fn adapter_turns_latent_output_into_color() {
    let mut field = NerfMlp::new(MlpConfig {
        hidden_width: 8,
        seed: 2,
        ..Default::default()
    })
    .unwrap();
    let adapter = RgbAdapter {
        weight: [0.5, 0.0, 0.0, 0.0, 0.0, 0.5, 0.0, 0.0, 0.0, 0.0, 0.5, 0.0],
        bias: [0.1, 0.2, 0.3],
    };
    let x = Vec3::new(0.1, 0.2, 0.3);
    let d = Vec3::z();
    let mut z = [0.0; 4];
    let sigma = field.query(&x, &d, &mut z);
    field.attach_adapter(&adapter).unwrap();
    assert_eq!(field.channels(), 3);
    let mut c = [0.0; 3];
    assert_eq!(field.query(&x, &d, &mut c), sigma);
    let mut expect = [0.0; 3];
    adapter.apply(&z, &mut expect);
    for k in 0..3 {
        assert!((c[k] - expect[k]).abs() < 1e-12);
    }
}
