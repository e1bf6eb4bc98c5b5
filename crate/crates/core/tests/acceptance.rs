//! Acceptance suite: one PASS/FAIL line per criterion, synthetic oracles
//! only. Exits non-zero when any criterion fails.

mod common;

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::sync::Arc;
use std::time::Instant;

use common::{central_difference, naive_skin, random_params, relative_error, rng};
use compavatar_core::avatar_compose::{AvatarRig, ComponentAttachment};
use compavatar_core::body_model::toy::{toy_model, ToyModelConfig, HEAD_CENTER, HEAD_RADIUS};
use compavatar_core::body_model::{AvatarParams, BodyModel};
use compavatar_core::bvh::Bvh;
use compavatar_core::camera::{Camera, Orbit, Ray};
use compavatar_core::guidance_losses::{
    binary_entropy, mask_loss, sds_gradient, similarity_loss, sparsity_loss, TrainConfig,
    TrainSession,
};
use compavatar_core::image::FeatureImage;
use compavatar_core::landmark_fit::{fit_shape, FitConfig, LandmarkSet};
use compavatar_core::math::{affine, rodrigues, Mat3, Mat4, Vec3};
use compavatar_core::mesh::Mesh;
use compavatar_core::oracle::synthetic::{
    surface_features, ConstantOracle, LinearCritic, PerfectCritic, ProceduralOracle,
};
use compavatar_core::oracle::NoiseSchedule;
use compavatar_core::radiance_component::canonical::{CanonicalFrame, CanonicalMap};
use compavatar_core::radiance_component::component::{Provenance, RadianceComponent};
use compavatar_core::radiance_component::field::{
    ChannelMode, ConstantField, EmptyField, MlpConfig, NerfMlp, ShellField, SphereField,
    TrainableField,
};
use compavatar_core::radiance_component::render::{
    render_image, render_image_backward, RenderSettings, ViewRays,
};
use compavatar_core::radiance_component::sampling::RaySamples;
use compavatar_core::radiance_component::volume::{
    alphas, render_mask, render_ray, render_ray_hybrid,
};
use compavatar_core::texture_paint::raster::{rasterize, RasterPlan, Sampling};
use compavatar_core::texture_paint::TextureMap;
use rand::Rng;

type Verdict = Result<String, String>;
type Criterion = (&'static str, fn() -> Verdict);

fn ensure(ok: bool, message: impl FnOnce() -> String) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(message())
    }
}

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

fn max_coord(a: &[Vec3], b: &[Vec3]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs().max())
        .fold(0.0, f64::max)
}

fn coarse() -> Arc<BodyModel> {
    Arc::new(toy_model(&ToyModelConfig::coarse()))
}

fn checker(cell: usize, size: usize, phase: usize) -> TextureMap {
    TextureMap::from_fn(size, size, move |r, c| {
        if (r / cell + c / cell + phase).is_multiple_of(2) {
            [0.9, 0.8, 0.7]
        } else {
            [0.3, 0.4, 0.6]
        }
    })
}

fn exact(bins: usize) -> RenderSettings {
    RenderSettings {
        bins,
        jitter: false,
        ..Default::default()
    }
}

fn bits(img: &FeatureImage) -> Vec<u64> {
    img.data
        .iter()
        .chain(&img.alpha)
        .map(|v| v.to_bits())
        .collect()
}

fn rest_pose_identity() -> Verdict {
    let model = toy_model(&ToyModelConfig::default());
    let start = Instant::now();
    let mesh = model
        .skin_mesh(&AvatarParams::rest(&model))
        .map_err(|e| e.to_string())?;
    let elapsed = start.elapsed().as_secs_f64();
    let err = max_coord(&mesh.vertices, model.template());
    ensure(err < 1e-9, || format!("max abs error {err:e}"))?;
    ensure(elapsed < 1.0, || format!("took {elapsed:.3} s"))?;
    Ok(format!("max abs error {err:.1e}, {:.1} ms", elapsed * 1e3))
}

fn lbs_oracle_equivalence() -> Verdict {
    let mut worst = 0.0f64;
    let mut cases = 0;
    for joints in 2..=4 {
        let model = toy_model(&ToyModelConfig {
            joints,
            ..ToyModelConfig::coarse()
        });
        let mut r = rng(100 + joints as u64);
        let count = if joints == 4 { 34 } else { 33 };
        for _ in 0..count {
            let params = random_params(&model, &mut r, 0.6);
            let got = model
                .skin_mesh(&params)
                .map_err(|e| e.to_string())?
                .vertices;
            worst = worst.max(max_coord(&got, &naive_skin(&model, &params)));
            cases += 1;
        }
    }
    ensure(worst < 1e-9, || format!("max abs error {worst:e}"))?;
    Ok(format!(
        "{cases} random parameter sets, max abs error {worst:.1e}"
    ))
}

fn telescoping_identity() -> Verdict {
    let mut r = rng(101);
    let mut worst = 0.0f64;
    for _ in 0..1000 {
        let n = r.random_range(2..130);
        let sigmas: Vec<f64> = (0..n)
            .map(|_| r.random_range(0.0..20.0) * r.random::<f64>())
            .collect();
        let deltas: Vec<f64> = (0..n).map(|_| r.random_range(0.0..0.05)).collect();
        let (a, _) = alphas(&sigmas, &deltas);
        let optical: f64 = sigmas.iter().zip(&deltas).map(|(s, d)| s * d).sum();
        worst = worst.max((a.iter().sum::<f64>() - (1.0 - (-optical).exp())).abs());
    }
    ensure(worst < 1e-6, || format!("telescoping error {worst:e}"))?;
    let mut closed = 0.0f64;
    for (sigma, bins) in [(0.3, 16), (2.5, 96), (40.0, 128)] {
        let field = ConstantField {
            sigma,
            color: vec![0.2, -0.7, 1.3, 0.5],
        };
        let s = RaySamples::uniform(Vec3::zeros(), Vec3::x(), -1.0, 1.0, bins);
        let c = render_ray(&field, &s);
        let expect = 1.0 - (-sigma * 2.0f64).exp();
        for k in 0..4 {
            closed = closed.max((c.color[k] - field.color[k] * expect).abs());
        }
        closed = closed.max((render_mask(&field, &s) - expect).abs());
    }
    ensure(closed < 1e-6, || {
        format!("constant-density error {closed:e}")
    })?;
    Ok(format!(
        "1000 rays, max error {worst:.1e}; constant density error {closed:.1e}"
    ))
}

fn hybrid_limits() -> Verdict {
    let model = coarse();
    let params = AvatarParams::rest(&model);
    let mesh = model.skin_mesh(&params).map_err(|e| e.to_string())?;
    let bvh = Bvh::build(&mesh);
    let texture = TextureMap::from_fn(32, 32, |r, c| [r as f64 / 32.0, c as f64 / 32.0, 0.5]);
    let oracle = ProceduralOracle::new(mesh.clone(), texture.clone(), None, 2);
    let canonical = CanonicalMap::new(&model, &params, &CanonicalFrame::for_model(&model))
        .map_err(|e| e.to_string())?;
    for az in [0.0, 25.0, 140.0] {
        let camera = Orbit::new(az, 10.0, 2.8).camera(45.0, 24, 24);
        let base = surface_features(&mesh, &bvh, &texture, &camera, 4, &oracle)
            .map_err(|e| e.to_string())?;
        let rays = ViewRays::new(&camera, Some(&bvh)).map_err(|e| e.to_string())?;
        let out = render_image(
            &EmptyField { channels: 4 },
            Some(&canonical),
            &rays,
            Some(&base),
            &RenderSettings::default(),
        )
        .map_err(|e| e.to_string())?;
        ensure(
            out.data
                .iter()
                .map(|v| v.to_bits())
                .eq(base.data.iter().map(|v| v.to_bits())),
            || format!("σ ≡ 0 render differs from the mesh render at azimuth {az}"),
        )?;
    }
    let mut r = rng(102);
    for _ in 0..200 {
        let surface: Vec<f64> = (0..4).map(|_| r.random_range(-2.0..2.0)).collect();
        let s = RaySamples::uniform(
            Vec3::zeros(),
            Vec3::y(),
            -1.0,
            r.random_range(-0.9..1.0),
            95,
        );
        let c = render_ray_hybrid(&EmptyField { channels: 4 }, &s, &surface);
        ensure(
            c.color
                .iter()
                .map(|v| v.to_bits())
                .eq(surface.iter().map(|v| v.to_bits())),
            || "σ ≡ 0 ray does not return the surface value bit-exactly".into(),
        )?;
    }
    let opaque = SphereField {
        center: Vec3::new(0.0, 0.0, -0.95),
        radius: 0.04,
        sigma: 1e5,
        color: vec![0.9, 0.1, 0.3],
    };
    let s = RaySamples::uniform(Vec3::zeros(), Vec3::z(), -1.0, 0.5, 95);
    let weight = render_ray_hybrid(&opaque, &s, &[1.0, 1.0, 1.0]).transmittance;
    ensure(weight < 1e-6, || {
        format!("opaque-limit surface weight {weight:e}")
    })?;
    Ok(format!(
        "bit-exact over 3 views and 200 rays; opaque surface weight {weight:.1e}"
    ))
}

fn gradient_checks() -> Verdict {
    let model = coarse();
    let params = AvatarParams::rest(&model);
    let mesh = model.skin_mesh(&params).map_err(|e| e.to_string())?;
    let bvh = Bvh::build(&mesh);
    let mut r = rng(103);
    let mut worst = [0.0f64; 3];
    let mut probes = [0usize; 3];

    let camera = Orbit::new(-20.0, 5.0, 2.8).camera(45.0, 24, 24);
    let texture = TextureMap::from_fn(16, 16, |_, _| [r.random(), r.random(), r.random()]);
    let weights: Vec<f64> = (0..24 * 24 * 3)
        .map(|_| r.random_range(-1.0..1.0))
        .collect();
    let texel_loss = |colors: &[f64]| {
        let mut t = texture.clone();
        t.colors.copy_from_slice(colors);
        let img = rasterize(&t, &camera, &mesh, Sampling::Bilinear).unwrap();
        img.data
            .iter()
            .zip(&weights)
            .map(|(a, b)| a * b)
            .sum::<f64>()
            / img.data.len() as f64
    };
    let plan = RasterPlan::build(&mesh, &bvh, &camera, 16, 16, Sampling::Bilinear)
        .map_err(|e| e.to_string())?;
    let scaled: Vec<f64> = weights.iter().map(|w| w / weights.len() as f64).collect();
    let grad = plan.backward(&scaled);
    let visible: Vec<usize> = (0..plan.visible_texels().len())
        .filter(|&i| plan.visible_texels()[i])
        .collect();
    for _ in 0..60 {
        let i = 3 * visible[r.random_range(0..visible.len())] + r.random_range(0..3);
        let fd = central_difference(
            |x| {
                let mut c = texture.colors.clone();
                c[i] = x[0];
                texel_loss(&c)
            },
            &[texture.colors[i]],
            1e-4,
        )[0];
        worst[0] = worst[0].max(relative_error(grad[i], fd, 1e-9));
        probes[0] += 1;
    }

    let canonical = CanonicalMap::new(&model, &params, &CanonicalFrame::for_model(&model))
        .map_err(|e| e.to_string())?;
    let config = MlpConfig {
        hidden_width: 12,
        hidden_layers: 3,
        position_bands: 3,
        direction_bands: 1,
        density_shift: 0.0,
        seed: 21,
        ..Default::default()
    };
    let field = NerfMlp::new(config.clone()).map_err(|e| e.to_string())?;
    let camera = Orbit::new(40.0, 10.0, 2.8).camera(45.0, 8, 8);
    let rays = ViewRays::new(&camera, Some(&bvh)).map_err(|e| e.to_string())?;
    let flat = TextureMap::filled(8, 8, [0.4, 0.5, 0.6]);
    let oracle = ProceduralOracle::new(mesh.clone(), flat.clone(), None, 1);
    let base =
        surface_features(&mesh, &bvh, &flat, &camera, 4, &oracle).map_err(|e| e.to_string())?;
    let settings = RenderSettings {
        bins: 24,
        seed: 3,
        ..Default::default()
    };
    let mut d_out = FeatureImage::new(8, 8, 4);
    d_out
        .data
        .iter_mut()
        .for_each(|v| *v = r.random_range(-1.0..1.0));
    d_out
        .alpha
        .iter_mut()
        .for_each(|v| *v = r.random_range(-1.0..1.0));
    let field_loss = |p: &[f64]| {
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
    .map_err(|e| e.to_string())?;
    for _ in 0..60 {
        let i = r.random_range(0..field.params().len());
        let fd = central_difference(
            |x| {
                let mut p = field.params().to_vec();
                p[i] = x[0];
                field_loss(&p)
            },
            &[field.params()[i]],
            1e-5,
        )[0];
        worst[1] = worst[1].max(relative_error(grad[i], fd, 1e-7));
        probes[1] += 1;
    }

    while probes[2] < 150 {
        let target: Vec<f64> = (0..12).map(|_| r.random()).collect();
        let rendered: Vec<f64> = target
            .iter()
            .map(|t| if *t < 0.5 { t + 0.1 } else { t - 0.1 })
            .collect();
        let g = mask_loss(&target, &rendered)
            .map_err(|e| e.to_string())?
            .grad;
        let fd = central_difference(|x| mask_loss(&target, x).unwrap().value, &rendered, 1e-6);
        let mask: Vec<f64> = (0..12).map(|_| r.random_range(0.01..0.99)).collect();
        let gs = sparsity_loss(&mask).grad;
        let fds = central_difference(|x| sparsity_loss(x).value, &mask, 1e-6);
        let zi: Vec<f64> = (0..10).map(|_| r.random_range(-1.0..1.0)).collect();
        let zt: Vec<f64> = (0..10).map(|_| r.random_range(-1.0..1.0)).collect();
        let gz = similarity_loss(&zi, &zt).map_err(|e| e.to_string())?.grad;
        let fdz = central_difference(|x| similarity_loss(x, &zt).unwrap().value, &zi, 1e-6);
        for (a, b) in g
            .iter()
            .zip(&fd)
            .chain(gs.iter().zip(&fds))
            .chain(gz.iter().zip(&fdz))
        {
            worst[2] = worst[2].max(relative_error(*a, *b, 1e-8));
            probes[2] += 1;
        }
    }

    let names = ["texel", "field", "loss"];
    for k in 0..3 {
        ensure(worst[k] < 1e-3 && probes[k] >= 50, || {
            format!(
                "{} gradient: {} probes, max relative error {:e}",
                names[k], probes[k], worst[k]
            )
        })?;
    }
    Ok(format!(
        "max relative error texel {:.1e} ({} probes), field {:.1e} ({}), losses {:.1e} ({})",
        worst[0], probes[0], worst[1], probes[1], worst[2], probes[2]
    ))
}

fn fit_recovery() -> Verdict {
    let model = toy_model(&ToyModelConfig::default());
    let mut r = rng(104);
    let mut worst = 0.0f64;
    let mut slowest = 0.0f64;
    for _ in 0..3 {
        let mut beta = vec![0.0; model.shape_dim()];
        for b in beta.iter_mut().take(10) {
            *b = r.random_range(-1.0..1.0);
        }
        let truth = AvatarParams::with_shape(&model, &beta);
        let lm = LandmarkSet::from_model(&model, &truth).map_err(|e| e.to_string())?;
        ensure(lm.len() == 68, || format!("{} landmarks", lm.len()))?;
        let start = Instant::now();
        let out = fit_shape(&model, &lm, &FitConfig::recovery()).map_err(|e| e.to_string())?;
        slowest = slowest.max(start.elapsed().as_secs_f64());
        let posed = naive_skin(&model, &out.params);
        let err = lm
            .vertices
            .iter()
            .zip(&lm.points)
            .map(|(&v, p)| (posed[v as usize] - p).norm())
            .sum::<f64>()
            / lm.len() as f64;
        worst = worst.max(err);
    }
    ensure(worst < 1e-3, || format!("mean landmark error {worst:e}"))?;
    ensure(slowest < 60.0, || format!("fit took {slowest:.1} s"))?;
    Ok(format!(
        "3 subjects, worst mean landmark error {worst:.1e}, slowest fit {slowest:.2} s"
    ))
}

fn canonicalization() -> Verdict {
    let model = coarse();
    let frame = CanonicalFrame::for_model(&model);
    let rest = AvatarParams::rest(&model);
    let mesh = model.skin_mesh(&rest).map_err(|e| e.to_string())?;
    let map = CanonicalMap::new(&model, &rest, &frame).map_err(|e| e.to_string())?;
    let mut r = rng(105);
    let mut identity = 0.0f64;
    for _ in 0..500 {
        let x = mesh.vertices[r.random_range(0..mesh.vertices.len())]
            + random_unit(&mut r) * r.random_range(0.0..0.3);
        let c = map
            .canonicalize(&x)
            .ok_or("rest point fell outside the canonical map")?;
        identity = identity.max((c.position - x).norm());
    }
    ensure(identity < 1e-9, || {
        format!("rest-pose identity error {identity:e}")
    })?;

    let base = random_params(&model, &mut r, 0.3);
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
    let root = model
        .joint_positions(&base.beta)
        .map_err(|e| e.to_string())?[0];
    let pivot = root + Vec3::from_column_slice(&base.theta[n - 3..])
        - Vec3::from_column_slice(&model.canonical_pose()[n - 3..]);
    let a = CanonicalMap::new(&model, &base, &frame).map_err(|e| e.to_string())?;
    let b = CanonicalMap::new(&model, &moved, &frame).map_err(|e| e.to_string())?;
    let posed = a.posed_vertices().to_vec();
    let mut rigid = 0.0f64;
    for _ in 0..500 {
        let x =
            posed[r.random_range(0..posed.len())] + random_unit(&mut r) * r.random_range(0.0..0.2);
        let y = g * (x - pivot) + pivot + shift;
        let (ca, cb) = match (a.canonicalize(&x), b.canonicalize(&y)) {
            (Some(ca), Some(cb)) => (ca, cb),
            _ => return Err("posed point fell outside the canonical map".into()),
        };
        rigid = rigid.max((ca.position - cb.position).norm());
    }
    ensure(rigid < 1e-9, || format!("rigid invariance error {rigid:e}"))?;

    let rest_points: Vec<Vec3> = (0..300)
        .map(|_| {
            Vec3::new(
                r.random_range(-0.4..0.4),
                r.random_range(-0.4..0.4),
                r.random_range(-0.4..0.4),
            )
        })
        .collect();
    let joint = Vec3::new(0.0, -0.3, 0.05);
    let rot: Mat3 = rodrigues(&Vec3::new(0.2, -0.6, 0.35));
    let posed: Vec<Vec3> = rest_points
        .iter()
        .map(|v| rot * (v - joint) + joint)
        .collect();
    let undo: Mat4 = affine(&rot.transpose(), &(joint - rot.transpose() * joint));
    let single = CanonicalMap::from_parts(
        CanonicalFrame::default(),
        posed.clone(),
        vec![undo; rest_points.len()],
        vec![vec![1.0]; rest_points.len()],
    );
    let mut unskin = 0.0f64;
    for (p, v) in posed.iter().zip(&rest_points) {
        let c = single
            .canonicalize(p)
            .ok_or("posed vertex fell outside the canonical map")?;
        unskin = unskin.max((c.position - v).norm());
    }
    ensure(unskin < 1e-6, || {
        format!("single-joint unskinning error {unskin:e}")
    })?;
    Ok(format!(
        "identity {identity:.1e}, rigid {rigid:.1e}, single joint {unskin:.1e}"
    ))
}

fn sds_contract() -> Verdict {
    let schedule = NoiseSchedule::default();
    let mut render = FeatureImage::new(8, 8, 4);
    let mut r = rng(106);
    render
        .data
        .iter_mut()
        .for_each(|v| *v = r.random_range(-1.0..1.0));
    let perfect = PerfectCritic {
        schedule: schedule.clone(),
    };
    for t in [20, 500, 979] {
        let s = sds_gradient(&render, "p", &perfect, &schedule, t, None, &mut r)
            .map_err(|e| e.to_string())?;
        ensure(s.gradient.data.iter().all(|&g| g == 0.0), || {
            format!("perfect critic gradient nonzero at t = {t}")
        })?;
    }
    let linear = LinearCritic {
        schedule: schedule.clone(),
    };
    let mut worst = 0.0f64;
    for t in [20, 250, 700, 979] {
        let s = sds_gradient(&render, "p", &linear, &schedule, t, None, &mut r)
            .map_err(|e| e.to_string())?;
        let ab = schedule.alpha_bar(t);
        for i in 0..render.data.len() {
            let eps = s.noise.data[i];
            let q_t = ab.sqrt() * render.data[i] + (1.0 - ab).sqrt() * eps;
            worst = worst.max((s.gradient.data[i] - (1.0 - ab) * (q_t - eps)).abs());
        }
    }
    ensure(worst < 1e-9, || format!("linear critic error {worst:e}"))?;
    let a = sds_gradient(&render, "p", &linear, &schedule, 400, None, &mut rng(5))
        .map_err(|e| e.to_string())?;
    let b = sds_gradient(&render, "p", &linear, &schedule, 400, None, &mut rng(5))
        .map_err(|e| e.to_string())?;
    ensure(
        bits(&a.gradient) == bits(&b.gradient) && bits(&a.noise) == bits(&b.noise),
        || "same seed produced different gradients".into(),
    )?;
    Ok(format!(
        "perfect critic exactly zero, linear critic error {worst:.1e}, seeded runs byte-identical"
    ))
}

/// Entry and exit distances of a ray through a sphere.
fn sphere_span(ray: &Ray, center: &Vec3, radius: f64) -> Option<(f64, f64)> {
    let oc = ray.origin - center;
    let b = oc.dot(&ray.direction);
    let disc = b * b - (oc.norm_squared() - radius * radius);
    (disc > 0.0).then(|| (-b - disc.sqrt(), -b + disc.sqrt()))
}

/// Whether the ray passes through the shell region before `limit`, by
/// interval arithmetic on the outer ball minus the inner ball, cut by the
/// half-space y ≥ min_y.
fn ray_meets_shell(ray: &Ray, shell: &ShellField, limit: f64) -> bool {
    let Some((t0, t1)) = sphere_span(ray, &shell.center, shell.outer) else {
        return false;
    };
    let mut pieces = vec![(t0.max(0.0), t1.min(limit))];
    if let Some((i0, i1)) = sphere_span(ray, &shell.center, shell.inner) {
        pieces = pieces
            .into_iter()
            .flat_map(|(a, b)| [(a, b.min(i0)), (a.max(i1), b)])
            .collect();
    }
    let (oy, dy) = (ray.origin.y, ray.direction.y);
    pieces.into_iter().any(|(a, b)| {
        if a >= b {
            return false;
        }
        let (lo, hi) = if dy.abs() < 1e-15 {
            if oy >= shell.min_y {
                (a, b)
            } else {
                return false;
            }
        } else {
            let cross = (shell.min_y - oy) / dy;
            if dy > 0.0 {
                (a.max(cross), b)
            } else {
                (a, b.min(cross))
            }
        };
        lo < hi
    })
}

/// First hit distance over every triangle.
fn exhaustive_hit(ray: &Ray, mesh: &Mesh) -> f64 {
    let mut best = f64::INFINITY;
    for f in 0..mesh.faces.len() {
        let [a, b, c] = mesh.triangle(f);
        let (e1, e2) = (b - a, c - a);
        let p = ray.direction.cross(&e2);
        let det = e1.dot(&p);
        if det.abs() < 1e-14 {
            continue;
        }
        let s = ray.origin - a;
        let u = s.dot(&p) / det;
        let q = s.cross(&e1);
        let v = ray.direction.dot(&q) / det;
        let t = e2.dot(&q) / det;
        if u >= 0.0 && v >= 0.0 && u + v <= 1.0 && t > 1e-9 && t < best {
            best = t;
        }
    }
    best
}

fn analytic_silhouette(shell: &ShellField, mesh: &Mesh, camera: &Camera) -> Vec<bool> {
    let mut out = Vec::with_capacity(camera.width * camera.height);
    for row in 0..camera.height {
        for col in 0..camera.width {
            let ray = camera.pixel_ray(row, col);
            out.push(ray_meets_shell(&ray, shell, exhaustive_hit(&ray, mesh)));
        }
    }
    out
}

fn synthetic_end_to_end() -> Verdict {
    const BUDGET_ITERS: usize = 2000;
    const BUDGET_SECS: f64 = 15.0 * 60.0;
    let model = coarse();
    let texture = checker(8, 64, 0);
    let rig = AvatarRig::new(
        model.clone(),
        &vec![0.0; model.shape_dim()],
        texture.clone(),
    )
    .map_err(|e| e.to_string())?;
    let mesh = model.skin_mesh(&rig.params).map_err(|e| e.to_string())?;
    let shell = ShellField {
        center: Vec3::from(HEAD_CENTER),
        inner: HEAD_RADIUS - 0.02,
        outer: HEAD_RADIUS + 0.14,
        min_y: HEAD_CENTER[1] + 0.1,
        sigma: 40.0,
        color: vec![0.35, 0.2, 0.1],
    };
    let oracle = ProceduralOracle::new(mesh.clone(), texture, Some(shell.clone()), 2);
    let config = TrainConfig {
        iterations: BUDGET_ITERS,
        learning_rate: 1e-3,
        resolution: 32,
        bins: 32,
        mlp: MlpConfig {
            hidden_width: 32,
            position_bands: 6,
            direction_bands: 2,
            ..Default::default()
        },
        ..Default::default()
    };
    let views: Vec<Camera> = [
        (0.0, 0.0),
        (90.0, 10.0),
        (180.0, 0.0),
        (-60.0, 25.0),
        (30.0, -5.0),
    ]
    .into_iter()
    .map(|(az, el)| Orbit::new(az, el, 2.8).camera(45.0, 32, 32))
    .collect();
    let targets: Vec<Vec<bool>> = views
        .iter()
        .map(|c| analytic_silhouette(&shell, &mesh, c))
        .collect();
    let scene = rig.scene().map_err(|e| e.to_string())?;
    let iou = |field: &NerfMlp| -> Result<f64, String> {
        let (mut inter, mut union) = (0usize, 0usize);
        for (camera, target) in views.iter().zip(&targets) {
            let rays = ViewRays::new(camera, Some(&scene.bvh)).map_err(|e| e.to_string())?;
            let img = render_image(field, Some(&scene.canonical), &rays, None, &exact(64))
                .map_err(|e| e.to_string())?;
            for (a, &t) in img.alpha.iter().zip(target) {
                let p = *a > 0.5;
                inter += (p && t) as usize;
                union += (p || t) as usize;
            }
        }
        Ok(inter as f64 / union.max(1) as f64)
    };
    let mut session = TrainSession::learn(&rig, "brown curly hair", "hair", &oracle, &config)
        .map_err(|e| e.to_string())?;
    let start = Instant::now();
    let mut best = 0.0f64;
    for iteration in 1..=BUDGET_ITERS {
        session.step().map_err(|e| e.to_string())?;
        if iteration.is_multiple_of(100) {
            let score = iou(&session.field)?;
            best = best.max(score);
            let elapsed = start.elapsed().as_secs_f64();
            if score >= 0.8 {
                ensure(elapsed <= BUDGET_SECS, || {
                    format!("IoU {score:.3} reached after {elapsed:.0} s")
                })?;
                return Ok(format!(
                    "IoU {score:.3} after {iteration} iterations, {elapsed:.0} s"
                ));
            }
            if elapsed > BUDGET_SECS {
                return Err(format!(
                    "time budget exhausted at iteration {iteration}, best IoU {best:.3}"
                ));
            }
        }
    }
    Err(format!(
        "best IoU {best:.3} after {BUDGET_ITERS} iterations"
    ))
}

fn transfer_invariance() -> Verdict {
    let model = coarse();
    let mut beta = vec![0.0; model.shape_dim()];
    beta[0] = 0.7;
    let source =
        AvatarRig::new(model.clone(), &beta, checker(4, 32, 0)).map_err(|e| e.to_string())?;
    let target = AvatarRig::new(coarse(), &beta, checker(4, 32, 1)).map_err(|e| e.to_string())?;
    let field = NerfMlp::new(MlpConfig {
        hidden_width: 16,
        position_bands: 3,
        direction_bands: 1,
        mode: ChannelMode::Rgb,
        density_shift: 0.5,
        seed: 7,
        ..Default::default()
    })
    .map_err(|e| e.to_string())?;
    let hair = Arc::new(RadianceComponent {
        id: "hair".into(),
        field,
        frame: CanonicalFrame::for_model(&model),
        provenance: Provenance::default(),
    });
    let on_source = source
        .attach(ComponentAttachment::new("hair", 0), hair.clone())
        .map_err(|e| e.to_string())?;
    let mut on_target = target
        .attach(ComponentAttachment::new("hair", 0), hair.clone())
        .map_err(|e| e.to_string())?;
    on_target.texture = on_source.texture.clone();
    let oracle = ConstantOracle { color: [0.5; 3] };
    let mut pixels = 0;
    for az in [0.0, 20.0, 160.0] {
        let camera = Orbit::new(az, 10.0, 2.8).camera(40.0, 32, 32);
        let a = on_source
            .render(&camera, 3, &exact(48), &oracle)
            .map_err(|e| e.to_string())?;
        let b = on_target
            .render(&camera, 3, &exact(48), &oracle)
            .map_err(|e| e.to_string())?;
        ensure(bits(&a) == bits(&b), || {
            format!("transferred render differs at azimuth {az}")
        })?;
        pixels += a.width * a.height;
    }
    let back = on_source.detach("hair").map_err(|e| e.to_string())?;
    ensure(back == source, || "detach did not restore the rig".into())?;
    let camera = Orbit::new(-30.0, 5.0, 2.8).camera(40.0, 32, 32);
    let bare = source
        .render(&camera, 3, &exact(32), &oracle)
        .map_err(|e| e.to_string())?;
    let again = back
        .render(&camera, 3, &exact(32), &oracle)
        .map_err(|e| e.to_string())?;
    ensure(bits(&bare) == bits(&again), || {
        "detached rig renders differently".into()
    })?;
    Ok(format!(
        "{pixels} pixels identical across 3 views; attach/detach restores the rig"
    ))
}

fn loss_constants() -> Verdict {
    let half = binary_entropy(0.5);
    ensure((half - std::f64::consts::LN_2).abs() < 1e-9, || {
        format!("F(0.5) = {half}")
    })?;
    let z = [0.3, -1.2, 2.0, 0.5];
    let neg: Vec<f64> = z.iter().map(|v| -v).collect();
    let same = similarity_loss(&z, &z).map_err(|e| e.to_string())?.value;
    let opposite = similarity_loss(&z, &neg).map_err(|e| e.to_string())?.value;
    let orthogonal = similarity_loss(&[1.0, 0.0, 0.0], &[0.0, 2.0, 0.0])
        .map_err(|e| e.to_string())?
        .value;
    ensure(same == -1.0 && opposite == 1.0 && orthogonal == 0.0, || {
        format!("similarity endpoints {same}, {orthogonal}, {opposite}")
    })?;
    Ok(format!(
        "F(0.5) − ln 2 = {:.1e}; similarity endpoints exact",
        half - std::f64::consts::LN_2
    ))
}

fn main() {
    let criteria: [Criterion; 11] = [
        ("rest-pose identity", rest_pose_identity),
        ("skinning oracle equivalence", lbs_oracle_equivalence),
        (
            "volume rendering telescoping identity",
            telescoping_identity,
        ),
        ("hybrid render limits", hybrid_limits),
        ("gradient checks", gradient_checks),
        ("landmark fit recovery", fit_recovery),
        ("canonicalization", canonicalization),
        ("score distillation contract", sds_contract),
        (
            "synthetic end-to-end component learning",
            synthetic_end_to_end,
        ),
        ("transfer invariance", transfer_invariance),
        ("loss constants", loss_constants),
    ];
    let filter: Vec<String> = std::env::args()
        .skip(1)
        .filter(|a| !a.starts_with('-'))
        .collect();
    let mut failed = 0;
    for (name, check) in criteria {
        if !filter.is_empty() && !filter.iter().any(|f| name.contains(f.as_str())) {
            continue;
        }
        let start = Instant::now();
        let verdict = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|p| {
            Err(p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into()))
        });
        let secs = start.elapsed().as_secs_f64();
        match verdict {
            Ok(detail) => println!("PASS  {name}: {detail} [{secs:.1} s]"),
            Err(reason) => {
                failed += 1;
                println!("FAIL  {name}: {reason} [{secs:.1} s]");
            }
        }
    }
    if failed > 0 {
        std::process::exit(1);
    }
}
