mod common;

use std::sync::Arc;

use compavatar_core::avatar_compose::{animate, AvatarRig, ComponentAttachment};
use compavatar_core::body_model::toy::{toy_model, ToyModelConfig, HEAD_CENTER, HEAD_RADIUS};
use compavatar_core::body_model::BodyModel;
use compavatar_core::camera::{Camera, Orbit};
use compavatar_core::image::FeatureImage;
use compavatar_core::math::Vec3;
use compavatar_core::oracle::synthetic::ConstantOracle;
use compavatar_core::radiance_component::canonical::CanonicalFrame;
use compavatar_core::radiance_component::component::{Provenance, RadianceComponent};
use compavatar_core::radiance_component::field::{ChannelMode, MlpConfig, NerfMlp};
use compavatar_core::radiance_component::render::{render_image, RenderSettings, ViewRays};
use compavatar_core::texture_paint::TextureMap;
use compavatar_core::Error;
use nalgebra::Rotation3;

const ORACLE: ConstantOracle = ConstantOracle { color: [0.5; 3] };

fn checker(seed: usize) -> TextureMap {
    TextureMap::from_fn(32, 32, move |r, c| {
        if (r / 4 + c / 4 + seed).is_multiple_of(2) {
            [0.9, 0.8, 0.7]
        } else {
            [0.2, 0.3, 0.6]
        }
    })
}

fn coarse() -> Arc<BodyModel> {
    Arc::new(toy_model(&ToyModelConfig::coarse()))
}

fn rig_with(model: Arc<BodyModel>, beta0: f64, texture: TextureMap) -> AvatarRig {
    let mut beta = vec![0.0; model.shape_dim()];
    beta[0] = beta0;
    AvatarRig::new(model, &beta, texture).unwrap()
}

/// One hidden ReLU layer reading raw (x, y, z) with an L1 ball of density
/// around `center` in canonical coordinates:
/// σ = softplus(peak − (peak / radius)·Σ|x_i − c_i|), color = sigmoid(logits).
fn l1_ball(center: Vec3, radius: f64, peak: f64, logits: [f64; 3]) -> NerfMlp {
    let config = MlpConfig {
        hidden_width: 6,
        hidden_layers: 1,
        position_bands: 0,
        direction_bands: 0,
        mode: ChannelMode::Rgb,
        density_shift: 0.0,
        seed: 0,
    };
    let inputs = config.input_width();
    let mut params = Vec::new();
    for axis in 0..3 {
        for sign in [1.0, -1.0] {
            let mut row = vec![0.0; inputs];
            row[axis] = sign;
            params.extend(row);
        }
    }
    for axis in 0..3 {
        params.push(-center[axis]);
        params.push(center[axis]);
    }
    params.extend(vec![-peak / radius; 6]);
    for _ in 0..3 {
        params.extend(vec![0.0; 6]);
    }
    params.push(peak);
    params.extend(logits);
    NerfMlp::from_params(config, params, false).unwrap()
}

fn component(id: &str, field: NerfMlp) -> Arc<RadianceComponent> {
    Arc::new(RadianceComponent {
        id: id.into(),
        field,
        frame: CanonicalFrame::for_model(&coarse()),
        provenance: Provenance::default(),
    })
}

fn helmet() -> NerfMlp {
    l1_ball(
        Vec3::new(HEAD_CENTER[0], HEAD_CENTER[1] + 0.2, HEAD_CENTER[2]),
        0.65,
        30.0,
        [2.0, -1.0, -2.0],
    )
}

fn settings(bins: usize) -> RenderSettings {
    RenderSettings {
        bins,
        jitter: false,
        ..Default::default()
    }
}

fn component_only(rig: &AvatarRig, field: &NerfMlp, camera: &Camera, bins: usize) -> FeatureImage {
    let scene = rig.scene().unwrap();
    let rays = ViewRays::new(camera, Some(&scene.bvh)).unwrap();
    render_image(field, Some(&scene.canonical), &rays, None, &settings(bins)).unwrap()
}

fn bits(img: &FeatureImage) -> Vec<u64> {
    img.data
        .iter()
        .chain(&img.alpha)
        .map(|v| v.to_bits())
        .collect()
}

#[test]
fn identical_shapes_render_a_transferred_component_identically() {
    let model = coarse();
    let source = rig_with(model.clone(), 0.7, checker(0));
    let target = rig_with(coarse(), 0.7, checker(1));
    let hair = component("hair", helmet());
    let before = hair.field.params.clone();
    let on_source = source
        .attach(ComponentAttachment::new("hair", 0), hair.clone())
        .unwrap();
    let on_target = target
        .attach(ComponentAttachment::new("hair", 0), hair.clone())
        .unwrap();
    let camera = Orbit::new(20.0, 10.0, 2.8).camera(40.0, 40, 40);
    let a = component_only(&on_source, &hair.field, &camera, 48);
    let b = component_only(&on_target, &hair.field, &camera, 48);
    assert_eq!(bits(&a), bits(&b));
    assert!(a.alpha.iter().any(|&v| v > 0.5));
    let full_a = on_source
        .render(&camera, 3, &settings(48), &ORACLE)
        .unwrap();
    let mut retextured = on_target.clone();
    retextured.texture = on_source.texture.clone();
    let full_b = retextured
        .render(&camera, 3, &settings(48), &ORACLE)
        .unwrap();
    assert_eq!(bits(&full_a), bits(&full_b));
    assert_eq!(hair.field.params, before);
}

/// Horizontal extent in pixels of `alpha > 0.5` on the widest row.
fn silhouette_width(img: &FeatureImage) -> usize {
    (0..img.height)
        .filter_map(|r| {
            let row = &img.alpha[r * img.width..(r + 1) * img.width];
            let first = row.iter().position(|&a| a > 0.5)?;
            let last = row.iter().rposition(|&a| a > 0.5)?;
            Some(last - first + 1)
        })
        .max()
        .unwrap_or(0)
}

fn head_width(rig: &AvatarRig) -> f64 {
    let mesh = rig.scene().unwrap().mesh;
    let head = mesh.vertices.iter().filter(|v| v.y > HEAD_CENTER[1] - 0.1);
    let (lo, hi) = head.fold((f64::MAX, f64::MIN), |(lo, hi), v| {
        (lo.min(v.x), hi.max(v.x))
    });
    hi - lo
}

#[test]
fn a_wider_head_widens_the_component() {
    let model = coarse();
    let field = helmet();
    let camera = Orbit::new(0.0, 0.0, 3.0).camera(40.0, 96, 96);
    let mut previous = (0.0, 0);
    for beta0 in [-1.5, 0.0, 1.5, 3.0] {
        let rig = rig_with(model.clone(), beta0, checker(0));
        let mesh_width = head_width(&rig);
        let width = silhouette_width(&component_only(&rig, &field, &camera, 64));
        assert!(mesh_width > previous.0);
        assert!(
            width > previous.1,
            "β₀ = {beta0}: {width} px after {} px",
            previous.1
        );
        previous = (mesh_width, width);
    }
}

#[test]
fn attach_then_detach_is_a_round_trip() {
    let rig = rig_with(coarse(), 0.0, checker(0));
    let hair = component("hair", helmet());
    let with = rig
        .attach(ComponentAttachment::new("hair", 0), hair.clone())
        .unwrap();
    assert!(matches!(
        with.attach(ComponentAttachment::new("hair", 1), hair.clone()),
        Err(Error::Attachment(_))
    ));
    let back = with.detach("hair").unwrap();
    assert_eq!(back, rig);
    assert!(matches!(back.detach("hair"), Err(Error::Attachment(_))));
    let camera = Orbit::new(-30.0, 5.0, 2.8).camera(40.0, 32, 32);
    let bare = rig.render(&camera, 3, &settings(32), &ORACLE).unwrap();
    assert_eq!(
        bits(&back.render(&camera, 3, &settings(32), &ORACLE).unwrap()),
        bits(&bare)
    );
    let layered = with.render(&camera, 3, &settings(32), &ORACLE).unwrap();
    assert_ne!(bits(&layered), bits(&bare));
    let disabled = with.set_enabled("hair", false).unwrap();
    assert_eq!(
        bits(&disabled.render(&camera, 3, &settings(32), &ORACLE).unwrap()),
        bits(&bare)
    );
}

#[test]
fn mismatched_frame_constants_are_refused() {
    let rig = rig_with(coarse(), 0.0, checker(0));
    let mut other = (*component("hair", helmet())).clone();
    other.frame.tau = 0.2;
    assert!(matches!(
        rig.attach(ComponentAttachment::new("hair", 0), Arc::new(other)),
        Err(Error::Attachment(_))
    ));
}

#[test]
fn components_composite_in_blend_order() {
    let rig = rig_with(coarse(), 0.0, checker(0));
    let a = component("a", helmet());
    let b = component("b", helmet());
    let rig = rig
        .attach(ComponentAttachment::new("b", 1), b)
        .unwrap()
        .attach(ComponentAttachment::new("z", -1), a.clone())
        .unwrap()
        .attach(ComponentAttachment::new("a", 1), a)
        .unwrap();
    let ids: Vec<&str> = rig
        .components()
        .iter()
        .map(|c| c.attachment.id.as_str())
        .collect();
    assert_eq!(ids, ["z", "a", "b"]);
}

#[test]
fn zero_density_component_leaves_the_render_unchanged() {
    let rig = rig_with(coarse(), 0.0, checker(0));
    let config = MlpConfig {
        hidden_width: 8,
        hidden_layers: 1,
        position_bands: 2,
        direction_bands: 1,
        mode: ChannelMode::Rgb,
        density_shift: -1000.0,
        seed: 3,
    };
    let empty = NerfMlp::new(config).unwrap();
    let with = rig
        .attach(
            ComponentAttachment::new("none", 0),
            component("none", empty),
        )
        .unwrap();
    let camera = Orbit::new(45.0, 0.0, 2.8).camera(40.0, 32, 32);
    let bare = rig.render(&camera, 3, &settings(32), &ORACLE).unwrap();
    let layered = with.render(&camera, 3, &settings(32), &ORACLE).unwrap();
    assert_eq!(bits(&layered), bits(&bare));
}

#[test]
fn animation_at_rest_equals_the_static_render() {
    let rig = rig_with(coarse(), 0.5, checker(0))
        .attach(
            ComponentAttachment::new("hair", 0),
            component("hair", helmet()),
        )
        .unwrap();
    let camera = Orbit::new(10.0, 15.0, 2.8).camera(40.0, 32, 32);
    let still = rig.render(&camera, 3, &settings(32), &ORACLE).unwrap();
    let moved = animate(
        &rig,
        &rig.params.theta,
        &rig.params.psi,
        &camera,
        3,
        &settings(32),
        &ORACLE,
    )
    .unwrap();
    assert_eq!(bits(&moved), bits(&still));
    let bad = animate(
        &rig,
        &[0.0; 2],
        &rig.params.psi,
        &camera,
        3,
        &settings(32),
        &ORACLE,
    );
    assert!(matches!(bad, Err(Error::Parameter(_))));
}

fn psnr(a: &FeatureImage, b: &FeatureImage) -> f64 {
    let mse = a
        .data
        .iter()
        .zip(&b.data)
        .map(|(x, y)| (x - y).powi(2))
        .sum::<f64>()
        / a.data.len() as f64;
    10.0 * (1.0 / mse).log10()
}

#[test]
fn root_rotation_matches_a_rotated_camera() {
    let rig = rig_with(coarse(), 0.5, checker(0))
        .attach(
            ComponentAttachment::new("hair", 0),
            component("hair", helmet()),
        )
        .unwrap();
    let angle = 30f64.to_radians();
    let mut theta = rig.params.theta.clone();
    theta[1] = angle;
    let turn = Rotation3::from_axis_angle(&Vec3::y_axis(), angle);
    for view in [Orbit::new(0.0, 10.0, 2.8), Orbit::new(70.0, -5.0, 2.8)] {
        let still_camera = view.camera(40.0, 64, 64);
        let moving_camera = Camera {
            position: turn * still_camera.position,
            target: turn * still_camera.target,
            up: turn * still_camera.up,
            ..still_camera
        };
        let still = rig
            .render(&still_camera, 3, &settings(64), &ORACLE)
            .unwrap();
        let moved = animate(
            &rig,
            &theta,
            &rig.params.psi,
            &moving_camera,
            3,
            &settings(64),
            &ORACLE,
        )
        .unwrap();
        let quality = psnr(&moved, &still);
        assert!(quality > 35.0, "PSNR {quality:.1} dB");
    }
}

/// Toy model whose single expression direction lowers the face smoothly:
/// displacement (0, −0.1·s(z), 0) on head vertices, s rising from back to
/// front.
fn smooth_expression_model() -> Arc<BodyModel> {
    let mut parts = toy_model(&ToyModelConfig {
        expression_dim: 1,
        ..Default::default()
    })
    .into_parts();
    let n_v = parts.template_vertices.len();
    parts.expression_basis = vec![0.0; n_v * 3];
    for (v, p) in parts.template_vertices.iter().enumerate() {
        let on_head = ((p.y + 0.3) / 0.2).clamp(0.0, 1.0);
        let front = ((p.z + HEAD_RADIUS) / (2.0 * HEAD_RADIUS)).clamp(0.0, 1.0);
        parts.expression_basis[v * 3 + 1] = -0.1 * on_head * front;
    }
    Arc::new(BodyModel::new(parts).unwrap())
}

fn alpha_centroid(img: &FeatureImage) -> (f64, f64) {
    let (mut sx, mut sy, mut total) = (0.0, 0.0, 0.0);
    for r in 0..img.height {
        for c in 0..img.width {
            let a = img.alpha[r * img.width + c];
            sx += a * (c as f64 + 0.5);
            sy += a * (r as f64 + 0.5);
            total += a;
        }
    }
    (sx / total, sy / total)
}

#[test]
fn expression_markers_follow_the_surface() {
    let model = smooth_expression_model();
    let rig = rig_with(model.clone(), 0.0, checker(0));
    let neutral = rig.scene().unwrap();
    let probe = Vec3::new(0.1, HEAD_CENTER[1], 1.0);
    let nearest = (0..neutral.mesh.vertices.len())
        .min_by(|&a, &b| {
            let da = (neutral.mesh.vertices[a] - probe).norm();
            let db = (neutral.mesh.vertices[b] - probe).norm();
            da.partial_cmp(&db).unwrap()
        })
        .unwrap();
    let v = neutral.mesh.vertices[nearest];
    let marker = v + (v - Vec3::from(HEAD_CENTER)).normalize() * 0.03;
    let canonical = neutral.canonical.canonicalize(&marker).unwrap().position;
    let field = l1_ball(canonical, 0.05, 40.0, [3.0, 3.0, 3.0]);
    let rig = rig
        .attach(
            ComponentAttachment::new("marker", 0),
            component("marker", field.clone()),
        )
        .unwrap();

    let camera = Orbit::new(0.0, 0.0, 2.4).camera(30.0, 96, 96);
    let psi = [1.0];
    let before = component_only(&rig, &field, &camera, 256);
    let posed = rig.scene_at(&rig.params.theta, &psi).unwrap();
    let rays = ViewRays::new(&camera, Some(&posed.bvh)).unwrap();
    let after = render_image(&field, Some(&posed.canonical), &rays, None, &settings(256)).unwrap();

    let (x0, y0) = alpha_centroid(&before);
    let (x1, y1) = alpha_centroid(&after);
    let (px0, py0, _) = camera.project(&v).unwrap();
    let (px1, py1, _) = camera.project(&posed.mesh.vertices[nearest]).unwrap();
    let tracked = ((x1 - x0).powi(2) + (y1 - y0).powi(2)).sqrt();
    let expected = ((px1 - px0).powi(2) + (py1 - py0).powi(2)).sqrt();
    assert!(expected > 5.0, "vertex moved {expected:.2} px");
    assert!(
        (tracked - expected).abs() < 0.1 * expected,
        "marker moved {tracked:.2} px, vertex {expected:.2} px"
    );

    let full = animate(
        &rig,
        &rig.params.theta,
        &psi,
        &camera,
        3,
        &settings(64),
        &ORACLE,
    )
    .unwrap();
    assert_eq!(full.width, 96);
}
