#![allow(clippy::needless_range_loop)]

//! Independent reference implementations used as test oracles. None of this
//! calls into the library code paths it is compared against.

#![allow(dead_code)]

use compavatar_core::body_model::{
    AvatarParams, BodyModel, BodyModelParts, LandmarkCorrespondence,
};
use compavatar_core::math::{Mat4, Vec3};
use nalgebra::{Rotation3, Vector4};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn rot(w: [f64; 3]) -> nalgebra::Matrix3<f64> {
    Rotation3::from_scaled_axis(Vec3::new(w[0], w[1], w[2])).into_inner()
}

fn hom(m: &nalgebra::Matrix3<f64>, t: &Vec3) -> Mat4 {
    let mut out = Mat4::identity();
    for i in 0..3 {
        for j in 0..3 {
            out[(i, j)] = m[(i, j)];
        }
        out[(i, 3)] = t[i];
    }
    out
}

/// Straight-line transcription of template + blendshapes, joint regression,
/// kinematic chain and skinning with dense loops.
pub fn naive_skin(model: &BodyModel, params: &AvatarParams) -> Vec<Vec3> {
    let p = model.parts();
    let n_v = p.template_vertices.len();
    let n_k = p.parents.len();
    let nb = p.shape_dim;
    let ne = p.expression_dim;

    let theta_of = |src: &[f64], k: usize| [src[3 * k], src[3 * k + 1], src[3 * k + 2]];
    let local: Vec<nalgebra::Matrix3<f64>> = (0..n_k)
        .map(|k| rot(theta_of(&params.theta, k)) * rot(theta_of(&p.canonical_pose, k)).transpose())
        .collect();

    let mut features = Vec::new();
    for k in 0..n_k {
        if p.parents[k].is_some() {
            for i in 0..3 {
                for j in 0..3 {
                    let id = if i == j { 1.0 } else { 0.0 };
                    features.push(local[k][(i, j)] - id);
                }
            }
        }
    }

    let mut shaped_beta_only = vec![Vec3::zeros(); n_v];
    let mut shaped = vec![Vec3::zeros(); n_v];
    for v in 0..n_v {
        for c in 0..3 {
            let row = v * 3 + c;
            let mut s = 0.0;
            for j in 0..nb {
                s += p.shape_basis[row * nb + j] * params.beta[j];
            }
            let mut e = 0.0;
            for j in 0..ne {
                e += p.expression_basis[row * ne + j] * params.psi[j];
            }
            let mut q = 0.0;
            if !p.pose_basis.is_empty() {
                let nf = features.len();
                for f in 0..nf {
                    q += p.pose_basis[row * nf + f] * features[f];
                }
            }
            shaped_beta_only[v][c] = p.template_vertices[v][c] + s;
            shaped[v][c] = p.template_vertices[v][c] + s + e + q;
        }
    }

    let mut joints = vec![Vec3::zeros(); n_k];
    for k in 0..n_k {
        for v in 0..n_v {
            joints[k] += shaped_beta_only[v] * p.joint_regressor[k * n_v + v];
        }
    }

    let t0 = 3 * n_k;
    let trans = Vec3::new(
        params.theta[t0] - p.canonical_pose[t0],
        params.theta[t0 + 1] - p.canonical_pose[t0 + 1],
        params.theta[t0 + 2] - p.canonical_pose[t0 + 2],
    );
    let mut world: Vec<Option<Mat4>> = vec![None; n_k];
    while world.iter().any(|w| w.is_none()) {
        for k in 0..n_k {
            if world[k].is_some() {
                continue;
            }
            match p.parents[k] {
                None => world[k] = Some(hom(&local[k], &(joints[k] + trans))),
                Some(par) => {
                    if let Some(wp) = world[par] {
                        world[k] = Some(wp * hom(&local[k], &(joints[k] - joints[par])));
                    }
                }
            }
        }
    }
    let skin: Vec<Mat4> = (0..n_k)
        .map(|k| world[k].unwrap() * hom(&nalgebra::Matrix3::identity(), &(-joints[k])))
        .collect();

    (0..n_v)
        .map(|v| {
            let h = Vector4::new(shaped[v].x, shaped[v].y, shaped[v].z, 1.0);
            let mut out = Vector4::zeros();
            for k in 0..n_k {
                out += skin[k] * h * p.skin_weights[k * n_v + v];
            }
            Vec3::new(out.x, out.y, out.z)
        })
        .collect()
}

/// 12-vertex prism with `joints` joints along +y and random bases.
pub fn tiny_model(joints: usize, seed: u64) -> BodyModel {
    let mut r = rng(seed);
    let mut verts = Vec::new();
    for level in 0..4 {
        for corner in 0..3 {
            let a = corner as f64 * 2.0 * std::f64::consts::PI / 3.0;
            verts.push(Vec3::new(0.3 * a.cos(), level as f64 * 0.5, 0.3 * a.sin()));
        }
    }
    let n_v = verts.len();
    let mut faces = Vec::new();
    for level in 0..3u32 {
        for c in 0..3u32 {
            let a = level * 3 + c;
            let b = level * 3 + (c + 1) % 3;
            faces.push([a, b, b + 3]);
            faces.push([a, b + 3, a + 3]);
        }
    }
    let nb = 4;
    let ne = 2;
    let shape_basis = (0..n_v * 3 * nb)
        .map(|_| r.random_range(-0.1..0.1))
        .collect();
    let expression_basis = (0..n_v * 3 * ne)
        .map(|_| r.random_range(-0.1..0.1))
        .collect();
    let mut skin = vec![0.0; joints * n_v];
    for v in 0..n_v {
        let mut w: Vec<f64> = (0..joints).map(|_| r.random_range(0.0..1.0)).collect();
        let s: f64 = w.iter().sum();
        w.iter_mut().for_each(|x| *x /= s);
        for k in 0..joints {
            skin[k * n_v + v] = w[k];
        }
    }
    let mut regressor = vec![0.0; joints * n_v];
    for k in 0..joints {
        let level = (k * 3 / joints.max(1)).min(3);
        for c in 0..3 {
            regressor[k * n_v + level * 3 + c] = 1.0 / 3.0;
        }
    }
    let pose_basis = if joints > 1 {
        (0..n_v * 3 * 9 * (joints - 1))
            .map(|_| r.random_range(-0.05..0.05))
            .collect()
    } else {
        Vec::new()
    };
    BodyModel::new(BodyModelParts {
        template_vertices: verts,
        faces,
        uvs: None,
        shape_dim: nb,
        expression_dim: ne,
        shape_basis,
        expression_basis,
        pose_basis,
        joint_regressor: regressor,
        skin_weights: skin,
        parents: (0..joints)
            .map(|k| if k == 0 { None } else { Some(k - 1) })
            .collect(),
        joint_names: Vec::new(),
        canonical_pose: vec![0.0; 3 * joints + 3],
        landmarks: vec![LandmarkCorrespondence {
            name: "tip".into(),
            vertex: 11,
        }],
    })
    .unwrap()
}

pub fn random_params(model: &BodyModel, r: &mut impl Rng, pose_scale: f64) -> AvatarParams {
    let mut p = AvatarParams::rest(model);
    p.beta
        .iter_mut()
        .for_each(|b| *b = r.random_range(-1.0..1.0));
    p.psi
        .iter_mut()
        .for_each(|b| *b = r.random_range(-1.0..1.0));
    p.theta
        .iter_mut()
        .for_each(|t| *t += r.random_range(-pose_scale..pose_scale));
    p
}

/// Central finite differences of a scalar function.
pub fn central_difference(f: impl Fn(&[f64]) -> f64, x: &[f64], h: f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            probe[i] = x[i] + h;
            let fp = f(&probe);
            probe[i] = x[i] - h;
            let fm = f(&probe);
            probe[i] = x[i];
            (fp - fm) / (2.0 * h)
        })
        .collect()
}

/// |a - b| / max(|a|, |b|, floor).
pub fn relative_error(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(floor)
}
