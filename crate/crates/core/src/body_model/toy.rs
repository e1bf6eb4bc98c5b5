//! Procedural stand-in for a licensed body model: a mirror-symmetric surface
//! of revolution (torso, neck, head) with synthetic blendshape bases.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::PI;
#[allow(unused_imports)]
use num_traits::Float;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{BodyModel, BodyModelParts, LandmarkCorrespondence};
use crate::error::{Error, Result};
use crate::math::{smoothstep, Vec3};

/// Head sphere center and radius in model units.
pub const HEAD_CENTER: [f64; 3] = [0.0, 0.15, 0.0];
pub const HEAD_RADIUS: f64 = 0.42;

#[derive(Debug, Clone, PartialEq)]
pub struct ToyModelConfig {
    /// 2 (torso, head), 3 (+neck) or 4 (+jaw).
    pub joints: usize,
    pub shape_dim: usize,
    pub expression_dim: usize,
    pub longitudes: usize,
    pub head_rings: usize,
    pub pose_correctives: bool,
    pub landmark_count: usize,
    pub seed: u64,
}

impl Default for ToyModelConfig {
    fn default() -> Self {
        ToyModelConfig {
            joints: 4,
            shape_dim: 16,
            expression_dim: 8,
            longitudes: 32,
            head_rings: 24,
            pose_correctives: true,
            landmark_count: 68,
            seed: 7,
        }
    }
}

impl ToyModelConfig {
    /// Coarser mesh for tests that render many images.
    pub fn coarse() -> Self {
        ToyModelConfig {
            longitudes: 20,
            head_rings: 14,
            landmark_count: 40,
            ..Default::default()
        }
    }
}

struct Joint {
    name: &'static str,
    position: Vec3,
    parent: Option<usize>,
}

fn joint_layout(count: usize) -> Vec<Joint> {
    let body = Joint {
        name: "torso",
        position: Vec3::new(0.0, -0.6, 0.0),
        parent: None,
    };
    let neck = Joint {
        name: "neck",
        position: Vec3::new(0.0, -0.4, 0.0),
        parent: Some(0),
    };
    match count {
        2 => vec![
            body,
            Joint {
                name: "head",
                position: Vec3::new(0.0, -0.3, 0.0),
                parent: Some(0),
            },
        ],
        3 | 4 => {
            let mut v = vec![
                body,
                neck,
                Joint {
                    name: "head",
                    position: Vec3::new(0.0, -0.24, 0.0),
                    parent: Some(1),
                },
            ];
            if count == 4 {
                v.push(Joint {
                    name: "jaw",
                    position: Vec3::new(0.0, 0.02, 0.12),
                    parent: Some(2),
                });
            }
            v
        }
        _ => unreachable!("joint count checked by try_toy_model"),
    }
}

/// Profile (radius, height) from the bottom pole to the top pole.
fn profile(head_rings: usize) -> Vec<(f64, f64)> {
    let mut p = vec![
        (0.0, -0.85),
        (0.18, -0.85),
        (0.30, -0.82),
        (0.32, -0.70),
        (0.32, -0.56),
        (0.28, -0.46),
        (0.16, -0.40),
        (0.13, -0.33),
    ];
    let start = 25f64.to_radians();
    for i in 0..=head_rings {
        let a = start + (PI - start) * i as f64 / head_rings as f64;
        let r = if i == head_rings {
            0.0
        } else {
            HEAD_RADIUS * a.sin()
        };
        p.push((r, HEAD_CENTER[1] - HEAD_RADIUS * a.cos()));
    }
    p
}

/// Skin weights (one entry per joint) as a function of rest position.
fn skin_weights_at(count: usize, p: &Vec3) -> Vec<f64> {
    let y = p.y;
    match count {
        2 => {
            let s = smoothstep(-0.45, -0.28, y);
            vec![1.0 - s, s]
        }
        _ => {
            let s1 = smoothstep(-0.54, -0.42, y);
            let s2 = smoothstep(-0.36, -0.22, y);
            let mut w = vec![1.0 - s1, s1 - s2, s2];
            if count == 4 {
                let jaw = smoothstep(0.08, 0.26, p.z) * (1.0 - smoothstep(-0.06, 0.06, y));
                w[2] = s2 * (1.0 - jaw);
                w.push(s2 * jaw);
            }
            w
        }
    }
}

fn head_weight(p: &Vec3) -> f64 {
    smoothstep(-0.36, -0.22, p.y)
}

fn gaussian_bump(p: &Vec3, center: &Vec3, width: f64) -> f64 {
    (-(p - center).norm_squared() / (2.0 * width * width)).exp()
}

/// The toy model; panics on an invalid configuration (see [`try_toy_model`]).
pub fn toy_model(config: &ToyModelConfig) -> BodyModel {
    try_toy_model(config).unwrap_or_else(|e| panic!("{e}"))
}

/// The toy model, or a configuration error for unsupported joint counts,
/// meshes too coarse to carry the requested landmarks, or more landmarks
/// than frontal vertices.
pub fn try_toy_model(config: &ToyModelConfig) -> Result<BodyModel> {
    if !(2..=4).contains(&config.joints) {
        return Err(Error::config(format!(
            "toy model supports 2 to 4 joints, got {}",
            config.joints
        )));
    }
    if config.longitudes < 3 || config.head_rings < 2 {
        return Err(Error::config(
            "toy model needs at least 3 longitudes and 2 head rings",
        ));
    }
    let n_lon = config.longitudes;
    let prof = profile(config.head_rings);
    let n_levels = prof.len();
    let mut arc = vec![0.0; n_levels];
    for i in 1..n_levels {
        let (r0, y0) = prof[i - 1];
        let (r1, y1) = prof[i];
        arc[i] = arc[i - 1] + ((r1 - r0).powi(2) + (y1 - y0).powi(2)).sqrt();
    }
    let total_arc = arc[n_levels - 1];

    // Level 0 and the last level are poles with one vertex per longitude
    // segment; interior levels carry n_lon + 1 vertices (seam duplicated).
    let mut vertices = Vec::new();
    let mut uvs = Vec::new();
    let mut level_start = Vec::with_capacity(n_levels);
    for (level, &(r, y)) in prof.iter().enumerate() {
        level_start.push(vertices.len());
        let v = arc[level] / total_arc;
        let pole = level == 0 || level == n_levels - 1;
        let cols = if pole { n_lon } else { n_lon + 1 };
        for j in 0..cols {
            let u = if pole {
                (j as f64 + 0.5) / n_lon as f64
            } else {
                j as f64 / n_lon as f64
            };
            let phi = -PI + 2.0 * PI * u;
            vertices.push(Vec3::new(r * phi.sin(), y, r * phi.cos()));
            uvs.push([u, v]);
        }
    }
    let mut faces = Vec::new();
    for level in 0..n_levels - 1 {
        let a = level_start[level];
        let b = level_start[level + 1];
        for j in 0..n_lon {
            let j = j as u32;
            let (a, b) = (a as u32, b as u32);
            if level == 0 {
                faces.push([a + j, b + j + 1, b + j]);
            } else if level + 1 == n_levels - 1 {
                faces.push([a + j, a + j + 1, b + j]);
            } else {
                faces.push([a + j, a + j + 1, b + j + 1]);
                faces.push([a + j, b + j + 1, b + j]);
            }
        }
    }

    let n_v = vertices.len();
    let joints = joint_layout(config.joints);
    let n_k = joints.len();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);

    let mut skin_weights = vec![0.0; n_k * n_v];
    for (v, p) in vertices.iter().enumerate() {
        let w = skin_weights_at(n_k, p);
        let sum: f64 = w.iter().sum();
        for k in 0..n_k {
            skin_weights[k * n_v + v] = w[k] / sum;
        }
    }

    // Each joint regresses to the centroid of its nearest ring; the jaw mixes
    // in the front-most vertex of that ring to sit off-axis.
    let mut joint_regressor = vec![0.0; n_k * n_v];
    for (k, joint) in joints.iter().enumerate() {
        let level = (1..n_levels - 1)
            .min_by(|&a, &b| {
                (prof[a].1 - joint.position.y)
                    .abs()
                    .partial_cmp(&(prof[b].1 - joint.position.y).abs())
                    .unwrap()
            })
            .unwrap();
        let start = level_start[level];
        let front_mix = if joint.position.z > 0.0 {
            (joint.position.z / prof[level].0).clamp(0.0, 1.0)
        } else {
            0.0
        };
        for j in 0..n_lon {
            joint_regressor[k * n_v + start + j] += (1.0 - front_mix) / n_lon as f64;
        }
        joint_regressor[k * n_v + start + n_lon / 2] += front_mix;
    }

    let nb = config.shape_dim;
    let mut shape_basis = vec![0.0; n_v * 3 * nb];
    let random_fields: Vec<[f64; 12]> = (0..nb)
        .map(|_| core::array::from_fn(|_| rng.random_range(-1.0..1.0)))
        .collect();
    for (v, p) in vertices.iter().enumerate() {
        let hw = head_weight(p);
        for j in 0..nb {
            let d = match j {
                0 => Vec3::new(0.12 * p.x * hw, 0.0, 0.0),
                1 => Vec3::new(0.0, 0.12 * (p.y - HEAD_CENTER[1]) * hw, 0.0),
                2 => Vec3::new(0.0, 0.0, 0.12 * p.z * hw),
                3 => Vec3::new(0.1 * p.x * (1.0 - hw), 0.0, 0.1 * p.z * (1.0 - hw)),
                4 => Vec3::new(0.0, 0.05 * hw, 0.0),
                _ => {
                    let c = &random_fields[j];
                    let f = 2.0 + (j % 4) as f64;
                    Vec3::new(
                        0.03 * (c[0] * (f * p.y + 3.0 * c[1]).sin()
                            + c[2] * (f * p.z + c[3]).cos()),
                        0.03 * (c[4] * (f * p.x + 3.0 * c[5]).sin()
                            + c[6] * (f * p.z + c[7]).sin()),
                        0.03 * (c[8] * (f * p.x + 3.0 * c[9]).cos()
                            + c[10] * (f * p.y + c[11]).sin()),
                    ) * (0.3 + 0.7 * hw)
                }
            };
            for c in 0..3 {
                shape_basis[(v * 3 + c) * nb + j] = d[c];
            }
        }
    }

    let ne = config.expression_dim;
    let face = |x: f64, y: f64| {
        let z = (HEAD_RADIUS * HEAD_RADIUS - x * x - (y - HEAD_CENTER[1]).powi(2))
            .max(0.0)
            .sqrt();
        Vec3::new(x, y, z)
    };
    let centers = [
        face(0.0, 0.0),
        face(0.12, 0.05),
        face(-0.12, 0.05),
        face(0.08, 0.26),
        face(-0.08, 0.26),
        face(0.0, 0.14),
        face(0.18, 0.18),
        face(-0.18, 0.18),
    ];
    let mut expression_basis = vec![0.0; n_v * 3 * ne];
    for (v, p) in vertices.iter().enumerate() {
        let hw = head_weight(p);
        for j in 0..ne {
            let center = centers[j % centers.len()];
            let bump = gaussian_bump(p, &center, 0.08) * hw;
            let dir = if j % 2 == 0 {
                Vec3::new(0.0, -1.0, 0.3).normalize()
            } else {
                center.normalize()
            };
            let scale = 0.03 * (1.0 + (j / centers.len()) as f64 * 0.5);
            for c in 0..3 {
                expression_basis[(v * 3 + c) * ne + j] = dir[c] * bump * scale;
            }
        }
    }

    let pose_basis = if config.pose_correctives && n_k > 1 {
        let nf = 9 * (n_k - 1);
        let gains: Vec<[f64; 3]> = (0..nf)
            .map(|_| core::array::from_fn(|_| rng.random_range(-1.0..1.0)))
            .collect();
        let mut basis = vec![0.0; n_v * 3 * nf];
        for v in 0..n_v {
            for f in 0..nf {
                let joint = 1 + f / 9;
                let w = skin_weights[joint * n_v + v];
                for c in 0..3 {
                    basis[(v * 3 + c) * nf + f] = 0.02 * w * gains[f][c];
                }
            }
        }
        basis
    } else {
        Vec::new()
    };

    let mut canonical_pose = vec![0.0; 3 * n_k + 3];
    let head = joints.iter().position(|j| j.name == "head").unwrap();
    canonical_pose[3 * head] = 0.05;

    let landmarks = pick_landmarks(&vertices, &level_start, n_lon, config.landmark_count)?;

    let parts = BodyModelParts {
        template_vertices: vertices,
        faces,
        uvs: Some(uvs),
        shape_dim: nb,
        expression_dim: ne,
        shape_basis,
        expression_basis,
        pose_basis,
        joint_regressor,
        skin_weights,
        parents: joints.iter().map(|j| j.parent).collect(),
        joint_names: joints.iter().map(|j| String::from(j.name)).collect(),
        canonical_pose,
        landmarks,
    };
    BodyModel::new(parts)
}

/// Farthest-point sample of frontal face vertices, seeded at the most
/// frontal one.
fn pick_landmarks(
    vertices: &[Vec3],
    level_start: &[usize],
    n_lon: usize,
    count: usize,
) -> Result<Vec<LandmarkCorrespondence>> {
    let first_interior = level_start[1];
    let last_interior_end = *level_start.last().unwrap();
    let candidates: Vec<usize> = (first_interior..last_interior_end)
        .filter(|&v| {
            let col = (v - first_interior) % (n_lon + 1);
            let p = vertices[v];
            col != n_lon && p.z > 0.15 && p.y > -0.15 && p.y < 0.42
        })
        .collect();
    if candidates.len() < count {
        return Err(Error::config(format!(
            "toy mesh has only {} frontal landmark candidates for {count} landmarks",
            candidates.len()
        )));
    }
    if count == 0 {
        return Ok(Vec::new());
    }
    let mut chosen = Vec::with_capacity(count);
    let start = *candidates
        .iter()
        .max_by(|&&a, &&b| vertices[a].z.partial_cmp(&vertices[b].z).unwrap())
        .unwrap();
    chosen.push(start);
    let mut dist: Vec<f64> = candidates
        .iter()
        .map(|&c| (vertices[c] - vertices[start]).norm())
        .collect();
    while chosen.len() < count {
        let (best, _) = dist
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
            .unwrap();
        let v = candidates[best];
        chosen.push(v);
        for (d, &c) in dist.iter_mut().zip(&candidates) {
            *d = d.min((vertices[c] - vertices[v]).norm());
        }
    }
    Ok(chosen
        .into_iter()
        .enumerate()
        .map(|(i, v)| LandmarkCorrespondence {
            name: format!("lm{i:02}"),
            vertex: v as u32,
        })
        .collect())
}
