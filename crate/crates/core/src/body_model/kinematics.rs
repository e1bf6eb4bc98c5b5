use alloc::vec;
use alloc::vec::Vec;

use super::{AvatarParams, BodyModel};
use crate::math::{affine, frobenius, rodrigues, rodrigues_with_jacobian, Mat3, Mat4, Vec3};

/// Intermediate forward-kinematics quantities for one parameter set.
#[derive(Debug, Clone)]
pub struct PoseState {
    /// Effective local rotation per joint, R(θ_k) R(θ^c_k)^T.
    pub local_rotations: Vec<Mat3>,
    local_jacobians: Vec<[Mat3; 3]>,
    /// Regressed rest joints J(β).
    pub joints: Vec<Vec3>,
    /// Global transform of each joint frame (rotation, translation).
    pub world_rotations: Vec<Mat3>,
    pub world_translations: Vec<Vec3>,
    /// Skinning transform G_k = A_k [E, -J_k; 0, 1].
    pub skinning: Vec<Mat4>,
    pub pose_features: Vec<f64>,
}

impl PoseState {
    pub(crate) fn compute(model: &BodyModel, params: &AvatarParams, with_jacobian: bool) -> Self {
        let n_k = model.joint_count();
        let canon = model.canonical_pose();
        let mut local_rotations = Vec::with_capacity(n_k);
        let mut local_jacobians = Vec::new();
        for k in 0..n_k {
            let w = Vec3::new(
                params.theta[3 * k],
                params.theta[3 * k + 1],
                params.theta[3 * k + 2],
            );
            let rest_t =
                rodrigues(&Vec3::new(canon[3 * k], canon[3 * k + 1], canon[3 * k + 2])).transpose();
            if with_jacobian {
                let (r, d) = rodrigues_with_jacobian(&w);
                local_rotations.push(r * rest_t);
                local_jacobians.push([d[0] * rest_t, d[1] * rest_t, d[2] * rest_t]);
            } else {
                local_rotations.push(rodrigues(&w) * rest_t);
            }
        }
        let t0 = 3 * n_k;
        let translation = Vec3::new(
            params.theta[t0] - canon[t0],
            params.theta[t0 + 1] - canon[t0 + 1],
            params.theta[t0 + 2] - canon[t0 + 2],
        );
        let joints = model
            .joint_positions(&params.beta)
            .expect("validated params");

        let mut world_rotations = vec![Mat3::identity(); n_k];
        let mut world_translations = vec![Vec3::zeros(); n_k];
        for &k in model.joint_order() {
            match model.parents()[k] {
                None => {
                    world_rotations[k] = local_rotations[k];
                    world_translations[k] = joints[k] + translation;
                }
                Some(p) => {
                    world_rotations[k] = world_rotations[p] * local_rotations[k];
                    world_translations[k] =
                        world_rotations[p] * (joints[k] - joints[p]) + world_translations[p];
                }
            }
        }
        let skinning = (0..n_k)
            .map(|k| {
                affine(
                    &world_rotations[k],
                    &(world_translations[k] - world_rotations[k] * joints[k]),
                )
            })
            .collect();

        let mut pose_features = Vec::new();
        if model.has_pose_correctives() {
            pose_features.reserve(model.pose_feature_dim());
            for k in non_root_joints(model) {
                let d = local_rotations[k] - Mat3::identity();
                for i in 0..3 {
                    for j in 0..3 {
                        pose_features.push(d[(i, j)]);
                    }
                }
            }
        }

        PoseState {
            local_rotations,
            local_jacobians,
            joints,
            world_rotations,
            world_translations,
            skinning,
            pose_features,
        }
    }
}

fn non_root_joints(model: &BodyModel) -> impl Iterator<Item = usize> + '_ {
    (0..model.joint_count()).filter(move |&k| model.parents()[k].is_some())
}

/// Per-vertex 4x4 affine maps taking template vertices to posed vertices.
#[derive(Debug, Clone, PartialEq)]
pub struct VertexTransforms {
    pub matrices: Vec<Mat4>,
}

impl VertexTransforms {
    pub(crate) fn compute(model: &BodyModel, params: &AvatarParams) -> Self {
        let state = PoseState::compute(model, params, false);
        let n_k = model.joint_count();
        let matrices = (0..model.vertex_count())
            .map(|v| {
                let mut blended = Mat4::zeros();
                for k in 0..n_k {
                    let w = model.skin_weight(k, v);
                    if w != 0.0 {
                        blended += state.skinning[k] * w;
                    }
                }
                let offset = model.blend_offset_at(v, params, &state.pose_features);
                blended * affine(&Mat3::identity(), &offset)
            })
            .collect();
        VertexTransforms { matrices }
    }

    pub fn len(&self) -> usize {
        self.matrices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.matrices.is_empty()
    }

    /// Applies each M_i to the matching point.
    pub fn apply(&self, points: &[Vec3]) -> Vec<Vec3> {
        self.matrices
            .iter()
            .zip(points)
            .map(|(m, p)| crate::math::transform_point(m, p))
            .collect()
    }
}

/// Gradient of a scalar w.r.t. (β, θ, ψ).
#[derive(Debug, Clone, PartialEq)]
pub struct ParamGradient {
    pub beta: Vec<f64>,
    pub theta: Vec<f64>,
    pub psi: Vec<f64>,
}

impl BodyModel {
    /// Posed positions of a subset of vertices.
    pub fn posed_vertices(&self, params: &AvatarParams, vertices: &[usize]) -> Vec<Vec3> {
        let state = PoseState::compute(self, params, false);
        vertices
            .iter()
            .map(|&v| self.pose_vertex(&state, params, v).0)
            .collect()
    }

    fn pose_vertex(&self, state: &PoseState, params: &AvatarParams, v: usize) -> (Vec3, Vec3) {
        let shaped = self.template()[v] + self.blend_offset_at(v, params, &state.pose_features);
        let mut out = Vec3::zeros();
        for k in 0..self.joint_count() {
            let w = self.skin_weight(k, v);
            if w != 0.0 {
                out += (state.world_rotations[k] * (shaped - state.joints[k])
                    + state.world_translations[k])
                    * w;
            }
        }
        (out, shaped)
    }

    /// Reverse-mode pullback: given dL/dv for the listed vertices, returns
    /// dL/d(β, θ, ψ) through blendshapes, joint regression and the kinematic
    /// chain.
    pub fn pullback_vertices(
        &self,
        params: &AvatarParams,
        vertices: &[usize],
        grad_vertices: &[Vec3],
    ) -> ParamGradient {
        let n_k = self.joint_count();
        let nb = self.shape_dim();
        let ne = self.expression_dim();
        let nf = self.pose_feature_dim();
        let state = PoseState::compute(self, params, true);

        let mut d_world_rot = vec![Mat3::zeros(); n_k];
        let mut d_world_trans = vec![Vec3::zeros(); n_k];
        let mut d_joints = vec![Vec3::zeros(); n_k];
        let mut d_beta = vec![0.0; nb];
        let mut d_psi = vec![0.0; ne];
        let mut d_features = vec![0.0; if self.has_pose_correctives() { nf } else { 0 }];

        let parts = self.parts();
        for (&v, g) in vertices.iter().zip(grad_vertices) {
            let (_, shaped) = self.pose_vertex(&state, params, v);
            let mut blended_rot_t = Mat3::zeros();
            for k in 0..n_k {
                let w = self.skin_weight(k, v);
                if w == 0.0 {
                    continue;
                }
                let rel = shaped - state.joints[k];
                d_world_rot[k] += g * rel.transpose() * w;
                d_world_trans[k] += g * w;
                d_joints[k] -= state.world_rotations[k].transpose() * g * w;
                blended_rot_t += state.world_rotations[k].transpose() * w;
            }
            let d_shaped = blended_rot_t * g;
            for c in 0..3 {
                let row = v * 3 + c;
                let gc = d_shaped[c];
                if gc == 0.0 {
                    continue;
                }
                for (d, s) in d_beta
                    .iter_mut()
                    .zip(&parts.shape_basis[row * nb..(row + 1) * nb])
                {
                    *d += gc * s;
                }
                for (d, s) in d_psi
                    .iter_mut()
                    .zip(&parts.expression_basis[row * ne..(row + 1) * ne])
                {
                    *d += gc * s;
                }
                if !d_features.is_empty() {
                    for (d, s) in d_features
                        .iter_mut()
                        .zip(&parts.pose_basis[row * nf..(row + 1) * nf])
                    {
                        *d += gc * s;
                    }
                }
            }
        }

        let mut d_local = vec![Mat3::zeros(); n_k];
        for (slot, k) in non_root_joints(self).enumerate() {
            if d_features.is_empty() {
                break;
            }
            d_local[k] += Mat3::from_fn(|i, j| d_features[slot * 9 + i * 3 + j]);
        }

        let mut d_translation = Vec3::zeros();
        for &k in self.joint_order().iter().rev() {
            match self.parents()[k] {
                None => {
                    d_local[k] += d_world_rot[k];
                    d_joints[k] += d_world_trans[k];
                    d_translation += d_world_trans[k];
                }
                Some(p) => {
                    let rp = state.world_rotations[p];
                    let rel = state.joints[k] - state.joints[p];
                    let dr = d_world_rot[k];
                    let dt = d_world_trans[k];
                    d_world_rot[p] +=
                        dr * state.local_rotations[k].transpose() + dt * rel.transpose();
                    d_local[k] += rp.transpose() * dr;
                    d_world_trans[p] += dt;
                    let pulled = rp.transpose() * dt;
                    d_joints[k] += pulled;
                    d_joints[p] -= pulled;
                }
            }
        }

        let mut d_theta = vec![0.0; self.pose_dim()];
        for k in 0..n_k {
            for a in 0..3 {
                d_theta[3 * k + a] = frobenius(&d_local[k], &state.local_jacobians[k][a]);
            }
        }
        for c in 0..3 {
            d_theta[3 * n_k + c] = d_translation[c];
        }
        for k in 0..n_k {
            for c in 0..3 {
                let g = d_joints[k][c];
                if g == 0.0 {
                    continue;
                }
                for (d, s) in d_beta.iter_mut().zip(self.joint_shape_row(k, c)) {
                    *d += g * s;
                }
            }
        }

        ParamGradient {
            beta: d_beta,
            theta: d_theta,
            psi: d_psi,
        }
    }
}
