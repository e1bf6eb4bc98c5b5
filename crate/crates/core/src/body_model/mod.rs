//! Parametric mesh model: template + shape/expression/pose blendshapes,
//! joint regression and linear blend skinning.

mod kinematics;
pub mod toy;

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math::Vec3;
use crate::mesh::Mesh;

pub use kinematics::{ParamGradient, PoseState, VertexTransforms};

/// Shape coefficient count of the full reference model.
pub const REFERENCE_SHAPE_DIM: usize = 300;
/// Expression coefficient count of the full reference model.
pub const REFERENCE_EXPRESSION_DIM: usize = 100;

const WEIGHT_SUM_TOLERANCE: f64 = 1e-6;

/// Named landmark-to-vertex correspondence shipped with a model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LandmarkCorrespondence {
    pub name: String,
    pub vertex: u32,
}

/// Raw model tensors. Row-major layouts:
/// * `shape_basis`: `[vertex][xyz][coeff]`, likewise `expression_basis`
/// * `pose_basis`: `[vertex][xyz][feature]` with `9 * (n_joints - 1)` features,
///   or empty when pose correctives are disabled
/// * `joint_regressor`, `skin_weights`: `[joint][vertex]`
#[derive(Debug, Clone, PartialEq)]
pub struct BodyModelParts {
    pub template_vertices: Vec<Vec3>,
    pub faces: Vec<[u32; 3]>,
    pub uvs: Option<Vec<[f64; 2]>>,
    pub shape_dim: usize,
    pub expression_dim: usize,
    pub shape_basis: Vec<f64>,
    pub expression_basis: Vec<f64>,
    pub pose_basis: Vec<f64>,
    pub joint_regressor: Vec<f64>,
    pub skin_weights: Vec<f64>,
    pub parents: Vec<Option<usize>>,
    pub joint_names: Vec<String>,
    /// The stored canonical ("A-pose") pose vector; the template is posed in it.
    pub canonical_pose: Vec<f64>,
    pub landmarks: Vec<LandmarkCorrespondence>,
}

/// Validated, immutable body model.
#[derive(Debug, Clone, PartialEq)]
pub struct BodyModel {
    parts: BodyModelParts,
    /// Parent-before-child joint order.
    order: Vec<usize>,
    /// `J_reg * T`, one row per joint.
    joint_template: Vec<Vec3>,
    /// `J_reg * S`, laid out `[joint][xyz][coeff]`.
    joint_shape_basis: Vec<f64>,
}

/// Shape, pose and expression coefficients for one avatar.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AvatarParams {
    pub beta: Vec<f64>,
    /// Axis-angle per joint followed by a global translation.
    pub theta: Vec<f64>,
    pub psi: Vec<f64>,
}

impl AvatarParams {
    /// β = 0, θ = θ^c, ψ = 0.
    pub fn rest(model: &BodyModel) -> Self {
        AvatarParams {
            beta: vec![0.0; model.shape_dim()],
            theta: model.canonical_pose().to_vec(),
            psi: vec![0.0; model.expression_dim()],
        }
    }

    /// Same shape, canonical pose, neutral expression.
    pub fn with_shape(model: &BodyModel, beta: &[f64]) -> Self {
        AvatarParams {
            beta: beta.to_vec(),
            ..AvatarParams::rest(model)
        }
    }

    pub fn validate(&self, model: &BodyModel) -> Result<()> {
        if self.beta.len() != model.shape_dim() {
            return Err(Error::param(format!(
                "beta has {} entries, model expects {}",
                self.beta.len(),
                model.shape_dim()
            )));
        }
        if self.theta.len() != model.pose_dim() {
            return Err(Error::param(format!(
                "theta has {} entries, model expects {}",
                self.theta.len(),
                model.pose_dim()
            )));
        }
        if self.psi.len() != model.expression_dim() {
            return Err(Error::param(format!(
                "psi has {} entries, model expects {}",
                self.psi.len(),
                model.expression_dim()
            )));
        }
        let finite = self
            .beta
            .iter()
            .chain(&self.theta)
            .chain(&self.psi)
            .all(|x| x.is_finite());
        if !finite {
            return Err(Error::param("non-finite parameter value"));
        }
        Ok(())
    }
}

impl BodyModel {
    pub fn new(parts: BodyModelParts) -> Result<Self> {
        let order = validate_parts(&parts)?;
        let n_v = parts.template_vertices.len();
        let n_k = parts.parents.len();
        let nb = parts.shape_dim;
        let mut joint_template = vec![Vec3::zeros(); n_k];
        let mut joint_shape_basis = vec![0.0; n_k * 3 * nb];
        for k in 0..n_k {
            let row = &parts.joint_regressor[k * n_v..(k + 1) * n_v];
            for (v, &r) in row.iter().enumerate() {
                if r == 0.0 {
                    continue;
                }
                joint_template[k] += parts.template_vertices[v] * r;
                for c in 0..3 {
                    let src = &parts.shape_basis[(v * 3 + c) * nb..(v * 3 + c + 1) * nb];
                    let dst = &mut joint_shape_basis[(k * 3 + c) * nb..(k * 3 + c + 1) * nb];
                    for (d, s) in dst.iter_mut().zip(src) {
                        *d += r * s;
                    }
                }
            }
        }
        Ok(BodyModel {
            parts,
            order,
            joint_template,
            joint_shape_basis,
        })
    }

    pub fn parts(&self) -> &BodyModelParts {
        &self.parts
    }

    pub fn into_parts(self) -> BodyModelParts {
        self.parts
    }

    pub fn vertex_count(&self) -> usize {
        self.parts.template_vertices.len()
    }

    pub fn joint_count(&self) -> usize {
        self.parts.parents.len()
    }

    pub fn shape_dim(&self) -> usize {
        self.parts.shape_dim
    }

    pub fn expression_dim(&self) -> usize {
        self.parts.expression_dim
    }

    /// `3 * n_joints + 3`.
    pub fn pose_dim(&self) -> usize {
        3 * self.joint_count() + 3
    }

    pub fn pose_feature_dim(&self) -> usize {
        9 * (self.joint_count() - 1)
    }

    pub fn has_pose_correctives(&self) -> bool {
        !self.parts.pose_basis.is_empty()
    }

    pub fn template(&self) -> &[Vec3] {
        &self.parts.template_vertices
    }

    pub fn faces(&self) -> &[[u32; 3]] {
        &self.parts.faces
    }

    pub fn canonical_pose(&self) -> &[f64] {
        &self.parts.canonical_pose
    }

    pub fn parents(&self) -> &[Option<usize>] {
        &self.parts.parents
    }

    pub fn landmarks(&self) -> &[LandmarkCorrespondence] {
        &self.parts.landmarks
    }

    pub fn landmark_vertex(&self, name: &str) -> Option<u32> {
        self.parts
            .landmarks
            .iter()
            .find(|l| l.name == name)
            .map(|l| l.vertex)
    }

    #[inline]
    pub fn skin_weight(&self, joint: usize, vertex: usize) -> f64 {
        self.parts.skin_weights[joint * self.vertex_count() + vertex]
    }

    /// The skin-weight column of a vertex (one entry per joint).
    pub fn skin_weight_column(&self, vertex: usize) -> Vec<f64> {
        (0..self.joint_count())
            .map(|k| self.skin_weight(k, vertex))
            .collect()
    }

    /// Joint positions regressed from the shaped template.
    pub fn joint_positions(&self, beta: &[f64]) -> Result<Vec<Vec3>> {
        if beta.len() != self.shape_dim() {
            return Err(Error::param(format!(
                "beta has {} entries, model expects {}",
                beta.len(),
                self.shape_dim()
            )));
        }
        let nb = self.shape_dim();
        Ok((0..self.joint_count())
            .map(|k| {
                let mut j = self.joint_template[k];
                for c in 0..3 {
                    let basis = &self.joint_shape_basis[(k * 3 + c) * nb..(k * 3 + c + 1) * nb];
                    j[c] += dot(basis, beta);
                }
                j
            })
            .collect())
    }

    /// Template deformation B_i(β, θ, ψ) for every vertex.
    pub fn blend_offsets(&self, params: &AvatarParams) -> Result<Vec<Vec3>> {
        params.validate(self)?;
        let state = PoseState::compute(self, params, false);
        Ok(self.blend_offsets_with(params, &state.pose_features))
    }

    pub(crate) fn blend_offsets_with(
        &self,
        params: &AvatarParams,
        pose_features: &[f64],
    ) -> Vec<Vec3> {
        (0..self.vertex_count())
            .map(|v| self.blend_offset_at(v, params, pose_features))
            .collect()
    }

    pub(crate) fn blend_offset_at(
        &self,
        v: usize,
        params: &AvatarParams,
        pose_features: &[f64],
    ) -> Vec3 {
        let nb = self.shape_dim();
        let ne = self.expression_dim();
        let nf = self.pose_feature_dim();
        let p = &self.parts;
        let mut out = Vec3::zeros();
        for c in 0..3 {
            let row = v * 3 + c;
            let mut acc = dot(&p.shape_basis[row * nb..(row + 1) * nb], &params.beta);
            acc += dot(&p.expression_basis[row * ne..(row + 1) * ne], &params.psi);
            if self.has_pose_correctives() {
                acc += dot(&p.pose_basis[row * nf..(row + 1) * nf], pose_features);
            }
            out[c] = acc;
        }
        out
    }

    pub(crate) fn joint_order(&self) -> &[usize] {
        &self.order
    }

    pub(crate) fn joint_shape_row(&self, joint: usize, axis: usize) -> &[f64] {
        let nb = self.shape_dim();
        &self.joint_shape_basis[(joint * 3 + axis) * nb..(joint * 3 + axis + 1) * nb]
    }

    /// Per-vertex world transforms M_i(β, θ, ψ).
    pub fn vertex_transforms(&self, params: &AvatarParams) -> Result<VertexTransforms> {
        params.validate(self)?;
        Ok(VertexTransforms::compute(self, params))
    }

    /// Posed mesh v_i = (M_i [t_i; 1]).xyz, carrying the model's faces and UVs.
    pub fn skin_mesh(&self, params: &AvatarParams) -> Result<Mesh> {
        let transforms = self.vertex_transforms(params)?;
        Ok(Mesh {
            vertices: transforms.apply(self.template()),
            faces: self.parts.faces.clone(),
            uvs: self.parts.uvs.clone(),
        })
    }

    /// Unposed mesh with the shape/expression/pose blendshapes applied.
    pub fn shaped_template(&self, params: &AvatarParams) -> Result<Vec<Vec3>> {
        let offsets = self.blend_offsets(params)?;
        Ok(self
            .template()
            .iter()
            .zip(offsets)
            .map(|(t, b)| t + b)
            .collect())
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn validate_parts(p: &BodyModelParts) -> Result<Vec<usize>> {
    let n_v = p.template_vertices.len();
    let n_k = p.parents.len();
    if n_v == 0 {
        return Err(Error::model("template_vertices", "model has no vertices"));
    }
    if n_k == 0 {
        return Err(Error::model("parents", "model has no joints"));
    }
    if p.template_vertices
        .iter()
        .any(|v| !v.iter().all(|x| x.is_finite()))
    {
        return Err(Error::model("template_vertices", "non-finite coordinate"));
    }
    for (f, face) in p.faces.iter().enumerate() {
        if face.iter().any(|&i| i as usize >= n_v) {
            return Err(Error::model(
                "faces",
                format!("face {f} indexes past {n_v} vertices"),
            ));
        }
    }
    if let Some(uvs) = &p.uvs {
        if uvs.len() != n_v {
            return Err(Error::model(
                "uvs",
                format!("{} uvs for {n_v} vertices", uvs.len()),
            ));
        }
    }
    let expect = |field: &str, got: usize, want: usize| -> Result<()> {
        if got != want {
            Err(Error::model(
                field,
                format!("has {got} values, expected {want}"),
            ))
        } else {
            Ok(())
        }
    };
    expect("shape_basis", p.shape_basis.len(), n_v * 3 * p.shape_dim)?;
    expect(
        "expression_basis",
        p.expression_basis.len(),
        n_v * 3 * p.expression_dim,
    )?;
    if !p.pose_basis.is_empty() {
        expect("pose_basis", p.pose_basis.len(), n_v * 3 * 9 * (n_k - 1))?;
    }
    expect("joint_regressor", p.joint_regressor.len(), n_k * n_v)?;
    expect("skin_weights", p.skin_weights.len(), n_k * n_v)?;
    expect("canonical_pose", p.canonical_pose.len(), 3 * n_k + 3)?;
    if !p.joint_names.is_empty() {
        expect("joint_names", p.joint_names.len(), n_k)?;
    }
    for (name, data) in [
        ("shape_basis", &p.shape_basis),
        ("expression_basis", &p.expression_basis),
        ("pose_basis", &p.pose_basis),
        ("joint_regressor", &p.joint_regressor),
        ("canonical_pose", &p.canonical_pose),
    ] {
        if data.iter().any(|x| !x.is_finite()) {
            return Err(Error::model(name, "non-finite value"));
        }
    }
    for v in 0..n_v {
        let mut sum = 0.0;
        for k in 0..n_k {
            let w = p.skin_weights[k * n_v + v];
            if !(w >= 0.0) {
                return Err(Error::model(
                    "skin_weights",
                    format!("entry (joint {k}, vertex {v}) is {w}, must be >= 0"),
                ));
            }
            sum += w;
        }
        if (sum - 1.0).abs() > WEIGHT_SUM_TOLERANCE {
            return Err(Error::model(
                "skin_weights",
                format!("column {v} sums to {sum}"),
            ));
        }
    }
    for l in &p.landmarks {
        if l.vertex as usize >= n_v {
            return Err(Error::model(
                "landmarks",
                format!("`{}` maps to vertex {} past {n_v}", l.name, l.vertex),
            ));
        }
    }
    joint_order(&p.parents)
}

/// Parent-before-child traversal; rejects cycles, forests and bad indices.
fn joint_order(parents: &[Option<usize>]) -> Result<Vec<usize>> {
    let n = parents.len();
    let roots: Vec<usize> = (0..n).filter(|&k| parents[k].is_none()).collect();
    if roots.len() != 1 {
        return Err(Error::model(
            "parents",
            format!(
                "kinematic tree needs exactly one root, found {}",
                roots.len()
            ),
        ));
    }
    if let Some(k) = (0..n).find(|&k| matches!(parents[k], Some(p) if p >= n || p == k)) {
        return Err(Error::model(
            "parents",
            format!("joint {k} has an invalid parent"),
        ));
    }
    let mut order = Vec::with_capacity(n);
    let mut placed = vec![false; n];
    order.push(roots[0]);
    placed[roots[0]] = true;
    while order.len() < n {
        let before = order.len();
        for k in 0..n {
            if !placed[k] {
                if let Some(p) = parents[k] {
                    if placed[p] {
                        placed[k] = true;
                        order.push(k);
                    }
                }
            }
        }
        if order.len() == before {
            return Err(Error::model("parents", "kinematic tree contains a cycle"));
        }
    }
    Ok(order)
}

#[cfg(test)]
mod tests {
    use super::toy::{toy_model, ToyModelConfig};
    use super::*;

    #[test]
    fn rejects_weight_column_not_summing_to_one() {
        let mut parts = toy_model(&ToyModelConfig::default()).into_parts();
        let n_v = parts.template_vertices.len();
        for k in 0..parts.parents.len() {
            parts.skin_weights[k * n_v + 3] *= 0.9;
        }
        let err = BodyModel::new(parts).unwrap_err();
        let msg = alloc::string::ToString::to_string(&err);
        assert!(msg.contains("skin_weights"), "{msg}");
        assert!(msg.contains("column 3 sums to 0.9"), "{msg}");
    }

    #[test]
    fn rejects_cyclic_tree() {
        let mut parts = toy_model(&ToyModelConfig::default()).into_parts();
        parts.parents[0] = Some(2);
        parts.parents[1] = None;
        parts.parents[2] = Some(2);
        assert!(matches!(BodyModel::new(parts), Err(Error::Model { .. })));
    }

    #[test]
    fn joint_positions_checks_dimension() {
        let model = toy_model(&ToyModelConfig::default());
        assert!(matches!(
            model.joint_positions(&[0.0; 3]),
            Err(Error::Parameter(_))
        ));
    }

    #[test]
    fn params_reject_non_finite() {
        let model = toy_model(&ToyModelConfig::default());
        let mut p = AvatarParams::rest(&model);
        p.theta[0] = f64::NAN;
        assert!(matches!(model.skin_mesh(&p), Err(Error::Parameter(_))));
    }
}
