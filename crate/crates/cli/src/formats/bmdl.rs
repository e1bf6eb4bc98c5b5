//! Body model container (`.bmdl`): JSON manifest with counts, names and
//! tensor locations followed by float64/u32 tensor blocks.

use std::path::Path;

use compavatar_core::body_model::{BodyModel, BodyModelParts, LandmarkCorrespondence};
use compavatar_core::math::Vec3;
use compavatar_core::Error as CoreError;
use serde::{Deserialize, Serialize};

use super::container::{self, BlockSpec, BlockWriter};
use crate::error::{CliError, Result};
use crate::fsutil;

pub const MAGIC: &[u8; 4] = b"BMDL";
pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Counts {
    pub vertices: usize,
    pub faces: usize,
    pub joints: usize,
    pub shape_dim: usize,
    pub expression_dim: usize,
    pub pose_features: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub schema_version: u32,
    pub counts: Counts,
    pub joint_names: Vec<String>,
    pub parents: Vec<Option<usize>>,
    pub landmarks: Vec<LandmarkCorrespondence>,
    pub tensors: Vec<BlockSpec>,
}

pub fn encode_model(model: &BodyModel) -> Vec<u8> {
    let p = model.parts();
    let (n_v, n_k) = (p.template_vertices.len(), p.parents.len());
    let nf = if p.pose_basis.is_empty() {
        0
    } else {
        9 * (n_k - 1)
    };
    let mut w = BlockWriter::default();
    let flat: Vec<f64> = p
        .template_vertices
        .iter()
        .flat_map(|v| [v.x, v.y, v.z])
        .collect();
    w.f64s("template_vertices", vec![n_v, 3], &flat);
    let faces: Vec<u32> = p.faces.iter().flatten().copied().collect();
    w.u32s("faces", vec![p.faces.len(), 3], &faces);
    if let Some(uvs) = &p.uvs {
        let flat: Vec<f64> = uvs.iter().flatten().copied().collect();
        w.f64s("uvs", vec![n_v, 2], &flat);
    }
    w.f64s("shape_basis", vec![n_v, 3, p.shape_dim], &p.shape_basis);
    w.f64s(
        "expression_basis",
        vec![n_v, 3, p.expression_dim],
        &p.expression_basis,
    );
    w.f64s("pose_basis", vec![n_v, 3, nf], &p.pose_basis);
    w.f64s("joint_regressor", vec![n_k, n_v], &p.joint_regressor);
    w.f64s("skin_weights", vec![n_k, n_v], &p.skin_weights);
    w.f64s(
        "canonical_pose",
        vec![p.canonical_pose.len()],
        &p.canonical_pose,
    );
    let manifest = Manifest {
        schema_version: SCHEMA_VERSION,
        counts: Counts {
            vertices: n_v,
            faces: p.faces.len(),
            joints: n_k,
            shape_dim: p.shape_dim,
            expression_dim: p.expression_dim,
            pose_features: nf,
        },
        joint_names: p.joint_names.clone(),
        parents: p.parents.clone(),
        landmarks: p.landmarks.clone(),
        tensors: w.specs.clone(),
    };
    w.finish(MAGIC, &manifest)
}

pub fn decode_model(path: &Path, bytes: &[u8]) -> Result<BodyModel> {
    let (m, blocks) = container::decode::<Manifest>(path, bytes, MAGIC)?;
    if m.schema_version != SCHEMA_VERSION {
        return Err(CliError::format(
            path,
            format!(
                "schema_version {} is not supported (expected {SCHEMA_VERSION})",
                m.schema_version
            ),
        ));
    }
    let c = &m.counts;
    let get = |name: &str| container::find(path, &m.tensors, name);
    let template = blocks.f64s(get("template_vertices")?, &[c.vertices, 3])?;
    let faces = blocks.u32s(get("faces")?, &[c.faces, 3])?;
    let uvs = match m.tensors.iter().find(|s| s.name == "uvs") {
        Some(spec) => Some(
            blocks
                .f64s(spec, &[c.vertices, 2])?
                .chunks_exact(2)
                .map(|u| [u[0], u[1]])
                .collect(),
        ),
        None => None,
    };
    let parts = BodyModelParts {
        template_vertices: template
            .chunks_exact(3)
            .map(|v| Vec3::new(v[0], v[1], v[2]))
            .collect(),
        faces: faces.chunks_exact(3).map(|f| [f[0], f[1], f[2]]).collect(),
        uvs,
        shape_dim: c.shape_dim,
        expression_dim: c.expression_dim,
        shape_basis: blocks.f64s(get("shape_basis")?, &[c.vertices, 3, c.shape_dim])?,
        expression_basis: blocks
            .f64s(get("expression_basis")?, &[c.vertices, 3, c.expression_dim])?,
        pose_basis: blocks.f64s(get("pose_basis")?, &[c.vertices, 3, c.pose_features])?,
        joint_regressor: blocks.f64s(get("joint_regressor")?, &[c.joints, c.vertices])?,
        skin_weights: blocks.f64s(get("skin_weights")?, &[c.joints, c.vertices])?,
        parents: m.parents.clone(),
        joint_names: m.joint_names.clone(),
        canonical_pose: blocks.f64s(get("canonical_pose")?, &[3 * c.joints + 3])?,
        landmarks: m.landmarks.clone(),
    };
    BodyModel::new(parts).map_err(|e| match e {
        CoreError::Model { field, reason } => CliError::format(path, format!("{field} {reason}")),
        other => CliError::Core(other),
    })
}

pub fn save_model(model: &BodyModel, path: &Path) -> Result<()> {
    fsutil::write_atomic(path, &encode_model(model))
}

pub fn load_model(path: &Path) -> Result<BodyModel> {
    decode_model(path, &fsutil::read(path)?)
}
