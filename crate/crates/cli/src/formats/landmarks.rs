//! Landmark target files: a JSON array of `{index | name, xyz, confidence}`
//! where `index` is a row of the model's correspondence table and `name` one
//! of its semantic names.

use std::path::Path;

use compavatar_core::body_model::BodyModel;
use compavatar_core::landmark_fit::LandmarkSet;
use compavatar_core::math::Vec3;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};
use crate::fsutil;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LandmarkRecord {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub index: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    pub xyz: [f64; 3],
    #[serde(default = "one")]
    pub confidence: f64,
}

fn one() -> f64 {
    1.0
}

/// Resolves records against the model's correspondence table.
pub fn resolve(path: &Path, model: &BodyModel, records: &[LandmarkRecord]) -> Result<LandmarkSet> {
    let table = model.landmarks();
    let mut errors = Vec::new();
    let mut points = Vec::with_capacity(records.len());
    let mut vertices = Vec::with_capacity(records.len());
    let mut confidence = Vec::with_capacity(records.len());
    for (i, r) in records.iter().enumerate() {
        let vertex = match (&r.index, &r.name) {
            (Some(k), None) => table.get(*k).map(|c| c.vertex).ok_or_else(|| {
                format!(
                    "entry {i}: index {k} outside the {}-entry correspondence table",
                    table.len()
                )
            }),
            (None, Some(name)) => model
                .landmark_vertex(name)
                .ok_or_else(|| format!("entry {i}: no landmark named `{name}`")),
            _ => Err(format!("entry {i}: give exactly one of `index` or `name`")),
        };
        match vertex {
            Ok(v) => {
                points.push(Vec3::from(r.xyz));
                vertices.push(v);
                confidence.push(r.confidence);
            }
            Err(e) => errors.push(e),
        }
    }
    if !errors.is_empty() {
        return Err(CliError::format(path, errors.join("; ")));
    }
    LandmarkSet::new(points, vertices, confidence)
        .map_err(|e| CliError::format(path, e.to_string()))
}

pub fn load_landmarks(path: &Path, model: &BodyModel) -> Result<LandmarkSet> {
    let records: Vec<LandmarkRecord> = fsutil::read_json(path)?;
    resolve(path, model, &records)
}

/// Records naming every correspondence-table entry by index.
pub fn records_for(set: &LandmarkSet, model: &BodyModel) -> Vec<LandmarkRecord> {
    let table = model.landmarks();
    set.points
        .iter()
        .zip(&set.vertices)
        .zip(&set.confidence)
        .map(|((p, v), c)| LandmarkRecord {
            index: table.iter().position(|t| t.vertex == *v),
            name: None,
            xyz: [p.x, p.y, p.z],
            confidence: *c,
        })
        .collect()
}

pub fn save_landmarks(path: &Path, set: &LandmarkSet, model: &BodyModel) -> Result<()> {
    fsutil::write_json(path, &records_for(set, model))
}
