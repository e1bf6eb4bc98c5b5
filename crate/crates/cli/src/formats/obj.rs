//! Wavefront OBJ text with per-vertex texture coordinates.

use std::fmt::Write as _;
use std::path::Path;

use compavatar_core::math::Vec3;
use compavatar_core::mesh::Mesh;

use crate::error::{CliError, Result};
use crate::fsutil;

/// `v`, then `vt` when the mesh has UVs, then 1-based `f` records. Values use
/// Rust's shortest round-trip float formatting.
pub fn encode_obj(mesh: &Mesh) -> String {
    let mut out = String::new();
    for v in &mesh.vertices {
        let _ = writeln!(out, "v {} {} {}", v.x, v.y, v.z);
    }
    if let Some(uvs) = &mesh.uvs {
        for [u, v] in uvs {
            let _ = writeln!(out, "vt {u} {v}");
        }
    }
    for f in &mesh.faces {
        let [a, b, c] = f.map(|i| i + 1);
        if mesh.uvs.is_some() {
            let _ = writeln!(out, "f {a}/{a} {b}/{b} {c}/{c}");
        } else {
            let _ = writeln!(out, "f {a} {b} {c}");
        }
    }
    out
}

fn parse_index(path: &Path, line: usize, token: &str, count: usize) -> Result<u32> {
    let i: usize = token
        .parse()
        .map_err(|_| CliError::format(path, format!("line {line}: bad index `{token}`")))?;
    if i == 0 || i > count {
        return Err(CliError::format(
            path,
            format!("line {line}: index {i} outside 1..={count}"),
        ));
    }
    Ok((i - 1) as u32)
}

/// Reads triangles whose texture indices, when present, equal the vertex
/// indices (the layout [`encode_obj`] writes).
pub fn decode_obj(path: &Path, text: &str) -> Result<Mesh> {
    let mut vertices = Vec::new();
    let mut uvs = Vec::new();
    let mut faces = Vec::new();
    let floats = |line: usize, rest: &[&str], n: usize| -> Result<Vec<f64>> {
        if rest.len() < n {
            return Err(CliError::format(
                path,
                format!("line {line}: expected {n} numbers"),
            ));
        }
        rest[..n]
            .iter()
            .map(|t| {
                t.parse::<f64>()
                    .map_err(|_| CliError::format(path, format!("line {line}: bad number `{t}`")))
            })
            .collect()
    };
    for (n, raw) in text.lines().enumerate() {
        let line = n + 1;
        let tokens: Vec<&str> = raw.split_whitespace().collect();
        match tokens.first() {
            Some(&"v") => {
                let p = floats(line, &tokens[1..], 3)?;
                vertices.push(Vec3::new(p[0], p[1], p[2]));
            }
            Some(&"vt") => {
                let t = floats(line, &tokens[1..], 2)?;
                uvs.push([t[0], t[1]]);
            }
            Some(&"f") => {
                if tokens.len() != 4 {
                    return Err(CliError::format(
                        path,
                        format!("line {line}: only triangles are supported"),
                    ));
                }
                let mut face = [0u32; 3];
                for (k, corner) in tokens[1..].iter().enumerate() {
                    let mut parts = corner.split('/');
                    let v = parse_index(path, line, parts.next().unwrap_or(""), vertices.len())?;
                    if let Some(t) = parts.next().filter(|t| !t.is_empty()) {
                        if parse_index(path, line, t, uvs.len())? != v {
                            return Err(CliError::format(
                                path,
                                format!("line {line}: texture index differs from vertex index"),
                            ));
                        }
                    }
                    face[k] = v;
                }
                faces.push(face);
            }
            _ => {}
        }
    }
    let uvs = match uvs.len() {
        0 => None,
        n if n == vertices.len() => Some(uvs),
        n => {
            return Err(CliError::format(
                path,
                format!("{n} texture coordinates for {} vertices", vertices.len()),
            ))
        }
    };
    Ok(Mesh {
        vertices,
        faces,
        uvs,
    })
}

pub fn save_obj(mesh: &Mesh, path: &Path) -> Result<()> {
    fsutil::write_atomic(path, encode_obj(mesh).as_bytes())
}

pub fn load_obj(path: &Path) -> Result<Mesh> {
    decode_obj(path, &fsutil::read_string(path)?)
}
