//! Self-describing binary container: a 4-byte magic, a little-endian u32
//! manifest length, the JSON manifest, zero padding to an 8-byte boundary and
//! then raw little-endian tensor blocks addressed by the manifest.

use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Dtype {
    F64,
    F32,
    U32,
}

impl Dtype {
    pub fn size(self) -> usize {
        match self {
            Dtype::F64 => 8,
            Dtype::F32 | Dtype::U32 => 4,
        }
    }
}

/// Location of one tensor; `offset` counts from the first block byte.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BlockSpec {
    pub name: String,
    pub dtype: Dtype,
    pub shape: Vec<usize>,
    pub offset: u64,
    pub length: u64,
}

impl BlockSpec {
    pub fn element_count(&self) -> usize {
        self.shape.iter().product()
    }
}

/// Accumulates tensor blocks and their manifest entries.
#[derive(Debug, Default)]
pub struct BlockWriter {
    pub specs: Vec<BlockSpec>,
    payload: Vec<u8>,
}

impl BlockWriter {
    fn push(&mut self, name: &str, dtype: Dtype, shape: Vec<usize>, bytes: Vec<u8>) {
        while !self.payload.len().is_multiple_of(8) {
            self.payload.push(0);
        }
        self.specs.push(BlockSpec {
            name: name.into(),
            dtype,
            shape,
            offset: self.payload.len() as u64,
            length: bytes.len() as u64,
        });
        self.payload.extend(bytes);
    }

    pub fn f64s(&mut self, name: &str, shape: Vec<usize>, values: &[f64]) {
        self.push(
            name,
            Dtype::F64,
            shape,
            values.iter().flat_map(|v| v.to_le_bytes()).collect(),
        );
    }

    pub fn f32s(&mut self, name: &str, shape: Vec<usize>, values: &[f64]) {
        let bytes = values
            .iter()
            .flat_map(|&v| (v as f32).to_le_bytes())
            .collect();
        self.push(name, Dtype::F32, shape, bytes);
    }

    pub fn u32s(&mut self, name: &str, shape: Vec<usize>, values: &[u32]) {
        self.push(
            name,
            Dtype::U32,
            shape,
            values.iter().flat_map(|v| v.to_le_bytes()).collect(),
        );
    }

    pub fn finish<M: Serialize>(self, magic: &[u8; 4], manifest: &M) -> Vec<u8> {
        let header = serde_json::to_vec(manifest).expect("manifest serializes");
        let mut out = Vec::with_capacity(8 + header.len() + self.payload.len() + 8);
        out.extend_from_slice(magic);
        out.extend_from_slice(&(header.len() as u32).to_le_bytes());
        out.extend_from_slice(&header);
        while !out.len().is_multiple_of(8) {
            out.push(0);
        }
        out.extend(self.payload);
        out
    }
}

/// A decoded container: the manifest and a view of the block region.
pub struct Blocks<'a> {
    path: &'a Path,
    data: &'a [u8],
    data_start: usize,
}

pub fn decode<'a, M: DeserializeOwned>(
    path: &'a Path,
    bytes: &'a [u8],
    magic: &[u8; 4],
) -> Result<(M, Blocks<'a>)> {
    if bytes.len() < 8 || &bytes[..4] != magic {
        return Err(CliError::format(
            path,
            format!(
                "not a {} file (bad magic)",
                String::from_utf8_lossy(magic).trim_end_matches('\0')
            ),
        ));
    }
    let header_len = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes")) as usize;
    let header_end = 8 + header_len;
    if header_end > bytes.len() {
        return Err(CliError::format(
            path,
            format!(
                "manifest of {header_len} bytes runs past end of file at byte offset {}",
                bytes.len()
            ),
        ));
    }
    let manifest = serde_json::from_slice(&bytes[8..header_end])
        .map_err(|e| CliError::format(path, format!("manifest: {e}")))?;
    let data_start = header_end.div_ceil(8) * 8;
    let data = bytes.get(data_start..).unwrap_or(&[]);
    Ok((
        manifest,
        Blocks {
            path,
            data,
            data_start,
        },
    ))
}

impl Blocks<'_> {
    fn raw(&self, spec: &BlockSpec, dtype: Dtype, shape: &[usize]) -> Result<&[u8]> {
        if spec.dtype != dtype {
            return Err(CliError::format(
                self.path,
                format!(
                    "tensor `{}` has dtype {:?}, expected {:?}",
                    spec.name, spec.dtype, dtype
                ),
            ));
        }
        if spec.shape != shape {
            return Err(CliError::format(
                self.path,
                format!(
                    "tensor `{}` has shape {:?}, expected {:?}",
                    spec.name, spec.shape, shape
                ),
            ));
        }
        let want = (spec.element_count() * dtype.size()) as u64;
        if spec.length != want {
            return Err(CliError::format(
                self.path,
                format!(
                    "tensor `{}` declares {} bytes for shape {:?}",
                    spec.name, spec.length, spec.shape
                ),
            ));
        }
        let start = spec.offset as usize;
        let end = start.checked_add(spec.length as usize);
        match end {
            Some(end) if end <= self.data.len() => Ok(&self.data[start..end]),
            _ => Err(CliError::format(
                self.path,
                format!(
                    "tensor `{}` block at byte offset {} ({} bytes) is truncated: file ends at byte offset {}",
                    spec.name,
                    self.data_start + start,
                    spec.length,
                    self.data_start + self.data.len()
                ),
            )),
        }
    }

    pub fn f64s(&self, spec: &BlockSpec, shape: &[usize]) -> Result<Vec<f64>> {
        let raw = self.raw(spec, Dtype::F64, shape)?;
        Ok(raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect())
    }

    pub fn f32s(&self, spec: &BlockSpec, shape: &[usize]) -> Result<Vec<f64>> {
        let raw = self.raw(spec, Dtype::F32, shape)?;
        Ok(raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64)
            .collect())
    }

    pub fn u32s(&self, spec: &BlockSpec, shape: &[usize]) -> Result<Vec<u32>> {
        let raw = self.raw(spec, Dtype::U32, shape)?;
        Ok(raw
            .chunks_exact(4)
            .map(|c| u32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect())
    }
}

pub fn find<'s>(path: &Path, specs: &'s [BlockSpec], name: &str) -> Result<&'s BlockSpec> {
    specs
        .iter()
        .find(|s| s.name == name)
        .ok_or_else(|| CliError::format(path, format!("missing tensor `{name}`")))
}
