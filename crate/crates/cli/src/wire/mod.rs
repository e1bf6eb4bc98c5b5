//! The oracle wire protocol: one JSON message per request over HTTP/1.1,
//! tensors as `{shape, dtype, data}` with little-endian base64 data.
//!
//! Images travel as `[height, width, channels]` tensors with their coverage
//! in a sibling `<name>.alpha` tensor of shape `[height, width]`.

use std::collections::BTreeMap;

use base64::engine::general_purpose::STANDARD;
use base64::Engine;
use compavatar_core::image::FeatureImage;
use compavatar_core::oracle::{Capability, NoiseSchedule};
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

pub mod client;
pub mod server;

pub use client::{ClientOptions, HttpOracle};
pub use server::{dispatch, serve, ServerHandle};

pub use compavatar_core::oracle::SCHEMA_VERSION;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WireDtype {
    #[default]
    Float32,
    Float64,
}

impl WireDtype {
    fn width(self) -> usize {
        match self {
            WireDtype::Float32 => 4,
            WireDtype::Float64 => 8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Tensor {
    pub shape: Vec<usize>,
    pub dtype: WireDtype,
    pub data: String,
}

impl Tensor {
    pub fn encode(shape: Vec<usize>, values: &[f64], dtype: WireDtype) -> Tensor {
        let mut bytes = Vec::with_capacity(values.len() * dtype.width());
        for v in values {
            match dtype {
                WireDtype::Float32 => bytes.extend_from_slice(&(*v as f32).to_le_bytes()),
                WireDtype::Float64 => bytes.extend_from_slice(&v.to_le_bytes()),
            }
        }
        Tensor {
            shape,
            dtype,
            data: STANDARD.encode(bytes),
        }
    }

    /// Values in row-major order; `field` names the tensor in error messages.
    pub fn decode(&self, field: &str) -> Result<Vec<f64>, String> {
        let bytes = STANDARD
            .decode(&self.data)
            .map_err(|e| format!("{field}.data: invalid base64 ({e})"))?;
        let count: usize = self.shape.iter().product();
        let width = self.dtype.width();
        if bytes.len() != count * width {
            return Err(format!(
                "{field}.data: {} bytes for shape {:?} of {:?} (expected {})",
                bytes.len(),
                self.shape,
                self.dtype,
                count * width
            ));
        }
        let values: Vec<f64> = match self.dtype {
            WireDtype::Float32 => bytes
                .chunks_exact(4)
                .map(|b| f32::from_le_bytes(b.try_into().expect("4 bytes")) as f64)
                .collect(),
            WireDtype::Float64 => bytes
                .chunks_exact(8)
                .map(|b| f64::from_le_bytes(b.try_into().expect("8 bytes")))
                .collect(),
        };
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(format!("{field}.data: element {i} is not finite"));
        }
        Ok(values)
    }
}

pub type Tensors = BTreeMap<String, Tensor>;

pub fn put_image(tensors: &mut Tensors, name: &str, image: &FeatureImage, dtype: WireDtype) {
    tensors.insert(
        name.to_string(),
        Tensor::encode(
            vec![image.height, image.width, image.channels],
            &image.data,
            dtype,
        ),
    );
    tensors.insert(
        format!("{name}.alpha"),
        Tensor::encode(vec![image.height, image.width], &image.alpha, dtype),
    );
}

/// Reads an image tensor; a missing `.alpha` sibling means full coverage.
pub fn take_image(tensors: &Tensors, name: &str) -> Result<FeatureImage, String> {
    let field = format!("tensors.{name}");
    let t = tensors
        .get(name)
        .ok_or_else(|| format!("missing field `{field}`"))?;
    let [h, w, c] = t.shape[..] else {
        return Err(format!(
            "{field}.shape: expected [height, width, channels], got {:?}",
            t.shape
        ));
    };
    let mut image =
        FeatureImage::from_data(w, h, c, t.decode(&field)?).map_err(|e| format!("{field}: {e}"))?;
    if let Some(a) = tensors.get(&format!("{name}.alpha")) {
        let afield = format!("tensors.{name}.alpha");
        if a.shape != [h, w] {
            return Err(format!(
                "{afield}.shape: expected [{h}, {w}], got {:?}",
                a.shape
            ));
        }
        image.alpha = a.decode(&afield)?;
    }
    Ok(image)
}

pub fn put_vector(tensors: &mut Tensors, name: &str, values: &[f64], dtype: WireDtype) {
    tensors.insert(
        name.to_string(),
        Tensor::encode(vec![values.len()], values, dtype),
    );
}

pub fn take_vector(tensors: &Tensors, name: &str) -> Result<Vec<f64>, String> {
    let field = format!("tensors.{name}");
    let t = tensors
        .get(name)
        .ok_or_else(|| format!("missing field `{field}`"))?;
    if t.shape.len() != 1 {
        return Err(format!(
            "{field}.shape: expected a vector, got {:?}",
            t.shape
        ));
    }
    t.decode(&field)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OracleRequest {
    pub schema_version: u32,
    pub request_id: String,
    pub capability: Capability,
    #[serde(default)]
    pub params: Map<String, Value>,
    #[serde(default)]
    pub tensors: Tensors,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OracleResponse {
    pub schema_version: u32,
    pub request_id: String,
    #[serde(default)]
    pub params: Map<String, Value>,
    #[serde(default)]
    pub tensors: Tensors,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ErrorDetail {
    /// `unsupported`, `bad_request`, `schema_version`, `too_large`,
    /// `rejected` or `internal`.
    pub kind: String,
    pub message: String,
    /// Path of the offending request field.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub field: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ErrorResponse {
    pub schema_version: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub request_id: Option<String>,
    pub error: ErrorDetail,
}

/// `GET /health`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Health {
    pub schema_version: u32,
    pub capabilities: Vec<Capability>,
    pub noise_schedule: NoiseSchedule,
    pub latent_factor: usize,
}

/// Endpoint path of a capability; the vector-Jacobian product of the image
/// embedding shares `/embed_image` and is selected by a `cotangent` tensor.
pub fn endpoint(capability: Capability) -> String {
    format!("/{}", capability.as_str())
}
