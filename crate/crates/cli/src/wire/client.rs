//! HTTP client implementing [`GuidanceOracle`] against a remote bridge.

use std::io::Read;
use std::sync::atomic::{AtomicU64, Ordering};
use std::time::Duration;

use compavatar_core::image::FeatureImage;
use compavatar_core::oracle::{
    Capability, DenoiseRequest, DenoiseResponse, DetectedLandmark, GenerateRequest, GuidanceOracle,
    NoiseSchedule, SegmentRequest, ViewContext,
};
use compavatar_core::OracleError;
use serde_json::{json, Map, Value};

use super::{
    endpoint, put_image, put_vector, take_image, take_vector, ErrorResponse, Health, OracleRequest,
    OracleResponse, Tensors, WireDtype, SCHEMA_VERSION,
};

#[derive(Debug, Clone, PartialEq)]
pub struct ClientOptions {
    pub timeout: Duration,
    pub dtype: WireDtype,
    pub max_response_bytes: usize,
}

impl Default for ClientOptions {
    fn default() -> Self {
        ClientOptions {
            timeout: Duration::from_secs(120),
            dtype: WireDtype::Float32,
            max_response_bytes: 256 << 20,
        }
    }
}

/// Remote oracle. Capabilities, noise schedule and latent factor are read
/// once from `/health` at connection.
pub struct HttpOracle {
    base: String,
    agent: ureq::Agent,
    options: ClientOptions,
    health: Health,
    nonce: u64,
    counter: AtomicU64,
}

fn protocol(msg: impl Into<String>) -> OracleError {
    OracleError::Protocol(msg.into())
}

fn is_timeout(err: &ureq::Transport) -> bool {
    let mut source = std::error::Error::source(err);
    while let Some(e) = source {
        if let Some(io) = e.downcast_ref::<std::io::Error>() {
            return matches!(
                io.kind(),
                std::io::ErrorKind::TimedOut | std::io::ErrorKind::WouldBlock
            );
        }
        source = e.source();
    }
    false
}

impl HttpOracle {
    pub fn connect(endpoint: &str, options: ClientOptions) -> Result<Self, OracleError> {
        let agent = ureq::AgentBuilder::new().timeout(options.timeout).build();
        let base = endpoint.trim_end_matches('/').to_string();
        let mut oracle = HttpOracle {
            base,
            agent,
            options,
            health: Health {
                schema_version: SCHEMA_VERSION,
                capabilities: Vec::new(),
                noise_schedule: NoiseSchedule::default(),
                latent_factor: 8,
            },
            nonce: std::process::id() as u64,
            counter: AtomicU64::new(0),
        };
        let response = oracle.send(
            oracle.agent.get(&format!("{}/health", oracle.base)),
            None,
            None,
        )?;
        let health: Health =
            serde_json::from_slice(&response).map_err(|e| protocol(format!("/health: {e}")))?;
        if health.schema_version != SCHEMA_VERSION {
            return Err(protocol(format!(
                "/health reports schema_version {}, this client speaks {SCHEMA_VERSION}",
                health.schema_version
            )));
        }
        health
            .noise_schedule
            .validate()
            .map_err(|e| protocol(format!("/health noise_schedule: {e}")))?;
        if health.latent_factor == 0 {
            return Err(protocol("/health latent_factor must be positive"));
        }
        oracle.health = health;
        Ok(oracle)
    }

    pub fn health(&self) -> &Health {
        &self.health
    }

    fn send(
        &self,
        request: ureq::Request,
        body: Option<&[u8]>,
        capability: Option<Capability>,
    ) -> Result<Vec<u8>, OracleError> {
        let result = match body {
            Some(b) => request
                .set("Content-Type", "application/json")
                .send_bytes(b),
            None => request.call(),
        };
        match result {
            Ok(response) => self.read_body(response),
            Err(ureq::Error::Status(code, response)) => {
                let body = self.read_body(response).unwrap_or_default();
                let message = match serde_json::from_slice::<ErrorResponse>(&body) {
                    Ok(e) => match e.error.field {
                        Some(f) => format!("{} ({f})", e.error.message),
                        None => e.error.message,
                    },
                    Err(_) => String::from_utf8_lossy(&body).into_owned(),
                };
                Err(match (code, capability) {
                    (501, Some(c)) => OracleError::Unsupported(c.as_str()),
                    (504, _) => OracleError::Timeout(format!("HTTP {code}: {message}")),
                    (500..=599, _) => OracleError::Transport(format!("HTTP {code}: {message}")),
                    _ => OracleError::Rejected(format!("HTTP {code}: {message}")),
                })
            }
            Err(ureq::Error::Transport(t)) if is_timeout(&t) => {
                Err(OracleError::Timeout(t.to_string()))
            }
            Err(ureq::Error::Transport(t)) => Err(OracleError::Transport(t.to_string())),
        }
    }

    fn read_body(&self, response: ureq::Response) -> Result<Vec<u8>, OracleError> {
        let limit = self.options.max_response_bytes;
        let mut body = Vec::new();
        response
            .into_reader()
            .take(limit as u64 + 1)
            .read_to_end(&mut body)
            .map_err(|e| OracleError::Transport(e.to_string()))?;
        if body.len() > limit {
            return Err(protocol(format!(
                "response exceeds the size limit of {limit} bytes"
            )));
        }
        Ok(body)
    }

    fn require(&self, capability: Capability) -> Result<(), OracleError> {
        if self.health.capabilities.contains(&capability) {
            Ok(())
        } else {
            Err(OracleError::Unsupported(capability.as_str()))
        }
    }

    /// Posts one request and checks the envelope of its response.
    fn call(
        &self,
        capability: Capability,
        params: Map<String, Value>,
        tensors: Tensors,
    ) -> Result<OracleResponse, OracleError> {
        self.require(capability)?;
        let request_id = format!(
            "{:x}-{}",
            self.nonce,
            self.counter.fetch_add(1, Ordering::Relaxed)
        );
        let request = OracleRequest {
            schema_version: SCHEMA_VERSION,
            request_id: request_id.clone(),
            capability,
            params,
            tensors,
        };
        let body = serde_json::to_vec(&request).expect("request serializes");
        let url = format!("{}{}", self.base, endpoint(capability));
        let bytes = self.send(self.agent.post(&url), Some(&body), Some(capability))?;
        let response: OracleResponse = serde_json::from_slice(&bytes)
            .map_err(|e| protocol(format!("{}: {e}", endpoint(capability))))?;
        if response.schema_version != SCHEMA_VERSION {
            return Err(protocol(format!(
                "response schema_version {} differs from {SCHEMA_VERSION}",
                response.schema_version
            )));
        }
        if response.request_id != request_id {
            return Err(protocol(format!(
                "response echoes request_id `{}` instead of `{request_id}`",
                response.request_id
            )));
        }
        Ok(response)
    }

    fn image(&self, response: &OracleResponse, name: &str) -> Result<FeatureImage, OracleError> {
        take_image(&response.tensors, name).map_err(protocol)
    }

    fn view_params(params: &mut Map<String, Value>, view: &Option<ViewContext>) {
        if let Some(v) = view {
            params.insert(
                "view".into(),
                serde_json::to_value(v).expect("view serializes"),
            );
        }
    }

    fn expect_size(
        what: &str,
        image: &FeatureImage,
        width: usize,
        height: usize,
        channels: usize,
    ) -> Result<(), OracleError> {
        if image.width != width || image.height != height || image.channels != channels {
            return Err(protocol(format!(
                "{what} is {}x{}x{}, expected {width}x{height}x{channels}",
                image.width, image.height, image.channels
            )));
        }
        Ok(())
    }
}

impl GuidanceOracle for HttpOracle {
    fn capabilities(&self) -> Vec<Capability> {
        self.health.capabilities.clone()
    }

    fn noise_schedule(&self) -> Result<NoiseSchedule, OracleError> {
        Ok(self.health.noise_schedule.clone())
    }

    fn latent_factor(&self) -> usize {
        self.health.latent_factor
    }

    fn generate(&self, req: &GenerateRequest) -> Result<FeatureImage, OracleError> {
        let mut params = Map::new();
        params.insert("prompt".into(), json!(req.prompt));
        params.insert("seed".into(), json!(req.seed));
        Self::view_params(&mut params, &req.view);
        let mut tensors = Tensors::new();
        put_image(&mut tensors, "depth", &req.depth, self.options.dtype);
        put_image(&mut tensors, "init", &req.init, self.options.dtype);
        let response = self.call(Capability::Generate, params, tensors)?;
        let image = self.image(&response, "image")?;
        Self::expect_size(
            "generated image",
            &image,
            req.init.width,
            req.init.height,
            3,
        )?;
        Ok(image)
    }

    fn denoise(&self, req: &DenoiseRequest) -> Result<DenoiseResponse, OracleError> {
        let mut params = Map::new();
        params.insert("prompt".into(), json!(req.prompt));
        params.insert("t".into(), json!(req.t));
        Self::view_params(&mut params, &req.view);
        let mut tensors = Tensors::new();
        put_image(&mut tensors, "clean", &req.clean, self.options.dtype);
        put_image(&mut tensors, "noisy", &req.noisy, self.options.dtype);
        put_image(&mut tensors, "noise", &req.noise, self.options.dtype);
        let response = self.call(Capability::Denoise, params, tensors)?;
        let noise_pred = self.image(&response, "noise_pred")?;
        Self::expect_size(
            "noise_pred",
            &noise_pred,
            req.noisy.width,
            req.noisy.height,
            req.noisy.channels,
        )?;
        let weight = response
            .params
            .get("u_t")
            .ok_or_else(|| protocol("response missing field `params.u_t`"))?
            .as_f64()
            .filter(|w| w.is_finite())
            .ok_or_else(|| protocol("field `params.u_t` is not a finite number"))?;
        Ok(DenoiseResponse { noise_pred, weight })
    }

    fn segment(&self, req: &SegmentRequest) -> Result<FeatureImage, OracleError> {
        let mut params = Map::new();
        params.insert("keyword".into(), json!(req.keyword));
        Self::view_params(&mut params, &req.view);
        let mut tensors = Tensors::new();
        put_image(&mut tensors, "image", &req.image, self.options.dtype);
        let response = self.call(Capability::Segment, params, tensors)?;
        let mask = self.image(&response, "mask")?;
        Self::expect_size("segmentation", &mask, req.image.width, req.image.height, 1)?;
        if let Some(v) = mask.data.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(protocol(format!("segmentation value {v} outside [0, 1]")));
        }
        Ok(mask)
    }

    fn embed_image(&self, image: &FeatureImage) -> Result<Vec<f64>, OracleError> {
        let mut tensors = Tensors::new();
        put_image(&mut tensors, "image", image, self.options.dtype);
        let response = self.call(Capability::EmbedImage, Map::new(), tensors)?;
        take_vector(&response.tensors, "embedding").map_err(protocol)
    }

    fn embed_image_vjp(
        &self,
        image: &FeatureImage,
        cotangent: &[f64],
    ) -> Result<FeatureImage, OracleError> {
        let mut tensors = Tensors::new();
        put_image(&mut tensors, "image", image, self.options.dtype);
        put_vector(&mut tensors, "cotangent", cotangent, self.options.dtype);
        let response = self.call(Capability::EmbedImage, Map::new(), tensors)?;
        let grad = self.image(&response, "gradient")?;
        Self::expect_size(
            "embedding gradient",
            &grad,
            image.width,
            image.height,
            image.channels,
        )?;
        Ok(grad)
    }

    fn embed_text(&self, prompt: &str) -> Result<Vec<f64>, OracleError> {
        let mut params = Map::new();
        params.insert("prompt".into(), json!(prompt));
        let response = self.call(Capability::EmbedText, params, Tensors::new())?;
        take_vector(&response.tensors, "embedding").map_err(protocol)
    }

    fn encode(&self, image: &FeatureImage) -> Result<FeatureImage, OracleError> {
        let mut tensors = Tensors::new();
        put_image(&mut tensors, "image", image, self.options.dtype);
        let response = self.call(Capability::Encode, Map::new(), tensors)?;
        let latent = self.image(&response, "latent")?;
        let f = self.health.latent_factor;
        Self::expect_size("latent", &latent, image.width / f, image.height / f, 4)?;
        Ok(latent)
    }

    fn decode(&self, latent: &FeatureImage) -> Result<FeatureImage, OracleError> {
        let mut tensors = Tensors::new();
        put_image(&mut tensors, "latent", latent, self.options.dtype);
        let response = self.call(Capability::Decode, Map::new(), tensors)?;
        let image = self.image(&response, "image")?;
        let f = self.health.latent_factor;
        Self::expect_size(
            "decoded image",
            &image,
            latent.width * f,
            latent.height * f,
            3,
        )?;
        Ok(image)
    }

    fn landmarks(&self, image: &FeatureImage) -> Result<Vec<DetectedLandmark>, OracleError> {
        let mut tensors = Tensors::new();
        put_image(&mut tensors, "image", image, self.options.dtype);
        let response = self.call(Capability::Landmarks, Map::new(), tensors)?;
        let list = response
            .params
            .get("landmarks")
            .cloned()
            .ok_or_else(|| protocol("response missing field `params.landmarks`"))?;
        serde_json::from_value(list).map_err(|e| protocol(format!("params.landmarks: {e}")))
    }
}
