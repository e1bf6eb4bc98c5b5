//! Server side of the protocol for any in-process [`GuidanceOracle`]: a pure
//! request → response function and a small HTTP loop around it.

use std::io::Read;
use std::net::SocketAddr;
use std::sync::Arc;
use std::thread::JoinHandle;

use compavatar_core::image::FeatureImage;
use compavatar_core::oracle::{
    Capability, DenoiseRequest, GenerateRequest, GuidanceOracle, SegmentRequest, ViewContext,
};
use compavatar_core::OracleError;
use serde::de::DeserializeOwned;
use serde_json::{json, Map, Value};

use super::{
    put_image, put_vector, take_image, take_vector, ErrorDetail, ErrorResponse, Health,
    OracleRequest, OracleResponse, Tensors, WireDtype, SCHEMA_VERSION,
};

/// A failed request: HTTP status and structured detail.
struct Failure {
    status: u16,
    detail: ErrorDetail,
}

impl Failure {
    fn bad(field: impl Into<String>, message: impl Into<String>) -> Failure {
        Failure {
            status: 400,
            detail: ErrorDetail {
                kind: "bad_request".into(),
                message: message.into(),
                field: Some(field.into()),
            },
        }
    }

    fn from_tensor(message: String) -> Failure {
        let field = message
            .strip_prefix("missing field `")
            .and_then(|m| m.split('`').next())
            .map(str::to_string)
            .unwrap_or_else(|| message.split(':').next().unwrap_or("tensors").to_string());
        Failure::bad(field, message)
    }

    fn oracle(err: OracleError) -> Failure {
        let (status, kind) = match &err {
            OracleError::Unsupported(_) => (501, "unsupported"),
            OracleError::Rejected(_) => (422, "rejected"),
            OracleError::Protocol(_) => (400, "bad_request"),
            OracleError::Transport(_) => (502, "internal"),
            OracleError::Timeout(_) => (504, "internal"),
        };
        Failure {
            status,
            detail: ErrorDetail {
                kind: kind.into(),
                message: err.to_string(),
                field: None,
            },
        }
    }
}

fn param<T: DeserializeOwned>(params: &Map<String, Value>, name: &str) -> Result<T, Failure> {
    let field = format!("params.{name}");
    let value = params
        .get(name)
        .cloned()
        .ok_or_else(|| Failure::bad(&field, format!("missing field `{field}`")))?;
    serde_json::from_value(value).map_err(|e| Failure::bad(&field, e.to_string()))
}

fn view(params: &Map<String, Value>) -> Result<Option<ViewContext>, Failure> {
    match params.get("view") {
        None | Some(Value::Null) => Ok(None),
        Some(_) => param(params, "view").map(Some),
    }
}

fn image(tensors: &Tensors, name: &str) -> Result<FeatureImage, Failure> {
    take_image(tensors, name).map_err(Failure::from_tensor)
}

/// The response dtype follows the request's first tensor.
fn reply_dtype(req: &OracleRequest) -> WireDtype {
    req.tensors
        .values()
        .next()
        .map_or(WireDtype::Float64, |t| t.dtype)
}

fn answer(oracle: &dyn GuidanceOracle, req: &OracleRequest) -> Result<OracleResponse, Failure> {
    let dtype = reply_dtype(req);
    let p = &req.params;
    let t = &req.tensors;
    let mut params = Map::new();
    let mut tensors = Tensors::new();
    match req.capability {
        Capability::Generate => {
            let request = GenerateRequest {
                prompt: param(p, "prompt")?,
                seed: param(p, "seed")?,
                depth: image(t, "depth")?,
                init: image(t, "init")?,
                view: view(p)?,
            };
            let out = oracle.generate(&request).map_err(Failure::oracle)?;
            put_image(&mut tensors, "image", &out, dtype);
        }
        Capability::Denoise => {
            let request = DenoiseRequest {
                prompt: param(p, "prompt")?,
                clean: image(t, "clean")?,
                noisy: image(t, "noisy")?,
                noise: image(t, "noise")?,
                t: param(p, "t")?,
                view: view(p)?,
            };
            let out = oracle.denoise(&request).map_err(Failure::oracle)?;
            put_image(&mut tensors, "noise_pred", &out.noise_pred, dtype);
            params.insert("u_t".into(), json!(out.weight));
        }
        Capability::Segment => {
            let request = SegmentRequest {
                image: image(t, "image")?,
                keyword: param(p, "keyword")?,
                view: view(p)?,
            };
            let out = oracle.segment(&request).map_err(Failure::oracle)?;
            put_image(&mut tensors, "mask", &out, dtype);
        }
        Capability::EmbedImage => {
            let img = image(t, "image")?;
            if t.contains_key("cotangent") {
                let cotangent = take_vector(t, "cotangent").map_err(Failure::from_tensor)?;
                let out = oracle
                    .embed_image_vjp(&img, &cotangent)
                    .map_err(Failure::oracle)?;
                put_image(&mut tensors, "gradient", &out, dtype);
            } else {
                let out = oracle.embed_image(&img).map_err(Failure::oracle)?;
                put_vector(&mut tensors, "embedding", &out, dtype);
            }
        }
        Capability::EmbedText => {
            let prompt: String = param(p, "prompt")?;
            let out = oracle.embed_text(&prompt).map_err(Failure::oracle)?;
            put_vector(&mut tensors, "embedding", &out, WireDtype::Float64);
        }
        Capability::Encode => {
            let out = oracle
                .encode(&image(t, "image")?)
                .map_err(Failure::oracle)?;
            put_image(&mut tensors, "latent", &out, dtype);
        }
        Capability::Decode => {
            let out = oracle
                .decode(&image(t, "latent")?)
                .map_err(Failure::oracle)?;
            put_image(&mut tensors, "image", &out, dtype);
        }
        Capability::Landmarks => {
            let out = oracle
                .landmarks(&image(t, "image")?)
                .map_err(Failure::oracle)?;
            params.insert(
                "landmarks".into(),
                serde_json::to_value(out).expect("landmarks serialize"),
            );
        }
    }
    Ok(OracleResponse {
        schema_version: SCHEMA_VERSION,
        request_id: req.request_id.clone(),
        params,
        tensors,
    })
}

fn health(oracle: &dyn GuidanceOracle) -> Result<Health, Failure> {
    Ok(Health {
        schema_version: SCHEMA_VERSION,
        capabilities: oracle.capabilities(),
        noise_schedule: oracle.noise_schedule().map_err(Failure::oracle)?,
        latent_factor: oracle.latent_factor(),
    })
}

fn error_body(request_id: Option<String>, f: Failure) -> (u16, Vec<u8>) {
    let body = ErrorResponse {
        schema_version: SCHEMA_VERSION,
        request_id,
        error: f.detail,
    };
    (
        f.status,
        serde_json::to_vec(&body).expect("error serializes"),
    )
}

/// Answers one HTTP request: `GET /health` or `POST /<capability>`.
/// Returns the status code and JSON body.
pub fn dispatch(
    oracle: &dyn GuidanceOracle,
    method: &str,
    path: &str,
    body: &[u8],
    max_request_bytes: usize,
) -> (u16, Vec<u8>) {
    if method == "GET" && path == "/health" {
        return match health(oracle) {
            Ok(h) => (200, serde_json::to_vec(&h).expect("health serializes")),
            Err(f) => error_body(None, f),
        };
    }
    let Some(capability) = Capability::ALL
        .into_iter()
        .find(|c| path.strip_prefix('/') == Some(c.as_str()))
    else {
        return error_body(
            None,
            Failure::bad("path", format!("no endpoint {method} {path}")),
        );
    };
    if method != "POST" {
        return error_body(None, Failure::bad("method", format!("{path} expects POST")));
    }
    if body.len() > max_request_bytes {
        let f = Failure {
            status: 413,
            detail: ErrorDetail {
                kind: "too_large".into(),
                message: format!(
                    "request of {} bytes exceeds the size limit of {max_request_bytes} bytes",
                    body.len()
                ),
                field: None,
            },
        };
        return error_body(None, f);
    }
    let raw: Value = match serde_json::from_slice(body) {
        Ok(v) => v,
        Err(e) => return error_body(None, Failure::bad("body", e.to_string())),
    };
    let request_id = raw
        .get("request_id")
        .and_then(Value::as_str)
        .map(str::to_string);
    match raw.get("schema_version").and_then(Value::as_u64) {
        Some(v) if v == SCHEMA_VERSION as u64 => {}
        other => {
            let f = Failure {
                status: 400,
                detail: ErrorDetail {
                    kind: "schema_version".into(),
                    message: format!("schema_version {other:?} is not {SCHEMA_VERSION}"),
                    field: Some("schema_version".into()),
                },
            };
            return error_body(request_id, f);
        }
    }
    let request: OracleRequest = match serde_json::from_value(raw) {
        Ok(r) => r,
        Err(e) => return error_body(request_id, Failure::bad("body", e.to_string())),
    };
    if request.capability != capability {
        let f = Failure::bad(
            "capability",
            format!(
                "{path} received capability `{}`",
                request.capability.as_str()
            ),
        );
        return error_body(request_id, f);
    }
    match answer(oracle, &request) {
        Ok(r) => (200, serde_json::to_vec(&r).expect("response serializes")),
        Err(f) => error_body(request_id, f),
    }
}

/// A running HTTP server; stops when dropped.
pub struct ServerHandle {
    server: Arc<tiny_http::Server>,
    addr: SocketAddr,
    thread: Option<JoinHandle<()>>,
}

impl ServerHandle {
    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn url(&self) -> String {
        format!("http://{}", self.addr)
    }

    /// Serves until interrupted.
    pub fn join(mut self) {
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }
}

impl Drop for ServerHandle {
    fn drop(&mut self) {
        self.server.unblock();
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }
}

/// Serves `oracle` on `addr` (port 0 picks a free port), one request at a
/// time.
pub fn serve(
    oracle: Arc<dyn GuidanceOracle + Send + Sync>,
    addr: &str,
    max_request_bytes: usize,
) -> std::io::Result<ServerHandle> {
    let server = Arc::new(tiny_http::Server::http(addr).map_err(std::io::Error::other)?);
    let bound = server
        .server_addr()
        .to_ip()
        .ok_or_else(|| std::io::Error::other("server is not bound to an IP address"))?;
    let worker = server.clone();
    let thread = std::thread::spawn(move || {
        for mut request in worker.incoming_requests() {
            let mut body = Vec::new();
            let read = request
                .as_reader()
                .take(max_request_bytes as u64 + 1)
                .read_to_end(&mut body);
            let (status, reply) = match read {
                Ok(_) => dispatch(
                    oracle.as_ref(),
                    request.method().as_str(),
                    request.url(),
                    &body,
                    max_request_bytes,
                ),
                Err(e) => error_body(None, Failure::bad("body", e.to_string())),
            };
            let header = tiny_http::Header::from_bytes("Content-Type", "application/json")
                .expect("static header");
            let response = tiny_http::Response::from_data(reply)
                .with_status_code(status)
                .with_header(header);
            let _ = request.respond(response);
        }
    });
    Ok(ServerHandle {
        server,
        addr: bound,
        thread: Some(thread),
    })
}
