//! HTTP client for an out-of-process denoiser and embedding service.
//!
//! Every endpoint takes a JSON object by POST and answers with one. Tensors
//! travel as `{"dims": [C, H, W], "data": <base64 of little-endian f32>}`.
//! See `docs/protocol.md` for the full schema.

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Condvar, Mutex};
use std::time::Duration;

use base64::engine::general_purpose::STANDARD;
use base64::Engine as _;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::denoiser::{BackendError, CfgMode, Denoiser, DenoiserOutput, PromptCondition};
use crate::embed::{normalize, Embedder};
use crate::tensor::{Dims, ImageTensor};

pub const DEFAULT_MAX_IN_FLIGHT: usize = 4;
/// Embedding norms must be within this of 1 after re-normalization.
pub const EMBED_NORM_TOLERANCE: f64 = 1e-4;
const MAX_BODY_BYTES: u64 = 256 << 20;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WireTensor {
    pub dims: [usize; 3],
    pub data: String,
}

impl WireTensor {
    /// Rounds each element to f32.
    pub fn encode(t: &ImageTensor) -> Self {
        let d = t.dims();
        let mut bytes = Vec::with_capacity(t.len() * 4);
        for &v in t.data() {
            bytes.extend_from_slice(&(v as f32).to_le_bytes());
        }
        Self { dims: [d.channels, d.height, d.width], data: STANDARD.encode(bytes) }
    }

    pub fn decode(&self) -> Result<ImageTensor, BackendError> {
        let dims = Dims::new(self.dims[0], self.dims[1], self.dims[2]);
        let bytes = STANDARD
            .decode(&self.data)
            .map_err(|e| BackendError::Protocol(format!("tensor data is not valid base64: {e}")))?;
        let expected = dims.len() * 4;
        if bytes.len() != expected {
            return Err(BackendError::Protocol(format!(
                "tensor {dims} needs {expected} bytes of data, got {} bytes",
                bytes.len()
            )));
        }
        let data = bytes.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64).collect();
        ImageTensor::new(dims, data).map_err(|e| BackendError::Protocol(format!("decoded tensor rejected: {e}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DenoiseMode {
    /// One estimate under `prompt`.
    Single,
    /// Estimates under `prompt` and under `negative` (or the null prompt).
    Pair,
    /// One estimate, guidance already combined by the server.
    Guided,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenoiseRequest {
    pub request_id: u64,
    pub t: usize,
    pub x: WireTensor,
    /// `null` is the null condition.
    pub prompt: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub negative: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub guidance: Option<f64>,
    pub mode: DenoiseMode,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenoiseResponse {
    pub request_id: u64,
    pub eps: WireTensor,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub log_var: Option<WireTensor>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eps_uncond: Option<WireTensor>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub log_var_uncond: Option<WireTensor>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbedImageRequest {
    pub request_id: u64,
    pub image: WireTensor,
    /// Asks the server to also report its own image/text score.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub score_text: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbedTextRequest {
    pub request_id: u64,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbedResponse {
    pub request_id: u64,
    pub embedding: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub score: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ServerInfo {
    pub model_id: String,
    /// Accepted input shapes, each `[C, H, W]`.
    pub dims: Vec<[usize; 3]>,
    /// Whether `/denoise` returns `log_var`.
    pub variance: bool,
    #[serde(default)]
    pub deterministic: bool,
    #[serde(default)]
    pub timesteps: Option<usize>,
    #[serde(default)]
    pub embed_model_id: Option<String>,
    /// Nondeterminism the server could not remove, if any.
    #[serde(default)]
    pub nondeterminism: Option<String>,
}

impl ServerInfo {
    pub fn supports(&self, dims: Dims) -> bool {
        self.dims.contains(&[dims.channels, dims.height, dims.width])
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RemoteConfig {
    pub base_url: String,
    pub timeout_secs: f64,
    /// Extra attempts after the first on transport failures and 5xx.
    pub retries: u32,
    pub max_in_flight: usize,
    pub cfg_mode: CfgMode,
}

impl RemoteConfig {
    pub fn new(base_url: impl Into<String>) -> Self {
        Self {
            base_url: base_url.into(),
            timeout_secs: 60.0,
            retries: 2,
            max_in_flight: DEFAULT_MAX_IN_FLIGHT,
            cfg_mode: CfgMode::Engine,
        }
    }

    pub fn validate(&self) -> Result<(), BackendError> {
        if !(self.timeout_secs.is_finite() && self.timeout_secs > 0.0) {
            return Err(BackendError::InvalidInput(format!("timeout must be positive, got {}", self.timeout_secs)));
        }
        if self.max_in_flight == 0 {
            return Err(BackendError::InvalidInput("max_in_flight must be at least 1".into()));
        }
        if !(self.base_url.starts_with("http://") || self.base_url.starts_with("https://")) {
            return Err(BackendError::InvalidInput(format!("backend URL must be http(s): `{}`", self.base_url)));
        }
        Ok(())
    }
}

struct Permits {
    free: Mutex<usize>,
    cv: Condvar,
}

struct Permit<'a>(&'a Permits);

impl Permits {
    fn acquire(&self) -> Permit<'_> {
        let mut free = self.free.lock().unwrap();
        while *free == 0 {
            free = self.cv.wait(free).unwrap();
        }
        *free -= 1;
        Permit(self)
    }
}

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        *self.0.free.lock().unwrap() += 1;
        self.0.cv.notify_one();
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct ClientStats {
    pub requests: u64,
    pub attempts: u64,
    /// Largest `|‖e‖ - 1|` seen in a returned embedding before re-normalization.
    pub max_norm_correction: f64,
    pub peak_in_flight: usize,
}

/// A connected remote backend. Implements both [`Denoiser`] and [`Embedder`].
pub struct RemoteBackend {
    config: RemoteConfig,
    agent: ureq::Agent,
    info: ServerInfo,
    permits: Permits,
    next_id: AtomicU64,
    stats: Mutex<ClientStats>,
    in_flight: Mutex<usize>,
}

impl RemoteBackend {
    /// Validates the config and fetches `/info`.
    pub fn connect(config: RemoteConfig) -> Result<Self, BackendError> {
        config.validate()?;
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs_f64(config.timeout_secs)))
            .http_status_as_error(false)
            .build()
            .into();
        let mut backend = Self {
            permits: Permits { free: Mutex::new(config.max_in_flight), cv: Condvar::new() },
            config,
            agent,
            info: ServerInfo {
                model_id: String::new(),
                dims: vec![],
                variance: false,
                deterministic: false,
                timesteps: None,
                embed_model_id: None,
                nondeterminism: None,
            },
            next_id: AtomicU64::new(1),
            stats: Mutex::new(ClientStats::default()),
            in_flight: Mutex::new(0),
        };
        backend.info = backend.post("info", &serde_json::json!({}))?;
        Ok(backend)
    }

    pub fn info(&self) -> &ServerInfo {
        &self.info
    }

    pub fn config(&self) -> &RemoteConfig {
        &self.config
    }

    pub fn stats(&self) -> ClientStats {
        *self.stats.lock().unwrap()
    }

    fn fresh_id(&self) -> u64 {
        self.next_id.fetch_add(1, Ordering::Relaxed)
    }

    fn url(&self, endpoint: &str) -> String {
        format!("{}/{endpoint}", self.config.base_url.trim_end_matches('/'))
    }

    fn post<Req: Serialize, Resp: DeserializeOwned>(&self, endpoint: &str, req: &Req) -> Result<Resp, BackendError> {
        let body = serde_json::to_vec(req).map_err(|e| BackendError::Protocol(e.to_string()))?;
        let _permit = self.permits.acquire();
        {
            let mut n = self.in_flight.lock().unwrap();
            *n += 1;
            let mut s = self.stats.lock().unwrap();
            s.requests += 1;
            s.peak_in_flight = s.peak_in_flight.max(*n);
        }
        let result = self.post_with_retries(endpoint, &body);
        *self.in_flight.lock().unwrap() -= 1;
        let text = result?;
        serde_json::from_slice(&text).map_err(|e| BackendError::Protocol(format!("bad /{endpoint} response: {e}")))
    }

    fn post_with_retries(&self, endpoint: &str, body: &[u8]) -> Result<Vec<u8>, BackendError> {
        let url = self.url(endpoint);
        let attempts = self.config.retries + 1;
        let mut last = None;
        for attempt in 1..=attempts {
            self.stats.lock().unwrap().attempts += 1;
            if attempt > 1 {
                std::thread::sleep(Duration::from_millis(25 << (attempt - 2).min(5)));
            }
            match self.agent.post(&url).header("content-type", "application/json").send(body) {
                Ok(mut resp) => {
                    let status = resp.status().as_u16();
                    let bytes = resp.body_mut().with_config().limit(MAX_BODY_BYTES).read_to_vec();
                    match (status, bytes) {
                        (200..=299, Ok(b)) => return Ok(b),
                        (200..=299, Err(e)) => last = Some(BackendError::Transport { attempts: attempt, message: e.to_string() }),
                        (s, b) => {
                            let body = b.map(|b| String::from_utf8_lossy(&b).into_owned()).unwrap_or_default();
                            let err = BackendError::Server { status: s, body };
                            if s < 500 {
                                return Err(err);
                            }
                            last = Some(err);
                        }
                    }
                }
                Err(e) => last = Some(BackendError::Transport { attempts: attempt, message: e.to_string() }),
            }
        }
        Err(match last {
            Some(BackendError::Transport { message, .. }) => BackendError::Transport { attempts, message },
            Some(e) => e,
            None => BackendError::Transport { attempts, message: "no attempt made".into() },
        })
    }

    fn check_input(&self, x: &ImageTensor) -> Result<(), BackendError> {
        if !self.info.dims.is_empty() && !self.info.supports(x.dims()) {
            return Err(BackendError::InvalidInput(format!(
                "server `{}` does not accept dims {}",
                self.info.model_id,
                x.dims()
            )));
        }
        Ok(())
    }

    fn decode_output(expected: Dims, eps: &WireTensor, log_var: Option<&WireTensor>) -> Result<DenoiserOutput, BackendError> {
        let out = DenoiserOutput { eps: eps.decode()?, log_var: log_var.map(WireTensor::decode).transpose()? };
        out.check_dims(expected)?;
        Ok(out)
    }

    fn denoise_request(&self, req: DenoiseRequest) -> Result<DenoiseResponse, BackendError> {
        let id = req.request_id;
        let resp: DenoiseResponse = self.post("denoise", &req)?;
        if resp.request_id != id {
            return Err(BackendError::Protocol(format!("response id {} does not match request id {id}", resp.request_id)));
        }
        Ok(resp)
    }

    fn embed_checked(&self, resp: EmbedResponse, id: u64) -> Result<(Vec<f64>, Option<f64>), BackendError> {
        if resp.request_id != id {
            return Err(BackendError::Protocol(format!("response id {} does not match request id {id}", resp.request_id)));
        }
        let mut v = resp.embedding;
        if v.is_empty() || v.iter().any(|x| !x.is_finite()) {
            return Err(BackendError::Protocol("embedding is empty or not finite".into()));
        }
        let norm = normalize(&mut v);
        if norm == 0.0 {
            return Err(BackendError::Protocol("embedding has zero norm".into()));
        }
        let mut s = self.stats.lock().unwrap();
        s.max_norm_correction = s.max_norm_correction.max((norm - 1.0).abs());
        Ok((v, resp.score))
    }

    /// Image embedding plus the server's own score against `text`.
    pub fn embed_image_scored(&self, image: &ImageTensor, text: Option<&str>) -> Result<(Vec<f64>, Option<f64>), BackendError> {
        let id = self.fresh_id();
        let req = EmbedImageRequest { request_id: id, image: WireTensor::encode(image), score_text: text.map(str::to_string) };
        let resp = self.post("embed_image", &req)?;
        self.embed_checked(resp, id)
    }
}

impl Denoiser for RemoteBackend {
    fn id(&self) -> String {
        format!("remote({})", self.info.model_id)
    }

    fn denoise(&self, x_t: &ImageTensor, t: usize, condition: Option<&str>) -> Result<DenoiserOutput, BackendError> {
        self.check_input(x_t)?;
        let req = DenoiseRequest {
            request_id: self.fresh_id(),
            t,
            x: WireTensor::encode(x_t),
            prompt: condition.map(str::to_string),
            negative: None,
            guidance: None,
            mode: DenoiseMode::Single,
        };
        let resp = self.denoise_request(req)?;
        Self::decode_output(x_t.dims(), &resp.eps, resp.log_var.as_ref())
    }

    fn denoise_pair(
        &self,
        x_t: &ImageTensor,
        t: usize,
        condition: &str,
        uncondition: Option<&str>,
    ) -> Result<(DenoiserOutput, DenoiserOutput), BackendError> {
        self.check_input(x_t)?;
        let req = DenoiseRequest {
            request_id: self.fresh_id(),
            t,
            x: WireTensor::encode(x_t),
            prompt: Some(condition.to_string()),
            negative: uncondition.map(str::to_string),
            guidance: None,
            mode: DenoiseMode::Pair,
        };
        let resp = self.denoise_request(req)?;
        let uncond = resp
            .eps_uncond
            .as_ref()
            .ok_or_else(|| BackendError::Protocol("pair response is missing `eps_uncond`".into()))?;
        Ok((
            Self::decode_output(x_t.dims(), &resp.eps, resp.log_var.as_ref())?,
            Self::decode_output(x_t.dims(), uncond, resp.log_var_uncond.as_ref())?,
        ))
    }

    fn server_guided(
        &self,
        x_t: &ImageTensor,
        t: usize,
        prompt: &PromptCondition,
        guidance: f64,
    ) -> Option<Result<DenoiserOutput, BackendError>> {
        if self.config.cfg_mode != CfgMode::Server {
            return None;
        }
        Some(self.check_input(x_t).and_then(|_| {
            let req = DenoiseRequest {
                request_id: self.fresh_id(),
                t,
                x: WireTensor::encode(x_t),
                prompt: Some(prompt.label.clone()),
                negative: prompt.negative.clone(),
                guidance: Some(guidance),
                mode: DenoiseMode::Guided,
            };
            let resp = self.denoise_request(req)?;
            Self::decode_output(x_t.dims(), &resp.eps, resp.log_var.as_ref())
        }))
    }

    fn cfg_mode(&self) -> CfgMode {
        self.config.cfg_mode
    }
}

impl Embedder for RemoteBackend {
    fn id(&self) -> String {
        format!("remote({})", self.info.embed_model_id.as_deref().unwrap_or(&self.info.model_id))
    }

    fn embed_image(&self, image: &ImageTensor) -> Result<Vec<f64>, BackendError> {
        self.embed_image_scored(image, None).map(|(v, _)| v)
    }

    fn embed_text(&self, text: &str) -> Result<Vec<f64>, BackendError> {
        let id = self.fresh_id();
        let resp = self.post("embed_text", &EmbedTextRequest { request_id: id, text: text.to_string() })?;
        self.embed_checked(resp, id).map(|(v, _)| v)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn wire_tensor_round_trip_bit_exact_for_f32_values() {
        let x = ImageTensor::randn_seeded(Dims::new(3, 5, 7), 9).map(|v| v as f32 as f64);
        let back = WireTensor::encode(&x).decode().unwrap();
        assert!(back.bit_eq(&x));
    }

    #[test]
    fn wire_tensor_wrong_length_names_byte_counts() {
        let mut w = WireTensor::encode(&ImageTensor::zeros(Dims::new(1, 2, 2)));
        w.data = STANDARD.encode([0u8; 12]);
        let msg = w.decode().unwrap_err().to_string();
        assert!(msg.contains("16 bytes") && msg.contains("got 12 bytes"), "{msg}");
    }

    #[test]
    fn config_validation() {
        let mut c = RemoteConfig::new("http://localhost:1");
        assert!(c.validate().is_ok());
        c.timeout_secs = 0.0;
        assert!(c.validate().is_err());
        let mut c = RemoteConfig::new("localhost:1");
        assert!(c.validate().is_err());
        c.base_url = "http://x".into();
        c.max_in_flight = 0;
        assert!(c.validate().is_err());
    }
}
