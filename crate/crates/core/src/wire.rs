//! Request/response bodies for the remote imaginator and actor endpoints,
//! plus the blocking HTTP client both remote backends share.

use std::io::Cursor;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Condvar, Mutex};
use std::time::Duration;

use base64::Engine;
use image::RgbImage;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const IMAGINE_PATH: &str = "/v1/imagine";
pub const ACT_PATH: &str = "/v1/act";

pub const ENV_AUTH_TOKEN: &str = "HVS_AUTH_TOKEN";
pub const ENV_TIMEOUT_SECS: &str = "HVS_REQUEST_TIMEOUT_SECS";
pub const ENV_CONCURRENCY: &str = "HVS_CONCURRENCY";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WireView {
    pub phi: f64,
    pub gamma: f64,
    pub image_png_base64: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WirePose {
    pub phi: f64,
    pub gamma: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WireSampling {
    pub temperature: f64,
    pub top_k: u32,
}

/// Body of `POST /v1/imagine`. `scene_id`, `seed` and `request_id` are
/// optional extensions used by the loopback mock server.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImagineRequest {
    pub instruction: String,
    pub views: Vec<WireView>,
    pub sampling: WireSampling,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scene_id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub request_id: Option<String>,
}

/// Body of `POST /v1/act`. `prompt` carries the fully rendered actor prompt.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActRequest {
    pub instruction: String,
    pub current_view: WireView,
    pub memory: Vec<WirePose>,
    pub suggestions_text: String,
    pub step: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prompt: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub request_id: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TextResponse {
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub request_id: Option<String>,
}

pub fn encode_png_base64(img: &RgbImage) -> String {
    let mut buf = Cursor::new(Vec::new());
    img.write_to(&mut buf, image::ImageFormat::Png)
        .expect("in-memory PNG encoding");
    base64::engine::general_purpose::STANDARD.encode(buf.into_inner())
}

pub fn decode_png_base64(data: &str) -> Result<RgbImage, String> {
    let bytes = base64::engine::general_purpose::STANDARD
        .decode(data)
        .map_err(|e| e.to_string())?;
    image::load_from_memory_with_format(&bytes, image::ImageFormat::Png)
        .map(|i| i.to_rgb8())
        .map_err(|e| e.to_string())
}

/// Failure of a backend call, split by cause so callers can tell a dead
/// endpoint from a model that answered badly.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum BackendError {
    #[error("transport error after {attempts} attempt(s): {message}")]
    Transport { attempts: u32, message: String },
    #[error("endpoint returned status {status}: {body}")]
    Status { status: u16, body: String },
    #[error("unparseable reply ({message}); raw text: {raw:?}")]
    Parse { message: String, raw: String },
    #[error("{0}")]
    Local(String),
}

#[derive(Debug, Clone)]
pub struct ClientConfig {
    pub timeout: Duration,
    pub max_retries: u32,
    pub backoff_base: Duration,
    pub concurrency: usize,
    pub auth_token: Option<String>,
}

impl Default for ClientConfig {
    fn default() -> Self {
        Self {
            timeout: Duration::from_secs(60),
            max_retries: 3,
            backoff_base: Duration::from_millis(200),
            concurrency: 8,
            auth_token: None,
        }
    }
}

impl ClientConfig {
    /// Defaults overridden by `HVS_AUTH_TOKEN`, `HVS_REQUEST_TIMEOUT_SECS`
    /// and `HVS_CONCURRENCY` when set.
    pub fn from_env() -> Self {
        let mut cfg = Self::default();
        if let Ok(token) = std::env::var(ENV_AUTH_TOKEN) {
            if !token.is_empty() {
                cfg.auth_token = Some(token);
            }
        }
        if let Some(secs) = std::env::var(ENV_TIMEOUT_SECS).ok().and_then(|s| s.parse::<f64>().ok()) {
            cfg.timeout = Duration::from_secs_f64(secs.max(0.001));
        }
        if let Some(n) = std::env::var(ENV_CONCURRENCY).ok().and_then(|s| s.parse::<usize>().ok()) {
            cfg.concurrency = n.max(1);
        }
        cfg
    }
}

struct Semaphore {
    permits: Mutex<usize>,
    cv: Condvar,
}

impl Semaphore {
    fn acquire(&self) -> SemaphoreGuard<'_> {
        let mut n = self.permits.lock().unwrap();
        while *n == 0 {
            n = self.cv.wait(n).unwrap();
        }
        *n -= 1;
        SemaphoreGuard(self)
    }
}

struct SemaphoreGuard<'a>(&'a Semaphore);

impl Drop for SemaphoreGuard<'_> {
    fn drop(&mut self) {
        *self.0.permits.lock().unwrap() += 1;
        self.0.cv.notify_one();
    }
}

/// Blocking JSON client with bounded in-flight requests and exponential
/// backoff. Connection failures and 5xx replies are retried; 4xx are not.
pub struct HttpClient {
    inner: reqwest::blocking::Client,
    cfg: ClientConfig,
    gate: Semaphore,
    retries: AtomicU64,
}

impl HttpClient {
    pub fn new(cfg: ClientConfig) -> Result<Self, BackendError> {
        let inner = reqwest::blocking::Client::builder()
            .timeout(cfg.timeout)
            .build()
            .map_err(|e| BackendError::Local(format!("cannot build HTTP client: {e}")))?;
        Ok(Self {
            inner,
            gate: Semaphore {
                permits: Mutex::new(cfg.concurrency.max(1)),
                cv: Condvar::new(),
            },
            cfg,
            retries: AtomicU64::new(0),
        })
    }

    /// Total retries performed over the client's lifetime.
    pub fn retries(&self) -> u64 {
        self.retries.load(Ordering::Relaxed)
    }

    pub fn post_json<B: Serialize, R: DeserializeOwned>(&self, url: &str, body: &B) -> Result<R, BackendError> {
        let _permit = self.gate.acquire();
        let mut attempt = 0u32;
        loop {
            attempt += 1;
            let mut req = self.inner.post(url).json(body);
            if let Some(token) = &self.cfg.auth_token {
                req = req.bearer_auth(token);
            }
            let retryable = match req.send() {
                Ok(resp) => {
                    let status = resp.status();
                    let text = resp.text().map_err(|e| BackendError::Transport {
                        attempts: attempt,
                        message: e.to_string(),
                    });
                    if status.is_success() {
                        let text = text?;
                        return serde_json::from_str(&text).map_err(|e| BackendError::Parse {
                            message: format!("invalid response body: {e}"),
                            raw: text,
                        });
                    }
                    let err = BackendError::Status {
                        status: status.as_u16(),
                        body: text.unwrap_or_default(),
                    };
                    if !status.is_server_error() {
                        return Err(err);
                    }
                    err
                }
                Err(e) => BackendError::Transport {
                    attempts: attempt,
                    message: e.to_string(),
                },
            };
            if attempt > self.cfg.max_retries {
                return Err(retryable);
            }
            self.retries.fetch_add(1, Ordering::Relaxed);
            let delay = self.cfg.backoff_base * 2u32.saturating_pow(attempt - 1);
            log::warn!("{url}: attempt {attempt} failed ({retryable}); retrying in {delay:?}");
            std::thread::sleep(delay);
        }
    }
}

/// Joins a base endpoint and a path without doubling slashes.
pub fn endpoint_url(base: &str, path: &str) -> String {
    let base = base.trim_end_matches('/');
    if base.ends_with(path) {
        base.to_string()
    } else {
        format!("{base}{path}")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn png_base64_roundtrip() {
        let mut img = RgbImage::new(4, 3);
        img.put_pixel(1, 2, image::Rgb([1, 2, 3]));
        assert_eq!(decode_png_base64(&encode_png_base64(&img)).unwrap(), img);
        assert!(decode_png_base64("not base64!").is_err());
    }

    #[test]
    fn urls() {
        assert_eq!(endpoint_url("http://h:1/", IMAGINE_PATH), "http://h:1/v1/imagine");
        assert_eq!(endpoint_url("http://h:1/v1/act", ACT_PATH), "http://h:1/v1/act");
    }

    #[test]
    fn optional_fields_are_omitted() {
        let req = ImagineRequest {
            instruction: "find".into(),
            views: vec![],
            sampling: WireSampling { temperature: 0.0, top_k: 50 },
            scene_id: None,
            seed: None,
            request_id: None,
        };
        let v = serde_json::to_value(&req).unwrap();
        assert_eq!(v, serde_json::json!({"instruction": "find", "views": [], "sampling": {"temperature": 0.0, "top_k": 50}}));
    }
}
