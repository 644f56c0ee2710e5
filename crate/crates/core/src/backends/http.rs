//! Blocking JSON-over-HTTP client for remote model backends.

use std::thread;
use std::time::Duration;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use ureq::Agent;

use super::validate::{check_interpolate, check_nvs, check_pose, parse_response};
use super::wire::*;
use super::{BackendError, Interpolator, PoseEstimator, Role, ViewSynthesizer};

/// Delays before the first and second retry of a failed transport.
pub const RETRY_BACKOFF: [Duration; 2] = [Duration::from_millis(500), Duration::from_millis(2000)];

const MAX_RESPONSE_BYTES: u64 = 1 << 30;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HttpConfig {
    /// Base URLs; requests go to `{base}/v1/{role}`.
    pub interpolate_url: Option<String>,
    pub nvs_url: Option<String>,
    pub pose_url: Option<String>,
    pub timeout_secs: f64,
}

impl Default for HttpConfig {
    fn default() -> Self {
        Self { interpolate_url: None, nvs_url: None, pose_url: None, timeout_secs: 300.0 }
    }
}

impl HttpConfig {
    /// Same base URL for every role.
    pub fn all(base: &str) -> Self {
        Self {
            interpolate_url: Some(base.to_string()),
            nvs_url: Some(base.to_string()),
            pose_url: Some(base.to_string()),
            ..Self::default()
        }
    }

    /// Applies `POSECRAFT_{INTERPOLATE,NVS,POSE}_URL` and `POSECRAFT_TIMEOUT_SECS`.
    pub fn apply_env(&mut self, get: impl Fn(&str) -> Option<String>) {
        if let Some(v) = get("POSECRAFT_INTERPOLATE_URL") {
            self.interpolate_url = Some(v);
        }
        if let Some(v) = get("POSECRAFT_NVS_URL") {
            self.nvs_url = Some(v);
        }
        if let Some(v) = get("POSECRAFT_POSE_URL") {
            self.pose_url = Some(v);
        }
        if let Some(v) = get("POSECRAFT_TIMEOUT_SECS").and_then(|v| v.parse().ok()) {
            self.timeout_secs = v;
        }
    }

    fn base(&self, role: Role) -> Option<&str> {
        match role {
            Role::Interpolate => self.interpolate_url.as_deref(),
            Role::Nvs => self.nvs_url.as_deref(),
            Role::Pose => self.pose_url.as_deref(),
        }
    }

    pub fn url(&self, role: Role) -> Option<String> {
        self.base(role).map(|b| format!("{}{}", b.trim_end_matches('/'), role.path()))
    }
}

/// Client for all three roles. Safe to share across threads.
pub struct HttpBackend {
    cfg: HttpConfig,
    agent: Agent,
    backoff: [Duration; 2],
}

impl HttpBackend {
    pub fn new(cfg: HttpConfig) -> Self {
        let agent: Agent = Agent::config_builder()
            .timeout_global(Some(Duration::from_secs_f64(cfg.timeout_secs.max(0.001))))
            .http_status_as_error(false)
            .build()
            .into();
        Self { cfg, agent, backoff: RETRY_BACKOFF }
    }

    pub fn config(&self) -> &HttpConfig {
        &self.cfg
    }

    fn post_once(&self, url: &str, role: Role, body: &[u8]) -> Result<Vec<u8>, Attempt> {
        let mut resp = self
            .agent
            .post(url)
            .header("content-type", "application/json")
            .send(body)
            .map_err(|e| classify(role, e))?;
        let status = resp.status().as_u16();
        let bytes = resp
            .body_mut()
            .with_config()
            .limit(MAX_RESPONSE_BYTES)
            .read_to_vec()
            .map_err(|e| classify(role, e))?;
        if !(200..300).contains(&status) {
            let body = String::from_utf8_lossy(&bytes).chars().take(500).collect();
            return Err(Attempt::Fatal(BackendError::Status { role, status, body }));
        }
        Ok(bytes)
    }

    /// POSTs `req` to the role endpoint and parses the reply. Transport
    /// failures are retried twice with 0.5 s and 2 s pauses.
    pub fn call<Req: Serialize, Resp: DeserializeOwned>(&self, role: Role, req: &Req) -> Result<Resp, BackendError> {
        let url = self.cfg.url(role).ok_or(BackendError::NotConfigured { role })?;
        let body = serde_json::to_vec(req).expect("wire types serialise");
        let mut attempt = 0;
        loop {
            attempt += 1;
            match self.post_once(&url, role, &body) {
                Ok(bytes) => return parse_response(role, &bytes),
                Err(Attempt::Fatal(e)) => return Err(e),
                Err(Attempt::Retry(message)) => {
                    if attempt > self.backoff.len() {
                        return Err(BackendError::Transport { role, attempts: attempt, message });
                    }
                    log::warn!("{role}: attempt {attempt} failed ({message}); retrying");
                    thread::sleep(self.backoff[attempt - 1]);
                }
            }
        }
    }
}

enum Attempt {
    Retry(String),
    Fatal(BackendError),
}

fn classify(role: Role, e: ureq::Error) -> Attempt {
    match e {
        ureq::Error::Timeout(_) => Attempt::Fatal(BackendError::Timeout { role }),
        ureq::Error::Io(ref io) if io.kind() == std::io::ErrorKind::TimedOut => {
            Attempt::Fatal(BackendError::Timeout { role })
        }
        other => Attempt::Retry(other.to_string()),
    }
}

impl Interpolator for HttpBackend {
    fn interpolate(&self, req: &InterpolateRequest) -> Result<InterpolateResponse, BackendError> {
        let resp: InterpolateResponse = self.call(Role::Interpolate, req)?;
        check_interpolate(req, &resp)?;
        Ok(resp)
    }
}

impl ViewSynthesizer for HttpBackend {
    fn synthesize(&self, req: &NvsRequest) -> Result<NvsResponse, BackendError> {
        let resp: NvsResponse = self.call(Role::Nvs, req)?;
        check_nvs(req, &resp)?;
        Ok(resp)
    }
}

impl PoseEstimator for HttpBackend {
    fn estimate(&self, req: &PoseRequest) -> Result<PoseResponse, BackendError> {
        let resp: PoseResponse = self.call(Role::Pose, req)?;
        check_pose(req, &resp)?;
        Ok(resp)
    }
}
