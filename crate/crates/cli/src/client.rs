//! Blocking HTTP client for the gateway API.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::time::{Duration, Instant};

use reconlab_core::orchestrator::{JobState, JobStatus};
use reconlab_core::recon::{BackendDescriptor, ParamValues};
use reconlab_core::stats::ViewFilter;
use reconlab_core::transfer::{md5_hex, StoredFile};
use reconlab_gateway::api::{
    CreateStudyRequest, JobRequest, LoginResponse, NextResponse, RegisterResponse, ReportResponse,
    ScoresRequest, ScoresResponse, StudySummary, UploadResponse, WireScore,
};
use reconlab_gateway::ErrorEnvelope;
use reqwest::blocking::{Client as Http, RequestBuilder};
use reqwest::Method;
use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::json;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ClientError {
    #[error("server returned {status} {code}: {message}")]
    Api {
        status: u16,
        code: String,
        message: String,
    },
    #[error("transport: {0}")]
    Transport(#[from] reqwest::Error),
    #[error("{0}")]
    Io(#[from] std::io::Error),
    #[error("job {job} {state}: {message}")]
    JobFailed {
        job: String,
        state: String,
        message: String,
    },
    #[error("timed out waiting for {0}")]
    Timeout(String),
}

impl ClientError {
    /// Server error code, or a local code for client-side failures.
    pub fn code(&self) -> &str {
        match self {
            ClientError::Api { code, .. } => code,
            ClientError::Transport(_) => "transport",
            ClientError::Io(_) => "io",
            ClientError::JobFailed { .. } => "job_failed",
            ClientError::Timeout(_) => "timeout",
        }
    }
}

pub type Result<T> = std::result::Result<T, ClientError>;

#[derive(Debug, Clone)]
pub struct Client {
    base: String,
    http: Http,
    token: Option<String>,
    upload_threads: usize,
}

impl Client {
    pub fn new(base: &str) -> Result<Self> {
        Ok(Self {
            base: base.trim_end_matches('/').to_string(),
            http: Http::builder().timeout(Duration::from_secs(300)).build()?,
            token: None,
            upload_threads: 4,
        })
    }

    pub fn with_token(mut self, token: impl Into<String>) -> Self {
        self.token = Some(token.into());
        self
    }

    pub fn with_upload_threads(mut self, n: usize) -> Self {
        self.upload_threads = n.max(1);
        self
    }

    pub fn token(&self) -> Option<&str> {
        self.token.as_deref()
    }

    fn req(&self, method: Method, path: &str) -> RequestBuilder {
        let b = self.http.request(method, format!("{}{}", self.base, path));
        match &self.token {
            Some(t) => b.bearer_auth(t),
            None => b,
        }
    }

    fn send(&self, b: RequestBuilder) -> Result<reqwest::blocking::Response> {
        let r = b.send()?;
        if r.status().is_success() {
            return Ok(r);
        }
        let status = r.status().as_u16();
        let text = r.text().unwrap_or_default();
        Err(match serde_json::from_str::<ErrorEnvelope>(&text) {
            Ok(env) => ClientError::Api {
                status,
                code: env.error.code,
                message: env.error.message,
            },
            Err(_) => ClientError::Api {
                status,
                code: "http_error".into(),
                message: text,
            },
        })
    }

    fn json<T: DeserializeOwned>(&self, b: RequestBuilder) -> Result<T> {
        Ok(self.send(b)?.json()?)
    }

    fn post<B: Serialize, T: DeserializeOwned>(&self, path: &str, body: &B) -> Result<T> {
        self.json(self.req(Method::POST, path).json(body))
    }

    fn get<T: DeserializeOwned>(&self, path: &str) -> Result<T> {
        self.json(self.req(Method::GET, path))
    }

    pub fn register(&self, username: &str, password: &str, role: &str) -> Result<RegisterResponse> {
        self.post(
            "/auth/register",
            &json!({"username": username, "password": password, "role": role}),
        )
    }

    /// Log in and keep the token for subsequent calls.
    pub fn login(&mut self, username: &str, password: &str) -> Result<LoginResponse> {
        let r: LoginResponse = self.post(
            "/auth/login",
            &json!({"username": username, "password": password}),
        )?;
        self.token = Some(r.token.clone());
        Ok(r)
    }

    /// Chunked upload with chunks sent from several threads.
    pub fn upload(&self, bytes: &[u8], chunk_size: Option<u64>) -> Result<StoredFile> {
        let mut manifest = json!({"file_size": bytes.len(), "file_md5": md5_hex(bytes)});
        if let Some(c) = chunk_size {
            manifest["chunk_size"] = json!(c);
        }
        let session: UploadResponse = self.post("/uploads", &manifest)?;
        let chunk = session.chunk_size as usize;
        let next = AtomicUsize::new(0);
        let count = session.chunk_count as usize;
        std::thread::scope(|s| {
            let workers: Vec<_> = (0..self.upload_threads.min(count.max(1)))
                .map(|_| {
                    s.spawn(|| -> Result<()> {
                        loop {
                            let i = next.fetch_add(1, Ordering::Relaxed);
                            if i >= count {
                                return Ok(());
                            }
                            let part = bytes[i * chunk..((i + 1) * chunk).min(bytes.len())].to_vec();
                            let path = format!("/uploads/{}/chunks/{i}", session.session_id);
                            self.send(self.req(Method::PUT, &path).body(part))?;
                        }
                    })
                })
                .collect();
            workers
                .into_iter()
                .try_for_each(|w| w.join().expect("upload worker panicked"))
        })?;
        self.post(&format!("/uploads/{}/complete", session.session_id), &json!({}))
    }

    pub fn backends(&self) -> Result<Vec<BackendDescriptor>> {
        self.get("/backends")
    }

    pub fn submit_job(&self, dataset: &str, backend: &str, params: ParamValues) -> Result<JobStatus> {
        self.post(
            "/jobs",
            &JobRequest {
                dataset: dataset.into(),
                backend: backend.into(),
                params,
            },
        )
    }

    pub fn job_status(&self, job: &str) -> Result<JobStatus> {
        self.get(&format!("/jobs/{job}"))
    }

    /// Poll until the job is terminal; a failed job is an error.
    pub fn wait_job(&self, job: &str, timeout: Duration) -> Result<JobStatus> {
        let deadline = Instant::now() + timeout;
        let mut delay = Duration::from_millis(10);
        loop {
            let s = self.job_status(job)?;
            match s.state {
                JobState::Done => return Ok(s),
                JobState::Failed => {
                    return Err(ClientError::JobFailed {
                        job: job.into(),
                        state: "failed".into(),
                        message: s.error_message.unwrap_or_default(),
                    })
                }
                _ if Instant::now() >= deadline => return Err(ClientError::Timeout(format!("job {job}"))),
                _ => {
                    std::thread::sleep(delay);
                    delay = (delay * 2).min(Duration::from_millis(250));
                }
            }
        }
    }

    pub fn job_result(&self, job: &str) -> Result<Vec<u8>> {
        Ok(self
            .send(self.req(Method::GET, &format!("/jobs/{job}/result")))?
            .bytes()?
            .to_vec())
    }

    pub fn create_study(&self, req: &CreateStudyRequest) -> Result<StudySummary> {
        self.post("/studies", req)
    }

    pub fn next_case(&self, study: &str, reader: Option<&str>) -> Result<NextResponse> {
        let path = match reader {
            Some(r) => format!("/studies/{study}/next?reader={r}"),
            None => format!("/studies/{study}/next"),
        };
        self.get(&path)
    }

    pub fn submit_scores(&self, study: &str, case: &str, scores: Vec<WireScore>) -> Result<ScoresResponse> {
        self.post(
            &format!("/studies/{study}/cases/{case}/scores"),
            &ScoresRequest { scores },
        )
    }

    pub fn close_study(&self, study: &str) -> Result<serde_json::Value> {
        self.post(&format!("/studies/{study}/close"), &json!({}))
    }

    pub fn report(&self, study: &str, view: ViewFilter) -> Result<ReportResponse> {
        self.get(&format!("/studies/{study}/report?view={view}"))
    }

    pub fn scores_csv(&self, study: &str) -> Result<String> {
        Ok(self
            .send(self.req(Method::GET, &format!("/stats/{study}/scores")))?
            .text()?)
    }
}

/// Parse `k=v` job parameters; values that read as JSON keep their type.
pub fn parse_params<'a>(
    pairs: impl IntoIterator<Item = &'a str>,
) -> std::result::Result<ParamValues, String> {
    let mut out = ParamValues::new();
    for p in pairs {
        let (k, v) = p
            .split_once('=')
            .ok_or_else(|| format!("parameter `{p}` is not of the form key=value"))?;
        let value = serde_json::from_str(v).unwrap_or_else(|_| serde_json::Value::String(v.to_string()));
        out.insert(k.trim().to_string(), value);
    }
    Ok(out)
}
