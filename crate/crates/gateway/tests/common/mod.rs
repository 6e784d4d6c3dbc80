#![allow(dead_code)]

use std::net::SocketAddr;
use std::sync::Arc;
use std::thread::JoinHandle;
use std::time::{Duration, Instant};

use reconlab_core::clock::SystemClock;
use reconlab_core::rawdata::write_kspace;
use reconlab_core::recon::{piecewise_phantom, simulate_kspace};
use reconlab_core::transfer::md5_hex;
use reconlab_core::vault::test_keys;
use reconlab_gateway::config::DEV_PASSWORD;
use reconlab_gateway::{AppState, GatewayConfig, Server};
use reqwest::blocking::{Client, RequestBuilder, Response};
use serde_json::{json, Value};

pub struct TestServer {
    pub base: String,
    pub state: AppState,
    stop: Option<tokio::sync::oneshot::Sender<()>>,
    thread: Option<JoinHandle<()>>,
}

impl TestServer {
    pub fn start() -> Self {
        let config = GatewayConfig {
            bind: SocketAddr::from(([127, 0, 0, 1], 0)),
            dev_fixtures: true,
            token_secret: b"integration-test-secret".to_vec(),
            ..GatewayConfig::default()
        };
        let state = AppState::build(config, test_keys(), Arc::new(SystemClock)).unwrap();
        let (addr_tx, addr_rx) = std::sync::mpsc::channel();
        let (stop_tx, stop_rx) = tokio::sync::oneshot::channel::<()>();
        let served = state.clone();
        let thread = std::thread::spawn(move || {
            let rt = tokio::runtime::Runtime::new().unwrap();
            rt.block_on(async move {
                let server = Server::bind(served).await.unwrap();
                addr_tx.send(server.local_addr().unwrap()).unwrap();
                server
                    .run(async {
                        stop_rx.await.ok();
                    })
                    .await
                    .unwrap();
            });
        });
        let addr = addr_rx.recv().unwrap();
        Self {
            base: format!("http://{addr}"),
            state,
            stop: Some(stop_tx),
            thread: Some(thread),
        }
    }

    pub fn url(&self, path: &str) -> String {
        format!("{}{}", self.base, path)
    }

    pub fn client(&self) -> Api {
        Api {
            base: self.base.clone(),
            http: Client::builder()
                .timeout(Duration::from_secs(60))
                .build()
                .unwrap(),
            token: None,
        }
    }

    pub fn login(&self, user: &str) -> Api {
        self.login_with(user, DEV_PASSWORD)
    }

    pub fn login_with(&self, user: &str, password: &str) -> Api {
        let mut api = self.client();
        let res = api.post("/auth/login", &json!({"username": user, "password": password}));
        assert_eq!(res.0, 200, "{}", res.1);
        api.token = Some(res.1["token"].as_str().unwrap().to_string());
        api
    }
}

impl Drop for TestServer {
    fn drop(&mut self) {
        if let Some(tx) = self.stop.take() {
            tx.send(()).ok();
        }
        if let Some(t) = self.thread.take() {
            t.join().ok();
        }
    }
}

pub struct Api {
    pub base: String,
    pub http: Client,
    pub token: Option<String>,
}

impl Api {
    pub fn req(&self, method: reqwest::Method, path: &str) -> RequestBuilder {
        let b = self.http.request(method, format!("{}{}", self.base, path));
        match &self.token {
            Some(t) => b.bearer_auth(t),
            None => b,
        }
    }

    pub fn post(&self, path: &str, body: &Value) -> (u16, Value) {
        finish(self.req(reqwest::Method::POST, path).json(body).send().unwrap())
    }

    pub fn get(&self, path: &str) -> (u16, Value) {
        finish(self.req(reqwest::Method::GET, path).send().unwrap())
    }

    pub fn get_bytes(&self, path: &str) -> (u16, Vec<u8>) {
        let r = self.req(reqwest::Method::GET, path).send().unwrap();
        (r.status().as_u16(), r.bytes().unwrap().to_vec())
    }

    pub fn put_chunk(&self, session: &str, index: usize, bytes: Vec<u8>) -> (u16, Value) {
        finish(
            self.req(
                reqwest::Method::PUT,
                &format!("/uploads/{session}/chunks/{index}"),
            )
            .body(bytes)
            .send()
            .unwrap(),
        )
    }

    /// Upload `bytes` in chunks of `chunk` bytes, delivered in `order`.
    pub fn upload_ordered(&self, bytes: &[u8], chunk: usize, order: &[usize]) -> String {
        let (s, v) = self.post(
            "/uploads",
            &json!({"file_size": bytes.len(), "file_md5": md5_hex(bytes), "chunk_size": chunk}),
        );
        assert_eq!(s, 201, "{v}");
        let session = v["session_id"].as_str().unwrap().to_string();
        for &i in order {
            let end = ((i + 1) * chunk).min(bytes.len());
            let (s, v) = self.put_chunk(&session, i, bytes[i * chunk..end].to_vec());
            assert_eq!(s, 200, "{v}");
        }
        let (s, v) = self.post(&format!("/uploads/{session}/complete"), &json!({}));
        assert_eq!(s, 200, "{v}");
        v["content_id"].as_str().unwrap().to_string()
    }

    pub fn upload(&self, bytes: &[u8], chunk: usize) -> String {
        let n = bytes.len().div_ceil(chunk);
        self.upload_ordered(bytes, chunk, &(0..n).collect::<Vec<_>>())
    }

    pub fn wait_job(&self, job: &str) -> Value {
        let deadline = Instant::now() + Duration::from_secs(60);
        loop {
            let (s, v) = self.get(&format!("/jobs/{job}"));
            assert_eq!(s, 200, "{v}");
            match v["state"].as_str().unwrap() {
                "done" | "failed" => return v,
                _ if Instant::now() > deadline => panic!("job {job} did not finish: {v}"),
                _ => std::thread::sleep(Duration::from_millis(20)),
            }
        }
    }
}

pub fn finish(r: Response) -> (u16, Value) {
    let status = r.status().as_u16();
    let text = r.text().unwrap();
    let v = serde_json::from_str(&text).unwrap_or(Value::String(text));
    (status, v)
}

/// Small multi-slice k-space file with a view tag.
pub fn phantom_kspace(slices: usize, size: usize, view: &str) -> Vec<u8> {
    let images: Vec<Vec<f64>> = (0..slices as u64)
        .map(|v| piecewise_phantom(size, size, v))
        .collect();
    let vol = simulate_kspace(&images, size, size, 2)
        .unwrap()
        .with_meta("view", view)
        .unwrap()
        .with_meta("patient_name", "Jane Roe")
        .unwrap();
    write_kspace(&vol)
}
