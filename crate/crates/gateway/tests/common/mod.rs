#![allow(dead_code)]

use axum::body::Body;
use axum::http::{Method, Request, StatusCode};
use axum::Router;
use http_body_util::BodyExt;
use serde_json::Value;
use tower::ServiceExt;

use tstkit_core::eval::{self, Phantom, PhantomSpec};
use tstkit_core::records::RecordStore;
use tstkit_core::CalibrationTable;
use tstkit_gateway::api::{self, AppState};
use tstkit_gateway::config::Config;

pub const BOUNDARY: &str = "tstkit-test-boundary";

pub struct TestApp {
    pub dir: tempfile::TempDir,
    pub state: AppState,
    pub router: Router,
}

impl TestApp {
    pub fn new() -> Self {
        Self::with_config(Config::default())
    }

    pub fn with_config(config: Config) -> Self {
        let dir = tempfile::tempdir().unwrap();
        let store = RecordStore::open(dir.path()).unwrap();
        let state = AppState::new(store, config);
        let router = api::router(state.clone());
        Self { dir, state, router }
    }

    pub async fn send(&self, req: Request<Body>) -> (StatusCode, Vec<u8>, Option<String>) {
        let resp = self.router.clone().oneshot(req).await.unwrap();
        let status = resp.status();
        let ct = resp
            .headers()
            .get("content-type")
            .map(|v| v.to_str().unwrap().to_string());
        let body = resp.into_body().collect().await.unwrap().to_bytes().to_vec();
        (status, body, ct)
    }

    pub async fn json(&self, method: Method, uri: &str, body: Option<Value>) -> (StatusCode, Value) {
        let mut b = Request::builder().method(method).uri(uri);
        let body = match body {
            Some(v) => {
                b = b.header("content-type", "application/json");
                Body::from(v.to_string())
            }
            None => Body::empty(),
        };
        let (status, bytes, _) = self.send(b.body(body).unwrap()).await;
        let v = if bytes.is_empty() {
            Value::Null
        } else {
            serde_json::from_slice(&bytes).unwrap_or_else(|_| {
                panic!("non-JSON body from {uri}: {}", String::from_utf8_lossy(&bytes))
            })
        };
        (status, v)
    }

    pub async fn create_case(&self, administered_at: Option<&str>) -> Value {
        let body = administered_at.map(|t| serde_json::json!({ "administered_at": t }));
        let (status, v) = self.json(Method::POST, "/cases", body).await;
        assert_eq!(status, StatusCode::CREATED, "{v}");
        v
    }

    pub async fn upload(&self, case_id: &str, parts: &[Part<'_>]) -> (StatusCode, Value) {
        let req = Request::builder()
            .method(Method::POST)
            .uri(format!("/cases/{case_id}/captures"))
            .header("content-type", format!("multipart/form-data; boundary={BOUNDARY}"))
            .body(Body::from(multipart(parts)))
            .unwrap();
        let (status, bytes, _) = self.send(req).await;
        (status, serde_json::from_slice(&bytes).unwrap())
    }
}

pub struct Part<'a> {
    pub name: &'a str,
    pub content_type: Option<&'a str>,
    pub bytes: Vec<u8>,
}

impl<'a> Part<'a> {
    pub fn new(name: &'a str, content_type: &'a str, bytes: Vec<u8>) -> Self {
        Self {
            name,
            content_type: Some(content_type),
            bytes,
        }
    }

    pub fn gate(v: Value) -> Self {
        Self::new("gate", "application/json", v.to_string().into_bytes())
    }
}

pub fn multipart(parts: &[Part<'_>]) -> Vec<u8> {
    let mut out = Vec::new();
    for p in parts {
        out.extend_from_slice(format!("--{BOUNDARY}\r\n").as_bytes());
        out.extend_from_slice(
            format!(
                "Content-Disposition: form-data; name=\"{}\"; filename=\"{}\"\r\n",
                p.name, p.name
            )
            .as_bytes(),
        );
        if let Some(ct) = p.content_type {
            out.extend_from_slice(format!("Content-Type: {ct}\r\n").as_bytes());
        }
        out.extend_from_slice(b"\r\n");
        out.extend_from_slice(&p.bytes);
        out.extend_from_slice(b"\r\n");
    }
    out.extend_from_slice(format!("--{BOUNDARY}--\r\n").as_bytes());
    out
}

/// Phantom of `mm` at `depth_mm`, rendered at the harness scale.
pub fn phantom(mm: f64, depth_mm: f64) -> Phantom {
    let scale = eval::harness_scale(mm, &CalibrationTable::default()).unwrap();
    eval::generate_phantom(&PhantomSpec::new(mm, scale).at_depth(depth_mm)).unwrap()
}

pub fn level_gate() -> Value {
    serde_json::json!({ "timestamp_ms": 1000, "pitch_deg": 0.3, "roll_deg": -0.4 })
}
