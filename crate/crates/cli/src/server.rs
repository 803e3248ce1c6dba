//! Read-only HTTP inference over a directory of bundles.

use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};
use std::time::Instant;

use axum::body::Bytes;
use axum::extract::{Path as UrlPath, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::Router;
use base64::Engine;
use serde::Serialize;

use idblend::bundle::{read_manifest, MANIFEST};
use idblend::{load_bundle, Bundle};

use crate::wire::{
    b64_png, execute, execute_morph, ApiError, ApiResult, GenerateRequest, GenerateResponse, ModelInfo, MorphRequest,
    MorphResponse,
};

/// Bundles under a root directory (or the root itself when it is a bundle),
/// loaded on first use and kept in a small LRU.
pub struct Registry {
    root: PathBuf,
    capacity: usize,
    /// Most recently used last.
    cache: Mutex<Vec<(String, Arc<Bundle>)>>,
}

fn is_bundle(dir: &Path) -> bool {
    dir.join(MANIFEST).is_file()
}

impl Registry {
    pub fn new(root: impl Into<PathBuf>, capacity: usize) -> Self {
        Registry {
            root: root.into(),
            capacity: capacity.max(1),
            cache: Mutex::new(Vec::new()),
        }
    }

    fn root_id(&self) -> String {
        self.root
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_else(|| "model".into())
    }

    pub fn model_ids(&self) -> Vec<String> {
        if is_bundle(&self.root) {
            return vec![self.root_id()];
        }
        let mut ids: Vec<String> = std::fs::read_dir(&self.root)
            .into_iter()
            .flatten()
            .flatten()
            .filter(|e| is_bundle(&e.path()))
            .map(|e| e.file_name().to_string_lossy().into_owned())
            .collect();
        ids.sort();
        ids
    }

    fn dir_for(&self, id: &str) -> Option<PathBuf> {
        if is_bundle(&self.root) {
            return (id == self.root_id()).then(|| self.root.clone());
        }
        if id.is_empty() || id.contains(['/', '\\']) || id.starts_with('.') {
            return None;
        }
        let d = self.root.join(id);
        is_bundle(&d).then_some(d)
    }

    pub fn get(&self, id: &str) -> ApiResult<Arc<Bundle>> {
        {
            let mut c = self.cache.lock().unwrap();
            if let Some(i) = c.iter().position(|(k, _)| k == id) {
                let e = c.remove(i);
                let b = e.1.clone();
                c.push(e);
                return Ok(b);
            }
        }
        let dir = self.dir_for(id).ok_or_else(|| ApiError::not_found(format!("unknown model {id:?}")))?;
        let b = Arc::new(load_bundle(&dir)?);
        let mut c = self.cache.lock().unwrap();
        if !c.iter().any(|(k, _)| k == id) {
            c.push((id.to_string(), b.clone()));
            while c.len() > self.capacity {
                c.remove(0);
            }
        }
        Ok(b)
    }

    /// Ids currently held in memory, least recently used first.
    pub fn cached(&self) -> Vec<String> {
        self.cache.lock().unwrap().iter().map(|(k, _)| k.clone()).collect()
    }

    pub fn info(&self, id: &str) -> ApiResult<ModelInfo> {
        let dir = self.dir_for(id).ok_or_else(|| ApiError::not_found(format!("unknown model {id:?}")))?;
        let m = read_manifest(&dir)?;
        let thumbnails = m
            .images
            .iter()
            .map(|e| {
                let p = dir.join(&e.path);
                std::fs::read(&p)
                    .map(|b| base64::engine::general_purpose::STANDARD.encode(b))
                    .map_err(|err| ApiError::from(idblend::Error::io(&p, err)))
            })
            .collect::<ApiResult<Vec<_>>>()?;
        let (h, w) = m.plan.full_size();
        Ok(ModelInfo {
            model_id: id.to_string(),
            num_ids: m.images.len(),
            scales: m.plan.num_scales(),
            size: [h, w],
            thumbnails,
        })
    }
}

fn json<T: Serialize>(status: StatusCode, body: &T) -> Response {
    let bytes = serde_json::to_vec(body).expect("serializable response");
    (status, [(header::CONTENT_TYPE, "application/json")], bytes).into_response()
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let status = StatusCode::from_u16(self.status).unwrap_or(StatusCode::INTERNAL_SERVER_ERROR);
        json(status, &self)
    }
}

fn parse<T: serde::de::DeserializeOwned>(body: &Bytes) -> ApiResult<T> {
    serde_json::from_slice(body).map_err(|e| ApiError::bad_request("json", format!("malformed request: {e}")))
}

async fn blocking<T: Send + 'static>(f: impl FnOnce() -> ApiResult<T> + Send + 'static) -> ApiResult<T> {
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ApiError::new(500, "internal", e.to_string()))?
}

async fn list_models(State(reg): State<Arc<Registry>>) -> Response {
    let r = blocking(move || reg.model_ids().iter().map(|id| reg.info(id)).collect::<ApiResult<Vec<_>>>()).await;
    match r {
        Ok(v) => json(StatusCode::OK, &v),
        Err(e) => e.into_response(),
    }
}

async fn generate(State(reg): State<Arc<Registry>>, UrlPath(id): UrlPath<String>, body: Bytes) -> Response {
    let r = blocking(move || {
        let req: GenerateRequest = parse(&body)?;
        let bundle = reg.get(&id)?;
        let t0 = Instant::now();
        let img = execute(&bundle.model, &req)?;
        let timing_ms = req.timing.then(|| t0.elapsed().as_millis() as u64);
        Ok(GenerateResponse {
            image: b64_png(&img),
            request_echo: req,
            timing_ms,
        })
    })
    .await;
    match r {
        Ok(v) => json(StatusCode::OK, &v),
        Err(e) => e.into_response(),
    }
}

async fn morph(State(reg): State<Arc<Registry>>, UrlPath(id): UrlPath<String>, body: Bytes) -> Response {
    let r = blocking(move || {
        let req: MorphRequest = parse(&body)?;
        let bundle = reg.get(&id)?;
        let frames = execute_morph(&bundle.model, &req)?;
        Ok(MorphResponse {
            frames: frames.iter().map(b64_png).collect(),
        })
    })
    .await;
    match r {
        Ok(v) => json(StatusCode::OK, &v),
        Err(e) => e.into_response(),
    }
}

pub fn router(reg: Arc<Registry>) -> Router {
    Router::new()
        .route("/models", get(list_models))
        .route("/models/{id}/generate", post(generate))
        .route("/models/{id}/morph", post(morph))
        .with_state(reg)
}

pub async fn serve(reg: Arc<Registry>, addr: SocketAddr) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    eprintln!("listening on http://{}", listener.local_addr()?);
    axum::serve(listener, router(reg))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}
