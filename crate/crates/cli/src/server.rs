//! The synthetic backend served over the wire protocol.

use std::net::SocketAddr;
use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{DefaultBodyLimit, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::Router;
use posecraft_core::backends::{
    BackendError, ErrorBody, HealthResponse, Interpolator, PoseEstimator, Role, SyntheticBackend, ViewSynthesizer,
};
use serde::de::DeserializeOwned;
use serde::Serialize;

const BODY_LIMIT: usize = 1 << 30;

fn json(status: StatusCode, body: &impl Serialize) -> Response {
    let bytes = serde_json::to_vec(body).expect("wire types serialise");
    (status, [(header::CONTENT_TYPE, "application/json")], bytes).into_response()
}

fn error(status: StatusCode, message: String) -> Response {
    json(status, &ErrorBody { error: message })
}

async fn handle<Req, Resp>(
    backend: Arc<SyntheticBackend>,
    body: Bytes,
    f: fn(&SyntheticBackend, &Req) -> Result<Resp, BackendError>,
) -> Response
where
    Req: DeserializeOwned + Send + 'static,
    Resp: Serialize + Send + 'static,
{
    let req: Req = match serde_json::from_slice(&body) {
        Ok(r) => r,
        Err(e) => return error(StatusCode::BAD_REQUEST, format!("malformed request: {e}")),
    };
    match tokio::task::spawn_blocking(move || f(&backend, &req)).await {
        Ok(Ok(resp)) => json(StatusCode::OK, &resp),
        Ok(Err(e)) => error(StatusCode::BAD_REQUEST, e.to_string()),
        Err(e) => error(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()),
    }
}

pub fn router(backend: Arc<SyntheticBackend>) -> Router {
    Router::new()
        .route("/v1/interpolate", post(|State(b), body| handle(b, body, |b, r| b.interpolate(r))))
        .route("/v1/nvs", post(|State(b), body| handle(b, body, |b, r| b.synthesize(r))))
        .route("/v1/pose", post(|State(b), body| handle(b, body, |b, r| b.estimate(r))))
        .route(
            "/v1/health",
            get(|| async {
                let roles = Role::ALL.iter().map(|r| r.name().to_string()).collect();
                json(StatusCode::OK, &HealthResponse { status: "ok".into(), roles })
            }),
        )
        .layer(DefaultBodyLimit::max(BODY_LIMIT))
        .with_state(backend)
}

/// Binds, reports the bound address through `on_bind`, then serves forever.
pub fn serve(backend: SyntheticBackend, addr: SocketAddr, on_bind: impl FnOnce(SocketAddr)) -> anyhow::Result<()> {
    let rt = tokio::runtime::Builder::new_multi_thread().enable_all().build()?;
    rt.block_on(async move {
        let listener = tokio::net::TcpListener::bind(addr).await?;
        on_bind(listener.local_addr()?);
        axum::serve(listener, router(Arc::new(backend))).await?;
        Ok(())
    })
}
