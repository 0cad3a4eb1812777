use std::future::Future;

use axum::body::Bytes;
use axum::extract::{Path, State};
use axum::http::{header, HeaderMap, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::de::DeserializeOwned;
use tokio::net::TcpListener;

use super::{ApiError, ErrorDoc, KeyDeliveryService};

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let status = StatusCode::from_u16(self.http_status()).unwrap_or(StatusCode::INTERNAL_SERVER_ERROR);
        (status, Json(ErrorDoc { message: self.to_string() })).into_response()
    }
}

fn bearer(headers: &HeaderMap) -> Option<&str> {
    headers
        .get(header::AUTHORIZATION)?
        .to_str()
        .ok()?
        .strip_prefix("Bearer ")
        .map(str::trim)
}

/// An empty body means all defaults.
fn parse_body<T: DeserializeOwned + Default>(body: &Bytes) -> Result<T, ApiError> {
    if body.iter().all(u8::is_ascii_whitespace) {
        return Ok(T::default());
    }
    serde_json::from_slice(body).map_err(|e| ApiError::BadRequest(format!("malformed body: {e}")))
}

async fn status(State(svc): State<KeyDeliveryService>, Path(slave): Path<String>, headers: HeaderMap) -> Response {
    match svc.status(bearer(&headers), &slave) {
        Ok(doc) => Json(doc).into_response(),
        Err(e) => e.into_response(),
    }
}

async fn enc_keys(
    State(svc): State<KeyDeliveryService>,
    Path(slave): Path<String>,
    headers: HeaderMap,
    body: Bytes,
) -> Response {
    let result = parse_body(&body).and_then(|req| svc.enc_keys(bearer(&headers), &slave, &req));
    match result {
        Ok(c) => Json(c).into_response(),
        Err(e) => e.into_response(),
    }
}

async fn dec_keys(
    State(svc): State<KeyDeliveryService>,
    Path(master): Path<String>,
    headers: HeaderMap,
    body: Bytes,
) -> Response {
    let result = parse_body(&body).and_then(|req| svc.dec_keys(bearer(&headers), &master, &req));
    match result {
        Ok(c) => Json(c).into_response(),
        Err(e) => e.into_response(),
    }
}

pub fn router(service: KeyDeliveryService) -> Router {
    Router::new()
        .route("/api/v1/keys/:sae/status", get(status))
        .route("/api/v1/keys/:sae/enc_keys", post(enc_keys))
        .route("/api/v1/keys/:sae/dec_keys", post(dec_keys))
        .with_state(service)
}

/// Serves the API on `listener` until `shutdown` resolves, then lets
/// in-flight requests finish.
pub async fn serve_api(
    listener: TcpListener,
    service: KeyDeliveryService,
    shutdown: impl Future<Output = ()> + Send + 'static,
) -> std::io::Result<()> {
    axum::serve(listener, router(service))
        .with_graceful_shutdown(shutdown)
        .await
}
