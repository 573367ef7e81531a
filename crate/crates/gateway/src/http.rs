//! JSON-over-HTTP surface for the scanner console.
//!
//! Card payloads always travel as `SPC1:` strings. Errors come back as
//! `{"error": <name>, "message": <text>}` with the status from
//! [`crate::failure::http_status_for`].

use std::collections::HashMap;
use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{Query, State};
use axum::http::{Method, StatusCode, Uri};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::de::DeserializeOwned;
use serde::Deserialize;
use serde_json::{json, Value};
use vaxcard_core::{Dimension, Pii};

use crate::failure::Failure;
use crate::service::{ClinicInput, DoseInput, Gateway};

impl IntoResponse for Failure {
    fn into_response(self) -> Response {
        let status = StatusCode::from_u16(self.http_status()).unwrap_or(StatusCode::INTERNAL_SERVER_ERROR);
        (status, Json(json!({"error": self.name(), "message": self.message()}))).into_response()
    }
}

type ApiResult = Result<Json<Value>, Failure>;

fn body<T: DeserializeOwned>(bytes: &Bytes) -> Result<T, Failure> {
    serde_json::from_slice(bytes).map_err(|e| Failure::MalformedBody(e.to_string()))
}

fn to_json<T: serde::Serialize>(value: T) -> ApiResult {
    Ok(Json(serde_json::to_value(value).expect("response types serialize")))
}

fn body_str(bytes: &Bytes) -> Result<&str, Failure> {
    std::str::from_utf8(bytes).map_err(|_| Failure::MalformedBody("body is not UTF-8".into()))
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct CardBody {
    card_text: String,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct Dose1Body {
    card_text: String,
    pii: Pii,
    dose: DoseInput,
    clinic: ClinicInput,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct Dose2Body {
    badge_card_text: String,
    passkey_card_text: String,
    dose: DoseInput,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct NameBody {
    status_card_text: String,
    passkey_card_text: String,
    coupon_id: String,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct FullBody {
    badge_card_text: String,
    passkey_card_text: String,
}

async fn health() -> Json<Value> {
    Json(json!({"status": "ok", "version": env!("CARGO_PKG_VERSION")}))
}

async fn checkin(State(gw): State<Arc<Gateway>>, bytes: Bytes) -> ApiResult {
    let req: CardBody = body(&bytes)?;
    to_json(gw.checkin(&req.card_text)?)
}

async fn dose1(State(gw): State<Arc<Gateway>>, bytes: Bytes) -> ApiResult {
    let req: Dose1Body = body(&bytes)?;
    to_json(gw.dose1(&req.card_text, &req.pii, &req.dose, &req.clinic)?)
}

async fn dose2(State(gw): State<Arc<Gateway>>, bytes: Bytes) -> ApiResult {
    let req: Dose2Body = body(&bytes)?;
    to_json(gw.dose2(&req.badge_card_text, &req.passkey_card_text, &req.dose)?)
}

async fn verify_status(State(gw): State<Arc<Gateway>>, bytes: Bytes) -> ApiResult {
    let req: CardBody = body(&bytes)?;
    to_json(gw.verify_status(&req.card_text)?)
}

async fn verify_name(State(gw): State<Arc<Gateway>>, bytes: Bytes) -> ApiResult {
    let req: NameBody = body(&bytes)?;
    to_json(gw.verify_name(&req.status_card_text, &req.passkey_card_text, &req.coupon_id)?)
}

async fn verify_full(State(gw): State<Arc<Gateway>>, bytes: Bytes) -> ApiResult {
    let req: FullBody = body(&bytes)?;
    to_json(gw.verify_full(&req.badge_card_text, &req.passkey_card_text)?)
}

async fn registry_record(State(gw): State<Arc<Gateway>>, bytes: Bytes) -> ApiResult {
    to_json(gw.submit_record_json(body_str(&bytes)?)?)
}

async fn registry_symptom(State(gw): State<Arc<Gateway>>, bytes: Bytes) -> ApiResult {
    to_json(gw.submit_symptom_json(body_str(&bytes)?)?)
}

async fn registry_aggregate(
    State(gw): State<Arc<Gateway>>,
    Query(params): Query<HashMap<String, String>>,
) -> ApiResult {
    let raw = params
        .get("dimension")
        .ok_or_else(|| Failure::MalformedBody("missing dimension query parameter".into()))?;
    let dimension: Dimension = raw.parse().map_err(Failure::MalformedBody)?;
    to_json(gw.aggregate(dimension))
}

async fn access_log(
    State(gw): State<Arc<Gateway>>,
    method: Method,
    uri: Uri,
    req: axum::extract::Request,
    next: axum::middleware::Next,
) -> Response {
    let resp = next.run(req).await;
    gw.audit()
        .record(format!("http {} {} status={}", method, uri.path(), resp.status().as_u16()));
    resp
}

pub fn router(gateway: Arc<Gateway>) -> Router {
    Router::new()
        .route("/api/health", get(health))
        .route("/api/checkin", post(checkin))
        .route("/api/dose1", post(dose1))
        .route("/api/dose2", post(dose2))
        .route("/api/verify/status", post(verify_status))
        .route("/api/verify/name", post(verify_name))
        .route("/api/verify/full", post(verify_full))
        .route("/api/registry/record", post(registry_record))
        .route("/api/registry/symptom", post(registry_symptom))
        .route("/api/registry/aggregate", get(registry_aggregate))
        .layer(axum::middleware::from_fn_with_state(gateway.clone(), access_log))
        .with_state(gateway)
}

pub async fn serve(gateway: Arc<Gateway>) -> std::io::Result<()> {
    let addr = gateway.config().listen_address.clone();
    let listener = tokio::net::TcpListener::bind(&addr).await?;
    tracing::info!("listening on http://{}", listener.local_addr()?);
    axum::serve(listener, router(gateway))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}
