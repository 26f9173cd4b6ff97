//! Operator HTTP API. Every response body is canonical JSON.

use std::future::Future;
use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{Path, Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::Router;
use serde::{Deserialize, Serialize};
use serde_json::json;
use tokio::net::TcpListener;

use super::batch::RetrainError;
use super::orders::{MaintenanceOrder, OrderError};
use super::predict::FailurePrediction;
use super::service::{AlertView, CloudError, CloudService};
use crate::canonical;

pub const DEFAULT_PAGE: usize = 50;
pub const MAX_PAGE: usize = 1000;

type Shared = Arc<CloudService>;

pub struct ApiError {
    status: StatusCode,
    message: String,
}

impl ApiError {
    fn new(status: StatusCode, message: impl Into<String>) -> Self {
        ApiError {
            status,
            message: message.into(),
        }
    }

    fn bad_request(message: impl Into<String>) -> Self {
        Self::new(StatusCode::BAD_REQUEST, message)
    }

    fn not_found(message: impl Into<String>) -> Self {
        Self::new(StatusCode::NOT_FOUND, message)
    }
}

impl From<CloudError> for ApiError {
    fn from(e: CloudError) -> Self {
        let status = match &e {
            CloudError::NotFound(_) => StatusCode::NOT_FOUND,
            CloudError::Order(OrderError::NotFound(_) | OrderError::UnknownPrediction(_)) => StatusCode::NOT_FOUND,
            CloudError::Order(OrderError::IllegalTransition { .. } | OrderError::AlreadyOpen { .. }) => {
                StatusCode::CONFLICT
            }
            CloudError::Predict(super::predict::PredictError::NoData(_)) => StatusCode::NOT_FOUND,
            CloudError::Retrain(RetrainError::TooFewRecords { .. }) | CloudError::NoModel(_) => StatusCode::CONFLICT,
            _ => StatusCode::INTERNAL_SERVER_ERROR,
        };
        ApiError::new(status, e.to_string())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let body = json!({"error": self.message, "status": self.status.as_u16()});
        canonical_response(self.status, &body)
    }
}

fn canonical_response<T: Serialize>(status: StatusCode, body: &T) -> Response {
    match canonical::to_line(body) {
        Ok(text) => (status, [(header::CONTENT_TYPE, "application/json")], text).into_response(),
        Err(e) => (
            StatusCode::INTERNAL_SERVER_ERROR,
            [(header::CONTENT_TYPE, "application/json")],
            format!("{{\"error\":\"encoding failed: {e}\",\"status\":500}}"),
        )
            .into_response(),
    }
}

fn ok<T: Serialize>(body: &T) -> Response {
    canonical_response(StatusCode::OK, body)
}

#[derive(Debug, Deserialize)]
struct Page {
    limit: Option<usize>,
    offset: Option<usize>,
}

impl Page {
    fn resolve(&self) -> Result<(usize, usize), ApiError> {
        let limit = self.limit.unwrap_or(DEFAULT_PAGE);
        if limit == 0 || limit > MAX_PAGE {
            return Err(ApiError::bad_request(format!("limit must be in 1..={MAX_PAGE}")));
        }
        Ok((limit, self.offset.unwrap_or(0)))
    }
}

fn page_query(q: Result<Query<Page>, axum::extract::rejection::QueryRejection>) -> Result<(usize, usize), ApiError> {
    let Query(p) = q.map_err(|e| ApiError::bad_request(e.body_text()))?;
    p.resolve()
}

fn parse_body<T: for<'de> Deserialize<'de>>(body: &Bytes) -> Result<T, ApiError> {
    serde_json::from_slice(body).map_err(|e| ApiError::bad_request(format!("malformed body: {e}")))
}

#[derive(Serialize)]
struct AlertDetail {
    #[serde(flatten)]
    alert: AlertView,
    #[serde(skip_serializing_if = "Option::is_none")]
    prediction: Option<FailurePrediction>,
    orders: Vec<MaintenanceOrder>,
}

async fn list_alerts(
    State(svc): State<Shared>,
    q: Result<Query<Page>, axum::extract::rejection::QueryRejection>,
) -> Result<Response, ApiError> {
    let (limit, offset) = page_query(q)?;
    let (alerts, total) = svc.alerts(limit, offset);
    Ok(ok(&json!({"alerts": alerts, "total": total, "limit": limit, "offset": offset})))
}

async fn get_alert(State(svc): State<Shared>, Path(id): Path<String>) -> Result<Response, ApiError> {
    let alert = svc
        .alert(&id)
        .ok_or_else(|| ApiError::not_found(format!("alert {id} not found")))?;
    let prediction = alert.prediction_id.as_deref().and_then(|p| svc.prediction(p));
    let orders = match &prediction {
        Some(p) => svc
            .orders()
            .into_iter()
            .filter(|o| o.prediction_id == p.prediction_id)
            .collect(),
        None => Vec::new(),
    };
    Ok(ok(&AlertDetail {
        alert,
        prediction,
        orders,
    }))
}

async fn equipment_prediction(State(svc): State<Shared>, Path(id): Path<String>) -> Result<Response, ApiError> {
    let p = svc
        .latest_prediction(&id)
        .ok_or_else(|| ApiError::not_found(format!("no prediction for equipment {id}")))?;
    Ok(ok(&p))
}

async fn list_orders(
    State(svc): State<Shared>,
    q: Result<Query<Page>, axum::extract::rejection::QueryRejection>,
) -> Result<Response, ApiError> {
    let (limit, offset) = page_query(q)?;
    let all = svc.orders();
    let total = all.len();
    let orders: Vec<_> = all.into_iter().rev().skip(offset).take(limit).collect();
    Ok(ok(&json!({"orders": orders, "total": total, "limit": limit, "offset": offset})))
}

#[derive(Deserialize)]
struct CreateOrder {
    prediction_id: String,
}

async fn create_order(State(svc): State<Shared>, body: Bytes) -> Result<Response, ApiError> {
    let req: CreateOrder = parse_body(&body)?;
    let order = svc.create_order(&req.prediction_id)?;
    Ok(canonical_response(StatusCode::CREATED, &order))
}

async fn approve_order(State(svc): State<Shared>, Path(id): Path<String>) -> Result<Response, ApiError> {
    Ok(ok(&svc.approve_order(&id)?))
}

async fn reject_order(State(svc): State<Shared>, Path(id): Path<String>) -> Result<Response, ApiError> {
    Ok(ok(&svc.reject_order(&id)?))
}

async fn list_rules(State(svc): State<Shared>) -> Response {
    ok(&json!({"rules": svc.rules()}))
}

async fn list_edges(State(svc): State<Shared>) -> Response {
    ok(&json!({"edges": svc.edges()}))
}

#[derive(Deserialize, Default)]
struct EdgeSelector {
    edge_id: Option<String>,
}

fn selected_edges(svc: &CloudService, body: &Bytes) -> Result<Vec<String>, ApiError> {
    let sel: EdgeSelector = if body.iter().all(u8::is_ascii_whitespace) {
        EdgeSelector::default()
    } else {
        parse_body(body)?
    };
    Ok(match sel.edge_id {
        Some(e) => vec![e],
        None => svc.edges().into_iter().map(|e| e.edge_id).collect(),
    })
}

async fn admin_retrain(State(svc): State<Shared>, body: Bytes) -> Result<Response, ApiError> {
    let edges = selected_edges(&svc, &body)?;
    let single = edges.len() == 1;
    let results = tokio::task::spawn_blocking(move || {
        edges
            .into_iter()
            .map(|e| {
                let r = svc.retrain_edge(&e).map_err(ApiError::from);
                (e, r)
            })
            .collect::<Vec<_>>()
    })
    .await
    .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))?;
    let mut rows = Vec::new();
    for (edge_id, r) in results {
        match r {
            Ok(summary) => rows.push(json!({"edge_id": edge_id, "summary": summary})),
            Err(e) if single => return Err(e),
            Err(e) => rows.push(json!({"edge_id": edge_id, "error": e.message})),
        }
    }
    Ok(ok(&json!({"results": rows})))
}

async fn admin_distribute(State(svc): State<Shared>, body: Bytes) -> Result<Response, ApiError> {
    let edges = selected_edges(&svc, &body)?;
    if edges.len() == 1 {
        let status = svc.distribute_model(&edges[0])?;
        return Ok(ok(&json!({"results": [{"edge_id": edges[0], "status": status}]})));
    }
    let rows: Vec<_> = edges
        .iter()
        .filter(|e| svc.built_model(e).is_some())
        .map(|e| match svc.distribute_model(e) {
            Ok(s) => json!({"edge_id": e, "status": s}),
            Err(err) => json!({"edge_id": e, "error": err.to_string()}),
        })
        .collect();
    Ok(ok(&json!({"results": rows})))
}

async fn health() -> Response {
    ok(&json!({"status": "ok"}))
}

async fn fallback() -> ApiError {
    ApiError::not_found("no such endpoint")
}

pub fn router(service: Arc<CloudService>) -> Router {
    Router::new()
        .route("/health", get(health))
        .route("/alerts", get(list_alerts))
        .route("/alerts/{id}", get(get_alert))
        .route("/equipment/{id}/prediction", get(equipment_prediction))
        .route("/orders", get(list_orders).post(create_order))
        .route("/orders/{id}/approve", post(approve_order))
        .route("/orders/{id}/reject", post(reject_order))
        .route("/rules", get(list_rules))
        .route("/edges", get(list_edges))
        .route("/admin/retrain", post(admin_retrain))
        .route("/admin/distribute", post(admin_distribute))
        .fallback(fallback)
        .with_state(service)
}

/// Serves the API until `shutdown` resolves.
pub async fn serve(
    service: Arc<CloudService>,
    listener: TcpListener,
    shutdown: impl Future<Output = ()> + Send + 'static,
) -> std::io::Result<()> {
    axum::serve(listener, router(service))
        .with_graceful_shutdown(shutdown)
        .await
}
