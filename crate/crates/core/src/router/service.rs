//! Long-running routing service.
//!
//! Endpoints:
//! - `POST /classify` with `{ "record_id": string, "payload_ref": string }`
//!   → `{ "prediction": 0|1, "deferred": bool, "alignment_prob": number }`
//! - `GET /status` → request counters, deferral rate, budget state
//! - `GET /health` → liveness
//!
//! Every classified request appends one serialized [`RouteTrace`] line to
//! the trace log. Malformed bodies and per-request failures map to protocol
//! error responses; the service keeps running.

use std::fs::{File, OpenOptions};
use std::io::Write;
use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};

use axum::extract::rejection::JsonRejection;
use axum::extract::State;
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router as AxumRouter};
use serde::{Deserialize, Serialize};
use thiserror::Error;
use tokio::sync::oneshot;

use super::{BudgetConfig, Router, RouterError};
use crate::calibrate::read_policy;
use crate::rng::{RngSeed, SplitMix64};
use crate::switcher::load_model;
use crate::teachers::TeacherSpec;
use crate::types::{DatasetRecord, Split};

#[derive(Debug, Error)]
pub enum ServeError {
    #[error("invalid service config: {0}")]
    Config(String),
    #[error("cannot load switcher model: {0}")]
    Model(#[from] crate::switcher::ModelIoError),
    #[error("cannot load deferral policy: {0}")]
    Policy(#[from] crate::calibrate::CalibrateError),
    #[error("cannot build teacher: {0}")]
    Teacher(#[from] crate::teachers::TeacherError),
    #[error("cannot open trace log {path}: {source}")]
    TraceLog {
        path: String,
        source: std::io::Error,
    },
    #[error("cannot bind {addr}: {source}")]
    Bind {
        addr: String,
        source: std::io::Error,
    },
    #[error("runtime error: {0}")]
    Runtime(String),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ServeConfig {
    pub listen_addr: String,
    pub model_path: PathBuf,
    pub policy_path: PathBuf,
    pub small_teacher: TeacherSpec,
    pub large_teacher: TeacherSpec,
    pub budget: Option<BudgetConfig>,
    pub trace_log_path: PathBuf,
}

#[derive(Debug, Deserialize)]
struct ClassifyRequest {
    record_id: String,
    payload_ref: String,
}

#[derive(Debug, Serialize, Deserialize, PartialEq)]
pub struct ClassifyResponse {
    pub prediction: u8,
    pub deferred: bool,
    pub alignment_prob: f64,
}

#[derive(Debug, Serialize)]
struct ErrorResponse {
    error: String,
}

#[derive(Debug, Serialize, Deserialize, PartialEq)]
pub struct StatusResponse {
    pub requests_total: u64,
    pub responses_ok: u64,
    pub responses_error: u64,
    pub deferred_total: u64,
    pub fallback_total: u64,
    pub deferral_rate: f64,
    pub budget_remaining: Option<usize>,
}

#[derive(Default)]
struct Counters {
    requests: AtomicU64,
    ok: AtomicU64,
    errors: AtomicU64,
    deferred: AtomicU64,
    fallbacks: AtomicU64,
}

struct ServiceState {
    router: Arc<Router>,
    counters: Counters,
    trace_log: Mutex<File>,
}

/// Ground truth is unknown at serve time; synthetic teachers still need a
/// label to simulate against, so the wire layer pins a deterministic
/// pseudo-truth to each record id. Replay and remote teachers ignore it.
fn wire_record(record_id: String, payload_ref: String) -> DatasetRecord {
    let label = (SplitMix64::for_key(RngSeed(0), &record_id).next_u64() & 1) as u8;
    DatasetRecord {
        record_id,
        payload_ref,
        label,
        split: Split::Test,
    }
}

async fn classify(
    State(state): State<Arc<ServiceState>>,
    body: Result<Json<ClassifyRequest>, JsonRejection>,
) -> Response {
    state.counters.requests.fetch_add(1, Ordering::Relaxed);
    let Json(request) = match body {
        Ok(body) => body,
        Err(rejection) => {
            state.counters.errors.fetch_add(1, Ordering::Relaxed);
            return (
                StatusCode::BAD_REQUEST,
                Json(ErrorResponse {
                    error: format!("malformed request body: {rejection}"),
                }),
            )
                .into_response();
        }
    };

    let router = state.router.clone();
    let record = wire_record(request.record_id, request.payload_ref);
    // Teachers may block (remote HTTP client); keep the runtime unblocked.
    let result = tokio::task::spawn_blocking(move || router.route_one(&record)).await;

    match result {
        Ok(Ok(trace)) => {
            state.counters.ok.fetch_add(1, Ordering::Relaxed);
            if trace.deferred {
                state.counters.deferred.fetch_add(1, Ordering::Relaxed);
            }
            if trace.fallback.is_some() {
                state.counters.fallbacks.fetch_add(1, Ordering::Relaxed);
            }
            let response = ClassifyResponse {
                prediction: trace.final_prediction,
                deferred: trace.deferred,
                alignment_prob: trace.alignment_prob,
            };
            {
                let line = serde_json::to_string(&trace).expect("trace serializes");
                let mut log = state.trace_log.lock().expect("trace log lock");
                let _ = writeln!(log, "{line}");
            }
            (StatusCode::OK, Json(response)).into_response()
        }
        Ok(Err(err)) => {
            state.counters.errors.fetch_add(1, Ordering::Relaxed);
            let status = match err {
                RouterError::BudgetRejected(_) => StatusCode::TOO_MANY_REQUESTS,
                _ => StatusCode::BAD_GATEWAY,
            };
            (
                status,
                Json(ErrorResponse {
                    error: err.to_string(),
                }),
            )
                .into_response()
        }
        Err(join_err) => {
            state.counters.errors.fetch_add(1, Ordering::Relaxed);
            (
                StatusCode::INTERNAL_SERVER_ERROR,
                Json(ErrorResponse {
                    error: format!("routing task failed: {join_err}"),
                }),
            )
                .into_response()
        }
    }
}

async fn status(State(state): State<Arc<ServiceState>>) -> Json<StatusResponse> {
    let ok = state.counters.ok.load(Ordering::Relaxed);
    let deferred = state.counters.deferred.load(Ordering::Relaxed);
    let budget_remaining = state.router.budget_remaining();
    Json(StatusResponse {
        requests_total: state.counters.requests.load(Ordering::Relaxed),
        responses_ok: ok,
        responses_error: state.counters.errors.load(Ordering::Relaxed),
        deferred_total: deferred,
        fallback_total: state.counters.fallbacks.load(Ordering::Relaxed),
        deferral_rate: if ok == 0 {
            0.0
        } else {
            deferred as f64 / ok as f64
        },
        budget_remaining,
    })
}

async fn health() -> Json<serde_json::Value> {
    Json(serde_json::json!({ "status": "ok" }))
}

fn build_router(config: &ServeConfig) -> Result<Router, ServeError> {
    let saved = load_model(&config.model_path)?;
    let policy = read_policy(&config.policy_path)?;
    let small = config.small_teacher.build()?;
    let large = config.large_teacher.build()?;
    Ok(Router::new(
        small,
        large,
        saved.model,
        policy,
        config.budget.clone(),
    ))
}

/// A service that is up and serving; dropping the handle does not stop it,
/// send on `shutdown` to stop gracefully.
pub struct RunningService {
    pub addr: SocketAddr,
    shutdown: Option<oneshot::Sender<()>>,
    thread: Option<std::thread::JoinHandle<Result<(), ServeError>>>,
}

impl RunningService {
    pub fn stop(mut self) -> Result<(), ServeError> {
        if let Some(tx) = self.shutdown.take() {
            let _ = tx.send(());
        }
        match self.thread.take() {
            Some(handle) => handle
                .join()
                .map_err(|_| ServeError::Runtime("service thread panicked".into()))?,
            None => Ok(()),
        }
    }
}

/// Start the service on its own runtime thread and return once it is
/// accepting connections.
pub fn start_service(config: ServeConfig) -> Result<RunningService, ServeError> {
    let router = Arc::new(build_router(&config)?);
    let trace_log = OpenOptions::new()
        .create(true)
        .append(true)
        .open(&config.trace_log_path)
        .map_err(|source| ServeError::TraceLog {
            path: config.trace_log_path.display().to_string(),
            source,
        })?;
    let state = Arc::new(ServiceState {
        router,
        counters: Counters::default(),
        trace_log: Mutex::new(trace_log),
    });

    let listen_addr = config.listen_addr.clone();
    let (addr_tx, addr_rx) = std::sync::mpsc::channel::<Result<SocketAddr, ServeError>>();
    let (shutdown_tx, shutdown_rx) = oneshot::channel::<()>();

    let thread = std::thread::spawn(move || -> Result<(), ServeError> {
        let runtime = tokio::runtime::Builder::new_multi_thread()
            .enable_all()
            .build()
            .map_err(|e| ServeError::Runtime(e.to_string()))?;
        runtime.block_on(async move {
            let app = AxumRouter::new()
                .route("/classify", post(classify))
                .route("/status", get(status))
                .route("/health", get(health))
                .with_state(state);
            let listener = match tokio::net::TcpListener::bind(&listen_addr).await {
                Ok(listener) => listener,
                Err(source) => {
                    let err = ServeError::Bind {
                        addr: listen_addr.clone(),
                        source,
                    };
                    let _ = addr_tx.send(Err(err));
                    return Ok(());
                }
            };
            let addr = listener
                .local_addr()
                .map_err(|e| ServeError::Runtime(e.to_string()))?;
            let _ = addr_tx.send(Ok(addr));
            axum::serve(listener, app)
                .with_graceful_shutdown(async {
                    let _ = shutdown_rx.await;
                })
                .await
                .map_err(|e| ServeError::Runtime(e.to_string()))
        })
    });

    match addr_rx.recv() {
        Ok(Ok(addr)) => Ok(RunningService {
            addr,
            shutdown: Some(shutdown_tx),
            thread: Some(thread),
        }),
        Ok(Err(err)) => {
            let _ = thread.join();
            Err(err)
        }
        Err(_) => {
            let err = thread
                .join()
                .map_err(|_| ServeError::Runtime("service thread panicked".into()))?
                .err()
                .unwrap_or_else(|| ServeError::Runtime("service exited before binding".into()));
            Err(err)
        }
    }
}

/// Run the service until the process is interrupted.
pub fn serve(config: ServeConfig) -> Result<(), ServeError> {
    let running = start_service(config)?;
    // Blocks forever: the shutdown sender is held here and never fired.
    match running.thread {
        Some(handle) => handle
            .join()
            .map_err(|_| ServeError::Runtime("service thread panicked".into()))?,
        None => Ok(()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::calibrate::{write_policy, DeferralPolicy, TIE_RULE};
    use crate::rng::RngSeed;
    use crate::switcher::{init_model, save_model, MlpArchitecture};
    use crate::teachers::{FeatureModel, SyntheticTeacherParams, TeacherRole};
    use std::path::Path;

    fn write_artifacts(dir: &Path, cutoff: f64) -> (PathBuf, PathBuf) {
        let model_path = dir.join("model.swch");
        let policy_path = dir.join("policy.json");
        let model = init_model(&MlpArchitecture::new(4, vec![3]), RngSeed(5));
        save_model(&model, RngSeed(5), &model_path).unwrap();
        write_policy(
            &DeferralPolicy {
                deferred_fraction: 0.5,
                probability_cutoff: cutoff,
                tie_rule: TIE_RULE.to_string(),
                cutoff_record_id: Some("\u{10FFFF}".to_string()),
            },
            &policy_path,
        )
        .unwrap();
        (model_path, policy_path)
    }

    fn synthetic_spec(role: TeacherRole, seed: u64) -> TeacherSpec {
        TeacherSpec::Synthetic {
            role,
            params: SyntheticTeacherParams {
                accuracy_positive: 0.8,
                accuracy_negative: 0.8,
                feature_dim: 4,
                feature_model: FeatureModel::CorrectnessConditionedGaussian,
                noise_scale: 0.1,
                seed: RngSeed(seed),
            },
        }
    }

    fn test_config(dir: &Path, cutoff: f64) -> ServeConfig {
        let (model_path, policy_path) = write_artifacts(dir, cutoff);
        ServeConfig {
            listen_addr: "127.0.0.1:0".to_string(),
            model_path,
            policy_path,
            small_teacher: synthetic_spec(TeacherRole::Small, 1),
            large_teacher: synthetic_spec(TeacherRole::Large, 2),
            budget: None,
            trace_log_path: dir.join("traces.jsonl"),
        }
    }

    #[test]
    fn health_and_zeroed_status_at_startup() {
        let dir = tempfile::tempdir().unwrap();
        let service = start_service(test_config(dir.path(), 0.5)).unwrap();
        let base = format!("http://{}", service.addr);
        let client = reqwest::blocking::Client::new();

        let health: serde_json::Value = client
            .get(format!("{base}/health"))
            .send()
            .unwrap()
            .json()
            .unwrap();
        assert_eq!(health["status"], "ok");

        let status: StatusResponse = client
            .get(format!("{base}/status"))
            .send()
            .unwrap()
            .json()
            .unwrap();
        assert_eq!(status.requests_total, 0);
        assert_eq!(status.deferred_total, 0);

        service.stop().unwrap();
    }

    #[test]
    fn classify_responds_and_logs_a_trace() {
        let dir = tempfile::tempdir().unwrap();
        let config = test_config(dir.path(), 0.5);
        let trace_path = config.trace_log_path.clone();
        let service = start_service(config).unwrap();
        let base = format!("http://{}", service.addr);
        let client = reqwest::blocking::Client::new();

        let response = client
            .post(format!("{base}/classify"))
            .json(&serde_json::json!({ "record_id": "r1", "payload_ref": "img.jpg" }))
            .send()
            .unwrap();
        assert_eq!(response.status().as_u16(), 200);
        let body: ClassifyResponse = response.json().unwrap();
        assert!(body.prediction <= 1);
        assert!((0.0..=1.0).contains(&body.alignment_prob));

        service.stop().unwrap();
        let log = std::fs::read_to_string(&trace_path).unwrap();
        assert_eq!(log.lines().count(), 1);
        let trace: super::super::RouteTrace = serde_json::from_str(log.lines().next().unwrap()).unwrap();
        assert_eq!(trace.record_id, "r1");
        assert_eq!(trace.final_prediction, body.prediction);
        assert_eq!(trace.deferred, body.deferred);
    }

    #[test]
    fn boundary_probability_defers_inclusively() {
        // Zero-weight model gives alignment_prob exactly 0.5; cutoff 0.55
        // puts it below, cutoff 0.5 puts it at the boundary (ties defer).
        let dir = tempfile::tempdir().unwrap();
        let model_path = dir.path().join("model.swch");
        let policy_path = dir.path().join("policy.json");
        let arch = MlpArchitecture::new(4, vec![]);
        let zero = crate::switcher::SwitcherModel::from_parameters(
            arch,
            vec![crate::switcher::Matrix::zeros(1, 4)],
            vec![vec![0.0]],
        );
        save_model(&zero, RngSeed(0), &model_path).unwrap();
        write_policy(
            &DeferralPolicy {
                deferred_fraction: 0.5,
                probability_cutoff: 0.55,
                tie_rule: TIE_RULE.to_string(),
                cutoff_record_id: Some("\u{10FFFF}".to_string()),
            },
            &policy_path,
        )
        .unwrap();
        let config = ServeConfig {
            listen_addr: "127.0.0.1:0".to_string(),
            model_path,
            policy_path,
            small_teacher: synthetic_spec(TeacherRole::Small, 1),
            large_teacher: synthetic_spec(TeacherRole::Large, 2),
            budget: None,
            trace_log_path: dir.path().join("traces.jsonl"),
        };
        let service = start_service(config).unwrap();
        let base = format!("http://{}", service.addr);
        let client = reqwest::blocking::Client::new();
        let body: ClassifyResponse = client
            .post(format!("{base}/classify"))
            .json(&serde_json::json!({ "record_id": "x", "payload_ref": "p" }))
            .send()
            .unwrap()
            .json()
            .unwrap();
        assert!(body.deferred, "0.5 <= 0.55 must defer");
        assert_eq!(body.alignment_prob, 0.5);
        service.stop().unwrap();
    }

    #[test]
    fn malformed_body_is_rejected_and_service_continues() {
        let dir = tempfile::tempdir().unwrap();
        let service = start_service(test_config(dir.path(), 0.5)).unwrap();
        let base = format!("http://{}", service.addr);
        let client = reqwest::blocking::Client::new();

        let bad = client
            .post(format!("{base}/classify"))
            .header("content-type", "application/json")
            .body("{ not json")
            .send()
            .unwrap();
        assert_eq!(bad.status().as_u16(), 400);

        let good = client
            .post(format!("{base}/classify"))
            .json(&serde_json::json!({ "record_id": "r2", "payload_ref": "p" }))
            .send()
            .unwrap();
        assert_eq!(good.status().as_u16(), 200);

        let status: StatusResponse = client
            .get(format!("{base}/status"))
            .send()
            .unwrap()
            .json()
            .unwrap();
        assert_eq!(status.requests_total, 2);
        assert_eq!(status.responses_error, 1);
        assert_eq!(status.responses_ok, 1);

        service.stop().unwrap();
    }

    #[test]
    fn concurrent_decisions_match_sequential_multiset() {
        // With the budget disabled, routing is a pure per-record function:
        // hammering the service concurrently must reproduce exactly the
        // decisions of a sequential in-process router.
        let dir = tempfile::tempdir().unwrap();
        let config = test_config(dir.path(), 0.6);
        let service = start_service(config.clone()).unwrap();
        let base = format!("http://{}", service.addr);

        let ids: Vec<String> = (0..60).map(|i| format!("mix{i:02}")).collect();
        let concurrent = std::sync::Mutex::new(Vec::new());
        std::thread::scope(|scope| {
            for part in ids.chunks(8) {
                let concurrent = &concurrent;
                let base = &base;
                scope.spawn(move || {
                    let client = reqwest::blocking::Client::new();
                    for id in part {
                        let response: ClassifyResponse = client
                            .post(format!("{base}/classify"))
                            .json(&serde_json::json!({
                                "record_id": id,
                                "payload_ref": format!("{id}.jpg")
                            }))
                            .send()
                            .unwrap()
                            .json()
                            .unwrap();
                        concurrent
                            .lock()
                            .unwrap()
                            .push((id.clone(), response.prediction, response.deferred));
                    }
                });
            }
        });
        service.stop().unwrap();
        let mut concurrent = concurrent.into_inner().unwrap();
        concurrent.sort();

        let router = build_router(&config).unwrap();
        let mut sequential: Vec<(String, u8, bool)> = ids
            .iter()
            .map(|id| {
                let record = wire_record(id.clone(), format!("{id}.jpg"));
                let trace = router.route_one(&record).unwrap();
                (id.clone(), trace.final_prediction, trace.deferred)
            })
            .collect();
        sequential.sort();
        assert_eq!(concurrent, sequential);
    }

    #[test]
    fn startup_fails_on_missing_model() {
        let dir = tempfile::tempdir().unwrap();
        let mut config = test_config(dir.path(), 0.5);
        config.model_path = dir.path().join("missing.swch");
        assert!(matches!(start_service(config), Err(ServeError::Model(_))));
    }

    #[test]
    fn startup_fails_on_unbindable_address() {
        let dir = tempfile::tempdir().unwrap();
        let mut config = test_config(dir.path(), 0.5);
        config.listen_addr = "192.0.2.1:1".to_string(); // TEST-NET, not local
        assert!(matches!(start_service(config), Err(ServeError::Bind { .. })));
    }
}
