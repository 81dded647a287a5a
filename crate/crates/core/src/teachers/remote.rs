//! HTTP client for a remote prediction service.
//!
//! Wire protocol: `POST {endpoint}/predict` with
//! `{ "record_id": string, "payload_ref": string, "want_hidden": bool }`;
//! the service answers `{ "prediction": 0|1, "probability": number,
//! "hidden": [number] (when requested) }`. Any non-2xx status is an error.

use std::sync::{Condvar, Mutex};
use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::{Teacher, TeacherError, TeacherRole};
use crate::types::{DatasetRecord, TeacherOutput};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RemoteTeacherParams {
    pub endpoint_url: String,
    pub timeout_ms: u64,
    pub max_retries: u32,
    /// Upper bound on concurrent in-flight requests.
    #[serde(default = "default_max_in_flight")]
    pub max_in_flight: usize,
}

fn default_max_in_flight() -> usize {
    8
}

#[derive(Debug, Serialize)]
struct PredictRequest<'a> {
    record_id: &'a str,
    payload_ref: &'a str,
    want_hidden: bool,
}

#[derive(Debug, Deserialize)]
struct PredictResponse {
    prediction: u8,
    probability: f64,
    #[serde(default)]
    hidden: Option<Vec<f64>>,
}

/// One observed request attempt, for retry-visibility in tests and ops.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RemoteAttempt {
    pub record_id: String,
    pub attempt: u32,
    pub outcome: String,
}

// Counting semaphore; std has none and this needs ~20 lines.
struct Gate {
    permits: Mutex<usize>,
    available: Condvar,
}

impl Gate {
    fn new(permits: usize) -> Self {
        Gate {
            permits: Mutex::new(permits.max(1)),
            available: Condvar::new(),
        }
    }

    fn acquire(&self) {
        let mut permits = self.permits.lock().unwrap();
        while *permits == 0 {
            permits = self.available.wait(permits).unwrap();
        }
        *permits -= 1;
    }

    fn release(&self) {
        *self.permits.lock().unwrap() += 1;
        self.available.notify_one();
    }
}

/// Blocking HTTP teacher client with bounded retries and a request log.
pub struct RemoteTeacher {
    role: TeacherRole,
    params: RemoteTeacherParams,
    client: reqwest::blocking::Client,
    gate: Gate,
    log: Mutex<Vec<RemoteAttempt>>,
}

impl RemoteTeacher {
    pub fn new(role: TeacherRole, params: RemoteTeacherParams) -> Self {
        assert!(params.timeout_ms > 0, "timeout_ms must be positive");
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_millis(params.timeout_ms))
            .build()
            .expect("http client");
        let gate = Gate::new(params.max_in_flight);
        RemoteTeacher {
            role,
            params,
            client,
            gate,
            log: Mutex::new(Vec::new()),
        }
    }

    /// Snapshot of every attempt made so far.
    pub fn request_log(&self) -> Vec<RemoteAttempt> {
        self.log.lock().unwrap().clone()
    }

    fn log_attempt(&self, record_id: &str, attempt: u32, outcome: String) {
        self.log.lock().unwrap().push(RemoteAttempt {
            record_id: record_id.to_string(),
            attempt,
            outcome,
        });
    }

    fn attempt(&self, record: &DatasetRecord) -> Result<TeacherOutput, TeacherError> {
        let url = format!("{}/predict", self.params.endpoint_url.trim_end_matches('/'));
        let body = PredictRequest {
            record_id: &record.record_id,
            payload_ref: &record.payload_ref,
            want_hidden: self.role == TeacherRole::Small,
        };
        let response = self
            .client
            .post(&url)
            .json(&body)
            .send()
            .map_err(|e| self.transport_error(&record.record_id, e))?;
        let status = response.status();
        if !status.is_success() {
            return Err(TeacherError::RemoteStatus {
                record_id: record.record_id.clone(),
                status: status.as_u16(),
            });
        }
        let parsed: PredictResponse =
            response
                .json()
                .map_err(|e| TeacherError::RemoteMalformed {
                    record_id: record.record_id.clone(),
                    reason: e.to_string(),
                })?;
        if parsed.prediction > 1 || !(0.0..=1.0).contains(&parsed.probability) {
            return Err(TeacherError::RemoteMalformed {
                record_id: record.record_id.clone(),
                reason: format!(
                    "prediction {} / probability {} violate the output contract",
                    parsed.prediction, parsed.probability
                ),
            });
        }
        Ok(TeacherOutput {
            prediction: parsed.prediction,
            probability: parsed.probability,
            hidden: parsed.hidden,
        })
    }

    fn transport_error(&self, record_id: &str, err: reqwest::Error) -> TeacherError {
        if err.is_timeout() {
            TeacherError::RemoteTimeout {
                record_id: record_id.to_string(),
                timeout_ms: self.params.timeout_ms,
            }
        } else {
            TeacherError::RemoteTransport {
                record_id: record_id.to_string(),
                reason: err.to_string(),
            }
        }
    }
}

impl Teacher for RemoteTeacher {
    fn role(&self) -> TeacherRole {
        self.role
    }

    fn describe(&self) -> String {
        format!(
            "remote({:?}, endpoint={}, timeout_ms={}, max_retries={})",
            self.role, self.params.endpoint_url, self.params.timeout_ms, self.params.max_retries
        )
    }

    fn predict(&self, record: &DatasetRecord) -> Result<TeacherOutput, TeacherError> {
        self.gate.acquire();
        let result = (|| {
            let mut last_err = None;
            for attempt in 0..=self.params.max_retries {
                match self.attempt(record) {
                    Ok(out) => {
                        self.log_attempt(&record.record_id, attempt, "ok".to_string());
                        return Ok(out);
                    }
                    Err(err) => {
                        self.log_attempt(&record.record_id, attempt, err.to_string());
                        last_err = Some(err);
                    }
                }
            }
            Err(last_err.expect("at least one attempt runs"))
        })();
        self.gate.release();
        result
    }
}
