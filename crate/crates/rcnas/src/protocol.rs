//! Worker wire protocol: newline-delimited JSON over the worker's stdio.
//!
//! ```text
//! worker -> {"type":"hello","protocol":1}
//! engine -> {"type":"evaluate","request_id":"...","arch":{...},"budget":{"epochs":5,"dataset":"..."}}
//! worker -> {"type":"result","request_id":"...","status":"ok","performance":0.5,"wall_seconds":1.2}
//! ```
//!
//! Unknown fields are ignored; an unknown `type` is a protocol error.

use serde::{Deserialize, Serialize};

pub const PROTOCOL_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Budget {
    pub epochs: u32,
    pub dataset: String,
}

impl Default for Budget {
    fn default() -> Self {
        Self {
            epochs: 5,
            dataset: "synthetic-2d".into(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvaluateRequest {
    #[serde(rename = "type")]
    pub kind: String,
    pub request_id: String,
    pub arch: serde_json::Value,
    pub budget: Budget,
}

impl EvaluateRequest {
    pub fn new(request_id: impl Into<String>, arch: serde_json::Value, budget: Budget) -> Self {
        Self {
            kind: "evaluate".into(),
            request_id: request_id.into(),
            arch,
            budget,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Status {
    Ok,
    Failed,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResultMessage {
    #[serde(rename = "type")]
    pub kind: String,
    pub request_id: String,
    pub status: Status,
    #[serde(default)]
    pub performance: Option<f64>,
    #[serde(default)]
    pub wall_seconds: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reason: Option<String>,
}

impl ResultMessage {
    pub fn ok(request_id: impl Into<String>, performance: f64, wall_seconds: f64) -> Self {
        Self {
            kind: "result".into(),
            request_id: request_id.into(),
            status: Status::Ok,
            performance: Some(performance),
            wall_seconds,
            reason: None,
        }
    }

    pub fn failed(request_id: impl Into<String>, reason: impl Into<String>) -> Self {
        Self {
            kind: "result".into(),
            request_id: request_id.into(),
            status: Status::Failed,
            performance: None,
            wall_seconds: 0.0,
            reason: Some(reason.into()),
        }
    }
}

/// A message sent by a worker.
#[derive(Clone, Debug, PartialEq)]
pub enum WorkerMessage {
    Hello { protocol: u32 },
    Result(ResultMessage),
}

#[derive(Clone, Debug, PartialEq, thiserror::Error)]
pub enum ProtocolError {
    #[error("malformed message: {0}")]
    Malformed(String),
    #[error("unknown message type {0:?}")]
    UnknownType(String),
    #[error("performance {0} outside [0, 1]")]
    OutOfRange(f64),
    #[error("ok result without performance")]
    MissingPerformance,
}

/// Parses one line sent by a worker. On error, also returns the request id
/// when it can be recovered so the failure can be routed.
pub fn parse_worker_line(line: &str) -> Result<WorkerMessage, (Option<String>, ProtocolError)> {
    let v: serde_json::Value =
        serde_json::from_str(line).map_err(|e| (None, ProtocolError::Malformed(e.to_string())))?;
    let id = v
        .get("request_id")
        .and_then(|x| x.as_str())
        .map(str::to_string);
    let kind = v
        .get("type")
        .and_then(|x| x.as_str())
        .ok_or_else(|| (id.clone(), ProtocolError::Malformed("missing type".into())))?;
    match kind {
        "hello" => {
            let protocol = v
                .get("protocol")
                .and_then(|x| x.as_u64())
                .ok_or_else(|| (None, ProtocolError::Malformed("hello without protocol".into())))?;
            Ok(WorkerMessage::Hello {
                protocol: protocol as u32,
            })
        }
        "result" => {
            let r: ResultMessage = serde_json::from_value(v)
                .map_err(|e| (id.clone(), ProtocolError::Malformed(e.to_string())))?;
            if r.status == Status::Ok {
                match r.performance {
                    None => return Err((id, ProtocolError::MissingPerformance)),
                    Some(p) if !(0.0..=1.0).contains(&p) => {
                        return Err((id, ProtocolError::OutOfRange(p)))
                    }
                    _ => {}
                }
            }
            Ok(WorkerMessage::Result(r))
        }
        other => Err((id, ProtocolError::UnknownType(other.to_string()))),
    }
}

/// Parses a request line on the worker side.
pub fn parse_request(line: &str) -> Result<EvaluateRequest, (Option<String>, String)> {
    let v: serde_json::Value = serde_json::from_str(line).map_err(|e| (None, e.to_string()))?;
    let id = v
        .get("request_id")
        .and_then(|x| x.as_str())
        .map(str::to_string);
    if v.get("type").and_then(|x| x.as_str()) != Some("evaluate") {
        return Err((id, "unknown type".into()));
    }
    serde_json::from_value(v).map_err(|e| (id, e.to_string()))
}
