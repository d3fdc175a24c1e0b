//! Execution boundary: the line-delimited JSON protocol, the in-process
//! reference executor and the subprocess harness.

mod harness;
pub mod targets;

pub use harness::{serve, SubprocessExecutor};
pub use targets::{catalog, rand_tensor, target, GroundTruth, Outcome, RefTarget};

use std::path::{Path, PathBuf};

use serde_json::{json, Map, Value};

use crate::value::{decode_input, decode_value, encode_input, encode_value, ApiInput, ConcreteValue};

pub const PROTOCOL_VERSION: &str = "1";

#[derive(Debug, Clone, PartialEq)]
pub struct ExecRequest {
    pub id: u64,
    pub api: String,
    pub backend: String,
    pub input: ApiInput,
    pub want_outputs: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ExecStatus {
    Ok,
    Error,
    Crash,
    Timeout,
}

impl ExecStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            ExecStatus::Ok => "ok",
            ExecStatus::Error => "error",
            ExecStatus::Crash => "crash",
            ExecStatus::Timeout => "timeout",
        }
    }

    fn parse(s: &str) -> Option<ExecStatus> {
        Some(match s {
            "ok" => ExecStatus::Ok,
            "error" => ExecStatus::Error,
            "crash" => ExecStatus::Crash,
            "timeout" => ExecStatus::Timeout,
            _ => return None,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExecResult {
    pub id: u64,
    pub status: ExecStatus,
    /// Error text for `Error`, abort detail for `Crash`.
    pub error_message: Option<String>,
    pub outputs: Option<Vec<ConcreteValue>>,
    pub covered_branches: Option<Vec<String>>,
    pub wall_time_us: u64,
}

impl ExecResult {
    pub fn is_ok(&self) -> bool {
        self.status == ExecStatus::Ok
    }

    pub fn synthesized(id: u64, status: ExecStatus, detail: &str) -> ExecResult {
        ExecResult {
            id,
            status,
            error_message: Some(detail.to_string()),
            outputs: None,
            covered_branches: None,
            wall_time_us: 0,
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ExecError {
    #[error("unknown api '{0}'")]
    UnknownApi(String),
    #[error("protocol error: {0}")]
    Protocol(String),
    #[error("executor unavailable: {0}")]
    Unavailable(String),
}

/// Anything that runs API calls. One request in flight at a time.
pub trait Executor {
    fn apis(&self) -> Vec<String>;
    fn run(&mut self, req: &ExecRequest) -> Result<ExecResult, ExecError>;
}

pub fn encode_request(req: &ExecRequest) -> Value {
    let args = encode_input(&req.input)["args"].clone();
    json!({
        "id": req.id,
        "api": req.api,
        "backend": req.backend,
        "args": args,
        "want_outputs": req.want_outputs,
    })
}

fn field<'a>(obj: &'a Map<String, Value>, key: &str) -> Result<&'a Value, ExecError> {
    obj.get(key)
        .ok_or_else(|| ExecError::Protocol(format!("missing field '{key}'")))
}

fn as_obj(v: &Value) -> Result<&Map<String, Value>, ExecError> {
    v.as_object()
        .ok_or_else(|| ExecError::Protocol("frame is not an object".into()))
}

pub fn decode_request(v: &Value) -> Result<ExecRequest, ExecError> {
    let obj = as_obj(v)?;
    let id = field(obj, "id")?
        .as_u64()
        .ok_or_else(|| ExecError::Protocol("id must be a non-negative integer".into()))?;
    let api = field(obj, "api")?
        .as_str()
        .ok_or_else(|| ExecError::Protocol("api must be a string".into()))?
        .to_string();
    let backend = obj
        .get("backend")
        .and_then(Value::as_str)
        .unwrap_or("cpu")
        .to_string();
    let want_outputs = obj.get("want_outputs").and_then(Value::as_bool).unwrap_or(false);
    let doc = json!({"api": api, "args": field(obj, "args")?.clone()});
    let input = decode_input(&doc).map_err(|e| ExecError::Protocol(e.to_string()))?;
    Ok(ExecRequest {
        id,
        api,
        backend,
        input,
        want_outputs,
    })
}

pub fn encode_result(r: &ExecResult) -> Value {
    let mut m = Map::new();
    m.insert("id".into(), json!(r.id));
    m.insert("status".into(), json!(r.status.as_str()));
    if let Some(e) = &r.error_message {
        m.insert("error_message".into(), json!(e));
    }
    if let Some(o) = &r.outputs {
        m.insert("outputs".into(), Value::Array(o.iter().map(encode_value).collect()));
    }
    if let Some(b) = &r.covered_branches {
        m.insert("covered_branches".into(), json!(b));
    }
    m.insert("wall_time_us".into(), json!(r.wall_time_us));
    Value::Object(m)
}

pub fn decode_result(v: &Value) -> Result<ExecResult, ExecError> {
    let obj = as_obj(v)?;
    let id = field(obj, "id")?
        .as_u64()
        .ok_or_else(|| ExecError::Protocol("id must be a non-negative integer".into()))?;
    let status_s = field(obj, "status")?
        .as_str()
        .ok_or_else(|| ExecError::Protocol("status must be a string".into()))?;
    let status = ExecStatus::parse(status_s)
        .ok_or_else(|| ExecError::Protocol(format!("unknown status '{status_s}'")))?;
    let error_message = obj.get("error_message").and_then(Value::as_str).map(String::from);
    if status == ExecStatus::Error && error_message.is_none() {
        return Err(ExecError::Protocol("error result without error_message".into()));
    }
    let outputs = match obj.get("outputs") {
        None | Some(Value::Null) => None,
        Some(Value::Array(xs)) => Some(
            xs.iter()
                .map(|x| decode_value(x).map_err(|e| ExecError::Protocol(e.to_string())))
                .collect::<Result<Vec<_>, _>>()?,
        ),
        Some(_) => return Err(ExecError::Protocol("outputs must be an array".into())),
    };
    let covered_branches = obj.get("covered_branches").and_then(Value::as_array).map(|xs| {
        xs.iter()
            .filter_map(|x| x.as_str().map(String::from))
            .collect()
    });
    Ok(ExecResult {
        id,
        status,
        error_message,
        outputs,
        covered_branches,
        wall_time_us: obj.get("wall_time_us").and_then(Value::as_u64).unwrap_or(0),
    })
}

/// `seeds/<library>/<api>.jsonl` under `root`.
pub fn seeds_path(root: &Path, library: &str, api: &str) -> PathBuf {
    let api = api.strip_prefix(&format!("{library}.")).unwrap_or(api);
    root.join("seeds").join(library).join(format!("{api}.jsonl"))
}

/// Seed corpus: one input document per line.
pub fn save_seeds(inputs: &[ApiInput], path: &Path) -> std::io::Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    let mut text = String::new();
    for x in inputs {
        text.push_str(&encode_input(x).to_string());
        text.push('\n');
    }
    std::fs::write(path, text)
}

pub fn load_seeds(path: &Path) -> std::io::Result<Vec<ApiInput>> {
    let bad = |line: usize, e: String| std::io::Error::new(std::io::ErrorKind::InvalidData, format!("{}:{line}: {e}", path.display()));
    let text = std::fs::read_to_string(path)?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let v: Value = serde_json::from_str(line).map_err(|e| bad(i + 1, e.to_string()))?;
        out.push(decode_input(&v).map_err(|e| bad(i + 1, e.to_string()))?);
    }
    Ok(out)
}

pub fn handshake(apis: &[String]) -> Value {
    json!({"protocol": PROTOCOL_VERSION, "apis": apis})
}

/// Runs the reference targets in the calling process.
#[derive(Debug, Default, Clone)]
pub struct RefExecutor {
    /// Number of calls served, for throughput accounting.
    pub calls: u64,
}

impl RefExecutor {
    pub fn new() -> RefExecutor {
        RefExecutor::default()
    }
}

impl Executor for RefExecutor {
    fn apis(&self) -> Vec<String> {
        catalog().iter().map(|t| t.api.clone()).collect()
    }

    fn run(&mut self, req: &ExecRequest) -> Result<ExecResult, ExecError> {
        let t = target(&req.api).ok_or_else(|| ExecError::UnknownApi(req.api.clone()))?;
        self.calls += 1;
        let start = std::time::Instant::now();
        let (outcome, branches) = t.execute(&req.input, &req.backend);
        let wall_time_us = start.elapsed().as_micros() as u64;
        Ok(outcome.into_result(req.id, req.want_outputs, branches, wall_time_us))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::value::Tensor;

    #[test]
    fn request_frame_round_trip() {
        let req = ExecRequest {
            id: 7,
            api: "ref.narrow".into(),
            backend: "cpu".into(),
            input: ApiInput::new("ref.narrow")
                .with("input", ConcreteValue::Tensor(Tensor::summary(vec![2, 3], 0, 0.0, 1.0)))
                .with("dim", ConcreteValue::Int(1)),
            want_outputs: true,
        };
        let back = decode_request(&encode_request(&req)).unwrap();
        assert_eq!(back, req);
    }

    #[test]
    fn error_without_message_rejected() {
        let v = json!({"id": 1, "status": "error"});
        assert!(matches!(decode_result(&v), Err(ExecError::Protocol(_))));
    }

    #[test]
    fn result_frame_round_trip() {
        let r = ExecResult {
            id: 3,
            status: ExecStatus::Ok,
            error_message: None,
            outputs: Some(vec![ConcreteValue::Int(4)]),
            covered_branches: Some(vec!["narrow.b5".into()]),
            wall_time_us: 42,
        };
        assert_eq!(decode_result(&encode_result(&r)).unwrap(), r);
    }
}
