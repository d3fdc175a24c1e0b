use std::io::{BufRead, BufReader, Write};
use std::process::{Child, ChildStdin, Command, ExitStatus, Stdio};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError};
use std::time::Duration;

use serde_json::Value;

use super::{
    decode_request, decode_result, encode_request, encode_result, handshake, ExecError, ExecRequest, ExecResult,
    ExecStatus, Executor, RefExecutor, PROTOCOL_VERSION,
};

/// Serve the reference targets over line-delimited JSON. With
/// `abort_on_crash` a simulated crash aborts the process, as a real one would.
pub fn serve<R: BufRead, W: Write>(input: R, mut output: W, abort_on_crash: bool) -> std::io::Result<()> {
    let mut ex = RefExecutor::new();
    writeln!(output, "{}", handshake(&ex.apis()))?;
    output.flush()?;
    for line in input.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let frame: Result<Value, _> = serde_json::from_str(&line);
        let id = frame
            .as_ref()
            .ok()
            .and_then(|v| v.get("id"))
            .and_then(Value::as_u64)
            .unwrap_or(0);
        let result = match frame
            .map_err(|e| ExecError::Protocol(e.to_string()))
            .and_then(|v| decode_request(&v))
            .and_then(|req| ex.run(&req))
        {
            Ok(r) => r,
            Err(e) => ExecResult::synthesized(id, ExecStatus::Error, &e.to_string()),
        };
        if abort_on_crash && result.status == ExecStatus::Crash {
            eprintln!("{}", result.error_message.as_deref().unwrap_or("crash"));
            std::process::abort();
        }
        writeln!(output, "{}", encode_result(&result))?;
        output.flush()?;
    }
    Ok(())
}

struct Conn {
    child: Child,
    stdin: ChildStdin,
    lines: Receiver<std::io::Result<String>>,
    next_id: u64,
}

impl Drop for Conn {
    fn drop(&mut self) {
        let _ = self.child.kill();
        let _ = self.child.wait();
    }
}

/// Runs an external executor process, respawning it after a crash or a
/// timeout. Abnormal termination during a request becomes a `Crash` result.
pub struct SubprocessExecutor {
    cmd: Vec<String>,
    timeout: Duration,
    conn: Option<Conn>,
    apis: Vec<String>,
    pub spawns: u64,
}

fn describe_exit(status: Option<ExitStatus>) -> String {
    let Some(st) = status else {
        return "child terminated".into();
    };
    #[cfg(unix)]
    {
        use std::os::unix::process::ExitStatusExt;
        if let Some(sig) = st.signal() {
            return format!("child terminated by signal {sig}");
        }
    }
    match st.code() {
        Some(c) => format!("child exited with code {c}"),
        None => "child terminated".into(),
    }
}

impl SubprocessExecutor {
    pub fn new(cmd: Vec<String>, timeout: Duration) -> Result<SubprocessExecutor, ExecError> {
        if cmd.is_empty() {
            return Err(ExecError::Unavailable("empty executor command".into()));
        }
        let mut ex = SubprocessExecutor {
            cmd,
            timeout,
            conn: None,
            apis: Vec::new(),
            spawns: 0,
        };
        ex.connect()?;
        Ok(ex)
    }

    fn connect(&mut self) -> Result<&mut Conn, ExecError> {
        if self.conn.is_none() {
            let mut child = Command::new(&self.cmd[0])
                .args(&self.cmd[1..])
                .stdin(Stdio::piped())
                .stdout(Stdio::piped())
                .stderr(Stdio::null())
                .spawn()
                .map_err(|e| ExecError::Unavailable(format!("{}: {e}", self.cmd[0])))?;
            self.spawns += 1;
            let stdin = child.stdin.take().expect("piped stdin");
            let stdout = child.stdout.take().expect("piped stdout");
            let (tx, rx) = mpsc::channel();
            std::thread::spawn(move || {
                for line in BufReader::new(stdout).lines() {
                    if tx.send(line).is_err() {
                        break;
                    }
                }
            });
            let conn = Conn {
                child,
                stdin,
                lines: rx,
                next_id: 1,
            };
            let hello = match conn.lines.recv_timeout(self.timeout) {
                Ok(Ok(l)) => l,
                _ => return Err(ExecError::Unavailable("no handshake from executor".into())),
            };
            let v: Value = serde_json::from_str(&hello).map_err(|e| ExecError::Protocol(format!("handshake: {e}")))?;
            if v.get("protocol").and_then(Value::as_str) != Some(PROTOCOL_VERSION) {
                return Err(ExecError::Protocol(format!("unsupported handshake {hello}")));
            }
            self.apis = v
                .get("apis")
                .and_then(Value::as_array)
                .map(|xs| xs.iter().filter_map(|x| x.as_str().map(String::from)).collect())
                .unwrap_or_default();
            self.conn = Some(conn);
        }
        Ok(self.conn.as_mut().expect("connected"))
    }

    fn dead(&mut self, id: u64) -> ExecResult {
        let status = self.conn.as_mut().and_then(|c| c.child.wait().ok());
        self.conn = None;
        ExecResult::synthesized(id, ExecStatus::Crash, &describe_exit(status))
    }
}

impl Executor for SubprocessExecutor {
    fn apis(&self) -> Vec<String> {
        self.apis.clone()
    }

    fn run(&mut self, req: &ExecRequest) -> Result<ExecResult, ExecError> {
        let timeout = self.timeout;
        let conn = self.connect()?;
        let wire_id = conn.next_id;
        conn.next_id += 1;
        let mut frame = encode_request(req);
        frame["id"] = Value::from(wire_id);
        if writeln!(conn.stdin, "{frame}").and_then(|_| conn.stdin.flush()).is_err() {
            return Ok(self.dead(req.id));
        }
        match conn.lines.recv_timeout(timeout) {
            Ok(Ok(line)) => {
                let v: Value = serde_json::from_str(&line).map_err(|e| ExecError::Protocol(e.to_string()))?;
                let mut r = decode_result(&v)?;
                if r.id != wire_id {
                    self.conn = None;
                    return Err(ExecError::Protocol(format!("response id {} for request {wire_id}", r.id)));
                }
                r.id = req.id;
                Ok(r)
            }
            Ok(Err(_)) | Err(RecvTimeoutError::Disconnected) => Ok(self.dead(req.id)),
            Err(RecvTimeoutError::Timeout) => {
                self.conn = None;
                Ok(ExecResult::synthesized(
                    req.id,
                    ExecStatus::Timeout,
                    &format!("no response within {} ms", timeout.as_millis()),
                ))
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn serve_answers_every_frame() {
        let input = concat!(
            r#"{"id":1,"api":"ref.argmax","backend":"cpu","args":{"input":{"kind":"tensor","ndim":1,"shape":[3],"dtype":"float32","lo":0,"hi":1},"dim":{"kind":"int","value":0}},"want_outputs":true}"#,
            "\n",
            "not json\n",
            r#"{"id":3,"api":"ref.nope","args":{}}"#,
            "\n"
        );
        let mut out = Vec::new();
        serve(input.as_bytes(), &mut out, false).unwrap();
        let lines: Vec<Value> = String::from_utf8(out)
            .unwrap()
            .lines()
            .map(|l| serde_json::from_str(l).unwrap())
            .collect();
        assert_eq!(lines.len(), 4);
        assert_eq!(lines[0]["protocol"], "1");
        assert_eq!(lines[1]["status"], "ok");
        assert_eq!(lines[2]["status"], "error");
        assert_eq!(lines[3]["id"], 3);
        assert!(lines[3]["error_message"].as_str().unwrap().contains("unknown api"));
    }
}
