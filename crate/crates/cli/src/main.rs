//! `apicon`: collect errors, generate rules, learn and refine invariants,
//! generate abstract inputs, fuzz, and report.

mod config;
mod pipeline;
mod report;

use std::collections::VecDeque;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::{Command, ExitCode, Stdio};
use std::sync::Mutex;

use apicon_core::dsl::compile_rule;
use apicon_core::dsl::ruleset::describe_error;
use apicon_core::eval::{check_on_input, Verdict};
use apicon_core::value::decode_input;
use clap::{Parser, Subcommand};
use serde_json::{json, Value};

use config::{Overrides, RunConfig};
use pipeline::Stage;

#[derive(Debug)]
pub enum Failure {
    /// Bad flags or configuration; exit 2.
    Config(String),
    /// A stage could not complete; exit 3.
    Stage(String),
}

impl std::fmt::Display for Failure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Failure::Config(m) => write!(f, "config error: {m}"),
            Failure::Stage(m) => write!(f, "stage failed: {m}"),
        }
    }
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Config(_) => 2,
            Failure::Stage(_) => 3,
        }
    }
}

#[derive(Parser)]
#[command(name = "apicon", version, about = "Learn API input constraints and fuzz with solver-generated inputs")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
    /// TOML run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// API to process (repeatable, or `all`).
    #[arg(long = "api", global = true, value_delimiter = ',')]
    apis: Vec<String>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Fuzzing budget per API in seconds.
    #[arg(long = "budget-s", global = true)]
    budget_s: Option<f64>,
    /// Command line of an external executor speaking the wire protocol.
    #[arg(long = "executor-cmd", global = true)]
    executor_cmd: Option<String>,
    /// Extra ruleset file (repeatable).
    #[arg(long = "ruleset", global = true)]
    rulesets: Vec<PathBuf>,
    #[arg(long = "out-dir", global = true)]
    out_dir: Option<PathBuf>,
    /// Worker processes; defaults to the CPU count.
    #[arg(long, global = true)]
    jobs: Option<usize>,
}

#[derive(Subcommand)]
enum Cmd {
    /// Mutate seeds and collect distinct error messages.
    Errors,
    /// Produce candidate rules from ruleset files, the enumerator and a chat model.
    Rules,
    /// Learn invariants from seeds and refine them.
    Learn,
    /// Generate the abstract input corpus.
    Genabs,
    /// Fuzz from the corpus with crash and differential oracles.
    Fuzz,
    /// Run every stage in order.
    All,
    /// Consolidated per-API report.
    Report,
    /// Check one rule against an input document.
    Eval {
        #[arg(long)]
        rule: String,
        /// JSON input document: {"api": ..., "args": {...}}.
        #[arg(long)]
        input: PathBuf,
        /// Parameters bound to the rule's variables, in order; defaults to the binding names.
        #[arg(long, value_delimiter = ',')]
        params: Vec<String>,
    },
    /// Serve the reference targets over stdio.
    #[command(hide = true)]
    ServeRef {
        /// Report crashes as results instead of aborting.
        #[arg(long)]
        no_abort: bool,
    },
    #[command(hide = true)]
    Worker {
        #[arg(long)]
        resolved: PathBuf,
        #[arg(long, value_delimiter = ',')]
        stages: Vec<String>,
        #[arg(long = "target")]
        target_api: String,
    },
}

fn emit(v: &Value) {
    let mut out = std::io::stdout().lock();
    let _ = writeln!(out, "{v}");
    let _ = out.flush();
}

fn run_worker(resolved: &Path, stages: &[String], api: &str) -> Result<(), Failure> {
    let text = std::fs::read_to_string(resolved).map_err(|e| Failure::Config(format!("{}: {e}", resolved.display())))?;
    let cfg: RunConfig = serde_json::from_str(&text).map_err(|e| Failure::Config(format!("{}: {e}", resolved.display())))?;
    let stages: Vec<Stage> = stages
        .iter()
        .map(|s| Stage::parse(s).ok_or_else(|| Failure::Config(format!("unknown stage '{s}'"))))
        .collect::<Result<_, _>>()?;
    let mut ex = None;
    for st in stages {
        if ex.is_none() && st != Stage::Rules {
            ex = Some(pipeline::executor(&cfg)?);
        }
        let mut dummy = apicon_core::exec::RefExecutor::new();
        let exr: &mut dyn apicon_core::exec::Executor = match ex.as_mut() {
            Some(e) => e.as_mut(),
            None => &mut dummy,
        };
        match pipeline::run_stage(&cfg, st, api, exr) {
            Ok(v) => emit(&v),
            Err(e) => {
                emit(&json!({"stage": st.as_str(), "api": api, "status": "failed", "error": e.to_string()}));
                return Err(e);
            }
        }
    }
    Ok(())
}

/// Run `stages` for every API, one worker process per API, at most
/// `cfg.jobs` at a time. Failed APIs do not stop the others.
fn orchestrate(cfg: &RunConfig, stages: &[Stage]) -> Result<(), Failure> {
    let dir = cfg.out_dir.join(".apicon");
    std::fs::create_dir_all(&dir).map_err(|e| Failure::Stage(format!("{}: {e}", dir.display())))?;
    let resolved = dir.join("run.json");
    std::fs::write(&resolved, serde_json::to_string_pretty(cfg).expect("json"))
        .map_err(|e| Failure::Stage(format!("{}: {e}", resolved.display())))?;
    let exe = std::env::current_exe().map_err(|e| Failure::Stage(format!("cannot locate own executable: {e}")))?;
    let stage_list: Vec<&str> = stages.iter().map(|s| s.as_str()).collect();
    let queue: Mutex<VecDeque<String>> = Mutex::new(cfg.apis.iter().map(|a| a.name.clone()).collect());
    let failed: Mutex<Vec<String>> = Mutex::new(Vec::new());
    std::thread::scope(|s| {
        for _ in 0..cfg.jobs.min(cfg.apis.len()) {
            s.spawn(|| loop {
                let Some(api) = queue.lock().unwrap().pop_front() else { break };
                let out = Command::new(&exe)
                    .arg("worker")
                    .arg("--resolved")
                    .arg(&resolved)
                    .arg("--stages")
                    .arg(stage_list.join(","))
                    .arg("--target")
                    .arg(&api)
                    .stdin(Stdio::null())
                    .stderr(Stdio::inherit())
                    .output();
                match out {
                    Ok(o) => {
                        let text = String::from_utf8_lossy(&o.stdout);
                        let mut stdout = std::io::stdout().lock();
                        let _ = stdout.write_all(text.as_bytes());
                        let _ = stdout.flush();
                        if !o.status.success() {
                            if o.status.code().is_none() {
                                emit(&json!({"api": api, "status": "failed", "error": format!("worker terminated: {}", o.status)}));
                            }
                            failed.lock().unwrap().push(api);
                        }
                    }
                    Err(e) => {
                        emit(&json!({"api": api, "status": "failed", "error": format!("cannot start worker: {e}")}));
                        failed.lock().unwrap().push(api);
                    }
                }
            });
        }
    });
    if stages.contains(&Stage::Errors) {
        pipeline::merge_errors(cfg)?;
    }
    let failed = failed.into_inner().unwrap();
    if failed.is_empty() {
        Ok(())
    } else {
        Err(Failure::Stage(format!("failed APIs: {}", failed.join(", "))))
    }
}

fn eval(rule: &str, input: &Path, params: &[String]) -> Result<(), Failure> {
    let typed = compile_rule(rule).map_err(|e| Failure::Config(format!("--rule: {}", describe_error(&e))))?;
    let text = std::fs::read_to_string(input).map_err(|e| Failure::Config(format!("{}: {e}", input.display())))?;
    let doc: Value = serde_json::from_str(&text).map_err(|e| Failure::Config(format!("{}: {e}", input.display())))?;
    let x = decode_input(&doc).map_err(|e| Failure::Config(format!("{}: {e}", input.display())))?;
    let params: Vec<String> = if params.is_empty() {
        typed.rule.bindings.iter().map(|b| b.name.clone()).collect()
    } else {
        params.to_vec()
    };
    if params.len() != typed.rule.bindings.len() {
        return Err(Failure::Config(format!(
            "--params: {} names for {} bindings",
            params.len(),
            typed.rule.bindings.len()
        )));
    }
    let v = match check_on_input(&typed.rule, &params, &x) {
        Verdict::Holds => json!({"verdict": "holds"}),
        Verdict::Fails => json!({"verdict": "fails"}),
        Verdict::Errors(e) => json!({"verdict": "error", "detail": e.to_string()}),
    };
    emit(&v);
    Ok(())
}

fn run(cli: Cli) -> Result<(), Failure> {
    let ov = Overrides {
        apis: cli.apis.clone(),
        seed: cli.seed,
        budget_s: cli.budget_s,
        executor_cmd: cli.executor_cmd.clone(),
        rulesets: cli.rulesets.clone(),
        out_dir: cli.out_dir.clone(),
        jobs: cli.jobs,
    };
    let stages: Vec<Stage> = match &cli.cmd {
        Cmd::Errors => vec![Stage::Errors],
        Cmd::Rules => vec![Stage::Rules],
        Cmd::Learn => vec![Stage::Learn],
        Cmd::Genabs => vec![Stage::Genabs],
        Cmd::Fuzz => vec![Stage::Fuzz],
        Cmd::All => Stage::ALL.to_vec(),
        Cmd::Report => {
            let cfg = config::load(cli.config.as_deref(), &ov)?;
            let doc = report::report(&cfg)?;
            print!("{}", report::render_table(doc["apis"].as_array().map(Vec::as_slice).unwrap_or(&[])));
            if doc["seed_mismatch"] == true {
                println!("warning: artifacts were produced with different seeds");
            }
            return Ok(());
        }
        Cmd::Eval { rule, input, params } => return eval(rule, input, params),
        Cmd::ServeRef { no_abort } => {
            let stdin = std::io::stdin().lock();
            return apicon_core::exec::serve(stdin, std::io::stdout().lock(), !no_abort)
                .map_err(|e| Failure::Stage(format!("serve: {e}")));
        }
        Cmd::Worker { resolved, stages, target_api } => return run_worker(resolved, stages, target_api),
    };
    let cfg = config::load(cli.config.as_deref(), &ov)?;
    orchestrate(&cfg, &stages)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("apicon: {e}");
            ExitCode::from(e.code())
        }
    }
}
