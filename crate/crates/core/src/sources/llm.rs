//! Rule generation through a chat model with the five-feedback loop.

use std::cell::Cell;
use std::rc::Rc;
use std::time::{Duration, Instant};

use serde_json::{json, Value};

use crate::dsl::ruleset::{describe_error, parse_ruleset};
use crate::dsl::{compile_rule, render_rule, Rule, TypedRule};
use crate::value::ApiSignature;

pub const PROMPT_TEMPLATE: &str = include_str!("../../assets/prompts/template.txt");
pub const GRAMMAR_TEXT: &str = include_str!("../../assets/prompts/grammar.txt");
pub const FEW_SHOT: &str = include_str!("../../assets/prompts/fewshot.rules");

pub const ENV_ENDPOINT: &str = "APICON_LLM_ENDPOINT";
pub const ENV_MODEL: &str = "APICON_LLM_MODEL";
pub const ENV_KEY_NAME: &str = "APICON_LLM_KEY_ENV";
pub const DEFAULT_KEY_ENV: &str = "APICON_LLM_API_KEY";

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("endpoint error: {0}")]
pub struct EndpointError(pub String);

pub trait ChatModel {
    fn complete(&mut self, prompt: &str) -> Result<String, EndpointError>;
}

pub trait Clock {
    fn elapsed(&self) -> Duration;
}

pub struct WallClock(Instant);

impl WallClock {
    pub fn start() -> WallClock {
        WallClock(Instant::now())
    }
}

impl Clock for WallClock {
    fn elapsed(&self) -> Duration {
        self.0.elapsed()
    }
}

/// Clock advanced by hand; clones share the same time.
#[derive(Debug, Clone, Default)]
pub struct ManualClock(Rc<Cell<Duration>>);

impl ManualClock {
    pub fn advance(&self, d: Duration) {
        self.0.set(self.0.get() + d);
    }
}

impl Clock for ManualClock {
    fn elapsed(&self) -> Duration {
        self.0.get()
    }
}

type Script = Box<dyn FnMut(usize, &str) -> Option<String>>;

/// Offline model: replies come from a fixed list or a function of the turn
/// number. Each reply advances the attached clock by `latency`.
pub struct ScriptedModel {
    script: Script,
    turn: usize,
    latency: Duration,
    clock: Option<ManualClock>,
    pub prompts: Vec<String>,
}

impl ScriptedModel {
    pub fn new(replies: Vec<String>) -> ScriptedModel {
        ScriptedModel::from_fn(move |i, _| replies.get(i).cloned())
    }

    pub fn from_fn(f: impl FnMut(usize, &str) -> Option<String> + 'static) -> ScriptedModel {
        ScriptedModel {
            script: Box::new(f),
            turn: 0,
            latency: Duration::ZERO,
            clock: None,
            prompts: Vec::new(),
        }
    }

    pub fn with_clock(mut self, clock: ManualClock, latency: Duration) -> ScriptedModel {
        self.clock = Some(clock);
        self.latency = latency;
        self
    }
}

impl ChatModel for ScriptedModel {
    fn complete(&mut self, prompt: &str) -> Result<String, EndpointError> {
        self.prompts.push(prompt.to_string());
        let reply = (self.script)(self.turn, prompt);
        self.turn += 1;
        if let Some(c) = &self.clock {
            c.advance(self.latency);
        }
        reply.ok_or_else(|| EndpointError("script exhausted".into()))
    }
}

/// OpenAI-style chat-completions client.
pub struct HttpChatModel {
    pub endpoint: String,
    pub model: String,
    api_key: Option<String>,
    agent: ureq::Agent,
}

impl HttpChatModel {
    pub fn new(endpoint: &str, model: &str, key_env: &str, timeout: Duration) -> HttpChatModel {
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(timeout))
            .build()
            .new_agent();
        HttpChatModel {
            endpoint: endpoint.to_string(),
            model: model.to_string(),
            api_key: std::env::var(key_env).ok(),
            agent,
        }
    }

    /// Configured from `APICON_LLM_ENDPOINT`, `APICON_LLM_MODEL` and the key
    /// variable named by `APICON_LLM_KEY_ENV`.
    pub fn from_env(timeout: Duration) -> Result<HttpChatModel, EndpointError> {
        let endpoint = std::env::var(ENV_ENDPOINT).map_err(|_| EndpointError(format!("{ENV_ENDPOINT} is not set")))?;
        let model = std::env::var(ENV_MODEL).unwrap_or_else(|_| "default".into());
        let key_env = std::env::var(ENV_KEY_NAME).unwrap_or_else(|_| DEFAULT_KEY_ENV.into());
        Ok(HttpChatModel::new(&endpoint, &model, &key_env, timeout))
    }
}

impl ChatModel for HttpChatModel {
    fn complete(&mut self, prompt: &str) -> Result<String, EndpointError> {
        let body = json!({
            "model": self.model,
            "messages": [{"role": "user", "content": prompt}],
        });
        let mut req = self.agent.post(&self.endpoint);
        if let Some(k) = &self.api_key {
            req = req.header("Authorization", format!("Bearer {k}"));
        }
        let mut resp = req.send_json(&body).map_err(|e| EndpointError(e.to_string()))?;
        let v: Value = resp
            .body_mut()
            .read_json()
            .map_err(|e| EndpointError(e.to_string()))?;
        v["choices"][0]["message"]["content"]
            .as_str()
            .map(str::to_string)
            .ok_or_else(|| EndpointError("response has no choices[0].message.content".into()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum FeedbackKind {
    FormatError,
    RedundantBindings,
    DuplicateRule,
    ParsingError,
    Success,
}

impl FeedbackKind {
    pub fn as_str(self) -> &'static str {
        match self {
            FeedbackKind::FormatError => "FormatError",
            FeedbackKind::RedundantBindings => "RedundantBindings",
            FeedbackKind::DuplicateRule => "DuplicateRule",
            FeedbackKind::ParsingError => "ParsingError",
            FeedbackKind::Success => "Success",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Feedback {
    pub kind: FeedbackKind,
    pub detail: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LlmLimits {
    pub failures: usize,
    pub timeout: Duration,
}

impl Default for LlmLimits {
    fn default() -> Self {
        LlmLimits {
            failures: 100,
            timeout: Duration::from_secs(60),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum StopReason {
    FailureBound,
    Timeout,
    Endpoint(String),
}

#[derive(Debug, Clone)]
pub struct Turn {
    pub response: String,
    pub feedback: Vec<Feedback>,
}

#[derive(Debug, Clone)]
pub struct LlmOutcome {
    pub rules: Vec<TypedRule>,
    pub turns: Vec<Turn>,
    pub failures: usize,
    pub stop: StopReason,
}

impl LlmOutcome {
    pub fn feedback_kinds(&self) -> Vec<FeedbackKind> {
        self.turns.iter().flat_map(|t| t.feedback.iter().map(|f| f.kind)).collect()
    }
}

/// Everything the prompt is built from, apart from feedback.
#[derive(Debug, Clone)]
pub struct PromptContext {
    pub api: String,
    pub signature: String,
    pub docs: String,
    pub grammar: String,
    pub errors: Vec<String>,
    pub examples: String,
}

impl PromptContext {
    pub fn new(sig: &ApiSignature, docs: &str, errors: &[String]) -> PromptContext {
        let params: Vec<String> = sig
            .params
            .iter()
            .map(|p| format!("{}: {}{}", p.name, p.ty, if p.required { "" } else { " (optional)" }))
            .collect();
        PromptContext {
            api: sig.api.clone(),
            signature: format!("{}({})", sig.api, params.join(", ")),
            docs: docs.to_string(),
            grammar: GRAMMAR_TEXT.to_string(),
            errors: errors.to_vec(),
            examples: FEW_SHOT.to_string(),
        }
    }

    pub fn render(&self, feedback: &[Feedback]) -> String {
        let errors = if self.errors.is_empty() {
            "(none)".to_string()
        } else {
            self.errors.iter().map(|e| format!("- {e}")).collect::<Vec<_>>().join("\n")
        };
        let fb = if feedback.is_empty() {
            String::new()
        } else {
            let lines: Vec<String> = feedback
                .iter()
                .map(|f| format!("- {}: {}", f.kind.as_str(), f.detail))
                .collect();
            format!("Feedback on your previous reply:\n{}", lines.join("\n"))
        };
        PROMPT_TEMPLATE
            .replace("{{api}}", &self.api)
            .replace("{{signature}}", &self.signature)
            .replace("{{docs}}", &self.docs)
            .replace("{{grammar}}", &self.grammar)
            .replace("{{errors}}", &errors)
            .replace("{{examples}}", &self.examples)
            .replace("{{feedback}}", &fb)
    }
}

/// Lines of a reply that look like rules: `{...} |= ...`, fences and
/// surrounding prose ignored, list markers stripped.
pub fn split_candidates(response: &str) -> Vec<String> {
    response
        .lines()
        .map(|l| l.trim().trim_start_matches(['-', '*']).trim().trim_matches('`').trim())
        .filter(|l| l.starts_with('{') && l.contains("|="))
        .map(str::to_string)
        .collect()
}

/// Feedback for one candidate given the rules accepted so far.
pub fn classify_candidate(text: &str, accepted: &[Rule]) -> (Feedback, Option<TypedRule>) {
    let typed = match compile_rule(text) {
        Ok(t) => t,
        Err(e) => {
            return (
                Feedback {
                    kind: FeedbackKind::ParsingError,
                    detail: format!("`{text}`: {}", describe_error(&e)),
                },
                None,
            )
        }
    };
    let unused = typed.rule.unused_bindings();
    if !unused.is_empty() {
        return (
            Feedback {
                kind: FeedbackKind::RedundantBindings,
                detail: format!("`{text}`: bindings {} are never used", unused.join(", ")),
            },
            None,
        );
    }
    if accepted.contains(&typed.rule) {
        return (
            Feedback {
                kind: FeedbackKind::DuplicateRule,
                detail: format!("`{}` was already accepted", render_rule(&typed.rule)),
            },
            None,
        );
    }
    (
        Feedback {
            kind: FeedbackKind::Success,
            detail: format!("accepted `{}`", render_rule(&typed.rule)),
        },
        Some(typed),
    )
}

/// Feedback for one whole reply; a reply with no rule-shaped line is a
/// single FormatError.
pub fn classify_response(response: &str, accepted: &mut Vec<Rule>) -> (Vec<Feedback>, Vec<TypedRule>) {
    let cands = split_candidates(response);
    if cands.is_empty() {
        return (
            vec![Feedback {
                kind: FeedbackKind::FormatError,
                detail: "no rule found; write each rule on its own line as {v_1: type, ...} |= expression".into(),
            }],
            Vec::new(),
        );
    }
    let mut fb = Vec::new();
    let mut rules = Vec::new();
    for c in cands {
        let (f, r) = classify_candidate(&c, accepted);
        if let Some(r) = r {
            accepted.push(r.rule.clone());
            rules.push(r);
        }
        fb.push(f);
    }
    (fb, rules)
}

/// Prompt, classify and accumulate until the failure bound or timeout.
/// An endpoint error ends the loop with whatever was accepted.
pub fn generate_rules_llm(
    model: &mut dyn ChatModel,
    ctx: &PromptContext,
    limits: LlmLimits,
    clock: &dyn Clock,
) -> LlmOutcome {
    let mut accepted: Vec<Rule> = Vec::new();
    let mut out = LlmOutcome {
        rules: Vec::new(),
        turns: Vec::new(),
        failures: 0,
        stop: StopReason::Timeout,
    };
    let mut last: Vec<Feedback> = Vec::new();
    loop {
        if out.failures >= limits.failures {
            out.stop = StopReason::FailureBound;
            break;
        }
        if clock.elapsed() >= limits.timeout {
            out.stop = StopReason::Timeout;
            break;
        }
        let prompt = ctx.render(&last);
        let response = match model.complete(&prompt) {
            Ok(r) => r,
            Err(e) => {
                log::warn!("{}: {e}; keeping {} rules", ctx.api, out.rules.len());
                out.stop = StopReason::Endpoint(e.0);
                break;
            }
        };
        let (fb, rules) = classify_response(&response, &mut accepted);
        out.failures += fb.iter().filter(|f| f.kind != FeedbackKind::Success).count();
        for mut r in rules {
            r.rule.name = format!("llm_{}", out.rules.len());
            out.rules.push(r);
        }
        last = fb.clone();
        out.turns.push(Turn { response, feedback: fb });
    }
    out
}

/// Few-shot rules shipped with the prompt assets.
pub fn few_shot_rules() -> Vec<TypedRule> {
    parse_ruleset(FEW_SHOT, "fewshot.rules").typed()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn few_shot_rules_all_compile() {
        let rs = parse_ruleset(FEW_SHOT, "fewshot.rules");
        assert!(rs.errors.is_empty(), "{:?}", rs.errors);
        assert_eq!(rs.rules.len(), 12);
    }

    #[test]
    fn split_ignores_prose_and_fences() {
        let r = "Here you go:\n```\n{v_1: int} |= v_1 > 0\n- {v_1: tensor} |= ndim(v_1) = 2\n```\nthanks";
        assert_eq!(split_candidates(r), vec!["{v_1: int} |= v_1 > 0", "{v_1: tensor} |= ndim(v_1) = 2"]);
    }

    #[test]
    fn prompt_fills_every_slot() {
        let sig = ApiSignature::new("t.f", &[("x", crate::dsl::TypeExpr::Tensor, true)]);
        let ctx = PromptContext::new(&sig, "f(x) does things", &["x must be 2-D".into()]);
        let p = ctx.render(&[Feedback {
            kind: FeedbackKind::ParsingError,
            detail: "bad".into(),
        }]);
        assert!(!p.contains("{{"));
        assert!(p.contains("x must be 2-D") && p.contains("ParsingError: bad") && p.contains("ndim"));
    }
}
