//! Ruleset files: blank-line separated records of
//!
//! ```text
//! # name: dim_valid
//! # desc: dim must index a dimension of input
//! {v_1: tensor, v_2: int} |= -1 * ndim(v_1) <= v_2 and v_2 <= ndim(v_1) - 1
//! ```

use std::fmt;
use std::path::Path;

use super::{compile_rule, line_col, render_rule, DslError, TypedRule};

#[derive(Debug, Clone)]
pub struct LoadedRule {
    pub rule: TypedRule,
    /// 1-based line of the rule text in its file.
    pub line: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RulesetError {
    pub file: String,
    pub line: usize,
    pub col: usize,
    pub message: String,
}

impl fmt::Display for RulesetError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}:{}: {}", self.file, self.line, self.col, self.message)
    }
}

#[derive(Debug, Clone, Default)]
pub struct Ruleset {
    pub rules: Vec<LoadedRule>,
    pub errors: Vec<RulesetError>,
}

impl Ruleset {
    pub fn typed(&self) -> Vec<TypedRule> {
        self.rules.iter().map(|r| r.rule.clone()).collect()
    }
}

pub fn load_ruleset(path: &Path) -> std::io::Result<Ruleset> {
    let text = std::fs::read_to_string(path)?;
    Ok(parse_ruleset(&text, &path.display().to_string()))
}

/// Parse every record; bad records are reported and skipped.
pub fn parse_ruleset(text: &str, file: &str) -> Ruleset {
    let mut out = Ruleset::default();
    let mut name: Option<String> = None;
    let mut desc: Option<String> = None;
    for (i, raw) in text.lines().enumerate() {
        let lineno = i + 1;
        let line = raw.trim();
        if line.is_empty() {
            name = None;
            desc = None;
            continue;
        }
        if let Some(c) = line.strip_prefix('#') {
            let c = c.trim_start();
            if let Some(v) = c.strip_prefix("name:") {
                name = Some(v.trim().to_string());
            } else if let Some(v) = c.strip_prefix("desc:") {
                desc = Some(v.trim().to_string());
            }
            continue;
        }
        let indent = raw.len() - raw.trim_start().len();
        let Some(rule_name) = name.take() else {
            out.errors.push(RulesetError {
                file: file.to_string(),
                line: lineno,
                col: 1,
                message: "rule without a '# name:' line".into(),
            });
            continue;
        };
        match compile_rule(line) {
            Ok(mut typed) => {
                typed.rule.name = rule_name;
                typed.rule.description = desc.take().unwrap_or_default();
                out.rules.push(LoadedRule {
                    rule: typed,
                    line: lineno,
                });
            }
            Err(e) => {
                let (_, col) = line_col(line, e.span().start);
                out.errors.push(RulesetError {
                    file: file.to_string(),
                    line: lineno,
                    col: col + indent,
                    message: format!("{rule_name}: {}", describe_error(&e)),
                });
            }
        }
    }
    out
}

pub fn describe_error(e: &DslError) -> String {
    match e {
        DslError::Parse(p) => format!("{} (at '{}')", p.message, p.token),
        DslError::Binding(b) => b.message.clone(),
        DslError::Type(r) => r.to_string(),
    }
}

pub fn render_ruleset<'a>(rules: impl IntoIterator<Item = &'a TypedRule>) -> String {
    let mut out = String::new();
    for r in rules {
        if !out.is_empty() {
            out.push('\n');
        }
        out.push_str(&format!("# name: {}\n", r.rule.name));
        out.push_str(&format!("# desc: {}\n", r.rule.description.replace('\n', " ")));
        out.push_str(&render_rule(&r.rule));
        out.push('\n');
    }
    out
}
