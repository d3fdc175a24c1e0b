//! Candidate rule sources: ruleset files, the enumerator and a chat model.

pub mod enumerate;
pub mod llm;
pub mod mutate;

use std::path::{Path, PathBuf};

pub use enumerate::enumerate_rules;
pub use llm::{generate_rules_llm, ChatModel, Feedback, FeedbackKind, LlmLimits, LlmOutcome, PromptContext};
pub use mutate::{collect_errors, CollectConfig, ErrorDb, ErrorEntry, Mutator};

use crate::dsl::ruleset::{parse_ruleset, Ruleset};
use crate::dsl::TypedRule;

/// Rulesets compiled into the binary, by file name.
pub const SHIPPED: &[(&str, &str)] = &[
    ("broadcast.rules", include_str!("../../assets/rules/broadcast.rules")),
    ("ref.rules", include_str!("../../assets/rules/ref.rules")),
];

pub fn shipped_ruleset(name: &str) -> Option<Ruleset> {
    SHIPPED
        .iter()
        .find(|(n, _)| *n == name)
        .map(|(n, text)| parse_ruleset(text, n))
}

/// Every shipped rule, in file order.
pub fn shipped_rules() -> Vec<TypedRule> {
    SHIPPED
        .iter()
        .flat_map(|(n, text)| parse_ruleset(text, n).typed())
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub enum RuleSource {
    FileSet(PathBuf),
    Enumerator { max_depth: usize, count: usize, seed: u64 },
    LlmClient { endpoint: String, model: String, prompts: PathBuf },
}

/// Load a ruleset file; a missing file is an error, bad records are
/// reported in the result and skipped.
pub fn load_ruleset(path: &Path) -> std::io::Result<Ruleset> {
    crate::dsl::ruleset::load_ruleset(path)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shipped_rulesets_compile() {
        for (n, text) in SHIPPED {
            let rs = parse_ruleset(text, n);
            assert!(rs.errors.is_empty(), "{n}: {:?}", rs.errors);
            assert!(!rs.rules.is_empty());
        }
    }
}
