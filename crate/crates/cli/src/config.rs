//! Run configuration: TOML file, then command-line overrides.

use std::path::{Path, PathBuf};

use apicon_core::dsl::{parse_type, TypeExpr};
use apicon_core::exec::catalog;
use apicon_core::value::ApiSignature;
use serde::{Deserialize, Serialize};

use crate::Failure;

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct FileConfig {
    library: Option<String>,
    apis: Option<Vec<String>>,
    out_dir: Option<PathBuf>,
    seed: Option<u64>,
    jobs: Option<usize>,
    executor_cmd: Option<Vec<String>>,
    executor_timeout_s: Option<f64>,
    backends: Option<Vec<String>>,
    rulesets: Option<Vec<PathBuf>>,
    errors: ErrorsSection,
    rules: RulesSection,
    learn: LearnSection,
    genabs: GenSection,
    fuzz: FuzzSection,
    llm: LlmSection,
    api: Vec<ApiSection>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct ErrorsSection {
    seeds: Option<usize>,
    budget_s: Option<f64>,
    max_random: Option<usize>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct RulesSection {
    shipped: Option<bool>,
    enumerate: Option<usize>,
    max_depth: Option<usize>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct LearnSection {
    trials: Option<usize>,
    p: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct GenSection {
    n: Option<usize>,
    p: Option<f64>,
    budget_s: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct FuzzSection {
    budget_s: Option<f64>,
    max_inputs: Option<u64>,
    tolerance: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct LlmSection {
    endpoint: Option<String>,
    model: Option<String>,
    key_env: Option<String>,
    timeout_s: Option<f64>,
    failures: Option<usize>,
}

/// Signature of an API served by an external executor.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct ApiSection {
    name: String,
    /// `"name: type"`, with a trailing `?` on the type for optional params.
    params: Vec<String>,
    #[serde(default)]
    doc: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LlmSettings {
    pub endpoint: String,
    pub model: String,
    pub key_env: String,
    pub timeout_s: f64,
    pub failures: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ApiDef {
    pub name: String,
    pub params: Vec<(String, String, bool)>,
    pub doc: String,
}

impl ApiDef {
    pub fn signature(&self) -> ApiSignature {
        let params: Vec<(&str, TypeExpr, bool)> = self
            .params
            .iter()
            .map(|(n, t, r)| (n.as_str(), parse_type(t).expect("validated at load"), *r))
            .collect();
        ApiSignature::new(&self.name, &params)
    }
}

/// Fully resolved settings; workers receive this as JSON.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub library: String,
    pub apis: Vec<ApiDef>,
    pub out_dir: PathBuf,
    pub seed: u64,
    pub jobs: usize,
    pub executor_cmd: Option<Vec<String>>,
    pub executor_timeout_s: f64,
    pub backends: Vec<String>,
    pub rulesets: Vec<PathBuf>,
    pub shipped_rules: bool,
    pub enumerate: usize,
    pub max_depth: usize,
    pub seeds: usize,
    pub errors_budget_s: f64,
    pub errors_max_random: usize,
    pub trials: usize,
    pub learn_p: f64,
    pub gen_n: usize,
    pub gen_p: f64,
    pub gen_budget_s: f64,
    pub fuzz_budget_s: f64,
    pub fuzz_max_inputs: Option<u64>,
    pub tolerance: f64,
    pub llm: Option<LlmSettings>,
}

impl RunConfig {
    pub fn api(&self, name: &str) -> Option<&ApiDef> {
        self.apis.iter().find(|a| a.name == name)
    }
}

/// Command-line values that override the file.
#[derive(Debug, Default, Clone)]
pub struct Overrides {
    pub apis: Vec<String>,
    pub seed: Option<u64>,
    pub budget_s: Option<f64>,
    pub executor_cmd: Option<String>,
    pub rulesets: Vec<PathBuf>,
    pub out_dir: Option<PathBuf>,
    pub jobs: Option<usize>,
}

fn config_err(msg: String) -> Failure {
    Failure::Config(msg)
}

fn positive(name: &str, v: f64) -> Result<f64, Failure> {
    if v.is_finite() && v > 0.0 {
        Ok(v)
    } else {
        Err(config_err(format!("{name} must be positive, got {v}")))
    }
}

fn ratio(name: &str, v: f64) -> Result<f64, Failure> {
    if v > 0.0 && v <= 1.0 {
        Ok(v)
    } else {
        Err(config_err(format!("{name} must be in (0, 1], got {v}")))
    }
}

fn nonzero(name: &str, v: usize) -> Result<usize, Failure> {
    if v > 0 {
        Ok(v)
    } else {
        Err(config_err(format!("{name} must be at least 1")))
    }
}

fn parse_param(api: &str, text: &str) -> Result<(String, String, bool), Failure> {
    let bad = || config_err(format!("api {api}: bad param '{text}', expected 'name: type'"));
    let (name, ty) = text.split_once(':').ok_or_else(bad)?;
    let (name, ty) = (name.trim(), ty.trim());
    let (ty, required) = match ty.strip_suffix('?') {
        Some(t) => (t.trim(), false),
        None => (ty, true),
    };
    if name.is_empty() {
        return Err(bad());
    }
    parse_type(ty).map_err(|e| config_err(format!("api {api}: param '{name}': {e}")))?;
    Ok((name.to_string(), ty.to_string(), required))
}

fn reference_defs(names: &[String]) -> Result<Vec<ApiDef>, Failure> {
    let all = names.is_empty() || names.iter().any(|n| n == "all");
    let mut out = Vec::new();
    for t in catalog() {
        if all || names.iter().any(|n| n == &t.api || n == t.name) {
            out.push(ApiDef {
                name: t.api.clone(),
                params: t.sig.params.iter().map(|p| (p.name.clone(), p.ty.to_string(), p.required)).collect(),
                doc: t.doc.to_string(),
            });
        }
    }
    for n in names.iter().filter(|n| *n != "all") {
        if !out.iter().any(|d| d.name == *n || d.name.strip_prefix("ref.") == Some(n.as_str())) {
            return Err(config_err(format!("--api: unknown reference api '{n}'")));
        }
    }
    Ok(out)
}

pub fn load(path: Option<&Path>, ov: &Overrides) -> Result<RunConfig, Failure> {
    let file: FileConfig = match path {
        None => FileConfig::default(),
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| config_err(format!("{}: {e}", p.display())))?;
            toml::from_str(&text).map_err(|e| config_err(format!("{}: {}", p.display(), e.message())))?
        }
    };
    let library = file.library.unwrap_or_else(|| "ref".into());
    let executor_cmd = match &ov.executor_cmd {
        Some(s) => {
            let parts: Vec<String> = s.split_whitespace().map(String::from).collect();
            if parts.is_empty() {
                return Err(config_err("--executor-cmd is empty".into()));
            }
            Some(parts)
        }
        None => file.executor_cmd,
    };
    let names = if ov.apis.is_empty() { file.apis.unwrap_or_default() } else { ov.apis.clone() };
    let apis = if library == "ref" {
        reference_defs(&names)?
    } else {
        if executor_cmd.is_none() {
            return Err(config_err(format!("library '{library}' needs executor_cmd")));
        }
        let mut defs = Vec::new();
        for a in &file.api {
            let params = a.params.iter().map(|p| parse_param(&a.name, p)).collect::<Result<Vec<_>, _>>()?;
            defs.push(ApiDef { name: a.name.clone(), params, doc: a.doc.clone() });
        }
        if !(names.is_empty() || names.iter().any(|n| n == "all")) {
            for n in &names {
                if !defs.iter().any(|d| &d.name == n) {
                    return Err(config_err(format!("--api: '{n}' has no [[api]] signature")));
                }
            }
            defs.retain(|d| names.contains(&d.name));
        }
        defs
    };
    if apis.is_empty() {
        return Err(config_err("no APIs selected".into()));
    }
    let llm = match file.llm.endpoint.or_else(|| std::env::var(apicon_core::sources::llm::ENV_ENDPOINT).ok()) {
        None => None,
        Some(endpoint) => Some(LlmSettings {
            endpoint,
            model: file
                .llm
                .model
                .or_else(|| std::env::var(apicon_core::sources::llm::ENV_MODEL).ok())
                .unwrap_or_else(|| "default".into()),
            key_env: file.llm.key_env.unwrap_or_else(|| apicon_core::sources::llm::DEFAULT_KEY_ENV.into()),
            timeout_s: positive("llm.timeout_s", file.llm.timeout_s.unwrap_or(60.0))?,
            failures: nonzero("llm.failures", file.llm.failures.unwrap_or(100))?,
        }),
    };
    let mut rulesets = file.rulesets.unwrap_or_default();
    rulesets.extend(ov.rulesets.iter().cloned());
    let backends = file.backends.unwrap_or_else(|| vec!["cpu".into(), "gpu".into()]);
    if backends.is_empty() {
        return Err(config_err("backends must not be empty".into()));
    }
    let fuzz_budget = ov.budget_s.or(file.fuzz.budget_s).unwrap_or(180.0);
    let cfg = RunConfig {
        library,
        apis,
        out_dir: ov.out_dir.clone().or(file.out_dir).unwrap_or_else(|| PathBuf::from("apicon-out")),
        seed: ov.seed.or(file.seed).unwrap_or(0),
        jobs: nonzero(
            "jobs",
            ov.jobs.or(file.jobs).unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get())),
        )?,
        executor_cmd,
        executor_timeout_s: positive("executor_timeout_s", file.executor_timeout_s.unwrap_or(5.0))?,
        backends,
        rulesets,
        shipped_rules: file.rules.shipped.unwrap_or(true),
        enumerate: file.rules.enumerate.unwrap_or(100),
        max_depth: nonzero("rules.max_depth", file.rules.max_depth.unwrap_or(3))?,
        seeds: nonzero("errors.seeds", file.errors.seeds.unwrap_or(117))?,
        errors_budget_s: positive("errors.budget_s", file.errors.budget_s.unwrap_or(30.0))?,
        errors_max_random: file.errors.max_random.unwrap_or(2000),
        trials: nonzero("learn.trials", file.learn.trials.unwrap_or(30))?,
        learn_p: ratio("learn.p", file.learn.p.unwrap_or(0.3))?,
        gen_n: nonzero("genabs.n", file.genabs.n.unwrap_or(200))?,
        gen_p: ratio("genabs.p", file.genabs.p.unwrap_or(0.3))?,
        gen_budget_s: positive("genabs.budget_s", file.genabs.budget_s.unwrap_or(60.0))?,
        fuzz_budget_s: positive(if ov.budget_s.is_some() { "--budget-s" } else { "fuzz.budget_s" }, fuzz_budget)?,
        fuzz_max_inputs: file.fuzz.max_inputs,
        tolerance: positive("fuzz.tolerance", file.fuzz.tolerance.unwrap_or(0.01))?,
        llm,
    };
    Ok(cfg)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write(text: &str) -> tempfile::NamedTempFile {
        let f = tempfile::NamedTempFile::new().unwrap();
        std::fs::write(f.path(), text).unwrap();
        f
    }

    #[test]
    fn defaults_cover_the_catalog() {
        let cfg = load(None, &Overrides::default()).unwrap();
        assert_eq!(cfg.apis.len(), catalog().len());
        assert_eq!((cfg.trials, cfg.gen_p, cfg.fuzz_budget_s), (30, 0.3, 180.0));
    }

    #[test]
    fn flags_override_file() {
        let f = write("seed = 4\napis = [\"narrow\"]\n[fuzz]\nbudget_s = 10\n");
        let ov = Overrides { seed: Some(9), budget_s: Some(2.0), ..Default::default() };
        let cfg = load(Some(f.path()), &ov).unwrap();
        assert_eq!((cfg.seed, cfg.fuzz_budget_s), (9, 2.0));
        assert_eq!(cfg.apis.len(), 1);
        assert_eq!(cfg.apis[0].name, "ref.narrow");
    }

    #[test]
    fn errors_name_the_parameter() {
        let f = write("[fuzz]\nbudget_s = -1\n");
        let e = load(Some(f.path()), &Overrides::default()).unwrap_err();
        assert!(e.to_string().contains("fuzz.budget_s"), "{e}");
        let f = write("[fuzz]\nbudgetz = 1\n");
        let e = load(Some(f.path()), &Overrides::default()).unwrap_err();
        assert!(e.to_string().contains("budgetz"), "{e}");
        let ov = Overrides { apis: vec!["nope".into()], ..Default::default() };
        assert!(load(None, &ov).unwrap_err().to_string().contains("nope"));
    }

    #[test]
    fn external_signatures() {
        let f = write(concat!(
            "library = \"torch\"\nexecutor_cmd = [\"adapter\"]\n",
            "[[api]]\nname = \"torch.add\"\nparams = [\"input: tensor\", \"other: tensor\", \"alpha: float?\"]\n"
        ));
        let cfg = load(Some(f.path()), &Overrides::default()).unwrap();
        let sig = cfg.apis[0].signature();
        assert_eq!(sig.params.len(), 3);
        assert!(!sig.params[2].required);
        let f = write("library = \"torch\"\n");
        assert!(load(Some(f.path()), &Overrides::default()).unwrap_err().to_string().contains("executor_cmd"));
    }
}
