//! `respec.toml`: model access, tool command templates, budgets and prompt
//! templates. Every section is optional.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::llm::Policy;

const DEFAULT_PROMPTS: &str = include_str!("../assets/prompts.toml");

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("invalid config {path}: {message}")]
    Invalid { path: PathBuf, message: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LlmConfig {
    pub model_id: String,
    pub temperature: f64,
    pub max_tokens: u32,
    /// Chat-completions URL; required for recording or live policies.
    pub endpoint: Option<String>,
    /// Name of the environment variable holding the credential.
    pub api_key_env: String,
    pub policy: Policy,
    pub transcripts: PathBuf,
    pub timeout_secs: u64,
}

impl Default for LlmConfig {
    fn default() -> Self {
        LlmConfig {
            model_id: "llama-3.1-405b-instruct".into(),
            temperature: 0.0,
            max_tokens: 2048,
            endpoint: None,
            api_key_env: "RESPEC_API_KEY".into(),
            policy: Policy::ReplayOnly,
            transcripts: PathBuf::from("transcripts"),
            timeout_secs: 120,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VerifierConfig {
    /// Placeholders: {file} {sourcepath} {classpath} {respec} {config_dir}.
    pub command: String,
    pub classpath: String,
    pub timeout_secs: u64,
}

impl Default for VerifierConfig {
    fn default() -> Self {
        VerifierConfig {
            command: "openjml --esc --source-path {sourcepath} --class-path {classpath} {file}".into(),
            classpath: String::new(),
            timeout_secs: 300,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RefineConfig {
    pub max_iterations: u32,
    pub wall_clock_limit_secs: u64,
}

impl Default for RefineConfig {
    fn default() -> Self {
        RefineConfig {
            max_iterations: 5,
            wall_clock_limit_secs: 300,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PatchConfig {
    pub plain_attempts: u32,
    pub mixed_attempts: u32,
    pub dedup: bool,
    pub context_lines: usize,
}

impl Default for PatchConfig {
    fn default() -> Self {
        PatchConfig {
            plain_attempts: 3,
            mixed_attempts: 3,
            dedup: true,
            context_lines: 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TestConfig {
    /// Placeholders: {test} {class} {method} {workdir} {respec} {config_dir}.
    pub test_command: String,
    pub build_command: Option<String>,
    pub parallel_safe: bool,
    pub max_parallel: usize,
    pub timeout_secs: u64,
}

impl Default for TestConfig {
    fn default() -> Self {
        TestConfig {
            test_command: "mvn -q -o test -Dtest={class}#{method}".into(),
            build_command: None,
            parallel_safe: false,
            max_parallel: 4,
            timeout_secs: 60,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PromptTemplates {
    pub spec_draft: String,
    pub spec_refine: String,
    pub patch: String,
    pub unit_tests: String,
}

impl Default for PromptTemplates {
    fn default() -> Self {
        toml::from_str(DEFAULT_PROMPTS).expect("bundled prompts.toml is valid")
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PromptOverrides {
    pub spec_draft: Option<String>,
    pub spec_refine: Option<String>,
    pub patch: Option<String>,
    pub unit_tests: Option<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub llm: LlmConfig,
    pub verifier: VerifierConfig,
    pub refine: RefineConfig,
    pub patch: PatchConfig,
    pub tests: TestConfig,
    pub prompts: PromptOverrides,
    /// Directory relative paths resolve against (the config file's dir).
    #[serde(skip)]
    pub base_dir: PathBuf,
}

impl Config {
    pub fn load(path: &Path) -> Result<Config, ConfigError> {
        let text = fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let mut cfg: Config = toml::from_str(&text).map_err(|e| ConfigError::Invalid {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        cfg.base_dir = path
            .parent()
            .map(Path::to_path_buf)
            .unwrap_or_else(|| PathBuf::from("."));
        cfg.validate().map_err(|message| ConfigError::Invalid {
            path: path.to_path_buf(),
            message,
        })?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), String> {
        if !(0.0..=1.0).contains(&self.llm.temperature) {
            return Err("llm.temperature must be within [0, 1]".into());
        }
        if self.llm.max_tokens == 0 {
            return Err("llm.max_tokens must be positive".into());
        }
        if self.refine.max_iterations == 0 || self.refine.wall_clock_limit_secs == 0 {
            return Err("refine budget values must be positive".into());
        }
        if self.patch.plain_attempts == 0 || self.patch.mixed_attempts == 0 {
            return Err("patch attempt counts must be positive".into());
        }
        if !self.tests.test_command.contains("{test}")
            && !self.tests.test_command.contains("{class}")
        {
            return Err("tests.test_command needs a {test} or {class} placeholder".into());
        }
        Ok(())
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    pub fn templates(&self) -> PromptTemplates {
        let mut t = PromptTemplates::default();
        let o = &self.prompts;
        for (slot, over) in [
            (&mut t.spec_draft, &o.spec_draft),
            (&mut t.spec_refine, &o.spec_refine),
            (&mut t.patch, &o.patch),
            (&mut t.unit_tests, &o.unit_tests),
        ] {
            if let Some(v) = over {
                *slot = v.clone();
            }
        }
        t
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_match_documented_budgets() {
        let c = Config::default();
        assert_eq!(c.refine.max_iterations, 5);
        assert_eq!(c.refine.wall_clock_limit_secs, 300);
        assert_eq!((c.patch.plain_attempts, c.patch.mixed_attempts), (3, 3));
        assert_eq!(c.tests.timeout_secs, 60);
        assert_eq!(c.llm.temperature, 0.0);
        assert!(c.templates().patch.contains("```java"));
    }

    #[test]
    fn load_overrides_and_resolves() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("respec.toml");
        fs::write(
            &p,
            "[refine]\nmax_iterations = 2\n[llm]\npolicy = \"record-if-missing\"\ntranscripts = \"t\"\n[prompts]\npatch = \"fix it\"\n[tests]\ntest_command = \"run {test}\"\n",
        )
        .unwrap();
        let c = Config::load(&p).unwrap();
        assert_eq!(c.refine.max_iterations, 2);
        assert_eq!(c.refine.wall_clock_limit_secs, 300);
        assert_eq!(c.llm.policy, Policy::RecordIfMissing);
        assert_eq!(c.resolve(&c.llm.transcripts), dir.path().join("t"));
        assert_eq!(c.templates().patch, "fix it");
        assert_eq!(c.templates().spec_draft, PromptTemplates::default().spec_draft);

        fs::write(&p, "[refine]\nmax_iterations = 0\n").unwrap();
        assert!(matches!(Config::load(&p), Err(ConfigError::Invalid { .. })));
        fs::write(&p, "[bogus]\nx = 1\n").unwrap();
        assert!(Config::load(&p).is_err());
    }
}
