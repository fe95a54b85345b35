//! A scripted model for recording fixture transcripts. Responses are looked
//! up by stage, target method and round, so the script does not depend on
//! the exact prompt text.

use std::fs;
use std::path::Path;

use anyhow::{Context, Result};
use respec_core::config::PromptTemplates;
use respec_core::llm::{CompletionProvider, LlmError, Prompt};
use respec_core::prompt::{ATTEMPT, INSTRUCTIONS, ITERATION, SPECIFICATION, TARGET};
use serde::Deserialize;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    SpecDraft,
    SpecRefine,
    PatchPlain,
    PatchMixed,
    UnitTests,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Entry {
    pub stage: Stage,
    /// `pkg.Class.method`
    pub target: String,
    /// Attempt (patches) or iteration (refinement); absent matches any.
    #[serde(default)]
    pub round: Option<u32>,
    pub response: String,
}

#[derive(Debug, Clone, Deserialize)]
struct ScriptFile {
    #[serde(rename = "entry", default)]
    entries: Vec<Entry>,
}

pub struct ScriptedProvider {
    entries: Vec<Entry>,
    templates: PromptTemplates,
}

impl ScriptedProvider {
    pub fn new(entries: Vec<Entry>, templates: PromptTemplates) -> Self {
        ScriptedProvider { entries, templates }
    }

    /// Reads every `*.toml` file in `dir`, in name order.
    pub fn load_dir(dir: &Path, templates: PromptTemplates) -> Result<Self> {
        let mut files: Vec<_> = fs::read_dir(dir)
            .with_context(|| format!("reading {}", dir.display()))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "toml"))
            .collect();
        files.sort();
        let mut entries = Vec::new();
        for f in files {
            let text = fs::read_to_string(&f).with_context(|| format!("reading {}", f.display()))?;
            let s: ScriptFile = toml::from_str(&text).with_context(|| format!("parsing {}", f.display()))?;
            entries.extend(s.entries);
        }
        Ok(ScriptedProvider::new(entries, templates))
    }

    fn stage(&self, p: &Prompt) -> Option<Stage> {
        let ins = p.section(INSTRUCTIONS)?;
        let t = &self.templates;
        if ins == t.spec_draft.trim() {
            Some(Stage::SpecDraft)
        } else if ins == t.spec_refine.trim() {
            Some(Stage::SpecRefine)
        } else if ins == t.unit_tests.trim() {
            Some(Stage::UnitTests)
        } else if ins == t.patch.trim() {
            Some(if p.section(SPECIFICATION).is_some() {
                Stage::PatchMixed
            } else {
                Stage::PatchPlain
            })
        } else {
            None
        }
    }
}

impl CompletionProvider for ScriptedProvider {
    fn complete(&self, prompt: &Prompt) -> Result<String, LlmError> {
        let err = |message: String| LlmError::ProviderError { status: None, message };
        let stage = self.stage(prompt).ok_or_else(|| err("unrecognized instructions".into()))?;
        let target = prompt
            .section(TARGET)
            .and_then(|t| t.split_whitespace().next())
            .ok_or_else(|| err("prompt has no target".into()))?;
        let round = prompt
            .section(ATTEMPT)
            .or_else(|| prompt.section(ITERATION))
            .and_then(|r| r.trim().parse::<u32>().ok());
        let matching = |e: &&Entry| e.stage == stage && e.target == target;
        self.entries
            .iter()
            .filter(matching)
            .find(|e| e.round.is_some() && e.round == round)
            .or_else(|| self.entries.iter().filter(matching).find(|e| e.round.is_none()))
            .map(|e| e.response.clone())
            .ok_or_else(|| err(format!("no scripted response for {stage:?} {target} round {round:?}")))
    }
}
