//! Prompt assembly. Every model-facing stage builds a [`Prompt`] from
//! labelled sections so transcripts can be audited section by section.

use std::collections::BTreeSet;
use std::sync::Arc;

use crate::config::{LlmConfig, PromptTemplates};
use crate::index::{CodeIndex, MethodRecord};
use crate::jml::JmlSpecification;
use crate::llm::{LlmError, Prompt};
use crate::model::{BugCase, MethodRef, TestKind};

pub const INSTRUCTIONS: &str = "instructions";
pub const TARGET: &str = "target";
pub const BUG_REPORT: &str = "bug report";
pub const METHOD: &str = "method";
pub const BUGGY_METHOD: &str = "buggy method";
pub const METHOD_UNDER_TEST: &str = "method under test";
pub const FAILING_TESTS: &str = "failing tests";
pub const PASSING_TESTS: &str = "passing tests";
pub const FAILURE_OUTPUT: &str = "failure output";
pub const CALLEES: &str = "callees";
pub const CALLER: &str = "caller";
pub const SPECIFICATION: &str = "specification";
pub const PREVIOUS_SPECIFICATION: &str = "previous specification";
pub const DIAGNOSTICS: &str = "diagnostics";
pub const ITERATION: &str = "iteration";
pub const ATTEMPT: &str = "attempt";
pub const PREVIOUS_FAILURES: &str = "previous failures";
pub const REVIEWER_NOTES: &str = "reviewer notes";

/// Longest failure log excerpt quoted in a prompt.
const MAX_LOG_CHARS: usize = 4000;

/// Everything about a case that prompts quote. Held-out tests never enter.
#[derive(Debug, Clone)]
pub struct CaseContext {
    pub report_text: String,
    pub target: Arc<MethodRecord>,
    /// (test id, source) for provided failing tests found in the index.
    pub failing_tests: Vec<(String, String)>,
    pub passing_tests: Vec<(String, String)>,
    pub callees: Vec<Arc<MethodRecord>>,
    pub failure_output: String,
}

impl CaseContext {
    pub fn build(case: &BugCase, index: &CodeIndex, target: &MethodRef, failure_output: &str) -> Option<Self> {
        let target = index.methods.get(target)?.clone();
        let listed: BTreeSet<(&str, &str)> = case
            .failing_tests
            .iter()
            .map(|t| (t.qualified_class.as_str(), t.test_name.as_str()))
            .collect();
        let mut failing = Vec::new();
        let mut classes = BTreeSet::new();
        for t in case.failing_tests.iter().filter(|t| t.kind == TestKind::Provided) {
            classes.insert(t.qualified_class.as_str());
            for rec in index
                .methods
                .values()
                .filter(|r| r.method.qualified_class == t.qualified_class && r.method.method_name == t.test_name)
            {
                failing.push((t.id(), rec.source_text.clone()));
            }
        }
        let passing = index
            .methods
            .values()
            .filter(|r| classes.contains(r.method.qualified_class.as_str()))
            .filter(|r| !listed.contains(&(r.method.qualified_class.as_str(), r.method.method_name.as_str())))
            .filter(|r| r.source_text.contains("@Test"))
            .map(|r| (format!("{}#{}", r.method.qualified_class, r.method.method_name), r.source_text.clone()))
            .collect();
        let callees = index
            .callees_of(&target.method, 1)
            .map(|v| v.into_iter().cloned().collect())
            .unwrap_or_default();
        Some(CaseContext {
            report_text: case.report_text.clone(),
            target,
            failing_tests: failing,
            passing_tests: passing,
            callees,
            failure_output: clip(failure_output, MAX_LOG_CHARS),
        })
    }
}

pub fn clip(text: &str, max: usize) -> String {
    if text.len() <= max {
        return text.to_string();
    }
    let mut end = max;
    while !text.is_char_boundary(end) {
        end -= 1;
    }
    format!("{}\n[... {} more bytes]", &text[..end], text.len() - end)
}

fn join_sources(items: &[(String, String)]) -> String {
    if items.is_empty() {
        return "(none)".into();
    }
    items
        .iter()
        .map(|(id, src)| format!("// {id}\n{src}"))
        .collect::<Vec<_>>()
        .join("\n\n")
}

fn join_methods(items: &[Arc<MethodRecord>]) -> String {
    if items.is_empty() {
        return "(none)".into();
    }
    items
        .iter()
        .map(|r| format!("// {}\n{}", r.method.qualified_name(), r.source_text))
        .collect::<Vec<_>>()
        .join("\n\n")
}

pub fn target_line(m: &MethodRef) -> String {
    format!("{} in {} (lines {}-{})", m.qualified_name(), m.file_path, m.line_span.start, m.line_span.end)
}

/// Text a spec contributes to prompts: the annotation verbatim, or nothing
/// when it has no clauses.
pub fn spec_section(spec: &JmlSpecification) -> Option<String> {
    if spec.clauses.is_empty() {
        None
    } else {
        Some(spec.text.trim().to_string())
    }
}

pub struct PromptFactory<'a> {
    pub llm: &'a LlmConfig,
    pub templates: &'a PromptTemplates,
}

impl PromptFactory<'_> {
    fn base(&self) -> Prompt {
        let mut p = Prompt::new(self.llm.model_id.clone(), self.llm.max_tokens);
        p.temperature = self.llm.temperature;
        p
    }

    pub fn spec_draft(&self, ctx: &CaseContext) -> Result<Prompt, LlmError> {
        let mut p = self.base();
        p.push(INSTRUCTIONS, self.templates.spec_draft.trim())?;
        p.push(TARGET, target_line(&ctx.target.method))?;
        p.push(BUG_REPORT, ctx.report_text.trim())?;
        p.push(METHOD, ctx.target.source_text.clone())?;
        p.push(FAILING_TESTS, join_sources(&ctx.failing_tests))?;
        p.push(PASSING_TESTS, join_sources(&ctx.passing_tests))?;
        p.push(CALLEES, join_methods(&ctx.callees))?;
        Ok(p)
    }

    pub fn callee_spec_draft(&self, callee: &MethodRecord, caller: &MethodRecord) -> Result<Prompt, LlmError> {
        let mut p = self.base();
        p.push(INSTRUCTIONS, self.templates.spec_draft.trim())?;
        p.push(TARGET, target_line(&callee.method))?;
        p.push(METHOD, callee.source_text.clone())?;
        p.push(CALLER, caller.source_text.clone())?;
        Ok(p)
    }

    pub fn spec_refine(
        &self,
        method: &MethodRecord,
        previous: &JmlSpecification,
        diagnostics: &[String],
    ) -> Result<Prompt, LlmError> {
        let mut p = self.base();
        p.push(INSTRUCTIONS, self.templates.spec_refine.trim())?;
        p.push(TARGET, target_line(&method.method))?;
        p.push(METHOD, method.source_text.clone())?;
        p.push(PREVIOUS_SPECIFICATION, previous.text.clone())?;
        p.push(DIAGNOSTICS, diagnostics.join("\n"))?;
        p.push(ITERATION, (previous.iteration + 1).to_string())?;
        Ok(p)
    }

    /// Plain when `spec` is None; otherwise exactly one extra section.
    pub fn patch(
        &self,
        ctx: &CaseContext,
        spec: Option<&str>,
        attempt: u32,
        previous_failures: &[String],
        reviewer_notes: &[String],
    ) -> Result<Prompt, LlmError> {
        let mut p = self.base();
        p.push(INSTRUCTIONS, self.templates.patch.trim())?;
        p.push(TARGET, target_line(&ctx.target.method))?;
        p.push(BUG_REPORT, ctx.report_text.trim())?;
        p.push(BUGGY_METHOD, ctx.target.source_text.clone())?;
        p.push(FAILING_TESTS, join_sources(&ctx.failing_tests))?;
        if !ctx.failure_output.trim().is_empty() {
            p.push(FAILURE_OUTPUT, ctx.failure_output.clone())?;
        }
        if let Some(spec) = spec {
            p.push(SPECIFICATION, spec)?;
        }
        p.push(ATTEMPT, attempt.to_string())?;
        if !previous_failures.is_empty() {
            p.push(PREVIOUS_FAILURES, previous_failures.join("\n"))?;
        }
        if !reviewer_notes.is_empty() {
            p.push(REVIEWER_NOTES, reviewer_notes.join("\n"))?;
        }
        Ok(p)
    }

    pub fn unit_tests(&self, method: &MethodRecord, spec: Option<&str>) -> Result<Prompt, LlmError> {
        let mut p = self.base();
        p.push(INSTRUCTIONS, self.templates.unit_tests.trim())?;
        p.push(TARGET, target_line(&method.method))?;
        p.push(METHOD_UNDER_TEST, method.source_text.clone())?;
        if let Some(spec) = spec {
            p.push(SPECIFICATION, spec)?;
        }
        Ok(p)
    }
}

/// Bodies of the ``` fenced blocks in a model response, in order. An
/// unterminated final fence runs to the end of the text.
pub fn fenced_blocks(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut current: Option<Vec<&str>> = None;
    for line in text.lines() {
        if line.trim_start().starts_with("```") {
            match current.take() {
                Some(body) => out.push(body.join("\n")),
                None => current = Some(Vec::new()),
            }
        } else if let Some(body) = current.as_mut() {
            body.push(line);
        }
    }
    if let Some(body) = current {
        if !body.is_empty() {
            out.push(body.join("\n"));
        }
    }
    out.retain(|b| !b.trim().is_empty());
    out
}

/// Labels present in `a` or `b` whose text differs.
pub fn differing_sections(a: &Prompt, b: &Prompt) -> Vec<String> {
    let mut labels: BTreeSet<&str> = a.labels().into_iter().collect();
    labels.extend(b.labels());
    labels
        .into_iter()
        .filter(|l| a.section(l) != b.section(l))
        .map(str::to_string)
        .collect()
}
