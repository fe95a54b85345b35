//! Candidate patch generation: plain-mode prompts first, then prompts with
//! the JML specification added, validating every candidate as it arrives.

use std::collections::BTreeSet;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use tree_sitter::Node;

use crate::diff::{apply_patch, render_unified_diff, replace_lines_patch};
use crate::index::{java_parser, MethodRecord};
use crate::jml::{JmlSpecification, SpecStatus};
use crate::llm::{Gateway, LlmError};
use crate::model::{BugCase, CandidatePatch, PatchMode, Snapshot};
use crate::prompt::{fenced_blocks, spec_section, CaseContext, PromptFactory};
use crate::validate::{judge, Judgement, PatchVerdict, TestRunner, ValidateError};
use crate::llm::Prompt;

#[derive(Debug, thiserror::Error)]
pub enum PatchError {
    #[error("mixed mode needs a specification without syntax errors")]
    MissingSpec,
    #[error("response contains no usable code block")]
    NoCandidateFound,
    #[error(transparent)]
    Gateway(#[from] LlmError),
    #[error(transparent)]
    Validate(#[from] ValidateError),
    #[error("all {} attempts failed", .0.len())]
    Exhausted(Vec<AttemptRecord>),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PatchAttemptPlan {
    pub plain_attempts: u32,
    pub mixed_attempts: u32,
    pub dedup: bool,
}

impl PatchAttemptPlan {
    pub fn validate(&self) -> Result<(), String> {
        if self.plain_attempts == 0 || self.mixed_attempts == 0 {
            return Err("plain_attempts and mixed_attempts must be positive".into());
        }
        Ok(())
    }

    pub fn budget(&self, mode: PatchMode) -> u32 {
        match mode {
            PatchMode::Plain => self.plain_attempts,
            PatchMode::Mixed => self.mixed_attempts,
        }
    }
}

/// One line of the attempt log: a validated candidate, or a prompt round
/// that produced nothing new.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttemptRecord {
    pub mode: PatchMode,
    /// Prompt round within the mode, from 1.
    pub round: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub attempt_index: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub patch_id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub verdict: Option<PatchVerdict>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

/// Prepares `Mixed` spec text; `None` for Plain.
pub fn spec_for_mode(mode: PatchMode, spec: Option<&JmlSpecification>) -> Result<Option<String>, PatchError> {
    match mode {
        PatchMode::Plain => Ok(None),
        PatchMode::Mixed => {
            let spec = spec.ok_or(PatchError::MissingSpec)?;
            if spec.status == SpecStatus::SyntaxError {
                return Err(PatchError::MissingSpec);
            }
            Ok(Some(spec_section(spec).ok_or(PatchError::MissingSpec)?))
        }
    }
}

pub fn assemble_patch_prompt(
    prompts: &PromptFactory,
    ctx: &CaseContext,
    spec: Option<&JmlSpecification>,
    mode: PatchMode,
    attempt: u32,
    previous_failures: &[String],
    reviewer_notes: &[String],
) -> Result<Prompt, PatchError> {
    let spec = spec_for_mode(mode, spec)?;
    Ok(prompts.patch(ctx, spec.as_deref(), attempt, previous_failures, reviewer_notes)?)
}

fn find_method<'t>(node: Node<'t>, src: &[u8], name: &str) -> Option<Node<'t>> {
    if matches!(node.kind(), "method_declaration" | "constructor_declaration")
        && node.child_by_field_name("name").and_then(|n| n.utf8_text(src).ok()) == Some(name)
    {
        return Some(node);
    }
    let mut cur = node.walk();
    let children: Vec<Node<'t>> = node.named_children(&mut cur).collect();
    children.into_iter().find_map(|c| find_method(c, src, name))
}

/// Text of the declaration of `name` found in `block`.
fn whole_method(block: &str, name: &str) -> Option<String> {
    let mut parser = java_parser();
    for (prefix, suffix) in [("", ""), ("class __W {\n", "\n}\n")] {
        let src = format!("{prefix}{block}{suffix}");
        let Some(tree) = parser.parse(&src, None) else { continue };
        if let Some(m) = find_method(tree.root_node(), src.as_bytes(), name) {
            if m.has_error() {
                continue;
            }
            return Some(m.utf8_text(src.as_bytes()).ok()?.to_string());
        }
    }
    None
}

fn statements_parse(block: &str) -> bool {
    let src = format!("class __W {{ void __m() {{\n{block}\n}} }}\n");
    let mut parser = java_parser();
    parser.parse(&src, None).is_some_and(|t| !t.root_node().has_error())
}

/// Byte offset of the opening brace of the method body in `source`.
fn body_brace(source: &str, name: &str) -> Option<usize> {
    let prefix = "class __W {\n";
    let src = format!("{prefix}{source}\n}}\n");
    let mut parser = java_parser();
    let tree = parser.parse(&src, None)?;
    let m = find_method(tree.root_node(), src.as_bytes(), name)?;
    let body = m.child_by_field_name("body")?;
    body.start_byte().checked_sub(prefix.len())
}

fn leading_ws(line: &str) -> usize {
    line.len() - line.trim_start().len()
}

/// Moves `lines` from column `base` to `indent`. Lines indented less than
/// `base` lose all their leading whitespace.
fn reindent(lines: &[&str], base: usize, indent: &str) -> Vec<String> {
    lines
        .iter()
        .map(|l| {
            if l.trim().is_empty() {
                String::new()
            } else {
                let cut = base.min(leading_ws(l));
                format!("{indent}{}", &l[cut..])
            }
        })
        .collect()
}

fn min_indent<'a>(lines: impl Iterator<Item = &'a str>) -> usize {
    lines.filter(|l| !l.trim().is_empty()).map(leading_ws).min().unwrap_or(0)
}

/// Lines replacing the target's span for one code block, or None when the
/// block is neither a method nor a statement list.
pub fn replacement_lines(block: &str, target: &MethodRecord, pristine: &Snapshot) -> Option<Vec<String>> {
    let file = pristine.text(&target.method.file_path)?;
    let lines: Vec<&str> = file.lines().collect();
    let span = target.method.line_span;
    let first = *lines.get(span.start as usize - 1)?;
    let last = *lines.get(span.end as usize - 1)?;
    let indent = &first[..leading_ws(first)];
    let suffix = last.rfind('}').map(|i| last[i + 1..].to_string()).unwrap_or_default();
    let name = &target.method.method_name;

    let mut out = if let Some(text) = whole_method(block, name) {
        // The first line starts at the declaration; the closing brace line
        // tells where the method sits in the model's text.
        let body: Vec<&str> = text.lines().collect();
        let base = match body.last() {
            Some(l) if body.len() > 1 && l.trim_start().starts_with('}') => leading_ws(l),
            _ => min_indent(body.iter().skip(1).copied()),
        };
        let mut out = vec![format!("{indent}{}", body[0].trim_start())];
        out.extend(reindent(&body[1..], base, indent));
        out
    } else {
        if !statements_parse(block) {
            return None;
        }
        let brace = body_brace(&target.source_text, name)?;
        let header = &target.source_text[..=brace];
        let mut out: Vec<String> = header.lines().map(str::to_string).collect();
        out[0] = format!("{indent}{}", out[0]);
        let inner = format!("{indent}    ");
        let stmts: Vec<&str> = block.lines().collect();
        out.extend(reindent(&stmts, min_indent(stmts.iter().copied()), &inner));
        out.push(format!("{indent}}}"));
        out
    };
    while out.last().is_some_and(|l| l.is_empty()) {
        out.pop();
    }
    if let Some(l) = out.last_mut() {
        l.push_str(&suffix);
    }
    Some(out)
}

/// Unified diffs for each code block of `response`, in order, each checked
/// to apply to `pristine`. Identical diffs are dropped when `dedup` is set.
pub fn extract_diffs(
    response: &str,
    target: &MethodRecord,
    pristine: &Snapshot,
    context: usize,
    dedup: bool,
) -> Result<Vec<String>, PatchError> {
    let blocks = fenced_blocks(response);
    let file = pristine
        .text(&target.method.file_path)
        .ok_or(PatchError::NoCandidateFound)?;
    let mut out: Vec<String> = Vec::new();
    for block in &blocks {
        let Some(lines) = replacement_lines(block, target, pristine) else { continue };
        let patch = replace_lines_patch(&target.method.file_path, file, target.method.line_span, &lines, context);
        if patch.is_empty() || apply_patch(pristine, &patch).is_err() {
            continue;
        }
        let diff = render_unified_diff(&patch);
        if dedup && out.contains(&diff) {
            continue;
        }
        out.push(diff);
    }
    if out.is_empty() {
        return Err(PatchError::NoCandidateFound);
    }
    Ok(out)
}

/// Candidates numbered from `first_index`.
pub fn extract_candidates(
    response: &str,
    target: &MethodRecord,
    pristine: &Snapshot,
    mode: PatchMode,
    first_index: u32,
    dedup: bool,
) -> Result<Vec<CandidatePatch>, PatchError> {
    Ok(extract_diffs(response, target, pristine, 3, dedup)?
        .into_iter()
        .enumerate()
        .map(|(i, d)| CandidatePatch::new(d, mode, first_index + i as u32, target.method.clone()))
        .collect())
}

pub trait Validator {
    fn judge(&mut self, patch: &CandidatePatch) -> Result<Judgement, ValidateError>;
}

/// Runs the case's tests in `<workroot>/<case>/<patch>`.
pub struct TestValidator<'a> {
    pub case: &'a BugCase,
    pub pristine: &'a Snapshot,
    pub runner: &'a TestRunner,
    pub workroot: PathBuf,
}

impl Validator for TestValidator<'_> {
    fn judge(&mut self, patch: &CandidatePatch) -> Result<Judgement, ValidateError> {
        let dir = self.workroot.join(self.case.case_id.as_str()).join(&patch.patch_id);
        judge(patch, self.case, self.pristine, self.runner, &dir)
    }
}

/// Attempt bookkeeping that survives across orchestrator steps.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PatchState {
    pub log: Vec<AttemptRecord>,
    pub plain_rounds: u32,
    pub mixed_rounds: u32,
    pub plain_candidates: u32,
    pub mixed_candidates: u32,
    pub seen_diffs: BTreeSet<String>,
    pub reviewer_notes: Vec<String>,
}

impl PatchState {
    pub fn rounds(&self, mode: PatchMode) -> u32 {
        match mode {
            PatchMode::Plain => self.plain_rounds,
            PatchMode::Mixed => self.mixed_rounds,
        }
    }

    pub fn remaining(&self, plan: &PatchAttemptPlan, mode: PatchMode) -> u32 {
        plan.budget(mode).saturating_sub(self.rounds(mode))
    }

    /// One line per judged candidate, oldest first.
    pub fn failure_summary(&self) -> Vec<String> {
        self.log
            .iter()
            .filter_map(|r| {
                let v = r.verdict.as_ref()?;
                Some(format!("{} candidate {}: {}", r.mode, r.attempt_index.unwrap_or(0), describe_failure(v)))
            })
            .collect()
    }
}

fn describe_failure(v: &PatchVerdict) -> String {
    use crate::validate::ProvidedResult;
    match &v.provided_result {
        ProvidedResult::Failures(ts) => {
            let ids: Vec<String> = ts.iter().map(|t| t.id()).collect();
            format!("tests still failing: {}", ids.join(", "))
        }
        ProvidedResult::BuildFailed => "did not compile".into(),
        ProvidedResult::Timeout => "tests timed out".into(),
        ProvidedResult::AllPass => "rejected by reviewer".into(),
    }
}

pub struct PatchSynth<'a> {
    pub gateway: &'a Gateway,
    pub prompts: PromptFactory<'a>,
    pub pristine: &'a Snapshot,
    pub context_lines: usize,
    pub plan: PatchAttemptPlan,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Plausible {
    pub patch: CandidatePatch,
    pub judgement: Judgement,
}

impl PatchSynth<'_> {
    /// Issues the remaining prompt rounds of `mode`, validating each
    /// candidate before the next round. Stops at the first plausible one.
    pub fn run_mode(
        &self,
        ctx: &CaseContext,
        spec: Option<&JmlSpecification>,
        mode: PatchMode,
        state: &mut PatchState,
        validator: &mut dyn Validator,
    ) -> Result<Option<Plausible>, PatchError> {
        let spec_text = spec_for_mode(mode, spec)?;
        while state.remaining(&self.plan, mode) > 0 {
            let round = state.rounds(mode) + 1;
            let prompt = self.prompts.patch(
                ctx,
                spec_text.as_deref(),
                round,
                &state.failure_summary(),
                &state.reviewer_notes,
            )?;
            let completion = self.gateway.complete(&prompt)?;
            match mode {
                PatchMode::Plain => state.plain_rounds += 1,
                PatchMode::Mixed => state.mixed_rounds += 1,
            }
            let diffs = match extract_diffs(&completion.response, &ctx.target, self.pristine, self.context_lines, self.plan.dedup)
            {
                Ok(d) => d,
                Err(PatchError::NoCandidateFound) => {
                    state.log.push(AttemptRecord {
                        mode,
                        round,
                        attempt_index: None,
                        patch_id: None,
                        verdict: None,
                        note: Some("no candidate found".into()),
                    });
                    continue;
                }
                Err(e) => return Err(e),
            };
            let mut fresh = 0;
            for diff in diffs {
                if self.plan.dedup && !state.seen_diffs.insert(diff.clone()) {
                    continue;
                }
                fresh += 1;
                let counter = match mode {
                    PatchMode::Plain => &mut state.plain_candidates,
                    PatchMode::Mixed => &mut state.mixed_candidates,
                };
                *counter += 1;
                let patch = CandidatePatch::new(diff, mode, *counter, ctx.target.method.clone());
                let judgement = validator.judge(&patch)?;
                let plausible = judgement.verdict.plausible;
                state.log.push(AttemptRecord {
                    mode,
                    round,
                    attempt_index: Some(patch.attempt_index),
                    patch_id: Some(patch.patch_id.clone()),
                    verdict: Some(judgement.verdict.clone()),
                    note: None,
                });
                if plausible {
                    return Ok(Some(Plausible { patch, judgement }));
                }
            }
            if fresh == 0 {
                state.log.push(AttemptRecord {
                    mode,
                    round,
                    attempt_index: None,
                    patch_id: None,
                    verdict: None,
                    note: Some("only previously tried candidates".into()),
                });
            }
        }
        Ok(None)
    }

    /// Plain rounds, then mixed rounds; the first plausible candidate wins.
    pub fn run_attempt_plan(
        &self,
        ctx: &CaseContext,
        spec: Option<&JmlSpecification>,
        validator: &mut dyn Validator,
    ) -> Result<(Plausible, Vec<AttemptRecord>), PatchError> {
        self.plan.validate().map_err(|_| PatchError::Exhausted(Vec::new()))?;
        let mut state = PatchState::default();
        if let Some(p) = self.run_mode(ctx, spec, PatchMode::Plain, &mut state, validator)? {
            return Ok((p, state.log));
        }
        match self.run_mode(ctx, spec, PatchMode::Mixed, &mut state, validator) {
            Ok(Some(p)) => Ok((p, state.log)),
            Ok(None) | Err(PatchError::MissingSpec) => Err(PatchError::Exhausted(state.log)),
            Err(e) => Err(e),
        }
    }
}
