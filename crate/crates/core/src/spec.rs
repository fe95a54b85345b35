//! Specification synthesis: drafting JML for the buggy method and its
//! callees, running the external verifier, classifying its output, and the
//! verify/refine loop.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::{Arc, LazyLock};
use std::time::{Duration, Instant};

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::index::{CodeIndex, MethodRecord};
use crate::jml::{extract_annotation, lint_semantics, JmlSpecification, Severity, SpecDiagnostic, SpecStatus};
use crate::llm::{Gateway, LlmError};
use crate::model::{MethodRef, Snapshot};
use crate::proc::{self, ProcError};
use crate::prompt::{fenced_blocks, spec_section, CaseContext, PromptFactory};

#[derive(Debug, thiserror::Error)]
pub enum SpecError {
    #[error("method {0} is not in the index")]
    UnresolvedMethod(String),
    #[error(transparent)]
    Gateway(#[from] LlmError),
    #[error(transparent)]
    Proc(#[from] ProcError),
    #[error("cannot prepare verifier input in {path}: {source}")]
    Workdir {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("specification for {0} has syntax errors")]
    UnusableSpec(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum VerificationStatus {
    Verified,
    SpecDefect,
    BugSignal,
    ToolFailure,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerificationOutcome {
    pub status: VerificationStatus,
    pub diagnostics: Vec<String>,
    pub raw_output: String,
    pub exit_code: i32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RefinementBudget {
    pub max_iterations: u32,
    pub wall_clock_limit_secs: u64,
}

impl RefinementBudget {
    pub fn new(max_iterations: u32, wall_clock_limit_secs: u64) -> Result<Self, String> {
        if max_iterations == 0 || wall_clock_limit_secs == 0 {
            return Err("refinement budget must be positive".into());
        }
        Ok(RefinementBudget {
            max_iterations,
            wall_clock_limit_secs,
        })
    }
}

static ERROR_LINE: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"(?i)(?::\d+:\s*error\b|^\s*error\s*:|\berror:\s)").unwrap());
static SYNTAX_DEFECT: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(
        r"(?i)expected|illegal (?:start|token|character)|unclosed|unterminated|not a valid jml|misspell|unknown jml|unrecognized|not implemented for|parse error|syntax error|unexpected|premature end|missing (?:a |the )?semicolon",
    )
    .unwrap()
});
static SEMANTIC_DEFECT: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(
        r"(?i)cannot find symbol|incompatible types|bad operand|not a boolean|cannot be applied|cannot be dereferenced|cannot be resolved|type mismatch|cannot be referenced from a static context|void method|\\result\b.*\bvoid|no such (?:field|method|variable)",
    )
    .unwrap()
});
static PROVER: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(
        r"(?i)prover cannot establish|\((?:Postcondition|ExceptionalPostcondition|Assert|PossiblyNullDeReference|PossiblyNullField|PossiblyNullValue|PossiblyTooLargeIndex|PossiblyNegativeIndex|ArithmeticOperationRange|PossiblyDivideByZero|Precondition|PossiblyBadCast|Assignable)\b",
    )
    .unwrap()
});

/// Maps raw verifier output, its exit code and local lint findings to an
/// outcome. Spec defects win over prover failures, which win over success.
pub fn classify_verifier_output(raw: &str, exit_code: i32, lint: &[SpecDiagnostic]) -> VerificationOutcome {
    let mut diagnostics: Vec<String> = lint.iter().map(|d| d.to_string()).collect();
    let mut spec_defect = !lint.is_empty();
    let mut prover = Vec::new();
    let mut errors = 0usize;
    for line in raw.lines() {
        let line = line.trim_end();
        if ERROR_LINE.is_match(line) {
            errors += 1;
            if SYNTAX_DEFECT.is_match(line) || SEMANTIC_DEFECT.is_match(line) {
                spec_defect = true;
                diagnostics.push(line.trim().to_string());
            }
        } else if PROVER.is_match(line) {
            prover.push(line.trim().to_string());
        }
    }
    let status = if spec_defect {
        VerificationStatus::SpecDefect
    } else if !prover.is_empty() {
        diagnostics.extend(prover);
        VerificationStatus::BugSignal
    } else if exit_code == 0 && errors == 0 {
        VerificationStatus::Verified
    } else {
        let tail: Vec<&str> = raw.lines().rev().filter(|l| !l.trim().is_empty()).take(5).collect();
        if tail.is_empty() {
            diagnostics.push(format!("verifier exited with code {exit_code} and no output"));
        } else {
            diagnostics.extend(tail.into_iter().rev().map(|l| l.trim().to_string()));
        }
        VerificationStatus::ToolFailure
    };
    VerificationOutcome {
        status,
        diagnostics,
        raw_output: raw.to_string(),
        exit_code,
    }
}

/// True when a spec defect stems from parsing rather than typing.
fn defect_is_syntactic(spec: &JmlSpecification, outcome: &VerificationOutcome) -> bool {
    spec.diagnostics.iter().any(|d| d.severity == Severity::Syntax)
        || outcome
            .diagnostics
            .iter()
            .any(|d| SYNTAX_DEFECT.is_match(d) && !SEMANTIC_DEFECT.is_match(d))
}

pub trait Verifier: Send + Sync {
    /// Verifies `file` (project-relative) inside a materialized `workdir`.
    /// Returns combined output and exit code; -1 when killed.
    fn verify(&self, workdir: &Path, file: &str) -> Result<(String, i32), SpecError>;
}

/// Runs an external tool from a command template.
#[derive(Debug, Clone)]
pub struct CommandVerifier {
    pub command: String,
    pub classpath: String,
    pub timeout: Duration,
    pub vars: Vec<(String, String)>,
}

impl Verifier for CommandVerifier {
    fn verify(&self, workdir: &Path, file: &str) -> Result<(String, i32), SpecError> {
        let abs = workdir.join(file).to_string_lossy().into_owned();
        let wd = workdir.to_string_lossy().into_owned();
        let mut vars: Vec<(&str, &str)> = self.vars.iter().map(|(k, v)| (k.as_str(), v.as_str())).collect();
        vars.extend([("file", abs.as_str()), ("sourcepath", wd.as_str()), ("classpath", self.classpath.as_str())]);
        let argv = proc::render_template(&self.command, &vars)?;
        let out = proc::run(&argv, workdir, self.timeout)?;
        let mut raw = out.combined();
        if out.timed_out {
            raw.push_str(&format!("verifier timed out after {}s\n", self.timeout.as_secs()));
        }
        Ok((raw, out.exit_code.unwrap_or(-1)))
    }
}

/// Comment text inlined above a method for verification.
pub fn annotation_text(spec: &JmlSpecification) -> String {
    let t = spec.text.trim();
    if t.starts_with("/*") || t.starts_with("//") {
        t.to_string()
    } else {
        format!("/*@\n{t}\n@*/")
    }
}

/// Copies `pristine` with each spec's annotation inserted above its method,
/// indented like the method's first line.
pub fn annotate_snapshot(pristine: &Snapshot, specs: &[&JmlSpecification]) -> Snapshot {
    let mut by_file: BTreeMap<&str, Vec<&JmlSpecification>> = BTreeMap::new();
    for s in specs {
        by_file.entry(s.target.file_path.as_str()).or_default().push(s);
    }
    let mut out = pristine.clone();
    for (file, mut list) in by_file {
        let Some(text) = pristine.text(file) else { continue };
        let mut lines: Vec<String> = text.split('\n').map(str::to_string).collect();
        list.sort_by_key(|s| std::cmp::Reverse(s.target.line_span.start));
        for s in list {
            let at = (s.target.line_span.start as usize).saturating_sub(1).min(lines.len());
            let indent: String = lines
                .get(at)
                .map(|l| l.chars().take_while(|c| c.is_whitespace()).collect())
                .unwrap_or_default();
            let block: Vec<String> = annotation_text(s).lines().map(|l| format!("{indent}{}", l.trim_start())).collect();
            lines.splice(at..at, block);
        }
        out.insert(file, lines.join("\n"));
    }
    out
}

/// Builds a spec from a model response and lints it against the method.
pub fn spec_from_response(method: &MethodRecord, response: &str, iteration: u32) -> JmlSpecification {
    let text = extract_annotation(response).unwrap_or_else(|| response.trim().to_string());
    let mut spec = JmlSpecification::from_text(method.method.clone(), &text, iteration);
    if spec.status == SpecStatus::Draft {
        let lint = lint_semantics(&spec.clauses, method);
        if !lint.is_empty() {
            spec.status = SpecStatus::SemanticError;
            spec.diagnostics.extend(lint);
        }
    }
    spec
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DraftSet {
    pub target: JmlSpecification,
    pub callees: Vec<JmlSpecification>,
}

/// Depth-1 callees ordered leaves first; cycles are broken by name order.
pub fn callee_order(index: &CodeIndex, callees: &[Arc<MethodRecord>]) -> Vec<Arc<MethodRecord>> {
    let set: BTreeSet<&MethodRef> = callees.iter().map(|r| &r.method).collect();
    let mut deps: BTreeMap<&MethodRef, BTreeSet<&MethodRef>> = BTreeMap::new();
    for r in callees {
        let out = index
            .call_edges
            .get(&r.method)
            .map(|s| s.iter().filter(|m| set.contains(m) && **m != r.method).collect())
            .unwrap_or_default();
        deps.insert(&r.method, out);
    }
    let by_key = |a: &&MethodRef, b: &&MethodRef| a.name_order_key().cmp(&b.name_order_key());
    let mut done: Vec<&MethodRef> = Vec::new();
    let mut remaining: Vec<&MethodRef> = set.iter().copied().collect();
    remaining.sort_by(by_key);
    while !remaining.is_empty() {
        let pick = remaining
            .iter()
            .position(|m| deps[m].iter().all(|d| done.contains(d)))
            .unwrap_or(0);
        done.push(remaining.remove(pick));
    }
    done.into_iter()
        .map(|m| callees.iter().find(|r| &r.method == m).expect("member of set").clone())
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Settlement {
    Verified,
    BugSignal,
    BudgetExhausted,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpecIteration {
    pub spec: JmlSpecification,
    pub outcome: VerificationOutcome,
}

/// Progress of the verify/refine loop for one target.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Refinement {
    pub current: JmlSpecification,
    pub history: Vec<SpecIteration>,
    pub settled: Option<Settlement>,
}

impl Refinement {
    pub fn start(draft: JmlSpecification) -> Self {
        Refinement {
            current: draft,
            history: Vec::new(),
            settled: None,
        }
    }

    pub fn iterations(&self) -> usize {
        self.history.len()
    }
}

pub struct SpecSynth<'a> {
    pub gateway: &'a Gateway,
    pub prompts: PromptFactory<'a>,
    pub verifier: &'a dyn Verifier,
    pub index: &'a CodeIndex,
    pub pristine: &'a Snapshot,
    /// Scratch directory for annotated copies of the project.
    pub workdir: PathBuf,
}

impl SpecSynth<'_> {
    fn record(&self, m: &MethodRef) -> Result<&Arc<MethodRecord>, SpecError> {
        self.index
            .methods
            .get(m)
            .ok_or_else(|| SpecError::UnresolvedMethod(m.qualified_name()))
    }

    /// One spec per depth-1 callee (leaves first), then the target.
    pub fn draft_specs(&self, ctx: &CaseContext) -> Result<DraftSet, SpecError> {
        let mut callees = Vec::new();
        for callee in callee_order(self.index, &ctx.callees) {
            let prompt = self.prompts.callee_spec_draft(&callee, &ctx.target)?;
            let c = self.gateway.complete(&prompt)?;
            callees.push(spec_from_response(&callee, &c.response, 1));
        }
        let prompt = self.prompts.spec_draft(ctx)?;
        let c = self.gateway.complete(&prompt)?;
        Ok(DraftSet {
            target: spec_from_response(&ctx.target, &c.response, 1),
            callees,
        })
    }

    /// Inlines the target spec plus every parseable callee spec and runs
    /// the verifier on the target's file.
    pub fn verify(&self, spec: &JmlSpecification, callees: &[JmlSpecification]) -> Result<VerificationOutcome, SpecError> {
        let mut specs: Vec<&JmlSpecification> = callees
            .iter()
            .filter(|c| c.status != SpecStatus::SyntaxError && c.target != spec.target)
            .collect();
        specs.push(spec);
        let annotated = annotate_snapshot(self.pristine, &specs);
        let werr = |source| SpecError::Workdir {
            path: self.workdir.clone(),
            source,
        };
        if self.workdir.exists() {
            fs::remove_dir_all(&self.workdir).map_err(werr)?;
        }
        fs::create_dir_all(&self.workdir).map_err(werr)?;
        annotated.materialize(&self.workdir).map_err(werr)?;
        let (raw, code) = self.verifier.verify(&self.workdir, &spec.target.file_path)?;
        Ok(classify_verifier_output(&raw, code, &spec.diagnostics))
    }

    /// One verifier run, then either settle or ask for a refined spec.
    pub fn refine_iteration(
        &self,
        state: &mut Refinement,
        callees: &[JmlSpecification],
        budget: RefinementBudget,
        started: Instant,
    ) -> Result<(), SpecError> {
        if state.settled.is_some() {
            return Ok(());
        }
        let method = self.record(&state.current.target)?.clone();
        let outcome = self.verify(&state.current, callees)?;
        let mut spec = state.current.clone();
        spec.status = match outcome.status {
            VerificationStatus::Verified => SpecStatus::Verified,
            VerificationStatus::BugSignal => SpecStatus::BugSignal,
            VerificationStatus::SpecDefect if defect_is_syntactic(&spec, &outcome) => SpecStatus::SyntaxError,
            VerificationStatus::SpecDefect => SpecStatus::SemanticError,
            VerificationStatus::ToolFailure => spec.status,
        };
        state.current = spec.clone();
        state.history.push(SpecIteration {
            spec,
            outcome: outcome.clone(),
        });
        state.settled = match outcome.status {
            VerificationStatus::Verified => Some(Settlement::Verified),
            VerificationStatus::BugSignal => Some(Settlement::BugSignal),
            _ if state.history.len() >= budget.max_iterations as usize => Some(Settlement::BudgetExhausted),
            _ if started.elapsed() >= Duration::from_secs(budget.wall_clock_limit_secs) => {
                Some(Settlement::BudgetExhausted)
            }
            _ => None,
        };
        if state.settled.is_none() {
            let prompt = self.prompts.spec_refine(&method, &state.current, &outcome.diagnostics)?;
            let c = self.gateway.complete(&prompt)?;
            state.current = spec_from_response(&method, &c.response, state.current.iteration + 1);
        }
        Ok(())
    }

    pub fn refine_loop(
        &self,
        draft: JmlSpecification,
        callees: &[JmlSpecification],
        budget: RefinementBudget,
    ) -> Result<Refinement, SpecError> {
        let started = Instant::now();
        let mut state = Refinement::start(draft);
        while state.settled.is_none() {
            self.refine_iteration(&mut state, callees, budget, started)?;
        }
        Ok(state)
    }

    /// Spec-augmented unit tests: fenced blocks naming the method.
    pub fn generate_unit_tests(&self, method: &MethodRecord, spec: &JmlSpecification) -> Result<Vec<String>, SpecError> {
        if spec.status == SpecStatus::SyntaxError {
            return Err(SpecError::UnusableSpec(method.method.qualified_name()));
        }
        let prompt = self.prompts.unit_tests(method, spec_section(spec).as_deref())?;
        let c = self.gateway.complete(&prompt)?;
        Ok(fenced_blocks(&c.response)
            .into_iter()
            .filter(|b| b.contains(&method.method.method_name))
            .collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
        use crate::model::LineSpan;

    #[test]
    fn classification_order() {
        let ok = classify_verifier_output("", 0, &[]);
        assert_eq!(ok.status, VerificationStatus::Verified);
        assert!(ok.diagnostics.is_empty());

        let parse = classify_verifier_output("A.java:4: error: ';' expected\n", 1, &[]);
        assert_eq!(parse.status, VerificationStatus::SpecDefect);

        let prove = "A.java:9: verify: The prover cannot establish an assertion (Postcondition: A.java:4:) in method f\n";
        let bug = classify_verifier_output(prove, 0, &[]);
        assert_eq!(bug.status, VerificationStatus::BugSignal);
        assert_eq!(bug.diagnostics.len(), 1);

        // a parse error masks prover complaints
        let both = format!("A.java:4: error: illegal start of expression\n{prove}");
        assert_eq!(classify_verifier_output(&both, 1, &[]).status, VerificationStatus::SpecDefect);

        let crash = classify_verifier_output("Exception in thread \"main\" java.lang.OutOfMemoryError\n", 1, &[]);
        assert_eq!(crash.status, VerificationStatus::ToolFailure);
        assert_eq!(classify_verifier_output("", 3, &[]).status, VerificationStatus::ToolFailure);
        assert_eq!(classify_verifier_output("", 3, &[]).diagnostics, vec!["verifier exited with code 3 and no output"]);
    }

    fn mref(line: u32) -> MethodRef {
        MethodRef::new("A.java", "A", "f", "()", LineSpan::new(line, line + 2).unwrap()).unwrap()
    }

    #[test]
    fn annotation_is_inserted_with_indent() {
        let snap = Snapshot::from_files([("A.java", "class A {\n    int f() {\n        return 1;\n    }\n}\n")]);
        let spec = JmlSpecification::from_text(mref(2), "/*@ ensures \\result == 1; @*/", 1);
        let out = annotate_snapshot(&snap, &[&spec]);
        assert_eq!(
            out.text("A.java").unwrap(),
            "class A {\n    /*@ ensures \\result == 1; @*/\n    int f() {\n        return 1;\n    }\n}\n"
        );
        let bare = JmlSpecification::from_text(mref(2), "@ensures true;", 1);
        assert_eq!(annotation_text(&bare), "/*@\n@ensures true;\n@*/");
    }

    #[test]
    fn budget_must_be_positive() {
        assert!(RefinementBudget::new(0, 10).is_err());
        assert!(RefinementBudget::new(5, 0).is_err());
        assert!(RefinementBudget::new(5, 300).is_ok());
    }
}
