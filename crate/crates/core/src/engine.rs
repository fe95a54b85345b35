//! The repair orchestrator: moves sessions one stage at a time along the
//! declared edges, persisting every transition before acting on it.

use std::collections::{BTreeMap, HashMap};
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::clock::Clock;
use crate::config::{Config, PromptTemplates};
use crate::diff::{apply_patch, parse_unified_diff};
use crate::index::{build_index, CodeIndex};
use crate::llm::Gateway;
use crate::model::{BugCase, CandidatePatch, MethodRef, PatchMode, Snapshot};
use crate::patch::{PatchAttemptPlan, PatchError, PatchSynth, TestValidator, Validator};
use crate::prompt::{CaseContext, PromptFactory};
use crate::session::{
    to_json_bytes, verify_event_log, write_atomic, ContextSummary, CurrentPatch, Event, EventKind, Outcome,
    ReviewAction, ReviewDecision, ReviewSubject, RunStore, Session, SessionData, SessionState, StoreError,
    SCHEMA_VERSION,
};
use crate::spec::{spec_from_response, Refinement, RefinementBudget, SpecSynth, Verifier};
use crate::jml::SpecStatus;
use crate::taxonomy::{classify_bug_type, VerdictRecord};
use crate::validate::{case_timeout, localize_from_failures, Judgement, TestRunner, TestStatus, ValidateError};

#[derive(Debug, thiserror::Error)]
pub enum EngineError {
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error("unknown session `{0}`")]
    UnknownSession(String),
    #[error("session `{id}` is {state}, expected {expected}")]
    WrongState {
        id: String,
        state: SessionState,
        expected: &'static str,
    },
    #[error("invalid review decision: {0}")]
    InvalidDecision(String),
    #[error("injected crash at {0}")]
    InjectedCrash(String),
}

/// Outcome of one `advance` call.
#[derive(Debug, Clone, PartialEq)]
pub enum Step {
    Moved { from: SessionState, to: SessionState },
    /// The stage cannot proceed without outside input; state unchanged.
    Parked(String),
    /// The stage errored; state unchanged, failure logged.
    Failed(String),
    NeedsReview,
    Closed(Outcome),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FaultPoint {
    /// Data artifact written, transition event not yet appended.
    BeforeEvent,
    /// Transition event appended.
    AfterEvent,
}

#[derive(Debug, Clone)]
pub struct FaultSite<'a> {
    pub session_id: &'a str,
    pub from: SessionState,
    pub to: SessionState,
    pub point: FaultPoint,
}

/// Returns true to simulate a process crash at the given site.
pub type FaultHook = Arc<dyn Fn(&FaultSite) -> bool + Send + Sync>;

struct Project {
    pristine: Snapshot,
    index: CodeIndex,
}

pub struct Engine {
    config: Config,
    templates: PromptTemplates,
    store: RunStore,
    gateway: Gateway,
    verifier: Box<dyn Verifier>,
    runner: TestRunner,
    clock: Arc<dyn Clock>,
    fault: Option<FaultHook>,
    projects: Mutex<BTreeMap<PathBuf, Arc<Project>>>,
    refine_started: Mutex<HashMap<String, Instant>>,
    locks: Mutex<HashMap<String, Arc<Mutex<()>>>>,
}

/// One line of `run.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunEntry {
    pub case_id: String,
    pub state: SessionState,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub category: Option<crate::model::BugCategory>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub first_plausible: Option<PatchMode>,
    pub overfit_suspected: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub last_step: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub schema_version: u32,
    pub sessions: Vec<RunEntry>,
}

impl Engine {
    pub fn new(
        config: Config,
        store: RunStore,
        gateway: Gateway,
        verifier: Box<dyn Verifier>,
        runner: TestRunner,
        clock: Arc<dyn Clock>,
    ) -> Self {
        Engine {
            templates: config.templates(),
            config,
            store,
            gateway,
            verifier,
            runner,
            clock,
            fault: None,
            projects: Mutex::new(BTreeMap::new()),
            refine_started: Mutex::new(HashMap::new()),
            locks: Mutex::new(HashMap::new()),
        }
    }

    pub fn with_fault_hook(mut self, hook: FaultHook) -> Self {
        self.fault = Some(hook);
        self
    }

    pub fn store(&self) -> &RunStore {
        &self.store
    }

    pub fn gateway(&self) -> &Gateway {
        &self.gateway
    }

    fn work_root(&self) -> PathBuf {
        self.store.root().join("work")
    }

    fn plan(&self) -> PatchAttemptPlan {
        PatchAttemptPlan {
            plain_attempts: self.config.patch.plain_attempts,
            mixed_attempts: self.config.patch.mixed_attempts,
            dedup: self.config.patch.dedup,
        }
    }

    fn lock_for(&self, id: &str) -> Arc<Mutex<()>> {
        self.locks
            .lock()
            .expect("lock table")
            .entry(id.to_string())
            .or_default()
            .clone()
    }

    /// Starts a session for `case`. Its id is the case id.
    pub fn create(&self, case: BugCase) -> Result<Session, EngineError> {
        let id = case.case_id.as_str().to_string();
        let lock = self.lock_for(&id);
        let _g = lock.lock().expect("session lock");
        if self.store.exists(&id) {
            return Err(StoreError::Exists(id).into());
        }
        case.validate().map_err(|e| EngineError::InvalidDecision(e.to_string()))?;
        let data = SessionData::new(case);
        let sha = self.store.write_artifact(&id, &data)?;
        self.append(&id, 0, EventKind::Created { data: sha })?;
        Ok(Session {
            id,
            state: SessionState::New,
            data,
            next_seq: 1,
        })
    }

    pub fn load(&self, id: &str) -> Result<Session, EngineError> {
        match self.store.load_session(id) {
            Err(StoreError::UnknownSession(id)) => Err(EngineError::UnknownSession(id)),
            other => Ok(other?),
        }
    }

    fn append(&self, id: &str, seq: u64, kind: EventKind) -> Result<(), EngineError> {
        self.store.append_event(&Event {
            schema_version: SCHEMA_VERSION,
            seq,
            session_id: id.to_string(),
            at: self.clock.event_time(seq),
            kind,
        })?;
        Ok(())
    }

    fn fault(&self, s: &Session, to: SessionState, point: FaultPoint) -> Result<(), EngineError> {
        if let Some(hook) = &self.fault {
            let site = FaultSite {
                session_id: &s.id,
                from: s.state,
                to,
                point,
            };
            if hook(&site) {
                return Err(EngineError::InjectedCrash(format!("{} -> {} ({point:?})", s.state, to)));
            }
        }
        Ok(())
    }

    fn transition(&self, s: &mut Session, data: SessionData, to: SessionState, note: Option<String>) -> Result<Step, EngineError> {
        debug_assert!(crate::session::is_declared(s.state, to), "{} -> {}", s.state, to);
        let sha = self.store.write_artifact(&s.id, &data)?;
        self.fault(s, to, FaultPoint::BeforeEvent)?;
        let from = s.state;
        self.append(&s.id, s.next_seq, EventKind::Transition { from, to, data: sha, note })?;
        self.store.write_attempts(&s.id, &data.patching.log)?;
        s.next_seq += 1;
        self.fault(s, to, FaultPoint::AfterEvent)?;
        s.state = to;
        s.data = data;
        Ok(match to {
            SessionState::Closed(o) => Step::Closed(o),
            _ => Step::Moved { from, to },
        })
    }

    fn log_failure(&self, s: &mut Session, cause: String) -> Result<Step, EngineError> {
        tracing::warn!(session = %s.id, state = %s.state, "{cause}");
        self.append(&s.id, s.next_seq, EventKind::StageFailed { state: s.state, cause: cause.clone() })?;
        s.next_seq += 1;
        Ok(Step::Failed(cause))
    }

    fn park(&self, s: &mut Session, reason: String) -> Result<Step, EngineError> {
        tracing::info!(session = %s.id, state = %s.state, "parked: {reason}");
        self.append(&s.id, s.next_seq, EventKind::Parked { state: s.state, reason: reason.clone() })?;
        s.next_seq += 1;
        Ok(Step::Parked(reason))
    }

    fn project(&self, case: &BugCase) -> Result<Arc<Project>, String> {
        let root = case.project_root.clone();
        if let Some(p) = self.projects.lock().expect("project cache").get(&root) {
            return Ok(p.clone());
        }
        let pristine = Snapshot::load(&root).map_err(|e| format!("cannot load {}: {e}", root.display()))?;
        let index = build_index(&root, &[], self.clock.as_ref()).map_err(|e| e.to_string())?;
        let path = self.store.root().join("index").join(format!("{}.json", case.case_id));
        index.save(&path).map_err(|e| e.to_string())?;
        let p = Arc::new(Project { pristine, index });
        self.projects.lock().expect("project cache").insert(root, p.clone());
        Ok(p)
    }

    fn prompts(&self) -> PromptFactory<'_> {
        PromptFactory {
            llm: &self.config.llm,
            templates: &self.templates,
        }
    }

    /// The case as the validator sees it: the derived category decides the
    /// per-test timeout.
    fn effective_case(data: &SessionData) -> BugCase {
        let mut case = data.case.clone();
        case.category = case.category.or(data.category);
        case
    }

    fn baseline_logs(data: &SessionData) -> String {
        data.baseline.as_ref().map(|r| r.failure_logs()).unwrap_or_default()
    }

    fn context(&self, project: &Project, data: &SessionData) -> Result<CaseContext, String> {
        let target = data.target.as_ref().ok_or("no target method")?;
        CaseContext::build(&data.case, &project.index, target, &Self::baseline_logs(data))
            .ok_or_else(|| format!("target {target} is not in the index"))
    }

    /// Executes exactly one stage of session `id`.
    pub fn advance(&self, id: &str) -> Result<Step, EngineError> {
        let lock = self.lock_for(id);
        let _g = lock.lock().expect("session lock");
        let mut s = self.load(id)?;
        self.advance_locked(&mut s)
    }

    fn advance_locked(&self, s: &mut Session) -> Result<Step, EngineError> {
        use SessionState::*;
        let project = match s.state {
            Closed(o) => return Ok(Step::Closed(o)),
            AwaitingReview => return Ok(Step::NeedsReview),
            _ => match self.project(&s.data.case) {
                Ok(p) => p,
                Err(cause) => return self.log_failure(s, cause),
            },
        };
        let mut data = s.data.clone();
        match s.state {
            New => {
                let case = &data.case;
                let provided: Vec<_> = case.provided_tests().cloned().collect();
                let timeout = case_timeout(Duration::from_secs(self.config.tests.timeout_secs), case.category);
                let dir = self.work_root().join(case.case_id.as_str()).join("baseline");
                let run = match self.runner.run_tests(&project.pristine, &dir, &provided, timeout) {
                    Ok(r) => r,
                    Err(ValidateError::BuildFailed { log }) => {
                        return self.park(s, format!("pristine project does not build: {}", log.trim()))
                    }
                    Err(e) => return self.log_failure(s, format!("baseline run: {e}")),
                };
                if run.results.iter().all(|r| r.status == TestStatus::Pass) {
                    return self.park(s, "no provided test fails on the pristine project".into());
                }
                let logs = format!("{}\n{}", case.report_text, run.failure_logs());
                data.category = Some(case.category.unwrap_or_else(|| classify_bug_type(case, &run.failure_logs())));
                data.localization = localize_from_failures(case, &project.index, &logs);
                data.target = resolve_target(&project.index, case.buggy_method.as_ref())
                    .or_else(|| data.localization.first().cloned());
                data.baseline = Some(run);
                let Some(target) = data.target.clone() else {
                    return self.park(s, "no buggy method given and localization found no signal".into());
                };
                self.transition(s, data, Localized, Some(format!("target {target}")))
            }
            Localized => {
                let ctx = match self.context(&project, &data) {
                    Ok(c) => c,
                    Err(cause) => return self.log_failure(s, cause),
                };
                data.context = Some(ContextSummary {
                    callees: ctx.callees.iter().map(|r| r.method.clone()).collect(),
                    failing_tests: ctx.failing_tests.iter().map(|(id, _)| id.clone()).collect(),
                    passing_tests: ctx.passing_tests.iter().map(|(id, _)| id.clone()).collect(),
                });
                self.transition(s, data, ContextBuilt, None)
            }
            ContextBuilt => {
                let ctx = match self.context(&project, &data) {
                    Ok(c) => c,
                    Err(cause) => return self.log_failure(s, cause),
                };
                match self.spec_synth(&project, &data).draft_specs(&ctx) {
                    Ok(d) => {
                        let note = format!("draft {:?}", d.target.status);
                        data.drafts = Some(d);
                        self.transition(s, data, SpecDrafted, Some(note))
                    }
                    Err(e) => self.log_failure(s, format!("drafting: {e}")),
                }
            }
            SpecDrafted => {
                let Some(d) = &data.drafts else {
                    return self.log_failure(s, "no drafts recorded".into());
                };
                data.refinement = Some(Refinement::start(d.target.clone()));
                self.transition(s, data, SpecRefining, None)
            }
            SpecRefining => self.refine_step(s, &project, data),
            SpecSettled => self.transition(s, data, PatchingPlain, None),
            PatchingPlain | PatchingMixed => self.patch_step(s, &project, data),
            Validated => {
                if let Some(cur) = data.current.as_mut().filter(|c| c.judgement.is_none()) {
                    let case = Self::effective_case(&s.data);
                    let mut v = TestValidator {
                        case: &case,
                        pristine: &project.pristine,
                        runner: &self.runner,
                        workroot: self.work_root(),
                    };
                    match v.judge(&cur.patch) {
                        Ok(j) => cur.judgement = Some(j),
                        Err(e) => return self.log_failure(s, format!("validation: {e}")),
                    }
                }
                let note = data
                    .current
                    .as_ref()
                    .and_then(|c| c.judgement.as_ref())
                    .map(|j| j.verdict.short().to_string());
                self.transition(s, data, AwaitingReview, note)
            }
            AwaitingReview | Closed(_) => unreachable!("handled above"),
        }
    }

    fn spec_synth<'a>(&'a self, project: &'a Project, data: &SessionData) -> SpecSynth<'a> {
        SpecSynth {
            gateway: &self.gateway,
            prompts: self.prompts(),
            verifier: self.verifier.as_ref(),
            index: &project.index,
            pristine: &project.pristine,
            workdir: self.work_root().join(data.case.case_id.as_str()).join("verify"),
        }
    }

    fn refine_step(&self, s: &mut Session, project: &Project, mut data: SessionData) -> Result<Step, EngineError> {
        let budget = match RefinementBudget::new(self.config.refine.max_iterations, self.config.refine.wall_clock_limit_secs) {
            Ok(b) => b,
            Err(e) => return self.log_failure(s, e),
        };
        let started = *self
            .refine_started
            .lock()
            .expect("refine clocks")
            .entry(s.id.clone())
            .or_insert_with(Instant::now);
        let callees = data.drafts.as_ref().map(|d| d.callees.clone()).unwrap_or_default();
        let Some(state) = data.refinement.as_mut() else {
            return self.log_failure(s, "no refinement in progress".into());
        };
        if let Err(e) = self.spec_synth(project, &s.data).refine_iteration(state, &callees, budget, started) {
            return self.log_failure(s, format!("refinement: {e}"));
        }
        let note = format!(
            "iteration {}: {:?}",
            state.iterations(),
            state.history.last().map(|h| h.outcome.status)
        );
        let to = if state.settled.is_some() {
            self.refine_started.lock().expect("refine clocks").remove(&s.id);
            SessionState::SpecSettled
        } else {
            SessionState::SpecRefining
        };
        self.transition(s, data, to, Some(note))
    }

    fn patch_step(&self, s: &mut Session, project: &Project, mut data: SessionData) -> Result<Step, EngineError> {
        let mode = if s.state == SessionState::PatchingPlain {
            PatchMode::Plain
        } else {
            PatchMode::Mixed
        };
        let ctx = match self.context(project, &data) {
            Ok(c) => c,
            Err(cause) => return self.log_failure(s, cause),
        };
        let synth = PatchSynth {
            gateway: &self.gateway,
            prompts: self.prompts(),
            pristine: &project.pristine,
            context_lines: self.config.patch.context_lines,
            plan: self.plan(),
        };
        let case = Self::effective_case(&data);
        let mut recorder = Recording {
            inner: TestValidator {
                case: &case,
                pristine: &project.pristine,
                runner: &self.runner,
                workroot: self.work_root(),
            },
            seen: Vec::new(),
        };
        let spec = data.active_spec().cloned();
        let result = synth.run_mode(&ctx, spec.as_ref(), mode, &mut data.patching, &mut recorder);
        data.candidates.extend(recorder.seen);
        match result {
            Ok(Some(p)) => {
                data.first_plausible.get_or_insert(mode);
                let note = format!("{} candidate {} {}", mode, p.patch.attempt_index, p.judgement.verdict.short());
                data.current = Some(CurrentPatch {
                    patch: p.patch,
                    judgement: Some(p.judgement),
                    edited: false,
                });
                self.transition(s, data, SessionState::Validated, Some(note))
            }
            Ok(None) if mode == PatchMode::Plain => {
                self.transition(s, data, SessionState::PatchingMixed, Some("no plausible plain candidate".into()))
            }
            Ok(None) => self.transition(
                s,
                data,
                SessionState::Closed(Outcome::Exhausted),
                Some("no plausible mixed candidate".into()),
            ),
            Err(PatchError::MissingSpec) => self.transition(
                s,
                data,
                SessionState::Closed(Outcome::Exhausted),
                Some("no usable specification for mixed mode".into()),
            ),
            Err(e) => self.log_failure(s, format!("{mode} patching: {e}")),
        }
    }

    /// Advances until the session closes, parks, fails, or needs review.
    pub fn drive(&self, id: &str) -> Result<Step, EngineError> {
        self.drive_until(id, |_| false)
    }

    /// Like [`Engine::drive`], but also stops once `stop` holds for the state
    /// just entered.
    pub fn drive_until(&self, id: &str, stop: impl Fn(SessionState) -> bool) -> Result<Step, EngineError> {
        loop {
            match self.advance(id)? {
                Step::Moved { to, .. } if !stop(to) => continue,
                other => return Ok(other),
            }
        }
    }

    pub fn submit_review(&self, decision: ReviewDecision) -> Result<Session, EngineError> {
        let id = decision.session_id.clone();
        let lock = self.lock_for(&id);
        let _g = lock.lock().expect("session lock");
        let mut s = self.load(&id)?;
        if s.state != SessionState::AwaitingReview {
            return Err(EngineError::WrongState {
                id,
                state: s.state,
                expected: "AwaitingReview",
            });
        }
        decision.check().map_err(EngineError::InvalidDecision)?;
        let mut data = s.data.clone();
        let invalid = |m: &str| Err(EngineError::InvalidDecision(m.to_string()));
        match decision.subject {
            ReviewSubject::Spec if data.active_spec().is_none() => return invalid("session has no specification"),
            ReviewSubject::Patch if data.current.is_none() => return invalid("session has no candidate patch"),
            _ => {}
        }
        // Validate edits before anything is appended.
        let (to, note) = match (decision.subject, decision.action) {
            (_, ReviewAction::Accept) => (SessionState::Closed(Outcome::Accepted), "accepted".to_string()),
            (ReviewSubject::Spec, ReviewAction::Reject) => {
                (SessionState::Closed(Outcome::Rejected), "specification rejected".to_string())
            }
            (ReviewSubject::Patch, ReviewAction::Reject) => {
                let cur = data.current.take().expect("checked above");
                let mut line = format!("reviewer {} rejected candidate {}", decision.reviewer, cur.patch.attempt_index);
                if let Some(t) = decision.text.as_deref().map(str::trim).filter(|t| !t.is_empty()) {
                    line.push_str(": ");
                    line.push_str(t);
                }
                data.patching.reviewer_notes.push(line);
                (self.after_feedback(&data), "patch rejected".to_string())
            }
            (ReviewSubject::Spec, ReviewAction::Edit) => {
                let project = self.project(&data.case).map_err(EngineError::InvalidDecision)?;
                let target = data.target.clone().expect("spec implies target");
                let record = project.index.method(&target).ok_or_else(|| {
                    EngineError::InvalidDecision(format!("target {target} is not in the index"))
                })?;
                let iteration = data.active_spec().map_or(1, |p| p.iteration + 1);
                let spec = spec_from_response(record, decision.text.as_deref().unwrap_or(""), iteration);
                if spec.status == SpecStatus::SyntaxError {
                    let msgs: Vec<String> = spec.diagnostics.iter().map(|d| d.to_string()).collect();
                    return invalid(&format!("edited specification does not parse: {}", msgs.join("; ")));
                }
                data.spec_edits.push(spec);
                data.current = None;
                (self.after_feedback(&data), "specification edited".to_string())
            }
            (ReviewSubject::Patch, ReviewAction::Edit) => {
                let project = self.project(&data.case).map_err(EngineError::InvalidDecision)?;
                let diff = decision.text.clone().unwrap_or_default();
                let parsed = parse_unified_diff(&diff).map_err(|e| EngineError::InvalidDecision(e.to_string()))?;
                if parsed.is_empty() {
                    return invalid("edited patch contains no changes");
                }
                apply_patch(&project.pristine, &parsed).map_err(|e| EngineError::InvalidDecision(e.to_string()))?;
                let prev = data.current.as_ref().expect("checked above");
                let patch = CandidatePatch::new(diff, prev.patch.origin_mode, prev.patch.attempt_index, prev.patch.target.clone());
                data.candidates.push(patch.clone());
                data.current = Some(CurrentPatch {
                    patch,
                    judgement: None,
                    edited: true,
                });
                (SessionState::Validated, "patch edited".to_string())
            }
        };
        data.reviews.push(decision.clone());
        self.append(&s.id, s.next_seq, EventKind::Review { decision })?;
        s.next_seq += 1;
        self.transition(&mut s, data, to, Some(note))?;
        Ok(s)
    }

    /// Where feedback that needs a new candidate leads.
    fn after_feedback(&self, data: &SessionData) -> SessionState {
        let usable = data.active_spec().is_some_and(|sp| sp.status != SpecStatus::SyntaxError && !sp.clauses.is_empty());
        if usable && data.patching.remaining(&self.plan(), PatchMode::Mixed) > 0 {
            SessionState::PatchingMixed
        } else {
            SessionState::Closed(Outcome::Exhausted)
        }
    }

    /// Creates (or resumes) a session per case and drives each one, up to
    /// `parallel` at a time. Writes `run.json` at the end.
    pub fn run_cases(&self, cases: Vec<BugCase>, parallel: usize) -> Result<RunSummary, EngineError> {
        let mut ids = Vec::new();
        for case in cases {
            let id = case.case_id.as_str().to_string();
            if !self.store.exists(&id) {
                self.create(case)?;
            }
            ids.push(id);
        }
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(parallel.max(1))
            .build()
            .expect("thread pool");
        let steps: Vec<Result<Step, EngineError>> = pool.install(|| {
            use rayon::prelude::*;
            ids.par_iter().map(|id| self.drive(id)).collect()
        });
        let mut entries = Vec::new();
        for (id, step) in ids.iter().zip(steps) {
            let step = step?;
            let s = self.load(id)?;
            entries.push(RunEntry {
                case_id: id.clone(),
                state: s.state,
                category: s.data.category,
                first_plausible: s.data.first_plausible,
                overfit_suspected: current_judgement(&s.data).is_some_and(|j| j.verdict.overfit_suspected),
                last_step: match step {
                    Step::Parked(r) => Some(format!("parked: {r}")),
                    Step::Failed(c) => Some(format!("failed: {c}")),
                    _ => None,
                },
            });
        }
        let summary = RunSummary {
            schema_version: SCHEMA_VERSION,
            sessions: entries,
        };
        write_atomic(&self.store.root().join("run.json"), &to_json_bytes(&summary))?;
        Ok(summary)
    }
}

pub fn current_judgement(data: &SessionData) -> Option<&Judgement> {
    data.current.as_ref().and_then(|c| c.judgement.as_ref())
}

/// Exact match first, then by class, name and signature, then by class and
/// name when that is unambiguous.
pub fn resolve_target(index: &CodeIndex, given: Option<&MethodRef>) -> Option<MethodRef> {
    let g = given?;
    if index.methods.contains_key(g) {
        return Some(g.clone());
    }
    let same = |m: &&MethodRef| m.qualified_class == g.qualified_class && m.method_name == g.method_name;
    let candidates: Vec<&MethodRef> = index.methods.keys().filter(same).collect();
    if let Some(m) = candidates.iter().find(|m| m.signature == g.signature) {
        return Some((*m).clone());
    }
    match candidates.as_slice() {
        [only] => Some((*only).clone()),
        _ => None,
    }
}

struct Recording<'a> {
    inner: TestValidator<'a>,
    seen: Vec<CandidatePatch>,
}

impl Validator for Recording<'_> {
    fn judge(&mut self, patch: &CandidatePatch) -> Result<Judgement, ValidateError> {
        self.seen.push(patch.clone());
        self.inner.judge(patch)
    }
}

/// Report rows for every session in a run directory. Sessions that never
/// reached classification fall back to the rule table on the report text.
pub fn verdict_records(store: &RunStore) -> Result<Vec<VerdictRecord>, StoreError> {
    let mut out = Vec::new();
    for id in store.session_ids()? {
        let s = store.load_session(&id)?;
        let category = s
            .data
            .category
            .or(s.data.case.category)
            .unwrap_or_else(|| classify_bug_type(&s.data.case, ""));
        out.push(VerdictRecord {
            case_id: id,
            category,
            fixed_plain: s.data.first_plausible == Some(PatchMode::Plain),
            fixed_ours: s.data.first_plausible.is_some(),
        });
    }
    Ok(out)
}

/// Every undeclared transition or ordering problem across a run directory.
pub fn audit_run(store: &RunStore) -> Result<BTreeMap<String, Vec<String>>, StoreError> {
    let mut out = BTreeMap::new();
    for id in store.session_ids()? {
        let problems = verify_event_log(&store.read_events(&id)?);
        if !problems.is_empty() {
            out.insert(id, problems);
        }
    }
    Ok(out)
}

/// Resolves `project_root` of each case against `base`.
pub fn resolve_case_roots(cases: &mut [BugCase], base: &Path) {
    for c in cases {
        if c.project_root.is_relative() {
            c.project_root = base.join(&c.project_root);
        }
    }
}
