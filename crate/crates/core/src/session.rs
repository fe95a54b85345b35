//! Repair sessions: the pipeline state machine, review decisions, and the
//! on-disk run store (append-only event logs plus content-addressed
//! artifacts).

use std::fmt;
use std::fs::{self, File, OpenOptions};
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use chrono::{DateTime, Utc};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::digest::sha256_hex;
use crate::jml::JmlSpecification;
use crate::model::{BugCase, BugCategory, CandidatePatch, MethodRef, PatchMode};
use crate::patch::PatchState;
use crate::spec::{DraftSet, Refinement};
use crate::validate::{Judgement, TestRun};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Outcome {
    Accepted,
    Rejected,
    Exhausted,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SessionState {
    New,
    Localized,
    ContextBuilt,
    SpecDrafted,
    SpecRefining,
    SpecSettled,
    PatchingPlain,
    PatchingMixed,
    Validated,
    AwaitingReview,
    Closed(Outcome),
}

impl SessionState {
    pub fn is_closed(self) -> bool {
        matches!(self, SessionState::Closed(_))
    }
}

impl fmt::Display for SessionState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SessionState::Closed(o) => write!(f, "Closed({o:?})"),
            other => write!(f, "{other:?}"),
        }
    }
}

/// The edge set. Everything else is an undeclared transition.
pub fn is_declared(from: SessionState, to: SessionState) -> bool {
    use SessionState::*;
    matches!(
        (from, to),
        (New, Localized)
            | (Localized, ContextBuilt)
            | (ContextBuilt, SpecDrafted)
            | (SpecDrafted, SpecRefining)
            | (SpecRefining, SpecRefining)
            | (SpecRefining, SpecSettled)
            | (SpecSettled, PatchingPlain)
            | (PatchingPlain, Validated)
            | (PatchingPlain, PatchingMixed)
            | (PatchingMixed, Validated)
            | (PatchingMixed, Closed(Outcome::Exhausted))
            | (Validated, AwaitingReview)
            | (AwaitingReview, Closed(_))
            | (AwaitingReview, PatchingMixed)
            | (AwaitingReview, Validated)
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ReviewSubject {
    Spec,
    Patch,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ReviewAction {
    Accept,
    Reject,
    Edit,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReviewDecision {
    pub session_id: String,
    pub subject: ReviewSubject,
    pub action: ReviewAction,
    /// Replacement text; required for `Edit` and ignored otherwise.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub text: Option<String>,
    pub reviewer: String,
    pub decided_at: DateTime<Utc>,
}

impl ReviewDecision {
    pub fn check(&self) -> Result<(), String> {
        if self.action == ReviewAction::Edit && self.text.as_deref().is_none_or(|t| t.trim().is_empty()) {
            return Err("Edit needs non-empty replacement text".into());
        }
        if self.reviewer.trim().is_empty() {
            return Err("reviewer must be named".into());
        }
        Ok(())
    }
}

/// The patch currently in front of the reviewer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurrentPatch {
    pub patch: CandidatePatch,
    /// None for a reviewer edit that has not been tested yet.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub judgement: Option<Judgement>,
    pub edited: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ContextSummary {
    pub callees: Vec<MethodRef>,
    pub failing_tests: Vec<String>,
    pub passing_tests: Vec<String>,
}

/// Everything a session has produced. Each transition persists a full copy
/// as an artifact, so the latest one is enough to resume.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionData {
    pub case: BugCase,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub category: Option<BugCategory>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub baseline: Option<TestRun>,
    #[serde(default)]
    pub localization: Vec<MethodRef>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target: Option<MethodRef>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub context: Option<ContextSummary>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub drafts: Option<DraftSet>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub refinement: Option<Refinement>,
    /// Reviewer replacements of the target spec, oldest first.
    #[serde(default)]
    pub spec_edits: Vec<JmlSpecification>,
    #[serde(default)]
    pub patching: PatchState,
    #[serde(default)]
    pub candidates: Vec<CandidatePatch>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub current: Option<CurrentPatch>,
    /// Mode of the first plausible candidate found by the pipeline.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub first_plausible: Option<PatchMode>,
    #[serde(default)]
    pub reviews: Vec<ReviewDecision>,
}

impl SessionData {
    pub fn new(case: BugCase) -> Self {
        SessionData {
            case,
            category: None,
            baseline: None,
            localization: Vec::new(),
            target: None,
            context: None,
            drafts: None,
            refinement: None,
            spec_edits: Vec::new(),
            patching: PatchState::default(),
            candidates: Vec::new(),
            current: None,
            first_plausible: None,
            reviews: Vec::new(),
        }
    }

    /// Spec used for mixed prompts: the latest reviewer edit, else the end
    /// of the refinement loop.
    pub fn active_spec(&self) -> Option<&JmlSpecification> {
        self.spec_edits
            .last()
            .or_else(|| self.refinement.as_ref().map(|r| &r.current))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type")]
pub enum EventKind {
    Created {
        data: String,
    },
    Transition {
        from: SessionState,
        to: SessionState,
        data: String,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        note: Option<String>,
    },
    StageFailed {
        state: SessionState,
        cause: String,
    },
    Parked {
        state: SessionState,
        reason: String,
    },
    Review {
        decision: ReviewDecision,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Event {
    pub schema_version: u32,
    pub seq: u64,
    pub session_id: String,
    pub at: DateTime<Utc>,
    #[serde(flatten)]
    pub kind: EventKind,
}

/// Replays a log against the edge set; returns one message per problem.
pub fn verify_event_log(events: &[Event]) -> Vec<String> {
    let mut problems = Vec::new();
    let mut state: Option<SessionState> = None;
    for (i, e) in events.iter().enumerate() {
        if e.seq != i as u64 {
            problems.push(format!("event {i}: seq {} out of order", e.seq));
        }
        match (&e.kind, state) {
            (EventKind::Created { .. }, None) => state = Some(SessionState::New),
            (EventKind::Created { .. }, Some(_)) => problems.push(format!("event {i}: second Created")),
            (_, None) => problems.push(format!("event {i}: log does not start with Created")),
            (EventKind::Transition { from, to, .. }, Some(cur)) => {
                if *from != cur {
                    problems.push(format!("event {i}: transition from {from} but session is in {cur}"));
                }
                if !is_declared(*from, *to) {
                    problems.push(format!("event {i}: undeclared transition {from} -> {to}"));
                }
                if cur.is_closed() {
                    problems.push(format!("event {i}: transition after close"));
                }
                state = Some(*to);
            }
            (EventKind::Review { .. }, Some(cur)) => {
                if cur != SessionState::AwaitingReview {
                    problems.push(format!("event {i}: review while {cur}"));
                }
            }
            (EventKind::StageFailed { state: s, .. } | EventKind::Parked { state: s, .. }, Some(cur)) => {
                if *s != cur {
                    problems.push(format!("event {i}: failure recorded for {s} while in {cur}"));
                }
            }
        }
    }
    problems
}

#[derive(Debug, thiserror::Error)]
pub enum StoreError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Json {
        path: PathBuf,
        source: serde_json::Error,
    },
    #[error("unknown session `{0}`")]
    UnknownSession(String),
    #[error("session `{0}` already exists")]
    Exists(String),
    #[error("session `{id}` log is inconsistent: {problem}")]
    Corrupt { id: String, problem: String },
}

fn io(path: &Path) -> impl FnOnce(std::io::Error) -> StoreError + '_ {
    move |source| StoreError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Writes via a temp file in the same directory and renames into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), StoreError> {
    let dir = path.parent().unwrap_or(Path::new("."));
    fs::create_dir_all(dir).map_err(io(dir))?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(io(dir))?;
    tmp.write_all(bytes).map_err(io(path))?;
    tmp.as_file().sync_all().map_err(io(path))?;
    tmp.persist(path).map_err(|e| StoreError::Io {
        path: path.to_path_buf(),
        source: e.error,
    })?;
    Ok(())
}

pub fn to_json_bytes<T: Serialize>(value: &T) -> Vec<u8> {
    let mut v = serde_json::to_vec_pretty(value).expect("session types serialize");
    v.push(b'\n');
    v
}

/// A session as reconstructed from its log.
#[derive(Debug, Clone, PartialEq)]
pub struct Session {
    pub id: String,
    pub state: SessionState,
    pub data: SessionData,
    pub next_seq: u64,
}

/// Layout: `sessions/<id>/events.jsonl`, `sessions/<id>/attempts.jsonl`,
/// `sessions/<id>/artifacts/<sha256>.json`.
#[derive(Debug, Clone)]
pub struct RunStore {
    root: PathBuf,
}

impl RunStore {
    pub fn open(root: impl Into<PathBuf>) -> Result<Self, StoreError> {
        let root = root.into();
        let sessions = root.join("sessions");
        fs::create_dir_all(&sessions).map_err(io(&sessions))?;
        Ok(RunStore { root })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn session_dir(&self, id: &str) -> PathBuf {
        self.root.join("sessions").join(id)
    }

    fn events_path(&self, id: &str) -> PathBuf {
        self.session_dir(id).join("events.jsonl")
    }

    pub fn exists(&self, id: &str) -> bool {
        self.events_path(id).exists()
    }

    pub fn session_ids(&self) -> Result<Vec<String>, StoreError> {
        let dir = self.root.join("sessions");
        let mut ids = Vec::new();
        for entry in fs::read_dir(&dir).map_err(io(&dir))? {
            let entry = entry.map_err(io(&dir))?;
            if entry.path().join("events.jsonl").exists() {
                ids.push(entry.file_name().to_string_lossy().into_owned());
            }
        }
        ids.sort();
        Ok(ids)
    }

    /// Stores `value` under its content hash and returns the hash.
    pub fn write_artifact<T: Serialize>(&self, id: &str, value: &T) -> Result<String, StoreError> {
        let bytes = to_json_bytes(value);
        let sha = sha256_hex(&bytes);
        let path = self.session_dir(id).join("artifacts").join(format!("{sha}.json"));
        if !path.exists() {
            write_atomic(&path, &bytes)?;
        }
        Ok(sha)
    }

    pub fn read_artifact<T: DeserializeOwned>(&self, id: &str, sha: &str) -> Result<T, StoreError> {
        let path = self.session_dir(id).join("artifacts").join(format!("{sha}.json"));
        let bytes = fs::read(&path).map_err(io(&path))?;
        serde_json::from_slice(&bytes).map_err(|source| StoreError::Json { path, source })
    }

    /// Appends one JSON line. A torn final line left by a crash is cut off
    /// first so the log stays line-aligned.
    pub fn append_event(&self, event: &Event) -> Result<(), StoreError> {
        let path = self.events_path(&event.session_id);
        fs::create_dir_all(path.parent().expect("session dir")).map_err(io(&path))?;
        let mut f = OpenOptions::new().create(true).read(true).append(true).open(&path).map_err(io(&path))?;
        let len = f.metadata().map_err(io(&path))?.len();
        if len > 0 {
            let mut bytes = Vec::new();
            File::open(&path).and_then(|mut r| r.read_to_end(&mut bytes)).map_err(io(&path))?;
            if bytes.last() != Some(&b'\n') {
                let keep = bytes.iter().rposition(|b| *b == b'\n').map_or(0, |p| p + 1);
                f.set_len(keep as u64).map_err(io(&path))?;
            }
        }
        let mut line = serde_json::to_vec(event).expect("event serializes");
        line.push(b'\n');
        f.write_all(&line).map_err(io(&path))?;
        f.sync_data().map_err(io(&path))?;
        Ok(())
    }

    /// Complete events only; an unterminated or unparsable last line is
    /// treated as a write cut short by a crash.
    pub fn read_events(&self, id: &str) -> Result<Vec<Event>, StoreError> {
        let path = self.events_path(id);
        if !path.exists() {
            return Err(StoreError::UnknownSession(id.to_string()));
        }
        let text = fs::read_to_string(&path).map_err(io(&path))?;
        let mut out = Vec::new();
        let complete = match text.rfind('\n') {
            Some(p) => &text[..p],
            None => "",
        };
        for line in complete.lines().filter(|l| !l.trim().is_empty()) {
            let e: Event = serde_json::from_str(line).map_err(|source| StoreError::Json {
                path: path.clone(),
                source,
            })?;
            out.push(e);
        }
        Ok(out)
    }

    pub fn load_session(&self, id: &str) -> Result<Session, StoreError> {
        let events = self.read_events(id)?;
        let corrupt = |problem: String| StoreError::Corrupt {
            id: id.to_string(),
            problem,
        };
        let mut state = None;
        let mut data_sha = None;
        for e in &events {
            match &e.kind {
                EventKind::Created { data } => {
                    state = Some(SessionState::New);
                    data_sha = Some(data.clone());
                }
                EventKind::Transition { to, data, .. } => {
                    state = Some(*to);
                    data_sha = Some(data.clone());
                }
                _ => {}
            }
        }
        let (Some(state), Some(sha)) = (state, data_sha) else {
            return Err(corrupt("no Created event".into()));
        };
        Ok(Session {
            id: id.to_string(),
            state,
            data: self.read_artifact(id, &sha)?,
            next_seq: events.len() as u64,
        })
    }

    pub fn write_attempts(&self, id: &str, records: &[crate::patch::AttemptRecord]) -> Result<(), StoreError> {
        let mut bytes = Vec::new();
        for r in records {
            bytes.extend(serde_json::to_vec(r).expect("attempt serializes"));
            bytes.push(b'\n');
        }
        write_atomic(&self.session_dir(id).join("attempts.jsonl"), &bytes)
    }
}
