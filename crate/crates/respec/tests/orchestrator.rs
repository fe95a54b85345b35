//! Session state machine over the replay corpus: outcomes, event-log
//! soundness, crash recovery and review decisions.

mod common;

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::sync::{Arc, Mutex};

use chrono::{TimeZone, Utc};
use common::{Corpus, CASE_IDS};
use respec_core::engine::{audit_run, EngineError, FaultPoint, FaultSite};
use respec_core::llm::Transcript;
use respec_core::model::PatchMode;
use respec_core::session::{
    is_declared, verify_event_log, EventKind, Outcome, ReviewAction, ReviewDecision, ReviewSubject, SessionState,
};

fn decision(id: &str, subject: ReviewSubject, action: ReviewAction, text: Option<&str>) -> ReviewDecision {
    ReviewDecision {
        session_id: id.into(),
        subject,
        action,
        text: text.map(str::to_string),
        reviewer: "rev".into(),
        decided_at: Utc.with_ymd_and_hms(2024, 5, 1, 12, 0, 0).unwrap(),
    }
}

fn expected_states() -> BTreeMap<&'static str, SessionState> {
    use SessionState::*;
    BTreeMap::from([
        ("cli5", AwaitingReview),
        ("codec10", AwaitingReview),
        ("jackson99", AwaitingReview),
        ("ring1", AwaitingReview),
        ("stats2", AwaitingReview),
        ("slug3", Closed(Outcome::Exhausted)),
    ])
}

#[test]
fn replay_reaches_the_scripted_outcomes() {
    let c = Corpus::new();
    let engine = c.engine(&c.replay_options());
    let summary = engine.run_cases(c.cases(), 3).unwrap();
    let got: BTreeMap<&str, SessionState> = summary
        .sessions
        .iter()
        .map(|e| (CASE_IDS.iter().find(|id| **id == e.case_id).copied().unwrap(), e.state))
        .collect();
    assert_eq!(got, expected_states());
    let by_id: HashMap<&str, _> = summary.sessions.iter().map(|e| (e.case_id.as_str(), e)).collect();
    assert_eq!(by_id["cli5"].first_plausible, Some(PatchMode::Plain));
    assert_eq!(by_id["jackson99"].first_plausible, Some(PatchMode::Mixed));
    assert!(by_id["codec10"].overfit_suspected);
    assert!(!by_id["ring1"].overfit_suspected);
    assert_eq!(by_id["slug3"].first_plausible, None);
    assert_eq!(engine.gateway().provider_calls(), 0);
    assert!(audit_run(engine.store()).unwrap().is_empty());
}

#[test]
fn localization_ranks_the_seeded_method_in_the_top_three() {
    let c = Corpus::new();
    let engine = c.engine(&c.replay_options());
    let truth = [
        ("cli5", "stripLeadingHyphens"),
        ("codec10", "caverphone"),
        ("jackson99", "buildCanonicalName"),
        ("ring1", "last"),
        ("stats2", "clamp"),
        ("slug3", "slugify"),
    ];
    let mut hits = 0;
    for (id, method) in truth {
        engine.create(c.case(id)).unwrap();
        engine.drive_until(id, |s| s != SessionState::New).unwrap();
        let s = engine.load(id).unwrap();
        let top: Vec<&str> = s.data.localization.iter().take(3).map(|m| m.method_name.as_str()).collect();
        if top.contains(&method) {
            hits += 1;
        }
    }
    assert!(hits >= 5, "{hits} of 6");
}

/// Every transition site in every session, before and after the event is
/// written, crashes once; a fresh engine on the same store finishes the run.
#[test]
fn crash_between_transitions_recovers_the_same_terminal_state() {
    let reference = {
        let c = Corpus::new();
        let engine = c.engine(&c.replay_options());
        let s = engine.run_cases(c.cases(), 6).unwrap();
        s.sessions
            .into_iter()
            .map(|e| (e.case_id, (e.state, e.first_plausible, e.overfit_suspected)))
            .collect::<BTreeMap<_, _>>()
    };
    let longest = {
        let c = Corpus::new();
        let engine = c.engine(&c.replay_options());
        engine.run_cases(c.cases(), 6).unwrap();
        CASE_IDS
            .iter()
            .map(|id| engine.store().read_events(id).unwrap().len() - 1)
            .max()
            .unwrap()
    };
    let mut crashes = 0;
    for point in [FaultPoint::BeforeEvent, FaultPoint::AfterEvent] {
        for k in 1..=longest {
            let c = Corpus::new();
            let seen: Arc<Mutex<HashMap<String, usize>>> = Arc::default();
            let fired: Arc<Mutex<Vec<String>>> = Arc::default();
            let (s2, f2) = (seen.clone(), fired.clone());
            let hook = Arc::new(move |site: &FaultSite| {
                if site.point != point {
                    return false;
                }
                let mut seen = s2.lock().unwrap();
                let n = seen.entry(site.session_id.to_string()).or_default();
                *n += 1;
                if *n == k {
                    f2.lock().unwrap().push(format!("{} {} -> {}", site.session_id, site.from, site.to));
                    true
                } else {
                    false
                }
            });
            let engine = c.engine(&c.replay_options()).with_fault_hook(hook);
            for case in c.cases() {
                let id = case.case_id.as_str().to_string();
                engine.create(case).unwrap();
                match engine.drive(&id) {
                    Err(EngineError::InjectedCrash(_)) => {}
                    Ok(_) => {}
                    Err(e) => panic!("{id}: {e}"),
                }
            }
            crashes += fired.lock().unwrap().len();
            drop(engine);

            let engine = c.engine(&c.replay_options());
            let s = engine.run_cases(c.cases(), 6).unwrap();
            let got: BTreeMap<_, _> = s
                .sessions
                .into_iter()
                .map(|e| (e.case_id, (e.state, e.first_plausible, e.overfit_suspected)))
                .collect();
            assert_eq!(got, reference, "{point:?} at transition {k}: {:?}", fired.lock().unwrap());
            let problems = audit_run(engine.store()).unwrap();
            assert!(problems.is_empty(), "{point:?} at transition {k}: {problems:?}");
        }
    }
    // one crash per transition of every session at both points
    let transitions: usize = {
        let c = Corpus::new();
        let engine = c.engine(&c.replay_options());
        engine.run_cases(c.cases(), 6).unwrap();
        CASE_IDS.iter().map(|id| engine.store().read_events(id).unwrap().len() - 1).sum()
    };
    assert_eq!(crashes, 2 * transitions);
}

#[test]
fn accept_closes_after_the_scripted_path() {
    use SessionState::*;
    let c = Corpus::new();
    let engine = c.engine(&c.replay_options());
    engine.create(c.case("cli5")).unwrap();
    engine.drive("cli5").unwrap();
    let s = engine
        .submit_review(decision("cli5", ReviewSubject::Patch, ReviewAction::Accept, None))
        .unwrap();
    assert_eq!(s.state, Closed(Outcome::Accepted));

    let path = [
        Localized,
        ContextBuilt,
        SpecDrafted,
        SpecRefining,
        SpecSettled,
        PatchingPlain,
        Validated,
        AwaitingReview,
        Closed(Outcome::Accepted),
    ];
    let events = engine.store().read_events("cli5").unwrap();
    // Created, one per transition, one Review
    assert_eq!(events.len(), 1 + path.len() + 1);
    let moved: Vec<SessionState> = events
        .iter()
        .filter_map(|e| match &e.kind {
            EventKind::Transition { to, .. } => Some(*to),
            _ => None,
        })
        .collect();
    assert_eq!(moved, path);
    assert!(verify_event_log(&events).is_empty());

    // a closed session takes no further decisions
    let again = engine.submit_review(decision("cli5", ReviewSubject::Patch, ReviewAction::Accept, None));
    assert!(matches!(again, Err(EngineError::WrongState { .. })));
    assert_eq!(engine.drive("cli5").unwrap(), respec_core::engine::Step::Closed(Outcome::Accepted));
    assert_eq!(engine.store().read_events("cli5").unwrap().len(), events.len());
}

const END_ANCHORED: &str = r#"/*@ requires txt != null;
  @ ensures \result != null;
  @ ensures \result.length() == 10;
  @ ensures txt.endsWith("mb") ==> \result.equals(caverphone(txt.substring(0, txt.length() - 1)));
  @*/"#;

#[test]
fn edited_spec_reaches_the_next_mixed_prompt_verbatim() {
    let c = Corpus::new();
    let engine = c.engine(&c.script_options());
    engine.create(c.case("codec10")).unwrap();
    engine.drive("codec10").unwrap();
    let before = engine.load("codec10").unwrap();
    assert!(before.data.current.as_ref().unwrap().judgement.as_ref().unwrap().verdict.overfit_suspected);

    let s = engine
        .submit_review(decision("codec10", ReviewSubject::Spec, ReviewAction::Edit, Some(END_ANCHORED)))
        .unwrap();
    assert_eq!(s.state, SessionState::PatchingMixed);
    engine.drive("codec10").unwrap();
    let s = engine.load("codec10").unwrap();
    assert_eq!(s.state, SessionState::AwaitingReview);
    let verdict = &s.data.current.as_ref().unwrap().judgement.as_ref().unwrap().verdict;
    assert!(verdict.plausible && !verdict.overfit_suspected);
    assert_eq!(s.data.current.as_ref().unwrap().patch.origin_mode, PatchMode::Mixed);

    let mut specs = Vec::new();
    for e in fs::read_dir(c.root().join("transcripts")).unwrap() {
        let t: Transcript = serde_json::from_slice(&fs::read(e.unwrap().path()).unwrap()).unwrap();
        let codec = t.sections.iter().any(|s| s.label == "target" && s.text.contains(".Caverphone.caverphone "));
        if let Some(sec) = t.sections.iter().find(|s| codec && s.label == "specification") {
            specs.push(sec.text.clone());
        }
    }
    assert_eq!(specs, vec![END_ANCHORED.to_string()]);
}

#[test]
fn edited_spec_that_does_not_parse_is_refused() {
    let c = Corpus::new();
    let engine = c.engine(&c.replay_options());
    engine.create(c.case("codec10")).unwrap();
    engine.drive("codec10").unwrap();
    let bad = "/*@ requires txt != null\n  @ ensures \\result != null; @*/";
    let r = engine.submit_review(decision("codec10", ReviewSubject::Spec, ReviewAction::Edit, Some(bad)));
    assert!(matches!(r, Err(EngineError::InvalidDecision(_))), "{r:?}");
    let r = engine.submit_review(decision("codec10", ReviewSubject::Spec, ReviewAction::Edit, None));
    assert!(matches!(r, Err(EngineError::InvalidDecision(_))), "{r:?}");
    let r = engine.submit_review(decision("codec10", ReviewSubject::Patch, ReviewAction::Edit, Some("not a diff")));
    assert!(matches!(r, Err(EngineError::InvalidDecision(_))), "{r:?}");
    // refused decisions leave no trace
    let s = engine.load("codec10").unwrap();
    assert_eq!(s.state, SessionState::AwaitingReview);
    assert!(s.data.reviews.is_empty());
}

#[test]
fn rejected_patch_goes_back_to_mixed_while_budget_remains() {
    let c = Corpus::new();
    let engine = c.engine(&c.replay_options());
    engine.create(c.case("codec10")).unwrap();
    engine.drive("codec10").unwrap();
    let s = engine
        .submit_review(decision("codec10", ReviewSubject::Patch, ReviewAction::Reject, Some("fails for mb123a")))
        .unwrap();
    assert!(is_declared(SessionState::AwaitingReview, s.state));
    assert_eq!(s.state, SessionState::PatchingMixed);
    assert!(s.data.current.is_none());
    assert_eq!(s.data.patching.reviewer_notes.len(), 1);
    assert!(s.data.patching.reviewer_notes[0].ends_with("fails for mb123a"));
}

#[test]
fn rejected_patch_with_spent_budgets_closes_exhausted() {
    let c = Corpus::new();
    let mut cfg = c.config();
    cfg.patch.mixed_attempts = 1;
    let engine = c.engine_with(cfg.clone(), &c.replay_options());
    engine.create(c.case("jackson99")).unwrap();
    engine.drive("jackson99").unwrap();
    let s = engine.load("jackson99").unwrap();
    assert_eq!(s.state, SessionState::AwaitingReview);

    // budget accounting from the attempt log
    let rounds = |mode| {
        s.data
            .patching
            .log
            .iter()
            .filter(|r| r.mode == mode)
            .map(|r| r.round)
            .max()
            .unwrap_or(0)
    };
    assert_eq!(rounds(PatchMode::Plain), cfg.patch.plain_attempts);
    assert_eq!(rounds(PatchMode::Mixed), cfg.patch.mixed_attempts);

    let s = engine
        .submit_review(decision("jackson99", ReviewSubject::Patch, ReviewAction::Reject, None))
        .unwrap();
    assert_eq!(s.state, SessionState::Closed(Outcome::Exhausted));
}

#[test]
fn rejected_spec_closes_rejected() {
    let c = Corpus::new();
    let engine = c.engine(&c.replay_options());
    engine.create(c.case("ring1")).unwrap();
    engine.drive("ring1").unwrap();
    let s = engine
        .submit_review(decision("ring1", ReviewSubject::Spec, ReviewAction::Reject, None))
        .unwrap();
    assert_eq!(s.state, SessionState::Closed(Outcome::Rejected));
}

#[test]
fn edited_patch_is_revalidated() {
    let c = Corpus::new();
    let engine = c.engine(&c.replay_options());
    engine.create(c.case("codec10")).unwrap();
    engine.drive("codec10").unwrap();
    let s = engine.load("codec10").unwrap();
    let diff = s.data.current.as_ref().unwrap().patch.diff.replace(r#"replaceAll("mb", "m2")"#, r#"replaceAll("mb$", "m2")"#);
    let s = engine
        .submit_review(decision("codec10", ReviewSubject::Patch, ReviewAction::Edit, Some(&diff)))
        .unwrap();
    assert_eq!(s.state, SessionState::Validated);
    engine.drive("codec10").unwrap();
    let s = engine.load("codec10").unwrap();
    assert_eq!(s.state, SessionState::AwaitingReview);
    let cur = s.data.current.as_ref().unwrap();
    assert!(cur.edited);
    let v = &cur.judgement.as_ref().unwrap().verdict;
    assert!(v.plausible && !v.overfit_suspected, "{v:?}");
}
