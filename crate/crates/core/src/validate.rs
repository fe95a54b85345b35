//! Running tests against patched snapshots, deciding plausibility and
//! held-out overfitting, and ranking suspicious methods from failure logs.

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::{Arc, LazyLock};
use std::time::{Duration, Instant};

use rayon::prelude::*;
use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::clock::Clock;
use crate::diff::{apply_patch, parse_unified_diff, DiffError};
use crate::index::CodeIndex;
use crate::model::{BugCase, BugCategory, CandidatePatch, MethodRef, Snapshot, TestKind, TestRef};
use crate::proc::{self, ProcError};

#[derive(Debug, thiserror::Error)]
pub enum ValidateError {
    #[error("build failed")]
    BuildFailed { log: String },
    #[error(transparent)]
    Proc(#[from] ProcError),
    #[error("patch does not apply: {0}")]
    Patch(#[from] DiffError),
    #[error("cannot prepare work directory {path}: {source}")]
    Workdir {
        path: PathBuf,
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TestStatus {
    Pass,
    Fail,
    Timeout,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestResult {
    pub test: TestRef,
    pub status: TestStatus,
    pub duration_secs: f64,
    pub log: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestRun {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub build_log: Option<String>,
    pub results: Vec<TestResult>,
}

impl TestRun {
    /// Logs of every test that did not pass, in request order.
    pub fn failure_logs(&self) -> String {
        let mut out = String::new();
        for r in self.results.iter().filter(|r| r.status != TestStatus::Pass) {
            out.push_str(&format!("== {} ({:?})\n", r.test.id(), r.status));
            out.push_str(&r.log);
            if !r.log.ends_with('\n') {
                out.push('\n');
            }
        }
        out
    }
}

#[derive(Debug, Clone)]
pub struct TestRunner {
    pub test_command: String,
    pub build_command: Option<String>,
    pub parallel_safe: bool,
    pub max_parallel: usize,
    pub timeout: Duration,
    /// Extra placeholder values, e.g. `respec` and `config_dir`.
    pub vars: Vec<(String, String)>,
    pub clock: Arc<dyn Clock>,
}

impl TestRunner {
    fn vars_for<'a>(&'a self, workdir: &'a str, extra: &[(&'a str, &'a str)]) -> Vec<(&'a str, &'a str)> {
        let mut v: Vec<(&str, &str)> = self.vars.iter().map(|(k, v)| (k.as_str(), v.as_str())).collect();
        v.push(("workdir", workdir));
        v.extend_from_slice(extra);
        v
    }

    /// Materializes `snapshot` in `workdir`, builds it if a build command is
    /// configured, then runs each test through the command template.
    pub fn run_tests(
        &self,
        snapshot: &Snapshot,
        workdir: &Path,
        tests: &[TestRef],
        timeout: Duration,
    ) -> Result<TestRun, ValidateError> {
        if tests.is_empty() {
            return Ok(TestRun {
                build_log: None,
                results: Vec::new(),
            });
        }
        let werr = |source| ValidateError::Workdir {
            path: workdir.to_path_buf(),
            source,
        };
        if workdir.exists() {
            fs::remove_dir_all(workdir).map_err(werr)?;
        }
        fs::create_dir_all(workdir).map_err(werr)?;
        snapshot.materialize(workdir).map_err(werr)?;
        let wd = workdir.to_string_lossy().into_owned();

        let mut build_log = None;
        if let Some(cmd) = &self.build_command {
            let argv = proc::render_template(cmd, &self.vars_for(&wd, &[]))?;
            let out = proc::run(&argv, workdir, timeout)?;
            if !out.success() {
                return Err(ValidateError::BuildFailed { log: out.combined() });
            }
            build_log = Some(out.combined());
        }

        let run_one = |t: &TestRef| -> Result<TestResult, ValidateError> {
            let id = t.id();
            let argv = proc::render_template(
                &self.test_command,
                &self.vars_for(
                    &wd,
                    &[("test", &id), ("class", &t.qualified_class), ("method", &t.test_name)],
                ),
            )?;
            let start = Instant::now();
            let out = proc::run(&argv, workdir, timeout)?;
            let status = if out.timed_out {
                TestStatus::Timeout
            } else if out.exit_code == Some(0) {
                TestStatus::Pass
            } else {
                TestStatus::Fail
            };
            Ok(TestResult {
                test: t.clone(),
                status,
                duration_secs: self.clock.elapsed_secs(start),
                log: out.combined(),
            })
        };
        let results: Result<Vec<TestResult>, ValidateError> = if self.parallel_safe && tests.len() > 1 {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(self.max_parallel.max(1))
                .build()
                .expect("thread pool");
            pool.install(|| tests.par_iter().map(run_one).collect())
        } else {
            tests.iter().map(run_one).collect()
        };
        Ok(TestRun {
            build_log,
            results: results?,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum ProvidedResult {
    AllPass,
    Failures(Vec<TestRef>),
    BuildFailed,
    Timeout,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum HeldOutResult {
    AllPass,
    Failures(Vec<TestRef>),
    NotRun,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PatchVerdict {
    pub patch_id: String,
    pub provided_result: ProvidedResult,
    pub heldout_result: HeldOutResult,
    pub plausible: bool,
    pub overfit_suspected: bool,
}

impl PatchVerdict {
    /// The only constructor; derives the two flags from the results.
    pub fn new(patch_id: impl Into<String>, provided: ProvidedResult, heldout: HeldOutResult) -> Self {
        let plausible = provided == ProvidedResult::AllPass;
        let overfit_suspected = plausible && matches!(heldout, HeldOutResult::Failures(_));
        PatchVerdict {
            patch_id: patch_id.into(),
            provided_result: provided,
            heldout_result: heldout,
            plausible,
            overfit_suspected,
        }
    }

    pub fn invariants_hold(&self) -> bool {
        self.plausible == (self.provided_result == ProvidedResult::AllPass)
            && self.overfit_suspected
                == (self.plausible && matches!(self.heldout_result, HeldOutResult::Failures(_)))
    }

    pub fn short(&self) -> &'static str {
        match (self.plausible, self.overfit_suspected) {
            (true, true) => "plausible, overfit suspected",
            (true, false) => "plausible",
            (false, _) => match self.provided_result {
                ProvidedResult::BuildFailed => "build failed",
                ProvidedResult::Timeout => "timeout",
                _ => "failing",
            },
        }
    }
}

pub fn summarize_provided(run: &TestRun) -> ProvidedResult {
    let failed: Vec<TestRef> = run
        .results
        .iter()
        .filter(|r| r.status == TestStatus::Fail)
        .map(|r| r.test.clone())
        .collect();
    if !failed.is_empty() {
        let mut all: Vec<TestRef> = run
            .results
            .iter()
            .filter(|r| r.status != TestStatus::Pass)
            .map(|r| r.test.clone())
            .collect();
        all.dedup();
        return ProvidedResult::Failures(all);
    }
    if run.results.iter().any(|r| r.status == TestStatus::Timeout) {
        return ProvidedResult::Timeout;
    }
    ProvidedResult::AllPass
}

pub fn summarize_heldout(run: Option<&TestRun>) -> HeldOutResult {
    let Some(run) = run else {
        return HeldOutResult::NotRun;
    };
    if run.results.is_empty() {
        return HeldOutResult::NotRun;
    }
    let bad: Vec<TestRef> = run
        .results
        .iter()
        .filter(|r| r.status != TestStatus::Pass)
        .map(|r| r.test.clone())
        .collect();
    if bad.is_empty() {
        HeldOutResult::AllPass
    } else {
        HeldOutResult::Failures(bad)
    }
}

/// Verdict plus the evidence behind it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Judgement {
    pub verdict: PatchVerdict,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub provided_run: Option<TestRun>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub heldout_run: Option<TestRun>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub build_log: Option<String>,
}

/// Per-test timeout for a case: doubled for infinite-loop/stack-overflow bugs.
pub fn case_timeout(base: Duration, category: Option<BugCategory>) -> Duration {
    if category == Some(BugCategory::InfiniteLoopOrStackOverflow) {
        base * 2
    } else {
        base
    }
}

/// Applies `patch`, runs the provided tests and, only when they all pass,
/// the held-out tests.
pub fn judge(
    patch: &CandidatePatch,
    case: &BugCase,
    pristine: &Snapshot,
    runner: &TestRunner,
    workdir: &Path,
) -> Result<Judgement, ValidateError> {
    let parsed = parse_unified_diff(&patch.diff)?;
    let patched = apply_patch(pristine, &parsed)?;
    let timeout = case_timeout(runner.timeout, case.category);
    let provided: Vec<TestRef> = case.provided_tests().cloned().collect();
    let provided_run = match runner.run_tests(&patched, workdir, &provided, timeout) {
        Ok(run) => run,
        Err(ValidateError::BuildFailed { log }) => {
            return Ok(Judgement {
                verdict: PatchVerdict::new(&patch.patch_id, ProvidedResult::BuildFailed, HeldOutResult::NotRun),
                provided_run: None,
                heldout_run: None,
                build_log: Some(log),
            })
        }
        Err(e) => return Err(e),
    };
    let provided_result = summarize_provided(&provided_run);
    let held: Vec<TestRef> = case.held_out_tests().cloned().collect();
    let heldout_run = if provided_result == ProvidedResult::AllPass && !held.is_empty() {
        match runner.run_tests(&patched, workdir, &held, timeout) {
            Ok(run) => Some(run),
            Err(ValidateError::BuildFailed { log }) => Some(TestRun {
                build_log: Some(log.clone()),
                results: held
                    .iter()
                    .map(|t| TestResult {
                        test: t.clone(),
                        status: TestStatus::Fail,
                        duration_secs: 0.0,
                        log: log.clone(),
                    })
                    .collect(),
            }),
            Err(e) => return Err(e),
        }
    } else {
        None
    };
    let verdict = PatchVerdict::new(
        &patch.patch_id,
        provided_result,
        summarize_heldout(heldout_run.as_ref()),
    );
    debug_assert!(verdict.invariants_hold());
    Ok(Judgement {
        verdict,
        build_log: provided_run.build_log.clone(),
        provided_run: Some(provided_run),
        heldout_run,
    })
}

static EXC_HEADER: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r"^\s*(?:Exception in thread \S+ )?(Caused by: )?([\w$.]*[\w$](?:Exception|Error|Throwable))\b(?::.*)?$").unwrap()
});
static FRAME: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"^\s*at ([\w$.]+)\.([\w$<>]+)\(([^):]*)(?::(\d+))?\)").unwrap());
static IDENT: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"[A-Za-z_][\w$]*").unwrap());

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Frame {
    pub class: String,
    pub method: String,
    pub line: Option<u32>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StackTrace {
    pub exception: String,
    pub caused_by: bool,
    pub frames: Vec<Frame>,
}

pub fn parse_stack_traces(logs: &str) -> Vec<StackTrace> {
    let mut out: Vec<StackTrace> = Vec::new();
    for line in logs.lines() {
        if let Some(c) = EXC_HEADER.captures(line) {
            out.push(StackTrace {
                exception: c[2].to_string(),
                caused_by: c.get(1).is_some(),
                frames: Vec::new(),
            });
        } else if let Some(c) = FRAME.captures(line) {
            if let Some(t) = out.last_mut() {
                t.frames.push(Frame {
                    class: c[1].replace('$', "."),
                    method: c[2].to_string(),
                    line: c.get(4).and_then(|m| m.as_str().parse().ok()),
                });
            }
        }
    }
    out
}

fn is_test_class(class: &str, test_classes: &BTreeSet<&str>) -> bool {
    let simple = class.rsplit('.').next().unwrap_or(class);
    test_classes.contains(class) || simple.ends_with("Test") || simple.ends_with("Tests") || simple.starts_with("Test")
}

/// Ranks suspicious in-project methods: frames of the deepest stack trace
/// first, then methods named in assertion messages, then callees of the
/// failing tests.
pub fn localize_from_failures(case: &BugCase, index: &CodeIndex, failure_logs: &str) -> Vec<MethodRef> {
    let test_classes: BTreeSet<&str> = case.failing_tests.iter().map(|t| t.qualified_class.as_str()).collect();
    let candidate = |m: &MethodRef| !is_test_class(&m.qualified_class, &test_classes);
    let mut ranked: Vec<MethodRef> = Vec::new();
    let push = |ranked: &mut Vec<MethodRef>, m: MethodRef| {
        if !ranked.contains(&m) {
            ranked.push(m);
        }
    };

    // Tier 1: root causes before wrappers, longer traces before shorter.
    let mut traces: Vec<(usize, StackTrace)> = parse_stack_traces(failure_logs).into_iter().enumerate().collect();
    let is_root = |i: usize, t: &StackTrace, all: &[(usize, StackTrace)]| {
        t.caused_by || all.get(i + 1).is_none_or(|(_, n)| !n.caused_by)
    };
    let roots: Vec<bool> = traces.iter().map(|(i, t)| is_root(*i, t, &traces)).collect();
    let mut order: Vec<usize> = (0..traces.len()).collect();
    order.sort_by_key(|&k| (!roots[k], std::cmp::Reverse(traces[k].1.frames.len()), k));
    for k in order {
        let trace = std::mem::replace(
            &mut traces[k].1,
            StackTrace { exception: String::new(), caused_by: false, frames: Vec::new() },
        );
        for f in trace.frames {
            let mut hits: Vec<&MethodRef> = index
                .methods
                .keys()
                .filter(|m| {
                    let simple_class = m.qualified_class.rsplit('.').next().unwrap_or("");
                    m.qualified_class == f.class
                        && (m.method_name == f.method || (f.method == "<init>" && m.method_name == simple_class))
                })
                .filter(|m| candidate(m))
                .collect();
            if let Some(line) = f.line {
                if hits.iter().any(|m| m.line_span.contains(line)) {
                    hits.retain(|m| m.line_span.contains(line));
                }
            }
            for m in hits {
                push(&mut ranked, m.clone());
            }
        }
    }

    // Tier 2: identifiers in assertion messages that name project methods.
    let mut named: BTreeSet<MethodRef> = BTreeSet::new();
    for line in failure_logs.lines() {
        let lower = line.to_ascii_lowercase();
        if !(lower.contains("assert") || lower.contains("expected") || lower.contains("comparisonfailure")) {
            continue;
        }
        for id in IDENT.find_iter(line) {
            let id = id.as_str();
            if id.len() < 3 {
                continue;
            }
            for m in index.methods.keys().filter(|m| m.method_name == id && candidate(m)) {
                named.insert(m.clone());
            }
        }
    }
    let mut named: Vec<MethodRef> = named.into_iter().collect();
    named.sort_by(|a, b| a.name_order_key().cmp(&b.name_order_key()));
    for m in named {
        push(&mut ranked, m);
    }

    // Tier 3: what the failing tests call.
    let mut callees: BTreeSet<MethodRef> = BTreeSet::new();
    for t in case.provided_tests() {
        for m in index.methods.keys().filter(|m| m.qualified_class == t.qualified_class && m.method_name == t.test_name) {
            if let Ok(cs) = index.callees_of(m, 1) {
                callees.extend(cs.iter().map(|c| c.method.clone()).filter(candidate));
            }
        }
    }
    let mut callees: Vec<MethodRef> = callees.into_iter().collect();
    callees.sort_by(|a, b| a.name_order_key().cmp(&b.name_order_key()));
    for m in callees {
        push(&mut ranked, m);
    }
    ranked
}

/// Case file path that held-out tests never leak into prompts: true when
/// `test` is one of the case's held-out tests.
pub fn is_held_out(case: &BugCase, class: &str, name: &str) -> bool {
    case.failing_tests
        .iter()
        .any(|t| t.kind == TestKind::HeldOut && t.qualified_class == class && t.test_name == name)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::clock::LogicalClock;
    use proptest::prelude::*;

    fn runner(cmd: &str) -> TestRunner {
        TestRunner {
            test_command: cmd.into(),
            build_command: None,
            parallel_safe: false,
            max_parallel: 2,
            timeout: Duration::from_secs(10),
            vars: Vec::new(),
            clock: Arc::new(LogicalClock::new()),
        }
    }

    #[test]
    fn runs_each_test_in_workdir() {
        let dir = tempfile::tempdir().unwrap();
        let snap = Snapshot::from_files([("Flag.txt", "on")]);
        // passes iff the test name appears in Flag.txt
        let r = runner("sh -c 'grep -q {method} Flag.txt || { echo missing {test}; exit 1; }'");
        let tests = vec![TestRef::provided("T", "on"), TestRef::provided("T", "off")];
        let run = r.run_tests(&snap, &dir.path().join("w"), &tests, Duration::from_secs(5)).unwrap();
        assert_eq!(run.results[0].status, TestStatus::Pass);
        assert_eq!(run.results[1].status, TestStatus::Fail);
        assert_eq!(run.results[1].log, "missing T#off\n");
        assert_eq!(summarize_provided(&run), ProvidedResult::Failures(vec![tests[1].clone()]));
        assert!(r.run_tests(&snap, &dir.path().join("w"), &[], Duration::from_secs(5)).unwrap().results.is_empty());
        // parallel execution produces the same results in request order
        let mut par = r.clone();
        par.parallel_safe = true;
        let again = par.run_tests(&snap, &dir.path().join("w2"), &tests, Duration::from_secs(5)).unwrap();
        assert_eq!(again, run);
    }

    #[test]
    fn timeouts_and_build_failures() {
        let dir = tempfile::tempdir().unwrap();
        let snap = Snapshot::from_files([("a", "x")]);
        let r = runner("sh -c 'sleep 5' {test}");
        let run = r
            .run_tests(&snap, &dir.path().join("w"), &[TestRef::provided("T", "t")], Duration::from_millis(200))
            .unwrap();
        assert_eq!(run.results[0].status, TestStatus::Timeout);
        assert_eq!(summarize_provided(&run), ProvidedResult::Timeout);

        let mut b = runner("true {test}");
        b.build_command = Some("sh -c 'echo cannot compile; exit 2'".into());
        let err = b
            .run_tests(&snap, &dir.path().join("w"), &[TestRef::provided("T", "t")], Duration::from_secs(5))
            .unwrap_err();
        assert!(matches!(err, ValidateError::BuildFailed { log } if log.contains("cannot compile")));
        assert_eq!(case_timeout(Duration::from_secs(60), Some(BugCategory::InfiniteLoopOrStackOverflow)), Duration::from_secs(120));
        assert_eq!(case_timeout(Duration::from_secs(60), Some(BugCategory::NullPointer)), Duration::from_secs(60));
    }

    fn arb_test() -> impl Strategy<Value = TestRef> {
        ("[A-C]", "t[0-9]").prop_map(|(c, n)| TestRef::provided(c, n))
    }

    fn arb_provided() -> impl Strategy<Value = ProvidedResult> {
        prop_oneof![
            Just(ProvidedResult::AllPass),
            prop::collection::vec(arb_test(), 1..3).prop_map(ProvidedResult::Failures),
            Just(ProvidedResult::BuildFailed),
            Just(ProvidedResult::Timeout),
        ]
    }

    fn arb_heldout() -> impl Strategy<Value = HeldOutResult> {
        prop_oneof![
            Just(HeldOutResult::AllPass),
            prop::collection::vec(arb_test(), 1..3).prop_map(HeldOutResult::Failures),
            Just(HeldOutResult::NotRun),
        ]
    }

    proptest! {
        #[test]
        fn verdict_invariants(p in arb_provided(), h in arb_heldout()) {
            let v = PatchVerdict::new("p", p.clone(), h.clone());
            prop_assert!(v.invariants_hold());
            prop_assert_eq!(v.plausible, p == ProvidedResult::AllPass);
            prop_assert_eq!(v.overfit_suspected, v.plausible && matches!(h, HeldOutResult::Failures(_)));
        }

        #[test]
        fn summaries_match_tallies(statuses in prop::collection::vec(0u8..3, 0..6)) {
            let results: Vec<TestResult> = statuses.iter().enumerate().map(|(i, s)| TestResult {
                test: TestRef::provided("C", format!("t{i}")),
                status: [TestStatus::Pass, TestStatus::Fail, TestStatus::Timeout][*s as usize],
                duration_secs: 0.0,
                log: String::new(),
            }).collect();
            let run = TestRun { build_log: None, results };
            let fails = statuses.iter().filter(|s| **s == 1).count();
            let timeouts = statuses.iter().filter(|s| **s == 2).count();
            let expected = if fails > 0 {
                "failures"
            } else if timeouts > 0 {
                "timeout"
            } else {
                "pass"
            };
            let got = match summarize_provided(&run) {
                ProvidedResult::AllPass => "pass",
                ProvidedResult::Failures(f) => { prop_assert_eq!(f.len(), fails + timeouts); "failures" }
                ProvidedResult::Timeout => "timeout",
                ProvidedResult::BuildFailed => "build",
            };
            prop_assert_eq!(got, expected);
            let held = summarize_heldout(Some(&run));
            prop_assert_eq!(matches!(held, HeldOutResult::Failures(_)), fails + timeouts > 0);
        }
    }

    #[test]
    fn parses_nested_traces() {
        let log = "java.lang.RuntimeException: wrap\n\tat a.B.c(B.java:3)\nCaused by: java.lang.NullPointerException\n\tat a.D$E.f(D.java:9)\n\tat a.D.<init>(D.java:2)\n";
        let t = parse_stack_traces(log);
        assert_eq!(t.len(), 2);
        assert!(t[1].caused_by);
        assert_eq!(t[1].frames[0], Frame { class: "a.D.E".into(), method: "f".into(), line: Some(9) });
        assert_eq!(t[1].frames[1].method, "<init>");
    }
}
