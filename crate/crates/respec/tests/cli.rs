//! The `respec` binary end to end.

mod common;

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use common::{corpus_dir, Corpus};

fn respec(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_respec")).args(args).output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn jml(name: &str) -> String {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("fixtures/jml")
        .join(name)
        .to_string_lossy()
        .into_owned()
}

/// Relative path to file contents for every file under `dir`.
fn tree(dir: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    fn walk(base: &Path, dir: &Path, out: &mut BTreeMap<PathBuf, Vec<u8>>) {
        for e in fs::read_dir(dir).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                walk(base, &p, out);
            } else {
                out.insert(p.strip_prefix(base).unwrap().to_path_buf(), fs::read(&p).unwrap());
            }
        }
    }
    let mut out = BTreeMap::new();
    walk(dir, dir, &mut out);
    out
}

#[test]
fn jml_lint_verdicts() {
    let clean = respec(&["jml", "lint", &jml("cli5.jml")]);
    assert_eq!(clean.status.code(), Some(0));
    assert!(stdout(&clean).is_empty());
    assert_eq!(respec(&["jml", "lint", &jml("codec17.jml")]).status.code(), Some(0));

    let typo = respec(&["jml", "lint", &jml("jackson99.jml")]);
    assert_eq!(typo.status.code(), Some(1));
    assert_eq!(stdout(&typo), "syntax:2:5:unknown JML clause keyword `required`\n");

    let unterminated = respec(&["jml", "lint", &jml("codec10.jml")]);
    assert_eq!(unterminated.status.code(), Some(1));
    assert!(stdout(&unterminated).starts_with("syntax:2:"));

    let assign = respec(&["jml", "lint", &jml("TypeHandler.java")]);
    assert_eq!(assign.status.code(), Some(1));
    assert!(stdout(&assign).starts_with("semantic:4:39:assignment `=`"), "{}", stdout(&assign));

    assert_eq!(respec(&["jml", "lint", "/no/such/file.jml"]).status.code(), Some(2));
}

#[test]
fn run_replays_identically_and_reports() {
    let c = Corpus::new();
    let cases = c.root().join("cases.json");
    let transcripts = c.root().join("transcripts");
    let run = c.run_dir();
    let args = [
        "run",
        cases.to_str().unwrap(),
        "--replay-dir",
        transcripts.to_str().unwrap(),
        "--run-dir",
        run.to_str().unwrap(),
        "--logical-clock",
        "--parallel",
        "3",
    ];
    let first = respec(&args);
    assert_eq!(first.status.code(), Some(0), "{}", String::from_utf8_lossy(&first.stderr));
    let out = stdout(&first);
    assert!(out.contains("codec10") && out.contains("overfit-suspected"), "{out}");
    let a = tree(&run);
    fs::remove_dir_all(&run).unwrap();
    let second = respec(&args);
    assert_eq!(second.status.code(), Some(0));
    let b = tree(&run);
    assert_eq!(a.keys().collect::<Vec<_>>(), b.keys().collect::<Vec<_>>());
    for (path, bytes) in &a {
        assert!(b[path] == *bytes, "{} differs between runs", path.display());
    }

    let csv = respec(&["report", run.to_str().unwrap(), "--format", "csv"]);
    assert_eq!(csv.status.code(), Some(0));
    let text = stdout(&csv);
    assert!(text.starts_with("category,total,fixed_plain,fixed_ours\n"));
    assert!(text.contains("\nStringManipulation,3,1,2\n"), "{text}");
    assert!(text.ends_with("Total,6,4,5\n"), "{text}");
    let table = stdout(&respec(&["report", run.to_str().unwrap()]));
    assert!(table.contains("String manipulation error"));
    assert!(table.contains("plausible: plain 66.7%, mixed 83.3%"), "{table}");
}

#[test]
fn checked_in_transcripts_match_the_script() {
    let c = Corpus::new();
    let transcripts = c.root().join("transcripts");
    fs::remove_dir_all(&transcripts).unwrap();
    let cases = c.root().join("cases.json");
    let script = c.root().join("script");
    let run = c.run_dir();
    let o = respec(&[
        "run",
        cases.to_str().unwrap(),
        "--script-dir",
        script.to_str().unwrap(),
        "--run-dir",
        run.to_str().unwrap(),
        "--logical-clock",
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let recorded = tree(&transcripts);
    let checked_in = tree(&corpus_dir().join("transcripts"));
    assert_eq!(recorded.keys().collect::<Vec<_>>(), checked_in.keys().collect::<Vec<_>>());
    assert!(recorded == checked_in);
}

#[test]
fn transcript_store_verification() {
    let c = Corpus::new();
    let dir = c.root().join("transcripts");
    let ok = respec(&["llm", "verify-store", "--dir", dir.to_str().unwrap()]);
    assert_eq!(ok.status.code(), Some(0));

    let victim = fs::read_dir(&dir).unwrap().next().unwrap().unwrap().path();
    let text = fs::read_to_string(&victim).unwrap().replace("\"temperature\": 0.0", "\"temperature\": 0.5");
    fs::write(&victim, text).unwrap();
    let bad = respec(&["llm", "verify-store", "--dir", dir.to_str().unwrap()]);
    assert_eq!(bad.status.code(), Some(1));
    assert!(stdout(&bad).contains(victim.file_stem().unwrap().to_str().unwrap()));
}

#[test]
fn spec_repair_and_validate_commands() {
    let c = Corpus::new();
    let config = c.root().join("respec.toml");
    let cases = c.root().join("cases.json");
    let transcripts = c.root().join("transcripts");
    let run = c.run_dir();
    let common = |cmd: &str, id: &str| {
        vec![
            "--config".to_string(),
            config.to_string_lossy().into_owned(),
            cmd.to_string(),
            id.to_string(),
            "--cases".into(),
            cases.to_string_lossy().into_owned(),
            "--run-dir".into(),
            run.to_string_lossy().into_owned(),
            "--replay-dir".into(),
            transcripts.to_string_lossy().into_owned(),
            "--logical-clock".into(),
        ]
    };
    let args = common("spec", "jackson99");
    let o = respec(&args.iter().map(String::as_str).collect::<Vec<_>>());
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let out = stdout(&o);
    assert!(out.contains("-- iteration 1 (SpecDefect)"), "{out}");
    assert!(out.contains("-- iteration 2 (BugSignal)"), "{out}");
    assert!(out.contains("settled: Some(BugSignal)"), "{out}");

    let args = common("repair", "jackson99");
    let o = respec(&args.iter().map(String::as_str).collect::<Vec<_>>());
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let attempts: Vec<serde_json::Value> = stdout(&o)
        .lines()
        .filter(|l| l.starts_with('{'))
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    assert_eq!(attempts.len(), 4);
    assert_eq!(attempts[3]["mode"], "Mixed");
    assert_eq!(attempts[3]["verdict"]["plausible"], true);

    let diff = "--- a/src/main/java/com/fasterxml/jackson/databind/type/ReferenceType.java
+++ b/src/main/java/com/fasterxml/jackson/databind/type/ReferenceType.java
@@ -14,5 +14,6 @@
         sb.append(_class.getName());
         sb.append('<');
         sb.append(_referencedType.getName());
+        sb.append('>');
         return sb.toString();
     }
";
    let patch = c.dir.path().join("fix.diff");
    fs::write(&patch, diff).unwrap();
    let o = respec(&[
        "--config",
        config.to_str().unwrap(),
        "validate",
        "jackson99",
        patch.to_str().unwrap(),
        "--cases",
        cases.to_str().unwrap(),
        "--run-dir",
        run.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}{}", stdout(&o), String::from_utf8_lossy(&o.stderr));
    let v: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(v["plausible"], true);
    assert_eq!(v["overfit_suspected"], false);
}

#[test]
fn index_command_prints_a_timing_row() {
    let c = Corpus::new();
    let root = c.root().join("projects/slug3");
    let out = c.dir.path().join("slug3.json");
    let o = respec(&["index", root.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let text = stdout(&o);
    let mut lines = text.lines();
    let header = lines.next().unwrap();
    let row = lines.next().unwrap();
    assert_eq!(header.split(',').count(), row.split(',').count());
    assert!(out.exists());

    let slug = root.join("src/main/java/org/example/text/Slug.java");
    let o = respec(&[
        "index",
        root.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
        "--update",
        "--changed",
        slug.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
}
