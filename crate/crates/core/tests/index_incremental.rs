mod support;

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use respec_core::clock::LogicalClock;
use respec_core::index::{build_index, public_api_of_imports, update_index, CodeIndex, Visibility};
use support::corpus::Corpus;
use support::oracle::{reachable, scan_declarations};

fn declarations(idx: &CodeIndex) -> BTreeSet<(String, String, u32)> {
    idx.methods
        .keys()
        .map(|m| (m.file_path.clone(), m.method_name.clone(), m.line_span.start))
        .collect()
}

#[test]
fn method_table_matches_regex_scanner() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = Corpus::generate(dir.path(), 7, 200);
    let idx = build_index(dir.path(), &[], &LogicalClock::new()).unwrap();
    assert_eq!(idx.files.len(), 200);
    assert_eq!(idx.method_count(), corpus.method_count());
    assert_eq!(declarations(&idx), scan_declarations(dir.path()));
}

#[test]
fn call_edges_match_model() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = Corpus::generate(dir.path(), 11, 60);
    let idx = build_index(dir.path(), &[], &LogicalClock::new()).unwrap();
    let mut adj: BTreeMap<String, Vec<String>> = BTreeMap::new();
    for c in corpus.classes.values() {
        for m in &c.methods {
            adj.entry(m.name.clone()).or_default().extend(m.calls.iter().map(|(_, n)| n.clone()));
        }
    }
    for r in idx.methods.keys().take(40) {
        for depth in [1, 2, 50] {
            let got: BTreeSet<String> = idx
                .callees_of(r, depth)
                .unwrap()
                .iter()
                .map(|m| m.method.method_name.clone())
                .collect();
            assert_eq!(got, reachable(&adj, &r.method_name, depth), "{} depth {depth}", r.method_name);
        }
    }
}

#[test]
fn updates_equal_rebuild_over_random_edits() {
    let dir = tempfile::tempdir().unwrap();
    let mut corpus = Corpus::generate(dir.path(), 42, 200);
    let clock = LogicalClock::new();
    let mut idx = build_index(dir.path(), &[], &clock).unwrap();
    for _ in 0..20 {
        let before: BTreeMap<_, _> = idx.methods.clone();
        let changed = corpus.random_edit();
        let next = update_index(&idx, dir.path(), std::slice::from_ref(&changed), &clock).unwrap();
        let full = build_index(dir.path(), &[], &clock).unwrap();
        assert_eq!(next, full, "after editing {}", changed.display());
        // records of untouched files are the same allocations
        let changed = changed.to_string_lossy().to_string();
        for (r, rec) in &next.methods {
            if r.file_path != changed {
                assert!(std::sync::Arc::ptr_eq(rec, &before[r]));
            }
        }
        idx = next;
    }
}

#[test]
fn deleting_a_file_drops_its_methods_and_edges() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = Corpus::generate(dir.path(), 3, 30);
    let victim = corpus.classes.values().find(|c| c.methods.len() == 4).expect("seed has a 4-method class");
    let rel = victim.rel_path();
    let clock = LogicalClock::new();
    let idx = build_index(dir.path(), &[], &clock).unwrap();
    fs::remove_file(dir.path().join(&rel)).unwrap();
    let next = update_index(&idx, dir.path(), &[PathBuf::from(&rel)], &clock).unwrap();
    assert_eq!(next.method_count(), idx.method_count() - 4);
    assert!(next
        .call_edges
        .iter()
        .all(|(f, to)| next.methods.contains_key(f) && to.iter().all(|t| next.methods.contains_key(t))));
    assert_eq!(next, build_index(dir.path(), &[], &clock).unwrap());
}

#[test]
fn builds_are_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    Corpus::generate(dir.path(), 5, 50);
    let a = build_index(dir.path(), &[], &LogicalClock::new()).unwrap();
    let b = build_index(dir.path(), &[], &LogicalClock::new()).unwrap();
    assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
}

fn write(root: &Path, rel: &str, body: &str) {
    let p = root.join(rel);
    fs::create_dir_all(p.parent().unwrap()).unwrap();
    fs::write(p, body).unwrap();
}

#[test]
fn callee_chain_and_library_calls() {
    let dir = tempfile::tempdir().unwrap();
    write(
        dir.path(),
        "src/C.java",
        "class C {\n  String f(String s) { return g(s).substring(1); }\n  String g(String s) { return h(s); }\n  String h(String s) { return s.trim(); }\n  void none() {}\n}\n",
    );
    let idx = build_index(dir.path(), &[], &LogicalClock::new()).unwrap();
    let f = idx.find("C.f")[0].method.clone();
    let names = |d| {
        idx.callees_of(&f, d)
            .unwrap()
            .iter()
            .map(|m| m.method.method_name.clone())
            .collect::<Vec<_>>()
    };
    assert_eq!(names(1), vec!["g"]);
    assert_eq!(names(2), vec!["g", "h"]);
    let none = idx.find("C.none")[0].method.clone();
    assert!(idx.callees_of(&none, 3).unwrap().is_empty());
}

const LIB: &str = "package org.ex;\npublic class Lib {\n  public Lib() {}\n  public static int max(int a, int b) { return a; }\n  public String name() { return null; }\n  public static final int LIMIT = 3;\n  protected void p() {}\n  private void q() {}\n  void r() {}\n  public int size() { return 0; }\n}\n";

#[test]
fn public_api_restricted_to_imports() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path().join("proj");
    write(&root, "src/App.java", "import org.ex.Lib;\nclass App { int run() { return Lib.max(1, 2); } }\n");
    write(&dir.path().join("deps/exlib"), "org/ex/Lib.java", LIB);
    write(
        &dir.path().join("deps/other"),
        "org/other/Unused.java",
        "package org.other;\npublic class Unused { public void u() {} }\n",
    );
    let deps = vec![dir.path().join("deps/exlib"), dir.path().join("deps/other"), dir.path().join("deps/missing")];
    let (api, diags) = public_api_of_imports(&root, &deps);
    assert_eq!(api.len(), 5, "{api:#?}");
    assert!(api.iter().all(|e| e.library_id == "exlib" && e.qualified_class == "org.ex.Lib"));
    assert_eq!(diags.len(), 1);

    // oracle: grep the import lines, intersect with the classes each library defines
    let imported: BTreeSet<String> = fs::read_to_string(root.join("src/App.java"))
        .unwrap()
        .lines()
        .filter_map(|l| l.strip_prefix("import ").map(|r| r.trim_end_matches(';').to_string()))
        .collect();
    let libs: BTreeSet<String> = api.iter().map(|e| e.qualified_class.clone()).collect();
    assert!(libs.is_subset(&imported));

    let idx = build_index(&root, &deps, &LogicalClock::new()).unwrap();
    assert_eq!(idx.api, api);

    let bare = dir.path().join("bare");
    write(&bare, "A.java", "class A { void a() {} }\n");
    assert!(public_api_of_imports(&bare, &deps).0.is_empty());
}

#[test]
fn one_class_two_public_one_private() {
    let dir = tempfile::tempdir().unwrap();
    write(dir.path(), "K.java", "public class K {\n public void a() {}\n public int b() { return 1; }\n private void c() {}\n}\n");
    let idx = build_index(dir.path(), &[], &LogicalClock::new()).unwrap();
    assert_eq!(idx.method_count(), 3);
    assert_eq!(idx.methods.values().filter(|m| m.visibility == Visibility::Public).count(), 2);
}

/// Median single-file update time over 5 runs, as a fraction of the median
/// full build time.
pub fn update_ratio(files: usize) -> (f64, f64, f64) {
    let dir = tempfile::tempdir().unwrap();
    let mut corpus = Corpus::generate(dir.path(), 99, files);
    let clock = LogicalClock::new();
    let mut idx = build_index(dir.path(), &[], &clock).unwrap();
    let mut full = Vec::new();
    let mut upd = Vec::new();
    for _ in 0..5 {
        let changed = corpus.random_edit();
        let t = Instant::now();
        let next = update_index(&idx, dir.path(), &[changed], &clock).unwrap();
        upd.push(t.elapsed().as_secs_f64());
        let t = Instant::now();
        let _ = build_index(dir.path(), &[], &clock).unwrap();
        full.push(t.elapsed().as_secs_f64());
        idx = next;
    }
    full.sort_by(f64::total_cmp);
    upd.sort_by(f64::total_cmp);
    (upd[2] / full[2], upd[2], full[2])
}

#[test]
fn single_file_update_is_cheap() {
    let (ratio, upd, full) = update_ratio(200);
    eprintln!("update {upd:.4}s full {full:.4}s ratio {ratio:.3}");
    assert!(ratio < 0.10);
}
