//! Independent oracles: a regex declaration scanner and a brute-force
//! reachability search. Neither shares code with the indexer.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::Path;

use regex::Regex;

/// (relative path, method name, 1-based line) for every declaration the
/// scanner recognises.
pub fn scan_declarations(root: &Path) -> BTreeSet<(String, String, u32)> {
    let decl = Regex::new(
        r"^\s*(?:(?:public|protected|private|static|final|synchronized|abstract)\s+)*[A-Za-z_][\w<>\[\], ]*\s+([a-z_]\w*)\s*\([^;{]*\)\s*(?:throws [\w., ]+)?\{",
    )
    .unwrap();
    let keywords = ["if", "for", "while", "switch", "catch", "return", "new", "else"];
    let mut out = BTreeSet::new();
    for entry in walkdir::WalkDir::new(root).into_iter().filter_map(Result::ok) {
        let p = entry.path();
        if p.extension().is_none_or(|e| e != "java")
            || p.components().any(|c| c.as_os_str().to_string_lossy().starts_with(".respec"))
        {
            continue;
        }
        let rel = p.strip_prefix(root).unwrap().to_string_lossy().replace('\\', "/");
        let text = fs::read_to_string(p).unwrap();
        for (i, line) in text.lines().enumerate() {
            if let Some(c) = decl.captures(line) {
                let name = c[1].to_string();
                if keywords.contains(&name.as_str()) || line.trim_start().starts_with("return") {
                    continue;
                }
                out.insert((rel.clone(), name, i as u32 + 1));
            }
        }
    }
    out
}

/// Breadth-first reachability within `depth`, excluding the start node.
pub fn reachable<N: Ord + Clone>(adj: &BTreeMap<N, Vec<N>>, start: &N, depth: usize) -> BTreeSet<N> {
    let mut seen = BTreeSet::new();
    let mut frontier = vec![start.clone()];
    for _ in 0..depth {
        let mut next = Vec::new();
        for n in &frontier {
            for m in adj.get(n).into_iter().flatten() {
                if m != start && seen.insert(m.clone()) {
                    next.push(m.clone());
                }
            }
        }
        frontier = next;
    }
    seen
}
