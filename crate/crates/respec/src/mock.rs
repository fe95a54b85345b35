//! Scripted stand-ins for the Java toolchain, used when no JVM is present.
//! Verdicts come from rule files over the (patched) source text, so a
//! pipeline run exercises the real command templates, process handling and
//! output parsing.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use respec_core::index::{extract_file, java_parser, list_java_files};
use respec_core::jml::parse_jml;
use serde::Deserialize;

/// Rules for `mock-test`.
#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TestRules {
    #[serde(rename = "test", default)]
    pub tests: Vec<TestRule>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TestRule {
    /// `Class#method`
    pub id: String,
    /// Project-relative source file holding the method under test.
    pub file: String,
    pub method: String,
    /// Each group needs at least one alternative present. Matching ignores
    /// whitespace.
    #[serde(default)]
    pub requires: Vec<Vec<String>>,
    #[serde(default)]
    pub forbids: Vec<String>,
    /// Printed after the JUnit-style header when the test fails.
    pub failure: String,
}

fn squash(s: &str) -> String {
    s.chars().filter(|c| !c.is_whitespace()).collect()
}

fn method_source(root: &Path, file: &str, method: &str) -> Result<String> {
    let bytes = fs::read(root.join(file)).with_context(|| format!("reading {file}"))?;
    let mut parser = java_parser();
    let ex = extract_file(&mut parser, file, &bytes);
    let found: Vec<String> = ex
        .methods
        .iter()
        .filter(|m| m.method.method_name == method)
        .map(|m| m.source_text.clone())
        .collect();
    if found.is_empty() {
        bail!("method {method} not found in {file}");
    }
    Ok(found.join("\n"))
}

impl TestRule {
    pub fn passes(&self, source: &str) -> bool {
        let s = squash(source);
        self.requires.iter().all(|group| group.iter().any(|alt| s.contains(&squash(alt))))
            && !self.forbids.iter().any(|f| s.contains(&squash(f)))
    }
}

/// Exit code 0 on pass, 1 on failure, 2 on a rule or input problem.
pub fn mock_test(rules: &Path, workdir: &Path, test: &str) -> Result<i32> {
    let text = fs::read_to_string(rules).with_context(|| format!("reading {}", rules.display()))?;
    let rules: TestRules = toml::from_str(&text).with_context(|| format!("parsing {}", rules.display()))?;
    let Some(rule) = rules.tests.iter().find(|r| r.id == test) else {
        eprintln!("no rule for test {test}");
        return Ok(2);
    };
    let source = match method_source(workdir, &rule.file, &rule.method) {
        Ok(s) => s,
        Err(e) => {
            println!("{e:#}");
            return Ok(1);
        }
    };
    let (class, name) = test.split_once('#').unwrap_or((test, ""));
    if rule.passes(&source) {
        println!("JUnit version 4.13.2\n.\nOK (1 test)");
        Ok(0)
    } else {
        println!("JUnit version 4.13.2\n.E\nThere was 1 failure:\n1) {name}({class})");
        println!("{}", rule.failure.trim_end());
        println!("\nFAILURES!!!\nTests run: 1,  Failures: 1");
        Ok(1)
    }
}

/// Rules for `mock-verifier`.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VerifierRules {
    #[serde(rename = "method", default)]
    pub methods: Vec<VerifierRule>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VerifierRule {
    pub class: String,
    pub name: String,
    /// Clause expressions containing any of these (whitespace ignored)
    /// cannot be established against the current body.
    pub unprovable: Vec<String>,
}

struct Annotation {
    text: String,
    /// 1-based line of the first annotation line.
    line: u32,
    end_line: u32,
}

fn annotations(source: &str) -> Vec<Annotation> {
    let lines: Vec<&str> = source.lines().collect();
    let mut out = Vec::new();
    let mut i = 0;
    while i < lines.len() {
        let t = lines[i].trim_start();
        if t.starts_with("/*@") || t.starts_with("/* @") {
            let start = i;
            while i < lines.len() && !lines[i].contains("*/") {
                i += 1;
            }
            let end = i.min(lines.len() - 1);
            out.push(Annotation {
                text: lines[start..=end].join("\n"),
                line: start as u32 + 1,
                end_line: end as u32 + 1,
            });
        } else if t.starts_with("//@") {
            let start = i;
            while i + 1 < lines.len() && lines[i + 1].trim_start().starts_with("//@") {
                i += 1;
            }
            out.push(Annotation {
                text: lines[start..=i].join("\n"),
                line: start as u32 + 1,
                end_line: i as u32 + 1,
            });
        }
        i += 1;
    }
    out
}

/// OpenJML-style output: `file:line: error: ...` for malformed
/// annotations (exit 1), `file:line: verify: ...` for unprovable clauses.
pub fn mock_verifier(rules: Option<&Path>, sourcepath: &Path, file: &Path) -> Result<i32> {
    let rules: VerifierRules = match rules {
        Some(p) => toml::from_str(&fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?)
            .with_context(|| format!("parsing {}", p.display()))?,
        None => VerifierRules::default(),
    };
    let rel = file.strip_prefix(sourcepath).unwrap_or(file).to_string_lossy().replace('\\', "/");
    let source = fs::read_to_string(file).with_context(|| format!("reading {}", file.display()))?;
    let anns = annotations(&source);
    let mut errors = 0;
    for a in &anns {
        let parsed = parse_jml(&a.text);
        for d in &parsed.diagnostics {
            let line = a.line + d.source.map_or(0, |p| p.line.saturating_sub(1));
            println!("{rel}:{line}: error: JML syntax error: {}", d.message);
            errors += 1;
        }
    }
    if errors > 0 {
        println!("{errors} error{}", if errors == 1 { "" } else { "s" });
        return Ok(1);
    }
    let mut parser = java_parser();
    let ex = extract_file(&mut parser, &rel, source.as_bytes());
    for a in &anns {
        let Some(m) = ex
            .methods
            .iter()
            .filter(|m| m.method.line_span.start > a.end_line)
            .min_by_key(|m| m.method.line_span.start)
        else {
            continue;
        };
        let Some(rule) = rules
            .methods
            .iter()
            .find(|r| r.class == m.method.qualified_class && r.name == m.method.method_name)
        else {
            continue;
        };
        for (k, line) in a.text.lines().enumerate() {
            let s = squash(line);
            if line.contains("ensures") && rule.unprovable.iter().any(|u| s.contains(&squash(u))) {
                println!(
                    "{rel}:{}: verify: The prover cannot establish an assertion (Postcondition: {rel}:{}:) in method {}",
                    m.method.line_span.start,
                    a.line + k as u32,
                    m.method.method_name
                );
            }
        }
    }
    Ok(0)
}

/// Syntax check of every Java file under `dir` (`javac` stand-in).
pub fn mock_build(dir: &Path) -> Result<i32> {
    let mut parser = java_parser();
    let mut bad = 0;
    for rel in list_java_files(dir) {
        let path: PathBuf = dir.join(&rel);
        let bytes = fs::read(&path).with_context(|| format!("reading {}", path.display()))?;
        let tree = parser.parse(&bytes, None).context("parser returned no tree")?;
        let mut cursor = tree.walk();
        let mut stack = vec![tree.root_node()];
        while let Some(n) = stack.pop() {
            if n.is_error() || n.is_missing() {
                println!("{rel}:{}: error: syntax error near `{}`", n.start_position().row + 1, n.kind());
                bad += 1;
                break;
            }
            if n.has_error() {
                stack.extend(n.children(&mut cursor));
            }
        }
    }
    if bad > 0 {
        println!("BUILD FAILURE");
        Ok(1)
    } else {
        println!("BUILD SUCCESS");
        Ok(0)
    }
}
