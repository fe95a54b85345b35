//! Domain types shared by every stage of the repair pipeline.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::{Component, Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Current version of the `BugCase` JSON document.
pub const BUG_CASE_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ModelError {
    #[error("path `{0}` must be relative and must not contain `..` segments")]
    InvalidRelativePath(String),
    #[error("line span {start}..={end} is inverted")]
    InvertedSpan { start: u32, end: u32 },
    #[error("duplicate test `{0}` in bug case")]
    DuplicateTest(String),
    #[error("unknown bug category `{0}`")]
    UnknownCategory(String),
    #[error("unsupported bug case schema version {0}")]
    UnsupportedSchema(u32),
    #[error("bug case `{0}` has no provided failing tests")]
    NoFailingTests(String),
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct CaseId(pub String);

impl CaseId {
    pub fn new(id: impl Into<String>) -> Self {
        CaseId(id.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for CaseId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// Normalizes a project-relative path to forward slashes, rejecting
/// absolute paths and `..` segments.
pub fn normalize_rel_path(path: &str) -> Result<String, ModelError> {
    let unified = path.replace('\\', "/");
    let p = Path::new(&unified);
    let mut parts = Vec::new();
    for comp in p.components() {
        match comp {
            Component::Normal(s) => parts.push(s.to_string_lossy().into_owned()),
            Component::CurDir => {}
            _ => return Err(ModelError::InvalidRelativePath(path.to_string())),
        }
    }
    if parts.is_empty() {
        return Err(ModelError::InvalidRelativePath(path.to_string()));
    }
    Ok(parts.join("/"))
}

/// Inclusive, 1-based line range.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct LineSpan {
    pub start: u32,
    pub end: u32,
}

impl LineSpan {
    pub fn new(start: u32, end: u32) -> Result<Self, ModelError> {
        if start > end || start == 0 {
            return Err(ModelError::InvertedSpan { start, end });
        }
        Ok(LineSpan { start, end })
    }

    pub fn contains(&self, line: u32) -> bool {
        self.start <= line && line <= self.end
    }

    pub fn len(&self) -> u32 {
        self.end - self.start + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct MethodRef {
    pub file_path: String,
    pub qualified_class: String,
    pub method_name: String,
    /// Parameter types, comma separated, without parentheses.
    pub signature: String,
    pub line_span: LineSpan,
}

impl MethodRef {
    pub fn new(
        file_path: &str,
        qualified_class: impl Into<String>,
        method_name: impl Into<String>,
        signature: impl Into<String>,
        line_span: LineSpan,
    ) -> Result<Self, ModelError> {
        Ok(MethodRef {
            file_path: normalize_rel_path(file_path)?,
            qualified_class: qualified_class.into(),
            method_name: method_name.into(),
            signature: signature.into(),
            line_span,
        })
    }

    /// `pkg.Class.method`
    pub fn qualified_name(&self) -> String {
        format!("{}.{}", self.qualified_class, self.method_name)
    }

    /// `Class.method` with the package stripped.
    pub fn short_name(&self) -> String {
        let class = self
            .qualified_class
            .rsplit('.')
            .next()
            .unwrap_or(&self.qualified_class);
        format!("{}.{}", class, self.method_name)
    }

    /// Ordering key used wherever results must be listed "by qualified name".
    pub fn name_order_key(&self) -> (String, &str, &str, u32) {
        (
            self.qualified_name(),
            self.signature.as_str(),
            self.file_path.as_str(),
            self.line_span.start,
        )
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        normalize_rel_path(&self.file_path)?;
        LineSpan::new(self.line_span.start, self.line_span.end)?;
        Ok(())
    }
}

impl fmt::Display for MethodRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{}({}) [{}:{}-{}]",
            self.qualified_name(),
            self.signature,
            self.file_path,
            self.line_span.start,
            self.line_span.end
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum TestKind {
    Provided,
    HeldOut,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct TestRef {
    pub qualified_class: String,
    pub test_name: String,
    pub kind: TestKind,
}

impl TestRef {
    pub fn provided(class: impl Into<String>, name: impl Into<String>) -> Self {
        TestRef {
            qualified_class: class.into(),
            test_name: name.into(),
            kind: TestKind::Provided,
        }
    }

    pub fn held_out(class: impl Into<String>, name: impl Into<String>) -> Self {
        TestRef {
            qualified_class: class.into(),
            test_name: name.into(),
            kind: TestKind::HeldOut,
        }
    }

    /// `pkg.Class#method`, the form substituted for `{test}` in command templates.
    pub fn id(&self) -> String {
        format!("{}#{}", self.qualified_class, self.test_name)
    }
}

impl fmt::Display for TestRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.id())
    }
}

macro_rules! bug_categories {
    ($($variant:ident => $label:literal, $title:literal;)*) => {
        /// The thirteen bug types used to break down repair results.
        #[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
        pub enum BugCategory {
            $($variant,)*
        }

        impl BugCategory {
            pub const ALL: [BugCategory; 13] = [$(BugCategory::$variant,)*];

            /// Stable serialized label.
            pub fn label(self) -> &'static str {
                match self {
                    $(BugCategory::$variant => $label,)*
                }
            }

            /// Human-readable row title for report tables.
            pub fn title(self) -> &'static str {
                match self {
                    $(BugCategory::$variant => $title,)*
                }
            }
        }

        impl FromStr for BugCategory {
            type Err = ModelError;

            fn from_str(s: &str) -> Result<Self, Self::Err> {
                match s {
                    $($label => Ok(BugCategory::$variant),)*
                    other => Err(ModelError::UnknownCategory(other.to_string())),
                }
            }
        }
    };
}

bug_categories! {
    LogicError => "LogicError", "Logic error";
    EdgeCaseHandling => "EdgeCaseHandling", "Incorrect handling of edge cases";
    NullPointer => "NullPointer", "Null pointer";
    IndexOutOfBound => "IndexOutOfBound", "Index out of bound";
    ExceptionNotThrown => "ExceptionNotThrown", "Exception/Warning not thrown";
    TypeError => "TypeError", "Type error";
    StringManipulation => "StringManipulation", "String manipulation error";
    InfiniteLoopOrStackOverflow => "InfiniteLoopOrStackOverflow", "Infinite loop / Stack overflow";
    NewLineError => "NewLineError", "New line-related error";
    IntegerOverflow => "IntegerOverflow", "Integer overflow";
    EofError => "EofError", "EOF related error";
    SubclassingError => "SubclassingError", "Subclassing error";
    WrongExceptionThrown => "WrongExceptionThrown", "Wrong exception thrown";
}

impl fmt::Display for BugCategory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl Serialize for BugCategory {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(self.label())
    }
}

impl<'de> Deserialize<'de> for BugCategory {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// One repair task.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BugCase {
    pub schema_version: u32,
    pub case_id: CaseId,
    pub project_root: PathBuf,
    #[serde(default)]
    pub report_text: String,
    /// Provided failing tests plus any held-out tests; see [`TestKind`].
    pub failing_tests: Vec<TestRef>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub buggy_method: Option<MethodRef>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub category: Option<BugCategory>,
}

impl BugCase {
    pub fn provided_tests(&self) -> impl Iterator<Item = &TestRef> {
        self.failing_tests
            .iter()
            .filter(|t| t.kind == TestKind::Provided)
    }

    pub fn held_out_tests(&self) -> impl Iterator<Item = &TestRef> {
        self.failing_tests
            .iter()
            .filter(|t| t.kind == TestKind::HeldOut)
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if self.schema_version != BUG_CASE_SCHEMA_VERSION {
            return Err(ModelError::UnsupportedSchema(self.schema_version));
        }
        let mut seen = BTreeSet::new();
        for t in &self.failing_tests {
            if !seen.insert((&t.qualified_class, &t.test_name)) {
                return Err(ModelError::DuplicateTest(t.id()));
            }
        }
        if let Some(m) = &self.buggy_method {
            m.validate()?;
        }
        Ok(())
    }

    /// Patch generation needs at least one provided failing test.
    pub fn ready_for_patching(&self) -> Result<(), ModelError> {
        if self.provided_tests().next().is_none() {
            return Err(ModelError::NoFailingTests(self.case_id.0.clone()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum PatchMode {
    Plain,
    Mixed,
}

impl fmt::Display for PatchMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PatchMode::Plain => "plain",
            PatchMode::Mixed => "mixed",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct CandidatePatch {
    pub patch_id: String,
    /// Unified diff against the session's pristine snapshot.
    pub diff: String,
    pub origin_mode: PatchMode,
    pub attempt_index: u32,
    pub target: MethodRef,
}

impl CandidatePatch {
    /// Builds a candidate whose id is derived from its content.
    pub fn new(diff: String, origin_mode: PatchMode, attempt_index: u32, target: MethodRef) -> Self {
        let patch_id = crate::digest::short_digest(&[
            diff.as_bytes(),
            origin_mode.to_string().as_bytes(),
            attempt_index.to_string().as_bytes(),
        ]);
        CandidatePatch {
            patch_id,
            diff,
            origin_mode,
            attempt_index,
            target,
        }
    }
}

/// Project file contents keyed by normalized relative path.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Snapshot {
    files: BTreeMap<String, Vec<u8>>,
}

impl Snapshot {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_files<I, K, V>(files: I) -> Self
    where
        I: IntoIterator<Item = (K, V)>,
        K: Into<String>,
        V: Into<Vec<u8>>,
    {
        Snapshot {
            files: files
                .into_iter()
                .map(|(k, v)| (k.into(), v.into()))
                .collect(),
        }
    }

    /// Reads every regular file under `root`, skipping `.respec` and `.git`.
    pub fn load(root: &Path) -> std::io::Result<Self> {
        let mut files = BTreeMap::new();
        for entry in walkdir::WalkDir::new(root)
            .sort_by_file_name()
            .into_iter()
            .filter_entry(|e| {
                let name = e.file_name().to_string_lossy();
                !(e.depth() > 0 && (name == ".respec" || name == ".git"))
            })
        {
            let entry = entry.map_err(std::io::Error::other)?;
            if !entry.file_type().is_file() {
                continue;
            }
            let rel = entry
                .path()
                .strip_prefix(root)
                .map_err(std::io::Error::other)?
                .to_string_lossy()
                .replace('\\', "/");
            files.insert(rel, std::fs::read(entry.path())?);
        }
        Ok(Snapshot { files })
    }

    /// Writes all files below `dir`, creating parents as needed.
    pub fn materialize(&self, dir: &Path) -> std::io::Result<()> {
        for (rel, bytes) in &self.files {
            let path = dir.join(rel);
            if let Some(parent) = path.parent() {
                std::fs::create_dir_all(parent)?;
            }
            std::fs::write(path, bytes)?;
        }
        Ok(())
    }

    pub fn get(&self, path: &str) -> Option<&[u8]> {
        self.files.get(path).map(Vec::as_slice)
    }

    pub fn text(&self, path: &str) -> Option<&str> {
        self.get(path).and_then(|b| std::str::from_utf8(b).ok())
    }

    pub fn insert(&mut self, path: impl Into<String>, bytes: impl Into<Vec<u8>>) {
        self.files.insert(path.into(), bytes.into());
    }

    pub fn remove(&mut self, path: &str) -> Option<Vec<u8>> {
        self.files.remove(path)
    }

    pub fn contains(&self, path: &str) -> bool {
        self.files.contains_key(path)
    }

    pub fn paths(&self) -> impl Iterator<Item = &str> {
        self.files.keys().map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &[u8])> {
        self.files.iter().map(|(k, v)| (k.as_str(), v.as_slice()))
    }

    pub fn len(&self) -> usize {
        self.files.len()
    }

    pub fn is_empty(&self) -> bool {
        self.files.is_empty()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn category_labels_are_a_bijection() {
        let labels: BTreeSet<&str> = BugCategory::ALL.iter().map(|c| c.label()).collect();
        assert_eq!(labels.len(), 13);
        for c in BugCategory::ALL {
            let json = serde_json::to_string(&c).unwrap();
            assert_eq!(json, format!("\"{}\"", c.label()));
            let back: BugCategory = serde_json::from_str(&json).unwrap();
            assert_eq!(back, c);
        }
        assert!("Logic error".parse::<BugCategory>().is_err());
    }

    #[test]
    fn rel_paths_reject_parent_segments() {
        assert_eq!(normalize_rel_path("./src/A.java").unwrap(), "src/A.java");
        assert!(normalize_rel_path("../A.java").is_err());
        assert!(normalize_rel_path("/abs/A.java").is_err());
        assert_eq!(normalize_rel_path("src\\A.java").unwrap(), "src/A.java");
    }

    #[test]
    fn spans_are_ordered() {
        assert!(LineSpan::new(3, 2).is_err());
        assert!(LineSpan::new(0, 2).is_err());
        let s = LineSpan::new(4, 9).unwrap();
        assert!(s.contains(4) && s.contains(9) && !s.contains(10));
        assert_eq!(s.len(), 6);
    }

    #[test]
    fn bug_case_json_is_versioned() {
        let case = BugCase {
            schema_version: BUG_CASE_SCHEMA_VERSION,
            case_id: CaseId::new("Cli-5"),
            project_root: PathBuf::from("projects/cli"),
            report_text: "NPE".into(),
            failing_tests: vec![
                TestRef::provided("org.apache.commons.cli.UtilTest", "testNull"),
                TestRef::held_out("org.apache.commons.cli.UtilTest", "testHidden"),
            ],
            buggy_method: None,
            category: Some(BugCategory::NullPointer),
        };
        let json = serde_json::to_value(&case).unwrap();
        assert_eq!(json["schema_version"], 1);
        assert_eq!(json["category"], "NullPointer");
        let back: BugCase = serde_json::from_value(json).unwrap();
        assert_eq!(back, case);
        assert_eq!(back.provided_tests().count(), 1);
        assert_eq!(back.held_out_tests().count(), 1);
        back.validate().unwrap();
    }

    #[test]
    fn duplicate_tests_rejected() {
        let case = BugCase {
            schema_version: 1,
            case_id: CaseId::new("x"),
            project_root: PathBuf::from("."),
            report_text: String::new(),
            failing_tests: vec![TestRef::provided("A", "t"), TestRef::held_out("A", "t")],
            buggy_method: None,
            category: None,
        };
        assert_eq!(case.validate(), Err(ModelError::DuplicateTest("A#t".into())));
    }
}
