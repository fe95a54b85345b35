//! Project code index: method table, textual call edges and the public API of
//! imported libraries. Java sources are parsed with tree-sitter, which keeps
//! going on code that does not compile.

use std::collections::{BTreeMap, BTreeSet, HashMap, VecDeque};
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use chrono::{DateTime, Utc};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use tree_sitter::{Node, Parser};

use crate::clock::Clock;
use crate::digest::{digest_parts, sha256_hex};
use crate::model::{normalize_rel_path, LineSpan, MethodRef};

pub const INDEX_VERSION: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum IndexError {
    #[error("no Java sources under {0}")]
    NoSources(PathBuf),
    #[error("index is stale: {0}")]
    StaleIndex(String),
    #[error("unknown method {0}")]
    UnknownMethod(String),
    #[error("unsupported index version {0}")]
    UnsupportedVersion(u32),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("index file is not valid JSON: {0}")]
    Json(#[from] serde_json::Error),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> IndexError + '_ {
    move |source| IndexError::Io {
        path: path.to_path_buf(),
        source,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Visibility {
    Public,
    Protected,
    PackagePrivate,
    Private,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Parameter {
    pub type_name: String,
    pub name: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct MethodRecord {
    #[serde(rename = "ref")]
    pub method: MethodRef,
    pub visibility: Visibility,
    pub parameters: Vec<Parameter>,
    /// `None` for constructors.
    pub return_type: Option<String>,
    pub source_text: String,
    /// `Type.name` when the receiver type is known textually, `?.name`
    /// otherwise. Sorted, no duplicates.
    pub callee_names: Vec<String>,
    pub content_hash: String,
}

impl MethodRecord {
    fn callee_simple_names(&self) -> impl Iterator<Item = &str> {
        self.callee_names.iter().map(|c| callee_parts(c).1)
    }
}

fn callee_parts(callee: &str) -> (&str, &str) {
    callee.rsplit_once('.').unwrap_or(("?", callee))
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ApiEntry {
    pub library_id: String,
    pub qualified_class: String,
    pub member_signature: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Import {
    pub path: String,
    pub is_static: bool,
    pub wildcard: bool,
}

impl Import {
    /// True when `qualified_class` becomes visible through this import.
    pub fn covers(&self, qualified_class: &str) -> bool {
        let target = if self.is_static && !self.wildcard {
            self.path.rsplit_once('.').map(|(c, _)| c).unwrap_or(&self.path)
        } else {
            &self.path
        };
        if self.wildcard && !self.is_static {
            return qualified_class
                .strip_prefix(target)
                .is_some_and(|rest| rest.starts_with('.'));
        }
        qualified_class == target
            || qualified_class
                .strip_prefix(target)
                .is_some_and(|rest| rest.starts_with('.'))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileEntry {
    pub hash: String,
    pub package: Option<String>,
    pub imports: Vec<Import>,
    pub methods: Vec<MethodRef>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub diagnostics: Vec<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CodeIndex {
    pub index_version: u32,
    pub project_fingerprint: String,
    pub files: BTreeMap<String, FileEntry>,
    #[serde(with = "method_table")]
    pub methods: BTreeMap<MethodRef, Arc<MethodRecord>>,
    pub api: Vec<ApiEntry>,
    /// Every public member found in the dependency directories, before
    /// filtering by what the project imports.
    pub library_catalog: Vec<ApiEntry>,
    #[serde(with = "edge_table")]
    pub call_edges: BTreeMap<MethodRef, BTreeSet<MethodRef>>,
    pub built_at: DateTime<Utc>,
    pub updated_at: DateTime<Utc>,
    pub build_duration: f64,
}

impl PartialEq for CodeIndex {
    /// Structural equality, timestamps and duration excluded.
    fn eq(&self, other: &Self) -> bool {
        self.index_version == other.index_version
            && self.project_fingerprint == other.project_fingerprint
            && self.files == other.files
            && self.methods == other.methods
            && self.api == other.api
            && self.library_catalog == other.library_catalog
            && self.call_edges == other.call_edges
    }
}

mod method_table {
    use super::*;
    use serde::{Deserializer, Serializer};

    pub fn serialize<S: Serializer>(
        map: &BTreeMap<MethodRef, Arc<MethodRecord>>,
        s: S,
    ) -> Result<S::Ok, S::Error> {
        s.collect_seq(map.values())
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(
        d: D,
    ) -> Result<BTreeMap<MethodRef, Arc<MethodRecord>>, D::Error> {
        let v: Vec<MethodRecord> = Vec::deserialize(d)?;
        Ok(v.into_iter()
            .map(|r| (r.method.clone(), Arc::new(r)))
            .collect())
    }
}

mod edge_table {
    use super::*;
    use serde::{Deserializer, Serializer};

    #[derive(Serialize, Deserialize)]
    struct Edges {
        from: MethodRef,
        to: Vec<MethodRef>,
    }

    pub fn serialize<S: Serializer>(
        map: &BTreeMap<MethodRef, BTreeSet<MethodRef>>,
        s: S,
    ) -> Result<S::Ok, S::Error> {
        s.collect_seq(map.iter().map(|(from, to)| Edges {
            from: from.clone(),
            to: to.iter().cloned().collect(),
        }))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(
        d: D,
    ) -> Result<BTreeMap<MethodRef, BTreeSet<MethodRef>>, D::Error> {
        let v: Vec<Edges> = Vec::deserialize(d)?;
        Ok(v.into_iter()
            .map(|e| (e.from, e.to.into_iter().collect()))
            .collect())
    }
}

pub fn java_parser() -> Parser {
    let mut p = Parser::new();
    p.set_language(&tree_sitter_java::LANGUAGE.into())
        .expect("tree-sitter-java grammar is ABI compatible");
    p
}

fn text<'a>(node: Node, src: &'a [u8]) -> &'a str {
    node.utf8_text(src).unwrap_or("")
}

fn collapse_ws(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// `java.util.List<String>` → `List`, `byte[]` stays `byte[]`.
fn simple_type(t: &str) -> String {
    let base = t.split('<').next().unwrap_or(t).trim();
    base.rsplit('.').next().unwrap_or(base).to_string()
}

const TYPE_DECLS: &[&str] = &[
    "class_declaration",
    "interface_declaration",
    "enum_declaration",
    "record_declaration",
    "annotation_type_declaration",
];

fn modifier_words(node: Node, src: &[u8]) -> Vec<String> {
    let mut out = Vec::new();
    let mut cur = node.walk();
    for child in node.children(&mut cur) {
        if child.kind() == "modifiers" {
            let mut c2 = child.walk();
            for m in child.children(&mut c2) {
                if !m.kind().contains("annotation") {
                    out.push(text(m, src).to_string());
                }
            }
        }
    }
    out
}

fn visibility_of(mods: &[String], in_interface: bool) -> Visibility {
    if mods.iter().any(|m| m == "public") {
        Visibility::Public
    } else if mods.iter().any(|m| m == "protected") {
        Visibility::Protected
    } else if mods.iter().any(|m| m == "private") {
        Visibility::Private
    } else if in_interface {
        Visibility::Public
    } else {
        Visibility::PackagePrivate
    }
}

/// Everything extracted from one source file.
#[derive(Debug, Clone)]
pub struct FileExtract {
    pub path: String,
    pub entry: FileEntry,
    pub methods: Vec<MethodRecord>,
}

struct TypeScope {
    qualified: String,
    simple: String,
    fields: HashMap<String, String>,
    interface: bool,
}

struct Extractor<'a> {
    src: &'a [u8],
    path: &'a str,
    package: Option<String>,
    methods: Vec<MethodRecord>,
}

impl<'a> Extractor<'a> {
    fn visit_program(&mut self, root: Node) {
        let mut cur = root.walk();
        for child in root.named_children(&mut cur) {
            if TYPE_DECLS.contains(&child.kind()) {
                self.visit_type(child, None);
            }
        }
    }

    fn visit_type(&mut self, node: Node, outer: Option<&str>) {
        let Some(name) = node.child_by_field_name("name") else {
            return;
        };
        let simple = text(name, self.src).to_string();
        let nested = match outer {
            Some(o) => format!("{o}.{simple}"),
            None => simple.clone(),
        };
        let qualified = match &self.package {
            Some(p) => format!("{p}.{nested}"),
            None => nested.clone(),
        };
        let Some(body) = node.child_by_field_name("body") else {
            return;
        };
        let mut scope = TypeScope {
            qualified,
            simple,
            fields: HashMap::new(),
            interface: matches!(
                node.kind(),
                "interface_declaration" | "annotation_type_declaration"
            ),
        };
        if let Some(params) = node.child_by_field_name("parameters") {
            for p in collect_params(params, self.src) {
                scope.fields.insert(p.name, simple_type(&p.type_name));
            }
        }
        let members = body_members(body);
        for m in &members {
            if m.kind() == "field_declaration" || m.kind() == "constant_declaration" {
                let ty = m
                    .child_by_field_name("type")
                    .map(|t| simple_type(text(t, self.src)))
                    .unwrap_or_default();
                let mut cur = m.walk();
                for d in m.children_by_field_name("declarator", &mut cur) {
                    if let Some(n) = d.child_by_field_name("name") {
                        scope.fields.insert(text(n, self.src).to_string(), ty.clone());
                    }
                }
            }
        }
        for m in members {
            match m.kind() {
                "method_declaration" | "constructor_declaration"
                | "compact_constructor_declaration" => self.visit_method(m, &scope),
                k if TYPE_DECLS.contains(&k) => self.visit_type(m, Some(&nested)),
                _ => {}
            }
        }
    }

    fn visit_method(&mut self, node: Node, scope: &TypeScope) {
        let is_ctor = node.kind() != "method_declaration";
        let method_name = if is_ctor {
            scope.simple.clone()
        } else {
            match node.child_by_field_name("name") {
                Some(n) => text(n, self.src).to_string(),
                None => return,
            }
        };
        let parameters = node
            .child_by_field_name("parameters")
            .map(|p| collect_params(p, self.src))
            .unwrap_or_default();
        let signature = format!(
            "({})",
            parameters
                .iter()
                .map(|p| p.type_name.as_str())
                .collect::<Vec<_>>()
                .join(", ")
        );
        let return_type = if is_ctor {
            None
        } else {
            node.child_by_field_name("type").map(|t| {
                let mut s = collapse_ws(text(t, self.src));
                if let Some(d) = node.child_by_field_name("dimensions") {
                    s.push_str(text(d, self.src));
                }
                s
            })
        };
        let mods = modifier_words(node, self.src);
        let source_text = text(node, self.src).to_string();
        let mut locals: HashMap<String, String> = HashMap::new();
        for p in &parameters {
            locals.insert(p.name.clone(), simple_type(&p.type_name));
        }
        collect_locals(node, self.src, &mut locals);
        let mut callees = BTreeSet::new();
        collect_calls(node, self.src, scope, &locals, &mut callees);
        let span = LineSpan {
            start: node.start_position().row as u32 + 1,
            end: node.end_position().row as u32 + 1,
        };
        self.methods.push(MethodRecord {
            method: MethodRef {
                file_path: self.path.to_string(),
                qualified_class: scope.qualified.clone(),
                method_name,
                signature,
                line_span: span,
            },
            visibility: visibility_of(&mods, scope.interface),
            parameters,
            return_type,
            content_hash: sha256_hex(source_text.as_bytes()),
            source_text,
            callee_names: callees.into_iter().collect(),
        });
    }
}

fn body_members(body: Node) -> Vec<Node> {
    let mut out = Vec::new();
    let mut cur = body.walk();
    for child in body.named_children(&mut cur) {
        if child.kind() == "enum_body_declarations" {
            let mut c2 = child.walk();
            out.extend(child.named_children(&mut c2));
        } else {
            out.push(child);
        }
    }
    out
}

fn collect_params(params: Node, src: &[u8]) -> Vec<Parameter> {
    let mut out = Vec::new();
    let mut cur = params.walk();
    for p in params.named_children(&mut cur) {
        match p.kind() {
            "formal_parameter" => {
                let ty = p
                    .child_by_field_name("type")
                    .map(|t| collapse_ws(text(t, src)))
                    .unwrap_or_default();
                let dims = p
                    .child_by_field_name("dimensions")
                    .map(|d| text(d, src).to_string())
                    .unwrap_or_default();
                let name = p
                    .child_by_field_name("name")
                    .map(|n| text(n, src).to_string())
                    .unwrap_or_default();
                out.push(Parameter {
                    type_name: format!("{ty}{dims}"),
                    name,
                });
            }
            "spread_parameter" => {
                let mut ty = String::new();
                let mut name = String::new();
                let mut c2 = p.walk();
                for c in p.named_children(&mut c2) {
                    if c.kind() == "variable_declarator" {
                        if let Some(n) = c.child_by_field_name("name") {
                            name = text(n, src).to_string();
                        }
                    } else if c.kind() != "modifiers" && ty.is_empty() {
                        ty = collapse_ws(text(c, src));
                    }
                }
                out.push(Parameter {
                    type_name: format!("{ty}..."),
                    name,
                });
            }
            _ => {}
        }
    }
    out
}

fn collect_locals(node: Node, src: &[u8], out: &mut HashMap<String, String>) {
    let mut stack = vec![node];
    while let Some(n) = stack.pop() {
        match n.kind() {
            "local_variable_declaration" | "resource" => {
                if let Some(t) = n.child_by_field_name("type") {
                    let ty = simple_type(text(t, src));
                    if ty != "var" {
                        let mut cur = n.walk();
                        for d in n.children_by_field_name("declarator", &mut cur) {
                            if let Some(name) = d.child_by_field_name("name") {
                                out.insert(text(name, src).to_string(), ty.clone());
                            }
                        }
                        if let Some(name) = n.child_by_field_name("name") {
                            out.insert(text(name, src).to_string(), ty.clone());
                        }
                    }
                }
            }
            "enhanced_for_statement" => {
                if let (Some(t), Some(name)) =
                    (n.child_by_field_name("type"), n.child_by_field_name("name"))
                {
                    let ty = simple_type(text(t, src));
                    if ty != "var" {
                        out.insert(text(name, src).to_string(), ty);
                    }
                }
            }
            "catch_formal_parameter" => {
                if let Some(name) = n.child_by_field_name("name") {
                    let mut cur = n.walk();
                    let ct = n.named_children(&mut cur).find(|c| c.kind() == "catch_type");
                    if let Some(ct) = ct {
                        out.insert(text(name, src).to_string(), simple_type(text(ct, src)));
                    }
                }
            }
            _ => {}
        }
        let mut cur = n.walk();
        stack.extend(n.named_children(&mut cur));
    }
}

fn collect_calls(
    node: Node,
    src: &[u8],
    scope: &TypeScope,
    locals: &HashMap<String, String>,
    out: &mut BTreeSet<String>,
) {
    let mut stack = vec![node];
    while let Some(n) = stack.pop() {
        match n.kind() {
            "method_invocation" => {
                if let Some(name) = n.child_by_field_name("name") {
                    let name = text(name, src);
                    let receiver = match n.child_by_field_name("object") {
                        None => scope.simple.clone(),
                        Some(o) => receiver_type(o, src, scope, locals),
                    };
                    out.insert(format!("{receiver}.{name}"));
                }
            }
            "object_creation_expression" => {
                if let Some(t) = n.child_by_field_name("type") {
                    let ty = simple_type(text(t, src));
                    out.insert(format!("{ty}.{ty}"));
                }
            }
            _ => {}
        }
        let mut cur = n.walk();
        stack.extend(n.named_children(&mut cur));
    }
}

fn receiver_type(
    obj: Node,
    src: &[u8],
    scope: &TypeScope,
    locals: &HashMap<String, String>,
) -> String {
    match obj.kind() {
        "this" => scope.simple.clone(),
        "identifier" => {
            let id = text(obj, src);
            if let Some(t) = locals.get(id).or_else(|| scope.fields.get(id)) {
                t.clone()
            } else if id.chars().next().is_some_and(char::is_uppercase) {
                id.to_string()
            } else {
                "?".to_string()
            }
        }
        "field_access" => {
            let is_this = obj
                .child_by_field_name("object")
                .is_some_and(|o| o.kind() == "this");
            match obj.child_by_field_name("field") {
                Some(f) if is_this => scope
                    .fields
                    .get(text(f, src))
                    .cloned()
                    .unwrap_or_else(|| "?".into()),
                _ => "?".into(),
            }
        }
        _ => "?".into(),
    }
}

fn collect_header(root: Node, src: &[u8]) -> (Option<String>, Vec<Import>) {
    let mut package = None;
    let mut imports = BTreeSet::new();
    let mut cur = root.walk();
    for child in root.named_children(&mut cur) {
        match child.kind() {
            "package_declaration" => {
                let mut c2 = child.walk();
                package = child
                    .named_children(&mut c2)
                    .find(|c| matches!(c.kind(), "scoped_identifier" | "identifier"))
                    .map(|c| text(c, src).to_string());
            }
            "import_declaration" => {
                let mut path = None;
                let mut is_static = false;
                let mut wildcard = false;
                let mut c2 = child.walk();
                for c in child.children(&mut c2) {
                    match c.kind() {
                        "static" => is_static = true,
                        "asterisk" => wildcard = true,
                        "scoped_identifier" | "identifier" => {
                            path = Some(text(c, src).to_string())
                        }
                        _ => {}
                    }
                }
                if let Some(path) = path {
                    imports.insert(Import {
                        path,
                        is_static,
                        wildcard,
                    });
                }
            }
            _ => {}
        }
    }
    (package, imports.into_iter().collect())
}

/// Parses one file. `rel_path` is the project-relative path recorded in
/// method refs.
pub fn extract_file(parser: &mut Parser, rel_path: &str, bytes: &[u8]) -> FileExtract {
    let hash = sha256_hex(bytes);
    let mut diagnostics = Vec::new();
    let Ok(src) = std::str::from_utf8(bytes) else {
        tracing::warn!(file = rel_path, "skipping non UTF-8 source");
        diagnostics.push("not valid UTF-8; file skipped".to_string());
        return FileExtract {
            path: rel_path.to_string(),
            entry: FileEntry {
                hash,
                package: None,
                imports: Vec::new(),
                methods: Vec::new(),
                diagnostics,
            },
            methods: Vec::new(),
        };
    };
    let Some(tree) = parser.parse(src, None) else {
        diagnostics.push("parser produced no tree; file skipped".to_string());
        return FileExtract {
            path: rel_path.to_string(),
            entry: FileEntry {
                hash,
                package: None,
                imports: Vec::new(),
                methods: Vec::new(),
                diagnostics,
            },
            methods: Vec::new(),
        };
    };
    let root = tree.root_node();
    if root.has_error() {
        tracing::debug!(file = rel_path, "syntax errors; indexing what parsed");
        diagnostics.push("syntax errors; declarations inside them were skipped".to_string());
    }
    let (package, imports) = collect_header(root, src.as_bytes());
    let mut ex = Extractor {
        src: src.as_bytes(),
        path: rel_path,
        package: package.clone(),
        methods: Vec::new(),
    };
    ex.visit_program(root);
    let mut methods = ex.methods;
    methods.sort_by(|a, b| a.method.cmp(&b.method));
    FileExtract {
        path: rel_path.to_string(),
        entry: FileEntry {
            hash,
            package,
            imports,
            methods: methods.iter().map(|m| m.method.clone()).collect(),
            diagnostics,
        },
        methods,
    }
}

/// Project-relative paths of every `.java` file, skipping hidden directories.
pub fn list_java_files(root: &Path) -> Vec<String> {
    let mut out: Vec<String> = walkdir::WalkDir::new(root)
        .into_iter()
        .filter_entry(|e| e.depth() == 0 || !e.file_name().to_string_lossy().starts_with('.'))
        .filter_map(Result::ok)
        .filter(|e| e.file_type().is_file() && e.path().extension().is_some_and(|x| x == "java"))
        .filter_map(|e| {
            let rel = e.path().strip_prefix(root).ok()?;
            normalize_rel_path(&rel.to_string_lossy()).ok()
        })
        .collect();
    out.sort();
    out
}

fn extract_many(root: &Path, paths: &[String]) -> Result<Vec<FileExtract>, IndexError> {
    paths
        .par_iter()
        .map_init(java_parser, |parser, rel| {
            let abs = root.join(rel);
            let bytes = fs::read(&abs).map_err(io_err(&abs))?;
            Ok(extract_file(parser, rel, &bytes))
        })
        .collect()
}

fn fingerprint(files: &BTreeMap<String, FileEntry>) -> String {
    let mut parts: Vec<&[u8]> = Vec::with_capacity(files.len() * 2);
    for (path, entry) in files {
        parts.push(path.as_bytes());
        parts.push(entry.hash.as_bytes());
    }
    digest_parts(&parts)
}

/// Resolves one callee name against the method table. Overloads resolve to
/// every same-name candidate.
fn resolve_callee(callee: &str, by_name: &HashMap<&str, Vec<&MethodRef>>) -> Vec<MethodRef> {
    let (recv, name) = callee_parts(callee);
    let Some(cands) = by_name.get(name) else {
        return Vec::new();
    };
    cands
        .iter()
        .filter(|m| recv == "?" || m.qualified_class.rsplit('.').next() == Some(recv))
        .map(|m| (*m).clone())
        .collect()
}

fn names_table(methods: &BTreeMap<MethodRef, Arc<MethodRecord>>) -> HashMap<&str, Vec<&MethodRef>> {
    let mut by_name: HashMap<&str, Vec<&MethodRef>> = HashMap::new();
    for m in methods.keys() {
        by_name.entry(m.method_name.as_str()).or_default().push(m);
    }
    by_name
}

fn edges_for(record: &MethodRecord, by_name: &HashMap<&str, Vec<&MethodRef>>) -> BTreeSet<MethodRef> {
    record
        .callee_names
        .iter()
        .flat_map(|c| resolve_callee(c, by_name))
        .collect()
}

fn filter_api(catalog: &[ApiEntry], files: &BTreeMap<String, FileEntry>) -> Vec<ApiEntry> {
    let imports: BTreeSet<&Import> = files.values().flat_map(|f| f.imports.iter()).collect();
    catalog
        .iter()
        .filter(|e| imports.iter().any(|i| i.covers(&e.qualified_class)))
        .cloned()
        .collect()
}

/// Full build over every Java file under `root`.
pub fn build_index(
    root: &Path,
    dependency_dirs: &[PathBuf],
    clock: &dyn Clock,
) -> Result<CodeIndex, IndexError> {
    let start = Instant::now();
    let paths = list_java_files(root);
    if paths.is_empty() {
        return Err(IndexError::NoSources(root.to_path_buf()));
    }
    let extracts = extract_many(root, &paths)?;
    let mut files = BTreeMap::new();
    let mut methods = BTreeMap::new();
    for ex in extracts {
        for d in &ex.entry.diagnostics {
            tracing::info!(file = %ex.path, "{d}");
        }
        for m in ex.methods {
            methods.insert(m.method.clone(), Arc::new(m));
        }
        files.insert(ex.path, ex.entry);
    }
    let by_name = names_table(&methods);
    let call_edges = methods
        .values()
        .filter_map(|r| {
            let to = edges_for(r, &by_name);
            (!to.is_empty()).then(|| (r.method.clone(), to))
        })
        .collect();
    let (library_catalog, _) = library_catalog(dependency_dirs);
    let api = filter_api(&library_catalog, &files);
    let now = clock.now();
    Ok(CodeIndex {
        index_version: INDEX_VERSION,
        project_fingerprint: fingerprint(&files),
        files,
        methods,
        api,
        library_catalog,
        call_edges,
        built_at: now,
        updated_at: now,
        build_duration: clock.elapsed_secs(start),
    })
}

fn check_fresh(index: &CodeIndex, root: &Path, changed: &BTreeSet<String>) -> Result<(), IndexError> {
    if fingerprint(&index.files) != index.project_fingerprint {
        return Err(IndexError::StaleIndex(
            "fingerprint does not match the recorded file set".into(),
        ));
    }
    let current: BTreeSet<String> = list_java_files(root).into_iter().collect();
    for p in current.difference(&changed.clone()) {
        if !index.files.contains_key(p) {
            return Err(IndexError::StaleIndex(format!("{p} is new but not listed as changed")));
        }
    }
    let unchanged: Vec<(&String, &FileEntry)> = index
        .files
        .iter()
        .filter(|(p, _)| !changed.contains(*p))
        .collect();
    unchanged.par_iter().try_for_each(|(p, entry)| {
        let bytes = fs::read(root.join(p))
            .map_err(|_| IndexError::StaleIndex(format!("{p} disappeared but not listed as changed")))?;
        if sha256_hex(&bytes) != entry.hash {
            return Err(IndexError::StaleIndex(format!("{p} changed but not listed as changed")));
        }
        Ok(())
    })
}

/// Re-indexes `changed` (which may include deleted files) and re-resolves
/// only the call edges that can be affected. The result equals a full
/// rebuild of the new tree, timestamps aside.
pub fn update_index(
    index: &CodeIndex,
    root: &Path,
    changed: &[PathBuf],
    clock: &dyn Clock,
) -> Result<CodeIndex, IndexError> {
    let start = Instant::now();
    let mut changed_rel = BTreeSet::new();
    for c in changed {
        let rel = c.strip_prefix(root).unwrap_or(c);
        let rel = normalize_rel_path(&rel.to_string_lossy())
            .map_err(|e| IndexError::StaleIndex(e.to_string()))?;
        changed_rel.insert(rel);
    }
    check_fresh(index, root, &changed_rel)?;
    let mut next = index.clone();
    if changed_rel.is_empty() {
        next.updated_at = clock.now();
        return Ok(next);
    }

    let mut affected_names: BTreeSet<String> = BTreeSet::new();
    let mut removed_refs: BTreeSet<MethodRef> = BTreeSet::new();
    for rel in &changed_rel {
        if let Some(old) = next.files.remove(rel) {
            for m in old.methods {
                affected_names.insert(m.method_name.clone());
                next.methods.remove(&m);
                next.call_edges.remove(&m);
                removed_refs.insert(m);
            }
        }
    }
    let present: Vec<String> = changed_rel
        .iter()
        .filter(|rel| {
            rel.ends_with(".java") && root.join(rel).is_file()
        })
        .cloned()
        .collect();
    let mut fresh: Vec<MethodRef> = Vec::new();
    for ex in extract_many(root, &present)? {
        for m in ex.methods {
            affected_names.insert(m.method.method_name.clone());
            fresh.push(m.method.clone());
            next.methods.insert(m.method.clone(), Arc::new(m));
        }
        next.files.insert(ex.path, ex.entry);
    }

    let by_name = names_table(&next.methods);
    let mut recompute: BTreeSet<&MethodRef> = fresh.iter().collect();
    for (r, rec) in &next.methods {
        if rec
            .callee_simple_names()
            .any(|n| affected_names.contains(n))
        {
            recompute.insert(r);
        }
    }
    let mut updates = Vec::with_capacity(recompute.len());
    for r in recompute {
        updates.push((r.clone(), edges_for(&next.methods[r], &by_name)));
    }
    for (r, to) in updates {
        if to.is_empty() {
            next.call_edges.remove(&r);
        } else {
            next.call_edges.insert(r, to);
        }
    }

    next.api = filter_api(&next.library_catalog, &next.files);
    next.project_fingerprint = fingerprint(&next.files);
    next.updated_at = clock.now();
    next.build_duration = clock.elapsed_secs(start);
    Ok(next)
}

impl CodeIndex {
    pub fn method(&self, r: &MethodRef) -> Option<&Arc<MethodRecord>> {
        self.methods.get(r)
    }

    /// Finds a method by `Class.name` or `pkg.Class.name`, optionally with a
    /// parenthesised signature.
    pub fn find(&self, name: &str) -> Vec<&Arc<MethodRecord>> {
        let (base, sig) = match name.find('(') {
            Some(i) => (&name[..i], Some(&name[i..])),
            None => (name, None),
        };
        self.methods
            .values()
            .filter(|m| {
                let q = m.method.qualified_name();
                let matches_name = q == base
                    || q.ends_with(&format!(".{base}"))
                    || m.method.short_name() == base;
                matches_name && sig.is_none_or(|s| s == m.method.signature)
            })
            .collect()
    }

    /// In-project callees reachable within `depth` call edges, ordered by
    /// qualified name.
    pub fn callees_of(&self, method: &MethodRef, depth: usize) -> Result<Vec<&Arc<MethodRecord>>, IndexError> {
        if !self.methods.contains_key(method) {
            return Err(IndexError::UnknownMethod(method.qualified_name()));
        }
        let mut seen: BTreeSet<&MethodRef> = BTreeSet::new();
        let mut queue = VecDeque::from([(method, 0usize)]);
        while let Some((m, d)) = queue.pop_front() {
            if d == depth {
                continue;
            }
            if let Some(next) = self.call_edges.get(m) {
                for n in next {
                    if n != method && seen.insert(n) {
                        queue.push_back((n, d + 1));
                    }
                }
            }
        }
        let mut out: Vec<&Arc<MethodRecord>> = seen.into_iter().filter_map(|r| self.methods.get(r)).collect();
        out.sort_by(|a, b| a.method.name_order_key().cmp(&b.method.name_order_key()));
        Ok(out)
    }

    /// Callers of `method` (reverse edges), ordered by qualified name.
    pub fn callers_of(&self, method: &MethodRef) -> Vec<&Arc<MethodRecord>> {
        let mut out: Vec<&Arc<MethodRecord>> = self
            .call_edges
            .iter()
            .filter(|(_, to)| to.contains(method))
            .filter_map(|(from, _)| self.methods.get(from))
            .collect();
        out.sort_by(|a, b| a.method.name_order_key().cmp(&b.method.name_order_key()));
        out
    }

    pub fn method_count(&self) -> usize {
        self.methods.len()
    }

    /// `project,method_count,seconds`
    pub fn timing_row(&self, project: &str) -> String {
        format!("{project},{},{:.3}", self.methods.len(), self.build_duration)
    }

    pub fn save(&self, path: &Path) -> Result<(), IndexError> {
        let dir = path.parent().unwrap_or(Path::new("."));
        fs::create_dir_all(dir).map_err(io_err(dir))?;
        let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(io_err(dir))?;
        serde_json::to_writer(&mut tmp, self)?;
        tmp.write_all(b"\n").map_err(io_err(path))?;
        tmp.persist(path).map_err(|e| IndexError::Io {
            path: path.to_path_buf(),
            source: e.error,
        })?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<CodeIndex, IndexError> {
        let bytes = fs::read(path).map_err(io_err(path))?;
        let value: serde_json::Value = serde_json::from_slice(&bytes)?;
        let version = value.get("index_version").and_then(|v| v.as_u64()).unwrap_or(0) as u32;
        if version != INDEX_VERSION {
            return Err(IndexError::UnsupportedVersion(version));
        }
        Ok(serde_json::from_value(value)?)
    }
}

/// Default index location for a project.
pub fn default_index_path(root: &Path) -> PathBuf {
    root.join(".respec").join("index").join("index.json")
}

fn member_signature(node: Node, src: &[u8], class_simple: &str) -> Option<String> {
    let mods = modifier_words(node, src);
    let statik = if mods.iter().any(|m| m == "static") { "static " } else { "" };
    match node.kind() {
        "method_declaration" => {
            let name = text(node.child_by_field_name("name")?, src);
            let ret = collapse_ws(text(node.child_by_field_name("type")?, src));
            let params = collect_params(node.child_by_field_name("parameters")?, src);
            let tys: Vec<&str> = params.iter().map(|p| p.type_name.as_str()).collect();
            Some(format!("{statik}{ret} {name}({})", tys.join(", ")))
        }
        "constructor_declaration" => {
            let params = collect_params(node.child_by_field_name("parameters")?, src);
            let tys: Vec<&str> = params.iter().map(|p| p.type_name.as_str()).collect();
            Some(format!("{class_simple}({})", tys.join(", ")))
        }
        "field_declaration" | "constant_declaration" => {
            let ty = collapse_ws(text(node.child_by_field_name("type")?, src));
            let mut cur = node.walk();
            let names: Vec<&str> = node
                .children_by_field_name("declarator", &mut cur)
                .filter_map(|d| d.child_by_field_name("name"))
                .map(|n| text(n, src))
                .collect();
            Some(format!("{statik}{ty} {}", names.join(", ")))
        }
        _ => None,
    }
}

fn catalog_type(
    node: Node,
    src: &[u8],
    package: Option<&str>,
    outer: Option<&str>,
    library: &str,
    out: &mut BTreeSet<ApiEntry>,
) {
    let Some(name) = node.child_by_field_name("name") else {
        return;
    };
    let simple = text(name, src);
    let nested = match outer {
        Some(o) => format!("{o}.{simple}"),
        None => simple.to_string(),
    };
    let qualified = match package {
        Some(p) => format!("{p}.{nested}"),
        None => nested.clone(),
    };
    let interface = matches!(node.kind(), "interface_declaration" | "annotation_type_declaration");
    let Some(body) = node.child_by_field_name("body") else {
        return;
    };
    for m in body_members(body) {
        let mods = modifier_words(m, src);
        if TYPE_DECLS.contains(&m.kind()) {
            if visibility_of(&mods, interface) == Visibility::Public {
                catalog_type(m, src, package, Some(&nested), library, out);
            }
            continue;
        }
        if visibility_of(&mods, interface) != Visibility::Public {
            continue;
        }
        if let Some(sig) = member_signature(m, src, simple) {
            out.insert(ApiEntry {
                library_id: library.to_string(),
                qualified_class: qualified.clone(),
                member_signature: sig,
            });
        }
    }
}

/// Public members of every type in the given library source/stub dirs.
pub fn library_catalog(dependency_dirs: &[PathBuf]) -> (Vec<ApiEntry>, Vec<String>) {
    let mut out = BTreeSet::new();
    let mut diagnostics = Vec::new();
    let mut parser = java_parser();
    for dir in dependency_dirs {
        if !dir.is_dir() {
            tracing::warn!(dir = %dir.display(), "dependency directory missing");
            diagnostics.push(format!("dependency directory {} not found", dir.display()));
            continue;
        }
        let library = dir
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_else(|| dir.display().to_string());
        for rel in list_java_files(dir) {
            let Ok(src) = fs::read_to_string(dir.join(&rel)) else {
                diagnostics.push(format!("{library}/{rel}: unreadable"));
                continue;
            };
            let Some(tree) = parser.parse(&src, None) else {
                continue;
            };
            let root = tree.root_node();
            let (package, _) = collect_header(root, src.as_bytes());
            let mut cur = root.walk();
            for child in root.named_children(&mut cur) {
                if TYPE_DECLS.contains(&child.kind())
                    && visibility_of(&modifier_words(child, src.as_bytes()), false) == Visibility::Public
                {
                    catalog_type(child, src.as_bytes(), package.as_deref(), None, &library, &mut out);
                }
            }
        }
    }
    (out.into_iter().collect(), diagnostics)
}

/// Public API of the libraries the project actually imports.
pub fn public_api_of_imports(
    project_root: &Path,
    dependency_dirs: &[PathBuf],
) -> (Vec<ApiEntry>, Vec<String>) {
    let (catalog, diagnostics) = library_catalog(dependency_dirs);
    let mut parser = java_parser();
    let mut files = BTreeMap::new();
    for rel in list_java_files(project_root) {
        if let Ok(bytes) = fs::read(project_root.join(&rel)) {
            let ex = extract_file(&mut parser, &rel, &bytes);
            files.insert(ex.path, ex.entry);
        }
    }
    (filter_api(&catalog, &files), diagnostics)
}
