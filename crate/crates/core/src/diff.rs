//! Unified diff parsing, rendering and strict application.
//!
//! Hunks are applied at the positions their headers state; there is no fuzz
//! and no offset search. A candidate that does not apply exactly is rejected.

use std::fmt::Write as _;

use thiserror::Error;

use crate::model::{LineSpan, Snapshot};

const DEV_NULL: &str = "/dev/null";
const NO_NEWLINE_MARKER: &str = "\\ No newline at end of file";

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum DiffError {
    #[error("malformed diff at line {line}: {reason}")]
    MalformedDiff { line: usize, reason: String },
    #[error("context mismatch in `{file}`, hunk {hunk}")]
    ContextMismatch { file: String, hunk: usize },
    #[error("file `{0}` is not valid UTF-8")]
    NotText(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LineKind {
    Context,
    Removed,
    Added,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HunkLine {
    pub kind: LineKind,
    pub text: String,
    /// Set when the line is the last line of its file and has no trailing newline.
    pub no_eol: bool,
}

impl HunkLine {
    fn new(kind: LineKind, text: impl Into<String>) -> Self {
        HunkLine {
            kind,
            text: text.into(),
            no_eol: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Hunk {
    pub old_start: usize,
    pub old_count: usize,
    pub new_start: usize,
    pub new_count: usize,
    pub section: String,
    pub lines: Vec<HunkLine>,
}

impl Hunk {
    pub fn added(&self) -> usize {
        self.lines.iter().filter(|l| l.kind == LineKind::Added).count()
    }

    pub fn removed(&self) -> usize {
        self.lines.iter().filter(|l| l.kind == LineKind::Removed).count()
    }

    fn reversed(&self) -> Hunk {
        Hunk {
            old_start: self.new_start,
            old_count: self.new_count,
            new_start: self.old_start,
            new_count: self.old_count,
            section: self.section.clone(),
            lines: self
                .lines
                .iter()
                .map(|l| HunkLine {
                    kind: match l.kind {
                        LineKind::Context => LineKind::Context,
                        LineKind::Removed => LineKind::Added,
                        LineKind::Added => LineKind::Removed,
                    },
                    text: l.text.clone(),
                    no_eol: l.no_eol,
                })
                .collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FilePatch {
    /// `None` when the file is created.
    pub old_path: Option<String>,
    /// `None` when the file is deleted.
    pub new_path: Option<String>,
    pub hunks: Vec<Hunk>,
}

impl FilePatch {
    /// The path this patch reads from, or writes to for creations.
    pub fn path(&self) -> &str {
        self.old_path
            .as_deref()
            .or(self.new_path.as_deref())
            .unwrap_or(DEV_NULL)
    }

    pub fn added(&self) -> usize {
        self.hunks.iter().map(Hunk::added).sum()
    }

    pub fn removed(&self) -> usize {
        self.hunks.iter().map(Hunk::removed).sum()
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Patch {
    pub files: Vec<FilePatch>,
}

impl Patch {
    pub fn is_empty(&self) -> bool {
        self.files.is_empty()
    }

    pub fn reversed(&self) -> Patch {
        Patch {
            files: self
                .files
                .iter()
                .map(|f| FilePatch {
                    old_path: f.new_path.clone(),
                    new_path: f.old_path.clone(),
                    hunks: f.hunks.iter().map(Hunk::reversed).collect(),
                })
                .collect(),
        }
    }

    pub fn render(&self) -> String {
        render_unified_diff(self)
    }
}

fn strip_path(raw: &str, prefix: &str) -> Option<String> {
    let raw = raw.split('\t').next().unwrap_or(raw).trim_end();
    if raw == DEV_NULL {
        return None;
    }
    Some(raw.strip_prefix(prefix).unwrap_or(raw).to_string())
}

fn parse_range(s: &str) -> Option<(usize, usize)> {
    match s.split_once(',') {
        Some((a, b)) => Some((a.parse().ok()?, b.parse().ok()?)),
        None => Some((s.parse().ok()?, 1)),
    }
}

fn parse_hunk_header(line: &str) -> Option<(usize, usize, usize, usize, String)> {
    let rest = line.strip_prefix("@@ -")?;
    let (old, rest) = rest.split_once(" +")?;
    let (new, rest) = rest.split_once(" @@")?;
    let (os, oc) = parse_range(old)?;
    let (ns, nc) = parse_range(new)?;
    let section = rest.strip_prefix(' ').unwrap_or(rest).to_string();
    Some((os, oc, ns, nc, section))
}

/// Parses unified diff text into a structured patch.
pub fn parse_unified_diff(text: &str) -> Result<Patch, DiffError> {
    if text.trim().is_empty() {
        return Err(DiffError::MalformedDiff {
            line: 1,
            reason: "empty diff".into(),
        });
    }
    let lines: Vec<&str> = text.split('\n').collect();
    // A trailing newline produces one empty trailing element.
    let total = if text.ends_with('\n') {
        lines.len() - 1
    } else {
        lines.len()
    };
    let malformed = |idx: usize, reason: &str| DiffError::MalformedDiff {
        line: idx + 1,
        reason: reason.to_string(),
    };

    let mut files = Vec::new();
    let mut i = 0;
    while i < total {
        let line = lines[i];
        if let Some(old) = line.strip_prefix("--- ") {
            let Some(new) = lines.get(i + 1).filter(|_| i + 1 < total).and_then(|l| l.strip_prefix("+++ ")) else {
                return Err(malformed(i + 1, "`---` header not followed by `+++`"));
            };
            let mut fp = FilePatch {
                old_path: strip_path(old, "a/"),
                new_path: strip_path(new, "b/"),
                hunks: Vec::new(),
            };
            if fp.old_path.is_none() && fp.new_path.is_none() {
                return Err(malformed(i, "both sides are /dev/null"));
            }
            i += 2;
            while i < total && lines[i].starts_with("@@") {
                let (os, oc, ns, nc, section) = parse_hunk_header(lines[i])
                    .ok_or_else(|| malformed(i, "invalid hunk header"))?;
                let mut hunk = Hunk {
                    old_start: os,
                    old_count: oc,
                    new_start: ns,
                    new_count: nc,
                    section,
                    lines: Vec::new(),
                };
                i += 1;
                let (mut old_seen, mut new_seen) = (0usize, 0usize);
                while old_seen < oc || new_seen < nc {
                    if i >= total {
                        return Err(malformed(i, "hunk body shorter than its header counts"));
                    }
                    let l = lines[i];
                    let (kind, body) = match l.chars().next() {
                        Some(' ') => (LineKind::Context, &l[1..]),
                        Some('-') => (LineKind::Removed, &l[1..]),
                        Some('+') => (LineKind::Added, &l[1..]),
                        // Some tools strip the space from empty context lines.
                        None => (LineKind::Context, ""),
                        Some('\\') => {
                            mark_no_eol(&mut hunk, i, &malformed)?;
                            i += 1;
                            continue;
                        }
                        _ => return Err(malformed(i, "unexpected line inside hunk")),
                    };
                    match kind {
                        LineKind::Context => {
                            old_seen += 1;
                            new_seen += 1;
                        }
                        LineKind::Removed => old_seen += 1,
                        LineKind::Added => new_seen += 1,
                    }
                    if old_seen > oc || new_seen > nc {
                        return Err(malformed(i, "hunk body longer than its header counts"));
                    }
                    hunk.lines.push(HunkLine::new(kind, body));
                    i += 1;
                }
                if i < total && lines[i].starts_with('\\') {
                    mark_no_eol(&mut hunk, i, &malformed)?;
                    i += 1;
                }
                if i < total {
                    let l = lines[i];
                    let stray = l.starts_with(' ')
                        || l.starts_with('+')
                        || (l.starts_with('-') && !l.starts_with("--- "));
                    if stray {
                        return Err(malformed(i, "hunk body longer than its header counts"));
                    }
                }
                fp.hunks.push(hunk);
            }
            files.push(fp);
        } else if line.starts_with("@@") {
            return Err(malformed(i, "hunk header outside a file section"));
        } else {
            // Preamble (`diff --git`, `index ...`, commentary) is skipped.
            i += 1;
        }
    }
    Ok(Patch { files })
}

fn mark_no_eol(
    hunk: &mut Hunk,
    idx: usize,
    malformed: &dyn Fn(usize, &str) -> DiffError,
) -> Result<(), DiffError> {
    match hunk.lines.last_mut() {
        Some(last) => {
            last.no_eol = true;
            Ok(())
        }
        None => Err(malformed(idx, "no-newline marker without a preceding line")),
    }
}

fn fmt_range(start: usize, count: usize) -> String {
    if count == 1 {
        start.to_string()
    } else {
        format!("{start},{count}")
    }
}

/// Renders a patch as git-style unified diff text.
pub fn render_unified_diff(patch: &Patch) -> String {
    let mut out = String::new();
    for f in &patch.files {
        match &f.old_path {
            Some(p) => writeln!(out, "--- a/{p}").unwrap(),
            None => writeln!(out, "--- {DEV_NULL}").unwrap(),
        }
        match &f.new_path {
            Some(p) => writeln!(out, "+++ b/{p}").unwrap(),
            None => writeln!(out, "+++ {DEV_NULL}").unwrap(),
        }
        for h in &f.hunks {
            write!(
                out,
                "@@ -{} +{} @@",
                fmt_range(h.old_start, h.old_count),
                fmt_range(h.new_start, h.new_count)
            )
            .unwrap();
            if !h.section.is_empty() {
                write!(out, " {}", h.section).unwrap();
            }
            out.push('\n');
            for l in &h.lines {
                let prefix = match l.kind {
                    LineKind::Context => ' ',
                    LineKind::Removed => '-',
                    LineKind::Added => '+',
                };
                out.push(prefix);
                out.push_str(&l.text);
                out.push('\n');
                if l.no_eol {
                    out.push_str(NO_NEWLINE_MARKER);
                    out.push('\n');
                }
            }
        }
    }
    out
}

/// File content split into lines, remembering whether the last one ended in `\n`.
struct Lines {
    lines: Vec<String>,
    trailing_newline: bool,
}

impl Lines {
    fn parse(text: &str) -> Lines {
        if text.is_empty() {
            return Lines {
                lines: Vec::new(),
                trailing_newline: true,
            };
        }
        let trailing_newline = text.ends_with('\n');
        let body = if trailing_newline {
            &text[..text.len() - 1]
        } else {
            text
        };
        Lines {
            lines: body.split('\n').map(str::to_string).collect(),
            trailing_newline,
        }
    }

    fn join(&self) -> String {
        if self.lines.is_empty() {
            return String::new();
        }
        let mut s = self.lines.join("\n");
        if self.trailing_newline {
            s.push('\n');
        }
        s
    }
}

fn apply_file(original: Option<&str>, fp: &FilePatch) -> Result<Option<String>, DiffError> {
    let file = fp.path().to_string();
    let mut src = Lines::parse(original.unwrap_or(""));
    // An empty file is indistinguishable from one empty unterminated line.
    let expects_virtual_line = fp.hunks.first().and_then(|h| {
        h.lines.iter().find(|l| l.kind != LineKind::Added)
    });
    if src.lines.is_empty() && matches!(expects_virtual_line, Some(l) if l.text.is_empty() && l.no_eol) {
        src.lines.push(String::new());
        src.trailing_newline = false;
    }
    let mut out: Vec<String> = Vec::with_capacity(src.lines.len());
    let mut cursor = 0usize;
    let mut trailing_newline = src.trailing_newline;

    for (hi, h) in fp.hunks.iter().enumerate() {
        let mismatch = || DiffError::ContextMismatch {
            file: file.clone(),
            hunk: hi,
        };
        // Zero-length old ranges name the line *after which* content is inserted.
        let start = if h.old_count == 0 {
            h.old_start
        } else {
            h.old_start.checked_sub(1).ok_or_else(mismatch)?
        };
        if start < cursor || start > src.lines.len() {
            return Err(mismatch());
        }
        out.extend(src.lines[cursor..start].iter().cloned());
        let mut pos = start;
        for l in &h.lines {
            match l.kind {
                LineKind::Context | LineKind::Removed => {
                    if src.lines.get(pos).map(String::as_str) != Some(l.text.as_str()) {
                        return Err(mismatch());
                    }
                    let at_end = pos + 1 == src.lines.len();
                    if l.no_eol && !(at_end && !src.trailing_newline) {
                        return Err(mismatch());
                    }
                    if l.kind == LineKind::Context {
                        out.push(l.text.clone());
                    }
                    pos += 1;
                }
                LineKind::Added => out.push(l.text.clone()),
            }
        }
        // The new side's last line decides the trailing newline when it ends the file.
        if pos == src.lines.len() {
            if let Some(last_new) = h
                .lines
                .iter()
                .rev()
                .find(|l| l.kind != LineKind::Removed)
            {
                trailing_newline = !last_new.no_eol;
            } else {
                trailing_newline = src.trailing_newline;
            }
        }
        cursor = pos;
    }
    out.extend(src.lines[cursor..].iter().cloned());
    if fp.new_path.is_none() {
        if !out.is_empty() {
            return Err(DiffError::ContextMismatch { file, hunk: 0 });
        }
        return Ok(None);
    }
    src.lines = out;
    src.trailing_newline = trailing_newline;
    Ok(Some(src.join()))
}

/// Applies `patch` to `snapshot`, returning the new file map. Files not named
/// in the patch are carried over untouched.
pub fn apply_patch(snapshot: &Snapshot, patch: &Patch) -> Result<Snapshot, DiffError> {
    let mut result = snapshot.clone();
    for fp in &patch.files {
        let original = match &fp.old_path {
            Some(p) => {
                let bytes = snapshot.get(p).ok_or_else(|| DiffError::ContextMismatch {
                    file: p.clone(),
                    hunk: 0,
                })?;
                Some(std::str::from_utf8(bytes).map_err(|_| DiffError::NotText(p.clone()))?)
            }
            None => {
                let target = fp.new_path.as_deref().unwrap_or_default();
                if snapshot.contains(target) {
                    return Err(DiffError::ContextMismatch {
                        file: target.to_string(),
                        hunk: 0,
                    });
                }
                None
            }
        };
        let patched = apply_file(original, fp)?;
        if let Some(old) = &fp.old_path {
            result.remove(old);
        }
        if let (Some(new), Some(content)) = (&fp.new_path, patched) {
            result.insert(new.clone(), content.into_bytes());
        }
    }
    Ok(result)
}

/// Builds a single-hunk patch that replaces `span` of `path` with
/// `replacement` lines. Identical leading and trailing lines are trimmed so
/// the hunk shows only the real change, padded with `context` lines.
pub fn replace_lines_patch(
    path: &str,
    original: &str,
    span: LineSpan,
    replacement: &[String],
    context: usize,
) -> Patch {
    let src = Lines::parse(original);
    let n = src.lines.len();
    let start = (span.start as usize).saturating_sub(1).min(n);
    let end = (span.end as usize).min(n);
    let old_mid = &src.lines[start..end];

    let mut prefix = 0;
    while prefix < old_mid.len()
        && prefix < replacement.len()
        && old_mid[prefix] == replacement[prefix]
    {
        prefix += 1;
    }
    let mut suffix = 0;
    while suffix < old_mid.len() - prefix
        && suffix < replacement.len() - prefix
        && old_mid[old_mid.len() - 1 - suffix] == replacement[replacement.len() - 1 - suffix]
    {
        suffix += 1;
    }
    let mut change_start = start + prefix;
    let change_old_end = end - suffix;
    let mut added: Vec<String> = replacement[prefix..replacement.len() - suffix].to_vec();
    if change_old_end == change_start && added.is_empty() {
        return Patch::default();
    }
    // Deleting the unterminated last line turns the line before it into the
    // new last line, which loses its newline; that needs an explicit -/+ pair.
    if added.is_empty() && change_old_end == n && !src.trailing_newline && change_start > 0 {
        change_start -= 1;
        added.push(src.lines[change_start].clone());
    }
    let removed = &src.lines[change_start..change_old_end];

    let ctx_start = change_start.saturating_sub(context);
    let ctx_end = (change_old_end + context).min(n);
    let last_line_touched = ctx_end == n && !src.trailing_newline;

    let mut lines = Vec::new();
    for l in &src.lines[ctx_start..change_start] {
        lines.push(HunkLine::new(LineKind::Context, l.clone()));
    }
    for l in removed {
        lines.push(HunkLine::new(LineKind::Removed, l.clone()));
    }
    for l in &added {
        lines.push(HunkLine::new(LineKind::Added, l.clone()));
    }
    for l in &src.lines[change_old_end..ctx_end] {
        lines.push(HunkLine::new(LineKind::Context, l.clone()));
    }
    if last_line_touched {
        // Both the last old line and the last new line lack a newline.
        if let Some(idx) = lines.iter().rposition(|l| l.kind != LineKind::Added) {
            lines[idx].no_eol = true;
        }
        if let Some(idx) = lines.iter().rposition(|l| l.kind != LineKind::Removed) {
            lines[idx].no_eol = true;
        }
    }

    let old_count = ctx_end - ctx_start;
    let new_count = old_count - removed.len() + added.len();
    let old_start = if old_count == 0 { ctx_start } else { ctx_start + 1 };
    let new_start = if new_count == 0 { ctx_start } else { ctx_start + 1 };
    Patch {
        files: vec![FilePatch {
            old_path: Some(path.to_string()),
            new_path: Some(path.to_string()),
            hunks: vec![Hunk {
                old_start,
                old_count,
                new_start,
                new_count,
                section: String::new(),
                lines,
            }],
        }],
    }
}
