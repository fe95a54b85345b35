//! JML method specifications: a hand-rolled parser for the clause subset the
//! pipeline works with, a deterministic renderer, and a semantic linter.
//!
//! Supported clauses are `requires`, `ensures`, `assigns` (alias
//! `assignable`/`modifies`) and `signals (Exc e) expr`. Expressions stay as
//! validated text: delimiters must balance, literals must close, and the
//! token stream must look like a Java boolean expression with `\result`,
//! `\old(..)`, `\nothing` and `==>` added.

use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::index::MethodRecord;
use crate::model::MethodRef;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ClauseKind {
    Requires,
    Ensures,
    Assigns,
    Signals,
}

impl ClauseKind {
    pub fn keyword(self) -> &'static str {
        match self {
            ClauseKind::Requires => "requires",
            ClauseKind::Ensures => "ensures",
            ClauseKind::Assigns => "assigns",
            ClauseKind::Signals => "signals",
        }
    }

    fn from_keyword(word: &str) -> Option<ClauseKind> {
        match word {
            "requires" | "pre" => Some(ClauseKind::Requires),
            "ensures" | "post" => Some(ClauseKind::Ensures),
            "assigns" | "assignable" | "modifies" => Some(ClauseKind::Assigns),
            "signals" => Some(ClauseKind::Signals),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SpecClause {
    pub kind: ClauseKind,
    pub expression: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub signals_exception: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub signals_var: Option<String>,
}

impl SpecClause {
    pub fn new(kind: ClauseKind, expression: impl Into<String>) -> Self {
        SpecClause {
            kind,
            expression: expression.into(),
            signals_exception: None,
            signals_var: None,
        }
    }

    pub fn signals(
        exception: impl Into<String>,
        var: Option<&str>,
        expression: impl Into<String>,
    ) -> Self {
        SpecClause {
            kind: ClauseKind::Signals,
            expression: expression.into(),
            signals_exception: Some(exception.into()),
            signals_var: var.map(str::to_string),
        }
    }

    /// Text that precedes the expression on the rendered line.
    fn rendered_head(&self) -> String {
        match (&self.signals_exception, &self.signals_var) {
            (Some(exc), Some(var)) => format!("  @{} ({exc} {var}) ", self.kind.keyword()),
            (Some(exc), None) => format!("  @{} ({exc}) ", self.kind.keyword()),
            _ => format!("  @{} ", self.kind.keyword()),
        }
    }

    pub fn is_well_formed(&self) -> bool {
        let signals_ok = (self.kind == ClauseKind::Signals) == self.signals_exception.is_some();
        signals_ok && !self.expression.trim().is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SpecStatus {
    Draft,
    SyntaxError,
    SemanticError,
    Verified,
    BugSignal,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JmlSpecification {
    pub target: MethodRef,
    pub clauses: Vec<SpecClause>,
    pub iteration: u32,
    pub status: SpecStatus,
    /// Annotation text exactly as produced (by the model or a reviewer).
    pub text: String,
    #[serde(default)]
    pub diagnostics: Vec<SpecDiagnostic>,
}

impl JmlSpecification {
    /// Parses `text` and builds a draft; syntax problems set `SyntaxError`.
    pub fn from_text(target: MethodRef, text: &str, iteration: u32) -> Self {
        let parsed = parse_jml(text);
        let status = if parsed.has_errors() {
            SpecStatus::SyntaxError
        } else {
            SpecStatus::Draft
        };
        JmlSpecification {
            target,
            clauses: parsed.clauses,
            iteration,
            status,
            text: text.to_string(),
            diagnostics: parsed.diagnostics,
        }
    }

    pub fn render(&self) -> String {
        render_jml(&self.clauses)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Severity {
    Syntax,
    Semantic,
}

impl fmt::Display for Severity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Severity::Syntax => "syntax",
            Severity::Semantic => "semantic",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum DiagnosticRule {
    NotAnnotation,
    UnknownClauseKeyword,
    MissingSemicolon,
    UnbalancedDelimiter,
    UnterminatedLiteral,
    EmptyClause,
    MalformedSignals,
    UnexpectedToken,
    UnsupportedKeyword,
    UnknownIdentifier,
    ResultOnVoid,
    NonThrowableSignal,
    AssignmentInBooleanPosition,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SpecDiagnostic {
    pub severity: Severity,
    pub rule: DiagnosticRule,
    pub message: String,
    /// Index of the clause the diagnostic belongs to.
    pub clause: usize,
    /// Character offset into the clause's expression.
    pub column: usize,
    /// 1-based position in the parsed source text, when known.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source: Option<SourcePos>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SourcePos {
    pub line: u32,
    pub col: u32,
}

impl fmt::Display for SpecDiagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let (line, col) = self
            .source
            .map(|p| (p.line, p.col))
            .unwrap_or((0, self.column as u32));
        write!(f, "{}:{}:{}:{}", self.severity, line, col, self.message)
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParsedSpec {
    pub clauses: Vec<SpecClause>,
    pub diagnostics: Vec<SpecDiagnostic>,
    /// Source position of each parsed clause's keyword.
    pub positions: Vec<SourcePos>,
    /// Source position of each parsed clause's expression start.
    pub expression_positions: Vec<SourcePos>,
}

impl ParsedSpec {
    pub fn has_errors(&self) -> bool {
        !self.diagnostics.is_empty()
    }

    /// Where `d` points in the parsed text. Diagnostics that only carry an
    /// expression offset are placed relative to the expression start, which
    /// is exact when the expression sits on one line.
    pub fn source_of(&self, d: &SpecDiagnostic) -> Option<SourcePos> {
        d.source.or_else(|| {
            let p = self.expression_positions.get(d.clause)?;
            Some(SourcePos {
                line: p.line,
                col: p.col + d.column as u32,
            })
        })
    }
}

#[derive(Debug, Clone, Copy)]
struct Ch {
    c: char,
    pos: SourcePos,
}

/// The annotation body flattened into one character stream. Line breaks
/// become spaces; `marks` holds stream offsets where an annotation line
/// (one that started with `@`) begins.
struct Stream {
    chars: Vec<Ch>,
    marks: BTreeSet<usize>,
}

fn collect_annotation(text: &str) -> Option<Stream> {
    let lines: Vec<&str> = text.split('\n').collect();
    let mut chars = Vec::new();
    let mut marks = BTreeSet::new();
    // A bare `@ensures ...` fragment is read as the inside of a block.
    let mut in_block = text.trim_start().starts_with('@');
    let mut found = in_block;

    for (li, raw) in lines.iter().enumerate() {
        let line_no = li as u32 + 1;
        let raw = raw.strip_suffix('\r').unwrap_or(raw);
        let idx: Vec<(usize, char)> = raw.char_indices().collect();
        let mut k = 0usize;
        let col_of = |k: usize| k as u32 + 1;

        let mut body_start: Option<usize> = None;
        let mut body_end = idx.len();
        let mut starts_annotation = false;

        if in_block {
            body_start = Some(0);
            starts_annotation = true;
        } else {
            // Look for `/*@`, `/* @` or `//@` on this line.
            let s: String = idx.iter().map(|&(_, c)| c).collect();
            let cs: Vec<char> = s.chars().collect();
            while k + 1 < cs.len() {
                if cs[k] == '/' && cs[k + 1] == '*' {
                    let mut j = k + 2;
                    while j < cs.len() && cs[j] == ' ' {
                        j += 1;
                    }
                    if j < cs.len() && cs[j] == '@' {
                        in_block = true;
                        found = true;
                        body_start = Some(j);
                        starts_annotation = true;
                        break;
                    }
                }
                if cs[k] == '/' && cs[k + 1] == '/' && cs.get(k + 2) == Some(&'@') {
                    found = true;
                    body_start = Some(k + 2);
                    starts_annotation = true;
                    break;
                }
                k += 1;
            }
        }
        let Some(start) = body_start else { continue };
        let cs: Vec<char> = idx.iter().map(|&(_, c)| c).collect();
        if in_block {
            // Find the closing `*/` after `start`.
            let mut j = start;
            while j + 1 < cs.len() {
                if cs[j] == '*' && cs[j + 1] == '/' {
                    body_end = j;
                    in_block = false;
                    break;
                }
                j += 1;
            }
        }
        let mut b = start;
        while b < body_end && cs[b].is_whitespace() {
            b += 1;
        }
        let had_at = b < body_end && cs[b] == '@';
        while b < body_end && cs[b] == '@' {
            b += 1;
        }
        let mut e = body_end;
        while e > b && cs[e - 1].is_whitespace() {
            e -= 1;
        }
        while e > b && cs[e - 1] == '@' {
            e -= 1;
        }
        if had_at || starts_annotation {
            marks.insert(chars.len());
        }
        for (off, &c) in cs.iter().enumerate().take(e).skip(b) {
            chars.push(Ch {
                c,
                pos: SourcePos {
                    line: line_no,
                    col: col_of(off),
                },
            });
        }
        chars.push(Ch {
            c: ' ',
            pos: SourcePos {
                line: line_no,
                col: col_of(e),
            },
        });
    }
    found.then_some(Stream { chars, marks })
}

fn is_ident_start(c: char) -> bool {
    c.is_alphabetic() || c == '_' || c == '$'
}

fn is_ident_char(c: char) -> bool {
    c.is_alphanumeric() || c == '_' || c == '$'
}

/// Collapses whitespace runs outside literals to single spaces.
fn normalize_expression(raw: &str) -> String {
    let mut out = String::with_capacity(raw.len());
    let mut quote: Option<char> = None;
    let mut escaped = false;
    let mut pending_space = false;
    for c in raw.trim().chars() {
        if let Some(q) = quote {
            out.push(c);
            if escaped {
                escaped = false;
            } else if c == '\\' {
                escaped = true;
            } else if c == q {
                quote = None;
            }
            continue;
        }
        if c.is_whitespace() {
            pending_space = true;
            continue;
        }
        if pending_space && !out.is_empty() {
            out.push(' ');
        }
        pending_space = false;
        if c == '"' || c == '\'' {
            quote = Some(c);
        }
        out.push(c);
    }
    out
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum TokKind {
    Ident,
    Number,
    Str,
    Char,
    Backslash,
    Op,
}

#[derive(Debug, Clone)]
struct Tok {
    kind: TokKind,
    text: String,
    offset: usize,
}

const OPERATORS: &[&str] = &[
    "<==>", "<=!=>", "==>", "<==", ">>>", "==", "!=", "<=", ">=", "&&", "||", "<<", ">>", "++",
    "--", "=", "<", ">", "!", "~", "?", ":", "+", "-", "*", "/", "%", "&", "|", "^", ".", ",",
    "(", ")", "[", "]", "{", "}",
];

/// Tokenizes an expression; returns the offending offset if a literal is
/// left open or an unknown character appears.
fn tokenize(expr: &str) -> Result<Vec<Tok>, (usize, DiagnosticRule, String)> {
    let cs: Vec<char> = expr.chars().collect();
    let mut toks = Vec::new();
    let mut i = 0;
    while i < cs.len() {
        let c = cs[i];
        if c.is_whitespace() {
            i += 1;
            continue;
        }
        let start = i;
        if is_ident_start(c) {
            while i < cs.len() && is_ident_char(cs[i]) {
                i += 1;
            }
            toks.push(Tok {
                kind: TokKind::Ident,
                text: cs[start..i].iter().collect(),
                offset: start,
            });
        } else if c.is_ascii_digit() {
            while i < cs.len() && (cs[i].is_ascii_alphanumeric() || cs[i] == '.' || cs[i] == '_') {
                i += 1;
            }
            toks.push(Tok {
                kind: TokKind::Number,
                text: cs[start..i].iter().collect(),
                offset: start,
            });
        } else if c == '"' || c == '\'' {
            i += 1;
            let mut closed = false;
            while i < cs.len() {
                if cs[i] == '\\' {
                    i += 2;
                    continue;
                }
                if cs[i] == c {
                    closed = true;
                    i += 1;
                    break;
                }
                i += 1;
            }
            if !closed {
                return Err((
                    start,
                    DiagnosticRule::UnterminatedLiteral,
                    "unterminated literal".into(),
                ));
            }
            toks.push(Tok {
                kind: if c == '"' { TokKind::Str } else { TokKind::Char },
                text: cs[start..i.min(cs.len())].iter().collect(),
                offset: start,
            });
        } else if c == '\\' {
            i += 1;
            while i < cs.len() && is_ident_char(cs[i]) {
                i += 1;
            }
            toks.push(Tok {
                kind: TokKind::Backslash,
                text: cs[start..i].iter().collect(),
                offset: start,
            });
        } else {
            let rest: String = cs[i..cs.len().min(i + 5)].iter().collect();
            let Some(op) = OPERATORS.iter().find(|op| rest.starts_with(**op)) else {
                return Err((
                    start,
                    DiagnosticRule::UnexpectedToken,
                    format!("unexpected character `{c}`"),
                ));
            };
            i += op.chars().count();
            toks.push(Tok {
                kind: TokKind::Op,
                text: op.to_string(),
                offset: start,
            });
        }
    }
    Ok(toks)
}

const JML_BACKSLASH_KEYWORDS: &[&str] = &["\\result", "\\old", "\\nothing", "\\everything"];

const JAVA_WORDS: &[&str] = &[
    "true", "false", "null", "this", "super", "instanceof", "new", "int", "long", "short", "byte",
    "char", "boolean", "double", "float", "void", "class",
];

fn is_operand(t: &Tok) -> bool {
    match t.kind {
        TokKind::Ident => t.text != "instanceof" && t.text != "new",
        TokKind::Number | TokKind::Str | TokKind::Char | TokKind::Backslash => true,
        TokKind::Op => false,
    }
}

/// Token-level sanity checks: JML keyword subset, operator placement.
fn check_tokens(toks: &[Tok]) -> Option<(usize, DiagnosticRule, String)> {
    for (i, t) in toks.iter().enumerate() {
        if t.kind == TokKind::Backslash && !JML_BACKSLASH_KEYWORDS.contains(&t.text.as_str()) {
            return Some((
                t.offset,
                DiagnosticRule::UnsupportedKeyword,
                format!("unsupported JML keyword `{}`", t.text),
            ));
        }
        if i > 0 && is_operand(t) && is_operand(&toks[i - 1]) {
            return Some((
                t.offset,
                DiagnosticRule::UnexpectedToken,
                format!("unexpected token `{}`", t.text),
            ));
        }
    }
    if let Some(last) = toks.last() {
        let dangling = last.kind == TokKind::Op
            && !matches!(last.text.as_str(), ")" | "]" | "}" | "++" | "--");
        if dangling {
            return Some((
                last.offset,
                DiagnosticRule::UnexpectedToken,
                format!("expression ends with operator `{}`", last.text),
            ));
        }
    }
    None
}

struct Parser<'a> {
    s: &'a Stream,
    i: usize,
    out: ParsedSpec,
}

impl<'a> Parser<'a> {
    fn peek(&self) -> Option<char> {
        self.s.chars.get(self.i).map(|c| c.c)
    }

    fn pos_at(&self, i: usize) -> SourcePos {
        self.s
            .chars
            .get(i)
            .or_else(|| self.s.chars.last())
            .map(|c| c.pos)
            .unwrap_or(SourcePos { line: 1, col: 1 })
    }

    fn skip_ws(&mut self) {
        while matches!(self.peek(), Some(c) if c.is_whitespace()) {
            self.i += 1;
        }
    }

    fn ident_at(&self, mut i: usize) -> (String, usize) {
        let start = i;
        while i < self.s.chars.len() && is_ident_char(self.s.chars[i].c) {
            i += 1;
        }
        let word = self.s.chars[start..i].iter().map(|c| c.c).collect();
        (word, i)
    }

    fn diag(&mut self, at: usize, col: usize, rule: DiagnosticRule, message: String) {
        let clause = self.out.clauses.len();
        let source = Some(self.pos_at(at));
        self.out.diagnostics.push(SpecDiagnostic {
            severity: Severity::Syntax,
            rule,
            message,
            clause,
            column: col,
            source,
        });
    }

    /// Skips to just past the next `;` or to the next annotation line.
    fn recover(&mut self) {
        while let Some(c) = self.peek() {
            self.i += 1;
            if c == ';' {
                return;
            }
            if self.s.marks.contains(&self.i) {
                return;
            }
        }
    }

    /// True when an annotation line starting at `i` opens a new clause.
    fn clause_starts_at(&self, i: usize) -> bool {
        let mut j = i;
        while j < self.s.chars.len() && self.s.chars[j].c.is_whitespace() {
            j += 1;
        }
        if j >= self.s.chars.len() || !is_ident_start(self.s.chars[j].c) {
            return false;
        }
        let (word, _) = self.ident_at(j);
        ClauseKind::from_keyword(&word).is_some()
    }

    fn parse(mut self) -> ParsedSpec {
        loop {
            self.skip_ws();
            let Some(c) = self.peek() else { break };
            let clause_start = self.i;
            if !is_ident_start(c) {
                self.diag(
                    clause_start,
                    0,
                    DiagnosticRule::UnexpectedToken,
                    format!("expected a clause keyword, found `{c}`"),
                );
                self.recover();
                continue;
            }
            let (word, after) = self.ident_at(self.i);
            let Some(kind) = ClauseKind::from_keyword(&word) else {
                self.diag(
                    clause_start,
                    0,
                    DiagnosticRule::UnknownClauseKeyword,
                    format!("unknown JML clause keyword `{word}`"),
                );
                self.i = after;
                self.recover();
                continue;
            };
            self.i = after;
            let mut exception = None;
            let mut var = None;
            if kind == ClauseKind::Signals {
                self.skip_ws();
                match self.parse_signals_header() {
                    Ok((e, v)) => {
                        exception = Some(e);
                        var = v;
                    }
                    Err(msg) => {
                        let at = self.i;
                        self.diag(at, at - clause_start, DiagnosticRule::MalformedSignals, msg);
                        self.recover();
                        continue;
                    }
                }
            }
            self.skip_ws();
            let expr_start = self.i;
            match self.scan_expression(clause_start) {
                Ok(raw) => {
                    let expression = normalize_expression(&raw);
                    if expression.is_empty() {
                        self.diag(
                            expr_start,
                            0,
                            DiagnosticRule::EmptyClause,
                            format!("empty `{}` clause", kind.keyword()),
                        );
                        continue;
                    }
                    let check = tokenize(&expression)
                        .err()
                        .or_else(|| check_tokens(&tokenize(&expression).unwrap_or_default()));
                    if let Some((col, rule, msg)) = check {
                        self.diag(expr_start, col, rule, msg);
                        continue;
                    }
                    let kw_pos = self.pos_at(clause_start);
                    let expr_pos = self.pos_at(expr_start);
                    self.out.positions.push(kw_pos);
                    self.out.expression_positions.push(expr_pos);
                    self.out.clauses.push(SpecClause {
                        kind,
                        expression,
                        signals_exception: exception,
                        signals_var: var,
                    });
                }
                Err((at, rule, msg)) => {
                    self.diag(at, at.saturating_sub(expr_start), rule, msg);
                }
            }
        }
        self.out
    }

    fn parse_signals_header(&mut self) -> Result<(String, Option<String>), String> {
        if self.peek() != Some('(') {
            return Err("`signals` must be followed by `(ExceptionType [name])`".into());
        }
        self.i += 1;
        self.skip_ws();
        let start = self.i;
        while matches!(self.peek(), Some(c) if is_ident_char(c) || c == '.') {
            self.i += 1;
        }
        let exc: String = self.s.chars[start..self.i].iter().map(|c| c.c).collect();
        if exc.is_empty() {
            return Err("missing exception type in `signals`".into());
        }
        self.skip_ws();
        let mut var = None;
        if matches!(self.peek(), Some(c) if is_ident_start(c)) {
            let (v, after) = self.ident_at(self.i);
            self.i = after;
            var = Some(v);
            self.skip_ws();
        }
        if self.peek() != Some(')') {
            return Err("unclosed `signals` exception declaration".into());
        }
        self.i += 1;
        Ok((exc, var))
    }

    /// Reads up to the terminating `;`. A missing final `;` at the very end
    /// of the annotation is tolerated.
    fn scan_expression(
        &mut self,
        clause_start: usize,
    ) -> Result<String, (usize, DiagnosticRule, String)> {
        let mut depth: Vec<char> = Vec::new();
        let mut raw = String::new();
        let mut quote: Option<char> = None;
        let mut escaped = false;
        let mut last_content = self.i;
        while let Some(c) = self.peek() {
            let here = self.i;
            if quote.is_none()
                && here > clause_start
                && self.s.marks.contains(&here)
                && self.clause_starts_at(here)
            {
                let (word, _) = {
                    let mut j = here;
                    while self.s.chars[j].c.is_whitespace() {
                        j += 1;
                    }
                    self.ident_at(j)
                };
                return Err((
                    last_content,
                    DiagnosticRule::MissingSemicolon,
                    format!("missing `;` before `{word}` clause"),
                ));
            }
            self.i += 1;
            if let Some(q) = quote {
                raw.push(c);
                if escaped {
                    escaped = false;
                } else if c == '\\' {
                    escaped = true;
                } else if c == q {
                    quote = None;
                }
                last_content = here;
                continue;
            }
            match c {
                ';' if depth.is_empty() => return Ok(raw),
                '"' | '\'' => quote = Some(c),
                '(' | '[' | '{' => depth.push(c),
                ')' | ']' | '}' => {
                    let want = match c {
                        ')' => '(',
                        ']' => '[',
                        _ => '{',
                    };
                    if depth.pop() != Some(want) {
                        return Err((
                            here,
                            DiagnosticRule::UnbalancedDelimiter,
                            format!("unbalanced `{c}`"),
                        ));
                    }
                }
                _ => {}
            }
            if !c.is_whitespace() {
                last_content = here;
            }
            raw.push(c);
        }
        if quote.is_some() {
            return Err((
                last_content,
                DiagnosticRule::UnterminatedLiteral,
                "unterminated literal".into(),
            ));
        }
        if let Some(open) = depth.last() {
            return Err((
                last_content,
                DiagnosticRule::UnbalancedDelimiter,
                format!("unclosed `{open}`"),
            ));
        }
        Ok(raw)
    }
}

/// Parses a JML annotation comment. Never fails: problems are reported as
/// syntax diagnostics alongside whatever clauses did parse.
pub fn parse_jml(text: &str) -> ParsedSpec {
    let Some(stream) = collect_annotation(text) else {
        return ParsedSpec {
            diagnostics: vec![SpecDiagnostic {
                severity: Severity::Syntax,
                rule: DiagnosticRule::NotAnnotation,
                message: "no JML annotation comment (`/*@ ... */` or `//@`) found".into(),
                clause: 0,
                column: 0,
                source: Some(SourcePos { line: 1, col: 1 }),
            }],
            ..Default::default()
        };
    };
    Parser {
        s: &stream,
        i: 0,
        out: ParsedSpec::default(),
    }
    .parse()
}

/// Renders clauses as a JML block comment, one clause per line.
pub fn render_jml(clauses: &[SpecClause]) -> String {
    if clauses.is_empty() {
        return "/*@ @*/".to_string();
    }
    let mut out = String::from("/*@\n");
    for c in clauses {
        out.push_str(&c.rendered_head());
        out.push_str(&c.expression);
        out.push_str(";\n");
    }
    out.push_str("  @*/");
    out
}

/// Maps a diagnostic to its 1-based (line, column) in `render_jml(clauses)`.
pub fn rendered_location(clauses: &[SpecClause], diag: &SpecDiagnostic) -> Option<(usize, usize)> {
    let clause = clauses.get(diag.clause)?;
    let head = clause.rendered_head().chars().count();
    Some((diag.clause + 2, head + diag.column + 1))
}

const KNOWN_THROWABLES: &[&str] = &["Throwable", "Exception", "Error", "RuntimeException"];

/// What the linter needs to know about the annotated method.
#[derive(Debug, Clone, Default)]
pub struct LintContext {
    pub parameters: BTreeSet<String>,
    pub return_type: Option<String>,
    /// Identifiers that occur anywhere in the method text.
    pub body_identifiers: BTreeSet<String>,
}

impl LintContext {
    pub fn from_record(method: &MethodRecord) -> Self {
        LintContext {
            parameters: method.parameters.iter().map(|p| p.name.clone()).collect(),
            return_type: method.return_type.clone(),
            body_identifiers: identifiers_in(&method.source_text),
        }
    }
}

fn identifiers_in(text: &str) -> BTreeSet<String> {
    let mut out = BTreeSet::new();
    let mut cur = String::new();
    for c in text.chars() {
        if is_ident_char(c) {
            cur.push(c);
        } else if !cur.is_empty() {
            if cur.chars().next().is_some_and(is_ident_start) {
                out.insert(std::mem::take(&mut cur));
            } else {
                cur.clear();
            }
        }
    }
    if cur.chars().next().is_some_and(is_ident_start) {
        out.insert(cur);
    }
    out
}

fn semantic(rule: DiagnosticRule, clause: usize, column: usize, message: String) -> SpecDiagnostic {
    SpecDiagnostic {
        severity: Severity::Semantic,
        rule,
        message,
        clause,
        column,
        source: None,
    }
}

/// Semantic checks of parsed clauses against the method they annotate.
pub fn lint_semantics(clauses: &[SpecClause], method: &MethodRecord) -> Vec<SpecDiagnostic> {
    lint_with_context(clauses, &LintContext::from_record(method))
}

pub fn lint_with_context(clauses: &[SpecClause], ctx: &LintContext) -> Vec<SpecDiagnostic> {
    let mut diags = Vec::new();
    let void_method = matches!(ctx.return_type.as_deref(), None | Some("void"));
    for (ci, clause) in clauses.iter().enumerate() {
        if let Some(exc) = &clause.signals_exception {
            let simple = exc.rsplit('.').next().unwrap_or(exc);
            let throwable = simple.ends_with("Exception")
                || simple.ends_with("Error")
                || KNOWN_THROWABLES.contains(&simple);
            if !throwable {
                diags.push(semantic(
                    DiagnosticRule::NonThrowableSignal,
                    ci,
                    0,
                    format!("`{exc}` does not name a Throwable type"),
                ));
            }
        }
        if clause.kind == ClauseKind::Assigns {
            continue;
        }
        let Ok(toks) = tokenize(&clause.expression) else {
            continue;
        };
        for (ti, t) in toks.iter().enumerate() {
            match t.kind {
                TokKind::Op if t.text == "=" => diags.push(semantic(
                    DiagnosticRule::AssignmentInBooleanPosition,
                    ci,
                    t.offset,
                    "assignment `=` used where a boolean is expected (did you mean `==`?)".into(),
                )),
                TokKind::Backslash if t.text == "\\result" && void_method => {
                    diags.push(semantic(
                        DiagnosticRule::ResultOnVoid,
                        ci,
                        t.offset,
                        "`\\result` used in a method that returns no value".into(),
                    ))
                }
                TokKind::Ident => {
                    let after_dot = ti > 0 && toks[ti - 1].text == ".";
                    let is_call = toks.get(ti + 1).is_some_and(|n| n.text == "(");
                    let type_like = t.text.chars().next().is_some_and(char::is_uppercase);
                    let bound = clause.signals_var.as_deref() == Some(t.text.as_str());
                    if after_dot
                        || is_call
                        || type_like
                        || bound
                        || JAVA_WORDS.contains(&t.text.as_str())
                        || ctx.parameters.contains(&t.text)
                        || ctx.body_identifiers.contains(&t.text)
                    {
                        continue;
                    }
                    diags.push(semantic(
                        DiagnosticRule::UnknownIdentifier,
                        ci,
                        t.offset,
                        format!(
                            "`{}` is neither a parameter nor a field used by the method",
                            t.text
                        ),
                    ));
                }
                _ => {}
            }
        }
    }
    diags
}

/// Extracts the first JML annotation found in free-form model output,
/// looking inside fenced code blocks as well.
pub fn extract_annotation(response: &str) -> Option<String> {
    let start = response
        .find("/*@")
        .or_else(|| {
            let re_start = response.find("/* @")?;
            Some(re_start)
        });
    if let Some(s) = start {
        let end = response[s..].find("*/").map(|e| s + e + 2)?;
        return Some(response[s..end].to_string());
    }
    let lines: Vec<&str> = response
        .lines()
        .filter(|l| l.trim_start().starts_with("//@"))
        .collect();
    if lines.is_empty() {
        None
    } else {
        Some(lines.join("\n"))
    }
}
