//! Bug-type classification and the per-category results table.

use std::fmt::Write as _;
use std::sync::LazyLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::model::{BugCase, BugCategory};
use crate::validate::parse_stack_traces;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum TaxonomyError {
    #[error("report table has no bugs")]
    EmptyTable,
    #[error("line {line}: {message}")]
    BadRecord { line: usize, message: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TriggerSource {
    ReportText,
    ExceptionType,
    AssertionDiff,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Pattern {
    Regex(&'static str),
    /// Expected and actual strings differ beyond line breaks.
    StringContentDiff,
    /// Expected and actual strings differ only in line breaks.
    NewlineOnlyDiff,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Trigger {
    pub source: TriggerSource,
    pub pattern: Pattern,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CategoryRule {
    pub category: BugCategory,
    pub triggers: Vec<Trigger>,
}

const fn exc(p: &'static str) -> Trigger {
    Trigger { source: TriggerSource::ExceptionType, pattern: Pattern::Regex(p) }
}
const fn diff(p: Pattern) -> Trigger {
    Trigger { source: TriggerSource::AssertionDiff, pattern: p }
}
const fn report(p: &'static str) -> Trigger {
    Trigger { source: TriggerSource::ReportText, pattern: Pattern::Regex(p) }
}

/// The decision table. Within a source, earlier rules win.
pub fn rule_table() -> Vec<CategoryRule> {
    use BugCategory::*;
    let rule = |category, triggers: Vec<Trigger>| CategoryRule { category, triggers };
    vec![
        rule(NullPointer, vec![exc(r"^NullPointerException$"), report(r"(?i)NullPointerException|\bNPE\b|null pointer")]),
        rule(
            IndexOutOfBound,
            vec![
                exc(r"^(?:Array|String)?IndexOutOfBoundsException$"),
                report(r"(?i)IndexOutOfBounds|index out of (?:bounds|range)"),
            ],
        ),
        rule(
            InfiniteLoopOrStackOverflow,
            vec![exc(r"^StackOverflowError$"), report(r"(?i)stack ?overflow|infinite loop|never terminates|\bhangs\b")],
        ),
        rule(EofError, vec![exc(r"^EOFException$"), report(r"(?i)\bEOF\b|end of (?:file|stream)")]),
        rule(TypeError, vec![exc(r"^ClassCastException$"), report(r"(?i)ClassCastException|wrong type|type mismatch")]),
        rule(NewLineError, vec![diff(Pattern::NewlineOnlyDiff), report(r"(?i)new ?line|line separator|line break|CRLF")]),
        rule(StringManipulation, vec![diff(Pattern::StringContentDiff), report(r"(?i)substring|string manipulation|toCanonical|trailing char|leading char")]),
        rule(
            WrongExceptionThrown,
            vec![report(r"(?i)wrong exception|throws \w+ instead of|should throw \w+ (?:rather|instead)")],
        ),
        rule(
            ExceptionNotThrown,
            vec![
                diff(Pattern::Regex(r"(?i)expected exception:")),
                report(r"(?i)should (?:throw|warn)|does not throw|(?:exception|warning) (?:is )?not (?:thrown|raised|issued)|no exception"),
            ],
        ),
        rule(IntegerOverflow, vec![report(r"(?i)integer overflow|\boverflows?\b|MAX_VALUE|MIN_VALUE")]),
        rule(SubclassingError, vec![report(r"(?i)subclass|inherit|overrid")]),
        rule(EdgeCaseHandling, vec![report(r"(?i)edge case|corner case|empty (?:string|array|list|input)|boundary")]),
        rule(LogicError, vec![]),
    ]
}

static RULES: LazyLock<Vec<(CategoryRule, Vec<Option<Regex>>)>> = LazyLock::new(|| {
    rule_table()
        .into_iter()
        .map(|r| {
            let compiled = r
                .triggers
                .iter()
                .map(|t| match t.pattern {
                    Pattern::Regex(p) => Some(Regex::new(p).expect("rule regex")),
                    _ => None,
                })
                .collect();
            (r, compiled)
        })
        .collect()
});

static JUNIT_DIFF: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"(?s)expected:\s*<(.*?)>\s*but was:\s*<(.*?)>(?:\r?\n|$)").unwrap());
static FOUND_DIFF: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"(?m)expected \[(.*?)\] but found \[(.*?)\]\s*$").unwrap());
static YIELDS_DIFF: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r"(?s)yields:?\s*\n\s*([^\n]*?)\s*\n\s*while the expected value is:?\s*\n\s*([^\n]*?)\s*(?:\n|$)").unwrap()
});

/// (expected, actual) pairs quoted in failure output or a report.
pub fn assertion_diffs(text: &str) -> Vec<(String, String)> {
    let mut out = Vec::new();
    for c in JUNIT_DIFF.captures_iter(text) {
        out.push((c[1].to_string(), c[2].to_string()));
    }
    for c in FOUND_DIFF.captures_iter(text) {
        out.push((c[1].to_string(), c[2].to_string()));
    }
    for c in YIELDS_DIFF.captures_iter(text) {
        out.push((c[2].to_string(), c[1].to_string()));
    }
    out
}

fn is_scalar(s: &str) -> bool {
    let t = s.trim();
    t.parse::<f64>().is_ok() || t == "true" || t == "false" || t == "null"
}

fn strip_breaks(s: &str) -> String {
    s.replace("\\r", "").replace("\\n", "").replace(['\r', '\n'], "")
}

fn diff_matches(p: Pattern, diffs: &[(String, String)]) -> bool {
    diffs.iter().any(|(e, a)| {
        if e == a || (is_scalar(e) && is_scalar(a)) {
            return false;
        }
        let newline_only = strip_breaks(e) == strip_breaks(a);
        match p {
            Pattern::NewlineOnlyDiff => newline_only,
            Pattern::StringContentDiff => !newline_only,
            Pattern::Regex(_) => false,
        }
    })
}

/// Exception types to test, root causes first, then in order of appearance.
fn exception_names(text: &str) -> Vec<String> {
    let traces = parse_stack_traces(text);
    let mut order: Vec<usize> = (0..traces.len()).collect();
    let root = |i: usize| traces[i].caused_by || traces.get(i + 1).is_none_or(|n| !n.caused_by);
    order.sort_by_key(|&i| (!root(i), i));
    order
        .into_iter()
        .map(|i| traces[i].exception.rsplit('.').next().unwrap_or("").to_string())
        .collect()
}

/// Exception triggers, then assertion diffs, then report keywords;
/// LogicError when nothing fires.
pub fn classify_bug_type(case: &BugCase, failure_logs: &str) -> BugCategory {
    let both = format!("{}\n{}", case.report_text, failure_logs);
    for name in exception_names(&both) {
        for (rule, compiled) in RULES.iter() {
            for (t, re) in rule.triggers.iter().zip(compiled) {
                if t.source == TriggerSource::ExceptionType && re.as_ref().is_some_and(|r| r.is_match(&name)) {
                    return rule.category;
                }
            }
        }
    }
    let diffs = assertion_diffs(&both);
    for (rule, compiled) in RULES.iter() {
        for (t, re) in rule.triggers.iter().zip(compiled) {
            if t.source != TriggerSource::AssertionDiff {
                continue;
            }
            let hit = match (t.pattern, re) {
                (Pattern::Regex(_), Some(re)) => re.is_match(failure_logs),
                (p, _) => diff_matches(p, &diffs),
            };
            if hit {
                return rule.category;
            }
        }
    }
    for (rule, compiled) in RULES.iter() {
        for (t, re) in rule.triggers.iter().zip(compiled) {
            if t.source == TriggerSource::ReportText && re.as_ref().is_some_and(|r| r.is_match(&case.report_text)) {
                return rule.category;
            }
        }
    }
    BugCategory::LogicError
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VerdictRecord {
    pub case_id: String,
    pub category: BugCategory,
    pub fixed_plain: bool,
    pub fixed_ours: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReportRow {
    pub category: BugCategory,
    pub total: u32,
    pub fixed_plain: u32,
    pub fixed_ours: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReportTable {
    /// One row per category, in table order.
    pub rows: Vec<ReportRow>,
    pub total: u32,
    pub fixed_plain: u32,
    pub fixed_ours: u32,
}

pub fn aggregate(records: &[VerdictRecord]) -> ReportTable {
    let mut rows: Vec<ReportRow> = BugCategory::ALL
        .iter()
        .map(|&category| ReportRow {
            category,
            total: 0,
            fixed_plain: 0,
            fixed_ours: 0,
        })
        .collect();
    for r in records {
        let row = rows.iter_mut().find(|row| row.category == r.category).expect("all categories present");
        row.total += 1;
        row.fixed_plain += r.fixed_plain as u32;
        row.fixed_ours += r.fixed_ours as u32;
    }
    ReportTable {
        total: rows.iter().map(|r| r.total).sum(),
        fixed_plain: rows.iter().map(|r| r.fixed_plain).sum(),
        fixed_ours: rows.iter().map(|r| r.fixed_ours).sum(),
        rows,
    }
}

/// `part/whole` as a percentage rounded half-up to one decimal, in tenths.
fn tenths(part: u32, whole: u32) -> u64 {
    (part as u64 * 2000 + whole as u64) / (whole as u64 * 2)
}

/// (plain rate, ours rate) in percent, one decimal.
pub fn percentage_summary(table: &ReportTable) -> Result<(f64, f64), TaxonomyError> {
    if table.total == 0 {
        return Err(TaxonomyError::EmptyTable);
    }
    Ok((
        tenths(table.fixed_plain, table.total) as f64 / 10.0,
        tenths(table.fixed_ours, table.total) as f64 / 10.0,
    ))
}

pub fn render_text(table: &ReportTable) -> String {
    let head = ["Bug type", "# of bugs", "Plain", "Mixed"];
    let mut rows: Vec<[String; 4]> = table
        .rows
        .iter()
        .map(|r| {
            [
                r.category.title().to_string(),
                r.total.to_string(),
                r.fixed_plain.to_string(),
                r.fixed_ours.to_string(),
            ]
        })
        .collect();
    rows.push([
        "Total".into(),
        table.total.to_string(),
        table.fixed_plain.to_string(),
        table.fixed_ours.to_string(),
    ]);
    let mut width = head.map(str::len);
    for r in &rows {
        for (w, c) in width.iter_mut().zip(r) {
            *w = (*w).max(c.len());
        }
    }
    let line = |cells: [&str; 4]| {
        format!(
            "{:<w0$}  {:>w1$}  {:>w2$}  {:>w3$}\n",
            cells[0],
            cells[1],
            cells[2],
            cells[3],
            w0 = width[0],
            w1 = width[1],
            w2 = width[2],
            w3 = width[3]
        )
    };
    let mut out = line(head);
    out.push_str(&"-".repeat(width.iter().sum::<usize>() + 6));
    out.push('\n');
    let n = rows.len();
    for (i, r) in rows.iter().enumerate() {
        if i + 1 == n {
            out.push_str(&"-".repeat(width.iter().sum::<usize>() + 6));
            out.push('\n');
        }
        out.push_str(&line([&r[0], &r[1], &r[2], &r[3]]));
    }
    if let Ok((p, o)) = percentage_summary(table) {
        let _ = writeln!(out, "\nplausible: plain {p:.1}%, mixed {o:.1}%");
    }
    out
}

pub fn render_csv(table: &ReportTable) -> String {
    let mut out = String::from("category,total,fixed_plain,fixed_ours\n");
    for r in &table.rows {
        let _ = writeln!(out, "{},{},{},{}", r.category.label(), r.total, r.fixed_plain, r.fixed_ours);
    }
    let _ = writeln!(out, "Total,{},{},{}", table.total, table.fixed_plain, table.fixed_ours);
    out
}

/// Parses `case_id,category,fixed_plain,fixed_ours` lines (header optional).
pub fn parse_records_csv(text: &str) -> Result<Vec<VerdictRecord>, TaxonomyError> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') || line.starts_with("case_id,") {
            continue;
        }
        let bad = |message: String| TaxonomyError::BadRecord { line: i + 1, message };
        let cols: Vec<&str> = line.split(',').map(str::trim).collect();
        if cols.len() != 4 {
            return Err(bad(format!("expected 4 columns, found {}", cols.len())));
        }
        let flag = |s: &str| match s {
            "1" | "true" => Ok(true),
            "0" | "false" => Ok(false),
            other => Err(bad(format!("bad flag `{other}`"))),
        };
        out.push(VerdictRecord {
            case_id: cols[0].to_string(),
            category: cols[1].parse().map_err(|e| bad(format!("{e}")))?,
            fixed_plain: flag(cols[2])?,
            fixed_ours: flag(cols[3])?,
        });
    }
    Ok(out)
}

pub fn render_records_csv(records: &[VerdictRecord]) -> String {
    let mut out = String::from("case_id,category,fixed_plain,fixed_ours\n");
    for r in records {
        let _ = writeln!(out, "{},{},{},{}", r.case_id, r.category.label(), r.fixed_plain as u8, r.fixed_ours as u8);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{CaseId, TestRef};
    use proptest::prelude::*;

    fn case(report: &str) -> BugCase {
        BugCase {
            schema_version: 1,
            case_id: CaseId::new("c"),
            project_root: "p".into(),
            report_text: report.into(),
            failing_tests: vec![TestRef::provided("T", "t")],
            buggy_method: None,
            category: None,
        }
    }

    #[test]
    fn every_category_but_logic_has_a_trigger() {
        let table = rule_table();
        assert_eq!(table.len(), 13);
        for r in &table {
            assert_eq!(r.triggers.is_empty(), r.category == BugCategory::LogicError, "{:?}", r.category);
        }
        for c in BugCategory::ALL {
            assert!(table.iter().any(|r| r.category == c));
        }
    }

    #[test]
    fn classifies_report_and_log_signals() {
        let cli5 = "NullPointerException in Util.stripLeadingHyphens when passed a null argument\nIf you try to do a hasOption(null), you get a NPE:\njava.lang.NullPointerException\n   at org.apache.commons.cli.Util.stripLeadingHyphens(Util.java:39)\n   ...\n";
        assert_eq!(classify_bug_type(&case(cli5), ""), BugCategory::NullPointer);

        let jackson = "...\nnew ReferenceType(...).toCanonical()\nyields:\n   java.lang.Object<$1\nwhile the expected value is:\n   java.lang.Object<$1>\n";
        assert_eq!(classify_bug_type(&case(jackson), ""), BugCategory::StringManipulation);
        assert_eq!(assertion_diffs(jackson), vec![("java.lang.Object<$1>".to_string(), "java.lang.Object<$1".to_string())]);

        let so = "java.lang.StackOverflowError\n\tat a.B.f(B.java:3)\n";
        assert_eq!(classify_bug_type(&case("recursion"), so), BugCategory::InfiniteLoopOrStackOverflow);

        let junit = "org.junit.ComparisonFailure: expected:<java.lang.Object<$1>> but was:<java.lang.Object<$1>\n\tat org.junit.Assert.assertEquals(Assert.java:115)\n";
        assert_eq!(classify_bug_type(&case(""), junit), BugCategory::StringManipulation);

        let nl = "junit.framework.ComparisonFailure: expected:<a\\nb> but was:<a\\r\\nb>\n";
        assert_eq!(classify_bug_type(&case(""), nl), BugCategory::NewLineError);

        // numeric mismatches carry no string signal
        let num = "java.lang.AssertionError: expected:<4> but was:<5>\n";
        assert_eq!(classify_bug_type(&case(""), num), BugCategory::LogicError);

        let idx = "Caused by: java.lang.StringIndexOutOfBoundsException: index 3\n\tat a.B.f(B.java:1)\n";
        assert_eq!(classify_bug_type(&case(""), idx), BugCategory::IndexOutOfBound);
        assert_eq!(classify_bug_type(&case("fails with an empty string"), ""), BugCategory::EdgeCaseHandling);
        assert_eq!(classify_bug_type(&case(""), ""), BugCategory::LogicError);
        assert_eq!(
            classify_bug_type(&case(""), "java.lang.AssertionError: Expected exception: java.lang.IllegalArgumentException\n"),
            BugCategory::ExceptionNotThrown
        );
    }

    #[test]
    fn rates_round_to_one_decimal() {
        let rec = |c, p, o| VerdictRecord {
            case_id: "x".into(),
            category: c,
            fixed_plain: p,
            fixed_ours: o,
        };
        assert_eq!(percentage_summary(&aggregate(&[])), Err(TaxonomyError::EmptyTable));
        let one = aggregate(&[rec(BugCategory::NullPointer, true, true)]);
        assert_eq!(percentage_summary(&one).unwrap(), (100.0, 100.0));
        // 8/32 and 12/32 by hand: 25.0 and 37.5
        let mut v = Vec::new();
        for i in 0..32 {
            v.push(rec(BugCategory::LogicError, i < 8, i < 12));
        }
        assert_eq!(percentage_summary(&aggregate(&v)).unwrap(), (25.0, 37.5));
        assert_eq!(tenths(1, 3), 333);
        assert_eq!(tenths(2, 3), 667);
        assert_eq!(tenths(1, 8), 125);
    }

    #[test]
    fn csv_round_trip() {
        let recs = vec![
            VerdictRecord { case_id: "a".into(), category: BugCategory::TypeError, fixed_plain: false, fixed_ours: true },
            VerdictRecord { case_id: "b".into(), category: BugCategory::EofError, fixed_plain: false, fixed_ours: false },
        ];
        assert_eq!(parse_records_csv(&render_records_csv(&recs)).unwrap(), recs);
        assert!(matches!(parse_records_csv("a,Nope,1,1"), Err(TaxonomyError::BadRecord { line: 1, .. })));
        let t = aggregate(&recs);
        let csv = render_csv(&t);
        assert!(csv.ends_with("Total,2,0,1\n"));
        assert_eq!(csv.lines().count(), 15);
        assert!(render_text(&t).contains("Type error"));
    }

    fn arb_record() -> impl Strategy<Value = VerdictRecord> {
        (0..13usize, any::<bool>(), any::<bool>()).prop_map(|(c, p, o)| VerdictRecord {
            case_id: "r".into(),
            category: BugCategory::ALL[c],
            fixed_plain: p,
            fixed_ours: o,
        })
    }

    proptest! {
        #[test]
        fn aggregate_matches_tally(records in prop::collection::vec(arb_record(), 0..60), seed in any::<u64>()) {
            let t = aggregate(&records);
            for row in &t.rows {
                let mine: Vec<&VerdictRecord> = records.iter().filter(|r| r.category == row.category).collect();
                prop_assert_eq!(row.total as usize, mine.len());
                prop_assert_eq!(row.fixed_plain as usize, mine.iter().filter(|r| r.fixed_plain).count());
                prop_assert_eq!(row.fixed_ours as usize, mine.iter().filter(|r| r.fixed_ours).count());
                prop_assert!(row.fixed_plain <= row.total && row.fixed_ours <= row.total);
            }
            prop_assert_eq!(t.total as usize, records.len());
            let mut shuffled = records.clone();
            let n = shuffled.len();
            if n > 1 {
                let k = (seed % n as u64) as usize;
                shuffled.rotate_left(k);
                shuffled.reverse();
            }
            prop_assert_eq!(aggregate(&shuffled), t);
        }

        #[test]
        fn classification_is_total_and_stable(report in ".{0,80}", logs in ".{0,80}") {
            let c = case(&report);
            prop_assert_eq!(classify_bug_type(&c, &logs), classify_bug_type(&c, &logs));
        }
    }
}
