use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;
use std::time::Duration;

use anyhow::{anyhow, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use respec_core::config::Config;
use respec_core::engine::{resolve_case_roots, verdict_records, Engine, Step};
use respec_core::index::{build_index, default_index_path, extract_file, java_parser, update_index, CodeIndex};
use respec_core::jml::{extract_annotation, lint_semantics, parse_jml};
use respec_core::llm::TranscriptStore;
use respec_core::model::{BugCase, CandidatePatch, PatchMode, Snapshot};
use respec_core::session::SessionState;
use respec_core::taxonomy::{aggregate, render_csv, render_text};
use respec_core::validate::judge;

use crate::server::{self, AppState};
use crate::{mock, setup};

#[derive(Debug, Parser)]
#[command(name = "respec", version, about = "Spec-guided repair of single-method Java bugs")]
pub struct Cli {
    /// Configuration file (default: ./respec.toml when present).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Build or update a project's method index and print a timing row.
    Index(IndexArgs),
    /// JML utilities.
    #[command(subcommand)]
    Jml(JmlCommand),
    /// Model gateway utilities.
    #[command(subcommand)]
    Llm(LlmCommand),
    /// Draft and refine the specification of a case's buggy method.
    Spec(SpecArgs),
    /// Run a case through patch generation (plain, then mixed).
    Repair(RepairArgs),
    /// Judge a patch file against a case's tests.
    Validate(ValidateArgs),
    /// Print the per-category repair table of a run directory.
    Report(ReportArgs),
    /// Drive every case in a cases file through the pipeline.
    Run(RunArgs),
    /// Serve the review API over a run directory.
    Serve(ServeArgs),
    #[command(hide = true)]
    MockTest {
        #[arg(long)]
        rules: PathBuf,
        #[arg(long)]
        workdir: PathBuf,
        test: String,
    },
    #[command(hide = true)]
    MockVerifier {
        #[arg(long)]
        rules: Option<PathBuf>,
        #[arg(long)]
        sourcepath: PathBuf,
        file: PathBuf,
    },
    #[command(hide = true)]
    MockBuild { dir: PathBuf },
}

#[derive(Debug, Args)]
pub struct IndexArgs {
    pub root: PathBuf,
    /// Directories of dependency sources for the public API catalog.
    #[arg(long = "deps")]
    pub deps: Vec<PathBuf>,
    /// Update an existing index instead of rebuilding.
    #[arg(long)]
    pub update: bool,
    /// Files changed since the index was written (with --update).
    #[arg(long, num_args = 1.., requires = "update")]
    pub changed: Vec<PathBuf>,
    /// Index file (default: <root>/.respec/index/index.json).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum JmlCommand {
    /// Print `severity:line:col:message` for each problem. Java files are
    /// checked annotation by annotation against the method that follows.
    Lint { file: PathBuf },
}

#[derive(Debug, Subcommand)]
pub enum LlmCommand {
    /// Check that every transcript is stored under its prompt key.
    VerifyStore {
        /// Transcript directory (default: from config).
        #[arg(long)]
        dir: Option<PathBuf>,
    },
}

#[derive(Debug, Args)]
pub struct CaseArgs {
    pub case_id: String,
    /// JSON array of cases; project roots resolve against its directory.
    #[arg(long, default_value = "cases.json")]
    pub cases: PathBuf,
    #[arg(long, default_value = ".respec")]
    pub run_dir: PathBuf,
    #[arg(long)]
    pub replay_dir: Option<PathBuf>,
    #[arg(long)]
    pub logical_clock: bool,
}

#[derive(Debug, Args)]
pub struct SpecArgs {
    #[command(flatten)]
    pub case: CaseArgs,
    #[arg(long)]
    pub max_iter: Option<u32>,
}

#[derive(Debug, Args)]
pub struct RepairArgs {
    #[command(flatten)]
    pub case: CaseArgs,
    #[arg(long)]
    pub plain: Option<u32>,
    #[arg(long)]
    pub mixed: Option<u32>,
}

#[derive(Debug, Args)]
pub struct ValidateArgs {
    pub case_id: String,
    /// Unified diff against the pristine project.
    pub patch_file: PathBuf,
    #[arg(long, default_value = "cases.json")]
    pub cases: PathBuf,
    #[arg(long, default_value = ".respec")]
    pub run_dir: PathBuf,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum Format {
    Text,
    Csv,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    pub run_dir: PathBuf,
    #[arg(long, value_enum, default_value = "text")]
    pub format: Format,
}

#[derive(Debug, Args)]
pub struct RunArgs {
    pub cases_file: PathBuf,
    /// Replay transcripts from this directory; no provider is contacted.
    #[arg(long)]
    pub replay_dir: Option<PathBuf>,
    #[arg(long, default_value_t = 1)]
    pub parallel: usize,
    #[arg(long, default_value = ".respec")]
    pub run_dir: PathBuf,
    /// Stamp events from a fixed epoch so runs are byte-identical.
    #[arg(long)]
    pub logical_clock: bool,
    /// Record missing transcripts from scripted responses in this directory.
    #[arg(long, hide = true, conflicts_with = "replay_dir")]
    pub script_dir: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long, default_value = "127.0.0.1:7878")]
    pub addr: String,
    #[arg(long, default_value = ".respec")]
    pub run_dir: PathBuf,
    #[arg(long)]
    pub replay_dir: Option<PathBuf>,
    /// Record reviews only; do not continue the pipeline afterwards.
    #[arg(long)]
    pub no_drive: bool,
}

pub fn main() -> ExitCode {
    let cli = Cli::parse();
    let hidden = matches!(cli.command, Command::MockTest { .. } | Command::MockVerifier { .. } | Command::MockBuild { .. });
    if !hidden {
        tracing_subscriber::fmt()
            .with_env_filter(
                tracing_subscriber::EnvFilter::try_from_env("RESPEC_LOG").unwrap_or_else(|_| "warn".into()),
            )
            .with_writer(std::io::stderr)
            .init();
    }
    match dispatch(cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn code(c: i32) -> u8 {
    c.clamp(0, 255) as u8
}

pub fn load_cases(path: &Path) -> Result<Vec<BugCase>> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let mut cases: Vec<BugCase> = serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
    let base = std::path::absolute(path)?.parent().map(Path::to_path_buf).unwrap_or_default();
    resolve_case_roots(&mut cases, &base);
    for c in &cases {
        c.validate().with_context(|| format!("case {}", c.case_id))?;
    }
    Ok(cases)
}

fn find_case(path: &Path, id: &str) -> Result<BugCase> {
    load_cases(path)?
        .into_iter()
        .find(|c| c.case_id.as_str() == id)
        .ok_or_else(|| anyhow!("case `{id}` is not in {}", path.display()))
}

fn dispatch(cli: Cli) -> Result<u8> {
    match cli.command {
        Command::MockTest { rules, workdir, test } => Ok(code(mock::mock_test(&rules, &workdir, &test)?)),
        Command::MockVerifier { rules, sourcepath, file } => {
            Ok(code(mock::mock_verifier(rules.as_deref(), &sourcepath, &file)?))
        }
        Command::MockBuild { dir } => Ok(code(mock::mock_build(&dir)?)),
        Command::Index(a) => index(a),
        Command::Jml(JmlCommand::Lint { file }) => lint(&file),
        Command::Llm(LlmCommand::VerifyStore { dir }) => {
            let cfg = setup::load_config(cli.config.as_deref())?;
            let dir = dir.unwrap_or_else(|| cfg.resolve(&cfg.llm.transcripts));
            let problems = TranscriptStore::open(&dir).verify();
            for p in &problems {
                println!("{p}");
            }
            if problems.is_empty() {
                println!("{}: ok", dir.display());
                Ok(0)
            } else {
                Ok(1)
            }
        }
        Command::Spec(a) => {
            let mut cfg = setup::load_config(cli.config.as_deref())?;
            if let Some(n) = a.max_iter {
                cfg.refine.max_iterations = n;
            }
            let engine = case_engine(cfg, &a.case)?;
            let id = ensure_session(&engine, &a.case)?;
            let step = engine.drive_until(&id, |s| s == SessionState::SpecSettled)?;
            let s = engine.load(&id)?;
            if let Some(r) = &s.data.refinement {
                for h in &r.history {
                    println!("-- iteration {} ({:?})", h.spec.iteration, h.outcome.status);
                    println!("{}", h.spec.text.trim());
                    for d in &h.outcome.diagnostics {
                        println!("   {d}");
                    }
                }
                println!("settled: {:?}", r.settled);
            }
            Ok(step_code(&step))
        }
        Command::Repair(a) => {
            let mut cfg = setup::load_config(cli.config.as_deref())?;
            if let Some(n) = a.plain {
                cfg.patch.plain_attempts = n;
            }
            if let Some(n) = a.mixed {
                cfg.patch.mixed_attempts = n;
            }
            cfg.validate().map_err(|e| anyhow!(e))?;
            let engine = case_engine(cfg, &a.case)?;
            let id = ensure_session(&engine, &a.case)?;
            let step = engine.drive(&id)?;
            let s = engine.load(&id)?;
            for r in &s.data.patching.log {
                println!("{}", serde_json::to_string(r)?);
            }
            println!("state: {}", s.state);
            Ok(step_code(&step))
        }
        Command::Validate(a) => {
            let cfg = setup::load_config(cli.config.as_deref())?;
            let case = find_case(&a.cases, &a.case_id)?;
            let diff = fs::read_to_string(&a.patch_file).with_context(|| format!("reading {}", a.patch_file.display()))?;
            let pristine = Snapshot::load(&case.project_root)?;
            let runner = setup::runner(&cfg, &setup::Options::default(), setup::clock(false))?;
            let target = case
                .buggy_method
                .clone()
                .ok_or_else(|| anyhow!("case `{}` names no buggy method", a.case_id))?;
            let patch = CandidatePatch::new(diff, PatchMode::Plain, 0, target);
            let dir = a.run_dir.join("work").join(case.case_id.as_str()).join(&patch.patch_id);
            let j = judge(&patch, &case, &pristine, &runner, &dir)?;
            println!("{}", serde_json::to_string_pretty(&j.verdict)?);
            Ok(if j.verdict.plausible { 0 } else { 1 })
        }
        Command::Report(a) => {
            let store = respec_core::session::RunStore::open(&a.run_dir)?;
            let table = aggregate(&verdict_records(&store)?);
            match a.format {
                Format::Text => print!("{}", render_text(&table)),
                Format::Csv => print!("{}", render_csv(&table)),
            }
            Ok(0)
        }
        Command::Run(a) => {
            let cfg = match &cli.config {
                Some(p) => Config::load(p)?,
                None => {
                    let beside = a.cases_file.parent().unwrap_or(Path::new(".")).join("respec.toml");
                    setup::load_config(beside.exists().then_some(beside.as_path()))?
                }
            };
            let cases = load_cases(&a.cases_file)?;
            let opts = setup::Options {
                replay_dir: a.replay_dir,
                script_dir: a.script_dir,
                logical_clock: a.logical_clock,
                respec_bin: None,
            };
            let engine = setup::engine(cfg, &a.run_dir, &opts)?;
            let summary = engine.run_cases(cases, a.parallel)?;
            for e in &summary.sessions {
                let mut line = format!("{:<12} {}", e.case_id, e.state);
                if let Some(m) = e.first_plausible {
                    line.push_str(&format!("  plausible({m})"));
                }
                if e.overfit_suspected {
                    line.push_str("  overfit-suspected");
                }
                if let Some(s) = &e.last_step {
                    line.push_str(&format!("  {s}"));
                }
                println!("{line}");
            }
            Ok(0)
        }
        Command::Serve(a) => {
            let cfg = setup::load_config(cli.config.as_deref())?;
            let opts = setup::Options {
                replay_dir: a.replay_dir,
                ..Default::default()
            };
            let engine = setup::engine(cfg, &a.run_dir, &opts)?;
            let app = Arc::new(AppState {
                engine: Arc::new(engine),
                drive_after_review: !a.no_drive,
                poll_interval: Duration::from_millis(250),
            });
            let rt = tokio::runtime::Runtime::new()?;
            rt.block_on(server::serve(app, &a.addr))?;
            Ok(0)
        }
    }
}

fn step_code(step: &Step) -> u8 {
    match step {
        Step::Parked(r) => {
            eprintln!("parked: {r}");
            1
        }
        Step::Failed(c) => {
            eprintln!("stage failed: {c}");
            1
        }
        _ => 0,
    }
}

fn case_engine(cfg: Config, a: &CaseArgs) -> Result<Engine> {
    let opts = setup::Options {
        replay_dir: a.replay_dir.clone(),
        logical_clock: a.logical_clock,
        ..Default::default()
    };
    setup::engine(cfg, &a.run_dir, &opts)
}

fn ensure_session(engine: &Engine, a: &CaseArgs) -> Result<String> {
    if !engine.store().exists(&a.case_id) {
        engine.create(find_case(&a.cases, &a.case_id)?)?;
    }
    Ok(a.case_id.clone())
}

fn index(a: IndexArgs) -> Result<u8> {
    let clock = setup::clock(false);
    let out = a.out.clone().unwrap_or_else(|| default_index_path(&a.root));
    let idx = if a.update {
        let old = CodeIndex::load(&out).with_context(|| format!("loading {}", out.display()))?;
        update_index(&old, &a.root, &a.changed, clock.as_ref())?
    } else {
        build_index(&a.root, &a.deps, clock.as_ref())?
    };
    idx.save(&out)?;
    let name = a
        .root
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| a.root.display().to_string());
    println!("project,method_count,seconds");
    println!("{}", idx.timing_row(&name));
    Ok(0)
}

fn lint(file: &Path) -> Result<u8> {
    let text = fs::read_to_string(file).with_context(|| format!("reading {}", file.display()))?;
    let mut lines = Vec::new();
    if file.extension().is_some_and(|e| e == "java") {
        let mut parser = java_parser();
        let rel = file.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
        let ex = extract_file(&mut parser, &rel, text.as_bytes());
        for (start, body) in annotation_blocks(&text) {
            let parsed = parse_jml(&body);
            for d in &parsed.diagnostics {
                lines.push(shift(&d.to_string(), start));
            }
            let end = start + body.lines().count() as u32 - 1;
            let next = ex
                .methods
                .iter()
                .filter(|m| m.method.line_span.start > end)
                .min_by_key(|m| m.method.line_span.start);
            if let (false, Some(m)) = (parsed.has_errors(), next) {
                for mut d in lint_semantics(&parsed.clauses, m) {
                    d.source = parsed.source_of(&d);
                    lines.push(shift(&d.to_string(), start));
                }
            }
        }
    } else {
        let body = extract_annotation(&text).unwrap_or(text);
        for d in parse_jml(&body).diagnostics {
            lines.push(d.to_string());
        }
    }
    for l in &lines {
        println!("{l}");
    }
    Ok(if lines.is_empty() { 0 } else { 1 })
}

/// (1-based first line, text) of each JML block comment or `//@` run.
fn annotation_blocks(text: &str) -> Vec<(u32, String)> {
    let all: Vec<&str> = text.lines().collect();
    let mut out = Vec::new();
    let mut i = 0;
    while i < all.len() {
        let t = all[i].trim_start();
        if t.starts_with("/*@") || t.starts_with("/* @") {
            let s = i;
            while i + 1 < all.len() && !all[i].contains("*/") {
                i += 1;
            }
            out.push((s as u32 + 1, all[s..=i].join("\n")));
        } else if t.starts_with("//@") {
            let s = i;
            while i + 1 < all.len() && all[i + 1].trim_start().starts_with("//@") {
                i += 1;
            }
            out.push((s as u32 + 1, all[s..=i].join("\n")));
        }
        i += 1;
    }
    out
}

/// Rebases the line field of a `severity:line:col:message` diagnostic.
fn shift(diag: &str, first_line: u32) -> String {
    let mut parts = diag.splitn(4, ':');
    let (Some(sev), Some(line), Some(col), Some(msg)) = (parts.next(), parts.next(), parts.next(), parts.next()) else {
        return diag.to_string();
    };
    let line: u32 = line.parse().unwrap_or(0);
    let abs = if line == 0 { first_line } else { first_line + line - 1 };
    format!("{sev}:{abs}:{col}:{msg}")
}
