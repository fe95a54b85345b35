#![allow(dead_code)]

use std::fs;
use std::path::{Path, PathBuf};

use respec::setup::{self, Options};
use respec_core::config::Config;
use respec_core::engine::Engine;
use respec_core::model::BugCase;

pub const CASE_IDS: [&str; 6] = ["cli5", "codec10", "jackson99", "ring1", "stats2", "slug3"];

pub fn corpus_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures/corpus")
}

fn copy_tree(from: &Path, to: &Path) {
    fs::create_dir_all(to).unwrap();
    for e in fs::read_dir(from).unwrap() {
        let e = e.unwrap();
        let dst = to.join(e.file_name());
        if e.file_type().unwrap().is_dir() {
            copy_tree(&e.path(), &dst);
        } else {
            fs::copy(e.path(), dst).unwrap();
        }
    }
}

/// A private copy of the replay corpus; tests that record new
/// transcripts write them here.
pub struct Corpus {
    pub dir: tempfile::TempDir,
}

impl Corpus {
    pub fn new() -> Self {
        let dir = tempfile::tempdir().unwrap();
        copy_tree(&corpus_dir(), &dir.path().join("corpus"));
        Corpus { dir }
    }

    pub fn root(&self) -> PathBuf {
        self.dir.path().join("corpus")
    }

    pub fn run_dir(&self) -> PathBuf {
        self.dir.path().join("run")
    }

    pub fn config(&self) -> Config {
        Config::load(&self.root().join("respec.toml")).unwrap()
    }

    pub fn cases(&self) -> Vec<BugCase> {
        respec::cli::load_cases(&self.root().join("cases.json")).unwrap()
    }

    pub fn case(&self, id: &str) -> BugCase {
        self.cases().into_iter().find(|c| c.case_id.as_str() == id).unwrap()
    }

    /// Replays checked-in transcripts only.
    pub fn replay_options(&self) -> Options {
        Options {
            replay_dir: Some(self.root().join("transcripts")),
            script_dir: None,
            logical_clock: true,
            respec_bin: Some(PathBuf::from(env!("CARGO_BIN_EXE_respec"))),
        }
    }

    /// Replays, and answers prompts missing from the transcripts from the
    /// fixture script.
    pub fn script_options(&self) -> Options {
        Options {
            replay_dir: None,
            script_dir: Some(self.root().join("script")),
            logical_clock: true,
            respec_bin: Some(PathBuf::from(env!("CARGO_BIN_EXE_respec"))),
        }
    }

    pub fn engine(&self, opts: &Options) -> Engine {
        self.engine_with(self.config(), opts)
    }

    pub fn engine_with(&self, cfg: Config, opts: &Options) -> Engine {
        setup::engine(cfg, &self.run_dir(), opts).unwrap()
    }
}
