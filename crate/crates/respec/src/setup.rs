//! Wiring a [`Engine`] from `respec.toml` and command-line overrides.

use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use anyhow::{Context, Result};
use respec_core::clock::{Clock, LogicalClock, SystemClock};
use respec_core::config::Config;
use respec_core::engine::Engine;
use respec_core::llm::{ChatCompletionsProvider, CompletionProvider, Gateway, Policy, TranscriptStore};
use respec_core::session::RunStore;
use respec_core::spec::CommandVerifier;
use respec_core::validate::TestRunner;

use crate::script::ScriptedProvider;

#[derive(Debug, Clone, Default)]
pub struct Options {
    /// Transcript directory; forces ReplayOnly.
    pub replay_dir: Option<PathBuf>,
    /// Script directory; records missing transcripts from the script.
    pub script_dir: Option<PathBuf>,
    pub logical_clock: bool,
    /// Executable substituted for `{respec}`; defaults to the running one.
    pub respec_bin: Option<PathBuf>,
}

pub fn load_config(path: Option<&Path>) -> Result<Config> {
    match path {
        Some(p) => Ok(Config::load(p)?),
        None if Path::new("respec.toml").exists() => Ok(Config::load(Path::new("respec.toml"))?),
        None => {
            Ok(Config {
                base_dir: std::env::current_dir()?,
                ..Config::default()
            })
        }
    }
}

pub fn clock(logical: bool) -> Arc<dyn Clock> {
    if logical {
        Arc::new(LogicalClock::new())
    } else {
        Arc::new(SystemClock)
    }
}

/// Placeholders shared by every command template.
pub fn template_vars(cfg: &Config, opts: &Options) -> Result<Vec<(String, String)>> {
    let exe = match &opts.respec_bin {
        Some(p) => p.clone(),
        None => std::env::current_exe().context("locating the respec executable")?,
    };
    let base = if cfg.base_dir.as_os_str().is_empty() {
        std::env::current_dir()?
    } else {
        std::path::absolute(&cfg.base_dir)?
    };
    Ok(vec![
        ("respec".into(), exe.to_string_lossy().into_owned()),
        ("config_dir".into(), base.to_string_lossy().into_owned()),
    ])
}

pub fn gateway(cfg: &Config, opts: &Options, clock: Arc<dyn Clock>) -> Result<Gateway> {
    let dir = match &opts.replay_dir {
        Some(d) => d.clone(),
        None => cfg.resolve(&cfg.llm.transcripts),
    };
    let store = TranscriptStore::open(dir);
    if opts.replay_dir.is_some() {
        return Ok(Gateway::replay_only(store, clock));
    }
    if let Some(script) = &opts.script_dir {
        let provider: Arc<dyn CompletionProvider> = Arc::new(ScriptedProvider::load_dir(script, cfg.templates())?);
        return Ok(Gateway::new(store, Policy::RecordIfMissing, Some(provider), clock));
    }
    let provider: Option<Arc<dyn CompletionProvider>> = cfg.llm.endpoint.as_ref().map(|url| {
        let key = std::env::var(&cfg.llm.api_key_env).ok();
        Arc::new(ChatCompletionsProvider::new(url.clone(), key, Duration::from_secs(cfg.llm.timeout_secs)))
            as Arc<dyn CompletionProvider>
    });
    Ok(Gateway::new(store, cfg.llm.policy, provider, clock))
}

pub fn verifier(cfg: &Config, opts: &Options) -> Result<CommandVerifier> {
    Ok(CommandVerifier {
        command: cfg.verifier.command.clone(),
        classpath: cfg.verifier.classpath.clone(),
        timeout: Duration::from_secs(cfg.verifier.timeout_secs),
        vars: template_vars(cfg, opts)?,
    })
}

pub fn runner(cfg: &Config, opts: &Options, clock: Arc<dyn Clock>) -> Result<TestRunner> {
    Ok(TestRunner {
        test_command: cfg.tests.test_command.clone(),
        build_command: cfg.tests.build_command.clone(),
        parallel_safe: cfg.tests.parallel_safe,
        max_parallel: cfg.tests.max_parallel,
        timeout: Duration::from_secs(cfg.tests.timeout_secs),
        vars: template_vars(cfg, opts)?,
        clock,
    })
}

pub fn engine(cfg: Config, run_dir: &Path, opts: &Options) -> Result<Engine> {
    let clock = clock(opts.logical_clock);
    let store = RunStore::open(run_dir)?;
    let gateway = gateway(&cfg, opts, clock.clone())?;
    let verifier = verifier(&cfg, opts)?;
    let runner = runner(&cfg, opts, clock.clone())?;
    Ok(Engine::new(cfg, store, gateway, Box::new(verifier), runner, clock))
}
