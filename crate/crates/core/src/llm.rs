//! Text-generation gateway with record/replay. Every prompt is keyed by a
//! digest of its content; the transcript store is a directory of
//! `<key>.json` envelopes so a whole run can be replayed without a model.

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use std::time::Duration;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use crate::clock::Clock;
use crate::digest::digest_parts;

#[derive(Debug, thiserror::Error)]
pub enum LlmError {
    #[error("no recorded transcript for key {0}")]
    MissingTranscript(String),
    #[error("provider error (status {status:?}): {message}")]
    ProviderError { status: Option<u16>, message: String },
    #[error("policy {0:?} needs a provider but none is configured")]
    NoProvider(Policy),
    #[error("duplicate prompt section label `{0}`")]
    DuplicateLabel(String),
    #[error("transcript store error on {path}: {message}")]
    Store { path: PathBuf, message: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptSection {
    pub label: String,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prompt {
    pub sections: Vec<PromptSection>,
    pub model_id: String,
    pub temperature: f64,
    pub max_tokens: u32,
}

fn normalize_newlines(s: &str) -> String {
    s.replace("\r\n", "\n").replace('\r', "\n")
}

impl Prompt {
    pub fn new(model_id: impl Into<String>, max_tokens: u32) -> Self {
        Prompt {
            sections: Vec::new(),
            model_id: model_id.into(),
            temperature: 0.0,
            max_tokens,
        }
    }

    pub fn push(&mut self, label: &str, text: impl Into<String>) -> Result<(), LlmError> {
        if self.section(label).is_some() {
            return Err(LlmError::DuplicateLabel(label.to_string()));
        }
        self.sections.push(PromptSection {
            label: label.to_string(),
            text: text.into(),
        });
        Ok(())
    }

    pub fn section(&self, label: &str) -> Option<&str> {
        self.sections
            .iter()
            .find(|s| s.label == label)
            .map(|s| s.text.as_str())
    }

    pub fn labels(&self) -> Vec<&str> {
        self.sections.iter().map(|s| s.label.as_str()).collect()
    }

    /// Digest over model id, temperature and the ordered sections with
    /// newlines normalized to `\n`. `max_tokens` is not part of the key.
    pub fn key(&self) -> String {
        key_of(&self.model_id, self.temperature, &self.sections)
    }

    /// Flat text sent to chat-style providers.
    pub fn render(&self) -> String {
        let mut out = String::new();
        for s in &self.sections {
            out.push_str("## ");
            out.push_str(&s.label);
            out.push('\n');
            out.push_str(&normalize_newlines(&s.text));
            out.push_str("\n\n");
        }
        out
    }
}

fn key_of(model_id: &str, temperature: f64, sections: &[PromptSection]) -> String {
    let temp = format!("{temperature:.4}");
    let normalized: Vec<(String, String)> = sections
        .iter()
        .map(|s| (normalize_newlines(&s.label), normalize_newlines(&s.text)))
        .collect();
    let mut parts: Vec<&[u8]> = vec![b"respec-prompt-v1", model_id.as_bytes(), temp.as_bytes()];
    for (l, t) in &normalized {
        parts.push(l.as_bytes());
        parts.push(t.as_bytes());
    }
    digest_parts(&parts)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Policy {
    ReplayOnly,
    RecordIfMissing,
    LiveOnly,
}

impl std::str::FromStr for Policy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "replay-only" | "replay" => Ok(Policy::ReplayOnly),
            "record-if-missing" | "record" => Ok(Policy::RecordIfMissing),
            "live-only" | "live" => Ok(Policy::LiveOnly),
            other => Err(format!("unknown policy `{other}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Transcript {
    pub key: String,
    pub model_id: String,
    pub temperature: f64,
    pub sections: Vec<PromptSection>,
    pub response: String,
    pub recorded_at: DateTime<Utc>,
}

impl Transcript {
    pub fn expected_key(&self) -> String {
        key_of(&self.model_id, self.temperature, &self.sections)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CompletionMode {
    Recorded,
    Replayed,
    Live,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Completion {
    pub key: String,
    pub response: String,
    pub mode: CompletionMode,
}

#[derive(Debug, Clone)]
pub struct TranscriptStore {
    dir: PathBuf,
}

impl TranscriptStore {
    pub fn open(dir: impl Into<PathBuf>) -> Self {
        TranscriptStore { dir: dir.into() }
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    fn path_of(&self, key: &str) -> PathBuf {
        self.dir.join(format!("{key}.json"))
    }

    fn store_err(&self, path: &Path, e: impl std::fmt::Display) -> LlmError {
        LlmError::Store {
            path: path.to_path_buf(),
            message: e.to_string(),
        }
    }

    pub fn get(&self, key: &str) -> Result<Option<Transcript>, LlmError> {
        let path = self.path_of(key);
        match fs::read(&path) {
            Ok(bytes) => serde_json::from_slice(&bytes)
                .map(Some)
                .map_err(|e| self.store_err(&path, e)),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(None),
            Err(e) => Err(self.store_err(&path, e)),
        }
    }

    /// Write-temp-then-rename, so readers never see a partial envelope.
    pub fn put(&self, t: &Transcript) -> Result<(), LlmError> {
        fs::create_dir_all(&self.dir).map_err(|e| self.store_err(&self.dir, e))?;
        let path = self.path_of(&t.key);
        let mut tmp =
            tempfile::NamedTempFile::new_in(&self.dir).map_err(|e| self.store_err(&path, e))?;
        let mut body = serde_json::to_vec_pretty(t).map_err(|e| self.store_err(&path, e))?;
        body.push(b'\n');
        tmp.write_all(&body).map_err(|e| self.store_err(&path, e))?;
        tmp.persist(&path).map_err(|e| self.store_err(&path, e.error))?;
        Ok(())
    }

    pub fn keys(&self) -> Vec<String> {
        let Ok(rd) = fs::read_dir(&self.dir) else {
            return Vec::new();
        };
        let mut keys: Vec<String> = rd
            .filter_map(Result::ok)
            .filter_map(|e| {
                e.file_name()
                    .to_string_lossy()
                    .strip_suffix(".json")
                    .map(str::to_string)
            })
            .collect();
        keys.sort();
        keys
    }

    /// Checks that every envelope parses and is filed under the key its
    /// content hashes to. Returns one message per problem.
    pub fn verify(&self) -> Vec<String> {
        let mut problems = Vec::new();
        for name in self.keys() {
            let path = self.path_of(&name);
            let t: Transcript = match fs::read(&path)
                .map_err(|e| e.to_string())
                .and_then(|b| serde_json::from_slice(&b).map_err(|e| e.to_string()))
            {
                Ok(t) => t,
                Err(e) => {
                    problems.push(format!("{name}: unreadable envelope: {e}"));
                    continue;
                }
            };
            let expected = t.expected_key();
            if t.key != name {
                problems.push(format!("{name}: envelope key {} differs from file name", t.key));
            }
            if expected != name {
                problems.push(format!("{name}: content hashes to {expected}"));
            }
        }
        problems
    }
}

pub trait CompletionProvider: Send + Sync {
    fn complete(&self, prompt: &Prompt) -> Result<String, LlmError>;
}

/// OpenAI-style `chat/completions` endpoint.
pub struct ChatCompletionsProvider {
    url: String,
    api_key: Option<String>,
    agent: ureq::Agent,
}

impl ChatCompletionsProvider {
    pub fn new(url: impl Into<String>, api_key: Option<String>, timeout: Duration) -> Self {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(timeout))
            .http_status_as_error(false)
            .build()
            .into();
        ChatCompletionsProvider {
            url: url.into(),
            api_key,
            agent,
        }
    }
}

impl CompletionProvider for ChatCompletionsProvider {
    fn complete(&self, prompt: &Prompt) -> Result<String, LlmError> {
        let body = serde_json::json!({
            "model": prompt.model_id,
            "temperature": prompt.temperature,
            "max_tokens": prompt.max_tokens,
            "messages": [{"role": "user", "content": prompt.render()}],
        });
        let mut req = self.agent.post(&self.url);
        if let Some(k) = &self.api_key {
            req = req.header("Authorization", &format!("Bearer {k}"));
        }
        let mut resp = req.send_json(&body).map_err(|e| LlmError::ProviderError {
            status: None,
            message: e.to_string(),
        })?;
        let status = resp.status().as_u16();
        let text = resp
            .body_mut()
            .read_to_string()
            .map_err(|e| LlmError::ProviderError {
                status: Some(status),
                message: e.to_string(),
            })?;
        if !(200..300).contains(&status) {
            return Err(LlmError::ProviderError {
                status: Some(status),
                message: text.chars().take(500).collect(),
            });
        }
        let v: serde_json::Value =
            serde_json::from_str(&text).map_err(|e| LlmError::ProviderError {
                status: Some(status),
                message: format!("response is not JSON: {e}"),
            })?;
        v.pointer("/choices/0/message/content")
            .and_then(|c| c.as_str())
            .map(str::to_string)
            .ok_or_else(|| LlmError::ProviderError {
                status: Some(status),
                message: "response has no choices[0].message.content".into(),
            })
    }
}

/// Provider backed by a closure; used to script model behaviour.
pub struct FnProvider<F>(pub F);

impl<F> CompletionProvider for FnProvider<F>
where
    F: Fn(&Prompt) -> Result<String, LlmError> + Send + Sync,
{
    fn complete(&self, prompt: &Prompt) -> Result<String, LlmError> {
        (self.0)(prompt)
    }
}

pub struct Gateway {
    store: TranscriptStore,
    policy: Policy,
    provider: Option<Arc<dyn CompletionProvider>>,
    clock: Arc<dyn Clock>,
    provider_calls: AtomicU64,
}

impl Gateway {
    pub fn new(
        store: TranscriptStore,
        policy: Policy,
        provider: Option<Arc<dyn CompletionProvider>>,
        clock: Arc<dyn Clock>,
    ) -> Self {
        Gateway {
            store,
            policy,
            provider,
            clock,
            provider_calls: AtomicU64::new(0),
        }
    }

    pub fn replay_only(store: TranscriptStore, clock: Arc<dyn Clock>) -> Self {
        Gateway::new(store, Policy::ReplayOnly, None, clock)
    }

    pub fn policy(&self) -> Policy {
        self.policy
    }

    pub fn store(&self) -> &TranscriptStore {
        &self.store
    }

    /// Number of requests that reached the provider.
    pub fn provider_calls(&self) -> u64 {
        self.provider_calls.load(Ordering::SeqCst)
    }

    fn call_provider(&self, prompt: &Prompt) -> Result<String, LlmError> {
        let provider = self.provider.as_ref().ok_or(LlmError::NoProvider(self.policy))?;
        self.provider_calls.fetch_add(1, Ordering::SeqCst);
        provider.complete(prompt)
    }

    pub fn complete(&self, prompt: &Prompt) -> Result<Completion, LlmError> {
        let key = prompt.key();
        match self.policy {
            Policy::ReplayOnly => {
                let t = self
                    .store
                    .get(&key)?
                    .ok_or_else(|| LlmError::MissingTranscript(key.clone()))?;
                Ok(Completion {
                    key,
                    response: t.response,
                    mode: CompletionMode::Replayed,
                })
            }
            Policy::RecordIfMissing => {
                if let Some(t) = self.store.get(&key)? {
                    return Ok(Completion {
                        key,
                        response: t.response,
                        mode: CompletionMode::Replayed,
                    });
                }
                let response = self.call_provider(prompt)?;
                self.store.put(&Transcript {
                    key: key.clone(),
                    model_id: prompt.model_id.clone(),
                    temperature: prompt.temperature,
                    sections: prompt.sections.clone(),
                    response: response.clone(),
                    recorded_at: self.clock.now(),
                })?;
                Ok(Completion {
                    key,
                    response,
                    mode: CompletionMode::Recorded,
                })
            }
            Policy::LiveOnly => Ok(Completion {
                response: self.call_provider(prompt)?,
                key,
                mode: CompletionMode::Live,
            }),
        }
    }
}
