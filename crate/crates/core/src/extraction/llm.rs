use std::fs;
use std::path::PathBuf;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::time::{Duration, SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use serde_json::json;

use super::parse::parse_triples;
use crate::autodiff::sha256_hex;
use crate::error::{Error, Result};
use crate::kg::Triple;

pub const PROMPT_VERSION: &str = "triples-v1";

const INSTRUCTION: &str =
    "Extract all factual (source, relation, target) triples from the text. Output only a JSON array of 3-string arrays.";

pub fn render_prompt(text: &str) -> String {
    format!("{INSTRUCTION}\n\n{text}")
}

/// Text-completion backend. `complete` returns `Err` only for transport
/// failures, which are retried.
pub trait Provider: Send + Sync {
    fn id(&self) -> String;
    fn complete(&self, prompt: &str) -> std::result::Result<String, String>;
}

/// OpenAI-compatible chat-completions endpoint.
#[derive(Debug, Clone)]
pub struct HttpProvider {
    pub endpoint: String,
    pub model: String,
    pub api_key: Option<String>,
    pub timeout: Duration,
}

impl Provider for HttpProvider {
    fn id(&self) -> String {
        format!("http:{}", self.model)
    }

    fn complete(&self, prompt: &str) -> std::result::Result<String, String> {
        let body = json!({
            "model": self.model,
            "temperature": 0,
            "messages": [{"role": "user", "content": prompt}],
        });
        let mut req = ureq::post(&self.endpoint).timeout(self.timeout);
        if let Some(key) = &self.api_key {
            req = req.set("Authorization", &format!("Bearer {key}"));
        }
        let resp: serde_json::Value = req
            .send_json(body)
            .map_err(|e| e.to_string())?
            .into_json()
            .map_err(|e| e.to_string())?;
        resp["choices"][0]["message"]["content"]
            .as_str()
            .map(str::to_string)
            .ok_or_else(|| format!("unexpected response shape: {resp}"))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExtractionRecord {
    pub text_hash: String,
    pub provider: String,
    pub prompt_version: String,
    pub raw_response: String,
    pub triples: Vec<Triple>,
    pub timestamp: u64,
}

/// One JSON file per (provider, prompt version, text) key.
#[derive(Debug, Clone)]
pub struct ExtractionCache {
    dir: PathBuf,
}

impl ExtractionCache {
    pub fn new(dir: impl Into<PathBuf>) -> Result<Self> {
        let dir = dir.into();
        fs::create_dir_all(&dir)?;
        Ok(ExtractionCache { dir })
    }

    pub fn key(provider: &str, text_hash: &str) -> String {
        sha256_hex(format!("{provider}\n{PROMPT_VERSION}\n{text_hash}").as_bytes())
    }

    fn path(&self, key: &str) -> PathBuf {
        self.dir.join(format!("{key}.json"))
    }

    pub fn get(&self, key: &str) -> Result<Option<ExtractionRecord>> {
        match fs::read_to_string(self.path(key)) {
            Ok(s) => Ok(Some(serde_json::from_str(&s)?)),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(None),
            Err(e) => Err(e.into()),
        }
    }

    pub fn put(&self, key: &str, record: &ExtractionRecord) -> Result<()> {
        let tmp = self.dir.join(format!("{key}.tmp"));
        fs::write(&tmp, serde_json::to_string_pretty(record)?)?;
        fs::rename(tmp, self.path(key))?;
        Ok(())
    }
}

/// LLM-backed extractor with retries and an optional on-disk cache.
pub struct LlmExtractor {
    provider: Box<dyn Provider>,
    cache: Option<ExtractionCache>,
    attempts: usize,
    backoff: Duration,
    requests: AtomicUsize,
}

impl LlmExtractor {
    pub fn new(provider: Box<dyn Provider>, cache: Option<ExtractionCache>) -> Self {
        LlmExtractor {
            provider,
            cache,
            attempts: 3,
            backoff: Duration::from_millis(500),
            requests: AtomicUsize::new(0),
        }
    }

    /// Base delay before the second attempt; it doubles for each later one.
    pub fn with_backoff(mut self, backoff: Duration) -> Self {
        self.backoff = backoff;
        self
    }

    /// Provider requests sent so far, including failed ones.
    pub fn requests(&self) -> usize {
        self.requests.load(Ordering::SeqCst)
    }

    fn send(&self, prompt: &str) -> Result<String> {
        let mut last = String::new();
        for attempt in 0..self.attempts {
            if attempt > 0 {
                std::thread::sleep(self.backoff * (1 << (attempt - 1)));
            }
            self.requests.fetch_add(1, Ordering::SeqCst);
            match self.provider.complete(prompt) {
                Ok(raw) => return Ok(raw),
                Err(e) => {
                    log::warn!("provider {} attempt {} failed: {e}", self.provider.id(), attempt + 1);
                    last = e;
                }
            }
        }
        Err(Error::Provider {
            provider: self.provider.id(),
            attempts: self.attempts,
            reason: last,
        })
    }

    pub fn extract(&self, text: &str) -> Result<Vec<Triple>> {
        let provider = self.provider.id();
        let text_hash = sha256_hex(text.as_bytes());
        let key = ExtractionCache::key(&provider, &text_hash);
        if let Some(cache) = &self.cache {
            if let Some(rec) = cache.get(&key)? {
                return Ok(rec.triples);
            }
        }
        let raw = self.send(&render_prompt(text))?;
        let parsed = parse_triples(&raw)?;
        for d in &parsed.dropped {
            log::warn!("dropped triple {} ({}): {}", d.index, d.reason, d.raw);
        }
        if let Some(cache) = &self.cache {
            let timestamp = SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0);
            cache.put(
                &key,
                &ExtractionRecord {
                    text_hash,
                    provider,
                    prompt_version: PROMPT_VERSION.to_string(),
                    raw_response: raw,
                    triples: parsed.triples.clone(),
                    timestamp,
                },
            )?;
        }
        Ok(parsed.triples)
    }
}
