use std::collections::HashMap;
use std::fs::{self, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use super::{Backend, ChatRequest, ChatResponse, GatewayError};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CacheMode {
    /// Serve known requests from the store, forward and persist the rest.
    Record,
    /// Serve from the store only; a miss is an error.
    Replay,
    /// Forward everything, touch nothing.
    Passthrough,
}

impl FromStr for CacheMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "record" => Ok(CacheMode::Record),
            "replay" => Ok(CacheMode::Replay),
            "passthrough" => Ok(CacheMode::Passthrough),
            other => Err(format!("unknown cache mode {other:?}")),
        }
    }
}

#[derive(Serialize, Deserialize)]
struct StoreEntry {
    digest: String,
    text: String,
}

/// Response store keyed by request digest, persisted as JSONL `{digest, text}`.
pub struct RecordReplay<B> {
    inner: B,
    path: PathBuf,
    mode: CacheMode,
    name: String,
    entries: Mutex<HashMap<String, String>>,
}

impl<B: Backend> RecordReplay<B> {
    pub fn new(inner: B, store: impl Into<PathBuf>, mode: CacheMode) -> Result<Self, GatewayError> {
        let path = store.into();
        let entries = match mode {
            CacheMode::Replay if !path.exists() => {
                return Err(GatewayError::Store {
                    path,
                    message: "replay store does not exist".into(),
                })
            }
            CacheMode::Passthrough => HashMap::new(),
            _ if path.exists() => load_store(&path)?,
            _ => HashMap::new(),
        };
        let name = match mode {
            CacheMode::Passthrough => inner.name().to_string(),
            _ => format!("{}+cache", inner.name()),
        };
        Ok(Self {
            inner,
            path,
            mode,
            name,
            entries: Mutex::new(entries),
        })
    }

    pub fn mode(&self) -> CacheMode {
        self.mode
    }

    pub fn len(&self) -> usize {
        self.entries.lock().expect("store lock").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn store_err(&self, message: impl Into<String>) -> GatewayError {
        GatewayError::Store {
            path: self.path.clone(),
            message: message.into(),
        }
    }

    fn append(&self, digest: &str, text: &str) -> Result<(), GatewayError> {
        let line = serde_json::to_string(&StoreEntry {
            digest: digest.to_string(),
            text: text.to_string(),
        })
        .expect("entry serializes");
        let mut file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&self.path)
            .map_err(|e| self.store_err(e.to_string()))?;
        writeln!(file, "{line}").map_err(|e| self.store_err(e.to_string()))
    }
}

fn load_store(path: &Path) -> Result<HashMap<String, String>, GatewayError> {
    let file = fs::File::open(path).map_err(|e| GatewayError::Store {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    let mut entries = HashMap::new();
    for (idx, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| GatewayError::Store {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let entry: StoreEntry = serde_json::from_str(&line).map_err(|e| GatewayError::Store {
            path: path.to_path_buf(),
            message: format!("line {}: {e}", idx + 1),
        })?;
        entries.entry(entry.digest).or_insert(entry.text);
    }
    Ok(entries)
}

impl<B: Backend> Backend for RecordReplay<B> {
    fn name(&self) -> &str {
        &self.name
    }

    fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, GatewayError> {
        if self.mode == CacheMode::Passthrough {
            return self.inner.complete(request);
        }
        let key = request.cache_key();
        let hit = self
            .entries
            .lock()
            .expect("store lock")
            .get(key.digest())
            .cloned();
        if let Some(text) = hit {
            return Ok(ChatResponse {
                text,
                backend: self.name.clone(),
                cached: true,
            });
        }
        if self.mode == CacheMode::Replay {
            return Err(GatewayError::CacheMiss {
                digest: key.digest().to_string(),
            });
        }

        let response = self.inner.complete(request)?;
        // The lock serializes store writes; a concurrent duplicate keeps the first text.
        let mut entries = self.entries.lock().expect("store lock");
        if !entries.contains_key(key.digest()) {
            self.append(key.digest(), &response.text)?;
            entries.insert(key.digest().to_string(), response.text.clone());
        }
        Ok(response)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gateway::{responders, Rule, ScriptedMock};
    use std::sync::Arc;
    use tempfile::tempdir;

    fn requests() -> Vec<ChatRequest> {
        (0..3)
            .map(|i| ChatRequest::new("m", format!("question {i}"), 0.0, 32))
            .collect()
    }

    fn counter_mock() -> Arc<ScriptedMock> {
        Arc::new(
            ScriptedMock::new(vec![Rule::any(|r: &ChatRequest| {
                Ok(format!("answer to {}", r.user))
            })])
            .unwrap(),
        )
    }

    #[test]
    fn record_then_replay_without_inner_calls() {
        let dir = tempdir().unwrap();
        let store = dir.path().join("cache.jsonl");
        let inner = counter_mock();
        let recorder = RecordReplay::new(inner.clone(), &store, CacheMode::Record).unwrap();
        let recorded: Vec<String> = requests()
            .iter()
            .map(|r| recorder.complete(r).unwrap().text)
            .collect();
        assert_eq!(inner.calls(), 3);

        let replay_inner = counter_mock();
        let replayer = RecordReplay::new(replay_inner.clone(), &store, CacheMode::Replay).unwrap();
        for (req, expected) in requests().iter().zip(&recorded) {
            let out = replayer.complete(req).unwrap();
            assert_eq!(&out.text, expected);
            assert!(out.cached);
        }
        assert_eq!(replay_inner.calls(), 0);
    }

    #[test]
    fn replay_miss_names_digest() {
        let dir = tempdir().unwrap();
        let store = dir.path().join("cache.jsonl");
        fs::write(&store, "").unwrap();
        let replayer = RecordReplay::new(counter_mock(), &store, CacheMode::Replay).unwrap();
        let req = ChatRequest::new("m", "unseen", 0.0, 32);
        match replayer.complete(&req) {
            Err(GatewayError::CacheMiss { digest }) => assert_eq!(digest, req.cache_key().digest()),
            other => panic!("expected cache miss, got {other:?}"),
        }
    }

    #[test]
    fn replay_requires_existing_store() {
        let dir = tempdir().unwrap();
        let missing = dir.path().join("nope.jsonl");
        assert!(RecordReplay::new(counter_mock(), missing, CacheMode::Replay).is_err());
    }

    #[test]
    fn recording_twice_keeps_store_size() {
        let dir = tempdir().unwrap();
        let store = dir.path().join("cache.jsonl");
        for _ in 0..2 {
            let recorder = RecordReplay::new(counter_mock(), &store, CacheMode::Record).unwrap();
            for r in requests() {
                recorder.complete(&r).unwrap();
            }
            assert_eq!(recorder.len(), 3);
        }
        assert_eq!(fs::read_to_string(&store).unwrap().lines().count(), 3);
    }

    #[test]
    fn passthrough_neither_reads_nor_writes() {
        let dir = tempdir().unwrap();
        let store = dir.path().join("cache.jsonl");
        let inner = Arc::new(ScriptedMock::new(vec![Rule::any(responders::fixed("x"))]).unwrap());
        let pass = RecordReplay::new(inner.clone(), &store, CacheMode::Passthrough).unwrap();
        pass.complete(&requests()[0]).unwrap();
        pass.complete(&requests()[0]).unwrap();
        assert_eq!(inner.calls(), 2);
        assert!(!store.exists());
    }
}
