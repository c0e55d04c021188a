//! Record/replay of backend exchanges as JSON-lines cassettes.
//!
//! Each line is `{"request_sha256": .., "request": .., "response": {"model": .., "results": [..]}}`.

use std::collections::HashMap;
use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use async_trait::async_trait;
use serde::{Deserialize, Serialize};

use super::{
    Backend, BackendDescriptor, BackendError, ContinuationScore, ScoreRequest, ScoreResponse,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CassetteMode {
    Record,
    Replay,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CassetteEntry {
    pub request_sha256: String,
    pub request: ScoreRequest,
    pub response: ScoreResponse,
}

pub struct RecordReplay {
    inner: Option<Arc<dyn Backend>>,
    path: PathBuf,
    mode: CassetteMode,
    entries: Mutex<HashMap<String, ScoreResponse>>,
}

impl RecordReplay {
    /// Serves from `cassette`, errors on a miss.
    pub fn replay(cassette: &Path) -> Result<Self, BackendError> {
        let entries = load_entries(cassette)?;
        Ok(RecordReplay {
            inner: None,
            path: cassette.to_path_buf(),
            mode: CassetteMode::Replay,
            entries: Mutex::new(entries),
        })
    }

    /// Delegates misses to `inner` and appends them to `cassette`.
    /// An existing cassette is extended, not truncated.
    pub fn record(inner: Arc<dyn Backend>, cassette: &Path) -> Result<Self, BackendError> {
        let entries = if cassette.exists() {
            load_entries(cassette)?
        } else {
            if let Some(parent) = cassette.parent().filter(|p| !p.as_os_str().is_empty()) {
                fs::create_dir_all(parent)?;
            }
            fs::File::create(cassette)?;
            HashMap::new()
        };
        Ok(RecordReplay {
            inner: Some(inner),
            path: cassette.to_path_buf(),
            mode: CassetteMode::Record,
            entries: Mutex::new(entries),
        })
    }

    pub fn mode(&self) -> CassetteMode {
        self.mode
    }

    pub fn len(&self) -> usize {
        self.entries.lock().unwrap().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn append(&self, entry: &CassetteEntry) -> Result<(), BackendError> {
        let mut line = serde_json::to_string(entry)
            .map_err(|e| BackendError::CorruptCassette(e.to_string()))?;
        line.push('\n');
        let mut file = OpenOptions::new().append(true).open(&self.path)?;
        file.write_all(line.as_bytes())?;
        Ok(())
    }
}

fn load_entries(path: &Path) -> Result<HashMap<String, ScoreResponse>, BackendError> {
    let text = fs::read_to_string(path)?;
    let mut entries = HashMap::new();
    for (idx, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let entry: CassetteEntry = serde_json::from_str(line)
            .map_err(|e| BackendError::CorruptCassette(format!("line {}: {e}", idx + 1)))?;
        if entry.request.sha256() != entry.request_sha256 {
            return Err(BackendError::CorruptCassette(format!(
                "line {}: request_sha256 does not match request",
                idx + 1
            )));
        }
        entry
            .response
            .validate_for(&entry.request)
            .map_err(|e| BackendError::CorruptCassette(format!("line {}: {e}", idx + 1)))?;
        entries.insert(entry.request_sha256, entry.response);
    }
    Ok(entries)
}

#[async_trait]
impl Backend for RecordReplay {
    fn descriptor(&self) -> BackendDescriptor {
        match &self.inner {
            Some(inner) => {
                let d = inner.descriptor();
                BackendDescriptor {
                    name: format!("record:{}<-{}", self.path.display(), d.name),
                    deterministic: d.deterministic,
                }
            }
            None => BackendDescriptor {
                name: format!("replay:{}", self.path.display()),
                deterministic: true,
            },
        }
    }

    async fn score(&self, req: &ScoreRequest) -> Result<Vec<ContinuationScore>, BackendError> {
        req.validate()?;
        let key = req.sha256();
        if let Some(hit) = self.entries.lock().unwrap().get(&key) {
            return Ok(hit.results.clone());
        }
        let Some(inner) = &self.inner else {
            return Err(BackendError::CassetteMiss { request_sha256: key });
        };
        let results = super::score(inner.as_ref(), req).await?;
        let entry = CassetteEntry {
            request_sha256: key.clone(),
            request: req.clone(),
            response: ScoreResponse {
                model: inner.descriptor().name,
                results: results.clone(),
            },
        };
        // Concurrent misses on the same request must produce one line.
        let mut entries = self.entries.lock().unwrap();
        if !entries.contains_key(&key) {
            self.append(&entry)?;
            entries.insert(key, entry.response);
        }
        Ok(results)
    }
}
