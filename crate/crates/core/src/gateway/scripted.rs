//! Deterministic playback of recorded completions, keyed by prompt hash.

use std::collections::HashMap;
use std::io::{BufRead, BufReader};
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{whitespace_tokens, Backend, GatewayError, GenerationRequest, GenerationResponse};

/// One fixture line: `{"prompt_sha256": "...", "completions": [...]}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FixtureRecord {
    pub prompt_sha256: String,
    pub completions: Vec<String>,
}

impl FixtureRecord {
    pub fn for_prompt(prompt: &str, completions: Vec<String>) -> Self {
        Self {
            prompt_sha256: prompt_hash(prompt),
            completions,
        }
    }
}

/// Lowercase hex SHA-256 of the prompt's UTF-8 bytes.
pub fn prompt_hash(prompt: &str) -> String {
    hex::encode(Sha256::digest(prompt.as_bytes()))
}

#[derive(Debug, Clone, Default)]
pub struct ScriptedBackend {
    entries: HashMap<String, Vec<String>>,
}

impl ScriptedBackend {
    /// Later records for an already-seen hash extend its completion list.
    pub fn from_records(records: impl IntoIterator<Item = FixtureRecord>) -> Self {
        let mut entries: HashMap<String, Vec<String>> = HashMap::new();
        for r in records {
            entries.entry(r.prompt_sha256.to_lowercase()).or_default().extend(r.completions);
        }
        Self { entries }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

pub fn load_fixture(path: &Path) -> Result<ScriptedBackend, GatewayError> {
    let file = std::fs::File::open(path).map_err(|e| GatewayError::FixtureParse {
        line: 0,
        message: format!("{}: {e}", path.display()),
    })?;
    let mut records = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| GatewayError::FixtureParse {
            line: i + 1,
            message: e.to_string(),
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let record: FixtureRecord = serde_json::from_str(&line).map_err(|e| GatewayError::FixtureParse {
            line: i + 1,
            message: e.to_string(),
        })?;
        if record.completions.is_empty() {
            return Err(GatewayError::FixtureParse {
                line: i + 1,
                message: "record has no completions".into(),
            });
        }
        records.push(record);
    }
    Ok(ScriptedBackend::from_records(records))
}

impl Backend for ScriptedBackend {
    fn id(&self) -> String {
        "scripted".into()
    }

    fn generate(&self, request: &GenerationRequest) -> Result<GenerationResponse, GatewayError> {
        let hash = prompt_hash(&request.prompt);
        let recorded = self
            .entries
            .get(&hash)
            .filter(|c| !c.is_empty())
            .ok_or(GatewayError::FixtureMiss { prompt_hash: hash })?;
        let completions: Vec<String> = recorded.iter().cycle().take(request.n).cloned().collect();
        let token_counts = completions.iter().map(|c| whitespace_tokens(c)).collect();
        Ok(GenerationResponse {
            completions,
            token_counts,
            backend_id: self.id(),
        })
    }

    fn count_tokens(&self, text: &str) -> Option<usize> {
        Some(whitespace_tokens(text))
    }
}
