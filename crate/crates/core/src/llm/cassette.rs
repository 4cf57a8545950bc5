use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{normalize_request, FinishReason, LlmRequest, Usage};
use crate::digest::Digest;

/// Response body as stored on disk; provenance is assigned when served.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecordedResponse {
    pub text: String,
    pub finish_reason: FinishReason,
    #[serde(default)]
    pub usage: Usage,
}

impl RecordedResponse {
    pub fn stop(text: impl Into<String>) -> Self {
        Self {
            text: text.into(),
            finish_reason: FinishReason::Stop,
            usage: Usage::default(),
        }
    }
}

/// One line of a cassette file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CassetteRecord {
    pub digest: Digest,
    pub request: LlmRequest,
    pub response: RecordedResponse,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub recorded_at_ms: Option<u64>,
}

#[derive(Debug, thiserror::Error)]
pub enum CassetteError {
    #[error("cassette io: {0}")]
    Io(#[from] std::io::Error),
    #[error("cassette line {line}: {message}")]
    Parse { line: usize, message: String },
}

/// Request-digest keyed store of recorded responses.
///
/// Records keep insertion order so that a saved cassette diffs cleanly.
#[derive(Debug, Clone, Default)]
pub struct Cassette {
    records: Vec<CassetteRecord>,
    index: HashMap<Digest, usize>,
}

impl Cassette {
    pub fn new() -> Self {
        Self::default()
    }

    /// Reads newline-delimited records. Blank lines are ignored; a later record
    /// for the same digest replaces an earlier one.
    pub fn load(path: &Path) -> Result<Self, CassetteError> {
        let reader = BufReader::new(File::open(path)?);
        let mut cassette = Cassette::new();
        for (i, line) in reader.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let record: CassetteRecord =
                serde_json::from_str(&line).map_err(|e| CassetteError::Parse {
                    line: i + 1,
                    message: e.to_string(),
                })?;
            cassette.push(record);
        }
        Ok(cassette)
    }

    /// Loads `path` if it exists, otherwise starts empty.
    pub fn load_or_empty(path: &Path) -> Result<Self, CassetteError> {
        if path.exists() {
            Self::load(path)
        } else {
            Ok(Self::new())
        }
    }

    pub fn save(&self, path: &Path) -> Result<(), CassetteError> {
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir)?;
        }
        let mut out = String::new();
        for r in &self.records {
            out.push_str(&record_line(r));
            out.push('\n');
        }
        std::fs::write(path, out)?;
        Ok(())
    }

    pub fn get(&self, digest: &Digest) -> Option<&CassetteRecord> {
        self.index.get(digest).map(|&i| &self.records[i])
    }

    pub fn contains(&self, digest: &Digest) -> bool {
        self.index.contains_key(digest)
    }

    /// Adds (or replaces) the response recorded for `request`.
    pub fn insert(&mut self, request: &LlmRequest, response: RecordedResponse) -> Digest {
        let digest = normalize_request(request);
        self.push(CassetteRecord {
            digest,
            request: request.clone(),
            response,
            recorded_at_ms: None,
        });
        digest
    }

    pub fn push(&mut self, record: CassetteRecord) {
        match self.index.get(&record.digest) {
            Some(&i) => self.records[i] = record,
            None => {
                self.index.insert(record.digest, self.records.len());
                self.records.push(record);
            }
        }
    }

    pub fn records(&self) -> &[CassetteRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Merges every record of `other` into `self`.
    pub fn extend(&mut self, other: Cassette) {
        for r in other.records {
            self.push(r);
        }
    }
}

fn record_line(r: &CassetteRecord) -> String {
    serde_json::to_string(r).expect("cassette record serializes")
}

/// Appends a single record to a cassette file.
pub(crate) fn append_record(path: &Path, record: &CassetteRecord) -> std::io::Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    let mut f = OpenOptions::new().create(true).append(true).open(path)?;
    writeln!(f, "{}", record_line(record))
}
