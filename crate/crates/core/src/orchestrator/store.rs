//! Session transcripts and their on-disk layout.
//!
//! ```text
//! <root>/sessions/<session-id>/session.json     session metadata
//! <root>/sessions/<session-id>/turns.ndjson     one turn per line
//! <root>/blobs/<sha256 hex>                     content-addressed payloads
//! ```
//!
//! Turn lines are canonical JSON, so a loaded transcript re-serializes to the
//! exact bytes on disk.

use std::collections::{BTreeMap, HashMap};
use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::RwLock;

use serde::{Deserialize, Serialize};

use super::Turn;
use crate::digest::{canonical_json, Digest};
use crate::llm::ProviderMode;
use crate::sandbox::Backend;

#[derive(Debug, thiserror::Error)]
pub enum StoreError {
    #[error("transcript store i/o at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("corrupt transcript record in {path} line {line}: {message}")]
    Corrupt { path: PathBuf, line: usize, message: String },
    #[error("blob {0} not found")]
    BlobMissing(Digest),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> StoreError + '_ {
    move |source| StoreError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Per-session settings fixed at creation.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SessionMeta {
    pub session_id: String,
    pub created_at_ms: u64,
    pub provider_mode: ProviderMode,
    pub backend: Backend,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionTranscript {
    pub session_id: String,
    pub turns: Vec<Turn>,
}

impl SessionTranscript {
    pub fn new(session_id: impl Into<String>) -> Self {
        Self {
            session_id: session_id.into(),
            turns: Vec::new(),
        }
    }

    pub fn next_ordinal(&self) -> u32 {
        self.turns.len() as u32 + 1
    }

    /// Digest of the canonical serialization.
    pub fn digest(&self) -> Digest {
        Digest::of_canonical(self)
    }

    /// The turn records exactly as persisted, one line per turn.
    pub fn to_ndjson(&self) -> String {
        self.turns.iter().map(|t| canonical_json(t) + "\n").collect()
    }
}

/// Where transcripts and blobs live: a directory, or memory only.
#[derive(Debug)]
pub struct TranscriptStore {
    root: Option<PathBuf>,
    blobs: RwLock<HashMap<Digest, Vec<u8>>>,
}

impl TranscriptStore {
    pub fn in_memory() -> Self {
        Self {
            root: None,
            blobs: RwLock::new(HashMap::new()),
        }
    }

    pub fn open(root: impl Into<PathBuf>) -> Result<Self, StoreError> {
        let root = root.into();
        for dir in [root.join("sessions"), root.join("blobs")] {
            fs::create_dir_all(&dir).map_err(io_err(&dir))?;
        }
        Ok(Self {
            root: Some(root),
            blobs: RwLock::new(HashMap::new()),
        })
    }

    pub fn root(&self) -> Option<&Path> {
        self.root.as_deref()
    }

    fn session_dir(&self, id: &str) -> Option<PathBuf> {
        self.root.as_ref().map(|r| r.join("sessions").join(id))
    }

    pub fn put_blob(&self, bytes: &[u8]) -> Result<Digest, StoreError> {
        let digest = Digest::of_bytes(bytes);
        match &self.root {
            Some(root) => {
                let path = root.join("blobs").join(digest.to_hex());
                if !path.exists() {
                    let tmp = path.with_extension("partial");
                    fs::write(&tmp, bytes).map_err(io_err(&tmp))?;
                    fs::rename(&tmp, &path).map_err(io_err(&path))?;
                }
            }
            None => {
                self.blobs.write().unwrap().entry(digest).or_insert_with(|| bytes.to_vec());
            }
        }
        Ok(digest)
    }

    pub fn get_blob(&self, digest: &Digest) -> Result<Vec<u8>, StoreError> {
        match &self.root {
            Some(root) => {
                let path = root.join("blobs").join(digest.to_hex());
                if !path.exists() {
                    return Err(StoreError::BlobMissing(*digest));
                }
                fs::read(&path).map_err(io_err(&path))
            }
            None => self
                .blobs
                .read()
                .unwrap()
                .get(digest)
                .cloned()
                .ok_or(StoreError::BlobMissing(*digest)),
        }
    }

    pub fn create_session(&self, meta: &SessionMeta) -> Result<(), StoreError> {
        let Some(dir) = self.session_dir(&meta.session_id) else {
            return Ok(());
        };
        fs::create_dir_all(&dir).map_err(io_err(&dir))?;
        let path = dir.join("session.json");
        fs::write(&path, canonical_json(meta) + "\n").map_err(io_err(&path))?;
        let turns = dir.join("turns.ndjson");
        fs::write(&turns, "").map_err(io_err(&turns))
    }

    /// Appends one turn with a single write.
    pub fn append_turn(&self, session_id: &str, turn: &Turn) -> Result<(), StoreError> {
        let Some(dir) = self.session_dir(session_id) else {
            return Ok(());
        };
        let path = dir.join("turns.ndjson");
        let line = canonical_json(turn) + "\n";
        let mut f = OpenOptions::new().append(true).open(&path).map_err(io_err(&path))?;
        f.write_all(line.as_bytes()).map_err(io_err(&path))?;
        f.sync_data().map_err(io_err(&path))
    }

    /// Every persisted session, keyed by id.
    pub fn load_all(&self) -> Result<BTreeMap<String, (SessionMeta, SessionTranscript)>, StoreError> {
        let mut out = BTreeMap::new();
        let Some(root) = &self.root else {
            return Ok(out);
        };
        let sessions = root.join("sessions");
        for entry in fs::read_dir(&sessions).map_err(io_err(&sessions))? {
            let entry = entry.map_err(io_err(&sessions))?;
            if entry.path().join("session.json").is_file() {
                let (meta, transcript) = load_session(&entry.path())?;
                out.insert(meta.session_id.clone(), (meta, transcript));
            }
        }
        Ok(out)
    }
}

fn load_session(dir: &Path) -> Result<(SessionMeta, SessionTranscript), StoreError> {
    let meta_path = dir.join("session.json");
    let text = fs::read_to_string(&meta_path).map_err(io_err(&meta_path))?;
    let meta: SessionMeta = serde_json::from_str(&text).map_err(|e| StoreError::Corrupt {
        path: meta_path.clone(),
        line: 1,
        message: e.to_string(),
    })?;
    let turns_path = dir.join("turns.ndjson");
    let text = match fs::read_to_string(&turns_path) {
        Ok(t) => t,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => String::new(),
        Err(e) => return Err(io_err(&turns_path)(e)),
    };
    let mut transcript = SessionTranscript::new(&meta.session_id);
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let turn: Turn = match serde_json::from_str(line) {
            Ok(t) => t,
            // A final line without its newline is a write cut short by a crash;
            // the turn was never acknowledged, so it is dropped.
            Err(_) if !text.ends_with('\n') && i + 1 == text.lines().count() => {
                tracing::warn!(path = %turns_path.display(), "dropping torn final transcript record");
                break;
            }
            Err(e) => {
                return Err(StoreError::Corrupt {
                    path: turns_path.clone(),
                    line: i + 1,
                    message: e.to_string(),
                })
            }
        };
        transcript.turns.push(turn);
    }
    Ok((meta, transcript))
}
