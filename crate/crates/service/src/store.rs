//! Session persistence.

use std::collections::HashMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use bandit_tutor_core::session::Pending;
use bandit_tutor_core::SectionId;

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("corrupt session record {id}: {source}")]
    Corrupt {
        id: String,
        source: serde_json::Error,
    },
}

/// What is persisted per session after every state change.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SessionRecord {
    pub session_id: String,
    pub curriculum_id: String,
    pub section_id: SectionId,
    pub created_at_ms: u64,
    pub updated_at_ms: u64,
    /// Copy of the snapshot's outstanding recommendation, for inspection.
    pub outstanding: Option<Pending>,
    /// Engine snapshot, including the generator state.
    pub snapshot: serde_json::Value,
}

pub trait SessionStore: Send + Sync {
    fn load(&self, session_id: &str) -> Result<Option<SessionRecord>, StoreError>;
    fn save(&self, record: &SessionRecord) -> Result<(), StoreError>;
}

/// Ids that are safe to use as file names.
pub fn is_valid_session_id(id: &str) -> bool {
    !id.is_empty()
        && id.len() <= 128
        && id
            .bytes()
            .all(|b| b.is_ascii_alphanumeric() || b == b'-' || b == b'_')
}

/// One JSON file per session, replaced atomically on every save.
#[derive(Debug, Clone)]
pub struct FileStore {
    dir: PathBuf,
}

impl FileStore {
    pub fn open(dir: impl Into<PathBuf>) -> Result<Self, StoreError> {
        let dir = dir.into();
        fs::create_dir_all(&dir).map_err(|source| StoreError::Io {
            path: dir.clone(),
            source,
        })?;
        Ok(Self { dir })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    fn path_of(&self, id: &str) -> PathBuf {
        self.dir.join(format!("{id}.json"))
    }
}

impl SessionStore for FileStore {
    fn load(&self, session_id: &str) -> Result<Option<SessionRecord>, StoreError> {
        if !is_valid_session_id(session_id) {
            return Ok(None);
        }
        let path = self.path_of(session_id);
        let text = match fs::read_to_string(&path) {
            Ok(t) => t,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(None),
            Err(source) => return Err(StoreError::Io { path, source }),
        };
        serde_json::from_str(&text)
            .map(Some)
            .map_err(|source| StoreError::Corrupt {
                id: session_id.to_owned(),
                source,
            })
    }

    fn save(&self, record: &SessionRecord) -> Result<(), StoreError> {
        let path = self.path_of(&record.session_id);
        let tmp = self.dir.join(format!(".{}.json.tmp", record.session_id));
        let io = |path: &Path| {
            let path = path.to_owned();
            move |source| StoreError::Io { path, source }
        };
        let body = serde_json::to_vec_pretty(record).expect("records serialize");
        let mut file = fs::File::create(&tmp).map_err(io(&tmp))?;
        file.write_all(&body).map_err(io(&tmp))?;
        file.sync_all().map_err(io(&tmp))?;
        drop(file);
        fs::rename(&tmp, &path).map_err(io(&path))
    }
}

#[derive(Debug, Default)]
pub struct MemoryStore {
    records: Mutex<HashMap<String, SessionRecord>>,
}

impl MemoryStore {
    pub fn new() -> Self {
        Self::default()
    }
}

impl SessionStore for MemoryStore {
    fn load(&self, session_id: &str) -> Result<Option<SessionRecord>, StoreError> {
        Ok(self.records.lock().unwrap().get(session_id).cloned())
    }

    fn save(&self, record: &SessionRecord) -> Result<(), StoreError> {
        self.records
            .lock()
            .unwrap()
            .insert(record.session_id.clone(), record.clone());
        Ok(())
    }
}
