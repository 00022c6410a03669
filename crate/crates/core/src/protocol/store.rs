//! Append-only run directory.
//!
//! ```text
//! <run>/manifest.json
//! <run>/records.jsonl     one ForecastRecord per line
//! <run>/failures.jsonl    failed invocations, informational only
//! <run>/archive/*.json    prompt, context and raw reply per cell
//! ```
//!
//! A torn last line (crash mid-write) is cut off when the store is opened.

use std::collections::HashSet;
use std::fs::{self, File, OpenOptions};
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;
use tracing::warn;

use super::{CellKey, ForecastRecord};
use crate::agents::ChatMessage;
use crate::config::Config;

pub const MANIFEST_FILE: &str = "manifest.json";
pub const RECORDS_FILE: &str = "records.jsonl";
pub const FAILURES_FILE: &str = "failures.jsonl";
pub const ARCHIVE_DIR: &str = "archive";

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("{path} line {line}: {message}")]
    Corrupt { path: PathBuf, line: usize, message: String },
    #[error("run directory {0} already holds a manifest")]
    AlreadyExists(PathBuf),
    #[error("no run manifest in {0}")]
    NoManifest(PathBuf),
    #[error("cell {0} already recorded")]
    DuplicateCell(String),
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> StoreError + '_ {
    move |source| StoreError::Io {
        path: path.to_path_buf(),
        source,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub run_id: String,
    pub corpus_digest: String,
    pub scenarios: Vec<String>,
    pub config: Config,
    pub seed: u64,
    pub started_at: DateTime<Utc>,
    #[serde(default)]
    pub finished_at: Option<DateTime<Utc>>,
    pub software_version: String,
}

/// Everything exchanged with the backend for one cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArchiveEntry {
    pub cell: String,
    pub template_id: String,
    pub context: Vec<ChatMessage>,
    pub prompt: String,
    pub reply: String,
    pub raw: String,
    pub attempts: u32,
    pub failed_attempts: Vec<String>,
    pub latency_ms: u64,
    pub completed_at: DateTime<Utc>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FailureEntry {
    pub cell: String,
    pub error: String,
    pub attempts: u32,
    pub failed_attempts: Vec<String>,
    pub at: DateTime<Utc>,
}

struct Inner {
    records: File,
    cells: HashSet<CellKey>,
}

pub struct RunStore {
    dir: PathBuf,
    inner: Mutex<Inner>,
}

impl RunStore {
    /// Creates a fresh run directory with `manifest`.
    pub fn create(dir: impl AsRef<Path>, manifest: &RunManifest) -> Result<Self, StoreError> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir.join(ARCHIVE_DIR)).map_err(io_err(dir))?;
        if dir.join(MANIFEST_FILE).exists() {
            return Err(StoreError::AlreadyExists(dir.to_path_buf()));
        }
        write_manifest(dir, manifest)?;
        Self::open(dir)
    }

    /// Opens an existing run directory, repairing a torn final record.
    pub fn open(dir: impl AsRef<Path>) -> Result<Self, StoreError> {
        let dir = dir.as_ref().to_path_buf();
        if !dir.join(MANIFEST_FILE).exists() {
            return Err(StoreError::NoManifest(dir));
        }
        fs::create_dir_all(dir.join(ARCHIVE_DIR)).map_err(io_err(&dir))?;
        let path = dir.join(RECORDS_FILE);
        repair_tail(&path)?;
        let records = read_records(&path)?;
        let mut cells = HashSet::with_capacity(records.len());
        for (i, r) in records.iter().enumerate() {
            if !cells.insert(r.cell()) {
                return Err(StoreError::Corrupt {
                    path,
                    line: i + 1,
                    message: format!("duplicate cell {}", r.cell()),
                });
            }
        }
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&path)
            .map_err(io_err(&path))?;
        Ok(Self {
            dir,
            inner: Mutex::new(Inner { records: file, cells }),
        })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn records_path(&self) -> PathBuf {
        self.dir.join(RECORDS_FILE)
    }

    pub fn manifest(&self) -> Result<RunManifest, StoreError> {
        read_manifest(&self.dir)
    }

    pub fn write_manifest(&self, manifest: &RunManifest) -> Result<(), StoreError> {
        write_manifest(&self.dir, manifest)
    }

    pub fn contains(&self, cell: &CellKey) -> bool {
        self.lock().cells.contains(cell)
    }

    pub fn len(&self) -> usize {
        self.lock().cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn lock(&self) -> std::sync::MutexGuard<'_, Inner> {
        self.inner.lock().expect("run store lock poisoned")
    }

    /// Appends one record. Rejects a cell that is already present.
    pub fn append(&self, record: &ForecastRecord) -> Result<(), StoreError> {
        let mut line = serde_json::to_string(record).expect("records always serialize");
        line.push('\n');
        let mut inner = self.lock();
        let cell = record.cell();
        if inner.cells.contains(&cell) {
            return Err(StoreError::DuplicateCell(cell.to_string()));
        }
        let path = self.records_path();
        inner.records.write_all(line.as_bytes()).map_err(io_err(&path))?;
        inner.records.flush().map_err(io_err(&path))?;
        inner.cells.insert(cell);
        Ok(())
    }

    pub fn records(&self) -> Result<Vec<ForecastRecord>, StoreError> {
        let _guard = self.lock();
        read_records(&self.records_path())
    }

    pub fn archive_path(&self, cell: &CellKey) -> PathBuf {
        self.dir.join(ARCHIVE_DIR).join(archive_file_name(cell))
    }

    pub fn write_archive(&self, cell: &CellKey, entry: &ArchiveEntry) -> Result<(), StoreError> {
        let path = self.archive_path(cell);
        let text = serde_json::to_string_pretty(entry).expect("archive entries always serialize");
        fs::write(&path, text).map_err(io_err(&path))
    }

    pub fn read_archive(&self, cell: &CellKey) -> Option<ArchiveEntry> {
        let text = fs::read_to_string(self.archive_path(cell)).ok()?;
        serde_json::from_str(&text).ok()
    }

    pub fn record_failure(&self, entry: &FailureEntry) -> Result<(), StoreError> {
        let path = self.dir.join(FAILURES_FILE);
        let mut line = serde_json::to_string(entry).expect("failure entries always serialize");
        line.push('\n');
        let _guard = self.lock();
        let mut f = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&path)
            .map_err(io_err(&path))?;
        f.write_all(line.as_bytes()).map_err(io_err(&path))
    }
}

/// File name for a cell's archive entry: a readable slug plus a short hash
/// so distinct cells never collide.
pub fn archive_file_name(cell: &CellKey) -> String {
    let key = cell.to_string();
    let slug: String = key
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '.' { c } else { '_' })
        .collect();
    let hash = hex::encode(&Sha256::digest(key.as_bytes())[..4]);
    format!("{slug}-{hash}.json")
}

pub fn read_manifest(dir: &Path) -> Result<RunManifest, StoreError> {
    let path = dir.join(MANIFEST_FILE);
    if !path.exists() {
        return Err(StoreError::NoManifest(dir.to_path_buf()));
    }
    let text = fs::read_to_string(&path).map_err(io_err(&path))?;
    serde_json::from_str(&text).map_err(|e| StoreError::Corrupt {
        path,
        line: e.line(),
        message: e.to_string(),
    })
}

fn write_manifest(dir: &Path, manifest: &RunManifest) -> Result<(), StoreError> {
    let path = dir.join(MANIFEST_FILE);
    let tmp = dir.join(format!("{MANIFEST_FILE}.tmp"));
    let mut text = serde_json::to_string_pretty(manifest).expect("manifest always serializes");
    text.push('\n');
    fs::write(&tmp, text).map_err(io_err(&tmp))?;
    fs::rename(&tmp, &path).map_err(io_err(&path))
}

/// Reads a records file. A missing file is an empty run.
pub fn read_records(path: &Path) -> Result<Vec<ForecastRecord>, StoreError> {
    let text = match fs::read_to_string(path) {
        Ok(t) => t,
        Err(e) if e.kind() == io::ErrorKind::NotFound => return Ok(Vec::new()),
        Err(e) => return Err(io_err(path)(e)),
    };
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let rec = serde_json::from_str(line).map_err(|e| StoreError::Corrupt {
            path: path.to_path_buf(),
            line: i + 1,
            message: e.to_string(),
        })?;
        out.push(rec);
    }
    Ok(out)
}

fn repair_tail(path: &Path) -> Result<(), StoreError> {
    let bytes = match fs::read(path) {
        Ok(b) => b,
        Err(e) if e.kind() == io::ErrorKind::NotFound => return Ok(()),
        Err(e) => return Err(io_err(path)(e)),
    };
    if bytes.is_empty() || bytes.ends_with(b"\n") {
        return Ok(());
    }
    let keep = bytes.iter().rposition(|&b| b == b'\n').map_or(0, |i| i + 1);
    warn!(
        path = %path.display(),
        dropped = bytes.len() - keep,
        "dropping torn final record"
    );
    let f = OpenOptions::new().write(true).open(path).map_err(io_err(path))?;
    f.set_len(keep as u64).map_err(io_err(path))
}
