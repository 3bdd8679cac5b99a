use std::fs::{self, File, OpenOptions};
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use thiserror::Error;

use super::Artifact;
use crate::session::{
    deserialize_session, event_line, header_line, Event, SessionError, SessionHeader, SessionRecord,
};

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("{path}: {source}")]
    Malformed {
        path: PathBuf,
        #[source]
        source: SessionError,
    },
    #[error("session ids may only contain letters, digits, '-' and '_': {0:?}")]
    BadId(String),
}

/// Receives every newly appended event, in order.
pub trait EventSink: Send {
    fn write_header(&mut self, header: &SessionHeader) -> Result<(), StoreError>;
    fn append(&mut self, event: &Event) -> Result<(), StoreError>;
}

/// Keeps the log lines in memory; clones share the buffer.
#[derive(Debug, Clone, Default)]
pub struct MemorySink(pub Arc<Mutex<Vec<String>>>);

impl MemorySink {
    /// The log so far, one line per record.
    pub fn bytes(&self) -> Vec<u8> {
        let lines = self.0.lock().expect("sink lock");
        lines
            .iter()
            .flat_map(|l| l.bytes().chain(std::iter::once(b'\n')))
            .collect()
    }
}

impl EventSink for MemorySink {
    fn write_header(&mut self, header: &SessionHeader) -> Result<(), StoreError> {
        self.0.lock().expect("sink lock").push(header_line(header));
        Ok(())
    }

    fn append(&mut self, event: &Event) -> Result<(), StoreError> {
        self.0.lock().expect("sink lock").push(event_line(event));
        Ok(())
    }
}

/// Appends to `<data>/<session_id>.jsonl`, flushing after every line.
#[derive(Debug)]
pub struct FileSink {
    path: PathBuf,
    file: File,
}

impl FileSink {
    fn write_line(&mut self, line: &str) -> Result<(), StoreError> {
        let io_err = |source| StoreError::Io {
            path: self.path.clone(),
            source,
        };
        let mut buf = Vec::with_capacity(line.len() + 1);
        buf.extend_from_slice(line.as_bytes());
        buf.push(b'\n');
        self.file.write_all(&buf).map_err(io_err)?;
        self.file.sync_data().map_err(|source| StoreError::Io {
            path: self.path.clone(),
            source,
        })
    }
}

impl EventSink for FileSink {
    fn write_header(&mut self, header: &SessionHeader) -> Result<(), StoreError> {
        self.write_line(&header_line(header))
    }

    fn append(&mut self, event: &Event) -> Result<(), StoreError> {
        self.write_line(&event_line(event))
    }
}

/// Session logs and finished artifacts under one data directory.
#[derive(Debug, Clone)]
pub struct FileStore {
    dir: PathBuf,
}

fn check_id(id: &str) -> Result<(), StoreError> {
    let ok = !id.is_empty()
        && id
            .chars()
            .all(|c| c.is_ascii_alphanumeric() || c == '-' || c == '_');
    if ok {
        Ok(())
    } else {
        Err(StoreError::BadId(id.into()))
    }
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

    pub fn log_path(&self, id: &str) -> PathBuf {
        self.dir.join(format!("{id}.jsonl"))
    }

    /// Sink for a new session; fails if the log already exists.
    pub fn create(&self, id: &str) -> Result<FileSink, StoreError> {
        check_id(id)?;
        let path = self.log_path(id);
        let file = OpenOptions::new()
            .create_new(true)
            .append(true)
            .open(&path)
            .map_err(|source| StoreError::Io {
                path: path.clone(),
                source,
            })?;
        Ok(FileSink { path, file })
    }

    /// Sink that continues an existing log.
    pub fn reopen(&self, id: &str) -> Result<FileSink, StoreError> {
        check_id(id)?;
        let path = self.log_path(id);
        let file = OpenOptions::new()
            .append(true)
            .open(&path)
            .map_err(|source| StoreError::Io {
                path: path.clone(),
                source,
            })?;
        Ok(FileSink { path, file })
    }

    /// Reads a log. A torn final line, left by a crash mid-write, is cut
    /// from the file before parsing.
    pub fn load(&self, id: &str) -> Result<SessionRecord, StoreError> {
        check_id(id)?;
        let path = self.log_path(id);
        let io_err = |source| StoreError::Io {
            path: path.clone(),
            source,
        };
        let mut bytes = fs::read(&path).map_err(io_err)?;
        if !bytes.is_empty() && !bytes.ends_with(b"\n") {
            let keep = bytes.iter().rposition(|b| *b == b'\n').map_or(0, |i| i + 1);
            bytes.truncate(keep);
            let file = OpenOptions::new().write(true).open(&path).map_err(io_err)?;
            file.set_len(keep as u64).map_err(io_err)?;
        }
        deserialize_session(&bytes).map_err(|source| StoreError::Malformed {
            path: path.clone(),
            source,
        })
    }

    /// Ids of every stored session, sorted.
    pub fn list(&self) -> Result<Vec<String>, StoreError> {
        let io_err = |source| StoreError::Io {
            path: self.dir.clone(),
            source,
        };
        let mut ids: Vec<String> = fs::read_dir(&self.dir)
            .map_err(io_err)?
            .filter_map(|e| e.ok())
            .filter_map(|e| {
                let name = e.file_name().into_string().ok()?;
                name.strip_suffix(".jsonl").map(str::to_owned)
            })
            .filter(|id| check_id(id).is_ok())
            .collect();
        ids.sort();
        Ok(ids)
    }

    /// Writes `<id>.ppm` and `<id>.provenance.json`.
    pub fn write_artifact(&self, artifact: &Artifact) -> Result<(PathBuf, PathBuf), StoreError> {
        check_id(&artifact.session_id)?;
        let image = self.dir.join(format!("{}.ppm", artifact.session_id));
        let record = self
            .dir
            .join(format!("{}.provenance.json", artifact.session_id));
        write_file(&image, &artifact.ppm())?;
        write_file(&record, artifact.provenance.to_canonical_json().as_bytes())?;
        Ok((image, record))
    }
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<(), StoreError> {
    fs::write(path, bytes).map_err(|source| StoreError::Io {
        path: path.to_owned(),
        source,
    })
}
