//! Append-only CSV log of annotations with last-write-wins upserts.

use std::collections::BTreeMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use vidqg_core::agreement::AnnotationRecord;

use crate::ServiceError;

const HEADER: &str = "rater_id,item_id,relevance,answerability,bloom,timestamp";

type Key = (String, String);

pub struct AnnotationStore {
    path: PathBuf,
    inner: Mutex<Inner>,
}

struct Inner {
    file: File,
    latest: BTreeMap<Key, AnnotationRecord>,
}

impl AnnotationStore {
    /// Opens or creates the log. Every line is replayed; a line that does
    /// not parse makes the store refuse to open.
    pub fn open(path: impl Into<PathBuf>) -> Result<Self, ServiceError> {
        let path = path.into();
        let io = |e| ServiceError::Io { path: path.clone(), source: e };
        let mut latest = BTreeMap::new();
        let mut needs_header = true;
        if path.exists() {
            let reader = BufReader::new(File::open(&path).map_err(io)?);
            for (idx, line) in reader.lines().enumerate() {
                let line = line.map_err(io)?;
                let number = idx + 1;
                if number == 1 {
                    if line.trim_end() != HEADER {
                        return Err(corrupt(&path, number, &line, "unexpected header"));
                    }
                    needs_header = false;
                    continue;
                }
                if line.trim().is_empty() {
                    continue;
                }
                let record = parse_line(&line).map_err(|m| corrupt(&path, number, &line, &m))?;
                latest.insert((record.rater_id.clone(), record.item_id.clone()), record);
            }
        }
        let mut file = OpenOptions::new().create(true).append(true).open(&path).map_err(io)?;
        if needs_header {
            writeln!(file, "{HEADER}").map_err(io)?;
            file.sync_data().map_err(io)?;
        }
        Ok(Self {
            path,
            inner: Mutex::new(Inner { file, latest }),
        })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    /// Appends and syncs the record; returns once it is durable.
    pub fn upsert(&self, record: AnnotationRecord) -> Result<(), ServiceError> {
        let line = to_line(&record);
        let mut inner = self.inner.lock().expect("store lock poisoned");
        let io = |e| ServiceError::Io { path: self.path.clone(), source: e };
        inner.file.write_all(line.as_bytes()).map_err(io)?;
        inner.file.sync_data().map_err(io)?;
        inner.latest.insert((record.rater_id.clone(), record.item_id.clone()), record);
        Ok(())
    }

    /// Current records ordered by (rater, item).
    pub fn records(&self) -> Vec<AnnotationRecord> {
        self.inner.lock().expect("store lock poisoned").latest.values().cloned().collect()
    }
}

fn corrupt(path: &Path, line: usize, content: &str, message: &str) -> ServiceError {
    ServiceError::CorruptStore {
        path: path.to_path_buf(),
        line,
        content: content.to_string(),
        message: message.to_string(),
    }
}

fn parse_line(line: &str) -> Result<AnnotationRecord, String> {
    let mut reader = csv::ReaderBuilder::new().has_headers(false).from_reader(line.as_bytes());
    let record = reader.records().next().ok_or("empty line")?.map_err(|e| e.to_string())?;
    if record.len() != 6 {
        return Err(format!("expected 6 fields, found {}", record.len()));
    }
    let headers = csv::StringRecord::from(HEADER.split(',').collect::<Vec<_>>());
    record.deserialize(Some(&headers)).map_err(|e| e.to_string())
}

fn to_line(record: &AnnotationRecord) -> String {
    let mut writer = csv::WriterBuilder::new().has_headers(false).from_writer(Vec::new());
    writer.serialize(record).expect("serializing to memory");
    String::from_utf8(writer.into_inner().expect("writing to memory")).expect("UTF-8 fields")
}
