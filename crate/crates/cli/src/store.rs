//! Append-only persistence for the annotation service.
//!
//! A [`JsonlStore`] keeps three logs in one directory: submitted annotations,
//! task assignments and qualification results. Every append is flushed with
//! `fsync` before it returns. On open a torn final line (left by a crash in
//! the middle of a write) is cut off; corruption anywhere else is an error.

use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use errspan_core::{Annotation, GenerationRecord};

use crate::qualification::Grade;

pub const ANNOTATIONS_FILE: &str = "annotations.jsonl";
pub const ASSIGNMENTS_FILE: &str = "assignments.jsonl";
pub const QUALIFICATIONS_FILE: &str = "qualifications.jsonl";

#[derive(Debug, thiserror::Error)]
pub enum StoreError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{path}:{line}: {message}")]
    Corrupt {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error(transparent)]
    Core(#[from] errspan_core::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum AssignmentStatus {
    Open,
    Submitted,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskAssignment {
    pub generation_id: String,
    pub annotator_id: String,
    /// Seconds since the Unix epoch.
    pub assigned_at: u64,
    pub status: AssignmentStatus,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QualificationRecord {
    pub annotator_id: String,
    pub graded_at: u64,
    #[serde(flatten)]
    pub grade: Grade,
}

/// Storage behind the annotation service. Reads return everything appended
/// so far, in append order.
pub trait Store: Send + Sync {
    fn generations(&self) -> &[GenerationRecord];
    fn annotations(&self) -> &[Annotation];
    /// Assignment log. An assignment is recorded once, when it is opened;
    /// it counts as submitted once a matching annotation exists.
    fn assignments(&self) -> &[TaskAssignment];
    fn qualifications(&self) -> &[QualificationRecord];

    fn append_annotation(&mut self, annotation: Annotation) -> Result<(), StoreError>;
    fn append_assignment(&mut self, assignment: TaskAssignment) -> Result<(), StoreError>;
    fn append_qualification(&mut self, record: QualificationRecord) -> Result<(), StoreError>;
}

impl<T: Store + ?Sized> Store for Box<T> {
    fn generations(&self) -> &[GenerationRecord] {
        (**self).generations()
    }
    fn annotations(&self) -> &[Annotation] {
        (**self).annotations()
    }
    fn assignments(&self) -> &[TaskAssignment] {
        (**self).assignments()
    }
    fn qualifications(&self) -> &[QualificationRecord] {
        (**self).qualifications()
    }
    fn append_annotation(&mut self, annotation: Annotation) -> Result<(), StoreError> {
        (**self).append_annotation(annotation)
    }
    fn append_assignment(&mut self, assignment: TaskAssignment) -> Result<(), StoreError> {
        (**self).append_assignment(assignment)
    }
    fn append_qualification(&mut self, record: QualificationRecord) -> Result<(), StoreError> {
        (**self).append_qualification(record)
    }
}

/// Volatile store for tests and dry runs.
#[derive(Debug, Default)]
pub struct MemoryStore {
    pub generations: Vec<GenerationRecord>,
    pub annotations: Vec<Annotation>,
    pub assignments: Vec<TaskAssignment>,
    pub qualifications: Vec<QualificationRecord>,
}

impl MemoryStore {
    pub fn new(generations: Vec<GenerationRecord>) -> Self {
        MemoryStore {
            generations,
            ..Default::default()
        }
    }
}

impl Store for MemoryStore {
    fn generations(&self) -> &[GenerationRecord] {
        &self.generations
    }
    fn annotations(&self) -> &[Annotation] {
        &self.annotations
    }
    fn assignments(&self) -> &[TaskAssignment] {
        &self.assignments
    }
    fn qualifications(&self) -> &[QualificationRecord] {
        &self.qualifications
    }
    fn append_annotation(&mut self, annotation: Annotation) -> Result<(), StoreError> {
        self.annotations.push(annotation);
        Ok(())
    }
    fn append_assignment(&mut self, assignment: TaskAssignment) -> Result<(), StoreError> {
        self.assignments.push(assignment);
        Ok(())
    }
    fn append_qualification(&mut self, record: QualificationRecord) -> Result<(), StoreError> {
        self.qualifications.push(record);
        Ok(())
    }
}

struct Log<T> {
    path: PathBuf,
    file: File,
    records: Vec<T>,
}

impl<T: Serialize + DeserializeOwned> Log<T> {
    fn open(path: PathBuf) -> Result<Self, StoreError> {
        let io = |source| StoreError::Io {
            path: path.clone(),
            source,
        };
        let mut file = OpenOptions::new()
            .read(true)
            .append(true)
            .create(true)
            .open(&path)
            .map_err(io)?;

        let mut records = Vec::new();
        let mut good_len = 0u64;
        let mut torn: Option<(usize, String)> = None;
        let mut reader = BufReader::new(&mut file);
        let mut line = String::new();
        let mut number = 0;
        loop {
            line.clear();
            let n = reader.read_line(&mut line).map_err(io)?;
            if n == 0 {
                break;
            }
            number += 1;
            if let Some((at, message)) = torn.take() {
                return Err(StoreError::Corrupt {
                    path: path.clone(),
                    line: at,
                    message,
                });
            }
            let complete = line.ends_with('\n');
            let body = line.trim();
            if body.is_empty() {
                if complete {
                    good_len += n as u64;
                }
                continue;
            }
            match serde_json::from_str::<T>(body) {
                Ok(record) if complete => {
                    records.push(record);
                    good_len += n as u64;
                }
                Ok(_) => torn = Some((number, "missing newline".into())),
                Err(e) => torn = Some((number, e.to_string())),
            }
        }
        drop(reader);
        if let Some((at, message)) = torn {
            log::warn!(
                "{}:{at}: dropping incomplete final record ({message})",
                path.display()
            );
            file.set_len(good_len).map_err(io)?;
            file.sync_all().map_err(io)?;
        }
        file.seek(SeekFrom::End(0)).map_err(io)?;
        Ok(Log {
            path,
            file,
            records,
        })
    }

    fn append(&mut self, record: T) -> Result<(), StoreError> {
        let mut line = serde_json::to_string(&record).map_err(errspan_core::Error::from)?;
        line.push('\n');
        let io = |source| StoreError::Io {
            path: self.path.clone(),
            source,
        };
        self.file.write_all(line.as_bytes()).map_err(io)?;
        self.file.sync_data().map_err(io)?;
        self.records.push(record);
        Ok(())
    }
}

pub struct JsonlStore {
    generations: Vec<GenerationRecord>,
    annotations: Log<Annotation>,
    assignments: Log<TaskAssignment>,
    qualifications: Log<QualificationRecord>,
}

impl JsonlStore {
    /// Opens (creating if needed) the logs in `dir` and loads `generations`.
    pub fn open(dir: &Path, generations: Vec<GenerationRecord>) -> Result<Self, StoreError> {
        std::fs::create_dir_all(dir).map_err(|source| StoreError::Io {
            path: dir.to_path_buf(),
            source,
        })?;
        Ok(JsonlStore {
            generations,
            annotations: Log::open(dir.join(ANNOTATIONS_FILE))?,
            assignments: Log::open(dir.join(ASSIGNMENTS_FILE))?,
            qualifications: Log::open(dir.join(QUALIFICATIONS_FILE))?,
        })
    }
}

impl Store for JsonlStore {
    fn generations(&self) -> &[GenerationRecord] {
        &self.generations
    }
    fn annotations(&self) -> &[Annotation] {
        &self.annotations.records
    }
    fn assignments(&self) -> &[TaskAssignment] {
        &self.assignments.records
    }
    fn qualifications(&self) -> &[QualificationRecord] {
        &self.qualifications.records
    }
    fn append_annotation(&mut self, annotation: Annotation) -> Result<(), StoreError> {
        self.annotations.append(annotation)
    }
    fn append_assignment(&mut self, assignment: TaskAssignment) -> Result<(), StoreError> {
        self.assignments.append(assignment)
    }
    fn append_qualification(&mut self, record: QualificationRecord) -> Result<(), StoreError> {
        self.qualifications.append(record)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use errspan_core::{CharSpan, ErrorSpan, ErrorType, Severity};

    fn ann(id: &str) -> Annotation {
        Annotation::new(
            id,
            "g1",
            "w1",
            vec![ErrorSpan::new(
                CharSpan::new(0, 3),
                ErrorType::OffPrompt,
                Severity::MINOR,
                "x",
            )],
        )
    }

    #[test]
    fn appends_survive_reopen() {
        let dir = tempfile::tempdir().unwrap();
        {
            let mut s = JsonlStore::open(dir.path(), vec![]).unwrap();
            s.append_annotation(ann("a1")).unwrap();
            s.append_annotation(ann("a2")).unwrap();
        }
        let s = JsonlStore::open(dir.path(), vec![]).unwrap();
        let ids: Vec<&str> = s.annotations().iter().map(|a| a.annotation_id.as_str()).collect();
        assert_eq!(ids, ["a1", "a2"]);
    }

    #[test]
    fn torn_tail_is_truncated() {
        let dir = tempfile::tempdir().unwrap();
        {
            let mut s = JsonlStore::open(dir.path(), vec![]).unwrap();
            s.append_annotation(ann("a1")).unwrap();
        }
        let path = dir.path().join(ANNOTATIONS_FILE);
        let mut f = OpenOptions::new().append(true).open(&path).unwrap();
        f.write_all(br#"{"annotation_id":"a2","gener"#).unwrap();
        drop(f);

        let mut s = JsonlStore::open(dir.path(), vec![]).unwrap();
        assert_eq!(s.annotations().len(), 1);
        s.append_annotation(ann("a3")).unwrap();
        drop(s);
        let s = JsonlStore::open(dir.path(), vec![]).unwrap();
        assert_eq!(s.annotations().len(), 2);
        assert_eq!(s.annotations()[1].annotation_id, "a3");
    }

    #[test]
    fn complete_record_without_newline_is_dropped() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join(ANNOTATIONS_FILE);
        let mut line = serde_json::to_string(&ann("a1")).unwrap();
        line.push('\n');
        line.push_str(&serde_json::to_string(&ann("a2")).unwrap());
        std::fs::write(&path, line).unwrap();
        let s = JsonlStore::open(dir.path(), vec![]).unwrap();
        assert_eq!(s.annotations().len(), 1);
    }

    #[test]
    fn corruption_mid_file_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join(ANNOTATIONS_FILE);
        let good = serde_json::to_string(&ann("a1")).unwrap();
        std::fs::write(&path, format!("{good}\nnot json\n{good}\n")).unwrap();
        match JsonlStore::open(dir.path(), vec![]) {
            Err(StoreError::Corrupt { line, .. }) => assert_eq!(line, 2),
            other => panic!("expected corruption error, got {:?}", other.err()),
        }
    }
}
