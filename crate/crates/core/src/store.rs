//! Line-delimited JSON record files, one record kind per file.

use std::fmt;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::marker::PhantomData;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum RecordKind {
    Tasks,
    Outputs,
    Feedback,
    Batches,
    Rankings,
    Judgments,
}

impl RecordKind {
    pub const ALL: [RecordKind; 6] = [
        RecordKind::Tasks,
        RecordKind::Outputs,
        RecordKind::Feedback,
        RecordKind::Batches,
        RecordKind::Rankings,
        RecordKind::Judgments,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            RecordKind::Tasks => "tasks",
            RecordKind::Outputs => "outputs",
            RecordKind::Feedback => "feedback",
            RecordKind::Batches => "batches",
            RecordKind::Rankings => "rankings",
            RecordKind::Judgments => "judgments",
        }
    }

    pub fn file_name(self) -> String {
        format!("{}.jsonl", self.as_str())
    }

    pub fn path_in(self, dir: &Path) -> PathBuf {
        dir.join(self.file_name())
    }
}

impl fmt::Display for RecordKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for RecordKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        RecordKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| Error::Unknown {
                what: "record kind",
                id: s.to_string(),
            })
    }
}

/// Reads every record. A missing file is an empty list; a malformed line is
/// an error carrying its line number. Blank lines are skipped.
pub fn read_records<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    if !path.exists() {
        return Ok(Vec::new());
    }
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec = serde_json::from_str(&line).map_err(|source| Error::Decode {
            path: path.to_path_buf(),
            line: i + 1,
            source,
        })?;
        out.push(rec);
    }
    Ok(out)
}

/// Replaces the file with `records`, one per line.
pub fn write_records<T: Serialize>(path: &Path, records: &[T]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for rec in records {
        let line = serde_json::to_string(rec)?;
        w.write_all(line.as_bytes())
            .and_then(|_| w.write_all(b"\n"))
            .map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// The file's bytes up to and including the last newline, so a reader racing
/// an appender never sees a partial record.
pub fn read_complete_lines(path: &Path) -> Result<Vec<u8>> {
    let mut bytes = match std::fs::read(path) {
        Ok(b) => b,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => Vec::new(),
        Err(e) => return Err(Error::io(path, e)),
    };
    let end = bytes.iter().rposition(|&b| b == b'\n').map_or(0, |i| i + 1);
    bytes.truncate(end);
    Ok(bytes)
}

/// Append-only handle on one record file. Each record is written with a
/// single `write_all` of a complete line.
pub struct RecordLog<T> {
    path: PathBuf,
    file: File,
    _marker: PhantomData<fn(&T)>,
}

impl<T> fmt::Debug for RecordLog<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("RecordLog").field("path", &self.path).finish()
    }
}

impl<T: Serialize + DeserializeOwned> RecordLog<T> {
    pub fn open(path: impl Into<PathBuf>) -> Result<Self> {
        let path = path.into();
        if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&path)
            .map_err(|e| Error::io(&path, e))?;
        Ok(RecordLog {
            path,
            file,
            _marker: PhantomData,
        })
    }

    pub fn append(&mut self, record: &T) -> Result<()> {
        let mut line = serde_json::to_string(record)?;
        line.push('\n');
        self.file
            .write_all(line.as_bytes())
            .and_then(|_| self.file.flush())
            .map_err(|e| Error::io(&self.path, e))
    }

    pub fn read_all(&self) -> Result<Vec<T>> {
        read_records(&self.path)
    }

    pub fn path(&self) -> &Path {
        &self.path
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde::Deserialize;

    #[derive(Debug, PartialEq, Serialize, Deserialize)]
    struct Row {
        id: u32,
        name: String,
    }

    #[test]
    fn append_then_read() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("sub").join("rows.jsonl");
        let mut log = RecordLog::<Row>::open(&path).unwrap();
        log.append(&Row { id: 1, name: "a".into() }).unwrap();
        log.append(&Row { id: 2, name: "b\nc".into() }).unwrap();
        let rows = log.read_all().unwrap();
        assert_eq!(rows.len(), 2);
        assert_eq!(rows[1].name, "b\nc");

        let mut again = RecordLog::<Row>::open(&path).unwrap();
        again.append(&Row { id: 3, name: "d".into() }).unwrap();
        assert_eq!(read_records::<Row>(&path).unwrap().len(), 3);
    }

    #[test]
    fn malformed_line_reports_line_number() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("rows.jsonl");
        std::fs::write(&path, "{\"id\":1,\"name\":\"a\"}\n\n{\"id\":\"x\"}\n").unwrap();
        match read_records::<Row>(&path) {
            Err(Error::Decode { line, .. }) => assert_eq!(line, 3),
            other => panic!("expected decode error, got {other:?}"),
        }
    }

    #[test]
    fn missing_file_reads_empty() {
        let dir = tempfile::tempdir().unwrap();
        assert!(read_records::<Row>(&dir.path().join("none.jsonl")).unwrap().is_empty());
        assert!(read_complete_lines(&dir.path().join("none.jsonl")).unwrap().is_empty());
    }

    #[test]
    fn complete_lines_drop_partial_tail() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("rows.jsonl");
        std::fs::write(&path, "{\"id\":1}\n{\"id\":2").unwrap();
        assert_eq!(read_complete_lines(&path).unwrap(), b"{\"id\":1}\n");
    }

    #[test]
    fn kinds_parse() {
        for k in RecordKind::ALL {
            assert_eq!(k.as_str().parse::<RecordKind>().unwrap(), k);
        }
        assert!("widgets".parse::<RecordKind>().is_err());
    }
}
