//! Write-once container files for binary datastreams, in the Internet
//! Archive ARC v1 layout.
//!
//! A container starts with a `filedesc://` version record, then one record
//! per datastream: a five-field header line (url, IP, 14-digit UTC date,
//! media type, payload length), the payload bytes, one separating newline.
//! Datastreams are keyed by minted identifiers used as the header url.
//!
//! A tab-delimited sidecar index maps keys to header offsets. The index is
//! derivable: [`rebuild_index`] recovers it by scanning record headers, and
//! reads re-parse the header so a stale index surfaces as an error instead
//! of wrong bytes.

use std::collections::HashMap;
use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Read, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::time::UtcTimestamp;

const FILEDESC_PAYLOAD: &[u8] = b"1 0 didlrepo\nURL IP-address Archive-date Content-type Archive-length\n";
const PLACEHOLDER_IP: &str = "0.0.0.0";

#[derive(Debug, Error)]
pub enum ArcError {
    #[error("container I/O failure: {0}")]
    IoFailure(#[from] std::io::Error),
    #[error("unknown datastream key `{0}`")]
    UnknownKey(String),
    #[error("corrupt container record: {0}")]
    CorruptRecord(String),
    #[error("datastream key `{0}` contains whitespace")]
    BadKey(String),
}

/// One row of the sidecar index: where a record's header line begins and how
/// long its payload is.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ArcEntry {
    pub key: String,
    pub offset: u64,
    pub length: u64,
    pub mime: String,
    pub date: UtcTimestamp,
}

/// A retrieved datastream.
#[derive(Debug, Clone)]
pub struct ArcRecord {
    pub key: String,
    pub mime: String,
    pub date: UtcTimestamp,
    pub bytes: Vec<u8>,
}

/// Media types go into a space-delimited header, so parameters after `;`
/// are dropped.
pub fn sanitize_mime(mime: &str) -> String {
    let head = mime.split(';').next().unwrap_or(mime).trim();
    if head.is_empty() {
        "application/octet-stream".to_string()
    } else {
        head.to_string()
    }
}

// ---------------------------------------------------------------------------
// Writing
// ---------------------------------------------------------------------------

pub struct ArcWriter {
    file: File,
    position: u64,
    entries: Vec<ArcEntry>,
}

impl ArcWriter {
    /// Creates a new container file and writes the version record.
    pub fn create(path: &Path, created: UtcTimestamp) -> Result<Self, ArcError> {
        let mut file = OpenOptions::new().create_new(true).write(true).open(path)?;
        let name = path
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_else(|| "container.arc".to_string());
        let header = format!(
            "filedesc://{name} {PLACEHOLDER_IP} {} text/plain {}\n",
            created.compact(),
            FILEDESC_PAYLOAD.len()
        );
        file.write_all(header.as_bytes())?;
        file.write_all(FILEDESC_PAYLOAD)?;
        file.write_all(b"\n")?;
        let position = header.len() as u64 + FILEDESC_PAYLOAD.len() as u64 + 1;
        Ok(ArcWriter {
            file,
            position,
            entries: Vec::new(),
        })
    }

    /// Appends one datastream and returns its index entry.
    pub fn append(
        &mut self,
        key: &str,
        mime: &str,
        date: UtcTimestamp,
        bytes: &[u8],
    ) -> Result<ArcEntry, ArcError> {
        if key.chars().any(|c| c.is_ascii_whitespace()) || key.is_empty() {
            return Err(ArcError::BadKey(key.to_string()));
        }
        let mime = sanitize_mime(mime);
        let header = format!(
            "{key} {PLACEHOLDER_IP} {} {mime} {}\n",
            date.compact(),
            bytes.len()
        );
        let entry = ArcEntry {
            key: key.to_string(),
            offset: self.position,
            length: bytes.len() as u64,
            mime,
            date,
        };
        self.file.write_all(header.as_bytes())?;
        self.file.write_all(bytes)?;
        self.file.write_all(b"\n")?;
        self.position += header.len() as u64 + bytes.len() as u64 + 1;
        self.entries.push(entry.clone());
        Ok(entry)
    }

    pub fn entries(&self) -> &[ArcEntry] {
        &self.entries
    }

    /// Flushes the container and writes the sidecar index next to it.
    pub fn finish(mut self, index_path: &Path) -> Result<(), ArcError> {
        self.file.flush()?;
        save_index(&self.entries, index_path)
    }
}

// ---------------------------------------------------------------------------
// Sidecar index
// ---------------------------------------------------------------------------

pub fn save_index(entries: &[ArcEntry], path: &Path) -> Result<(), ArcError> {
    let mut out = String::new();
    for e in entries {
        out.push_str(&format!(
            "{}\t{}\t{}\t{}\t{}\n",
            e.key, e.offset, e.length, e.mime, e.date
        ));
    }
    fs::write(path, out)?;
    Ok(())
}

pub fn load_index(path: &Path) -> Result<Vec<ArcEntry>, ArcError> {
    let text = fs::read_to_string(path)?;
    let mut entries = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 5 {
            return Err(ArcError::CorruptRecord(format!(
                "index line {}: expected 5 fields, found {}",
                lineno + 1,
                fields.len()
            )));
        }
        let parse_u64 = |s: &str| {
            s.parse::<u64>().map_err(|_| {
                ArcError::CorruptRecord(format!("index line {}: bad number `{s}`", lineno + 1))
            })
        };
        entries.push(ArcEntry {
            key: fields[0].to_string(),
            offset: parse_u64(fields[1])?,
            length: parse_u64(fields[2])?,
            mime: fields[3].to_string(),
            date: fields[4].parse().map_err(|_| {
                ArcError::CorruptRecord(format!(
                    "index line {}: bad date `{}`",
                    lineno + 1,
                    fields[4]
                ))
            })?,
        });
    }
    Ok(entries)
}

/// Recovers the index by scanning every record header in the container.
/// The version record is skipped.
pub fn rebuild_index(path: &Path) -> Result<Vec<ArcEntry>, ArcError> {
    let file = File::open(path)?;
    let mut reader = BufReader::new(file);
    let mut offset: u64 = 0;
    let mut entries = Vec::new();
    loop {
        let mut header = String::new();
        let n = reader.read_line(&mut header)?;
        if n == 0 {
            break;
        }
        let parsed = parse_header(header.trim_end_matches('\n'), offset)?;
        let mut payload = vec![0u8; parsed.length as usize];
        reader.read_exact(&mut payload).map_err(|_| {
            ArcError::CorruptRecord(format!("truncated payload at offset {offset}"))
        })?;
        let mut sep = [0u8; 1];
        reader
            .read_exact(&mut sep)
            .map_err(|_| ArcError::CorruptRecord(format!("missing separator at offset {offset}")))?;
        if sep[0] != b'\n' {
            return Err(ArcError::CorruptRecord(format!(
                "bad record separator at offset {offset}"
            )));
        }
        let next = offset + n as u64 + parsed.length + 1;
        if !parsed.key.starts_with("filedesc://") {
            entries.push(parsed);
        }
        offset = next;
    }
    Ok(entries)
}

fn parse_header(line: &str, offset: u64) -> Result<ArcEntry, ArcError> {
    let fields: Vec<&str> = line.split(' ').collect();
    if fields.len() != 5 {
        return Err(ArcError::CorruptRecord(format!(
            "header at offset {offset}: expected 5 fields, found {}",
            fields.len()
        )));
    }
    Ok(ArcEntry {
        key: fields[0].to_string(),
        offset,
        length: fields[4].parse().map_err(|_| {
            ArcError::CorruptRecord(format!("header at offset {offset}: bad length"))
        })?,
        mime: fields[3].to_string(),
        date: UtcTimestamp::from_compact(fields[2]).map_err(|_| {
            ArcError::CorruptRecord(format!("header at offset {offset}: bad date"))
        })?,
    })
}

// ---------------------------------------------------------------------------
// Reading
// ---------------------------------------------------------------------------

/// Read-only view over a sealed container plus its index.
pub struct ArcStore {
    path: PathBuf,
    by_key: HashMap<String, ArcEntry>,
}

impl ArcStore {
    /// Opens a container with its sidecar index; rebuilds the index from the
    /// container when the sidecar is absent.
    pub fn open(arc_path: &Path, index_path: &Path) -> Result<Self, ArcError> {
        let entries = if index_path.exists() {
            load_index(index_path)?
        } else {
            let entries = rebuild_index(arc_path)?;
            save_index(&entries, index_path)?;
            entries
        };
        Ok(ArcStore {
            path: arc_path.to_path_buf(),
            by_key: entries.into_iter().map(|e| (e.key.clone(), e)).collect(),
        })
    }

    pub fn from_entries(arc_path: &Path, entries: Vec<ArcEntry>) -> Self {
        ArcStore {
            path: arc_path.to_path_buf(),
            by_key: entries.into_iter().map(|e| (e.key.clone(), e)).collect(),
        }
    }

    pub fn contains(&self, key: &str) -> bool {
        self.by_key.contains_key(key)
    }

    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.by_key.keys().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.by_key.len()
    }

    pub fn is_empty(&self) -> bool {
        self.by_key.is_empty()
    }

    /// Retrieves one datastream. The header line at the indexed offset is
    /// re-parsed and cross-checked against the entry before the payload is
    /// read.
    pub fn get(&self, key: &str) -> Result<ArcRecord, ArcError> {
        let entry = self
            .by_key
            .get(key)
            .ok_or_else(|| ArcError::UnknownKey(key.to_string()))?;
        let mut file = File::open(&self.path)?;
        file.seek(SeekFrom::Start(entry.offset))?;
        let mut reader = BufReader::new(file);
        let mut header = String::new();
        reader.read_line(&mut header)?;
        let parsed = parse_header(header.trim_end_matches('\n'), entry.offset)?;
        if parsed.key != entry.key || parsed.length != entry.length {
            return Err(ArcError::CorruptRecord(format!(
                "index disagrees with container at offset {}",
                entry.offset
            )));
        }
        let mut bytes = vec![0u8; entry.length as usize];
        reader.read_exact(&mut bytes).map_err(|_| {
            ArcError::CorruptRecord(format!("truncated payload at offset {}", entry.offset))
        })?;
        Ok(ArcRecord {
            key: entry.key.clone(),
            mime: entry.mime.clone(),
            date: entry.date,
            bytes,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ts() -> UtcTimestamp {
        "2004-06-22T18:07:18Z".parse().unwrap()
    }

    #[test]
    fn write_read_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let arc = dir.path().join("a.arc");
        let idx = dir.path().join("a.arc.idx");
        let mut w = ArcWriter::create(&arc, ts()).unwrap();
        w.append("info:x/ds/1", "application/pdf", ts(), b"%PDF-1.4 body").unwrap();
        w.append("info:x/ds/2", "text/xml; charset=UTF-8", ts(), b"<r/>").unwrap();
        w.finish(&idx).unwrap();

        let store = ArcStore::open(&arc, &idx).unwrap();
        assert_eq!(store.len(), 2);
        let rec = store.get("info:x/ds/1").unwrap();
        assert_eq!(rec.bytes, b"%PDF-1.4 body");
        assert_eq!(rec.mime, "application/pdf");
        let rec2 = store.get("info:x/ds/2").unwrap();
        assert_eq!(rec2.mime, "text/xml");
        assert!(matches!(
            store.get("info:x/ds/none"),
            Err(ArcError::UnknownKey(_))
        ));
    }

    #[test]
    fn rebuild_matches_sidecar() {
        let dir = tempfile::tempdir().unwrap();
        let arc = dir.path().join("a.arc");
        let idx = dir.path().join("a.arc.idx");
        let mut w = ArcWriter::create(&arc, ts()).unwrap();
        for i in 0..10 {
            let body = vec![b'x'; i * 37 + 1];
            w.append(&format!("info:x/ds/{i}"), "application/octet-stream", ts(), &body)
                .unwrap();
        }
        let expected = w.entries().to_vec();
        w.finish(&idx).unwrap();
        assert_eq!(load_index(&idx).unwrap(), expected);
        assert_eq!(rebuild_index(&arc).unwrap(), expected);
    }

    #[test]
    fn rebuild_used_when_sidecar_missing() {
        let dir = tempfile::tempdir().unwrap();
        let arc = dir.path().join("a.arc");
        let mut w = ArcWriter::create(&arc, ts()).unwrap();
        w.append("info:x/ds/1", "image/png", ts(), &[0u8, 1, 2, b'\n', 4]).unwrap();
        w.finish(&dir.path().join("throwaway.idx")).unwrap();

        let idx = dir.path().join("fresh.idx");
        let store = ArcStore::open(&arc, &idx).unwrap();
        assert_eq!(store.get("info:x/ds/1").unwrap().bytes, &[0u8, 1, 2, b'\n', 4]);
        assert!(idx.exists());
    }

    #[test]
    fn keys_with_whitespace_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let arc = dir.path().join("a.arc");
        let mut w = ArcWriter::create(&arc, ts()).unwrap();
        assert!(matches!(
            w.append("bad key", "text/plain", ts(), b"x"),
            Err(ArcError::BadKey(_))
        ));
    }

    #[test]
    fn stale_index_detected() {
        let dir = tempfile::tempdir().unwrap();
        let arc = dir.path().join("a.arc");
        let idx = dir.path().join("a.arc.idx");
        let mut w = ArcWriter::create(&arc, ts()).unwrap();
        let entry = w.append("info:x/ds/1", "text/plain", ts(), b"hello").unwrap();
        w.finish(&idx).unwrap();

        let shifted = ArcEntry {
            offset: entry.offset + 3,
            ..entry
        };
        let store = ArcStore::from_entries(&arc, vec![shifted]);
        assert!(matches!(
            store.get("info:x/ds/1"),
            Err(ArcError::CorruptRecord(_))
        ));
    }
}
