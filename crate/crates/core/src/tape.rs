//! Append-only tape files: one well-formed XML document concatenating many
//! archival packages, each wrapped in a record element carrying the package
//! identifier and an ingestion datestamp.
//!
//! ```text
//! <tape>
//!   <tape-admin><identifier>…</identifier><created>…</created></tape-admin>
//!   <tape-record>
//!     <tape-record-admin><identifier>…</identifier><datestamp>…</datestamp></tape-record-admin>
//!     <didl:DIDL …>…</didl:DIDL>
//!   </tape-record>
//!   …
//! </tape>
//! ```
//!
//! The writer records the exact byte span of every embedded package so reads
//! return stored bytes verbatim. Spans live in a tab-delimited sidecar index
//! that can always be rebuilt by scanning the tape. A sealed tape is never
//! modified; updated objects go into later tapes.

use std::collections::{HashMap, HashSet};
use std::fs::{self, File, OpenOptions};
use std::io::{Read, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};

use quick_xml::events::Event;
use quick_xml::Reader;
use thiserror::Error;

use crate::time::UtcTimestamp;
use crate::xml::{self, XmlError};

#[derive(Debug, Error)]
pub enum TapeError {
    #[error("tape I/O failure: {0}")]
    IoFailure(#[from] std::io::Error),
    #[error(transparent)]
    Xml(#[from] XmlError),
    #[error("package `{0}` already on this tape")]
    DuplicatePackageId(String),
    #[error("tape is sealed")]
    TapeSealed,
    #[error("unknown package `{0}`")]
    UnknownPackageId(String),
    #[error("corrupt tape: {0}")]
    CorruptTape(String),
    #[error("not an archival package: {0}")]
    BadPackage(String),
    #[error("bad range: from {from} is after until {until}")]
    BadRange {
        from: UtcTimestamp,
        until: UtcTimestamp,
    },
}

/// Index row: where one package's document lives inside the tape.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TapeEntry {
    pub package_id: String,
    pub offset: u64,
    pub length: u64,
    pub datestamp: UtcTimestamp,
}

/// Tape-level administrative header.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TapeAdmin {
    pub identifier: String,
    pub created: UtcTimestamp,
}

/// A record read back from a tape: stored bytes, untouched.
#[derive(Debug, Clone)]
pub struct TapeRecord {
    pub package_id: String,
    pub datestamp: UtcTimestamp,
    pub didl: Vec<u8>,
}

/// Strips a leading XML declaration and following whitespace.
pub fn strip_xml_decl(bytes: &[u8]) -> &[u8] {
    let mut rest = bytes;
    if rest.starts_with(b"<?xml") {
        if let Some(end) = rest.windows(2).position(|w| w == b"?>") {
            rest = &rest[end + 2..];
        }
    }
    while let [b, tail @ ..] = rest {
        if b.is_ascii_whitespace() {
            rest = tail;
        } else {
            break;
        }
    }
    rest
}

// ---------------------------------------------------------------------------
// Writing
// ---------------------------------------------------------------------------

pub struct TapeWriter {
    file: File,
    position: u64,
    entries: Vec<TapeEntry>,
    seen: HashSet<String>,
    sealed: bool,
}

impl TapeWriter {
    pub fn create(path: &Path, identifier: &str, created: UtcTimestamp) -> Result<Self, TapeError> {
        let mut file = OpenOptions::new().create_new(true).write(true).open(path)?;
        let head = format!(
            "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n<tape>\n<tape-admin><identifier>{}</identifier><created>{}</created></tape-admin>\n",
            xml::escape_text(identifier),
            created
        );
        file.write_all(head.as_bytes())?;
        Ok(TapeWriter {
            file,
            position: head.len() as u64,
            entries: Vec::new(),
            seen: HashSet::new(),
            sealed: false,
        })
    }

    /// Appends one package. The record's identifier and datestamp come from
    /// the document itself (its package id and creation instant), so the
    /// record admin can never disagree with the embedded bytes. `didl` may
    /// carry an XML declaration; the embedded copy never does. Returns the
    /// recorded span.
    pub fn append(&mut self, didl: &[u8]) -> Result<TapeEntry, TapeError> {
        if self.sealed {
            return Err(TapeError::TapeSealed);
        }
        let pkg = crate::didl::parse_package(didl)
            .map_err(|e| TapeError::BadPackage(e.to_string()))?;
        let package_id = pkg.package_id.as_str();
        let datestamp = pkg.created;
        if !self.seen.insert(package_id.to_string()) {
            return Err(TapeError::DuplicatePackageId(package_id.to_string()));
        }
        let body = strip_xml_decl(didl);

        let admin = format!(
            "<tape-record>\n<tape-record-admin><identifier>{}</identifier><datestamp>{}</datestamp></tape-record-admin>\n",
            xml::escape_text(package_id),
            datestamp
        );
        self.file.write_all(admin.as_bytes())?;
        let offset = self.position + admin.len() as u64;
        self.file.write_all(body)?;
        self.file.write_all(b"\n</tape-record>\n")?;
        self.position = offset + body.len() as u64 + "\n</tape-record>\n".len() as u64;

        let entry = TapeEntry {
            package_id: package_id.to_string(),
            offset,
            length: body.len() as u64,
            datestamp,
        };
        self.entries.push(entry.clone());
        Ok(entry)
    }

    pub fn entries(&self) -> &[TapeEntry] {
        &self.entries
    }

    /// Closes the document and writes the sidecar index. No further appends.
    pub fn seal(mut self, index_path: &Path) -> Result<(), TapeError> {
        self.file.write_all(b"</tape>\n")?;
        self.file.flush()?;
        self.sealed = true;
        save_index(&self.entries, index_path)
    }
}

// ---------------------------------------------------------------------------
// Sidecar index
// ---------------------------------------------------------------------------

pub fn save_index(entries: &[TapeEntry], path: &Path) -> Result<(), TapeError> {
    let mut out = String::new();
    for e in entries {
        out.push_str(&format!(
            "{}\t{}\t{}\t{}\n",
            e.package_id, e.offset, e.length, e.datestamp
        ));
    }
    fs::write(path, out)?;
    Ok(())
}

pub fn load_index(path: &Path) -> Result<Vec<TapeEntry>, TapeError> {
    let text = fs::read_to_string(path)?;
    let mut entries = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 4 {
            return Err(TapeError::CorruptTape(format!(
                "index line {}: expected 4 fields",
                lineno + 1
            )));
        }
        entries.push(TapeEntry {
            package_id: fields[0].to_string(),
            offset: fields[1].parse().map_err(|_| {
                TapeError::CorruptTape(format!("index line {}: bad offset", lineno + 1))
            })?,
            length: fields[2].parse().map_err(|_| {
                TapeError::CorruptTape(format!("index line {}: bad length", lineno + 1))
            })?,
            datestamp: fields[3].parse().map_err(|_| {
                TapeError::CorruptTape(format!("index line {}: bad datestamp", lineno + 1))
            })?,
        });
    }
    Ok(entries)
}

// ---------------------------------------------------------------------------
// Scanning
// ---------------------------------------------------------------------------

/// Recovers the record index by streaming the tape. Package spans are taken
/// from event positions, so `scan(tape)[i]` addresses exactly the bytes the
/// writer emitted.
pub fn rebuild_index(path: &Path) -> Result<Vec<TapeEntry>, TapeError> {
    let bytes = fs::read(path)?;
    scan_tape(&bytes).map(|(_, entries)| entries)
}

/// Reads only the administrative header of a tape.
pub fn read_admin(path: &Path) -> Result<TapeAdmin, TapeError> {
    let bytes = fs::read(path)?;
    scan_tape_head(&bytes)
}

use crate::xml::general_ref_char;

fn scan_tape_head(bytes: &[u8]) -> Result<TapeAdmin, TapeError> {
    let text = std::str::from_utf8(bytes)
        .map_err(|e| TapeError::CorruptTape(format!("invalid UTF-8: {e}")))?;
    let mut reader = Reader::from_reader(text.as_bytes());
    let mut depth = 0usize;
    let mut field: Option<String> = None;
    let mut identifier = None;
    let mut created = None;
    loop {
        match reader.read_event().map_err(XmlError::from)? {
            Event::Start(e) => {
                depth += 1;
                let name = e.name().into_inner().to_string();
                if depth == 3 {
                    field = Some(name);
                }
            }
            Event::End(e) => {
                if depth == 3 {
                    field = None;
                }
                if depth == 2 && e.name().into_inner() == "tape-admin" {
                    break;
                }
                depth = depth.saturating_sub(1);
            }
            Event::Text(t) => {
                if depth == 3 {
                    let piece = t
                        .xml_content(quick_xml::XmlVersion::Implicit1_0)
                        .into_owned();
                    match field.as_deref() {
                        Some("identifier") => {
                            identifier.get_or_insert_with(String::new).push_str(&piece)
                        }
                        Some("created") => created.get_or_insert_with(String::new).push_str(&piece),
                        _ => {}
                    }
                }
            }
            Event::GeneralRef(r) => {
                if depth == 3 {
                    if let Some(ch) = general_ref_char(&r) {
                        match field.as_deref() {
                            Some("identifier") => {
                                identifier.get_or_insert_with(String::new).push(ch)
                            }
                            Some("created") => created.get_or_insert_with(String::new).push(ch),
                            _ => {}
                        }
                    }
                }
            }
            Event::Eof => break,
            _ => {}
        }
    }
    let identifier =
        identifier.ok_or_else(|| TapeError::CorruptTape("missing tape identifier".into()))?;
    let created: UtcTimestamp = created
        .ok_or_else(|| TapeError::CorruptTape("missing tape creation date".into()))?
        .trim()
        .parse()
        .map_err(|_| TapeError::CorruptTape("bad tape creation date".into()))?;
    Ok(TapeAdmin {
        identifier,
        created,
    })
}

fn scan_tape(bytes: &[u8]) -> Result<(TapeAdmin, Vec<TapeEntry>), TapeError> {
    let admin = scan_tape_head(bytes)?;
    let text = std::str::from_utf8(bytes)
        .map_err(|e| TapeError::CorruptTape(format!("invalid UTF-8: {e}")))?;
    let mut reader = Reader::from_reader(text.as_bytes());
    let mut prev: u64 = 0;

    let mut entries = Vec::new();
    let mut depth = 0usize;
    let mut in_admin = false;
    let mut admin_field: Option<String> = None;
    let mut rec_id: Option<String> = None;
    let mut rec_date: Option<String> = None;
    let mut didl_start: Option<u64> = None;
    let mut didl_end: Option<u64> = None;

    loop {
        let event = reader.read_event().map_err(XmlError::from)?;
        let pos = reader.buffer_position();
        match event {
            Event::Start(e) => {
                depth += 1;
                let name = e.name().into_inner().to_string();
                match depth {
                    2 => {
                        if name == "tape-record" {
                            rec_id = None;
                            rec_date = None;
                            didl_start = None;
                            didl_end = None;
                        }
                    }
                    3 => {
                        if name == "tape-record-admin" {
                            in_admin = true;
                        } else if didl_start.is_none() && !in_admin {
                            didl_start = Some(prev);
                        }
                    }
                    4 if in_admin => admin_field = Some(name),
                    _ => {}
                }
            }
            Event::Empty(_) => {
                if depth == 2 && !in_admin && didl_start.is_none() {
                    didl_start = Some(prev);
                    didl_end = Some(pos);
                }
            }
            Event::End(e) => {
                let name = e.name().into_inner().to_string();
                match depth {
                    3 => {
                        if in_admin && name == "tape-record-admin" {
                            in_admin = false;
                        } else if didl_start.is_some() && didl_end.is_none() {
                            didl_end = Some(pos);
                        }
                    }
                    4 if in_admin => admin_field = None,
                    2 => {
                        if name == "tape-record" {
                            let package_id = rec_id.take().ok_or_else(|| {
                                TapeError::CorruptTape("record without identifier".into())
                            })?;
                            let datestamp: UtcTimestamp = rec_date
                                .take()
                                .ok_or_else(|| {
                                    TapeError::CorruptTape("record without datestamp".into())
                                })?
                                .trim()
                                .parse()
                                .map_err(|_| {
                                    TapeError::CorruptTape("record with bad datestamp".into())
                                })?;
                            let (start, end) = match (didl_start.take(), didl_end.take()) {
                                (Some(s), Some(e)) if e > s => (s, e),
                                _ => {
                                    return Err(TapeError::CorruptTape(format!(
                                        "record `{package_id}` without embedded document"
                                    )))
                                }
                            };
                            entries.push(TapeEntry {
                                package_id,
                                offset: start,
                                length: end - start,
                                datestamp,
                            });
                        }
                    }
                    _ => {}
                }
                depth = depth.saturating_sub(1);
            }
            Event::Text(t) => {
                if in_admin && depth == 4 {
                    let piece = t
                        .xml_content(quick_xml::XmlVersion::Implicit1_0)
                        .into_owned();
                    match admin_field.as_deref() {
                        Some("identifier") => {
                            rec_id.get_or_insert_with(String::new).push_str(&piece)
                        }
                        Some("datestamp") => {
                            rec_date.get_or_insert_with(String::new).push_str(&piece)
                        }
                        _ => {}
                    }
                }
            }
            Event::GeneralRef(r) => {
                if in_admin && depth == 4 {
                    if let Some(ch) = general_ref_char(&r) {
                        match admin_field.as_deref() {
                            Some("identifier") => {
                                rec_id.get_or_insert_with(String::new).push(ch)
                            }
                            Some("datestamp") => {
                                rec_date.get_or_insert_with(String::new).push(ch)
                            }
                            _ => {}
                        }
                    }
                }
            }
            Event::Eof => break,
            _ => {}
        }
        prev = pos;
    }
    Ok((admin, entries))
}

// ---------------------------------------------------------------------------
// Reading
// ---------------------------------------------------------------------------

/// Read-only view over a sealed tape plus its record index.
pub struct TapeStore {
    path: PathBuf,
    admin: TapeAdmin,
    entries: Vec<TapeEntry>,
    by_id: HashMap<String, usize>,
}

impl TapeStore {
    /// Opens a tape with its sidecar index; rebuilds the index by scanning
    /// when the sidecar is absent.
    pub fn open(tape_path: &Path, index_path: &Path) -> Result<Self, TapeError> {
        let admin = read_admin(tape_path)?;
        let entries = if index_path.exists() {
            load_index(index_path)?
        } else {
            let entries = rebuild_index(tape_path)?;
            save_index(&entries, index_path)?;
            entries
        };
        let by_id = entries
            .iter()
            .enumerate()
            .map(|(i, e)| (e.package_id.clone(), i))
            .collect();
        Ok(TapeStore {
            path: tape_path.to_path_buf(),
            admin,
            entries,
            by_id,
        })
    }

    pub fn admin(&self) -> &TapeAdmin {
        &self.admin
    }

    pub fn entries(&self) -> &[TapeEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Entries in harvesting order: datestamp, then tape position.
    pub fn entries_by_datestamp(&self) -> Vec<&TapeEntry> {
        let mut v: Vec<&TapeEntry> = self.entries.iter().collect();
        v.sort_by_key(|e| (e.datestamp, e.offset));
        v
    }

    /// Entries with datestamps in the inclusive window, datestamp order.
    pub fn list_range(
        &self,
        from: Option<UtcTimestamp>,
        until: Option<UtcTimestamp>,
    ) -> Result<Vec<&TapeEntry>, TapeError> {
        if let (Some(f), Some(u)) = (from, until) {
            if f > u {
                return Err(TapeError::BadRange { from: f, until: u });
            }
        }
        Ok(self
            .entries_by_datestamp()
            .into_iter()
            .filter(|e| from.is_none_or(|f| e.datestamp >= f))
            .filter(|e| until.is_none_or(|u| e.datestamp <= u))
            .collect())
    }

    pub fn contains(&self, package_id: &str) -> bool {
        self.by_id.contains_key(package_id)
    }

    /// Returns one package's stored bytes, verbatim.
    pub fn get(&self, package_id: &str) -> Result<TapeRecord, TapeError> {
        let idx = *self
            .by_id
            .get(package_id)
            .ok_or_else(|| TapeError::UnknownPackageId(package_id.to_string()))?;
        let entry = &self.entries[idx];
        let mut file = File::open(&self.path)?;
        file.seek(SeekFrom::Start(entry.offset))?;
        let mut didl = vec![0u8; entry.length as usize];
        file.read_exact(&mut didl)
            .map_err(|_| TapeError::CorruptTape(format!("truncated record `{package_id}`")))?;
        if didl.first() != Some(&b'<') {
            return Err(TapeError::CorruptTape(format!(
                "index span for `{package_id}` does not address a document"
            )));
        }
        Ok(TapeRecord {
            package_id: entry.package_id.clone(),
            datestamp: entry.datestamp,
            didl,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::didl::{parse_package, serialize_package};
    use crate::didl::{Component, Container, Descriptor, Item, Package, Resource};

    fn ts(s: &str) -> UtcTimestamp {
        s.parse().unwrap()
    }

    fn package_with(id: &str, created: UtcTimestamp, n: usize) -> Package {
        Package {
            package_id: id.to_string(),
            created,
            container: Container {
                xml_id: Some(format!("uuid-c{n}")),
                descriptors: vec![Descriptor::placeholder("info:x/pro/DIDL")],
                items: vec![Item {
                    xml_id: Some(format!("uuid-i{n}")),
                    descriptors: vec![Descriptor::content_identifier(&format!(
                        "info:doi/10.123/{n}"
                    ))],
                    items: vec![],
                    components: vec![Component {
                        xml_id: Some(format!("uuid-k{n}")),
                        descriptors: vec![],
                        resources: vec![Resource::base64(
                            "application/pdf",
                            format!("pdf body {n} & more").as_bytes(),
                        )],
                    }],
                }],
            },
        }
    }

    fn sample_package(n: usize) -> Package {
        package_with(
            &format!("info:x/i/pkg-{n}"),
            ts("2004-06-22T18:07:18Z").plus_seconds(n as i64),
            n,
        )
    }

    fn write_tape(dir: &Path, n: usize) -> (PathBuf, PathBuf, Vec<TapeEntry>) {
        let tape = dir.join("t.xml");
        let idx = dir.join("t.idx");
        let mut w = TapeWriter::create(&tape, "tape-1", ts("2004-06-22T18:00:00Z")).unwrap();
        let mut entries = Vec::new();
        for i in 0..n {
            let pkg = sample_package(i);
            entries.push(w.append(&serialize_package(&pkg)).unwrap());
        }
        w.seal(&idx).unwrap();
        (tape, idx, entries)
    }

    #[test]
    fn tape_is_well_formed_and_spans_are_exact() {
        let dir = tempfile::tempdir().unwrap();
        let (tape, _idx, entries) = write_tape(dir.path(), 5);
        let bytes = fs::read(&tape).unwrap();
        xml::check_well_formed(&bytes).unwrap();
        for (i, e) in entries.iter().enumerate() {
            let slice = &bytes[e.offset as usize..(e.offset + e.length) as usize];
            let pkg = parse_package(slice).unwrap();
            assert_eq!(pkg.package_id, format!("info:x/i/pkg-{i}"));
        }
    }

    #[test]
    fn rebuild_matches_writer_index() {
        let dir = tempfile::tempdir().unwrap();
        let (tape, idx, entries) = write_tape(dir.path(), 8);
        assert_eq!(load_index(&idx).unwrap(), entries);
        assert_eq!(rebuild_index(&tape).unwrap(), entries);
    }

    #[test]
    fn store_returns_stored_bytes_verbatim() {
        let dir = tempfile::tempdir().unwrap();
        let (tape, idx, _) = write_tape(dir.path(), 3);
        let store = TapeStore::open(&tape, &idx).unwrap();
        assert_eq!(store.admin().identifier, "tape-1");
        let rec = store.get("info:x/i/pkg-1").unwrap();
        let expected = serialize_package(&sample_package(1));
        assert_eq!(rec.didl, strip_xml_decl(&expected));
        assert!(matches!(
            store.get("info:x/i/none"),
            Err(TapeError::UnknownPackageId(_))
        ));
    }

    #[test]
    fn duplicate_package_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let tape = dir.path().join("t.xml");
        let mut w = TapeWriter::create(&tape, "t", ts("2004-06-22T18:00:00Z")).unwrap();
        let didl = serialize_package(&sample_package(0));
        w.append(&didl).unwrap();
        assert!(matches!(
            w.append(&didl),
            Err(TapeError::DuplicatePackageId(_))
        ));
    }

    #[test]
    fn malformed_append_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let tape = dir.path().join("t.xml");
        let mut w = TapeWriter::create(&tape, "t", ts("2004-06-22T18:00:00Z")).unwrap();
        assert!(matches!(
            w.append(b"<didl:DIDL>"),
            Err(TapeError::BadPackage(_))
        ));
    }

    #[test]
    fn record_datestamp_is_package_creation_time() {
        let dir = tempfile::tempdir().unwrap();
        let tape = dir.path().join("t.xml");
        let mut w = TapeWriter::create(&tape, "t", ts("2004-06-22T18:00:00Z")).unwrap();
        let pkg = package_with("info:x/i/a", ts("2003-02-01T09:30:00Z"), 0);
        let entry = w.append(&serialize_package(&pkg)).unwrap();
        assert_eq!(entry.package_id, "info:x/i/a");
        assert_eq!(entry.datestamp, ts("2003-02-01T09:30:00Z"));
    }

    #[test]
    fn datestamp_order_is_stable() {
        let dir = tempfile::tempdir().unwrap();
        let tape = dir.path().join("t.xml");
        let idx = dir.path().join("t.idx");
        let mut w = TapeWriter::create(&tape, "t", ts("2004-06-22T18:00:00Z")).unwrap();
        w.append(&serialize_package(&package_with(
            "info:x/i/pkg-0",
            ts("2004-06-22T18:07:20Z"),
            0,
        )))
        .unwrap();
        w.append(&serialize_package(&package_with(
            "info:x/i/pkg-1",
            ts("2004-06-22T18:07:18Z"),
            1,
        )))
        .unwrap();
        w.append(&serialize_package(&package_with(
            "info:x/i/pkg-2",
            ts("2004-06-22T18:07:18Z"),
            2,
        )))
        .unwrap();
        w.seal(&idx).unwrap();
        let store = TapeStore::open(&tape, &idx).unwrap();
        let order: Vec<&str> = store
            .entries_by_datestamp()
            .iter()
            .map(|e| e.package_id.as_str())
            .collect();
        assert_eq!(order, vec!["info:x/i/pkg-1", "info:x/i/pkg-2", "info:x/i/pkg-0"]);
        let windowed = store
            .list_range(Some(ts("2004-06-22T18:07:18Z")), Some(ts("2004-06-22T18:07:18Z")))
            .unwrap();
        assert_eq!(windowed.len(), 2);
        assert!(matches!(
            store.list_range(Some(ts("2004-06-22T18:07:20Z")), Some(ts("2004-06-22T18:07:18Z"))),
            Err(TapeError::BadRange { .. })
        ));
    }

    #[test]
    fn admin_text_with_entities_survives_scan() {
        let dir = tempfile::tempdir().unwrap();
        let tape = dir.path().join("t.xml");
        let mut w = TapeWriter::create(&tape, "tape & co", ts("2004-06-22T18:00:00Z")).unwrap();
        let didl = serialize_package(&package_with("info:x/i/a&b", ts("2004-06-22T18:07:18Z"), 0));
        w.append(&didl).unwrap();
        w.seal(&dir.path().join("t.idx")).unwrap();
        let admin = read_admin(&tape).unwrap();
        assert_eq!(admin.identifier, "tape & co");
        let entries = rebuild_index(&tape).unwrap();
        assert_eq!(entries[0].package_id, "info:x/i/a&b");
    }
}
