//! Registry of the autonomous repositories that make up the collection.
//!
//! Every sealed tape served at a base URL gets registered here once. The
//! registry persists as an append-only JSON-lines journal and is itself
//! served over the harvesting protocol in a small registry format, which is
//! how the federator and the locator discover where to harvest.

use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::{Arc, RwLock};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::oaipmh::{
    IdentifyInfo, ListChunk, ListQuery, MetadataFormat, OaiRecord, RecordHeader, RecordSource,
    SetInfo, SourceError,
};
use crate::time::UtcTimestamp;
use crate::xml::escape_text;

pub const INDEX_PREFIX: &str = "INDEX";
pub const INDEX_NS: &str = "urn:x-local:repo-index";

pub fn index_format() -> MetadataFormat {
    MetadataFormat {
        prefix: INDEX_PREFIX.to_string(),
        namespace: INDEX_NS.to_string(),
        schema: "urn:x-local:repo-index-schema".to_string(),
    }
}

#[derive(Debug, Error)]
pub enum IndexError {
    #[error("registry I/O failure: {0}")]
    IoFailure(#[from] std::io::Error),
    #[error("registry journal line {0} is unreadable: {1}")]
    CorruptJournal(usize, String),
    #[error("base URL `{0}` is already registered")]
    DuplicateBaseUrl(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RepoEntry {
    pub base_url: String,
    pub description: String,
    pub created: UtcTimestamp,
}

impl RepoEntry {
    /// The registry record served for this repository.
    pub fn metadata_xml(&self) -> Vec<u8> {
        format!(
            "<repository xmlns=\"{INDEX_NS}\"><baseURL>{}</baseURL><created>{}</created><description>{}</description></repository>",
            escape_text(&self.base_url),
            self.created,
            escape_text(&self.description)
        )
        .into_bytes()
    }

    /// Parses a served registry record back into an entry.
    pub fn from_metadata(bytes: &[u8]) -> Option<RepoEntry> {
        let tree = crate::xml::parse(bytes).ok()?;
        let text = |name: &str| {
            tree.child_elements()
                .find(|e| e.local_name() == name)
                .map(crate::xml::XmlElement::text_content)
        };
        Some(RepoEntry {
            base_url: text("baseURL")?,
            description: text("description").unwrap_or_default(),
            created: text("created")?.parse().ok()?,
        })
    }
}

/// The registry itself: in-memory list plus an optional journal file.
pub struct RepositoryIndex {
    journal: Option<PathBuf>,
    entries: Vec<RepoEntry>,
}

impl RepositoryIndex {
    pub fn in_memory() -> Self {
        RepositoryIndex {
            journal: None,
            entries: Vec::new(),
        }
    }

    /// Opens (or starts) a journal-backed registry.
    pub fn open(path: &Path) -> Result<Self, IndexError> {
        let mut entries = Vec::new();
        if path.exists() {
            for (lineno, line) in fs::read_to_string(path)?.lines().enumerate() {
                if line.trim().is_empty() {
                    continue;
                }
                let entry: RepoEntry = serde_json::from_str(line)
                    .map_err(|e| IndexError::CorruptJournal(lineno + 1, e.to_string()))?;
                entries.push(entry);
            }
        }
        Ok(RepositoryIndex {
            journal: Some(path.to_path_buf()),
            entries,
        })
    }

    pub fn register(&mut self, entry: RepoEntry) -> Result<(), IndexError> {
        if self.entries.iter().any(|e| e.base_url == entry.base_url) {
            return Err(IndexError::DuplicateBaseUrl(entry.base_url));
        }
        if let Some(path) = &self.journal {
            let mut file = OpenOptions::new().create(true).append(true).open(path)?;
            let mut line = serde_json::to_string(&entry).expect("entry serializes");
            line.push('\n');
            file.write_all(line.as_bytes())?;
        }
        self.entries.push(entry);
        Ok(())
    }

    pub fn entries(&self) -> &[RepoEntry] {
        &self.entries
    }

    pub fn find(&self, base_url: &str) -> Option<&RepoEntry> {
        self.entries.iter().find(|e| e.base_url == base_url)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

pub type SharedIndex = Arc<RwLock<RepositoryIndex>>;

/// Serves the registry over the harvesting protocol. Each repository is one
/// record: identifier and datestamp come from registration, the payload is
/// the registry format.
pub struct IndexSource {
    index: SharedIndex,
    base_url: String,
}

impl IndexSource {
    pub fn new(index: SharedIndex, base_url: impl Into<String>) -> Self {
        IndexSource {
            index,
            base_url: base_url.into(),
        }
    }
}

impl RecordSource for IndexSource {
    fn identify(&self) -> IdentifyInfo {
        let index = self.index.read().expect("registry lock");
        IdentifyInfo {
            repository_name: "repository registry".to_string(),
            base_url: self.base_url.clone(),
            earliest_datestamp: index.entries().iter().map(|e| e.created).min(),
            admin_email: "repo-admin@localhost".to_string(),
        }
    }

    fn formats(&self, identifier: Option<&str>) -> Result<Vec<MetadataFormat>, SourceError> {
        if let Some(id) = identifier {
            let index = self.index.read().expect("registry lock");
            if index.find(id).is_none() {
                return Err(SourceError::IdDoesNotExist);
            }
        }
        Ok(vec![index_format()])
    }

    fn sets(&self) -> Option<Vec<SetInfo>> {
        None
    }

    fn get(&self, identifier: &str, prefix: &str) -> Result<OaiRecord, SourceError> {
        let index = self.index.read().expect("registry lock");
        let entry = index.find(identifier).ok_or(SourceError::IdDoesNotExist)?;
        if prefix != INDEX_PREFIX {
            return Err(SourceError::CannotDisseminateFormat);
        }
        Ok(entry_record(entry))
    }

    fn list(&self, query: &ListQuery) -> Result<ListChunk, SourceError> {
        if query.prefix != INDEX_PREFIX {
            return Err(SourceError::CannotDisseminateFormat);
        }
        let index = self.index.read().expect("registry lock");
        let mut matching: Vec<&RepoEntry> = index
            .entries()
            .iter()
            .filter(|e| crate::oaipmh::within(e.created, query.from, query.until))
            .collect();
        matching.sort_by(|a, b| {
            a.created
                .cmp(&b.created)
                .then_with(|| a.base_url.cmp(&b.base_url))
        });
        let total = matching.len() as u64;
        let page: Vec<OaiRecord> = matching
            .into_iter()
            .skip(query.offset as usize)
            .take(query.limit as usize)
            .map(entry_record)
            .collect();
        let has_more = query.offset + (page.len() as u64) < total;
        Ok(ListChunk {
            records: page,
            complete_size: Some(total),
            has_more,
        })
    }
}

fn entry_record(entry: &RepoEntry) -> OaiRecord {
    OaiRecord {
        header: RecordHeader {
            identifier: entry.base_url.clone(),
            datestamp: entry.created,
            sets: vec![],
        },
        metadata: entry.metadata_xml(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ts(s: &str) -> UtcTimestamp {
        s.parse().unwrap()
    }

    #[test]
    fn journal_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("registry.jsonl");
        {
            let mut index = RepositoryIndex::open(&path).unwrap();
            index
                .register(RepoEntry {
                    base_url: "http://localhost:7001/repo/t1".into(),
                    description: "tape one".into(),
                    created: ts("2004-06-22T18:00:00Z"),
                })
                .unwrap();
            index
                .register(RepoEntry {
                    base_url: "http://localhost:7001/repo/t2".into(),
                    description: "tape two".into(),
                    created: ts("2004-06-23T09:00:00Z"),
                })
                .unwrap();
        }
        let again = RepositoryIndex::open(&path).unwrap();
        assert_eq!(again.len(), 2);
        assert_eq!(again.find("http://localhost:7001/repo/t2").unwrap().description, "tape two");
    }

    #[test]
    fn duplicate_registration_rejected() {
        let mut index = RepositoryIndex::in_memory();
        let entry = RepoEntry {
            base_url: "http://localhost:7001/repo/t1".into(),
            description: "tape one".into(),
            created: ts("2004-06-22T18:00:00Z"),
        };
        index.register(entry.clone()).unwrap();
        assert!(matches!(
            index.register(entry),
            Err(IndexError::DuplicateBaseUrl(_))
        ));
    }

    #[test]
    fn metadata_round_trip() {
        let entry = RepoEntry {
            base_url: "http://localhost:7001/repo/t&1".into(),
            description: "tape <one>".into(),
            created: ts("2004-06-22T18:00:00Z"),
        };
        let parsed = RepoEntry::from_metadata(&entry.metadata_xml()).unwrap();
        assert_eq!(parsed, entry);
    }
}
