//! Record sources backed by concrete storage.
//!
//! [`TapeRepository`] makes one sealed tape an autonomous repository: the
//! package identifier is the harvesting identifier, the ingestion datestamp
//! is the harvesting datestamp, and the only served format is the stored
//! package itself. [`MemorySource`] is a configurable in-memory source used
//! by tests and the synthetic-load harness.

use std::path::Path;

use crate::tape::{TapeError, TapeStore};
use crate::time::UtcTimestamp;

use super::{
    didl_format, IdentifyInfo, ListChunk, ListQuery, MetadataFormat, OaiRecord, RecordHeader,
    RecordSource, SetInfo, SourceError, DIDL_PREFIX,
};

pub struct TapeRepository {
    store: TapeStore,
    base_url: String,
    admin_email: String,
}

impl TapeRepository {
    pub fn new(store: TapeStore, base_url: impl Into<String>) -> Self {
        TapeRepository {
            store,
            base_url: base_url.into(),
            admin_email: "repo-admin@localhost".to_string(),
        }
    }

    pub fn open(
        tape_path: &Path,
        index_path: &Path,
        base_url: impl Into<String>,
    ) -> Result<Self, TapeError> {
        Ok(TapeRepository::new(
            TapeStore::open(tape_path, index_path)?,
            base_url,
        ))
    }

    pub fn store(&self) -> &TapeStore {
        &self.store
    }

    pub fn base_url(&self) -> &str {
        &self.base_url
    }
}

impl RecordSource for TapeRepository {
    fn identify(&self) -> IdentifyInfo {
        IdentifyInfo {
            repository_name: self.store.admin().identifier.clone(),
            base_url: self.base_url.clone(),
            earliest_datestamp: self
                .store
                .entries()
                .iter()
                .map(|e| e.datestamp)
                .min(),
            admin_email: self.admin_email.clone(),
        }
    }

    fn formats(&self, identifier: Option<&str>) -> Result<Vec<MetadataFormat>, SourceError> {
        if let Some(id) = identifier {
            if !self.store.contains(id) {
                return Err(SourceError::IdDoesNotExist);
            }
        }
        Ok(vec![didl_format()])
    }

    fn sets(&self) -> Option<Vec<SetInfo>> {
        None
    }

    fn get(&self, identifier: &str, prefix: &str) -> Result<OaiRecord, SourceError> {
        let record = self
            .store
            .get(identifier)
            .map_err(|_| SourceError::IdDoesNotExist)?;
        if prefix != DIDL_PREFIX {
            return Err(SourceError::CannotDisseminateFormat);
        }
        Ok(OaiRecord {
            header: RecordHeader {
                identifier: record.package_id,
                datestamp: record.datestamp,
                sets: vec![],
            },
            metadata: record.didl,
        })
    }

    fn list(&self, query: &ListQuery) -> Result<ListChunk, SourceError> {
        if query.prefix != DIDL_PREFIX {
            return Err(SourceError::CannotDisseminateFormat);
        }
        let matching: Vec<_> = self
            .store
            .entries_by_datestamp()
            .into_iter()
            .filter(|e| within(e.datestamp, query.from, query.until))
            .collect();
        let total = matching.len() as u64;
        let page: Vec<OaiRecord> = matching
            .into_iter()
            .skip(query.offset as usize)
            .take(query.limit as usize)
            .map(|entry| {
                let record = self
                    .store
                    .get(&entry.package_id)
                    .map_err(|e| SourceError::Upstream(e.to_string()))?;
                Ok(OaiRecord {
                    header: RecordHeader {
                        identifier: record.package_id,
                        datestamp: record.datestamp,
                        sets: vec![],
                    },
                    metadata: record.didl,
                })
            })
            .collect::<Result<_, SourceError>>()?;
        let has_more = query.offset + (page.len() as u64) < total;
        Ok(ListChunk {
            records: page,
            complete_size: Some(total),
            has_more,
        })
    }
}

pub(crate) fn within(
    ts: UtcTimestamp,
    from: Option<UtcTimestamp>,
    until: Option<UtcTimestamp>,
) -> bool {
    if let Some(f) = from {
        if ts < f {
            return false;
        }
    }
    if let Some(u) = until {
        if ts > u {
            return false;
        }
    }
    true
}

/// In-memory source with configurable records, formats and sets.
pub struct MemorySource {
    pub info: IdentifyInfo,
    pub record_formats: Vec<MetadataFormat>,
    pub set_infos: Option<Vec<SetInfo>>,
    pub records: Vec<OaiRecord>,
}

impl MemorySource {
    pub fn new(base_url: impl Into<String>) -> Self {
        MemorySource {
            info: IdentifyInfo {
                repository_name: "memory".to_string(),
                base_url: base_url.into(),
                earliest_datestamp: None,
                admin_email: "repo-admin@localhost".to_string(),
            },
            record_formats: vec![didl_format()],
            set_infos: None,
            records: Vec::new(),
        }
    }

    pub fn push(&mut self, record: OaiRecord) {
        self.records.push(record);
    }
}

impl RecordSource for MemorySource {
    fn identify(&self) -> IdentifyInfo {
        IdentifyInfo {
            earliest_datestamp: self.records.iter().map(|r| r.header.datestamp).min(),
            ..self.info.clone()
        }
    }

    fn formats(&self, identifier: Option<&str>) -> Result<Vec<MetadataFormat>, SourceError> {
        if let Some(id) = identifier {
            if !self.records.iter().any(|r| r.header.identifier == id) {
                return Err(SourceError::IdDoesNotExist);
            }
        }
        Ok(self.record_formats.clone())
    }

    fn sets(&self) -> Option<Vec<SetInfo>> {
        self.set_infos.clone()
    }

    fn get(&self, identifier: &str, prefix: &str) -> Result<OaiRecord, SourceError> {
        let record = self
            .records
            .iter()
            .find(|r| r.header.identifier == identifier)
            .ok_or(SourceError::IdDoesNotExist)?;
        if !self.record_formats.iter().any(|f| f.prefix == prefix) {
            return Err(SourceError::CannotDisseminateFormat);
        }
        Ok(record.clone())
    }

    fn list(&self, query: &ListQuery) -> Result<ListChunk, SourceError> {
        if !self.record_formats.iter().any(|f| f.prefix == query.prefix) {
            return Err(SourceError::CannotDisseminateFormat);
        }
        let mut matching: Vec<&OaiRecord> = self
            .records
            .iter()
            .filter(|r| within(r.header.datestamp, query.from, query.until))
            .filter(|r| match &query.set {
                Some(set) => r.header.sets.iter().any(|s| s == set),
                None => true,
            })
            .collect();
        matching.sort_by(|a, b| {
            a.header
                .datestamp
                .cmp(&b.header.datestamp)
                .then_with(|| a.header.identifier.cmp(&b.header.identifier))
        });
        let total = matching.len() as u64;
        let page: Vec<OaiRecord> = matching
            .into_iter()
            .skip(query.offset as usize)
            .take(query.limit as usize)
            .cloned()
            .collect();
        let has_more = query.offset + (page.len() as u64) < total;
        Ok(ListChunk {
            records: page,
            complete_size: Some(total),
            has_more,
        })
    }
}
