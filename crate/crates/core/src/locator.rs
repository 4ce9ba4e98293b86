//! Identifier locator: knows, for every package identifier, which
//! repository serves it, and, for every content identifier, which package
//! constituents carry that content across versions.
//!
//! The tables are populated two ways: batch loads of tab-delimited rows, and
//! incremental harvests that walk the repository registry and pull newly
//! ingested packages from each repository. Resolution never touches the
//! repositories; it only answers where to fetch.

use std::collections::HashMap;
use std::fs;
use std::path::Path;
use std::sync::{Arc, RwLock};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::didl::parse_package;
use crate::ids::PackageIdentifier;
use crate::oaipmh::{
    harvest_list_records, HarvestError, ListParams, OaiTransport,
};
use crate::repo_index::{RepoEntry, INDEX_PREFIX};
use crate::time::UtcTimestamp;

#[derive(Debug, Error)]
pub enum LocatorError {
    #[error("locator I/O failure: {0}")]
    IoFailure(#[from] std::io::Error),
    #[error("package `{package_id}` is already located at `{existing}`, refusing `{conflicting}`")]
    ConflictingPackageRow {
        package_id: String,
        existing: String,
        conflicting: String,
    },
    #[error("content `{content_id}` in package `{package_id}` already points at `{existing}`, refusing `{conflicting}`")]
    ConflictingContentRow {
        content_id: String,
        package_id: String,
        existing: String,
        conflicting: String,
    },
    #[error("batch line {0}: {1}")]
    BadBatchLine(usize, String),
    #[error("locator state file is unreadable: {0}")]
    CorruptState(String),
}

/// One way to fetch an identified thing: ask `base_url` for `package_id`,
/// then (optionally) narrow to the constituent `fragment`. `base_url` is
/// absent when a version is known only from a content row and its package
/// location was never registered.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ResolutionPlan {
    pub package_id: String,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub fragment: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub base_url: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub datestamp: Option<UtcTimestamp>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
struct PackageRow {
    base_url: String,
    datestamp: Option<UtcTimestamp>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
struct ContentRow {
    package_id: String,
    xml_id: String,
    seq: u64,
}

#[derive(Debug, Default, Serialize, Deserialize)]
pub struct Locator {
    packages: HashMap<String, PackageRow>,
    contents: HashMap<String, Vec<ContentRow>>,
    /// Per-repository high-water mark of harvested datestamps.
    cursors: HashMap<String, UtcTimestamp>,
    seq: u64,
}

impl Locator {
    pub fn new() -> Self {
        Locator::default()
    }

    pub fn package_count(&self) -> usize {
        self.packages.len()
    }

    pub fn content_count(&self) -> usize {
        self.contents.values().map(Vec::len).sum()
    }

    /// Registers where a package lives. Re-registration with the same base
    /// URL is a no-op (the datestamp is kept fresh); a different base URL is
    /// a conflict.
    pub fn register_package(
        &mut self,
        package_id: &str,
        base_url: &str,
        datestamp: Option<UtcTimestamp>,
    ) -> Result<bool, LocatorError> {
        match self.packages.get_mut(package_id) {
            Some(row) if row.base_url == base_url => {
                if row.datestamp.is_none() {
                    row.datestamp = datestamp;
                }
                Ok(false)
            }
            Some(row) => Err(LocatorError::ConflictingPackageRow {
                package_id: package_id.to_string(),
                existing: row.base_url.clone(),
                conflicting: base_url.to_string(),
            }),
            None => {
                self.packages.insert(
                    package_id.to_string(),
                    PackageRow {
                        base_url: base_url.to_string(),
                        datestamp,
                    },
                );
                Ok(true)
            }
        }
    }

    /// Registers that a constituent of `package_id` carries `content_id`.
    /// The pair (content, package) is unique; a repeat with a different
    /// constituent is a conflict.
    pub fn register_content(
        &mut self,
        content_id: &str,
        package_id: &str,
        xml_id: &str,
    ) -> Result<bool, LocatorError> {
        let rows = self.contents.entry(content_id.to_string()).or_default();
        if let Some(existing) = rows.iter().find(|r| r.package_id == package_id) {
            if existing.xml_id == xml_id {
                return Ok(false);
            }
            return Err(LocatorError::ConflictingContentRow {
                content_id: content_id.to_string(),
                package_id: package_id.to_string(),
                existing: existing.xml_id.clone(),
                conflicting: xml_id.to_string(),
            });
        }
        self.seq += 1;
        rows.push(ContentRow {
            package_id: package_id.to_string(),
            xml_id: xml_id.to_string(),
            seq: self.seq,
        });
        Ok(true)
    }

    /// Resolves any identifier to fetch plans.
    ///
    /// A package identifier (optionally `#fragment`) yields exactly one
    /// plan. A content identifier yields one plan per package version,
    /// newest first; versions without a known datestamp fall back to
    /// registration order, latest first.
    pub fn resolve(&self, raw: &str) -> Vec<ResolutionPlan> {
        let pid = PackageIdentifier::parse(raw);
        if let Some(row) = self.packages.get(&pid.base) {
            return vec![ResolutionPlan {
                package_id: pid.base,
                fragment: pid.fragment,
                base_url: Some(row.base_url.clone()),
                datestamp: row.datestamp,
            }];
        }
        let Some(rows) = self.contents.get(raw) else {
            return Vec::new();
        };
        let mut plans: Vec<(Option<UtcTimestamp>, u64, ResolutionPlan)> = rows
            .iter()
            .map(|row| {
                let pkg = self.packages.get(&row.package_id);
                (
                    pkg.and_then(|p| p.datestamp),
                    row.seq,
                    ResolutionPlan {
                        package_id: row.package_id.clone(),
                        fragment: Some(row.xml_id.clone()),
                        base_url: pkg.map(|p| p.base_url.clone()),
                        datestamp: pkg.and_then(|p| p.datestamp),
                    },
                )
            })
            .collect();
        plans.sort_by(|a, b| b.0.cmp(&a.0).then_with(|| b.1.cmp(&a.1)));
        plans.into_iter().map(|(_, _, p)| p).collect()
    }

    // -----------------------------------------------------------------
    // Batch loading
    // -----------------------------------------------------------------

    /// Loads tab-delimited rows: two columns register a package location
    /// (`package_id<TAB>base_url`), three columns register a content pointer
    /// (`content_id<TAB>package_id<TAB>constituent_id`). Blank lines and
    /// `#` comments are skipped.
    pub fn load_batch(&mut self, text: &str) -> Result<BatchStats, LocatorError> {
        let mut stats = BatchStats::default();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim_end_matches('\r');
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let fields: Vec<&str> = line.split('\t').collect();
            match fields.as_slice() {
                [package_id, base_url] => {
                    if self.register_package(package_id, base_url, None)? {
                        stats.packages_added += 1;
                    }
                }
                [content_id, package_id, xml_id] => {
                    if self.register_content(content_id, package_id, xml_id)? {
                        stats.content_rows_added += 1;
                    }
                }
                other => {
                    return Err(LocatorError::BadBatchLine(
                        lineno + 1,
                        format!("expected 2 or 3 tab-delimited fields, found {}", other.len()),
                    ))
                }
            }
        }
        Ok(stats)
    }

    // -----------------------------------------------------------------
    // State file
    // -----------------------------------------------------------------

    pub fn save(&self, path: &Path) -> Result<(), LocatorError> {
        let json = serde_json::to_vec_pretty(self).expect("locator state serializes");
        fs::write(path, json)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, LocatorError> {
        let bytes = fs::read(path)?;
        serde_json::from_slice(&bytes).map_err(|e| LocatorError::CorruptState(e.to_string()))
    }

    // -----------------------------------------------------------------
    // Harvest-driven population
    // -----------------------------------------------------------------

    /// Walks the repository registry at `index_base_url` and incrementally
    /// harvests every repository found there, registering package locations
    /// and content pointers. Each repository keeps a datestamp cursor; the
    /// next run asks only for records after it. A repository that fails is
    /// reported and skipped, its cursor untouched.
    pub fn populate(
        &mut self,
        transport: &dyn OaiTransport,
        index_base_url: &str,
    ) -> Result<PopulateStats, HarvestError> {
        let mut repos: Vec<RepoEntry> = Vec::new();
        harvest_list_records(
            transport,
            index_base_url,
            &ListParams {
                prefix: INDEX_PREFIX,
                ..Default::default()
            },
            |record| {
                if let Some(entry) = RepoEntry::from_metadata(&record.metadata) {
                    repos.push(entry);
                }
            },
        )?;

        let mut stats = PopulateStats::default();
        for repo in repos {
            stats.repos_visited += 1;
            match self.harvest_one(transport, &repo.base_url) {
                Ok((seen, added, content, cursor)) => {
                    stats.records_seen += seen;
                    stats.packages_added += added;
                    stats.content_rows_added += content;
                    if let Some(cursor) = cursor {
                        self.cursors.insert(repo.base_url.clone(), cursor);
                    }
                }
                Err(e) => {
                    stats.repos_failed.push((repo.base_url.clone(), e.to_string()));
                }
            }
        }
        Ok(stats)
    }

    fn harvest_one(
        &mut self,
        transport: &dyn OaiTransport,
        base_url: &str,
    ) -> Result<(u64, u64, u64, Option<UtcTimestamp>), HarvestError> {
        let from = self
            .cursors
            .get(base_url)
            .map(|c| c.plus_seconds(1).to_string());
        let mut staged: Vec<(String, UtcTimestamp, Vec<(String, String)>)> = Vec::new();
        let mut bad_records: Vec<String> = Vec::new();
        let seen = harvest_list_records(
            transport,
            base_url,
            &ListParams {
                prefix: crate::oaipmh::DIDL_PREFIX,
                from: from.as_deref(),
                ..Default::default()
            },
            |record| match parse_package(&record.metadata) {
                Ok(pkg) => {
                    staged.push((
                        pkg.package_id.clone(),
                        record.datestamp,
                        pkg.extract_identifiers()
                            .into_iter()
                            .map(|(cid, xml_id)| (cid.0, xml_id))
                            .collect(),
                    ));
                }
                Err(e) => bad_records.push(format!("{}: {e}", record.identifier)),
            },
        )?;
        if let Some(first) = bad_records.first() {
            return Err(HarvestError::Malformed {
                base_url: base_url.to_string(),
                message: format!(
                    "{} record(s) failed to parse, first: {first}",
                    bad_records.len()
                ),
            });
        }
        let mut added = 0u64;
        let mut content_added = 0u64;
        let mut cursor: Option<UtcTimestamp> = None;
        for (package_id, datestamp, contents) in staged {
            cursor = Some(cursor.map_or(datestamp, |c: UtcTimestamp| c.max(datestamp)));
            match self.register_package(&package_id, base_url, Some(datestamp)) {
                Ok(true) => added += 1,
                Ok(false) => {}
                Err(e) => {
                    return Err(HarvestError::Malformed {
                        base_url: base_url.to_string(),
                        message: e.to_string(),
                    })
                }
            }
            for (content_id, xml_id) in contents {
                match self.register_content(&content_id, &package_id, &xml_id) {
                    Ok(true) => content_added += 1,
                    Ok(false) => {}
                    Err(e) => {
                        return Err(HarvestError::Malformed {
                            base_url: base_url.to_string(),
                            message: e.to_string(),
                        })
                    }
                }
            }
        }
        let _ = seen;
        Ok((seen, added, content_added, cursor))
    }
}

#[derive(Debug, Default, Clone, PartialEq, Eq)]
pub struct BatchStats {
    pub packages_added: u64,
    pub content_rows_added: u64,
}

#[derive(Debug, Default, Clone)]
pub struct PopulateStats {
    pub repos_visited: u64,
    pub repos_failed: Vec<(String, String)>,
    pub records_seen: u64,
    pub packages_added: u64,
    pub content_rows_added: u64,
}

// ---------------------------------------------------------------------------
// Lookup clients
// ---------------------------------------------------------------------------

#[derive(Debug, Error)]
#[error("locator unreachable: {0}")]
pub struct LookupFailure(pub String);

/// How resolvers ask the locator; in-process for embedded deployments, HTTP
/// for a locator running elsewhere.
pub trait LocatorClient: Send + Sync {
    fn lookup(&self, id: &str) -> Result<Vec<ResolutionPlan>, LookupFailure>;
}

pub type SharedLocator = Arc<RwLock<Locator>>;

pub struct InProcessLocator(pub SharedLocator);

impl LocatorClient for InProcessLocator {
    fn lookup(&self, id: &str) -> Result<Vec<ResolutionPlan>, LookupFailure> {
        Ok(self.0.read().expect("locator lock").resolve(id))
    }
}

/// Client for the locator's HTTP lookup endpoint
/// (`GET {base}/lookup?id=…` returning a JSON array of plans).
pub struct HttpLocator {
    agent: ureq::Agent,
    base_url: String,
}

impl HttpLocator {
    pub fn new(base_url: impl Into<String>) -> Self {
        HttpLocator {
            agent: ureq::Agent::config_builder()
                .http_status_as_error(false)
                .build()
                .into(),
            base_url: base_url.into(),
        }
    }
}

impl LocatorClient for HttpLocator {
    fn lookup(&self, id: &str) -> Result<Vec<ResolutionPlan>, LookupFailure> {
        let url = format!("{}/lookup", self.base_url.trim_end_matches('/'));
        let mut response = self
            .agent
            .get(&url)
            .query_pairs([("id", id)])
            .call()
            .map_err(|e| LookupFailure(e.to_string()))?;
        let status = response.status();
        let body = response
            .body_mut()
            .read_to_vec()
            .map_err(|e| LookupFailure(e.to_string()))?;
        if status.as_u16() == 404 {
            return Ok(Vec::new());
        }
        if !status.is_success() {
            return Err(LookupFailure(format!("HTTP status {status}")));
        }
        serde_json::from_slice(&body).map_err(|e| LookupFailure(e.to_string()))
    }
}
