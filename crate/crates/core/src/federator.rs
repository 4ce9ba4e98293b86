//! Single harvesting front door over the whole environment.
//!
//! The federating endpoint is itself a [`RecordSource`]: it discovers
//! repositories by harvesting the registry, fans list requests out to each
//! of them, resolves GetRecord identifiers through the locator, and routes
//! transform prefixes through the dissemination engine. Stored packages
//! pass through byte for byte under the native prefix.
//!
//! Conventions the protocol leaves open are fixed here: each repository is
//! one `repo:` set named after its base URL; federated listings order by
//! repository registration, then within-repo datestamp; resumption tokens
//! are the dispatcher's ordinary offset tokens over that stable ordering.

use std::sync::Mutex;
use std::sync::Arc;
use std::time::{Duration, Instant};

use crate::dip::DipEngine;
use crate::locator::LocatorClient;
use crate::oaipmh::{
    didl_format, harvest_get_record, harvest_identify, harvest_list_records, HarvestError,
    HarvestedRecord, IdentifyInfo, ListChunk, ListParams, ListQuery, MetadataFormat, OaiRecord,
    OaiTransport, RecordHeader, RecordSource, SetInfo, SourceError, DIDL_PREFIX,
};
use crate::repo_index::{RepoEntry, INDEX_PREFIX};
use crate::time::UtcTimestamp;

pub const COMPLETED_PREFIX: &str = "DIDL:completed";
pub const OAI_DC_PREFIX: &str = "oai_dc";

/// `repo:<token>` set spec for one repository; the token is its base URL
/// with characters illegal in a setSpec mapped to `_`.
pub fn repo_set_spec(base_url: &str) -> String {
    let stripped = base_url
        .strip_prefix("http://")
        .or_else(|| base_url.strip_prefix("https://"))
        .unwrap_or(base_url);
    let token: String = stripped
        .chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || "-_.!~*'()".contains(c) {
                c
            } else {
                '_'
            }
        })
        .collect();
    format!("repo:{token}")
}

struct CachedRepos {
    fetched: Instant,
    entries: Vec<RepoEntry>,
}

pub struct Federator {
    base_url: String,
    index_base_url: String,
    transport: Arc<dyn OaiTransport>,
    locator: Arc<dyn LocatorClient>,
    engine: Arc<DipEngine>,
    cache_ttl: Duration,
    cache: Mutex<Option<CachedRepos>>,
}

impl Federator {
    pub fn new(
        base_url: impl Into<String>,
        index_base_url: impl Into<String>,
        transport: Arc<dyn OaiTransport>,
        locator: Arc<dyn LocatorClient>,
        engine: Arc<DipEngine>,
        cache_ttl: Duration,
    ) -> Self {
        Federator {
            base_url: base_url.into(),
            index_base_url: index_base_url.into(),
            transport,
            locator,
            engine,
            cache_ttl,
            cache: Mutex::new(None),
        }
    }

    /// Repositories from the registry, registration order, at most
    /// `cache_ttl` stale.
    fn repositories(&self) -> Result<Vec<RepoEntry>, SourceError> {
        let mut cache = self.cache.lock().expect("repo cache lock");
        if let Some(cached) = cache.as_ref() {
            if cached.fetched.elapsed() < self.cache_ttl {
                return Ok(cached.entries.clone());
            }
        }
        let mut entries: Vec<RepoEntry> = Vec::new();
        harvest_list_records(
            self.transport.as_ref(),
            &self.index_base_url,
            &ListParams {
                prefix: INDEX_PREFIX,
                ..Default::default()
            },
            |record| {
                if let Some(entry) = RepoEntry::from_metadata(&record.metadata) {
                    entries.push(entry);
                }
            },
        )
        .map_err(|e| SourceError::Upstream(format!("registry harvest failed: {e}")))?;
        *cache = Some(CachedRepos {
            fetched: Instant::now(),
            entries: entries.clone(),
        });
        Ok(entries)
    }

    /// The transform behind a prefix, if the prefix is served here.
    fn prefix_transform(&self, prefix: &str) -> Option<String> {
        let name = match prefix {
            DIDL_PREFIX => return None,
            COMPLETED_PREFIX => "didl_completed",
            OAI_DC_PREFIX => "record_to_dc",
            other => other,
        };
        self.engine
            .registry
            .resolve(name)
            .filter(|t| t.arity() != crate::dip::Arity::Element)
            .map(|t| t.name().to_string())
    }

    fn prefix_supported(&self, prefix: &str) -> bool {
        prefix == DIDL_PREFIX || self.prefix_transform(prefix).is_some()
    }

    /// Applies the prefix to one stored package; `DIDL` passes bytes
    /// through untouched.
    fn disseminate(&self, prefix: &str, stored: &[u8]) -> Result<Vec<u8>, SourceError> {
        let Some(name) = self.prefix_transform(prefix) else {
            return Ok(stored.to_vec());
        };
        let doc = crate::didl::parse_package(stored)
            .map_err(|e| SourceError::Upstream(format!("stored package does not parse: {e}")))?;
        self.engine
            .run_document_transform(&doc, &name)
            .map(|out| out.bytes)
            .map_err(|e| SourceError::Upstream(format!("transform failed: {e}")))
    }

    /// Full federated listing for one window: every repository in
    /// registration order, each harvested with the caller's window, native
    /// prefix. The flat record sequence this produces is what offsets and
    /// tokens index into.
    fn harvest_window(
        &self,
        from: Option<UtcTimestamp>,
        until: Option<UtcTimestamp>,
        set: Option<&str>,
    ) -> Result<Vec<(String, HarvestedRecord)>, SourceError> {
        let repos = self.repositories()?;
        let from_s = from.map(|t| t.to_string());
        let until_s = until.map(|t| t.to_string());
        let mut out: Vec<(String, HarvestedRecord)> = Vec::new();
        for repo in &repos {
            let spec = repo_set_spec(&repo.base_url);
            if set.is_some_and(|s| s != spec) {
                continue;
            }
            harvest_list_records(
                self.transport.as_ref(),
                &repo.base_url,
                &ListParams {
                    prefix: DIDL_PREFIX,
                    from: from_s.as_deref(),
                    until: until_s.as_deref(),
                    ..Default::default()
                },
                |record| out.push((spec.clone(), record)),
            )
            .map_err(|e| SourceError::Upstream(format!("repository harvest failed: {e}")))?;
        }
        Ok(out)
    }
}

impl RecordSource for Federator {
    fn identify(&self) -> IdentifyInfo {
        // Earliest datestamp across the federation; repositories that
        // cannot be reached just do not contribute.
        let earliest = self
            .repositories()
            .unwrap_or_default()
            .iter()
            .filter_map(|repo| harvest_identify(self.transport.as_ref(), &repo.base_url).ok())
            .filter_map(|identity| identity.earliest_datestamp?.parse::<UtcTimestamp>().ok())
            .min();
        IdentifyInfo {
            repository_name: "federating front door".to_string(),
            base_url: self.base_url.clone(),
            earliest_datestamp: earliest,
            admin_email: "repo-admin@localhost".to_string(),
        }
    }

    fn formats(&self, identifier: Option<&str>) -> Result<Vec<MetadataFormat>, SourceError> {
        if let Some(id) = identifier {
            let plans = self
                .locator
                .lookup(id)
                .map_err(|e| SourceError::Upstream(e.to_string()))?;
            if plans.is_empty() {
                return Err(SourceError::IdDoesNotExist);
            }
        }
        let mut formats = vec![
            didl_format(),
            MetadataFormat {
                prefix: COMPLETED_PREFIX.to_string(),
                namespace: crate::didl::DIDL_NS.to_string(),
                schema: didl_format().schema,
            },
            MetadataFormat {
                prefix: OAI_DC_PREFIX.to_string(),
                namespace: crate::dip::OAI_DC_NS.to_string(),
                schema: "http://www.openarchives.org/OAI/2.0/oai_dc.xsd".to_string(),
            },
        ];
        for transform in self.engine.registry.document_transforms() {
            if matches!(transform.name(), "didl_completed" | "record_to_dc") {
                continue;
            }
            formats.push(MetadataFormat {
                prefix: transform.name().to_string(),
                namespace: format!("urn:x-local:format/{}", transform.name()),
                schema: format!("urn:x-local:format/{}/schema", transform.name()),
            });
        }
        Ok(formats)
    }

    fn sets(&self) -> Option<Vec<SetInfo>> {
        let repos = self.repositories().ok()?;
        if repos.is_empty() {
            return None;
        }
        Some(
            repos
                .iter()
                .map(|repo| SetInfo {
                    spec: repo_set_spec(&repo.base_url),
                    name: repo.base_url.clone(),
                })
                .collect(),
        )
    }

    fn get(&self, identifier: &str, prefix: &str) -> Result<OaiRecord, SourceError> {
        let plans = self
            .locator
            .lookup(identifier)
            .map_err(|e| SourceError::Upstream(e.to_string()))?;
        if plans.is_empty() {
            return Err(SourceError::IdDoesNotExist);
        }
        if !self.prefix_supported(prefix) {
            return Err(SourceError::CannotDisseminateFormat);
        }
        // Newest version whose repository is known; the locator already
        // orders versions newest first.
        let plan = plans
            .iter()
            .find(|p| p.base_url.is_some())
            .ok_or_else(|| {
                SourceError::Upstream(format!(
                    "`{identifier}` is known but no holding repository is registered"
                ))
            })?;
        let base_url = plan.base_url.as_deref().expect("filtered on presence");

        let record = harvest_get_record(
            self.transport.as_ref(),
            base_url,
            &plan.package_id,
            DIDL_PREFIX,
        )
        .map_err(|e| match &e {
            HarvestError::Protocol { code, .. } if code == "idDoesNotExist" => {
                SourceError::IdDoesNotExist
            }
            other => SourceError::Upstream(format!("repository fetch failed: {other}")),
        })?;

        let metadata = self.disseminate(prefix, &record.metadata)?;
        Ok(OaiRecord {
            header: RecordHeader {
                identifier: record.identifier,
                datestamp: record.datestamp,
                sets: vec![repo_set_spec(base_url)],
            },
            metadata,
        })
    }

    fn list(&self, query: &ListQuery) -> Result<ListChunk, SourceError> {
        if !self.prefix_supported(&query.prefix) {
            return Err(SourceError::CannotDisseminateFormat);
        }
        let all = self.harvest_window(query.from, query.until, query.set.as_deref())?;
        let total = all.len() as u64;
        let mut records = Vec::new();
        for (spec, record) in all
            .into_iter()
            .skip(query.offset as usize)
            .take(query.limit as usize)
        {
            let metadata = self.disseminate(&query.prefix, &record.metadata)?;
            records.push(OaiRecord {
                header: RecordHeader {
                    identifier: record.identifier,
                    datestamp: record.datestamp,
                    sets: vec![spec],
                },
                metadata,
            });
        }
        let has_more = query.offset + (records.len() as u64) < total;
        Ok(ListChunk {
            records,
            complete_size: Some(total),
            has_more,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::didl::{parse_package, serialize_package, Container, Descriptor, Item, Package};
    use crate::dip::{DipTable, NoResolver, TransformRegistry};
    use crate::locator::{InProcessLocator, Locator};
    use crate::oaipmh::{InProcessTransport, MemorySource};
    use crate::repo_index::{IndexSource, RepositoryIndex};
    use crate::time::FixedClock;
    use std::sync::RwLock;

    const INDEX_URL: &str = "http://host/index";
    const REPO_A: &str = "http://host/repo/a";
    const REPO_B: &str = "http://host/repo/b";

    fn ts(s: &str) -> UtcTimestamp {
        s.parse().unwrap()
    }

    fn package(n: u32, created: &str) -> Package {
        Package {
            package_id: format!("info:x/i/pkg-{n}"),
            created: ts(created),
            container: Container {
                xml_id: Some(format!("uuid-c{n}")),
                descriptors: vec![Descriptor::placeholder("info:x/pro/DIDL")],
                items: vec![Item {
                    xml_id: Some(format!("uuid-i{n}")),
                    descriptors: vec![
                        Descriptor::content_identifier(&format!("info:doi/10.1/{n}")),
                        Descriptor::placeholder("info:x/pro/paper"),
                    ],
                    items: vec![],
                    components: vec![],
                }],
            },
        }
    }

    struct Env {
        federator: Federator,
        locator: Arc<RwLock<Locator>>,
        stored: Vec<(String, Vec<u8>)>,
    }

    fn env() -> Env {
        let mut index = RepositoryIndex::in_memory();
        index
            .register(RepoEntry {
                base_url: REPO_A.to_string(),
                description: "tape a".to_string(),
                created: ts("2004-01-01T00:00:00Z"),
            })
            .unwrap();
        index
            .register(RepoEntry {
                base_url: REPO_B.to_string(),
                description: "tape b".to_string(),
                created: ts("2004-01-02T00:00:00Z"),
            })
            .unwrap();
        let index = Arc::new(RwLock::new(index));

        let mut repo_a = MemorySource::new(REPO_A);
        let mut repo_b = MemorySource::new(REPO_B);
        let mut locator = Locator::new();
        let mut stored = Vec::new();
        for (n, (repo, base)) in [(&mut repo_a, REPO_A), (&mut repo_b, REPO_B)]
            .into_iter()
            .enumerate()
        {
            for k in 0..3u32 {
                let n = n as u32;
                let pkg = package(n * 3 + k, &format!("2004-06-2{}T0{}:00:00Z", n + 1, k));
                let bytes = serialize_package(&pkg);
                let stripped = crate::tape::strip_xml_decl(&bytes).to_vec();
                locator
                    .register_package(&pkg.package_id, base, Some(pkg.created))
                    .unwrap();
                for (cid, xml_id) in pkg.extract_identifiers() {
                    locator
                        .register_content(&cid.0, &pkg.package_id, &xml_id)
                        .unwrap();
                }
                stored.push((pkg.package_id.clone(), stripped.clone()));
                repo.push(OaiRecord {
                    header: RecordHeader {
                        identifier: pkg.package_id.clone(),
                        datestamp: pkg.created,
                        sets: vec![],
                    },
                    metadata: stripped,
                });
            }
        }

        let mut transport = InProcessTransport::new(2)
            .with_clock(Arc::new(FixedClock(ts("2004-07-01T00:00:00Z"))));
        transport.register(INDEX_URL, Arc::new(IndexSource::new(index, INDEX_URL)));
        transport.register(REPO_A, Arc::new(repo_a));
        transport.register(REPO_B, Arc::new(repo_b));

        let locator = Arc::new(RwLock::new(locator));
        let engine = DipEngine::new(
            DipTable::new(),
            TransformRegistry::with_builtins(),
            Arc::new(NoResolver),
        );
        let federator = Federator::new(
            "http://host/oai",
            INDEX_URL,
            Arc::new(transport),
            Arc::new(InProcessLocator(locator.clone())),
            Arc::new(engine),
            Duration::from_secs(0),
        );
        Env {
            federator,
            locator,
            stored,
        }
    }

    fn list_all(fed: &Federator, prefix: &str, set: Option<&str>) -> Vec<OaiRecord> {
        let mut out = Vec::new();
        let mut offset = 0;
        loop {
            let chunk = fed
                .list(&ListQuery {
                    prefix: prefix.to_string(),
                    from: None,
                    until: None,
                    set: set.map(str::to_string),
                    offset,
                    limit: 4,
                })
                .unwrap();
            offset += chunk.records.len() as u64;
            let done = !chunk.has_more;
            out.extend(chunk.records);
            if done {
                return out;
            }
        }
    }

    #[test]
    fn native_prefix_federates_byte_for_byte() {
        let env = env();
        let records = list_all(&env.federator, DIDL_PREFIX, None);
        assert_eq!(records.len(), 6);
        let harvested: Vec<(String, Vec<u8>)> = records
            .iter()
            .map(|r| (r.header.identifier.clone(), r.metadata.clone()))
            .collect();
        assert_eq!(harvested, env.stored, "union equals per-repo scans, in order");
        assert!(records[0].header.sets[0].starts_with("repo:"));
    }

    #[test]
    fn set_argument_restricts_to_one_repository() {
        let env = env();
        let spec = repo_set_spec(REPO_B);
        let records = list_all(&env.federator, DIDL_PREFIX, Some(&spec));
        assert_eq!(records.len(), 3);
        assert!(records
            .iter()
            .all(|r| r.header.identifier.contains("pkg-3")
                || r.header.identifier.contains("pkg-4")
                || r.header.identifier.contains("pkg-5")));

        let sets = env.federator.sets().unwrap();
        assert_eq!(sets.len(), 2);
        assert_eq!(sets[1].spec, spec);
        assert_eq!(sets[1].name, REPO_B);
    }

    #[test]
    fn windowing_passes_through_to_repositories() {
        let env = env();
        let chunk = env
            .federator
            .list(&ListQuery {
                prefix: DIDL_PREFIX.to_string(),
                from: Some(ts("2004-06-22T01:00:00Z")),
                until: Some(ts("2004-06-22T02:00:00Z")),
                set: None,
                offset: 0,
                limit: 10,
            })
            .unwrap();
        assert_eq!(chunk.records.len(), 2);
        assert_eq!(chunk.complete_size, Some(2));

        let empty = env
            .federator
            .list(&ListQuery {
                prefix: DIDL_PREFIX.to_string(),
                from: Some(ts("2010-01-01T00:00:00Z")),
                until: None,
                set: None,
                offset: 0,
                limit: 10,
            })
            .unwrap();
        assert!(empty.records.is_empty());
    }

    #[test]
    fn get_resolves_package_and_content_identifiers() {
        let env = env();
        let by_package = env.federator.get("info:x/i/pkg-4", DIDL_PREFIX).unwrap();
        assert_eq!(by_package.header.identifier, "info:x/i/pkg-4");
        assert_eq!(by_package.header.sets, vec![repo_set_spec(REPO_B)]);
        assert_eq!(
            by_package.metadata,
            env.stored.iter().find(|(id, _)| id == "info:x/i/pkg-4").unwrap().1,
            "stored bytes pass through unchanged"
        );

        let by_content = env.federator.get("info:doi/10.1/4", DIDL_PREFIX).unwrap();
        assert_eq!(by_content.header.identifier, "info:x/i/pkg-4");
    }

    #[test]
    fn error_classes_stay_distinct() {
        let env = env();
        assert!(matches!(
            env.federator.get("info:x/i/nothing", DIDL_PREFIX),
            Err(SourceError::IdDoesNotExist)
        ));
        assert!(matches!(
            env.federator.get("info:x/i/pkg-1", "marc21"),
            Err(SourceError::CannotDisseminateFormat)
        ));
        assert!(matches!(
            env.federator.list(&ListQuery {
                prefix: "marc21".to_string(),
                from: None,
                until: None,
                set: None,
                offset: 0,
                limit: 10,
            }),
            Err(SourceError::CannotDisseminateFormat)
        ));
        // Unknown identifier wins over unknown format, matching the
        // check order used by every other source here.
        assert!(matches!(
            env.federator.get("info:x/i/nothing", "marc21"),
            Err(SourceError::IdDoesNotExist)
        ));
    }

    #[test]
    fn transform_prefixes_apply_per_record() {
        let env = env();
        let record = env
            .federator
            .get("info:x/i/pkg-0", "identifiers_only")
            .unwrap();
        let listing = crate::xml::parse(&record.metadata).unwrap();
        assert_eq!(listing.local_name(), "identifiers");
        let text = String::from_utf8(record.metadata.clone()).unwrap();
        assert!(text.contains("info:x/i/pkg-0"));
        assert!(text.contains("info:doi/10.1/0"));

        // The hyphenated alias works as a prefix too.
        let aliased = env
            .federator
            .get("info:x/i/pkg-0", "identifiers-only")
            .unwrap();
        assert_eq!(aliased.metadata, record.metadata);

        let dc = env.federator.get("info:x/i/pkg-0", OAI_DC_PREFIX).unwrap();
        assert!(String::from_utf8(dc.metadata).unwrap().contains("oai_dc:dc"));

        let completed = env
            .federator
            .get("info:x/i/pkg-0", COMPLETED_PREFIX)
            .unwrap();
        let doc = parse_package(&completed.metadata).unwrap();
        assert_eq!(doc.package_id, "info:x/i/pkg-0");
    }

    #[test]
    fn listed_formats_cover_native_completed_dc_and_document_transforms() {
        let env = env();
        let prefixes: Vec<String> = env
            .federator
            .formats(None)
            .unwrap()
            .into_iter()
            .map(|f| f.prefix)
            .collect();
        assert_eq!(
            prefixes,
            vec![
                DIDL_PREFIX,
                COMPLETED_PREFIX,
                OAI_DC_PREFIX,
                "identifiers_only",
                "format_crosswalk"
            ]
        );

        assert!(matches!(
            env.federator.formats(Some("info:x/i/nothing")),
            Err(SourceError::IdDoesNotExist)
        ));
        assert!(env.federator.formats(Some("info:x/i/pkg-2")).is_ok());
    }

    #[test]
    fn version_rows_without_repositories_are_skipped() {
        let env = env();
        {
            let mut locator = env.locator.write().unwrap();
            // A newer version in a repository the registry has no location
            // row for: content lookup must fall through to the served one.
            locator
                .register_content("info:doi/10.1/4", "info:x/i/elsewhere", "uuid-x")
                .unwrap();
        }
        let record = env.federator.get("info:doi/10.1/4", DIDL_PREFIX).unwrap();
        assert_eq!(record.header.identifier, "info:x/i/pkg-4");
    }

    #[test]
    fn set_specs_are_legal_and_distinct() {
        assert_eq!(
            repo_set_spec("http://host:8081/repo/batch-1"),
            "repo:host_8081_repo_batch-1"
        );
        assert_ne!(repo_set_spec(REPO_A), repo_set_spec(REPO_B));
        let spec = repo_set_spec("https://x.org/r?q=1");
        assert!(spec
            .strip_prefix("repo:")
            .unwrap()
            .chars()
            .all(|c| c.is_ascii_alphanumeric() || "-_.!~*'()".contains(c)));
    }
}
