//! Turns a described digital object into an archival package.
//!
//! A manifest lists the object's datastreams with their media types,
//! optional content identifiers and format placeholders. Building the
//! package maps the object to one top-level item, each identified
//! datastream to a sub-item wrapping a component, and each unidentified
//! datastream to a bare component; XML payloads are embedded, everything
//! else goes to the binary container store and is referenced. Packages are
//! write-once: re-ingesting an object always mints a new package.

use thiserror::Error;

use crate::arcstore::ArcWriter;
use crate::didl::{Component, Container, Descriptor, Item, Package, Resource};
use crate::ids::{mint_datastream_key, mint_package_id, mint_xml_id, ContentIdentifier};
use crate::time::Clock;

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("manifest lists no datastreams")]
    EmptyManifest,
    #[error("bad manifest: {0}")]
    InvalidManifest(String),
    #[error("archive container write failed: {0}")]
    ArcWriteFailed(String),
}

/// One datastream of the object being ingested.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DatastreamSpec {
    pub bytes: Vec<u8>,
    pub mime_type: String,
    /// Identifier the datastream carries in its own right; its presence
    /// decides whether a sub-item is created.
    pub content_id: Option<ContentIdentifier>,
    /// Placeholder naming the datastream's digital format.
    pub format_placeholder: String,
    /// Item-level placeholder for the sub-item, when one is created;
    /// defaults to the deployment's metadata family value.
    pub sub_placeholder: Option<String>,
}

/// A described digital object: its own identifier (if any), the placeholder
/// naming its family, and its datastreams in order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ObjectManifest {
    pub object_content_id: Option<ContentIdentifier>,
    pub family_placeholder: String,
    pub datastreams: Vec<DatastreamSpec>,
}

/// Deployment-wide values stamped into every package built here.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IngestProfile {
    /// Namespace under which package identifiers are minted,
    /// e.g. `info:local-repo/i`.
    pub package_namespace: String,
    /// Base URL minted into by-reference resources; also the key prefix in
    /// the archive container store.
    pub datastream_base: String,
    /// Container placeholder, the same value for every stored package.
    pub container_placeholder: String,
    /// Item placeholder used when a sub-item does not name its own.
    pub default_sub_placeholder: String,
}

impl IngestProfile {
    /// Derives the conventional layout under an `info:` prefix such as
    /// `info:local-repo`.
    pub fn for_prefix(prefix: &str, datastream_base: &str) -> Self {
        IngestProfile {
            package_namespace: format!("{prefix}/i"),
            datastream_base: datastream_base.to_string(),
            container_placeholder: format!("{prefix}/pro/DIDL"),
            default_sub_placeholder: format!("{prefix}/pro/metadata"),
        }
    }
}

/// True when a payload of this media type is carried inline: subtype `xml`
/// or a `+xml` suffix. Everything else is externalized.
pub fn is_xml_mime(mime: &str) -> bool {
    let essence = mime.split(';').next().unwrap_or("").trim();
    let subtype = essence.split('/').nth(1).unwrap_or("").to_ascii_lowercase();
    subtype == "xml" || subtype.ends_with("+xml")
}

fn validate(manifest: &ObjectManifest) -> Result<(), IngestError> {
    if manifest.datastreams.is_empty() {
        return Err(IngestError::EmptyManifest);
    }
    if manifest.family_placeholder.is_empty() {
        return Err(IngestError::InvalidManifest(
            "family placeholder is empty".to_string(),
        ));
    }
    for (n, ds) in manifest.datastreams.iter().enumerate() {
        if ds.mime_type.is_empty() {
            return Err(IngestError::InvalidManifest(format!(
                "datastream {n} has no media type"
            )));
        }
        if ds.format_placeholder.is_empty() {
            return Err(IngestError::InvalidManifest(format!(
                "datastream {n} has no format placeholder"
            )));
        }
    }
    Ok(())
}

fn build_component(
    ds: &DatastreamSpec,
    arc: &mut ArcWriter,
    created: crate::time::UtcTimestamp,
    profile: &IngestProfile,
) -> Result<Component, IngestError> {
    let resource = if is_xml_mime(&ds.mime_type) {
        match crate::xml::parse(&ds.bytes) {
            Ok(root) => Resource::inline_xml(&ds.mime_type, root),
            // Declared XML that does not parse still stays inside the
            // package, as base64.
            Err(_) => Resource::base64(&ds.mime_type, &ds.bytes),
        }
    } else {
        let key = mint_datastream_key(&profile.datastream_base);
        arc.append(&key, &ds.mime_type, created, &ds.bytes)
            .map_err(|e| IngestError::ArcWriteFailed(e.to_string()))?;
        Resource::by_reference(&ds.mime_type, &key)
    };
    Ok(Component {
        xml_id: Some(mint_xml_id()),
        descriptors: vec![Descriptor::placeholder(&ds.format_placeholder)],
        resources: vec![resource],
    })
}

/// Builds the archival package for one object. Every structural id is
/// freshly minted; `created` comes from the clock at whole-second
/// precision. Non-XML payloads are appended to `arc` in manifest order.
pub fn build_aip(
    manifest: &ObjectManifest,
    arc: &mut ArcWriter,
    clock: &dyn Clock,
    profile: &IngestProfile,
) -> Result<Package, IngestError> {
    validate(manifest)?;
    let created = clock.now();

    let mut top = Item {
        xml_id: Some(mint_xml_id()),
        descriptors: Vec::new(),
        items: Vec::new(),
        components: Vec::new(),
    };
    if let Some(cid) = &manifest.object_content_id {
        top.descriptors.push(Descriptor::content_identifier(&cid.0));
    }
    top.descriptors
        .push(Descriptor::placeholder(&manifest.family_placeholder));

    for ds in &manifest.datastreams {
        let component = build_component(ds, arc, created, profile)?;
        match &ds.content_id {
            Some(cid) => top.items.push(Item {
                xml_id: Some(mint_xml_id()),
                descriptors: vec![
                    Descriptor::content_identifier(&cid.0),
                    Descriptor::placeholder(
                        ds.sub_placeholder
                            .as_deref()
                            .unwrap_or(&profile.default_sub_placeholder),
                    ),
                ],
                items: Vec::new(),
                components: vec![component],
            }),
            None => top.components.push(component),
        }
    }

    Ok(Package {
        package_id: mint_package_id(&profile.package_namespace).base,
        created,
        container: Container {
            xml_id: Some(mint_xml_id()),
            descriptors: vec![Descriptor::placeholder(&profile.container_placeholder)],
            items: vec![top],
        },
    })
}

/// Ingests a (possibly repeat) version of an object. Versioning is purely
/// additive: a new package is always built, prior packages are never
/// located or touched, and the locator ends up holding one row per version
/// of a shared content identifier.
pub fn ingest_version(
    manifest: &ObjectManifest,
    arc: &mut ArcWriter,
    clock: &dyn Clock,
    profile: &IngestProfile,
) -> Result<Package, IngestError> {
    build_aip(manifest, arc, clock, profile)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::arcstore::ArcStore;
    use crate::didl::ResourceBody;
    use crate::time::FixedClock;
    use sha2::{Digest, Sha256};
    use std::collections::HashSet;

    const MARC: &[u8] = br#"<record xmlns="http://www.loc.gov/MARC21/slim"><controlfield tag="001">LANLb10012252</controlfield></record>"#;
    const PDF: &[u8] = b"%PDF-1.4 sample body";

    fn clock() -> FixedClock {
        FixedClock("2004-06-22T18:07:18Z".parse().unwrap())
    }

    fn profile() -> IngestProfile {
        IngestProfile::for_prefix("info:lanl-repo", "http://127.0.0.1:8083/arc")
    }

    fn table_1_manifest() -> ObjectManifest {
        ObjectManifest {
            object_content_id: Some("info:doi/10.123/44455".into()),
            family_placeholder: "info:lanl-repo/pro/paper".into(),
            datastreams: vec![
                DatastreamSpec {
                    bytes: MARC.to_vec(),
                    mime_type: "text/xml; charset=UTF-8".into(),
                    content_id: Some("info:pmid/2225887".into()),
                    format_placeholder: "info:lanl-repo/fmt/3".into(),
                    sub_placeholder: None,
                },
                DatastreamSpec {
                    bytes: PDF.to_vec(),
                    mime_type: "application/pdf".into(),
                    content_id: None,
                    format_placeholder: "info:lanl-repo/fmt/5".into(),
                    sub_placeholder: None,
                },
            ],
        }
    }

    fn build(manifest: &ObjectManifest) -> (Package, tempfile::TempDir, usize) {
        let dir = tempfile::tempdir().unwrap();
        let mut arc = ArcWriter::create(&dir.path().join("t.arc"), clock().0).unwrap();
        let pkg = build_aip(manifest, &mut arc, &clock(), &profile()).unwrap();
        let written = arc.entries().len();
        arc.finish(&dir.path().join("t.arc.idx")).unwrap();
        (pkg, dir, written)
    }

    #[test]
    fn sample_object_maps_to_expected_shape() {
        let (pkg, _dir, written) = build(&table_1_manifest());

        assert!(pkg.package_id.starts_with("info:lanl-repo/i/"));
        assert_eq!(pkg.created.to_string(), "2004-06-22T18:07:18Z");
        assert_eq!(
            pkg.container.placeholder().as_deref(),
            Some("info:lanl-repo/pro/DIDL")
        );

        let top = &pkg.container.items[0];
        assert_eq!(
            top.content_identifier().unwrap().0,
            "info:doi/10.123/44455"
        );
        assert_eq!(top.placeholder().as_deref(), Some("info:lanl-repo/pro/paper"));

        let sub = &top.items[0];
        assert_eq!(sub.content_identifier().unwrap().0, "info:pmid/2225887");
        assert_eq!(
            sub.placeholder().as_deref(),
            Some("info:lanl-repo/pro/metadata")
        );
        let marc = &sub.components[0];
        assert_eq!(marc.placeholder().as_deref(), Some("info:lanl-repo/fmt/3"));
        assert!(matches!(marc.resources[0].body, ResourceBody::Inline(_)));

        let pdf = &top.components[0];
        assert_eq!(pdf.content_identifier(), None);
        assert_eq!(pdf.placeholder().as_deref(), Some("info:lanl-repo/fmt/5"));
        match &pdf.resources[0].body {
            ResourceBody::Reference(url) => {
                assert!(url.starts_with("http://127.0.0.1:8083/arc/"));
            }
            other => panic!("PDF should be by-reference, got {other:?}"),
        }
        assert_eq!(written, 1);
    }

    #[test]
    fn single_inline_stream_touches_no_arc() {
        let manifest = ObjectManifest {
            object_content_id: None,
            family_placeholder: "info:lanl-repo/pro/paper".into(),
            datastreams: vec![DatastreamSpec {
                bytes: MARC.to_vec(),
                mime_type: "application/marcxml+xml".into(),
                content_id: None,
                format_placeholder: "info:lanl-repo/fmt/3".into(),
                sub_placeholder: None,
            }],
        };
        let (pkg, _dir, written) = build(&manifest);
        assert_eq!(written, 0);
        let top = &pkg.container.items[0];
        assert_eq!(pkg.container.items.len(), 1);
        assert!(top.items.is_empty());
        assert_eq!(top.components.len(), 1);
        assert_eq!(top.content_identifier(), None);
    }

    #[test]
    fn binary_streams_round_trip_through_arc_by_digest() {
        let first = b"binary payload one".to_vec();
        let second = vec![0u8, 159, 146, 150, 255, 13, 10];
        let manifest = ObjectManifest {
            object_content_id: None,
            family_placeholder: "info:lanl-repo/pro/paper".into(),
            datastreams: vec![
                DatastreamSpec {
                    bytes: first.clone(),
                    mime_type: "application/octet-stream".into(),
                    content_id: None,
                    format_placeholder: "info:lanl-repo/fmt/9".into(),
                    sub_placeholder: None,
                },
                DatastreamSpec {
                    bytes: second.clone(),
                    mime_type: "image/tiff".into(),
                    content_id: None,
                    format_placeholder: "info:lanl-repo/fmt/10".into(),
                    sub_placeholder: None,
                },
            ],
        };

        let dir = tempfile::tempdir().unwrap();
        let arc_path = dir.path().join("t.arc");
        let idx_path = dir.path().join("t.arc.idx");
        let mut arc = ArcWriter::create(&arc_path, clock().0).unwrap();
        let pkg = build_aip(&manifest, &mut arc, &clock(), &profile()).unwrap();
        arc.finish(&idx_path).unwrap();

        let store = ArcStore::open(&arc_path, &idx_path).unwrap();
        assert_eq!(store.len(), 2);
        let refs: Vec<String> = pkg.container.items[0]
            .components
            .iter()
            .map(|c| match &c.resources[0].body {
                ResourceBody::Reference(url) => url.clone(),
                other => panic!("expected reference, got {other:?}"),
            })
            .collect();
        for (url, input) in refs.iter().zip([&first, &second]) {
            let stored = store.get(url).unwrap();
            assert_eq!(
                Sha256::digest(&stored.bytes),
                Sha256::digest(input),
                "payload digest must survive the container"
            );
        }
    }

    #[test]
    fn declared_xml_that_fails_to_parse_inlines_as_base64() {
        let manifest = ObjectManifest {
            object_content_id: None,
            family_placeholder: "info:lanl-repo/pro/paper".into(),
            datastreams: vec![DatastreamSpec {
                bytes: b"<record>broken".to_vec(),
                mime_type: "text/xml".into(),
                content_id: None,
                format_placeholder: "info:lanl-repo/fmt/3".into(),
                sub_placeholder: None,
            }],
        };
        let (pkg, _dir, written) = build(&manifest);
        assert_eq!(written, 0);
        let comp = &pkg.container.items[0].components[0];
        assert!(matches!(comp.resources[0].body, ResourceBody::Base64(_)));
        assert_eq!(comp.resources[0].decode_base64().unwrap(), b"<record>broken");
    }

    #[test]
    fn invalid_manifests_are_refused() {
        let dir = tempfile::tempdir().unwrap();
        let mut arc = ArcWriter::create(&dir.path().join("t.arc"), clock().0).unwrap();

        let empty = ObjectManifest {
            object_content_id: None,
            family_placeholder: "info:lanl-repo/pro/paper".into(),
            datastreams: vec![],
        };
        assert!(matches!(
            build_aip(&empty, &mut arc, &clock(), &profile()),
            Err(IngestError::EmptyManifest)
        ));

        let mut blank = table_1_manifest();
        blank.family_placeholder.clear();
        assert!(matches!(
            build_aip(&blank, &mut arc, &clock(), &profile()),
            Err(IngestError::InvalidManifest(_))
        ));

        let mut no_mime = table_1_manifest();
        no_mime.datastreams[0].mime_type.clear();
        assert!(matches!(
            build_aip(&no_mime, &mut arc, &clock(), &profile()),
            Err(IngestError::InvalidManifest(_))
        ));
    }

    #[test]
    fn reingest_mints_new_packages_and_keeps_content_ids() {
        let manifest = table_1_manifest();
        let dir = tempfile::tempdir().unwrap();
        let mut arc = ArcWriter::create(&dir.path().join("t.arc"), clock().0).unwrap();

        let mut package_ids = HashSet::new();
        for _ in 0..5 {
            let pkg = ingest_version(&manifest, &mut arc, &clock(), &profile()).unwrap();
            assert_eq!(
                pkg.container.items[0].content_identifier().unwrap().0,
                "info:doi/10.123/44455"
            );
            package_ids.insert(pkg.package_id);
        }
        assert_eq!(package_ids.len(), 5);
        assert_eq!(arc.entries().len(), 5);
    }

    #[test]
    fn structural_ids_are_fresh_and_distinct() {
        let (pkg, _dir, _) = build(&table_1_manifest());
        let ids: Vec<&str> = pkg.walk().iter().filter_map(|e| e.xml_id()).collect();
        assert_eq!(ids.len(), 5);
        assert_eq!(
            ids.iter().collect::<HashSet<_>>().len(),
            ids.len(),
            "xml ids must be unique within a package"
        );
        assert!(ids.iter().all(|id| id.starts_with("uuid-")));

        let (other, _dir2, _) = build(&table_1_manifest());
        assert_ne!(pkg.package_id, other.package_id);
    }

    #[test]
    fn mime_inline_rule() {
        assert!(is_xml_mime("text/xml"));
        assert!(is_xml_mime("text/xml; charset=UTF-8"));
        assert!(is_xml_mime("application/marcxml+xml"));
        assert!(is_xml_mime("Application/XHTML+XML"));
        assert!(!is_xml_mime("application/pdf"));
        assert!(!is_xml_mime("text/plain"));
        assert!(!is_xml_mime("application/xml-dtd"));
    }
}
