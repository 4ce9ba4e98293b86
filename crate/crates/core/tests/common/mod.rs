//! Shared helpers for the integration tests: fixture loading, UUID masking
//! for golden comparisons, and the sample-object manifest.

#![allow(dead_code)]

use std::collections::HashMap;
use std::path::PathBuf;

use didlrepo::didl::Package;
use didlrepo::dip::DipTable;
use didlrepo::ids::ContentIdentifier;
use didlrepo::ingest::{DatastreamSpec, IngestProfile, ObjectManifest};

pub fn fixture_path(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("tests/fixtures")
        .join(name)
}

pub fn read_fixture(name: &str) -> Vec<u8> {
    std::fs::read(fixture_path(name))
        .unwrap_or_else(|e| panic!("fixture {name}: {e}"))
}

pub fn annex_a() -> Package {
    didlrepo::didl::parse_package(&read_fixture("annex_a.xml")).expect("annex_a parses")
}

pub fn annex_b() -> Package {
    didlrepo::didl::parse_package(&read_fixture("annex_b.xml")).expect("annex_b parses")
}

pub fn sample_dip_table() -> DipTable {
    DipTable::load(&fixture_path("dip_table.tsv")).expect("dip_table fixture loads")
}

/// Replaces every full UUID with `uuid0`, `uuid1`, ... in first-occurrence
/// order, so two documents that differ only in minted identifiers compare
/// equal.
pub fn mask_uuids(text: &str) -> String {
    let re = regex::Regex::new(
        "[0-9a-fA-F]{8}-[0-9a-fA-F]{4}-[0-9a-fA-F]{4}-[0-9a-fA-F]{4}-[0-9a-fA-F]{12}",
    )
    .expect("static pattern");
    let mut seen: HashMap<String, usize> = HashMap::new();
    re.replace_all(text, |caps: &regex::Captures<'_>| {
        let raw = caps[0].to_lowercase();
        let next = seen.len();
        let idx = *seen.entry(raw).or_insert(next);
        format!("uuid{idx}")
    })
    .into_owned()
}

/// The sample object's ingest manifest, datastream bytes pulled from the
/// fixture files.
pub fn table1_manifest() -> ObjectManifest {
    ObjectManifest {
        object_content_id: Some(ContentIdentifier::from("info:doi/10.123/44455")),
        family_placeholder: "info:lanl-repo/pro/paper".to_string(),
        datastreams: vec![
            DatastreamSpec {
                bytes: read_fixture("table1/marcxml.xml"),
                mime_type: "text/xml; charset=UTF-8".to_string(),
                content_id: Some(ContentIdentifier::from("info:pmid/2225887")),
                format_placeholder: "info:lanl-repo/fmt/3".to_string(),
                sub_placeholder: Some("info:lanl-repo/pro/metadata".to_string()),
            },
            DatastreamSpec {
                bytes: read_fixture("table1/paper.pdf"),
                mime_type: "application/pdf".to_string(),
                content_id: None,
                format_placeholder: "info:lanl-repo/fmt/5".to_string(),
                sub_placeholder: None,
            },
        ],
    }
}

/// The ingest profile the sample fixtures were built under.
pub fn sample_profile(datastream_base: &str) -> IngestProfile {
    IngestProfile::for_prefix("info:lanl-repo", datastream_base)
}
