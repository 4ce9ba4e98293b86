//! The acceptance gate. One test per criterion; each prints a single
//! `PASS criterion N` line (visible with `--nocapture`) and the test name
//! itself carries the criterion number for the default cargo output.

mod common;

use std::time::Instant;

use common::*;

use didlrepo::didl::serialize_package;
use didlrepo::dip::insert_dims;
use didlrepo::ingest::build_aip;
use didlrepo::locator::Locator;
use didlrepo::time::FixedClock;

const SAMPLE_CREATED: &str = "2004-06-22T18:07:18Z";
const DATASTREAM_BASE: &str = "http://127.0.0.1:8083/arc";

fn fixed_clock() -> FixedClock {
    FixedClock(SAMPLE_CREATED.parse().unwrap())
}

/// Criterion 1: ingesting the sample object's manifest yields an AIP with
/// the Annex-A shape, compared against the golden under UUID masking,
/// in under a second.
#[test]
fn criterion_01_golden_ingest() {
    let dir = tempfile::tempdir().unwrap();
    let mut arc = didlrepo::arcstore::ArcWriter::create(
        &dir.path().join("batch.arc"),
        SAMPLE_CREATED.parse().unwrap(),
    )
    .unwrap();

    let started = Instant::now();
    let aip = build_aip(
        &table1_manifest(),
        &mut arc,
        &fixed_clock(),
        &sample_profile(DATASTREAM_BASE),
    )
    .unwrap();
    let elapsed = started.elapsed();

    let produced = String::from_utf8(serialize_package(&aip)).unwrap();
    let golden = String::from_utf8(read_fixture("golden_ingest.xml")).unwrap();
    assert_eq!(
        mask_uuids(&produced),
        mask_uuids(&golden),
        "ingested AIP deviates from the golden under UUID masking"
    );

    // Shape parity with the published sample package: same placeholder and
    // identifier layout, the MARCXML inline, the PDF as the second
    // component of the top item.
    let sample = annex_a();
    assert_eq!(
        aip.container.placeholder(),
        sample.container.placeholder()
    );
    let item = &aip.container.items[0];
    let sample_item = &sample.container.items[0];
    assert_eq!(item.content_identifier(), sample_item.content_identifier());
    assert_eq!(item.placeholder(), sample_item.placeholder());
    assert_eq!(
        item.items[0].content_identifier(),
        sample_item.items[0].content_identifier()
    );
    assert_eq!(item.items[0].placeholder(), sample_item.items[0].placeholder());
    assert_eq!(
        item.items[0].components[0].placeholder(),
        sample_item.items[0].components[0].placeholder()
    );
    assert_eq!(
        item.components[0].placeholder(),
        sample_item.components[0].placeholder()
    );
    assert_eq!(arc.entries().len(), 1, "exactly the PDF goes by reference");

    assert!(elapsed.as_secs_f64() < 1.0, "ingest took {elapsed:?}");
    println!("PASS criterion 1: golden ingest of the sample manifest ({elapsed:?})");
}

/// Criterion 2: completing the Annex A document against the sample service
/// table reproduces Annex B under UUID masking, in under a second.
#[test]
fn criterion_02_golden_completion() {
    let stored = annex_a();
    let table = sample_dip_table();

    let started = Instant::now();
    let completed = insert_dims(&stored, &table);
    let elapsed = started.elapsed();

    let produced = String::from_utf8(serialize_package(&completed)).unwrap();
    let golden = String::from_utf8(serialize_package(&annex_b())).unwrap();
    assert_eq!(
        mask_uuids(&produced),
        mask_uuids(&golden),
        "completed document deviates from Annex B under UUID masking"
    );

    assert!(elapsed.as_secs_f64() < 1.0, "completion took {elapsed:?}");
    println!("PASS criterion 2: golden completion reproduces Annex B ({elapsed:?})");
}

/// Criterion 3: the locator resolves the three published walkthrough
/// requests exactly as Tables 2 and 3 record them, and the multi-version
/// identifier returns both rows.
#[test]
fn criterion_03_locator_tables() {
    let mut locator = Locator::new();
    let batch = String::from_utf8(read_fixture("tables_2_3.tsv")).unwrap();
    locator.load_batch(&batch).unwrap();

    let direct = locator.resolve("info:lanl-repo/i/58f202ac");
    assert_eq!(direct.len(), 1);
    assert_eq!(direct[0].package_id, "info:lanl-repo/i/58f202ac");
    assert_eq!(direct[0].fragment, None);
    assert_eq!(direct[0].base_url.as_deref(), Some("BaseURL(3)"));

    let addressed = locator.resolve("info:lanl-repo/i/58f202ac#uuid-00005e90");
    assert_eq!(addressed.len(), 1);
    assert_eq!(addressed[0].package_id, "info:lanl-repo/i/58f202ac");
    assert_eq!(addressed[0].fragment.as_deref(), Some("uuid-00005e90"));
    assert_eq!(addressed[0].base_url.as_deref(), Some("BaseURL(3)"));

    let by_content = locator.resolve("info:lanl-repo/biosis/abcdef");
    assert_eq!(by_content.len(), 1);
    assert_eq!(by_content[0].package_id, "info:lanl-repo/i/002035b2");
    assert_eq!(by_content[0].fragment.as_deref(), Some("uuid-00007y55"));
    assert_eq!(by_content[0].base_url.as_deref(), Some("BaseURL(6)"));

    let versions = locator.resolve("info:pmid/2225887");
    assert_eq!(versions.len(), 2, "both versions of the record surface");
    let mut rows: Vec<(String, Option<String>, Option<String>)> = versions
        .iter()
        .map(|p| (p.package_id.clone(), p.fragment.clone(), p.base_url.clone()))
        .collect();
    rows.sort();
    assert_eq!(
        rows,
        vec![
            (
                "info:lanl-repo/i/12e303be".to_string(),
                Some("uuid-875646ae".to_string()),
                None
            ),
            (
                "info:lanl-repo/i/58f202ac".to_string(),
                Some("uuid-8881b35e".to_string()),
                Some("BaseURL(3)".to_string())
            ),
        ]
    );

    println!("PASS criterion 3: locator reproduces the published resolution tables");
}

/// Regenerates the ingest golden. Run explicitly after intentional shape
/// changes: `cargo test -p didlrepo --test acceptance -- --ignored
/// regenerate` then review the diff.
#[test]
#[ignore]
fn regenerate_ingest_golden() {
    let dir = tempfile::tempdir().unwrap();
    let mut arc = didlrepo::arcstore::ArcWriter::create(
        &dir.path().join("batch.arc"),
        SAMPLE_CREATED.parse().unwrap(),
    )
    .unwrap();
    let aip = build_aip(
        &table1_manifest(),
        &mut arc,
        &fixed_clock(),
        &sample_profile(DATASTREAM_BASE),
    )
    .unwrap();
    let path = fixture_path("golden_ingest.xml");
    std::fs::write(&path, serialize_package(&aip)).unwrap();
    println!("wrote {}", path.display());
}
