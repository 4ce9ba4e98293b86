//! On-disk batch manifests. One TOML file describes one object; datastream
//! paths are relative to the manifest file so a batch directory can be
//! moved around as a unit.

use std::path::Path;

use anyhow::{Context, Result};
use serde::Deserialize;

use didlrepo::ids::ContentIdentifier;
use didlrepo::ingest::{DatastreamSpec, ObjectManifest};

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ManifestFile {
    object_content_id: Option<String>,
    family_placeholder: String,
    #[serde(default, rename = "datastream")]
    datastreams: Vec<DatastreamEntry>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct DatastreamEntry {
    file: String,
    mime_type: String,
    content_id: Option<String>,
    format_placeholder: String,
    sub_placeholder: Option<String>,
}

/// Reads one manifest file and pulls in its datastream bytes.
pub fn load(path: &Path) -> Result<ObjectManifest> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("reading manifest {}", path.display()))?;
    let parsed: ManifestFile = toml::from_str(&text)
        .with_context(|| format!("parsing manifest {}", path.display()))?;
    let dir = path.parent().unwrap_or_else(|| Path::new("."));

    let mut datastreams = Vec::with_capacity(parsed.datastreams.len());
    for entry in parsed.datastreams {
        let file = dir.join(&entry.file);
        let bytes = std::fs::read(&file)
            .with_context(|| format!("reading datastream {}", file.display()))?;
        datastreams.push(DatastreamSpec {
            bytes,
            mime_type: entry.mime_type,
            content_id: entry.content_id.as_deref().map(ContentIdentifier::from),
            format_placeholder: entry.format_placeholder,
            sub_placeholder: entry.sub_placeholder,
        });
    }
    Ok(ObjectManifest {
        object_content_id: parsed
            .object_content_id
            .as_deref()
            .map(ContentIdentifier::from),
        family_placeholder: parsed.family_placeholder,
        datastreams,
    })
}

/// Manifest files of a batch: the file itself, or every `*.toml` in a
/// directory, name order.
pub fn batch_paths(batch: &Path) -> Result<Vec<std::path::PathBuf>> {
    if batch.is_file() {
        return Ok(vec![batch.to_path_buf()]);
    }
    if !batch.is_dir() {
        anyhow::bail!("batch path {} does not exist", batch.display());
    }
    let mut paths: Vec<_> = std::fs::read_dir(batch)
        .with_context(|| format!("reading batch directory {}", batch.display()))?
        .filter_map(|entry| entry.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|ext| ext == "toml"))
        .collect();
    paths.sort();
    Ok(paths)
}
