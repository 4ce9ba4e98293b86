//! One declarative configuration file drives every command: the identifier
//! namespace, where stores live on disk, where each endpoint listens, page
//! sizes, the service table location, and which built-in transforms are
//! switched off. Everything has a default, so an empty file is a working
//! local deployment.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dip::TransformRegistry;
use crate::ingest::IngestProfile;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("config I/O failure: {0}")]
    Io(#[from] std::io::Error),
    #[error("config does not parse: {0}")]
    Parse(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DeploymentConfig {
    /// `info:` prefix under which package identifiers and placeholder
    /// values are minted, e.g. `info:local-repo`.
    pub namespace_prefix: String,
    /// Root directory for tapes, archive containers, the repository
    /// registry and locator state.
    pub data_dir: PathBuf,
    /// Service table file (tab-delimited); absent means an empty table.
    pub dip_table: Option<PathBuf>,
    /// Seconds the federating endpoint trusts a cached registry harvest.
    pub index_cache_ttl_seconds: u64,
    pub pages: PageSizes,
    pub endpoints: Endpoints,
    /// Built-in transforms withheld from the registry.
    pub disabled_transforms: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PageSizes {
    pub repository: u64,
    pub index: u64,
    pub federator: u64,
}

impl Default for PageSizes {
    fn default() -> Self {
        PageSizes {
            repository: 100,
            index: 100,
            federator: 100,
        }
    }
}

/// Listen addresses (`host:port`); each service is independently
/// addressable and any subset can run in one process or spread out.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Endpoints {
    pub repositories: String,
    pub index: String,
    pub datastreams: String,
    pub locator: String,
    pub federator: String,
    pub openurl: String,
}

impl Default for Endpoints {
    fn default() -> Self {
        Endpoints {
            repositories: "127.0.0.1:8081".to_string(),
            index: "127.0.0.1:8082".to_string(),
            datastreams: "127.0.0.1:8083".to_string(),
            locator: "127.0.0.1:8084".to_string(),
            federator: "127.0.0.1:8085".to_string(),
            openurl: "127.0.0.1:8086".to_string(),
        }
    }
}

impl Default for DeploymentConfig {
    fn default() -> Self {
        DeploymentConfig {
            namespace_prefix: "info:local-repo".to_string(),
            data_dir: PathBuf::from("./data"),
            dip_table: None,
            index_cache_ttl_seconds: 10,
            pages: PageSizes::default(),
            endpoints: Endpoints::default(),
            disabled_transforms: Vec::new(),
        }
    }
}

impl DeploymentConfig {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)?;
        toml::from_str(&text).map_err(|e| ConfigError::Parse(e.to_string()))
    }

    pub fn save(&self, path: &Path) -> Result<(), ConfigError> {
        let text = toml::to_string_pretty(self).expect("config serializes");
        std::fs::write(path, text)?;
        Ok(())
    }

    // -----------------------------------------------------------------
    // Disk layout
    // -----------------------------------------------------------------

    pub fn tapes_dir(&self) -> PathBuf {
        self.data_dir.join("tapes")
    }

    pub fn arcs_dir(&self) -> PathBuf {
        self.data_dir.join("arc")
    }

    pub fn tape_path(&self, name: &str) -> PathBuf {
        self.tapes_dir().join(format!("{name}.xmltape"))
    }

    pub fn tape_index_path(&self, name: &str) -> PathBuf {
        self.tapes_dir().join(format!("{name}.xmltape.idx"))
    }

    pub fn arc_path(&self, name: &str) -> PathBuf {
        self.arcs_dir().join(format!("{name}.arc"))
    }

    pub fn arc_index_path(&self, name: &str) -> PathBuf {
        self.arcs_dir().join(format!("{name}.arc.idx"))
    }

    /// Names of sealed tapes on disk, sorted.
    pub fn tape_names(&self) -> Result<Vec<String>, ConfigError> {
        let dir = self.tapes_dir();
        if !dir.exists() {
            return Ok(Vec::new());
        }
        let mut names: Vec<String> = std::fs::read_dir(&dir)?
            .filter_map(|entry| {
                let name = entry.ok()?.file_name().into_string().ok()?;
                name.strip_suffix(".xmltape").map(str::to_string)
            })
            .collect();
        names.sort();
        Ok(names)
    }

    pub fn registry_path(&self) -> PathBuf {
        self.data_dir.join("registry.jsonl")
    }

    pub fn locator_path(&self) -> PathBuf {
        self.data_dir.join("locator.json")
    }

    // -----------------------------------------------------------------
    // Endpoint URLs
    // -----------------------------------------------------------------

    /// Harvesting base URL of the repository serving `tape_name`.
    pub fn repo_base_url(&self, tape_name: &str) -> String {
        format!("http://{}/repo/{tape_name}", self.endpoints.repositories)
    }

    pub fn index_base_url(&self) -> String {
        format!("http://{}/index", self.endpoints.index)
    }

    /// Base URL minted into by-reference resources; a datastream lives at
    /// `<this>/<uuid>`.
    pub fn datastream_base(&self) -> String {
        format!("http://{}/arc", self.endpoints.datastreams)
    }

    pub fn locator_base_url(&self) -> String {
        format!("http://{}", self.endpoints.locator)
    }

    pub fn federator_base_url(&self) -> String {
        format!("http://{}/oai", self.endpoints.federator)
    }

    pub fn openurl_base_url(&self) -> String {
        format!("http://{}/openurl", self.endpoints.openurl)
    }

    // -----------------------------------------------------------------
    // Derived components
    // -----------------------------------------------------------------

    pub fn ingest_profile(&self) -> IngestProfile {
        IngestProfile::for_prefix(&self.namespace_prefix, &self.datastream_base())
    }

    /// The built-in registry minus any disabled transforms.
    pub fn transform_registry(&self) -> TransformRegistry {
        let mut registry = TransformRegistry::with_builtins();
        for name in &self.disabled_transforms {
            registry.remove(name);
        }
        registry
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_is_a_full_default_deployment() {
        let config: DeploymentConfig = toml::from_str("").unwrap();
        assert_eq!(config, DeploymentConfig::default());
        assert_eq!(config.pages.repository, 100);
        assert_eq!(config.index_cache_ttl_seconds, 10);
        assert_eq!(
            config.repo_base_url("batch-1"),
            "http://127.0.0.1:8081/repo/batch-1"
        );
        assert_eq!(config.datastream_base(), "http://127.0.0.1:8083/arc");
    }

    #[test]
    fn round_trips_through_disk() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("deploy.toml");
        let mut config = DeploymentConfig::default();
        config.namespace_prefix = "info:lanl-repo".to_string();
        config.pages.federator = 25;
        config.dip_table = Some(PathBuf::from("dip_table.tsv"));
        config.save(&path).unwrap();
        assert_eq!(DeploymentConfig::load(&path).unwrap(), config);
    }

    #[test]
    fn unknown_keys_are_refused() {
        let err = toml::from_str::<DeploymentConfig>("namespace = \"typo\"").unwrap_err();
        assert!(err.to_string().contains("namespace"));
    }

    #[test]
    fn profile_and_registry_derive_from_config() {
        let mut config = DeploymentConfig::default();
        config.namespace_prefix = "info:lanl-repo".to_string();
        let profile = config.ingest_profile();
        assert_eq!(profile.package_namespace, "info:lanl-repo/i");
        assert_eq!(profile.container_placeholder, "info:lanl-repo/pro/DIDL");
        assert_eq!(profile.datastream_base, "http://127.0.0.1:8083/arc");

        config.disabled_transforms = vec!["format_crosswalk".to_string()];
        let registry = config.transform_registry();
        assert!(registry.resolve("format_crosswalk").is_none());
        assert!(registry.resolve("marcxml_to_mods").is_some());
    }

    #[test]
    fn tape_names_lists_sealed_tapes_only() {
        let dir = tempfile::tempdir().unwrap();
        let mut config = DeploymentConfig::default();
        config.data_dir = dir.path().to_path_buf();
        assert!(config.tape_names().unwrap().is_empty());

        std::fs::create_dir_all(config.tapes_dir()).unwrap();
        std::fs::write(config.tape_path("b2"), b"x").unwrap();
        std::fs::write(config.tape_index_path("b2"), b"x").unwrap();
        std::fs::write(config.tape_path("a1"), b"x").unwrap();
        assert_eq!(config.tape_names().unwrap(), vec!["a1", "b2"]);
    }
}
