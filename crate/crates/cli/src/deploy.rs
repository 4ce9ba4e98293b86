//! Builders that turn a config file into live components: opened stores,
//! protocol sources, the dissemination engine, and an in-process protocol
//! transport over local stores for commands that work without servers.

use std::path::Path;
use std::sync::{Arc, RwLock};

use anyhow::{Context, Result};

use didlrepo::arcstore::ArcStore;
use didlrepo::config::DeploymentConfig;
use didlrepo::dip::{ArcResolver, DipEngine, DipTable};
use didlrepo::locator::Locator;
use didlrepo::oaipmh::{InProcessTransport, TapeRepository};
use didlrepo::repo_index::{IndexSource, RepositoryIndex};

/// Loads a config file, rebasing its relative paths onto the file's own
/// directory so commands behave the same from any working directory.
pub fn load_config(path: &Path) -> Result<DeploymentConfig> {
    let mut config = DeploymentConfig::load(path)
        .with_context(|| format!("loading config {}", path.display()))?;
    let base = path.parent().unwrap_or_else(|| Path::new("."));
    if config.data_dir.is_relative() {
        config.data_dir = base.join(&config.data_dir);
    }
    if let Some(table) = &config.dip_table {
        if table.is_relative() {
            config.dip_table = Some(base.join(table));
        }
    }
    Ok(config)
}

pub fn open_repositories(config: &DeploymentConfig) -> Result<Vec<(String, TapeRepository)>> {
    let mut repos = Vec::new();
    for name in config.tape_names().context("listing tapes")? {
        let repo = TapeRepository::open(
            &config.tape_path(&name),
            &config.tape_index_path(&name),
            config.repo_base_url(&name),
        )
        .with_context(|| format!("opening tape `{name}`"))?;
        repos.push((name, repo));
    }
    Ok(repos)
}

pub fn open_arc_stores(config: &DeploymentConfig) -> Result<Vec<Arc<ArcStore>>> {
    let mut stores = Vec::new();
    let dir = config.arcs_dir();
    if !dir.is_dir() {
        return Ok(stores);
    }
    let mut paths: Vec<_> = std::fs::read_dir(&dir)
        .context("reading datastream store directory")?
        .filter_map(|entry| entry.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|e| e == "arc"))
        .collect();
    paths.sort();
    for path in paths {
        let index = path.with_extension("arc.idx");
        let store = ArcStore::open(&path, &index)
            .with_context(|| format!("opening datastream store {}", path.display()))?;
        stores.push(Arc::new(store));
    }
    Ok(stores)
}

pub fn load_dip_table(config: &DeploymentConfig) -> Result<DipTable> {
    match &config.dip_table {
        Some(path) if path.is_file() => {
            DipTable::load(path).with_context(|| format!("loading DIP table {}", path.display()))
        }
        _ => Ok(DipTable::new()),
    }
}

pub fn engine(config: &DeploymentConfig) -> Result<Arc<DipEngine>> {
    let table = load_dip_table(config)?;
    let stores = open_arc_stores(config)?;
    Ok(Arc::new(DipEngine::new(
        table,
        config.transform_registry(),
        Arc::new(ArcResolver::new(stores)),
    )))
}

pub fn open_index(config: &DeploymentConfig) -> Result<RepositoryIndex> {
    RepositoryIndex::open(&config.registry_path()).context("opening repository registry")
}

pub fn load_locator(config: &DeploymentConfig) -> Result<Locator> {
    let path = config.locator_path();
    if path.is_file() {
        Locator::load(&path).with_context(|| format!("loading locator state {}", path.display()))
    } else {
        Ok(Locator::new())
    }
}

/// A protocol transport wired to the local stores: the registry answers at
/// its configured base URL and every sealed tape at its repository URL.
/// Lets harvest-driven commands run without any server process.
pub fn in_process_transport(config: &DeploymentConfig) -> Result<InProcessTransport> {
    let mut transport = InProcessTransport::new(config.pages.repository);
    let index = Arc::new(RwLock::new(open_index(config)?));
    transport.register(
        &config.index_base_url(),
        Arc::new(IndexSource::new(index, config.index_base_url())),
    );
    for (_, repo) in open_repositories(config)? {
        let base = repo.base_url().to_string();
        transport.register(&base, Arc::new(repo));
    }
    Ok(transport)
}
