//! One function per subcommand. Each returns the process exit code so
//! main() stays a thin dispatcher: 0 for success, 1 for operational
//! failures, 2 for usage and config problems (also what argument parsing
//! uses).

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::{Arc, RwLock};
use std::time::Duration;

use anyhow::{Context, Result};

use didlrepo::arcstore::ArcWriter;
use didlrepo::config::DeploymentConfig;
use didlrepo::dip::{DipTable, DipTableEntry};
use didlrepo::federator::Federator;
use didlrepo::ingest::build_aip;
use didlrepo::locator::{HttpLocator, LocatorClient};
use didlrepo::oaipmh::{harvest_list_records, HttpTransport, ListParams};
use didlrepo::openurl::OpenUrlResolver;
use didlrepo::repo_index::{IndexSource, RepoEntry};
use didlrepo::server::{HttpServer, Router};
use didlrepo::tape;
use didlrepo::time::{Clock, SystemClock, UtcTimestamp};

use crate::deploy;
use crate::manifest;

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILURE: i32 = 1;

/// Writes a fresh config file and the data directories it points at.
pub fn init(path: &Path, force: bool) -> Result<i32> {
    if path.exists() && !force {
        anyhow::bail!(
            "{} already exists; pass --force to overwrite",
            path.display()
        );
    }
    let mut config = DeploymentConfig::default();
    config.dip_table = Some(PathBuf::from("dip_table.tsv"));
    config.save(path).context("writing config")?;

    let resolved = deploy::load_config(path)?;
    std::fs::create_dir_all(resolved.tapes_dir()).context("creating tape directory")?;
    std::fs::create_dir_all(resolved.arcs_dir()).context("creating datastream directory")?;
    let table_path = resolved.dip_table.as_ref().expect("set above");
    if !table_path.exists() {
        DipTable::new().save(table_path).context("writing empty DIP table")?;
    }
    println!("wrote {}", path.display());
    println!("data under {}", resolved.data_dir.display());
    Ok(EXIT_OK)
}

/// Ingests a batch: one new tape and one datastream store per run, sealed
/// at the end, then registered in the repository index. Object failures
/// are reported and skipped; the batch keeps going.
pub fn ingest(config_path: &Path, batch: &Path, tape_name: Option<String>) -> Result<i32> {
    let config = deploy::load_config(config_path)?;
    std::fs::create_dir_all(config.tapes_dir()).context("creating tape directory")?;
    std::fs::create_dir_all(config.arcs_dir()).context("creating datastream directory")?;

    let clock = SystemClock;
    let created = clock.now();
    let name = match tape_name {
        Some(name) => {
            if config.tape_path(&name).exists() {
                anyhow::bail!("tape `{name}` already exists; tapes are never rewritten");
            }
            name
        }
        None => {
            let base = format!("tape-{}", created.compact());
            let mut name = base.clone();
            let mut n = 1;
            while config.tape_path(&name).exists() {
                n += 1;
                name = format!("{base}-{n}");
            }
            name
        }
    };

    let paths = manifest::batch_paths(batch)?;
    let tape_identifier = format!("{}/xmltape/{}", config.namespace_prefix, name);
    let mut tape_writer = tape::TapeWriter::create(&config.tape_path(&name), &tape_identifier, created)
        .context("creating tape")?;
    let mut arc_writer =
        ArcWriter::create(&config.arc_path(&name), created).context("creating datastream store")?;

    let profile = config.ingest_profile();
    let mut failures = 0usize;
    let mut packages = 0usize;
    for path in &paths {
        let outcome = manifest::load(path)
            .and_then(|m| build_aip(&m, &mut arc_writer, &clock, &profile).map_err(Into::into))
            .and_then(|aip| {
                let bytes = didlrepo::didl::serialize_package(&aip);
                tape_writer.append(&bytes).map_err(anyhow::Error::from)?;
                Ok(aip.package_id)
            });
        match outcome {
            Ok(package_id) => {
                packages += 1;
                println!("{package_id}  <-  {}", path.display());
            }
            Err(e) => {
                failures += 1;
                eprintln!("error: {}: {e:#}", path.display());
            }
        }
    }

    let datastreams = arc_writer.entries().len();
    tape_writer
        .seal(&config.tape_index_path(&name))
        .context("sealing tape")?;
    arc_writer
        .finish(&config.arc_index_path(&name))
        .context("sealing datastream store")?;

    let base_url = config.repo_base_url(&name);
    let mut index = deploy::open_index(&config)?;
    index
        .register(RepoEntry {
            base_url: base_url.clone(),
            description: format!("sealed tape {name}, {packages} packages"),
            created,
        })
        .context("registering repository")?;

    println!(
        "sealed tape `{name}`: {packages} packages, {datastreams} stored datastreams, {failures} failures"
    );
    println!("registered {base_url}");
    Ok(if failures > 0 { EXIT_FAILURE } else { EXIT_OK })
}

#[derive(Debug, Clone, Copy, Default)]
pub struct ServeSelection {
    pub repositories: bool,
    pub index: bool,
    pub datastreams: bool,
    pub locator: bool,
    pub federator: bool,
    pub openurl: bool,
}

impl ServeSelection {
    pub fn all() -> Self {
        ServeSelection {
            repositories: true,
            index: true,
            datastreams: true,
            locator: true,
            federator: true,
            openurl: true,
        }
    }

    pub fn any(&self) -> bool {
        self.repositories
            || self.index
            || self.datastreams
            || self.locator
            || self.federator
            || self.openurl
    }
}

/// Starts the selected services, each on its configured address. Services
/// that share an address share one listener. Runs until killed, or for
/// `--for-seconds` when given.
pub fn serve(config_path: &Path, selection: ServeSelection, for_seconds: Option<u64>) -> Result<i32> {
    let config = deploy::load_config(config_path)?;
    if !selection.any() {
        anyhow::bail!("nothing selected; pass service flags or --all");
    }

    let clock = Arc::new(SystemClock);
    let mut routers: BTreeMap<String, Router> = BTreeMap::new();
    let router_for = move |routers: &mut BTreeMap<String, Router>, addr: &str| {
        if !routers.contains_key(addr) {
            routers.insert(addr.to_string(), Router::new(clock.clone()));
        }
    };

    if selection.repositories {
        let addr = config.endpoints.repositories.clone();
        router_for(&mut routers, &addr);
        let router = routers.get_mut(&addr).expect("just inserted");
        for (name, repo) in deploy::open_repositories(&config)? {
            router.add_repo(name, Arc::new(repo), config.pages.repository);
        }
    }
    if selection.index {
        let addr = config.endpoints.index.clone();
        router_for(&mut routers, &addr);
        let index = Arc::new(RwLock::new(deploy::open_index(&config)?));
        routers.get_mut(&addr).expect("just inserted").set_index(
            Arc::new(IndexSource::new(index, config.index_base_url())),
            config.pages.index,
        );
    }
    if selection.datastreams {
        let addr = config.endpoints.datastreams.clone();
        router_for(&mut routers, &addr);
        let router = routers.get_mut(&addr).expect("just inserted");
        for store in deploy::open_arc_stores(&config)? {
            router.add_arc(store);
        }
    }
    if selection.locator {
        let addr = config.endpoints.locator.clone();
        router_for(&mut routers, &addr);
        let locator = Arc::new(RwLock::new(deploy::load_locator(&config)?));
        routers
            .get_mut(&addr)
            .expect("just inserted")
            .set_locator(locator);
    }
    if selection.federator {
        let addr = config.endpoints.federator.clone();
        router_for(&mut routers, &addr);
        let federator = Federator::new(
            config.federator_base_url(),
            config.index_base_url(),
            Arc::new(HttpTransport::new()),
            Arc::new(HttpLocator::new(config.locator_base_url())),
            deploy::engine(&config)?,
            Duration::from_secs(config.index_cache_ttl_seconds),
        );
        routers
            .get_mut(&addr)
            .expect("just inserted")
            .set_federator(Arc::new(federator), config.pages.federator);
    }
    if selection.openurl {
        let addr = config.endpoints.openurl.clone();
        router_for(&mut routers, &addr);
        let resolver = OpenUrlResolver::new(
            Arc::new(HttpLocator::new(config.locator_base_url())),
            Arc::new(HttpTransport::new()),
            deploy::engine(&config)?,
        );
        routers
            .get_mut(&addr)
            .expect("just inserted")
            .set_openurl(Arc::new(resolver));
    }

    let mut servers = Vec::new();
    for (addr, router) in routers {
        let routes = router.routes();
        let server = HttpServer::start(&addr, Arc::new(router))
            .map_err(|e| anyhow::anyhow!("binding {addr}: {e}"))?;
        println!("listening on {}", server.base());
        for route in routes {
            println!("  {route}");
        }
        servers.push(server);
    }

    match for_seconds {
        Some(seconds) => std::thread::sleep(Duration::from_secs(seconds)),
        None => loop {
            std::thread::sleep(Duration::from_millis(500));
        },
    }
    Ok(EXIT_OK)
}

/// Harvests every record a protocol endpoint will yield for the window,
/// writing one file per record plus an `index.tsv` when an output
/// directory is given, otherwise listing identifiers.
pub fn harvest(
    base_url: &str,
    prefix: &str,
    from: Option<&str>,
    until: Option<&str>,
    set: Option<&str>,
    out: Option<&Path>,
) -> Result<i32> {
    let transport = HttpTransport::new();
    let params = ListParams {
        prefix,
        from,
        until,
        set,
        token: None,
    };

    if let Some(dir) = out {
        std::fs::create_dir_all(dir).context("creating output directory")?;
        let mut rows = Vec::new();
        let mut n = 0u64;
        harvest_list_records(&transport, base_url, &params, |record| {
            n += 1;
            let file = format!("{n:06}.xml");
            if let Err(e) = std::fs::write(dir.join(&file), &record.metadata) {
                eprintln!("error: writing {file}: {e}");
            }
            rows.push(format!(
                "{file}\t{}\t{}",
                record.identifier, record.datestamp
            ));
        })
        .with_context(|| format!("harvesting {base_url}"))?;
        std::fs::write(dir.join("index.tsv"), rows.join("\n") + "\n")
            .context("writing harvest index")?;
        println!("harvested {n} records from {base_url} into {}", dir.display());
    } else {
        let mut n = 0u64;
        harvest_list_records(&transport, base_url, &params, |record| {
            n += 1;
            println!("{}\t{}", record.identifier, record.datestamp);
        })
        .with_context(|| format!("harvesting {base_url}"))?;
        println!("harvested {n} records from {base_url}");
    }
    Ok(EXIT_OK)
}

/// Resolves one identifier to fetch plans, from the local locator state or
/// a running locator endpoint.
pub fn locate(config_path: &Path, identifier: &str, via_url: Option<&str>) -> Result<i32> {
    let plans = match via_url {
        Some(url) => HttpLocator::new(url)
            .lookup(identifier)
            .map_err(|e| anyhow::anyhow!("locator endpoint: {e}"))?,
        None => {
            let config = deploy::load_config(config_path)?;
            deploy::load_locator(&config)?.resolve(identifier)
        }
    };
    if plans.is_empty() {
        eprintln!("no plans for {identifier}");
        return Ok(EXIT_FAILURE);
    }
    println!("{}", serde_json::to_string_pretty(&plans)?);
    Ok(EXIT_OK)
}

/// Rebuilds locator state by harvesting the registry and every registered
/// repository, then saves it. By default this runs in process over the
/// local stores; `--via-http` harvests live endpoints instead.
pub fn populate(config_path: &Path, via_http: bool) -> Result<i32> {
    let config = deploy::load_config(config_path)?;
    let mut locator = deploy::load_locator(&config)?;
    let stats = if via_http {
        locator
            .populate(&HttpTransport::new(), &config.index_base_url())
            .context("harvest-driven populate over HTTP")?
    } else {
        let transport = deploy::in_process_transport(&config)?;
        locator
            .populate(&transport, &config.index_base_url())
            .context("harvest-driven populate")?
    };
    locator
        .save(&config.locator_path())
        .context("saving locator state")?;
    println!(
        "visited {} repositories, saw {} records, added {} package rows and {} content rows",
        stats.repos_visited, stats.records_seen, stats.packages_added, stats.content_rows_added
    );
    for (repo, error) in &stats.repos_failed {
        eprintln!("warning: {repo}: {error}");
    }
    println!("saved {}", config.locator_path().display());
    Ok(if stats.repos_failed.is_empty() {
        EXIT_OK
    } else {
        EXIT_FAILURE
    })
}

pub enum TableAction {
    List,
    Add {
        service_id: String,
        placeholder: String,
        transform_ref: String,
        description: String,
    },
    Remove {
        service_id: String,
        placeholder: String,
    },
    Check,
}

fn table_path(config: &DeploymentConfig) -> Result<PathBuf> {
    config
        .dip_table
        .clone()
        .ok_or_else(|| anyhow::anyhow!("config has no dip_table path"))
}

/// Lists or edits the service binding table.
pub fn dip_table(config_path: &Path, action: TableAction) -> Result<i32> {
    let config = deploy::load_config(config_path)?;
    match action {
        TableAction::List => {
            let table = deploy::load_dip_table(&config)?;
            for entry in table.entries() {
                println!(
                    "{}\t{}\t{}\t{}",
                    entry.service_id, entry.placeholder_value, entry.transform_ref, entry.description
                );
            }
            println!("({} rows)", table.entries().len());
            Ok(EXIT_OK)
        }
        TableAction::Add {
            service_id,
            placeholder,
            transform_ref,
            description,
        } => {
            let path = table_path(&config)?;
            let mut table = deploy::load_dip_table(&config)?;
            table.insert(DipTableEntry {
                service_id,
                placeholder_value: placeholder,
                transform_ref,
                description,
            })?;
            table.save(&path).context("saving DIP table")?;
            println!("({} rows)", table.entries().len());
            Ok(EXIT_OK)
        }
        TableAction::Remove {
            service_id,
            placeholder,
        } => {
            let path = table_path(&config)?;
            let table = deploy::load_dip_table(&config)?;
            let mut kept = DipTable::new();
            let mut removed = 0usize;
            for entry in table.entries() {
                if entry.service_id == service_id && entry.placeholder_value == placeholder {
                    removed += 1;
                } else {
                    kept.insert(entry.clone()).expect("re-inserting unique rows");
                }
            }
            if removed == 0 {
                eprintln!("no row ({service_id}, {placeholder})");
                return Ok(EXIT_FAILURE);
            }
            kept.save(&path).context("saving DIP table")?;
            println!("removed {removed} row(s), {} remain", kept.entries().len());
            Ok(EXIT_OK)
        }
        TableAction::Check => {
            let table = deploy::load_dip_table(&config)?;
            table.validate(&config.transform_registry())?;
            println!("ok: {} rows, all transforms registered", table.entries().len());
            Ok(EXIT_OK)
        }
    }
}

/// Prints tape statistics; `--verify` additionally rescans the whole tape
/// and checks the sealed index against it.
pub fn inspect_tape(config_path: &Path, name: &str, verify: bool) -> Result<i32> {
    let config = deploy::load_config(config_path)?;
    let (tape_path, index_path) = if name.ends_with(".xmltape") {
        let p = PathBuf::from(name);
        let idx = p.with_extension("xmltape.idx");
        (p, idx)
    } else {
        (config.tape_path(name), config.tape_index_path(name))
    };
    let store = tape::TapeStore::open(&tape_path, &index_path)
        .with_context(|| format!("opening {}", tape_path.display()))?;

    let admin = store.admin();
    println!("tape:       {}", tape_path.display());
    println!("identifier: {}", admin.identifier);
    println!("created:    {}", admin.created);
    println!("records:    {}", store.len());
    let by_date = store.entries_by_datestamp();
    if let (Some(first), Some(last)) = (by_date.first(), by_date.last()) {
        println!("earliest:   {}", first.datestamp);
        println!("latest:     {}", last.datestamp);
    }
    let size = std::fs::metadata(&tape_path).map(|m| m.len()).unwrap_or(0);
    println!("bytes:      {size}");

    if verify {
        let rescanned = tape::rebuild_index(&tape_path).context("rescanning tape")?;
        if rescanned == store.entries() {
            println!("verify:     index matches a full scan ({} entries)", rescanned.len());
        } else {
            eprintln!(
                "verify: MISMATCH: index has {} entries, scan found {}",
                store.entries().len(),
                rescanned.len()
            );
            return Ok(EXIT_FAILURE);
        }
    }
    Ok(EXIT_OK)
}

/// Timestamp helper for harvest windows: `now`, or an exact protocol
/// datestamp passed through.
pub fn resolve_datestamp(raw: &str) -> Result<String> {
    if raw == "now" {
        return Ok(SystemClock.now().to_string());
    }
    raw.parse::<UtcTimestamp>()
        .map(|t| t.to_string())
        .map_err(|e| anyhow::anyhow!("{e}"))
}
