//! `didlrepo`: operator commands for a desk-scale archival repository.
//!
//! Exit codes: 0 success, 1 operational failure (bad objects in a batch,
//! unresolvable identifier, transport errors, failed verification),
//! 2 usage or configuration errors.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

mod commands;
mod deploy;
mod manifest;

use commands::{ServeSelection, TableAction};

#[derive(Parser)]
#[command(name = "didlrepo", version, about = "archival repository operator commands")]
struct Cli {
    /// Config file.
    #[arg(long, global = true, default_value = "didlrepo.toml")]
    config: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a fresh config file and create its data directories.
    Init {
        /// Overwrite an existing config file.
        #[arg(long)]
        force: bool,
    },
    /// Ingest a batch of object manifests into one new sealed tape.
    ///
    /// BATCH is a manifest file or a directory of them. Each run creates
    /// one tape and one datastream store, seals both, and registers the
    /// tape's repository endpoint in the index. Failed objects are
    /// skipped and reported; the exit code is 1 when any failed.
    Ingest {
        /// Manifest file or directory of *.toml manifests.
        batch: PathBuf,
        /// Name the tape instead of deriving one from the clock.
        #[arg(long)]
        tape: Option<String>,
    },
    /// Serve any subset of the endpoints over HTTP.
    Serve(ServeArgs),
    /// Harvest records from any protocol endpoint.
    Harvest {
        /// Endpoint base URL, e.g. http://127.0.0.1:8081/repo/tape-1.
        base_url: String,
        /// Metadata prefix to ask for.
        #[arg(long, default_value = "DIDL")]
        prefix: String,
        /// Inclusive lower datestamp bound (or `now`).
        #[arg(long)]
        from: Option<String>,
        /// Inclusive upper datestamp bound (or `now`).
        #[arg(long)]
        until: Option<String>,
        /// Set to restrict to.
        #[arg(long)]
        set: Option<String>,
        /// Directory for one file per record plus index.tsv; prints
        /// identifiers when absent.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Resolve an identifier to fetch plans.
    Locate {
        /// Content identifier or package identifier (with optional #fragment).
        identifier: String,
        /// Query a running locator endpoint instead of local state.
        #[arg(long)]
        url: Option<String>,
    },
    /// Rebuild locator state by harvesting the registry and repositories.
    Populate {
        /// Harvest live HTTP endpoints instead of the local stores.
        #[arg(long)]
        via_http: bool,
    },
    /// List or edit the service binding table.
    #[command(name = "dip-table")]
    DipTable {
        #[command(subcommand)]
        action: TableCommand,
    },
    /// Print tape statistics.
    #[command(name = "inspect-tape")]
    InspectTape {
        /// Tape name from the config's data directory, or a *.xmltape path.
        name: String,
        /// Rescan the tape and check the sealed index against it.
        #[arg(long)]
        verify: bool,
    },
}

#[derive(Args)]
struct ServeArgs {
    /// Serve everything below.
    #[arg(long)]
    all: bool,
    /// Protocol endpoint per sealed tape, /repo/<name>.
    #[arg(long)]
    repositories: bool,
    /// Repository registry endpoint, /index.
    #[arg(long)]
    index: bool,
    /// Stored datastream bytes, /arc/<token>.
    #[arg(long)]
    datastreams: bool,
    /// Identifier resolution, /lookup?id=.
    #[arg(long)]
    locator: bool,
    /// Federating protocol endpoint, /oai.
    #[arg(long)]
    federator: bool,
    /// Context-object resolver, /openurl.
    #[arg(long)]
    openurl: bool,
    /// Stop after this many seconds instead of running until killed.
    #[arg(long)]
    for_seconds: Option<u64>,
}

#[derive(Subcommand)]
enum TableCommand {
    /// Print all rows.
    List,
    /// Add one row; the (service, placeholder) pair must be new.
    Add {
        service_id: String,
        placeholder: String,
        transform_ref: String,
        description: String,
    },
    /// Remove one row by (service, placeholder).
    Remove {
        service_id: String,
        placeholder: String,
    },
    /// Check every row's transform against the registry.
    Check,
}

fn run(cli: Cli) -> anyhow::Result<i32> {
    match cli.command {
        Command::Init { force } => commands::init(&cli.config, force),
        Command::Ingest { batch, tape } => commands::ingest(&cli.config, &batch, tape),
        Command::Serve(args) => {
            let selection = if args.all {
                ServeSelection::all()
            } else {
                ServeSelection {
                    repositories: args.repositories,
                    index: args.index,
                    datastreams: args.datastreams,
                    locator: args.locator,
                    federator: args.federator,
                    openurl: args.openurl,
                }
            };
            commands::serve(&cli.config, selection, args.for_seconds)
        }
        Command::Harvest {
            base_url,
            prefix,
            from,
            until,
            set,
            out,
        } => {
            let from = from.as_deref().map(commands::resolve_datestamp).transpose()?;
            let until = until.as_deref().map(commands::resolve_datestamp).transpose()?;
            commands::harvest(
                &base_url,
                &prefix,
                from.as_deref(),
                until.as_deref(),
                set.as_deref(),
                out.as_deref(),
            )
        }
        Command::Locate { identifier, url } => {
            commands::locate(&cli.config, &identifier, url.as_deref())
        }
        Command::Populate { via_http } => commands::populate(&cli.config, via_http),
        Command::DipTable { action } => {
            let action = match action {
                TableCommand::List => TableAction::List,
                TableCommand::Add {
                    service_id,
                    placeholder,
                    transform_ref,
                    description,
                } => TableAction::Add {
                    service_id,
                    placeholder,
                    transform_ref,
                    description,
                },
                TableCommand::Remove {
                    service_id,
                    placeholder,
                } => TableAction::Remove {
                    service_id,
                    placeholder,
                },
                TableCommand::Check => TableAction::Check,
            };
            commands::dip_table(&cli.config, action)
        }
        Command::InspectTape { name, verify } => {
            commands::inspect_tape(&cli.config, &name, verify)
        }
    }
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env()
                .unwrap_or_else(|_| tracing_subscriber::EnvFilter::new("warn")),
        )
        .with_writer(std::io::stderr)
        .init();

    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
