//! A modular repository for compound digital objects.
//!
//! Objects are ingested as XML archival packages, appended to write-once
//! tape and binary-container files, and surfaced through a harvesting
//! protocol. A repository index and an identifier locator sit above the
//! autonomous stores; a federator and an OpenURL resolver expose the whole
//! collection through single endpoints, with disseminations produced by an
//! engine that binds transforms to packages via placeholder declarations.

pub mod arcstore;
pub mod config;
pub mod didl;
pub mod dip;
pub mod federator;
pub mod ids;
pub mod ingest;
pub mod locator;
pub mod oaipmh;
pub mod openurl;
pub mod repo_index;
pub mod server;
pub mod synth;
pub mod tape;
pub mod time;
pub mod xml;
