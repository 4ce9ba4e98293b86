//! Harvesting protocol engine (OAI-PMH v2).
//!
//! [`RecordSource`] is the storage-facing trait: tape repositories, the
//! repository index and the federator all implement it, and one dispatcher
//! turns protocol requests into XML responses over any of them. The harvest
//! side ([`harvest`]) walks a remote endpoint page by page and hands back
//! metadata payloads byte for byte as they appeared on the wire.

mod dispatch;
mod harvest;
mod sources;
mod token;

pub use dispatch::{handle_request, UpstreamFailure};
pub use harvest::{
    fetch_list_page, harvest_get_record, harvest_identify, harvest_list_formats,
    harvest_list_records, harvest_list_sets, HarvestError, HarvestedRecord, HttpTransport,
    InProcessTransport, ListPageResult, ListParams, OaiTransport, RemoteFormat, RemoteIdentify,
    RemoteSet,
};
pub use sources::{MemorySource, TapeRepository};
pub(crate) use sources::within;
pub use token::{decode_token, encode_token, ResumptionState};

use crate::time::UtcTimestamp;

pub const OAI_NS: &str = "http://www.openarchives.org/OAI/2.0/";
pub const PROTOCOL_VERSION: &str = "2.0";
pub const GRANULARITY: &str = "YYYY-MM-DDThh:mm:ssZ";

/// Prefix under which stored packages are served unchanged.
pub const DIDL_PREFIX: &str = "DIDL";

pub fn didl_format() -> MetadataFormat {
    MetadataFormat {
        prefix: DIDL_PREFIX.to_string(),
        namespace: crate::didl::DIDL_NS.to_string(),
        schema: "http://standards.iso.org/ittf/PubliclyAvailableStandards/MPEG-21_schema_files/did/didl.xsd"
            .to_string(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Verb {
    Identify,
    ListMetadataFormats,
    ListSets,
    ListIdentifiers,
    ListRecords,
    GetRecord,
}

impl Verb {
    pub fn parse(s: &str) -> Option<Verb> {
        match s {
            "Identify" => Some(Verb::Identify),
            "ListMetadataFormats" => Some(Verb::ListMetadataFormats),
            "ListSets" => Some(Verb::ListSets),
            "ListIdentifiers" => Some(Verb::ListIdentifiers),
            "ListRecords" => Some(Verb::ListRecords),
            "GetRecord" => Some(Verb::GetRecord),
        _ => None,
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            Verb::Identify => "Identify",
            Verb::ListMetadataFormats => "ListMetadataFormats",
            Verb::ListSets => "ListSets",
            Verb::ListIdentifiers => "ListIdentifiers",
            Verb::ListRecords => "ListRecords",
            Verb::GetRecord => "GetRecord",
        }
    }
}

/// Protocol error conditions, rendered as `<error code="…">`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorCode {
    BadVerb,
    BadArgument,
    BadResumptionToken,
    CannotDisseminateFormat,
    IdDoesNotExist,
    NoRecordsMatch,
    NoSetHierarchy,
}

impl ErrorCode {
    pub fn as_str(&self) -> &'static str {
        match self {
            ErrorCode::BadVerb => "badVerb",
            ErrorCode::BadArgument => "badArgument",
            ErrorCode::BadResumptionToken => "badResumptionToken",
            ErrorCode::CannotDisseminateFormat => "cannotDisseminateFormat",
            ErrorCode::IdDoesNotExist => "idDoesNotExist",
            ErrorCode::NoRecordsMatch => "noRecordsMatch",
            ErrorCode::NoSetHierarchy => "noSetHierarchy",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IdentifyInfo {
    pub repository_name: String,
    pub base_url: String,
    pub earliest_datestamp: Option<UtcTimestamp>,
    pub admin_email: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MetadataFormat {
    pub prefix: String,
    pub namespace: String,
    pub schema: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SetInfo {
    pub spec: String,
    pub name: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RecordHeader {
    pub identifier: String,
    pub datestamp: UtcTimestamp,
    pub sets: Vec<String>,
}

/// One served record: header plus the metadata payload as raw XML bytes,
/// embedded in responses without reserialization.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OaiRecord {
    pub header: RecordHeader,
    pub metadata: Vec<u8>,
}

/// Selective-harvesting window and pagination for one listing call.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ListQuery {
    pub prefix: String,
    pub from: Option<UtcTimestamp>,
    pub until: Option<UtcTimestamp>,
    pub set: Option<String>,
    pub offset: u64,
    pub limit: u64,
}

#[derive(Debug, Clone)]
pub struct ListChunk {
    pub records: Vec<OaiRecord>,
    pub complete_size: Option<u64>,
    pub has_more: bool,
}

/// How a source refuses a request; the dispatcher maps these onto protocol
/// error codes, except `Upstream`, which is a transport-level failure.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum SourceError {
    IdDoesNotExist,
    CannotDisseminateFormat,
    NoSetHierarchy,
    Upstream(String),
}

/// Anything that can answer the six protocol verbs.
///
/// Implementations check the identifier before the format, so an unknown
/// identifier reports `idDoesNotExist` even when the format is also wrong.
pub trait RecordSource: Send + Sync {
    fn identify(&self) -> IdentifyInfo;

    /// Formats available, optionally narrowed to one item.
    fn formats(&self, identifier: Option<&str>) -> Result<Vec<MetadataFormat>, SourceError>;

    /// `None` means the source exposes no set hierarchy.
    fn sets(&self) -> Option<Vec<SetInfo>>;

    fn get(&self, identifier: &str, prefix: &str) -> Result<OaiRecord, SourceError>;

    fn list(&self, query: &ListQuery) -> Result<ListChunk, SourceError>;
}
