//! Harvesting client: walks a repository endpoint verb by verb, follows
//! resumption tokens, and extracts record metadata as the exact bytes that
//! appeared between the `<metadata>` tags of the response.
//!
//! [`OaiTransport`] abstracts the wire so harvests run identically over
//! HTTP or against in-process sources.

use std::collections::HashMap;
use std::sync::Arc;

use quick_xml::events::Event;
use quick_xml::Reader;
use thiserror::Error;

use crate::time::{SharedClock, SystemClock, UtcTimestamp};
use crate::xml::general_ref_char;

use super::dispatch::handle_request;
use super::RecordSource;

#[derive(Debug, Error)]
pub enum HarvestError {
    #[error("transport failure talking to `{base_url}`: {message}")]
    Transport { base_url: String, message: String },
    #[error("protocol error `{code}` from `{base_url}`: {message}")]
    Protocol {
        base_url: String,
        code: String,
        message: String,
    },
    #[error("malformed response from `{base_url}`: {message}")]
    Malformed { base_url: String, message: String },
}

impl HarvestError {
    pub fn code(&self) -> Option<&str> {
        match self {
            HarvestError::Protocol { code, .. } => Some(code),
            _ => None,
        }
    }

    /// True when the failure only says the selective window is empty.
    pub fn is_no_records_match(&self) -> bool {
        self.code() == Some("noRecordsMatch")
    }
}

// ---------------------------------------------------------------------------
// Transports
// ---------------------------------------------------------------------------

pub trait OaiTransport: Send + Sync {
    fn fetch(&self, base_url: &str, args: &[(String, String)])
        -> Result<Vec<u8>, HarvestError>;
}

/// Transport over HTTP GET with querystring arguments.
pub struct HttpTransport {
    agent: ureq::Agent,
}

impl HttpTransport {
    pub fn new() -> Self {
        HttpTransport {
            agent: ureq::Agent::config_builder()
                .http_status_as_error(false)
                .build()
                .into(),
        }
    }
}

impl Default for HttpTransport {
    fn default() -> Self {
        HttpTransport::new()
    }
}

impl OaiTransport for HttpTransport {
    fn fetch(
        &self,
        base_url: &str,
        args: &[(String, String)],
    ) -> Result<Vec<u8>, HarvestError> {
        let transport_err = |message: String| HarvestError::Transport {
            base_url: base_url.to_string(),
            message,
        };
        let mut response = self
            .agent
            .get(base_url)
            .query_pairs(args.iter().map(|(k, v)| (k.as_str(), v.as_str())))
            .call()
            .map_err(|e| transport_err(e.to_string()))?;
        let status = response.status();
        let body = response
            .body_mut()
            .read_to_vec()
            .map_err(|e| transport_err(e.to_string()))?;
        if !status.is_success() {
            return Err(transport_err(format!("HTTP status {status}")));
        }
        Ok(body)
    }
}

/// Transport that dispatches directly against registered in-process sources,
/// keyed by base URL.
pub struct InProcessTransport {
    sources: HashMap<String, Arc<dyn RecordSource>>,
    page_size: u64,
    clock: SharedClock,
}

impl InProcessTransport {
    pub fn new(page_size: u64) -> Self {
        InProcessTransport {
            sources: HashMap::new(),
            page_size,
            clock: Arc::new(SystemClock),
        }
    }

    pub fn with_clock(mut self, clock: SharedClock) -> Self {
        self.clock = clock;
        self
    }

    pub fn register(&mut self, base_url: impl Into<String>, source: Arc<dyn RecordSource>) {
        self.sources.insert(base_url.into(), source);
    }
}

impl OaiTransport for InProcessTransport {
    fn fetch(
        &self,
        base_url: &str,
        args: &[(String, String)],
    ) -> Result<Vec<u8>, HarvestError> {
        let source = self
            .sources
            .get(base_url)
            .ok_or_else(|| HarvestError::Transport {
                base_url: base_url.to_string(),
                message: "no source registered at this base URL".to_string(),
            })?;
        handle_request(source.as_ref(), args, self.clock.now(), self.page_size).map_err(|e| {
            HarvestError::Transport {
                base_url: base_url.to_string(),
                message: e.to_string(),
            }
        })
    }
}

// ---------------------------------------------------------------------------
// Client calls
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HarvestedRecord {
    pub identifier: String,
    pub datestamp: UtcTimestamp,
    pub sets: Vec<String>,
    /// Bytes between the metadata tags, verbatim (surrounding whitespace
    /// trimmed). Empty for header-only listings.
    pub metadata: Vec<u8>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RemoteIdentify {
    pub repository_name: String,
    pub base_url: String,
    pub earliest_datestamp: Option<String>,
    pub granularity: String,
    pub protocol_version: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RemoteFormat {
    pub prefix: String,
    pub namespace: String,
    pub schema: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RemoteSet {
    pub spec: String,
    pub name: String,
}

/// Selection arguments for one listing request.
#[derive(Debug, Clone, Copy, Default)]
pub struct ListParams<'a> {
    pub prefix: &'a str,
    pub from: Option<&'a str>,
    pub until: Option<&'a str>,
    pub set: Option<&'a str>,
    pub token: Option<&'a str>,
}

#[derive(Debug, Clone)]
pub struct ListPageResult {
    pub records: Vec<HarvestedRecord>,
    pub token: Option<String>,
}

/// Fetches a single listing page. `noRecordsMatch` comes back as a
/// [`HarvestError::Protocol`]; use
/// [`HarvestError::is_no_records_match`] to treat it as emptiness.
pub fn fetch_list_page(
    transport: &dyn OaiTransport,
    base_url: &str,
    verb: &str,
    params: &ListParams<'_>,
) -> Result<ListPageResult, HarvestError> {
    let mut args = vec![("verb".to_string(), verb.to_string())];
    if let Some(token) = params.token {
        args.push(("resumptionToken".to_string(), token.to_string()));
    } else {
        args.push(("metadataPrefix".to_string(), params.prefix.to_string()));
        if let Some(v) = params.from {
            args.push(("from".to_string(), v.to_string()));
        }
        if let Some(v) = params.until {
            args.push(("until".to_string(), v.to_string()));
        }
        if let Some(v) = params.set {
            args.push(("set".to_string(), v.to_string()));
        }
    }
    let body = transport.fetch(base_url, &args)?;
    let scan = scan_response(base_url, &body)?;
    if let Some((code, message)) = scan.error {
        return Err(HarvestError::Protocol {
            base_url: base_url.to_string(),
            code,
            message,
        });
    }
    Ok(ListPageResult {
        records: scan.records,
        token: scan.token,
    })
}

/// Harvests a complete record listing, following resumption tokens, feeding
/// every record to `sink`. An empty selective window yields zero records,
/// not an error. Returns the record count.
pub fn harvest_list_records(
    transport: &dyn OaiTransport,
    base_url: &str,
    params: &ListParams<'_>,
    mut sink: impl FnMut(HarvestedRecord),
) -> Result<u64, HarvestError> {
    let mut count = 0u64;
    let mut token: Option<String> = None;
    loop {
        let page_params = match &token {
            Some(t) => ListParams {
                token: Some(t),
                ..Default::default()
            },
            None => ListParams {
                token: None,
                ..*params
            },
        };
        let page = match fetch_list_page(transport, base_url, "ListRecords", &page_params) {
            Ok(page) => page,
            Err(e) if e.is_no_records_match() && token.is_none() => return Ok(0),
            Err(e) => return Err(e),
        };
        for record in page.records {
            count += 1;
            sink(record);
        }
        match page.token {
            Some(next) => token = Some(next),
            None => return Ok(count),
        }
    }
}

pub fn harvest_get_record(
    transport: &dyn OaiTransport,
    base_url: &str,
    identifier: &str,
    prefix: &str,
) -> Result<HarvestedRecord, HarvestError> {
    let args = vec![
        ("verb".to_string(), "GetRecord".to_string()),
        ("identifier".to_string(), identifier.to_string()),
        ("metadataPrefix".to_string(), prefix.to_string()),
    ];
    let body = transport.fetch(base_url, &args)?;
    let scan = scan_response(base_url, &body)?;
    if let Some((code, message)) = scan.error {
        return Err(HarvestError::Protocol {
            base_url: base_url.to_string(),
            code,
            message,
        });
    }
    scan.records
        .into_iter()
        .next()
        .ok_or_else(|| HarvestError::Malformed {
            base_url: base_url.to_string(),
            message: "GetRecord response without a record".to_string(),
        })
}

pub fn harvest_identify(
    transport: &dyn OaiTransport,
    base_url: &str,
) -> Result<RemoteIdentify, HarvestError> {
    let body = transport.fetch(base_url, &[("verb".to_string(), "Identify".to_string())])?;
    let tree = parse_tree(base_url, &body)?;
    check_tree_error(base_url, &tree)?;
    let identify = find_child(&tree, "Identify").ok_or_else(|| HarvestError::Malformed {
        base_url: base_url.to_string(),
        message: "response without Identify section".to_string(),
    })?;
    let text = |name: &str| {
        find_child(identify, name)
            .map(crate::xml::XmlElement::text_content)
            .unwrap_or_default()
    };
    Ok(RemoteIdentify {
        repository_name: text("repositoryName"),
        base_url: text("baseURL"),
        earliest_datestamp: find_child(identify, "earliestDatestamp")
            .map(crate::xml::XmlElement::text_content),
        granularity: text("granularity"),
        protocol_version: text("protocolVersion"),
    })
}

pub fn harvest_list_formats(
    transport: &dyn OaiTransport,
    base_url: &str,
    identifier: Option<&str>,
) -> Result<Vec<RemoteFormat>, HarvestError> {
    let mut args = vec![("verb".to_string(), "ListMetadataFormats".to_string())];
    if let Some(id) = identifier {
        args.push(("identifier".to_string(), id.to_string()));
    }
    let body = transport.fetch(base_url, &args)?;
    let tree = parse_tree(base_url, &body)?;
    check_tree_error(base_url, &tree)?;
    let section =
        find_child(&tree, "ListMetadataFormats").ok_or_else(|| HarvestError::Malformed {
            base_url: base_url.to_string(),
            message: "response without ListMetadataFormats section".to_string(),
        })?;
    Ok(section
        .child_elements()
        .filter(|e| e.local_name() == "metadataFormat")
        .map(|e| {
            let text = |name: &str| {
                find_child(e, name)
                    .map(crate::xml::XmlElement::text_content)
                    .unwrap_or_default()
            };
            RemoteFormat {
                prefix: text("metadataPrefix"),
                namespace: text("metadataNamespace"),
                schema: text("schema"),
            }
        })
        .collect())
}

pub fn harvest_list_sets(
    transport: &dyn OaiTransport,
    base_url: &str,
) -> Result<Vec<RemoteSet>, HarvestError> {
    let body = transport.fetch(base_url, &[("verb".to_string(), "ListSets".to_string())])?;
    let tree = parse_tree(base_url, &body)?;
    check_tree_error(base_url, &tree)?;
    let section = find_child(&tree, "ListSets").ok_or_else(|| HarvestError::Malformed {
        base_url: base_url.to_string(),
        message: "response without ListSets section".to_string(),
    })?;
    Ok(section
        .child_elements()
        .filter(|e| e.local_name() == "set")
        .map(|e| RemoteSet {
            spec: find_child(e, "setSpec")
                .map(crate::xml::XmlElement::text_content)
                .unwrap_or_default(),
            name: find_child(e, "setName")
                .map(crate::xml::XmlElement::text_content)
                .unwrap_or_default(),
        })
        .collect())
}

fn parse_tree(base_url: &str, bytes: &[u8]) -> Result<crate::xml::XmlElement, HarvestError> {
    crate::xml::parse(bytes).map_err(|e| HarvestError::Malformed {
        base_url: base_url.to_string(),
        message: e.to_string(),
    })
}

fn check_tree_error(
    base_url: &str,
    tree: &crate::xml::XmlElement,
) -> Result<(), HarvestError> {
    if let Some(err) = find_child(tree, "error") {
        return Err(HarvestError::Protocol {
            base_url: base_url.to_string(),
            code: err.attribute("code").unwrap_or("unknown").to_string(),
            message: err.text_content(),
        });
    }
    Ok(())
}

fn find_child<'a>(
    elem: &'a crate::xml::XmlElement,
    local: &str,
) -> Option<&'a crate::xml::XmlElement> {
    elem.child_elements().find(|e| e.local_name() == local)
}

// ---------------------------------------------------------------------------
// Streaming response scan
// ---------------------------------------------------------------------------

struct ScanResult {
    records: Vec<HarvestedRecord>,
    token: Option<String>,
    error: Option<(String, String)>,
}

#[derive(Default)]
struct PendingRecord {
    identifier: String,
    datestamp: String,
    sets: Vec<String>,
    metadata: Vec<u8>,
}

/// Streams a listing or GetRecord response, capturing each record's header
/// fields and the byte span of its metadata payload. Event positions tile
/// the input, so the captured span is exactly what the server sent.
fn scan_response(base_url: &str, bytes: &[u8]) -> Result<ScanResult, HarvestError> {
    let malformed = |message: String| HarvestError::Malformed {
        base_url: base_url.to_string(),
        message,
    };
    let text = std::str::from_utf8(bytes)
        .map_err(|e| malformed(format!("invalid UTF-8: {e}")))?;
    let mut reader = Reader::from_reader(text.as_bytes());
    let mut prev: u64 = 0;

    let mut stack: Vec<String> = Vec::new();
    let mut records = Vec::new();
    let mut token: Option<String> = None;
    let mut error: Option<(String, String)> = None;
    let mut pending: Option<PendingRecord> = None;
    let mut metadata_span: Option<(u64, usize)> = None;
    let mut text_buf = String::new();

    fn local(name: &str) -> String {
        match name.split_once(':') {
            Some((_, l)) => l.to_string(),
            None => name.to_string(),
        }
    }

    loop {
        let event = reader.read_event().map_err(|e| malformed(e.to_string()))?;
        let pos = reader.buffer_position();
        match event {
            Event::Start(e) => {
                let name = local(e.name().into_inner());
                if metadata_span.is_none() {
                    match name.as_str() {
                        "record" | "header" if pending.is_none() => {
                            pending = Some(PendingRecord::default());
                        }
                        "metadata" => {
                            metadata_span = Some((pos, stack.len()));
                        }
                        "error" => {
                            let code = e
                                .attributes()
                                .filter_map(|a| a.ok())
                                .find(|a| a.key.into_inner() == "code")
                                .and_then(|a| {
                                    a.normalized_value(quick_xml::XmlVersion::Implicit1_0)
                                        .ok()
                                        .map(|v| v.into_owned())
                                })
                                .unwrap_or_else(|| "unknown".to_string());
                            error = Some((code, String::new()));
                        }
                        _ => {}
                    }
                    text_buf.clear();
                }
                stack.push(name);
            }
            Event::Empty(e) => {
                if metadata_span.is_none() {
                    let name = local(e.name().into_inner());
                    if name == "metadata" {
                        if let Some(rec) = pending.as_mut() {
                            rec.metadata = Vec::new();
                        }
                    }
                }
            }
            Event::End(_) => {
                let name = stack.pop().unwrap_or_default();
                if let Some((start, depth)) = metadata_span {
                    if stack.len() == depth {
                        // `prev` is the position just before this end tag.
                        let slice = &bytes[start as usize..prev as usize];
                        let trimmed = trim_ascii(slice);
                        if let Some(rec) = pending.as_mut() {
                            rec.metadata = trimmed.to_vec();
                        }
                        metadata_span = None;
                        text_buf.clear();
                        prev = pos;
                        continue;
                    }
                    prev = pos;
                    continue;
                }
                match name.as_str() {
                    "identifier" => {
                        if let Some(rec) = pending.as_mut() {
                            if stack.last().map(String::as_str) == Some("header") {
                                rec.identifier = text_buf.trim().to_string();
                            }
                        }
                    }
                    "datestamp" => {
                        if let Some(rec) = pending.as_mut() {
                            rec.datestamp = text_buf.trim().to_string();
                        }
                    }
                    "setSpec" => {
                        if let Some(rec) = pending.as_mut() {
                            rec.sets.push(text_buf.trim().to_string());
                        }
                    }
                    "resumptionToken" => {
                        let t = text_buf.trim().to_string();
                        if !t.is_empty() {
                            token = Some(t);
                        }
                    }
                    "error" => {
                        if let Some((_, msg)) = error.as_mut() {
                            *msg = text_buf.trim().to_string();
                        }
                    }
                    "record" => {
                        if let Some(rec) = pending.take() {
                            records.push(finish_record(base_url, rec)?);
                        }
                    }
                    "header" => {
                        // Header-only listings close the record here; inside
                        // a full record the header is just a section.
                        if stack.last().map(String::as_str) == Some("ListIdentifiers") {
                            if let Some(rec) = pending.take() {
                                records.push(finish_record(base_url, rec)?);
                            }
                        }
                    }
                    _ => {}
                }
                text_buf.clear();
            }
            Event::Text(t) => {
                if metadata_span.is_none() {
                    text_buf.push_str(&t.xml_content(quick_xml::XmlVersion::Implicit1_0));
                }
            }
            Event::CData(c) => {
                if metadata_span.is_none() {
                    text_buf.push_str(c.as_ref());
                }
            }
            Event::GeneralRef(r) => {
                if metadata_span.is_none() {
                    if let Some(ch) = general_ref_char(&r) {
                        text_buf.push(ch);
                    }
                }
            }
            Event::Eof => break,
            _ => {}
        }
        prev = pos;
    }
    Ok(ScanResult {
        records,
        token,
        error,
    })
}

fn finish_record(base_url: &str, rec: PendingRecord) -> Result<HarvestedRecord, HarvestError> {
    let datestamp: UtcTimestamp =
        rec.datestamp
            .parse()
            .map_err(|_| HarvestError::Malformed {
                base_url: base_url.to_string(),
                message: format!(
                    "record `{}` carries unusable datestamp `{}`",
                    rec.identifier, rec.datestamp
                ),
            })?;
    Ok(HarvestedRecord {
        identifier: rec.identifier,
        datestamp,
        sets: rec.sets,
        metadata: rec.metadata,
    })
}

fn trim_ascii(bytes: &[u8]) -> &[u8] {
    let start = bytes
        .iter()
        .position(|b| !b.is_ascii_whitespace())
        .unwrap_or(bytes.len());
    let end = bytes
        .iter()
        .rposition(|b| !b.is_ascii_whitespace())
        .map(|i| i + 1)
        .unwrap_or(start);
    &bytes[start..end]
}
