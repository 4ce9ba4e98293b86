//! Request validation and response rendering.
//!
//! Responses are assembled as strings so record metadata can be embedded
//! byte for byte. Protocol violations come back as `<error>` responses; only
//! a failure to reach an upstream repository surfaces as a Rust error, so
//! transport layers can map it to a gateway status.

use thiserror::Error;

use crate::time::{parse_oai_date, DateBound, UtcTimestamp};
use crate::xml::escape_text;

use super::token::{decode_token, encode_token, ResumptionState};
use super::{
    ErrorCode, ListQuery, OaiRecord, RecordSource, SourceError, Verb, GRANULARITY,
    PROTOCOL_VERSION,
};

#[derive(Debug, Error)]
#[error("upstream repository failure: {0}")]
pub struct UpstreamFailure(pub String);

/// Handles one protocol request expressed as decoded key/value arguments
/// (including `verb`). Returns the complete response document.
pub fn handle_request(
    source: &dyn RecordSource,
    args: &[(String, String)],
    now: UtcTimestamp,
    page_size: u64,
) -> Result<Vec<u8>, UpstreamFailure> {
    let base_url = source.identify().base_url;

    let verbs: Vec<&str> = args
        .iter()
        .filter(|(k, _)| k == "verb")
        .map(|(_, v)| v.as_str())
        .collect();
    let verb = match verbs.as_slice() {
        [one] => Verb::parse(one),
        _ => None,
    };
    let Some(verb) = verb else {
        return Ok(error_response(
            &base_url,
            now,
            &[],
            ErrorCode::BadVerb,
            "missing or illegal verb",
        ));
    };

    let rest: Vec<(&str, &str)> = args
        .iter()
        .filter(|(k, _)| k != "verb")
        .map(|(k, v)| (k.as_str(), v.as_str()))
        .collect();

    let bad_argument = |msg: &str| {
        Ok(error_response(&base_url, now, &[], ErrorCode::BadArgument, msg))
    };

    let mut seen: Vec<&str> = rest.iter().map(|(k, _)| *k).collect();
    seen.sort_unstable();
    if seen.windows(2).any(|w| w[0] == w[1]) {
        return bad_argument("repeated argument");
    }

    let legal: &[&str] = match verb {
        Verb::Identify => &[],
        Verb::ListMetadataFormats => &["identifier"],
        Verb::ListSets => &["resumptionToken"],
        Verb::GetRecord => &["identifier", "metadataPrefix"],
        Verb::ListIdentifiers | Verb::ListRecords => {
            &["metadataPrefix", "from", "until", "set", "resumptionToken"]
        }
    };
    if let Some((name, _)) = rest.iter().find(|(k, _)| !legal.contains(k)) {
        return bad_argument(&format!("argument `{name}` not allowed for {}", verb.as_str()));
    }

    let arg = |name: &str| rest.iter().find(|(k, _)| *k == name).map(|(_, v)| *v);
    let echo: Vec<(String, String)> = std::iter::once(("verb".to_string(), verb.as_str().to_string()))
        .chain(rest.iter().map(|(k, v)| (k.to_string(), v.to_string())))
        .collect();

    match verb {
        Verb::Identify => Ok(render_identify(source, &base_url, now, &echo)),
        Verb::ListMetadataFormats => {
            match source.formats(arg("identifier")) {
                Ok(formats) => {
                    let mut body = String::from("<ListMetadataFormats>");
                    for f in formats {
                        body.push_str(&format!(
                            "<metadataFormat><metadataPrefix>{}</metadataPrefix><schema>{}</schema><metadataNamespace>{}</metadataNamespace></metadataFormat>",
                            escape_text(&f.prefix), escape_text(&f.schema), escape_text(&f.namespace)
                        ));
                    }
                    body.push_str("</ListMetadataFormats>");
                    Ok(success_response(&base_url, now, &echo, &body))
                }
                Err(e) => source_error(&base_url, now, &echo, e),
            }
        }
        Verb::ListSets => {
            if arg("resumptionToken").is_some() {
                return Ok(error_response(
                    &base_url,
                    now,
                    &echo,
                    ErrorCode::BadResumptionToken,
                    "set listings are never paginated here",
                ));
            }
            match source.sets() {
                None => Ok(error_response(
                    &base_url,
                    now,
                    &echo,
                    ErrorCode::NoSetHierarchy,
                    "this repository exposes no sets",
                )),
                Some(sets) => {
                    let mut body = String::from("<ListSets>");
                    for s in sets {
                        body.push_str(&format!(
                            "<set><setSpec>{}</setSpec><setName>{}</setName></set>",
                            escape_text(&s.spec),
                            escape_text(&s.name)
                        ));
                    }
                    body.push_str("</ListSets>");
                    Ok(success_response(&base_url, now, &echo, &body))
                }
            }
        }
        Verb::GetRecord => {
            let (Some(identifier), Some(prefix)) = (arg("identifier"), arg("metadataPrefix"))
            else {
                return bad_argument("GetRecord requires identifier and metadataPrefix");
            };
            match source.get(identifier, prefix) {
                Ok(record) => {
                    let mut body = String::from("<GetRecord>");
                    render_record(&record, &mut body);
                    body.push_str("</GetRecord>");
                    Ok(success_response(&base_url, now, &echo, &body))
                }
                Err(e) => source_error(&base_url, now, &echo, e),
            }
        }
        Verb::ListIdentifiers | Verb::ListRecords => {
            handle_list(source, verb, &base_url, now, page_size, &rest, &echo)
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn handle_list(
    source: &dyn RecordSource,
    verb: Verb,
    base_url: &str,
    now: UtcTimestamp,
    page_size: u64,
    rest: &[(&str, &str)],
    echo: &[(String, String)],
) -> Result<Vec<u8>, UpstreamFailure> {
    let arg = |name: &str| rest.iter().find(|(k, _)| *k == name).map(|(_, v)| *v);

    let resumed = arg("resumptionToken").is_some();
    let state = if let Some(token) = arg("resumptionToken") {
        if rest.len() != 1 {
            return Ok(error_response(
                base_url,
                now,
                &[],
                ErrorCode::BadArgument,
                "resumptionToken is an exclusive argument",
            ));
        }
        match decode_token(token) {
            Some(state) if state.verb == verb.as_str() => state,
            _ => {
                return Ok(error_response(
                    base_url,
                    now,
                    echo,
                    ErrorCode::BadResumptionToken,
                    "token is not one this repository issued for this verb",
                ))
            }
        }
    } else {
        let Some(prefix) = arg("metadataPrefix") else {
            return Ok(error_response(
                base_url,
                now,
                &[],
                ErrorCode::BadArgument,
                "metadataPrefix is required",
            ));
        };
        ResumptionState {
            verb: verb.as_str().to_string(),
            prefix: Some(prefix.to_string()),
            from: arg("from").map(str::to_string),
            until: arg("until").map(str::to_string),
            set: arg("set").map(str::to_string),
            offset: 0,
        }
    };

    let token_fault = |msg: &str| {
        Ok(error_response(base_url, now, echo, ErrorCode::BadResumptionToken, msg))
    };
    let date_fault = |which: &str, value: &str| {
        if resumed {
            token_fault("token carries an invalid date")
        } else {
            Ok(error_response(
                base_url,
                now,
                &[],
                ErrorCode::BadArgument,
                &format!("cannot parse {which} date `{value}`"),
            ))
        }
    };

    let from = match &state.from {
        Some(s) => match parse_oai_date(s, DateBound::From) {
            Ok(ts) => Some(ts),
            Err(_) => return date_fault("from", s),
        },
        None => None,
    };
    let until = match &state.until {
        Some(s) => match parse_oai_date(s, DateBound::Until) {
            Ok(ts) => Some(ts),
            Err(_) => return date_fault("until", s),
        },
        None => None,
    };
    if let (Some(f), Some(u)) = (&state.from, &state.until) {
        if f.len() != u.len() {
            return if resumed {
                token_fault("token mixes date granularities")
            } else {
                Ok(error_response(
                    base_url,
                    now,
                    &[],
                    ErrorCode::BadArgument,
                    "from and until use different granularities",
                ))
            };
        }
    }
    if let (Some(f), Some(u)) = (from, until) {
        if f > u {
            return if resumed {
                token_fault("token window is empty")
            } else {
                Ok(error_response(
                    base_url,
                    now,
                    &[],
                    ErrorCode::BadArgument,
                    "from is later than until",
                ))
            };
        }
    }

    if state.set.is_some() && source.sets().is_none() {
        return Ok(error_response(
            base_url,
            now,
            echo,
            ErrorCode::NoSetHierarchy,
            "this repository exposes no sets",
        ));
    }

    let query = ListQuery {
        prefix: state.prefix.clone().unwrap_or_default(),
        from,
        until,
        set: state.set.clone(),
        offset: state.offset,
        limit: page_size,
    };
    let chunk = match source.list(&query) {
        Ok(chunk) => chunk,
        Err(e) => return source_error(base_url, now, echo, e),
    };

    if chunk.records.is_empty() {
        return if resumed {
            token_fault("token points past the end of the list")
        } else {
            Ok(error_response(
                base_url,
                now,
                echo,
                ErrorCode::NoRecordsMatch,
                "the combination of arguments matches no records",
            ))
        };
    }

    let tag = verb.as_str();
    let mut body = format!("<{tag}>");
    for record in &chunk.records {
        match verb {
            Verb::ListRecords => render_record(record, &mut body),
            Verb::ListIdentifiers => render_header(record, &mut body),
            _ => unreachable!("list handling is only entered for list verbs"),
        }
    }
    if chunk.has_more {
        let next = ResumptionState {
            offset: state.offset + chunk.records.len() as u64,
            ..state.clone()
        };
        let size_attr = chunk
            .complete_size
            .map(|n| format!(" completeListSize=\"{n}\""))
            .unwrap_or_default();
        body.push_str(&format!(
            "<resumptionToken{size_attr} cursor=\"{}\">{}</resumptionToken>",
            state.offset,
            encode_token(&next)
        ));
    } else if resumed {
        body.push_str("<resumptionToken/>");
    }
    body.push_str(&format!("</{tag}>"));
    Ok(success_response(base_url, now, echo, &body))
}

fn source_error(
    base_url: &str,
    now: UtcTimestamp,
    echo: &[(String, String)],
    err: SourceError,
) -> Result<Vec<u8>, UpstreamFailure> {
    let (code, msg) = match err {
        SourceError::IdDoesNotExist => (
            ErrorCode::IdDoesNotExist,
            "no item with this identifier".to_string(),
        ),
        SourceError::CannotDisseminateFormat => (
            ErrorCode::CannotDisseminateFormat,
            "this format is not available for the item".to_string(),
        ),
        SourceError::NoSetHierarchy => (
            ErrorCode::NoSetHierarchy,
            "this repository exposes no sets".to_string(),
        ),
        SourceError::Upstream(m) => return Err(UpstreamFailure(m)),
    };
    Ok(error_response(base_url, now, echo, code, &msg))
}

// ---------------------------------------------------------------------------
// Rendering
// ---------------------------------------------------------------------------

fn envelope(base_url: &str, now: UtcTimestamp, echo: &[(String, String)], body: &str) -> Vec<u8> {
    let mut attrs = String::new();
    for (k, v) in echo {
        attrs.push_str(&format!(" {k}=\"{}\"", escape_text(v)));
    }
    format!(
        "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n\
         <OAI-PMH xmlns=\"http://www.openarchives.org/OAI/2.0/\" \
         xmlns:xsi=\"http://www.w3.org/2001/XMLSchema-instance\" \
         xsi:schemaLocation=\"http://www.openarchives.org/OAI/2.0/ http://www.openarchives.org/OAI/2.0/OAI-PMH.xsd\">\n\
         <responseDate>{now}</responseDate>\n\
         <request{attrs}>{}</request>\n\
         {body}\n\
         </OAI-PMH>\n",
        escape_text(base_url)
    )
    .into_bytes()
}

fn success_response(
    base_url: &str,
    now: UtcTimestamp,
    echo: &[(String, String)],
    body: &str,
) -> Vec<u8> {
    envelope(base_url, now, echo, body)
}

/// Error response. Per protocol, `badVerb` and `badArgument` responses must
/// not echo request attributes; callers pass an empty `echo` for those.
fn error_response(
    base_url: &str,
    now: UtcTimestamp,
    echo: &[(String, String)],
    code: ErrorCode,
    message: &str,
) -> Vec<u8> {
    let echo: &[(String, String)] =
        if matches!(code, ErrorCode::BadVerb | ErrorCode::BadArgument) {
            &[]
        } else {
            echo
        };
    let body = format!(
        "<error code=\"{}\">{}</error>",
        code.as_str(),
        escape_text(message)
    );
    envelope(base_url, now, echo, &body)
}

fn render_identify(
    source: &dyn RecordSource,
    base_url: &str,
    now: UtcTimestamp,
    echo: &[(String, String)],
) -> Vec<u8> {
    let info = source.identify();
    let earliest = info
        .earliest_datestamp
        .map(|t| t.to_string())
        .unwrap_or_else(|| "1970-01-01T00:00:00Z".to_string());
    let body = format!(
        "<Identify>\
         <repositoryName>{}</repositoryName>\
         <baseURL>{}</baseURL>\
         <protocolVersion>{PROTOCOL_VERSION}</protocolVersion>\
         <adminEmail>{}</adminEmail>\
         <earliestDatestamp>{earliest}</earliestDatestamp>\
         <deletedRecord>no</deletedRecord>\
         <granularity>{GRANULARITY}</granularity>\
         </Identify>",
        escape_text(&info.repository_name),
        escape_text(&info.base_url),
        escape_text(&info.admin_email),
    );
    success_response(base_url, now, echo, &body)
}

fn render_header(record: &OaiRecord, out: &mut String) {
    out.push_str("<header><identifier>");
    out.push_str(&escape_text(&record.header.identifier));
    out.push_str("</identifier><datestamp>");
    out.push_str(&record.header.datestamp.to_string());
    out.push_str("</datestamp>");
    for set in &record.header.sets {
        out.push_str("<setSpec>");
        out.push_str(&escape_text(set));
        out.push_str("</setSpec>");
    }
    out.push_str("</header>");
}

fn render_record(record: &OaiRecord, out: &mut String) {
    out.push_str("<record>");
    render_header(record, out);
    out.push_str("<metadata>");
    out.push_str(&String::from_utf8_lossy(&record.metadata));
    out.push_str("</metadata></record>");
}
