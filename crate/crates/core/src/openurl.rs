//! OpenURL front-end: context objects arrive as Key/Encoded-Value query
//! strings; resolution drives the locator, a repository fetch, method
//! insertion and the dissemination engine, and hands back one result with
//! its media type.
//!
//! Every resolution runs the same five steps, each emitted as a structured
//! log event under the `openurl` target: resolve the referent, fetch the
//! stored package, complete it, apply the service, return the output.

use std::sync::Arc;

use thiserror::Error;

use crate::dip::{ApplyError, DipEngine};
use crate::locator::{LocatorClient, ResolutionPlan};
use crate::oaipmh::{harvest_get_record, HarvestError, OaiTransport, DIDL_PREFIX};

pub const OPENURL_VERSION: &str = "Z39.88-2004";

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ParseError {
    #[error("context object carries no referent (rft_id)")]
    MissingReferent,
    #[error("unsupported OpenURL version `{0}`")]
    UnsupportedVersion(String),
}

/// A parsed KEV context object. Only the referent and service type drive
/// resolution; the other context entities (requester, referrer, referring
/// entity, resolver) and any unknown keys are retained untouched.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ContextObject {
    pub referent_id: String,
    pub service_type_id: Option<String>,
    pub version: String,
    pub extras: Vec<(String, String)>,
}

impl ContextObject {
    /// Value of an extra key, e.g. the version-enumeration flag.
    pub fn extra(&self, key: &str) -> Option<&str> {
        self.extras
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
    }
}

fn hex_val(b: u8) -> Option<u8> {
    match b {
        b'0'..=b'9' => Some(b - b'0'),
        b'a'..=b'f' => Some(b - b'a' + 10),
        b'A'..=b'F' => Some(b - b'A' + 10),
        _ => None,
    }
}

/// Decodes one form-encoded token: `+` is space, `%XX` is a byte; broken
/// escapes pass through verbatim.
fn form_decode(s: &str) -> String {
    let bytes = s.as_bytes();
    let mut out = Vec::with_capacity(bytes.len());
    let mut i = 0;
    while i < bytes.len() {
        match bytes[i] {
            b'+' => {
                out.push(b' ');
                i += 1;
            }
            b'%' if i + 2 < bytes.len() => {
                match (hex_val(bytes[i + 1]), hex_val(bytes[i + 2])) {
                    (Some(hi), Some(lo)) => {
                        out.push(hi << 4 | lo);
                        i += 3;
                    }
                    _ => {
                        out.push(b'%');
                        i += 1;
                    }
                }
            }
            b => {
                out.push(b);
                i += 1;
            }
        }
    }
    String::from_utf8_lossy(&out).into_owned()
}

/// Splits a query string into decoded key/value pairs, order preserved.
pub fn parse_query_string(query: &str) -> Vec<(String, String)> {
    query
        .split('&')
        .filter(|part| !part.is_empty())
        .map(|part| match part.split_once('=') {
            Some((k, v)) => (form_decode(k), form_decode(v)),
            None => (form_decode(part), String::new()),
        })
        .collect()
}

/// Parses a KEV query into a context object.
pub fn parse_kev(query: &str) -> Result<ContextObject, ParseError> {
    let mut referent: Option<String> = None;
    let mut service: Option<String> = None;
    let mut version: Option<String> = None;
    let mut extras: Vec<(String, String)> = Vec::new();
    for (key, value) in parse_query_string(query) {
        match key.as_str() {
            "rft_id" if referent.is_none() => referent = Some(value),
            "svc_id" if service.is_none() => service = Some(value),
            "url_ver" if version.is_none() => version = Some(value),
            _ => extras.push((key, value)),
        }
    }
    let referent_id = referent.ok_or(ParseError::MissingReferent)?;
    let version = version.unwrap_or_default();
    if version != OPENURL_VERSION {
        return Err(ParseError::UnsupportedVersion(version));
    }
    Ok(ContextObject {
        referent_id,
        service_type_id: service,
        version,
        extras,
    })
}

#[derive(Debug, Error)]
pub enum ResolveError {
    #[error("referent not found: {0}")]
    NotFound(String),
    #[error("service not applicable: {0}")]
    NotApplicable(String),
    #[error("unknown service: {0}")]
    UnknownService(String),
    #[error("upstream failure: {0}")]
    Upstream(String),
}

impl ResolveError {
    /// The documented status mapping: unknown referent is 404, a service
    /// problem is the caller's error (400), everything behind the resolver
    /// is 502.
    pub fn http_status(&self) -> u16 {
        match self {
            ResolveError::NotFound(_) => 404,
            ResolveError::NotApplicable(_) | ResolveError::UnknownService(_) => 400,
            ResolveError::Upstream(_) => 502,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Dissemination {
    pub bytes: Vec<u8>,
    pub mime: String,
}

pub struct OpenUrlResolver {
    pub locator: Arc<dyn LocatorClient>,
    pub transport: Arc<dyn OaiTransport>,
    pub engine: Arc<DipEngine>,
}

impl OpenUrlResolver {
    pub fn new(
        locator: Arc<dyn LocatorClient>,
        transport: Arc<dyn OaiTransport>,
        engine: Arc<DipEngine>,
    ) -> Self {
        OpenUrlResolver {
            locator,
            transport,
            engine,
        }
    }

    /// Resolves one context object to one dissemination. Reads only; the
    /// resolver writes nothing anywhere.
    ///
    /// A referent with several versions resolves to the newest one held by
    /// a known repository; the extra pair `x_versions=all` instead returns
    /// the full version list as JSON without dissemination.
    pub fn resolve(&self, ctx: &ContextObject) -> Result<Dissemination, ResolveError> {
        if let Some(requester) = ctx.extra("req_id") {
            // Parsed but unused; the hook point for requester-sensitive
            // disseminations.
            tracing::debug!(target: "openurl", requester, "ignoring requester identity");
        }

        // Step 1: referent resolution.
        let plans = self
            .locator
            .lookup(&ctx.referent_id)
            .map_err(|e| ResolveError::Upstream(e.to_string()))?;
        tracing::info!(
            target: "openurl",
            step = 1,
            action = "resolve-referent",
            referent = %ctx.referent_id,
            versions = plans.len(),
        );
        if plans.is_empty() {
            return Err(ResolveError::NotFound(ctx.referent_id.clone()));
        }
        if ctx.extra("x_versions") == Some("all") {
            let json = serde_json::to_vec_pretty(&plans).expect("plans serialize");
            return Ok(Dissemination {
                bytes: json,
                mime: "application/json".to_string(),
            });
        }
        let plan: &ResolutionPlan = plans
            .iter()
            .find(|p| p.base_url.is_some())
            .ok_or_else(|| {
                ResolveError::Upstream(format!(
                    "`{}` is known but no holding repository is registered",
                    ctx.referent_id
                ))
            })?;
        let base_url = plan.base_url.as_deref().expect("filtered on presence");

        // Step 2: package fetch.
        let record = harvest_get_record(
            self.transport.as_ref(),
            base_url,
            &plan.package_id,
            DIDL_PREFIX,
        )
        .map_err(|e| match &e {
            HarvestError::Protocol { code, .. } if code == "idDoesNotExist" => {
                ResolveError::NotFound(ctx.referent_id.clone())
            }
            other => ResolveError::Upstream(format!("repository fetch failed: {other}")),
        })?;
        tracing::info!(
            target: "openurl",
            step = 2,
            action = "fetch-package",
            package = %plan.package_id,
            repository = %base_url,
        );
        let doc = crate::didl::parse_package(&record.metadata)
            .map_err(|e| ResolveError::Upstream(format!("stored package does not parse: {e}")))?;

        // Step 3: method insertion.
        let completed = self.engine.complete(&doc);
        tracing::info!(
            target: "openurl",
            step = 3,
            action = "insert-methods",
            methods = completed.container.items.iter().filter(|i| i.is_method_item()).count(),
        );

        // Step 4: service application.
        let output = self
            .engine
            .apply_service(
                &completed,
                plan.fragment.as_deref(),
                ctx.service_type_id.as_deref(),
            )
            .map_err(|e| match e {
                ApplyError::UnknownTarget(t) => {
                    ResolveError::NotFound(format!("{}#{t}", plan.package_id))
                }
                ApplyError::UnknownService(s) => ResolveError::UnknownService(s),
                ApplyError::ServiceNotApplicable { service_id, target } => {
                    ResolveError::NotApplicable(format!("{service_id} on {target}"))
                }
                ApplyError::TransformFailure(m) => ResolveError::Upstream(m),
            })?;
        tracing::info!(
            target: "openurl",
            step = 4,
            action = "apply-service",
            service = ctx.service_type_id.as_deref().unwrap_or("(raw)"),
            fragment = plan.fragment.as_deref().unwrap_or("(document)"),
        );

        // Step 5: the result set, exactly one item.
        tracing::info!(
            target: "openurl",
            step = 5,
            action = "return-result",
            mime = %output.mime,
            bytes = output.bytes.len(),
        );
        Ok(Dissemination {
            bytes: output.bytes,
            mime: output.mime,
        })
    }

    /// The full HTTP answer for one raw query string:
    /// `(body, content type, status)`.
    pub fn respond(&self, query: &str) -> (Vec<u8>, String, u16) {
        let ctx = match parse_kev(query) {
            Ok(ctx) => ctx,
            Err(e) => return (e.to_string().into_bytes(), "text/plain".to_string(), 400),
        };
        match self.resolve(&ctx) {
            Ok(result) => (result.bytes, result.mime, 200),
            Err(e) => (
                e.to_string().into_bytes(),
                "text/plain".to_string(),
                e.http_status(),
            ),
        }
    }
}
