//! HTTP surfaces for every service. One `Router` maps paths to whatever
//! subset of services it was given, so a deployment can put each service
//! on its own port or pile several onto one listener:
//!
//! * `/repo/<name>`  protocol endpoint of one sealed tape
//! * `/index`        protocol endpoint of the repository registry
//! * `/oai`          federating protocol endpoint
//! * `/lookup?id=`   identifier resolution, JSON plans or 404
//! * `/openurl?..`   context-object resolver
//! * `/arc/<token>`  stored datastream bytes
//!
//! The router itself is a pure function from request to answer; the
//! listener wrapper owns the sockets and worker threads.

use std::collections::HashMap;
use std::net::SocketAddr;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::thread::JoinHandle;
use std::time::Duration;

use crate::arcstore::ArcStore;
use crate::federator::Federator;
use crate::locator::SharedLocator;
use crate::oaipmh::{handle_request, RecordSource};
use crate::openurl::{parse_query_string, OpenUrlResolver};
use crate::time::SharedClock;

pub const OAI_CONTENT_TYPE: &str = "text/xml; charset=UTF-8";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HttpAnswer {
    pub status: u16,
    pub content_type: String,
    pub body: Vec<u8>,
}

impl HttpAnswer {
    fn new(status: u16, content_type: &str, body: Vec<u8>) -> Self {
        HttpAnswer {
            status,
            content_type: content_type.to_string(),
            body,
        }
    }

    fn text(status: u16, message: impl Into<String>) -> Self {
        HttpAnswer::new(status, "text/plain", message.into().into_bytes())
    }
}

/// Last path segment of a datastream key; whole key when there is none.
fn key_token(key: &str) -> &str {
    key.rsplit('/').next().unwrap_or(key)
}

#[derive(Default)]
pub struct Router {
    repos: Vec<(String, Arc<dyn RecordSource>, u64)>,
    index: Option<(Arc<dyn RecordSource>, u64)>,
    federator: Option<(Arc<Federator>, u64)>,
    locator: Option<SharedLocator>,
    openurl: Option<Arc<OpenUrlResolver>>,
    datastreams: HashMap<String, (Arc<ArcStore>, String)>,
    clock: Option<SharedClock>,
}

impl Router {
    pub fn new(clock: SharedClock) -> Self {
        Router {
            clock: Some(clock),
            ..Router::default()
        }
    }

    pub fn add_repo(
        &mut self,
        name: impl Into<String>,
        source: Arc<dyn RecordSource>,
        page_size: u64,
    ) {
        self.repos.push((name.into(), source, page_size));
    }

    pub fn set_index(&mut self, source: Arc<dyn RecordSource>, page_size: u64) {
        self.index = Some((source, page_size));
    }

    pub fn set_federator(&mut self, federator: Arc<Federator>, page_size: u64) {
        self.federator = Some((federator, page_size));
    }

    pub fn set_locator(&mut self, locator: SharedLocator) {
        self.locator = Some(locator);
    }

    pub fn set_openurl(&mut self, resolver: Arc<OpenUrlResolver>) {
        self.openurl = Some(resolver);
    }

    /// Mounts every record of the store under `/arc/<last key segment>`.
    /// The first store to claim a token keeps it.
    pub fn add_arc(&mut self, store: Arc<ArcStore>) {
        let keys: Vec<String> = store.keys().map(str::to_string).collect();
        for key in keys {
            self.datastreams
                .entry(key_token(&key).to_string())
                .or_insert_with(|| (Arc::clone(&store), key));
        }
    }

    pub fn routes(&self) -> Vec<String> {
        let mut out: Vec<String> = self
            .repos
            .iter()
            .map(|(name, _, _)| format!("/repo/{name}"))
            .collect();
        if self.index.is_some() {
            out.push("/index".to_string());
        }
        if self.federator.is_some() {
            out.push("/oai".to_string());
        }
        if self.locator.is_some() {
            out.push("/lookup".to_string());
        }
        if self.openurl.is_some() {
            out.push("/openurl".to_string());
        }
        if !self.datastreams.is_empty() {
            out.push(format!("/arc ({} datastreams)", self.datastreams.len()));
        }
        out
    }

    fn protocol(
        &self,
        source: &dyn RecordSource,
        args: &[(String, String)],
        page_size: u64,
    ) -> HttpAnswer {
        let now = self
            .clock
            .as_ref()
            .expect("router built via new() carries a clock")
            .now();
        match handle_request(source, args, now, page_size) {
            Ok(body) => HttpAnswer::new(200, OAI_CONTENT_TYPE, body),
            Err(failure) => HttpAnswer::text(502, failure.to_string()),
        }
    }

    /// Answers one request. `form_body` is the body of a POST carrying
    /// form-encoded arguments; protocol endpoints accept both styles.
    pub fn handle(&self, path: &str, query: &str, form_body: Option<&str>) -> HttpAnswer {
        let mut args = parse_query_string(query);
        if let Some(body) = form_body {
            args.extend(parse_query_string(body));
        }

        if let Some(name) = path.strip_prefix("/repo/") {
            return match self.repos.iter().find(|(n, _, _)| n == name) {
                Some((_, source, page)) => self.protocol(source.as_ref(), &args, *page),
                None => HttpAnswer::text(404, format!("no repository `{name}` is mounted")),
            };
        }
        if path == "/index" {
            return match &self.index {
                Some((source, page)) => self.protocol(source.as_ref(), &args, *page),
                None => HttpAnswer::text(404, "the repository registry is not mounted"),
            };
        }
        if path == "/oai" {
            return match &self.federator {
                Some((federator, page)) => self.protocol(federator.as_ref(), &args, *page),
                None => HttpAnswer::text(404, "the federating endpoint is not mounted"),
            };
        }
        if path == "/lookup" {
            let Some(locator) = &self.locator else {
                return HttpAnswer::text(404, "the identifier resolver is not mounted");
            };
            let Some(id) = args
                .iter()
                .find(|(k, _)| k == "id")
                .map(|(_, v)| v.as_str())
            else {
                return HttpAnswer::text(400, "missing `id` argument");
            };
            let plans = locator.read().expect("locator lock").resolve(id);
            if plans.is_empty() {
                return HttpAnswer::text(404, format!("unknown identifier `{id}`"));
            }
            let json = serde_json::to_vec_pretty(&plans).expect("plans serialize");
            return HttpAnswer::new(200, "application/json", json);
        }
        if path == "/openurl" {
            return match &self.openurl {
                Some(resolver) => {
                    let joined = if let Some(body) = form_body {
                        if query.is_empty() {
                            body.to_string()
                        } else {
                            format!("{query}&{body}")
                        }
                    } else {
                        query.to_string()
                    };
                    let (body, mime, status) = resolver.respond(&joined);
                    HttpAnswer::new(status, &mime, body)
                }
                None => HttpAnswer::text(404, "the context-object resolver is not mounted"),
            };
        }
        if let Some(token) = path.strip_prefix("/arc/") {
            return match self.datastreams.get(token) {
                Some((store, key)) => match store.get(key) {
                    Ok(record) => HttpAnswer::new(200, &record.mime, record.bytes),
                    Err(e) => HttpAnswer::text(502, e.to_string()),
                },
                None => HttpAnswer::text(404, format!("no datastream `{token}`")),
            };
        }
        if path == "/" {
            let listing = self.routes().join("\n");
            return HttpAnswer::text(200, format!("mounted routes:\n{listing}\n"));
        }
        HttpAnswer::text(404, format!("no route for `{path}`"))
    }
}

/// A running listener. Dropping it stops the worker threads.
pub struct HttpServer {
    addr: SocketAddr,
    stop: Arc<AtomicBool>,
    workers: Vec<JoinHandle<()>>,
}

const WORKERS: usize = 4;

impl HttpServer {
    pub fn start(bind: &str, router: Arc<Router>) -> Result<Self, String> {
        let server = tiny_http::Server::http(bind).map_err(|e| e.to_string())?;
        let addr = server
            .server_addr()
            .to_ip()
            .ok_or_else(|| "listener has no IP address".to_string())?;
        let server = Arc::new(server);
        let stop = Arc::new(AtomicBool::new(false));
        let workers = (0..WORKERS)
            .map(|_| {
                let server = Arc::clone(&server);
                let router = Arc::clone(&router);
                let stop = Arc::clone(&stop);
                std::thread::spawn(move || loop {
                    if stop.load(Ordering::Relaxed) {
                        return;
                    }
                    match server.recv_timeout(Duration::from_millis(50)) {
                        Ok(Some(request)) => serve_one(&router, request),
                        Ok(None) => {}
                        Err(_) => return,
                    }
                })
            })
            .collect();
        Ok(HttpServer {
            addr,
            stop,
            workers,
        })
    }

    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    /// `http://host:port`, the prefix the mounted routes hang off.
    pub fn base(&self) -> String {
        format!("http://{}", self.addr)
    }

    pub fn shutdown(&mut self) {
        self.stop.store(true, Ordering::Relaxed);
        for worker in self.workers.drain(..) {
            let _ = worker.join();
        }
    }
}

impl Drop for HttpServer {
    fn drop(&mut self) {
        self.shutdown();
    }
}

fn serve_one(router: &Router, mut request: tiny_http::Request) {
    let url = request.url().to_string();
    let (path, query) = match url.split_once('?') {
        Some((p, q)) => (p.to_string(), q.to_string()),
        None => (url.clone(), String::new()),
    };
    let form_body = if *request.method() == tiny_http::Method::Post {
        let mut body = String::new();
        match request.as_reader().read_to_string(&mut body) {
            Ok(_) => Some(body),
            Err(_) => None,
        }
    } else {
        None
    };
    let answer = router.handle(&path, &query, form_body.as_deref());
    tracing::debug!(
        target: "http",
        path = %path,
        status = answer.status,
        bytes = answer.body.len(),
    );
    let content_type = tiny_http::Header::from_bytes(
        &b"Content-Type"[..],
        answer.content_type.as_bytes(),
    )
    .expect("static header name");
    let response = tiny_http::Response::from_data(answer.body)
        .with_status_code(answer.status)
        .with_header(content_type);
    let _ = request.respond(response);
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oaipmh::{HttpTransport, MemorySource, OaiRecord, OaiTransport, RecordHeader};
    use crate::time::FixedClock;

    fn fixed_clock() -> SharedClock {
        Arc::new(FixedClock("2006-01-01T00:00:00Z".parse().unwrap()))
    }

    fn sample_source(base_url: &str) -> Arc<MemorySource> {
        let mut source = MemorySource::new(base_url);
        source.push(OaiRecord {
            header: RecordHeader {
                identifier: "info:local/i/1".to_string(),
                datestamp: "2005-03-04T05:06:07Z".parse().unwrap(),
                sets: vec![],
            },
            metadata: b"<didl:DIDL xmlns:didl=\"urn:mpeg:mpeg21:2002:02-DIDL-NS\"/>".to_vec(),
        });
        Arc::new(source)
    }

    #[test]
    fn routing_reaches_each_mounted_service() {
        let mut router = Router::new(fixed_clock());
        router.add_repo("t1", sample_source("http://h/repo/t1"), 10);

        let identify = router.handle("/repo/t1", "verb=Identify", None);
        assert_eq!(identify.status, 200);
        assert_eq!(identify.content_type, OAI_CONTENT_TYPE);
        assert!(String::from_utf8(identify.body).unwrap().contains("<Identify>"));

        assert_eq!(router.handle("/repo/nope", "verb=Identify", None).status, 404);
        assert_eq!(router.handle("/index", "verb=Identify", None).status, 404);
        assert_eq!(router.handle("/lookup", "id=x", None).status, 404);
        assert_eq!(router.handle("/bogus", "", None).status, 404);

        let root = router.handle("/", "", None);
        assert!(String::from_utf8(root.body).unwrap().contains("/repo/t1"));
    }

    #[test]
    fn post_form_body_reaches_protocol_dispatch() {
        let mut router = Router::new(fixed_clock());
        router.add_repo("t1", sample_source("http://h/repo/t1"), 10);
        let answer = router.handle("/repo/t1", "", Some("verb=Identify"));
        assert_eq!(answer.status, 200);
        assert!(String::from_utf8(answer.body).unwrap().contains("<Identify>"));
    }

    #[test]
    fn lookup_route_mirrors_client_contract() {
        use crate::locator::Locator;
        use std::sync::RwLock;

        let mut locator = Locator::new();
        locator
            .register_package("info:local/i/1", "http://h/repo/t1", None)
            .unwrap();
        let mut router = Router::new(fixed_clock());
        router.set_locator(Arc::new(RwLock::new(locator)));

        let hit = router.handle("/lookup", "id=info%3Alocal%2Fi%2F1", None);
        assert_eq!(hit.status, 200);
        assert_eq!(hit.content_type, "application/json");
        assert_eq!(router.handle("/lookup", "id=info:local/i/9", None).status, 404);
        assert_eq!(router.handle("/lookup", "", None).status, 400);
    }

    #[test]
    fn datastream_tokens_index_full_keys() {
        use crate::arcstore::{ArcStore, ArcWriter};
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.arc");
        let created = "2005-01-01T00:00:00Z".parse().unwrap();
        let mut writer = ArcWriter::create(&path, created).unwrap();
        writer
            .append(
                "http://127.0.0.1:8083/arc/tok-1",
                "application/pdf",
                created,
                b"%PDF",
            )
            .unwrap();
        writer.finish(&dir.path().join("a.arc.idx")).unwrap();
        let store =
            Arc::new(ArcStore::open(&path, &dir.path().join("a.arc.idx")).unwrap());

        let mut router = Router::new(fixed_clock());
        router.add_arc(store);
        let hit = router.handle("/arc/tok-1", "", None);
        assert_eq!(hit.status, 200);
        assert_eq!(hit.content_type, "application/pdf");
        assert_eq!(hit.body, b"%PDF");
        assert_eq!(router.handle("/arc/tok-9", "", None).status, 404);
    }

    #[test]
    fn live_listener_round_trips_protocol_and_datastream_requests() {
        let mut router = Router::new(fixed_clock());
        router.add_repo("t1", sample_source("http://h/repo/t1"), 10);

        let server = HttpServer::start("127.0.0.1:0", Arc::new(router)).unwrap();
        let transport = HttpTransport::new();
        let base = format!("{}/repo/t1", server.base());
        let body = transport
            .fetch(&base, &[("verb".to_string(), "ListIdentifiers".to_string()),
                            ("metadataPrefix".to_string(), "DIDL".to_string())])
            .unwrap();
        let text = String::from_utf8(body).unwrap();
        assert!(text.contains("info:local/i/1"), "unexpected body: {text}");
        assert!(text.contains("2005-03-04T05:06:07Z"));
    }
}
