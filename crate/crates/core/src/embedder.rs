//! Linking pages to stored annotations and injecting them into HTML, either
//! as a batch transform or through a small HTTP service.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::{Arc, RwLock};
use std::thread::{self, JoinHandle};

use axum::body::Bytes;
use axum::extract::{Path as UrlPath, Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::Router;
use serde::de::{MapAccess, Visitor};
use serde::{Deserialize, Deserializer, Serialize};
use thiserror::Error;

use crate::repository::{Manifest, Repository, RepositoryError};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum PageMapError {
    #[error("page map parse error at line {line}, column {column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("page map key `{0}` appears more than once")]
    DuplicateKey(String),
}

/// Key → annotation filename, in file order.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct PageMap {
    entries: Vec<(String, String)>,
}

struct Entries(Vec<(String, String)>);

impl<'de> Deserialize<'de> for Entries {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        struct V;
        impl<'de> Visitor<'de> for V {
            type Value = Entries;
            fn expecting(&self, f: &mut fmt::Formatter) -> fmt::Result {
                f.write_str("an object mapping page keys to annotation filenames")
            }
            fn visit_map<A: MapAccess<'de>>(self, mut map: A) -> Result<Entries, A::Error> {
                let mut out = Vec::new();
                while let Some((k, v)) = map.next_entry::<String, String>()? {
                    out.push((k, v));
                }
                Ok(Entries(out))
            }
        }
        d.deserialize_map(V)
    }
}

/// A filename the repository manifest does not know.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct DanglingEntry {
    pub key: String,
    pub filename: String,
}

impl fmt::Display for DanglingEntry {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "page `{}` links to `{}`, which is not in the repository", self.key, self.filename)
    }
}

impl PageMap {
    /// Parses a page map without checking it against a repository.
    pub fn parse(source: &[u8]) -> Result<PageMap, PageMapError> {
        let Entries(entries) = serde_json::from_slice(source).map_err(|e| PageMapError::Parse {
            line: e.line(),
            column: e.column(),
            message: e.to_string(),
        })?;
        let mut seen = BTreeSet::new();
        for (k, _) in &entries {
            if !seen.insert(k.as_str()) {
                return Err(PageMapError::DuplicateKey(k.clone()));
            }
        }
        Ok(PageMap { entries })
    }

    pub fn entries(&self) -> &[(String, String)] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Exact match first; otherwise a request path is matched against
    /// URL-path keys after dropping its query string and one trailing slash.
    pub fn lookup(&self, request_key: &str) -> Option<&str> {
        let find = |k: &str| self.entries.iter().find(|(key, _)| key == k).map(|(_, f)| f.as_str());
        if let Some(f) = find(request_key) {
            return Some(f);
        }
        if !request_key.starts_with('/') {
            return None;
        }
        let path = request_key.split(['?', '#']).next().unwrap_or_default();
        let path = match path.strip_suffix('/') {
            Some(p) if !p.is_empty() => p,
            _ => path,
        };
        self.entries
            .iter()
            .find(|(key, _)| key.starts_with('/') && key == path)
            .map(|(_, f)| f.as_str())
    }
}

/// Parses a page map and drops entries whose file the manifest does not
/// list, returning them as warnings.
pub fn load_page_map(source: &[u8], manifest: &Manifest) -> Result<(PageMap, Vec<DanglingEntry>), PageMapError> {
    let map = PageMap::parse(source)?;
    let (live, dangling): (Vec<_>, Vec<_>) = map
        .entries
        .into_iter()
        .partition(|(_, f)| manifest.by_filename(f).is_some());
    let warnings = dangling
        .into_iter()
        .map(|(key, filename)| DanglingEntry { key, filename })
        .collect();
    Ok((PageMap { entries: live }, warnings))
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum InjectError {
    #[error("HTML is not valid UTF-8")]
    NotUtf8,
    #[error("annotation is not valid UTF-8")]
    AnnotationNotUtf8,
    #[error("no </head> or <body> tag to inject into")]
    NotInjectable,
}

/// Inserts (or replaces) the annotation's script block.
///
/// The block goes immediately before the first `</head>` (any case), else
/// immediately after the first `<body ...>` open tag. An existing block
/// carrying the same `data-annotation-id` is replaced in place. All other
/// bytes are left as they are.
pub fn inject(html: &[u8], annotation: &[u8], annotation_id: &str) -> Result<Vec<u8>, InjectError> {
    let html = std::str::from_utf8(html).map_err(|_| InjectError::NotUtf8)?;
    let json = std::str::from_utf8(annotation).map_err(|_| InjectError::AnnotationNotUtf8)?;
    let block = script_block(json, annotation_id);
    let lower = html.to_ascii_lowercase();

    let (start, end) = if let Some(range) = existing_block(html, &lower, annotation_id) {
        range
    } else if let Some(at) = lower.find("</head>") {
        (at, at)
    } else if let Some(at) = body_open_end(&lower) {
        (at, at)
    } else {
        return Err(InjectError::NotInjectable);
    };
    let mut out = String::with_capacity(html.len() + block.len());
    out.push_str(&html[..start]);
    out.push_str(&block);
    out.push_str(&html[end..]);
    Ok(out.into_bytes())
}

/// `<` never appears raw inside the script, so neither `</script>` nor
/// `<!--` in a string value can end the block early.
pub fn script_block(json: &str, annotation_id: &str) -> String {
    format!(
        r#"<script type="application/ld+json" data-annotation-id="{}">{}</script>"#,
        escape_attr(annotation_id),
        json.replace('<', "\\u003c")
    )
}

fn escape_attr(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for c in s.chars() {
        match c {
            '&' => out.push_str("&amp;"),
            '"' => out.push_str("&quot;"),
            '<' => out.push_str("&lt;"),
            '>' => out.push_str("&gt;"),
            c => out.push(c),
        }
    }
    out
}

fn existing_block(html: &str, lower: &str, annotation_id: &str) -> Option<(usize, usize)> {
    let marker = format!(r#"data-annotation-id="{}""#, escape_attr(annotation_id));
    let mut from = 0;
    while let Some(rel) = lower[from..].find("<script") {
        let start = from + rel;
        let tag_end = start + lower[start..].find('>')?;
        if html[start..tag_end].contains(&marker) {
            let close = tag_end + lower[tag_end..].find("</script")?;
            let close_end = close + lower[close..].find('>')? + 1;
            return Some((start, close_end));
        }
        from = tag_end;
    }
    None
}

fn body_open_end(lower: &str) -> Option<usize> {
    let mut from = 0;
    while let Some(rel) = lower[from..].find("<body") {
        let start = from + rel;
        let next = lower[start + 5..].chars().next();
        if matches!(next, Some(c) if c == '>' || c == '/' || c.is_ascii_whitespace()) {
            return Some(start + lower[start..].find('>')? + 1);
        }
        from = start + 5;
    }
    None
}

#[derive(Debug, Error)]
pub enum EmbedError {
    #[error("no annotation for page `{0}`")]
    UnknownKey(String),
    #[error(transparent)]
    Inject(#[from] InjectError),
    #[error(transparent)]
    Repository(#[from] RepositoryError),
    #[error(transparent)]
    PageMap(#[from] PageMapError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone)]
struct Linked {
    id: String,
    bytes: Bytes,
}

/// An immutable view of the page map and the annotation bytes it links to.
#[derive(Debug, Clone, Default)]
pub struct Snapshot {
    map: PageMap,
    files: BTreeMap<String, Linked>,
    warnings: Vec<DanglingEntry>,
}

impl Snapshot {
    pub fn load(repo: &Repository, page_map: &[u8]) -> Result<Snapshot, EmbedError> {
        let (map, warnings) = load_page_map(page_map, repo.manifest())?;
        let mut files = BTreeMap::new();
        for (_, filename) in map.entries() {
            if files.contains_key(filename) {
                continue;
            }
            let (id, _) = repo.manifest().by_filename(filename).expect("dangling entries removed");
            let id = id.to_owned();
            let bytes = repo.read_file(filename)?.expect("listed in manifest");
            files.insert(filename.clone(), Linked { id, bytes: bytes.into() });
        }
        Ok(Snapshot { map, files, warnings })
    }

    pub fn page_map(&self) -> &PageMap {
        &self.map
    }

    pub fn warnings(&self) -> &[DanglingEntry] {
        &self.warnings
    }

    /// Annotation id and bytes for a page key.
    pub fn annotation(&self, key: &str) -> Option<(&str, &[u8])> {
        let filename = self.map.lookup(key)?;
        self.files.get(filename).map(|l| (l.id.as_str(), &l.bytes[..]))
    }

    pub fn embed(&self, key: &str, html: &[u8]) -> Result<Vec<u8>, EmbedError> {
        let (id, json) = self.annotation(key).ok_or_else(|| EmbedError::UnknownKey(key.into()))?;
        Ok(inject(html, json, id)?)
    }
}

/// Where a service reloads its snapshot from.
#[derive(Debug, Clone)]
pub struct SnapshotSource {
    pub repository: PathBuf,
    pub page_map: PathBuf,
}

impl SnapshotSource {
    pub fn load(&self) -> Result<Snapshot, EmbedError> {
        let repo = Repository::open(&self.repository)?;
        let bytes = std::fs::read(&self.page_map).map_err(|source| EmbedError::Io {
            path: self.page_map.clone(),
            source,
        })?;
        Snapshot::load(&repo, &bytes)
    }
}

pub struct EmbedService {
    source: SnapshotSource,
    current: RwLock<Arc<Snapshot>>,
}

impl EmbedService {
    pub fn new(source: SnapshotSource) -> Result<EmbedService, EmbedError> {
        let snapshot = source.load()?;
        Ok(EmbedService {
            source,
            current: RwLock::new(Arc::new(snapshot)),
        })
    }

    pub fn snapshot(&self) -> Arc<Snapshot> {
        Arc::clone(&self.current.read().expect("snapshot lock"))
    }

    /// Loads a fresh snapshot and swaps it in; on failure the previous one
    /// keeps serving.
    pub fn reload(&self) -> Result<Arc<Snapshot>, EmbedError> {
        let fresh = Arc::new(self.source.load()?);
        *self.current.write().expect("snapshot lock") = Arc::clone(&fresh);
        Ok(fresh)
    }
}

pub fn router(service: Arc<EmbedService>) -> Router {
    Router::new()
        .route("/annotation/{*key}", get(get_annotation))
        .route("/embed", post(post_embed))
        .route("/healthz", get(|| async { "ok" }))
        .route("/reload", post(post_reload))
        .with_state(service)
}

async fn get_annotation(State(svc): State<Arc<EmbedService>>, UrlPath(key): UrlPath<String>) -> Response {
    let snapshot = svc.snapshot();
    // `/annotation/meta/impressum` reaches URL-path keys, `/annotation/0000`
    // page ids.
    let found = snapshot
        .annotation(&key)
        .or_else(|| snapshot.annotation(&format!("/{key}")));
    match found {
        Some((_, bytes)) => (
            [(header::CONTENT_TYPE, "application/ld+json")],
            Bytes::copy_from_slice(bytes),
        )
            .into_response(),
        None => (StatusCode::NOT_FOUND, format!("no annotation for `{key}`\n")).into_response(),
    }
}

#[derive(Deserialize)]
struct EmbedQuery {
    key: String,
}

async fn post_embed(
    State(svc): State<Arc<EmbedService>>,
    Query(q): Query<EmbedQuery>,
    body: Bytes,
) -> Response {
    match svc.snapshot().embed(&q.key, &body) {
        Ok(html) => ([(header::CONTENT_TYPE, "text/html; charset=utf-8")], html).into_response(),
        Err(EmbedError::UnknownKey(k)) => {
            (StatusCode::NOT_FOUND, format!("no annotation for `{k}`\n")).into_response()
        }
        Err(e) => (StatusCode::UNPROCESSABLE_ENTITY, format!("{e}\n")).into_response(),
    }
}

async fn post_reload(State(svc): State<Arc<EmbedService>>) -> Response {
    let result = tokio::task::spawn_blocking(move || svc.reload().map(|s| s.page_map().len())).await;
    match result {
        Ok(Ok(n)) => format!("reloaded {n} page(s)\n").into_response(),
        Ok(Err(e)) => (StatusCode::INTERNAL_SERVER_ERROR, format!("reload failed: {e}\n")).into_response(),
        Err(e) => (StatusCode::INTERNAL_SERVER_ERROR, format!("reload failed: {e}\n")).into_response(),
    }
}

/// Runs the service on `bind` until the process ends.
pub fn serve(service: Arc<EmbedService>, bind: &str) -> std::io::Result<()> {
    let rt = tokio::runtime::Runtime::new()?;
    rt.block_on(async move {
        let listener = tokio::net::TcpListener::bind(bind).await?;
        axum::serve(listener, router(service)).await
    })
}

/// The service running on a background thread; stops when dropped.
pub struct EmbedServer {
    addr: SocketAddr,
    shutdown: Option<tokio::sync::oneshot::Sender<()>>,
    handle: Option<JoinHandle<std::io::Result<()>>>,
}

impl EmbedServer {
    pub fn start(service: Arc<EmbedService>, bind: &str) -> std::io::Result<EmbedServer> {
        let listener = std::net::TcpListener::bind(bind)?;
        listener.set_nonblocking(true)?;
        let addr = listener.local_addr()?;
        let rt = tokio::runtime::Runtime::new()?;
        let (tx, rx) = tokio::sync::oneshot::channel::<()>();
        let handle = thread::spawn(move || {
            rt.block_on(async move {
                let listener = tokio::net::TcpListener::from_std(listener)?;
                axum::serve(listener, router(service))
                    .with_graceful_shutdown(async {
                        let _ = rx.await;
                    })
                    .await
            })
        });
        Ok(EmbedServer {
            addr,
            shutdown: Some(tx),
            handle: Some(handle),
        })
    }

    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn url(&self, path: &str) -> String {
        format!("http://{}{path}", self.addr)
    }
}

impl Drop for EmbedServer {
    fn drop(&mut self) {
        if let Some(tx) = self.shutdown.take() {
            let _ = tx.send(());
        }
        if let Some(h) = self.handle.take() {
            let _ = h.join();
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const HOTEL: &[u8] = br#"{"@context":"http://schema.org","@id":"ACC1","@type":"Hotel","name":"Hotel Alpenhof"}"#;

    fn remove_block(out: &[u8], block: &str) -> Vec<u8> {
        let s = std::str::from_utf8(out).unwrap();
        s.replacen(block, "", 1).into_bytes()
    }

    #[test]
    fn page_map_examples() {
        let m = PageMap::parse(br#"{"0000":"0a2346a9-3b05-4dc4-a056-1f32ccf05fe8.json"}"#).unwrap();
        assert_eq!(m.lookup("0000"), Some("0a2346a9-3b05-4dc4-a056-1f32ccf05fe8.json"));
        let m = PageMap::parse(br#"{"/meta/impressum":"impressum.json"}"#).unwrap();
        assert_eq!(m.lookup("/meta/impressum"), Some("impressum.json"));
        assert_eq!(m.lookup("/meta/impressum/"), Some("impressum.json"));
        assert_eq!(m.lookup("/meta/impressum?lang=en"), Some("impressum.json"));
        assert_eq!(m.lookup("/meta/impressum//"), None);
        assert_eq!(m.lookup("/unknown"), None);
        assert_eq!(m.lookup("meta/impressum"), None);
        assert_eq!(
            PageMap::parse(br#"{"a":"x.json","a":"y.json"}"#).unwrap_err(),
            PageMapError::DuplicateKey("a".into())
        );
        assert!(matches!(PageMap::parse(br#"{"a":1}"#), Err(PageMapError::Parse { .. })));
        assert!(matches!(PageMap::parse(b"[]"), Err(PageMapError::Parse { .. })));
    }

    #[test]
    fn page_ids_do_not_get_url_treatment() {
        let m = PageMap::parse(br#"{"0000":"a.json","/":"root.json"}"#).unwrap();
        assert_eq!(m.lookup("0000/"), None);
        assert_eq!(m.lookup("/"), Some("root.json"));
        assert_eq!(m.lookup("/?q=1"), Some("root.json"));
    }

    #[test]
    fn injects_before_head_close() {
        let html = b"<html><head><title>x</title></head><body></body></html>";
        let out = inject(html, HOTEL, "ACC1").unwrap();
        let block = script_block(std::str::from_utf8(HOTEL).unwrap(), "ACC1");
        let expected = format!("<html><head><title>x</title>{block}</head><body></body></html>");
        assert_eq!(String::from_utf8(out.clone()).unwrap(), expected);
        assert_eq!(remove_block(&out, &block), html);
        assert_eq!(inject(&out, HOTEL, "ACC1").unwrap(), out);
    }

    #[test]
    fn body_fallback_and_errors() {
        let html = b"<BODY class=\"x\"><p>hi</p></BODY>";
        let out = inject(html, HOTEL, "ACC1").unwrap();
        assert!(String::from_utf8_lossy(&out).starts_with("<BODY class=\"x\"><script"));
        assert_eq!(
            inject(b"<bodyguard>x</bodyguard>", HOTEL, "a").unwrap_err(),
            InjectError::NotInjectable
        );
        assert_eq!(inject(b"<p>fragment</p>", HOTEL, "a").unwrap_err(), InjectError::NotInjectable);
        assert_eq!(inject(b"\xff</head>", HOTEL, "a").unwrap_err(), InjectError::NotUtf8);
    }

    #[test]
    fn replaces_block_with_same_id_only() {
        let html = b"<head></head>";
        let a = inject(html, HOTEL, "ACC1").unwrap();
        let b = inject(&a, HOTEL, "OTHER").unwrap();
        let changed = br#"{"@context":"http://schema.org","@id":"ACC1","@type":"Hotel","name":"Neu"}"#;
        let c = inject(&b, changed, "ACC1").unwrap();
        let s = String::from_utf8(c).unwrap();
        assert_eq!(s.matches("<script").count(), 2);
        assert!(s.contains("Neu"));
        assert!(!s.contains("Alpenhof\"}</script><script type=\"application/ld+json\" data-annotation-id=\"ACC1\""));
    }

    #[test]
    fn script_content_cannot_close_the_block() {
        let json = r#"{"@context":"http://schema.org","@type":"Thing","name":"</script><!--"}"#;
        let block = script_block(json, r#"a"b"#);
        assert_eq!(block.matches("</script>").count(), 1);
        assert!(block.contains(r#"data-annotation-id="a&quot;b""#));
        let inner = block
            .trim_start_matches(r#"<script type="application/ld+json" data-annotation-id="a&quot;b">"#)
            .trim_end_matches("</script>");
        let back: serde_json::Value = serde_json::from_str(inner).unwrap();
        assert_eq!(back["name"], "</script><!--");
    }
}
