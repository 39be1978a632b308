//! Fetching XML payloads from configured sources: local files selected by
//! glob, or an HTTP endpoint with a templated request body.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::thread;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: line {line}, column {column}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        column: usize,
        message: String,
    },
    #[error("source `{source_name}`: {message}")]
    Invalid { source_name: String, message: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Method {
    Get,
    Post,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HttpSource {
    pub endpoint: String,
    pub method: Method,
    /// Request body with `{{name}}` placeholders.
    pub body: Option<String>,
    pub headers: BTreeMap<String, String>,
    pub timeout: Duration,
    pub retries: u32,
    pub retry_delay: Duration,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum SourceKind {
    Http(HttpSource),
    /// Glob pattern, already resolved against the config directory.
    File(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SourceConfig {
    pub name: String,
    pub kind: SourceKind,
    /// Overrides the dataset named by the mapping.
    pub dataset: Option<String>,
    pub mapping: PathBuf,
}

#[derive(Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
struct RawSource {
    name: String,
    kind: String,
    endpoint: Option<String>,
    method: Option<Method>,
    body: Option<String>,
    #[serde(default)]
    headers: BTreeMap<String, String>,
    timeout_seconds: Option<f64>,
    retries: Option<u32>,
    retry_delay_ms: Option<u64>,
    path: Option<String>,
    dataset: Option<String>,
    mapping: PathBuf,
}

impl RawSource {
    fn resolve(self, base: &Path) -> Result<SourceConfig, ConfigError> {
        let invalid = |message: &str| ConfigError::Invalid {
            source_name: self.name.clone(),
            message: message.into(),
        };
        let kind = match self.kind.as_str() {
            "http" => {
                if self.path.is_some() {
                    return Err(invalid("`path` belongs to file sources"));
                }
                let endpoint = self.endpoint.clone().ok_or_else(|| invalid("missing `endpoint`"))?;
                let timeout = self.timeout_seconds.unwrap_or(30.0);
                if !(timeout > 0.0 && timeout.is_finite()) {
                    return Err(invalid("`timeoutSeconds` must be positive"));
                }
                let method = self.method.unwrap_or(if self.body.is_some() { Method::Post } else { Method::Get });
                if method == Method::Get && self.body.is_some() {
                    return Err(invalid("GET requests carry no body"));
                }
                SourceKind::Http(HttpSource {
                    endpoint,
                    method,
                    body: self.body.clone(),
                    headers: self.headers.clone(),
                    timeout: Duration::from_secs_f64(timeout),
                    retries: self.retries.unwrap_or(2),
                    retry_delay: Duration::from_millis(self.retry_delay_ms.unwrap_or(500)),
                })
            }
            "file" => {
                if self.endpoint.is_some() || self.body.is_some() || !self.headers.is_empty() {
                    return Err(invalid("file sources take only `path`"));
                }
                let pattern = self.path.as_deref().ok_or_else(|| invalid("missing `path`"))?;
                glob::Pattern::new(pattern).map_err(|e| invalid(&format!("bad glob: {e}")))?;
                SourceKind::File(base.join(pattern).to_string_lossy().into_owned())
            }
            other => return Err(invalid(&format!("unknown kind `{other}`"))),
        };
        Ok(SourceConfig {
            name: self.name,
            kind,
            dataset: self.dataset,
            mapping: base.join(self.mapping),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManualSource {
    pub dataset: String,
    /// Glob pattern, resolved against the config directory on load.
    pub path: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PipelineConfig {
    pub vocabulary: PathBuf,
    pub spec: PathBuf,
    pub repository: PathBuf,
    pub page_map: Option<PathBuf>,
    pub sources: Vec<SourceConfig>,
    pub manual: Vec<ManualSource>,
    /// Values for body template placeholders.
    pub bindings: BTreeMap<String, String>,
}

#[derive(Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
struct RawPipeline {
    vocabulary: PathBuf,
    spec: PathBuf,
    repository: PathBuf,
    page_map: Option<PathBuf>,
    #[serde(default)]
    sources: Vec<RawSource>,
    #[serde(default)]
    manual: Vec<ManualSource>,
    #[serde(default)]
    bindings: BTreeMap<String, String>,
}

impl PipelineConfig {
    /// Reads a pipeline config; relative paths resolve against its directory.
    pub fn load(path: &Path) -> Result<PipelineConfig, ConfigError> {
        let bytes = fs::read(path).map_err(|source| ConfigError::Io {
            path: path.to_owned(),
            source,
        })?;
        let base = path.parent().unwrap_or(Path::new("."));
        PipelineConfig::parse(&bytes, base).map_err(|e| match e {
            ConfigError::Parse { line, column, message, .. } => ConfigError::Parse {
                path: path.to_owned(),
                line,
                column,
                message,
            },
            other => other,
        })
    }

    pub fn parse(bytes: &[u8], base: &Path) -> Result<PipelineConfig, ConfigError> {
        let raw: RawPipeline = serde_json::from_slice(bytes).map_err(|e| ConfigError::Parse {
            path: PathBuf::new(),
            line: e.line(),
            column: e.column(),
            message: e.to_string(),
        })?;
        let mut names = std::collections::BTreeSet::new();
        let mut sources = Vec::new();
        for s in raw.sources {
            if !names.insert(s.name.clone()) {
                return Err(ConfigError::Invalid {
                    source_name: s.name,
                    message: "duplicate source name".into(),
                });
            }
            sources.push(s.resolve(base)?);
        }
        let manual = raw
            .manual
            .into_iter()
            .map(|m| ManualSource {
                path: base.join(&m.path).to_string_lossy().into_owned(),
                dataset: m.dataset,
            })
            .collect();
        Ok(PipelineConfig {
            vocabulary: base.join(raw.vocabulary),
            spec: base.join(raw.spec),
            repository: base.join(raw.repository),
            page_map: raw.page_map.map(|p| base.join(p)),
            sources,
            manual,
            bindings: raw.bindings,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Payload {
    /// File path or request label.
    pub tag: String,
    pub bytes: Vec<u8>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum FetchErrorKind {
    #[error("network error after {attempts} attempt(s): {message}")]
    Network { attempts: u32, message: String },
    #[error("HTTP status {status} after {attempts} attempt(s)")]
    Status { status: u16, attempts: u32 },
    #[error("no file matches")]
    NotFound,
    #[error("{0}")]
    Io(String),
    #[error("template placeholder `{0}` has no binding")]
    UnboundPlaceholder(String),
    #[error("environment variable `{0}` is not set")]
    MissingEnv(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("{tag}: {kind}")]
pub struct FetchError {
    pub tag: String,
    pub kind: FetchErrorKind,
}

/// Every planned request or file match ends up in exactly one of the lists.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct FetchResult {
    pub payloads: Vec<Payload>,
    pub errors: Vec<FetchError>,
}

impl FetchResult {
    pub fn is_ok(&self) -> bool {
        self.errors.is_empty()
    }
}

pub fn fetch(cfg: &SourceConfig, bindings: &BTreeMap<String, String>) -> FetchResult {
    match &cfg.kind {
        SourceKind::File(pattern) => fetch_files(pattern),
        SourceKind::Http(http) => {
            let tag = format!("{} ({} {})", cfg.name, http.method, http.endpoint);
            let mut result = FetchResult::default();
            match fetch_http(http, bindings) {
                Ok(bytes) => result.payloads.push(Payload { tag, bytes }),
                Err(kind) => result.errors.push(FetchError { tag, kind }),
            }
            result
        }
    }
}

fn fetch_files(pattern: &str) -> FetchResult {
    let mut result = FetchResult::default();
    let paths = match glob::glob(pattern) {
        Ok(paths) => paths,
        Err(e) => {
            result.errors.push(FetchError {
                tag: pattern.into(),
                kind: FetchErrorKind::Io(e.to_string()),
            });
            return result;
        }
    };
    let mut matched: Vec<Result<PathBuf, FetchError>> = paths
        .map(|p| {
            p.map_err(|e| FetchError {
                tag: e.path().display().to_string(),
                kind: FetchErrorKind::Io(e.error().to_string()),
            })
        })
        .collect();
    matched.sort_by(|a, b| match (a, b) {
        (Ok(a), Ok(b)) => a.cmp(b),
        (Ok(_), Err(_)) => std::cmp::Ordering::Less,
        (Err(_), Ok(_)) => std::cmp::Ordering::Greater,
        (Err(a), Err(b)) => a.tag.cmp(&b.tag),
    });
    if matched.is_empty() {
        result.errors.push(FetchError {
            tag: pattern.into(),
            kind: FetchErrorKind::NotFound,
        });
    }
    for m in matched {
        match m.and_then(|path| {
            let tag = path.display().to_string();
            fs::read(&path)
                .map(|bytes| Payload { tag: tag.clone(), bytes })
                .map_err(|e| FetchError {
                    tag,
                    kind: FetchErrorKind::Io(e.to_string()),
                })
        }) {
            Ok(p) => result.payloads.push(p),
            Err(e) => result.errors.push(e),
        }
    }
    result
}

fn fetch_http(http: &HttpSource, bindings: &BTreeMap<String, String>) -> Result<Vec<u8>, FetchErrorKind> {
    let endpoint = interpolate_env(&http.endpoint)?;
    let headers = http
        .headers
        .iter()
        .map(|(k, v)| Ok((k.clone(), interpolate_env(v)?)))
        .collect::<Result<Vec<_>, FetchErrorKind>>()?;
    let body = http.body.as_deref().map(|t| render_template(t, bindings)).transpose()?;

    let client = reqwest::blocking::Client::builder()
        .timeout(http.timeout)
        .build()
        .map_err(|e| FetchErrorKind::Network {
            attempts: 0,
            message: e.to_string(),
        })?;
    let mut attempts = 0;
    loop {
        attempts += 1;
        let mut req = match http.method {
            Method::Get => client.get(&endpoint),
            Method::Post => client.post(&endpoint),
        };
        for (k, v) in &headers {
            req = req.header(k, v);
        }
        if let Some(body) = &body {
            req = req.body(body.clone());
        }
        let retryable = match req.send() {
            Ok(resp) => {
                let status = resp.status();
                if status.is_success() {
                    return resp.bytes().map(|b| b.to_vec()).map_err(|e| FetchErrorKind::Network {
                        attempts,
                        message: e.to_string(),
                    });
                }
                let err = FetchErrorKind::Status {
                    status: status.as_u16(),
                    attempts,
                };
                if !status.is_server_error() {
                    return Err(err);
                }
                err
            }
            Err(e) => FetchErrorKind::Network {
                attempts,
                message: e.to_string(),
            },
        };
        if attempts > http.retries {
            return Err(retryable);
        }
        thread::sleep(http.retry_delay);
    }
}

/// Replaces `{{name}}` with its binding. Whitespace inside the braces is
/// ignored.
pub fn render_template(template: &str, bindings: &BTreeMap<String, String>) -> Result<String, FetchErrorKind> {
    let mut out = String::with_capacity(template.len());
    let mut rest = template;
    while let Some(start) = rest.find("{{") {
        out.push_str(&rest[..start]);
        let after = &rest[start + 2..];
        let Some(end) = after.find("}}") else {
            out.push_str(&rest[start..]);
            return Ok(out);
        };
        let name = after[..end].trim();
        let value = bindings
            .get(name)
            .ok_or_else(|| FetchErrorKind::UnboundPlaceholder(name.into()))?;
        out.push_str(value);
        rest = &after[end + 2..];
    }
    out.push_str(rest);
    Ok(out)
}

/// Placeholder names used by a template, in order of first appearance.
pub fn template_placeholders(template: &str) -> Vec<String> {
    let mut names: Vec<String> = Vec::new();
    let mut rest = template;
    while let Some(start) = rest.find("{{") {
        let after = &rest[start + 2..];
        let Some(end) = after.find("}}") else { break };
        let name = after[..end].trim().to_owned();
        if !names.contains(&name) {
            names.push(name);
        }
        rest = &after[end + 2..];
    }
    names
}

/// Replaces `${VAR}` with the environment variable's value.
pub fn interpolate_env(s: &str) -> Result<String, FetchErrorKind> {
    let mut out = String::with_capacity(s.len());
    let mut rest = s;
    while let Some(start) = rest.find("${") {
        out.push_str(&rest[..start]);
        let after = &rest[start + 2..];
        let Some(end) = after.find('}') else {
            out.push_str(&rest[start..]);
            return Ok(out);
        };
        let var = &after[..end];
        let value = std::env::var(var).map_err(|_| FetchErrorKind::MissingEnv(var.into()))?;
        out.push_str(&value);
        rest = &after[end + 1..];
    }
    out.push_str(rest);
    Ok(out)
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Method::Get => "GET",
            Method::Post => "POST",
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stub::{StubResponse, StubServer};

    fn http(endpoint: String, retries: u32) -> SourceConfig {
        SourceConfig {
            name: "dsi".into(),
            kind: SourceKind::Http(HttpSource {
                endpoint,
                method: Method::Post,
                body: Some("<Request><Range From=\"{{from}}\" To=\"{{ to }}\"/></Request>".into()),
                headers: BTreeMap::from([("X-Client".into(), "tvb".into())]),
                timeout: Duration::from_secs(5),
                retries,
                retry_delay: Duration::ZERO,
            }),
            dataset: None,
            mapping: "m.json".into(),
        }
    }

    fn bindings() -> BTreeMap<String, String> {
        BTreeMap::from([("from".into(), "2017-03-01".into()), ("to".into(), "2017-03-31".into())])
    }

    #[test]
    fn http_success() {
        let stub = StubServer::start(StubResponse::ok("<Events/>")).unwrap();
        let result = fetch(&http(stub.url("/dsi"), 2), &bindings());
        assert_eq!(result.errors, []);
        assert_eq!(result.payloads.len(), 1);
        assert_eq!(result.payloads[0].bytes, b"<Events/>");
        let req = &stub.requests()[0];
        assert_eq!(req.method, "POST");
        assert_eq!(req.path, "/dsi");
        assert_eq!(
            String::from_utf8_lossy(&req.body),
            r#"<Request><Range From="2017-03-01" To="2017-03-31"/></Request>"#
        );
        assert!(req.headers.iter().any(|(k, v)| k.eq_ignore_ascii_case("x-client") && v == "tvb"));
    }

    #[test]
    fn server_errors_are_retried_a_bounded_number_of_times() {
        let stub = StubServer::start(StubResponse::status(500)).unwrap();
        for retries in [0, 1, 3] {
            let before = stub.request_count();
            let result = fetch(&http(stub.url("/dsi"), retries), &bindings());
            assert!(result.payloads.is_empty());
            assert_eq!(
                result.errors[0].kind,
                FetchErrorKind::Status {
                    status: 500,
                    attempts: retries + 1
                }
            );
            assert_eq!(stub.request_count() - before, retries as usize + 1);
        }
    }

    #[test]
    fn client_errors_are_not_retried() {
        let stub = StubServer::start(StubResponse::status(404)).unwrap();
        let result = fetch(&http(stub.url("/dsi"), 3), &bindings());
        assert!(matches!(result.errors[0].kind, FetchErrorKind::Status { status: 404, attempts: 1 }));
        assert_eq!(stub.request_count(), 1);
    }

    #[test]
    fn network_error_carries_tag() {
        let port = {
            let l = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
            l.local_addr().unwrap().port()
        };
        let result = fetch(&http(format!("http://127.0.0.1:{port}/dsi"), 1), &bindings());
        assert_eq!(result.errors.len(), 1);
        assert!(result.errors[0].tag.starts_with("dsi"));
        assert!(matches!(result.errors[0].kind, FetchErrorKind::Network { attempts: 2, .. }));
    }

    #[test]
    fn unbound_placeholder_sends_nothing() {
        let stub = StubServer::start(StubResponse::ok("<x/>")).unwrap();
        let result = fetch(&http(stub.url("/"), 0), &BTreeMap::new());
        assert_eq!(result.errors[0].kind, FetchErrorKind::UnboundPlaceholder("from".into()));
        assert_eq!(stub.request_count(), 0);
    }

    #[test]
    fn templates_and_env() {
        let t = "{{a}}-{{ b }}-{{a}}";
        assert_eq!(template_placeholders(t), ["a", "b"]);
        let b = BTreeMap::from([("a".into(), "1".into()), ("b".into(), "2".into())]);
        assert_eq!(render_template(t, &b).unwrap(), "1-2-1");
        assert_eq!(render_template("no {{ end", &b).unwrap(), "no {{ end");

        std::env::set_var("ANNOTATOR_TEST_TOKEN", "s3cret");
        assert_eq!(interpolate_env("Bearer ${ANNOTATOR_TEST_TOKEN}").unwrap(), "Bearer s3cret");
        assert_eq!(
            interpolate_env("${ANNOTATOR_TEST_UNSET_VAR}").unwrap_err(),
            FetchErrorKind::MissingEnv("ANNOTATOR_TEST_UNSET_VAR".into())
        );
    }

    #[test]
    fn files_in_lexicographic_order() {
        let dir = tempfile::tempdir().unwrap();
        for name in ["b.xml", "a.xml", "c.txt"] {
            fs::write(dir.path().join(name), name).unwrap();
        }
        let cfg = SourceConfig {
            name: "f".into(),
            kind: SourceKind::File(dir.path().join("*.xml").to_string_lossy().into_owned()),
            dataset: None,
            mapping: "m".into(),
        };
        let result = fetch(&cfg, &BTreeMap::new());
        let names: Vec<_> = result.payloads.iter().map(|p| p.bytes.clone()).collect();
        assert_eq!(names, [b"a.xml".to_vec(), b"b.xml".to_vec()]);

        let missing = SourceConfig {
            kind: SourceKind::File(dir.path().join("*.json").to_string_lossy().into_owned()),
            ..cfg
        };
        let result = fetch(&missing, &BTreeMap::new());
        assert_eq!(result.payloads.len() + result.errors.len(), 1);
        assert_eq!(result.errors[0].kind, FetchErrorKind::NotFound);
    }

    #[test]
    fn pipeline_config() {
        let base = Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures");
        let cfg = PipelineConfig::load(&base.join("pipeline.json")).unwrap();
        assert_eq!(cfg.sources.len(), 3);
        assert_eq!(cfg.manual.len(), 3);
        assert_eq!(cfg.repository, base.join("repo"));
        assert_eq!(cfg.sources[1].mapping, base.join("mappings/event.map.json"));

        let bad = |json: &str| PipelineConfig::parse(json.as_bytes(), Path::new(".")).unwrap_err();
        let head = r#""vocabulary":"v","spec":"s","repository":"r""#;
        assert!(matches!(
            bad(&format!(r#"{{{head},"sources":[{{"name":"x","kind":"http","endpoint":"http://h","timeoutSeconds":0,"mapping":"m"}}]}}"#)),
            ConfigError::Invalid { .. }
        ));
        assert!(matches!(
            bad(&format!(r#"{{{head},"sources":[{{"name":"x","kind":"ftp","mapping":"m"}}]}}"#)),
            ConfigError::Invalid { .. }
        ));
        assert!(matches!(bad(&format!(r#"{{{head},"extra":1}}"#)), ConfigError::Parse { .. }));
    }
}
