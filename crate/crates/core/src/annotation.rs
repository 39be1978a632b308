//! The annotation document model and its canonical JSON-LD form.
//!
//! Canonical form: `@context` (top level only), `@id`, `@type`, then
//! properties in byte-wise lexicographic order. Single-element type and value
//! lists are written bare, there is no insignificant whitespace and numbers
//! use their shortest round-trip decimal form. Value objects
//! (`{"@value": ...}`) write their keys in lexicographic order.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde_json::{Map, Value as Json};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::literal::{format_number, is_language_tag, Datatype};

pub const SCHEMA_CONTEXT: &str = "http://schema.org";

#[derive(Debug, Error, PartialEq)]
pub enum AnnotationError {
    #[error("JSON syntax error at line {line}, column {column}: {message}")]
    Json {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("missing @context")]
    MissingContext,
    #[error("unsupported @context `{0}`, expected {SCHEMA_CONTEXT}")]
    ContextMismatch(String),
    #[error("missing @type at {0}")]
    MissingType(String),
    #[error("invalid annotation at {path}: {message}")]
    Invalid { path: String, message: String },
}

fn invalid(path: &str, message: impl Into<String>) -> AnnotationError {
    AnnotationError::Invalid {
        path: if path.is_empty() { "/".into() } else { path.into() },
        message: message.into(),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Value {
    Text(String),
    Number(f64),
    Boolean(bool),
    /// A literal with an explicit datatype, `{"@type": "Date", "@value": "..."}`.
    Typed { value: String, datatype: Datatype },
    /// A language-tagged string, `{"@language": "de", "@value": "..."}`.
    Lang { value: String, language: String },
    Entity(Box<AnnotationDocument>),
}

impl Value {
    pub fn text(s: impl Into<String>) -> Value {
        Value::Text(s.into())
    }

    pub fn lang(value: impl Into<String>, language: impl Into<String>) -> Value {
        Value::Lang {
            value: value.into(),
            language: language.into(),
        }
    }

    pub fn entity(doc: AnnotationDocument) -> Value {
        Value::Entity(Box::new(doc))
    }

    pub fn as_entity(&self) -> Option<&AnnotationDocument> {
        match self {
            Value::Entity(e) => Some(e),
            _ => None,
        }
    }

    /// Short description used in reports.
    pub fn describe(&self) -> String {
        match self {
            Value::Text(s) => format!("Text \"{s}\""),
            Value::Number(n) => format!("Number {}", format_number(*n)),
            Value::Boolean(b) => format!("Boolean {b}"),
            Value::Typed { value, datatype } => format!("{datatype} \"{value}\""),
            Value::Lang { value, language } => format!("\"{value}\"@{language}"),
            Value::Entity(e) => e.types.join(","),
        }
    }
}

/// A typed entity tree. Top-level documents carry the schema.org context when
/// serialized; nested entities never do.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct AnnotationDocument {
    pub id: Option<String>,
    pub types: Vec<String>,
    pub properties: BTreeMap<String, Vec<Value>>,
}

impl AnnotationDocument {
    pub fn new<S: Into<String>>(types: impl IntoIterator<Item = S>) -> AnnotationDocument {
        AnnotationDocument {
            id: None,
            types: types.into_iter().map(Into::into).collect(),
            properties: BTreeMap::new(),
        }
    }

    pub fn with_id(mut self, id: impl Into<String>) -> Self {
        self.id = Some(id.into());
        self
    }

    /// Appends a value to a property.
    pub fn push(&mut self, property: impl Into<String>, value: Value) {
        self.properties.entry(property.into()).or_default().push(value);
    }

    pub fn with(mut self, property: impl Into<String>, value: Value) -> Self {
        self.push(property, value);
        self
    }

    pub fn values(&self, property: &str) -> &[Value] {
        self.properties.get(property).map_or(&[], Vec::as_slice)
    }

    /// Checks the structural invariants every serializable document holds.
    pub fn check(&self) -> Result<(), AnnotationError> {
        self.check_at("")
    }

    fn check_at(&self, path: &str) -> Result<(), AnnotationError> {
        if self.types.is_empty() || self.types.iter().any(String::is_empty) {
            return Err(AnnotationError::MissingType(display_path(path)));
        }
        for (name, values) in &self.properties {
            let here = format!("{path}/{name}");
            if name.is_empty() || name.starts_with('@') {
                return Err(invalid(&here, "invalid property name"));
            }
            if values.is_empty() {
                return Err(invalid(&here, "empty value list"));
            }
            for (i, value) in values.iter().enumerate() {
                match value {
                    Value::Number(n) if !n.is_finite() => {
                        return Err(invalid(&here, "non-finite number"))
                    }
                    Value::Lang { language, .. } if !is_language_tag(language) => {
                        return Err(invalid(&here, format!("invalid language tag `{language}`")))
                    }
                    Value::Entity(e) => e.check_at(&format!("{here}/{i}"))?,
                    _ => {}
                }
            }
        }
        Ok(())
    }

    /// Canonical JSON-LD bytes of a top-level document.
    pub fn canonical_bytes(&self) -> Vec<u8> {
        self.canonical_string().into_bytes()
    }

    pub fn canonical_string(&self) -> String {
        let mut out = String::new();
        write_node(&mut out, self, true);
        out
    }

    pub fn parse(bytes: &[u8]) -> Result<AnnotationDocument, AnnotationError> {
        parse_annotation(bytes)
    }

    /// Number of RDF triples the document denotes: one per type, one per
    /// property value, plus the triples of nested entities.
    pub fn count_triples(&self) -> u64 {
        let own = self.types.len() as u64;
        self.properties
            .values()
            .flatten()
            .map(|v| 1 + v.as_entity().map_or(0, AnnotationDocument::count_triples))
            .sum::<u64>()
            + own
    }

    /// Identifier derived from content: SHA-256 of the canonical form with
    /// `@id` removed, as lowercase hex.
    pub fn derived_id(&self) -> String {
        let mut anonymous = self.clone();
        anonymous.id = None;
        content_hash(&anonymous.canonical_bytes())
    }
}

fn display_path(path: &str) -> String {
    if path.is_empty() {
        "/".into()
    } else {
        path.into()
    }
}

pub fn canonical_serialize(doc: &AnnotationDocument) -> Vec<u8> {
    doc.canonical_bytes()
}

pub fn count_triples(doc: &AnnotationDocument) -> u64 {
    doc.count_triples()
}

/// Lowercase hex SHA-256.
pub fn content_hash(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Filename for a document id: characters outside `[A-Za-z0-9._-]` become `_`.
pub fn filename_for_id(id: &str) -> String {
    let stem: String = id
        .chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || matches!(c, '.' | '_' | '-') {
                c
            } else {
                '_'
            }
        })
        .collect();
    format!("{stem}.json")
}

fn write_str(out: &mut String, s: &str) {
    out.push_str(&serde_json::to_string(s).expect("strings serialize"));
}

fn write_node(out: &mut String, doc: &AnnotationDocument, top_level: bool) {
    out.push('{');
    if top_level {
        out.push_str("\"@context\":");
        write_str(out, SCHEMA_CONTEXT);
        out.push(',');
    }
    if let Some(id) = &doc.id {
        out.push_str("\"@id\":");
        write_str(out, id);
        out.push(',');
    }
    out.push_str("\"@type\":");
    if let [single] = doc.types.as_slice() {
        write_str(out, single);
    } else {
        out.push('[');
        for (i, t) in doc.types.iter().enumerate() {
            if i > 0 {
                out.push(',');
            }
            write_str(out, t);
        }
        out.push(']');
    }
    for (name, values) in &doc.properties {
        out.push(',');
        write_str(out, name);
        out.push(':');
        if let [single] = values.as_slice() {
            write_value(out, single);
        } else {
            out.push('[');
            for (i, v) in values.iter().enumerate() {
                if i > 0 {
                    out.push(',');
                }
                write_value(out, v);
            }
            out.push(']');
        }
    }
    out.push('}');
}

fn write_value(out: &mut String, value: &Value) {
    match value {
        Value::Text(s) => write_str(out, s),
        Value::Number(n) => out.push_str(&format_number(*n)),
        Value::Boolean(b) => {
            let _ = write!(out, "{b}");
        }
        Value::Typed { value, datatype } => {
            out.push_str("{\"@type\":");
            write_str(out, datatype.name());
            out.push_str(",\"@value\":");
            write_str(out, value);
            out.push('}');
        }
        Value::Lang { value, language } => {
            out.push_str("{\"@language\":");
            write_str(out, language);
            out.push_str(",\"@value\":");
            write_str(out, value);
            out.push('}');
        }
        Value::Entity(e) => write_node(out, e, false),
    }
}

fn normalize_context(ctx: &str) -> Option<&'static str> {
    match ctx.trim_end_matches('/') {
        "http://schema.org" | "https://schema.org" => Some(SCHEMA_CONTEXT),
        _ => None,
    }
}

fn check_context(value: &Json) -> Result<(), AnnotationError> {
    match value {
        Json::String(s) if normalize_context(s).is_some() => Ok(()),
        other => Err(AnnotationError::ContextMismatch(match other {
            Json::String(s) => s.clone(),
            v => v.to_string(),
        })),
    }
}

/// Parses a JSON-LD annotation. Key order and whitespace are irrelevant; the
/// top-level object must carry the schema.org context.
pub fn parse_annotation(bytes: &[u8]) -> Result<AnnotationDocument, AnnotationError> {
    let json: Json = serde_json::from_slice(bytes).map_err(|e| AnnotationError::Json {
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    })?;
    let Json::Object(obj) = json else {
        return Err(invalid("", "top level must be a JSON object"));
    };
    match obj.get("@context") {
        None => return Err(AnnotationError::MissingContext),
        Some(ctx) => check_context(ctx)?,
    }
    let doc = parse_node(&obj, "")?;
    doc.check()?;
    Ok(doc)
}

fn parse_node(obj: &Map<String, Json>, path: &str) -> Result<AnnotationDocument, AnnotationError> {
    let mut doc = AnnotationDocument::default();
    for (key, value) in obj {
        match key.as_str() {
            "@context" => check_context(value)?,
            "@id" => match value {
                Json::String(s) => doc.id = Some(s.clone()),
                _ => return Err(invalid(path, "@id must be a string")),
            },
            "@type" => {
                doc.types = match value {
                    Json::String(s) => vec![s.clone()],
                    Json::Array(items) => items
                        .iter()
                        .map(|t| match t {
                            Json::String(s) => Ok(s.clone()),
                            _ => Err(invalid(path, "@type entries must be strings")),
                        })
                        .collect::<Result<_, _>>()?,
                    _ => return Err(invalid(path, "@type must be a string or array")),
                }
            }
            k if k.starts_with('@') => {
                return Err(invalid(path, format!("unsupported keyword `{k}`")))
            }
            name => {
                let here = format!("{path}/{name}");
                let values = match value {
                    Json::Array(items) => items
                        .iter()
                        .enumerate()
                        .map(|(i, v)| parse_value(v, &format!("{here}/{i}")))
                        .collect::<Result<Vec<_>, _>>()?,
                    single => vec![parse_value(single, &format!("{here}/0"))?],
                };
                if values.is_empty() {
                    return Err(invalid(&here, "empty value list"));
                }
                doc.properties.insert(name.to_owned(), values);
            }
        }
    }
    if doc.types.is_empty() {
        return Err(AnnotationError::MissingType(display_path(path)));
    }
    Ok(doc)
}

fn parse_value(value: &Json, path: &str) -> Result<Value, AnnotationError> {
    match value {
        Json::String(s) => Ok(Value::Text(s.clone())),
        Json::Bool(b) => Ok(Value::Boolean(*b)),
        Json::Number(n) => n
            .as_f64()
            .filter(|f| f.is_finite())
            .map(|f| Value::Number(if f == 0.0 { 0.0 } else { f }))
            .ok_or_else(|| invalid(path, "number out of range")),
        Json::Null => Err(invalid(path, "null values are not allowed")),
        Json::Array(_) => Err(invalid(path, "nested arrays are not allowed")),
        Json::Object(obj) if obj.contains_key("@value") => parse_value_object(obj, path),
        Json::Object(obj) => Ok(Value::Entity(Box::new(parse_node(obj, path)?))),
    }
}

fn parse_value_object(obj: &Map<String, Json>, path: &str) -> Result<Value, AnnotationError> {
    if let Some(k) = obj
        .keys()
        .find(|k| !matches!(k.as_str(), "@value" | "@language" | "@type"))
    {
        return Err(invalid(path, format!("unexpected key `{k}` in value object")));
    }
    let raw = &obj["@value"];
    match (obj.get("@language"), obj.get("@type")) {
        (Some(_), Some(_)) => Err(invalid(path, "value object has both @language and @type")),
        (Some(Json::String(language)), None) => match raw {
            Json::String(value) => Ok(Value::Lang {
                value: value.clone(),
                language: language.clone(),
            }),
            _ => Err(invalid(path, "language-tagged value must be a string")),
        },
        (Some(_), None) => Err(invalid(path, "@language must be a string")),
        (None, Some(Json::String(dt))) => {
            let datatype = Datatype::from_name(dt)
                .ok_or_else(|| invalid(path, format!("unsupported datatype `{dt}`")))?;
            match raw {
                Json::String(value) => Ok(Value::Typed {
                    value: value.clone(),
                    datatype,
                }),
                _ => Err(invalid(path, "typed value must be a string")),
            }
        }
        (None, Some(_)) => Err(invalid(path, "@type must be a string")),
        (None, None) => match raw {
            Json::Object(_) | Json::Array(_) | Json::Null => {
                Err(invalid(path, "@value must be a scalar"))
            }
            scalar => parse_value(scalar, path),
        },
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn hotel() -> AnnotationDocument {
        AnnotationDocument::new(["Hotel"])
            .with_id("ACC1")
            .with("name", Value::text("Hotel Alpenhof"))
            .with(
                "address",
                Value::entity(
                    AnnotationDocument::new(["PostalAddress"])
                        .with("postalCode", Value::text("6290"))
                        .with("addressLocality", Value::text("Mayrhofen")),
                ),
            )
    }

    const HOTEL: &str = r#"{"@context":"http://schema.org","@id":"ACC1","@type":"Hotel","address":{"@type":"PostalAddress","addressLocality":"Mayrhofen","postalCode":"6290"},"name":"Hotel Alpenhof"}"#;

    #[test]
    fn canonical_hotel() {
        assert_eq!(hotel().canonical_string(), HOTEL);
        assert_eq!(hotel().canonical_bytes(), hotel().canonical_bytes());
        assert_eq!(parse_annotation(HOTEL.as_bytes()).unwrap(), hotel());
    }

    #[test]
    fn minimal_event() {
        let doc = AnnotationDocument::new(["Event"]).with("name", Value::text("X"));
        assert_eq!(
            doc.canonical_string(),
            r#"{"@context":"http://schema.org","@type":"Event","name":"X"}"#
        );
    }

    #[test]
    fn value_objects_and_lists() {
        let doc = AnnotationDocument::new(["Event", "MusicEvent"])
            .with("name", Value::lang("Konzert", "de"))
            .with("name", Value::lang("Concert", "en"))
            .with(
                "startDate",
                Value::Typed {
                    value: "2017-03-17".into(),
                    datatype: Datatype::Date,
                },
            )
            .with("isAccessibleForFree", Value::Boolean(true))
            .with("price", Value::Number(12.5));
        let s = doc.canonical_string();
        assert_eq!(
            s,
            r#"{"@context":"http://schema.org","@type":["Event","MusicEvent"],"isAccessibleForFree":true,"name":[{"@language":"de","@value":"Konzert"},{"@language":"en","@value":"Concert"}],"price":12.5,"startDate":{"@type":"Date","@value":"2017-03-17"}}"#
        );
        assert_eq!(parse_annotation(s.as_bytes()).unwrap(), doc);
    }

    #[test]
    fn lenient_parsing() {
        let pretty = r#"
        {
          "name": ["Hotel Alpenhof"],
          "@type": ["Hotel"],
          "@context": "https://schema.org/",
          "address": {"postalCode": "6290", "@type": "PostalAddress", "addressLocality": {"@value": "Mayrhofen"}},
          "@id": "ACC1"
        }"#;
        assert_eq!(parse_annotation(pretty.as_bytes()).unwrap(), hotel());
    }

    #[test]
    fn parse_errors() {
        assert_eq!(
            parse_annotation(br#"{"@type":"Hotel"}"#).unwrap_err(),
            AnnotationError::MissingContext
        );
        assert!(matches!(
            parse_annotation(br#"{"@context":"http://example.org","@type":"Hotel"}"#),
            Err(AnnotationError::ContextMismatch(_))
        ));
        assert_eq!(
            parse_annotation(br#"{"@context":"http://schema.org","name":"x"}"#).unwrap_err(),
            AnnotationError::MissingType("/".into())
        );
        assert_eq!(
            parse_annotation(br#"{"@context":"http://schema.org","@type":"Hotel","address":{"postalCode":"1"}}"#)
                .unwrap_err(),
            AnnotationError::MissingType("/address/0".into())
        );
        assert!(matches!(parse_annotation(b"{"), Err(AnnotationError::Json { .. })));
        for bad in [
            r#"{"@context":"http://schema.org","@type":"Hotel","name":null}"#,
            r#"{"@context":"http://schema.org","@type":"Hotel","name":[]}"#,
            r#"{"@context":"http://schema.org","@type":"Hotel","name":[["x"]]}"#,
            r#"{"@context":"http://schema.org","@type":"Hotel","@graph":[]}"#,
            r#"{"@context":"http://schema.org","@type":"Hotel","name":{"@value":"x","@language":"d"}}"#,
            r#"{"@context":"http://schema.org","@type":"Hotel","name":{"@value":"x","@type":"xsd:date"}}"#,
        ] {
            assert!(matches!(parse_annotation(bad.as_bytes()), Err(AnnotationError::Invalid { .. })), "{bad}");
        }
    }

    #[test]
    fn triples() {
        assert_eq!(hotel().count_triples(), 6);
        assert_eq!(AnnotationDocument::new(["Event"]).count_triples(), 1);
        let event = AnnotationDocument::new(["Event"])
            .with("name", Value::lang("Konzert", "de"))
            .with("name", Value::lang("Concert", "en"));
        assert_eq!(event.count_triples(), 3);
    }

    #[test]
    fn filenames_and_ids() {
        assert_eq!(
            filename_for_id("0a2346a9-3b05-4dc4-a056-1f32ccf05fe8"),
            "0a2346a9-3b05-4dc4-a056-1f32ccf05fe8.json"
        );
        assert_eq!(filename_for_id("http://x/y z"), "http___x_y_z.json");
        let a = hotel();
        let b = hotel().with_id("other");
        assert_eq!(a.derived_id(), b.derived_id());
        assert_eq!(a.derived_id().len(), 64);
    }
}
