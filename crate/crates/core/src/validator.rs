//! Conformance checking of annotation documents against a domain
//! specification.
//!
//! Violations are accumulated, never short-circuited. Paths name the
//! offending property from the document root; descending into a nested
//! entity adds the value's index, e.g. `/makesOffer/0/priceSpecification`.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::annotation::{AnnotationDocument, Value};
use crate::domspec::{DomainSpecification, PropertySpec};
use crate::literal::{is_primitive, Datatype};
use crate::vocabulary::Vocabulary;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum ViolationCode {
    UnknownType,
    UnknownProperty,
    MissingRequired,
    RangeViolation,
    CardinalityViolation,
    MalformedLiteral,
}

impl ViolationCode {
    pub const ALL: [ViolationCode; 6] = [
        ViolationCode::UnknownType,
        ViolationCode::UnknownProperty,
        ViolationCode::MissingRequired,
        ViolationCode::RangeViolation,
        ViolationCode::CardinalityViolation,
        ViolationCode::MalformedLiteral,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ViolationCode::UnknownType => "UNKNOWN_TYPE",
            ViolationCode::UnknownProperty => "UNKNOWN_PROPERTY",
            ViolationCode::MissingRequired => "MISSING_REQUIRED",
            ViolationCode::RangeViolation => "RANGE_VIOLATION",
            ViolationCode::CardinalityViolation => "CARDINALITY_VIOLATION",
            ViolationCode::MalformedLiteral => "MALFORMED_LITERAL",
        }
    }
}

impl fmt::Display for ViolationCode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Violation {
    pub code: ViolationCode,
    pub path: String,
    pub message: String,
    pub expected: String,
    pub found: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct ViolationReport {
    pub document_id: String,
    pub violations: Vec<Violation>,
}

impl ViolationReport {
    pub fn is_conformant(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn codes(&self) -> Vec<ViolationCode> {
        self.violations.iter().map(|v| v.code).collect()
    }
}

impl fmt::Display for ViolationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.violations.is_empty() {
            return write!(f, "{}: ok", self.document_id);
        }
        write!(f, "{}: {} violation(s)", self.document_id, self.violations.len())?;
        for v in &self.violations {
            write!(
                f,
                "\n  {} {}: {} (expected {}, found {})",
                v.code, v.path, v.message, v.expected, v.found
            )?;
        }
        Ok(())
    }
}

struct Checker<'a> {
    spec: &'a DomainSpecification,
    vocab: &'a Vocabulary,
    out: Vec<Violation>,
}

impl Checker<'_> {
    fn report(&mut self, code: ViolationCode, path: String, message: String, expected: String, found: String) {
        self.out.push(Violation {
            code,
            path,
            message,
            expected,
            found,
        });
    }

    fn entity(&mut self, doc: &AnnotationDocument, prefix: &str) {
        let mut known = Vec::new();
        for t in &doc.types {
            if self.spec.has_type(t) {
                known.push(t.as_str());
            } else {
                self.report(
                    ViolationCode::UnknownType,
                    format!("{prefix}/@type"),
                    format!("type `{t}` is not part of the domain specification"),
                    "a specified type".into(),
                    t.clone(),
                );
            }
        }
        if known.is_empty() {
            return;
        }
        let allowed = self
            .spec
            .allowed_properties(&known)
            .expect("known types have specifications");

        for (name, values) in &doc.properties {
            let path = format!("{prefix}/{name}");
            let Some(prop) = allowed.get(name) else {
                self.report(
                    ViolationCode::UnknownProperty,
                    path,
                    format!("property `{name}` is not allowed on {}", known.join(", ")),
                    "a specified property".into(),
                    name.clone(),
                );
                continue;
            };
            if !prop.multiple && values.len() > 1 {
                self.report(
                    ViolationCode::CardinalityViolation,
                    path.clone(),
                    format!("property `{name}` takes a single value"),
                    "1 value".into(),
                    format!("{} values", values.len()),
                );
            }
            for (i, value) in values.iter().enumerate() {
                self.value(value, prop, &path, i);
            }
        }

        for (name, prop) in &allowed {
            if prop.required && !doc.properties.contains_key(name) {
                self.report(
                    ViolationCode::MissingRequired,
                    format!("{prefix}/{name}"),
                    format!("required property `{name}` is missing"),
                    prop.ranges.join(" | "),
                    "nothing".into(),
                );
            }
        }
    }

    fn value(&mut self, value: &Value, prop: &PropertySpec, path: &str, index: usize) {
        let primitives: Vec<Datatype> = prop.ranges.iter().filter_map(|r| Datatype::from_name(r)).collect();
        let structured: Vec<&str> = prop
            .ranges
            .iter()
            .filter(|r| !is_primitive(r))
            .map(String::as_str)
            .collect();
        let expected = || prop.ranges.join(" | ");
        let range_violation = |this: &mut Self| {
            this.report(
                ViolationCode::RangeViolation,
                path.to_owned(),
                format!("value of `{}` is outside its range", prop.name),
                expected(),
                value.describe(),
            )
        };

        match value {
            Value::Text(s) => {
                if primitives.is_empty() {
                    range_violation(self);
                } else if !primitives.iter().any(|d| d.accepts(s)) {
                    self.report(
                        ViolationCode::MalformedLiteral,
                        path.to_owned(),
                        format!("`{s}` is not a valid lexical form"),
                        expected(),
                        s.clone(),
                    );
                }
            }
            Value::Number(_) if primitives.contains(&Datatype::Number) => {}
            Value::Boolean(_) if primitives.contains(&Datatype::Boolean) => {}
            Value::Lang { .. } if primitives.contains(&Datatype::Text) => {}
            Value::Typed { value: lexical, datatype } if primitives.contains(datatype) => {
                if !datatype.accepts(lexical) {
                    self.report(
                        ViolationCode::MalformedLiteral,
                        path.to_owned(),
                        format!("`{lexical}` is not a valid {datatype}"),
                        datatype.to_string(),
                        lexical.clone(),
                    );
                }
            }
            Value::Entity(e) => {
                let fits = e
                    .types
                    .iter()
                    .any(|t| structured.iter().any(|r| self.vocab.subsumes(r, t)));
                if fits {
                    self.entity(e, &format!("{path}/{index}"));
                } else {
                    range_violation(self);
                }
            }
            _ => range_violation(self),
        }
    }
}

/// Recursively checks a document; the report lists every violation found.
pub fn validate_document(
    doc: &AnnotationDocument,
    spec: &DomainSpecification,
    vocab: &Vocabulary,
) -> ViolationReport {
    let mut checker = Checker {
        spec,
        vocab,
        out: Vec::new(),
    };
    checker.entity(doc, "");
    ViolationReport {
        document_id: doc.id.clone().unwrap_or_else(|| "(anonymous)".into()),
        violations: checker.out,
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct UnreadableFile {
    pub path: PathBuf,
    pub error: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct CorpusSummary {
    pub documents_checked: usize,
    pub documents_valid: usize,
    pub violations_by_code: BTreeMap<ViolationCode, usize>,
    pub unreadable: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct CorpusReport {
    pub summary: CorpusSummary,
    /// Sorted by document id.
    pub reports: Vec<ViolationReport>,
    pub unreadable: Vec<UnreadableFile>,
}

impl CorpusReport {
    pub fn is_clean(&self) -> bool {
        self.summary.documents_valid == self.summary.documents_checked && self.unreadable.is_empty()
    }

    pub fn add(&mut self, report: ViolationReport) {
        self.summary.documents_checked += 1;
        if report.is_conformant() {
            self.summary.documents_valid += 1;
        }
        for v in &report.violations {
            *self.summary.violations_by_code.entry(v.code).or_default() += 1;
        }
        self.reports.push(report);
    }

    pub fn add_unreadable(&mut self, path: PathBuf, error: String) {
        self.summary.unreadable += 1;
        self.unreadable.push(UnreadableFile { path, error });
    }

    fn finish(mut self) -> Self {
        self.reports.sort_by(|a, b| a.document_id.cmp(&b.document_id));
        self
    }
}

/// Stored annotation files of a repository: `<root>/<dataset>/*.json`, in
/// path order. Files at the top level (the manifest) are not documents.
pub fn corpus_files(root: &Path) -> std::io::Result<Vec<PathBuf>> {
    let mut files = Vec::new();
    if !root.exists() {
        return Ok(files);
    }
    for entry in fs::read_dir(root)? {
        let dir = entry?.path();
        if !dir.is_dir() {
            continue;
        }
        for file in fs::read_dir(&dir)? {
            let path = file?.path();
            if path.is_file() && path.extension().is_some_and(|e| e == "json") {
                files.push(path);
            }
        }
    }
    files.sort();
    Ok(files)
}

/// Validates every stored document below `root`. Unreadable or unparsable
/// files are recorded and do not stop the run.
pub fn validate_corpus(
    root: &Path,
    spec: &DomainSpecification,
    vocab: &Vocabulary,
) -> std::io::Result<CorpusReport> {
    let mut report = CorpusReport::default();
    for path in corpus_files(root)? {
        let parsed = fs::read(&path)
            .map_err(|e| e.to_string())
            .and_then(|bytes| AnnotationDocument::parse(&bytes).map_err(|e| e.to_string()));
        match parsed {
            Ok(doc) => {
                let mut r = validate_document(&doc, spec, vocab);
                if doc.id.is_none() {
                    r.document_id = file_stem(&path);
                }
                report.add(r);
            }
            Err(error) => report.add_unreadable(path, error),
        }
    }
    Ok(report.finish())
}

fn file_stem(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default()
}
