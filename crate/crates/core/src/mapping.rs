//! Declarative XML-to-schema.org mappings.
//!
//! A mapping document lists entity maps. Each entity map iterates over
//! elements selected by an absolute path, decides the target types (either a
//! fixed list or a source token looked up in the translation table), and
//! fills properties from paths, constants or nested entity maps. Mappings are
//! checked against the domain specification when parsed, so anything they
//! emit only fails validation on data-dependent grounds the engine reports
//! itself (conversion errors, cardinality).

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt::{self, Write as _};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::annotation::{AnnotationDocument, Value};
use crate::domspec::{DomainSpecification, PropertySpec};
use crate::literal::{is_language_tag, is_primitive, parse_boolean, parse_number, Datatype};
use crate::vocabulary::Vocabulary;
use crate::xmlpath::{eval_path, parse_path, Element, PathExpr, PathSyntaxError, PathValue, XmlDocument};

#[derive(Debug, Error, PartialEq)]
pub enum MappingError {
    #[error("mapping parse error at line {line}, column {column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("entity `{entity}`: bad path `{path}`: {source}")]
    Path {
        entity: String,
        path: String,
        source: PathSyntaxError,
    },
    #[error("duplicate entity map id `{0}`")]
    DuplicateEntityId(String),
    #[error("entity `{entity}`: target type `{type_name}` is not in the domain specification")]
    UnknownTargetType { entity: String, type_name: String },
    #[error("entity `{entity}`: property `{property}` is not specified for {types:?}")]
    PropertyNotInSpec {
        entity: String,
        property: String,
        types: Vec<String>,
    },
    #[error("entity `{entity}`: property `{property}`: {detail}")]
    RangeMismatch {
        entity: String,
        property: String,
        detail: String,
    },
    #[error("entity `{entity}`: required property `{property}` of {types:?} is not mapped")]
    RequiredNotMapped {
        entity: String,
        property: String,
        types: Vec<String>,
    },
    #[error("entity `{entity}`: {message}")]
    InvalidRule { entity: String, message: String },
}

impl From<serde_json::Error> for MappingError {
    fn from(e: serde_json::Error) -> Self {
        MappingError::Parse {
            line: e.line(),
            column: e.column(),
            message: e.to_string(),
        }
    }
}

// ---- file format -----------------------------------------------------------

#[derive(Deserialize)]
#[serde(deny_unknown_fields, rename_all = "camelCase")]
struct MappingFile {
    name: String,
    dataset: String,
    #[serde(default)]
    type_translations: BTreeMap<String, Vec<String>>,
    entities: Vec<EntityFile>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields, rename_all = "camelCase")]
struct EntityFile {
    id: String,
    iterator: String,
    types: TypesFile,
    #[serde(default)]
    id_path: Option<String>,
    properties: Vec<PropertyFile>,
}

#[derive(Deserialize)]
#[serde(untagged)]
enum TypesFile {
    Static(Vec<String>),
    Dynamic(DynamicTypes),
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields, rename_all = "camelCase")]
struct DynamicTypes {
    from_path: String,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields, rename_all = "camelCase")]
struct PropertyFile {
    property: String,
    #[serde(default)]
    path: Option<String>,
    #[serde(default)]
    constant: Option<String>,
    #[serde(default)]
    nested: Option<Box<EntityFile>>,
    #[serde(default)]
    datatype: Option<Datatype>,
    #[serde(default)]
    lang: Option<String>,
    #[serde(default)]
    lang_from_attr: Option<String>,
}

// ---- model -----------------------------------------------------------------

#[derive(Debug, Clone, PartialEq)]
pub struct MappingDocument {
    pub name: String,
    pub dataset: String,
    pub type_translations: BTreeMap<String, Vec<String>>,
    pub entities: Vec<EntityMap>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EntityMap {
    pub id: String,
    pub iterator: PathExpr,
    pub types: TargetTypes,
    pub id_path: Option<PathExpr>,
    pub properties: Vec<PropertyMap>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum TargetTypes {
    Static(Vec<String>),
    /// The trimmed value at this path is looked up in the translation table.
    FromPath(PathExpr),
}

#[derive(Debug, Clone, PartialEq)]
pub struct PropertyMap {
    pub property: String,
    pub source: PropertySource,
    pub datatype: Datatype,
    pub language: Option<LanguageRule>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum PropertySource {
    Path(PathExpr),
    Constant(String),
    Nested(Box<EntityMap>),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum LanguageRule {
    Fixed(String),
    FromAttribute(String),
}

fn path(entity: &str, text: &str) -> Result<PathExpr, MappingError> {
    parse_path(text).map_err(|source| MappingError::Path {
        entity: entity.to_owned(),
        path: text.to_owned(),
        source,
    })
}

fn rule_error(entity: &str, message: impl Into<String>) -> MappingError {
    MappingError::InvalidRule {
        entity: entity.to_owned(),
        message: message.into(),
    }
}

struct Compiler<'a> {
    spec: &'a DomainSpecification,
    vocab: &'a Vocabulary,
    translations: &'a BTreeMap<String, Vec<String>>,
    ids: HashSet<String>,
}

impl Compiler<'_> {
    fn entity(&mut self, file: EntityFile, top_level: bool) -> Result<EntityMap, MappingError> {
        let id = file.id;
        if !self.ids.insert(id.clone()) {
            return Err(MappingError::DuplicateEntityId(id));
        }
        let iterator = path(&id, &file.iterator)?;
        if top_level != iterator.absolute {
            return Err(rule_error(
                &id,
                if top_level {
                    "top-level iterators must be absolute paths"
                } else {
                    "nested iterators must be relative paths"
                },
            ));
        }
        if !iterator.selects_elements() {
            return Err(rule_error(&id, "iterators must select elements"));
        }
        let types = match file.types {
            TypesFile::Static(types) => {
                if types.is_empty() {
                    return Err(rule_error(&id, "empty target type list"));
                }
                TargetTypes::Static(types)
            }
            TypesFile::Dynamic(d) => TargetTypes::FromPath(path(&id, &d.from_path)?),
        };
        let id_path = file.id_path.map(|p| path(&id, &p)).transpose()?;

        let candidates = self.candidate_type_sets(&id, &types)?;
        let mut properties = Vec::with_capacity(file.properties.len());
        for prop in file.properties {
            properties.push(self.property(&id, prop, &candidates)?);
        }
        for set in &candidates {
            let allowed = self.spec.allowed_properties(set).expect("types checked");
            for (name, spec) in &allowed {
                if spec.required && !properties.iter().any(|p| &p.property == name) {
                    return Err(MappingError::RequiredNotMapped {
                        entity: id.clone(),
                        property: name.clone(),
                        types: set.clone(),
                    });
                }
            }
        }
        Ok(EntityMap {
            id,
            iterator,
            types,
            id_path,
            properties,
        })
    }

    /// Every type list the entity can end up with.
    fn candidate_type_sets(&self, entity: &str, types: &TargetTypes) -> Result<Vec<Vec<String>>, MappingError> {
        let sets: Vec<Vec<String>> = match types {
            TargetTypes::Static(types) => vec![types.clone()],
            TargetTypes::FromPath(_) => {
                let mut distinct: Vec<Vec<String>> = Vec::new();
                for set in self.translations.values().filter(|s| !s.is_empty()) {
                    if !distinct.contains(set) {
                        distinct.push(set.clone());
                    }
                }
                distinct
            }
        };
        for t in sets.iter().flatten() {
            if !self.spec.has_type(t) {
                return Err(MappingError::UnknownTargetType {
                    entity: entity.to_owned(),
                    type_name: t.clone(),
                });
            }
        }
        Ok(sets)
    }

    fn property(
        &mut self,
        entity: &str,
        file: PropertyFile,
        candidates: &[Vec<String>],
    ) -> Result<PropertyMap, MappingError> {
        let name = file.property;
        let mismatch = |detail: String| MappingError::RangeMismatch {
            entity: entity.to_owned(),
            property: name.clone(),
            detail,
        };

        let specs: Vec<PropertySpec> = candidates
            .iter()
            .map(|set| {
                let allowed = self.spec.allowed_properties(set).expect("types checked");
                allowed.get(&name).cloned().ok_or_else(|| MappingError::PropertyNotInSpec {
                    entity: entity.to_owned(),
                    property: name.clone(),
                    types: set.clone(),
                })
            })
            .collect::<Result<_, _>>()?;

        let language = match (file.lang, file.lang_from_attr) {
            (Some(_), Some(_)) => return Err(rule_error(entity, format!("`{name}`: both lang and langFromAttr"))),
            (Some(tag), None) if !is_language_tag(&tag) => {
                return Err(rule_error(entity, format!("`{name}`: invalid language tag `{tag}`")))
            }
            (Some(tag), None) => Some(LanguageRule::Fixed(tag)),
            (None, Some(attr)) => Some(LanguageRule::FromAttribute(attr)),
            (None, None) => None,
        };

        let source = match (file.path, file.constant, file.nested) {
            (Some(p), None, None) => PropertySource::Path(path(entity, &p)?),
            (None, Some(c), None) => PropertySource::Constant(c),
            (None, None, Some(nested)) => {
                if file.datatype.is_some() || language.is_some() {
                    return Err(rule_error(entity, format!("`{name}`: nested sources take no datatype or language")));
                }
                let nested = self.entity(*nested, false)?;
                let nested_sets = self.candidate_type_sets(&nested.id, &nested.types)?;
                for spec in &specs {
                    let structured: Vec<&String> = spec.ranges.iter().filter(|r| !is_primitive(r)).collect();
                    for set in &nested_sets {
                        let fits = set
                            .iter()
                            .any(|t| structured.iter().any(|r| self.vocab.subsumes(r, t)));
                        if !fits {
                            return Err(mismatch(format!(
                                "nested types {set:?} do not fit the range {:?}",
                                spec.ranges
                            )));
                        }
                    }
                }
                PropertySource::Nested(Box::new(nested))
            }
            _ => {
                return Err(rule_error(
                    entity,
                    format!("`{name}`: exactly one of path, constant or nested is required"),
                ))
            }
        };

        let datatype = file.datatype.unwrap_or(Datatype::Text);
        if !matches!(source, PropertySource::Nested(_)) {
            for spec in &specs {
                if !spec.ranges.iter().any(|r| r == datatype.name()) {
                    return Err(mismatch(format!(
                        "datatype {datatype} is not among the ranges {:?}",
                        spec.ranges
                    )));
                }
                if language.is_some() && datatype != Datatype::Text {
                    return Err(mismatch("language-tagged values must be Text".into()));
                }
            }
        }
        if let PropertySource::Constant(c) = &source {
            convert(c, datatype, None).map_err(|reason| rule_error(entity, format!("`{name}`: constant {reason}")))?;
        }
        if let (PropertySource::Path(p), Some(LanguageRule::FromAttribute(_))) = (&source, &language) {
            if !p.selects_elements() {
                return Err(rule_error(entity, format!("`{name}`: langFromAttr needs a path selecting elements")));
            }
        }
        Ok(PropertyMap {
            property: name,
            source,
            datatype,
            language,
        })
    }
}

impl MappingDocument {
    /// Parses a mapping file and validates it against `spec` and `vocab`.
    pub fn parse(
        source: &[u8],
        spec: &DomainSpecification,
        vocab: &Vocabulary,
    ) -> Result<MappingDocument, MappingError> {
        let file: MappingFile = serde_json::from_slice(source)?;
        for (token, types) in &file.type_translations {
            if let Some(t) = types.iter().find(|t| !spec.has_type(t)) {
                return Err(MappingError::UnknownTargetType {
                    entity: format!("typeTranslations[{token}]"),
                    type_name: t.clone(),
                });
            }
        }
        let mut compiler = Compiler {
            spec,
            vocab,
            translations: &file.type_translations,
            ids: HashSet::new(),
        };
        let mut entities = Vec::with_capacity(file.entities.len());
        for e in file.entities {
            entities.push(compiler.entity(e, true)?);
        }
        Ok(MappingDocument {
            name: file.name,
            dataset: file.dataset,
            type_translations: file.type_translations,
            entities,
        })
    }
}

// ---- execution -------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(rename_all = "camelCase", tag = "kind")]
pub enum FailureKind {
    Conversion {
        property: String,
        datatype: Datatype,
        value: String,
        reason: String,
    },
    Cardinality {
        property: String,
        count: usize,
    },
    AmbiguousId {
        count: usize,
    },
    IdCollision {
        id: String,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct EntityFailure {
    pub entity: String,
    /// Location of the offending value in the source document.
    pub source_path: String,
    #[serde(flatten)]
    pub kind: FailureKind,
}

impl fmt::Display for EntityFailure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} at {}: ", self.entity, self.source_path)?;
        match &self.kind {
            FailureKind::Conversion {
                property,
                datatype,
                value,
                reason,
            } => write!(f, "cannot convert `{value}` to {datatype} for `{property}`: {reason}"),
            FailureKind::Cardinality { property, count } => {
                write!(f, "`{property}` takes one value, source has {count}")
            }
            FailureKind::AmbiguousId { count } => write!(f, "id path yields {count} values"),
            FailureKind::IdCollision { id } => write!(f, "id `{id}` is produced twice"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("{} entity failure(s); first: {}", failures.len(), failures[0])]
pub struct ExecutionError {
    pub failures: Vec<EntityFailure>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct SkippedEntity {
    pub entity: String,
    pub source_path: String,
    /// The source type token, when one was present but had no translation.
    pub token: Option<String>,
}

/// Counts in the shape of a data-type mapping table. Aggregation is a set
/// union plus sums, so merging is associative and commutative.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct MappingStats {
    pub source_types_seen: BTreeSet<String>,
    pub source_types_mapped: BTreeSet<String>,
    pub target_types_used: BTreeSet<String>,
    pub entities_emitted: usize,
    pub entities_skipped: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct MappingCounts {
    pub source_types_seen: usize,
    pub source_types_mapped: usize,
    pub target_types_used: usize,
    pub entities_emitted: usize,
    pub entities_skipped: usize,
}

impl MappingStats {
    pub fn merge(&mut self, other: &MappingStats) {
        self.source_types_seen.extend(other.source_types_seen.iter().cloned());
        self.source_types_mapped.extend(other.source_types_mapped.iter().cloned());
        self.target_types_used.extend(other.target_types_used.iter().cloned());
        self.entities_emitted += other.entities_emitted;
        self.entities_skipped += other.entities_skipped;
    }

    pub fn counts(&self) -> MappingCounts {
        MappingCounts {
            source_types_seen: self.source_types_seen.len(),
            source_types_mapped: self.source_types_mapped.len(),
            target_types_used: self.target_types_used.len(),
            entities_emitted: self.entities_emitted,
            entities_skipped: self.entities_skipped,
        }
    }
}

impl Serialize for MappingStats {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        self.counts().serialize(serializer)
    }
}

/// Renders per-dataset statistics as a table: source data types against the
/// schema.org types they map to.
pub fn render_stats_table(rows: &[(String, MappingStats)]) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{:<3} {:<16} {:>12} {:>8} {:>12} {:>8} {:>8}",
        "No", "Description", "Source types", "Mapped", "schema.org", "Emitted", "Skipped"
    );
    for (i, (dataset, stats)) in rows.iter().enumerate() {
        let c = stats.counts();
        let _ = writeln!(
            out,
            "{:<3} {:<16} {:>12} {:>8} {:>12} {:>8} {:>8}",
            i + 1,
            dataset,
            c.source_types_seen,
            c.source_types_mapped,
            c.target_types_used,
            c.entities_emitted,
            c.entities_skipped
        );
    }
    out
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct MappingRun {
    pub documents: Vec<AnnotationDocument>,
    pub skipped: Vec<SkippedEntity>,
    /// Number of top-level iterator matches.
    pub matched: usize,
    pub stats: MappingStats,
}

impl MappingRun {
    /// Appends another run, rejecting ids produced by both.
    pub fn merge(&mut self, other: MappingRun) -> Result<(), ExecutionError> {
        let seen: HashSet<&str> = self.documents.iter().filter_map(|d| d.id.as_deref()).collect();
        let failures: Vec<EntityFailure> = other
            .documents
            .iter()
            .filter_map(|d| d.id.as_deref())
            .filter(|id| seen.contains(id))
            .map(|id| EntityFailure {
                entity: "(batch)".into(),
                source_path: String::new(),
                kind: FailureKind::IdCollision { id: id.to_owned() },
            })
            .collect();
        if !failures.is_empty() {
            return Err(ExecutionError { failures });
        }
        self.documents.extend(other.documents);
        self.skipped.extend(other.skipped);
        self.matched += other.matched;
        self.stats.merge(&other.stats);
        Ok(())
    }
}

fn convert(text: &str, datatype: Datatype, language: Option<&str>) -> Result<Value, String> {
    if let Some(tag) = language {
        if !is_language_tag(tag) {
            return Err(format!("invalid language tag `{tag}`"));
        }
        return Ok(Value::lang(text, tag));
    }
    match datatype {
        Datatype::Text => Ok(Value::text(text)),
        Datatype::Number => parse_number(text)
            .map(Value::Number)
            .ok_or_else(|| "not a decimal number".to_owned()),
        Datatype::Boolean => parse_boolean(text)
            .map(Value::Boolean)
            .ok_or_else(|| "expected true, false, 1 or 0".to_owned()),
        d => {
            if d.accepts(text) {
                Ok(Value::text(text))
            } else {
                Err(format!("not a valid {d}"))
            }
        }
    }
}

enum Resolved {
    Types(Vec<String>),
    Skipped(Option<String>),
}

struct Executor<'a> {
    mapping: &'a MappingDocument,
    spec: &'a DomainSpecification,
    failures: Vec<EntityFailure>,
}

fn resolve_types(mapping: &MappingDocument, map: &EntityMap, node: &Element) -> Resolved {
    match &map.types {
        TargetTypes::Static(types) => Resolved::Types(types.clone()),
        TargetTypes::FromPath(_) => match source_token(map, node) {
            None => Resolved::Skipped(None),
            Some(token) => match mapping.type_translations.get(&token) {
                Some(types) if !types.is_empty() => Resolved::Types(types.clone()),
                _ => Resolved::Skipped(Some(token)),
            },
        },
    }
}

impl Executor<'_> {
    /// Builds the entity for one iterator match. `None` when the source type
    /// has no translation or, for nested entities, nothing was mapped.
    fn entity(
        &mut self,
        map: &EntityMap,
        node: &Element,
        location: &str,
        top_level: bool,
    ) -> Option<AnnotationDocument> {
        let Resolved::Types(types) = resolve_types(self.mapping, map, node) else {
            return None;
        };
        let allowed = self.spec.allowed_properties(&types).expect("types checked at parse");
        let mut doc = AnnotationDocument::new(types);

        for prop in &map.properties {
            let values = self.property_values(map, prop, node, location);
            if values.is_empty() {
                continue;
            }
            if allowed.get(&prop.property).is_some_and(|s| !s.multiple) && values.len() > 1 {
                self.failures.push(EntityFailure {
                    entity: map.id.clone(),
                    source_path: location.to_owned(),
                    kind: FailureKind::Cardinality {
                        property: prop.property.clone(),
                        count: values.len(),
                    },
                });
                continue;
            }
            doc.properties.entry(prop.property.clone()).or_default().extend(values);
        }

        if let Some(id_path) = &map.id_path {
            let ids: Vec<String> = eval_path(id_path, node).iter().filter_map(PathValue::text).collect();
            match ids.as_slice() {
                [] => {}
                [id] => doc.id = Some(id.clone()),
                many => self.failures.push(EntityFailure {
                    entity: map.id.clone(),
                    source_path: format!("{location}/{id_path}"),
                    kind: FailureKind::AmbiguousId { count: many.len() },
                }),
            }
        }
        if top_level {
            if doc.id.is_none() {
                doc.id = Some(doc.derived_id());
            }
        } else if doc.properties.is_empty() {
            return None;
        }
        Some(doc)
    }

    fn property_values(&mut self, map: &EntityMap, prop: &PropertyMap, node: &Element, location: &str) -> Vec<Value> {
        let mut values = Vec::new();
        match &prop.source {
            PropertySource::Constant(c) => {
                values.push(convert(c, prop.datatype, fixed_language(prop)).expect("constants checked at parse"));
            }
            PropertySource::Path(p) => {
                for result in eval_path(p, node) {
                    let Some(text) = result.text() else { continue };
                    let language = match &prop.language {
                        Some(LanguageRule::Fixed(tag)) => Some(tag.clone()),
                        Some(LanguageRule::FromAttribute(attr)) => {
                            result.as_node().and_then(|e| e.attribute(attr)).map(str::to_owned)
                        }
                        None => None,
                    };
                    match convert(&text, prop.datatype, language.as_deref()) {
                        Ok(v) => values.push(v),
                        Err(reason) => self.failures.push(EntityFailure {
                            entity: map.id.clone(),
                            source_path: format!("{location}/{p}"),
                            kind: FailureKind::Conversion {
                                property: prop.property.clone(),
                                datatype: prop.datatype,
                                value: text,
                                reason,
                            },
                        }),
                    }
                }
            }
            PropertySource::Nested(nested) => {
                for (i, result) in eval_path(&nested.iterator, node).iter().enumerate() {
                    let Some(child) = result.as_node() else { continue };
                    let child_location = format!("{location}/{}[{}]", nested.iterator, i + 1);
                    if let Some(doc) = self.entity(nested, child, &child_location, false) {
                        values.push(Value::entity(doc));
                    }
                }
            }
        }
        values
    }
}

fn fixed_language(prop: &PropertyMap) -> Option<&str> {
    match &prop.language {
        Some(LanguageRule::Fixed(tag)) => Some(tag),
        _ => None,
    }
}

fn source_token(map: &EntityMap, node: &Element) -> Option<String> {
    match &map.types {
        // a fixed mapping treats the iterated element as the source type
        TargetTypes::Static(_) => Some(node.name.clone()),
        TargetTypes::FromPath(p) => eval_path(p, node)
            .first()
            .and_then(PathValue::text)
            .map(|t| t.trim().to_owned()),
    }
}

/// Records what an iterator match contributes to the statistics.
fn record(stats: &mut MappingStats, map: &EntityMap, node: &Element, resolved: &Resolved) {
    let token = source_token(map, node);
    if let Some(token) = &token {
        stats.source_types_seen.insert(token.clone());
    }
    match resolved {
        Resolved::Types(types) => {
            if let Some(token) = token {
                stats.source_types_mapped.insert(token);
            }
            stats.target_types_used.extend(types.iter().cloned());
            stats.entities_emitted += 1;
        }
        Resolved::Skipped(_) => stats.entities_skipped += 1,
    }
}

/// Runs every entity map over `doc`. All per-entity failures are collected;
/// any failure fails the whole run.
pub fn execute_mapping(
    mapping: &MappingDocument,
    doc: &XmlDocument,
    spec: &DomainSpecification,
) -> Result<MappingRun, ExecutionError> {
    let mut exec = Executor {
        mapping,
        spec,
        failures: Vec::new(),
    };
    let mut run = MappingRun::default();
    let mut ids: HashSet<String> = HashSet::new();
    for map in &mapping.entities {
        for (i, node) in doc.select(&map.iterator).iter().filter_map(PathValue::as_node).enumerate() {
            run.matched += 1;
            let location = format!("{}[{}]", map.iterator, i + 1);
            let resolved = resolve_types(mapping, map, node);
            record(&mut run.stats, map, node, &resolved);
            if let Resolved::Skipped(token) = resolved {
                run.skipped.push(SkippedEntity {
                    entity: map.id.clone(),
                    source_path: location,
                    token,
                });
                continue;
            }
            if let Some(entity) = exec.entity(map, node, &location, true) {
                let id = entity.id.clone().expect("top-level entities always have ids");
                if !ids.insert(id.clone()) {
                    exec.failures.push(EntityFailure {
                        entity: map.id.clone(),
                        source_path: location,
                        kind: FailureKind::IdCollision { id },
                    });
                    continue;
                }
                run.documents.push(entity);
            }
        }
    }
    if exec.failures.is_empty() {
        Ok(run)
    } else {
        Err(ExecutionError { failures: exec.failures })
    }
}

/// Statistics over a set of source documents, without building annotations.
pub fn mapping_stats(mapping: &MappingDocument, docs: &[XmlDocument]) -> MappingStats {
    let mut stats = MappingStats::default();
    for doc in docs {
        for map in &mapping.entities {
            for node in doc.select(&map.iterator).iter().filter_map(PathValue::as_node) {
                let resolved = resolve_types(mapping, map, node);
                record(&mut stats, map, node, &resolved);
            }
        }
    }
    stats
}
