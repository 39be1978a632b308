//! A frozen subset of the schema.org vocabulary: the type hierarchy and the
//! declared ranges of each property.

use std::collections::{BTreeSet, HashMap, VecDeque};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::literal::is_primitive;

#[derive(Debug, Error, PartialEq)]
pub enum VocabularyError {
    #[error("vocabulary parse error at line {line}, column {column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("subtype cycle: {}", .0.join(" -> "))]
    Cycle(Vec<String>),
    #[error("`{owner}` references unknown type `{missing}`")]
    Dangling { owner: String, missing: String },
    #[error("duplicate definition of `{0}`")]
    Duplicate(String),
    #[error("`{0}` is a reserved datatype name")]
    ReservedName(String),
    #[error("invalid definition of `{0}`: {1}")]
    Invalid(String, &'static str),
    #[error("unknown type `{0}`")]
    UnknownType(String),
    #[error("unknown property `{0}`")]
    UnknownProperty(String),
}

impl From<serde_json::Error> for VocabularyError {
    fn from(e: serde_json::Error) -> Self {
        VocabularyError::Parse {
            line: e.line(),
            column: e.column(),
            message: e.to_string(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TypeDef {
    pub name: String,
    #[serde(default)]
    pub parents: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PropertyDef {
    pub name: String,
    pub ranges: Vec<String>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct VocabularyFile {
    version: String,
    types: Vec<TypeDef>,
    properties: Vec<PropertyDef>,
}

/// Immutable after loading; every query is a pure function of the loaded data.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    version: String,
    types: Vec<TypeDef>,
    properties: Vec<PropertyDef>,
    type_index: HashMap<String, usize>,
    property_index: HashMap<String, usize>,
}

impl Vocabulary {
    /// Parses a vocabulary file and checks every structural invariant.
    pub fn load(source: &[u8]) -> Result<Vocabulary, VocabularyError> {
        let file: VocabularyFile = serde_json::from_slice(source)?;
        Vocabulary::new(file.version, file.types, file.properties)
    }

    pub fn new(
        version: String,
        types: Vec<TypeDef>,
        properties: Vec<PropertyDef>,
    ) -> Result<Vocabulary, VocabularyError> {
        let mut type_index = HashMap::new();
        for (i, t) in types.iter().enumerate() {
            if t.name.is_empty() {
                return Err(VocabularyError::Invalid(t.name.clone(), "empty type name"));
            }
            if is_primitive(&t.name) {
                return Err(VocabularyError::ReservedName(t.name.clone()));
            }
            if type_index.insert(t.name.clone(), i).is_some() {
                return Err(VocabularyError::Duplicate(t.name.clone()));
            }
        }
        for t in &types {
            if let Some(missing) = t.parents.iter().find(|p| !type_index.contains_key(*p)) {
                return Err(VocabularyError::Dangling {
                    owner: t.name.clone(),
                    missing: missing.clone(),
                });
            }
        }

        let mut property_index = HashMap::new();
        for (i, p) in properties.iter().enumerate() {
            if p.name.is_empty() {
                return Err(VocabularyError::Invalid(p.name.clone(), "empty property name"));
            }
            if p.ranges.is_empty() {
                return Err(VocabularyError::Invalid(p.name.clone(), "property without ranges"));
            }
            if property_index.insert(p.name.clone(), i).is_some() {
                return Err(VocabularyError::Duplicate(p.name.clone()));
            }
            if let Some(missing) = p
                .ranges
                .iter()
                .find(|r| !is_primitive(r) && !type_index.contains_key(*r))
            {
                return Err(VocabularyError::Dangling {
                    owner: p.name.clone(),
                    missing: missing.clone(),
                });
            }
        }

        let vocab = Vocabulary {
            version,
            types,
            properties,
            type_index,
            property_index,
        };
        if let Some(cycle) = vocab.find_cycle() {
            return Err(VocabularyError::Cycle(cycle));
        }
        Ok(vocab)
    }

    /// Depth-first search over parent edges; returns the first cycle found,
    /// closed (first name repeated at the end).
    fn find_cycle(&self) -> Option<Vec<String>> {
        #[derive(Clone, Copy, PartialEq)]
        enum Mark {
            New,
            Active,
            Done,
        }
        let mut marks = vec![Mark::New; self.types.len()];
        for start in 0..self.types.len() {
            if marks[start] != Mark::New {
                continue;
            }
            // stack of (type index, next parent position)
            let mut stack = vec![(start, 0usize)];
            marks[start] = Mark::Active;
            while let Some(&mut (node, ref mut next)) = stack.last_mut() {
                let parents = &self.types[node].parents;
                if *next < parents.len() {
                    let parent = self.type_index[&parents[*next]];
                    *next += 1;
                    match marks[parent] {
                        Mark::New => {
                            marks[parent] = Mark::Active;
                            stack.push((parent, 0));
                        }
                        Mark::Active => {
                            let from = stack.iter().position(|&(n, _)| n == parent).unwrap();
                            let mut cycle: Vec<String> = stack[from..]
                                .iter()
                                .map(|&(n, _)| self.types[n].name.clone())
                                .collect();
                            cycle.push(self.types[parent].name.clone());
                            return Some(cycle);
                        }
                        Mark::Done => {}
                    }
                } else {
                    marks[node] = Mark::Done;
                    stack.pop();
                }
            }
        }
        None
    }

    pub fn to_json(&self) -> String {
        let file = VocabularyFile {
            version: self.version.clone(),
            types: self.types.clone(),
            properties: self.properties.clone(),
        };
        serde_json::to_string_pretty(&file).expect("vocabulary serializes")
    }

    pub fn version(&self) -> &str {
        &self.version
    }

    pub fn types(&self) -> &[TypeDef] {
        &self.types
    }

    pub fn properties(&self) -> &[PropertyDef] {
        &self.properties
    }

    pub fn has_type(&self, name: &str) -> bool {
        self.type_index.contains_key(name)
    }

    pub fn type_def(&self, name: &str) -> Option<&TypeDef> {
        self.type_index.get(name).map(|&i| &self.types[i])
    }

    pub fn property(&self, name: &str) -> Option<&PropertyDef> {
        self.property_index.get(name).map(|&i| &self.properties[i])
    }

    /// Reflexive, transitive reachability over parent edges.
    pub fn is_subtype_of(&self, sub: &str, sup: &str) -> Result<bool, VocabularyError> {
        let start = *self
            .type_index
            .get(sub)
            .ok_or_else(|| VocabularyError::UnknownType(sub.to_owned()))?;
        if !self.has_type(sup) {
            return Err(VocabularyError::UnknownType(sup.to_owned()));
        }
        let mut seen = BTreeSet::new();
        let mut queue = VecDeque::from([start]);
        while let Some(i) = queue.pop_front() {
            let t = &self.types[i];
            if t.name == sup {
                return Ok(true);
            }
            if seen.insert(i) {
                queue.extend(t.parents.iter().map(|p| self.type_index[p]));
            }
        }
        Ok(false)
    }

    /// Like [`Vocabulary::is_subtype_of`], but unknown names are simply not
    /// subtypes of anything.
    pub fn subsumes(&self, sup: &str, sub: &str) -> bool {
        self.is_subtype_of(sub, sup).unwrap_or(false)
    }

    /// Declared ranges in file order.
    pub fn property_ranges(&self, prop: &str) -> Result<&[String], VocabularyError> {
        self.property(prop)
            .map(|p| p.ranges.as_slice())
            .ok_or_else(|| VocabularyError::UnknownProperty(prop.to_owned()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn load(json: &str) -> Result<Vocabulary, VocabularyError> {
        Vocabulary::load(json.as_bytes())
    }

    #[test]
    fn dangling_parent() {
        let err = load(r#"{"version":"t","types":[{"name":"A","parents":["B"]}],"properties":[]}"#)
            .unwrap_err();
        assert_eq!(
            err,
            VocabularyError::Dangling {
                owner: "A".into(),
                missing: "B".into()
            }
        );
    }

    #[test]
    fn two_cycle() {
        let err = load(
            r#"{"version":"t","types":[{"name":"A","parents":["B"]},{"name":"B","parents":["A"]}],"properties":[]}"#,
        )
        .unwrap_err();
        assert_eq!(err, VocabularyError::Cycle(vec!["A".into(), "B".into(), "A".into()]));
    }

    #[test]
    fn self_cycle() {
        let err = load(r#"{"version":"t","types":[{"name":"A","parents":["A"]}],"properties":[]}"#)
            .unwrap_err();
        assert!(matches!(err, VocabularyError::Cycle(_)));
    }

    #[test]
    fn rejects_unknown_keys_and_reserved_names() {
        assert!(matches!(
            load(r#"{"version":"t","types":[],"properties":[],"extra":1}"#),
            Err(VocabularyError::Parse { .. })
        ));
        assert_eq!(
            load(r#"{"version":"t","types":[{"name":"Text"}],"properties":[]}"#).unwrap_err(),
            VocabularyError::ReservedName("Text".into())
        );
    }

    #[test]
    fn parse_error_has_position() {
        match load("{\n  \"version\": }").unwrap_err() {
            VocabularyError::Parse { line, .. } => assert_eq!(line, 2),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn property_range_must_resolve() {
        let err = load(
            r#"{"version":"t","types":[],"properties":[{"name":"geo","ranges":["GeoCoordinates"]}]}"#,
        )
        .unwrap_err();
        assert!(matches!(err, VocabularyError::Dangling { .. }));
        let err = load(r#"{"version":"t","types":[],"properties":[{"name":"x","ranges":[]}]}"#)
            .unwrap_err();
        assert!(matches!(err, VocabularyError::Invalid(..)));
    }

    #[test]
    fn diamond_is_not_a_cycle() {
        let v = load(
            r#"{"version":"t","types":[{"name":"T"},{"name":"A","parents":["T"]},{"name":"B","parents":["T"]},{"name":"C","parents":["A","B"]}],"properties":[]}"#,
        )
        .unwrap();
        assert!(v.is_subtype_of("C", "T").unwrap());
        assert!(!v.is_subtype_of("A", "B").unwrap());
        assert!(matches!(v.is_subtype_of("C", "Z"), Err(VocabularyError::UnknownType(_))));
    }
}
