//! Domain specifications: curated per-type property selections with
//! narrowed ranges, required flags and cardinality, checked for consistency
//! against a [`Vocabulary`].

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::literal::is_primitive;
use crate::vocabulary::Vocabulary;

#[derive(Debug, Error, PartialEq)]
pub enum DomainSpecError {
    #[error("domain specification parse error at line {line}, column {column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("unknown type `{0}`")]
    UnknownType(String),
    #[error("`{type_name}` uses property `{property}` which the vocabulary does not define")]
    UnknownProperty { type_name: String, property: String },
    #[error("`{type_name}.{property}` declares property twice")]
    DuplicateProperty { type_name: String, property: String },
    #[error("`{type_name}.{property}` has no ranges")]
    EmptyRanges { type_name: String, property: String },
    #[error("`{type_name}.{property}` range `{range}` does not narrow the vocabulary ranges {allowed:?}")]
    RangeNotNarrowing {
        type_name: String,
        property: String,
        range: String,
        allowed: Vec<String>,
    },
    #[error("`{type_name}.{property}` has structured range `{range}` without its own type specification")]
    MissingClosure {
        type_name: String,
        property: String,
        range: String,
    },
}

impl From<serde_json::Error> for DomainSpecError {
    fn from(e: serde_json::Error) -> Self {
        DomainSpecError::Parse {
            line: e.line(),
            column: e.column(),
            message: e.to_string(),
        }
    }
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PropertySpec {
    pub name: String,
    pub ranges: Vec<String>,
    #[serde(default)]
    pub required: bool,
    #[serde(default = "default_true")]
    pub multiple: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TypeSpec {
    pub properties: Vec<PropertySpec>,
}

impl TypeSpec {
    pub fn property(&self, name: &str) -> Option<&PropertySpec> {
        self.properties.iter().find(|p| p.name == name)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DomainSpecification {
    pub name: String,
    #[serde(rename = "types")]
    pub type_specs: BTreeMap<String, TypeSpec>,
}

impl DomainSpecification {
    /// Parses a specification file and validates it against `vocab`.
    pub fn parse(source: &[u8], vocab: &Vocabulary) -> Result<DomainSpecification, DomainSpecError> {
        let spec: DomainSpecification = serde_json::from_slice(source)?;
        spec.check(vocab)?;
        Ok(spec)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("domain specification serializes")
    }

    pub fn check(&self, vocab: &Vocabulary) -> Result<(), DomainSpecError> {
        for (type_name, type_spec) in &self.type_specs {
            if !vocab.has_type(type_name) {
                return Err(DomainSpecError::UnknownType(type_name.clone()));
            }
            let mut seen = BTreeSet::new();
            for prop in &type_spec.properties {
                let err_ctx = || (type_name.clone(), prop.name.clone());
                if !seen.insert(prop.name.as_str()) {
                    let (type_name, property) = err_ctx();
                    return Err(DomainSpecError::DuplicateProperty { type_name, property });
                }
                let Some(declared) = vocab.property(&prop.name) else {
                    let (type_name, property) = err_ctx();
                    return Err(DomainSpecError::UnknownProperty { type_name, property });
                };
                if prop.ranges.is_empty() {
                    let (type_name, property) = err_ctx();
                    return Err(DomainSpecError::EmptyRanges { type_name, property });
                }
                for range in &prop.ranges {
                    if !is_primitive(range) && !vocab.has_type(range) {
                        return Err(DomainSpecError::UnknownType(range.clone()));
                    }
                    if !narrows(vocab, range, &declared.ranges) {
                        let (type_name, property) = err_ctx();
                        return Err(DomainSpecError::RangeNotNarrowing {
                            type_name,
                            property,
                            range: range.clone(),
                            allowed: declared.ranges.clone(),
                        });
                    }
                    if !is_primitive(range) && !self.type_specs.contains_key(range) {
                        let (type_name, property) = err_ctx();
                        return Err(DomainSpecError::MissingClosure {
                            type_name,
                            property,
                            range: range.clone(),
                        });
                    }
                }
            }
        }
        Ok(())
    }

    pub fn type_spec(&self, name: &str) -> Option<&TypeSpec> {
        self.type_specs.get(name)
    }

    pub fn has_type(&self, name: &str) -> bool {
        self.type_specs.contains_key(name)
    }

    /// Union of the property specifications of every listed type.
    ///
    /// A property shared by several types is required if any of them requires
    /// it and repeatable if any of them allows repetition. When the shared
    /// declarations disagree on ranges the merged ranges are the sorted union,
    /// which keeps the result independent of the order of `type_names`.
    pub fn allowed_properties<S: AsRef<str>>(
        &self,
        type_names: &[S],
    ) -> Result<BTreeMap<String, PropertySpec>, DomainSpecError> {
        let mut merged: BTreeMap<String, PropertySpec> = BTreeMap::new();
        for name in type_names {
            let name = name.as_ref();
            let spec = self
                .type_specs
                .get(name)
                .ok_or_else(|| DomainSpecError::UnknownType(name.to_owned()))?;
            for prop in &spec.properties {
                match merged.get_mut(&prop.name) {
                    None => {
                        merged.insert(prop.name.clone(), prop.clone());
                    }
                    Some(existing) => {
                        existing.required |= prop.required;
                        existing.multiple |= prop.multiple;
                        if existing.ranges != prop.ranges {
                            let union: BTreeSet<String> = existing
                                .ranges
                                .iter()
                                .chain(&prop.ranges)
                                .cloned()
                                .collect();
                            existing.ranges = union.into_iter().collect();
                        }
                    }
                }
            }
        }
        Ok(merged)
    }
}

/// A specification range narrows the vocabulary's declared ranges when it is
/// one of them, or a structured type that is a subtype of a declared type.
fn narrows(vocab: &Vocabulary, range: &str, declared: &[String]) -> bool {
    declared.iter().any(|d| {
        d == range || (!is_primitive(range) && !is_primitive(d) && vocab.subsumes(d, range))
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn vocab() -> Vocabulary {
        Vocabulary::load(
            br#"{"version":"t",
                "types":[{"name":"Thing"},{"name":"Place","parents":["Thing"]},
                         {"name":"Hotel","parents":["Place"]},
                         {"name":"PostalAddress","parents":["Thing"]}],
                "properties":[{"name":"name","ranges":["Text"]},
                              {"name":"address","ranges":["PostalAddress"]},
                              {"name":"containedIn","ranges":["Place"]}]}"#,
        )
        .unwrap()
    }

    #[test]
    fn unknown_type_and_property() {
        let v = vocab();
        let err = DomainSpecification::parse(
            br#"{"name":"x","types":{"Motel":{"properties":[]}}}"#,
            &v,
        )
        .unwrap_err();
        assert_eq!(err, DomainSpecError::UnknownType("Motel".into()));

        let err = DomainSpecification::parse(
            br#"{"name":"x","types":{"Hotel":{"properties":[{"name":"stars","ranges":["Number"]}]}}}"#,
            &v,
        )
        .unwrap_err();
        assert!(matches!(err, DomainSpecError::UnknownProperty { .. }));
    }

    #[test]
    fn subtype_range_narrows() {
        let v = vocab();
        let spec = DomainSpecification::parse(
            br#"{"name":"x","types":{
                "Hotel":{"properties":[{"name":"containedIn","ranges":["Hotel"]}]}}}"#,
            &v,
        )
        .unwrap();
        let hotel = spec.type_spec("Hotel").unwrap().property("containedIn").unwrap();
        assert!(hotel.multiple);
        assert!(!hotel.required);
    }

    #[test]
    fn duplicate_property() {
        let err = DomainSpecification::parse(
            br#"{"name":"x","types":{"Hotel":{"properties":[
                {"name":"name","ranges":["Text"]},{"name":"name","ranges":["Text"]}]}}}"#,
            &vocab(),
        )
        .unwrap_err();
        assert!(matches!(err, DomainSpecError::DuplicateProperty { .. }));
    }

    #[test]
    fn allowed_properties_unknown_type() {
        let spec = DomainSpecification::parse(br#"{"name":"x","types":{}}"#, &vocab()).unwrap();
        assert!(spec.allowed_properties::<&str>(&[]).unwrap().is_empty());
        assert_eq!(
            spec.allowed_properties(&["Hotel"]).unwrap_err(),
            DomainSpecError::UnknownType("Hotel".into())
        );
    }
}
