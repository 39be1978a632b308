use crate::domspec::DomainSpecification;
use crate::mapping::MappingDocument;
use crate::vocabulary::Vocabulary;
use crate::xmlpath::XmlDocument;

pub fn vocab() -> Vocabulary {
    Vocabulary::load(include_bytes!("../fixtures/schemaorg.vocab.json")).unwrap()
}

pub fn spec(v: &Vocabulary) -> DomainSpecification {
    DomainSpecification::parse(include_bytes!("../fixtures/tourism.dspec.json"), v).unwrap()
}

pub fn mapping(name: &str, s: &DomainSpecification, v: &Vocabulary) -> MappingDocument {
    let bytes = match name {
        "accommodation" => &include_bytes!("../fixtures/mappings/accommodation.map.json")[..],
        "event" => include_bytes!("../fixtures/mappings/event.map.json"),
        "infrastructure" => include_bytes!("../fixtures/mappings/infrastructure.map.json"),
        other => panic!("no mapping fixture {other}"),
    };
    MappingDocument::parse(bytes, s, v).unwrap()
}

pub fn source(name: &str) -> XmlDocument {
    let bytes = match name {
        "accommodation" => &include_bytes!("../fixtures/sources/accommodations.xml")[..],
        "event" => include_bytes!("../fixtures/sources/events.xml"),
        "infrastructure" => include_bytes!("../fixtures/sources/infrastructure.xml"),
        other => panic!("no source fixture {other}"),
    };
    XmlDocument::parse(bytes).unwrap()
}
