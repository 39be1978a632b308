use annotator::domspec::{DomainSpecError, DomainSpecification};
use annotator::vocabulary::{Vocabulary, VocabularyError};

const VOCAB: &[u8] = include_bytes!("../fixtures/schemaorg.vocab.json");
const HOTEL: &[u8] = include_bytes!("../fixtures/hotel.dspec.json");
const TOURISM: &[u8] = include_bytes!("../fixtures/tourism.dspec.json");

fn vocab() -> Vocabulary {
    Vocabulary::load(VOCAB).unwrap()
}

#[test]
fn subtype_relation_matches_closure_oracle() {
    let v = vocab();
    let names: Vec<&str> = v.types().iter().map(|t| t.name.as_str()).collect();
    let n = names.len();
    let idx = |s: &str| names.iter().position(|x| *x == s).unwrap();
    // reflexive-transitive closure of the parent edges, Warshall style
    let mut reach = vec![vec![false; n]; n];
    for (i, t) in v.types().iter().enumerate() {
        reach[i][i] = true;
        for p in &t.parents {
            reach[i][idx(p)] = true;
        }
    }
    for k in 0..n {
        for i in 0..n {
            for j in 0..n {
                if reach[i][k] && reach[k][j] {
                    reach[i][j] = true;
                }
            }
        }
    }
    for i in 0..n {
        for j in 0..n {
            assert_eq!(v.is_subtype_of(names[i], names[j]).unwrap(), reach[i][j], "{} <: {}", names[i], names[j]);
        }
    }
}

#[test]
fn hotel_ancestry() {
    let v = vocab();
    for sup in ["Hotel", "LodgingBusiness", "LocalBusiness", "Organization", "Place", "Thing"] {
        assert!(v.is_subtype_of("Hotel", sup).unwrap(), "{sup}");
    }
    assert!(!v.is_subtype_of("Hotel", "Event").unwrap());
    assert!(!v.is_subtype_of("Place", "Hotel").unwrap());
    assert!(matches!(v.is_subtype_of("Motel", "Thing"), Err(VocabularyError::UnknownType(_))));
    assert_eq!(v.property_ranges("address").unwrap(), ["PostalAddress"]);
}

#[test]
fn vocabulary_round_trip() {
    let v = vocab();
    let again = Vocabulary::load(v.to_json().as_bytes()).unwrap();
    assert_eq!(again.to_json(), v.to_json());
}

#[test]
fn hotel_specification() {
    let v = vocab();
    let spec = DomainSpecification::parse(HOTEL, &v).unwrap();
    let hotel = spec.type_spec("Hotel").unwrap();
    let names: Vec<&str> = hotel.properties.iter().map(|p| p.name.as_str()).collect();
    assert_eq!(
        names,
        [
            "name",
            "description",
            "telephone",
            "faxNumber",
            "email",
            "url",
            "currenciesAccepted",
            "address",
            "aggregateRating",
            "geo",
            "makesOffer",
            "image"
        ]
    );
    assert!(hotel.property("name").unwrap().required);
    assert_eq!(hotel.property("address").unwrap().ranges, ["PostalAddress"]);
    let again = DomainSpecification::parse(spec.to_json().as_bytes(), &v).unwrap();
    assert_eq!(again, spec);
}

fn with_hotel_property(property: &str) -> Vec<u8> {
    format!(
        r#"{{"name":"x","types":{{"Hotel":{{"properties":[{{"name":"name","ranges":["Text"],"required":true}},{property}]}},
            "PostalAddress":{{"properties":[{{"name":"postalCode","ranges":["Text"]}}]}}}}}}"#
    )
    .into_bytes()
}

#[test]
fn address_as_text_does_not_narrow() {
    let err = DomainSpecification::parse(&with_hotel_property(r#"{"name":"address","ranges":["Text"]}"#), &vocab())
        .unwrap_err();
    assert_eq!(
        err,
        DomainSpecError::RangeNotNarrowing {
            type_name: "Hotel".into(),
            property: "address".into(),
            range: "Text".into(),
            allowed: vec!["PostalAddress".into()],
        }
    );
}

#[test]
fn structured_range_needs_its_type() {
    let err = DomainSpecification::parse(&with_hotel_property(r#"{"name":"makesOffer","ranges":["Offer"]}"#), &vocab())
        .unwrap_err();
    assert!(matches!(err, DomainSpecError::MissingClosure { ref range, .. } if range == "Offer"));
    assert!(matches!(
        DomainSpecification::parse(&with_hotel_property(r#"{"name":"address","ranges":[]}"#), &vocab()),
        Err(DomainSpecError::EmptyRanges { .. })
    ));
}

#[test]
fn multi_type_union() {
    let v = vocab();
    let spec = DomainSpecification::parse(TOURISM, &v).unwrap();
    let union = spec.allowed_properties(&["Hotel", "Restaurant"]).unwrap();
    assert_eq!(union["image"].ranges, ["ImageObject", "URL"]);
    assert_eq!(union, spec.allowed_properties(&["Restaurant", "Hotel"]).unwrap());
    let hotel = spec.allowed_properties(&["Hotel"]).unwrap();
    let restaurant = spec.allowed_properties(&["Restaurant"]).unwrap();
    for key in hotel.keys().chain(restaurant.keys()) {
        assert!(union.contains_key(key));
    }
    assert_eq!(union.len(), hotel.keys().chain(restaurant.keys()).collect::<std::collections::BTreeSet<_>>().len());
}
