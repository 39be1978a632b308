use annotator::annotation::{AnnotationDocument, Value};
use annotator::domspec::DomainSpecification;
use annotator::embedder::{inject, script_block};
use annotator::literal::Datatype;
use annotator::repository::{FixedClock, Origin, Repository, SyncMode};
use annotator::vocabulary::Vocabulary;
use annotator::xmlpath::{eval_path, PathExpr, PathValue, XmlDocument};
use proptest::prelude::*;
use serde_json::Value as Json;

fn literal() -> impl Strategy<Value = Value> {
    prop_oneof![
        "\\PC{0,16}".prop_map(Value::Text),
        any::<f64>().prop_filter("finite", |n| n.is_finite()).prop_map(Value::Number),
        (-1000i64..1000).prop_map(|n| Value::Number(n as f64 / 8.0)),
        any::<bool>().prop_map(Value::Boolean),
        ("\\PC{0,16}", prop::sample::select(vec!["de", "en", "de-AT", "it"]))
            .prop_map(|(v, l)| Value::lang(v, l)),
        ("\\PC{0,16}", prop::sample::select(Datatype::ALL.to_vec()))
            .prop_map(|(value, datatype)| Value::Typed { value, datatype }),
    ]
}

fn name() -> impl Strategy<Value = String> {
    "[a-zA-Z][a-zA-Z0-9]{0,10}"
}

fn node(depth: u32) -> BoxedStrategy<AnnotationDocument> {
    let value = if depth == 0 {
        literal().boxed()
    } else {
        prop_oneof![3 => literal(), 1 => node(depth - 1).prop_map(Value::entity)].boxed()
    };
    (
        prop::option::of("[a-z0-9:/._-]{1,12}"),
        prop::collection::vec(name(), 1..3),
        prop::collection::btree_map(name(), prop::collection::vec(value, 1..4), 0..=8),
    )
        .prop_map(|(id, types, properties)| AnnotationDocument { id, types, properties })
        .boxed()
}

fn document() -> BoxedStrategy<AnnotationDocument> {
    node(3)
}

/// Counts (subject, predicate, object) statements by walking the serialized
/// JSON, independent of the document model.
fn flatten(json: &Json, out: &mut Vec<(String, String, String)>, subject: String) {
    let obj = json.as_object().expect("node object");
    let subject = obj
        .get("@id")
        .and_then(Json::as_str)
        .map(str::to_owned)
        .unwrap_or(subject);
    let as_list = |v: &Json| match v {
        Json::Array(a) => a.clone(),
        other => vec![other.clone()],
    };
    for t in as_list(&obj["@type"]) {
        out.push((subject.clone(), "rdf:type".into(), t.to_string()));
    }
    for (key, value) in obj {
        if key.starts_with('@') {
            continue;
        }
        for (i, v) in as_list(value).iter().enumerate() {
            let is_node = v.as_object().is_some_and(|o| !o.contains_key("@value"));
            if is_node {
                let blank = format!("{subject}/{key}/{i}");
                out.push((subject.clone(), key.clone(), blank.clone()));
                flatten(v, out, blank);
            } else {
                out.push((subject.clone(), key.clone(), v.to_string()));
            }
        }
    }
}

/// Canonical member order: `@context` (top level only), `@id`, `@type`,
/// then properties lexicographically; value objects put `@value` last.
fn key_order_ok(raw: &Raw, top: bool) -> bool {
    match raw {
        Raw::Scalar => true,
        Raw::Arr(items) => items.iter().all(|v| key_order_ok(v, false)),
        Raw::Obj(members) => {
            let keys: Vec<&str> = members.iter().map(|(k, _)| k.as_str()).collect();
            if keys.contains(&"@value") {
                return keys.len() == 2 && keys[1] == "@value" && (keys[0] == "@type" || keys[0] == "@language");
            }
            let mut expected: Vec<&str> = Vec::new();
            if top {
                expected.push("@context");
            }
            if keys.contains(&"@id") {
                expected.push("@id");
            }
            expected.push("@type");
            let mut props: Vec<&str> = keys.iter().copied().filter(|k| !k.starts_with('@')).collect();
            props.sort();
            expected.extend(props);
            keys == expected && members.iter().all(|(_, v)| key_order_ok(v, false))
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn canonical_round_trip(doc in document()) {
        let bytes = doc.canonical_bytes();
        let back = AnnotationDocument::parse(&bytes).unwrap();
        prop_assert_eq!(&back.canonical_bytes(), &bytes);
        prop_assert_eq!(back, doc);
    }

    #[test]
    fn canonical_key_order(doc in document()) {
        let raw: Raw = serde_json::from_slice(&doc.canonical_bytes()).unwrap();
        prop_assert!(key_order_ok(&raw, true));
    }

    #[test]
    fn triple_count_matches_flattening(doc in document()) {
        let json: Json = serde_json::from_slice(&doc.canonical_bytes()).unwrap();
        let mut tuples = Vec::new();
        flatten(&json, &mut tuples, "_:root".into());
        prop_assert_eq!(doc.count_triples(), tuples.len() as u64);
    }

    #[test]
    fn allowed_properties_ignore_order(picks in prop::sample::subsequence(tourism_types(), 0..5), seed in any::<u64>()) {
        let (_, spec) = tourism();
        let mut shuffled = picks.clone();
        let n = shuffled.len();
        for i in 0..n {
            shuffled.swap(i, (seed as usize).wrapping_add(i * 7) % n.max(1));
        }
        let mut doubled = picks.clone();
        doubled.extend(picks.iter().cloned());
        let a = spec.allowed_properties(&picks).unwrap();
        prop_assert_eq!(&a, &spec.allowed_properties(&shuffled).unwrap());
        prop_assert_eq!(&a, &spec.allowed_properties(&doubled).unwrap());
        for t in &picks {
            for p in &spec.type_spec(t).unwrap().properties {
                prop_assert!(a.contains_key(&p.name));
            }
        }
    }

    #[test]
    fn path_composition(tree in xml_tree(), a in "[ab]", b in "[abc]") {
        let doc = XmlDocument::parse(tree.as_bytes()).unwrap();
        let whole = PathExpr::parse(&format!("{a}/{b}")).unwrap();
        let first = PathExpr::parse(&a).unwrap();
        let second = PathExpr::parse(&b).unwrap();
        let direct: Vec<*const _> = eval_path(&whole, &doc.root).iter().filter_map(PathValue::as_node).map(|n| n as *const _).collect();
        let composed: Vec<*const _> = eval_path(&first, &doc.root)
            .iter()
            .filter_map(PathValue::as_node)
            .flat_map(|n| eval_path(&second, n).into_iter().filter_map(|v| v.as_node().map(|n| n as *const _)).collect::<Vec<_>>())
            .collect();
        prop_assert_eq!(direct, composed);
    }

    #[test]
    fn sibling_order_is_document_order(names in prop::collection::vec("[a-z]{1,4}", 1..8)) {
        let xml = |items: &[String]| {
            let mut s = String::from("<r>");
            for n in items {
                s.push_str(&format!("<i>{n}</i>"));
            }
            s.push_str("</r>");
            s
        };
        let texts = |src: String| {
            let doc = XmlDocument::parse(src.as_bytes()).unwrap();
            eval_path(&PathExpr::parse("i/text()").unwrap(), &doc.root)
                .into_iter()
                .filter_map(|v| v.text())
                .collect::<Vec<String>>()
        };
        let mut reversed = names.clone();
        reversed.reverse();
        let mut back = texts(xml(&reversed));
        back.reverse();
        prop_assert_eq!(texts(xml(&names)), back);
    }

    #[test]
    fn injection_preserves_bytes(prefix in "[ -~]{0,40}", suffix in "[ -~]{0,40}", id in "[a-z0-9-]{1,8}") {
        prop_assume!(!prefix.to_ascii_lowercase().contains("</head>") && !prefix.to_ascii_lowercase().contains("<script"));
        let html = format!("{prefix}</HEAD>{suffix}");
        let json = r#"{"@context":"http://schema.org","@type":"Thing","name":"x"}"#;
        let once = inject(html.as_bytes(), json.as_bytes(), &id).unwrap();
        let twice = inject(&once, json.as_bytes(), &id).unwrap();
        prop_assert_eq!(&once, &twice);
        let block = script_block(json, &id);
        let stripped = String::from_utf8(once).unwrap().replacen(&block, "", 1);
        prop_assert_eq!(stripped, html);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn sync_conservation_and_idempotence(batches in prop::collection::vec(prop::collection::btree_map("[a-e]", "[xyz]", 0..5), 1..5), full in any::<bool>()) {
        let dir = tempfile::tempdir().unwrap();
        let clock = std::sync::Arc::new(FixedClock(chrono::NaiveDate::from_ymd_opt(2017, 3, 1).unwrap()));
        let mode = if full { SyncMode::Full } else { SyncMode::Incremental };
        let mut repo = Repository::open_with_clock(dir.path(), clock).unwrap();
        for batch in &batches {
            let before: Vec<String> = repo.manifest().entries.keys().cloned().collect();
            let docs: Vec<AnnotationDocument> = batch
                .iter()
                .map(|(id, name)| AnnotationDocument::new(["Thing"]).with_id(id.clone()).with("name", Value::text(name.clone())))
                .collect();
            let r = repo.sync(&docs, "d", mode, Origin::Automatic).unwrap();
            let c = r.counts();
            prop_assert_eq!(c.added + c.updated + c.unchanged, docs.len());
            prop_assert!(r.removed.iter().all(|id| before.contains(id)));
            let state = repo.manifest().entries.clone();
            let again = repo.sync(&docs, "d", mode, Origin::Automatic).unwrap();
            prop_assert_eq!(again.counts().unchanged, docs.len());
            prop_assert_eq!(again.counts().removed, 0);
            prop_assert_eq!(&repo.manifest().entries, &state);
            prop_assert!(repo.fsck().is_clean());
        }
    }
}

/// JSON tree that keeps object members in input order.
enum Raw {
    Scalar,
    Arr(Vec<Raw>),
    Obj(Vec<(String, Raw)>),
}

impl<'de> serde::Deserialize<'de> for Raw {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        use serde::de::{MapAccess, SeqAccess, Visitor};
        struct V;
        impl<'de> Visitor<'de> for V {
            type Value = Raw;
            fn expecting(&self, f: &mut std::fmt::Formatter) -> std::fmt::Result {
                f.write_str("json")
            }
            fn visit_bool<E>(self, _: bool) -> Result<Raw, E> {
                Ok(Raw::Scalar)
            }
            fn visit_i64<E>(self, _: i64) -> Result<Raw, E> {
                Ok(Raw::Scalar)
            }
            fn visit_u64<E>(self, _: u64) -> Result<Raw, E> {
                Ok(Raw::Scalar)
            }
            fn visit_f64<E>(self, _: f64) -> Result<Raw, E> {
                Ok(Raw::Scalar)
            }
            fn visit_str<E>(self, _: &str) -> Result<Raw, E> {
                Ok(Raw::Scalar)
            }
            fn visit_seq<A: SeqAccess<'de>>(self, mut seq: A) -> Result<Raw, A::Error> {
                let mut out = Vec::new();
                while let Some(v) = seq.next_element()? {
                    out.push(v);
                }
                Ok(Raw::Arr(out))
            }
            fn visit_map<A: MapAccess<'de>>(self, mut map: A) -> Result<Raw, A::Error> {
                let mut out = Vec::new();
                while let Some(k) = map.next_key::<String>()? {
                    out.push((k, map.next_value()?));
                }
                Ok(Raw::Obj(out))
            }
        }
        d.deserialize_any(V)
    }
}

fn tourism_types() -> Vec<String> {
    tourism().1.type_specs.keys().cloned().collect()
}

fn tourism() -> (Vocabulary, DomainSpecification) {
    let v = Vocabulary::load(include_bytes!("../fixtures/schemaorg.vocab.json")).unwrap();
    let s = DomainSpecification::parse(include_bytes!("../fixtures/tourism.dspec.json"), &v).unwrap();
    (v, s)
}

fn xml_tree() -> impl Strategy<Value = String> {
    let leaf = prop::sample::select(vec!["a", "b", "c"]).prop_map(|n| format!("<{n}/>"));
    leaf.prop_recursive(3, 24, 4, |inner| {
        (prop::sample::select(vec!["a", "b", "c"]), prop::collection::vec(inner, 0..4))
            .prop_map(|(n, kids)| format!("<{n}>{}</{n}>", kids.concat()))
    })
    .prop_map(|body| format!("<root>{body}{body}</root>"))
}
