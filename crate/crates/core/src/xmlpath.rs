//! XML trees and a small path language for selecting nodes and values.
//!
//! The grammar is deliberately tiny:
//!
//! ```text
//! path := "/"? step ("/" step)*
//! step := NAME ("[" "@" NAME "=" '"' LITERAL '"' "]")? | "@" NAME | "text()"
//! ```
//!
//! Child steps select direct children only, `@name` selects an attribute
//! value and `text()` yields the element's direct text, trimmed. Attribute
//! and text steps may only close a path. Names are compared exactly as
//! written, prefixes included; there is no namespace resolution.

use std::fmt;

use quick_xml::escape::resolve_predefined_entity;
use quick_xml::events::Event;
use quick_xml::Reader;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum XmlError {
    #[error("malformed XML at line {line}, column {column}: {message}")]
    Malformed {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("entity declarations are not supported (line {line}, column {column})")]
    ExternalEntityRejected { line: usize, column: usize },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum XmlNode {
    Element(Element),
    Text(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Element {
    pub name: String,
    pub attributes: Vec<(String, String)>,
    pub children: Vec<XmlNode>,
}

impl Element {
    pub fn new(name: impl Into<String>) -> Element {
        Element {
            name: name.into(),
            attributes: Vec::new(),
            children: Vec::new(),
        }
    }

    pub fn attribute(&self, name: &str) -> Option<&str> {
        self.attributes
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, v)| v.as_str())
    }

    pub fn child_elements(&self) -> impl Iterator<Item = &Element> {
        self.children.iter().filter_map(|c| match c {
            XmlNode::Element(e) => Some(e),
            XmlNode::Text(_) => None,
        })
    }

    /// Concatenation of the direct text children, trimmed. `None` when the
    /// result is empty.
    pub fn direct_text(&self) -> Option<String> {
        let mut text = String::new();
        for child in &self.children {
            if let XmlNode::Text(t) = child {
                text.push_str(t);
            }
        }
        let trimmed = text.trim();
        (!trimmed.is_empty()).then(|| trimmed.to_owned())
    }
}

/// A parsed document; always has exactly one root element.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct XmlDocument {
    pub root: Element,
}

impl XmlDocument {
    pub fn parse(bytes: &[u8]) -> Result<XmlDocument, XmlError> {
        parse_xml(bytes)
    }

    /// Evaluates an absolute path against the document; a relative path is
    /// evaluated with the root element as context.
    pub fn select<'a>(&'a self, expr: &PathExpr) -> Vec<PathValue<'a>> {
        eval_path(expr, &self.root)
    }
}

fn position(src: &[u8], offset: usize) -> (usize, usize) {
    let offset = offset.min(src.len());
    let before = &src[..offset];
    let line = before.iter().filter(|&&b| b == b'\n').count() + 1;
    let line_start = before.iter().rposition(|&b| b == b'\n').map_or(0, |i| i + 1);
    let column = String::from_utf8_lossy(&before[line_start..]).chars().count() + 1;
    (line, column)
}

fn malformed(src: &[u8], offset: u64, message: impl fmt::Display) -> XmlError {
    let (line, column) = position(src, offset as usize);
    XmlError::Malformed {
        line,
        column,
        message: message.to_string(),
    }
}

fn push_text(children: &mut Vec<XmlNode>, text: &str) {
    if let Some(XmlNode::Text(last)) = children.last_mut() {
        last.push_str(text);
    } else {
        children.push(XmlNode::Text(text.to_owned()));
    }
}

/// Parses a UTF-8 XML 1.0 document into a tree that preserves document order.
///
/// Only the five predefined entities and character references are expanded;
/// a DOCTYPE that declares entities is rejected outright.
pub fn parse_xml(bytes: &[u8]) -> Result<XmlDocument, XmlError> {
    if let Err(e) = std::str::from_utf8(bytes) {
        return Err(malformed(bytes, e.valid_up_to() as u64, "invalid UTF-8"));
    }
    let mut reader = Reader::from_reader(bytes);
    reader.config_mut().check_end_names = true;

    // open elements, innermost last
    let mut stack: Vec<Element> = Vec::new();
    let mut root: Option<Element> = None;

    let start_element = |reader: &Reader<&[u8]>,
                         e: &quick_xml::events::BytesStart<'_>|
     -> Result<Element, XmlError> {
        let name = String::from_utf8_lossy(e.name().as_ref()).into_owned();
        let mut element = Element::new(name);
        for attr in e.attributes().with_checks(true) {
            let attr = attr.map_err(|err| malformed(bytes, reader.buffer_position(), err))?;
            let key = String::from_utf8_lossy(attr.key.as_ref()).into_owned();
            let value = attr
                .decode_and_unescape_value(reader.decoder())
                .map_err(|err| malformed(bytes, reader.buffer_position(), err))?
                .into_owned();
            element.attributes.push((key, value));
        }
        Ok(element)
    };

    loop {
        let event = reader
            .read_event()
            .map_err(|err| malformed(bytes, reader.error_position(), err))?;
        match event {
            Event::Start(e) => {
                if root.is_some() {
                    return Err(malformed(bytes, reader.buffer_position(), "content after root element"));
                }
                stack.push(start_element(&reader, &e)?);
            }
            Event::Empty(e) => {
                if root.is_some() {
                    return Err(malformed(bytes, reader.buffer_position(), "content after root element"));
                }
                let element = start_element(&reader, &e)?;
                match stack.last_mut() {
                    Some(parent) => parent.children.push(XmlNode::Element(element)),
                    None => root = Some(element),
                }
            }
            Event::End(_) => {
                let element = stack.pop().expect("end names are checked by the reader");
                match stack.last_mut() {
                    Some(parent) => parent.children.push(XmlNode::Element(element)),
                    None => root = Some(element),
                }
            }
            Event::Text(t) => {
                let text = t
                    .xml10_content()
                    .map_err(|err| malformed(bytes, reader.buffer_position(), err))?;
                match stack.last_mut() {
                    Some(parent) => push_text(&mut parent.children, &text),
                    None if text.trim().is_empty() => {}
                    None => {
                        return Err(malformed(bytes, reader.buffer_position(), "text outside root element"))
                    }
                }
            }
            Event::CData(c) => {
                let text = c
                    .decode()
                    .map_err(|err| malformed(bytes, reader.buffer_position(), err))?;
                match stack.last_mut() {
                    Some(parent) => push_text(&mut parent.children, &text),
                    None => {
                        return Err(malformed(bytes, reader.buffer_position(), "CDATA outside root element"))
                    }
                }
            }
            Event::GeneralRef(r) => {
                let resolved = match r
                    .resolve_char_ref()
                    .map_err(|err| malformed(bytes, reader.buffer_position(), err))?
                {
                    Some(c) => c.to_string(),
                    None => {
                        let name = r
                            .decode()
                            .map_err(|err| malformed(bytes, reader.buffer_position(), err))?;
                        resolve_predefined_entity(&name)
                            .ok_or_else(|| {
                                malformed(
                                    bytes,
                                    reader.buffer_position(),
                                    format!("undefined entity `&{name};`"),
                                )
                            })?
                            .to_owned()
                    }
                };
                match stack.last_mut() {
                    Some(parent) => push_text(&mut parent.children, &resolved),
                    None => {
                        return Err(malformed(bytes, reader.buffer_position(), "reference outside root element"))
                    }
                }
            }
            Event::DocType(d) => {
                if d.windows(8).any(|w| w == b"<!ENTITY") || d.windows(6).any(|w| w == b"SYSTEM") {
                    let (line, column) = position(bytes, reader.buffer_position() as usize);
                    return Err(XmlError::ExternalEntityRejected { line, column });
                }
            }
            Event::Comment(_) | Event::Decl(_) | Event::PI(_) => {}
            Event::Eof => break,
        }
    }

    if let Some(open) = stack.last() {
        return Err(malformed(
            bytes,
            bytes.len() as u64,
            format!("unclosed element `{}`", open.name),
        ));
    }
    root.map(|root| XmlDocument { root })
        .ok_or_else(|| malformed(bytes, bytes.len() as u64, "no root element"))
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AttrEquals {
    pub attribute: String,
    pub value: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Step {
    Child {
        name: String,
        predicate: Option<AttrEquals>,
    },
    Attr(String),
    Text,
}

impl Step {
    pub fn child(name: &str) -> Step {
        Step::Child {
            name: name.to_owned(),
            predicate: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PathExpr {
    pub absolute: bool,
    pub steps: Vec<Step>,
}

#[derive(Debug, Error, PartialEq, Eq)]
#[error("path syntax error at offset {offset}: {message}")]
pub struct PathSyntaxError {
    pub offset: usize,
    pub message: String,
}

impl PathExpr {
    pub fn parse(text: &str) -> Result<PathExpr, PathSyntaxError> {
        parse_path(text)
    }

    /// Whether the path selects elements (as opposed to attribute or text values).
    pub fn selects_elements(&self) -> bool {
        matches!(self.steps.last(), Some(Step::Child { .. }))
    }
}

impl fmt::Display for PathExpr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.absolute {
            f.write_str("/")?;
        }
        for (i, step) in self.steps.iter().enumerate() {
            if i > 0 {
                f.write_str("/")?;
            }
            match step {
                Step::Child { name, predicate } => {
                    f.write_str(name)?;
                    if let Some(p) = predicate {
                        write!(f, "[@{}=\"{}\"]", p.attribute, p.value)?;
                    }
                }
                Step::Attr(name) => write!(f, "@{name}")?,
                Step::Text => f.write_str("text()")?,
            }
        }
        Ok(())
    }
}

fn is_name_start(c: char) -> bool {
    c.is_alphabetic() || c == '_' || c == ':'
}

fn is_name_char(c: char) -> bool {
    c.is_alphanumeric() || matches!(c, '_' | ':' | '-' | '.')
}

struct PathParser<'a> {
    src: &'a str,
    pos: usize,
}

impl<'a> PathParser<'a> {
    fn error(&self, message: impl Into<String>) -> PathSyntaxError {
        PathSyntaxError {
            offset: self.pos,
            message: message.into(),
        }
    }

    fn peek(&self) -> Option<char> {
        self.src[self.pos..].chars().next()
    }

    fn eat(&mut self, c: char) -> bool {
        if self.peek() == Some(c) {
            self.pos += c.len_utf8();
            true
        } else {
            false
        }
    }

    fn expect(&mut self, c: char) -> Result<(), PathSyntaxError> {
        if self.eat(c) {
            Ok(())
        } else {
            Err(self.error(format!("expected `{c}`")))
        }
    }

    fn name(&mut self) -> Result<String, PathSyntaxError> {
        let start = self.pos;
        match self.peek() {
            Some(c) if is_name_start(c) => self.pos += c.len_utf8(),
            _ => return Err(self.error("expected a name")),
        }
        while let Some(c) = self.peek().filter(|&c| is_name_char(c)) {
            self.pos += c.len_utf8();
        }
        Ok(self.src[start..self.pos].to_owned())
    }

    fn step(&mut self) -> Result<Step, PathSyntaxError> {
        if self.eat('@') {
            return Ok(Step::Attr(self.name()?));
        }
        if self.src[self.pos..].starts_with("text()") {
            self.pos += "text()".len();
            return Ok(Step::Text);
        }
        let name = self.name()?;
        let predicate = if self.eat('[') {
            self.expect('@')?;
            let attribute = self.name()?;
            self.expect('=')?;
            self.expect('"')?;
            let rest = &self.src[self.pos..];
            let Some(end) = rest.find('"') else {
                return Err(self.error("unterminated literal"));
            };
            let value = rest[..end].to_owned();
            self.pos += end + 1;
            self.expect(']')?;
            Some(AttrEquals { attribute, value })
        } else {
            None
        };
        Ok(Step::Child { name, predicate })
    }
}

pub fn parse_path(text: &str) -> Result<PathExpr, PathSyntaxError> {
    let mut p = PathParser { src: text, pos: 0 };
    let absolute = p.eat('/');
    let mut steps = Vec::new();
    loop {
        let at = p.pos;
        let step = p.step()?;
        if let Some(Step::Attr(_) | Step::Text) = steps.last() {
            return Err(PathSyntaxError {
                offset: at,
                message: "attribute and text() steps must be last".into(),
            });
        }
        steps.push(step);
        if p.pos == text.len() {
            break;
        }
        p.expect('/')?;
    }
    Ok(PathExpr { absolute, steps })
}

/// A single path result: an element, or a string value from an attribute or
/// `text()` step.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum PathValue<'a> {
    Node(&'a Element),
    Text(String),
}

impl<'a> PathValue<'a> {
    pub fn as_node(&self) -> Option<&'a Element> {
        match self {
            PathValue::Node(e) => Some(e),
            PathValue::Text(_) => None,
        }
    }

    /// The string value: text as-is, or an element's trimmed direct text.
    pub fn text(&self) -> Option<String> {
        match self {
            PathValue::Node(e) => e.direct_text(),
            PathValue::Text(t) => Some(t.clone()),
        }
    }
}

fn apply_step<'a>(step: &Step, element: &'a Element, out: &mut Vec<PathValue<'a>>) {
    match step {
        Step::Child { name, predicate } => {
            out.extend(
                element
                    .child_elements()
                    .filter(|c| &c.name == name)
                    .filter(|c| {
                        predicate
                            .as_ref()
                            .is_none_or(|p| c.attribute(&p.attribute) == Some(p.value.as_str()))
                    })
                    .map(PathValue::Node),
            );
        }
        Step::Attr(name) => {
            if let Some(v) = element.attribute(name) {
                out.push(PathValue::Text(v.to_owned()));
            }
        }
        Step::Text => {
            if let Some(t) = element.direct_text() {
                out.push(PathValue::Text(t));
            }
        }
    }
}

/// Evaluates `expr` with `context` as the starting element.
///
/// For an absolute path the context plays the part of the document root: the
/// first step must match the context element itself.
pub fn eval_path<'a>(expr: &PathExpr, context: &'a Element) -> Vec<PathValue<'a>> {
    let mut steps = expr.steps.iter();
    let mut current: Vec<PathValue<'a>> = if expr.absolute {
        let first = steps.next().expect("paths have at least one step");
        match first {
            Step::Child { name, predicate }
                if &context.name == name
                    && predicate
                        .as_ref()
                        .is_none_or(|p| context.attribute(&p.attribute) == Some(p.value.as_str())) =>
            {
                vec![PathValue::Node(context)]
            }
            _ => Vec::new(),
        }
    } else {
        vec![PathValue::Node(context)]
    };
    for step in steps {
        let mut next = Vec::new();
        for value in &current {
            if let PathValue::Node(e) = value {
                apply_step(step, e, &mut next);
            }
        }
        current = next;
    }
    current
}

#[cfg(test)]
mod tests {
    use super::*;

    fn doc(s: &str) -> XmlDocument {
        parse_xml(s.as_bytes()).unwrap()
    }

    fn texts(expr: &str, xml: &str) -> Vec<String> {
        let d = doc(xml);
        eval_path(&parse_path(expr).unwrap(), &d.root)
            .iter()
            .map(|v| v.text().unwrap())
            .collect()
    }

    #[test]
    fn parses_attributes() {
        let d = doc(r#"<A><B x="1"/></A>"#);
        assert_eq!(d.root.name, "A");
        let b: Vec<_> = d.root.child_elements().collect();
        assert_eq!(b.len(), 1);
        assert_eq!(b[0].name, "B");
        assert_eq!(b[0].attribute("x"), Some("1"));
    }

    #[test]
    fn expands_builtin_entities_only() {
        let d = doc("<A t=\"&quot;x&quot;\">a &amp; b &#x41;&#66;<![CDATA[<c>]]></A>");
        assert_eq!(d.root.direct_text().unwrap(), "a & b AB<c>");
        assert_eq!(d.root.attribute("t"), Some("\"x\""));
        assert!(matches!(parse_xml(b"<A>&ext;</A>"), Err(XmlError::Malformed { .. })));
        let xxe = br#"<?xml version="1.0"?><!DOCTYPE A [<!ENTITY ext SYSTEM "file:///etc/passwd">]><A>&ext;</A>"#;
        assert!(matches!(parse_xml(xxe), Err(XmlError::ExternalEntityRejected { .. })));
    }

    #[test]
    fn malformed_positions() {
        match parse_xml(b"<A>\n  <B></C>\n</A>").unwrap_err() {
            XmlError::Malformed { line, .. } => assert_eq!(line, 2),
            e => panic!("{e:?}"),
        }
        assert!(parse_xml(b"<A/><B/>").is_err());
        assert!(parse_xml(b"<A>").is_err());
        assert!(parse_xml(b"").is_err());
        assert!(parse_xml(b"text<A/>").is_err());
        assert!(parse_xml(br#"<A x="1" x="2"/>"#).is_err());
    }

    #[test]
    fn path_grammar() {
        assert_eq!(
            parse_path("Address/Town/text()").unwrap().steps,
            vec![Step::child("Address"), Step::child("Town"), Step::Text]
        );
        assert_eq!(parse_path("@Id").unwrap().steps, vec![Step::Attr("Id".into())]);
        assert_eq!(
            parse_path(r#"Name[@lang="de"]/text()"#).unwrap().steps,
            vec![
                Step::Child {
                    name: "Name".into(),
                    predicate: Some(AttrEquals {
                        attribute: "lang".into(),
                        value: "de".into()
                    })
                },
                Step::Text
            ]
        );
        let abs = parse_path("/Accommodations/Accommodation").unwrap();
        assert!(abs.absolute);
        assert_eq!(abs.to_string(), "/Accommodations/Accommodation");
    }

    #[test]
    fn path_syntax_errors() {
        for (bad, offset) in [
            ("", 0),
            ("A//B", 2),
            ("@Id/Name", 4),
            ("text()/A", 7),
            ("A[@x=\"1]", 6),
            ("A[x=\"1\"]", 2),
            ("A/", 2),
            ("1A", 0),
        ] {
            let err = parse_path(bad).unwrap_err();
            assert_eq!(err.offset, offset, "{bad}: {err}");
        }
    }

    #[test]
    fn evaluation_examples() {
        assert_eq!(
            texts("Name/text()", "<Accommodation><Name>Hotel Alpenhof</Name></Accommodation>"),
            ["Hotel Alpenhof"]
        );
        assert!(texts("@Id", "<Accommodation/>").is_empty());
        assert_eq!(
            texts(
                r#"Name[@lang="en"]/text()"#,
                r#"<E><Name lang="de">Konzert</Name><Name lang="en">Hotel</Name></E>"#
            ),
            ["Hotel"]
        );
    }

    #[test]
    fn empty_text_yields_nothing() {
        assert!(texts("Name/text()", "<E><Name>   </Name></E>").is_empty());
        assert_eq!(texts("Name/text()", "<E><Name> a <b/> c </Name></E>"), ["a  c"]);
    }

    #[test]
    fn absolute_paths_match_the_context_as_root() {
        let d = doc("<Root><Item/><Item/></Root>");
        assert_eq!(d.select(&parse_path("/Root/Item").unwrap()).len(), 2);
        assert!(d.select(&parse_path("/Other/Item").unwrap()).is_empty());
    }

    #[test]
    fn prefixed_names_match_as_written() {
        let d = doc(r#"<d:Root xmlns:d="urn:x"><d:Item d:id="1"/></d:Root>"#);
        assert_eq!(
            texts("d:Item/@d:id", r#"<d:Root xmlns:d="urn:x"><d:Item d:id="1"/></d:Root>"#),
            ["1"]
        );
        assert_eq!(d.root.name, "d:Root");
    }
}
