//! SVG documents as plain element trees.
//!
//! Parsing keeps attribute order and qualified names exactly as written so a
//! document survives `parse -> serialize -> parse` unchanged. Comments,
//! processing instructions and the doctype are dropped; whitespace-only text
//! is kept only inside text-content elements where it affects layout.

mod ids;
mod raster;
mod simplify;
mod transform;

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

use quick_xml::events::{BytesStart, Event};
use quick_xml::Reader;
use thiserror::Error;

pub use ids::{inventory_ids, is_descriptive_id, IdReport, INVENTORY_TAGS};
pub use raster::{
    rasterize, rasterize_default, rasterize_lenient, strip_unsupported, visual_distance,
    RasterImage, DEFAULT_RASTER_SIZE, VISUAL_TOLERANCE,
};
pub use simplify::{apply_transform, collect_references, simplify, simplify_rules, SimplifyAction};
pub use transform::{is_identity_transform, parse_transform, Matrix};

/// Elements whose whitespace-only text content is significant.
const TEXT_CONTENT_TAGS: &[&str] = &["text", "tspan", "textPath"];

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SvgError {
    #[error("malformed XML at byte {position}: {message}")]
    MalformedXml { position: usize, message: String },

    #[error("root element is <{0}>, expected <svg>")]
    NotAnSvg(String),

    #[error("duplicate id {id:?} at {first} and {second}")]
    DuplicateId {
        id: String,
        first: NodePath,
        second: NodePath,
    },

    #[error("cannot render <{tag}> at {path}: {reason}")]
    RenderUnsupported {
        path: NodePath,
        tag: String,
        reason: String,
    },

    #[error("image dimensions differ: {left:?} vs {right:?}")]
    DimensionMismatch { left: (u32, u32), right: (u32, u32) },

    #[error("raster dimensions must be positive, got {0}x{1}")]
    InvalidDimensions(u32, u32),

    #[error("pixel buffer has {actual} bytes, expected {expected}")]
    BadPixelBuffer { expected: usize, actual: usize },

    #[error("png codec: {0}")]
    Png(String),
}

/// Child-element indices from the root; the root itself is the empty path.
///
/// Displayed and parsed as `0/2/1`. Text nodes are not counted.
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodePath(pub Vec<usize>);

impl NodePath {
    pub fn root() -> Self {
        Self(Vec::new())
    }

    pub fn is_root(&self) -> bool {
        self.0.is_empty()
    }

    pub fn child(&self, index: usize) -> Self {
        let mut v = self.0.clone();
        v.push(index);
        Self(v)
    }

    pub fn parent(&self) -> Option<Self> {
        if self.0.is_empty() {
            None
        } else {
            Some(Self(self.0[..self.0.len() - 1].to_vec()))
        }
    }

    pub fn starts_with(&self, prefix: &NodePath) -> bool {
        self.0.starts_with(&prefix.0)
    }
}

impl fmt::Display for NodePath {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.0.is_empty() {
            return f.write_str("<root>");
        }
        for (i, idx) in self.0.iter().enumerate() {
            if i > 0 {
                f.write_str("/")?;
            }
            write!(f, "{idx}")?;
        }
        Ok(())
    }
}

impl FromStr for NodePath {
    type Err = ();

    /// Parses `0/2/1`. The empty string is not accepted.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s.is_empty() {
            return Err(());
        }
        s.split('/')
            .map(|part| {
                if part.is_empty() || !part.bytes().all(|b| b.is_ascii_digit()) {
                    Err(())
                } else {
                    part.parse::<usize>().map_err(|_| ())
                }
            })
            .collect::<Result<Vec<_>, _>>()
            .map(NodePath)
    }
}

impl From<Vec<usize>> for NodePath {
    fn from(v: Vec<usize>) -> Self {
        Self(v)
    }
}

/// Attribute list in source order.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Attributes(Vec<(String, String)>);

impl Attributes {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn get(&self, name: &str) -> Option<&str> {
        self.0
            .iter()
            .find(|(k, _)| k == name)
            .map(|(_, v)| v.as_str())
    }

    pub fn contains(&self, name: &str) -> bool {
        self.get(name).is_some()
    }

    /// Replaces the value in place, or appends when absent.
    pub fn set(&mut self, name: impl Into<String>, value: impl Into<String>) {
        let name = name.into();
        let value = value.into();
        match self.0.iter_mut().find(|(k, _)| *k == name) {
            Some(slot) => slot.1 = value,
            None => self.0.push((name, value)),
        }
    }

    pub fn remove(&mut self, name: &str) -> Option<String> {
        let pos = self.0.iter().position(|(k, _)| k == name)?;
        Some(self.0.remove(pos).1)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &str)> {
        self.0.iter().map(|(k, v)| (k.as_str(), v.as_str()))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut String)> {
        self.0.iter_mut().map(|(k, v)| (k.as_str(), v))
    }

    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.0.iter().map(|(k, _)| k.as_str())
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

impl<K: Into<String>, V: Into<String>> FromIterator<(K, V)> for Attributes {
    fn from_iter<I: IntoIterator<Item = (K, V)>>(iter: I) -> Self {
        let mut attrs = Attributes::new();
        for (k, v) in iter {
            attrs.set(k, v);
        }
        attrs
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Node {
    Element(ElementNode),
    Text(String),
}

#[derive(Debug, Clone)]
pub struct ElementNode {
    /// Qualified tag name as written, e.g. `svg:rect` or `rect`.
    pub tag: String,
    pub attributes: Attributes,
    pub children: Vec<Node>,
    pub node_path: NodePath,
    /// Byte offset of the start tag in the parsed source, if any.
    pub source_offset: Option<usize>,
}

impl PartialEq for ElementNode {
    fn eq(&self, other: &Self) -> bool {
        self.tag == other.tag
            && self.attributes == other.attributes
            && self.children == other.children
            && self.node_path == other.node_path
    }
}

impl Eq for ElementNode {}

impl ElementNode {
    pub fn new(tag: impl Into<String>) -> Self {
        Self {
            tag: tag.into(),
            attributes: Attributes::new(),
            children: Vec::new(),
            node_path: NodePath::root(),
            source_offset: None,
        }
    }

    pub fn with_attr(mut self, name: impl Into<String>, value: impl Into<String>) -> Self {
        self.attributes.set(name, value);
        self
    }

    pub fn with_child(mut self, child: ElementNode) -> Self {
        self.children.push(Node::Element(child));
        self
    }

    pub fn with_text(mut self, text: impl Into<String>) -> Self {
        self.children.push(Node::Text(text.into()));
        self
    }

    /// Tag name without namespace prefix.
    pub fn local_name(&self) -> &str {
        local_name(&self.tag)
    }

    pub fn id(&self) -> Option<&str> {
        self.attributes.get("id")
    }

    pub fn elements(&self) -> impl Iterator<Item = &ElementNode> {
        self.children.iter().filter_map(|c| match c {
            Node::Element(e) => Some(e),
            Node::Text(_) => None,
        })
    }

    pub fn elements_mut(&mut self) -> impl Iterator<Item = &mut ElementNode> {
        self.children.iter_mut().filter_map(|c| match c {
            Node::Element(e) => Some(e),
            Node::Text(_) => None,
        })
    }

    pub fn element_count(&self) -> usize {
        self.elements().count()
    }

    pub fn has_text(&self) -> bool {
        self.children.iter().any(|c| matches!(c, Node::Text(_)))
    }

    /// Concatenated direct text content.
    pub fn text(&self) -> String {
        self.children
            .iter()
            .filter_map(|c| match c {
                Node::Text(t) => Some(t.as_str()),
                Node::Element(_) => None,
            })
            .collect()
    }

    /// Pre-order walk over this element and all descendants.
    pub fn descendants(&self) -> Vec<&ElementNode> {
        let mut out = Vec::new();
        let mut stack = vec![self];
        while let Some(node) = stack.pop() {
            out.push(node);
            let kids: Vec<_> = node.elements().collect();
            stack.extend(kids.into_iter().rev());
        }
        out
    }

    fn renumber(&mut self, path: NodePath) -> usize {
        self.node_path = path;
        let mut count = 1;
        let base = self.node_path.clone();
        for (i, child) in self.elements_mut().enumerate() {
            count += child.renumber(base.child(i));
        }
        count
    }

    fn push_text(&mut self, text: String) {
        if let Some(Node::Text(prev)) = self.children.last_mut() {
            prev.push_str(&text);
        } else {
            self.children.push(Node::Text(text));
        }
    }
}

pub(crate) fn local_name(qname: &str) -> &str {
    qname.rsplit(':').next().unwrap_or(qname)
}

/// A parsed SVG file.
///
/// Equality is structural: two documents are equal when their element trees
/// are equal, regardless of the source text they came from.
#[derive(Debug, Clone)]
pub struct SvgDocument {
    pub root: ElementNode,
    pub source_text: String,
    pub element_count: usize,
}

impl PartialEq for SvgDocument {
    fn eq(&self, other: &Self) -> bool {
        self.root == other.root
    }
}

impl Eq for SvgDocument {}

impl SvgDocument {
    /// Builds a document from a programmatically constructed tree.
    pub fn from_root(root: ElementNode) -> Result<Self, SvgError> {
        let mut doc = Self::assemble(root, String::new())?;
        doc.source_text = serialize_svg(&doc);
        Ok(doc)
    }

    fn assemble(mut root: ElementNode, source_text: String) -> Result<Self, SvgError> {
        if root.local_name() != "svg" {
            return Err(SvgError::NotAnSvg(root.tag.clone()));
        }
        let element_count = root.renumber(NodePath::root());
        let doc = Self {
            root,
            source_text,
            element_count,
        };
        doc.check_unique_ids()?;
        Ok(doc)
    }

    /// Re-derives paths and counts after an in-place structural edit.
    pub(crate) fn refresh(&mut self) {
        self.element_count = self.root.renumber(NodePath::root());
        self.source_text = serialize_svg(self);
    }

    pub fn check_unique_ids(&self) -> Result<(), SvgError> {
        let mut seen: HashMap<&str, &NodePath> = HashMap::new();
        for node in self.root.descendants() {
            if let Some(id) = node.id() {
                if let Some(first) = seen.insert(id, &node.node_path) {
                    return Err(SvgError::DuplicateId {
                        id: id.to_string(),
                        first: first.clone(),
                        second: node.node_path.clone(),
                    });
                }
            }
        }
        Ok(())
    }

    pub fn node(&self, path: &NodePath) -> Option<&ElementNode> {
        let mut cur = &self.root;
        for &i in &path.0 {
            cur = cur.elements().nth(i)?;
        }
        Some(cur)
    }

    pub fn node_mut(&mut self, path: &NodePath) -> Option<&mut ElementNode> {
        let mut cur = &mut self.root;
        for &i in &path.0 {
            cur = cur.elements_mut().nth(i)?;
        }
        Some(cur)
    }

    pub fn find_by_id(&self, id: &str) -> Option<&ElementNode> {
        self.root
            .descendants()
            .into_iter()
            .find(|n| n.id() == Some(id))
    }

    pub fn ids(&self) -> Vec<&str> {
        self.root
            .descendants()
            .into_iter()
            .filter_map(|n| n.id())
            .collect()
    }

    pub fn descendants(&self) -> Vec<&ElementNode> {
        self.root.descendants()
    }
}

fn malformed(position: u64, message: impl fmt::Display) -> SvgError {
    SvgError::MalformedXml {
        position: position as usize,
        message: message.to_string(),
    }
}

/// Internal entity declarations from a doctype, as emitted by some editors
/// (`<!ENTITY ns_svg "http://www.w3.org/2000/svg">`).
fn doctype_entities(doctype: &str) -> HashMap<String, String> {
    let re = regex::Regex::new(r#"<!ENTITY\s+([^\s%]+)\s+(?:"([^"]*)"|'([^']*)')\s*>"#)
        .expect("static regex");
    re.captures_iter(doctype)
        .map(|c| {
            let value = c.get(2).or_else(|| c.get(3)).map_or("", |m| m.as_str());
            (c[1].to_string(), value.to_string())
        })
        .collect()
}

fn resolve_entity<'a>(entities: &'a HashMap<String, String>, name: &str) -> Option<&'a str> {
    quick_xml::escape::resolve_predefined_entity(name)
        .or_else(|| entities.get(name).map(String::as_str))
}

fn start_element(
    e: &BytesStart<'_>,
    entities: &HashMap<String, String>,
    position: u64,
) -> Result<ElementNode, SvgError> {
    let tag = std::str::from_utf8(e.name().as_ref())
        .map_err(|err| malformed(position, err))?
        .to_string();
    let mut node = ElementNode::new(tag);
    node.source_offset = Some(position as usize);
    for attr in e.attributes().with_checks(true) {
        let attr = attr.map_err(|err| malformed(position, err))?;
        let key = std::str::from_utf8(attr.key.as_ref())
            .map_err(|err| malformed(position, err))?
            .to_string();
        let value = attr
            .unescape_value_with(|name| resolve_entity(entities, name))
            .map_err(|err| malformed(position, err))?;
        node.attributes.0.push((key, value.into_owned()));
    }
    Ok(node)
}

/// Parses SVG source text into a document.
pub fn parse_svg(text: &str) -> Result<SvgDocument, SvgError> {
    let mut reader = Reader::from_str(text);
    reader.config_mut().trim_text(false);
    reader.config_mut().check_end_names = true;

    let mut entities = HashMap::new();
    let mut stack: Vec<ElementNode> = Vec::new();
    let mut root: Option<ElementNode> = None;

    fn attach(
        stack: &mut [ElementNode],
        root: &mut Option<ElementNode>,
        node: ElementNode,
        position: u64,
    ) -> Result<(), SvgError> {
        match stack.last_mut() {
            Some(parent) => {
                parent.children.push(Node::Element(node));
                Ok(())
            }
            None if root.is_none() => {
                *root = Some(node);
                Ok(())
            }
            None => Err(malformed(position, "multiple root elements")),
        }
    }

    loop {
        let position = reader.buffer_position();
        let event = reader
            .read_event()
            .map_err(|err| malformed(reader.error_position(), err))?;
        match event {
            Event::Start(e) => {
                if stack.is_empty() && root.is_some() {
                    return Err(malformed(position, "multiple root elements"));
                }
                stack.push(start_element(&e, &entities, position)?);
            }
            Event::Empty(e) => {
                let node = start_element(&e, &entities, position)?;
                attach(&mut stack, &mut root, node, position)?;
            }
            Event::End(_) => {
                let node = stack
                    .pop()
                    .ok_or_else(|| malformed(position, "unexpected end tag"))?;
                attach(&mut stack, &mut root, node, position)?;
            }
            Event::Text(t) => {
                let content = t
                    .unescape_with(|name| resolve_entity(&entities, name))
                    .map_err(|err| malformed(position, err))?;
                add_text(&mut stack, content.into_owned(), position)?;
            }
            Event::CData(t) => {
                let content = std::str::from_utf8(&t)
                    .map_err(|err| malformed(position, err))?
                    .to_string();
                add_text(&mut stack, content, position)?;
            }
            Event::DocType(t) => {
                let raw = String::from_utf8_lossy(&t).into_owned();
                entities = doctype_entities(&raw);
            }
            Event::Comment(_) | Event::Decl(_) | Event::PI(_) => {}
            Event::Eof => break,
        }
    }

    if let Some(open) = stack.last() {
        return Err(malformed(
            text.len() as u64,
            format!("unclosed element <{}>", open.tag),
        ));
    }
    let root = root.ok_or_else(|| malformed(0, "no root element"))?;
    SvgDocument::assemble(root, text.to_string())
}

fn add_text(stack: &mut [ElementNode], text: String, position: u64) -> Result<(), SvgError> {
    let Some(parent) = stack.last_mut() else {
        if text.trim().is_empty() {
            return Ok(());
        }
        return Err(malformed(position, "text outside the root element"));
    };
    if text.trim().is_empty() && !TEXT_CONTENT_TAGS.contains(&parent.local_name()) {
        return Ok(());
    }
    if text.is_empty() {
        return Ok(());
    }
    parent.push_text(text);
    Ok(())
}

fn escape_attr(value: &str, out: &mut String) {
    for ch in value.chars() {
        match ch {
            '&' => out.push_str("&amp;"),
            '<' => out.push_str("&lt;"),
            '>' => out.push_str("&gt;"),
            '"' => out.push_str("&quot;"),
            '\n' => out.push_str("&#10;"),
            '\r' => out.push_str("&#13;"),
            '\t' => out.push_str("&#9;"),
            c => out.push(c),
        }
    }
}

fn escape_text(value: &str, out: &mut String) {
    for ch in value.chars() {
        match ch {
            '&' => out.push_str("&amp;"),
            '<' => out.push_str("&lt;"),
            '>' => out.push_str("&gt;"),
            '\r' => out.push_str("&#13;"),
            c => out.push(c),
        }
    }
}

fn write_element(node: &ElementNode, out: &mut String) {
    out.push('<');
    out.push_str(&node.tag);
    for (k, v) in node.attributes.iter() {
        out.push(' ');
        out.push_str(k);
        out.push_str("=\"");
        escape_attr(v, out);
        out.push('"');
    }
    if node.children.is_empty() {
        out.push_str("/>");
        return;
    }
    out.push('>');
    for child in &node.children {
        match child {
            Node::Element(e) => write_element(e, out),
            Node::Text(t) => escape_text(t, out),
        }
    }
    out.push_str("</");
    out.push_str(&node.tag);
    out.push('>');
}

/// Canonical serialization: no declaration, no indentation, attributes in
/// stored order, self-closing tags for childless elements.
pub fn serialize_svg(doc: &SvgDocument) -> String {
    serialize_element(&doc.root)
}

pub fn serialize_element(node: &ElementNode) -> String {
    let mut out = String::new();
    write_element(node, &mut out);
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_circle_example() {
        let doc = parse_svg(r#"<svg><circle cx="50" cy="50" r="40"/></svg>"#).unwrap();
        assert_eq!(doc.element_count, 2);
        let circle = doc.node(&NodePath(vec![0])).unwrap();
        assert_eq!(circle.tag, "circle");
        assert_eq!(circle.node_path, NodePath(vec![0]));
        let keys: Vec<_> = circle.attributes.keys().collect();
        assert_eq!(keys, ["cx", "cy", "r"]);
    }

    #[test]
    fn empty_root() {
        let doc = parse_svg("<svg/>").unwrap();
        assert_eq!(doc.element_count, 1);
        assert!(doc.root.children.is_empty());
        assert_eq!(serialize_svg(&doc), "<svg/>");
        // open/close form normalizes to self-closing
        assert_eq!(serialize_svg(&parse_svg("<svg></svg>").unwrap()), "<svg/>");
    }

    #[test]
    fn duplicate_id_names_both_paths() {
        let err = parse_svg(r#"<svg><g id="a"/><g id="a"/></svg>"#).unwrap_err();
        assert_eq!(
            err,
            SvgError::DuplicateId {
                id: "a".into(),
                first: NodePath(vec![0]),
                second: NodePath(vec![1]),
            }
        );
    }

    #[test]
    fn rejects_non_svg_root() {
        assert_eq!(
            parse_svg("<html/>").unwrap_err(),
            SvgError::NotAnSvg("html".into())
        );
        // prefixed root is fine
        assert!(parse_svg(r#"<svg:svg xmlns:svg="http://www.w3.org/2000/svg"/>"#).is_ok());
    }

    #[test]
    fn malformed_xml_reports_position() {
        for bad in [
            "<svg><g></svg>",
            "<svg",
            "",
            "<svg/><svg/>",
            "<svg a='1' a='2'/>",
        ] {
            match parse_svg(bad) {
                Err(SvgError::MalformedXml { .. }) => {}
                other => panic!("{bad:?} -> {other:?}"),
            }
        }
    }

    #[test]
    fn round_trip_preserves_structure() {
        let src = r##"<?xml version="1.0"?>
<!-- exported -->
<svg xmlns="http://www.w3.org/2000/svg" xmlns:xlink="http://www.w3.org/1999/xlink" viewBox="0 0 10 10">
  <g id="x"><rect/></g>
  <text x="1" y="2">A &amp; B <tspan> c </tspan></text>
  <style><![CDATA[ .a > b { fill: red } ]]></style>
  <use xlink:href="#x" title="q&quot;t"/>
</svg>"##;
        let doc = parse_svg(src).unwrap();
        let out = serialize_svg(&doc);
        let again = parse_svg(&out).unwrap();
        assert_eq!(doc, again);
        assert_eq!(out, serialize_svg(&again));
        assert_eq!(doc.element_count, 7);
    }

    #[test]
    fn doctype_entities_are_expanded() {
        let src = r#"<!DOCTYPE svg [ <!ENTITY ns_svg "http://www.w3.org/2000/svg"> ]>
<svg xmlns="&ns_svg;"><g id="Layer_1"/></svg>"#;
        let doc = parse_svg(src).unwrap();
        assert_eq!(
            doc.root.attributes.get("xmlns"),
            Some("http://www.w3.org/2000/svg")
        );
    }

    #[test]
    fn node_path_text_form() {
        let p: NodePath = "0/2/1".parse().unwrap();
        assert_eq!(p, NodePath(vec![0, 2, 1]));
        assert_eq!(p.to_string(), "0/2/1");
        assert!("".parse::<NodePath>().is_err());
        assert!("a/1".parse::<NodePath>().is_err());
        assert!("1//2".parse::<NodePath>().is_err());
    }

    #[test]
    fn attribute_order_is_kept_for_built_documents() {
        let root = ElementNode::new("svg").with_child(
            ElementNode::new("circle")
                .with_attr("cx", "50")
                .with_attr("cy", "50")
                .with_attr("r", "40"),
        );
        let doc = SvgDocument::from_root(root).unwrap();
        assert_eq!(
            serialize_svg(&doc),
            r#"<svg><circle cx="50" cy="50" r="40"/></svg>"#
        );
    }
}
