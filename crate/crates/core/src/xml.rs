//! Minimal XML tree used by the DIDL codec, the protocol engines and the
//! transforms.
//!
//! The tree keeps qualified names and attributes exactly as written so that
//! fragments embedded in descriptors survive a parse/serialize cycle.
//! Structural comparison goes through [`canonical_bytes`], which resolves
//! namespaces, sorts attributes and trims insignificant whitespace, so two
//! documents compare equal regardless of prefix choice or layout.

use std::borrow::Cow;
use std::collections::HashMap;
use std::fmt;

use quick_xml::events::{BytesDecl, BytesEnd, BytesStart, BytesText, Event};
use quick_xml::{Reader, Writer, XmlVersion};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum XmlError {
    #[error("malformed XML: {0}")]
    Malformed(String),
    #[error("unbound namespace prefix `{0}`")]
    UnboundPrefix(String),
}

impl From<quick_xml::Error> for XmlError {
    fn from(e: quick_xml::Error) -> Self {
        XmlError::Malformed(e.to_string())
    }
}

/// One node of the tree. Comments and processing instructions are dropped at
/// parse time; character data (including CDATA) becomes `Text`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum XmlNode {
    Element(XmlElement),
    Text(String),
}

impl XmlNode {
    pub fn as_element(&self) -> Option<&XmlElement> {
        match self {
            XmlNode::Element(e) => Some(e),
            XmlNode::Text(_) => None,
        }
    }

    pub fn as_text(&self) -> Option<&str> {
        match self {
            XmlNode::Text(t) => Some(t),
            XmlNode::Element(_) => None,
        }
    }
}

/// An element with its qualified name, attributes (namespace declarations
/// included) and child nodes, all kept in document order.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct XmlElement {
    pub name: String,
    pub attributes: Vec<(String, String)>,
    pub children: Vec<XmlNode>,
}

impl XmlElement {
    pub fn new(name: impl Into<String>) -> Self {
        XmlElement {
            name: name.into(),
            attributes: Vec::new(),
            children: Vec::new(),
        }
    }

    pub fn attr(mut self, key: impl Into<String>, value: impl Into<String>) -> Self {
        self.attributes.push((key.into(), value.into()));
        self
    }

    pub fn child(mut self, elem: XmlElement) -> Self {
        self.children.push(XmlNode::Element(elem));
        self
    }

    pub fn text(mut self, text: impl Into<String>) -> Self {
        self.children.push(XmlNode::Text(text.into()));
        self
    }

    pub fn attribute(&self, key: &str) -> Option<&str> {
        self.attributes
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
    }

    pub fn set_attribute(&mut self, key: &str, value: impl Into<String>) {
        if let Some(slot) = self.attributes.iter_mut().find(|(k, _)| k == key) {
            slot.1 = value.into();
        } else {
            self.attributes.push((key.to_string(), value.into()));
        }
    }

    pub fn child_elements(&self) -> impl Iterator<Item = &XmlElement> {
        self.children.iter().filter_map(XmlNode::as_element)
    }

    /// Concatenated character data of the direct children, trimmed.
    pub fn text_content(&self) -> String {
        let mut out = String::new();
        for node in &self.children {
            if let XmlNode::Text(t) = node {
                out.push_str(t);
            }
        }
        out.trim().to_string()
    }

    /// The local part of the (possibly prefixed) element name.
    pub fn local_name(&self) -> &str {
        match self.name.split_once(':') {
            Some((_, local)) => local,
            None => &self.name,
        }
    }
}

// ---------------------------------------------------------------------------
// Parsing
// ---------------------------------------------------------------------------

/// Resolves a general entity reference event to its character, if it is a
/// character reference or one of the five predefined entities.
pub(crate) fn general_ref_char(r: &quick_xml::events::BytesRef<'_>) -> Option<char> {
    match r.resolve_char_ref() {
        Ok(Some(ch)) => Some(ch),
        Ok(None) => resolve_named_entity(r.as_ref()),
        Err(_) => None,
    }
}

pub(crate) fn resolve_named_entity(name: &str) -> Option<char> {
    match name {
        "lt" => Some('<'),
        "gt" => Some('>'),
        "amp" => Some('&'),
        "apos" => Some('\''),
        "quot" => Some('"'),
        _ => None,
    }
}

/// Parses a complete XML document and returns its root element.
pub fn parse(bytes: &[u8]) -> Result<XmlElement, XmlError> {
    let text = std::str::from_utf8(bytes)
        .map_err(|e| XmlError::Malformed(format!("invalid UTF-8: {e}")))?;
    let mut reader = Reader::from_reader(text.as_bytes());
    let mut stack: Vec<XmlElement> = Vec::new();
    let mut root: Option<XmlElement> = None;

    fn push_text(stack: &mut [XmlElement], piece: &str) {
        if let Some(parent) = stack.last_mut() {
            if let Some(XmlNode::Text(prev)) = parent.children.last_mut() {
                prev.push_str(piece);
            } else {
                parent.children.push(XmlNode::Text(piece.to_string()));
            }
        }
        // Character data outside the root element is ignored.
    }

    loop {
        match reader.read_event()? {
            Event::Start(e) => {
                stack.push(element_from_start(&e)?);
            }
            Event::Empty(e) => {
                let elem = element_from_start(&e)?;
                finish_element(elem, &mut stack, &mut root)?;
            }
            Event::End(_) => {
                let elem = stack
                    .pop()
                    .ok_or_else(|| XmlError::Malformed("unmatched end tag".into()))?;
                finish_element(elem, &mut stack, &mut root)?;
            }
            Event::Text(t) => {
                push_text(&mut stack, &t.xml_content(XmlVersion::Implicit1_0));
            }
            Event::CData(c) => {
                push_text(&mut stack, c.as_ref());
            }
            Event::GeneralRef(r) => {
                if let Some(ch) = r
                    .resolve_char_ref()
                    .map_err(|e| XmlError::Malformed(e.to_string()))?
                {
                    push_text(&mut stack, &ch.to_string());
                } else if let Some(ch) = resolve_named_entity(r.as_ref()) {
                    push_text(&mut stack, &ch.to_string());
                } else {
                    return Err(XmlError::Malformed(format!(
                        "unknown entity reference `&{};`",
                        r.as_ref()
                    )));
                }
            }
            Event::Decl(_) | Event::Comment(_) | Event::PI(_) | Event::DocType(_) => {}
            Event::Eof => break,
        }
    }
    if !stack.is_empty() {
        return Err(XmlError::Malformed("unexpected end of document".into()));
    }
    root.ok_or_else(|| XmlError::Malformed("no root element".into()))
}

fn element_from_start(e: &BytesStart<'_>) -> Result<XmlElement, XmlError> {
    let mut elem = XmlElement::new(e.name().into_inner().to_string());
    for attr in e.attributes() {
        let attr = attr.map_err(|e| XmlError::Malformed(e.to_string()))?;
        let key = attr.key.into_inner().to_string();
        let value = attr
            .normalized_value(XmlVersion::Implicit1_0)
            .map_err(|e| XmlError::Malformed(e.to_string()))?
            .into_owned();
        elem.attributes.push((key, value));
    }
    Ok(elem)
}

fn finish_element(
    elem: XmlElement,
    stack: &mut Vec<XmlElement>,
    root: &mut Option<XmlElement>,
) -> Result<(), XmlError> {
    match stack.last_mut() {
        Some(parent) => parent.children.push(XmlNode::Element(elem)),
        None => {
            if root.is_some() {
                return Err(XmlError::Malformed("multiple root elements".into()));
            }
            *root = Some(elem);
        }
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Writing
// ---------------------------------------------------------------------------

/// Serializes a document with an XML declaration.
pub fn write_document(root: &XmlElement) -> Vec<u8> {
    let mut buf = Vec::new();
    let mut writer = Writer::new(&mut buf);
    writer
        .write_event(Event::Decl(BytesDecl::new("1.0", Some("UTF-8"), None)))
        .expect("write to Vec cannot fail");
    buf.push(b'\n');
    let mut writer = Writer::new(&mut buf);
    write_element(&mut writer, root);
    buf
}

/// Serializes an element without an XML declaration.
pub fn write_fragment(root: &XmlElement) -> Vec<u8> {
    let mut buf = Vec::new();
    let mut writer = Writer::new(&mut buf);
    write_element(&mut writer, root);
    buf
}

fn write_element(writer: &mut Writer<&mut Vec<u8>>, elem: &XmlElement) {
    let mut start = BytesStart::new(elem.name.as_str());
    for (k, v) in &elem.attributes {
        start.push_attribute((k.as_str(), v.as_str()));
    }
    if elem.children.is_empty() {
        writer
            .write_event(Event::Empty(start))
            .expect("write to Vec cannot fail");
        return;
    }
    writer
        .write_event(Event::Start(start))
        .expect("write to Vec cannot fail");
    for child in &elem.children {
        match child {
            XmlNode::Element(e) => write_element(writer, e),
            XmlNode::Text(t) => writer
                .write_event(Event::Text(BytesText::new(t)))
                .expect("write to Vec cannot fail"),
        }
    }
    writer
        .write_event(Event::End(BytesEnd::new(elem.name.as_str())))
        .expect("write to Vec cannot fail");
}

// ---------------------------------------------------------------------------
// Namespaces
// ---------------------------------------------------------------------------

/// Immutable chain of in-scope namespace bindings.
#[derive(Debug, Clone, Default)]
pub struct NsEnv {
    bindings: HashMap<String, String>,
    default_ns: Option<String>,
}

impl NsEnv {
    pub fn empty() -> Self {
        NsEnv::default()
    }

    /// Returns the environment extended with the declarations on `elem`.
    pub fn enter(&self, elem: &XmlElement) -> NsEnv {
        let mut env = self.clone();
        for (k, v) in &elem.attributes {
            if k == "xmlns" {
                env.default_ns = if v.is_empty() { None } else { Some(v.clone()) };
            } else if let Some(prefix) = k.strip_prefix("xmlns:") {
                env.bindings.insert(prefix.to_string(), v.clone());
            }
        }
        env
    }

    /// Resolves an element name to (namespace URI, local name).
    pub fn resolve_element(&self, qname: &str) -> Result<(Option<String>, String), XmlError> {
        match qname.split_once(':') {
            Some((prefix, local)) => {
                let uri = self
                    .bindings
                    .get(prefix)
                    .ok_or_else(|| XmlError::UnboundPrefix(prefix.to_string()))?;
                Ok((Some(uri.clone()), local.to_string()))
            }
            None => Ok((self.default_ns.clone(), qname.to_string())),
        }
    }

    /// Resolves an attribute name. Unprefixed attributes are in no namespace.
    pub fn resolve_attribute(&self, qname: &str) -> Result<(Option<String>, String), XmlError> {
        match qname.split_once(':') {
            Some((prefix, local)) => {
                let uri = self
                    .bindings
                    .get(prefix)
                    .ok_or_else(|| XmlError::UnboundPrefix(prefix.to_string()))?;
                Ok((Some(uri.clone()), local.to_string()))
            }
            None => Ok((None, qname.to_string())),
        }
    }

    fn lookup_prefix(&self, prefix: &str) -> Option<&str> {
        self.bindings.get(prefix).map(String::as_str)
    }
}

/// True when `elem`, interpreted under `env`, has the given namespace URI and
/// local name.
pub fn element_is(elem: &XmlElement, env: &NsEnv, uri: &str, local: &str) -> bool {
    let env = env.enter(elem);
    matches!(env.resolve_element(&elem.name), Ok((Some(u), l)) if u == uri && l == local)
}

/// Copies namespace declarations from the surrounding scope onto the fragment
/// root so the subtree stays interpretable on its own.
pub fn localize(elem: &XmlElement, outer: &NsEnv) -> XmlElement {
    let mut out = elem.clone();
    let inner = outer.enter(elem);
    let mut needed: Vec<(String, String)> = Vec::new();
    collect_unbound_prefixes(&out, &NsEnv::empty(), &inner, &mut needed);
    for (prefix, uri) in needed {
        let key = if prefix.is_empty() {
            "xmlns".to_string()
        } else {
            format!("xmlns:{prefix}")
        };
        if out.attribute(&key).is_none() {
            out.attributes.push((key, uri));
        }
    }
    out
}

fn collect_unbound_prefixes(
    elem: &XmlElement,
    local_env: &NsEnv,
    outer_env: &NsEnv,
    needed: &mut Vec<(String, String)>,
) {
    fn note(
        prefix: &str,
        local_env: &NsEnv,
        outer_env: &NsEnv,
        needed: &mut Vec<(String, String)>,
    ) {
        if local_env.lookup_prefix(prefix).is_none() {
            if let Some(uri) = outer_env.lookup_prefix(prefix) {
                if !needed.iter().any(|(p, _)| p == prefix) {
                    needed.push((prefix.to_string(), uri.to_string()));
                }
            }
        }
    }

    let local_env = local_env.enter(elem);
    if let Some((prefix, _)) = elem.name.split_once(':') {
        note(prefix, &local_env, outer_env, needed);
    } else if local_env.default_ns.is_none() {
        if let Some(uri) = &outer_env.default_ns {
            if !needed.iter().any(|(p, _)| p.is_empty()) {
                needed.push((String::new(), uri.clone()));
            }
        }
    }
    for (k, _) in &elem.attributes {
        if let Some((prefix, _)) = k.split_once(':') {
            if prefix != "xmlns" {
                note(prefix, &local_env, outer_env, needed);
            }
        }
    }
    for child in elem.child_elements() {
        collect_unbound_prefixes(child, &local_env, outer_env, needed);
    }
}

// ---------------------------------------------------------------------------
// Canonical form
// ---------------------------------------------------------------------------

/// Renders the tree in a canonical notation for structural comparison:
/// names expanded to `{uri}local`, attributes sorted by expanded name,
/// namespace declarations dropped, adjacent text merged and trimmed.
///
/// The output is a comparison artifact, not XML.
pub fn canonical_bytes(root: &XmlElement) -> Result<Vec<u8>, XmlError> {
    let mut out = String::new();
    canonical_element(root, &NsEnv::empty(), &mut out)?;
    Ok(out.into_bytes())
}

/// Canonical form as a string, for masked comparisons in tests.
pub fn canonical_string(root: &XmlElement) -> Result<String, XmlError> {
    canonical_bytes(root).map(|b| String::from_utf8(b).expect("canonical form is UTF-8"))
}

fn expanded(uri: &Option<String>, local: &str) -> String {
    match uri {
        Some(u) => format!("{{{u}}}{local}"),
        None => local.to_string(),
    }
}

fn canonical_escape(text: &str, out: &mut String) {
    for ch in text.chars() {
        match ch {
            '&' => out.push_str("&amp;"),
            '<' => out.push_str("&lt;"),
            '>' => out.push_str("&gt;"),
            '"' => out.push_str("&quot;"),
            _ => out.push(ch),
        }
    }
}

fn canonical_element(elem: &XmlElement, env: &NsEnv, out: &mut String) -> Result<(), XmlError> {
    let env = env.enter(elem);
    let (uri, local) = env.resolve_element(&elem.name)?;
    let name = expanded(&uri, &local);
    out.push('<');
    out.push_str(&name);

    let mut attrs: Vec<(String, &str)> = Vec::new();
    for (k, v) in &elem.attributes {
        if k == "xmlns" || k.starts_with("xmlns:") {
            continue;
        }
        let (auri, alocal) = env.resolve_attribute(k)?;
        attrs.push((expanded(&auri, &alocal), v.as_str()));
    }
    attrs.sort();
    for (k, v) in attrs {
        out.push(' ');
        out.push_str(&k);
        out.push_str("=\"");
        canonical_escape(v, out);
        out.push('"');
    }
    out.push('>');

    // Merge adjacent text runs, trim each run, and drop empty ones.
    let mut pending = String::new();
    let flush = |pending: &mut String, out: &mut String| {
        let trimmed = pending.trim();
        if !trimmed.is_empty() {
            canonical_escape(trimmed, out);
        }
        pending.clear();
    };
    for child in &elem.children {
        match child {
            XmlNode::Text(t) => pending.push_str(t),
            XmlNode::Element(e) => {
                flush(&mut pending, out);
                canonical_element(e, &env, out)?;
            }
        }
    }
    flush(&mut pending, out);

    out.push_str("</");
    out.push_str(&name);
    out.push('>');
    Ok(())
}

/// Structural equality via the canonical form.
pub fn structurally_equal(a: &XmlElement, b: &XmlElement) -> Result<bool, XmlError> {
    Ok(canonical_bytes(a)? == canonical_bytes(b)?)
}

// ---------------------------------------------------------------------------
// Streaming helpers
// ---------------------------------------------------------------------------

/// Checks well-formedness by streaming the whole input without building a
/// tree. Suitable for large concatenated files.
pub fn check_well_formed(bytes: &[u8]) -> Result<(), XmlError> {
    let text = std::str::from_utf8(bytes)
        .map_err(|e| XmlError::Malformed(format!("invalid UTF-8: {e}")))?;
    let mut reader = Reader::from_reader(text.as_bytes());
    let mut depth: usize = 0;
    let mut seen_root = false;
    loop {
        match reader.read_event()? {
            Event::Start(_) => {
                if depth == 0 && seen_root {
                    return Err(XmlError::Malformed("multiple root elements".into()));
                }
                seen_root = true;
                depth += 1;
            }
            Event::End(_) => {
                depth = depth
                    .checked_sub(1)
                    .ok_or_else(|| XmlError::Malformed("unmatched end tag".into()))?;
            }
            Event::Empty(_) => {
                if depth == 0 && seen_root {
                    return Err(XmlError::Malformed("multiple root elements".into()));
                }
                seen_root = true;
            }
            Event::GeneralRef(r) => {
                if r.resolve_char_ref()
                    .map_err(|e| XmlError::Malformed(e.to_string()))?
                    .is_none()
                    && resolve_named_entity(r.as_ref()).is_none()
                {
                    return Err(XmlError::Malformed(format!(
                        "unknown entity reference `&{};`",
                        r.as_ref()
                    )));
                }
            }
            Event::Eof => break,
            _ => {}
        }
    }
    if depth != 0 {
        return Err(XmlError::Malformed("unexpected end of document".into()));
    }
    if !seen_root {
        return Err(XmlError::Malformed("no root element".into()));
    }
    Ok(())
}

/// Escapes character data for direct inclusion in hand-assembled XML.
pub fn escape_text(text: &str) -> Cow<'_, str> {
    quick_xml::escape::escape(text)
}

impl fmt::Display for XmlElement {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let bytes = write_fragment(self);
        f.write_str(&String::from_utf8_lossy(&bytes))
    }
}
