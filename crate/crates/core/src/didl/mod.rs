//! Archival packages: an XML container format in which one compound object
//! is represented as a hierarchy of items and components, each constituent
//! annotated through descriptor/statement pairs.
//!
//! Secondary information lives in well-known statement vocabularies:
//! content identifiers, format or semantic placeholders used to bind
//! services, object types that pair constituents with service arguments, and
//! method declarations pointing at executable transforms.

mod codec;

pub use codec::{item_fragment, parse_package, serialize_package};

use thiserror::Error;

use crate::ids::ContentIdentifier;
use crate::time::UtcTimestamp;
use crate::xml::{element_is, NsEnv, XmlElement, XmlError, XmlNode};

pub const DIDL_NS: &str = "urn:mpeg:mpeg21:2002:02-DIDL-NS";
pub const DII_NS: &str = "urn:mpeg:mpeg21:2002:01-DII-NS";
pub const DIP_NS: &str = "urn:mpeg:mpeg21:2002:01-DIP-NS";
pub const DIEXT_NS: &str = "http://library.lanl.gov/2004-04/STB-RL/DIEXT";
pub const DIADM_NS: &str = "http://library.lanl.gov/2004-01/STB-RL/DIADM";
pub const DC_NS: &str = "http://purl.org/dc/elements/1.1/";

/// Every statement in this profile is serialized XML.
pub const STATEMENT_MIME: &str = "text/xml; charset=UTF-8";
/// Media type marking a resource as an executable method.
pub const METHOD_MIME: &str = "application/mp21-method";

#[derive(Debug, Error)]
pub enum DidlError {
    #[error(transparent)]
    Xml(#[from] XmlError),
    #[error("not a package document: {0}")]
    NotPackage(String),
    #[error("package identifier attribute missing on document root")]
    MissingPackageId,
    #[error("package creation timestamp missing or invalid")]
    BadCreated,
    #[error("duplicate constituent id `{0}`")]
    DuplicateXmlId(String),
    #[error("no constituent has id `{0}`")]
    UnknownXmlId(String),
}

/// A complete archival package: identifier, creation instant, one container.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Package {
    pub package_id: String,
    pub created: UtcTimestamp,
    pub container: Container,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Container {
    pub xml_id: Option<String>,
    pub descriptors: Vec<Descriptor>,
    pub items: Vec<Item>,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Item {
    pub xml_id: Option<String>,
    pub descriptors: Vec<Descriptor>,
    pub items: Vec<Item>,
    pub components: Vec<Component>,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Component {
    pub xml_id: Option<String>,
    pub descriptors: Vec<Descriptor>,
    pub resources: Vec<Resource>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Descriptor {
    pub xml_id: Option<String>,
    pub statement: Statement,
}

/// Statement content is arbitrary XML, stored with the namespace
/// declarations needed to interpret it on its own.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Statement {
    pub mime_type: String,
    pub nodes: Vec<XmlNode>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Resource {
    pub mime_type: String,
    pub body: ResourceBody,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ResourceBody {
    /// Embedded XML, e.g. a metadata record.
    Inline(Vec<XmlNode>),
    /// Base64 text kept verbatim so stored bytes survive round trips.
    Base64(String),
    /// By-reference: the value of the `ref` attribute.
    Reference(String),
}

impl Resource {
    pub fn inline_xml(mime_type: impl Into<String>, root: XmlElement) -> Self {
        Resource {
            mime_type: mime_type.into(),
            body: ResourceBody::Inline(vec![XmlNode::Element(root)]),
        }
    }

    pub fn base64(mime_type: impl Into<String>, bytes: &[u8]) -> Self {
        use base64::Engine;
        Resource {
            mime_type: mime_type.into(),
            body: ResourceBody::Base64(base64::engine::general_purpose::STANDARD.encode(bytes)),
        }
    }

    pub fn by_reference(mime_type: impl Into<String>, target: impl Into<String>) -> Self {
        Resource {
            mime_type: mime_type.into(),
            body: ResourceBody::Reference(target.into()),
        }
    }

    /// Decodes a base64 body, tolerating embedded line breaks.
    pub fn decode_base64(&self) -> Option<Vec<u8>> {
        use base64::Engine;
        match &self.body {
            ResourceBody::Base64(raw) => {
                let compact: String = raw.chars().filter(|c| !c.is_ascii_whitespace()).collect();
                base64::engine::general_purpose::STANDARD.decode(compact).ok()
            }
            _ => None,
        }
    }

    /// First element of an inline body.
    pub fn inline_root(&self) -> Option<&XmlElement> {
        match &self.body {
            ResourceBody::Inline(nodes) => nodes.iter().find_map(XmlNode::as_element),
            _ => None,
        }
    }
}

// ---------------------------------------------------------------------------
// Statement vocabularies
// ---------------------------------------------------------------------------

impl Statement {
    pub fn xml(nodes: Vec<XmlNode>) -> Self {
        Statement {
            mime_type: STATEMENT_MIME.to_string(),
            nodes,
        }
    }

    pub fn first_element(&self) -> Option<&XmlElement> {
        self.nodes.iter().find_map(XmlNode::as_element)
    }
}

impl Descriptor {
    fn wrapping(root: XmlElement) -> Self {
        Descriptor {
            xml_id: None,
            statement: Statement::xml(vec![XmlNode::Element(root)]),
        }
    }

    /// Statement carrying the content identifier of the constituent.
    pub fn content_identifier(value: &str) -> Self {
        Descriptor::wrapping(
            XmlElement::new("dii:Identifier")
                .attr("xmlns:dii", DII_NS)
                .text(value),
        )
    }

    /// Administrative statement carrying a format or semantic placeholder.
    pub fn placeholder(value: &str) -> Self {
        Descriptor::wrapping(
            XmlElement::new("diadm:Admin").attr("xmlns:diadm", DIADM_NS).child(
                XmlElement::new("dc:format")
                    .attr("xmlns:dc", DC_NS)
                    .text(value),
            ),
        )
    }

    /// Statement typing the constituent for use as a method argument.
    pub fn object_type(value: &str) -> Self {
        Descriptor::wrapping(
            XmlElement::new("dip:ObjectType")
                .attr("xmlns:dip", DIP_NS)
                .text(value),
        )
    }

    /// Statement binding a method to its arguments.
    pub fn method_info(arguments: &[String]) -> Self {
        let mut info = XmlElement::new("dip:MethodInfo").attr("xmlns:dip", DIP_NS);
        for arg in arguments {
            info = info.child(XmlElement::new("dip:Argument").text(arg.clone()));
        }
        Descriptor::wrapping(info)
    }

    fn statement_value(&self, ns: &str, local: &str) -> Option<String> {
        let elem = self.statement.first_element()?;
        if element_is(elem, &NsEnv::empty(), ns, local) {
            Some(elem.text_content())
        } else {
            None
        }
    }

    pub fn as_content_identifier(&self) -> Option<ContentIdentifier> {
        self.statement_value(DII_NS, "Identifier").map(ContentIdentifier)
    }

    pub fn as_placeholder(&self) -> Option<String> {
        let elem = self.statement.first_element()?;
        if !element_is(elem, &NsEnv::empty(), DIADM_NS, "Admin") {
            return self.statement_value(DC_NS, "format");
        }
        let env = NsEnv::empty().enter(elem);
        elem.child_elements()
            .find(|c| element_is(c, &env, DC_NS, "format"))
            .map(XmlElement::text_content)
    }

    pub fn as_object_type(&self) -> Option<String> {
        self.statement_value(DIP_NS, "ObjectType")
    }

    pub fn as_method_arguments(&self) -> Option<Vec<String>> {
        let elem = self.statement.first_element()?;
        if !element_is(elem, &NsEnv::empty(), DIP_NS, "MethodInfo") {
            return None;
        }
        let env = NsEnv::empty().enter(elem);
        Some(
            elem.child_elements()
                .filter(|c| element_is(c, &env, DIP_NS, "Argument"))
                .map(XmlElement::text_content)
                .collect(),
        )
    }
}

fn scan_content_identifier(descriptors: &[Descriptor]) -> Option<ContentIdentifier> {
    descriptors.iter().find_map(Descriptor::as_content_identifier)
}

fn scan_placeholder(descriptors: &[Descriptor]) -> Option<String> {
    descriptors.iter().find_map(Descriptor::as_placeholder)
}

fn scan_object_type(descriptors: &[Descriptor]) -> Option<String> {
    descriptors.iter().find_map(Descriptor::as_object_type)
}

macro_rules! descriptor_accessors {
    ($ty:ty) => {
        impl $ty {
            pub fn content_identifier(&self) -> Option<ContentIdentifier> {
                scan_content_identifier(&self.descriptors)
            }
            pub fn placeholder(&self) -> Option<String> {
                scan_placeholder(&self.descriptors)
            }
            pub fn object_type(&self) -> Option<String> {
                scan_object_type(&self.descriptors)
            }
        }
    };
}

descriptor_accessors!(Container);
descriptor_accessors!(Item);
descriptor_accessors!(Component);

// ---------------------------------------------------------------------------
// Walking
// ---------------------------------------------------------------------------

/// Borrowed view of any constituent, used by fragment lookup and service
/// binding.
#[derive(Debug, Clone, Copy)]
pub enum EntityRef<'a> {
    Container(&'a Container),
    Item(&'a Item),
    Component(&'a Component),
}

impl<'a> EntityRef<'a> {
    pub fn xml_id(&self) -> Option<&'a str> {
        match self {
            EntityRef::Container(c) => c.xml_id.as_deref(),
            EntityRef::Item(i) => i.xml_id.as_deref(),
            EntityRef::Component(c) => c.xml_id.as_deref(),
        }
    }

    pub fn descriptors(&self) -> &'a [Descriptor] {
        match self {
            EntityRef::Container(c) => &c.descriptors,
            EntityRef::Item(i) => &i.descriptors,
            EntityRef::Component(c) => &c.descriptors,
        }
    }

    pub fn placeholder(&self) -> Option<String> {
        scan_placeholder(self.descriptors())
    }

    pub fn object_type(&self) -> Option<String> {
        scan_object_type(self.descriptors())
    }

    pub fn content_identifier(&self) -> Option<ContentIdentifier> {
        scan_content_identifier(self.descriptors())
    }
}

impl Item {
    /// True for items that declare an executable method.
    pub fn is_method_item(&self) -> bool {
        self.components.iter().any(|c| {
            c.resources.iter().any(|r| r.mime_type == METHOD_MIME)
        })
    }
}

impl Package {
    /// Depth-first, document-order visit of every constituent.
    pub fn walk(&self) -> Vec<EntityRef<'_>> {
        let mut out = Vec::new();
        out.push(EntityRef::Container(&self.container));
        for item in &self.container.items {
            walk_item(item, &mut out);
        }
        out
    }

    pub fn find_xml_id(&self, id: &str) -> Option<EntityRef<'_>> {
        self.walk().into_iter().find(|e| e.xml_id() == Some(id))
    }

    /// The address of the constituent with the given xml id:
    /// `<package_id>#<xml_id>`.
    pub fn address_of(&self, xml_id: &str) -> Result<String, DidlError> {
        if self.find_xml_id(xml_id).is_none() {
            return Err(DidlError::UnknownXmlId(xml_id.to_string()));
        }
        Ok(format!("{}#{xml_id}", self.package_id))
    }

    /// Every constituent carrying a content identifier, with its id.
    pub fn content_identifiers(&self) -> Vec<(ContentIdentifier, Option<String>)> {
        self.walk()
            .into_iter()
            .filter_map(|e| {
                e.content_identifier()
                    .map(|cid| (cid, e.xml_id().map(str::to_string)))
            })
            .collect()
    }

    /// Content identifiers declared on items (where ingestion puts them),
    /// paired with the item's xml id, document order. This is what feeds
    /// the locator's content table.
    pub fn extract_identifiers(&self) -> Vec<(ContentIdentifier, String)> {
        self.walk()
            .into_iter()
            .filter_map(|e| match e {
                EntityRef::Item(_) => Some((e.content_identifier()?, e.xml_id()?.to_string())),
                _ => None,
            })
            .collect()
    }

    /// All constituent ids, document order.
    pub fn xml_ids(&self) -> Vec<&str> {
        self.walk().into_iter().filter_map(|e| e.xml_id()).collect()
    }
}

fn walk_item<'a>(item: &'a Item, out: &mut Vec<EntityRef<'a>>) {
    out.push(EntityRef::Item(item));
    for sub in &item.items {
        walk_item(sub, out);
    }
    for comp in &item.components {
        out.push(EntityRef::Component(comp));
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn descriptor_constructors_round_trip_through_accessors() {
        let d = Descriptor::content_identifier("info:doi/10.123/44455");
        assert_eq!(d.as_content_identifier().unwrap().0, "info:doi/10.123/44455");

        let p = Descriptor::placeholder("info:lanl-repo/fmt/3");
        assert_eq!(p.as_placeholder().unwrap(), "info:lanl-repo/fmt/3");
        assert!(p.as_content_identifier().is_none());

        let o = Descriptor::object_type("urn:uuid:8f64eabf");
        assert_eq!(o.as_object_type().unwrap(), "urn:uuid:8f64eabf");

        let m = Descriptor::method_info(&["urn:uuid:8f64eabf".to_string()]);
        assert_eq!(m.as_method_arguments().unwrap(), vec!["urn:uuid:8f64eabf"]);
    }

    #[test]
    fn base64_round_trip() {
        let r = Resource::base64("application/pdf", b"%PDF-1.4 demo");
        assert_eq!(r.decode_base64().unwrap(), b"%PDF-1.4 demo");
    }

    #[test]
    fn walk_reports_document_order() {
        let pkg = Package {
            package_id: "info:x/i/1".into(),
            created: "2004-06-22T18:07:18Z".parse().unwrap(),
            container: Container {
                xml_id: Some("c".into()),
                descriptors: vec![],
                items: vec![Item {
                    xml_id: Some("i1".into()),
                    descriptors: vec![],
                    items: vec![Item {
                        xml_id: Some("i2".into()),
                        ..Default::default()
                    }],
                    components: vec![Component {
                        xml_id: Some("k1".into()),
                        ..Default::default()
                    }],
                }],
            },
        };
        let ids: Vec<_> = pkg.xml_ids();
        assert_eq!(ids, vec!["c", "i1", "i2", "k1"]);
        assert!(pkg.find_xml_id("k1").is_some());
        assert!(pkg.find_xml_id("nope").is_none());
    }
}
