//! Parse and serialize archival packages.
//!
//! Parsing is strict about the profile (one top-level container, no nested
//! containers, unique constituent ids) but liberal about namespace prefixes
//! and whitespace. Statement and inline-resource subtrees are localized on
//! the way in so they stay interpretable after extraction.

use std::collections::HashSet;

use crate::xml::{self, localize, NsEnv, XmlElement, XmlNode};

use super::{
    Component, Container, Descriptor, DidlError, Item, Package, Resource, ResourceBody, Statement,
    DIDL_NS, DIEXT_NS,
};

pub fn parse_package(bytes: &[u8]) -> Result<Package, DidlError> {
    let root = xml::parse(bytes)?;
    let env = NsEnv::empty().enter(&root);
    expect_kind(&root, &env, "DIDL")?;

    let mut package_id = None;
    let mut created = None;
    for (k, v) in &root.attributes {
        if k == "xmlns" || k.starts_with("xmlns:") {
            continue;
        }
        let (uri, local) = env.resolve_attribute(k)?;
        if uri.as_deref() == Some(DIEXT_NS) {
            match local.as_str() {
                "DIDid" => package_id = Some(v.clone()),
                "DIDcreated" => created = Some(v.clone()),
                _ => {}
            }
        }
    }
    let package_id = package_id.ok_or(DidlError::MissingPackageId)?;
    let created = created
        .ok_or(DidlError::BadCreated)?
        .parse()
        .map_err(|_| DidlError::BadCreated)?;

    let mut containers = Vec::new();
    for child in element_children(&root)? {
        let child_env = env.enter(child);
        match resolved_kind(child, &env)?.as_str() {
            "Container" => containers.push(parse_container(child, &child_env)?),
            other => {
                return Err(DidlError::NotPackage(format!(
                    "unexpected `{other}` under document root"
                )))
            }
        }
    }
    if containers.len() != 1 {
        return Err(DidlError::NotPackage(format!(
            "expected exactly one top-level container, found {}",
            containers.len()
        )));
    }

    let pkg = Package {
        package_id,
        created,
        container: containers.into_iter().next().expect("length checked"),
    };

    let mut seen = HashSet::new();
    for id in pkg.xml_ids() {
        if !seen.insert(id.to_string()) {
            return Err(DidlError::DuplicateXmlId(id.to_string()));
        }
    }
    Ok(pkg)
}

fn parse_container(elem: &XmlElement, env: &NsEnv) -> Result<Container, DidlError> {
    let mut out = Container {
        xml_id: elem.attribute("id").map(str::to_string),
        ..Default::default()
    };
    for child in element_children(elem)? {
        let child_env = env.enter(child);
        match resolved_kind(child, env)?.as_str() {
            "Descriptor" => out.descriptors.push(parse_descriptor(child, &child_env)?),
            "Item" => out.items.push(parse_item(child, &child_env)?),
            "Container" => {
                return Err(DidlError::NotPackage("nested container".into()));
            }
            other => {
                return Err(DidlError::NotPackage(format!(
                    "unexpected `{other}` inside container"
                )))
            }
        }
    }
    Ok(out)
}

fn parse_item(elem: &XmlElement, env: &NsEnv) -> Result<Item, DidlError> {
    let mut out = Item {
        xml_id: elem.attribute("id").map(str::to_string),
        ..Default::default()
    };
    for child in element_children(elem)? {
        let child_env = env.enter(child);
        match resolved_kind(child, env)?.as_str() {
            "Descriptor" => out.descriptors.push(parse_descriptor(child, &child_env)?),
            "Item" => out.items.push(parse_item(child, &child_env)?),
            "Component" => out.components.push(parse_component(child, &child_env)?),
            other => {
                return Err(DidlError::NotPackage(format!(
                    "unexpected `{other}` inside item"
                )))
            }
        }
    }
    Ok(out)
}

fn parse_component(elem: &XmlElement, env: &NsEnv) -> Result<Component, DidlError> {
    let mut out = Component {
        xml_id: elem.attribute("id").map(str::to_string),
        ..Default::default()
    };
    for child in element_children(elem)? {
        let child_env = env.enter(child);
        match resolved_kind(child, env)?.as_str() {
            "Descriptor" => out.descriptors.push(parse_descriptor(child, &child_env)?),
            "Resource" => out.resources.push(parse_resource(child, &child_env)?),
            other => {
                return Err(DidlError::NotPackage(format!(
                    "unexpected `{other}` inside component"
                )))
            }
        }
    }
    Ok(out)
}

fn parse_descriptor(elem: &XmlElement, env: &NsEnv) -> Result<Descriptor, DidlError> {
    let mut statement = None;
    for child in element_children(elem)? {
        let child_env = env.enter(child);
        match resolved_kind(child, env)?.as_str() {
            "Statement" => {
                if statement.is_some() {
                    return Err(DidlError::NotPackage("descriptor with two statements".into()));
                }
                statement = Some(parse_statement(child, &child_env)?);
            }
            other => {
                return Err(DidlError::NotPackage(format!(
                    "unexpected `{other}` inside descriptor"
                )))
            }
        }
    }
    Ok(Descriptor {
        xml_id: elem.attribute("id").map(str::to_string),
        statement: statement
            .ok_or_else(|| DidlError::NotPackage("descriptor without statement".into()))?,
    })
}

fn parse_statement(elem: &XmlElement, env: &NsEnv) -> Result<Statement, DidlError> {
    let mime_type = elem
        .attribute("mimeType")
        .ok_or_else(|| DidlError::NotPackage("statement without mimeType".into()))?
        .to_string();
    Ok(Statement {
        mime_type,
        nodes: localized_children(elem, env),
    })
}

fn parse_resource(elem: &XmlElement, env: &NsEnv) -> Result<Resource, DidlError> {
    let mime_type = elem
        .attribute("mimeType")
        .ok_or_else(|| DidlError::NotPackage("resource without mimeType".into()))?
        .to_string();
    if let Some(target) = elem.attribute("ref") {
        if elem.children.iter().any(|n| match n {
            XmlNode::Element(_) => true,
            XmlNode::Text(t) => !t.trim().is_empty(),
        }) {
            return Err(DidlError::NotPackage(
                "resource with both ref and embedded content".into(),
            ));
        }
        return Ok(Resource {
            mime_type,
            body: ResourceBody::Reference(target.to_string()),
        });
    }
    if elem.attribute("encoding") == Some("base64") {
        let mut raw = String::new();
        for node in &elem.children {
            match node {
                XmlNode::Text(t) => raw.push_str(t),
                XmlNode::Element(_) => {
                    return Err(DidlError::NotPackage(
                        "base64 resource with element content".into(),
                    ))
                }
            }
        }
        return Ok(Resource {
            mime_type,
            body: ResourceBody::Base64(raw),
        });
    }
    Ok(Resource {
        mime_type,
        body: ResourceBody::Inline(localized_children(elem, env)),
    })
}

/// Child elements of an entity element; non-whitespace text is a profile
/// violation.
fn element_children(elem: &XmlElement) -> Result<Vec<&XmlElement>, DidlError> {
    let mut out = Vec::new();
    for node in &elem.children {
        match node {
            XmlNode::Element(e) => out.push(e),
            XmlNode::Text(t) if t.trim().is_empty() => {}
            XmlNode::Text(_) => {
                return Err(DidlError::NotPackage(format!(
                    "stray character data inside `{}`",
                    elem.name
                )))
            }
        }
    }
    Ok(out)
}

fn localized_children(elem: &XmlElement, env: &NsEnv) -> Vec<XmlNode> {
    elem.children
        .iter()
        .filter_map(|node| match node {
            XmlNode::Element(e) => Some(XmlNode::Element(localize(e, env))),
            XmlNode::Text(t) => {
                if t.trim().is_empty() {
                    None
                } else {
                    Some(XmlNode::Text(t.clone()))
                }
            }
        })
        .collect()
}

fn resolved_kind(elem: &XmlElement, parent_env: &NsEnv) -> Result<String, DidlError> {
    let env = parent_env.enter(elem);
    let (uri, local) = env.resolve_element(&elem.name)?;
    if uri.as_deref() == Some(DIDL_NS) {
        Ok(local)
    } else {
        Err(DidlError::NotPackage(format!(
            "element `{}` outside the package namespace",
            elem.name
        )))
    }
}

fn expect_kind(elem: &XmlElement, env: &NsEnv, kind: &str) -> Result<(), DidlError> {
    let (uri, local) = env.resolve_element(&elem.name)?;
    if uri.as_deref() == Some(DIDL_NS) && local == kind {
        Ok(())
    } else {
        Err(DidlError::NotPackage(format!(
            "root element is `{}`, expected `{kind}`",
            elem.name
        )))
    }
}

// ---------------------------------------------------------------------------
// Serialization
// ---------------------------------------------------------------------------

pub fn serialize_package(pkg: &Package) -> Vec<u8> {
    xml::write_document(&package_tree(pkg))
}

pub fn package_tree(pkg: &Package) -> XmlElement {
    XmlElement::new("didl:DIDL")
        .attr("xmlns:didl", DIDL_NS)
        .attr("xmlns:diext", DIEXT_NS)
        .attr("diext:DIDid", pkg.package_id.clone())
        .attr("diext:DIDcreated", pkg.created.to_string())
        .child(container_tree(&pkg.container))
}

/// A standalone fragment for one item, namespace declared on its root.
/// Statement and resource bodies carry their own declarations.
pub fn item_fragment(item: &Item) -> XmlElement {
    item_tree(item).attr("xmlns:didl", DIDL_NS)
}

fn with_id(mut elem: XmlElement, id: &Option<String>) -> XmlElement {
    if let Some(id) = id {
        elem.set_attribute("id", id.clone());
    }
    elem
}

fn container_tree(c: &Container) -> XmlElement {
    let mut elem = with_id(XmlElement::new("didl:Container"), &c.xml_id);
    for d in &c.descriptors {
        elem = elem.child(descriptor_tree(d));
    }
    for i in &c.items {
        elem = elem.child(item_tree(i));
    }
    elem
}

fn item_tree(i: &Item) -> XmlElement {
    let mut elem = with_id(XmlElement::new("didl:Item"), &i.xml_id);
    for d in &i.descriptors {
        elem = elem.child(descriptor_tree(d));
    }
    for sub in &i.items {
        elem = elem.child(item_tree(sub));
    }
    for c in &i.components {
        elem = elem.child(component_tree(c));
    }
    elem
}

fn component_tree(c: &Component) -> XmlElement {
    let mut elem = with_id(XmlElement::new("didl:Component"), &c.xml_id);
    for d in &c.descriptors {
        elem = elem.child(descriptor_tree(d));
    }
    for r in &c.resources {
        elem = elem.child(resource_tree(r));
    }
    elem
}

fn descriptor_tree(d: &Descriptor) -> XmlElement {
    let mut statement = XmlElement::new("didl:Statement")
        .attr("mimeType", d.statement.mime_type.clone());
    statement.children = d.statement.nodes.clone();
    with_id(XmlElement::new("didl:Descriptor"), &d.xml_id).child(statement)
}

fn resource_tree(r: &Resource) -> XmlElement {
    let mut elem = XmlElement::new("didl:Resource").attr("mimeType", r.mime_type.clone());
    match &r.body {
        ResourceBody::Inline(nodes) => elem.children = nodes.clone(),
        ResourceBody::Base64(raw) => {
            elem = elem.attr("encoding", "base64");
            elem.children = vec![XmlNode::Text(raw.clone())];
        }
        ResourceBody::Reference(target) => {
            elem = elem.attr("ref", target.clone());
        }
    }
    elem
}
