//! The two identifier families the repository keeps apart.
//!
//! A package identifier names an archival package as a whole and is minted at
//! ingest; `base#fragment` addresses a constituent by its `xml:id`. A content
//! identifier (DOI, PMID, local scheme) travels with the content and is never
//! minted here.

use std::fmt;

use uuid::Uuid;

/// Identifier of an archival package, optionally narrowed to one constituent.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct PackageIdentifier {
    pub base: String,
    pub fragment: Option<String>,
}

impl PackageIdentifier {
    pub fn parse(s: &str) -> Self {
        match s.split_once('#') {
            Some((base, frag)) if !frag.is_empty() => PackageIdentifier {
                base: base.to_string(),
                fragment: Some(frag.to_string()),
            },
            Some((base, _)) => PackageIdentifier {
                base: base.to_string(),
                fragment: None,
            },
            None => PackageIdentifier {
                base: s.to_string(),
                fragment: None,
            },
        }
    }

    pub fn whole(base: impl Into<String>) -> Self {
        PackageIdentifier {
            base: base.into(),
            fragment: None,
        }
    }

    pub fn constituent(base: impl Into<String>, fragment: impl Into<String>) -> Self {
        PackageIdentifier {
            base: base.into(),
            fragment: Some(fragment.into()),
        }
    }
}

impl fmt::Display for PackageIdentifier {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.fragment {
            Some(frag) => write!(f, "{}#{}", self.base, frag),
            None => write!(f, "{}", self.base),
        }
    }
}

/// An identifier carried by the content itself (DOI, PMID, publisher scheme).
/// Opaque to the repository; used only for lookup.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct ContentIdentifier(pub String);

impl fmt::Display for ContentIdentifier {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

impl From<&str> for ContentIdentifier {
    fn from(s: &str) -> Self {
        ContentIdentifier(s.to_string())
    }
}

/// Mints a fresh package identifier under `namespace`, e.g.
/// `info:local-repo/i` yields `info:local-repo/i/<uuid>`.
pub fn mint_package_id(namespace: &str) -> PackageIdentifier {
    PackageIdentifier::whole(format!("{}/{}", namespace, Uuid::new_v4()))
}

/// Mints a datastream key under `namespace`, e.g. `info:local-repo/ds/<uuid>`.
pub fn mint_datastream_key(namespace: &str) -> String {
    format!("{}/{}", namespace, Uuid::new_v4())
}

/// Mints a `urn:uuid:` value for pairing an object type with a method
/// argument.
pub fn mint_urn_uuid() -> String {
    format!("urn:uuid:{}", Uuid::new_v4())
}

/// Mints an `xml:id`-safe constituent id (`uuid-<uuid>`; a bare UUID may
/// start with a digit, which xml:id forbids).
pub fn mint_xml_id() -> String {
    format!("uuid-{}", Uuid::new_v4())
}
