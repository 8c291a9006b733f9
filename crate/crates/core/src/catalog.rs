//! The fixed library of design primitives.
//!
//! Entries, lexicons and option lists are loaded from `data/catalog.json`,
//! which is compiled into the binary. Ids follow the alphabetical order of
//! primitive names.

use std::collections::BTreeMap;
use std::sync::OnceLock;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

pub const CATALOG_JSON: &str = include_str!("../data/catalog.json");

/// Number of primitives in the catalog.
pub const NUM_PRIMITIVES: usize = 40;

#[derive(Debug, thiserror::Error, Clone, PartialEq)]
pub enum CatalogError {
    #[error("unknown primitive `{0}`")]
    Unknown(String),
    #[error("primitive id {0} out of range 0..40")]
    OutOfRange(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, PartialOrd, Ord)]
#[serde(rename_all = "kebab-case")]
pub enum TemplateKind {
    Input,
    MultiSelection,
    Selection,
    Button,
    Link,
    Label,
    Carousel,
    Cart,
    Media,
    Deck,
    Footer,
    NavigationBar,
}

impl TemplateKind {
    pub const ALL: [TemplateKind; 12] = [
        TemplateKind::Input,
        TemplateKind::MultiSelection,
        TemplateKind::Selection,
        TemplateKind::Button,
        TemplateKind::Link,
        TemplateKind::Label,
        TemplateKind::Carousel,
        TemplateKind::Cart,
        TemplateKind::Media,
        TemplateKind::Deck,
        TemplateKind::Footer,
        TemplateKind::NavigationBar,
    ];
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activity {
    Active,
    Passive,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NavEffect {
    #[default]
    None,
    Advance,
    Terminate,
}

impl NavEffect {
    pub fn as_str(self) -> &'static str {
        match self {
            NavEffect::None => "none",
            NavEffect::Advance => "advance",
            NavEffect::Terminate => "terminate",
        }
    }
}

/// Where an active primitive's instruction values come from.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ValueDomain {
    Lexicon(Vec<String>),
    Options(Vec<String>),
}

impl ValueDomain {
    pub fn values(&self) -> &[String] {
        match self {
            ValueDomain::Lexicon(v) | ValueDomain::Options(v) => v,
        }
    }

    pub fn sample(&self, rng: &mut impl Rng) -> String {
        self.values().choose(rng).expect("value domains are non-empty").clone()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Primitive {
    pub id: usize,
    pub name: String,
    pub template: TemplateKind,
    pub activity: Activity,
    pub field_key: Option<String>,
    pub label_text: String,
    pub value_domain: Option<ValueDomain>,
    pub nav_effect: NavEffect,
}

impl Primitive {
    pub fn is_active(&self) -> bool {
        self.activity == Activity::Active
    }
}

#[derive(Deserialize)]
struct RawCatalog {
    primitives: Vec<RawPrimitive>,
    lexicons: BTreeMap<String, Vec<String>>,
}

#[derive(Deserialize)]
struct RawPrimitive {
    name: String,
    template: TemplateKind,
    activity: Activity,
    label: String,
    field_key: Option<String>,
    lexicon: Option<String>,
    options: Option<Vec<String>>,
    #[serde(default)]
    nav_effect: NavEffect,
}

/// Immutable primitive library.
#[derive(Debug)]
pub struct Catalog {
    primitives: Vec<Primitive>,
}

impl Catalog {
    fn parse(json: &str) -> Self {
        let raw: RawCatalog = serde_json::from_str(json).expect("shipped catalog parses");
        let mut entries = raw.primitives;
        entries.sort_by(|a, b| a.name.cmp(&b.name));
        let primitives = entries
            .into_iter()
            .enumerate()
            .map(|(id, p)| {
                let value_domain = match (p.lexicon, p.options) {
                    (Some(lex), _) => Some(ValueDomain::Lexicon(raw.lexicons[&lex].clone())),
                    (None, Some(opts)) => Some(ValueDomain::Options(opts)),
                    (None, None) => None,
                };
                Primitive {
                    id,
                    name: p.name,
                    template: p.template,
                    activity: p.activity,
                    field_key: p.field_key,
                    label_text: p.label,
                    value_domain,
                    nav_effect: p.nav_effect,
                }
            })
            .collect();
        Self { primitives }
    }

    pub fn primitives(&self) -> &[Primitive] {
        &self.primitives
    }

    pub fn get(&self, id: usize) -> Result<&Primitive, CatalogError> {
        self.primitives.get(id).ok_or(CatalogError::OutOfRange(id))
    }

    pub fn lookup(&self, name: &str) -> Result<&Primitive, CatalogError> {
        self.primitives
            .iter()
            .find(|p| p.name == name)
            .ok_or_else(|| CatalogError::Unknown(name.to_string()))
    }

    /// Value domain bound to an instruction field key.
    pub fn domain_for_key(&self, key: &str) -> Option<&ValueDomain> {
        self.primitives
            .iter()
            .find(|p| p.field_key.as_deref() == Some(key))
            .and_then(|p| p.value_domain.as_ref())
    }

    /// Fraction of active ids; 0 for an empty list.
    pub fn active_fraction(&self, ids: &[usize]) -> Result<f64, CatalogError> {
        if ids.is_empty() {
            return Ok(0.0);
        }
        let mut active = 0usize;
        for &id in ids {
            if self.get(id)?.is_active() {
                active += 1;
            }
        }
        Ok(active as f64 / ids.len() as f64)
    }
}

/// The shared catalog.
pub fn catalog() -> &'static Catalog {
    static CATALOG: OnceLock<Catalog> = OnceLock::new();
    CATALOG.get_or_init(|| Catalog::parse(CATALOG_JSON))
}

pub fn active_fraction(ids: &[usize]) -> Result<f64, CatalogError> {
    catalog().active_fraction(ids)
}

pub fn lookup(name: &str) -> Result<&'static Primitive, CatalogError> {
    catalog().lookup(name)
}

/// Lowercase alphanumeric tokens of a string.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_ascii_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(|t| t.to_ascii_lowercase())
        .collect()
}
