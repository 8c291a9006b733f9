//! Rendering design specs into multi-page websites.
//!
//! A [`DesignSpec`] is the adversary's output: a page count and an ordered
//! list of placements. [`render`] instantiates each placed primitive's
//! template on its page, then repairs connectivity so every site can be
//! completed. Websites have a canonical text form (`GMWB/1`) and an HTML
//! export for inspection; design specs have their own text form (`GMDS/1`).

use std::collections::HashSet;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::catalog::{catalog, NavEffect, TemplateKind, NUM_PRIMITIVES};

pub const WEBSITE_HEADER: &str = "GMWB/1";
pub const SPEC_HEADER: &str = "GMDS/1";

#[derive(Debug, thiserror::Error, Clone, PartialEq)]
pub enum SiteError {
    #[error("action {index} places on page {page} but the spec has {k} page(s)")]
    PageOutOfRange { index: usize, page: usize, k: usize },
    #[error("action {index} uses primitive id {id} outside 0..40")]
    PrimitiveOutOfRange { index: usize, id: usize },
    #[error("spec needs at least one page")]
    NoPages,
    #[error("parse error at {line}:{col}: {msg}")]
    Parse { line: usize, col: usize, msg: String },
}

fn parse_err<T>(line: usize, col: usize, msg: impl Into<String>) -> Result<T, SiteError> {
    Err(SiteError::Parse { line, col, msg: msg.into() })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum DesignAction {
    Skip,
    Place { primitive: usize, page: usize },
}

impl DesignAction {
    pub fn primitive(&self) -> Option<usize> {
        match self {
            DesignAction::Skip => None,
            DesignAction::Place { primitive, .. } => Some(*primitive),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Provenance {
    Adversary,
    Dr,
    Cl,
    Benchmark,
}

impl Provenance {
    fn as_str(self) -> &'static str {
        match self {
            Provenance::Adversary => "adversary",
            Provenance::Dr => "dr",
            Provenance::Cl => "cl",
            Provenance::Benchmark => "benchmark",
        }
    }

    fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "adversary" => Provenance::Adversary,
            "dr" => Provenance::Dr,
            "cl" => Provenance::Cl,
            "benchmark" => Provenance::Benchmark,
            _ => return None,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DesignSpec {
    pub k: usize,
    pub actions: Vec<DesignAction>,
    pub provenance: Provenance,
}

impl DesignSpec {
    /// Convenience constructor from `(name, page)` pairs; `None` is SKIP.
    pub fn from_names(k: usize, actions: &[Option<(&str, usize)>], provenance: Provenance) -> Self {
        let actions = actions
            .iter()
            .map(|a| match a {
                None => DesignAction::Skip,
                Some((name, page)) => DesignAction::Place {
                    primitive: catalog().lookup(name).expect("known primitive").id,
                    page: *page,
                },
            })
            .collect();
        Self { k, actions, provenance }
    }

    /// Placed primitive ids in action order, SKIPs excluded.
    pub fn placed_ids(&self) -> Vec<usize> {
        self.actions.iter().filter_map(DesignAction::primitive).collect()
    }

    /// `GMDS/1` text form.
    pub fn to_text(&self) -> String {
        let mut s = format!("{SPEC_HEADER}\nk {}\nprovenance {}\nactions", self.k, self.provenance.as_str());
        for a in &self.actions {
            match a {
                DesignAction::Skip => s.push_str(" SKIP"),
                DesignAction::Place { primitive, page } => {
                    let name = catalog().get(*primitive).map(|p| p.name.as_str()).unwrap_or("?");
                    let _ = write!(s, " {name}@{page}");
                }
            }
        }
        s.push('\n');
        s
    }

    pub fn from_text(text: &str) -> Result<Self, SiteError> {
        let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l)).filter(|(_, l)| !l.trim().is_empty());
        parse_spec_body(&mut lines, 1)
    }
}

type Lines<'a> = dyn Iterator<Item = (usize, &'a str)> + 'a;

fn expect_line<'a>(lines: &mut Lines<'a>, last: usize, what: &str) -> Result<(usize, &'a str), SiteError> {
    lines.next().ok_or_else(|| SiteError::Parse { line: last + 1, col: 1, msg: format!("unexpected end of input, expected {what}") })
}

fn keyword_value<'a>(line: usize, text: &'a str, key: &str) -> Result<&'a str, SiteError> {
    match text.split_once(' ') {
        Some((k, rest)) if k == key => Ok(rest.trim()),
        _ => parse_err(line, 1, format!("expected `{key} <value>`")),
    }
}

/// Parses header, `k`, `provenance` and `actions` lines.
pub(crate) fn parse_spec_body<'a>(lines: &mut Lines<'a>, first_line: usize) -> Result<DesignSpec, SiteError> {
    let (ln, header) = expect_line(lines, first_line.saturating_sub(1), "header")?;
    if header.trim() != SPEC_HEADER {
        return parse_err(ln, 1, format!("expected header {SPEC_HEADER}"));
    }
    let (ln, l) = expect_line(lines, ln, "k")?;
    let kv = keyword_value(ln, l, "k")?;
    let k: usize = kv.parse().map_err(|_| SiteError::Parse { line: ln, col: 3, msg: format!("bad page count `{kv}`") })?;
    if k == 0 {
        return parse_err(ln, 3, "page count must be at least 1");
    }
    let (ln, l) = expect_line(lines, ln, "provenance")?;
    let pv = keyword_value(ln, l, "provenance")?;
    let provenance = Provenance::parse(pv).ok_or_else(|| SiteError::Parse { line: ln, col: 12, msg: format!("unknown provenance `{pv}`") })?;
    let (ln, l) = expect_line(lines, ln, "actions")?;
    let Some(rest) = l.strip_prefix("actions") else {
        return parse_err(ln, 1, "expected `actions ...`");
    };
    let mut actions = Vec::new();
    let mut col = "actions".len() + 1;
    for tok in rest.split(' ') {
        if tok.is_empty() {
            col += 1;
            continue;
        }
        if tok == "SKIP" {
            actions.push(DesignAction::Skip);
        } else {
            let Some((name, page)) = tok.split_once('@') else {
                return parse_err(ln, col, format!("expected `name@page` or SKIP, got `{tok}`"));
            };
            let prim = catalog().lookup(name).map_err(|e| SiteError::Parse { line: ln, col, msg: e.to_string() })?;
            let page: usize = page.parse().map_err(|_| SiteError::Parse { line: ln, col: col + name.len() + 1, msg: format!("bad page `{page}`") })?;
            if page >= k {
                return parse_err(ln, col, format!("page {page} outside 0..{k}"));
            }
            actions.push(DesignAction::Place { primitive: prim.id, page });
        }
        col += tok.len() + 1;
    }
    Ok(DesignSpec { k, actions, provenance })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Tag {
    TextInput,
    Option,
    Checkbox,
    Button,
    Link,
    Text,
    Image,
    Group,
}

impl Tag {
    pub const ALL: [Tag; 8] = [Tag::TextInput, Tag::Option, Tag::Checkbox, Tag::Button, Tag::Link, Tag::Text, Tag::Image, Tag::Group];

    pub fn is_focusable(self) -> bool {
        matches!(self, Tag::TextInput | Tag::Option | Tag::Checkbox | Tag::Button | Tag::Link)
    }

    pub fn index(self) -> usize {
        Tag::ALL.iter().position(|t| *t == self).expect("listed")
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Tag::TextInput => "text-input",
            Tag::Option => "option",
            Tag::Checkbox => "checkbox",
            Tag::Button => "button",
            Tag::Link => "link",
            Tag::Text => "text",
            Tag::Image => "image",
            Tag::Group => "group",
        }
    }

    fn parse(s: &str) -> Option<Self> {
        Tag::ALL.into_iter().find(|t| t.as_str() == s)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DomElement {
    pub elem_id: usize,
    pub tag: Tag,
    pub text: String,
    pub value: String,
    pub focusable: bool,
    /// Ground-truth instruction key; never exposed to agents.
    pub hidden_key: Option<String>,
    pub nav_effect: NavEffect,
    pub parent: Option<usize>,
    pub page: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Website {
    pub pages: Vec<Vec<DomElement>>,
    /// Distinct active field keys in first-placement order.
    pub field_keys: Vec<String>,
    pub primitive_ids: Vec<usize>,
}

impl Website {
    pub fn n_fields(&self) -> usize {
        self.field_keys.len()
    }

    pub fn k(&self) -> usize {
        self.pages.len()
    }

    pub fn element_count(&self) -> usize {
        self.pages.iter().map(Vec::len).sum()
    }

    pub fn elements(&self) -> impl Iterator<Item = &DomElement> {
        self.pages.iter().flatten()
    }

    /// Page and in-page index of an element id.
    pub fn locate(&self, elem_id: usize) -> Option<(usize, usize)> {
        let mut base = 0;
        for (p, page) in self.pages.iter().enumerate() {
            if elem_id < base + page.len() {
                return Some((p, elem_id - base));
            }
            base += page.len();
        }
        None
    }

    /// Canonical `GMWB/1` text.
    pub fn serialize(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "{WEBSITE_HEADER}");
        let _ = writeln!(s, "pages {}", self.pages.len());
        let _ = writeln!(s, "fields {}", self.field_keys.join(" ")).map(|_| ());
        let ids: Vec<String> = self.primitive_ids.iter().map(|i| i.to_string()).collect();
        let _ = writeln!(s, "primitives {}", ids.join(" "));
        for (p, page) in self.pages.iter().enumerate() {
            let _ = writeln!(s, "page {p}");
            for e in page {
                let _ = writeln!(
                    s,
                    "e {} {} parent={} focus={} nav={} key={} text={} value={}",
                    e.elem_id,
                    e.tag.as_str(),
                    e.parent.map_or("-".to_string(), |v| v.to_string()),
                    u8::from(e.focusable),
                    e.nav_effect.as_str(),
                    e.hidden_key.as_deref().unwrap_or("-"),
                    quote(&e.text),
                    quote(&e.value),
                );
            }
        }
        s
    }

    pub fn deserialize(text: &str) -> Result<Self, SiteError> {
        let lines: Vec<&str> = text.lines().collect();
        let get = |i: usize, what: &str| -> Result<&str, SiteError> {
            lines.get(i).copied().ok_or_else(|| SiteError::Parse { line: i + 1, col: 1, msg: format!("unexpected end of input, expected {what}") })
        };
        if get(0, "header")? != WEBSITE_HEADER {
            return parse_err(1, 1, format!("expected header {WEBSITE_HEADER}"));
        }
        let np = keyword_value(2, get(1, "pages")?, "pages")?;
        let n_pages: usize = np.parse().map_err(|_| SiteError::Parse { line: 2, col: 7, msg: format!("bad page count `{np}`") })?;
        if n_pages == 0 {
            return parse_err(2, 7, "a website has at least one page");
        }
        let fields_line = get(2, "fields")?;
        let Some(fields) = fields_line.strip_prefix("fields") else {
            return parse_err(3, 1, "expected `fields ...`");
        };
        let field_keys: Vec<String> = fields.split_whitespace().map(str::to_string).collect();
        let prim_line = get(3, "primitives")?;
        let Some(prims) = prim_line.strip_prefix("primitives") else {
            return parse_err(4, 1, "expected `primitives ...`");
        };
        let mut primitive_ids = Vec::new();
        for tok in prims.split_whitespace() {
            let id: usize = tok.parse().map_err(|_| SiteError::Parse { line: 4, col: 12, msg: format!("bad primitive id `{tok}`") })?;
            if id >= NUM_PRIMITIVES {
                return parse_err(4, 12, format!("primitive id {id} outside 0..40"));
            }
            primitive_ids.push(id);
        }
        let mut pages: Vec<Vec<DomElement>> = Vec::new();
        let mut next_id = 0;
        let mut i = 4;
        while i < lines.len() {
            let ln = i + 1;
            let line = lines[i];
            i += 1;
            if line.is_empty() {
                continue;
            }
            if let Some(p) = line.strip_prefix("page ") {
                if p.parse::<usize>().ok() != Some(pages.len()) {
                    return parse_err(ln, 6, format!("expected page {}", pages.len()));
                }
                pages.push(Vec::new());
                continue;
            }
            if pages.is_empty() {
                return parse_err(ln, 1, "element before first `page` line");
            }
            let e = parse_element(line, ln, pages.len() - 1)?;
            if e.elem_id != next_id {
                return parse_err(ln, 3, format!("expected element id {next_id}"));
            }
            next_id += 1;
            pages.last_mut().expect("checked").push(e);
        }
        if pages.len() != n_pages {
            return parse_err(lines.len() + 1, 1, format!("expected {n_pages} page(s), found {}", pages.len()));
        }
        Ok(Website { pages, field_keys, primitive_ids })
    }

    /// One standalone HTML document per page.
    pub fn export_html(&self) -> Vec<String> {
        self.pages.iter().enumerate().map(|(p, page)| page_html(p, page)).collect()
    }

    /// Writes `page_<i>.html` files into `dir`.
    pub fn export_html_dir(&self, dir: &Path) -> std::io::Result<Vec<std::path::PathBuf>> {
        std::fs::create_dir_all(dir)?;
        let mut out = Vec::new();
        for (i, html) in self.export_html().into_iter().enumerate() {
            let path = dir.join(format!("page_{i}.html"));
            std::fs::write(&path, html)?;
            out.push(path);
        }
        Ok(out)
    }
}

fn quote(s: &str) -> String {
    let mut out = String::with_capacity(s.len() + 2);
    out.push('"');
    for c in s.chars() {
        match c {
            '"' => out.push_str("\\\""),
            '\\' => out.push_str("\\\\"),
            '\n' => out.push_str("\\n"),
            c => out.push(c),
        }
    }
    out.push('"');
    out
}

/// Reads a quoted string starting at byte `start`; returns it and the end offset.
fn unquote(line: &str, start: usize, ln: usize) -> Result<(String, usize), SiteError> {
    let bytes = line.as_bytes();
    if bytes.get(start) != Some(&b'"') {
        return parse_err(ln, start + 1, "expected opening quote");
    }
    let mut out = String::new();
    let mut chars = line[start + 1..].char_indices();
    while let Some((off, c)) = chars.next() {
        match c {
            '"' => return Ok((out, start + 1 + off + 1)),
            '\\' => match chars.next() {
                Some((_, '"')) => out.push('"'),
                Some((_, '\\')) => out.push('\\'),
                Some((_, 'n')) => out.push('\n'),
                _ => return parse_err(ln, start + 2 + off, "bad escape"),
            },
            c => out.push(c),
        }
    }
    parse_err(ln, line.len() + 1, "unterminated string")
}

fn parse_element(line: &str, ln: usize, page: usize) -> Result<DomElement, SiteError> {
    let Some(rest) = line.strip_prefix("e ") else {
        return parse_err(ln, 1, "expected element line `e ...`");
    };
    let mut pos = 2;
    let mut fields = rest.splitn(7, ' ');
    let mut next = |what: &str| -> Result<(&str, usize), SiteError> {
        let tok = fields.next().ok_or_else(|| SiteError::Parse { line: ln, col: line.len() + 1, msg: format!("missing {what}") })?;
        let col = pos + 1;
        pos += tok.len() + 1;
        Ok((tok, col))
    };
    let (id, col) = next("element id")?;
    let elem_id: usize = id.parse().map_err(|_| SiteError::Parse { line: ln, col, msg: format!("bad element id `{id}`") })?;
    let (tag, col) = next("tag")?;
    let tag = Tag::parse(tag).ok_or_else(|| SiteError::Parse { line: ln, col, msg: format!("unknown tag `{tag}`") })?;
    let mut attr = |name: &str| -> Result<(String, usize), SiteError> {
        let (tok, col) = next(name)?;
        match tok.strip_prefix(name).and_then(|t| t.strip_prefix('=')) {
            Some(v) => Ok((v.to_string(), col)),
            None => parse_err(ln, col, format!("expected `{name}=`")),
        }
    };
    let (parent, col) = attr("parent")?;
    let parent = match parent.as_str() {
        "-" => None,
        v => Some(v.parse().map_err(|_| SiteError::Parse { line: ln, col, msg: format!("bad parent `{v}`") })?),
    };
    let (focus, col) = attr("focus")?;
    let focusable = match focus.as_str() {
        "0" => false,
        "1" => true,
        _ => return parse_err(ln, col, "focus must be 0 or 1"),
    };
    let (nav, col) = attr("nav")?;
    let nav_effect = match nav.as_str() {
        "none" => NavEffect::None,
        "advance" => NavEffect::Advance,
        "terminate" => NavEffect::Terminate,
        _ => return parse_err(ln, col, format!("unknown nav `{nav}`")),
    };
    let (key, _) = attr("key")?;
    let hidden_key = (key != "-").then_some(key);
    let Some(text_at) = line.find(" text=").map(|i| i + 6) else {
        return parse_err(ln, line.len() + 1, "missing text=");
    };
    let (text, end) = unquote(line, text_at, ln)?;
    let Some(value_rest) = line[end..].strip_prefix(" value=") else {
        return parse_err(ln, end + 1, "expected ` value=`");
    };
    let value_at = line.len() - value_rest.len();
    let (value, end) = unquote(line, value_at, ln)?;
    if end != line.len() {
        return parse_err(ln, end + 1, "trailing characters");
    }
    if focusable != tag.is_focusable() {
        return parse_err(ln, 1, "focus flag disagrees with tag");
    }
    Ok(DomElement { elem_id, tag, text, value, focusable, hidden_key, nav_effect, parent, page })
}

fn escape_html(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

fn element_html(e: &DomElement, out: &mut String, indent: usize) {
    let pad = "  ".repeat(indent);
    let text = escape_html(&e.text);
    let name = e.hidden_key.as_deref().map(|k| format!(" name=\"{}\"", escape_html(k))).unwrap_or_default();
    let _ = match e.tag {
        Tag::TextInput => writeln!(
            out,
            "{pad}<label for=\"e{id}\">{text}</label> <input type=\"text\" id=\"e{id}\"{name} value=\"{v}\">",
            id = e.elem_id,
            v = escape_html(&e.value)
        ),
        Tag::Option => writeln!(out, "{pad}<label><input type=\"radio\" id=\"e{}\"{name}>{text}</label>", e.elem_id),
        Tag::Checkbox => writeln!(out, "{pad}<label><input type=\"checkbox\" id=\"e{}\"{name}>{text}</label>", e.elem_id),
        Tag::Button => writeln!(out, "{pad}<button id=\"e{}\" data-nav=\"{}\">{text}</button>", e.elem_id, e.nav_effect.as_str()),
        Tag::Link => writeln!(out, "{pad}<a href=\"#\" id=\"e{}\" data-nav=\"{}\">{text}</a>", e.elem_id, e.nav_effect.as_str()),
        Tag::Text => writeln!(out, "{pad}<label id=\"e{}\">{text}</label>", e.elem_id),
        Tag::Image => writeln!(out, "{pad}<div class=\"image\" id=\"e{}\" title=\"{text}\"></div>", e.elem_id),
        Tag::Group => writeln!(out, "{pad}<div class=\"group\" id=\"e{}\" data-label=\"{text}\">", e.elem_id),
    };
}

fn page_html(index: usize, page: &[DomElement]) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "<!DOCTYPE html>\n<html>\n<head><meta charset=\"utf-8\"><title>page {index}</title></head>\n<body>");
    let mut open: Vec<usize> = Vec::new();
    for e in page {
        while let Some(&top) = open.last() {
            if e.parent == Some(top) {
                break;
            }
            open.pop();
            let _ = writeln!(out, "{}</div>", "  ".repeat(open.len() + 1));
        }
        element_html(e, &mut out, open.len() + 1);
        if e.tag == Tag::Group {
            open.push(e.elem_id);
        }
    }
    while open.pop().is_some() {
        let _ = writeln!(out, "{}</div>", "  ".repeat(open.len() + 1));
    }
    out.push_str("</body>\n</html>\n");
    out
}

struct PageBuilder {
    elems: Vec<DomElement>,
}

impl PageBuilder {
    fn push(&mut self, page: usize, tag: Tag, text: &str, key: Option<&str>, nav: NavEffect, parent: Option<usize>) -> usize {
        self.elems.push(DomElement {
            elem_id: 0,
            tag,
            text: text.to_string(),
            value: String::new(),
            focusable: tag.is_focusable(),
            hidden_key: key.map(str::to_string),
            nav_effect: nav,
            parent,
            page,
        });
        self.elems.len() - 1
    }

    fn group(&mut self, page: usize, label: &str, children: &[(Tag, &str)]) {
        let g = self.push(page, Tag::Group, label, None, NavEffect::None, None);
        for (tag, text) in children {
            self.push(page, *tag, text, None, NavEffect::None, Some(g));
        }
    }
}

fn instantiate(b: &mut PageBuilder, page: usize, primitive: usize) {
    let p = &catalog().primitives()[primitive];
    let key = p.field_key.as_deref();
    let label = p.label_text.as_str();
    match p.template {
        TemplateKind::Input => {
            b.push(page, Tag::TextInput, label, key, NavEffect::None, None);
        }
        TemplateKind::MultiSelection => {
            let g = b.push(page, Tag::Group, label, None, NavEffect::None, None);
            for opt in p.value_domain.as_ref().expect("active").values() {
                b.push(page, Tag::Option, opt, key, NavEffect::None, Some(g));
            }
        }
        TemplateKind::Selection => {
            b.push(page, Tag::Checkbox, label, key, NavEffect::None, None);
        }
        TemplateKind::Button => {
            b.push(page, Tag::Button, label, None, p.nav_effect, None);
        }
        TemplateKind::Link => {
            b.push(page, Tag::Link, label, None, p.nav_effect, None);
        }
        TemplateKind::Label => {
            b.push(page, Tag::Text, label, None, NavEffect::None, None);
        }
        TemplateKind::Carousel => b.group(page, label, &[(Tag::Button, "Previous"), (Tag::Link, "Featured Item"), (Tag::Button, "Next")]),
        TemplateKind::Cart => b.group(page, label, &[(Tag::Link, "Cart Item"), (Tag::TextInput, "Promo Code"), (Tag::Button, "Apply")]),
        TemplateKind::Media => b.group(page, label, &[(Tag::Image, "Deal Image"), (Tag::Text, "Limited Offer"), (Tag::Link, "Shop Now")]),
        TemplateKind::Deck => b.group(page, label, &[(Tag::Link, "Laptop"), (Tag::Link, "Phone"), (Tag::Link, "Camera")]),
        TemplateKind::Footer => b.group(page, label, &[(Tag::Link, "About"), (Tag::Link, "Contact"), (Tag::Link, "Help")]),
        TemplateKind::NavigationBar => b.group(page, label, &[(Tag::Link, "Home"), (Tag::Link, "Products"), (Tag::Link, "Account")]),
    }
}

/// Renders a design spec. Pure: equal specs give equal websites.
pub fn render(spec: &DesignSpec) -> Result<Website, SiteError> {
    if spec.k == 0 {
        return Err(SiteError::NoPages);
    }
    let mut builders: Vec<PageBuilder> = (0..spec.k).map(|_| PageBuilder { elems: Vec::new() }).collect();
    let mut field_keys = Vec::new();
    let mut seen = HashSet::new();
    let mut primitive_ids = Vec::new();
    for (index, action) in spec.actions.iter().enumerate() {
        let DesignAction::Place { primitive, page } = *action else { continue };
        if primitive >= NUM_PRIMITIVES {
            return Err(SiteError::PrimitiveOutOfRange { index, id: primitive });
        }
        if page >= spec.k {
            return Err(SiteError::PageOutOfRange { index, page, k: spec.k });
        }
        instantiate(&mut builders[page], page, primitive);
        primitive_ids.push(primitive);
        if let Some(key) = &catalog().primitives()[primitive].field_key {
            if seen.insert(key.clone()) {
                field_keys.push(key.clone());
            }
        }
    }
    let last = spec.k - 1;
    for (p, b) in builders.iter_mut().enumerate() {
        if p < last && !b.elems.iter().any(|e| e.nav_effect == NavEffect::Advance) {
            b.push(p, Tag::Button, "Next", None, NavEffect::Advance, None);
        }
        if p == last && !b.elems.iter().any(|e| e.nav_effect == NavEffect::Terminate) {
            b.push(p, Tag::Button, "Submit", None, NavEffect::Terminate, None);
        }
    }
    let mut pages = Vec::with_capacity(spec.k);
    let mut base = 0;
    for b in builders {
        let n = b.elems.len();
        let elems = b
            .elems
            .into_iter()
            .enumerate()
            .map(|(i, mut e)| {
                e.elem_id = base + i;
                e.parent = e.parent.map(|pi| base + pi);
                e
            })
            .collect();
        pages.push(elems);
        base += n;
    }
    Ok(Website { pages, field_keys, primitive_ids })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn login() -> DesignSpec {
        DesignSpec::from_names(1, &[Some(("username", 0)), Some(("password", 0)), Some(("submit", 0))], Provenance::Benchmark)
    }

    #[test]
    fn login_layout() {
        let w = render(&login()).unwrap();
        assert_eq!(w.k(), 1);
        assert_eq!(w.n_fields(), 2);
        let page = &w.pages[0];
        let keyed: Vec<_> = page.iter().filter(|e| e.hidden_key.is_some()).collect();
        assert_eq!(keyed.len(), 2);
        assert!(keyed.iter().all(|e| e.tag == Tag::TextInput));
        let term: Vec<_> = page.iter().filter(|e| e.nav_effect == NavEffect::Terminate).collect();
        assert_eq!(term.len(), 1);
        assert_eq!(term[0].tag, Tag::Button);
        assert_eq!(page.len(), 3);
        assert_eq!(w.field_keys, vec!["username", "password"]);
    }

    #[test]
    fn all_skip_site_has_only_submit() {
        let spec = DesignSpec { k: 1, actions: vec![DesignAction::Skip; 6], provenance: Provenance::Dr };
        let w = render(&spec).unwrap();
        assert_eq!(w.n_fields(), 0);
        assert_eq!(w.element_count(), 1);
        assert_eq!(w.pages[0][0].nav_effect, NavEffect::Terminate);
    }

    #[test]
    fn repair_on_two_pages() {
        let spec = DesignSpec::from_names(2, &[Some(("username", 1))], Provenance::Adversary);
        let w = render(&spec).unwrap();
        assert_eq!(w.pages[0].len(), 1);
        assert_eq!(w.pages[0][0].nav_effect, NavEffect::Advance);
        assert_eq!(w.pages[1].len(), 2);
        assert_eq!(w.pages[1][0].hidden_key.as_deref(), Some("username"));
        assert_eq!(w.pages[1][1].nav_effect, NavEffect::Terminate);
        let ids: Vec<usize> = w.elements().map(|e| e.elem_id).collect();
        assert_eq!(ids, vec![0, 1, 2]);
        assert_eq!(w.locate(2), Some((1, 1)));
        assert_eq!(w.locate(3), None);
    }

    #[test]
    fn page_out_of_range_is_an_error() {
        let spec = DesignSpec { k: 1, actions: vec![DesignAction::Place { primitive: 0, page: 1 }], provenance: Provenance::Dr };
        assert_eq!(render(&spec).unwrap_err(), SiteError::PageOutOfRange { index: 0, page: 1, k: 1 });
    }

    #[test]
    fn duplicate_active_primitive_binds_one_key() {
        let spec = DesignSpec::from_names(1, &[Some(("username", 0)), Some(("username", 0))], Provenance::Adversary);
        let w = render(&spec).unwrap();
        assert_eq!(w.n_fields(), 1);
        assert_eq!(w.pages[0].iter().filter(|e| e.hidden_key.as_deref() == Some("username")).count(), 2);
    }

    #[test]
    fn html_export() {
        let w = render(&login()).unwrap();
        let html = w.export_html();
        assert_eq!(html.len(), 1);
        assert_eq!(html[0].matches("<input").count(), 2);
        assert_eq!(html[0].matches("<button").count(), 1);
        assert!(html[0].contains(">Username</label>"));
        assert_eq!(w.export_html(), html);

        let empty = render(&DesignSpec { k: 1, actions: vec![DesignAction::Skip], provenance: Provenance::Dr }).unwrap();
        let html = empty.export_html();
        assert_eq!(html[0].matches("<button").count(), 1);
        assert_eq!(html[0].matches("<input").count(), 0);
    }

    #[test]
    fn html_nests_groups() {
        let spec = DesignSpec::from_names(1, &[Some(("navbar", 0)), Some(("cabin", 0)), Some(("submit", 0))], Provenance::Adversary);
        let html = render(&spec).unwrap().export_html().remove(0);
        assert_eq!(html.matches("<div class=\"group\"").count(), 2);
        assert_eq!(html.matches("</div>").count(), 2);
    }

    #[test]
    fn html_dir_layout() {
        let dir = tempfile::tempdir().unwrap();
        let spec = DesignSpec::from_names(2, &[Some(("username", 1))], Provenance::Adversary);
        let paths = render(&spec).unwrap().export_html_dir(dir.path()).unwrap();
        assert_eq!(paths, vec![dir.path().join("page_0.html"), dir.path().join("page_1.html")]);
    }

    #[test]
    fn serialize_round_trip_and_errors() {
        let w = render(&login()).unwrap();
        let text = w.serialize();
        assert!(text.starts_with("GMWB/1\n"));
        assert_eq!(text, w.serialize());
        assert_eq!(Website::deserialize(&text).unwrap(), w);
        let truncated = &text[..text.len() - 20];
        assert!(matches!(Website::deserialize(truncated), Err(SiteError::Parse { .. })));
        assert!(matches!(Website::deserialize("GMWB/2\n"), Err(SiteError::Parse { line: 1, .. })));
    }

    #[test]
    fn escapes_survive() {
        let mut w = render(&login()).unwrap();
        w.pages[0][0].value = "a \"quoted\" \\ value\nnext".into();
        assert_eq!(Website::deserialize(&w.serialize()).unwrap(), w);
    }

    #[test]
    fn spec_text_round_trip_and_errors() {
        let spec = DesignSpec::from_names(2, &[Some(("username", 1)), None, Some(("cabin", 0))], Provenance::Adversary);
        let text = spec.to_text();
        assert_eq!(text, "GMDS/1\nk 2\nprovenance adversary\nactions username@1 SKIP cabin@0\n");
        assert_eq!(DesignSpec::from_text(&text).unwrap(), spec);
        let bad = "GMDS/1\nk 2\nprovenance adversary\nactions username@1 bogus@0\n";
        assert_eq!(
            DesignSpec::from_text(bad).unwrap_err(),
            SiteError::Parse { line: 4, col: 20, msg: "unknown primitive `bogus`".into() }
        );
        let bad = "GMDS/1\nk 1\nprovenance dr\nactions username@3\n";
        assert!(matches!(DesignSpec::from_text(bad), Err(SiteError::Parse { line: 4, col: 9, .. })));
        assert!(matches!(DesignSpec::from_text("GMDS/1\nk 1\n"), Err(SiteError::Parse { line: 3, .. })));
    }

    fn arb_spec() -> impl Strategy<Value = DesignSpec> {
        (1usize..=3).prop_flat_map(|k| {
            let action = prop_oneof![
                1 => Just(DesignAction::Skip),
                4 => (0usize..40, 0..k).prop_map(|(primitive, page)| DesignAction::Place { primitive, page }),
            ];
            proptest::collection::vec(action, 0..12).prop_map(move |actions| DesignSpec { k, actions, provenance: Provenance::Dr })
        })
    }

    proptest! {
        #[test]
        fn rendered_sites_hold_invariants(spec in arb_spec()) {
            let w = render(&spec).unwrap();
            prop_assert_eq!(w.k(), spec.k);
            let last = w.k() - 1;
            for (p, page) in w.pages.iter().enumerate() {
                if p < last {
                    prop_assert!(page.iter().any(|e| e.nav_effect == NavEffect::Advance));
                } else {
                    prop_assert!(page.iter().any(|e| e.nav_effect == NavEffect::Terminate));
                }
                for e in page {
                    prop_assert_eq!(e.focusable, e.tag.is_focusable());
                    prop_assert_eq!(e.page, p);
                }
            }
            let active = spec.placed_ids().iter().filter(|i| catalog().primitives()[**i].is_active()).count();
            prop_assert!(w.n_fields() <= active);
            prop_assert_eq!(w.primitive_ids.clone(), spec.placed_ids());
            prop_assert_eq!(render(&spec).unwrap().serialize(), w.serialize());
            prop_assert_eq!(Website::deserialize(&w.serialize()).unwrap(), w.clone());
            prop_assert_eq!(DesignSpec::from_text(&spec.to_text()).unwrap(), spec.clone());
        }

        #[test]
        fn placing_never_shrinks(spec in arb_spec(), prim in 0usize..40) {
            let base = render(&spec).unwrap().element_count();
            let mut more = spec.clone();
            more.actions.push(DesignAction::Place { primitive: prim, page: 0 });
            prop_assert!(render(&more).unwrap().element_count() >= base);
        }
    }

    #[test]
    fn every_non_label_primitive_has_an_actionable_element() {
        for p in catalog().primitives() {
            let spec = DesignSpec { k: 1, actions: vec![DesignAction::Place { primitive: p.id, page: 0 }], provenance: Provenance::Dr };
            let w = render(&spec).unwrap();
            // exclude the repaired submit unless the primitive is submit itself
            let own: Vec<_> = if p.name == "submit" { w.pages[0].clone() } else { w.pages[0][..w.pages[0].len() - 1].to_vec() };
            let focusable = own.iter().filter(|e| e.focusable).count();
            if p.template == TemplateKind::Label {
                assert_eq!(focusable, 0, "{}", p.name);
            } else {
                assert!(focusable >= 1, "{}", p.name);
            }
        }
    }
}
