//! TEI-P5 critical apparatus reader.
//!
//! Only a small subset of TEI matters here: `<listWit>/<witness>` declarations,
//! `<div>` boundaries (for section ids) and flat `<app>` entries whose `<lem>`
//! and `<rdg>` children carry `@wit` pointers. Everything else is skipped.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use quick_xml::events::{BytesStart, Event};
use quick_xml::Reader;

use crate::error::{Error, Result, Warned};

/// Manuscript or edition siglum, e.g. `A601`.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct WitnessId(String);

impl WitnessId {
    pub fn new(siglum: impl Into<String>) -> Result<Self> {
        let siglum = siglum.into();
        if siglum.is_empty() {
            return Err(Error::Invalid("empty siglum".into()));
        }
        if siglum.starts_with('#') {
            return Err(Error::Witness {
                siglum,
                message: "siglum must not start with '#'".into(),
            });
        }
        if siglum.chars().any(|c| c.is_whitespace() || c.is_control()) {
            return Err(Error::Witness {
                siglum,
                message: "siglum must be printable and contain no whitespace".into(),
            });
        }
        Ok(WitnessId(siglum))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for WitnessId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl AsRef<str> for WitnessId {
    fn as_ref(&self) -> &str {
        &self.0
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Witness {
    pub id: WitnessId,
    /// Shelfmark or other free-text description, if the TEI gives one.
    pub display_name: Option<String>,
}

/// Ordered set of witnesses with unique sigla.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct WitnessRegistry {
    witnesses: Vec<Witness>,
    index: BTreeMap<WitnessId, usize>,
}

impl WitnessRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_sigla<I, S>(sigla: I) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut reg = WitnessRegistry::new();
        for s in sigla {
            reg.insert(Witness {
                id: WitnessId::new(s)?,
                display_name: None,
            })?;
        }
        Ok(reg)
    }

    pub fn insert(&mut self, witness: Witness) -> Result<()> {
        if self.index.contains_key(&witness.id) {
            return Err(Error::Witness {
                siglum: witness.id.to_string(),
                message: "declared more than once".into(),
            });
        }
        self.index.insert(witness.id.clone(), self.witnesses.len());
        self.witnesses.push(witness);
        Ok(())
    }

    pub fn contains(&self, id: &WitnessId) -> bool {
        self.index.contains_key(id)
    }

    pub fn position(&self, id: &WitnessId) -> Option<usize> {
        self.index.get(id).copied()
    }

    pub fn len(&self) -> usize {
        self.witnesses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.witnesses.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Witness> {
        self.witnesses.iter()
    }

    pub fn ids(&self) -> impl Iterator<Item = &WitnessId> {
        self.witnesses.iter().map(|w| &w.id)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Reading {
    /// Whitespace-normalized text; empty means an omission.
    pub text: String,
    pub witnesses: BTreeSet<WitnessId>,
    pub is_lemma: bool,
}

/// One `<app>` entry.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VariantSite {
    pub site_id: String,
    pub ordinal: usize,
    /// Lemma first (when present), then readings in document order.
    pub readings: Vec<Reading>,
    pub var_type: Option<String>,
    pub section_id: Option<String>,
}

impl VariantSite {
    /// Index of the reading attested by `id`, if any.
    pub fn reading_of(&self, id: &WitnessId) -> Option<usize> {
        self.readings.iter().position(|r| r.witnesses.contains(id))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ApparatusDoc {
    pub registry: WitnessRegistry,
    pub sites: Vec<VariantSite>,
    pub source_path: String,
}

impl ApparatusDoc {
    /// Checks the structural invariants of a parsed document.
    pub fn validate(&self) -> Result<()> {
        for (i, site) in self.sites.iter().enumerate() {
            if site.ordinal != i {
                return Err(Error::site(&site.site_id, format!("ordinal {} at position {i}", site.ordinal)));
            }
            if site.readings.is_empty() {
                return Err(Error::site(&site.site_id, "no readings"));
            }
            if site.readings.iter().filter(|r| r.is_lemma).count() > 1 {
                return Err(Error::site(&site.site_id, "more than one lemma"));
            }
            let mut seen = BTreeSet::new();
            for r in &site.readings {
                if r.witnesses.is_empty() {
                    return Err(Error::site(&site.site_id, "reading without witnesses"));
                }
                for w in &r.witnesses {
                    if !self.registry.contains(w) {
                        return Err(Error::site(&site.site_id, format!("unregistered witness {w}")));
                    }
                    if !seen.insert(w) {
                        return Err(Error::site(&site.site_id, format!("witness {w} attests two readings")));
                    }
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ParseOptions {
    /// Reject `@wit` pointers to sigla missing from an explicit `<listWit>`.
    /// When false they are registered on the fly with a warning.
    pub strict_witnesses: bool,
    pub source_path: String,
}

/// Site selection by section and/or variant type. `None` means "any".
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct SiteFilter {
    pub section: Option<String>,
    pub var_types: Option<BTreeSet<String>>,
}

impl SiteFilter {
    pub fn is_empty(&self) -> bool {
        self.section.is_none() && self.var_types.is_none()
    }

    pub fn matches(&self, site: &VariantSite) -> bool {
        if let Some(section) = &self.section {
            if site.section_id.as_deref() != Some(section.as_str()) {
                return false;
            }
        }
        if let Some(types) = &self.var_types {
            match &site.var_type {
                Some(t) if types.contains(t) => {}
                _ => return false,
            }
        }
        true
    }
}

pub fn normalize_ws(text: &str) -> String {
    text.split_whitespace().collect::<Vec<_>>().join(" ")
}

fn line_col(bytes: &[u8], offset: usize) -> (usize, usize) {
    let offset = offset.min(bytes.len());
    let before = &bytes[..offset];
    let line = before.iter().filter(|&&b| b == b'\n').count() + 1;
    let line_start = before.iter().rposition(|&b| b == b'\n').map_or(0, |p| p + 1);
    let column = String::from_utf8_lossy(&before[line_start..]).chars().count() + 1;
    (line, column)
}

struct RawReading {
    text: String,
    wit: Option<String>,
    is_lemma: bool,
}

struct OpenApp {
    xml_id: Option<String>,
    var_type: Option<String>,
    section_id: Option<String>,
    readings: Vec<RawReading>,
    /// Depth of the open `<lem>`/`<rdg>` element, if inside one.
    reading_depth: Option<usize>,
}

struct OpenDiv {
    depth: usize,
    id: Option<String>,
}

struct ParseState<'a> {
    bytes: &'a [u8],
    opts: &'a ParseOptions,
    warnings: Vec<String>,
    list_wit: Option<WitnessRegistry>,
    referenced: WitnessRegistry,
    /// `<witness>` currently being read: (depth, siglum, text).
    witness: Option<(usize, WitnessId, String)>,
    divs: Vec<OpenDiv>,
    app: Option<(usize, OpenApp)>,
    sites: Vec<VariantSite>,
    lemma_less: usize,
}

fn attr(e: &BytesStart<'_>, name: &[u8]) -> Result<Option<String>> {
    for a in e.attributes() {
        let a = a.map_err(|err| Error::Invalid(format!("bad attribute: {err}")))?;
        if a.key.as_ref() == name {
            let v = a
                .unescape_value()
                .map_err(|err| Error::Invalid(format!("bad attribute value: {err}")))?;
            return Ok(Some(v.into_owned()));
        }
    }
    Ok(None)
}

impl<'a> ParseState<'a> {
    fn xml_err(&self, offset: usize, message: impl Into<String>) -> Error {
        let (line, column) = line_col(self.bytes, offset);
        Error::Xml {
            line,
            column,
            message: message.into(),
        }
    }

    fn start(&mut self, e: &BytesStart<'_>, depth: usize, offset: usize, empty: bool) -> Result<()> {
        let name = e.local_name();
        let name = name.as_ref();
        match name {
            b"listWit" => {
                if self.list_wit.is_none() {
                    self.list_wit = Some(WitnessRegistry::new());
                }
            }
            b"witness" if self.list_wit.is_some() => {
                let id = attr(e, b"xml:id")?
                    .ok_or_else(|| self.xml_err(offset, "<witness> without xml:id"))?;
                let id = WitnessId::new(id)?;
                if empty {
                    self.finish_witness(id, String::new())?;
                } else {
                    self.witness = Some((depth, id, String::new()));
                }
            }
            b"div" => {
                let id = match attr(e, b"xml:id")? {
                    Some(id) => Some(id),
                    None => attr(e, b"n")?,
                };
                if !empty {
                    self.divs.push(OpenDiv { depth, id });
                }
            }
            b"app" => {
                if let Some((_, app)) = &self.app {
                    let at = app.xml_id.clone().unwrap_or_else(|| format!("s{}", self.sites.len()));
                    return Err(Error::site(at, "nested <app> is not supported"));
                }
                let app = OpenApp {
                    xml_id: attr(e, b"xml:id")?,
                    var_type: attr(e, b"type")?,
                    section_id: self.divs.iter().rev().find_map(|d| d.id.clone()),
                    readings: Vec::new(),
                    reading_depth: None,
                };
                if empty {
                    self.finish_app(app, offset)?;
                } else {
                    self.app = Some((depth, app));
                }
            }
            b"lem" | b"rdg" => {
                if let Some((_, app)) = &mut self.app {
                    if app.reading_depth.is_some() {
                        // <rdg> inside <lem>: treat as text-bearing markup of the outer reading
                        return Ok(());
                    }
                    app.readings.push(RawReading {
                        text: String::new(),
                        wit: attr(e, b"wit")?,
                        is_lemma: name == b"lem",
                    });
                    if !empty {
                        app.reading_depth = Some(depth);
                    }
                }
            }
            _ => {}
        }
        Ok(())
    }

    fn end(&mut self, depth: usize, offset: usize) -> Result<()> {
        if let Some((d, _, _)) = &self.witness {
            if *d == depth {
                let (_, id, text) = self.witness.take().unwrap();
                self.finish_witness(id, text)?;
            }
        }
        if self.divs.last().is_some_and(|d| d.depth == depth) {
            self.divs.pop();
        }
        if let Some((d, app)) = &mut self.app {
            if app.reading_depth == Some(depth) {
                app.reading_depth = None;
            } else if *d == depth {
                let (_, app) = self.app.take().unwrap();
                self.finish_app(app, offset)?;
            }
        }
        Ok(())
    }

    fn text(&mut self, text: &str) {
        if let Some((_, _, buf)) = &mut self.witness {
            buf.push_str(text);
        }
        if let Some((_, app)) = &mut self.app {
            if app.reading_depth.is_some() {
                if let Some(r) = app.readings.last_mut() {
                    r.text.push_str(text);
                }
            }
        }
    }

    fn finish_witness(&mut self, id: WitnessId, text: String) -> Result<()> {
        let text = normalize_ws(&text);
        let display_name = (!text.is_empty()).then_some(text);
        self.list_wit
            .get_or_insert_with(WitnessRegistry::new)
            .insert(Witness { id, display_name })
    }

    fn finish_app(&mut self, app: OpenApp, offset: usize) -> Result<()> {
        let ordinal = self.sites.len();
        let site_id = app.xml_id.clone().unwrap_or_else(|| format!("s{ordinal}"));
        if self.sites.iter().any(|s| s.site_id == site_id) {
            return Err(Error::site(site_id, "duplicate site id"));
        }
        if app.readings.is_empty() {
            return Err(self.xml_err(offset, format!("apparatus entry {site_id} has no <lem> or <rdg>")));
        }
        if app.readings.iter().filter(|r| r.is_lemma).count() > 1 {
            return Err(Error::site(site_id, "more than one <lem>"));
        }
        if !app.readings.iter().any(|r| r.is_lemma) {
            self.lemma_less += 1;
        }

        let mut raw = app.readings;
        // lemma first, then readings in document order
        raw.sort_by_key(|r| !r.is_lemma);

        let mut attested: BTreeMap<WitnessId, usize> = BTreeMap::new();
        let mut readings: Vec<Reading> = Vec::with_capacity(raw.len());
        for (ri, r) in raw.into_iter().enumerate() {
            let element = if r.is_lemma { "<lem>" } else { "<rdg>" };
            let wit = r
                .wit
                .ok_or_else(|| Error::site(&site_id, format!("{element} has to contain a witness attribute @wit")))?;
            let mut witnesses = BTreeSet::new();
            for ptr in wit.split_whitespace() {
                let siglum = ptr.strip_prefix('#').unwrap_or(ptr);
                let id = WitnessId::new(siglum).map_err(|e| Error::site(&site_id, e.to_string()))?;
                self.register_reference(&site_id, &id)?;
                if let Some(prev) = attested.insert(id.clone(), ri) {
                    if prev != ri {
                        return Err(Error::site(&site_id, format!("witness {id} attests more than one reading")));
                    }
                }
                witnesses.insert(id);
            }
            if witnesses.is_empty() {
                return Err(Error::site(&site_id, format!("{element} has an empty @wit")));
            }
            let text = normalize_ws(&r.text);
            if let Some(same) = readings.iter_mut().find(|x| x.text == text) {
                self.warnings.push(format!(
                    "apparatus entry {site_id}: readings with identical text {text:?} merged"
                ));
                same.witnesses.extend(witnesses);
            } else {
                readings.push(Reading {
                    text,
                    witnesses,
                    is_lemma: r.is_lemma,
                });
            }
        }

        self.sites.push(VariantSite {
            site_id,
            ordinal,
            readings,
            var_type: app.var_type,
            section_id: app.section_id,
        });
        Ok(())
    }

    fn register_reference(&mut self, site_id: &str, id: &WitnessId) -> Result<()> {
        match &mut self.list_wit {
            Some(list) => {
                if !list.contains(id) {
                    if self.opts.strict_witnesses {
                        return Err(Error::site(site_id, format!("witness {id} is not declared in <listWit>")));
                    }
                    self.warnings.push(format!(
                        "apparatus entry {site_id}: witness {id} not declared in <listWit>; registered"
                    ));
                    list.insert(Witness {
                        id: id.clone(),
                        display_name: None,
                    })?;
                }
            }
            None => {
                if !self.referenced.contains(id) {
                    self.referenced.insert(Witness {
                        id: id.clone(),
                        display_name: None,
                    })?;
                }
            }
        }
        Ok(())
    }
}

/// Parses a TEI document into a witness registry and its ordered variant sites.
///
/// `<listWit>` must precede the apparatus entries that reference it; a document
/// without one gets a registry built from every `@wit` pointer in order of
/// first appearance.
pub fn parse_tei(xml: &[u8], opts: &ParseOptions) -> Result<Warned<ApparatusDoc>> {
    let text = std::str::from_utf8(xml).map_err(|e| {
        let (line, column) = line_col(xml, e.valid_up_to());
        Error::Xml {
            line,
            column,
            message: "input is not valid UTF-8".into(),
        }
    })?;
    let mut reader = Reader::from_str(text);
    reader.config_mut().check_end_names = true;

    let mut st = ParseState {
        bytes: xml,
        opts,
        warnings: Vec::new(),
        list_wit: None,
        referenced: WitnessRegistry::new(),
        witness: None,
        divs: Vec::new(),
        app: None,
        sites: Vec::new(),
        lemma_less: 0,
    };
    let mut depth = 0usize;
    let mut saw_root = false;

    loop {
        let offset = reader.buffer_position() as usize;
        let event = reader.read_event().map_err(|e| {
            let pos = reader.error_position() as usize;
            st.xml_err(pos, e.to_string())
        })?;
        match event {
            Event::Start(e) => {
                depth += 1;
                saw_root = true;
                st.start(&e, depth, offset, false)?;
            }
            Event::Empty(e) => {
                saw_root = true;
                st.start(&e, depth + 1, offset, true)?;
            }
            Event::End(_) => {
                st.end(depth, offset)?;
                depth = depth.saturating_sub(1);
            }
            Event::Text(t) => {
                let s = t.unescape().map_err(|e| st.xml_err(offset, e.to_string()))?;
                st.text(&s);
            }
            Event::CData(t) => {
                let s = String::from_utf8_lossy(&t.into_inner()).into_owned();
                st.text(&s);
            }
            Event::Eof => break,
            _ => {}
        }
    }
    if depth != 0 {
        return Err(st.xml_err(xml.len(), "unexpected end of document: unclosed element"));
    }
    if !saw_root {
        return Err(st.xml_err(0, "no root element"));
    }
    if st.lemma_less > 0 {
        st.warnings.push(format!(
            "{} apparatus entries have no <lem>; their first <rdg> is used as the base reading",
            st.lemma_less
        ));
    }

    let registry = st.list_wit.take().unwrap_or(st.referenced);
    let doc = ApparatusDoc {
        registry,
        sites: st.sites,
        source_path: opts.source_path.clone(),
    };
    debug_assert!(doc.validate().is_ok());
    Ok(Warned::new(doc, st.warnings))
}

/// Keeps the sites matching `filter`, re-indexing ordinals. The registry is unchanged.
pub fn filter_sites(doc: &ApparatusDoc, filter: &SiteFilter) -> Warned<ApparatusDoc> {
    let mut sites: Vec<VariantSite> = doc.sites.iter().filter(|s| filter.matches(s)).cloned().collect();
    for (i, s) in sites.iter_mut().enumerate() {
        s.ordinal = i;
    }
    let mut warnings = Vec::new();
    if sites.is_empty() && !filter.is_empty() && !doc.sites.is_empty() {
        warnings.push(format!(
            "site filter (section {:?}, types {:?}) matched no apparatus entries",
            filter.section, filter.var_types
        ));
    }
    Warned::new(
        ApparatusDoc {
            registry: doc.registry.clone(),
            sites,
            source_path: doc.source_path.clone(),
        },
        warnings,
    )
}
