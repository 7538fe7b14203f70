//! Witness × site character matrices and their TSV persistence.

use std::collections::BTreeSet;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use crate::apparatus::{ApparatusDoc, WitnessId};
use crate::error::{Error, Result, Warned};
use crate::io::{read_text, write_atomic};

pub const MATRIX_FILE: &str = "matrix.tsv";
pub const SITES_FILE: &str = "sites.tsv";

/// Ceiling on readings per site inherited from PHYLIP `pars`.
pub const DEFAULT_MAX_STATES: usize = 8;
/// Hard ceiling: one decimal digit per cell.
pub const MAX_CODABLE_STATES: usize = 10;

/// Coded reading at one site: `0..k` or [`StateCode::MISSING`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct StateCode(u8);

impl StateCode {
    pub const MISSING: StateCode = StateCode(u8::MAX);

    pub fn new(value: u8) -> Self {
        assert!((value as usize) < MAX_CODABLE_STATES, "state {value} is not digit-codable");
        StateCode(value)
    }

    pub fn is_missing(self) -> bool {
        self == Self::MISSING
    }

    /// The state value, `None` when missing.
    pub fn value(self) -> Option<u8> {
        (!self.is_missing()).then_some(self.0)
    }

    pub fn to_char(self) -> char {
        match self.value() {
            Some(v) => char::from(b'0' + v),
            None => '?',
        }
    }

    pub fn from_char(c: char) -> Option<Self> {
        match c {
            '?' => Some(Self::MISSING),
            '0'..='9' => Some(StateCode(c as u8 - b'0')),
            _ => None,
        }
    }
}

impl fmt::Display for StateCode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.to_char())
    }
}

/// How to code a witness that attests none of a site's readings.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum MissingPolicy {
    /// No data (`?`).
    #[default]
    Missing,
    /// Silent witnesses agree with the lemma (negative apparatus).
    Lemma,
}

impl FromStr for MissingPolicy {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "missing" => Ok(Self::Missing),
            "lemma" => Ok(Self::Lemma),
            _ => Err(Error::Config(format!("unknown missing-data policy {s:?} (expected missing|lemma)"))),
        }
    }
}

impl fmt::Display for MissingPolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Missing => "missing",
            Self::Lemma => "lemma",
        })
    }
}

/// What to do with a site that has more readings than `max_states`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum OverflowPolicy {
    #[default]
    Error,
    Drop,
}

impl FromStr for OverflowPolicy {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "error" => Ok(Self::Error),
            "drop" => Ok(Self::Drop),
            _ => Err(Error::Config(format!("unknown overflow policy {s:?} (expected error|drop)"))),
        }
    }
}

impl fmt::Display for OverflowPolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Error => "error",
            Self::Drop => "drop",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EncodeOptions {
    pub policy: MissingPolicy,
    pub max_states: usize,
    pub on_overflow: OverflowPolicy,
}

impl Default for EncodeOptions {
    fn default() -> Self {
        EncodeOptions {
            policy: MissingPolicy::Missing,
            max_states: DEFAULT_MAX_STATES,
            on_overflow: OverflowPolicy::Error,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SiteMeta {
    pub site_id: String,
    pub ordinal: usize,
    pub var_type: Option<String>,
    pub section_id: Option<String>,
    /// Reading texts indexed by state.
    pub readings: Vec<String>,
}

impl SiteMeta {
    pub fn state_count(&self) -> usize {
        self.readings.len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DropReason {
    Uninformative,
    TooManyStates,
}

impl fmt::Display for DropReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Uninformative => "fewer than two distinct states",
            Self::TooManyStates => "too many readings",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DroppedSite {
    pub site_id: String,
    pub reason: DropReason,
}

/// Witnesses × sites grid of coded readings.
///
/// Equality ignores `max_states`, which is an encoding-time ceiling and is not
/// persisted in the TSV files.
#[derive(Debug, Clone)]
pub struct CharacterMatrix {
    taxa: Vec<WitnessId>,
    sites: Vec<SiteMeta>,
    /// Row-major, one row per taxon.
    cells: Vec<Vec<StateCode>>,
    max_states: usize,
}

impl PartialEq for CharacterMatrix {
    fn eq(&self, other: &Self) -> bool {
        self.taxa == other.taxa && self.sites == other.sites && self.cells == other.cells
    }
}

impl CharacterMatrix {
    /// Builds a matrix after checking dimensions, uniqueness and state bounds.
    /// Use [`Self::check_coding`] for the stricter encoded-matrix invariants.
    pub fn new(
        taxa: Vec<WitnessId>,
        sites: Vec<SiteMeta>,
        cells: Vec<Vec<StateCode>>,
        max_states: usize,
    ) -> Result<Self> {
        if !(2..=MAX_CODABLE_STATES).contains(&max_states) {
            return Err(Error::Config(format!("max_states must be in 2..={MAX_CODABLE_STATES}, got {max_states}")));
        }
        if cells.len() != taxa.len() {
            return Err(Error::Invalid(format!("{} rows for {} taxa", cells.len(), taxa.len())));
        }
        let mut seen = BTreeSet::new();
        for t in &taxa {
            if !seen.insert(t) {
                return Err(Error::Invalid(format!("duplicate siglum {t}")));
            }
        }
        let mut seen = BTreeSet::new();
        for s in &sites {
            if !seen.insert(&s.site_id) {
                return Err(Error::Invalid(format!("duplicate site id {}", s.site_id)));
            }
            if s.readings.len() > max_states {
                return Err(Error::site(&s.site_id, format!("{} readings exceed max_states {max_states}", s.readings.len())));
            }
        }
        for (t, row) in taxa.iter().zip(&cells) {
            if row.len() != sites.len() {
                return Err(Error::Invalid(format!("row {t} has {} cells for {} sites", row.len(), sites.len())));
            }
            for (s, c) in sites.iter().zip(row) {
                if let Some(v) = c.value() {
                    if v as usize >= s.readings.len() {
                        return Err(Error::site(&s.site_id, format!("state {v} of {t} has no reading")));
                    }
                }
            }
        }
        Ok(CharacterMatrix {
            taxa,
            sites,
            cells,
            max_states,
        })
    }

    /// Convenience constructor from `(siglum, row)` pairs such as `("A601", "01?")`.
    /// Sites are named `c1, c2, ...` and get as many placeholder readings as the
    /// largest state used (at least two).
    pub fn from_rows<S: AsRef<str>>(rows: &[(S, S)]) -> Result<Self> {
        let width = rows.first().map_or(0, |r| r.1.as_ref().chars().count());
        let mut taxa = Vec::new();
        let mut cells = Vec::new();
        for (name, row) in rows {
            taxa.push(WitnessId::new(name.as_ref())?);
            let coded: Option<Vec<StateCode>> = row.as_ref().chars().map(StateCode::from_char).collect();
            let coded = coded.ok_or_else(|| Error::Invalid(format!("bad cell in row {}", name.as_ref())))?;
            cells.push(coded);
        }
        let sites = (0..width)
            .map(|j| {
                let top = cells
                    .iter()
                    .filter_map(|r: &Vec<StateCode>| r.get(j).and_then(|c| c.value()))
                    .max()
                    .unwrap_or(0) as usize;
                SiteMeta {
                    site_id: format!("c{}", j + 1),
                    ordinal: j,
                    var_type: None,
                    section_id: None,
                    readings: (0..(top + 1).max(2)).map(|s| s.to_string()).collect(),
                }
            })
            .collect();
        CharacterMatrix::new(taxa, sites, cells, MAX_CODABLE_STATES)
    }

    /// Contiguous coding (used states form `0..k`) and at least two states per site.
    pub fn check_coding(&self) -> Result<()> {
        for (j, s) in self.sites.iter().enumerate() {
            let used: BTreeSet<u8> = self.cells.iter().filter_map(|r| r[j].value()).collect();
            if used.len() < 2 {
                return Err(Error::site(&s.site_id, "fewer than two distinct states"));
            }
            if used.iter().enumerate().any(|(i, &v)| i != v as usize) {
                return Err(Error::site(&s.site_id, format!("non-contiguous states {used:?}")));
            }
        }
        Ok(())
    }

    pub fn taxa(&self) -> &[WitnessId] {
        &self.taxa
    }

    pub fn sites(&self) -> &[SiteMeta] {
        &self.sites
    }

    pub fn taxon_count(&self) -> usize {
        self.taxa.len()
    }

    pub fn site_count(&self) -> usize {
        self.sites.len()
    }

    pub fn max_states(&self) -> usize {
        self.max_states
    }

    pub fn cell(&self, taxon: usize, site: usize) -> StateCode {
        self.cells[taxon][site]
    }

    pub fn row(&self, taxon: usize) -> &[StateCode] {
        &self.cells[taxon]
    }

    pub fn taxon_index(&self, siglum: &str) -> Option<usize> {
        self.taxa.iter().position(|t| t.as_str() == siglum)
    }

    /// Number of distinct non-missing states at `site`.
    pub fn distinct_states(&self, site: usize) -> usize {
        self.cells
            .iter()
            .filter_map(|r| r[site].value())
            .collect::<BTreeSet<_>>()
            .len()
    }

    /// Copy with an extra taxon appended.
    pub fn with_taxon(&self, id: WitnessId, row: Vec<StateCode>) -> Result<Self> {
        let mut taxa = self.taxa.clone();
        let mut cells = self.cells.clone();
        taxa.push(id);
        cells.push(row);
        CharacterMatrix::new(taxa, self.sites.clone(), cells, self.max_states)
    }

    /// Copy restricted to the given taxa, in the given order.
    pub fn select_taxa(&self, idx: &[usize]) -> Result<Self> {
        let taxa = idx.iter().map(|&i| self.taxa[i].clone()).collect();
        let cells = idx.iter().map(|&i| self.cells[i].clone()).collect();
        CharacterMatrix::new(taxa, self.sites.clone(), cells, self.max_states)
    }

    /// Copy with taxa renamed through `f`.
    pub fn rename_taxa(&self, mut f: impl FnMut(&WitnessId) -> WitnessId) -> Result<Self> {
        let taxa = self.taxa.iter().map(&mut f).collect();
        CharacterMatrix::new(taxa, self.sites.clone(), self.cells.clone(), self.max_states)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Encoded {
    pub matrix: CharacterMatrix,
    pub dropped: Vec<DroppedSite>,
}

/// Codes each site's readings as states (lemma = 0, then document order) for
/// every witness in registry order.
pub fn encode_matrix(doc: &ApparatusDoc, opts: &EncodeOptions) -> Result<Warned<Encoded>> {
    if !(2..=MAX_CODABLE_STATES).contains(&opts.max_states) {
        return Err(Error::Config(format!(
            "max_states must be in 2..={MAX_CODABLE_STATES}, got {}",
            opts.max_states
        )));
    }
    if doc.registry.is_empty() {
        return Err(Error::Invalid("no witnesses: the taxon set is empty".into()));
    }
    let taxa: Vec<WitnessId> = doc.registry.ids().cloned().collect();
    let mut columns: Vec<Vec<StateCode>> = Vec::new();
    let mut sites = Vec::new();
    let mut dropped = Vec::new();

    for site in &doc.sites {
        if site.readings.len() > opts.max_states {
            match opts.on_overflow {
                OverflowPolicy::Error => {
                    return Err(Error::site(
                        &site.site_id,
                        format!(
                            "{} distinct readings exceed the ceiling of {} states",
                            site.readings.len(),
                            opts.max_states
                        ),
                    ))
                }
                OverflowPolicy::Drop => {
                    dropped.push(DroppedSite {
                        site_id: site.site_id.clone(),
                        reason: DropReason::TooManyStates,
                    });
                    continue;
                }
            }
        }
        let column: Vec<StateCode> = taxa
            .iter()
            .map(|t| match site.reading_of(t) {
                Some(r) => StateCode::new(r as u8),
                None => match opts.policy {
                    MissingPolicy::Missing => StateCode::MISSING,
                    MissingPolicy::Lemma => StateCode::new(0),
                },
            })
            .collect();
        let distinct: BTreeSet<u8> = column.iter().filter_map(|c| c.value()).collect();
        if distinct.len() < 2 {
            dropped.push(DroppedSite {
                site_id: site.site_id.clone(),
                reason: DropReason::Uninformative,
            });
            continue;
        }
        columns.push(column);
        sites.push(SiteMeta {
            site_id: site.site_id.clone(),
            ordinal: site.ordinal,
            var_type: site.var_type.clone(),
            section_id: site.section_id.clone(),
            readings: site.readings.iter().map(|r| r.text.clone()).collect(),
        });
    }

    let cells = (0..taxa.len())
        .map(|t| columns.iter().map(|c| c[t]).collect())
        .collect();
    let matrix = CharacterMatrix::new(taxa, sites, cells, opts.max_states)?;
    debug_assert!(matrix.check_coding().is_ok());

    let mut warnings = Vec::new();
    for reason in [DropReason::Uninformative, DropReason::TooManyStates] {
        let ids: Vec<&str> = dropped
            .iter()
            .filter(|d| d.reason == reason)
            .map(|d| d.site_id.as_str())
            .collect();
        if !ids.is_empty() {
            warnings.push(format!("dropped {} sites ({reason}): {}", ids.len(), ids.join(", ")));
        }
    }
    if matrix.site_count() == 0 {
        warnings.push("no informative sites remain".into());
    }
    Ok(Warned::new(Encoded { matrix, dropped }, warnings))
}

fn escape_field(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for c in s.chars() {
        match c {
            '\\' => out.push_str("\\\\"),
            '\t' => out.push_str("\\t"),
            '\n' => out.push_str("\\n"),
            '\r' => out.push_str("\\r"),
            _ => out.push(c),
        }
    }
    out
}

fn unescape_field(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    let mut chars = s.chars();
    while let Some(c) = chars.next() {
        if c != '\\' {
            out.push(c);
            continue;
        }
        match chars.next() {
            Some('t') => out.push('\t'),
            Some('n') => out.push('\n'),
            Some('r') => out.push('\r'),
            Some(other) => out.push(other),
            None => out.push('\\'),
        }
    }
    out
}

/// `matrix.tsv` contents: header `siglum` + site ids, then one row per taxon.
pub fn matrix_tsv(m: &CharacterMatrix) -> String {
    let mut out = String::from("siglum");
    for s in &m.sites {
        out.push('\t');
        out.push_str(&escape_field(&s.site_id));
    }
    out.push('\n');
    for (t, row) in m.taxa.iter().zip(&m.cells) {
        out.push_str(t.as_str());
        for c in row {
            out.push('\t');
            out.push(c.to_char());
        }
        out.push('\n');
    }
    out
}

/// `sites.tsv` contents: site_id, ordinal, var_type, section_id, readings...
pub fn sites_tsv(m: &CharacterMatrix) -> String {
    let mut out = String::new();
    for s in &m.sites {
        out.push_str(&escape_field(&s.site_id));
        out.push('\t');
        out.push_str(&s.ordinal.to_string());
        out.push('\t');
        out.push_str(&escape_field(s.var_type.as_deref().unwrap_or("")));
        out.push('\t');
        out.push_str(&escape_field(s.section_id.as_deref().unwrap_or("")));
        for r in &s.readings {
            out.push('\t');
            out.push_str(&escape_field(r));
        }
        out.push('\n');
    }
    out
}

pub fn write_matrix(m: &CharacterMatrix, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write_atomic(&dir.join(MATRIX_FILE), matrix_tsv(m).as_bytes())?;
    write_atomic(&dir.join(SITES_FILE), sites_tsv(m).as_bytes())?;
    Ok(())
}

fn lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.strip_suffix('\r').unwrap_or(l)))
        .filter(|(_, l)| !l.is_empty())
}

/// Parses the two TSV documents back into a matrix.
pub fn parse_matrix(matrix_text: &str, sites_text: &str) -> Result<CharacterMatrix> {
    let mut sites = Vec::new();
    for (lineno, line) in lines(sites_text) {
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() < 4 {
            return Err(Error::format(SITES_FILE, format!("line {lineno}: expected at least 4 fields")));
        }
        let ordinal = fields[1]
            .parse()
            .map_err(|_| Error::format(SITES_FILE, format!("line {lineno}: bad ordinal {:?}", fields[1])))?;
        let opt = |s: &str| (!s.is_empty()).then(|| unescape_field(s));
        sites.push(SiteMeta {
            site_id: unescape_field(fields[0]),
            ordinal,
            var_type: opt(fields[2]),
            section_id: opt(fields[3]),
            readings: fields[4..].iter().map(|f| unescape_field(f)).collect(),
        });
    }

    let mut rows = lines(matrix_text);
    let (_, header) = rows
        .next()
        .ok_or_else(|| Error::format(MATRIX_FILE, "missing header row"))?;
    let header: Vec<String> = header.split('\t').map(unescape_field).collect();
    if header.first().map(String::as_str) != Some("siglum") {
        return Err(Error::format(MATRIX_FILE, "header must start with 'siglum'"));
    }
    let site_ids = &header[1..];
    let mut seen = BTreeSet::new();
    for id in site_ids {
        if !seen.insert(id) {
            return Err(Error::format(MATRIX_FILE, format!("duplicate site id {id}")));
        }
    }
    if site_ids.len() != sites.len() || site_ids.iter().zip(&sites).any(|(a, b)| *a != b.site_id) {
        return Err(Error::format(MATRIX_FILE, format!("header site ids do not match {SITES_FILE}")));
    }

    let mut taxa = Vec::new();
    let mut cells = Vec::new();
    let mut sigla = BTreeSet::new();
    for (lineno, line) in rows {
        let fields: Vec<&str> = line.split('\t').collect();
        let siglum = fields[0];
        if fields.len() != site_ids.len() + 1 {
            return Err(Error::format(
                MATRIX_FILE,
                format!("row {siglum}: {} cells, expected {}", fields.len() - 1, site_ids.len()),
            ));
        }
        if !sigla.insert(siglum.to_string()) {
            return Err(Error::format(MATRIX_FILE, format!("duplicate siglum {siglum}")));
        }
        let mut row = Vec::with_capacity(site_ids.len());
        for (col, f) in fields[1..].iter().enumerate() {
            let mut chars = f.chars();
            let cell = match (chars.next().and_then(StateCode::from_char), chars.next()) {
                (Some(c), None) => c,
                _ => {
                    return Err(Error::format(
                        MATRIX_FILE,
                        format!("invalid cell {f:?} at line {lineno}, column {} (row {siglum})", col + 2),
                    ))
                }
            };
            row.push(cell);
        }
        taxa.push(WitnessId::new(siglum)?);
        cells.push(row);
    }
    let widest = sites.iter().map(|s| s.readings.len()).max().unwrap_or(0);
    let m = CharacterMatrix::new(taxa, sites, cells, widest.max(DEFAULT_MAX_STATES))
        .map_err(|e| Error::format(MATRIX_FILE, e.to_string()))?;
    m.check_coding().map_err(|e| Error::format(MATRIX_FILE, e.to_string()))?;
    Ok(m)
}

pub fn read_matrix(dir: &Path) -> Result<CharacterMatrix> {
    let matrix = read_text(&dir.join(MATRIX_FILE))?;
    let sites = read_text(&dir.join(SITES_FILE))?;
    parse_matrix(&matrix, &sites)
}
