//! The end-to-end workflow as composable steps over an output directory.
//!
//! Every step computes all of its artifacts in memory before writing any of
//! them, so a validation failure leaves no partial files behind.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::apparatus::{filter_sites, parse_tei, ParseOptions, SiteFilter};
use crate::consensus::{consensus, split_table, Consensus, ConsensusMethod, ConsensusOptions};
use crate::error::{Error, Result, Warned};
use crate::io::{read_text, write_atomic};
use crate::layout::{equal_angle_layout, render_svg, LayoutOptions, LengthMode, RenderOptions};
use crate::matrix::{
    encode_matrix, matrix_tsv, read_matrix, sites_tsv, CharacterMatrix, EncodeOptions, MissingPolicy, OverflowPolicy,
    MATRIX_FILE, SITES_FILE,
};
use crate::parsimony::{report, search, SearchConfig, SearchMode, SearchResult};
use crate::phylio::{parse_newick, phylip_string, NameMap, NewickForest, NAMES_FILE};

pub const INFILE: &str = "infile";
pub const TREEFILE: &str = "treefile";
pub const REPORT_FILE: &str = "report.txt";
pub const CONSENSUS_FILE: &str = "consensus.nwk";
pub const SPLITS_FILE: &str = "splits.txt";
pub const SVG_FILE: &str = "tree.svg";
pub const MANIFEST_FILE: &str = "manifest.txt";

/// Every artifact written by a full run, in writing order.
pub const RUN_ARTIFACTS: [&str; 10] = [
    MATRIX_FILE,
    SITES_FILE,
    NAMES_FILE,
    INFILE,
    TREEFILE,
    REPORT_FILE,
    CONSENSUS_FILE,
    SPLITS_FILE,
    SVG_FILE,
    MANIFEST_FILE,
];

/// All options of a full run.
#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub input: PathBuf,
    pub out_dir: PathBuf,
    pub strict_witnesses: bool,
    pub filter: SiteFilter,
    pub encode: EncodeOptions,
    pub search: SearchConfig,
    pub consensus: ConsensusOptions,
    pub edge_length: LengthMode,
    pub render: RenderOptions,
    pub log_level: String,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            input: PathBuf::new(),
            out_dir: PathBuf::from("."),
            strict_witnesses: false,
            filter: SiteFilter::default(),
            encode: EncodeOptions::default(),
            search: SearchConfig::default(),
            consensus: ConsensusOptions::default(),
            edge_length: LengthMode::Support,
            render: RenderOptions::default(),
            log_level: "warn".into(),
        }
    }
}

fn parse_bool(key: &str, v: &str) -> Result<bool> {
    match v {
        "true" => Ok(true),
        "false" => Ok(false),
        _ => Err(Error::Config(format!("{key}: expected true or false, got {v:?}"))),
    }
}

fn parse_num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse()
        .map_err(|_| Error::Config(format!("{key}: invalid number {v:?}")))
}

/// Comma-separated type list; empty means no type filter.
pub fn parse_types(v: &str) -> Option<BTreeSet<String>> {
    let set: BTreeSet<String> = v
        .split(',')
        .map(str::trim)
        .filter(|t| !t.is_empty())
        .map(str::to_string)
        .collect();
    (!set.is_empty()).then_some(set)
}

const LOG_LEVELS: [&str; 6] = ["off", "error", "warn", "info", "debug", "trace"];

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        self.search.validate()?;
        if self.encode.max_states < 2 || self.encode.max_states > crate::matrix::MAX_CODABLE_STATES {
            return Err(Error::Config(format!(
                "max_states must be between 2 and {}, got {}",
                crate::matrix::MAX_CODABLE_STATES,
                self.encode.max_states
            )));
        }
        if !LOG_LEVELS.contains(&self.log_level.as_str()) {
            return Err(Error::Config(format!("unknown log level {:?}", self.log_level)));
        }
        let r = &self.render;
        if !(r.margin >= 0.0 && r.font_size > 0.0 && r.stroke_width > 0.0)
            || !(r.margin.is_finite() && r.font_size.is_finite() && r.stroke_width.is_finite())
        {
            return Err(Error::Config("margin must be >= 0, font size and stroke width > 0".into()));
        }
        Ok(())
    }

    fn parse_options(&self) -> ParseOptions {
        ParseOptions {
            strict_witnesses: self.strict_witnesses,
            source_path: self.input.display().to_string(),
        }
    }

    /// `key = value` lines, one per option.
    pub fn to_manifest(&self) -> String {
        let mut out = String::new();
        let mut kv = |k: &str, v: &dyn std::fmt::Display| {
            let _ = writeln!(out, "{}", format!("{k} = {v}").trim_end());
        };
        let types = self
            .filter
            .var_types
            .as_ref()
            .map(|t| t.iter().cloned().collect::<Vec<_>>().join(","))
            .unwrap_or_default();
        kv("tool", &concat!("stemma ", env!("CARGO_PKG_VERSION")));
        kv("input", &self.input.display());
        kv("out_dir", &self.out_dir.display());
        kv("strict_witnesses", &self.strict_witnesses);
        kv("section", &self.filter.section.as_deref().unwrap_or(""));
        kv("types", &types);
        kv("missing", &self.encode.policy);
        kv("max_states", &self.encode.max_states);
        kv("on_overflow", &self.encode.on_overflow);
        kv("mode", &self.search.mode);
        kv("replicates", &self.search.replicates);
        kv("seed", &self.search.seed);
        kv("max_trees", &self.search.max_trees);
        kv("auto_threshold", &self.search.auto_threshold);
        kv("force", &self.search.force);
        kv("method", &self.consensus.method);
        kv("dedup", &self.consensus.dedup);
        kv("support_lengths", &self.consensus.support_lengths);
        kv("edge_length", &self.edge_length);
        kv("margin", &self.render.margin);
        kv("font_size", &self.render.font_size);
        kv("stroke_width", &self.render.stroke_width);
        kv("support_labels", &self.render.support_labels);
        kv("log_level", &self.log_level);
        out
    }

    /// Inverse of [`Self::to_manifest`]. Keys not present keep their defaults;
    /// unknown keys are an error.
    pub fn from_manifest(text: &str) -> Result<Self> {
        let mut cfg = PipelineConfig::default();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::format("manifest", format!("line {}: expected key = value", i + 1)))?;
            let (k, v) = (k.trim(), v.trim());
            match k {
                "tool" => {}
                "input" => cfg.input = PathBuf::from(v),
                "out_dir" => cfg.out_dir = PathBuf::from(v),
                "strict_witnesses" => cfg.strict_witnesses = parse_bool(k, v)?,
                "section" => cfg.filter.section = (!v.is_empty()).then(|| v.to_string()),
                "types" => cfg.filter.var_types = parse_types(v),
                "missing" => cfg.encode.policy = v.parse::<MissingPolicy>()?,
                "max_states" => cfg.encode.max_states = parse_num(k, v)?,
                "on_overflow" => cfg.encode.on_overflow = v.parse::<OverflowPolicy>()?,
                "mode" => cfg.search.mode = v.parse::<SearchMode>()?,
                "replicates" => cfg.search.replicates = parse_num(k, v)?,
                "seed" => cfg.search.seed = parse_num(k, v)?,
                "max_trees" => cfg.search.max_trees = parse_num(k, v)?,
                "auto_threshold" => cfg.search.auto_threshold = parse_num(k, v)?,
                "force" => cfg.search.force = parse_bool(k, v)?,
                "method" => cfg.consensus.method = v.parse::<ConsensusMethod>()?,
                "dedup" => cfg.consensus.dedup = parse_bool(k, v)?,
                "support_lengths" => cfg.consensus.support_lengths = parse_bool(k, v)?,
                "edge_length" => cfg.edge_length = v.parse::<LengthMode>()?,
                "margin" => cfg.render.margin = parse_num(k, v)?,
                "font_size" => cfg.render.font_size = parse_num(k, v)?,
                "stroke_width" => cfg.render.stroke_width = parse_num(k, v)?,
                "support_labels" => cfg.render.support_labels = parse_bool(k, v)?,
                "log_level" => cfg.log_level = v.to_string(),
                _ => return Err(Error::format("manifest", format!("line {}: unknown key {k:?}", i + 1))),
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn read_manifest(path: &Path) -> Result<Self> {
        Self::from_manifest(&read_text(path)?)
    }
}

fn write_all(dir: &Path, files: &[(&str, &[u8])]) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for (name, bytes) in files {
        write_atomic(&dir.join(name), bytes)?;
    }
    Ok(())
}

/// Parse, filter and encode a TEI document.
pub fn extract_matrix(
    xml: &[u8],
    parse: &ParseOptions,
    filter: &SiteFilter,
    encode: &EncodeOptions,
) -> Result<Warned<CharacterMatrix>> {
    let mut warnings = Vec::new();
    let parsed = parse_tei(xml, parse)?;
    warnings.extend(parsed.warnings);
    let doc = if filter.is_empty() {
        parsed.value
    } else {
        let before = parsed.value.sites.len();
        let f = filter_sites(&parsed.value, filter);
        warnings.extend(f.warnings);
        log::info!("site filter kept {} of {} sites", f.value.sites.len(), before);
        f.value
    };
    let enc = encode_matrix(&doc, encode)?;
    warnings.extend(enc.warnings);
    for d in &enc.value.dropped {
        log::info!("site {} dropped: {}", d.site_id, d.reason);
    }
    Ok(Warned::new(enc.value.matrix, warnings))
}

/// Artifacts of the extraction step.
#[derive(Debug, Clone)]
pub struct Extracted {
    pub matrix: CharacterMatrix,
    pub names: NameMap,
}

fn extracted_files(e: &Extracted) -> [(&'static str, String); 3] {
    [
        (MATRIX_FILE, matrix_tsv(&e.matrix)),
        (SITES_FILE, sites_tsv(&e.matrix)),
        (NAMES_FILE, e.names.to_tsv()),
    ]
}

fn extract_in_memory(xml: &[u8], cfg: &PipelineConfig) -> Result<Extracted> {
    let matrix = extract_matrix(xml, &cfg.parse_options(), &cfg.filter, &cfg.encode)?.logged();
    let names = NameMap::for_matrix(&matrix)?;
    Ok(Extracted { matrix, names })
}

/// TEI file to `matrix.tsv`, `sites.tsv` and `names.tsv` in `cfg.out_dir`.
pub fn cmd_extract(cfg: &PipelineConfig) -> Result<Extracted> {
    cfg.validate()?;
    let xml = fs::read(&cfg.input).map_err(|e| Error::io(&cfg.input, e))?;
    let e = extract_in_memory(&xml, cfg)?;
    let files = extracted_files(&e);
    let refs: Vec<(&str, &[u8])> = files.iter().map(|(n, s)| (*n, s.as_bytes())).collect();
    write_all(&cfg.out_dir, &refs)?;
    Ok(e)
}

/// Matrix directory to a PHYLIP `infile` in `out_dir`.
pub fn cmd_to_phylip(matrix_dir: &Path, out_dir: &Path) -> Result<CharacterMatrix> {
    let m = read_matrix(matrix_dir)?;
    let text = phylip_string(&m)?;
    write_all(out_dir, &[(INFILE, text.as_bytes())])?;
    Ok(m)
}

fn search_files(m: &CharacterMatrix, cfg: &SearchConfig) -> Result<(SearchResult, String, String)> {
    let r = search(m, cfg)?;
    let treefile = NewickForest::new(r.trees.clone()).to_newick();
    let rep = report(m, cfg, &r);
    Ok((r, treefile, rep))
}

/// Matrix directory to `treefile` and `report.txt` in `out_dir`.
pub fn cmd_search(matrix_dir: &Path, out_dir: &Path, cfg: &SearchConfig) -> Result<SearchResult> {
    cfg.validate()?;
    let m = read_matrix(matrix_dir)?;
    let (r, treefile, rep) = search_files(&m, cfg)?;
    write_all(out_dir, &[(TREEFILE, treefile.as_bytes()), (REPORT_FILE, rep.as_bytes())])?;
    Ok(r)
}

fn consensus_files(forest: &NewickForest, opts: &ConsensusOptions) -> Result<(Consensus, String, String)> {
    let c = consensus(forest, opts)?;
    let nwk = NewickForest::new(vec![c.tree.clone()]).to_newick();
    let table = split_table(&c);
    Ok((c, nwk, table))
}

/// Newick forest to `consensus.nwk` and `splits.txt` in `out_dir`.
pub fn cmd_consense(
    treefile: &Path,
    names: Option<&NameMap>,
    out_dir: &Path,
    opts: &ConsensusOptions,
) -> Result<Consensus> {
    let text = read_text(treefile)?;
    let forest = parse_newick(&text, names)?;
    let (c, nwk, table) = consensus_files(&forest, opts)?;
    write_all(out_dir, &[(CONSENSUS_FILE, nwk.as_bytes()), (SPLITS_FILE, table.as_bytes())])?;
    Ok(c)
}

fn draw_svg(
    forest: &NewickForest,
    mode: LengthMode,
    matrix: Option<&CharacterMatrix>,
    render: &RenderOptions,
) -> Result<String> {
    let tree = forest
        .trees
        .first()
        .ok_or_else(|| Error::Invalid("no tree to draw".into()))?;
    if forest.len() > 1 {
        log::warn!("drawing the first of {} trees", forest.len());
    }
    let e = equal_angle_layout(tree, &LayoutOptions { mode, matrix })?;
    render_svg(&e, render)
}

/// First tree of a Newick file to `tree.svg` in `out_dir`.
pub fn cmd_draw(
    newick: &Path,
    names: Option<&NameMap>,
    out_dir: &Path,
    mode: LengthMode,
    matrix: Option<&CharacterMatrix>,
    render: &RenderOptions,
) -> Result<String> {
    let text = read_text(newick)?;
    let forest = parse_newick(&text, names)?;
    let svg = draw_svg(&forest, mode, matrix, render)?;
    write_all(out_dir, &[(SVG_FILE, svg.as_bytes())])?;
    Ok(svg)
}

/// Summary of a full run.
#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub taxa: usize,
    pub sites: usize,
    pub search: Option<SearchResult>,
    pub consensus: Option<Consensus>,
}

/// The whole workflow into `cfg.out_dir`, plus a manifest of every option.
///
/// The drawn tree is the consensus, except with `changes` edge lengths, which
/// need a binary tree: then the first most parsimonious tree is drawn.
/// `dry_run` writes only the manifest.
pub fn cmd_run(cfg: &PipelineConfig, dry_run: bool) -> Result<RunOutcome> {
    cfg.validate()?;
    let manifest = cfg.to_manifest();
    if dry_run {
        write_all(&cfg.out_dir, &[(MANIFEST_FILE, manifest.as_bytes())])?;
        return Ok(RunOutcome {
            taxa: 0,
            sites: 0,
            search: None,
            consensus: None,
        });
    }
    let xml = fs::read(&cfg.input).map_err(|e| Error::io(&cfg.input, e))?;
    let ex = extract_in_memory(&xml, cfg)?;
    let [matrix_f, sites_f, names_f] = extracted_files(&ex);
    let m = &ex.matrix;
    let infile = phylip_string(m)?;
    let (r, treefile, rep) = search_files(m, &cfg.search)?;
    // later steps consume the serialized text, exactly as the separate commands do
    let forest = parse_newick(&treefile, None)?;
    let (c, nwk, table) = consensus_files(&forest, &cfg.consensus)?;
    let svg = match cfg.edge_length {
        LengthMode::Changes => draw_svg(&forest, cfg.edge_length, Some(m), &cfg.render)?,
        _ => draw_svg(&parse_newick(&nwk, None)?, cfg.edge_length, Some(m), &cfg.render)?,
    };
    write_all(
        &cfg.out_dir,
        &[
            (matrix_f.0, matrix_f.1.as_bytes()),
            (sites_f.0, sites_f.1.as_bytes()),
            (names_f.0, names_f.1.as_bytes()),
            (INFILE, infile.as_bytes()),
            (TREEFILE, treefile.as_bytes()),
            (REPORT_FILE, rep.as_bytes()),
            (CONSENSUS_FILE, nwk.as_bytes()),
            (SPLITS_FILE, table.as_bytes()),
            (SVG_FILE, svg.as_bytes()),
            (MANIFEST_FILE, manifest.as_bytes()),
        ],
    )?;
    Ok(RunOutcome {
        taxa: m.taxon_count(),
        sites: m.site_count(),
        search: Some(r),
        consensus: Some(c),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::SAMPLE_TEI;

    fn sample_cfg(dir: &Path) -> PipelineConfig {
        let input = dir.join("sample.xml");
        fs::write(&input, SAMPLE_TEI).unwrap();
        PipelineConfig {
            input,
            out_dir: dir.join("out"),
            ..Default::default()
        }
    }

    #[test]
    fn manifest_round_trip() {
        let mut cfg = PipelineConfig {
            input: "in.xml".into(),
            out_dir: "o".into(),
            ..Default::default()
        };
        cfg.filter.section = Some("ch2".into());
        cfg.filter.var_types = parse_types("minor,major");
        cfg.search.seed = 42;
        cfg.search.mode = SearchMode::Heuristic;
        cfg.consensus.method = ConsensusMethod::Strict;
        cfg.render.margin = 12.5;
        let text = cfg.to_manifest();
        assert!(text.contains("types = major,minor\n"));
        assert_eq!(PipelineConfig::from_manifest(&text).unwrap(), cfg);
    }

    #[test]
    fn manifest_rejects_bad_values() {
        assert!(PipelineConfig::from_manifest("mode = fast\n").is_err());
        assert!(PipelineConfig::from_manifest("nonsense = 1\n").is_err());
        assert!(PipelineConfig::from_manifest("replicates = 0\n").is_err());
        assert!(PipelineConfig::from_manifest("seed\n").is_err());
    }

    #[test]
    fn extract_sample() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = sample_cfg(dir.path());
        let e = cmd_extract(&cfg).unwrap();
        assert_eq!(e.matrix.taxon_count(), 5);
        for f in [MATRIX_FILE, SITES_FILE, NAMES_FILE] {
            assert!(cfg.out_dir.join(f).is_file());
        }
        let mut major = cfg.clone();
        major.filter.var_types = parse_types("major");
        major.out_dir = dir.path().join("major");
        let e2 = cmd_extract(&major).unwrap();
        assert!(e2.matrix.site_count() < e.matrix.site_count());
    }

    #[test]
    fn malformed_input_leaves_no_files() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = sample_cfg(dir.path());
        fs::write(&cfg.input, "<TEI><text><app>").unwrap();
        let err = cmd_extract(&cfg).unwrap_err();
        assert_eq!(err.exit_code(), 2);
        assert!(!cfg.out_dir.exists());
        cfg.input = dir.path().join("missing.xml");
        assert_eq!(cmd_extract(&cfg).unwrap_err().exit_code(), 1);
    }

    #[test]
    fn run_and_dry_run() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = sample_cfg(dir.path());
        cmd_run(&cfg, true).unwrap();
        let listed: Vec<_> = fs::read_dir(&cfg.out_dir).unwrap().collect();
        assert_eq!(listed.len(), 1);
        let out = cmd_run(&cfg, false).unwrap();
        assert_eq!(out.taxa, 5);
        for f in RUN_ARTIFACTS {
            assert!(fs::metadata(cfg.out_dir.join(f)).unwrap().len() > 0, "{f}");
        }
    }
}
