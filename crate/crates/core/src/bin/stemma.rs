use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use stemma_core::consensus::ConsensusMethod;
use stemma_core::error::{Error, Result};
use stemma_core::layout::LengthMode;
use stemma_core::matrix::{read_matrix, MissingPolicy, OverflowPolicy};
use stemma_core::parsimony::SearchMode;
use stemma_core::phylio::NameMap;
use stemma_core::pipeline::{self, parse_types, PipelineConfig};
use stemma_core::synth::synthetic_corpus;

/// TEI critical apparatus to parsimony trees, consensus and SVG drawings.
#[derive(Parser)]
#[command(name = "stemma", version)]
struct Cli {
    /// off, error, warn, info, debug or trace
    #[arg(long, global = true, default_value = "warn")]
    log_level: String,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// TEI apparatus to matrix.tsv, sites.tsv and names.tsv
    Extract {
        input: PathBuf,
        #[command(flatten)]
        out: OutArgs,
        #[command(flatten)]
        extract: ExtractArgs,
    },
    /// Matrix directory to a PHYLIP infile
    ToPhylip {
        matrix_dir: PathBuf,
        #[command(flatten)]
        out: OutArgs,
    },
    /// Most parsimonious trees for a matrix directory
    Search {
        matrix_dir: PathBuf,
        #[command(flatten)]
        out: OutArgs,
        #[command(flatten)]
        search: SearchArgs,
    },
    /// Consensus of a Newick tree file
    Consense {
        treefile: PathBuf,
        #[command(flatten)]
        out: OutArgs,
        #[command(flatten)]
        names: NamesArg,
        #[command(flatten)]
        consense: ConsenseArgs,
    },
    /// Equal-angle SVG drawing of the first tree in a Newick file
    Draw {
        newick: PathBuf,
        #[command(flatten)]
        out: OutArgs,
        #[command(flatten)]
        names: NamesArg,
        #[command(flatten)]
        draw: DrawArgs,
        /// Matrix directory, needed for --edge-length changes
        #[arg(long)]
        matrix: Option<PathBuf>,
    },
    /// All steps in one output directory, with a manifest of every option
    Run {
        /// TEI input (may come from --manifest instead)
        input: Option<PathBuf>,
        #[command(flatten)]
        out: OutArgs,
        /// Take options from a manifest written by an earlier run
        #[arg(long)]
        manifest: Option<PathBuf>,
        /// Write the manifest only
        #[arg(long)]
        dry_run: bool,
        #[command(flatten)]
        extract: ExtractArgs,
        #[command(flatten)]
        search: SearchArgs,
        #[command(flatten)]
        consense: ConsenseArgs,
        #[command(flatten)]
        draw: DrawArgs,
    },
    /// Write a synthetic 30-witness TEI tradition
    Synth {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Output file (standard output when omitted)
        #[arg(long)]
        output: Option<PathBuf>,
    },
}

#[derive(Args)]
struct OutArgs {
    /// Output directory
    #[arg(short = 'o', long = "out-dir", env = "STEMMA_OUT_DIR")]
    out_dir: Option<PathBuf>,
}

impl OutArgs {
    fn dir(&self) -> PathBuf {
        self.out_dir.clone().unwrap_or_else(|| PathBuf::from("."))
    }
}

#[derive(Args)]
struct NamesArg {
    /// names.tsv mapping PHYLIP names back to sigla
    #[arg(long)]
    names: Option<PathBuf>,
}

impl NamesArg {
    fn load(&self) -> Result<Option<NameMap>> {
        self.names.as_deref().map(NameMap::read).transpose()
    }
}

#[derive(Args)]
struct ExtractArgs {
    /// Reject witnesses missing from <listWit>
    #[arg(long)]
    strict_witnesses: bool,
    /// Keep only sites in this section
    #[arg(long)]
    section: Option<String>,
    /// Keep only sites of these types (comma-separated)
    #[arg(long = "type")]
    types: Option<String>,
    /// Coding of silent witnesses: missing or lemma
    #[arg(long)]
    missing: Option<MissingPolicy>,
    #[arg(long)]
    max_states: Option<usize>,
    /// Sites with too many readings: error or drop
    #[arg(long)]
    on_overflow: Option<OverflowPolicy>,
}

#[derive(Args)]
struct SearchArgs {
    /// exhaustive, heuristic or auto
    #[arg(long)]
    mode: Option<SearchMode>,
    #[arg(long)]
    replicates: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    max_trees: Option<usize>,
    /// Largest taxon count searched exhaustively in auto mode
    #[arg(long)]
    auto_threshold: Option<usize>,
    /// Allow exhaustive search on large matrices
    #[arg(long)]
    force: bool,
}

#[derive(Args)]
struct ConsenseArgs {
    /// strict, majority or mre
    #[arg(long)]
    method: Option<ConsensusMethod>,
    /// Count each distinct topology once
    #[arg(long)]
    dedup: bool,
    /// Do not write support fractions as branch lengths
    #[arg(long)]
    no_support: bool,
}

#[derive(Args)]
struct DrawArgs {
    /// unit, changes or support
    #[arg(long)]
    edge_length: Option<LengthMode>,
    #[arg(long)]
    margin: Option<f64>,
    #[arg(long)]
    font_size: Option<f64>,
    #[arg(long)]
    stroke_width: Option<f64>,
    /// Print support values on internal edges
    #[arg(long)]
    support_labels: bool,
}

impl ExtractArgs {
    fn apply(&self, cfg: &mut PipelineConfig) {
        cfg.strict_witnesses |= self.strict_witnesses;
        if let Some(s) = &self.section {
            cfg.filter.section = Some(s.clone());
        }
        if let Some(t) = &self.types {
            cfg.filter.var_types = parse_types(t);
        }
        if let Some(p) = self.missing {
            cfg.encode.policy = p;
        }
        if let Some(k) = self.max_states {
            cfg.encode.max_states = k;
        }
        if let Some(o) = self.on_overflow {
            cfg.encode.on_overflow = o;
        }
    }
}

impl SearchArgs {
    fn apply(&self, cfg: &mut PipelineConfig) {
        let s = &mut cfg.search;
        if let Some(m) = self.mode {
            s.mode = m;
        }
        if let Some(r) = self.replicates {
            s.replicates = r;
        }
        if let Some(x) = self.seed {
            s.seed = x;
        }
        if let Some(t) = self.max_trees {
            s.max_trees = t;
        }
        if let Some(t) = self.auto_threshold {
            s.auto_threshold = t;
        }
        s.force |= self.force;
    }
}

impl ConsenseArgs {
    fn apply(&self, cfg: &mut PipelineConfig) {
        if let Some(m) = self.method {
            cfg.consensus.method = m;
        }
        cfg.consensus.dedup |= self.dedup;
        if self.no_support {
            cfg.consensus.support_lengths = false;
        }
    }
}

impl DrawArgs {
    fn apply(&self, cfg: &mut PipelineConfig) {
        if let Some(m) = self.edge_length {
            cfg.edge_length = m;
        }
        if let Some(x) = self.margin {
            cfg.render.margin = x;
        }
        if let Some(x) = self.font_size {
            cfg.render.font_size = x;
        }
        if let Some(x) = self.stroke_width {
            cfg.render.stroke_width = x;
        }
        cfg.render.support_labels |= self.support_labels;
    }
}

fn base_config(log_level: &str, out: &OutArgs) -> PipelineConfig {
    PipelineConfig {
        out_dir: out.dir(),
        log_level: log_level.to_string(),
        ..Default::default()
    }
}

fn execute(cli: Cli) -> Result<()> {
    let level = cli.log_level.clone();
    match cli.command {
        Command::Extract { input, out, extract } => {
            let mut cfg = base_config(&level, &out);
            cfg.input = input;
            extract.apply(&mut cfg);
            let e = pipeline::cmd_extract(&cfg)?;
            println!("{} taxa, {} sites", e.matrix.taxon_count(), e.matrix.site_count());
        }
        Command::ToPhylip { matrix_dir, out } => {
            let m = pipeline::cmd_to_phylip(&matrix_dir, &out.dir())?;
            println!("{} taxa, {} sites", m.taxon_count(), m.site_count());
        }
        Command::Search { matrix_dir, out, search } => {
            let mut cfg = base_config(&level, &out);
            search.apply(&mut cfg);
            let r = pipeline::cmd_search(&matrix_dir, &cfg.out_dir, &cfg.search)?;
            println!(
                "best score {}, {} tree(s){}",
                r.best_score,
                r.trees.len(),
                if r.capped { " (capped)" } else { "" }
            );
        }
        Command::Consense {
            treefile,
            out,
            names,
            consense,
        } => {
            let mut cfg = base_config(&level, &out);
            consense.apply(&mut cfg);
            let names = names.load()?;
            let c = pipeline::cmd_consense(&treefile, names.as_ref(), &cfg.out_dir, &cfg.consensus)?;
            println!("{} trees, {} splits kept", c.tally.total_trees, c.accepted.len());
        }
        Command::Draw {
            newick,
            out,
            names,
            draw,
            matrix,
        } => {
            let mut cfg = base_config(&level, &out);
            cfg.edge_length = LengthMode::Unit;
            draw.apply(&mut cfg);
            cfg.validate()?;
            let names = names.load()?;
            let m = matrix.as_deref().map(read_matrix).transpose()?;
            pipeline::cmd_draw(&newick, names.as_ref(), &cfg.out_dir, cfg.edge_length, m.as_ref(), &cfg.render)?;
            println!("{}", cfg.out_dir.join(pipeline::SVG_FILE).display());
        }
        Command::Run {
            input,
            out,
            manifest,
            dry_run,
            extract,
            search,
            consense,
            draw,
        } => {
            let mut cfg = match &manifest {
                Some(p) => PipelineConfig::read_manifest(p)?,
                None => base_config(&level, &out),
            };
            if let Some(dir) = &out.out_dir {
                cfg.out_dir = dir.clone();
            }
            if let Some(i) = input {
                cfg.input = i;
            }
            if cfg.input.as_os_str().is_empty() {
                return Err(Error::Config("no input file given".into()));
            }
            extract.apply(&mut cfg);
            search.apply(&mut cfg);
            consense.apply(&mut cfg);
            draw.apply(&mut cfg);
            let o = pipeline::cmd_run(&cfg, dry_run)?;
            if dry_run {
                println!("{}", cfg.out_dir.join(pipeline::MANIFEST_FILE).display());
            } else if let Some(r) = &o.search {
                println!(
                    "{} taxa, {} sites, best score {}, {} tree(s)",
                    o.taxa,
                    o.sites,
                    r.best_score,
                    r.trees.len()
                );
            }
        }
        Command::Synth { seed, output } => {
            let c = synthetic_corpus(seed);
            match output {
                Some(p) => stemma_core::io::write_atomic(Path::new(&p), c.xml.as_bytes())?,
                None => print!("{}", c.xml),
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = cli.log_level.parse().unwrap_or(log::LevelFilter::Warn);
    env_logger::Builder::new()
        .filter_level(level)
        .target(env_logger::Target::Stderr)
        .format_timestamp(None)
        .init();
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
