//! Critical apparatus to parsimony trees.
//!
//! A TEI-encoded apparatus is coded as a character matrix, searched for most
//! parsimonious unrooted trees with the Fitch algorithm, summarized by a
//! consensus tree and drawn with the equal-angle layout as SVG.

pub mod apparatus;
pub mod consensus;
pub mod error;
pub mod io;
pub mod layout;
pub mod matrix;
pub mod parsimony;
pub mod phylio;
pub mod pipeline;
pub mod synth;
pub mod tree;

pub use apparatus::{parse_tei, ApparatusDoc, ParseOptions, SiteFilter, WitnessId};
pub use consensus::{consensus, ConsensusMethod, ConsensusOptions};
pub use error::{Error, Result, Warned};
pub use layout::{equal_angle_layout, render_svg, LayoutOptions, LengthMode, RenderOptions};
pub use matrix::{encode_matrix, CharacterMatrix, EncodeOptions, MissingPolicy, StateCode};
pub use parsimony::{fitch_score, search, SearchConfig, SearchMode, SearchResult};
pub use phylio::{parse_newick, NameMap, NewickForest};
pub use pipeline::PipelineConfig;
pub use tree::UnrootedTree;
