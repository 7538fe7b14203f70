//! C ABI over `stemma-core`.
//!
//! Objects are opaque handles created by `stemma_*` constructors and released
//! with the matching `*_free`. Every fallible call returns a [`StemmaStatus`];
//! on failure the message is available from [`stemma_last_error`] on the same
//! thread. Strings returned through `out` pointers are owned by the caller and
//! must be released with [`stemma_string_free`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use stemma_core::apparatus::{ParseOptions, SiteFilter};
use stemma_core::consensus::{consensus, ConsensusMethod, ConsensusOptions};
use stemma_core::layout::{equal_angle_layout, render_svg, LayoutOptions, LengthMode, RenderOptions};
use stemma_core::matrix::{read_matrix, write_matrix, CharacterMatrix, EncodeOptions, MissingPolicy, OverflowPolicy};
use stemma_core::parsimony::{fitch_score, search, SearchConfig, SearchMode};
use stemma_core::phylio::{parse_newick, phylip_string, NewickForest};
use stemma_core::pipeline::{cmd_run, extract_matrix, PipelineConfig};
use stemma_core::Error;

/// Result of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StemmaStatus {
    Ok = 0,
    /// Null pointer, bad UTF-8 or out-of-range argument.
    InvalidArgument = 1,
    Io = 2,
    Xml = 3,
    /// Apparatus, matrix or file-format validation failure.
    Validation = 4,
    Newick = 5,
    Tree = 6,
    Config = 7,
    /// A Rust panic was caught at the boundary.
    Internal = 8,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StemmaSearchMode {
    Auto = 0,
    Exhaustive = 1,
    Heuristic = 2,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StemmaConsensusMethod {
    Mre = 0,
    Majority = 1,
    Strict = 2,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StemmaLengthMode {
    Unit = 0,
    Changes = 1,
    Support = 2,
}

#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct StemmaExtractOptions {
    pub strict_witnesses: bool,
    /// Code silent witnesses with the lemma state instead of `?`.
    pub missing_as_lemma: bool,
    pub max_states: u32,
    /// Drop sites with too many readings instead of failing.
    pub drop_overflow: bool,
}

#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct StemmaSearchOptions {
    pub mode: StemmaSearchMode,
    pub replicates: u32,
    pub seed: u64,
    pub max_trees: u32,
    pub auto_threshold: u32,
    pub force: bool,
}

/// Opaque character matrix.
pub struct StemmaMatrix(CharacterMatrix);

/// Opaque list of unrooted trees.
pub struct StemmaForest(NewickForest);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> StemmaStatus {
    match e {
        Error::Io { .. } => StemmaStatus::Io,
        Error::Xml { .. } => StemmaStatus::Xml,
        Error::Newick { .. } => StemmaStatus::Newick,
        Error::Tree(_) | Error::LeafMismatch { .. } => StemmaStatus::Tree,
        Error::Config(_) => StemmaStatus::Config,
        _ => StemmaStatus::Validation,
    }
}

struct Fail(StemmaStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail(status_of(&e), e.to_string())
    }
}

fn invalid(msg: &str) -> Fail {
    Fail(StemmaStatus::InvalidArgument, msg.to_string())
}

/// Runs `f`, turning errors and panics into a status plus last-error message.
fn guard(f: impl FnOnce() -> Result<(), Fail>) -> StemmaStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            LAST_ERROR.with(|e| *e.borrow_mut() = None);
            StemmaStatus::Ok
        }
        Ok(Err(Fail(status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal error".into());
            StemmaStatus::Internal
        }
    }
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, Fail> {
    if p.is_null() {
        return Err(invalid(&format!("{what} is null")));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| invalid(&format!("{what} is not valid UTF-8")))
}

unsafe fn ref_arg<'a, T>(p: *const T, what: &str) -> Result<&'a T, Fail> {
    p.as_ref().ok_or_else(|| invalid(&format!("{what} is null")))
}

unsafe fn put<T>(out: *mut T, value: T, what: &str) -> Result<(), Fail> {
    if out.is_null() {
        return Err(invalid(&format!("{what} is null")));
    }
    out.write(value);
    Ok(())
}

unsafe fn put_string(out: *mut *mut c_char, s: String) -> Result<(), Fail> {
    let c = CString::new(s).map_err(|_| invalid("output contains a NUL byte"))?;
    put(out, c.into_raw(), "out")
}

/// Message of the last failed call on this thread, or null. Valid until the
/// next call into this library on the same thread.
#[no_mangle]
pub extern "C" fn stemma_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn stemma_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Releases a string returned by this library. Null is ignored.
///
/// # Safety
/// `s` must come from this library and not have been freed.
#[no_mangle]
pub unsafe extern "C" fn stemma_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

#[no_mangle]
pub extern "C" fn stemma_extract_options_default() -> StemmaExtractOptions {
    let d = EncodeOptions::default();
    StemmaExtractOptions {
        strict_witnesses: false,
        missing_as_lemma: d.policy == MissingPolicy::Lemma,
        max_states: d.max_states as u32,
        drop_overflow: d.on_overflow == OverflowPolicy::Drop,
    }
}

#[no_mangle]
pub extern "C" fn stemma_search_options_default() -> StemmaSearchOptions {
    let d = SearchConfig::default();
    StemmaSearchOptions {
        mode: StemmaSearchMode::Auto,
        replicates: d.replicates as u32,
        seed: d.seed,
        max_trees: d.max_trees as u32,
        auto_threshold: d.auto_threshold as u32,
        force: d.force,
    }
}

/// Parses TEI bytes and encodes them as a character matrix.
///
/// # Safety
/// `xml` must point to `len` readable bytes; `opts` may be null for defaults;
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn stemma_matrix_from_tei(
    xml: *const u8,
    len: usize,
    opts: *const StemmaExtractOptions,
    out: *mut *mut StemmaMatrix,
) -> StemmaStatus {
    guard(|| {
        if xml.is_null() {
            return Err(invalid("xml is null"));
        }
        let bytes = std::slice::from_raw_parts(xml, len);
        let o = opts.as_ref().copied().unwrap_or_else(|| stemma_extract_options_default());
        let parse = ParseOptions {
            strict_witnesses: o.strict_witnesses,
            source_path: String::new(),
        };
        let encode = EncodeOptions {
            policy: if o.missing_as_lemma {
                MissingPolicy::Lemma
            } else {
                MissingPolicy::Missing
            },
            max_states: o.max_states as usize,
            on_overflow: if o.drop_overflow {
                OverflowPolicy::Drop
            } else {
                OverflowPolicy::Error
            },
        };
        let m = extract_matrix(bytes, &parse, &SiteFilter::default(), &encode)?.logged();
        put(out, Box::into_raw(Box::new(StemmaMatrix(m))), "out")
    })
}

/// Reads `matrix.tsv` and `sites.tsv` from a directory.
///
/// # Safety
/// `dir` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn stemma_matrix_read(dir: *const c_char, out: *mut *mut StemmaMatrix) -> StemmaStatus {
    guard(|| {
        let dir = str_arg(dir, "dir")?;
        let m = read_matrix(&PathBuf::from(dir))?;
        put(out, Box::into_raw(Box::new(StemmaMatrix(m))), "out")
    })
}

/// Writes `matrix.tsv` and `sites.tsv` into a directory.
///
/// # Safety
/// `m` must be a live matrix handle; `dir` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn stemma_matrix_write(m: *const StemmaMatrix, dir: *const c_char) -> StemmaStatus {
    guard(|| {
        let m = ref_arg(m, "matrix")?;
        let dir = str_arg(dir, "dir")?;
        write_matrix(&m.0, &PathBuf::from(dir))?;
        Ok(())
    })
}

/// Number of taxa, or 0 for null.
///
/// # Safety
/// `m` must be null or a live matrix handle.
#[no_mangle]
pub unsafe extern "C" fn stemma_matrix_taxon_count(m: *const StemmaMatrix) -> usize {
    m.as_ref().map_or(0, |m| m.0.taxon_count())
}

/// Number of sites, or 0 for null.
///
/// # Safety
/// `m` must be null or a live matrix handle.
#[no_mangle]
pub unsafe extern "C" fn stemma_matrix_site_count(m: *const StemmaMatrix) -> usize {
    m.as_ref().map_or(0, |m| m.0.site_count())
}

/// PHYLIP sequential text of the matrix.
///
/// # Safety
/// `m` must be a live matrix handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn stemma_matrix_to_phylip(m: *const StemmaMatrix, out: *mut *mut c_char) -> StemmaStatus {
    guard(|| {
        let m = ref_arg(m, "matrix")?;
        put_string(out, phylip_string(&m.0)?)
    })
}

/// # Safety
/// `m` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn stemma_matrix_free(m: *mut StemmaMatrix) {
    if !m.is_null() {
        drop(Box::from_raw(m));
    }
}

/// Most parsimonious trees for `m`. `best_score` may be null.
///
/// # Safety
/// `m` must be a live matrix handle; `opts` may be null for defaults; `out`
/// must be writable.
#[no_mangle]
pub unsafe extern "C" fn stemma_search(
    m: *const StemmaMatrix,
    opts: *const StemmaSearchOptions,
    out: *mut *mut StemmaForest,
    best_score: *mut u32,
) -> StemmaStatus {
    guard(|| {
        let m = ref_arg(m, "matrix")?;
        let o = opts.as_ref().copied().unwrap_or_else(|| stemma_search_options_default());
        let cfg = SearchConfig {
            mode: match o.mode {
                StemmaSearchMode::Auto => SearchMode::Auto,
                StemmaSearchMode::Exhaustive => SearchMode::Exhaustive,
                StemmaSearchMode::Heuristic => SearchMode::Heuristic,
            },
            replicates: o.replicates as usize,
            seed: o.seed,
            max_trees: o.max_trees as usize,
            auto_threshold: o.auto_threshold as usize,
            force: o.force,
        };
        let r = search(&m.0, &cfg)?;
        if !best_score.is_null() {
            best_score.write(r.best_score);
        }
        put(out, Box::into_raw(Box::new(StemmaForest(NewickForest::new(r.trees)))), "out")
    })
}

/// Parses one or more `;`-terminated Newick trees.
///
/// # Safety
/// `text` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn stemma_forest_parse(text: *const c_char, out: *mut *mut StemmaForest) -> StemmaStatus {
    guard(|| {
        let text = str_arg(text, "text")?;
        let f = parse_newick(text, None)?;
        put(out, Box::into_raw(Box::new(StemmaForest(f))), "out")
    })
}

/// Number of trees, or 0 for null.
///
/// # Safety
/// `f` must be null or a live forest handle.
#[no_mangle]
pub unsafe extern "C" fn stemma_forest_len(f: *const StemmaForest) -> usize {
    f.as_ref().map_or(0, |f| f.0.len())
}

/// Canonical Newick text, one tree per line.
///
/// # Safety
/// `f` must be a live forest handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn stemma_forest_to_newick(f: *const StemmaForest, out: *mut *mut c_char) -> StemmaStatus {
    guard(|| {
        let f = ref_arg(f, "forest")?;
        put_string(out, f.0.to_newick())
    })
}

fn tree_at(f: &StemmaForest, index: usize) -> Result<&stemma_core::UnrootedTree, Fail> {
    f.0.trees
        .get(index)
        .ok_or_else(|| invalid(&format!("tree index {index} out of range ({} trees)", f.0.len())))
}

/// Fitch score of tree `index` of `f` on `m`.
///
/// # Safety
/// `f` and `m` must be live handles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn stemma_fitch_score(
    f: *const StemmaForest,
    index: usize,
    m: *const StemmaMatrix,
    out: *mut u32,
) -> StemmaStatus {
    guard(|| {
        let f = ref_arg(f, "forest")?;
        let m = ref_arg(m, "matrix")?;
        let s = fitch_score(tree_at(f, index)?, &m.0)?;
        put(out, s, "out")
    })
}

/// Consensus of all trees in `f` as a one-tree forest.
///
/// # Safety
/// `f` must be a live forest handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn stemma_consensus(
    f: *const StemmaForest,
    method: StemmaConsensusMethod,
    dedup: bool,
    out: *mut *mut StemmaForest,
) -> StemmaStatus {
    guard(|| {
        let f = ref_arg(f, "forest")?;
        let opts = ConsensusOptions {
            method: match method {
                StemmaConsensusMethod::Mre => ConsensusMethod::Mre,
                StemmaConsensusMethod::Majority => ConsensusMethod::Majority,
                StemmaConsensusMethod::Strict => ConsensusMethod::Strict,
            },
            dedup,
            support_lengths: true,
        };
        let c = consensus(&f.0, &opts)?;
        put(out, Box::into_raw(Box::new(StemmaForest(NewickForest::new(vec![c.tree])))), "out")
    })
}

/// Equal-angle SVG drawing of tree `index`. `m` is required for
/// `STEMMA_LENGTH_MODE_CHANGES` and ignored otherwise (may be null).
///
/// # Safety
/// `f` must be a live forest handle, `m` null or a live matrix handle, `out`
/// writable.
#[no_mangle]
pub unsafe extern "C" fn stemma_forest_to_svg(
    f: *const StemmaForest,
    index: usize,
    mode: StemmaLengthMode,
    m: *const StemmaMatrix,
    out: *mut *mut c_char,
) -> StemmaStatus {
    guard(|| {
        let f = ref_arg(f, "forest")?;
        let opts = LayoutOptions {
            mode: match mode {
                StemmaLengthMode::Unit => LengthMode::Unit,
                StemmaLengthMode::Changes => LengthMode::Changes,
                StemmaLengthMode::Support => LengthMode::Support,
            },
            matrix: m.as_ref().map(|m| &m.0),
        };
        let e = equal_angle_layout(tree_at(f, index)?, &opts)?;
        put_string(out, render_svg(&e, &RenderOptions::default())?)
    })
}

/// # Safety
/// `f` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn stemma_forest_free(f: *mut StemmaForest) {
    if !f.is_null() {
        drop(Box::from_raw(f));
    }
}

/// Runs the full workflow from a run manifest. A non-null `out_dir`
/// overrides the manifest's output directory.
///
/// # Safety
/// `manifest_path` must be a NUL-terminated string; `out_dir` null or one.
#[no_mangle]
pub unsafe extern "C" fn stemma_run_manifest(
    manifest_path: *const c_char,
    out_dir: *const c_char,
    dry_run: bool,
) -> StemmaStatus {
    guard(|| {
        let path = str_arg(manifest_path, "manifest_path")?;
        let mut cfg = PipelineConfig::read_manifest(&PathBuf::from(path))?;
        if !out_dir.is_null() {
            cfg.out_dir = PathBuf::from(str_arg(out_dir, "out_dir")?);
        }
        cmd_run(&cfg, dry_run)?;
        Ok(())
    })
}
