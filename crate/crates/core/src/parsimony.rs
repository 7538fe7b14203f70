//! Unordered (Fitch) parsimony: scoring, ancestral reconstruction and the
//! search for most-parsimonious unrooted binary trees.
//!
//! Search works on a compact [`Topo`] whose nodes `0..n` are the matrix taxa
//! and whose nodes `n..2n-2` are internal. Site states are bit-packed: for
//! each state `k` there is one plane of `words` 64-bit words, bit `j` of which
//! says whether state `k` is in the Fitch set at site `j`. One union/intersect
//! step then handles 64 sites per word.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::fmt;
use std::str::FromStr;

use rand::RngCore;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::matrix::{CharacterMatrix, StateCode};
pub use crate::tree::UnrootedTree;
use crate::tree::TreeNode;

/// Largest taxon count `exhaustive_search` accepts without `force`.
pub const EXHAUSTIVE_SAFE_LIMIT: usize = 11;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SearchMode {
    Exhaustive,
    Heuristic,
    #[default]
    Auto,
}

impl FromStr for SearchMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "exhaustive" => Ok(Self::Exhaustive),
            "heuristic" => Ok(Self::Heuristic),
            "auto" => Ok(Self::Auto),
            _ => Err(Error::Config(format!("unknown search mode {s:?} (expected auto|exhaustive|heuristic)"))),
        }
    }
}

impl fmt::Display for SearchMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Exhaustive => "exhaustive",
            Self::Heuristic => "heuristic",
            Self::Auto => "auto",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SearchConfig {
    pub mode: SearchMode,
    pub replicates: usize,
    pub seed: u64,
    pub max_trees: usize,
    /// AUTO runs the exhaustive search up to this many taxa.
    pub auto_threshold: usize,
    /// Allow exhaustive search above [`EXHAUSTIVE_SAFE_LIMIT`] taxa.
    pub force: bool,
}

impl Default for SearchConfig {
    fn default() -> Self {
        SearchConfig {
            mode: SearchMode::Auto,
            replicates: 10,
            seed: 0,
            max_trees: 100,
            auto_threshold: 9,
            force: false,
        }
    }
}

impl SearchConfig {
    pub fn validate(&self) -> Result<()> {
        if self.replicates == 0 {
            return Err(Error::Config("replicates must be at least 1".into()));
        }
        if self.max_trees == 0 {
            return Err(Error::Config("max_trees must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SearchResult {
    pub best_score: u32,
    /// Co-optimal trees, canonical and sorted by canonical Newick.
    pub trees: Vec<UnrootedTree>,
    /// True when more optimal trees were found than `max_trees` allows.
    pub capped: bool,
    /// Per-site change counts on `trees[0]`.
    pub site_scores: Vec<u32>,
    /// The search actually run (never `Auto`).
    pub mode: SearchMode,
    /// Complete topologies scored.
    pub trees_examined: u64,
}

/// `(2n-5)!!`, the number of unrooted binary topologies on `n ≥ 3` leaves.
pub fn topology_count(n: usize) -> u64 {
    (3..n).map(|k| 2 * k as u64 - 3).product()
}

const NONE: usize = usize::MAX;

/// Binary unrooted topology over matrix taxa; nodes `0..n` are taxa.
#[derive(Debug, Clone, PartialEq, Eq)]
pub(crate) struct Topo {
    n: usize,
    adj: Vec<[usize; 3]>,
}

impl Topo {
    fn empty(n: usize) -> Self {
        Topo {
            n,
            adj: vec![[NONE; 3]; 2 * n - 2],
        }
    }

    /// Star on three taxa using internal node `n`.
    fn star(n: usize, a: usize, b: usize, c: usize) -> Self {
        let mut t = Topo::empty(n);
        let center = n;
        t.adj[center] = [a, b, c];
        for leaf in [a, b, c] {
            t.adj[leaf][0] = center;
        }
        t
    }

    fn replace(&mut self, node: usize, old: usize, new: usize) {
        let slot = self.adj[node].iter_mut().find(|x| **x == old).expect("edge exists");
        *slot = new;
    }

    /// Subdivides edge `x–y` with internal node `w` and hangs `leaf` from it.
    fn insert(&mut self, x: usize, y: usize, w: usize, leaf: usize) {
        self.replace(x, y, w);
        self.replace(y, x, w);
        self.adj[w] = [x, y, leaf];
        self.adj[leaf] = [w, NONE, NONE];
    }

    fn remove(&mut self, x: usize, y: usize, w: usize, leaf: usize) {
        self.replace(x, w, y);
        self.replace(y, w, x);
        self.adj[w] = [NONE; 3];
        self.adj[leaf] = [NONE; 3];
    }

    fn neighbors(&self, v: usize) -> impl Iterator<Item = usize> + '_ {
        self.adj[v].iter().copied().filter(|&x| x != NONE)
    }

    /// Edges `a < b` among nodes reachable from `root`, sorted.
    fn edges_from(&self, root: usize) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        let mut stack = vec![(root, NONE)];
        while let Some((v, parent)) = stack.pop() {
            for w in self.neighbors(v) {
                if w != parent {
                    out.push((v.min(w), v.max(w)));
                    stack.push((w, v));
                }
            }
        }
        out.sort_unstable();
        out
    }

    /// Internal edges `u < v` in sorted order.
    fn internal_edges(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for u in self.n..self.adj.len() {
            for v in self.neighbors(u) {
                if v > u {
                    out.push((u, v));
                }
            }
        }
        out.sort_unstable();
        out
    }

    /// The two nearest-neighbour interchanges across internal edge `u–v`.
    fn nni(&self, u: usize, v: usize) -> [Topo; 2] {
        let us: Vec<usize> = self.neighbors(u).filter(|&x| x != v).collect();
        let vs: Vec<usize> = self.neighbors(v).filter(|&x| x != u).collect();
        let b = us[1];
        let swap = |c: usize| {
            let mut t = self.clone();
            t.replace(u, b, c);
            t.replace(v, c, b);
            t.replace(b, u, v);
            t.replace(c, v, u);
            t
        };
        [swap(vs[0]), swap(vs[1])]
    }

    fn to_tree(&self, labels: &[String]) -> UnrootedTree {
        let mut nodes: Vec<TreeNode> = (0..self.adj.len())
            .map(|v| UnrootedTree::new_node((v < self.n).then(|| labels[v].clone())))
            .collect();
        for v in 0..self.adj.len() {
            for w in self.neighbors(v) {
                if v < w {
                    UnrootedTree::link(&mut nodes, v, w, None);
                }
            }
        }
        UnrootedTree::from_nodes_unchecked(nodes)
    }

    /// Maps a binary tree's leaves onto matrix taxa.
    fn from_tree(tree: &UnrootedTree, m: &CharacterMatrix) -> Result<Topo> {
        let leaf_taxa = leaf_taxon_map(tree, m)?;
        if !tree.is_binary() {
            return Err(Error::Tree("parsimony scoring needs a binary tree".into()));
        }
        let n = m.taxon_count();
        let mut id = vec![NONE; tree.node_count()];
        let mut next = n;
        for v in 0..tree.node_count() {
            id[v] = match leaf_taxa[v] {
                Some(t) => t,
                None => {
                    next += 1;
                    next - 1
                }
            };
        }
        let mut topo = Topo::empty(n);
        for v in 0..tree.node_count() {
            for (slot, w) in tree.neighbors(v).enumerate() {
                topo.adj[id[v]][slot] = id[w];
            }
        }
        Ok(topo)
    }
}

/// Node → taxon index for leaves; errors on any label/taxon mismatch.
fn leaf_taxon_map(tree: &UnrootedTree, m: &CharacterMatrix) -> Result<Vec<Option<usize>>> {
    let taxa: BTreeMap<&str, usize> = m.taxa().iter().enumerate().map(|(i, t)| (t.as_str(), i)).collect();
    let mut map = vec![None; tree.node_count()];
    let mut only_tree = Vec::new();
    let mut seen = BTreeSet::new();
    for (v, label) in tree.leaves() {
        match taxa.get(label) {
            Some(&t) => {
                map[v] = Some(t);
                seen.insert(t);
            }
            None => only_tree.push(label.to_string()),
        }
    }
    let only_matrix: Vec<String> = m
        .taxa()
        .iter()
        .enumerate()
        .filter(|(i, _)| !seen.contains(i))
        .map(|(_, t)| t.to_string())
        .collect();
    if !only_tree.is_empty() || !only_matrix.is_empty() {
        return Err(Error::LeafMismatch { only_tree, only_matrix });
    }
    Ok(map)
}

/// Bit-packed leaf state sets.
pub(crate) struct Packed {
    n: usize,
    words: usize,
    planes: usize,
    stride: usize,
    valid: Vec<u64>,
    leaves: Vec<u64>,
}

impl Packed {
    pub(crate) fn new(m: &CharacterMatrix) -> Self {
        let n = m.taxon_count();
        let sites = m.site_count();
        let words = sites.div_ceil(64).max(1);
        let planes = m.sites().iter().map(|s| s.state_count()).max().unwrap_or(1).max(1);
        let stride = planes * words;
        let mut valid = vec![0u64; words];
        for j in 0..sites {
            valid[j / 64] |= 1 << (j % 64);
        }
        let mut leaves = vec![0u64; n * stride];
        for t in 0..n {
            for (j, site) in m.sites().iter().enumerate() {
                let (w, bit) = (j / 64, 1u64 << (j % 64));
                match m.cell(t, j).value() {
                    Some(k) => leaves[t * stride + k as usize * words + w] |= bit,
                    None => {
                        for k in 0..site.state_count() {
                            leaves[t * stride + k * words + w] |= bit;
                        }
                    }
                }
            }
        }
        Packed {
            n,
            words,
            planes,
            stride,
            valid,
            leaves,
        }
    }

    pub(crate) fn scratch(&self) -> Vec<u64> {
        let mut buf = vec![0u64; (2 * self.n).max(3) * self.stride];
        buf[..self.leaves.len()].copy_from_slice(&self.leaves);
        buf
    }

    /// Fitch step writing the set of `out` from children `a`, `b`; returns
    /// the number of sites needing a change.
    #[inline]
    fn combine(&self, buf: &mut [u64], a: usize, b: usize, out: usize) -> u32 {
        let (words, planes) = (self.words, self.planes);
        let (ao, bo, oo) = (a * self.stride, b * self.stride, out * self.stride);
        let mut changes = 0;
        let mut inter = [0u64; 16];
        for w in 0..words {
            let mut any = 0u64;
            for k in 0..planes {
                let x = buf[ao + k * words + w] & buf[bo + k * words + w];
                inter[k] = x;
                any |= x;
            }
            let empty = !any & self.valid[w];
            changes += empty.count_ones();
            for k in 0..planes {
                let uni = buf[ao + k * words + w] | buf[bo + k * words + w];
                buf[oo + k * words + w] = inter[k] | (empty & uni);
            }
        }
        changes
    }

    /// Fitch score of the (possibly partial) tree containing leaf `root`.
    /// `order` is reused scratch for the traversal.
    fn score(&self, topo: &Topo, root: usize, buf: &mut [u64], order: &mut Vec<(usize, usize)>) -> u32 {
        let top = topo.adj[root][0];
        order.clear();
        order.push((top, root));
        let mut i = 0;
        while i < order.len() {
            let (v, parent) = order[i];
            if v >= self.n {
                for w in topo.neighbors(v) {
                    if w != parent {
                        order.push((w, v));
                    }
                }
            }
            i += 1;
        }
        let mut total = 0;
        for &(v, parent) in order.iter().rev() {
            if v >= self.n {
                let mut kids = topo.neighbors(v).filter(|&w| w != parent);
                let (a, b) = (kids.next().unwrap(), kids.next().unwrap());
                total += self.combine(buf, a, b, v);
            }
        }
        // final step across the virtual root on edge root–top; result slot is scratch node 2n-1
        let spare = buf.len() / self.stride - 1;
        total + self.combine(buf, root, top, spare)
    }
}

/// Reusable scoring context for one matrix.
pub(crate) struct Scorer<'m> {
    m: &'m CharacterMatrix,
    packed: Packed,
}

impl<'m> Scorer<'m> {
    pub(crate) fn new(m: &'m CharacterMatrix) -> Self {
        Scorer { m, packed: Packed::new(m) }
    }

    fn labels(&self) -> Vec<String> {
        self.m.taxa().iter().map(|t| t.to_string()).collect()
    }
}

struct Workspace {
    buf: Vec<u64>,
    order: Vec<(usize, usize)>,
}

impl Workspace {
    fn new(p: &Packed) -> Self {
        Workspace {
            buf: p.scratch(),
            order: Vec::new(),
        }
    }

    fn score(&mut self, p: &Packed, topo: &Topo, root: usize) -> u32 {
        p.score(topo, root, &mut self.buf, &mut self.order)
    }
}

/// Minimum number of state changes `tree` needs to explain `m`.
pub fn fitch_score(tree: &UnrootedTree, m: &CharacterMatrix) -> Result<u32> {
    let topo = Topo::from_tree(tree, m)?;
    if m.taxon_count() < 2 {
        return Ok(0);
    }
    let packed = Packed::new(m);
    let mut ws = Workspace::new(&packed);
    Ok(ws.score(&packed, &topo, 0))
}

/// Per-site state sets as small bitmasks (`bit k` = state k).
fn leaf_mask(m: &CharacterMatrix, taxon: usize, site: usize) -> u16 {
    match m.cell(taxon, site).value() {
        Some(k) => 1 << k,
        None => (1u16 << m.sites()[site].state_count()) - 1,
    }
}

/// One most-parsimonious reconstruction of every node's states.
#[derive(Debug, Clone, PartialEq)]
pub struct Reconstruction {
    /// `states[node][site]`, indexed like the tree's nodes.
    pub states: Vec<Vec<StateCode>>,
    /// Change count per edge, in `tree.edges()` order.
    pub edge_changes: Vec<(usize, usize, u32)>,
}

impl Reconstruction {
    pub fn total_changes(&self) -> u32 {
        self.edge_changes.iter().map(|e| e.2).sum()
    }

    pub fn changes_on(&self, a: usize, b: usize) -> Option<u32> {
        let (a, b) = (a.min(b), a.max(b));
        self.edge_changes.iter().find(|e| e.0 == a && e.1 == b).map(|e| e.2)
    }
}

/// Fitch preliminary sets for every node with a virtual root on the edge
/// of leaf `root`. Returns sets indexed `[node][site]`, the root set and
/// per-site change counts.
fn fitch_sets(
    tree: &UnrootedTree,
    m: &CharacterMatrix,
    leaf_taxa: &[Option<usize>],
    root: usize,
) -> (Vec<Vec<u16>>, Vec<u16>, Vec<u32>) {
    let sites = m.site_count();
    let top = tree.neighbors(root).next().expect("leaf has a neighbour");
    let mut sets = vec![vec![0u16; sites]; tree.node_count()];
    let mut per_site = vec![0u32; sites];
    let order = {
        let mut order = vec![(top, root)];
        let mut i = 0;
        while i < order.len() {
            let (v, parent) = order[i];
            for w in tree.neighbors(v) {
                if w != parent {
                    order.push((w, v));
                }
            }
            i += 1;
        }
        order
    };
    let step = |a: u16, b: u16, count: &mut u32| -> u16 {
        let x = a & b;
        if x != 0 {
            x
        } else {
            *count += 1;
            a | b
        }
    };
    for v in [root].into_iter().chain(order.iter().map(|o| o.0)) {
        if let Some(t) = leaf_taxa[v] {
            for (j, set) in sets[v].iter_mut().enumerate() {
                *set = leaf_mask(m, t, j);
            }
        }
    }
    for &(v, parent) in order.iter().rev() {
        if leaf_taxa[v].is_some() {
            continue;
        }
        let kids: Vec<usize> = tree.neighbors(v).filter(|&w| w != parent).collect();
        for j in 0..sites {
            let mut acc = sets[kids[0]][j];
            for &k in &kids[1..] {
                acc = step(acc, sets[k][j], &mut per_site[j]);
            }
            sets[v][j] = acc;
        }
    }
    let root_set: Vec<u16> = (0..sites)
        .map(|j| step(sets[root][j], sets[top][j], &mut per_site[j]))
        .collect();
    (sets, root_set, per_site)
}

/// Change count of every site on `tree`.
pub fn site_scores(tree: &UnrootedTree, m: &CharacterMatrix) -> Result<Vec<u32>> {
    let leaf_taxa = leaf_taxon_map(tree, m)?;
    if !tree.is_binary() {
        return Err(Error::Tree("parsimony scoring needs a binary tree".into()));
    }
    let root = tree.smallest_leaf();
    Ok(fitch_sets(tree, m, &leaf_taxa, root).2)
}

fn lowest(mask: u16) -> u8 {
    mask.trailing_zeros() as u8
}

/// Fitch top-down refinement. The virtual root sits on the edge of the leaf
/// with the smallest label and takes the lowest state of its set; every other
/// node keeps its parent's state when possible, else its lowest state.
pub fn ancestral_states(tree: &UnrootedTree, m: &CharacterMatrix) -> Result<Reconstruction> {
    let leaf_taxa = leaf_taxon_map(tree, m)?;
    if !tree.is_binary() {
        return Err(Error::Tree("ancestral reconstruction needs a binary tree".into()));
    }
    let sites = m.site_count();
    let root = tree.smallest_leaf();
    let top = tree.neighbors(root).next().unwrap();
    let (sets, root_set, _) = fitch_sets(tree, m, &leaf_taxa, root);

    let pick = |set: u16, parent: u8| if set & (1 << parent) != 0 { parent } else { lowest(set) };
    let mut assigned = vec![vec![0u8; sites]; tree.node_count()];
    for j in 0..sites {
        let r = lowest(root_set[j]);
        assigned[root][j] = pick(sets[root][j], r);
        assigned[top][j] = pick(sets[top][j], r);
    }
    let mut stack: Vec<(usize, usize)> = tree.neighbors(top).filter(|&w| w != root).map(|w| (w, top)).collect();
    while let Some((v, parent)) = stack.pop() {
        for j in 0..sites {
            assigned[v][j] = pick(sets[v][j], assigned[parent][j]);
        }
        stack.extend(tree.neighbors(v).filter(|&w| w != parent).map(|w| (w, v)));
    }

    let edge_changes = tree
        .edges()
        .iter()
        .map(|e| {
            let c = (0..sites).filter(|&j| assigned[e.a][j] != assigned[e.b][j]).count() as u32;
            (e.a, e.b, c)
        })
        .collect();
    let states = assigned
        .into_iter()
        .map(|row| row.into_iter().map(StateCode::new).collect())
        .collect();
    Ok(Reconstruction { states, edge_changes })
}

/// Co-optimal trees keyed by canonical Newick, bounded to `cap` entries
/// (the canonically smallest are kept).
struct TiePool {
    cap: usize,
    trees: BTreeMap<String, Topo>,
    overflowed: bool,
}

impl TiePool {
    fn new(cap: usize) -> Self {
        TiePool {
            cap,
            trees: BTreeMap::new(),
            overflowed: false,
        }
    }

    fn clear(&mut self) {
        self.trees.clear();
        self.overflowed = false;
    }

    /// Returns true if the tree was newly inserted.
    fn offer(&mut self, key: String, topo: &Topo) -> bool {
        if self.trees.contains_key(&key) {
            return false;
        }
        if self.trees.len() >= self.cap {
            self.overflowed = true;
            let last = self.trees.keys().next_back().unwrap();
            if key > *last {
                return false;
            }
            let last = last.clone();
            self.trees.remove(&last);
        }
        self.trees.insert(key, topo.clone());
        true
    }

    fn merge(&mut self, other: TiePool) {
        self.overflowed |= other.overflowed;
        for (k, t) in other.trees {
            self.offer(k, &t);
        }
    }
}

fn finish(
    scorer: &Scorer<'_>,
    best: u32,
    pool: TiePool,
    mode: SearchMode,
    examined: u64,
) -> Result<SearchResult> {
    let labels = scorer.labels();
    let trees: Vec<UnrootedTree> = pool.trees.values().map(|t| t.to_tree(&labels).canonicalize()).collect();
    debug_assert!(trees.iter().all(|t| fitch_score(t, scorer.m).ok() == Some(best)));
    let site_scores = site_scores(&trees[0], scorer.m)?;
    Ok(SearchResult {
        best_score: best,
        trees,
        capped: pool.overflowed,
        site_scores,
        mode,
        trees_examined: examined,
    })
}

fn check_taxa(m: &CharacterMatrix, min: usize) -> Result<()> {
    if m.taxon_count() < min {
        return Err(Error::Invalid(format!(
            "tree search needs at least {min} taxa, the matrix has {}",
            m.taxon_count()
        )));
    }
    Ok(())
}

/// Taxon indices sorted by siglum.
fn canonical_taxon_order(m: &CharacterMatrix) -> Vec<usize> {
    let mut order: Vec<usize> = (0..m.taxon_count()).collect();
    order.sort_by(|&a, &b| m.taxa()[a].cmp(&m.taxa()[b]));
    order
}

/// Visits every unrooted binary topology on the taxa of `m`, built by
/// inserting taxa in `order` onto each edge of the previous tree.
fn enumerate(n: usize, order: &[usize], mut visit: impl FnMut(&Topo)) {
    fn rec(t: &mut Topo, order: &[usize], k: usize, visit: &mut dyn FnMut(&Topo)) {
        if k == order.len() {
            visit(t);
            return;
        }
        let leaf = order[k];
        let w = t.n + k - 2;
        for (x, y) in t.edges_from(order[0]) {
            t.insert(x, y, w, leaf);
            rec(t, order, k + 1, visit);
            t.remove(x, y, w, leaf);
        }
    }
    let mut t = Topo::star(n, order[0], order[1], order[2]);
    rec(&mut t, order, 3, &mut visit);
}

/// Every unrooted binary topology on `labels`, canonicalized.
pub fn all_topologies(labels: &[String]) -> Vec<UnrootedTree> {
    assert!(labels.len() >= 3, "need at least three leaves");
    let order: Vec<usize> = (0..labels.len()).collect();
    let mut out = Vec::new();
    enumerate(labels.len(), &order, |t| out.push(t.to_tree(labels).canonicalize()));
    out
}

/// Scores all `(2n-5)!!` topologies and keeps every optimum (up to `max_trees`).
pub fn exhaustive_search(m: &CharacterMatrix, cfg: &SearchConfig) -> Result<SearchResult> {
    cfg.validate()?;
    check_taxa(m, 3)?;
    let n = m.taxon_count();
    if n > EXHAUSTIVE_SAFE_LIMIT && !cfg.force {
        return Err(Error::Config(format!(
            "exhaustive search over {n} taxa ({} topologies) refused; use force to override",
            topology_count(n)
        )));
    }
    let scorer = Scorer::new(m);
    let labels = scorer.labels();
    let order = canonical_taxon_order(m);
    let mut ws = Workspace::new(&scorer.packed);
    let mut best = u32::MAX;
    let mut pool = TiePool::new(cfg.max_trees);
    let mut examined = 0u64;
    enumerate(n, &order, |t| {
        examined += 1;
        let s = ws.score(&scorer.packed, t, order[0]);
        if s < best {
            best = s;
            pool.clear();
        }
        if s == best {
            pool.offer(t.to_tree(&labels).canonical_key(), t);
        }
    });
    finish(&scorer, best, pool, SearchMode::Exhaustive, examined)
}

/// Deterministic generator for replicate `replicate` of a run seeded with `seed`:
/// ChaCha8 keyed with the little-endian bytes of `seed` followed by those of
/// `replicate`, remaining key bytes zero.
pub fn replicate_rng(seed: u64, replicate: u64) -> ChaCha8Rng {
    let mut key = [0u8; 32];
    key[..8].copy_from_slice(&seed.to_le_bytes());
    key[8..16].copy_from_slice(&replicate.to_le_bytes());
    ChaCha8Rng::from_seed(key)
}

/// Fisher–Yates with `j = next_u64() mod (i + 1)`, high index first.
pub fn shuffle<T>(items: &mut [T], rng: &mut impl RngCore) {
    for i in (1..items.len()).rev() {
        let j = (rng.next_u64() % (i as u64 + 1)) as usize;
        items.swap(i, j);
    }
}

struct Replicate {
    best: u32,
    pool: TiePool,
    examined: u64,
}

/// Greedy stepwise addition: each taxon goes on the edge giving the lowest
/// score, ties to the first edge in sorted order.
fn stepwise_addition(p: &Packed, ws: &mut Workspace, order: &[usize], examined: &mut u64) -> Topo {
    let mut t = Topo::star(p.n, order[0], order[1], order[2]);
    for k in 3..order.len() {
        let leaf = order[k];
        let w = p.n + k - 2;
        let mut best: Option<(u32, (usize, usize))> = None;
        for (x, y) in t.edges_from(order[0]) {
            t.insert(x, y, w, leaf);
            let s = ws.score(p, &t, order[0]);
            *examined += 1;
            t.remove(x, y, w, leaf);
            if best.is_none_or(|(b, _)| s < b) {
                best = Some((s, (x, y)));
            }
        }
        let (_, (x, y)) = best.unwrap();
        t.insert(x, y, w, leaf);
    }
    t
}

/// NNI hill climbing followed by a breadth-first walk of the equal-score
/// plateau. Any strictly better tree met on the plateau restarts the climb.
fn climb(scorer: &Scorer<'_>, ws: &mut Workspace, start: Topo, cap: usize, examined: &mut u64) -> (u32, TiePool) {
    let p = &scorer.packed;
    let labels = scorer.labels();
    let mut cur = start;
    let mut cur_score = ws.score(p, &cur, 0);
    'outer: loop {
        let mut better: Option<(u32, Topo)> = None;
        for (u, v) in cur.internal_edges() {
            for nb in cur.nni(u, v) {
                let s = ws.score(p, &nb, 0);
                *examined += 1;
                if s < better.as_ref().map_or(cur_score, |b| b.0) {
                    better = Some((s, nb));
                }
            }
        }
        if let Some((s, t)) = better {
            cur = t;
            cur_score = s;
            continue;
        }

        let mut pool = TiePool::new(cap);
        pool.offer(cur.to_tree(&labels).canonical_key(), &cur);
        let mut queue = VecDeque::from([cur.clone()]);
        while let Some(t) = queue.pop_front() {
            for (u, v) in t.internal_edges() {
                for nb in t.nni(u, v) {
                    let s = ws.score(p, &nb, 0);
                    *examined += 1;
                    if s < cur_score {
                        cur = nb;
                        cur_score = s;
                        continue 'outer;
                    }
                    if s == cur_score {
                        let key = nb.to_tree(&labels).canonical_key();
                        if pool.trees.len() < cap {
                            if pool.offer(key, &nb) {
                                queue.push_back(nb);
                            }
                        } else if !pool.trees.contains_key(&key) {
                            pool.overflowed = true;
                        }
                    }
                }
            }
        }
        return (cur_score, pool);
    }
}

fn run_replicate(scorer: &Scorer<'_>, cfg: &SearchConfig, r: usize) -> Replicate {
    let mut rng = replicate_rng(cfg.seed, r as u64);
    let mut order: Vec<usize> = (0..scorer.m.taxon_count()).collect();
    shuffle(&mut order, &mut rng);
    let mut ws = Workspace::new(&scorer.packed);
    let mut examined = 0;
    let start = stepwise_addition(&scorer.packed, &mut ws, &order, &mut examined);
    let (best, pool) = climb(scorer, &mut ws, start, cfg.max_trees, &mut examined);
    Replicate { best, pool, examined }
}

/// Replicated random-addition-order stepwise addition plus NNI.
pub fn heuristic_search(m: &CharacterMatrix, cfg: &SearchConfig) -> Result<SearchResult> {
    cfg.validate()?;
    check_taxa(m, 4)?;
    let scorer = Scorer::new(m);
    let reps: Vec<Replicate> = (0..cfg.replicates)
        .into_par_iter()
        .map(|r| run_replicate(&scorer, cfg, r))
        .collect();
    let best = reps.iter().map(|r| r.best).min().unwrap();
    let examined = reps.iter().map(|r| r.examined).sum();
    let mut pool = TiePool::new(cfg.max_trees);
    for r in reps.into_iter().filter(|r| r.best == best) {
        pool.merge(r.pool);
    }
    finish(&scorer, best, pool, SearchMode::Heuristic, examined)
}

/// Dispatches on `cfg.mode`; AUTO is exhaustive up to `auto_threshold` taxa.
pub fn search(m: &CharacterMatrix, cfg: &SearchConfig) -> Result<SearchResult> {
    match cfg.mode {
        SearchMode::Exhaustive => exhaustive_search(m, cfg),
        SearchMode::Heuristic => heuristic_search(m, cfg),
        SearchMode::Auto if m.taxon_count() <= cfg.auto_threshold.max(3) => exhaustive_search(m, cfg),
        SearchMode::Auto => heuristic_search(m, cfg),
    }
}

/// Plain-text search summary.
pub fn report(m: &CharacterMatrix, cfg: &SearchConfig, r: &SearchResult) -> String {
    let mut out = String::new();
    out.push_str(&format!("mode = {}\n", r.mode));
    out.push_str(&format!("requested_mode = {}\n", cfg.mode));
    out.push_str(&format!("seed = {}\n", cfg.seed));
    out.push_str(&format!("replicates = {}\n", cfg.replicates));
    out.push_str(&format!("taxa = {}\n", m.taxon_count()));
    out.push_str(&format!("sites = {}\n", m.site_count()));
    out.push_str(&format!("best_score = {}\n", r.best_score));
    out.push_str(&format!("trees = {}\n", r.trees.len()));
    out.push_str(&format!("max_trees = {}\n", cfg.max_trees));
    out.push_str(&format!("capped = {}\n", r.capped));
    out.push_str(&format!("trees_examined = {}\n", r.trees_examined));
    out.push_str("\n# per-site changes on tree 1\nsite_id\tchanges\n");
    for (s, c) in m.sites().iter().zip(&r.site_scores) {
        out.push_str(&format!("{}\t{c}\n", s.site_id));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::phylio::parse_newick;

    fn tree(s: &str) -> UnrootedTree {
        parse_newick(s, None).unwrap().trees.remove(0)
    }

    fn matrix(rows: &[(&str, &str)]) -> CharacterMatrix {
        CharacterMatrix::from_rows(rows).unwrap()
    }

    #[test]
    fn quartet_scores() {
        let m = matrix(&[("A", "0"), ("B", "0"), ("C", "1"), ("D", "1")]);
        assert_eq!(fitch_score(&tree("((A,B),(C,D));"), &m).unwrap(), 1);
        assert_eq!(fitch_score(&tree("((A,C),(B,D));"), &m).unwrap(), 2);
    }

    #[test]
    fn constant_site_is_free() {
        let m = matrix(&[("A", "00"), ("B", "00"), ("C", "01"), ("D", "0?")]);
        assert_eq!(site_scores(&tree("((A,B),(C,D));"), &m).unwrap(), vec![0, 1]);
    }

    #[test]
    fn four_states_need_three_changes_everywhere() {
        let m = matrix(&[("A", "0"), ("B", "1"), ("C", "2"), ("D", "3")]);
        for t in all_topologies(&["A", "B", "C", "D"].map(String::from)) {
            assert_eq!(fitch_score(&t, &m).unwrap(), 3);
        }
    }

    #[test]
    fn missing_leaf_never_adds_changes() {
        let m = matrix(&[("A", "0"), ("B", "?"), ("C", "1"), ("D", "1")]);
        assert_eq!(fitch_score(&tree("((A,B),(C,D));"), &m).unwrap(), 1);
        assert_eq!(fitch_score(&tree("((A,C),(B,D));"), &m).unwrap(), 1);
    }

    #[test]
    fn mismatch_lists_symmetric_difference() {
        let m = matrix(&[("A", "0"), ("B", "0"), ("C", "1"), ("E", "1")]);
        match fitch_score(&tree("((A,B),(C,D));"), &m).unwrap_err() {
            Error::LeafMismatch { only_tree, only_matrix } => {
                assert_eq!(only_tree, ["D"]);
                assert_eq!(only_matrix, ["E"]);
            }
            e => panic!("{e}"),
        }
    }

    #[test]
    fn non_binary_rejected() {
        let m = matrix(&[("A", "0"), ("B", "0"), ("C", "1"), ("D", "1")]);
        assert!(fitch_score(&tree("(A,B,C,D);"), &m).is_err());
    }

    #[test]
    fn ancestral_quartet() {
        let m = matrix(&[("A", "0"), ("B", "0"), ("C", "1"), ("D", "1")]);
        let t = tree("((A,B),(C,D));");
        let rec = ancestral_states(&t, &m).unwrap();
        assert_eq!(rec.total_changes(), 1);
        for (a, b, c) in &rec.edge_changes {
            let internal = !t.is_leaf(*a) && !t.is_leaf(*b);
            assert_eq!(*c, u32::from(internal));
        }
        let m = matrix(&[("A", "1"), ("B", "1"), ("C", "1"), ("D", "0")]);
        let rec = ancestral_states(&t, &m).unwrap();
        assert_eq!(rec.total_changes(), 1);
        let d = t.find_leaf("D").unwrap();
        let nb = t.neighbors(d).next().unwrap();
        assert_eq!(rec.changes_on(d, nb), Some(1));
    }

    #[test]
    fn topology_counts() {
        assert_eq!(topology_count(3), 1);
        assert_eq!(topology_count(4), 3);
        assert_eq!(topology_count(5), 15);
        assert_eq!(topology_count(6), 105);
        assert_eq!(topology_count(9), 135_135);
        let labels: Vec<String> = "ABCDEF".chars().map(String::from).collect();
        let all = all_topologies(&labels);
        assert_eq!(all.len(), 105);
        let keys: BTreeSet<String> = all.iter().map(|t| t.canonical_key()).collect();
        assert_eq!(keys.len(), 105);
        assert!(all.iter().all(|t| t.is_binary() && t.edge_count() == 2 * 6 - 3));
    }

    #[test]
    fn exhaustive_unique_optimum() {
        let m = matrix(&[("A", "00"), ("B", "00"), ("C", "11"), ("D", "11")]);
        let r = exhaustive_search(&m, &SearchConfig::default()).unwrap();
        assert_eq!(r.best_score, 2);
        assert_eq!(r.trees.len(), 1);
        assert_eq!(r.trees[0].canonical_key(), "((A,B),(C,D));");
        assert_eq!(r.trees_examined, 3);
        assert!(!r.capped);
        assert_eq!(r.site_scores, vec![1, 1]);
    }

    #[test]
    fn cap_marks_result() {
        // all-missing-like ambiguity: every topology ties
        let m = matrix(&[("A", "0"), ("B", "1"), ("C", "2"), ("D", "3"), ("E", "0")]);
        let cfg = SearchConfig {
            max_trees: 1,
            ..Default::default()
        };
        let r = exhaustive_search(&m, &cfg).unwrap();
        assert_eq!(r.trees.len(), 1);
        assert!(r.capped);
        let all = exhaustive_search(&m, &SearchConfig { max_trees: 1000, ..Default::default() }).unwrap();
        assert_eq!(r.trees[0], all.trees[0]);
    }

    #[test]
    fn exhaustive_limit_and_small_inputs() {
        let rows: Vec<(String, String)> = (0..12).map(|i| (format!("T{i:02}"), (i % 2).to_string())).collect();
        let m = CharacterMatrix::from_rows(&rows).unwrap();
        assert!(exhaustive_search(&m, &SearchConfig::default()).is_err());
        let m2 = matrix(&[("A", "0"), ("B", "1")]);
        assert!(exhaustive_search(&m2, &SearchConfig::default()).is_err());
        let m3 = matrix(&[("A", "0"), ("B", "1"), ("C", "1")]);
        let r = search(&m3, &SearchConfig::default()).unwrap();
        assert_eq!(r.trees.len(), 1);
        assert!(heuristic_search(&m3, &SearchConfig::default()).is_err());
    }

    #[test]
    fn rng_contract_is_stable() {
        let mut a = replicate_rng(0, 0);
        let mut b = replicate_rng(0, 0);
        assert_eq!(a.next_u64(), b.next_u64());
        let mut c = replicate_rng(0, 1);
        assert_ne!(replicate_rng(0, 0).next_u64(), c.next_u64());
        let mut v: Vec<u32> = (0..10).collect();
        shuffle(&mut v, &mut replicate_rng(7, 3));
        let mut sorted = v.clone();
        sorted.sort();
        assert_eq!(sorted, (0..10).collect::<Vec<_>>());
    }

    #[test]
    fn nni_neighbours_are_distinct_valid_trees() {
        let labels: Vec<String> = "ABCDEF".chars().map(String::from).collect();
        let t = Topo::star(6, 0, 1, 2);
        let mut t2 = t.clone();
        t2.insert(0, 6, 7, 3);
        t2.insert(1, 6, 8, 4);
        t2.insert(2, 6, 9, 5);
        let base = t2.to_tree(&labels);
        base.validate().unwrap();
        let mut keys = BTreeSet::new();
        for (u, v) in t2.internal_edges() {
            for nb in t2.nni(u, v) {
                let tr = nb.to_tree(&labels);
                tr.validate().unwrap();
                keys.insert(tr.canonical_key());
            }
        }
        assert_eq!(keys.len(), 2 * (6 - 3));
        assert!(!keys.contains(&base.canonical_key()));
    }
}
