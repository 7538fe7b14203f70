//! Split (bipartition) tallies and strict / majority-rule / extended
//! majority-rule consensus trees.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::phylio::NewickForest;
use crate::tree::{TreeNode, UnrootedTree};

/// Fixed-size bitset over taxon indices.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct TaxonSet {
    words: Vec<u64>,
    len: usize,
}

impl TaxonSet {
    pub fn new(len: usize) -> Self {
        TaxonSet {
            words: vec![0; len.div_ceil(64)],
            len,
        }
    }

    pub fn insert(&mut self, i: usize) {
        self.words[i / 64] |= 1 << (i % 64);
    }

    pub fn contains(&self, i: usize) -> bool {
        self.words[i / 64] & (1 << (i % 64)) != 0
    }

    pub fn count(&self) -> usize {
        self.words.iter().map(|w| w.count_ones() as usize).sum()
    }

    pub fn union_with(&mut self, other: &TaxonSet) {
        for (a, b) in self.words.iter_mut().zip(&other.words) {
            *a |= b;
        }
    }

    pub fn members(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.len).filter(|&i| self.contains(i))
    }

    fn complement(&self) -> TaxonSet {
        let mut c = TaxonSet::new(self.len);
        for i in 0..self.len {
            if !self.contains(i) {
                c.insert(i);
            }
        }
        c
    }

    fn intersects(&self, other: &TaxonSet) -> bool {
        self.words.iter().zip(&other.words).any(|(a, b)| a & b != 0)
    }
}

impl Ord for TaxonSet {
    /// Lexicographic order of the sorted member lists.
    fn cmp(&self, other: &Self) -> Ordering {
        self.members().cmp(other.members())
    }
}

impl PartialOrd for TaxonSet {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Nontrivial bipartition, stored as the side without the reference taxon
/// (index 0 of the sorted taxon list).
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Split(TaxonSet);

impl Split {
    pub fn side(&self) -> &TaxonSet {
        &self.0
    }

    pub fn size(&self) -> usize {
        self.0.count()
    }

    /// Two splits are compatible iff one of the four side intersections is empty.
    pub fn compatible(&self, other: &Split) -> bool {
        let (a, b) = (&self.0, &other.0);
        let (ac, bc) = (a.complement(), b.complement());
        !a.intersects(b) || !a.intersects(&bc) || !ac.intersects(b) || !ac.intersects(&bc)
    }

    /// `.`/`*` pattern over the taxon order, `*` marking the stored side.
    pub fn pattern(&self) -> String {
        (0..self.0.len).map(|i| if self.0.contains(i) { '*' } else { '.' }).collect()
    }
}

/// Sorted taxon labels shared by a forest.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TaxonOrder {
    labels: Vec<String>,
}

impl TaxonOrder {
    pub fn of_tree(tree: &UnrootedTree) -> Self {
        TaxonOrder {
            labels: tree.leaf_labels().into_iter().collect(),
        }
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    fn index(&self, label: &str) -> Option<usize> {
        self.labels.binary_search_by(|l| l.as_str().cmp(label)).ok()
    }

    pub fn names(&self, set: &TaxonSet) -> Vec<&str> {
        set.members().map(|i| self.labels[i].as_str()).collect()
    }
}

/// Splits of all internal edges of `tree`, with the taxon order they refer to.
/// Trees with fewer than four leaves have none.
pub fn tree_splits(tree: &UnrootedTree) -> (TaxonOrder, BTreeSet<Split>) {
    let order = TaxonOrder::of_tree(tree);
    let splits = splits_in(tree, &order);
    (order, splits)
}

fn splits_in(tree: &UnrootedTree, order: &TaxonOrder) -> BTreeSet<Split> {
    let mut out = BTreeSet::new();
    if order.len() < 4 {
        return out;
    }
    let reference = tree.find_leaf(&order.labels[0]).expect("reference leaf present");
    let pre = tree.preorder(reference);
    let mut below: Vec<TaxonSet> = vec![TaxonSet::new(order.len()); tree.node_count()];
    for &(v, parent) in pre.iter().rev() {
        if let Some(l) = tree.label(v) {
            below[v].insert(order.index(l).expect("label in taxon order"));
        }
        if let Some(p) = parent {
            if !tree.is_leaf(v) && !tree.is_leaf(p) {
                out.insert(Split(below[v].clone()));
            }
            let mine = below[v].clone();
            below[p].union_with(&mine);
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ConsensusMethod {
    Strict,
    Majority,
    /// Majority rule extended with compatible minority splits.
    #[default]
    Mre,
}

impl FromStr for ConsensusMethod {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "strict" => Ok(Self::Strict),
            "majority" | "mr" => Ok(Self::Majority),
            "mre" | "extended" => Ok(Self::Mre),
            _ => Err(Error::Config(format!("unknown consensus method {s:?} (expected strict|majority|mre)"))),
        }
    }
}

impl fmt::Display for ConsensusMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Strict => "strict",
            Self::Majority => "majority",
            Self::Mre => "mre",
        })
    }
}

/// Occurrence counts of splits across a forest.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SplitTally {
    pub order: TaxonOrder,
    pub counts: BTreeMap<Split, usize>,
    pub total_trees: usize,
}

impl SplitTally {
    /// Tallies every tree; all must share one leaf set.
    pub fn from_trees(trees: &[UnrootedTree]) -> Result<Self> {
        let first = trees.first().ok_or_else(|| Error::Invalid("consensus of an empty forest".into()))?;
        let order = TaxonOrder::of_tree(first);
        let mut tally = SplitTally {
            order,
            counts: BTreeMap::new(),
            total_trees: 0,
        };
        for (i, t) in trees.iter().enumerate() {
            if t.leaf_labels().iter().ne(tally.order.labels.iter()) {
                return Err(Error::Invalid(format!(
                    "tree {} has a different leaf set from tree 1",
                    i + 1
                )));
            }
            tally.add(t);
        }
        Ok(tally)
    }

    fn add(&mut self, tree: &UnrootedTree) {
        for s in splits_in(tree, &self.order) {
            *self.counts.entry(s).or_insert(0) += 1;
        }
        self.total_trees += 1;
    }

    /// Sums two tallies over the same taxa.
    pub fn merge(mut self, other: SplitTally) -> Result<Self> {
        if self.order != other.order {
            return Err(Error::Invalid("tallies over different taxa".into()));
        }
        for (s, c) in other.counts {
            *self.counts.entry(s).or_insert(0) += c;
        }
        self.total_trees += other.total_trees;
        Ok(self)
    }

    pub fn fraction(&self, s: &Split) -> f64 {
        self.counts.get(s).copied().unwrap_or(0) as f64 / self.total_trees as f64
    }

    /// Splits by decreasing count, ties in canonical order.
    pub fn ranked(&self) -> Vec<(&Split, usize)> {
        let mut v: Vec<(&Split, usize)> = self.counts.iter().map(|(s, &c)| (s, c)).collect();
        v.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
        v
    }

    /// Splits accepted by `method`, in ranked order.
    pub fn select(&self, method: ConsensusMethod) -> Vec<Split> {
        let total = self.total_trees;
        let mut accepted: Vec<Split> = Vec::new();
        for (s, c) in self.ranked() {
            let keep = match method {
                ConsensusMethod::Strict => c == total,
                ConsensusMethod::Majority => 2 * c > total,
                ConsensusMethod::Mre => 2 * c > total || accepted.iter().all(|a| a.compatible(s)),
            };
            if keep {
                accepted.push(s.clone());
            }
        }
        debug_assert!(accepted
            .iter()
            .enumerate()
            .all(|(i, a)| accepted[i + 1..].iter().all(|b| a.compatible(b))));
        accepted
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Consensus {
    pub tree: UnrootedTree,
    pub tally: SplitTally,
    pub accepted: Vec<Split>,
    pub method: ConsensusMethod,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConsensusOptions {
    pub method: ConsensusMethod,
    /// Count each distinct topology once.
    pub dedup: bool,
    /// Put support fractions on edges as branch lengths.
    pub support_lengths: bool,
}

impl Default for ConsensusOptions {
    fn default() -> Self {
        ConsensusOptions {
            method: ConsensusMethod::Mre,
            dedup: false,
            support_lengths: true,
        }
    }
}

/// Builds the tree whose internal edges are exactly `splits` (pairwise
/// compatible, all excluding taxon 0). Internal edges get their support as
/// length, leaf edges 1.
pub fn tree_from_splits(order: &TaxonOrder, splits: &[Split], support: Option<&SplitTally>) -> Result<UnrootedTree> {
    let n = order.len();
    if n < 2 {
        return Err(Error::Invalid("consensus needs at least two taxa".into()));
    }
    for (i, a) in splits.iter().enumerate() {
        if splits[i + 1..].iter().any(|b| !a.compatible(b)) {
            return Err(Error::Invalid("incompatible splits".into()));
        }
    }
    // Clusters nested by size: each split's parent is the smallest strictly larger superset.
    let mut clusters: Vec<&Split> = splits.iter().collect();
    clusters.sort_by(|a, b| b.size().cmp(&a.size()).then_with(|| a.cmp(b)));
    let is_subset = |a: &TaxonSet, b: &TaxonSet| a.members().all(|i| b.contains(i));

    let mut nodes: Vec<TreeNode> = Vec::new();
    // node 0 is the hub holding taxon 0
    nodes.push(UnrootedTree::new_node(None));
    let mut cluster_node = Vec::with_capacity(clusters.len());
    for (ci, c) in clusters.iter().enumerate() {
        let parent = (0..ci)
            .rev()
            .find(|&pi| is_subset(c.side(), clusters[pi].side()))
            .map_or(0, |pi| cluster_node[pi]);
        let id = nodes.len();
        nodes.push(UnrootedTree::new_node(None));
        let len = support.map(|t| t.fraction(c));
        UnrootedTree::link(&mut nodes, parent, id, len);
        cluster_node.push(id);
    }
    let leaf_len = support.map(|_| 1.0);
    for (i, label) in order.labels.iter().enumerate() {
        let parent = (0..clusters.len())
            .rev()
            .find(|&ci| clusters[ci].side().contains(i))
            .map_or(0, |ci| cluster_node[ci]);
        let id = nodes.len();
        nodes.push(UnrootedTree::new_node(Some(label.clone())));
        UnrootedTree::link(&mut nodes, parent, id, leaf_len);
    }
    if n == 2 {
        // hub has degree 2: collapse to a single edge
        let leaves: Vec<TreeNode> = order.labels.iter().map(|l| UnrootedTree::new_node(Some(l.clone()))).collect();
        let mut leaves = leaves;
        UnrootedTree::link(&mut leaves, 0, 1, leaf_len);
        return Ok(UnrootedTree::from_nodes_unchecked(leaves));
    }
    let tree = UnrootedTree::from_nodes_unchecked(nodes);
    tree.validate()?;
    Ok(tree.canonicalize())
}

/// Consensus of `forest` by the chosen method.
pub fn consensus(forest: &NewickForest, opts: &ConsensusOptions) -> Result<Consensus> {
    let trees: Vec<UnrootedTree> = if opts.dedup {
        let mut seen = BTreeSet::new();
        forest
            .trees
            .iter()
            .filter(|t| seen.insert(t.canonical_key()))
            .cloned()
            .collect()
    } else {
        forest.trees.clone()
    };
    let tally = SplitTally::from_trees(&trees)?;
    let accepted = tally.select(opts.method);
    let tree = tree_from_splits(&tally.order, &accepted, opts.support_lengths.then_some(&tally))?;
    Ok(Consensus {
        tree,
        tally,
        accepted,
        method: opts.method,
    })
}

fn format_fraction(x: f64) -> String {
    format!("{x:.4}")
}

/// Plain-text split table: every tallied split with count, fraction and
/// whether the consensus kept it.
pub fn split_table(c: &Consensus) -> String {
    let t = &c.tally;
    let accepted: BTreeSet<&Split> = c.accepted.iter().collect();
    let mut out = String::new();
    out.push_str(&format!("# method = {}\n", c.method));
    out.push_str(&format!("# trees = {}\n", t.total_trees));
    out.push_str(&format!("# taxa = {}\n", t.order.labels.join(" ")));
    out.push_str("pattern\tcount\tfraction\tincluded\tside\n");
    for (s, count) in t.ranked() {
        out.push_str(&format!(
            "{}\t{count}\t{}\t{}\t{}\n",
            s.pattern(),
            format_fraction(count as f64 / t.total_trees as f64),
            if accepted.contains(s) { "yes" } else { "no" },
            t.order.names(s.side()).join(",")
        ));
    }
    out
}
