//! Leaf-labelled unrooted trees.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct TreeNode {
    pub label: Option<String>,
    /// Neighbours with the length of the connecting edge.
    adj: Vec<(usize, Option<f64>)>,
}

/// Undirected edge `a < b` with its optional length.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Edge {
    pub a: usize,
    pub b: usize,
    pub length: Option<f64>,
}

/// Connected acyclic graph whose leaves carry unique labels and whose
/// internal nodes are unlabelled and have degree ≥ 3.
#[derive(Debug, Clone, PartialEq)]
pub struct UnrootedTree {
    nodes: Vec<TreeNode>,
}

impl UnrootedTree {
    /// Builds and validates a tree from per-node labels (`Some` for leaves)
    /// and an undirected edge list.
    pub fn from_edges(labels: Vec<Option<String>>, edges: &[(usize, usize, Option<f64>)]) -> Result<Self> {
        let mut nodes: Vec<TreeNode> = labels
            .into_iter()
            .map(|label| TreeNode { label, adj: Vec::new() })
            .collect();
        for &(a, b, len) in edges {
            if a >= nodes.len() || b >= nodes.len() || a == b {
                return Err(Error::Tree(format!("bad edge ({a}, {b})")));
            }
            nodes[a].adj.push((b, len));
            nodes[b].adj.push((a, len));
        }
        let tree = UnrootedTree { nodes };
        tree.validate()?;
        Ok(tree)
    }

    pub(crate) fn from_nodes_unchecked(nodes: Vec<TreeNode>) -> Self {
        UnrootedTree { nodes }
    }

    pub(crate) fn new_node(label: Option<String>) -> TreeNode {
        TreeNode { label, adj: Vec::new() }
    }

    pub(crate) fn link(nodes: &mut [TreeNode], a: usize, b: usize, len: Option<f64>) {
        nodes[a].adj.push((b, len));
        nodes[b].adj.push((a, len));
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.nodes.len();
        let leaves = self.leaf_count();
        if leaves < 2 {
            return Err(Error::Tree("a tree needs at least two leaves".into()));
        }
        let edge_count: usize = self.nodes.iter().map(|v| v.adj.len()).sum::<usize>() / 2;
        if edge_count + 1 != n {
            return Err(Error::Tree(format!("{n} nodes but {edge_count} edges")));
        }
        let mut seen = vec![false; n];
        let mut stack = vec![0];
        seen[0] = true;
        let mut reached = 1;
        while let Some(v) = stack.pop() {
            for &(w, _) in &self.nodes[v].adj {
                if !seen[w] {
                    seen[w] = true;
                    reached += 1;
                    stack.push(w);
                }
            }
        }
        if reached != n {
            return Err(Error::Tree("tree is not connected".into()));
        }
        let mut labels = BTreeSet::new();
        for (i, v) in self.nodes.iter().enumerate() {
            if let Some(len) = v.adj.iter().find_map(|&(_, l)| l.filter(|x| !(x.is_finite() && *x >= 0.0))) {
                return Err(Error::Tree(format!("invalid edge length {len}")));
            }
            match (&v.label, v.adj.len()) {
                (Some(l), 1) => {
                    if !labels.insert(l.as_str()) {
                        return Err(Error::Tree(format!("duplicate leaf label {l}")));
                    }
                }
                (Some(l), d) => return Err(Error::Tree(format!("labelled node {l} has degree {d}"))),
                (None, d) if d < 3 => return Err(Error::Tree(format!("internal node {i} has degree {d}"))),
                (None, _) => {}
            }
        }
        Ok(())
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn node(&self, i: usize) -> &TreeNode {
        &self.nodes[i]
    }

    pub fn is_leaf(&self, i: usize) -> bool {
        self.nodes[i].label.is_some()
    }

    pub fn label(&self, i: usize) -> Option<&str> {
        self.nodes[i].label.as_deref()
    }

    pub fn degree(&self, i: usize) -> usize {
        self.nodes[i].adj.len()
    }

    pub fn neighbors(&self, i: usize) -> impl Iterator<Item = usize> + '_ {
        self.nodes[i].adj.iter().map(|&(w, _)| w)
    }

    pub fn leaf_count(&self) -> usize {
        self.nodes.iter().filter(|v| v.label.is_some()).count()
    }

    /// `(node, label)` for every leaf, in node order.
    pub fn leaves(&self) -> impl Iterator<Item = (usize, &str)> {
        self.nodes
            .iter()
            .enumerate()
            .filter_map(|(i, v)| v.label.as_deref().map(|l| (i, l)))
    }

    pub fn leaf_labels(&self) -> BTreeSet<String> {
        self.leaves().map(|(_, l)| l.to_string()).collect()
    }

    pub fn find_leaf(&self, label: &str) -> Option<usize> {
        self.leaves().find(|&(_, l)| l == label).map(|(i, _)| i)
    }

    /// All edges as `a < b`, sorted.
    pub fn edges(&self) -> Vec<Edge> {
        let mut out = Vec::with_capacity(self.nodes.len().saturating_sub(1));
        for (a, v) in self.nodes.iter().enumerate() {
            for &(b, length) in &v.adj {
                if a < b {
                    out.push(Edge { a, b, length });
                }
            }
        }
        out.sort_by_key(|e| (e.a, e.b));
        out
    }

    pub fn edge_count(&self) -> usize {
        self.nodes.len() - 1
    }

    pub fn edge_length(&self, a: usize, b: usize) -> Option<f64> {
        self.nodes[a].adj.iter().find(|&&(w, _)| w == b).and_then(|&(_, l)| l)
    }

    pub fn set_edge_length(&mut self, a: usize, b: usize, length: Option<f64>) {
        for (x, y) in [(a, b), (b, a)] {
            if let Some(slot) = self.nodes[x].adj.iter_mut().find(|(w, _)| *w == y) {
                slot.1 = length;
            }
        }
    }

    pub fn clear_lengths(&mut self) {
        for v in &mut self.nodes {
            for slot in &mut v.adj {
                slot.1 = None;
            }
        }
    }

    pub fn has_lengths(&self) -> bool {
        self.nodes.iter().any(|v| v.adj.iter().any(|&(_, l)| l.is_some()))
    }

    /// True when every internal node has degree exactly 3.
    pub fn is_binary(&self) -> bool {
        self.nodes.iter().all(|v| v.label.is_some() || v.adj.len() == 3)
    }

    /// Renames leaves through `map`; labels absent from the map are kept.
    pub fn relabel(&mut self, map: &BTreeMap<String, String>) {
        for v in &mut self.nodes {
            if let Some(l) = &mut v.label {
                if let Some(new) = map.get(l.as_str()) {
                    *l = new.clone();
                }
            }
        }
    }

    /// Leaf with the lexicographically smallest label.
    pub fn smallest_leaf(&self) -> usize {
        self.leaves().min_by(|a, b| a.1.cmp(b.1)).map(|(i, _)| i).expect("tree has leaves")
    }

    /// The internal node adjacent to the smallest leaf; the smallest leaf itself
    /// for the two-leaf tree.
    pub fn start_node(&self) -> usize {
        let leaf = self.smallest_leaf();
        let nb = self.nodes[leaf].adj[0].0;
        if self.is_leaf(nb) {
            leaf
        } else {
            nb
        }
    }

    /// Smallest leaf label in the subtree hanging off `parent -> v`.
    pub(crate) fn min_labels_from(&self, root: usize) -> Vec<Option<String>> {
        let order = self.preorder(root);
        let mut min: Vec<Option<String>> = vec![None; self.nodes.len()];
        for &(v, parent) in order.iter().rev() {
            let mut best = self.nodes[v].label.clone();
            for &(w, _) in &self.nodes[v].adj {
                if Some(w) != parent {
                    if let Some(m) = &min[w] {
                        if best.as_ref().is_none_or(|b| m < b) {
                            best = Some(m.clone());
                        }
                    }
                }
            }
            min[v] = best;
        }
        min
    }

    /// `(node, parent)` pairs in depth-first preorder from `root`.
    pub fn preorder(&self, root: usize) -> Vec<(usize, Option<usize>)> {
        let mut out = Vec::with_capacity(self.nodes.len());
        let mut stack = vec![(root, None)];
        while let Some((v, parent)) = stack.pop() {
            out.push((v, parent));
            for &(w, _) in self.nodes[v].adj.iter().rev() {
                if Some(w) != parent {
                    stack.push((w, Some(v)));
                }
            }
        }
        out
    }

    /// Children of `v` (neighbours except `parent`), ordered by smallest
    /// descendant leaf label.
    pub(crate) fn sorted_children(&self, v: usize, parent: Option<usize>, min: &[Option<String>]) -> Vec<usize> {
        let mut kids: Vec<usize> = self.neighbors(v).filter(|&w| Some(w) != parent).collect();
        kids.sort_by(|&x, &y| min[x].cmp(&min[y]));
        kids
    }

    /// Renumbers nodes in canonical depth-first order from [`Self::start_node`]
    /// with children sorted by smallest descendant label. The result is
    /// independent of the input's node numbering and adjacency order.
    pub fn canonicalize(&self) -> UnrootedTree {
        let start = self.start_node();
        let min = self.min_labels_from(start);
        let mut order = Vec::with_capacity(self.nodes.len());
        let mut stack = vec![(start, None)];
        while let Some((v, parent)) = stack.pop() {
            order.push((v, parent));
            for w in self.sorted_children(v, parent, &min).into_iter().rev() {
                stack.push((w, Some(v)));
            }
        }
        let mut new_id = vec![0; self.nodes.len()];
        for (i, &(v, _)) in order.iter().enumerate() {
            new_id[v] = i;
        }
        let mut nodes: Vec<TreeNode> = order
            .iter()
            .map(|&(v, _)| TreeNode {
                label: self.nodes[v].label.clone(),
                adj: Vec::new(),
            })
            .collect();
        for &(v, parent) in &order {
            if let Some(p) = parent {
                let len = self.edge_length(p, v);
                UnrootedTree::link(&mut nodes, new_id[p], new_id[v], len);
            }
        }
        UnrootedTree { nodes }
    }

    /// Canonical Newick without branch lengths: equal strings iff equal topologies.
    pub fn canonical_key(&self) -> String {
        self.write_newick(false)
    }

    /// Canonical Newick, with branch lengths when the tree has any.
    pub fn to_newick(&self) -> String {
        self.write_newick(self.has_lengths())
    }

    /// Serialization rooted at the start node. When the start node has internal
    /// children, the output is rooted on the edge to the last of them, e.g.
    /// `((A,B),(C,D));`; otherwise (a star) it is the flat list `(A,B,C);`.
    fn write_newick(&self, lengths: bool) -> String {
        let mut out = String::new();
        let start = self.start_node();
        if self.is_leaf(start) {
            // two leaves
            let other = self.nodes[start].adj[0].0;
            out.push('(');
            write_label(&mut out, self.label(start).unwrap());
            out.push(',');
            write_label(&mut out, self.label(other).unwrap());
            if lengths {
                write_length(&mut out, self.edge_length(start, other));
            }
            out.push_str(");");
            return out;
        }
        let min = self.min_labels_from(start);
        let kids = self.sorted_children(start, None, &min);
        let last_internal = kids.iter().rposition(|&k| !self.is_leaf(k));
        out.push('(');
        match last_internal {
            Some(pos) => {
                let root_child = kids[pos];
                out.push('(');
                let mut first = true;
                for &k in kids.iter().filter(|&&k| k != root_child) {
                    if !first {
                        out.push(',');
                    }
                    first = false;
                    self.write_subtree(&mut out, k, start, &min, lengths);
                }
                out.push_str("),");
                self.write_subtree(&mut out, root_child, start, &min, lengths);
            }
            None => {
                for (i, &k) in kids.iter().enumerate() {
                    if i > 0 {
                        out.push(',');
                    }
                    self.write_subtree(&mut out, k, start, &min, lengths);
                }
            }
        }
        out.push_str(");");
        out
    }

    fn write_subtree(&self, out: &mut String, v: usize, parent: usize, min: &[Option<String>], lengths: bool) {
        if let Some(l) = self.label(v) {
            write_label(out, l);
        } else {
            out.push('(');
            for (i, k) in self.sorted_children(v, Some(parent), min).into_iter().enumerate() {
                if i > 0 {
                    out.push(',');
                }
                self.write_subtree(out, k, v, min, lengths);
            }
            out.push(')');
        }
        if lengths {
            write_length(out, self.edge_length(parent, v));
        }
    }
}

fn needs_quotes(label: &str) -> bool {
    label.is_empty()
        || label
            .chars()
            .any(|c| c.is_whitespace() || matches!(c, '(' | ')' | '[' | ']' | '\'' | ':' | ';' | ','))
}

pub(crate) fn write_label(out: &mut String, label: &str) {
    if needs_quotes(label) {
        out.push('\'');
        out.push_str(&label.replace('\'', "''"));
        out.push('\'');
    } else {
        out.push_str(label);
    }
}

fn write_length(out: &mut String, len: Option<f64>) {
    if let Some(l) = len {
        let _ = write!(out, ":{l}");
    }
}
