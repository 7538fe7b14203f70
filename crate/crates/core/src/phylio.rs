//! PHYLIP `infile` emission, the `names.tsv` sidecar and Newick I/O.

use std::collections::BTreeMap;
use std::path::Path;

use crate::error::{Error, Result};
use crate::io::{read_text, write_atomic};
use crate::matrix::CharacterMatrix;
use crate::tree::{TreeNode, UnrootedTree};

pub const NAMES_FILE: &str = "names.tsv";
pub const PHYLIP_NAME_WIDTH: usize = 10;

/// The fixed-width taxon name field of a PHYLIP data file.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct PhylipName(String);

impl PhylipName {
    /// Replaces characters outside `[A-Za-z0-9._-]` with `_`, truncates to
    /// ten characters and pads with spaces.
    pub fn derive(siglum: &str) -> Self {
        let mut s: String = siglum
            .chars()
            .map(|c| {
                if c.is_ascii_alphanumeric() || matches!(c, '.' | '_' | '-') {
                    c
                } else {
                    '_'
                }
            })
            .take(PHYLIP_NAME_WIDTH)
            .collect();
        while s.len() < PHYLIP_NAME_WIDTH {
            s.push(' ');
        }
        PhylipName(s)
    }

    /// The padded ten-character field.
    pub fn padded(&self) -> &str {
        &self.0
    }

    /// The name as it appears in tree files (no padding).
    pub fn trimmed(&self) -> &str {
        self.0.trim_end()
    }
}

/// Siglum ↔ PHYLIP name table.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct NameMap {
    pairs: Vec<(String, PhylipName)>,
}

impl NameMap {
    /// Derives names for `sigla`, failing if two of them collide.
    pub fn derive<'a>(sigla: impl IntoIterator<Item = &'a str>) -> Result<Self> {
        let mut by_name: BTreeMap<PhylipName, Vec<&str>> = BTreeMap::new();
        let mut pairs = Vec::new();
        for s in sigla {
            let name = PhylipName::derive(s);
            by_name.entry(name.clone()).or_default().push(s);
            pairs.push((s.to_string(), name));
        }
        let clashes: Vec<String> = by_name
            .iter()
            .filter(|(_, v)| v.len() > 1)
            .map(|(k, v)| format!("{} <- {}", k.trimmed(), v.join(", ")))
            .collect();
        if !clashes.is_empty() {
            return Err(Error::NameCollision(format!(
                "{}; rename these witnesses so their first {PHYLIP_NAME_WIDTH} characters differ",
                clashes.join("; ")
            )));
        }
        Ok(NameMap { pairs })
    }

    pub fn for_matrix(m: &CharacterMatrix) -> Result<Self> {
        NameMap::derive(m.taxa().iter().map(|t| t.as_str()))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &PhylipName)> {
        self.pairs.iter().map(|(s, n)| (s.as_str(), n))
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    /// Maps a tree-file label (PHYLIP name or the siglum itself) to its siglum.
    pub fn resolve(&self, label: &str) -> Option<&str> {
        let label = label.trim_end();
        self.pairs
            .iter()
            .find(|(s, _)| s == label)
            .or_else(|| self.pairs.iter().find(|(_, n)| n.trimmed() == label))
            .map(|(s, _)| s.as_str())
    }

    pub fn to_tsv(&self) -> String {
        let mut out = String::new();
        for (s, n) in &self.pairs {
            out.push_str(s);
            out.push('\t');
            out.push_str(n.trimmed());
            out.push('\n');
        }
        out
    }

    pub fn parse_tsv(text: &str) -> Result<Self> {
        let mut pairs = Vec::new();
        for (i, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
            let (s, n) = line
                .split_once('\t')
                .ok_or_else(|| Error::format(NAMES_FILE, format!("line {}: expected siglum<TAB>name", i + 1)))?;
            if n.chars().count() > PHYLIP_NAME_WIDTH {
                return Err(Error::format(NAMES_FILE, format!("line {}: name longer than 10 characters", i + 1)));
            }
            pairs.push((s.to_string(), PhylipName::derive(n)));
        }
        Ok(NameMap { pairs })
    }

    pub fn read(path: &Path) -> Result<Self> {
        NameMap::parse_tsv(&read_text(path)?)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        write_atomic(path, self.to_tsv().as_bytes())
    }
}

/// Sequential PHYLIP discrete-character data: ` <ntaxa> <nsites>` then one
/// line per taxon with the padded name immediately followed by the cells.
pub fn phylip_string(m: &CharacterMatrix) -> Result<String> {
    if m.taxon_count() < 2 {
        return Err(Error::Invalid(format!("PHYLIP needs at least 2 taxa, got {}", m.taxon_count())));
    }
    let names = NameMap::for_matrix(m)?;
    let mut out = format!(" {} {}\n", m.taxon_count(), m.site_count());
    for (t, (_, name)) in names.iter().enumerate() {
        out.push_str(name.padded());
        out.extend(m.row(t).iter().map(|c| c.to_char()));
        out.push('\n');
    }
    Ok(out)
}

pub fn write_phylip(m: &CharacterMatrix, out: &Path) -> Result<()> {
    write_atomic(out, phylip_string(m)?.as_bytes())
}

/// Trees from one Newick file.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct NewickForest {
    pub trees: Vec<UnrootedTree>,
}

impl NewickForest {
    pub fn new(trees: Vec<UnrootedTree>) -> Self {
        NewickForest { trees }
    }

    pub fn len(&self) -> usize {
        self.trees.len()
    }

    pub fn is_empty(&self) -> bool {
        self.trees.is_empty()
    }

    /// One canonical statement per line.
    pub fn to_newick(&self) -> String {
        let mut out = String::new();
        for t in &self.trees {
            out.push_str(&t.to_newick());
            out.push('\n');
        }
        out
    }
}

pub fn write_newick(forest: &NewickForest, out: &Path) -> Result<()> {
    write_atomic(out, forest.to_newick().as_bytes())
}

pub fn read_newick(path: &Path, names: Option<&NameMap>) -> Result<NewickForest> {
    parse_newick(&read_text(path)?, names)
}

struct RootedNode {
    label: Option<String>,
    length: Option<f64>,
    children: Vec<usize>,
}

struct Parser<'a> {
    src: &'a str,
    pos: usize,
    nodes: Vec<RootedNode>,
}

impl<'a> Parser<'a> {
    fn err(&self, message: impl Into<String>) -> Error {
        Error::Newick {
            position: self.pos,
            message: message.into(),
        }
    }

    fn peek(&self) -> Option<char> {
        self.src[self.pos..].chars().next()
    }

    fn bump(&mut self) -> Option<char> {
        let c = self.peek()?;
        self.pos += c.len_utf8();
        Some(c)
    }

    /// Skips whitespace and `[...]` comments.
    fn skip(&mut self) -> Result<()> {
        loop {
            match self.peek() {
                Some(c) if c.is_whitespace() => {
                    self.bump();
                }
                Some('[') => {
                    let start = self.pos;
                    match self.src[self.pos..].find(']') {
                        Some(end) => self.pos += end + 1,
                        None => {
                            self.pos = start;
                            return Err(self.err("unterminated comment"));
                        }
                    }
                }
                _ => return Ok(()),
            }
        }
    }

    fn label(&mut self) -> Result<Option<String>> {
        self.skip()?;
        if self.peek() == Some('\'') {
            self.bump();
            let mut out = String::new();
            loop {
                match self.bump() {
                    Some('\'') if self.peek() == Some('\'') => {
                        self.bump();
                        out.push('\'');
                    }
                    Some('\'') => return Ok(Some(out)),
                    Some(c) => out.push(c),
                    None => return Err(self.err("unterminated quoted label")),
                }
            }
        }
        let start = self.pos;
        while let Some(c) = self.peek() {
            if c.is_whitespace() || "()[]':;,".contains(c) {
                break;
            }
            self.bump();
        }
        Ok((self.pos > start).then(|| self.src[start..self.pos].to_string()))
    }

    fn length(&mut self) -> Result<Option<f64>> {
        self.skip()?;
        if self.peek() != Some(':') {
            return Ok(None);
        }
        self.bump();
        self.skip()?;
        let start = self.pos;
        while let Some(c) = self.peek() {
            if c.is_ascii_digit() || "+-.eE".contains(c) {
                self.bump();
            } else {
                break;
            }
        }
        let text = &self.src[start..self.pos];
        let v: f64 = text.parse().map_err(|_| {
            self.err(format!("bad branch length {text:?}"))
        })?;
        if !v.is_finite() || v < 0.0 {
            return Err(self.err(format!("branch length must be finite and nonnegative, got {v}")));
        }
        Ok(Some(v))
    }

    fn subtree(&mut self) -> Result<usize> {
        self.skip()?;
        let mut children = Vec::new();
        if self.peek() == Some('(') {
            self.bump();
            loop {
                children.push(self.subtree()?);
                self.skip()?;
                match self.bump() {
                    Some(',') => continue,
                    Some(')') => break,
                    Some(c) => {
                        self.pos -= c.len_utf8();
                        return Err(self.err(format!("expected ',' or ')', found {c:?}")));
                    }
                    None => return Err(self.err("unbalanced parentheses: unexpected end of input")),
                }
            }
        }
        let label = self.label()?;
        let length = self.length()?;
        if children.is_empty() && label.is_none() {
            return Err(self.err("leaf without a label"));
        }
        let id = self.nodes.len();
        self.nodes.push(RootedNode {
            label: if children.is_empty() { label } else { None },
            length,
            children,
        });
        Ok(id)
    }
}

/// Converts a rooted parse into an unrooted tree, splicing out degree-2 nodes
/// (the artificial root in particular) and summing the lengths they join.
fn unroot(nodes: Vec<RootedNode>, mut root: usize) -> Result<UnrootedTree> {
    while nodes[root].children.len() == 1 {
        root = nodes[root].children[0];
    }
    let n = nodes.len();
    let mut adj: Vec<Vec<(usize, Option<f64>)>> = vec![Vec::new(); n];
    let mut stack = vec![root];
    let mut reachable = vec![false; n];
    reachable[root] = true;
    while let Some(v) = stack.pop() {
        for &c in &nodes[v].children {
            adj[v].push((c, nodes[c].length));
            adj[c].push((v, nodes[c].length));
            reachable[c] = true;
            stack.push(c);
        }
    }
    let mut alive = reachable;
    for v in 0..n {
        if alive[v] && nodes[v].label.is_none() && adj[v].len() == 2 {
            let (a, la) = adj[v][0];
            let (b, lb) = adj[v][1];
            let len = match (la, lb) {
                (None, None) => None,
                (x, y) => Some(x.unwrap_or(0.0) + y.unwrap_or(0.0)),
            };
            for (x, y) in [(a, b), (b, a)] {
                let slot = adj[x].iter_mut().find(|(w, _)| *w == v).unwrap();
                *slot = (y, len);
            }
            adj[v].clear();
            alive[v] = false;
        }
    }
    let mut new_id = vec![usize::MAX; n];
    let mut out: Vec<TreeNode> = Vec::new();
    for v in 0..n {
        if alive[v] {
            new_id[v] = out.len();
            out.push(UnrootedTree::new_node(nodes[v].label.clone()));
        }
    }
    for v in 0..n {
        for &(w, len) in &adj[v] {
            if alive[v] && v < w {
                UnrootedTree::link(&mut out, new_id[v], new_id[w], len);
            }
        }
    }
    let tree = UnrootedTree::from_nodes_unchecked(out);
    tree.validate()?;
    Ok(tree)
}

/// Parses one or more `;`-terminated Newick statements.
///
/// With `names`, leaf labels are mapped to sigla (PHYLIP names or sigla are
/// both accepted) and unknown labels are errors.
pub fn parse_newick(text: &str, names: Option<&NameMap>) -> Result<NewickForest> {
    let mut p = Parser {
        src: text,
        pos: 0,
        nodes: Vec::new(),
    };
    let mut trees = Vec::new();
    loop {
        p.skip()?;
        if p.peek().is_none() {
            break;
        }
        if p.peek() == Some(';') {
            return Err(p.err("empty tree"));
        }
        let statement_start = p.pos;
        p.nodes.clear();
        let root = p.subtree()?;
        p.skip()?;
        match p.bump() {
            Some(';') => {}
            Some(c) => {
                p.pos -= c.len_utf8();
                return Err(p.err(format!("expected ';', found {c:?}")));
            }
            None => return Err(p.err("missing ';' at end of tree")),
        }
        let nodes = std::mem::take(&mut p.nodes);
        let mut seen = std::collections::BTreeSet::new();
        for l in nodes.iter().filter_map(|n| n.label.as_deref()) {
            if !seen.insert(l) {
                return Err(Error::Newick {
                    position: statement_start,
                    message: format!("duplicate leaf label {l}"),
                });
            }
        }
        let mut tree = unroot(nodes, root).map_err(|e| Error::Newick {
            position: statement_start,
            message: e.to_string(),
        })?;
        if let Some(names) = names {
            let mut map = BTreeMap::new();
            for (_, l) in tree.leaves() {
                let s = names.resolve(l).ok_or_else(|| Error::Newick {
                    position: statement_start,
                    message: format!("unknown taxon label {l}"),
                })?;
                map.insert(l.to_string(), s.to_string());
            }
            tree.relabel(&map);
            tree.validate()?;
        }
        trees.push(tree);
    }
    if trees.is_empty() {
        return Err(p.err("no trees in input"));
    }
    Ok(NewickForest { trees })
}
