//! Seeded generator for synthetic TEI traditions with a known tree.
//!
//! The 30 witnesses are named after the manuscripts of a real saga tradition.
//! Two pairs of witnesses are textually identical and five witnesses form a
//! derived group; every internal edge of the generating tree carries at least
//! two shared variants, so the planted groups are recoverable by parsimony.

use std::collections::BTreeSet;
use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::tree::UnrootedTree;

/// Sigla and shelfmarks of the 30 witnesses.
pub const WITNESSES: [(&str, &str); 30] = [
    ("B4859", "BL Add. 4859"),
    ("B4875", "BL Add. 4875"),
    ("B11108", "BL Add. 11108"),
    ("Acc61", "Accessoria 61"),
    ("K614", "Kall 614 4to"),
    ("T1768", "Thott 1768 4to"),
    ("G52", "G-52/1"),
    ("L222", "Lbs 222 fol."),
    ("L381", "Lbs 381 fol."),
    ("L633", "Lbs 633 fol."),
    ("L840", "Lbs 840 4to"),
    ("L1217", "Lbs 1217 4to"),
    ("L1767", "Lbs 1767 4to"),
    ("L2316", "Lbs 2316 4to"),
    ("L2943", "Lbs 2943 4to"),
    ("L3164", "Lbs 3164 4to"),
    ("L4825", "Lbs 4825 4to"),
    ("L3795", "Lbs 3795 8vo"),
    ("L4460", "Lbs 4460 8vo"),
    ("I43", "ÍB 43 fol."),
    ("J634", "JS 634 4to"),
    ("J102", "JS 102 8vo"),
    ("P67", "Papp. fol. nr 67"),
    ("M27", "Ms Germ qu. 27"),
    ("M936", "Ms Germ qu. 936"),
    ("A193", "AM 193 e fol."),
    ("A395", "AM 395 fol."),
    ("A345", "AM 345 4to"),
    ("A587", "AM 587 b 4to"),
    ("A601", "AM 601 b 4to"),
];

/// The derived five-witness group.
pub const CLUSTER: [&str; 5] = ["J102", "L2943", "L4460", "L3795", "L2316"];

/// Witness pairs with identical text.
pub const IDENTICAL_PAIRS: [(&str, &str); 2] = [("A587", "A193"), ("M936", "Acc61")];

#[derive(Debug, Clone)]
pub struct SyntheticCorpus {
    pub xml: String,
    /// The generating tree (unrooted, binary).
    pub tree: UnrootedTree,
    pub site_count: usize,
}

const SYLLABLES: [&str; 24] = [
    "hró", "mund", "ar", "greip", "sson", "kár", "a", "helg", "i", "sk", "jöld", "ung", "ur", "konu", "ngr",
    "sverð", "bró", "ðir", "haug", "ok", "þá", "vík", "ing", "ar",
];

fn word(rng: &mut ChaCha8Rng) -> String {
    let n = rng.gen_range(1..=3);
    (0..n).map(|_| *SYLLABLES.choose(rng).unwrap()).collect()
}

/// Rooted generating tree: `children[v]` for internal nodes `v ≥ 30`.
struct Rooted {
    children: Vec<Vec<usize>>,
    root: usize,
}

impl Rooted {
    fn add(&mut self, kids: Vec<usize>) -> usize {
        self.children.push(kids);
        self.children.len() - 1
    }

    /// Random binary tree over `units` by repeated joining of random pairs.
    fn join_all(&mut self, mut units: Vec<usize>, rng: &mut ChaCha8Rng) -> usize {
        while units.len() > 1 {
            let i = rng.gen_range(0..units.len());
            let a = units.swap_remove(i);
            let j = rng.gen_range(0..units.len());
            let b = units.swap_remove(j);
            let v = self.add(vec![a, b]);
            units.push(v);
        }
        units[0]
    }

    fn leaves_below(&self, v: usize) -> BTreeSet<usize> {
        let mut out = BTreeSet::new();
        let mut stack = vec![v];
        while let Some(x) = stack.pop() {
            if self.children[x].is_empty() {
                out.insert(x);
            }
            stack.extend(&self.children[x]);
        }
        out
    }

    /// `(parent, child)` pairs in preorder.
    fn edges(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        let mut stack = vec![self.root];
        while let Some(v) = stack.pop() {
            for &c in self.children[v].iter().rev() {
                out.push((v, c));
                stack.push(c);
            }
        }
        out
    }

    fn to_unrooted(&self, labels: &[&str]) -> UnrootedTree {
        // drop the degree-2 root and join its two children directly
        let mut remap = vec![usize::MAX; self.children.len()];
        let mut node_labels = Vec::new();
        for v in 0..self.children.len() {
            if v != self.root {
                remap[v] = node_labels.len();
                node_labels.push((v < labels.len()).then(|| labels[v].to_string()));
            }
        }
        let kids = &self.children[self.root];
        let mut edges: Vec<(usize, usize, Option<f64>)> = self
            .edges()
            .into_iter()
            .filter(|&(p, _)| p != self.root)
            .map(|(p, c)| (remap[p], remap[c], None))
            .collect();
        edges.push((remap[kids[0]], remap[kids[1]], None));
        UnrootedTree::from_edges(node_labels, &edges).expect("generated tree is valid")
    }
}

struct Site {
    /// `(reading text, witness indices)` with the lemma first.
    readings: Vec<(String, Vec<usize>)>,
    var_type: &'static str,
}

/// Generates the synthetic tradition for `seed`.
pub fn synthetic_corpus(seed: u64) -> SyntheticCorpus {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sigla: Vec<&str> = WITNESSES.iter().map(|w| w.0).collect();
    let idx = |s: &str| sigla.iter().position(|x| *x == s).unwrap();
    let n = sigla.len();

    let mut t = Rooted {
        children: vec![Vec::new(); n],
        root: 0,
    };
    let cluster: Vec<usize> = CLUSTER.iter().map(|s| idx(s)).collect();
    let cluster_root = t.join_all(cluster.clone(), &mut rng);
    let mut units = vec![cluster_root];
    let mut paired = BTreeSet::new();
    let mut pair_nodes = Vec::new();
    for (a, b) in IDENTICAL_PAIRS {
        let v = t.add(vec![idx(a), idx(b)]);
        pair_nodes.push(v);
        units.push(v);
        paired.insert(idx(a));
        paired.insert(idx(b));
    }
    units.extend((0..n).filter(|i| !cluster.contains(i) && !paired.contains(i)));
    t.root = t.join_all(units, &mut rng);

    let edges = t.edges();
    let root_kids = t.children[t.root].clone();
    let mut sites: Vec<Site> = Vec::new();
    let all: BTreeSet<usize> = (0..n).collect();

    for &(p, c) in &edges {
        let below = t.leaves_below(c);
        let is_leaf = c < n;
        // the two root edges form one unrooted edge; put variants on the first only
        if p == t.root && c == root_kids[1] {
            continue;
        }
        let count = if is_leaf {
            if paired.contains(&c) {
                0
            } else {
                rng.gen_range(0..=1)
            }
        } else if c == cluster_root || pair_nodes.contains(&c) {
            3
        } else {
            rng.gen_range(2..=3)
        };
        for _ in 0..count {
            let base = word(&mut rng);
            let derived = format!("{base}{}", word(&mut rng));
            let outside: Vec<usize> = all.difference(&below).copied().collect();
            let mut readings = vec![(base, outside), (derived.clone(), below.iter().copied().collect())];
            // sometimes a further change nested on a child edge: a third reading
            if !is_leaf && rng.gen_bool(0.25) {
                let child = t.children[c][rng.gen_range(0..2)];
                let inner = t.leaves_below(child);
                if inner.len() < below.len() {
                    readings[1].1.retain(|w| !inner.contains(w));
                    readings.push((format!("{derived}{}", word(&mut rng)), inner.into_iter().collect()));
                }
            }
            let var_type = if rng.gen_bool(0.8) { "major" } else { "minor" };
            sites.push(Site { readings, var_type });
        }
    }

    // a little homoplasy
    for _ in 0..3 {
        let mut pool: Vec<usize> = (0..n).filter(|i| !cluster.contains(i) && !paired.contains(i)).collect();
        pool.shuffle(&mut rng);
        let k = rng.gen_range(2..=3);
        let inner: BTreeSet<usize> = pool[..k].iter().copied().collect();
        let base = word(&mut rng);
        let derived = format!("{base}{}", word(&mut rng));
        sites.push(Site {
            readings: vec![
                (base, all.difference(&inner).copied().collect()),
                (derived, inner.into_iter().collect()),
            ],
            var_type: "minor",
        });
    }
    sites.shuffle(&mut rng);

    // lacunae: a few witnesses outside the planted groups are silent at some sites
    let lacunose: Vec<usize> = ["L222", "K614", "B4875"].iter().map(|s| idx(s)).collect();
    for site in sites.iter_mut() {
        for &w in &lacunose {
            if rng.gen_bool(0.1) {
                for r in site.readings.iter_mut() {
                    if r.1.len() > 1 {
                        r.1.retain(|x| *x != w);
                    }
                }
            }
        }
    }

    let tree = t.to_unrooted(&sigla);
    let xml = render_tei(&sigla, &sites, &mut rng);
    SyntheticCorpus {
        xml,
        tree,
        site_count: sites.len(),
    }
}

fn render_tei(sigla: &[&str], sites: &[Site], rng: &mut ChaCha8Rng) -> String {
    let mut out = String::new();
    out.push_str("<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n");
    out.push_str("<TEI xmlns=\"http://www.tei-c.org/ns/1.0\">\n");
    out.push_str("  <teiHeader>\n    <fileDesc>\n      <titleStmt><title>Synthetic saga tradition</title></titleStmt>\n");
    out.push_str("      <publicationStmt><p>Generated test corpus</p></publicationStmt>\n");
    out.push_str("      <sourceDesc>\n        <listWit>\n");
    for (s, shelf) in WITNESSES.iter() {
        let _ = writeln!(out, "          <witness xml:id=\"{s}\">{shelf}</witness>");
    }
    out.push_str("        </listWit>\n      </sourceDesc>\n    </fileDesc>\n  </teiHeader>\n");
    out.push_str("  <text>\n    <body>\n");
    let half = sites.len().div_ceil(2);
    for (d, chunk) in sites.chunks(half.max(1)).enumerate() {
        let _ = writeln!(out, "      <div xml:id=\"div{}\">", d + 1);
        for (i, site) in chunk.iter().enumerate() {
            let ordinal = d * half + i + 1;
            let _ = write!(out, "        <p>{} ", word(rng));
            let _ = write!(out, "<app xml:id=\"v{ordinal:03}\" type=\"{}\">", site.var_type);
            for (k, (text, wits)) in site.readings.iter().enumerate() {
                let tag = if k == 0 { "lem" } else { "rdg" };
                let wit: Vec<String> = wits.iter().map(|&w| format!("#{}", sigla[w])).collect();
                let _ = write!(out, "<{tag} wit=\"{}\">{text}</{tag}>", wit.join(" "));
            }
            let _ = writeln!(out, "</app> {}</p>", word(rng));
        }
        out.push_str("      </div>\n");
    }
    out.push_str("    </body>\n  </text>\n</TEI>\n");
    out
}

/// Small five-witness sample with typed variants in two sections.
pub const SAMPLE_TEI: &str = include_str!("../data/sample.xml");

#[cfg(test)]
mod tests {
    use super::*;
    use crate::apparatus::{parse_tei, ParseOptions};
    use crate::consensus::tree_splits;

    #[test]
    fn deterministic_and_parseable() {
        let a = synthetic_corpus(0);
        assert_eq!(a.xml, synthetic_corpus(0).xml);
        assert_ne!(a.xml, synthetic_corpus(1).xml);
        let doc = parse_tei(a.xml.as_bytes(), &ParseOptions { strict_witnesses: true, ..Default::default() })
            .unwrap()
            .value;
        assert_eq!(doc.registry.len(), 30);
        assert_eq!(doc.sites.len(), a.site_count);
    }

    #[test]
    fn generating_tree_has_planted_groups() {
        let c = synthetic_corpus(0);
        assert!(c.tree.is_binary());
        assert_eq!(c.tree.leaf_count(), 30);
        let (order, splits) = tree_splits(&c.tree);
        let sides: Vec<BTreeSet<&str>> = splits
            .iter()
            .map(|s| order.names(s.side()).into_iter().collect())
            .collect();
        let has = |group: &[&str]| {
            let g: BTreeSet<&str> = group.iter().copied().collect();
            let rest: BTreeSet<&str> = order.labels().iter().map(String::as_str).filter(|l| !g.contains(l)).collect();
            sides.iter().any(|s| *s == g || *s == rest)
        };
        assert!(has(&CLUSTER));
        for (a, b) in IDENTICAL_PAIRS {
            assert!(has(&[a, b]));
        }
    }

    #[test]
    fn sample_parses() {
        let doc = parse_tei(SAMPLE_TEI.as_bytes(), &ParseOptions::default()).unwrap().value;
        assert_eq!(doc.registry.len(), 5);
        assert!(doc.sites.len() >= 8);
    }
}
