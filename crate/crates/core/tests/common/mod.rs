//! Generators and brute-force oracles shared by the integration tests.
#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use stemma_core::matrix::{CharacterMatrix, SiteMeta, StateCode};
use stemma_core::{UnrootedTree, WitnessId};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn labels(n: usize) -> Vec<String> {
    (1..=n).map(|i| format!("T{i}")).collect()
}

/// Uniform-ish random binary tree by inserting leaves on random edges.
/// `length` is called once per edge when given.
pub fn random_tree(
    rng: &mut ChaCha8Rng,
    labels: &[String],
    mut length: Option<&mut dyn FnMut(&mut ChaCha8Rng) -> f64>,
) -> UnrootedTree {
    assert!(labels.len() >= 3);
    let mut node_labels: Vec<Option<String>> = labels.iter().cloned().map(Some).collect();
    let center = node_labels.len();
    node_labels.push(None);
    let mut edges: Vec<(usize, usize)> = vec![(0, center), (1, center), (2, center)];
    for leaf in 3..labels.len() {
        let k = rng.gen_range(0..edges.len());
        let (u, v) = edges.swap_remove(k);
        let w = node_labels.len();
        node_labels.push(None);
        edges.extend([(u, w), (w, v), (w, leaf)]);
    }
    let with_len: Vec<(usize, usize, Option<f64>)> = edges
        .into_iter()
        .map(|(a, b)| (a, b, length.as_mut().map(|f| f(rng))))
        .collect();
    UnrootedTree::from_edges(node_labels, &with_len).unwrap()
}

/// Random matrix over `T1..Tn` with states drawn from `0..states`.
pub fn random_matrix(rng: &mut ChaCha8Rng, n: usize, sites: usize, states: u8, missing: f64) -> CharacterMatrix {
    let rows: Vec<(String, String)> = labels(n)
        .into_iter()
        .map(|t| {
            let row: String = (0..sites)
                .map(|_| {
                    if rng.gen_bool(missing) {
                        '?'
                    } else {
                        char::from(b'0' + rng.gen_range(0..states))
                    }
                })
                .collect();
            (t, row)
        })
        .collect();
    CharacterMatrix::from_rows(&rows).unwrap()
}

/// Minimum changes over every assignment of states to internal nodes.
pub fn brute_fitch(tree: &UnrootedTree, m: &CharacterMatrix) -> u32 {
    let internal: Vec<usize> = (0..tree.node_count()).filter(|&v| !tree.is_leaf(v)).collect();
    let slot: BTreeMap<usize, usize> = internal.iter().enumerate().map(|(i, &v)| (v, i)).collect();
    let taxon: BTreeMap<usize, usize> = tree
        .leaves()
        .map(|(v, l)| (v, m.taxon_index(l).unwrap()))
        .collect();
    let edges = tree.edges();
    let mut total = 0;
    for site in 0..m.site_count() {
        let k = (0..m.taxon_count())
            .filter_map(|t| m.cell(t, site).value())
            .max()
            .map_or(1, |x| x as usize + 1);
        let mut best = u32::MAX;
        let mut assign = vec![0usize; internal.len()];
        loop {
            let state = |v: usize| -> Option<usize> {
                match slot.get(&v) {
                    Some(&i) => Some(assign[i]),
                    None => m.cell(taxon[&v], site).value().map(usize::from),
                }
            };
            let cost = edges
                .iter()
                .filter(|e| matches!((state(e.a), state(e.b)), (Some(x), Some(y)) if x != y))
                .count() as u32;
            best = best.min(cost);
            let mut i = 0;
            while i < assign.len() {
                assign[i] += 1;
                if assign[i] < k {
                    break;
                }
                assign[i] = 0;
                i += 1;
            }
            if i == assign.len() {
                break;
            }
        }
        total += best;
    }
    total
}

/// Leaf sets on one side of every internal edge, taken on the side without
/// the smallest label.
pub fn bipartitions(tree: &UnrootedTree) -> BTreeSet<BTreeSet<String>> {
    let smallest = tree.leaf_labels().into_iter().next().unwrap();
    let mut out = BTreeSet::new();
    for e in tree.edges() {
        if tree.is_leaf(e.a) || tree.is_leaf(e.b) {
            continue;
        }
        let mut side = BTreeSet::new();
        let mut seen = BTreeSet::from([e.a, e.b]);
        let mut queue = VecDeque::from([e.b]);
        while let Some(v) = queue.pop_front() {
            if let Some(l) = tree.label(v) {
                side.insert(l.to_string());
            }
            for w in tree.neighbors(v) {
                if seen.insert(w) {
                    queue.push_back(w);
                }
            }
        }
        if side.contains(&smallest) {
            side = tree.leaf_labels().difference(&side).cloned().collect();
        }
        out.insert(side);
    }
    out
}

/// Matrix with awkward site metadata for serialization tests.
pub fn random_rich_matrix(rng: &mut ChaCha8Rng) -> CharacterMatrix {
    const PIECES: [&str; 10] = ["a", "þá", " ", "\t", "\\", "\n", "x y", "#", "", "\\t"];
    let n = rng.gen_range(2..7);
    let s = rng.gen_range(0..6);
    let taxa: Vec<WitnessId> = (0..n)
        .map(|i| WitnessId::new(format!("W{i}{}", ["", "ß", "_x", ".1"][i % 4])).unwrap())
        .collect();
    let sites: Vec<SiteMeta> = (0..s)
        .map(|j| {
            let k = rng.gen_range(2..=10usize);
            SiteMeta {
                site_id: format!("s{j}{}", PIECES[rng.gen_range(0..PIECES.len())].trim()),
                ordinal: j + rng.gen_range(0..3),
                var_type: rng.gen_bool(0.5).then(|| ["major", "minor", "o r\th"][rng.gen_range(0..3)].to_string()),
                section_id: rng.gen_bool(0.5).then(|| format!("d{}", rng.gen_range(0..3))),
                readings: (0..k)
                    .map(|r| format!("{r}{}", PIECES[rng.gen_range(0..PIECES.len())]))
                    .collect(),
            }
        })
        .collect();
    // every site uses a contiguous range of at least two states
    let mut cells = vec![Vec::with_capacity(s); n];
    for m in &sites {
        let used = rng.gen_range(2..=m.readings.len().min(n));
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(rng);
        for (i, &t) in order.iter().enumerate() {
            let c = if i < used {
                StateCode::new(i as u8)
            } else if rng.gen_bool(0.15) {
                StateCode::MISSING
            } else {
                StateCode::new(rng.gen_range(0..used) as u8)
            };
            cells[t].push(c);
        }
    }
    CharacterMatrix::new(taxa, sites, cells, 10).unwrap()
}

/// Prunes a random leaf and regrafts it onto a random edge.
pub fn move_random_leaf(rng: &mut ChaCha8Rng, tree: &UnrootedTree) -> UnrootedTree {
    let node_labels: Vec<Option<String>> = (0..tree.node_count()).map(|v| tree.label(v).map(str::to_string)).collect();
    let mut edges: Vec<(usize, usize, Option<f64>)> = tree.edges().iter().map(|e| (e.a, e.b, e.length)).collect();
    let leaves: Vec<usize> = tree.leaves().map(|(v, _)| v).collect();
    let x = leaves[rng.gen_range(0..leaves.len())];
    let p = tree.neighbors(x).next().unwrap();
    let others: Vec<usize> = tree.neighbors(p).filter(|&w| w != x).collect();
    edges.retain(|&(a, b, _)| a != p && b != p);
    edges.push((others[0], others[1], None));
    let k = rng.gen_range(0..edges.len());
    let (u, v, _) = edges.swap_remove(k);
    edges.extend([(u, p, None), (p, v, None), (p, x, None)]);
    UnrootedTree::from_edges(node_labels, &edges).unwrap()
}
