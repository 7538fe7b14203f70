//! Acceptance suite: one PASS/FAIL line per criterion, non-zero exit on any
//! failure. Runs without the libtest harness so the lines are always shown.

mod common;

use std::collections::{BTreeMap, BTreeSet};
use std::f64::consts::TAU;
use std::fs;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::process::{Command, Stdio};
use std::time::{Duration, Instant};

use rand::Rng;

use common::{bipartitions, brute_fitch, labels, move_random_leaf, random_matrix, random_rich_matrix, random_tree, rng};
use stemma_core::consensus::{consensus, ConsensusMethod, ConsensusOptions, SplitTally};
use stemma_core::layout::{equal_angle_layout, render_svg, LayoutOptions, LengthMode, RenderOptions};
use stemma_core::matrix::{matrix_tsv, parse_matrix, read_matrix, sites_tsv, write_matrix, CharacterMatrix};
use stemma_core::parsimony::{all_topologies, fitch_score, search, topology_count, SearchConfig, SearchMode};
use stemma_core::phylio::{parse_newick, phylip_string, NewickForest};
use stemma_core::pipeline::{cmd_run, PipelineConfig, CONSENSUS_FILE, RUN_ARTIFACTS};
use stemma_core::synth::{synthetic_corpus, CLUSTER, IDENTICAL_PAIRS};
use stemma_core::{UnrootedTree, WitnessId};

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome, u64);

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {
        let holds: bool = $cond;
        if !holds {
            return Err(format!($($fmt)+));
        }
    };
}

fn exhaustive(max_trees: usize) -> SearchConfig {
    SearchConfig {
        mode: SearchMode::Exhaustive,
        max_trees,
        ..Default::default()
    }
}

fn fitch_oracle() -> Outcome {
    let mut r = rng(1);
    for i in 0..200 {
        let n = r.gen_range(3..=6);
        let sites = r.gen_range(1..=5);
        let states = r.gen_range(2..=4);
        let m = random_matrix(&mut r, n, sites, states, 0.1);
        let t = random_tree(&mut r, &labels(n), None);
        let fast = fitch_score(&t, &m).map_err(|e| e.to_string())?;
        let slow = brute_fitch(&t, &m);
        ensure!(fast == slow, "instance {i}: fitch {fast}, brute force {slow} on {}", t.to_newick());
    }
    Ok("200/200 instances agree".into())
}

fn enumeration_counts() -> Outcome {
    let mut seen = Vec::new();
    for (n, want) in [(4, 3u64), (5, 15), (6, 105), (7, 945)] {
        let trees = all_topologies(&labels(n));
        let distinct: BTreeSet<String> = trees.iter().map(|t| t.canonical_key()).collect();
        ensure!(
            trees.len() as u64 == want && distinct.len() as u64 == want && topology_count(n) == want,
            "n={n}: {} trees, {} distinct, formula {}, want {want}",
            trees.len(),
            distinct.len(),
            topology_count(n)
        );
        ensure!(trees.iter().all(|t| t.is_binary() && t.leaf_count() == n), "n={n}: non-binary tree");
        seen.push(trees.len().to_string());
    }
    Ok(format!("counts {}", seen.join("/")))
}

fn heuristic_quality() -> Outcome {
    let mut r = rng(3);
    let mut hits = 0;
    for i in 0..100u64 {
        let sites = r.gen_range(8..=16);
        let states = r.gen_range(2..=3);
        let m = random_matrix(&mut r, 7, sites, states, 0.05);
        let best = search(&m, &exhaustive(1)).map_err(|e| e.to_string())?.best_score;
        let cfg = SearchConfig {
            mode: SearchMode::Heuristic,
            replicates: 10,
            seed: i,
            ..Default::default()
        };
        let h = search(&m, &cfg).map_err(|e| e.to_string())?;
        ensure!(h.best_score >= best, "instance {i}: heuristic {} below optimum {best}", h.best_score);
        for t in &h.trees {
            let s = fitch_score(t, &m).map_err(|e| e.to_string())?;
            ensure!(s == h.best_score, "instance {i}: reported tree scores {s}, not {}", h.best_score);
        }
        if h.best_score == best {
            hits += 1;
        }
    }
    ensure!(hits >= 95, "optimum reached in {hits}/100");
    Ok(format!("optimum reached in {hits}/100"))
}

fn is_cherry(t: &UnrootedTree, a: &str, b: &str) -> bool {
    let (Some(x), Some(y)) = (t.find_leaf(a), t.find_leaf(b)) else {
        return false;
    };
    t.neighbors(x).next() == t.neighbors(y).next()
}

fn duplicate_witness() -> Outcome {
    let mut r = rng(4);
    for i in 0..50 {
        let n = r.gen_range(4..=7);
        let sites = r.gen_range(4..=10);
        let states = r.gen_range(2..=3);
        let m = random_matrix(&mut r, n, sites, states, 0.1);
        let src = r.gen_range(0..n);
        let dup = m
            .with_taxon(WitnessId::new("DUP").unwrap(), m.row(src).to_vec())
            .map_err(|e| e.to_string())?;
        let a = search(&m, &exhaustive(20_000)).map_err(|e| e.to_string())?;
        let b = search(&dup, &exhaustive(20_000)).map_err(|e| e.to_string())?;
        ensure!(!b.capped, "instance {i}: optimal set capped");
        ensure!(a.best_score == b.best_score, "instance {i}: score {} became {}", a.best_score, b.best_score);
        let name = m.taxa()[src].as_str();
        ensure!(
            b.trees.iter().any(|t| is_cherry(t, name, "DUP")),
            "instance {i}: no optimal tree with ({name},DUP) as a cherry"
        );
    }
    Ok("50/50 instances keep the score and admit the cherry".into())
}

fn has_group(bips: &BTreeSet<BTreeSet<String>>, all: &BTreeSet<String>, group: &[&str]) -> bool {
    let g: BTreeSet<String> = group.iter().map(|s| s.to_string()).collect();
    let rest: BTreeSet<String> = all.difference(&g).cloned().collect();
    bips.contains(&g) || bips.contains(&rest)
}

fn synthetic_config(dir: &Path) -> PipelineConfig {
    let input = dir.join("synthetic.xml");
    fs::write(&input, synthetic_corpus(0).xml).unwrap();
    let mut cfg = PipelineConfig {
        input,
        out_dir: dir.join("run"),
        ..Default::default()
    };
    cfg.search.mode = SearchMode::Heuristic;
    cfg.search.seed = 0;
    cfg.consensus.method = ConsensusMethod::Mre;
    cfg
}

fn synthetic_replica() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let cfg = synthetic_config(dir.path());
    let out = cmd_run(&cfg, false).map_err(|e| e.to_string())?;
    let text = fs::read_to_string(cfg.out_dir.join(CONSENSUS_FILE)).map_err(|e| e.to_string())?;
    let tree = parse_newick(&text, None).map_err(|e| e.to_string())?.trees.remove(0);
    ensure!(tree.leaf_count() == 30, "consensus has {} leaves", tree.leaf_count());
    let bips = bipartitions(&tree);
    let all = tree.leaf_labels();
    ensure!(has_group(&bips, &all, &CLUSTER), "cluster {CLUSTER:?} missing from consensus");
    for (a, b) in IDENTICAL_PAIRS {
        ensure!(has_group(&bips, &all, &[a, b]), "pair {a},{b} missing from consensus");
    }
    let r = out.search.unwrap();
    Ok(format!(
        "{} sites, score {}, {} optimal trees, cluster and both pairs present",
        out.sites,
        r.best_score,
        r.trees.len()
    ))
}

fn find_on_path(name: &str) -> Option<std::path::PathBuf> {
    let path = std::env::var_os("PATH")?;
    std::env::split_paths(&path)
        .map(|d| d.join(name))
        .find(|p| p.is_file())
}

fn phylip_interop() -> Outcome {
    let m = CharacterMatrix::from_rows(&[("A601", "010"), ("P67", "0?1")]).map_err(|e| e.to_string())?;
    let text = phylip_string(&m).map_err(|e| e.to_string())?;
    ensure!(text == " 2 3\nA601      010\nP67       0?1\n", "golden mismatch: {text:?}");
    let Some(pars) = find_on_path("pars") else {
        return Ok("golden bytes match; no pars binary on PATH, interop check skipped".into());
    };
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let tmp = dir.path().join("in");
    fs::create_dir_all(&tmp).map_err(|e| e.to_string())?;
    let cfg = synthetic_config(&tmp);
    let xml = fs::read(&cfg.input).map_err(|e| e.to_string())?;
    let synth = stemma_core::pipeline::extract_matrix(&xml, &Default::default(), &Default::default(), &cfg.encode)
        .map_err(|e| e.to_string())?
        .value;
    fs::write(dir.path().join("infile"), phylip_string(&synth).map_err(|e| e.to_string())?)
        .map_err(|e| e.to_string())?;
    let mut child = Command::new(pars)
        .current_dir(dir.path())
        .stdin(Stdio::piped())
        .stdout(Stdio::null())
        .stderr(Stdio::null())
        .spawn()
        .map_err(|e| e.to_string())?;
    use std::io::Write;
    child.stdin.take().unwrap().write_all(b"Y\n").map_err(|e| e.to_string())?;
    let status = child.wait().map_err(|e| e.to_string())?;
    ensure!(status.success(), "pars exited with {status}");
    ensure!(dir.path().join("outtree").is_file(), "pars wrote no outtree");
    Ok("golden bytes match; pars accepted the synthetic infile".into())
}

/// Length on each edge keyed by the leaf set on its far side from the
/// smallest leaf.
fn edge_lengths(t: &UnrootedTree) -> BTreeMap<BTreeSet<String>, Option<u64>> {
    let all = t.leaf_labels();
    let smallest = all.iter().next().unwrap().clone();
    let mut out = BTreeMap::new();
    for e in t.edges() {
        let mut side = BTreeSet::new();
        let mut seen = BTreeSet::from([e.a, e.b]);
        let mut stack = vec![e.b];
        while let Some(v) = stack.pop() {
            if let Some(l) = t.label(v) {
                side.insert(l.to_string());
            }
            for w in t.neighbors(v) {
                if seen.insert(w) {
                    stack.push(w);
                }
            }
        }
        if side.contains(&smallest) {
            side = all.difference(&side).cloned().collect();
        }
        out.insert(side, e.length.map(f64::to_bits));
    }
    out
}

const AWKWARD: [&str; 12] = [
    "A601", "P 67", "it's", "x(y)", "a:b", "Þórr", "[c]", "semi;", "co,ma", "B4859", "_", "q'q'",
];

fn round_trips() -> Outcome {
    let mut r = rng(7);
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    for i in 0..500 {
        let m = random_rich_matrix(&mut r);
        let back = parse_matrix(&matrix_tsv(&m), &sites_tsv(&m)).map_err(|e| format!("matrix {i}: {e}"))?;
        ensure!(back == m, "matrix {i}: TSV round trip differs");
        if i % 25 == 0 {
            let d = dir.path().join(format!("m{i}"));
            write_matrix(&m, &d).map_err(|e| e.to_string())?;
            ensure!(read_matrix(&d).map_err(|e| e.to_string())? == m, "matrix {i}: file round trip differs");
        }
    }
    for i in 0..500 {
        let n = r.gen_range(3..=12);
        let names: Vec<String> = (0..n)
            .map(|k| {
                if k < AWKWARD.len() && r.gen_bool(0.5) {
                    AWKWARD[k].to_string()
                } else {
                    format!("L{k}")
                }
            })
            .collect();
        let with_lengths = r.gen_bool(0.6);
        let mut len = |g: &mut rand_chacha::ChaCha8Rng| -> f64 {
            match g.gen_range(0..4) {
                0 => 0.0,
                1 => g.gen_range(0..100) as f64,
                _ => g.gen::<f64>() * 10.0,
            }
        };
        let t = if with_lengths {
            random_tree(&mut r, &names, Some(&mut len))
        } else {
            random_tree(&mut r, &names, None)
        };
        let text = t.to_newick();
        let back = parse_newick(&text, None).map_err(|e| format!("tree {i}: {e} in {text}"))?;
        ensure!(back.len() == 1, "tree {i}: {} trees parsed", back.len());
        let b = &back.trees[0];
        ensure!(b.leaf_labels() == t.leaf_labels(), "tree {i}: leaf labels differ");
        ensure!(edge_lengths(b) == edge_lengths(&t), "tree {i}: edges differ after {text}");
        ensure!(b.to_newick() == text, "tree {i}: not a fixed point");
    }
    Ok("500 matrices and 500 trees round-trip".into())
}

fn brute_tally(trees: &[UnrootedTree]) -> BTreeMap<BTreeSet<String>, usize> {
    let mut counts = BTreeMap::new();
    for t in trees {
        for b in bipartitions(t) {
            *counts.entry(b).or_insert(0) += 1;
        }
    }
    counts
}

fn consensus_oracle() -> Outcome {
    let mut r = rng(8);
    let names = labels(8);
    let mut nonempty_strict = 0;
    let mut mre_extra = 0;
    for f in 0..100 {
        let base = random_tree(&mut r, &names, None);
        let bases = [move_random_leaf(&mut r, &base), base];
        let trees: Vec<UnrootedTree> = (0..10)
            .map(|_| match r.gen_range(0..10) {
                0..=3 => bases[1].clone(),
                4..=5 => bases[0].clone(),
                6..=8 => move_random_leaf(&mut r, &bases[1]),
                _ => random_tree(&mut r, &names, None),
            })
            .collect();
        let want = brute_tally(&trees);
        let tally = SplitTally::from_trees(&trees).map_err(|e| e.to_string())?;
        let named = |s: &stemma_core::consensus::Split| -> BTreeSet<String> {
            tally.order.names(s.side()).into_iter().map(str::to_string).collect()
        };
        let got: BTreeMap<BTreeSet<String>, usize> = tally.counts.iter().map(|(s, &c)| (named(s), c)).collect();
        ensure!(got == want, "forest {f}: tally differs from brute force");
        for (s, &c) in &tally.counts {
            ensure!(tally.fraction(s) == c as f64 / 10.0, "forest {f}: bad support fraction");
        }
        let forest = NewickForest::new(trees);
        let mut accepted = Vec::new();
        for (method, expect) in [
            (ConsensusMethod::Strict, Some(10usize)),
            (ConsensusMethod::Majority, None),
            (ConsensusMethod::Mre, None),
        ] {
            let c = consensus(&forest, &ConsensusOptions { method, ..Default::default() }).map_err(|e| e.to_string())?;
            let set: BTreeSet<BTreeSet<String>> = c.accepted.iter().map(named).collect();
            ensure!(bipartitions(&c.tree) == set, "forest {f}: {method} tree does not show its splits");
            ensure!(c.tree.leaf_labels() == names.iter().cloned().collect(), "forest {f}: {method} lost taxa");
            let oracle: Option<BTreeSet<BTreeSet<String>>> = match (method, expect) {
                (ConsensusMethod::Strict, Some(k)) => Some(want.iter().filter(|e| *e.1 == k).map(|e| e.0.clone()).collect()),
                (ConsensusMethod::Majority, _) => Some(want.iter().filter(|e| 2 * e.1 > 10).map(|e| e.0.clone()).collect()),
                _ => None,
            };
            if let Some(o) = oracle {
                ensure!(set == o, "forest {f}: {method} splits differ from brute force");
            }
            accepted.push(set);
        }
        ensure!(accepted[0].is_subset(&accepted[1]), "forest {f}: STRICT not within MAJORITY");
        ensure!(accepted[1].is_subset(&accepted[2]), "forest {f}: MAJORITY not within MRE");
        if !accepted[0].is_empty() {
            nonempty_strict += 1;
        }
        if accepted[2].len() > accepted[1].len() {
            mre_extra += 1;
        }
    }
    Ok(format!(
        "100 forests agree; {nonempty_strict} with strict splits, {mre_extra} where MRE adds splits"
    ))
}

fn layout_geometry() -> Outcome {
    let mut r = rng(9);
    let mut zero_edges = 0;
    for i in 0..100 {
        let n = r.gen_range(3..=24);
        let mut len = |g: &mut rand_chacha::ChaCha8Rng| -> f64 {
            if g.gen_bool(0.3) {
                0.0
            } else {
                g.gen::<f64>() * 3.0
            }
        };
        let t = random_tree(&mut r, &labels(n), Some(&mut len));
        let mode = if i % 4 == 0 { LengthMode::Unit } else { LengthMode::Support };
        let e = equal_angle_layout(&t, &LayoutOptions { mode, matrix: None }).map_err(|e| e.to_string())?;
        ensure!((e.nodes[e.start].wedge.1 - TAU).abs() < 1e-9, "tree {i}: start wedge not 2π");
        let mut child_sum = vec![0.0; e.nodes.len()];
        for d in &e.edges {
            child_sum[d.parent] += e.nodes[d.child].wedge.1;
            let dist = e.distance(d.parent, d.child);
            ensure!((dist - d.length).abs() < 1e-9, "tree {i}: edge length {} drawn as {dist}", d.length);
            ensure!(d.length >= e.epsilon_min, "tree {i}: edge shorter than epsilon_min");
            if mode == LengthMode::Support && d.support == Some(0.0) {
                zero_edges += 1;
                ensure!(dist >= e.epsilon_min - 1e-12, "tree {i}: zero-length edge collapsed");
            }
        }
        for (v, node) in e.nodes.iter().enumerate() {
            if node.label.is_none() {
                ensure!((child_sum[v] - node.wedge.1).abs() < 1e-9, "tree {i}: child wedges of node {v} do not sum");
            }
        }
        let leaves: f64 = e.leaves().map(|(_, v)| v.wedge.1).sum();
        ensure!((leaves - TAU).abs() < 1e-9, "tree {i}: leaf wedges sum to {leaves}");
        render_svg(&e, &RenderOptions::default()).map_err(|e| e.to_string())?;
    }
    Ok(format!("100 layouts exact; {zero_edges} zero-length edges kept apart"))
}

fn reproducibility() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let cfg = synthetic_config(dir.path());
    let manifest = dir.path().join("run.manifest");
    fs::write(&manifest, cfg.to_manifest()).map_err(|e| e.to_string())?;
    let snapshot = |d: &Path| -> Result<Vec<Vec<u8>>, String> {
        RUN_ARTIFACTS.iter().map(|f| fs::read(d.join(f)).map_err(|e| format!("{f}: {e}"))).collect()
    };
    let loaded = PipelineConfig::read_manifest(&manifest).map_err(|e| e.to_string())?;
    cmd_run(&loaded, false).map_err(|e| e.to_string())?;
    let first = snapshot(&cfg.out_dir)?;
    fs::remove_dir_all(&cfg.out_dir).map_err(|e| e.to_string())?;
    let again = PipelineConfig::read_manifest(&manifest).map_err(|e| e.to_string())?;
    cmd_run(&again, false).map_err(|e| e.to_string())?;
    let second = snapshot(&cfg.out_dir)?;
    for (k, (a, b)) in first.iter().zip(&second).enumerate() {
        ensure!(a == b, "{} differs between runs", RUN_ARTIFACTS[k]);
        ensure!(!a.is_empty(), "{} is empty", RUN_ARTIFACTS[k]);
    }
    Ok(format!("{} artifacts byte-identical", RUN_ARTIFACTS.len()))
}

fn main() {
    let criteria: [Criterion; 10] = [
        ("fitch oracle equivalence", fitch_oracle, 10),
        ("exhaustive enumeration counts", enumeration_counts, 1),
        ("heuristic quality", heuristic_quality, 60),
        ("duplicate-witness property", duplicate_witness, 30),
        ("synthetic 30-witness replica", synthetic_replica, 120),
        ("PHYLIP format interop", phylip_interop, 60),
        ("matrix and Newick round trips", round_trips, 10),
        ("consensus oracle", consensus_oracle, 20),
        ("layout geometry", layout_geometry, 5),
        ("reproducibility", reproducibility, 120),
    ];
    let mut failed = 0;
    for (k, (name, f, budget)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        let elapsed = start.elapsed();
        let outcome = match outcome {
            Ok(_) if elapsed > Duration::from_secs(*budget) => Err(format!("took longer than {budget} s")),
            o => o,
        };
        let (tag, detail) = match &outcome {
            Ok(d) => ("PASS", d),
            Err(d) => {
                failed += 1;
                ("FAIL", d)
            }
        };
        println!("{tag} criterion {:>2} {name}: {detail} ({:.2} s)", k + 1, elapsed.as_secs_f64());
    }
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
