//! Equal-angle embedding of unrooted trees and SVG output.

use std::f64::consts::TAU;
use std::fmt::{self, Write as _};
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::matrix::CharacterMatrix;
use crate::parsimony::ancestral_states;
use crate::tree::UnrootedTree;

/// Floor for the minimum drawn edge length.
pub const EPSILON_FLOOR: f64 = 1e-3;
/// Minimum drawn edge length as a fraction of the median positive length.
pub const EPSILON_FRACTION: f64 = 0.05;
/// Long side of the SVG drawing area before margins.
pub const VIEW_LONG_SIDE: f64 = 1000.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum LengthMode {
    #[default]
    Unit,
    /// Per-edge change counts from an ancestral reconstruction.
    Changes,
    /// Branch lengths stored on the tree (consensus support); 1 when absent.
    Support,
}

impl FromStr for LengthMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "unit" => Ok(Self::Unit),
            "changes" => Ok(Self::Changes),
            "support" => Ok(Self::Support),
            _ => Err(Error::Config(format!("unknown edge length mode {s:?} (expected unit|changes|support)"))),
        }
    }
}

impl fmt::Display for LengthMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Unit => "unit",
            Self::Changes => "changes",
            Self::Support => "support",
        })
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct LayoutOptions<'a> {
    pub mode: LengthMode,
    /// Required by [`LengthMode::Changes`].
    pub matrix: Option<&'a CharacterMatrix>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddedNode {
    pub x: f64,
    pub y: f64,
    pub label: Option<String>,
    /// Direction of the edge from the parent (the label anchor angle for leaves).
    pub angle: f64,
    /// Start angle and width of the wedge allotted to this node's subtree.
    pub wedge: (f64, f64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct DrawnEdge {
    pub parent: usize,
    pub child: usize,
    pub length: f64,
    /// The tree's branch length on this edge, shown as support when requested.
    pub support: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddedTree {
    pub nodes: Vec<EmbeddedNode>,
    pub edges: Vec<DrawnEdge>,
    pub start: usize,
    pub epsilon_min: f64,
}

impl EmbeddedTree {
    pub fn validate(&self) -> Result<()> {
        for (i, v) in self.nodes.iter().enumerate() {
            if !(v.x.is_finite() && v.y.is_finite()) {
                return Err(Error::Invalid(format!("node {i} has a non-finite position")));
            }
            if v.label.as_deref() == Some("") {
                return Err(Error::Invalid(format!("leaf {i} has an empty label")));
            }
        }
        for e in &self.edges {
            if e.length + 1e-12 < self.epsilon_min {
                return Err(Error::Invalid(format!("edge {}-{} shorter than epsilon", e.parent, e.child)));
            }
        }
        Ok(())
    }

    pub fn distance(&self, a: usize, b: usize) -> f64 {
        let (p, q) = (&self.nodes[a], &self.nodes[b]);
        (p.x - q.x).hypot(p.y - q.y)
    }

    pub fn leaves(&self) -> impl Iterator<Item = (usize, &EmbeddedNode)> {
        self.nodes.iter().enumerate().filter(|(_, v)| v.label.is_some())
    }
}

fn median(values: &mut [f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    values.sort_by(f64::total_cmp);
    let n = values.len();
    Some(if n % 2 == 1 {
        values[n / 2]
    } else {
        (values[n / 2 - 1] + values[n / 2]) / 2.0
    })
}

/// Minimum drawn edge length for a set of raw lengths.
pub fn epsilon_for(raw: &[f64]) -> f64 {
    let mut positive: Vec<f64> = raw.iter().copied().filter(|&x| x > 0.0).collect();
    let med = median(&mut positive).unwrap_or(1.0);
    (EPSILON_FRACTION * med).max(EPSILON_FLOOR)
}

/// Equal-angle layout: the start node (next to the smallest leaf) sits at the
/// origin, each subtree gets a wedge proportional to its leaf count, and
/// children are placed along their wedge bisectors at the drawn edge length.
/// The first child's bisector points along angle 0.
pub fn equal_angle_layout(tree: &UnrootedTree, opts: &LayoutOptions<'_>) -> Result<EmbeddedTree> {
    let n = tree.leaf_count();
    if n < 3 {
        return Err(Error::Invalid(format!("layout needs at least 3 leaves, got {n}")));
    }
    if let Some((i, _)) = tree.leaves().find(|(_, l)| l.is_empty()) {
        return Err(Error::Invalid(format!("leaf {i} has an empty label")));
    }
    let tree = tree.canonicalize();
    let raw_of: Box<dyn Fn(usize, usize) -> f64> = match opts.mode {
        LengthMode::Unit => Box::new(|_, _| 1.0),
        LengthMode::Support => {
            let t = tree.clone();
            Box::new(move |a, b| t.edge_length(a, b).unwrap_or(1.0))
        }
        LengthMode::Changes => {
            let m = opts
                .matrix
                .ok_or_else(|| Error::Config("edge length mode 'changes' needs a character matrix".into()))?;
            let rec = ancestral_states(&tree, m)?;
            Box::new(move |a, b| rec.changes_on(a, b).unwrap_or(0) as f64)
        }
    };
    let raw: Vec<f64> = tree.edges().iter().map(|e| raw_of(e.a, e.b)).collect();
    let eps = epsilon_for(&raw);

    let start = tree.start_node();
    let pre = tree.preorder(start);
    let mut leaves_below = vec![0usize; tree.node_count()];
    for &(v, parent) in pre.iter().rev() {
        if tree.is_leaf(v) {
            leaves_below[v] = 1;
        }
        if let Some(p) = parent {
            leaves_below[p] += leaves_below[v];
        }
    }
    let min = tree.min_labels_from(start);

    let mut nodes: Vec<EmbeddedNode> = (0..tree.node_count())
        .map(|v| EmbeddedNode {
            x: 0.0,
            y: 0.0,
            label: tree.label(v).map(str::to_string),
            angle: 0.0,
            wedge: (0.0, 0.0),
        })
        .collect();
    let first = tree.sorted_children(start, None, &min)[0];
    let first_width = TAU * leaves_below[first] as f64 / n as f64;
    nodes[start].wedge = (-first_width / 2.0, TAU);

    let mut edges = Vec::with_capacity(tree.edge_count());
    let mut stack = vec![(start, None::<usize>)];
    while let Some((v, parent)) = stack.pop() {
        let (mut cursor, width) = nodes[v].wedge;
        let total = if parent.is_none() { n } else { leaves_below[v] } as f64;
        for c in tree.sorted_children(v, parent, &min) {
            let w = width * leaves_below[c] as f64 / total;
            let theta = cursor + w / 2.0;
            let len = raw_of(v, c).max(eps);
            let (x, y) = (nodes[v].x + len * theta.cos(), nodes[v].y + len * theta.sin());
            let node = &mut nodes[c];
            node.wedge = (cursor, w);
            node.angle = theta;
            node.x = x;
            node.y = y;
            edges.push(DrawnEdge {
                parent: v,
                child: c,
                length: len,
                support: tree.edge_length(v, c),
            });
            cursor += w;
            stack.push((c, Some(v)));
        }
    }
    let e = EmbeddedTree {
        nodes,
        edges,
        start,
        epsilon_min: eps,
    };
    e.validate()?;
    Ok(e)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RenderOptions {
    pub margin: f64,
    pub font_size: f64,
    pub stroke_width: f64,
    pub support_labels: bool,
}

impl Default for RenderOptions {
    fn default() -> Self {
        RenderOptions {
            margin: 20.0,
            font_size: 14.0,
            stroke_width: 2.0,
            support_labels: false,
        }
    }
}

fn xml_escape(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for c in s.chars() {
        match c {
            '&' => out.push_str("&amp;"),
            '<' => out.push_str("&lt;"),
            '>' => out.push_str("&gt;"),
            '"' => out.push_str("&quot;"),
            '\'' => out.push_str("&apos;"),
            _ => out.push(c),
        }
    }
    out
}

/// Rough text extent used to keep labels inside the view box.
fn label_width(label: &str, font_size: f64) -> f64 {
    0.6 * font_size * label.chars().count() as f64
}

/// Standalone SVG 1.1: one `<line>` per edge, one `<text>` per leaf label.
pub fn render_svg(e: &EmbeddedTree, opts: &RenderOptions) -> Result<String> {
    e.validate()?;
    let (mut x0, mut x1, mut y0, mut y1) = (f64::MAX, f64::MIN, f64::MAX, f64::MIN);
    for v in &e.nodes {
        x0 = x0.min(v.x);
        x1 = x1.max(v.x);
        y0 = y0.min(v.y);
        y1 = y1.max(v.y);
    }
    let long = (x1 - x0).max(y1 - y0);
    let scale = if long > 0.0 { VIEW_LONG_SIDE / long } else { 1.0 };
    // SVG y grows downwards
    let px = |x: f64| (x - x0) * scale;
    let py = |y: f64| (y1 - y) * scale;
    let gap = 0.4 * opts.font_size;

    struct Label {
        x: f64,
        y: f64,
        anchor: &'static str,
        text: String,
    }
    let mut labels = Vec::new();
    let (mut bx0, mut bx1, mut by0, mut by1) = (0.0f64, (x1 - x0) * scale, 0.0f64, (y1 - y0) * scale);
    for (_, v) in e.leaves() {
        let text = v.label.clone().unwrap_or_default();
        let (c, s) = (v.angle.cos(), v.angle.sin());
        let lx = px(v.x) + gap * c;
        let ly = py(v.y) - gap * s;
        let anchor = if c >= 0.0 { "start" } else { "end" };
        let w = label_width(&text, opts.font_size);
        let (lo, hi) = if c >= 0.0 { (lx, lx + w) } else { (lx - w, lx) };
        bx0 = bx0.min(lo);
        bx1 = bx1.max(hi);
        by0 = by0.min(ly - opts.font_size / 2.0);
        by1 = by1.max(ly + opts.font_size / 2.0);
        labels.push(Label { x: lx, y: ly, anchor, text });
    }
    let (vx, vy) = (bx0 - opts.margin, by0 - opts.margin);
    let (vw, vh) = (bx1 - bx0 + 2.0 * opts.margin, by1 - by0 + 2.0 * opts.margin);

    let mut out = String::new();
    let _ = writeln!(out, r##"<?xml version="1.0" encoding="UTF-8"?>"##);
    let _ = writeln!(
        out,
        r##"<svg xmlns="http://www.w3.org/2000/svg" version="1.1" viewBox="{vx:.3} {vy:.3} {vw:.3} {vh:.3}" width="{vw:.0}" height="{vh:.0}">"##
    );
    let _ = writeln!(
        out,
        r##"<g stroke="black" stroke-width="{}" stroke-linecap="round" fill="none">"##,
        opts.stroke_width
    );
    for d in &e.edges {
        let (a, b) = (&e.nodes[d.parent], &e.nodes[d.child]);
        let _ = writeln!(
            out,
            r##"<line x1="{:.3}" y1="{:.3}" x2="{:.3}" y2="{:.3}"/>"##,
            px(a.x),
            py(a.y),
            px(b.x),
            py(b.y)
        );
    }
    out.push_str("</g>\n");
    let _ = writeln!(
        out,
        r##"<g font-family="sans-serif" font-size="{}" fill="black">"##,
        opts.font_size
    );
    for l in &labels {
        let _ = writeln!(
            out,
            r##"<text x="{:.3}" y="{:.3}" text-anchor="{}" dominant-baseline="middle">{}</text>"##,
            l.x,
            l.y,
            l.anchor,
            xml_escape(&l.text)
        );
    }
    out.push_str("</g>\n");
    if opts.support_labels {
        let _ = writeln!(
            out,
            r##"<g font-family="sans-serif" font-size="{}" fill="gray" text-anchor="middle">"##,
            opts.font_size * 0.75
        );
        for d in &e.edges {
            let internal = e.nodes[d.child].label.is_none();
            if let (true, Some(s)) = (internal, d.support) {
                let (a, b) = (&e.nodes[d.parent], &e.nodes[d.child]);
                let _ = writeln!(
                    out,
                    r##"<text x="{:.3}" y="{:.3}">{:.2}</text>"##,
                    (px(a.x) + px(b.x)) / 2.0,
                    (py(a.y) + py(b.y)) / 2.0 - gap,
                    s
                );
            }
        }
        out.push_str("</g>\n");
    }
    out.push_str("</svg>\n");
    Ok(out)
}
