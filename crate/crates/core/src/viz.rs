//! Graph and document renderings of one scored sample.
//!
//! Node colors follow the kind: subject gray, reasoning orange, mention
//! green, candidate blue, support red. Edge pen width grows linearly with
//! the final-hop attention the edge received, and mention/candidate nodes
//! darken with their output-head score.

use std::collections::BTreeMap;
use std::fmt::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{NodeKind, ReasoningGraph, Relation};
use crate::model::{ForwardOptions, Model, Prepared};
use crate::numeric::Tape;
use crate::scorer::predict;
use crate::text::{tokenize_doc, Sample};

/// One drawn edge: an unordered node pair with every relation it carries.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DisplayEdge {
    pub a: usize,
    pub b: usize,
    pub relations: Vec<Relation>,
    /// In `[0, 1]`.
    pub weight: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VizSnapshot {
    pub graph: ReasoningGraph,
    pub edges: Vec<DisplayEdge>,
    /// Raw `f_can` / `f_men` output for candidate and mention nodes.
    pub node_scores: Vec<Option<f64>>,
    pub candidates: Vec<String>,
    pub predicted: usize,
    pub answer: Option<usize>,
    /// Mention node with the largest `f_men` output.
    pub menmax: Option<usize>,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct VizOptions {
    /// Draw `complete` edges too.
    pub show_complete: bool,
}

/// Pair weights from per-relation attention.
///
/// `attention[r]` holds `heads × entries` coefficients over the neighborhood
/// lists of relation `r`. Each directed coefficient is averaged over heads
/// and divided by the largest one its target received under that relation;
/// a pair's weight is the mean over its relations and both directions.
/// Without attention every pair gets weight 1.
pub fn display_edges(
    graph: &ReasoningGraph,
    attention: &[Option<std::sync::Arc<Vec<f64>>>],
    opts: VizOptions,
) -> Vec<DisplayEdge> {
    let mut pairs: BTreeMap<(usize, usize), (Vec<Relation>, f64, usize)> = BTreeMap::new();
    for e in &graph.edges {
        if e.relation == Relation::Complete && !opts.show_complete {
            continue;
        }
        pairs.entry((e.a, e.b)).or_default().0.push(e.relation);
    }
    for &rel in Relation::ALL.iter() {
        let Some(Some(alpha)) = attention.get(rel.index()) else { continue };
        let nbrs = graph.neighborhoods(rel);
        let entries = nbrs.entries();
        if entries == 0 {
            continue;
        }
        let heads = alpha.len() / entries;
        let mean = |k: usize| (0..heads).map(|h| alpha[h * entries + k]).sum::<f64>() / heads as f64;
        for target in 0..nbrs.nodes() {
            let range = nbrs.range(target);
            let top = range.clone().map(mean).fold(0.0, f64::max);
            for (k, &source) in range.zip(nbrs.of(target)) {
                let key = (target.min(source), target.max(source));
                if let Some(slot) = pairs.get_mut(&key) {
                    slot.1 += if top > 0.0 { mean(k) / top } else { 0.0 };
                    slot.2 += 1;
                }
            }
        }
    }
    pairs
        .into_iter()
        .map(|((a, b), (relations, sum, n))| DisplayEdge {
            a,
            b,
            relations,
            weight: if n == 0 { 1.0 } else { (sum / n as f64).clamp(0.0, 1.0) },
        })
        .collect()
}

/// Runs `model` on `prep` and records what the renderings need.
pub fn snapshot(model: &Model, prep: &Prepared, sample: &Sample, opts: VizOptions) -> Result<VizSnapshot> {
    let tape = Tape::new();
    let bound = model.store.bind_frozen(&tape);
    let out = model.forward(&tape, &bound, prep, &ForwardOptions::default())?;
    let graph = &prep.graph;
    let mut node_scores = vec![None; graph.len()];
    for (&node, &s) in prep.candidate_nodes.iter().zip(out.candidate_scores.value().data()) {
        node_scores[node] = Some(s);
    }
    let mut menmax: Option<(usize, f64)> = None;
    if let Some(men) = out.mention_scores {
        for (&node, &s) in prep.mention_groups.iter().flatten().zip(men.value().data()) {
            node_scores[node] = Some(s);
        }
        for node in graph.nodes_of(NodeKind::Mention).map(|n| n.id) {
            let s = node_scores[node].expect("mention scored");
            if menmax.map_or(true, |(_, best)| s > best) {
                menmax = Some((node, s));
            }
        }
    }
    Ok(VizSnapshot {
        graph: graph.clone(),
        edges: display_edges(graph, &out.attention, opts),
        node_scores,
        candidates: sample.candidates.clone(),
        predicted: predict(out.scores.value().data()),
        answer: prep.answer,
        menmax: menmax.map(|(n, _)| n),
    })
}

/// `(border, fill rgb)` per kind.
pub fn kind_color(kind: NodeKind) -> (&'static str, &'static str) {
    match kind {
        NodeKind::Subject => ("gray", "#808080"),
        NodeKind::Reasoning => ("orange", "#ffa500"),
        NodeKind::Mention => ("green", "#2e8b57"),
        NodeKind::Candidate => ("blue", "#1e64c8"),
        NodeKind::Support => ("red", "#d03030"),
    }
}

fn dot_escape(s: &str) -> String {
    s.replace('\\', "\\\\").replace('"', "\\\"")
}

/// Min-max normalized head scores per kind; `0.5` when all scores match.
fn normalized_scores(snap: &VizSnapshot) -> Vec<Option<f64>> {
    let mut out = vec![None; snap.node_scores.len()];
    for kind in [NodeKind::Mention, NodeKind::Candidate] {
        let ids: Vec<usize> = snap.graph.nodes_of(kind).map(|n| n.id).collect();
        let vals: Vec<f64> = ids.iter().filter_map(|&i| snap.node_scores[i]).collect();
        let lo = vals.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = vals.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        for &i in &ids {
            out[i] = snap.node_scores[i].map(|s| if hi > lo { (s - lo) / (hi - lo) } else { 0.5 });
        }
    }
    out
}

pub const MIN_PEN: f64 = 0.5;
pub const MAX_PEN: f64 = 5.0;

pub fn pen_width(weight: f64) -> f64 {
    MIN_PEN + (MAX_PEN - MIN_PEN) * weight
}

/// Graphviz text for the snapshot. Output depends only on the snapshot.
pub fn emit_dot(snap: &VizSnapshot) -> String {
    let norm = normalized_scores(snap);
    let mut out = String::new();
    let _ = writeln!(out, "graph \"{}\" {{", dot_escape(&snap.graph.sample_id));
    let _ = writeln!(out, "  graph [overlap=false, splines=true];");
    let _ = writeln!(out, "  node [style=filled, fontname=\"Helvetica\"];");
    for node in &snap.graph.nodes {
        let (border, rgb) = kind_color(node.kind);
        let alpha = match norm[node.id] {
            Some(v) => (0x20 as f64 + v * (0xff - 0x20) as f64).round() as u8,
            None => 0xff,
        };
        let mut label = format!("{}: {}", node.kind.short(), node.surface);
        if snap.menmax == Some(node.id) {
            label.push_str(" [MENMAX]");
        }
        let mut attrs = format!(
            "label=\"{}\", color=\"{border}\", fillcolor=\"{rgb}{alpha:02x}\"",
            dot_escape(&label)
        );
        if let Some(s) = snap.node_scores[node.id] {
            let _ = write!(attrs, ", tooltip=\"{s:.6}\"");
        }
        if node.kind == NodeKind::Candidate && node.candidate == Some(snap.predicted) {
            attrs.push_str(", penwidth=3");
        }
        let _ = writeln!(out, "  n{} [{attrs}];", node.id);
    }
    for e in &snap.edges {
        let names: Vec<&str> = e.relations.iter().map(|r| r.name()).collect();
        let _ = writeln!(
            out,
            "  n{} -- n{} [penwidth={:.3}, tooltip=\"{} {:.3}\"];",
            e.a,
            e.b,
            pen_width(e.weight),
            names.join(","),
            e.weight
        );
    }
    out.push_str("}\n");
    out
}

fn html_escape(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for c in s.chars() {
        match c {
            '&' => out.push_str("&amp;"),
            '<' => out.push_str("&lt;"),
            '>' => out.push_str("&gt;"),
            '"' => out.push_str("&quot;"),
            '\'' => out.push_str("&#39;"),
            _ => out.push(c),
        }
    }
    out
}

const STYLE: &str = "body{font-family:sans-serif;max-width:60em;margin:2em auto;line-height:1.5}\
.sub{background:#c8c8c8}.rea{background:#ffd27f}.men{background:#9fdfb4}.can{background:#a9c5f0}\
.answer{outline:2px solid #000;outline-offset:1px}.menmax{font-size:70%;font-weight:bold;color:#2e8b57;vertical-align:super}\
.doc{margin:.6em 0;padding:.4em .6em;border-left:4px solid #d03030}.doc h3{margin:0;font-size:90%;color:#d03030}";

/// A standalone page: prediction header, candidates, and every document with
/// its subject, reasoning and mention spans highlighted.
pub fn emit_html(sample: &Sample, snap: &VizSnapshot) -> String {
    let mut out = String::new();
    let title = html_escape(&sample.id);
    let _ = write!(
        out,
        "<!DOCTYPE html>\n<html>\n<head>\n<meta charset=\"utf-8\">\n<title>{title}</title>\n<style>{STYLE}</style>\n</head>\n<body>\n"
    );
    let predicted = &snap.candidates[snap.predicted];
    let verdict = match snap.answer {
        Some(a) if a == snap.predicted => " (correct)",
        Some(_) => " (wrong)",
        None => "",
    };
    let _ = writeln!(out, "<h1>{title}</h1>");
    let _ = writeln!(out, "<p><b>Query:</b> {}</p>", html_escape(&sample.query()));
    let _ = writeln!(out, "<p><b>Prediction:</b> {}{verdict}</p>", html_escape(predicted));
    let _ = write!(out, "<p><b>Candidates:</b>");
    for (i, c) in snap.candidates.iter().enumerate() {
        let class = if Some(i) == snap.answer { "can answer" } else { "can" };
        let _ = write!(out, " <span class=\"{class}\">{}</span>", html_escape(c));
    }
    out.push_str("</p>\n");

    let answer_node = |candidate: Option<usize>| candidate.is_some() && candidate == snap.answer;
    for (d, text) in sample.documents.iter().enumerate() {
        let tokens = tokenize_doc(text, d);
        let mut marks: Vec<(usize, usize, String, bool)> = Vec::new();
        for node in snap.graph.nodes.iter().filter(|n| n.kind.is_span() && n.doc == Some(d)) {
            let (s, e) = node.span.expect("span node");
            let (Some(first), Some(last)) = (tokens.get(s), tokens.get(e)) else { continue };
            let mut class = node.kind.short().to_string();
            if node.kind == NodeKind::Mention && answer_node(node.candidate) {
                class.push_str(" answer");
            }
            marks.push((first.char_span.0, last.char_span.1, class, snap.menmax == Some(node.id)));
        }
        marks.sort_by_key(|m| (m.0, std::cmp::Reverse(m.1)));
        let _ = write!(out, "<div class=\"doc\"><h3>document {d}</h3>");
        let mut at = 0;
        for (start, end, class, menmax) in marks {
            if start < at {
                continue;
            }
            out.push_str(&html_escape(&text[at..start]));
            let _ = write!(out, "<span class=\"{class}\">{}</span>", html_escape(&text[start..end]));
            if menmax {
                out.push_str("<span class=\"menmax\">MENMAX</span>");
            }
            at = end;
        }
        out.push_str(&html_escape(&text[at..]));
        out.push_str("</div>\n");
    }
    out.push_str("</body>\n</html>\n");
    out
}

/// A file-system-safe directory name for a sample id.
pub fn sample_dir_name(id: &str) -> String {
    id.chars()
        .map(|c| if c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.') { c } else { '_' })
        .collect()
}

/// Writes `graph.dot` and `report.html` under `root/<sample id>/`.
pub fn write_outputs(root: &Path, sample: &Sample, snap: &VizSnapshot) -> Result<(PathBuf, PathBuf)> {
    let dir = root.join(sample_dir_name(&sample.id));
    std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    let dot = dir.join("graph.dot");
    let html = dir.join("report.html");
    std::fs::write(&dot, emit_dot(snap)).map_err(|e| Error::io(&dot, e))?;
    std::fs::write(&html, emit_html(sample, snap)).map_err(|e| Error::io(&html, e))?;
    Ok((dot, html))
}
