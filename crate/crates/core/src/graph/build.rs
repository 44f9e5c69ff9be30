use std::collections::{BTreeMap, HashMap};

use super::extract::{extract_reasoning_entities, DocSpans};
use super::{GraphEdge, GraphNode, NodeKind, ReasoningGraph, Relation, Span};
use crate::error::{Error, Result};
use crate::hash::splitmix64;
use crate::text::{words, Sample, Token};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct GraphOptions {
    pub max_nodes: usize,
    pub max_complete_edges: usize,
    /// Tokens past this position are not encoded, so spans reaching past it
    /// do not become nodes.
    pub max_doc_len: usize,
}

impl Default for GraphOptions {
    fn default() -> Self {
        Self {
            max_nodes: 500,
            max_complete_edges: 20_000,
            max_doc_len: 300,
        }
    }
}

/// Every case-insensitive token-sequence match of `target`, as
/// `(doc, inclusive span)`.
pub fn find_mentions(docs: &[Vec<Token>], target: &str) -> Vec<(usize, Span)> {
    let needle = words(target);
    if needle.is_empty() {
        return Vec::new();
    }
    let mut out = Vec::new();
    for (d, tokens) in docs.iter().enumerate() {
        if tokens.len() < needle.len() {
            continue;
        }
        for s in 0..=tokens.len() - needle.len() {
            if tokens[s..s + needle.len()].iter().zip(&needle).all(|(t, w)| t.surface == *w) {
                out.push((d, (s, s + needle.len() - 1)));
            }
        }
    }
    out
}

fn span_surface(tokens: &[Token], (s, e): Span) -> String {
    tokens[s..=e]
        .iter()
        .map(|t| t.surface.as_str())
        .collect::<Vec<_>>()
        .join(" ")
}

struct SpanNode {
    doc: usize,
    span: Span,
    candidate: Option<usize>,
}

/// Nodes in kind-major order (subject, reasoning, mention, support,
/// candidate), each kind sorted by document and position.
pub fn build_nodes(
    sample: &Sample,
    docs: &[Vec<Token>],
    sidecar: Option<&DocSpans>,
    opts: &GraphOptions,
) -> Result<Vec<GraphNode>> {
    let fixed = docs.len() + sample.candidates.len();
    if fixed > opts.max_nodes {
        return Err(Error::Graph(format!(
            "sample `{}` needs {fixed} support and candidate nodes, above the cap of {}",
            sample.id, opts.max_nodes
        )));
    }
    let doc_len = |d: usize| docs[d].len().min(opts.max_doc_len);
    let mut truncated = 0usize;
    let mut visible = |doc: usize, span: Span| {
        let ok = span.1 < doc_len(doc);
        truncated += usize::from(!ok);
        ok
    };

    let mut subjects: Vec<SpanNode> = find_mentions(docs, &sample.subject)
        .into_iter()
        .filter(|&(d, s)| visible(d, s))
        .map(|(doc, span)| SpanNode {
            doc,
            span,
            candidate: None,
        })
        .collect();
    let mut mentions: Vec<SpanNode> = Vec::new();
    for (c, cand) in sample.candidates.iter().enumerate() {
        for (doc, span) in find_mentions(docs, cand) {
            if visible(doc, span) {
                mentions.push(SpanNode {
                    doc,
                    span,
                    candidate: Some(c),
                });
            }
        }
    }
    if truncated > 0 {
        log::warn!(
            "sample `{}`: {truncated} subject/mention spans lie past the {}-token limit and were dropped",
            sample.id,
            opts.max_doc_len
        );
    }

    let mut claimed: Vec<Vec<Span>> = vec![Vec::new(); docs.len()];
    for n in subjects.iter().chain(&mentions) {
        claimed[n.doc].push(n.span);
    }
    let mut reasoning: Vec<SpanNode> = Vec::new();
    for (d, tokens) in docs.iter().enumerate() {
        let spans: Vec<Span> = match sidecar.and_then(|s| s.get(&d)) {
            Some(given) => given
                .iter()
                .copied()
                .filter(|&(s, e)| {
                    let ok = s <= e && e < doc_len(d);
                    if !ok {
                        log::warn!("sample `{}`: sidecar span {s}..{e} in doc {d} is out of range", sample.id);
                    }
                    ok
                })
                .collect(),
            None if claimed[d].is_empty() => continue,
            None => extract_reasoning_entities(&tokens[..doc_len(d)], &sample.documents[d], &claimed[d]),
        };
        reasoning.extend(spans.into_iter().map(|span| SpanNode {
            doc: d,
            span,
            candidate: None,
        }));
    }

    let key = |n: &SpanNode| (n.doc, n.span, n.candidate);
    subjects.sort_by_key(key);
    reasoning.sort_by_key(key);
    mentions.sort_by_key(key);
    let mut excess = (fixed + subjects.len() + reasoning.len() + mentions.len()).saturating_sub(opts.max_nodes);
    if excess > 0 {
        log::warn!("sample `{}`: dropping {excess} span nodes to stay within {} nodes", sample.id, opts.max_nodes);
    }
    for list in [&mut reasoning, &mut mentions, &mut subjects] {
        let cut = excess.min(list.len());
        list.truncate(list.len() - cut);
        excess -= cut;
    }

    let mut nodes = Vec::new();
    let mut push = |kind: NodeKind, doc: Option<usize>, span: Option<Span>, candidate: Option<usize>, surface: String| {
        nodes.push(GraphNode {
            id: nodes.len(),
            kind,
            doc,
            span,
            candidate,
            surface,
        })
    };
    for (kind, list) in [
        (NodeKind::Subject, &subjects),
        (NodeKind::Reasoning, &reasoning),
        (NodeKind::Mention, &mentions),
    ] {
        for n in list {
            push(kind, Some(n.doc), Some(n.span), n.candidate, span_surface(&docs[n.doc], n.span));
        }
    }
    for d in 0..docs.len() {
        push(NodeKind::Support, Some(d), None, None, format!("doc {d}"));
    }
    for (c, cand) in sample.candidates.iter().enumerate() {
        push(NodeKind::Candidate, None, None, Some(c), cand.clone());
    }
    Ok(nodes)
}

/// Applies relation rules 1–9 from per-document and per-candidate indexes,
/// then joins every still unconnected pair with `complete`. Returns the
/// sorted edges and whether `complete` had to be sampled down.
pub fn build_edges(nodes: &[GraphNode], opts: &GraphOptions) -> (Vec<GraphEdge>, bool) {
    let mut by_doc: BTreeMap<(usize, NodeKind), Vec<usize>> = BTreeMap::new();
    let mut support_of: HashMap<usize, usize> = HashMap::new();
    let mut candidate_of: HashMap<usize, usize> = HashMap::new();
    let mut mentions_of: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    let mut reasoning_by_surface: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for n in nodes {
        match n.kind {
            NodeKind::Support => {
                support_of.insert(n.doc.expect("support doc"), n.id);
            }
            NodeKind::Candidate => {
                candidate_of.insert(n.candidate.expect("candidate index"), n.id);
            }
            kind => {
                by_doc.entry((n.doc.expect("span doc"), kind)).or_default().push(n.id);
                if kind == NodeKind::Mention {
                    mentions_of.entry(n.candidate.expect("mention candidate")).or_default().push(n.id);
                }
                if kind == NodeKind::Reasoning {
                    reasoning_by_surface.entry(n.surface.as_str()).or_default().push(n.id);
                }
            }
        }
    }
    let in_doc = |d: usize, kind: NodeKind| by_doc.get(&(d, kind)).map(Vec::as_slice).unwrap_or(&[]);
    let docs: Vec<usize> = support_of.keys().copied().chain(by_doc.keys().map(|k| k.0)).collect();
    let mut docs = docs;
    docs.sort_unstable();
    docs.dedup();

    let mut edges: Vec<GraphEdge> = Vec::new();
    let pairs_within = |ids: &[usize], rel: Relation, edges: &mut Vec<GraphEdge>| {
        for (i, &x) in ids.iter().enumerate() {
            for &y in &ids[i + 1..] {
                edges.push(GraphEdge::new(x, y, rel));
            }
        }
    };
    let cross = |xs: &[usize], ys: &[usize], rel: Relation, edges: &mut Vec<GraphEdge>| {
        for &x in xs {
            for &y in ys {
                edges.push(GraphEdge::new(x, y, rel));
            }
        }
    };

    let mut candidates: Vec<(usize, usize)> = candidate_of.iter().map(|(&c, &id)| (c, id)).collect();
    candidates.sort_unstable();
    let candidate_ids: Vec<usize> = candidates.iter().map(|&(_, id)| id).collect();
    pairs_within(&candidate_ids, Relation::Can2Can, &mut edges);

    for &d in &docs {
        let men = in_doc(d, NodeKind::Mention);
        let sub = in_doc(d, NodeKind::Subject);
        let rea = in_doc(d, NodeKind::Reasoning);
        if let Some(&sup) = support_of.get(&d) {
            cross(&[sup], men, Relation::Sup2Men, &mut edges);
            let mut cands: Vec<usize> = men
                .iter()
                .map(|&m| candidate_of[&nodes[m].candidate.expect("mention candidate")])
                .collect();
            cands.sort_unstable();
            cands.dedup();
            cross(&[sup], &cands, Relation::Sup2Can, &mut edges);
        }
        cross(sub, rea, Relation::Sub2Rea, &mut edges);
        cross(rea, men, Relation::Rea2Men, &mut edges);
        pairs_within(men, Relation::EdgesIn, &mut edges);
        pairs_within(rea, Relation::Rea2Rea, &mut edges);
    }
    for ids in reasoning_by_surface.values() {
        for (i, &x) in ids.iter().enumerate() {
            for &y in &ids[i + 1..] {
                if nodes[x].doc != nodes[y].doc {
                    edges.push(GraphEdge::new(x, y, Relation::Rea2Rea));
                }
            }
        }
    }
    for (&c, ids) in &mentions_of {
        if let Some(&can) = candidate_of.get(&c) {
            cross(&[can], ids, Relation::Can2Men, &mut edges);
        }
        for (i, &x) in ids.iter().enumerate() {
            for &y in &ids[i + 1..] {
                if nodes[x].doc != nodes[y].doc {
                    edges.push(GraphEdge::new(x, y, Relation::EdgesOut));
                }
            }
        }
    }

    let m = nodes.len();
    let mut covered = vec![false; m * m];
    for e in &edges {
        covered[e.a * m + e.b] = true;
    }
    let mut complete: Vec<GraphEdge> = Vec::new();
    for a in 0..m {
        for b in a + 1..m {
            if !covered[a * m + b] {
                complete.push(GraphEdge::new(a, b, Relation::Complete));
            }
        }
    }
    let capped = complete.len() > opts.max_complete_edges;
    if capped {
        let key = |e: &GraphEdge| (splitmix64(((e.a as u64) << 32) | e.b as u64), e.a, e.b);
        let cap = opts.max_complete_edges;
        if cap == 0 {
            complete.clear();
        } else {
            complete.select_nth_unstable_by_key(cap - 1, key);
            complete.truncate(cap);
        }
    }
    edges.extend(complete);
    edges.sort_unstable();
    edges.dedup();
    (edges, capped)
}

pub fn build_graph(
    sample: &Sample,
    docs: &[Vec<Token>],
    sidecar: Option<&DocSpans>,
    opts: &GraphOptions,
) -> Result<ReasoningGraph> {
    let nodes = build_nodes(sample, docs, sidecar, opts)?;
    let (edges, complete_capped) = build_edges(&nodes, opts);
    if complete_capped {
        log::warn!(
            "sample `{}`: complete relation sampled down to {} edges",
            sample.id,
            opts.max_complete_edges
        );
    }
    Ok(ReasoningGraph {
        sample_id: sample.id.clone(),
        nodes,
        edges,
        complete_capped,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::text::tokenize_doc;

    fn docs(texts: &[&str]) -> Vec<Vec<Token>> {
        texts.iter().enumerate().map(|(d, t)| tokenize_doc(t, d)).collect()
    }

    #[test]
    fn mention_matching() {
        let d = docs(&["the hampton wick war memorial stands"]);
        assert_eq!(find_mentions(&d, "hampton wick"), [(0, (1, 2))]);
        assert_eq!(find_mentions(&d, "Hampton WICK"), [(0, (1, 2))]);
        assert!(find_mentions(&d, "london").is_empty());
    }

    fn sample(docs: &[&str], subject: &str, candidates: &[&str]) -> Sample {
        Sample {
            id: "t".into(),
            relation: "r".into(),
            subject: subject.into(),
            candidates: candidates.iter().map(|c| c.to_string()).collect(),
            documents: docs.iter().map(|d| d.to_string()).collect(),
            answer: None,
            annotations: None,
        }
    }

    #[test]
    fn unmentioned_candidate_still_has_a_node() {
        let texts = ["Alpha met Beta .", "Gamma stayed ."];
        let s = sample(&texts, "alpha", &["beta", "delta"]);
        let g = build_graph(&s, &docs(&texts), None, &GraphOptions::default()).unwrap();
        assert_eq!(g.nodes_of(NodeKind::Support).count(), 2);
        assert_eq!(g.nodes_of(NodeKind::Candidate).count(), 2);
        assert_eq!(g.mentions_by_candidate(2)[1].len(), 0);
        assert_eq!(g.relation_counts()[&Relation::Can2Can], 1);
    }

    #[test]
    fn caps_drop_reasoning_first() {
        let texts = ["Alpha met Beta and Gamma and Delta and Eps ."];
        let s = sample(&texts, "alpha", &["beta", "zeta"]);
        let opts = GraphOptions {
            max_nodes: 6,
            ..GraphOptions::default()
        };
        let g = build_graph(&s, &docs(&texts), None, &opts).unwrap();
        assert_eq!(g.len(), 6);
        let rea: Vec<&str> = g.nodes_of(NodeKind::Reasoning).map(|n| n.surface.as_str()).collect();
        assert_eq!(rea, ["gamma"]);
        let tight = GraphOptions {
            max_nodes: 2,
            ..GraphOptions::default()
        };
        assert!(build_graph(&s, &docs(&texts), None, &tight).is_err());
    }

    #[test]
    fn complete_cap_is_deterministic() {
        let texts = ["a b", "c d", "e f", "g h"];
        let s = sample(&texts, "zz", &["x", "y", "w"]);
        let opts = GraphOptions {
            max_complete_edges: 5,
            ..GraphOptions::default()
        };
        let g1 = build_graph(&s, &docs(&texts), None, &opts).unwrap();
        let g2 = build_graph(&s, &docs(&texts), None, &opts).unwrap();
        assert!(g1.complete_capped);
        assert_eq!(g1.relation_counts()[&Relation::Complete], 5);
        assert_eq!(g1, g2);
    }
}
