//! Brute-force edge oracle and graph fixtures shared by the graph tests and
//! the acceptance report.
#![allow(dead_code)]

use hopreader::graph::{build_graph, DocSpans, GraphEdge, GraphNode, GraphOptions, NodeKind, ReasoningGraph, Relation};
use hopreader::text::{gen_synthetic, tokenize_doc, Sample, SynthConfig, Token};

pub fn sample(id: &str, docs: &[&str], subject: &str, candidates: &[&str]) -> Sample {
    Sample {
        id: id.into(),
        relation: "r".into(),
        subject: subject.into(),
        candidates: candidates.iter().map(|c| c.to_string()).collect(),
        documents: docs.iter().map(|d| d.to_string()).collect(),
        answer: None,
        annotations: None,
    }
}

pub fn tokens(s: &Sample) -> Vec<Vec<Token>> {
    s.documents.iter().enumerate().map(|(d, t)| tokenize_doc(t, d)).collect()
}

pub fn build(s: &Sample, sidecar: Option<&DocSpans>) -> ReasoningGraph {
    build_graph(s, &tokens(s), sidecar, &GraphOptions::default()).unwrap()
}

/// Whether `needle` (lowercased whitespace words) occurs as a contiguous
/// token run in `doc`.
pub fn contains_text(doc: &[Token], needle: &str) -> bool {
    let words: Vec<String> = needle.split_whitespace().map(str::to_lowercase).collect();
    !words.is_empty() && doc.windows(words.len()).any(|w| w.iter().zip(&words).all(|(t, x)| &t.surface == x))
}

/// Every relation that rules 1–9 assign to the pair, decided from the two
/// nodes alone.
pub fn rules(x: &GraphNode, y: &GraphNode, s: &Sample, docs: &[Vec<Token>]) -> Vec<Relation> {
    use NodeKind::*;
    let (x, y) = if x.kind <= y.kind { (x, y) } else { (y, x) };
    let same_doc = x.doc.is_some() && x.doc == y.doc;
    let mut out = Vec::new();
    match (x.kind, y.kind) {
        (Support, Candidate) => {
            let doc = &docs[x.doc.unwrap()];
            if contains_text(doc, &s.candidates[y.candidate.unwrap()]) {
                out.push(Relation::Sup2Can);
            }
        }
        (Candidate, Candidate) => out.push(Relation::Can2Can),
        (Mention, Support) if same_doc => out.push(Relation::Sup2Men),
        (Mention, Candidate) if x.candidate == y.candidate => out.push(Relation::Can2Men),
        (Subject, Reasoning) if same_doc => out.push(Relation::Sub2Rea),
        (Reasoning, Reasoning) if same_doc || x.surface == y.surface => out.push(Relation::Rea2Rea),
        (Reasoning, Mention) if same_doc => out.push(Relation::Rea2Men),
        (Mention, Mention) => {
            if same_doc {
                out.push(Relation::EdgesIn);
            }
            if x.candidate == y.candidate && !same_doc {
                out.push(Relation::EdgesOut);
            }
        }
        _ => {}
    }
    out
}

pub fn oracle(g: &ReasoningGraph, s: &Sample) -> Vec<GraphEdge> {
    let docs = tokens(s);
    let mut edges = Vec::new();
    for a in 0..g.len() {
        for b in a + 1..g.len() {
            let rels = rules(&g.nodes[a], &g.nodes[b], s, &docs);
            if rels.is_empty() {
                edges.push(GraphEdge::new(a, b, Relation::Complete));
            }
            edges.extend(rels.into_iter().map(|r| GraphEdge::new(a, b, r)));
        }
    }
    edges.sort();
    edges
}

pub fn fixtures() -> Vec<(Sample, Option<DocSpans>)> {
    let mut sidecar = DocSpans::new();
    sidecar.insert(1, vec![(0, 1)]);
    vec![
        (
            sample("two_docs", &["alma visited Rome with bex .", "Rome hosted cora ."], "alma", &["bex", "cora"]),
            None,
        ),
        (
            sample(
                "repeats",
                &["bex and bex met cora near Oslo .", "Oslo saw bex again .", "alma left Oslo for cora ."],
                "alma",
                &["bex", "cora", "dune"],
            ),
            None,
        ),
        (
            sample(
                "quiet_doc",
                &["alma founded Kestrel Works in 1921 .", "Nothing happened at Vail .", "Kestrel Works sold fenn ."],
                "alma",
                &["fenn", "gale"],
            ),
            None,
        ),
        (
            sample(
                "multi_token",
                &["The New York office of alma boro moved .", "york is not New York , said Ida ."],
                "alma boro",
                &["new york", "york"],
            ),
            None,
        ),
        (
            sample(
                "sidecar",
                &["alma met Nils .", "the river delta feeds pike .", "Nils fished pike ."],
                "alma",
                &["pike", "trout"],
            ),
            Some(sidecar),
        ),
        (
            sample(
                "subject_everywhere",
                &["alma and Berg .", "alma and Berg and alma .", "Berg knew alma and cole ."],
                "alma",
                &["cole", "dara"],
            ),
            None,
        ),
    ]
}

pub fn synthetic() -> Vec<Sample> {
    let mut out = gen_synthetic(&SynthConfig {
        seed: 11,
        count: 10,
        ..SynthConfig::default()
    })
    .unwrap();
    out.extend(
        gen_synthetic(&SynthConfig {
            seed: 12,
            count: 10,
            hop_length: 3,
            n_candidates: 4,
            ..SynthConfig::default()
        })
        .unwrap(),
    );
    out
}

/// Every fixture and synthetic sample with its sidecar and built graph.
pub fn all_graphs() -> Vec<(Sample, Option<DocSpans>, ReasoningGraph)> {
    let mut out: Vec<(Sample, Option<DocSpans>, ReasoningGraph)> = fixtures()
        .into_iter()
        .map(|(s, sc)| {
            let g = build(&s, sc.as_ref());
            (s, sc, g)
        })
        .collect();
    out.extend(synthetic().into_iter().map(|s| {
        let g = build(&s, None);
        (s, None, g)
    }));
    out
}
