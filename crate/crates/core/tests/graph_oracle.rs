//! Edge construction against a pair-by-pair oracle, plus structural
//! invariants of every constructed graph.

mod common;

use std::collections::BTreeMap;
use std::path::Path;

use common::{all_graphs, build, fixtures, oracle, synthetic, tokens};
use hopreader::graph::{build_graph, GraphEdge, GraphOptions, NodeKind, ReasoningGraph, Relation};
use hopreader::text::{gen_synthetic, SynthConfig};

#[test]
fn edges_match_the_brute_force_oracle() {
    let graphs = all_graphs();
    assert!(graphs.len() >= 26);
    for (s, _, g) in &graphs {
        assert_eq!(g.edges, oracle(g, s), "sample {}", s.id);
    }
}

#[test]
fn hand_counted_two_document_fixture() {
    let (s, _) = &fixtures()[0];
    let g = build(s, None);
    let kinds: Vec<(NodeKind, &str)> = g.nodes.iter().map(|n| (n.kind, n.surface.as_str())).collect();
    assert_eq!(
        kinds,
        [
            (NodeKind::Subject, "alma"),
            (NodeKind::Reasoning, "rome"),
            (NodeKind::Reasoning, "rome"),
            (NodeKind::Mention, "bex"),
            (NodeKind::Mention, "cora"),
            (NodeKind::Support, "doc 0"),
            (NodeKind::Support, "doc 1"),
            (NodeKind::Candidate, "bex"),
            (NodeKind::Candidate, "cora"),
        ]
    );
    let expected: BTreeMap<Relation, usize> = [
        (Relation::Sup2Can, 2),
        (Relation::Can2Can, 1),
        (Relation::Sup2Men, 2),
        (Relation::Can2Men, 2),
        (Relation::Sub2Rea, 1),
        (Relation::Rea2Rea, 1),
        (Relation::Rea2Men, 2),
        (Relation::Complete, 36 - 11),
    ]
    .into_iter()
    .collect();
    assert_eq!(g.relation_counts(), expected);
}

#[test]
fn repeated_mentions_split_into_edgesin_and_edgesout() {
    let (s, _) = &fixtures()[1];
    let g = build(s, None);
    let counts = g.relation_counts();
    // bex: two in doc 0, one in doc 1; cora: doc 0 and doc 2.
    // Same-doc mention pairs: doc 0 has {bex, bex, cora} → 3.
    assert_eq!(counts[&Relation::EdgesIn], 3);
    // Cross-doc same-candidate pairs: bex 2×1, cora 1×1.
    assert_eq!(counts[&Relation::EdgesOut], 3);
    assert_eq!(g.mentions_by_candidate(3)[2].len(), 0);
}

#[test]
fn documents_without_claims_get_no_reasoning_nodes() {
    let (s, _) = &fixtures()[2];
    let g = build(s, None);
    let rea: Vec<(usize, &str)> = g
        .nodes_of(NodeKind::Reasoning)
        .map(|n| (n.doc.unwrap(), n.surface.as_str()))
        .collect();
    assert_eq!(rea, [(0, "kestrel works"), (0, "1921"), (2, "kestrel works")]);
}

#[test]
fn sidecar_spans_replace_the_heuristic_for_their_document() {
    let (s, sc) = &fixtures()[4];
    let g = build(s, sc.as_ref());
    let rea: Vec<(usize, &str)> = g
        .nodes_of(NodeKind::Reasoning)
        .map(|n| (n.doc.unwrap(), n.surface.as_str()))
        .collect();
    assert_eq!(rea, [(0, "nils"), (1, "the river"), (2, "nils")]);
}

#[test]
fn every_pair_is_covered_and_complete_marks_only_uncovered_pairs() {
    for (s, _, g) in all_graphs() {
        let m = g.len();
        let mut by_pair: BTreeMap<(usize, usize), Vec<Relation>> = BTreeMap::new();
        for e in &g.edges {
            assert!(e.a < e.b, "{}: self edge or unordered pair", s.id);
            by_pair.entry((e.a, e.b)).or_default().push(e.relation);
        }
        assert_eq!(by_pair.len(), m * (m - 1) / 2, "{}: uncovered pairs", s.id);
        for ((a, b), rels) in &by_pair {
            let has_complete = rels.contains(&Relation::Complete);
            assert!(!has_complete || rels.len() == 1, "{}: complete beside a rule on ({a},{b})", s.id);
            assert!(
                !(rels.contains(&Relation::EdgesIn) && rels.contains(&Relation::EdgesOut)),
                "{}: edgesin and edgesout on one pair",
                s.id
            );
            let mut dedup = rels.clone();
            dedup.dedup();
            assert_eq!(&dedup, rels, "{}: repeated relation on one pair", s.id);
        }
    }
}

#[test]
fn endpoint_kinds_match_their_relation() {
    use NodeKind::*;
    for (s, _, g) in all_graphs() {
        for e in &g.edges {
            let mut kinds = [g.nodes[e.a].kind, g.nodes[e.b].kind];
            kinds.sort();
            let ok = match e.relation {
                Relation::Sup2Can => kinds == [Support, Candidate],
                Relation::Can2Can => kinds == [Candidate, Candidate],
                Relation::Sup2Men => kinds == [Mention, Support],
                Relation::Can2Men => kinds == [Mention, Candidate],
                Relation::Sub2Rea => kinds == [Subject, Reasoning],
                Relation::Rea2Rea => kinds == [Reasoning, Reasoning],
                Relation::Rea2Men => kinds == [Reasoning, Mention],
                Relation::EdgesIn | Relation::EdgesOut => kinds == [Mention, Mention],
                Relation::Complete => true,
            };
            assert!(ok, "{}: {:?} joins {kinds:?}", s.id, e.relation);
        }
    }
}

#[test]
fn node_invariants_hold() {
    for (s, _, g) in all_graphs() {
        assert_eq!(g.nodes_of(NodeKind::Support).count(), s.documents.len());
        assert_eq!(g.nodes_of(NodeKind::Candidate).count(), s.candidates.len());
        for (i, n) in g.nodes.iter().enumerate() {
            assert_eq!(n.id, i);
            if n.kind == NodeKind::Mention {
                assert_eq!(n.surface, s.candidates[n.candidate.unwrap()].to_lowercase());
            }
        }
    }
}

#[test]
fn synthetic_graphs_hold_the_clue_path() {
    for s in gen_synthetic(&SynthConfig {
        seed: 21,
        count: 20,
        ..SynthConfig::default()
    })
    .unwrap()
    {
        let g = build(&s, None);
        let answer = s.answer_index().unwrap();
        let has = |a: usize, b: usize, r: Relation| g.edges.contains(&GraphEdge::new(a, b, r));
        let found = g.nodes_of(NodeKind::Subject).any(|sub| {
            g.nodes_of(NodeKind::Reasoning).any(|r1| {
                has(sub.id, r1.id, Relation::Sub2Rea)
                    && g.nodes_of(NodeKind::Reasoning).any(|r2| {
                        (r1.id == r2.id || has(r1.id, r2.id, Relation::Rea2Rea))
                            && g.nodes_of(NodeKind::Mention).any(|m| {
                                m.candidate == Some(answer)
                                    && has(r2.id, m.id, Relation::Rea2Men)
                                    && has(m.id, g.candidate_nodes()[answer], Relation::Can2Men)
                            })
                    })
            })
        });
        assert!(found, "{}: no subject → reasoning → mention → candidate path", s.id);
    }
}

#[test]
fn construction_is_deterministic_and_serializes() {
    for (s, sc, g) in all_graphs() {
        let again = build(&s, sc.as_ref());
        assert_eq!(g, again);
        let json = g.to_json();
        assert_eq!(json, again.to_json());
        let back = ReasoningGraph::from_json(&json, Path::new("mem")).unwrap();
        assert_eq!(back, g);
    }
}

#[test]
fn blocking_kinds_isolates_their_nodes() {
    let (s, _) = &fixtures()[1];
    let g = build(s, None);
    let blocked = g.isolate_kinds(&[NodeKind::Reasoning, NodeKind::Support]);
    for n in &blocked.nodes {
        let isolated = matches!(n.kind, NodeKind::Reasoning | NodeKind::Support);
        assert_eq!(blocked.degree(n.id) == 0, isolated, "node {n:?}");
    }
    assert_eq!(blocked.nodes, g.nodes);
    let all = g.isolate_kinds(&NodeKind::ALL);
    assert!(all.edges.is_empty());
}

#[test]
fn caps_bound_the_node_count() {
    for s in synthetic() {
        let opts = GraphOptions {
            max_nodes: s.documents.len() + s.candidates.len() + 3,
            ..GraphOptions::default()
        };
        let g = build_graph(&s, &tokens(&s), None, &opts).unwrap();
        assert!(g.len() <= opts.max_nodes);
        assert_eq!(g.nodes_of(NodeKind::Reasoning).count(), 0, "{}: reasoning nodes go first", s.id);
        let m = g.len();
        let pairs: std::collections::BTreeSet<(usize, usize)> = g.edges.iter().map(|e| (e.a, e.b)).collect();
        assert_eq!(pairs.len(), m * (m - 1) / 2);
    }
}
