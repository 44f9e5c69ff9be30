//! The heterogeneous reasoning graph: five node kinds over document spans
//! and ten undirected relations.

mod build;
mod extract;

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::Neighborhoods;

pub use build::{build_edges, build_graph, build_nodes, find_mentions, GraphOptions};
pub use extract::{extract_reasoning_entities, load_sidecar, DocSpans, Sidecar};

/// Inclusive token span `(start, end)`.
pub type Span = (usize, usize);

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NodeKind {
    #[serde(alias = "sub")]
    Subject,
    #[serde(alias = "rea")]
    Reasoning,
    #[serde(alias = "men")]
    Mention,
    #[serde(alias = "sup")]
    Support,
    #[serde(alias = "can")]
    Candidate,
}

impl NodeKind {
    pub const ALL: [NodeKind; 5] = [
        NodeKind::Subject,
        NodeKind::Reasoning,
        NodeKind::Mention,
        NodeKind::Support,
        NodeKind::Candidate,
    ];

    pub fn short(self) -> &'static str {
        match self {
            NodeKind::Subject => "sub",
            NodeKind::Reasoning => "rea",
            NodeKind::Mention => "men",
            NodeKind::Support => "sup",
            NodeKind::Candidate => "can",
        }
    }

    pub fn from_short(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.short() == s || format!("{k:?}").eq_ignore_ascii_case(s))
    }

    pub fn is_span(self) -> bool {
        matches!(self, NodeKind::Subject | NodeKind::Reasoning | NodeKind::Mention)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Relation {
    Sup2Can,
    Can2Can,
    Sup2Men,
    Can2Men,
    Sub2Rea,
    Rea2Rea,
    Rea2Men,
    EdgesIn,
    EdgesOut,
    Complete,
}

impl Relation {
    pub const ALL: [Relation; 10] = [
        Relation::Sup2Can,
        Relation::Can2Can,
        Relation::Sup2Men,
        Relation::Can2Men,
        Relation::Sub2Rea,
        Relation::Rea2Rea,
        Relation::Rea2Men,
        Relation::EdgesIn,
        Relation::EdgesOut,
        Relation::Complete,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            Relation::Sup2Can => "sup2can",
            Relation::Can2Can => "can2can",
            Relation::Sup2Men => "sup2men",
            Relation::Can2Men => "can2men",
            Relation::Sub2Rea => "sub2rea",
            Relation::Rea2Rea => "rea2rea",
            Relation::Rea2Men => "rea2men",
            Relation::EdgesIn => "edgesin",
            Relation::EdgesOut => "edgesout",
            Relation::Complete => "complete",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|r| r.name() == s)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GraphNode {
    pub id: usize,
    pub kind: NodeKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub doc: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub span: Option<Span>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub candidate: Option<usize>,
    pub surface: String,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct GraphEdge {
    /// Endpoints with `a < b`.
    pub a: usize,
    pub b: usize,
    pub relation: Relation,
}

impl GraphEdge {
    pub fn new(x: usize, y: usize, relation: Relation) -> Self {
        Self {
            a: x.min(y),
            b: x.max(y),
            relation,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReasoningGraph {
    pub sample_id: String,
    pub nodes: Vec<GraphNode>,
    /// Sorted by `(a, b, relation)`.
    pub edges: Vec<GraphEdge>,
    /// Set when the `complete` relation was sampled down to its cap.
    #[serde(default)]
    pub complete_capped: bool,
}

#[derive(Serialize, Deserialize)]
struct GraphJson {
    sample_id: String,
    nodes: Vec<GraphNode>,
    edges: Vec<GraphEdge>,
    relations: BTreeMap<String, usize>,
    #[serde(default)]
    complete_capped: bool,
}

impl ReasoningGraph {
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn nodes_of(&self, kind: NodeKind) -> impl Iterator<Item = &GraphNode> {
        self.nodes.iter().filter(move |n| n.kind == kind)
    }

    /// Candidate node id for each candidate index.
    pub fn candidate_nodes(&self) -> Vec<usize> {
        let mut out: Vec<(usize, usize)> = self
            .nodes_of(NodeKind::Candidate)
            .map(|n| (n.candidate.expect("candidate index"), n.id))
            .collect();
        out.sort_unstable();
        out.into_iter().map(|(_, id)| id).collect()
    }

    /// Mention node ids grouped by candidate index.
    pub fn mentions_by_candidate(&self, candidates: usize) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); candidates];
        for n in self.nodes_of(NodeKind::Mention) {
            out[n.candidate.expect("candidate index")].push(n.id);
        }
        out
    }

    pub fn relation_counts(&self) -> BTreeMap<Relation, usize> {
        let mut out = BTreeMap::new();
        for e in &self.edges {
            *out.entry(e.relation).or_insert(0) += 1;
        }
        out
    }

    pub fn degree(&self, node: usize) -> usize {
        self.edges.iter().filter(|e| e.a == node || e.b == node).count()
    }

    /// Both directions of every `relation` edge, grouped by target.
    pub fn neighborhoods(&self, relation: Relation) -> Neighborhoods {
        let mut pairs = Vec::new();
        for e in self.edges.iter().filter(|e| e.relation == relation) {
            pairs.push((e.a, e.b));
            pairs.push((e.b, e.a));
        }
        Neighborhoods::from_pairs(self.nodes.len(), &pairs)
    }

    /// One neighbor structure per relation, in [`Relation::ALL`] order.
    pub fn all_neighborhoods(&self) -> Vec<Arc<Neighborhoods>> {
        Relation::ALL.iter().map(|&r| Arc::new(self.neighborhoods(r))).collect()
    }

    /// Removes every edge incident to a node of a blocked kind. The nodes
    /// stay, with degree zero.
    pub fn isolate_kinds(&self, blocked: &[NodeKind]) -> ReasoningGraph {
        let kind = |i: usize| self.nodes[i].kind;
        let mut g = self.clone();
        g.edges.retain(|e| !blocked.contains(&kind(e.a)) && !blocked.contains(&kind(e.b)));
        g
    }

    /// Keeps only edges of the listed relations.
    pub fn filter_relations(&self, keep: &[Relation]) -> ReasoningGraph {
        let mut g = self.clone();
        g.edges.retain(|e| keep.contains(&e.relation));
        g
    }

    /// Renumbers nodes so that old node `i` becomes `perm[i]`.
    pub fn permuted(&self, perm: &[usize]) -> ReasoningGraph {
        let mut nodes = self.nodes.clone();
        for n in &mut nodes {
            n.id = perm[n.id];
        }
        nodes.sort_by_key(|n| n.id);
        let mut edges: Vec<GraphEdge> = self
            .edges
            .iter()
            .map(|e| GraphEdge::new(perm[e.a], perm[e.b], e.relation))
            .collect();
        edges.sort_unstable();
        ReasoningGraph {
            sample_id: self.sample_id.clone(),
            nodes,
            edges,
            complete_capped: self.complete_capped,
        }
    }

    pub fn to_json(&self) -> String {
        let json = GraphJson {
            sample_id: self.sample_id.clone(),
            nodes: self.nodes.clone(),
            edges: self.edges.clone(),
            relations: self
                .relation_counts()
                .into_iter()
                .map(|(r, n)| (r.name().to_string(), n))
                .collect(),
            complete_capped: self.complete_capped,
        };
        serde_json::to_string_pretty(&json).expect("graph serializes")
    }

    pub fn from_json(text: &str, path: &Path) -> Result<Self> {
        let json: GraphJson = serde_json::from_str(text).map_err(|source| Error::Json {
            path: path.to_path_buf(),
            source,
        })?;
        for (i, n) in json.nodes.iter().enumerate() {
            if n.id != i {
                return Err(Error::Graph(format!("node {i} carries id {}", n.id)));
            }
        }
        for e in &json.edges {
            if e.a >= e.b || e.b >= json.nodes.len() {
                return Err(Error::Graph(format!("bad edge {e:?}")));
            }
        }
        Ok(Self {
            sample_id: json.sample_id,
            nodes: json.nodes,
            edges: json.edges,
            complete_capped: json.complete_capped,
        })
    }
}
