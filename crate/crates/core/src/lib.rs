//! Multi-hop reading comprehension over a heterogeneous reasoning graph.
//!
//! Each sample (a `(subject, relation, ?)` query, candidate answers and
//! support documents) becomes a graph of subject, reasoning, mention,
//! support and candidate nodes joined by ten relations. Nodes are
//! featurized by Bi-LSTM encoders with query co-attention, refined by
//! relational graph attention under two gates, and scored by a candidate
//! head mixed with the best mention score.
//!
//! Everything trains on the small reverse-mode engine in [`numeric`].

pub mod config;
pub mod encoder;
pub mod error;
pub mod features;
pub mod gnn;
pub mod gradsuite;
pub mod graph;
pub mod harness;
mod hash;
pub mod model;
pub mod numeric;
pub mod scorer;
pub mod text;
pub mod viz;

pub use config::RunConfig;
pub use error::{Error, Result};
pub use graph::{GraphEdge, GraphNode, NodeKind, ReasoningGraph, Relation};
pub use harness::{EvalReport, TrainOutcome};
pub use model::{Model, Prepared};
pub use text::{Sample, SynthConfig};
pub use viz::VizSnapshot;
