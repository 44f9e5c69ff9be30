use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{GraphOptions, NodeKind};
use crate::numeric::AdamConfig;

/// Every hyperparameter and ablation switch of a run. Serialized as one
/// flat JSON object; unknown keys are rejected.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub word_dim: usize,
    pub char_dim: usize,
    pub char_buckets: usize,
    /// Encoder hidden size `h`; node features are `2h` wide.
    pub hidden: usize,
    pub heads: usize,
    pub hops: usize,
    pub gamma: f64,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub epochs: usize,
    /// Samples per optimizer step.
    pub batch_size: usize,
    pub patience: usize,
    pub max_doc_len: usize,
    pub max_query_len: usize,
    pub max_nodes: usize,
    pub max_complete_edges: usize,
    pub dropout: f64,
    pub leaky_slope: f64,
    pub neighbor_mean_norm: bool,
    pub gat_off: bool,
    pub block_kinds: Vec<NodeKind>,
    pub embedding_trainable: bool,
    /// Optional pretrained word vectors, `token v1 … v_d` per line.
    pub embeddings: Option<PathBuf>,
    /// Optional reasoning-span sidecar file.
    pub sidecar: Option<PathBuf>,
    pub workers: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 7,
            word_dim: 300,
            char_dim: 100,
            char_buckets: 1 << 15,
            hidden: 64,
            heads: 4,
            hops: 5,
            gamma: 1.0,
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            epochs: 50,
            batch_size: 8,
            patience: 5,
            max_doc_len: 300,
            max_query_len: 30,
            max_nodes: 500,
            max_complete_edges: 20_000,
            dropout: 0.1,
            leaky_slope: 0.2,
            neighbor_mean_norm: true,
            gat_off: false,
            block_kinds: Vec::new(),
            embedding_trainable: false,
            embeddings: None,
            sidecar: None,
            workers: 1,
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: &str| Err(Error::Config(m.to_string()));
        if self.hops == 0 {
            return fail("hops must be at least 1");
        }
        if self.hidden == 0 || self.word_dim == 0 {
            return fail("hidden and word_dim must be positive");
        }
        if self.char_dim > 0 && self.char_buckets == 0 {
            return fail("char_buckets must be positive");
        }
        if self.heads == 0 || (2 * self.hidden) % self.heads != 0 {
            return fail("heads must divide 2 * hidden");
        }
        if !self.gamma.is_finite() {
            return fail("gamma must be finite");
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return fail("dropout must lie in [0, 1)");
        }
        if self.batch_size == 0 || self.workers == 0 {
            return fail("batch_size and workers must be positive");
        }
        if self.max_doc_len == 0 || self.max_query_len == 0 {
            return fail("length limits must be positive");
        }
        if !(self.lr > 0.0) || !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return fail("optimizer settings out of range");
        }
        let mut kinds = self.block_kinds.clone();
        kinds.sort();
        kinds.dedup();
        if kinds.len() != self.block_kinds.len() {
            return fail("block_kinds lists a kind twice");
        }
        Ok(())
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            lr: self.lr,
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.eps,
        }
    }

    pub fn graph_options(&self) -> GraphOptions {
        GraphOptions {
            max_nodes: self.max_nodes,
            max_complete_edges: self.max_complete_edges,
            max_doc_len: self.max_doc_len,
        }
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let cfg: Self = serde_json::from_str(&text).map_err(|source| Error::Json {
            path: path.to_path_buf(),
            source,
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// Applies `key=value`. The value is read as JSON when it parses as
    /// JSON and as a bare string otherwise, then type-checked against the
    /// field.
    pub fn set(&mut self, assignment: &str) -> Result<()> {
        let (key, raw) = assignment
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("override `{assignment}` is not key=value")))?;
        let key = key.trim();
        let mut map = match serde_json::to_value(&*self).expect("config serializes") {
            serde_json::Value::Object(m) => m,
            _ => unreachable!("config is an object"),
        };
        if !map.contains_key(key) {
            return Err(Error::Config(format!("unknown key `{key}`")));
        }
        let value = serde_json::from_str(raw.trim()).unwrap_or_else(|_| serde_json::Value::String(raw.trim().into()));
        map.insert(key.to_string(), value);
        let updated: Self = serde_json::from_value(serde_json::Value::Object(map))
            .map_err(|e| Error::Config(format!("`{key}`: {e}")))?;
        updated.validate()?;
        *self = updated;
        Ok(())
    }
}
