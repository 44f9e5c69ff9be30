//! The full reader: embeddings, encoders, co-attention features, graph
//! hops and output heads over one [`ParamStore`].

use std::collections::{BTreeSet, HashMap};
use std::path::Path;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::encoder::{bilstm_encode, LstmParams, LstmVars};
use crate::error::{Error, Result};
use crate::features::{coattention, self_pool, span_pool, CoattentionParams, CoattentionVars};
use crate::gnn::{run_hops, GateOverride, GatOptions, GnnParams, GnnVars, HopDropout, LayerAttention};
use crate::graph::{build_graph, DocSpans, NodeKind, ReasoningGraph};
use crate::hash::splitmix64;
use crate::numeric::{Bound, Checkpoint, Neighborhoods, NumericError, ParamId, ParamStore, Tape, Tensor, Var};
use crate::scorer::{self, ScorerParams, ScorerVars};
use crate::text::{oov_vector, tokenize, tokenize_doc, CharEmbedder, EmbeddingTable, Sample, Token};

const PAD: &str = "<pad>";
const CHECKPOINT_KIND: &str = "hopreader";

/// Token → row of the word table.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Vocab {
    words: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocab {
    pub fn new(words: impl IntoIterator<Item = String>) -> Self {
        let words: Vec<String> = words
            .into_iter()
            .chain(std::iter::once(PAD.to_string()))
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect();
        let index = words.iter().enumerate().map(|(i, w)| (w.clone(), i)).collect();
        Self { words, index }
    }

    /// Every token of the documents, candidates and queries of `samples`.
    pub fn from_samples<'a>(samples: impl IntoIterator<Item = &'a Sample>) -> Self {
        let mut words = BTreeSet::new();
        for s in samples {
            for text in s.documents.iter().chain(&s.candidates).chain(std::iter::once(&s.query())) {
                words.extend(tokenize(text).into_iter().map(|t| t.surface));
            }
        }
        Self::new(words)
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn get(&self, word: &str) -> Option<usize> {
        self.index.get(word).copied()
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
struct BiLstmParams {
    fwd: LstmParams,
    bwd: LstmParams,
}

impl BiLstmParams {
    fn register(store: &mut ParamStore, prefix: &str, input: usize, hidden: usize, rng: &mut ChaCha8Rng) -> Result<Self> {
        Ok(Self {
            fwd: LstmParams::register(store, &format!("{prefix}.fwd"), input, hidden, rng)?,
            bwd: LstmParams::register(store, &format!("{prefix}.bwd"), input, hidden, rng)?,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
struct ModelParams {
    words: ParamId,
    chars: Option<ParamId>,
    support: BiLstmParams,
    candidate: BiLstmParams,
    query: BiLstmParams,
    gate_query: BiLstmParams,
    coatt: CoattentionParams,
    gnn: GnnParams,
    scorer: ScorerParams,
}

struct ModelVars<'t> {
    words: Var<'t>,
    chars: Option<Var<'t>>,
    support: (LstmVars<'t>, LstmVars<'t>),
    candidate: (LstmVars<'t>, LstmVars<'t>),
    query: (LstmVars<'t>, LstmVars<'t>),
    gate_query: (LstmVars<'t>, LstmVars<'t>),
    coatt: CoattentionVars<'t>,
    gnn: GnnVars<'t>,
    scorer: ScorerVars<'t>,
}

/// Inputs of one token sequence, resolved against the vocabulary.
#[derive(Clone, Debug)]
pub struct SeqInput {
    pub tokens: Vec<String>,
    rows: Arc<[usize]>,
    /// `l × 1` mask of in-vocabulary tokens and the fallback rows for the
    /// rest; both absent when every token is known.
    unknown: Option<(Tensor, Tensor)>,
    ngrams: Arc<[Vec<usize>]>,
}

impl SeqInput {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }
}

/// A sample with tokenization, graph and neighbor structures resolved.
#[derive(Clone, Debug)]
pub struct Prepared {
    pub id: String,
    pub docs: Vec<SeqInput>,
    pub candidates: Vec<SeqInput>,
    pub query: SeqInput,
    pub graph: ReasoningGraph,
    pub nbrs: Vec<Arc<Neighborhoods>>,
    pub candidate_nodes: Vec<usize>,
    pub mention_groups: Vec<Vec<usize>>,
    pub answer: Option<usize>,
    pub doc_count: usize,
}

/// Per-call switches for [`Model::forward`].
#[derive(Clone, Copy, Debug, Default)]
pub struct ForwardOptions {
    /// Seed for hop dropout; `None` runs without dropout.
    pub dropout_seed: Option<u64>,
    pub force: GateOverride,
}

pub struct ForwardOut<'t> {
    pub scores: Var<'t>,
    pub candidate_scores: Var<'t>,
    pub mention_scores: Option<Var<'t>>,
    pub loss: Option<Var<'t>>,
    pub initial: Var<'t>,
    pub nodes: Var<'t>,
    /// Last-hop attention per relation; empty with the graph switched off.
    pub attention: LayerAttention,
}

#[derive(Serialize, Deserialize)]
struct CheckpointMeta {
    kind: String,
    config: RunConfig,
    vocab: Vec<String>,
}

#[derive(Clone)]
pub struct Model {
    pub config: RunConfig,
    pub store: ParamStore,
    params: ModelParams,
    vocab: Vocab,
    chars: CharEmbedder,
}

impl Model {
    /// A freshly initialized model whose vocabulary covers `corpus`.
    pub fn new<'a>(
        config: &RunConfig,
        corpus: impl IntoIterator<Item = &'a Sample>,
        pretrained: Option<&EmbeddingTable>,
    ) -> Result<Self> {
        config.validate()?;
        let vocab = Vocab::from_samples(corpus);
        let d = config.word_dim;
        let mut table = Vec::with_capacity(vocab.len() * d);
        for w in vocab.words() {
            match pretrained.filter(|p| p.contains(w)) {
                Some(p) => table.extend(p.lookup(w)),
                None => table.extend(oov_vector(config.seed, w, d)),
            }
        }
        let table = Tensor::new(vocab.len(), d, table)?;
        Self::assemble(config.clone(), vocab, table)
    }

    fn assemble(config: RunConfig, vocab: Vocab, word_table: Tensor) -> Result<Self> {
        if config.word_dim != word_table.cols() {
            return Err(Error::Config("word table width differs from word_dim".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut store = ParamStore::new();
        let h = config.hidden;
        let width = 2 * h;
        let input = config.word_dim + config.char_dim;
        let words = store.add("embed.words", word_table, config.embedding_trainable)?;
        let chars = if config.char_dim > 0 {
            let limit = (3.0 / config.char_dim as f64).sqrt();
            let n = config.char_buckets * config.char_dim;
            let data = (0..n).map(|_| rng.gen_range(-limit..=limit)).collect();
            Some(store.add("embed.chars", Tensor::new(config.char_buckets, config.char_dim, data)?, true)?)
        } else {
            None
        };
        let params = ModelParams {
            words,
            chars,
            support: BiLstmParams::register(&mut store, "enc.support", input, h, &mut rng)?,
            candidate: BiLstmParams::register(&mut store, "enc.candidate", input, h, &mut rng)?,
            query: BiLstmParams::register(&mut store, "enc.query", input, h, &mut rng)?,
            gate_query: BiLstmParams::register(&mut store, "enc.gate_query", width, h, &mut rng)?,
            coatt: CoattentionParams::register(&mut store, width, &mut rng)?,
            gnn: GnnParams::register(&mut store, width, config.heads, &mut rng)?,
            scorer: ScorerParams::register(&mut store, width, &mut rng)?,
        };
        let chars = CharEmbedder {
            dim: config.char_dim,
            buckets: config.char_buckets.max(1),
        };
        Ok(Self {
            config,
            store,
            params,
            vocab,
            chars,
        })
    }

    pub fn vocab(&self) -> &Vocab {
        &self.vocab
    }

    /// Parameter ids of the two output heads, `(f_can, f_men)`.
    pub fn head_params(&self) -> (Vec<ParamId>, Vec<ParamId>) {
        let ids = |h: &scorer::Head| vec![h.hidden.w, h.hidden.b, h.out.w, h.out.b];
        (ids(&self.params.scorer.can), ids(&self.params.scorer.men))
    }

    fn seq_input(&self, tokens: &[Token]) -> SeqInput {
        let mut words: Vec<String> = tokens.iter().map(|t| t.surface.clone()).collect();
        if words.is_empty() {
            words.push(PAD.to_string());
        }
        let d = self.config.word_dim;
        let mut rows = Vec::with_capacity(words.len());
        let mut mask = Vec::with_capacity(words.len());
        let mut fallback = Vec::with_capacity(words.len() * d);
        for w in &words {
            match self.vocab.get(w) {
                Some(i) => {
                    rows.push(i);
                    mask.push(1.0);
                    fallback.extend(std::iter::repeat(0.0).take(d));
                }
                None => {
                    rows.push(0);
                    mask.push(0.0);
                    fallback.extend(oov_vector(self.config.seed, w, d));
                }
            }
        }
        let unknown = mask.contains(&0.0).then(|| {
            (
                Tensor::column(mask).expect("non-empty"),
                Tensor::new(words.len(), d, fallback).expect("shape"),
            )
        });
        let ngrams: Vec<Vec<usize>> = words.iter().map(|w| self.chars.ngram_ids(w)).collect();
        SeqInput {
            tokens: words,
            rows: Arc::from(rows),
            unknown,
            ngrams: Arc::from(ngrams),
        }
    }

    /// Tokenizes, builds the graph and resolves every input of `sample`.
    pub fn prepare(&self, sample: &Sample, sidecar: Option<&DocSpans>) -> Result<Prepared> {
        let cfg = &self.config;
        let doc_tokens: Vec<Vec<Token>> = sample
            .documents
            .iter()
            .enumerate()
            .map(|(d, text)| tokenize_doc(text, d))
            .collect();
        let mut graph = build_graph(sample, &doc_tokens, sidecar, &cfg.graph_options())?;
        if !cfg.block_kinds.is_empty() {
            graph = graph.isolate_kinds(&cfg.block_kinds);
        }
        self.prepare_with_graph(sample, &doc_tokens, graph)
    }

    /// Like [`Model::prepare`] with a caller-supplied graph over the same
    /// tokenization.
    pub fn prepare_with_graph(&self, sample: &Sample, doc_tokens: &[Vec<Token>], graph: ReasoningGraph) -> Result<Prepared> {
        let cfg = &self.config;
        let docs = doc_tokens
            .iter()
            .map(|t| self.seq_input(&t[..t.len().min(cfg.max_doc_len)]))
            .collect();
        let candidates = sample.candidates.iter().map(|c| self.seq_input(&tokenize(c))).collect();
        let query_tokens = tokenize(&sample.query());
        let query = self.seq_input(&query_tokens[..query_tokens.len().min(cfg.max_query_len)]);
        let candidate_nodes = graph.candidate_nodes();
        if candidate_nodes.len() != sample.candidates.len() {
            return Err(Error::Graph(format!("sample `{}`: candidate nodes missing", sample.id)));
        }
        let mention_groups = graph.mentions_by_candidate(sample.candidates.len());
        let nbrs = graph.all_neighborhoods();
        Ok(Prepared {
            id: sample.id.clone(),
            docs,
            candidates,
            query,
            graph,
            nbrs,
            candidate_nodes,
            mention_groups,
            answer: sample.answer_index(),
            doc_count: sample.documents.len(),
        })
    }

    fn bind<'t>(&self, b: &Bound<'t>) -> ModelVars<'t> {
        let p = &self.params;
        let pair = |x: &BiLstmParams| (x.fwd.bind(b), x.bwd.bind(b));
        ModelVars {
            words: b[p.words],
            chars: p.chars.map(|c| b[c]),
            support: pair(&p.support),
            candidate: pair(&p.candidate),
            query: pair(&p.query),
            gate_query: pair(&p.gate_query),
            coatt: p.coatt.bind(b),
            gnn: p.gnn.bind(b),
            scorer: p.scorer.bind(b),
        }
    }

    fn embed<'t>(&self, tape: &'t Tape, v: &ModelVars<'t>, seq: &SeqInput) -> Result<Var<'t>, NumericError> {
        let mut words = v.words.gather_rows(Arc::clone(&seq.rows))?;
        if let Some((mask, fallback)) = &seq.unknown {
            words = words
                .mul(tape.constant(mask.clone()))?
                .add(tape.constant(fallback.clone()))?;
        }
        match v.chars {
            Some(chars) => {
                let c = chars.bag_mean(Arc::clone(&seq.ngrams))?;
                tape.concat_cols(&[words, c])
            }
            None => Ok(words),
        }
    }

    /// Scores the candidates of `prep`; also returns the loss when the
    /// answer is known.
    pub fn forward<'t>(
        &self,
        tape: &'t Tape,
        bound: &Bound<'t>,
        prep: &Prepared,
        opts: &ForwardOptions,
    ) -> Result<ForwardOut<'t>, NumericError> {
        let v = self.bind(bound);
        let encode = |seq: &SeqInput, enc: &(LstmVars<'t>, LstmVars<'t>)| -> Result<Var<'t>, NumericError> {
            bilstm_encode(self.embed(tape, &v, seq)?, &enc.0, &enc.1)
        };
        let hq = encode(&prep.query, &v.query)?;
        let doc_s: Vec<Var<'t>> = prep
            .docs
            .iter()
            .map(|d| coattention(encode(d, &v.support)?, hq, &v.coatt))
            .collect::<Result<_, _>>()?;
        let mut rows = Vec::with_capacity(prep.graph.len());
        for node in &prep.graph.nodes {
            let row = match node.kind {
                NodeKind::Support => self_pool(doc_s[node.doc.expect("support doc")], &v.coatt)?,
                NodeKind::Candidate => {
                    let seq = &prep.candidates[node.candidate.expect("candidate index")];
                    self_pool(coattention(encode(seq, &v.candidate)?, hq, &v.coatt)?, &v.coatt)?
                }
                _ => span_pool(
                    doc_s[node.doc.expect("span doc")],
                    node.span.expect("span"),
                    &v.coatt,
                )?,
            };
            rows.push(row);
        }
        let initial = tape.concat_rows(&rows)?;
        let (nodes, attention) = if self.config.gat_off {
            (initial, Vec::new())
        } else {
            let h_gate = bilstm_encode(hq, &v.gate_query.0, &v.gate_query.1)?;
            let gat = GatOptions {
                mean_norm: self.config.neighbor_mean_norm,
                slope: self.config.leaky_slope,
            };
            let mut rng = opts.dropout_seed.map(ChaCha8Rng::seed_from_u64);
            let dropout = rng.as_mut().map(|rng| HopDropout {
                rate: self.config.dropout,
                rng,
            });
            let out = run_hops(initial, &prep.nbrs, h_gate, &v.gnn, self.config.hops, &gat, opts.force, dropout)?;
            (out.nodes, out.attention)
        };
        let s = scorer::score(nodes, &prep.candidate_nodes, &prep.mention_groups, self.config.gamma, &v.scorer)?;
        let loss = prep.answer.map(|a| scorer::loss(s.scores, a)).transpose()?;
        Ok(ForwardOut {
            scores: s.scores,
            candidate_scores: s.candidate_scores,
            mention_scores: s.mention_scores,
            loss,
            initial,
            nodes,
            attention,
        })
    }

    /// Scores without recording gradients.
    pub fn predict_scores(&self, prep: &Prepared) -> Result<(Vec<f64>, Option<f64>), NumericError> {
        let tape = Tape::new();
        let bound = self.store.bind_frozen(&tape);
        let out = self.forward(&tape, &bound, prep, &ForwardOptions::default())?;
        let loss = out.loss.map(|l| l.value().data()[0]);
        Ok((out.scores.value().data().to_vec(), loss))
    }

    /// Loss, scores and per-parameter gradients for one training sample.
    pub fn sample_gradients(
        &self,
        prep: &Prepared,
        dropout_seed: Option<u64>,
    ) -> Result<(f64, Vec<f64>, Vec<Option<Tensor>>), NumericError> {
        let tape = Tape::new();
        let bound = self.store.bind(&tape);
        let opts = ForwardOptions {
            dropout_seed,
            ..ForwardOptions::default()
        };
        let out = self.forward(&tape, &bound, prep, &opts)?;
        let loss = out.loss.ok_or(NumericError::EmptyInput { op: "loss without answer" })?;
        let mut grads = tape.backward(loss)?;
        let value = loss.value().data()[0];
        let scores = out.scores.value().data().to_vec();
        Ok((value, scores, self.store.collect_grads(&bound, &mut grads)))
    }

    /// Dropout seed for `(epoch, sample)` under this model's run seed.
    pub fn dropout_seed(&self, epoch: usize, sample: usize) -> Option<u64> {
        (self.config.dropout > 0.0)
            .then(|| splitmix64(splitmix64(self.config.seed ^ 0xD50F) ^ ((epoch as u64) << 32 | sample as u64)))
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let meta = CheckpointMeta {
            kind: CHECKPOINT_KIND.into(),
            config: self.config.clone(),
            vocab: self.vocab.words.clone(),
        };
        Checkpoint {
            metadata: serde_json::to_value(meta).expect("metadata serializes"),
            tensors: self
                .store
                .ids()
                .map(|id| (self.store.name(id).to_string(), self.store.value(id).clone()))
                .collect(),
        }
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        let meta: CheckpointMeta =
            serde_json::from_value(ck.metadata.clone()).map_err(|e| Error::Checkpoint(format!("metadata: {e}")))?;
        if meta.kind != CHECKPOINT_KIND {
            return Err(Error::Checkpoint(format!("unexpected checkpoint kind `{}`", meta.kind)));
        }
        let vocab = Vocab::new(meta.vocab);
        let words = ck
            .get("embed.words")
            .ok_or_else(|| Error::Checkpoint("missing `embed.words`".into()))?
            .clone();
        if words.rows() != vocab.len() {
            return Err(Error::Checkpoint(format!(
                "word table has {} rows for a vocabulary of {}",
                words.rows(),
                vocab.len()
            )));
        }
        let mut model = Self::assemble(meta.config, vocab, words)?;
        if ck.tensors.len() != model.store.len() {
            return Err(Error::Checkpoint(format!(
                "checkpoint holds {} tensors, model expects {}",
                ck.tensors.len(),
                model.store.len()
            )));
        }
        for (name, t) in &ck.tensors {
            let id = model
                .store
                .id(name)
                .ok_or_else(|| Error::Checkpoint(format!("unexpected tensor `{name}`")))?;
            model
                .store
                .set_value(id, t.clone())
                .map_err(|e| Error::Checkpoint(format!("`{name}`: {e}")))?;
        }
        Ok(model)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        self.to_checkpoint().save(path).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let ck = Checkpoint::load(path).map_err(|e| match e.kind() {
            std::io::ErrorKind::InvalidData => Error::Checkpoint(format!("{}: {e}", path.display())),
            _ => Error::io(path, e),
        })?;
        Self::from_checkpoint(&ck)
    }
}
