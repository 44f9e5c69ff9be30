//! Finite-difference checks of every differentiable building block, from
//! tape primitives up to a full forward pass on a tiny graph.
//!
//! Each check draws random inputs and parameters per seed, contracts the
//! output with fixed random weights (so no gradient coordinate vanishes by
//! symmetry), and compares the tape gradient of every input and parameter
//! against central differences.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::config::RunConfig;
use crate::encoder::{bilstm_encode, lstm_cell, LstmParams};
use crate::features::{coattention, self_pool, span_pool, CoattentionParams};
use crate::gnn::{general_gate, query_gate, relational_gat_layer, GatOptions, GnnParams};
use crate::model::{ForwardOptions, Model};
use crate::numeric::{grad_check_floor, grad_check_many, Bound, GradCheckReport, Neighborhoods, NumericError, NEGLIGIBLE, ParamStore, Tape, Tensor, Var};
use crate::scorer::{score, Head, ScorerParams};
use crate::text::Sample;

pub const STEP: f64 = 1e-5;
pub const TOLERANCE: f64 = 1e-4;

#[derive(Clone, Debug, PartialEq)]
pub struct SuiteEntry {
    pub op: &'static str,
    pub seeds: usize,
    /// Largest relative error over all seeds and coordinates.
    pub max_rel_error: f64,
    pub coordinates: usize,
    pub negligible: usize,
}

impl SuiteEntry {
    pub fn passed(&self) -> bool {
        self.max_rel_error < TOLERANCE
    }
}

fn random(rng: &mut impl Rng, rows: usize, cols: usize) -> Tensor {
    let data = (0..rows * cols).map(|_| rng.gen_range(-1.0..1.0)).collect();
    Tensor::new(rows, cols, data).expect("positive extents")
}

fn project<'t>(out: Var<'t>, seed: u64) -> Result<Var<'t>, NumericError> {
    let [r, c] = out.shape();
    let w = out.tape().constant(random(&mut ChaCha8Rng::seed_from_u64(seed ^ 0x5EED), r, c));
    out.mul(w)?.sum()
}

/// Re-draws every parameter uniformly in `±scale`.
fn scramble(store: &mut ParamStore, rng: &mut impl Rng, scale: f64) {
    let ids: Vec<_> = store.ids().collect();
    for id in ids {
        for v in store.value_mut(id).data_mut() {
            *v = rng.gen_range(-scale..scale);
        }
    }
}

/// Checks `f(inputs, params)` with respect to both.
fn check_module<F>(store: &ParamStore, inputs: Vec<Tensor>, seed: u64, f: F) -> Result<GradCheckReport, NumericError>
where
    F: for<'t> Fn(&'t Tape, &Bound<'t>, &[Var<'t>]) -> Result<Var<'t>, NumericError>,
{
    check_module_floor(store, inputs, seed, NEGLIGIBLE, f)
}

fn check_module_floor<F>(
    store: &ParamStore,
    inputs: Vec<Tensor>,
    seed: u64,
    floor: f64,
    f: F,
) -> Result<GradCheckReport, NumericError>
where
    F: for<'t> Fn(&'t Tape, &Bound<'t>, &[Var<'t>]) -> Result<Var<'t>, NumericError>,
{
    let k = inputs.len();
    let mut points = inputs;
    points.extend(store.ids().map(|id| store.value(id).clone()));
    grad_check_floor(
        |tape, vars| {
            let bound = Bound::from_vars(vars[k..].to_vec());
            project(f(tape, &bound, &vars[..k])?, seed)
        },
        &points,
        STEP,
        floor,
    )
}

fn merge(entry: &mut SuiteEntry, r: GradCheckReport) {
    entry.max_rel_error = entry.max_rel_error.max(r.max_rel_error);
    entry.coordinates += r.coordinates;
    entry.negligible += r.negligible;
}

/// Random undirected neighborhoods over `nodes` nodes, one per relation;
/// some relations are left empty.
fn random_neighborhoods(rng: &mut impl Rng, nodes: usize, relations: usize) -> Vec<Arc<Neighborhoods>> {
    (0..relations)
        .map(|r| {
            let mut pairs = Vec::new();
            if r % 3 != 2 {
                for a in 0..nodes {
                    for b in a + 1..nodes {
                        if rng.gen_bool(0.4) {
                            pairs.push((a, b));
                            pairs.push((b, a));
                        }
                    }
                }
            }
            Arc::new(Neighborhoods::from_pairs(nodes, &pairs))
        })
        .collect()
}

/// A three-document sample whose graph has every node kind.
pub fn tiny_sample() -> Sample {
    Sample {
        id: "tiny".into(),
        relation: "knows".into(),
        subject: "alma".into(),
        candidates: vec!["bex".into(), "cora".into()],
        documents: vec![
            "Alma met Dario in Paris .".into(),
            "Dario later joined bex .".into(),
            "cora lives near Elba and Paris .".into(),
        ],
        answer: Some("bex".into()),
        annotations: None,
    }
}

/// A small configuration for [`tiny_sample`].
pub fn tiny_config() -> RunConfig {
    RunConfig {
        word_dim: 3,
        char_dim: 2,
        char_buckets: 11,
        hidden: 2,
        heads: 2,
        hops: 2,
        gamma: 0.5,
        dropout: 0.0,
        ..RunConfig::default()
    }
}

type Check = fn(u64) -> Result<GradCheckReport, NumericError>;

const H: usize = 2;
const W: usize = 2 * H;

fn lstm_cell_check(seed: u64) -> Result<GradCheckReport, NumericError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut store = ParamStore::new();
    let p = LstmParams::register(&mut store, "cell", 3, H, &mut rng)?;
    scramble(&mut store, &mut rng, 0.8);
    let inputs = vec![random(&mut rng, 1, 3), random(&mut rng, 1, H), random(&mut rng, 1, H)];
    check_module(&store, inputs, seed, |tape, b, x| {
        let (h, c) = lstm_cell(x[0], x[1], x[2], &p.bind(b))?;
        tape.concat_cols(&[h, c])
    })
}

fn bilstm_check(seed: u64) -> Result<GradCheckReport, NumericError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut store = ParamStore::new();
    let f = LstmParams::register(&mut store, "fwd", 3, H, &mut rng)?;
    let g = LstmParams::register(&mut store, "bwd", 3, H, &mut rng)?;
    scramble(&mut store, &mut rng, 0.8);
    check_module(&store, vec![random(&mut rng, 4, 3)], seed, |_, b, x| {
        bilstm_encode(x[0], &f.bind(b), &g.bind(b))
    })
}

fn coattention_check(seed: u64) -> Result<GradCheckReport, NumericError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut store = ParamStore::new();
    let p = CoattentionParams::register(&mut store, W, &mut rng)?;
    scramble(&mut store, &mut rng, 0.8);
    let inputs = vec![random(&mut rng, 4, W), random(&mut rng, 3, W)];
    check_module(&store, inputs, seed, |_, b, x| coattention(x[0], x[1], &p.bind(b)))
}

fn self_pool_check(seed: u64) -> Result<GradCheckReport, NumericError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut store = ParamStore::new();
    let p = CoattentionParams::register(&mut store, W, &mut rng)?;
    scramble(&mut store, &mut rng, 0.8);
    check_module(&store, vec![random(&mut rng, 4, 2 * W)], seed, |_, b, x| self_pool(x[0], &p.bind(b)))
}

fn span_pool_check(seed: u64) -> Result<GradCheckReport, NumericError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut store = ParamStore::new();
    let p = CoattentionParams::register(&mut store, W, &mut rng)?;
    scramble(&mut store, &mut rng, 0.8);
    check_module(&store, vec![random(&mut rng, 5, 2 * W)], seed, |_, b, x| {
        span_pool(x[0], (1, 3), &p.bind(b))
    })
}

fn gnn_store(seed: u64) -> Result<(ChaCha8Rng, ParamStore, GnnParams), NumericError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut store = ParamStore::new();
    let p = GnnParams::register(&mut store, W, 2, &mut rng)?;
    scramble(&mut store, &mut rng, 0.8);
    Ok((rng, store, p))
}

fn gat_layer_check(seed: u64) -> Result<GradCheckReport, NumericError> {
    let (mut rng, store, p) = gnn_store(seed)?;
    let nbrs = random_neighborhoods(&mut rng, 5, p.relations.len());
    let opts = GatOptions {
        mean_norm: seed % 2 == 0,
        slope: 0.2,
    };
    check_module(&store, vec![random(&mut rng, 5, W)], seed, |_, b, x| {
        Ok(relational_gat_layer(x[0], &nbrs, &p.bind(b), &opts)?.0)
    })
}

fn query_gate_check(seed: u64) -> Result<GradCheckReport, NumericError> {
    let (mut rng, store, p) = gnn_store(seed)?;
    let inputs = vec![random(&mut rng, 4, W), random(&mut rng, 3, W)];
    check_module(&store, inputs, seed, |_, b, x| Ok(query_gate(x[0], x[1], &p.bind(b), None)?.out))
}

fn general_gate_check(seed: u64) -> Result<GradCheckReport, NumericError> {
    let (mut rng, store, p) = gnn_store(seed)?;
    let inputs = vec![random(&mut rng, 4, W), random(&mut rng, 4, W)];
    check_module(&store, inputs, seed, |_, b, x| general_gate(x[0], x[1], &p.bind(b), None))
}

fn head_check(seed: u64) -> Result<GradCheckReport, NumericError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut store = ParamStore::new();
    let p = Head::register(&mut store, "head", W, &mut rng)?;
    scramble(&mut store, &mut rng, 0.8);
    check_module(&store, vec![random(&mut rng, 3, W)], seed, |_, b, x| p.bind(b).apply(x[0]))
}

fn score_check(seed: u64) -> Result<GradCheckReport, NumericError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut store = ParamStore::new();
    let p = ScorerParams::register(&mut store, W, &mut rng)?;
    scramble(&mut store, &mut rng, 0.8);
    let mentions = vec![vec![2, 3], vec![4], vec![]];
    let target = seed as usize % 2;
    // Read out through the loss, with a mentioned target: the mention-less
    // candidate scores near the sentinel, which would swamp central
    // differences of any linear readout of it.
    check_module(&store, vec![random(&mut rng, 6, W)], seed, |_, b, x| {
        score(x[0], &[0, 1, 5], &mentions, 0.5, &p.bind(b))?.scores.cross_entropy(target)
    })
}

fn loss_check(seed: u64) -> Result<GradCheckReport, NumericError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let target = rng.gen_range(0..5);
    let point = random(&mut rng, 5, 1).map(|v| 3.0 * v);
    grad_check_many(|_, x| x[0].cross_entropy(target), &[point], STEP)
}

/// Below this, end-to-end derivatives sit within a few hundred ulps of the
/// loss per unit step, and central differences cannot resolve them to the
/// tolerance.
pub const MODEL_FLOOR: f64 = 1e-6;

fn model_check(seed: u64) -> Result<GradCheckReport, NumericError> {
    let sample = tiny_sample();
    let config = RunConfig {
        seed,
        ..tiny_config()
    };
    let mut model = Model::new(&config, [&sample], None).map_err(|_| NumericError::EmptyInput { op: "tiny model" })?;
    let prep = model
        .prepare(&sample, None)
        .map_err(|_| NumericError::EmptyInput { op: "tiny graph" })?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xF00D);
    scramble(&mut model.store, &mut rng, 0.6);
    check_module_floor(&model.store, Vec::new(), seed, MODEL_FLOOR, |tape, b, _| {
        let out = model.forward(tape, b, &prep, &ForwardOptions::default())?;
        out.loss.ok_or(NumericError::EmptyInput { op: "loss" })
    })
}

/// Every check with its name, in reporting order.
pub const CHECKS: [(&str, Check); 12] = [
    ("lstm_cell", lstm_cell_check),
    ("bilstm", bilstm_check),
    ("coattention", coattention_check),
    ("self_pool", self_pool_check),
    ("span_pool", span_pool_check),
    ("gat_layer", gat_layer_check),
    ("query_gate", query_gate_check),
    ("general_gate", general_gate_check),
    ("head", head_check),
    ("score", score_check),
    ("loss", loss_check),
    ("model", model_check),
];

/// Runs every check at seeds `0..seeds`; the full-model check, which is
/// much slower, runs at `model_seeds` seeds.
pub fn run_suite(seeds: usize, model_seeds: usize) -> Result<Vec<SuiteEntry>, NumericError> {
    CHECKS
        .iter()
        .map(|&(op, check)| {
            let n = if op == "model" { model_seeds } else { seeds };
            let mut entry = SuiteEntry {
                op,
                seeds: n,
                max_rel_error: 0.0,
                coordinates: 0,
                negligible: 0,
            };
            for seed in 0..n as u64 {
                merge(&mut entry, check(seed)?);
            }
            Ok(entry)
        })
        .collect()
}
