//! Relational multi-head graph attention with the query-aware and general
//! gates, applied for a number of hops with shared parameters.

use std::sync::Arc;

use rand::Rng;

use crate::features::{Affine, AffineVars};
use crate::graph::Relation;
use crate::numeric::{glorot_uniform, Bound, Neighborhoods, NumericError, ParamId, ParamStore, Tensor, Var};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RelationParams {
    /// `2h × 2h`, the `K` head projections side by side.
    pub w: ParamId,
    /// `K × 4h/K`.
    pub att: ParamId,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GnnParams {
    pub heads: usize,
    pub relations: Vec<RelationParams>,
    /// Query gate scorer, split as `W_q = [u; v]` (node part, query part).
    pub gate_u: ParamId,
    pub gate_v: ParamId,
    /// `4h × 2h`, applied to `[q ; n]`.
    pub gate_s: ParamId,
    /// General gate `f_g`, `4h → 2h`.
    pub general: Affine,
}

#[derive(Clone, Debug)]
pub struct GnnVars<'t> {
    pub heads: usize,
    pub w: Vec<Var<'t>>,
    pub att: Vec<Var<'t>>,
    pub gate_u: Var<'t>,
    pub gate_v: Var<'t>,
    pub gate_s: Var<'t>,
    pub general: AffineVars<'t>,
}

impl GnnParams {
    pub fn register(store: &mut ParamStore, width: usize, heads: usize, rng: &mut impl Rng) -> Result<Self, NumericError> {
        if heads == 0 || width % heads != 0 {
            return Err(NumericError::Shape {
                op: "gnn heads",
                lhs: [1, width],
                rhs: [1, heads],
            });
        }
        let d = width / heads;
        let mut relations = Vec::new();
        for r in Relation::ALL {
            relations.push(RelationParams {
                w: store.add(format!("gat.{}.w", r.name()), glorot_uniform(width, width, rng), true)?,
                att: store.add(format!("gat.{}.att", r.name()), glorot_uniform(heads, 2 * d, rng), true)?,
            });
        }
        Ok(Self {
            heads,
            relations,
            gate_u: store.add("gate.q_node", glorot_uniform(width, 1, rng), true)?,
            gate_v: store.add("gate.q_query", glorot_uniform(width, 1, rng), true)?,
            gate_s: store.add("gate.s", glorot_uniform(2 * width, width, rng), true)?,
            general: Affine::register(store, "gate.general", 2 * width, width, rng)?,
        })
    }

    pub fn bind<'t>(&self, b: &Bound<'t>) -> GnnVars<'t> {
        GnnVars {
            heads: self.heads,
            w: self.relations.iter().map(|r| b[r.w]).collect(),
            att: self.relations.iter().map(|r| b[r.att]).collect(),
            gate_u: b[self.gate_u],
            gate_v: b[self.gate_v],
            gate_s: b[self.gate_s],
            general: self.general.bind(b),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GatOptions {
    pub mean_norm: bool,
    pub slope: f64,
}

impl Default for GatOptions {
    fn default() -> Self {
        Self {
            mean_norm: true,
            slope: 0.2,
        }
    }
}

/// Pins gate activations to constants, for checking the pass-through paths.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct GateOverride {
    pub beta: Option<f64>,
    pub general: Option<f64>,
}

/// Attention coefficients of one layer, per relation (`heads × entries`,
/// aligned with that relation's [`Neighborhoods`]); `None` for relations
/// without edges.
pub type LayerAttention = Vec<Option<Arc<Vec<f64>>>>;

/// `tanh(Σ_r messages_r) / K`, with heads kept side by side.
pub fn relational_gat_layer<'t>(
    n: Var<'t>,
    nbrs: &[Arc<Neighborhoods>],
    p: &GnnVars<'t>,
    opts: &GatOptions,
) -> Result<(Var<'t>, LayerAttention), NumericError> {
    let [m, width] = n.shape();
    if nbrs.len() != p.w.len() || p.w[0].shape()[0] != width {
        return Err(NumericError::Shape {
            op: "relational_gat_layer",
            lhs: n.shape(),
            rhs: p.w[0].shape(),
        });
    }
    let mut total: Option<Var<'t>> = None;
    let mut attention = Vec::with_capacity(nbrs.len());
    for (r, nb) in nbrs.iter().enumerate() {
        if nb.entries() == 0 {
            attention.push(None);
            continue;
        }
        let z = n.matmul(p.w[r])?;
        let (msg, alpha) = z.rel_attention(p.att[r], Arc::clone(nb), opts.mean_norm, opts.slope)?;
        attention.push(Some(alpha));
        total = Some(match total {
            Some(t) => t.add(msg)?,
            None => msg,
        });
    }
    let total = match total {
        Some(t) => t,
        None => n.tape().constant(Tensor::zeros(m, width)),
    };
    Ok((total.tanh()?.scale(1.0 / p.heads as f64)?, attention))
}

/// Gate activations for the query gate.
pub struct QueryGateOut<'t> {
    pub out: Var<'t>,
    /// Per-node weights over query positions (`m × M`).
    pub alpha: Var<'t>,
    pub beta: Var<'t>,
}

/// `n′ = β ⊙ tanh(q) + (1 − β) ⊙ n`, where `q` is an attention summary of
/// the gate's query encoding `hq` (`M × 2h`).
pub fn query_gate<'t>(
    n: Var<'t>,
    hq: Var<'t>,
    p: &GnnVars<'t>,
    force: Option<f64>,
) -> Result<QueryGateOut<'t>, NumericError> {
    let tape = n.tape();
    let scores = n.matmul(p.gate_u)?.add(hq.matmul(p.gate_v)?.t()?)?.sigmoid()?;
    let alpha = scores.softmax_rows()?;
    let q = alpha.matmul(hq)?;
    let beta = match force {
        Some(v) => {
            let [r, c] = n.shape();
            tape.constant(Tensor::filled(r, c, v))
        }
        None => tape.concat_cols(&[q, n])?.matmul(p.gate_s)?.sigmoid()?,
    };
    let out = beta.mul(q.tanh()?)?.add(beta.one_minus()?.mul(n)?)?;
    Ok(QueryGateOut { out, alpha, beta })
}

/// `w ⊙ tanh(n′) + (1 − w) ⊙ n` with `w = σ(f_g[n′ ; n])`.
pub fn general_gate<'t>(
    gated: Var<'t>,
    input: Var<'t>,
    p: &GnnVars<'t>,
    force: Option<f64>,
) -> Result<Var<'t>, NumericError> {
    let tape = gated.tape();
    let w = match force {
        Some(v) => {
            let [r, c] = input.shape();
            tape.constant(Tensor::filled(r, c, v))
        }
        None => p.general.apply(tape.concat_cols(&[gated, input])?)?.sigmoid()?,
    };
    w.mul(gated.tanh()?)?.add(w.one_minus()?.mul(input)?)
}

pub struct HopsOut<'t> {
    pub nodes: Var<'t>,
    /// Attention of the last hop.
    pub attention: LayerAttention,
}

/// Dropout applied to the attention-layer input of each hop.
pub struct HopDropout<'a, R: Rng> {
    pub rate: f64,
    pub rng: &'a mut R,
}

pub fn run_hops<'t, R: Rng>(
    n0: Var<'t>,
    nbrs: &[Arc<Neighborhoods>],
    hq: Var<'t>,
    p: &GnnVars<'t>,
    hops: usize,
    opts: &GatOptions,
    force: GateOverride,
    mut dropout: Option<HopDropout<'_, R>>,
) -> Result<HopsOut<'t>, NumericError> {
    if hops == 0 {
        return Err(NumericError::EmptyInput { op: "run_hops" });
    }
    let mut n = n0;
    let mut attention = Vec::new();
    for _ in 0..hops {
        let input = match dropout.as_mut() {
            Some(d) if d.rate > 0.0 => {
                let [r, c] = n.shape();
                let keep = 1.0 / (1.0 - d.rate);
                let mask = (0..r * c)
                    .map(|_| if d.rng.gen::<f64>() < d.rate { 0.0 } else { keep })
                    .collect();
                n.mul(n.tape().constant(Tensor::new(r, c, mask)?))?
            }
            _ => n,
        };
        let (layer, att) = relational_gat_layer(input, nbrs, p, opts)?;
        let gated = query_gate(layer, hq, p, force.beta)?;
        n = general_gate(gated.out, n, p, force.general)?;
        attention = att;
    }
    Ok(HopsOut { nodes: n, attention })
}
