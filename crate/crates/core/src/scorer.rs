//! Candidate scores `a = γ · f_can(N_can) + (1 − γ) · max f_men(N_men)`.

use std::sync::Arc;

use rand::Rng;

use crate::features::{Affine, AffineVars};
use crate::numeric::{Bound, NumericError, ParamStore, Var};

/// Mention term for candidates without any mention node.
pub const NO_MENTION: f64 = -1e9;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Head {
    pub hidden: Affine,
    pub out: Affine,
}

#[derive(Clone, Copy, Debug)]
pub struct HeadVars<'t> {
    pub hidden: AffineVars<'t>,
    pub out: AffineVars<'t>,
}

impl Head {
    pub fn register(store: &mut ParamStore, prefix: &str, width: usize, rng: &mut impl Rng) -> Result<Self, NumericError> {
        Ok(Self {
            hidden: Affine::register(store, &format!("{prefix}.hidden"), width, width, rng)?,
            out: Affine::register(store, &format!("{prefix}.out"), width, 1, rng)?,
        })
    }

    pub fn bind<'t>(&self, b: &Bound<'t>) -> HeadVars<'t> {
        HeadVars {
            hidden: self.hidden.bind(b),
            out: self.out.bind(b),
        }
    }
}

impl<'t> HeadVars<'t> {
    /// One score per row of `x`, as a column.
    pub fn apply(&self, x: Var<'t>) -> Result<Var<'t>, NumericError> {
        self.out.apply(self.hidden.apply_tanh(x)?)
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ScorerParams {
    pub can: Head,
    pub men: Head,
}

#[derive(Clone, Copy, Debug)]
pub struct ScorerVars<'t> {
    pub can: HeadVars<'t>,
    pub men: HeadVars<'t>,
}

impl ScorerParams {
    pub fn register(store: &mut ParamStore, width: usize, rng: &mut impl Rng) -> Result<Self, NumericError> {
        Ok(Self {
            can: Head::register(store, "score.can", width, rng)?,
            men: Head::register(store, "score.men", width, rng)?,
        })
    }

    pub fn bind<'t>(&self, b: &Bound<'t>) -> ScorerVars<'t> {
        ScorerVars {
            can: self.can.bind(b),
            men: self.men.bind(b),
        }
    }
}

pub struct Scores<'t> {
    /// `n × 1`.
    pub scores: Var<'t>,
    /// `f_can` per candidate (`n × 1`).
    pub candidate_scores: Var<'t>,
    /// `f_men` output per mention node, in the order of the flattened
    /// mention groups; `None` when the graph has no mentions.
    pub mention_scores: Option<Var<'t>>,
}

/// `candidates[c]` is the node row of candidate `c`; `mentions[c]` lists the
/// node rows of its mentions.
pub fn score<'t>(
    nodes: Var<'t>,
    candidates: &[usize],
    mentions: &[Vec<usize>],
    gamma: f64,
    p: &ScorerVars<'t>,
) -> Result<Scores<'t>, NumericError> {
    if candidates.is_empty() {
        return Err(NumericError::EmptyInput { op: "score" });
    }
    let can = p.can.apply(nodes.gather_rows(Arc::from(candidates))?)?;
    let flat: Vec<usize> = mentions.iter().flatten().copied().collect();
    if flat.is_empty() {
        let scores = can.scale(gamma)?.affine(1.0, (1.0 - gamma) * NO_MENTION)?;
        return Ok(Scores {
            scores,
            candidate_scores: can,
            mention_scores: None,
        });
    }
    let men = p.men.apply(nodes.gather_rows(Arc::from(flat))?)?;
    let mut groups = Vec::with_capacity(mentions.len());
    let mut at = 0;
    for g in mentions {
        groups.push((at..at + g.len()).collect());
        at += g.len();
    }
    let best = men.segment_max(&groups, NO_MENTION)?;
    let scores = can.scale(gamma)?.add(best.scale(1.0 - gamma)?)?;
    Ok(Scores {
        scores,
        candidate_scores: can,
        mention_scores: Some(men),
    })
}

/// `-log softmax(a)[answer]`.
pub fn loss<'t>(scores: Var<'t>, answer: usize) -> Result<Var<'t>, NumericError> {
    scores.cross_entropy(answer)
}

/// Index of the largest score, lowest index on ties.
pub fn predict(scores: &[f64]) -> usize {
    let mut best = 0;
    for (i, &s) in scores.iter().enumerate() {
        if s > scores[best] {
            best = i;
        }
    }
    best
}
