use std::collections::HashMap;
use std::fmt::Write;

use serde::{Deserialize, Serialize};

use super::eval::evaluate;
use super::train::{train, TrainOptions};
use crate::config::RunConfig;
use crate::error::Result;
use crate::graph::NodeKind;
use crate::text::Sample;

/// A named configuration to train and evaluate.
#[derive(Clone, Debug, PartialEq)]
pub struct Variant {
    pub name: String,
    pub config: RunConfig,
}

impl Variant {
    pub fn new(name: impl Into<String>, config: RunConfig) -> Self {
        Self {
            name: name.into(),
            config,
        }
    }
}

/// The full model, the graph switched off, and each node kind isolated in
/// turn.
pub fn gate_plan(base: &RunConfig) -> Vec<Variant> {
    let mut plan = vec![
        Variant::new("full", base.clone()),
        Variant::new(
            "w/o GAT",
            RunConfig {
                gat_off: true,
                ..base.clone()
            },
        ),
    ];
    for kind in NodeKind::ALL {
        let mut cfg = base.clone();
        if !cfg.block_kinds.contains(&kind) {
            cfg.block_kinds.push(kind);
        }
        plan.push(Variant::new(format!("w/o {}", kind.short()), cfg));
    }
    plan
}

/// Hop counts 3 to 6 at `gamma = 1`, then `gamma` in {0, 0.5, 1, 1.5} at
/// the base hop count. With `cross` set, every pair of the two axes instead.
pub fn hop_gamma_plan(base: &RunConfig, cross: bool) -> Vec<Variant> {
    const HOPS: [usize; 4] = [3, 4, 5, 6];
    const GAMMAS: [f64; 4] = [0.0, 0.5, 1.0, 1.5];
    let with = |hops: usize, gamma: f64| {
        Variant::new(
            format!("hops={hops} gamma={gamma}"),
            RunConfig {
                hops,
                gamma,
                ..base.clone()
            },
        )
    };
    if cross {
        HOPS.iter().flat_map(|&h| GAMMAS.iter().map(move |&g| (h, g))).map(|(h, g)| with(h, g)).collect()
    } else {
        let mut plan: Vec<Variant> = HOPS.iter().map(|&h| with(h, 1.0)).collect();
        plan.extend(GAMMAS.iter().map(|&g| with(base.hops, g)));
        plan
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub name: String,
    pub train_accuracy: f64,
    pub test_accuracy: f64,
    /// Reference accuracy minus this row's; positive when the variant is worse.
    pub delta: f64,
    pub best_epoch: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationTable {
    pub reference: String,
    pub reference_accuracy: f64,
    pub rows: Vec<AblationRow>,
}

impl AblationTable {
    pub fn to_text(&self) -> String {
        let width = self.rows.iter().map(|r| r.name.len()).max().unwrap_or(0).max(7);
        let mut out = String::new();
        let _ = writeln!(out, "{:width$}  {:>6}  {:>6}  {:>7}", "variant", "train", "test", "delta");
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{:width$}  {:>6.1}  {:>6.1}  {:>+7.1}",
                r.name,
                100.0 * r.train_accuracy,
                100.0 * r.test_accuracy,
                100.0 * r.delta
            );
        }
        out
    }
}

/// Trains every variant on `train`/`dev`, evaluates on `test` and reports
/// each accuracy against `reference` (the full model). Variants with the same
/// configuration are trained once.
pub fn ablate(
    reference: &RunConfig,
    variants: &[Variant],
    train_set: &[Sample],
    dev: &[Sample],
    test: &[Sample],
) -> Result<AblationTable> {
    let mut cache: HashMap<String, (f64, f64, usize)> = HashMap::new();
    let mut run = |cfg: &RunConfig| -> Result<(f64, f64, usize)> {
        let key = cfg.to_json();
        if let Some(hit) = cache.get(&key) {
            return Ok(*hit);
        }
        if cfg.block_kinds.contains(&NodeKind::Candidate) && cfg.gamma == 1.0 {
            log::warn!("candidate nodes blocked with gamma = 1: the score reads features the graph never updates");
        }
        let opts = TrainOptions {
            vocab_extra: test,
            ..TrainOptions::default()
        };
        let outcome = train(cfg, train_set, dev, &opts)?;
        let train_acc = evaluate(&outcome.model, train_set, None, cfg.workers)?.accuracy;
        let test_acc = evaluate(&outcome.model, test, None, cfg.workers)?.accuracy;
        let out = (train_acc, test_acc, outcome.best_epoch);
        cache.insert(key, out);
        Ok(out)
    };
    let (_, reference_accuracy, _) = run(reference)?;
    let mut rows = Vec::with_capacity(variants.len());
    for v in variants {
        let (train_accuracy, test_accuracy, best_epoch) = run(&v.config)?;
        rows.push(AblationRow {
            name: v.name.clone(),
            train_accuracy,
            test_accuracy,
            delta: reference_accuracy - test_accuracy,
            best_epoch,
        });
    }
    Ok(AblationTable {
        reference: "full".into(),
        reference_accuracy,
        rows,
    })
}
