use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::report::{annotation_subsets, grouped_accuracy, GroupAccuracy};
use crate::error::{Error, Result};
use crate::graph::Sidecar;
use crate::model::{Model, Prepared};
use crate::scorer::predict;
use crate::text::Sample;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub id: String,
    pub predicted: usize,
    pub predicted_text: String,
    pub answer: Option<usize>,
    pub correct: Option<bool>,
    pub doc_count: usize,
    pub scores: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    /// Exact-match accuracy over samples with a known answer.
    pub accuracy: f64,
    /// Mean cross-entropy over the same samples.
    pub loss: Option<f64>,
    pub scored: usize,
    pub bins: Vec<GroupAccuracy>,
    pub categories: Vec<GroupAccuracy>,
    pub predictions: Vec<Prediction>,
}

/// Prepares every sample against `model`, in parallel on `workers` threads.
pub fn prepare_all(model: &Model, samples: &[Sample], sidecar: Option<&Sidecar>, workers: usize) -> Result<Vec<Prepared>> {
    let one = |s: &Sample| model.prepare(s, sidecar.and_then(|sc| sc.for_sample(&s.id)));
    if workers <= 1 {
        samples.iter().map(one).collect()
    } else {
        super::pool(workers).install(|| samples.par_iter().map(one).collect())
    }
}

/// Scores every prepared sample and assembles the report. The result does
/// not depend on `workers`.
pub fn evaluate_prepared(model: &Model, samples: &[Sample], prepared: &[Prepared], workers: usize) -> Result<EvalReport> {
    let one = |p: &Prepared| model.predict_scores(p).map_err(Error::from);
    let scored: Vec<(Vec<f64>, Option<f64>)> = if workers <= 1 {
        prepared.iter().map(one).collect::<Result<_>>()?
    } else {
        super::pool(workers).install(|| prepared.par_iter().map(one).collect::<Result<_>>())?
    };

    let mut predictions = Vec::with_capacity(samples.len());
    let mut hits = 0usize;
    let mut total_loss = 0.0;
    let mut with_answer = 0usize;
    for ((sample, prep), (scores, loss)) in samples.iter().zip(prepared).zip(scored) {
        let predicted = predict(&scores);
        let answer = prep.answer;
        let correct = sample.answer.as_ref().map(|a| &sample.candidates[predicted] == a);
        if let Some(c) = correct {
            with_answer += 1;
            hits += usize::from(c);
            total_loss += loss.unwrap_or(0.0);
        }
        predictions.push(Prediction {
            id: sample.id.clone(),
            predicted,
            predicted_text: sample.candidates[predicted].clone(),
            answer,
            correct,
            doc_count: prep.doc_count,
            scores,
        });
    }

    let judged: Vec<(usize, bool)> = predictions
        .iter()
        .filter_map(|p| p.correct.map(|c| (p.doc_count, c)))
        .collect();
    let annotated: Vec<_> = samples
        .iter()
        .zip(&predictions)
        .filter_map(|(s, p)| p.correct.map(|c| (s.annotations.as_deref(), c)))
        .collect();
    Ok(EvalReport {
        accuracy: if with_answer == 0 { 0.0 } else { hits as f64 / with_answer as f64 },
        loss: (with_answer > 0).then(|| total_loss / with_answer as f64),
        scored: with_answer,
        bins: grouped_accuracy(&judged),
        categories: annotation_subsets(&annotated),
        predictions,
    })
}

pub fn evaluate(model: &Model, samples: &[Sample], sidecar: Option<&Sidecar>, workers: usize) -> Result<EvalReport> {
    let prepared = prepare_all(model, samples, sidecar, workers)?;
    evaluate_prepared(model, samples, &prepared, workers)
}

/// `{sample_id: predicted candidate}` as pretty JSON, keys sorted.
pub fn predictions_json(report: &EvalReport) -> String {
    let map: BTreeMap<&str, &str> = report
        .predictions
        .iter()
        .map(|p| (p.id.as_str(), p.predicted_text.as_str()))
        .collect();
    serde_json::to_string_pretty(&map).expect("string map serializes")
}
