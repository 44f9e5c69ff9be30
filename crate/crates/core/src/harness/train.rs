use std::io::Write;
use std::path::PathBuf;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::eval::{evaluate_prepared, prepare_all};
use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::graph::Sidecar;
use crate::hash::splitmix64;
use crate::model::Model;
use crate::numeric::{Adam, NumericError, Tensor};
use crate::scorer::predict;
use crate::text::{EmbeddingTable, Sample};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_acc: f64,
    pub dev_loss: Option<f64>,
    pub dev_acc: Option<f64>,
}

#[derive(Clone, Default)]
pub struct TrainOptions<'a> {
    pub pretrained: Option<&'a EmbeddingTable>,
    pub sidecar: Option<&'a Sidecar>,
    /// Extra samples whose tokens join the vocabulary (e.g. a test set).
    pub vocab_extra: &'a [Sample],
    /// Metrics are appended here, one JSON object per line.
    pub log_path: Option<PathBuf>,
    /// The best model so far is saved here after every improvement.
    pub checkpoint_path: Option<PathBuf>,
}

pub struct TrainOutcome {
    /// Parameters from the best dev epoch, or the last epoch without a dev set.
    pub model: Model,
    pub log: Vec<EpochMetrics>,
    pub best_epoch: usize,
    pub stopped_early: bool,
}

type SampleGrad = (f64, Vec<f64>, Vec<Option<Tensor>>);

/// Trains a fresh model. Each optimizer step averages the gradients of
/// `batch_size` samples; per-sample gradients may be computed on
/// `config.workers` threads but are summed in sample order, so the result
/// does not depend on the worker count.
pub fn train(config: &RunConfig, train: &[Sample], dev: &[Sample], opts: &TrainOptions<'_>) -> Result<TrainOutcome> {
    if train.is_empty() {
        return Err(Error::Config("training set is empty".into()));
    }
    for s in train {
        if s.answer_index().is_none() {
            return Err(Error::data(&s.id, "training sample without an answer"));
        }
    }
    let corpus = train.iter().chain(dev).chain(opts.vocab_extra);
    let mut model = Model::new(config, corpus, opts.pretrained)?;
    let workers = config.workers.max(1);
    let train_prep = prepare_all(&model, train, opts.sidecar, workers)?;
    let dev_prep = prepare_all(&model, dev, opts.sidecar, workers)?;
    let pool = (workers > 1).then(|| super::pool(workers));

    let mut log_file = match &opts.log_path {
        Some(p) => Some(std::fs::File::create(p).map_err(|e| Error::io(p, e))?),
        None => None,
    };
    let mut adam = Adam::new(config.adam());
    let mut log = Vec::new();
    let mut best: Option<(f64, f64, usize, Model)> = None;
    let mut since_best = 0usize;
    let mut stopped_early = false;
    let batch = config.batch_size.max(1);

    for epoch in 0..config.epochs {
        let mut order: Vec<usize> = (0..train.len()).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(splitmix64(config.seed ^ (epoch as u64).wrapping_mul(0x9E37))));
        let mut loss_sum = 0.0;
        let mut hits = 0usize;
        for chunk in order.chunks(batch) {
            let one = |&i: &usize| -> Result<SampleGrad, (usize, NumericError)> {
                model
                    .sample_gradients(&train_prep[i], model.dropout_seed(epoch, i))
                    .map_err(|e| (i, e))
            };
            let results: Vec<_> = match &pool {
                Some(pool) => pool.install(|| chunk.par_iter().map(one).collect()),
                None => chunk.iter().map(one).collect(),
            };
            model.store.zero_grads();
            let weight = 1.0 / chunk.len() as f64;
            for (r, &i) in results.into_iter().zip(chunk) {
                let (loss, scores, grads) = r.map_err(|(sample, cause)| Error::Diverged {
                    epoch,
                    sample: train[sample].id.clone(),
                    cause,
                })?;
                if !loss.is_finite() {
                    return Err(Error::Diverged {
                        epoch,
                        sample: train[i].id.clone(),
                        cause: NumericError::NonFinite { op: "loss" },
                    });
                }
                loss_sum += loss;
                hits += usize::from(Some(predict(&scores)) == train_prep[i].answer);
                model.store.accumulate(&grads, weight);
            }
            adam.step(&mut model.store)?;
        }
        model.store.zero_grads();

        let (dev_acc, dev_loss) = if dev.is_empty() {
            (None, None)
        } else {
            let report = evaluate_prepared(&model, dev, &dev_prep, workers)?;
            (Some(report.accuracy), report.loss)
        };
        let metrics = EpochMetrics {
            epoch,
            train_loss: loss_sum / train.len() as f64,
            train_acc: hits as f64 / train.len() as f64,
            dev_loss,
            dev_acc,
        };
        log::info!(
            "epoch {epoch}: train loss {:.4} acc {:.3} dev acc {:?}",
            metrics.train_loss,
            metrics.train_acc,
            metrics.dev_acc
        );
        if let (Some(f), Some(p)) = (log_file.as_mut(), opts.log_path.as_ref()) {
            let line = serde_json::to_string(&metrics).expect("metrics serialize");
            writeln!(f, "{line}").map_err(|e| Error::io(p, e))?;
        }
        log.push(metrics);

        let key = (dev_acc.unwrap_or(0.0), dev_loss.unwrap_or(0.0));
        let improved = match &best {
            None => true,
            Some(_) if dev.is_empty() => true,
            Some((acc, loss, _, _)) => key.0 > *acc || (key.0 == *acc && key.1 < *loss),
        };
        if improved {
            if let Some(path) = &opts.checkpoint_path {
                model.save(path)?;
            }
            best = Some((key.0, key.1, epoch, model.clone()));
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= config.patience.max(1) {
                stopped_early = true;
                break;
            }
        }
    }
    let (best_epoch, model) = match best {
        Some((_, _, e, m)) => (e, m),
        None => (0, model),
    };
    Ok(TrainOutcome {
        model,
        log,
        best_epoch,
        stopped_early,
    })
}
