//! Training, evaluation, reporting and ablation runs.

mod ablate;
mod eval;
mod report;
mod train;

pub use ablate::{ablate, gate_plan, hop_gamma_plan, AblationRow, AblationTable, Variant};
pub use eval::{evaluate, evaluate_prepared, predictions_json, prepare_all, EvalReport, Prediction};
pub use report::{annotation_subsets, grouped_accuracy, GroupAccuracy, BINS, CATEGORIES, MIN_ANNOTATORS};
pub use train::{train, EpochMetrics, TrainOptions, TrainOutcome};

pub(crate) fn pool(workers: usize) -> rayon::ThreadPool {
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .expect("thread pool")
}
