//! Downstream evaluation: linear probes over frozen representations, a 1-NN
//! baseline, runtime-selectable variants and the experiment harness.

mod experiment;
mod knn;
mod probe;
mod variants;

pub use experiment::{
    config_digest, run_experiment, run_experiment_file, run_experiment_with, seeded_config, train_model, DataSource,
    DatasetSpec, ExperimentReport, ExperimentSpec, ReportEntry, RunSummary, SplitSpec,
};
pub use knn::{knn_baseline, knn_predict};
pub use probe::{classify, fit_linear_probe, ProbeConfig, ProbeParams};
pub use variants::{EvalContext, EvalVariant, KnnVariant, ProbeVariant, Score, VariantRegistry};
