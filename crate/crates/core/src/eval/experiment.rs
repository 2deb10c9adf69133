use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use mug_tsdata::{corrupt_dataset, load_dataset, synthetic_dataset, CorruptionSpec, Dataset, Format, Waveform};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::probe::ProbeConfig;
use super::variants::{EvalContext, VariantRegistry};
use crate::config::MugConfig;
use crate::model::MugModel;
use crate::train::{dataset_segments, evaluate_mean_rank, Trainer};
use crate::{MugError, Result};

/// Where one split's series come from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DataSource {
    File {
        path: PathBuf,
        #[serde(default = "default_format")]
        format: String,
    },
    Synthetic {
        classes: Vec<String>,
        n: usize,
        length: usize,
        seed: u64,
    },
}

fn default_format() -> String {
    "ucr-csv".into()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub source: DataSource,
    #[serde(default)]
    pub corruption: Option<CorruptionSpec>,
}

impl SplitSpec {
    pub fn load(&self, base: &Path) -> Result<Dataset> {
        let ds = match &self.source {
            DataSource::File { path, format } => {
                let format: Format = format.parse()?;
                let path = if path.is_absolute() {
                    path.clone()
                } else {
                    base.join(path)
                };
                load_dataset(&path, format)?
            }
            DataSource::Synthetic {
                classes,
                n,
                length,
                seed,
            } => {
                let classes = classes
                    .iter()
                    .map(|c| c.parse())
                    .collect::<mug_tsdata::Result<Vec<Waveform>>>()?;
                synthetic_dataset(&classes, *n, *length, *seed)?
            }
        };
        match &self.corruption {
            Some(spec) => Ok(corrupt_dataset(&ds, spec)?.0),
            None => Ok(ds),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetSpec {
    pub name: String,
    pub train: SplitSpec,
    pub test: SplitSpec,
}

/// A benchmark run: datasets × seeds × variants.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSpec {
    pub datasets: Vec<DatasetSpec>,
    pub variants: Vec<String>,
    #[serde(default)]
    pub config: MugConfig,
    #[serde(default)]
    pub probe: ProbeConfig,
    /// One training run per seed; each overrides the model and training seeds.
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    /// Batch size of the held-out retrieval-rank measurement; 0 skips it.
    #[serde(default)]
    pub rank_batch: usize,
}

fn default_seeds() -> Vec<u64> {
    vec![0]
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportEntry {
    pub dataset: String,
    pub seed: u64,
    pub variant: String,
    pub correct: usize,
    pub total: usize,
    pub accuracy: f64,
    pub config_digest: String,
}

/// Training trace of one (dataset, seed) run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub dataset: String,
    pub seed: u64,
    pub config_digest: String,
    pub epoch_losses: Vec<f64>,
    pub epoch_ranks: Vec<f64>,
    /// Held-out mean hard rank before and after training.
    pub heldout_rank_before: Option<f64>,
    pub heldout_rank_after: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub entries: Vec<ReportEntry>,
    pub runs: Vec<RunSummary>,
    pub wall_clock_secs: f64,
}

impl ExperimentReport {
    pub fn accuracy(&self, dataset: &str, seed: u64, variant: &str) -> Option<f64> {
        self.entries
            .iter()
            .find(|e| e.dataset == dataset && e.seed == seed && e.variant == variant)
            .map(|e| e.accuracy)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// One row per entry; numbers use the shortest round-trip decimal form.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("dataset,seed,variant,correct,total,accuracy,config_digest\n");
        for e in &self.entries {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{}",
                e.dataset, e.seed, e.variant, e.correct, e.total, e.accuracy, e.config_digest
            );
        }
        out
    }

    /// Writes `path` (JSON) and the same path with a `.csv` extension.
    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json()?).map_err(|e| MugError::io(path, e))?;
        let csv = path.with_extension("csv");
        std::fs::write(&csv, self.to_csv()).map_err(|e| MugError::io(&csv, e))
    }
}

/// SHA-256 of the canonical JSON of a value.
pub fn config_digest(value: &impl Serialize) -> Result<String> {
    let json = serde_json::to_vec(value)?;
    Ok(hex::encode(Sha256::digest(&json)))
}

/// The model config of one seeded run.
pub fn seeded_config(base: &MugConfig, seed: u64) -> MugConfig {
    let mut cfg = base.clone();
    cfg.seed = seed;
    cfg.train.seed = seed;
    cfg
}

/// Trains a model on a dataset, optionally tracking held-out retrieval rank.
pub fn train_model(
    config: MugConfig,
    train: &Dataset,
    heldout: Option<(&Dataset, usize)>,
) -> Result<(MugModel, RunSummary)> {
    let dims = train
        .dims()
        .ok_or_else(|| MugError::contract(format!("dataset {} is empty", train.name)))?;
    let model = MugModel::new(config, dims)?;
    let segments = dataset_segments(&model, &train.series)?;
    let held = match heldout {
        Some((ds, b)) if b >= 2 => Some((dataset_segments(&model, &ds.series)?, b)),
        _ => None,
    };
    let rank_seed = model.config().train.seed;
    let before = held
        .as_ref()
        .map(|(s, b)| evaluate_mean_rank(&model, s, *b, rank_seed))
        .transpose()?;
    let mut trainer = Trainer::new(model)?;
    let reports = trainer.fit(&segments, |_| {})?;
    let model = trainer.into_model();
    let after = held
        .as_ref()
        .map(|(s, b)| evaluate_mean_rank(&model, s, *b, rank_seed))
        .transpose()?;
    let summary = RunSummary {
        dataset: train.name.clone(),
        seed: model.config().seed,
        config_digest: config_digest(model.config())?,
        epoch_losses: reports.iter().map(|r| r.mean_loss).collect(),
        epoch_ranks: reports.iter().map(|r| r.mean_hard_rank).collect(),
        heldout_rank_before: before,
        heldout_rank_after: after,
    };
    Ok((model, summary))
}

/// Runs every dataset × seed × variant of a spec. Relative file paths resolve
/// against `base`.
pub fn run_experiment(spec: &ExperimentSpec, base: &Path) -> Result<ExperimentReport> {
    run_experiment_with(spec, base, &VariantRegistry::builtin())
}

pub fn run_experiment_with(spec: &ExperimentSpec, base: &Path, registry: &VariantRegistry) -> Result<ExperimentReport> {
    let started = Instant::now();
    let variants = registry.resolve(&spec.variants)?;
    if variants.is_empty() {
        return Err(MugError::config("experiment lists no variants"));
    }
    let needs_model = variants.iter().any(|v| v.needs_model());
    let mut entries = Vec::new();
    let mut runs = Vec::new();
    for ds_spec in &spec.datasets {
        let mut train = ds_spec.train.load(base)?;
        let mut test = ds_spec.test.load(base)?;
        train.name = ds_spec.name.clone();
        test.name = ds_spec.name.clone();
        for &seed in &spec.seeds {
            let cfg = seeded_config(&spec.config, seed);
            let digest = config_digest(&(&cfg, ds_spec, &spec.probe))?;
            let model = if needs_model {
                let heldout = (spec.rank_batch >= 2).then_some((&test, spec.rank_batch));
                let (model, mut summary) = train_model(cfg, &train, heldout)?;
                summary.config_digest = digest.clone();
                runs.push(summary);
                Some(model)
            } else {
                None
            };
            let ctx = EvalContext {
                model: model.as_ref(),
                train: &train,
                test: &test,
                probe: &spec.probe,
                seed,
            };
            for v in &variants {
                let score = v.evaluate(&ctx)?;
                entries.push(ReportEntry {
                    dataset: ds_spec.name.clone(),
                    seed,
                    variant: v.name().to_string(),
                    correct: score.correct,
                    total: score.total,
                    accuracy: score.accuracy(),
                    config_digest: digest.clone(),
                });
            }
        }
    }
    Ok(ExperimentReport {
        entries,
        runs,
        wall_clock_secs: started.elapsed().as_secs_f64(),
    })
}

/// Loads a JSON spec and runs it relative to the spec's directory.
pub fn run_experiment_file(path: impl AsRef<Path>) -> Result<ExperimentReport> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| MugError::io(path, e))?;
    let spec: ExperimentSpec = serde_json::from_str(&text)?;
    run_experiment(&spec, path.parent().unwrap_or(Path::new(".")))
}
