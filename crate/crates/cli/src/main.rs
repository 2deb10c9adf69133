use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use mug_core::eval::{
    config_digest, run_experiment_file, EvalContext, ExperimentReport, ProbeConfig, ReportEntry, VariantRegistry,
};
use mug_core::train::{dataset_segments, load_checkpoint, save_checkpoint, Trainer};
use mug_core::{Granularity, MugConfig, MugError, MugModel};
use mug_tsdata::{
    combine_datasets, corrupt_dataset, load_dataset, save_dataset, synthetic_dataset, CorruptionSpec, Format, LabelMap,
    TsError, Waveform,
};

#[derive(Parser)]
#[command(
    name = "mug",
    version,
    about = "Multi-granularity time-series representation learning"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model without labels and write a checkpoint.
    Train {
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value = "ucr-csv")]
        format: String,
        /// JSON model/training config; defaults when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Write one representation row per series.
    Encode {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value = "ucr-csv")]
        format: String,
        /// multi, fine or coarse.
        #[arg(long, default_value = "multi")]
        granularity: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Probe accuracy of a trained model, plus baselines.
    Eval {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        train: PathBuf,
        #[arg(long)]
        test: PathBuf,
        #[arg(long, default_value = "ucr-csv")]
        format: String,
        #[arg(long, value_delimiter = ',', default_value = "multi,fine,coarse,knn")]
        variants: Vec<String>,
        /// JSON report; a CSV twin is written next to it.
        #[arg(long)]
        report: PathBuf,
    },
    /// Add noise and cross-class splices; writes ucr-csv and `<out>.manifest.json`.
    Corrupt {
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value = "ucr-csv")]
        format: String,
        #[arg(long, default_value_t = 0.2)]
        noise_sigma: f64,
        #[arg(long, default_value_t = 0.25)]
        splice_fraction: f64,
        #[arg(long, default_value_t = 1)]
        splice_count: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Merge two univariate datasets under a label mapping.
    Combine {
        #[arg(long)]
        a: PathBuf,
        #[arg(long)]
        b: PathBuf,
        #[arg(long, default_value = "ucr-csv")]
        format: String,
        /// JSON `{"a": {...}, "b": {...}}` from original class names to shared ones.
        #[arg(long)]
        map: PathBuf,
        #[arg(long)]
        length: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Generate a labeled waveform dataset.
    Synth {
        #[arg(long, value_delimiter = ',', default_value = "sine,square,sawtooth")]
        classes: Vec<String>,
        #[arg(long)]
        n: usize,
        #[arg(long)]
        length: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run a JSON experiment spec.
    Experiment {
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        report: PathBuf,
    },
}

const EXIT_USAGE: u8 = 2;
const EXIT_DATA: u8 = 3;
const EXIT_NUMERIC: u8 = 4;

fn exit_code(err: &MugError) -> u8 {
    match err {
        MugError::Numeric(_) => EXIT_NUMERIC,
        MugError::Config(_) | MugError::UnknownStrategy { .. } => EXIT_USAGE,
        _ => EXIT_DATA,
    }
}

fn read_text(path: &Path) -> Result<String, MugError> {
    std::fs::read_to_string(path).map_err(|source| MugError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn write_text(path: &Path, text: &str) -> Result<(), MugError> {
    std::fs::write(path, text).map_err(|source| MugError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn parse_format(s: &str) -> Result<Format, MugError> {
    s.parse().map_err(|e: TsError| MugError::Config(e.to_string()))
}

fn parse_granularity(s: &str) -> Result<Granularity, MugError> {
    match s {
        "multi" => Ok(Granularity::Multi),
        "fine" => Ok(Granularity::Fine),
        "coarse" => Ok(Granularity::Coarse),
        other => Err(MugError::UnknownStrategy {
            registry: "granularity",
            name: other.into(),
            available: "coarse, fine, multi".into(),
        }),
    }
}

fn run(command: Command) -> Result<(), MugError> {
    match command {
        Command::Train {
            data,
            format,
            config,
            out,
        } => {
            let ds = load_dataset(&data, parse_format(&format)?)?;
            let config = match config {
                Some(p) => MugConfig::from_json(&read_text(&p)?).map_err(|e| MugError::Config(e.to_string()))?,
                None => MugConfig::default(),
            };
            let dims = ds
                .dims()
                .ok_or_else(|| MugError::Contract(format!("{} holds no series", data.display())))?;
            let model = MugModel::new(config, dims)?;
            let segments = dataset_segments(&model, &ds.series)?;
            let mut trainer = Trainer::new(model)?;
            trainer.fit(&segments, |r| {
                eprintln!(
                    "epoch {:>3}  loss {:.6}  mean hard rank {:.4}",
                    r.epoch, r.mean_loss, r.mean_hard_rank
                )
            })?;
            let step = trainer.step();
            let model = trainer.into_model();
            let seed = model.config().train.seed;
            save_checkpoint(&out, &model, step, seed, None)
        }
        Command::Encode {
            ckpt,
            data,
            format,
            granularity,
            out,
        } => {
            let granularity = parse_granularity(&granularity)?;
            let ck = load_checkpoint(&ckpt)?;
            let ds = load_dataset(&data, parse_format(&format)?)?;
            let reprs = ck.model.represent_all(&ds.series, granularity)?;
            let d = reprs.first().map_or(0, Vec::len);
            let mut text = String::from("id");
            for k in 0..d {
                let _ = write!(text, ",v{k}");
            }
            text.push('\n');
            for (ts, r) in ds.series.iter().zip(&reprs) {
                text.push_str(&ts.id);
                for v in r {
                    let _ = write!(text, ",{v}");
                }
                text.push('\n');
            }
            write_text(&out, &text)
        }
        Command::Eval {
            ckpt,
            train,
            test,
            format,
            variants,
            report,
        } => {
            let started = std::time::Instant::now();
            let format = parse_format(&format)?;
            let ck = load_checkpoint(&ckpt)?;
            let train = load_dataset(&train, format)?;
            let test = load_dataset(&test, format)?;
            let registry = VariantRegistry::builtin();
            let resolved = registry.resolve(&variants)?;
            let probe = ProbeConfig::default();
            let digest = config_digest(&(ck.model.config(), &probe))?;
            let ctx = EvalContext {
                model: Some(&ck.model),
                train: &train,
                test: &test,
                probe: &probe,
                seed: ck.seed,
            };
            let mut entries = Vec::new();
            for v in resolved {
                let score = v.evaluate(&ctx)?;
                println!(
                    "{:<8} {:.4} ({}/{})",
                    v.name(),
                    score.accuracy(),
                    score.correct,
                    score.total
                );
                entries.push(ReportEntry {
                    dataset: train.name.clone(),
                    seed: ck.seed,
                    variant: v.name().to_string(),
                    correct: score.correct,
                    total: score.total,
                    accuracy: score.accuracy(),
                    config_digest: digest.clone(),
                });
            }
            ExperimentReport {
                entries,
                runs: Vec::new(),
                wall_clock_secs: started.elapsed().as_secs_f64(),
            }
            .write(&report)
        }
        Command::Corrupt {
            data,
            format,
            noise_sigma,
            splice_fraction,
            splice_count,
            seed,
            out,
        } => {
            let spec = CorruptionSpec {
                noise_sigma,
                splice_fraction,
                splice_count,
                rng_seed: seed,
            };
            spec.validate().map_err(|e| MugError::Config(e.to_string()))?;
            let ds = load_dataset(&data, parse_format(&format)?)?;
            let (corrupted, manifest) = corrupt_dataset(&ds, &spec)?;
            save_dataset(&corrupted, &out, Format::UcrCsv)?;
            let mut manifest_path = out.into_os_string();
            manifest_path.push(".manifest.json");
            write_text(Path::new(&manifest_path), &serde_json::to_string_pretty(&manifest)?)
        }
        Command::Combine {
            a,
            b,
            format,
            map,
            length,
            seed,
            out,
        } => {
            let format = parse_format(&format)?;
            let a = load_dataset(&a, format)?;
            let b = load_dataset(&b, format)?;
            let map: LabelMap = serde_json::from_str(&read_text(&map)?)?;
            let combined = combine_datasets(&a, &b, &map, length, seed)?;
            Ok(save_dataset(&combined, &out, Format::UcrCsv)?)
        }
        Command::Synth {
            classes,
            n,
            length,
            seed,
            out,
        } => {
            let classes = classes
                .iter()
                .map(|c| c.parse::<Waveform>())
                .collect::<Result<Vec<_>, _>>()
                .map_err(|e| MugError::Config(e.to_string()))?;
            let ds = synthetic_dataset(&classes, n, length, seed).map_err(|e| MugError::Config(e.to_string()))?;
            Ok(save_dataset(&ds, &out, Format::UcrCsv)?)
        }
        Command::Experiment { spec, report } => {
            let r = run_experiment_file(&spec)?;
            for e in &r.entries {
                println!(
                    "{:<16} seed {:<4} {:<8} {:.4}",
                    e.dataset, e.seed, e.variant, e.accuracy
                );
            }
            r.write(&report)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
