use std::path::Path;
use std::process::{Command, Output};

use mug_core::encoders::{FineEncoderConfig, SaxConfig};
use mug_core::{EncoderSpec, MugConfig};
use mug_tsdata::{load_dataset, Format};

fn mug(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mug")).args(args).output().unwrap()
}

fn ok(args: &[&str]) -> Output {
    let out = mug(args);
    assert!(
        out.status.success(),
        "{args:?}: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn tiny_config() -> MugConfig {
    let mut cfg = MugConfig {
        segments: 2,
        fine: EncoderSpec::new(
            "transformer",
            FineEncoderConfig {
                model_dim: 8,
                heads: 2,
                layers: 1,
                ff_dim: 8,
                dropout: 0.0,
                ..FineEncoderConfig::default()
            },
        ),
        coarse: EncoderSpec::new(
            "sax",
            SaxConfig {
                alphabet: 4,
                word_length: 3,
                embed_dim: 6,
            },
        ),
        ..MugConfig::default()
    };
    cfg.train.epochs = 2;
    cfg.train.batch_size = 6;
    cfg
}

#[test]
fn synth_train_encode_eval_round() {
    let dir = tempfile::tempdir().unwrap();
    let train = dir.path().join("train.csv");
    let test = dir.path().join("test.csv");
    let config = dir.path().join("config.json");
    let ckpt = dir.path().join("model.ckpt");
    let reprs = dir.path().join("reprs.csv");
    let report = dir.path().join("report.json");
    std::fs::write(&config, serde_json::to_string(&tiny_config()).unwrap()).unwrap();

    ok(&[
        "synth",
        "--n",
        "12",
        "--length",
        "24",
        "--seed",
        "1",
        "--out",
        p(&train),
    ]);
    ok(&["synth", "--n", "9", "--length", "24", "--seed", "2", "--out", p(&test)]);
    assert_eq!(load_dataset(&train, Format::UcrCsv).unwrap().len(), 12);

    ok(&["train", "--data", p(&train), "--config", p(&config), "--out", p(&ckpt)]);
    ok(&["encode", "--ckpt", p(&ckpt), "--data", p(&test), "--out", p(&reprs)]);
    let csv = std::fs::read_to_string(&reprs).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines.len(), 10);
    assert_eq!(lines[0].split(',').count(), 9);

    let out = ok(&[
        "eval",
        "--ckpt",
        p(&ckpt),
        "--train",
        p(&train),
        "--test",
        p(&test),
        "--variants",
        "multi,knn",
        "--report",
        p(&report),
    ]);
    assert!(String::from_utf8_lossy(&out.stdout).contains("knn"));
    let json: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&report).unwrap()).unwrap();
    assert_eq!(json["entries"].as_array().unwrap().len(), 2);
    assert!(report.with_extension("csv").exists());
}

#[test]
fn corrupt_writes_data_and_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let clean = dir.path().join("clean.csv");
    let a = dir.path().join("a.csv");
    let b = dir.path().join("b.csv");
    let same = dir.path().join("same.csv");
    ok(&["synth", "--n", "12", "--length", "40", "--out", p(&clean)]);
    for out in [&a, &b] {
        ok(&["corrupt", "--data", p(&clean), "--seed", "5", "--out", p(out)]);
    }
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    assert!(dir.path().join("a.csv.manifest.json").exists());
    ok(&[
        "corrupt",
        "--data",
        p(&clean),
        "--noise-sigma",
        "0",
        "--splice-fraction",
        "0",
        "--out",
        p(&same),
    ]);
    assert_eq!(std::fs::read(&clean).unwrap(), std::fs::read(&same).unwrap());
}

#[test]
fn combine_uses_the_label_map() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.csv");
    let b = dir.path().join("b.csv");
    let map = dir.path().join("map.json");
    let out = dir.path().join("both.csv");
    std::fs::write(&a, "1,0,1,2,3\n-1,3,2,1,0\n").unwrap();
    std::fs::write(&b, "2,0,0,1\n1,1,0,0\n").unwrap();
    std::fs::write(
        &map,
        r#"{"a": {"1": "normal", "-1": "mi"}, "b": {"1": "normal", "2": "mi"}}"#,
    )
    .unwrap();
    ok(&[
        "combine",
        "--a",
        p(&a),
        "--b",
        p(&b),
        "--map",
        p(&map),
        "--length",
        "7",
        "--out",
        p(&out),
    ]);
    let ds = load_dataset(&out, Format::UcrCsv).unwrap();
    assert_eq!(ds.len(), 4);
    assert_eq!(ds.series_length(), Some(7));
    assert_eq!(ds.class_count(), 2);
}

#[test]
fn exit_codes_separate_usage_and_data_errors() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("missing.csv");
    assert_eq!(mug(&["train"]).status.code(), Some(2));
    assert_eq!(mug(&["frobnicate"]).status.code(), Some(2));
    let out = mug(&["train", "--data", p(&missing), "--out", p(&dir.path().join("m.ckpt"))]);
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("missing.csv"));
    let bad = dir.path().join("bad.csv");
    std::fs::write(&bad, "1,0.5,abc\n").unwrap();
    assert_eq!(
        mug(&["encode", "--ckpt", p(&missing), "--data", p(&bad), "--out", p(&missing)])
            .status
            .code(),
        Some(3)
    );
    assert_eq!(
        mug(&[
            "synth",
            "--classes",
            "triangle",
            "--n",
            "3",
            "--length",
            "8",
            "--out",
            p(&missing)
        ])
        .status
        .code(),
        Some(2)
    );
    assert_eq!(
        mug(&[
            "corrupt",
            "--data",
            p(&bad),
            "--splice-fraction",
            "1.5",
            "--out",
            p(&missing)
        ])
        .status
        .code(),
        Some(2)
    );
}

#[test]
fn experiment_spec_runs_from_its_directory() {
    let dir = tempfile::tempdir().unwrap();
    let test = dir.path().join("test.csv");
    ok(&["synth", "--n", "9", "--length", "24", "--seed", "2", "--out", p(&test)]);
    let spec = serde_json::json!({
        "datasets": [{
            "name": "waves",
            "train": {
                "source": { "kind": "synthetic", "classes": ["sine", "square", "sawtooth"], "n": 12, "length": 24, "seed": 1 },
                "corruption": { "noise_sigma": 0.2, "splice_fraction": 0.25, "splice_count": 1, "rng_seed": 11 }
            },
            "test": { "source": { "kind": "file", "path": "test.csv" } }
        }],
        "variants": ["coarse", "knn"],
        "config": tiny_config(),
        "probe": { "steps": 20 },
        "seeds": [0, 1]
    });
    let spec_path = dir.path().join("spec.json");
    std::fs::write(&spec_path, spec.to_string()).unwrap();
    let report = dir.path().join("out.json");
    ok(&["experiment", "--spec", p(&spec_path), "--report", p(&report)]);
    let json: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&report).unwrap()).unwrap();
    assert_eq!(json["entries"].as_array().unwrap().len(), 4);
    assert_eq!(json["runs"].as_array().unwrap().len(), 2);
}
