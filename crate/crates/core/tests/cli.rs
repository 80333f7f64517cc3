use std::path::Path;
use std::process::Command;

use memehead::bundle::{write_bundle, write_prompts, EmbeddingBundle, Split};
use memehead::harness::{cmd_ablate, cmd_eval, cmd_train, ExperimentConfig, ABLATION_ROWS};
use memehead::synthetic::{indicator_prompts, separable_bundle, SyntheticSpec};
use memehead::Error;

fn fixture(dir: &Path) -> ExperimentConfig {
    let spec = SyntheticSpec {
        n_train: 40,
        n_val: 12,
        n_test: 12,
        noise_std: 0.3,
        ..Default::default()
    };
    write_bundle(&separable_bundle(&spec), dir.join("s.meb")).unwrap();
    write_prompts(&indicator_prompts(8), dir.join("s.mcp")).unwrap();
    let mut cfg = ExperimentConfig::new(dir.join("s.meb"), dir.join("out"));
    cfg.prompts_path = Some(dir.join("s.mcp"));
    cfg.head.d_proj = Some(16);
    cfg.train.epochs = Some(2);
    cfg.seeds = vec![0, 1];
    cfg
}

#[test]
fn train_writes_reports_and_checkpoints() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = fixture(dir.path());
    let out = cmd_train(&cfg).unwrap();
    for name in [
        "seed0.mck",
        "seed0.json",
        "seed1.mck",
        "seed1.json",
        "aggregate.json",
    ] {
        assert!(cfg.output_dir.join(name).is_file(), "{name}");
    }
    let agg: serde_json::Value = serde_json::from_str(
        &std::fs::read_to_string(cfg.output_dir.join("aggregate.json")).unwrap(),
    )
    .unwrap();
    assert_eq!(agg["seeds"], serde_json::json!([0, 1]));
    let acc: Vec<f64> = out.seed_reports.iter().map(|r| r.test.accuracy).collect();
    let mean = (acc[0] + acc[1]) / 2.0;
    assert_eq!(out.aggregate.test.accuracy.mean, mean);
    assert!((out.aggregate.test.accuracy.std - (acc[0] - mean).abs()).abs() < 1e-15);
    assert!(acc.iter().all(|a| (0.0..=1.0).contains(a)));

    let again = cmd_eval(
        cfg.output_dir.join("seed1.mck"),
        &cfg.bundle_path,
        None,
        Split::Test,
        None,
    )
    .unwrap();
    assert_eq!(again, out.seed_reports[1].test);
}

#[test]
fn semantic_init_without_prompts_leaves_no_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = fixture(dir.path());
    cfg.prompts_path = None;
    assert!(matches!(cmd_train(&cfg), Err(Error::Config(_))));
    assert!(!cfg.output_dir.exists());
}

#[test]
fn ablation_has_five_rows_in_order() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = fixture(dir.path());
    cfg.seeds = vec![3];
    cfg.train.epochs = Some(1);
    let table = cmd_ablate(&cfg).unwrap();
    let names: Vec<&str> = table.rows.iter().map(|r| r.variant_name.as_str()).collect();
    assert_eq!(names, ABLATION_ROWS);
    let csv = std::fs::read_to_string(cfg.output_dir.join("ablation.csv")).unwrap();
    assert_eq!(csv.lines().count(), 6);
    assert!(csv.lines().nth(1).unwrap().starts_with("CLIP,cat+lin,"));
    for r in &table.rows {
        assert!(r.metrics_mean.values().all(|v| (0.0..=1.0).contains(v)));
        assert!(r.metrics_std.values().all(|&v| v == 0.0));
    }
    assert!(cfg.output_dir.join("ablation.json").is_file());
}

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_memehead"))
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = fixture(dir.path());
    let bundle = cfg.bundle_path.to_str().unwrap();

    let mut bytes = std::fs::read(bundle).unwrap();
    let n = bytes.len();
    bytes[n / 2] ^= 1;
    let corrupt = dir.path().join("bad.meb");
    std::fs::write(&corrupt, bytes).unwrap();
    let st = bin()
        .args(["train", "--bundle", corrupt.to_str().unwrap()])
        .status()
        .unwrap();
    assert_eq!(st.code(), Some(2));

    let st = bin()
        .args(["train", "--bundle", bundle, "--seeds", "1,1"])
        .status()
        .unwrap();
    assert_eq!(st.code(), Some(1));

    let out = dir.path().join("cli");
    let st = bin()
        .args([
            "train",
            "--bundle",
            bundle,
            "--prompts",
            cfg.prompts_path.as_ref().unwrap().to_str().unwrap(),
        ])
        .args([
            "--seed",
            "4",
            "--epochs",
            "1",
            "--d-proj",
            "16",
            "--out",
            out.to_str().unwrap(),
        ])
        .status()
        .unwrap();
    assert_eq!(st.code(), Some(0));
    assert!(out.join("seed4.mck").is_file());
}

#[test]
fn config_file_supplies_flags() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = fixture(dir.path());
    let out = dir.path().join("from_file");
    let toml = format!(
        "bundle = {:?}\nprompts = {:?}\nseeds = [7]\nepochs = 1\nd_proj = 16\nout = {:?}\n",
        cfg.bundle_path,
        cfg.prompts_path.as_ref().unwrap(),
        out
    );
    std::fs::write(dir.path().join("run.toml"), toml).unwrap();
    let st = bin()
        .args([
            "train",
            "--config",
            dir.path().join("run.toml").to_str().unwrap(),
        ])
        .status()
        .unwrap();
    assert_eq!(st.code(), Some(0));
    assert!(out.join("seed7.json").is_file());
}

#[test]
fn gradcheck_names_failing_configs() {
    let run = |extra: &[&str]| {
        bin()
            .args([
                "gradcheck",
                "--d-embed",
                "3",
                "--d-proj",
                "4",
                "--n-classes",
                "2",
                "--seeds",
                "2",
            ])
            .args(extra)
            .output()
            .unwrap()
    };
    let ok = run(&[]);
    assert_eq!(
        ok.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&ok.stdout)
    );
    let bad = run(&["--inject-fault"]);
    assert_eq!(bad.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&bad.stderr).contains("pl+fa+mul+cos+sai"));
}

#[test]
fn split_subcommand_assigns_stratified_counts() {
    let dir = tempfile::tempdir().unwrap();
    let spec = SyntheticSpec {
        n_train: 1000,
        n_val: 0,
        n_test: 0,
        ..Default::default()
    };
    let src = dir.path().join("all.meb");
    write_bundle(&separable_bundle(&spec), &src).unwrap();
    let dst = dir.path().join("split.meb");
    let out = bin()
        .args([
            "split",
            "--bundle",
            src.to_str().unwrap(),
            "--seed",
            "1",
            "--out",
            dst.to_str().unwrap(),
        ])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0));
    let b = EmbeddingBundle::from_bytes(&std::fs::read(&dst).unwrap()).unwrap();
    let count = |s| b.records.iter().filter(|r| r.split == s).count();
    assert_eq!(
        [count(Split::Train), count(Split::Val), count(Split::Test)],
        [850, 50, 100]
    );
}
