use std::fs;
use std::path::Path;
use std::process::Command;

use mkgc::harness::{
    flops_config, read_config, run_experiment, run_pipeline, run_stage, ExperimentConfig, MetricsReport, Stage,
    StageOptions,
};

fn quick() -> ExperimentConfig {
    let mut cfg = ExperimentConfig::benchmark();
    cfg.kge.epochs = 30;
    cfg.train.epochs = 5;
    cfg.seed = 11;
    cfg
}

fn metrics(dir: &Path, name: &str) -> MetricsReport {
    serde_json::from_str(&fs::read_to_string(dir.join("eval").join(name)).unwrap()).unwrap()
}

fn close(a: &MetricsReport, b: &MetricsReport) {
    assert_eq!(a.n, b.n);
    assert_eq!(a.counts, b.counts);
    assert_eq!(a.metrics.keys().collect::<Vec<_>>(), b.metrics.keys().collect::<Vec<_>>());
    for (x, y) in a.metrics.values().chain([&a.avg]).zip(b.metrics.values().chain([&b.avg])) {
        for (p, q) in [(x.h1, y.h1), (x.h3, y.h3), (x.h10, y.h10), (x.mrr, y.mrr)] {
            assert!((p - q).abs() < 1e-12, "{x:?} vs {y:?}");
        }
    }
}

#[test]
fn staged_pipeline_reproduces_the_in_memory_run() {
    let cfg = quick();
    let dir = tempfile::tempdir().unwrap();
    run_pipeline(&cfg, dir.path()).unwrap();
    let direct = run_experiment(&cfg).unwrap();
    close(&metrics(dir.path(), "metrics.json"), &direct.report);
    close(&metrics(dir.path(), "kge_metrics.json"), &direct.kge_report);
    assert_eq!(metrics(dir.path(), "metrics.json").config_digest, cfg.digest());
    for f in ["routing/by_language.csv", "routing/by_relation.csv", "eval/curve.csv", "selector/loss.csv"] {
        assert!(dir.path().join(f).is_file(), "{f} missing");
    }

    // Later stages rerun alone from the files of earlier ones.
    let opts = StageOptions::default();
    run_stage(Stage::BuildPrompts, &cfg, dir.path(), &opts).unwrap();
    let prompts = fs::read_to_string(dir.path().join("prompts/test.jsonl")).unwrap();
    assert_eq!(prompts.lines().count(), direct.report.n);
    run_stage(Stage::Flops, &cfg, dir.path(), &StageOptions { tokens: 5.0, ..opts }).unwrap();
    assert!(dir.path().join("flops/flops.json").is_file());
    assert_eq!(flops_config(&cfg).n_groups, cfg.selector.n_groups);
}

#[test]
fn missing_inputs_fail_with_io_errors() {
    let dir = tempfile::tempdir().unwrap();
    let err = run_stage(Stage::TrainKge, &quick(), dir.path(), &StageOptions::default()).unwrap_err();
    assert_eq!(err.kind(), "io");
}

#[test]
fn config_files_parse_as_toml_and_json() {
    let dir = tempfile::tempdir().unwrap();
    let toml_path = dir.path().join("c.toml");
    fs::write(&toml_path, "seed = 9\n[eval]\nm = 20\nn_t = 5\n").unwrap();
    let c = read_config(&toml_path).unwrap();
    assert_eq!((c.seed, c.eval.m, c.eval.n_t), (9, 20, 5));
    let json_path = dir.path().join("c.json");
    fs::write(&json_path, serde_json::to_string(&quick()).unwrap()).unwrap();
    assert_eq!(read_config(&json_path).unwrap(), quick());
    fs::write(&toml_path, "seed = \"nine\"").unwrap();
    assert!(read_config(&toml_path).is_err());
}

fn mkgc(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_mkgc")).args(args).output().unwrap()
}

#[test]
fn cli_reports_errors_as_one_json_line() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let res = mkgc(&["train-kge", "--out-dir", out]);
    assert_eq!(res.status.code(), Some(1));
    let stderr = String::from_utf8(res.stderr).unwrap();
    let line: serde_json::Value = serde_json::from_str(stderr.trim()).unwrap();
    assert_eq!(line["error"]["kind"], "io");

    let res = mkgc(&["no-such-stage"]);
    assert_eq!(res.status.code(), Some(2));
    let line: serde_json::Value = serde_json::from_slice(&res.stderr).unwrap();
    assert_eq!(line["error"]["kind"], "usage");

    let cfg = dir.path().join("bad.toml");
    fs::write(&cfg, "[eval]\nm = 3\nn_t = 5\n").unwrap();
    let res = mkgc(&["synth", "--config", cfg.to_str().unwrap(), "--out-dir", out]);
    assert_eq!(res.status.code(), Some(1));
    let line: serde_json::Value = serde_json::from_slice(&res.stderr).unwrap();
    assert_eq!(line["error"]["kind"], "config");
}

#[test]
fn cli_stages_chain_through_the_output_directory() {
    let dir = tempfile::tempdir().unwrap();
    let cfg_path = dir.path().join("c.json");
    fs::write(&cfg_path, serde_json::to_string(&quick()).unwrap()).unwrap();
    let out = dir.path().join("run");
    let common = ["--config", cfg_path.to_str().unwrap(), "--out-dir", out.to_str().unwrap()];
    for stage in ["synth", "split", "train-kge", "gen-candidates", "build-prompts", "train-adapter", "rerank", "eval"] {
        let res = mkgc(&[&[stage][..], &common[..]].concat());
        assert!(res.status.success(), "{stage}: {}", String::from_utf8_lossy(&res.stderr));
    }
    let direct = run_experiment(&quick()).unwrap();
    close(&metrics(&out, "metrics.json"), &direct.report);
}
