use std::path::Path;
use std::process::Command;

use deeptherm::factorization::Method;
use deeptherm::thermomics::FeatureMatrix;
use deeptherm_cli::config::Source;
use deeptherm_cli::stages::{cmd_classify, cmd_embed, cmd_factorize, cmd_features, cmd_phantom, cmd_pipeline, cmd_select, feature_path};
use deeptherm_cli::{CliError, Context, PipelineConfig};

const SMALL: [&str; 6] = [
    "input.phantom.n_cases=12",
    "input.phantom.params.rows=32",
    "input.phantom.params.cols=32",
    "selection.delta=6",
    "factorization.methods=[\"pct\", \"semi-nmf\"]",
    "analysis.n_trees=50",
];

fn small_config(out: &Path) -> PipelineConfig {
    let mut overrides: Vec<String> = SMALL.iter().map(|s| s.to_string()).collect();
    overrides.push(format!("output_dir=\"{}\"", out.display()));
    PipelineConfig::load(None, &overrides).unwrap()
}

fn bin() -> Command {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_deeptherm"));
    cmd.env("RUST_LOG", "off");
    cmd
}

fn small_args(cmd: &mut Command, out: &Path) {
    for s in SMALL {
        cmd.arg("--set").arg(s);
    }
    cmd.arg("--output").arg(out).arg("--seed").arg("5");
}

#[test]
fn invalid_config_exits_2() {
    let status = bin().args(["config", "--set", "bogus=1"]).output().unwrap().status;
    assert_eq!(status.code(), Some(2));
    let dir = tempfile::tempdir().unwrap();
    let file = dir.path().join("bad.toml");
    std::fs::write(&file, "[factorization]\nlayer_sizes = [8, 12]\n").unwrap();
    let status = bin().arg("config").arg("--config").arg(&file).output().unwrap().status;
    assert_eq!(status.code(), Some(2));
}

#[test]
fn missing_upstream_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let out = bin().arg("classify").arg("--output").arg(dir.path()).output().unwrap();
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("missing upstream artifact"));
}

#[test]
fn numerical_failure_exits_4() {
    let dir = tempfile::tempdir().unwrap();
    let rows: Vec<Vec<f64>> = vec![vec![1.0, 2.0]; 8];
    let labels = (0..8).map(|i| i % 2 == 0).collect();
    let fm = FeatureMatrix::new(vec!["a".into(), "b".into()], rows, labels, (0..8).map(|i| format!("c{i}")).collect()).unwrap();
    fm.write_csv(&dir.path().join("features/pct.csv"), &Default::default()).unwrap();
    let status = bin()
        .args(["select", "--set", "factorization.methods=[\"pct\"]", "--set", "selection.delta=4", "--output"])
        .arg(dir.path())
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(4));
}

#[test]
fn config_subcommand_prints_resolved_config() {
    let out = bin().args(["config", "--set", "factorization.rank=6", "--seed", "9"]).output().unwrap();
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.starts_with("# config_sha256: "));
    let config = PipelineConfig::from_toml(&text).unwrap();
    assert_eq!(config.factorization.rank, 6);
    assert_eq!(config.seed, 9);
}

#[test]
fn classify_before_select_is_missing_upstream() {
    let dir = tempfile::tempdir().unwrap();
    let ctx = Context::new(small_config(dir.path())).unwrap();
    cmd_phantom(&ctx).unwrap();
    cmd_factorize(&ctx).unwrap();
    cmd_embed(&ctx).unwrap();
    cmd_features(&ctx).unwrap();
    match cmd_classify(&ctx) {
        Err(CliError::MissingUpstreamArtifact { stage, .. }) => assert_eq!(stage, "select"),
        other => panic!("expected MissingUpstreamArtifact, got {other:?}"),
    }
    let before = std::fs::read(feature_path(&ctx, Method::Pct)).unwrap();
    cmd_features(&ctx).unwrap();
    assert_eq!(std::fs::read(feature_path(&ctx, Method::Pct)).unwrap(), before);
    cmd_select(&ctx).unwrap();
    let reports = cmd_classify(&ctx).unwrap();
    assert_eq!(reports.len(), 2);
    assert!(dir.path().join("classification/eval.csv").exists());
}

#[test]
fn staged_binary_run_matches_pipeline() {
    let staged = tempfile::tempdir().unwrap();
    for stage in ["phantom", "factorize", "embed", "features", "select", "classify", "sweep"] {
        let mut cmd = bin();
        cmd.arg(stage).args(["--jobs", "1"]);
        small_args(&mut cmd, staged.path());
        assert!(cmd.output().unwrap().status.success(), "{stage}");
    }
    let full = tempfile::tempdir().unwrap();
    let mut cmd = bin();
    cmd.arg("pipeline");
    small_args(&mut cmd, full.path());
    let out = cmd.output().unwrap();
    assert!(out.status.success());
    assert!(String::from_utf8_lossy(&out.stdout).contains("Semi-NMF"));
    for rel in ["features/pct.csv", "selection/semi-nmf.csv", "classification/eval.csv", "classification/pct_roc.csv", "sweep/noise_sweep.csv", "cohort/cohort.csv"] {
        assert_eq!(std::fs::read(staged.path().join(rel)).unwrap(), std::fs::read(full.path().join(rel)).unwrap(), "{rel}");
    }
}

#[test]
fn directory_input_reads_a_written_cohort() {
    let first = tempfile::tempdir().unwrap();
    let ctx = Context::new(small_config(first.path())).unwrap();
    cmd_pipeline(&ctx).unwrap();

    let second = tempfile::tempdir().unwrap();
    let mut config = small_config(second.path());
    config.input.source = Source::Directory;
    config.input.directory.path = first.path().join("cohort");
    let ctx2 = Context::new(config).unwrap();
    assert_ne!(ctx.config_hash, ctx2.config_hash);
    let reports = cmd_pipeline(&ctx2).unwrap();
    assert_eq!(reports.len(), 2);
    for method in [Method::Pct, Method::SemiNmf] {
        let (a, _) = FeatureMatrix::read_csv(&feature_path(&ctx, method)).unwrap();
        let (b, header) = FeatureMatrix::read_csv(&feature_path(&ctx2, method)).unwrap();
        assert_eq!(a, b);
        assert_eq!(header.get("config_sha256"), Some(ctx2.config_hash.as_str()));
    }
}

#[test]
fn every_artifact_carries_a_header() {
    let dir = tempfile::tempdir().unwrap();
    let ctx = Context::new(small_config(dir.path())).unwrap();
    cmd_pipeline(&ctx).unwrap();
    for rel in ["features/pct.csv", "selection/pct.csv", "classification/eval.csv", "classification/semi-nmf_mwu.csv", "sweep/noise_sweep.csv", "cohort/cohort.csv", "avatars/pct/case000.csv", "factorizations/semi-nmf/case000/metadata.txt"] {
        let text = std::fs::read_to_string(dir.path().join(rel)).unwrap();
        let header = deeptherm::io::Header::parse(&text);
        assert_eq!(header.get("config_sha256"), Some(ctx.config_hash.as_str()), "{rel}");
        assert_eq!(header.get("seed"), Some("0"), "{rel}");
        assert!(header.get("library").is_some_and(|v| v.starts_with("deeptherm ")), "{rel}");
    }
}
