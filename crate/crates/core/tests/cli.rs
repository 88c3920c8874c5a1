use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use faithgrid::manipulation::ManipulationOutcome;
use faithgrid::pipeline::Manifest;
use faithgrid::report::{read_report, OutcomeRecord};

const CONFIG: &str = r#"
seed = 3
samples = 8

[attribution.shap]
samples = 64
patch = 7

[[datasets]]
name = "alpha"
source = { kind = "synthetic", spec = { samples = 160 } }
train = { epochs = 1, hidden = [16] }

[[datasets]]
name = "beta"
source = { kind = "synthetic", spec = { samples = 160, classes = 6 } }
train = { epochs = 1, hidden = [16] }
"#;

fn run(dir: &Path, args: &[&str]) -> Output {
    let config = dir.join("run.toml");
    if !config.exists() {
        std::fs::write(&config, CONFIG).unwrap();
    }
    Command::new(env!("CARGO_BIN_EXE_faithgrid"))
        .arg("--config")
        .arg(&config)
        .arg("--out")
        .arg(dir.join("out"))
        .args(args)
        .output()
        .unwrap()
}

fn manifest_path(output: &Output) -> PathBuf {
    assert!(output.status.success(), "{}", String::from_utf8_lossy(&output.stderr));
    PathBuf::from(String::from_utf8(output.stdout.clone()).unwrap().trim())
}

#[test]
fn evaluate_writes_one_row_per_method_with_hash() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = Manifest::load(manifest_path(&run(dir.path(), &["evaluate"]))).unwrap();
    let csv = dir.path().join("out/alpha/evaluate.csv");
    let text = std::fs::read_to_string(&csv).unwrap();
    assert_eq!(text.lines().next().unwrap(), format!("# config_hash: {}", manifest.config_hash));
    let (header, rows) = read_report(&csv).unwrap();
    assert_eq!(header, ["method", "score", "used", "undefined"]);
    assert_eq!(rows.len(), 3);
    for row in &rows {
        assert!(row[1].parse::<f64>().is_ok(), "{row:?}");
        assert_eq!(row[2], "8");
    }
    for artifact in &manifest.artifacts {
        let path = dir.path().join("out").join(&artifact.path);
        assert_eq!(faithgrid::report::file_sha256(&path).unwrap(), artifact.sha256);
    }
}

#[test]
fn inter_writes_base_and_manipulated_tables() {
    let dir = tempfile::tempdir().unwrap();
    manifest_path(&run(dir.path(), &["manipulate", "--mode", "inter", "--focus", "saliency"]));
    let (header, rows) = read_report(dir.path().join("out/beta/inter_saliency.csv")).unwrap();
    assert_eq!(header, ["method", "base", "manipulated"]);
    let names: Vec<&str> = rows.iter().map(|r| r[0].as_str()).collect();
    assert_eq!(names, ["LRP", "Saliency", "KernelSHAP"]);
    assert!(!dir.path().join("out/beta/inter_lrp.csv").exists());
}

#[test]
fn occurrence_tables_recount_from_outcomes() {
    let dir = tempfile::tempdir().unwrap();
    manifest_path(&run(dir.path(), &["report"]));
    let mut total = 0;
    for dataset in ["alpha", "beta"] {
        for mode in ["intra", "inter"] {
            let base = dir.path().join("out").join(dataset);
            let record: OutcomeRecord =
                serde_json::from_slice(&std::fs::read(base.join(format!("outcomes_{mode}.json"))).unwrap()).unwrap();
            let outcomes: &[ManipulationOutcome] = &record.outcomes;
            total += outcomes.len();
            let (_, rows) = read_report(base.join(format!("occurrence_{mode}.csv"))).unwrap();
            for row in rows {
                let count = outcomes
                    .iter()
                    .filter(|o| match row[0].as_str() {
                        "partition_size" => o.chosen.partition_size.to_string() == row[1],
                        "perturbation" => o.chosen.perturbation.to_string() == row[1],
                        "normalize" => o.chosen.normalize.to_string() == row[1],
                        axis => panic!("unknown axis {axis}"),
                    })
                    .count();
                assert_eq!(count.to_string(), row[2], "{dataset}/{mode} {row:?}");
            }
        }
    }
    assert_eq!(total, 12);
    let (header, rows) = read_report(dir.path().join("out/mrr.csv")).unwrap();
    assert_eq!(header, ["method", "alpha", "beta", "All"]);
    assert_eq!(rows.len(), 3);
}

#[test]
fn failures_exit_nonzero_with_error_record() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("run.toml"), CONFIG.replace("samples = 8", "samples = 0")).unwrap();
    let output = run(dir.path(), &["evaluate"]);
    assert!(!output.status.success());
    let record: serde_json::Value =
        serde_json::from_slice(&std::fs::read(dir.path().join("out/error.json")).unwrap()).unwrap();
    assert_eq!(record["command"], "evaluate");
    assert_eq!(record["kind"], "config");
    assert!(record["message"].as_str().unwrap().contains("sample budget"));
}

#[test]
fn correct_only_flag_filters_samples() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = Manifest::load(manifest_path(&run(dir.path(), &["--correct-only", "evaluate"]))).unwrap();
    assert!(manifest.config.correct_only);
    let (_, rows) = read_report(dir.path().join("out/alpha/evaluate.csv")).unwrap();
    assert_eq!(rows.len(), 3);
}
