use std::fs;
use std::path::Path;

use nalgebra::DVector;
use rkhs_control::costs::TerminalKind;
use rkhs_control::data::{load_csv, two_gaussians, write_csv, CsvOptions, Task};
use rkhs_control::experiment::{
    compute_metrics, evaluate_saved, run_experiment, ExperimentConfig, MetricsReport, SavedModel,
};

fn sine_config(dir: &Path, algorithm: &str, iterations: usize) -> ExperimentConfig {
    ExperimentConfig::from_toml(&format!(
        r#"
task = "sine"
seed = 11
[kernel]
scale = 5.011872336272722
[system]
T = 8
m = 10
[optimizer]
algorithm = "{algorithm}"
batch_size = 100
max_iterations = {iterations}
[data]
train_size = 400
test_size = 150
[output]
metrics_path = "{0}/metrics.toml"
predictions_path = "{0}/predictions.csv"
model_path = "{0}/model.json"
"#,
        dir.display()
    ))
    .unwrap()
}

fn read_predictions(path: &Path) -> (DVector<f64>, DVector<f64>) {
    let mut reader = csv::Reader::from_path(path).unwrap();
    let headers = reader.headers().unwrap().clone();
    let col = |name: &str| headers.iter().position(|h| h == name).unwrap();
    let (iy, ip) = (col("y"), col("prediction"));
    let (mut y, mut p) = (Vec::new(), Vec::new());
    for rec in reader.records() {
        let rec = rec.unwrap();
        y.push(rec[iy].parse::<f64>().unwrap());
        p.push(rec[ip].parse::<f64>().unwrap());
    }
    (DVector::from_vec(p), DVector::from_vec(y))
}

#[test]
fn metrics_file_matches_predictions_csv() {
    let dir = tempfile::tempdir().unwrap();
    let report = run_experiment(&sine_config(dir.path(), "enhanced-iterative-regression", 10)).unwrap();
    let (pred, y) = read_predictions(&dir.path().join("predictions.csv"));
    assert_eq!(y.len(), 150);
    let recomputed = compute_metrics(&pred, &y, Task::Regression, TerminalKind::SquaredError).unwrap();
    let from_file = MetricsReport::from_toml(&fs::read_to_string(dir.path().join("metrics.toml")).unwrap()).unwrap();
    assert!((recomputed.rmse.unwrap() - from_file.rmse.unwrap()).abs() < 1e-12);
    assert!((recomputed.mape.unwrap() - from_file.mape.unwrap()).abs() < 1e-12);
    assert_eq!(from_file.rmse, report.rmse);
    assert_eq!(from_file.iterations, 10);
}

#[test]
fn config_echo_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = sine_config(dir.path(), "iterative-regression", 3);
    run_experiment(&cfg).unwrap();
    let from_file = MetricsReport::from_toml(&fs::read_to_string(dir.path().join("metrics.toml")).unwrap()).unwrap();
    assert_eq!(from_file.config, cfg);
    let again = ExperimentConfig::from_toml(&from_file.config.to_toml().unwrap()).unwrap();
    assert_eq!(again, cfg);
}

#[test]
fn saved_model_reproduces_predictions() {
    let dir = tempfile::tempdir().unwrap();
    run_experiment(&sine_config(dir.path(), "enhanced-iterative-regression", 5)).unwrap();
    let saved = SavedModel::load(dir.path().join("model.json")).unwrap();
    let model = saved.build().unwrap();
    let mut reader = csv::Reader::from_path(dir.path().join("predictions.csv")).unwrap();
    for rec in reader.records() {
        let rec = rec.unwrap();
        let x: f64 = rec[0].parse().unwrap();
        let p: f64 = rec[2].parse().unwrap();
        assert!((model.predict(&[x]).unwrap() - p).abs() <= 1e-12 * p.abs().max(1.0));
    }
}

#[test]
fn zero_iterations_equal_naive_benchmark() {
    let dir = tempfile::tempdir().unwrap();
    let report = run_experiment(&sine_config(dir.path(), "gradient-descent", 0)).unwrap();
    assert_eq!(report.iterations, 0);
    assert_eq!(report.rmse, report.naive.rmse);
    assert_eq!(report.test_cost, report.naive_cost);
}

#[test]
fn failed_run_writes_no_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = sine_config(dir.path(), "iterative-regression", 5);
    cfg.optimizer.lambda = 0.0;
    cfg.init.sigma = 1e5;
    let err = run_experiment(&cfg).unwrap_err();
    assert_eq!(err.class(), "fitting");
    assert!(err.to_string().contains("iteration"));
    assert_eq!(fs::read_dir(dir.path()).unwrap().count(), 0);

    let mut cfg = sine_config(dir.path(), "iterative-regression", 2);
    cfg.output.as_mut().unwrap().model_path = dir.path().join("missing").join("model.json");
    assert_eq!(run_experiment(&cfg).unwrap_err().class(), "io");
    assert_eq!(fs::read_dir(dir.path()).unwrap().count(), 0);
}

#[test]
fn classification_run_and_eval_agree() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("g.csv");
    write_csv(&two_gaussians(900, 3, 3.0, 4).unwrap(), &data, &[]).unwrap();
    let cfg = ExperimentConfig::from_toml(&format!(
        r#"
task = "csv-classify"
seed = 2
[kernel]
scale = 2.0
[system]
T = 6
m = 30
[optimizer]
algorithm = "enhanced-iterative-regression"
batch_size = 200
max_iterations = 10
[cost]
terminal = "cross-entropy"
[data]
path = "{0}"
test_size = 200
[output]
metrics_path = "{1}/metrics.toml"
predictions_path = "{1}/predictions.csv"
model_path = "{1}/model.json"
"#,
        data.display(),
        dir.path().display()
    ))
    .unwrap();
    let report = run_experiment(&cfg).unwrap();
    assert!(report.accuracy.unwrap() > 0.8, "{report:?}");
    assert!(report.rmse.is_none());

    let text = fs::read_to_string(dir.path().join("predictions.csv")).unwrap();
    assert!(text.lines().next().unwrap().ends_with("y,prediction,error,class"));

    // Scoring the whole file in raw units must be at least as accurate as chance.
    let saved = SavedModel::load(dir.path().join("model.json")).unwrap();
    assert!(saved.feature_stats.is_some());
    let all = evaluate_saved(&saved, &data, None).unwrap();
    assert!(all.accuracy.unwrap() > 0.8);
    let ds = load_csv(&data, &CsvOptions::new("target", Task::BinaryClassification)).unwrap();
    assert_eq!(ds.len(), 900);
}

#[test]
fn config_errors_are_reported() {
    let bad = [
        "task = \"sine\"\n[kernel]\nscale = -1.0\n[system]\nT = 2\nm = 3\n[optimizer]\nalgorithm = \"gradient-descent\"\nbatch_size = 1\nmax_iterations = 1",
        "task = \"sine\"\n[kernel]\nscale = 1.0\n[system]\nT = 2\nm = 3\nq = 3\n[optimizer]\nalgorithm = \"gradient-descent\"\nbatch_size = 1\nmax_iterations = 1",
        "task = \"csv-classify\"\n[kernel]\nscale = 1.0\n[system]\nT = 2\nm = 3\n[optimizer]\nalgorithm = \"gradient-descent\"\nbatch_size = 1\nmax_iterations = 1",
        "task = \"nope\"",
    ];
    for text in bad {
        assert_eq!(ExperimentConfig::from_toml(text).unwrap_err().class(), "config", "{text}");
    }
}
