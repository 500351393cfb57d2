use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn cli(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_rkhs-control")).args(args).output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn write_config(dir: &Path, extra: &str) -> String {
    let path = dir.join("run.toml");
    fs::write(
        &path,
        format!(
            r#"
task = "sine"
seed = 5
[kernel]
scale = 5.011872336272722
[system]
T = 5
m = 10
[optimizer]
algorithm = "iterative-regression"
batch_size = 100
max_iterations = 4
[data]
train_size = 300
test_size = 100
{extra}
"#
        ),
    )
    .unwrap();
    path.to_str().unwrap().to_string()
}

#[test]
fn run_then_eval() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path().display();
    let cfg = write_config(
        dir.path(),
        &format!("[output]\nmetrics_path = \"{d}/m.toml\"\npredictions_path = \"{d}/p.csv\"\nmodel_path = \"{d}/model.json\""),
    );
    let out = cli(&["run", "--config", &cfg]);
    assert!(out.status.success(), "{}", stderr(&out));
    assert!(stdout(&out).contains("rmse = "));
    for f in ["m.toml", "p.csv", "model.json"] {
        assert!(dir.path().join(f).exists());
    }

    let data = dir.path().join("points.csv");
    fs::write(&data, "feature_0,target\n0.0,0.0\n1.0,0.8414709848078965\n-2.0,-0.9092974268256817\n").unwrap();
    let model = dir.path().join("model.json");
    let out = cli(&["eval", "--model", model.to_str().unwrap(), "--data", data.to_str().unwrap()]);
    assert!(out.status.success(), "{}", stderr(&out));
    assert!(stdout(&out).starts_with("rmse = "));
}

#[test]
fn baseline_prints_metrics() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "");
    let out = cli(&["baseline", "kernel-ridge", "--config", &cfg]);
    assert!(out.status.success(), "{}", stderr(&out));
    let rmse: f64 = stdout(&out).lines().next().unwrap().trim_start_matches("rmse = ").parse().unwrap();
    assert!(rmse < 1e-2);
}

#[test]
fn generate_heston_writes_header_and_rows() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("heston.csv");
    let out = cli(&["generate", "heston", "--count", "12", "--seed", "3", "--out", path.to_str().unwrap()]);
    assert!(out.status.success(), "{}", stderr(&out));
    let text = fs::read_to_string(&path).unwrap();
    let comments: Vec<&str> = text.lines().filter(|l| l.starts_with('#')).collect();
    assert!(comments.iter().any(|l| l.contains("spot=100")));
    assert!(comments.iter().any(|l| l.contains("seed=3")));
    assert!(comments.iter().any(|l| l.contains("eta=")));
    assert_eq!(text.lines().filter(|l| !l.starts_with('#')).count(), 13);
}

#[test]
fn errors_have_machine_readable_class() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nope.toml");
    let out = cli(&["run", "--config", missing.to_str().unwrap()]);
    assert!(!out.status.success());
    let err = stderr(&out);
    assert_eq!(err.lines().count(), 1);
    assert!(err.starts_with("error: class=io message="), "{err}");

    let cfg = write_config(dir.path(), "[cost]\nterminl = \"squared-error\"");
    let out = cli(&["run", "--config", &cfg]);
    assert!(stderr(&out).starts_with("error: class=config "), "{}", stderr(&out));

    let cfg = write_config(dir.path(), "[init]\nsigma = 100000.0");
    let cfg_text = fs::read_to_string(&cfg).unwrap().replace("max_iterations = 4", "max_iterations = 4\nlambda = 0.0");
    fs::write(&cfg, cfg_text).unwrap();
    let out = cli(&["run", "--config", &cfg]);
    let err = stderr(&out);
    assert!(err.starts_with("error: class=fitting "), "{err}");
    assert!(err.contains("iteration") && err.contains("config={"), "{err}");
}
