//! End-to-end runs of the `pacgrad` binary.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use pacgrad::certifier::experiments::SWEEP_CSV_COLUMNS;
use pacgrad::certifier::BoundReport;
use pacgrad::datasets::Dataset;
use pacgrad::optimizers::CSV_COLUMNS;

const SMALL_FGD: &str = r#"
algorithm = "fgd"
seed = 1

[model]
kind = "linear_softmax"
input_dim = 2
num_classes = 2

[data]
kind = "blobs"
n = 300
input_dim = 2
num_classes = 2
separation = 4.0
test_size = 500

[split]
m = 150

[schedule]
steps = 40
gamma = 0.1
eps = 0.01
"#;

fn pacgrad(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_pacgrad")).args(args).output().expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn write_config(dir: &Path, text: &str) -> String {
    let path = dir.join("run.toml");
    fs::write(&path, text).unwrap();
    path.to_str().unwrap().to_owned()
}

fn digest_lines(out: &str) -> Vec<String> {
    out.lines().filter(|l| l.contains("digest")).map(str::to_owned).collect()
}

#[test]
fn train_then_certify() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL_FGD);
    let run = dir.path().join("run");
    let o = pacgrad(&["train", "--config", &cfg, "--out", run.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let csv = fs::read_to_string(run.join("trajectory.csv")).unwrap();
    assert_eq!(csv.lines().next().unwrap(), CSV_COLUMNS.join(","));
    assert_eq!(csv.lines().count(), 41);

    let rep_dir = dir.path().join("rep");
    let o = pacgrad(&["certify", run.to_str().unwrap(), "--eta", "2", "--out", rep_dir.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(stdout(&o).contains("total"));
    let report: BoundReport = serde_json::from_str(&fs::read_to_string(rep_dir.join("report.json")).unwrap()).unwrap();
    assert_eq!(report.inputs.eta, 2.0);
    assert_eq!(report.inputs.steps, 40);
    assert!(report.recheck().unwrap() < 1e-12);
}

#[test]
fn training_is_replayable() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL_FGD);
    let a = pacgrad(&["train", "--config", &cfg, "--out", dir.path().join("a").to_str().unwrap()]);
    let b = pacgrad(&["train", "--config", &cfg, "--out", dir.path().join("b").to_str().unwrap()]);
    let c = pacgrad(&["train", "--config", &cfg, "--seed", "2", "--out", dir.path().join("c").to_str().unwrap()]);
    assert_eq!(digest_lines(&stdout(&a)), digest_lines(&stdout(&b)));
    assert_ne!(digest_lines(&stdout(&a))[1], digest_lines(&stdout(&c))[1]);
    assert_eq!(
        fs::read(dir.path().join("a/trajectory.csv")).unwrap(),
        fs::read(dir.path().join("b/trajectory.csv")).unwrap()
    );
}

#[test]
fn sweep_writes_csv_and_svg() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL_FGD);
    let out = dir.path().join("sweep");
    let o = pacgrad(&[
        "sweep",
        "--config",
        &cfg,
        "--axis",
        "m",
        "--values",
        "50,150,250",
        "--seeds",
        "2",
        "--out",
        out.to_str().unwrap(),
        "--svg",
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let csv = fs::read_to_string(out.join("sweep_m.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next().unwrap(), format!("m,{}", SWEEP_CSV_COLUMNS.join(",")));
    assert_eq!(lines.count(), 3);
    assert!(fs::read_to_string(out.join("sweep_m.svg")).unwrap().starts_with("<svg"));
}

#[test]
fn config_errors_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let bad = write_config(dir.path(), &SMALL_FGD.replace("gamma = 0.1", "gamma = \"fast\""));
    let o = pacgrad(&["train", "--config", &bad, "--out", dir.path().join("x").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("config error"));

    let o = pacgrad(&["verify", "no-such-lemma"]);
    assert_eq!(o.status.code(), Some(2));
    let o = pacgrad(&["train"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn missing_trajectory_is_a_runtime_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = pacgrad(&["certify", dir.path().join("nothing").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(3));
}

#[test]
fn verify_passes_and_injected_bug_fails() {
    let dir = tempfile::tempdir().unwrap();
    let o = pacgrad(&["verify", "chain-kl", "--out", dir.path().to_str().unwrap()]);
    assert!(o.status.success(), "{}", stdout(&o));
    assert!(stdout(&o).starts_with("PASS chain-kl"));

    let o = pacgrad(&["verify", "new-mcd", "--quick", "--inject-bug"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stdout(&o).contains("FAIL new-mcd"));
}

#[test]
fn datagen_blobs_and_corruption() {
    let dir = tempfile::tempdir().unwrap();
    let clean = dir.path().join("blobs.csv");
    let noisy = dir.path().join("noisy.csv");
    let o = pacgrad(&["datagen", "blobs", "--n", "200", "--seed", "4", "--out", clean.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let o = pacgrad(&[
        "datagen",
        "corrupt",
        "--input",
        clean.to_str().unwrap(),
        "--portion",
        "1.0",
        "--classes",
        "2",
        "--out",
        noisy.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let read = |p: &Path| Dataset::read_csv(std::io::BufReader::new(fs::File::open(p).unwrap()), Some(2)).unwrap();
    let (a, b) = (read(&clean), read(&noisy));
    assert_eq!(a.len(), 200);
    assert_eq!(a.features(), b.features());
    let changed = a.labels().iter().zip(b.labels()).filter(|(x, y)| x != y).count();
    // uniform relabelling of two classes flips about half
    assert!((60..140).contains(&changed), "{changed}");
}
