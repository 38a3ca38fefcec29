use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use deeprls_core::deep::load_model;
use deeprls_core::signal::load_dataset;
use deeprls_core::{DeepRlsModel, Nonlinearity};
use tempfile::TempDir;

fn deeprls(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_deeprls"))
        .args(args)
        .output()
        .expect("spawn deeprls")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn arg(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn small_dataset(dir: &TempDir) -> PathBuf {
    let path = dir.path().join("data.bin");
    let out = deeprls(&[
        "gen",
        "--m",
        "2",
        "--l",
        "3",
        "--T",
        "6",
        "--train",
        "12",
        "--test",
        "4",
        "--seed",
        "9",
        "--out",
        arg(&path),
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    path
}

#[test]
fn gen_writes_requested_sequence_count() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("d.bin");
    let out = deeprls(&["gen", "--m", "2", "--T", "10", "--seed", "1", "--out", arg(&path)]);
    assert_eq!(code(&out), 0);
    let data = load_dataset(&path).unwrap();
    assert_eq!(data.len(), 10);
    assert_eq!(data.sequences.len(), 1100);
    assert_eq!(data.sensors(), 4);
}

#[test]
fn usage_and_validation_errors_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("d.bin");
    assert_eq!(code(&deeprls(&["gen", "--m", "2"])), 2);
    assert_eq!(code(&deeprls(&["gen", "--m", "2", "--l", "1", "--out", arg(&path)])), 2);
    assert!(!path.exists());
    let data = small_dataset(&dir);
    let rls_out = dir.path().join("r.csv");
    assert_eq!(
        code(&deeprls(&[
            "rls",
            "--data",
            arg(&data),
            "--beta",
            "1.2",
            "--out",
            arg(&rls_out)
        ])),
        2
    );
    let exp_out = dir.path().join("e.csv");
    assert_eq!(
        code(&deeprls(&["experiment", "--sweep", "5,5", "--out", arg(&exp_out)])),
        2
    );
    assert_eq!(
        code(&deeprls(&["experiment", "--kind", "fig9", "--out", arg(&exp_out)])),
        2
    );
}

#[test]
fn corrupted_dataset_exits_one() {
    let dir = tempfile::tempdir().unwrap();
    let data = small_dataset(&dir);
    let mut bytes = std::fs::read(&data).unwrap();
    bytes.truncate(bytes.len() - 5);
    std::fs::write(&data, bytes).unwrap();
    let out = deeprls(&[
        "rls",
        "--data",
        arg(&data),
        "--test",
        "4",
        "--out",
        arg(&dir.path().join("r.csv")),
    ]);
    assert_eq!(code(&out), 1);
    assert!(!out.stderr.is_empty());
}

#[test]
fn zero_epoch_training_saves_the_initialization() {
    let dir = tempfile::tempdir().unwrap();
    let data = small_dataset(&dir);
    let ckpt = dir.path().join("m.bin");
    let out = deeprls(&[
        "train",
        "--data",
        arg(&data),
        "--test",
        "4",
        "--epochs",
        "0",
        "--seed",
        "5",
        "--out",
        arg(&ckpt),
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let saved = load_model(&ckpt).unwrap();
    let fresh = DeepRlsModel::init(3, 2, 6, Nonlinearity::Tanh, 5).unwrap();
    assert_eq!(saved.to_flat(), fresh.to_flat());
    assert_eq!(saved.w0(), fresh.w0());
    assert_eq!(saved.p0(), fresh.p0());
    let history = std::fs::read_to_string(dir.path().join("m.history.csv")).unwrap();
    assert_eq!(history.trim(), "epoch,mean_loss");
}

#[test]
fn training_history_has_one_row_per_epoch_and_eval_runs() {
    let dir = tempfile::tempdir().unwrap();
    let data = small_dataset(&dir);
    let ckpt = dir.path().join("m.bin");
    let out = deeprls(&[
        "train",
        "--data",
        arg(&data),
        "--test",
        "4",
        "--batch-size",
        "4",
        "--seed",
        "2",
        "--out",
        arg(&ckpt),
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let history = std::fs::read_to_string(dir.path().join("m.history.csv")).unwrap();
    let lines: Vec<&str> = history.lines().collect();
    assert_eq!(lines.len(), 51);
    assert!(lines[1].starts_with("1,"));
    assert!(lines[50].starts_with("50,"));

    let metrics = dir.path().join("eval.csv");
    let out = deeprls(&[
        "eval",
        "--data",
        arg(&data),
        "--test",
        "4",
        "--model",
        arg(&ckpt),
        "--out",
        arg(&metrics),
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let csv = std::fs::read_to_string(&metrics).unwrap();
    assert_eq!(csv.lines().next(), Some("sequence,raw_mse,aligned_mse"));
    assert_eq!(csv.lines().count(), 5);
}

#[test]
fn eval_rejects_mismatched_model() {
    let dir = tempfile::tempdir().unwrap();
    let data = small_dataset(&dir);
    let other = dir.path().join("other.bin");
    let out = deeprls(&[
        "gen",
        "--m",
        "2",
        "--l",
        "3",
        "--T",
        "7",
        "--train",
        "2",
        "--test",
        "1",
        "--out",
        arg(&other),
    ]);
    assert_eq!(code(&out), 0);
    let ckpt = dir.path().join("m.bin");
    let out = deeprls(&[
        "train",
        "--data",
        arg(&other),
        "--test",
        "1",
        "--epochs",
        "0",
        "--out",
        arg(&ckpt),
    ]);
    assert_eq!(code(&out), 0);
    let out = deeprls(&[
        "eval",
        "--data",
        arg(&data),
        "--model",
        arg(&ckpt),
        "--out",
        arg(&dir.path().join("e.csv")),
    ]);
    assert_eq!(code(&out), 2);
}

#[test]
fn rls_metrics_are_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let data = small_dataset(&dir);
    let run = |name: &str| {
        let path = dir.path().join(name);
        let out = deeprls(&[
            "rls",
            "--data",
            arg(&data),
            "--test",
            "4",
            "--seed",
            "3",
            "--out",
            arg(&path),
        ]);
        assert_eq!(code(&out), 0);
        std::fs::read(path).unwrap()
    };
    let a = run("a.csv");
    assert_eq!(a, run("b.csv"));
    assert_eq!(String::from_utf8(a).unwrap().lines().count(), 5);
}

#[test]
fn experiment_timing_column_is_opt_in() {
    let dir = tempfile::tempdir().unwrap();
    let base = [
        "experiment",
        "--sweep",
        "3",
        "--train",
        "4",
        "--test",
        "2",
        "--epochs",
        "1",
        "--batch-size",
        "2",
    ];
    let plain = dir.path().join("p.csv");
    let timed = dir.path().join("t.csv");
    let mut args = base.to_vec();
    args.extend(["--out", arg(&plain)]);
    assert_eq!(code(&deeprls(&args)), 0);
    let mut args = base.to_vec();
    args.extend(["--timing", "--out", arg(&timed)]);
    assert_eq!(code(&deeprls(&args)), 0);
    let plain = std::fs::read_to_string(plain).unwrap();
    let timed = std::fs::read_to_string(timed).unwrap();
    assert!(plain.lines().next().unwrap().ends_with("deep_rls_mse,rls_mse"));
    assert!(timed.lines().next().unwrap().ends_with("rls_mse,wall_seconds"));
    assert_eq!(plain.lines().count(), 2);
}
