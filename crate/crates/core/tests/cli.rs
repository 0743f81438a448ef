use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output, Stdio};

use std::io::Write;

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_aerotext"));
    c.env_remove("AEROTEXT_SEED");
    c
}

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn prepare(out: &Path) -> Output {
    run(&[
        "prepare",
        "--input",
        s(&fixture("accidents.csv")),
        "--mapping",
        "builtin",
        "--seed",
        "4",
        "--max-len",
        "30",
        "--out",
        s(out),
    ])
}

const SMALL: [&str; 12] = [
    "--embedding-dim",
    "12",
    "--hidden-units",
    "10",
    "--head-units",
    "8",
    "--filters",
    "10",
    "--kernel",
    "3",
    "--batch-size",
    "8",
];

fn train(data: &Path, arch: &str, out: &Path, extra: &[&str]) -> Output {
    let mut args = vec!["train", "--data", s(data), "--arch", arch, "--seed", "7", "--quiet", "--out", s(out)];
    args.extend_from_slice(&SMALL);
    args.extend_from_slice(extra);
    run(&args)
}

fn json_line(out: &Output) -> serde_json::Value {
    let text = String::from_utf8(out.stdout.clone()).unwrap();
    assert_eq!(text.lines().count(), 1, "expected one JSON line, got {text:?}");
    serde_json::from_str(text.trim()).unwrap()
}

#[test]
fn prepare_writes_dataset() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    let out = prepare(&data);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    for f in [
        "train.csv",
        "validation.csv",
        "test.csv",
        "split.json",
        "vocab.tsv",
        "stopwords.txt",
        "preprocess.json",
        "stats.json",
        "unmapped.csv",
        "manifest.json",
    ] {
        assert!(data.join(f).is_file(), "missing {f}");
    }
    let split: serde_json::Value = serde_json::from_slice(&fs::read(data.join("split.json")).unwrap()).unwrap();
    assert_eq!(split["sizes"]["train"], 24);
    assert_eq!(split["dropped_duplicate"], 1);
    assert_eq!(split["dropped_blank"], 1);
    assert_eq!(fs::read_to_string(data.join("unmapped.csv")).unwrap(), "operator,count\n");

    let manifest: serde_json::Value = serde_json::from_slice(&fs::read(data.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["command"], "prepare");
    assert_eq!(manifest["seed"], 4);
    let digests = manifest["inputs"].as_object().unwrap();
    assert_eq!(digests.len(), 1);
    assert_eq!(digests.values().next().unwrap().as_str().unwrap().len(), 64);
}

#[test]
fn prepare_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&[
        "prepare",
        "--input",
        s(&fixture("accidents_unmapped.csv")),
        "--mapping",
        "builtin",
        "--out",
        s(&dir.path().join("d")),
    ]);
    assert_eq!(out.status.code(), Some(2));
    let audit = fs::read_to_string(dir.path().join("d/unmapped.csv")).unwrap();
    assert_eq!(audit, "operator,count\nzeppelin werke,1\n");
    assert!(dir.path().join("d/train.csv").is_file());

    let missing = run(&["prepare", "--input", "/no/such.csv", "--mapping", "builtin", "--out", s(dir.path())]);
    assert_eq!(missing.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&missing.stderr).contains("error"));

    let bad_mapping = dir.path().join("m.tsv");
    fs::write(&bad_mapping, "airline\tSpaceline\n").unwrap();
    let out = run(&[
        "prepare",
        "--input",
        s(&fixture("accidents.csv")),
        "--mapping",
        s(&bad_mapping),
        "--out",
        s(&dir.path().join("e")),
    ]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn seed_from_environment() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    prepare(&a);
    let out = bin()
        .env("AEROTEXT_SEED", "4")
        .args([
            "prepare",
            "--input",
            s(&fixture("accidents.csv")),
            "--mapping",
            "builtin",
            "--max-len",
            "30",
            "--out",
            s(&b),
        ])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0));
    for f in ["train.csv", "test.csv", "vocab.tsv"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f}");
    }
}

#[test]
fn train_every_arch_and_reject_unknown() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    prepare(&data);
    for arch in ["cnn", "srnn", "lstm", "blstm"] {
        let out_dir = dir.path().join(arch);
        let out = train(&data, arch, &out_dir, &["--epochs", "2"]);
        assert_eq!(out.status.code(), Some(0), "{arch}: {}", String::from_utf8_lossy(&out.stderr));
        let v = json_line(&out);
        assert_eq!(v["arch"], arch);
        assert_eq!(v["epochs"], 2);
        let history = fs::read_to_string(out_dir.join("history.csv")).unwrap();
        assert_eq!(history.lines().count(), 3);
        assert!(history.starts_with("epoch,train_loss,train_acc,val_loss,val_acc\n"));
        assert!(out_dir.join("model.ckpt").is_file());
        assert!(out_dir.join("manifest.json").is_file());
    }
    let out = train(&data, "gru", &dir.path().join("gru"), &[]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("gru"));
}

#[test]
fn repeated_training_is_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    prepare(&data);
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    train(&data, "blstm", &a, &["--epochs", "3"]);
    train(&data, "blstm", &b, &["--epochs", "3"]);
    assert_eq!(fs::read(a.join("history.csv")).unwrap(), fs::read(b.join("history.csv")).unwrap());
    assert_eq!(fs::read(a.join("model.ckpt")).unwrap(), fs::read(b.join("model.ckpt")).unwrap());
}

#[test]
fn evaluate_overfit_model_and_predict() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    prepare(&data);
    let model = dir.path().join("lstm");
    let out = train(
        &data,
        "lstm",
        &model,
        &["--epochs", "40", "--lr", "0.01", "--select-best-by", "validation_loss"],
    );
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let ckpt = model.join("model.ckpt");

    let eval = dir.path().join("eval");
    let out = run(&["evaluate", "--checkpoint", s(&ckpt), "--data", s(&data), "--split", "train", "--out", s(&eval)]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let v = json_line(&out);
    assert_eq!(v["accuracy"], 1.0);
    assert_eq!(v["split"], "train");
    let report: serde_json::Value = serde_json::from_slice(&fs::read(eval.join("report.json")).unwrap()).unwrap();
    assert_eq!(report["schema_version"], 1);
    assert_eq!(report["orientation"], "rows=actual,columns=predicted");
    assert_eq!(report["total"], 24);
    for f in ["per_class_metrics.csv", "macro_summary.csv", "history.csv", "manifest.json"] {
        assert!(eval.join(f).is_file(), "missing {f}");
    }

    let predict = |text: &str| run(&["predict", "--checkpoint", s(&ckpt), "--text", text]);
    let a = predict("The navy patrol aircraft disappeared during a reconnaissance mission.");
    assert_eq!(a.status.code(), Some(0));
    let v = json_line(&a);
    let probs: Vec<f64> = v["probs"].as_array().unwrap().iter().map(|p| p.as_f64().unwrap()).collect();
    assert_eq!(probs.len(), 3);
    assert!((probs.iter().sum::<f64>() - 1.0).abs() < 1e-9);
    assert!(["Commercial", "Military", "Private"].contains(&v["class"].as_str().unwrap()));
    let b = predict("The navy patrol aircraft disappeared during a reconnaissance mission.");
    assert_eq!(a.stdout, b.stdout);

    let empty = predict("the and of was");
    assert_eq!(empty.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&empty.stderr).contains("warning"));
    json_line(&empty);

    let mut child = bin()
        .args(["predict", "--checkpoint", s(&ckpt), "--stdin"])
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .spawn()
        .unwrap();
    child
        .stdin
        .take()
        .unwrap()
        .write_all(b"The navy patrol aircraft disappeared during a reconnaissance mission.")
        .unwrap();
    let piped = child.wait_with_output().unwrap();
    assert_eq!(piped.stdout, a.stdout);
}

#[test]
fn evaluate_rejects_corrupt_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    prepare(&data);
    let model = dir.path().join("cnn");
    train(&data, "cnn", &model, &["--epochs", "1"]);
    let ckpt = model.join("model.ckpt");
    let bytes = fs::read(&ckpt).unwrap();
    fs::write(&ckpt, &bytes[..bytes.len() / 2]).unwrap();
    let out = run(&["evaluate", "--checkpoint", s(&ckpt), "--data", s(&data), "--out", s(&dir.path().join("e"))]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("corrupt"));

    let mut v = bytes.clone();
    v[4] = 9;
    fs::write(&ckpt, &v).unwrap();
    let out = run(&["predict", "--checkpoint", s(&ckpt), "--text", "x"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("version"));
}

#[test]
fn usage_errors_exit_one() {
    assert_eq!(run(&[]).status.code(), Some(1));
    assert_eq!(run(&["predict", "--checkpoint", "x"]).status.code(), Some(1));
    let help = run(&["--help"]);
    assert_eq!(help.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&help.stdout).contains("prepare"));
}
