use std::fs;
use std::path::Path;
use std::process::{Command, Output};
use std::time::{Duration, Instant};

fn tract(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_tract"))
        .args(args)
        .env("TRACT_THREADS", "1")
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

const SMALL: [&str; 8] = ["--train-size", "600", "--test-size", "100", "--epochs", "2", "--timing", "off"];

fn train_into(dir: &Path, extra: &[&str]) -> Output {
    let out = dir.to_str().unwrap();
    let mut args = vec!["train", "--out", out];
    args.extend_from_slice(&SMALL);
    args.extend_from_slice(extra);
    tract(&args)
}

#[test]
fn quick_verify_passes_fast() {
    let t = Instant::now();
    let o = tract(&["verify", "--level", "quick"]);
    assert!(t.elapsed() < Duration::from_secs(10));
    assert_eq!(o.status.code(), Some(0), "{}", stdout(&o));
    let text = stdout(&o);
    assert_eq!(text.lines().filter(|l| l.starts_with("PASS")).count(), 10);
    assert!(text.contains("0 failed"));
}

#[test]
fn train_writes_reproducible_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for d in [&a, &b] {
        let o = train_into(d, &["--seed", "4"]);
        assert_eq!(o.status.code(), Some(0));
    }
    let csv = fs::read_to_string(a.join("metrics.csv")).unwrap();
    assert_eq!(csv, fs::read_to_string(b.join("metrics.csv")).unwrap());
    assert_eq!(csv.lines().next().unwrap(), "run_id,seed,epoch,split,loss,top1,wall_seconds,lambda,tract,lr_now");
    assert_eq!(csv.lines().count(), 1 + 3 * 2);
    let params = fs::read(a.join("params.trct")).unwrap();
    assert_eq!(&params[..4], b"TRCT");
    assert_eq!(params, fs::read(b.join("params.trct")).unwrap());
}

#[test]
fn config_file_is_overridden_by_flags() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.cfg");
    fs::write(&cfg, "lambda = 0.2\ntract = on\nrun_id = from-file\n").unwrap();
    let out = dir.path().join("o");
    let o = train_into(&out, &["--config", cfg.to_str().unwrap(), "--lambda", "0.05"]);
    assert_eq!(o.status.code(), Some(0));
    let csv = fs::read_to_string(out.join("metrics.csv")).unwrap();
    let row: Vec<&str> = csv.lines().nth(1).unwrap().split(',').collect();
    assert_eq!((row[0], row[7], row[8]), ("from-file", "0.05", "on"));
}

#[test]
fn exit_codes() {
    assert_eq!(tract(&["train", "--model", "resnet"]).status.code(), Some(2));
    assert_eq!(tract(&["train", "--lr", "-1"]).status.code(), Some(2));
    assert_eq!(tract(&["verify", "--level", "medium"]).status.code(), Some(2));
    assert_eq!(tract(&["train", "--dataset", "mnist"]).status.code(), Some(3));

    let dir = tempfile::tempdir().unwrap();
    for f in ["train-images-idx3-ubyte", "train-labels-idx1-ubyte", "t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte"] {
        fs::write(dir.path().join(f), b"garbage bytes").unwrap();
    }
    let o = tract(&["train", "--dataset", "mnist", "--data-dir", dir.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&o.stderr).contains("byte"));

    let out = dir.path().join("diverged");
    let o = train_into(&out, &["--lr", "1e300", "--tract", "off"]);
    assert_eq!(o.status.code(), Some(1));
    let csv = fs::read_to_string(out.join("metrics.csv")).unwrap();
    assert!(csv.lines().last().unwrap().contains(",aborted,NaN,"));
}

#[test]
fn inspect_and_bench_report() {
    let o = tract(&["inspect", "--train-size", "300", "--test-size", "10", "--batch-index", "1"]);
    assert_eq!(o.status.code(), Some(0));
    let text = stdout(&o);
    assert!(text.contains("gram condition") && text.contains("cos(dz tract, -grad_z)"));

    let o = tract(&["bench", "--train-size", "600", "--test-size", "10", "--steps", "3", "--rounds", "1"]);
    let text = stdout(&o);
    let pct = text.lines().find(|l| l.starts_with("overhead")).expect("overhead line");
    let digits = pct.chars().filter(char::is_ascii_digit).count();
    assert!(digits >= 3, "{pct}");
    assert!(matches!(o.status.code(), Some(0) | Some(1)));
}
