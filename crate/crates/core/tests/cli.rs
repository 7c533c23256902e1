//! The `xinv` binary end to end on a tiny dataset.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn xinv(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_xinv")).args(args).output().unwrap()
}

fn ok(args: &[&str]) -> String {
    let o = xinv(args);
    assert!(o.status.success(), "{args:?}: {}", String::from_utf8_lossy(&o.stderr));
    String::from_utf8(o.stdout).unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn synth(dir: &Path) -> std::path::PathBuf {
    let spec = dir.join("synth.txt");
    fs::write(&spec, "# tiny\nn=16\nsize=16\n").unwrap();
    let data = dir.join("data");
    ok(&["synth", "--spec", p(&spec), "--seed", "3", "--out", p(&data)]);
    data
}

#[test]
fn usage_errors_exit_with_two() {
    assert_eq!(xinv(&[]).status.code(), Some(2));
    assert_eq!(xinv(&["train", "--data", "x", "--out", "y", "--bogus"]).status.code(), Some(2));
    assert_eq!(xinv(&["loo", "--data", "x", "--out", "y", "--mode", "sideways"]).status.code(), Some(2));
}

#[test]
fn runtime_errors_exit_with_one() {
    let dir = tempfile::tempdir().unwrap();
    let o = xinv(&["train", "--data", p(&dir.path().join("missing")), "--out", p(dir.path())]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).starts_with("error:"));
}

#[test]
fn train_eval_and_gradcam_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let data = synth(dir.path());
    assert!(data.join("train.csv").exists() && data.join("src2/pos_0001.pgm").exists());
    assert!(fs::read_to_string(data.join("spec.txt")).unwrap().contains("seed=3"));

    let cfg = dir.path().join("train.txt");
    fs::write(&cfg, "epochs=5\nlambda=0.5\nbatch=32\n").unwrap();
    let run = dir.path().join("run");
    let args = ["train", "--spec", p(&cfg), "--data", p(&data), "--mode", "alternating"];
    ok(&[&args[..], &["--epochs", "2", "--held-out", "src3", "--out", p(&run)]].concat());
    let echoed = fs::read_to_string(run.join("config.txt")).unwrap();
    // flags beat the file, the file beats the defaults
    assert!(echoed.contains("epochs=2") && echoed.contains("lambda=0.5") && echoed.contains("mode=alternating"));
    assert!(echoed.contains("train_sources=src0,src1,src2"));
    assert_eq!(fs::read_to_string(run.join("run.jsonl")).unwrap().lines().count(), 2);

    let ckpt = run.join("model.ckpt");
    let out = ok(&["eval", "--ckpt", p(&ckpt), "--data", p(&data), "--held-out", "src3", "--out", p(&run)]);
    assert!(out.contains("auc_all=") && out.contains("auc[src3]="));
    assert!(run.join("report.json").exists() && run.join("eval.txt").exists());
    let by_manifest = ok(&["eval", "--ckpt", p(&ckpt), "--data", p(&data.join("test.csv"))]);
    assert_eq!(by_manifest.lines().nth(2), out.lines().nth(2));

    let cam = dir.path().join("cam/cam.pgm");
    ok(&["gradcam", "--ckpt", p(&ckpt), "--image", p(&data.join("src3/pos_0001.pgm")), "--out", p(&cam)]);
    for f in ["cam.pgm", "cam.composite.pgm", "cam.csv"] {
        assert!(dir.path().join("cam").join(f).exists(), "{f}");
    }
}

#[test]
fn synth_is_byte_identical_across_invocations() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let (da, db) = (synth(a.path()), synth(b.path()));
    for f in ["train.csv", "test.csv", "spec.txt", "src1/neg_0004.pgm"] {
        assert_eq!(fs::read(da.join(f)).unwrap(), fs::read(db.join(f)).unwrap(), "{f}");
    }
}
