use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_stochgradadam"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().unwrap()
}

fn write_cfg(dir: &Path, name: &str, text: &str) -> String {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p.display().to_string()
}

const SMALL: &str = "data.train_per_class = 40\ndata.test_per_class = 20\ntrain.epochs = 6\ncheckpoint.every = 2\nanalysis.histogram_epochs = 0, 6\nanalysis.pca_epochs = 6\n";

#[test]
fn train_writes_all_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_cfg(dir.path(), "a.cfg", SMALL);
    let out = dir.path().join("run");
    let o = run(&["train", "--config", &cfg, "--seed", "5", "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let summary: serde_json::Value = serde_json::from_slice(&fs::read(out.join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["seed"], 5);
    assert_eq!(summary["steps"], 6 * 5);
    for f in [
        "metrics.csv",
        "timing.csv",
        "config.txt",
        "histograms/epoch_0000.csv",
        "histograms/epoch_0006.csv",
        "pca/epoch_0006.csv",
        "checkpoints/epoch_0002.ckpt",
        "checkpoints/final.ckpt",
    ] {
        assert!(out.join(f).is_file(), "{f}");
    }
    let metrics = fs::read_to_string(out.join("metrics.csv")).unwrap();
    assert!(metrics.starts_with("epoch,step,train_loss,test_accuracy,mean_norm_entropy,grad_norm_1,grad_norm_2\n"));
    assert_eq!(metrics.lines().count(), 1 + 7);
    let pca = fs::read_to_string(out.join("pca/epoch_0006.csv")).unwrap();
    assert_eq!(pca.lines().next(), Some("pc1,pc2,normalized_entropy"));
    assert_eq!(pca.lines().count(), 1 + 80);

    let o = run(&["inspect-checkpoint", out.join("checkpoints/final.ckpt").to_str().unwrap()]);
    assert!(o.status.success());
    let text = String::from_utf8(o.stdout).unwrap();
    assert!(text.contains("epoch        6") && text.contains("param.W0") && text.contains("v.b1"));
}

#[test]
fn config_errors_exit_with_2() {
    let dir = tempfile::tempdir().unwrap();
    for (name, text) in [
        ("unknown.cfg", "optimizer.gamma = 3\n"),
        ("range.cfg", "optimizer.s = 1.5\n"),
        ("dup.cfg", "sweep.s_values = 0.8, 0.8\n"),
        ("idx.cfg", "data.kind = idx\ndata.train_images = missing\n"),
    ] {
        let cfg = write_cfg(dir.path(), name, text);
        let o = run(&["train", "--config", &cfg]);
        assert_eq!(o.status.code(), Some(2), "{name}: {}", String::from_utf8_lossy(&o.stderr));
    }
    let o = run(&["train", "--config", dir.path().join("absent.cfg").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn resume_matches_uninterrupted_run() {
    let dir = tempfile::tempdir().unwrap();
    let full = write_cfg(dir.path(), "full.cfg", SMALL);
    let short = write_cfg(dir.path(), "short.cfg", &SMALL.replace("train.epochs = 6", "train.epochs = 2"));
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    assert!(run(&["train", "--config", &full, "--out", a.to_str().unwrap()]).status.success());
    assert!(run(&["train", "--config", &short, "--out", b.to_str().unwrap()]).status.success());
    let ck = b.join("checkpoints/final.ckpt");
    let o = run(&["train", "--config", &full, "--out", b.to_str().unwrap(), "--resume", ck.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(fs::read(a.join("metrics.csv")).unwrap(), fs::read(b.join("metrics.csv")).unwrap());
    assert_eq!(
        fs::read(a.join("checkpoints/final.ckpt")).unwrap(),
        fs::read(b.join("checkpoints/final.ckpt")).unwrap()
    );
    assert_eq!(fs::read(a.join("summary.json")).unwrap(), fs::read(b.join("summary.json")).unwrap());

    // A checkpoint from another configuration is refused as a config error.
    let other = write_cfg(dir.path(), "other.cfg", &format!("{SMALL}optimizer.s = 0.5\n"));
    let o = run(&["train", "--config", &other, "--resume", ck.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));

    let mut bytes = fs::read(&ck).unwrap();
    bytes.truncate(bytes.len() - 3);
    let broken = dir.path().join("broken.ckpt");
    fs::write(&broken, bytes).unwrap();
    let o = run(&["train", "--config", &full, "--resume", broken.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&o.stderr).contains("truncated"));
}

#[test]
fn sweep_and_verify_subcommands() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_cfg(dir.path(), "s.cfg", &format!("{SMALL}sweep.s_values = 1.0, 0.5\n"));
    let out = dir.path().join("sweep");
    let o = run(&["sweep", "--config", &cfg, "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let table = fs::read_to_string(out.join("comparison.csv")).unwrap();
    assert!(table.starts_with("s,final_accuracy,final_loss,epochs_to_threshold,delta_entropy\n"));
    assert_eq!(table.lines().count(), 3);
    assert!(out.join("s_0.5/metrics.csv").is_file());

    let cfg = write_cfg(
        dir.path(),
        "v.cfg",
        "verify.lemma43_traces = 8\nverify.lemma44_traces = 4\nverify.regret_instances = 2\nverify.regret_horizon = 300\n",
    );
    let out = dir.path().join("verify");
    let o = run(&["verify", "--config", &cfg, "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let summary = fs::read_to_string(out.join("summary.csv")).unwrap();
    assert!(summary.contains("lemma43,8,8,0"));
    assert!(summary.contains("regret_bound,2,2,0"));
    let records = fs::read_to_string(out.join("reports.jsonl")).unwrap();
    for line in records.lines() {
        serde_json::from_str::<serde_json::Value>(line).unwrap();
    }
}
