use std::path::Path;
use std::process::{Command, Output};

const SMALL: &[&str] = &["-s", "n_c=64", "-s", "n_t=8", "-s", "n_cc=16", "-s", "f=2"];

fn enet(out: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_enet"))
        .arg("--out")
        .arg(out)
        .args(args)
        .env("ENET_THREADS", "1")
        .output()
        .expect("spawn enet")
}

fn ok(out: &Path, args: &[&str]) -> String {
    let o = enet(out, args);
    assert!(o.status.success(), "{args:?}: {}", String::from_utf8_lossy(&o.stderr));
    String::from_utf8(o.stdout).unwrap()
}

fn small(rest: &[&str]) -> Vec<String> {
    SMALL.iter().chain(rest).map(|s| s.to_string()).collect()
}

fn run_small(out: &Path, rest: &[&str]) -> Output {
    let args = small(rest);
    enet(out, &args.iter().map(String::as_str).collect::<Vec<_>>())
}

fn generate(out: &Path, count: &str) {
    let o = run_small(out, &["generate", "--count", count]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn generate_is_deterministic_and_sized() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    generate(a.path(), "40");
    generate(b.path(), "40");
    let bin = |d: &Path| std::fs::read(d.join("dataset.bin")).unwrap();
    assert_eq!(bin(a.path()).len(), 40 * 2 * 64 * 8 * 4);
    assert_eq!(bin(a.path()), bin(b.path()));
    assert_eq!(enet(a.path(), &["generate", "--count", "0"]).status.code(), Some(2));
}

#[test]
fn analyze_writes_profiles_and_flags_fixed_phases() {
    let d = tempfile::tempdir().unwrap();
    generate(d.path(), "600");
    let ds = d.path().join("dataset.json");
    let o = run_small(d.path(), &["analyze", "--dataset", ds.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stdout));
    let csv = std::fs::read_to_string(d.path().join("correlation.csv")).unwrap();
    // header plus two domains, two parts and lags 1..=7
    assert_eq!(csv.lines().count(), 1 + 2 * 2 * 7);
    assert!(d.path().join("theorem1.json").exists());

    let f = tempfile::tempdir().unwrap();
    let o = run_small(f.path(), &["-s", "phase_model=fixed", "generate", "--count", "600"]);
    assert!(o.status.success());
    let ds = f.path().join("dataset.json");
    assert_eq!(run_small(f.path(), &["analyze", "--dataset", ds.to_str().unwrap()]).status.code(), Some(1));
}

#[test]
fn train_is_reproducible_and_evaluates() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    generate(a.path(), "150");
    let ds = a.path().join("dataset.json");
    for d in [a.path(), b.path()] {
        let o = run_small(d, &["-s", "batch_size=10", "train", "--dataset", ds.to_str().unwrap(), "--epochs", "2"]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    }
    for f in ["model.ckpt", "loss.csv"] {
        assert_eq!(std::fs::read(a.path().join(f)).unwrap(), std::fs::read(b.path().join(f)).unwrap(), "{f}");
    }
    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(a.path().join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["run"]["split_sizes"], serde_json::json!([100, 30, 20]));
    assert_eq!(std::fs::read_to_string(a.path().join("loss.csv")).unwrap().lines().count(), 3);

    let ck = a.path().join("model.ckpt");
    let text = ok(b.path(), &["evaluate", "--checkpoint", ck.to_str().unwrap(), "--dataset", ds.to_str().unwrap()]);
    assert!(text.contains("NMSE"), "{text}");
    let eval: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(b.path().join("eval.json")).unwrap()).unwrap();
    assert_eq!(eval["samples"], 150);
}

#[test]
fn count_params_matches_reference_sizes() {
    let d = tempfile::tempdir().unwrap();
    assert!(ok(d.path(), &["count-params"]).contains("0.27M"));
    assert!(ok(d.path(), &["count-params", "--f", "32", "--gamma", "1/16"]).contains("0.11M"));
    let table = ok(d.path(), &["count-params", "--table"]);
    assert!(table.contains("2.10M") && table.contains("0.03M"), "{table}");
}

#[test]
fn visualize_writes_heatmaps() {
    let d = tempfile::tempdir().unwrap();
    generate(d.path(), "5");
    let ds = d.path().join("dataset.json");
    let o = run_small(d.path(), &["visualize", "--dataset", ds.to_str().unwrap(), "--index", "2"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let read = |n: &str| std::fs::read(d.path().join(format!("sample2_{n}.pgm"))).unwrap();
    let original = read("original_real");
    assert!(original.starts_with(b"P5\n8 16\n255\n"));
    assert_eq!(original.len(), b"P5\n8 16\n255\n".len() + 16 * 8);
    // without a checkpoint the reconstruction is the input
    assert_eq!(read("recon_real"), original);
    assert_eq!(read("recon_imag"), read("original_imag"));
    assert_eq!(run_small(d.path(), &["visualize", "--dataset", ds.to_str().unwrap(), "--index", "5"]).status.code(), Some(2));
}

#[test]
fn grad_check_passes() {
    let d = tempfile::tempdir().unwrap();
    let text = ok(d.path(), &["grad-check", "--trials", "2"]);
    assert!(text.lines().all(|l| l.ends_with("ok")), "{text}");
}

#[test]
fn bad_settings_exit_with_usage_errors() {
    let d = tempfile::tempdir().unwrap();
    let o = enet(d.path(), &["-s", "nonsense=1", "count-params"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("nonsense"));
    assert!(ok(d.path(), &["keys"]).contains("phase_model"));
}
