use std::path::Path;
use std::process::{Command, Output};

fn uilab(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_uilab")).args(args).output().unwrap()
}

fn ok(out: &Output) -> String {
    assert!(
        out.status.success(),
        "exit {:?}\nstdout: {}\nstderr: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout.clone()).unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

#[test]
fn theory_run_then_certify_and_report() {
    let dir = tempfile::tempdir().unwrap();
    let table = dir.path().join("cp.csv");
    ok(&uilab(&["theory-run", "--test-size", "100", "--seed", "3", "--out", p(&table)]));
    let csv = std::fs::read_to_string(&table).unwrap();
    assert!(csv.starts_with("layer,nmse_db,sup_l1_err,bound_l1,theta,coupling_residual,mean_ss_in_support"));
    assert_eq!(csv.lines().count(), 18);

    let verdict: serde_json::Value = serde_json::from_str(&ok(&uilab(&["certify-rate", "--table", p(&table)]))).unwrap();
    assert_eq!(verdict["passed"], true);

    let report = ok(&uilab(&["report", p(&table)]));
    assert!(report.contains("theory_cp") && report.contains("| true |"));

    // Same seed, same bytes.
    let again = dir.path().join("again.csv");
    ok(&uilab(&["theory-run", "--test-size", "100", "--seed", "3", "--out", p(&again)]));
    assert_eq!(std::fs::read(&table).unwrap(), std::fs::read(&again).unwrap());
}

#[test]
fn compare_ss_runs_pairs_and_reads_tables() {
    let dir = tempfile::tempdir().unwrap();
    let out = ok(&uilab(&["compare-ss", "--test-size", "100", "--out-dir", p(dir.path())]));
    let v: serde_json::Value = serde_json::from_str(&out).unwrap();
    assert_eq!(v["no_worse"], true);
    let cp = dir.path().join("theory_cp.csv");
    let cpss = dir.path().join("theory_cpss.csv");
    let again: serde_json::Value =
        serde_json::from_str(&ok(&uilab(&["compare-ss", "--cp", p(&cp), "--cpss", p(&cpss)]))).unwrap();
    assert_eq!(again, v);
    // Swapping the roles makes selection look worse.
    let swapped = uilab(&["compare-ss", "--cp", p(&cpss), "--cpss", p(&cp)]);
    assert_eq!(swapped.status.code(), Some(1));
}

#[test]
fn gen_and_coherence() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.bin");
    let info: serde_json::Value = serde_json::from_str(&ok(&uilab(&[
        "gen", "--m", "12", "--n", "24", "--test-size", "5", "--out", p(&a),
    ])))
    .unwrap();
    assert_eq!(info["m"], 12);
    assert_eq!(info["matrix_hash"].as_str().unwrap().len(), 64);
    let w = dir.path().join("w.csv");
    let rep: serde_json::Value = serde_json::from_str(&ok(&uilab(&[
        "coherence",
        "--m",
        "12",
        "--n",
        "24",
        "--dictionary",
        p(&a),
        "--w-out",
        p(&w),
    ])))
    .unwrap();
    assert!(rep["mu_tilde"].as_f64().unwrap() <= rep["mu"].as_f64().unwrap() + 1e-8);
    assert!(w.exists());
}

#[test]
fn classical_with_both_displacement_norms() {
    let base = ["classical", "--algo", "adaptive", "--m", "20", "--n", "40", "--test-size", "20", "--K", "30"];
    let l2 = ok(&uilab(&base));
    let linf = ok(&uilab(&[&base[..], &["--displacement-norm", "linf"]].concat()));
    assert_eq!(l2.lines().count(), 32);
    assert_ne!(l2, linf);
    let bad = uilab(&[&base[..], &["--displacement-norm", "l7"]].concat());
    assert_eq!(bad.status.code(), Some(2));
}

#[test]
fn train_eval_and_validate() {
    let dir = tempfile::tempdir().unwrap();
    let save = dir.path().join("net");
    let log = dir.path().join("log.csv");
    let args = [
        "--algo", "lista", "--m", "10", "--n", "20", "--K", "3", "--test-size", "30", "--steps-per-stage", "5",
        "--batch-size", "8", "--alpha0", "0.01",
    ];
    let trained = ok(&uilab(&[&["train"][..], &args, &["--save", p(&save), "--log", p(&log)]].concat()));
    assert!(save.join("train_config.json").exists());
    assert!(std::fs::read_to_string(&log).unwrap().starts_with("step,stage,layer,minibatch_loss,validation_nmse_db"));
    let eval = ok(&uilab(&[&["eval"][..], &args, &["--params", p(&save)]].concat()));
    assert_eq!(eval, trained);
    let out = uilab(&["validate-necessity", "--m", "10", "--n", "20", "--params", p(&save)]);
    assert!(matches!(out.status.code(), Some(0 | 1)));
    let rep: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(rep["layers"].as_array().unwrap().len(), 3);
}

#[test]
fn errors_exit_with_two() {
    let out = uilab(&["theory-run", "--s", "40", "--test-size", "10"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("error"));
    assert_eq!(uilab(&["classical", "--algo", "theory_cp"]).status.code(), Some(2));
    assert_eq!(uilab(&["certify-rate", "--table", "/nonexistent.csv"]).status.code(), Some(2));
}
