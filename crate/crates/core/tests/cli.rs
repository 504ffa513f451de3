use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn xor_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/xor").canonicalize().unwrap()
}

/// Copies a shipped XOR config next to its inputs in a fresh directory.
fn staged(config: &str) -> (tempfile::TempDir, PathBuf) {
    let tmp = tempfile::tempdir().unwrap();
    for f in ["xor.csv", "arch.json", "net.json", config] {
        fs::copy(xor_dir().join(f), tmp.path().join(f)).unwrap();
    }
    let path = tmp.path().join(config);
    (tmp, path)
}

fn mipnet(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mipnet")).args(args).env_remove("MIPNET_SOLVER").output().unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn xor_training_run_writes_artifacts() {
    let (tmp, cfg) = staged("train.toml");
    let o = mipnet(&["run", "--config", cfg.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(String::from_utf8_lossy(&o.stdout).contains("xor: objective 0.58"));
    let out = tmp.path().join("out/train");
    for f in ["model.lp", "solution.txt", "audit.txt", "metrics.txt", "net.json"] {
        assert!(out.join(f).exists(), "{f}");
    }
    assert!(fs::read_to_string(out.join("audit.txt")).unwrap().starts_with("status pass"));
    assert!(fs::read_to_string(out.join("metrics.txt")).unwrap().contains("accuracy 100.0000"));
}

#[test]
fn verify_rerun_is_byte_identical() {
    let (tmp, cfg) = staged("verify.toml");
    let out = tmp.path().join("out/verify");
    let files = ["model.mps", "solution.txt", "audit.txt", "metrics.txt", "net.json"];
    let snapshot = || files.map(|f| fs::read(out.join(f)).unwrap());
    assert!(mipnet(&["run", "--config", cfg.to_str().unwrap()]).status.success());
    let first = snapshot();
    assert!(mipnet(&["run", "--config", cfg.to_str().unwrap()]).status.success());
    assert_eq!(first, snapshot());
}

#[test]
fn tampered_solution_fails_audit() {
    let (tmp, cfg) = staged("verify.toml");
    let c = cfg.to_str().unwrap();
    assert!(mipnet(&["verify", "--config", c]).status.success());
    let sol = tmp.path().join("out/verify/solution.txt");
    let text = fs::read_to_string(&sol).unwrap().replace("delta[1][1][0] 1", "delta[1][1][0] 0");
    let bad = tmp.path().join("tampered.txt");
    fs::write(&bad, text).unwrap();
    let o = mipnet(&["eval", "--config", c, "--solution", bad.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));
    assert!(stderr(&o).contains("relu"), "{}", stderr(&o));
}

#[test]
fn external_template_without_solution_is_a_config_error() {
    let (_tmp, cfg) = staged("verify.toml");
    let text = fs::read_to_string(&cfg).unwrap().replace("engine = \"oracle\"", "engine = \"external\"\nexternal = \"solver {model}\"");
    fs::write(&cfg, text).unwrap();
    let o = mipnet(&["solve", "--config", cfg.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
    assert!(stderr(&o).contains("{solution}"), "{}", stderr(&o));
}

#[test]
fn forecast_matches_built_model() {
    let (_tmp, cfg) = staged("train.toml");
    let c = cfg.to_str().unwrap();
    let built = mipnet(&["stats", "--config", c]);
    let forecast = mipnet(&["stats", "--config", c, "--forecast", "4"]);
    assert!(built.status.success() && forecast.status.success());
    assert_eq!(built.stdout, forecast.stdout);
}

#[test]
fn build_writes_mps_on_request() {
    let (tmp, cfg) = staged("train.toml");
    let o = mipnet(&["build", "--config", cfg.to_str().unwrap(), "--emit", "mps"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let mps = fs::read_to_string(tmp.path().join("out/train/model.mps")).unwrap();
    assert!(mps.contains("ENDATA"));
}

#[test]
fn bilinear_mode_cannot_be_emitted() {
    let (_tmp, cfg) = staged("train.toml");
    let o = mipnet(&["build", "--config", cfg.to_str().unwrap(), "--mode", "train-bilinear"]);
    assert!(!o.status.success());
    assert!(stderr(&o).contains("bilinear"), "{}", stderr(&o));
}
