use std::ffi::{CStr, CString};
use std::path::{Path, PathBuf};
use std::ptr;

use mipnet_ffi::*;

fn xor_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/xor").canonicalize().unwrap()
}

fn verify_config(dir: &Path) -> CString {
    let x = xor_dir();
    let text = format!(
        "data = {:?}\nlabel = \"y\"\narch = {:?}\nnet = {:?}\nout_dir = {:?}\n[hyper]\nmode = \"verify\"\n",
        x.join("xor.csv"),
        x.join("arch.json"),
        x.join("net.json"),
        dir.join("out"),
    );
    let path = dir.join("verify.toml");
    std::fs::write(&path, text).unwrap();
    CString::new(path.to_str().unwrap()).unwrap()
}

fn last_error() -> String {
    unsafe { CStr::from_ptr(mipnet_last_error()) }.to_str().unwrap().to_string()
}

#[test]
fn model_lifecycle() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = verify_config(tmp.path());
    let mut model = ptr::null_mut();
    assert_eq!(unsafe { mipnet_model_from_config(cfg.as_ptr(), &mut model) }, MipnetStatus::Ok);
    assert!(!model.is_null());

    let (mut vars, mut bins, mut rows) = (0, 0, 0);
    assert_eq!(unsafe { mipnet_model_size(model, &mut vars, &mut bins, &mut rows) }, MipnetStatus::Ok);
    // one layer flag plus one indicator per hidden unit and sample
    assert_eq!(bins, 1 + 2 * 4);
    assert!(vars > bins && rows > 0);

    let lp = tmp.path().join("m.lp");
    let lp_c = CString::new(lp.to_str().unwrap()).unwrap();
    assert_eq!(unsafe { mipnet_model_write(model, lp_c.as_ptr(), MipnetFormat::Lp) }, MipnetStatus::Ok);
    assert!(std::fs::read_to_string(&lp).unwrap().starts_with("\\ mipnet model"));

    let mut obj = f64::NAN;
    assert_eq!(unsafe { mipnet_model_solve_exact(model, &mut obj) }, MipnetStatus::Ok);
    assert!((obj - 0.685).abs() < 1e-9, "{obj}");
    unsafe { mipnet_model_free(model) };
}

#[test]
fn errors_are_reported() {
    let missing = CString::new("/nonexistent/run.toml").unwrap();
    let mut model = ptr::null_mut();
    assert_eq!(unsafe { mipnet_model_from_config(missing.as_ptr(), &mut model) }, MipnetStatus::Io);
    assert!(model.is_null());
    assert!(last_error().contains("/nonexistent/run.toml"));

    assert_eq!(unsafe { mipnet_model_from_config(ptr::null(), &mut model) }, MipnetStatus::NullPointer);
    assert!(last_error().contains("config_path"));

    let mut obj = 0.0;
    assert_eq!(unsafe { mipnet_model_solve_exact(ptr::null(), &mut obj) }, MipnetStatus::NullPointer);
    unsafe { mipnet_model_free(ptr::null_mut()) };
}

#[test]
fn net_forward() {
    let path = CString::new(xor_dir().join("net.json").to_str().unwrap()).unwrap();
    let mut net = ptr::null_mut();
    assert_eq!(unsafe { mipnet_net_load(path.as_ptr(), &mut net) }, MipnetStatus::Ok);
    let mut out = [0.0; 1];
    let mut written = 0;
    for (x, want) in [([0.0, 0.0], 0.0), ([0.0, 1.0], 1.0), ([1.0, 0.0], 1.0), ([1.0, 1.0], 0.0)] {
        let s = unsafe { mipnet_net_forward(net, x.as_ptr(), 2, out.as_mut_ptr(), 1, &mut written) };
        assert_eq!((s, written, out[0]), (MipnetStatus::Ok, 1, want));
    }
    let s = unsafe { mipnet_net_forward(net, [0.0; 2].as_ptr(), 2, out.as_mut_ptr(), 0, &mut written) };
    assert_eq!((s, written), (MipnetStatus::BufferTooSmall, 1));
    let s = unsafe { mipnet_net_forward(net, [0.0; 3].as_ptr(), 3, out.as_mut_ptr(), 1, &mut written) };
    assert_eq!(s, MipnetStatus::Model);
    unsafe { mipnet_net_free(net) };
}

#[test]
fn run_writes_artifacts() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = verify_config(tmp.path());
    let mut obj = 0.0;
    assert_eq!(unsafe { mipnet_run(cfg.as_ptr(), &mut obj) }, MipnetStatus::Ok, "{}", last_error());
    for f in ["model.lp", "solution.txt", "audit.txt", "metrics.txt", "net.json"] {
        assert!(tmp.path().join("out").join(f).exists(), "{f}");
    }
}

#[test]
fn header_declares_every_entry_point() {
    let h = std::fs::read_to_string(Path::new(env!("CARGO_MANIFEST_DIR")).join("include/mipnet.h")).unwrap();
    for f in [
        "mipnet_last_error",
        "mipnet_model_from_config",
        "mipnet_model_free",
        "mipnet_model_size",
        "mipnet_model_write",
        "mipnet_model_solve_exact",
        "mipnet_run",
        "mipnet_net_load",
        "mipnet_net_free",
        "mipnet_net_forward",
    ] {
        assert!(h.contains(&format!("{f}(")), "{f}");
    }
}
