//! C ABI over the model builder, emitters, oracle, and networks.
//!
//! Every function returns a [`MipnetStatus`]; on failure the message is kept
//! per thread and read with [`mipnet_last_error`]. Handles are opaque and
//! released with their `_free` function. Panics are caught at the boundary.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;

use mipnet::builder::Build;
use mipnet::config::RunConfig;
use mipnet::emit::{write_lp, write_mps};
use mipnet::oracle::enumerate_exact;
use mipnet::pipeline;
use mipnet::recon::TrainedNet;
use mipnet::Error;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MipnetStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    Config = 3,
    Io = 4,
    Parse = 5,
    Model = 6,
    Audit = 7,
    Infeasible = 8,
    BufferTooSmall = 9,
    Panic = 10,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MipnetFormat {
    Lp = 0,
    Mps = 1,
}

/// A built model with its enumeration limit.
pub struct MipnetModel {
    build: Build,
    limit_bits: usize,
}

/// A concrete network.
pub struct MipnetNet {
    net: TrainedNet,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

fn status_of(e: &Error) -> MipnetStatus {
    match e {
        Error::Config(_) | Error::InvalidHyper(_) | Error::InvalidArch(_) => MipnetStatus::Config,
        Error::Io { .. } => MipnetStatus::Io,
        Error::Parse { .. } | Error::Json(_) | Error::NonNumericFeature { .. } => MipnetStatus::Parse,
        Error::AuditFailure(_) | Error::RootLayerPruned => MipnetStatus::Audit,
        Error::NoFeasibleAssignment => MipnetStatus::Infeasible,
        _ => MipnetStatus::Model,
    }
}

/// Runs `f`, recording any error or panic as the thread's last error.
fn guard(f: impl FnOnce() -> Result<(), (MipnetStatus, String)>) -> MipnetStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error("");
            MipnetStatus::Ok
        }
        Ok(Err((status, msg))) => {
            set_error(&msg);
            status
        }
        Err(_) => {
            set_error("panic inside mipnet");
            MipnetStatus::Panic
        }
    }
}

fn lift<T>(r: mipnet::Result<T>) -> Result<T, (MipnetStatus, String)> {
    r.map_err(|e| (status_of(&e), e.to_string()))
}

fn null(what: &str) -> (MipnetStatus, String) {
    (MipnetStatus::NullPointer, format!("`{what}` is null"))
}

unsafe fn path_arg(p: *const c_char, what: &str) -> Result<PathBuf, (MipnetStatus, String)> {
    if p.is_null() {
        return Err(null(what));
    }
    let s = CStr::from_ptr(p).to_str().map_err(|_| (MipnetStatus::InvalidUtf8, format!("`{what}` is not UTF-8")))?;
    Ok(PathBuf::from(s))
}

/// Message of the last failed call on this thread, empty after a success.
/// The pointer stays valid until the next call on the same thread.
#[no_mangle]
pub extern "C" fn mipnet_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Builds the model described by a run config file.
///
/// `config_path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn mipnet_model_from_config(config_path: *const c_char, out: *mut *mut MipnetModel) -> MipnetStatus {
    guard(|| {
        let path = path_arg(config_path, "config_path")?;
        if out.is_null() {
            return Err(null("out"));
        }
        let cfg = lift(RunConfig::load(&path))?;
        let prep = lift(pipeline::prepare(&cfg))?;
        let build = lift(pipeline::build(&prep, false))?;
        *out = Box::into_raw(Box::new(MipnetModel { build, limit_bits: cfg.solve.limit_bits }));
        Ok(())
    })
}

/// `model` must come from [`mipnet_model_from_config`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn mipnet_model_free(model: *mut MipnetModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Variable, binary, and linear constraint counts.
///
/// `model` must be a live handle; the out pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn mipnet_model_size(
    model: *const MipnetModel,
    vars: *mut usize,
    binaries: *mut usize,
    constraints: *mut usize,
) -> MipnetStatus {
    guard(|| {
        let m = model.as_ref().ok_or_else(|| null("model"))?;
        if vars.is_null() || binaries.is_null() || constraints.is_null() {
            return Err(null("out"));
        }
        let ir = m.build.model();
        *vars = ir.num_vars();
        *binaries = ir.binaries().count();
        *constraints = ir.num_constraints();
        Ok(())
    })
}

/// Writes the model as LP or MPS text.
///
/// `model` must be a live handle and `path` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn mipnet_model_write(model: *const MipnetModel, path: *const c_char, format: MipnetFormat) -> MipnetStatus {
    guard(|| {
        let m = model.as_ref().ok_or_else(|| null("model"))?;
        let path = path_arg(path, "path")?;
        let ir = m.build.model();
        lift(match format {
            MipnetFormat::Lp => write_lp(ir, &path),
            MipnetFormat::Mps => write_mps(ir, &path),
        })?;
        Ok(())
    })
}

/// Solves the model by exhaustive enumeration and stores the optimum.
///
/// `model` must be a live handle and `objective` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn mipnet_model_solve_exact(model: *const MipnetModel, objective: *mut f64) -> MipnetStatus {
    guard(|| {
        let m = model.as_ref().ok_or_else(|| null("model"))?;
        if objective.is_null() {
            return Err(null("objective"));
        }
        let e = lift(enumerate_exact(m.build.exact(), m.limit_bits))?;
        *objective = e.best.objective;
        Ok(())
    })
}

/// Runs the whole pipeline for a config file and stores the objective.
///
/// `config_path` must be a NUL-terminated string and `objective` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn mipnet_run(config_path: *const c_char, objective: *mut f64) -> MipnetStatus {
    guard(|| {
        let path = path_arg(config_path, "config_path")?;
        if objective.is_null() {
            return Err(null("objective"));
        }
        let cfg = lift(RunConfig::load(&path))?;
        let r = lift(pipeline::run_pipeline(&cfg))?;
        *objective = r.objective;
        Ok(())
    })
}

/// Loads a network JSON file.
///
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn mipnet_net_load(path: *const c_char, out: *mut *mut MipnetNet) -> MipnetStatus {
    guard(|| {
        let path = path_arg(path, "path")?;
        if out.is_null() {
            return Err(null("out"));
        }
        let net = lift(TrainedNet::load(&path))?;
        *out = Box::into_raw(Box::new(MipnetNet { net }));
        Ok(())
    })
}

/// `net` must come from [`mipnet_net_load`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn mipnet_net_free(net: *mut MipnetNet) {
    if !net.is_null() {
        drop(Box::from_raw(net));
    }
}

/// Forward pass. Writes up to `out_len` outputs and their count to `written`;
/// fails with `BufferTooSmall` (and still sets `written`) when `out_len` is short.
///
/// `x` must point to `n` doubles, `out` to `out_len` doubles, and `written`
/// must be valid.
#[no_mangle]
pub unsafe extern "C" fn mipnet_net_forward(
    net: *const MipnetNet,
    x: *const f64,
    n: usize,
    out: *mut f64,
    out_len: usize,
    written: *mut usize,
) -> MipnetStatus {
    guard(|| {
        let net = net.as_ref().ok_or_else(|| null("net"))?;
        if (x.is_null() && n > 0) || written.is_null() || (out.is_null() && out_len > 0) {
            return Err(null("argument"));
        }
        let input = if n == 0 { &[][..] } else { std::slice::from_raw_parts(x, n) };
        let y = lift(net.net.forward(input))?;
        *written = y.len();
        if y.len() > out_len {
            return Err((MipnetStatus::BufferTooSmall, format!("need {} outputs, have room for {out_len}", y.len())));
        }
        if !y.is_empty() {
            std::slice::from_raw_parts_mut(out, y.len()).copy_from_slice(&y);
        }
        Ok(())
    })
}
