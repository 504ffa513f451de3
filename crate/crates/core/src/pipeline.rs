//! Build, solve, audit, and evaluate, as driven by a [`RunConfig`].

use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use rand::seq::SliceRandom;
use rand::SeedableRng;

use crate::arch::ArchSpec;
use crate::bounds::{propagate_bounds, Interval, ParamBox};
use crate::builder::{build_cnn, build_dense, Build, BuildOptions};
use crate::config::{Emit, Engine, RunConfig};
use crate::data::{load_dataset, one_hot_encode, Dataset, Schema, Split, Standardizer};
use crate::emit::{read_solution, write_lp, write_mps, write_solution};
use crate::error::{Error, Result};
use crate::hyper::Mode;
use crate::ir::{AuditReport, Assignment};
use crate::oracle::{branch_and_bound_with, enumerate_exact, BnbLimits, Fixings};
use crate::recon::{audit, canonicalize, direct_objective, metrics, reconstruct, render_kv, MetricsReport, TrainedNet};

/// Data, architecture, and (in verify mode) the network, ready to build.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub config: RunConfig,
    /// All samples after preprocessing.
    pub data: Dataset,
    pub split: Split,
    pub train: Dataset,
    pub arch: ArchSpec,
    pub net: Option<TrainedNet>,
}

impl Prepared {
    /// Samples used for evaluation: the test split, or the training samples
    /// when nothing is held out.
    pub fn eval_indices(&self) -> &[usize] {
        if self.split.test.is_empty() {
            &self.split.train
        } else {
            &self.split.test
        }
    }
}

pub fn load_arch(path: &Path) -> Result<ArchSpec> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}

fn make_split(cfg: &RunConfig, n: usize) -> Result<Split> {
    if let Some(p) = &cfg.split {
        let s = Split::load(p)?;
        if let Some(&i) = s.train.iter().chain(&s.test).find(|&&i| i >= n) {
            return Err(Error::OutOfRange(format!("split index {i} with {n} samples")));
        }
        return Ok(s);
    }
    let mut idx: Vec<usize> = (0..n).collect();
    let held = (cfg.test_fraction * n as f64).round() as usize;
    if held == 0 {
        return Ok(Split { train: idx, test: Vec::new() });
    }
    idx.shuffle(&mut rand::rngs::StdRng::seed_from_u64(cfg.solve.seed));
    let mut test = idx.split_off(n - held);
    idx.sort_unstable();
    test.sort_unstable();
    Ok(Split { train: idx, test })
}

/// Loads and preprocesses the data, fitting any standardization on the
/// training samples only. Dense networks are canonicalized before a verify
/// build when symmetry breaking is on, since the ordering constraint would
/// otherwise reject them.
pub fn prepare(cfg: &RunConfig) -> Result<Prepared> {
    cfg.validate()?;
    let arch = load_arch(&cfg.arch)?;
    let mut data = load_dataset(&cfg.data, &Schema::new(&cfg.label))?;
    if cfg.one_hot {
        data.targets = one_hot_encode(&data.targets)?;
    }
    let split = make_split(cfg, data.len())?;
    if cfg.standardize {
        let fit = data.subset(&split.train)?;
        data = data.with_standardizer(&Standardizer::fit(&fit.inputs));
    }
    let train = data.subset(&split.train)?;
    let net = match (&cfg.net, cfg.hyper.mode) {
        (Some(p), _) => Some(TrainedNet::load(p)?),
        (None, Mode::Verify) => return Err(Error::Config("verify mode needs `net`".into())),
        (None, _) => None,
    };
    let net = match net {
        Some(TrainedNet::Dense(n)) if cfg.build.symmetry => Some(TrainedNet::Dense(canonicalize(&n))),
        other => other,
    };
    Ok(Prepared { config: cfg.clone(), data, split, train, arch, net })
}

/// Builds the model over the training samples. Interval bounds start from the
/// training data's bounding box.
pub fn build(prep: &Prepared, linear_output: bool) -> Result<Build> {
    let cfg = &prep.config;
    let hyper = &cfg.hyper;
    let opts = BuildOptions { linear_output, ..cfg.build };
    let boxes: Vec<Interval> = prep.train.bounding_box().into_iter().map(|(lo, hi)| Interval::new(lo, hi)).collect();
    let verify_net = if hyper.mode == Mode::Verify { prep.net.as_ref() } else { None };
    let params = match verify_net {
        Some(n) => ParamBox::Fixed(n),
        None => ParamBox::from_hyper(hyper),
    };
    let bounds = propagate_bounds(&prep.arch, &boxes, params)?;
    match (&prep.arch, verify_net) {
        (ArchSpec::Dense(a), Some(TrainedNet::Dense(n))) => Ok(Build::Dense(build_dense(a, &prep.train, hyper, &bounds, Some(n), &opts)?)),
        (ArchSpec::Dense(a), None) => Ok(Build::Dense(build_dense(a, &prep.train, hyper, &bounds, None, &opts)?)),
        (ArchSpec::Conv(a), Some(TrainedNet::Conv(n))) => Ok(Build::Conv(build_cnn(a, &prep.train, hyper, &bounds, Some(n), &opts)?)),
        (ArchSpec::Conv(a), None) => Ok(Build::Conv(build_cnn(a, &prep.train, hyper, &bounds, None, &opts)?)),
        _ => Err(Error::ShapeMismatch("network kind does not match the architecture".into())),
    }
}

pub fn write_model(build: &Build, emit: Emit, path: &Path) -> Result<usize> {
    match emit {
        Emit::Lp => write_lp(build.model(), path),
        Emit::Mps => write_mps(build.model(), path),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolveOutcome {
    pub assignment: Assignment,
    pub objective: f64,
    /// Relative gap, when the engine reports one.
    pub gap: Option<f64>,
}

/// Runs the configured engine. The external engine reads `model_path`, which
/// must already hold the emitted model, and writes `solution_path`.
pub fn solve(build: &Build, cfg: &RunConfig, model_path: &Path, solution_path: &Path) -> Result<SolveOutcome> {
    let s = &cfg.solve;
    match s.engine {
        Engine::Oracle => {
            let e = enumerate_exact(build.exact(), s.limit_bits)?;
            let objective = e.best.objective;
            Ok(SolveOutcome { assignment: e.best.assignment(build.exact())?, objective, gap: Some(0.0) })
        }
        Engine::Bnb => {
            let limits = BnbLimits {
                nodes: s.node_budget.unwrap_or(u64::MAX),
                deadline: s.timeout.map(|t| Instant::now() + Duration::from_secs_f64(t)),
                rel_gap: s.tolerance,
            };
            let fix = Fixings::new(build.exact(), &[])?;
            let r = branch_and_bound_with(build.exact(), &limits, &fix)?;
            let gap = r.gap();
            let best = r.incumbent.ok_or(Error::NoFeasibleAssignment)?;
            Ok(SolveOutcome { assignment: best.assignment(build.exact())?, objective: best.objective, gap })
        }
        Engine::External => {
            let template = cfg.solver_template().ok_or_else(|| Error::Config("no external solver template".into()))?;
            run_external(&template, cfg, model_path, solution_path)?;
            let sol = read_solution(build.model(), solution_path, s.allow_missing)?;
            let objective = build.model().objective_value(sol.assignment.values());
            Ok(SolveOutcome { assignment: sol.assignment, objective, gap: sol.gap })
        }
    }
}

/// Substitutes the placeholders of a whitespace-separated argv template.
pub fn expand_template(template: &str, cfg: &RunConfig, model: &Path, solution: &Path) -> Vec<String> {
    let timeout = cfg.solve.timeout.map_or_else(|| "inf".to_string(), |t| t.to_string());
    template
        .split_whitespace()
        .map(|tok| {
            tok.replace("{model}", &model.display().to_string())
                .replace("{solution}", &solution.display().to_string())
                .replace("{tolerance}", &cfg.solve.tolerance.to_string())
                .replace("{timeout}", &timeout)
                .replace("{seed}", &cfg.solve.seed.to_string())
        })
        .collect()
}

fn run_external(template: &str, cfg: &RunConfig, model: &Path, solution: &Path) -> Result<()> {
    let argv = expand_template(template, cfg, model, solution);
    let (prog, args) = argv.split_first().ok_or_else(|| Error::Config("empty external template".into()))?;
    let status = Command::new(prog).args(args).status().map_err(|e| Error::Subprocess(format!("`{prog}`: {e}")))?;
    if !status.success() {
        return Err(Error::Subprocess(format!("`{prog}` exited with {status}")));
    }
    if !solution.exists() {
        return Err(Error::Subprocess(format!("`{prog}` wrote no solution to {}", solution.display())));
    }
    Ok(())
}

/// Audit report text followed by the status line.
pub fn write_audit(report: &AuditReport, path: &Path) -> Result<()> {
    std::fs::write(path, report.render()).map_err(|e| Error::io(path, e))
}

/// Metrics of a reconstructed network on the evaluation samples, with the
/// objective terms recomputed on the training samples.
pub fn evaluate(prep: &Prepared, net: &TrainedNet, gap: Option<f64>) -> Result<MetricsReport> {
    let mut r = metrics(net, &prep.data, prep.eval_indices(), gap)?;
    r.breakdown = Some(direct_objective(net, &prep.train, &prep.config.hyper)?);
    Ok(r)
}

/// Table text plus key-value lines for one run.
pub fn metrics_text(name: &str, r: &MetricsReport) -> String {
    let table = if r.retained_filters.is_some() { crate::recon::conv_table(r) } else { crate::recon::dense_table(&[(name, r)]) };
    format!("{table}\n{}", render_kv(r))
}

#[derive(Debug, Clone)]
pub struct RunSummary {
    pub objective: f64,
    pub gap: Option<f64>,
    pub metrics: MetricsReport,
    pub net: TrainedNet,
    /// Model, solution, audit, metrics, and network files, in that order.
    pub artifacts: Vec<PathBuf>,
}

pub fn artifact_paths(cfg: &RunConfig) -> [PathBuf; 5] {
    let d = &cfg.out_dir;
    [
        d.join(format!("model.{}", cfg.solve.emit.extension())),
        d.join("solution.txt"),
        d.join("audit.txt"),
        d.join("metrics.txt"),
        d.join("net.json"),
    ]
}

/// Audits `asg` and writes the audit file; on success reconstructs the
/// network and writes the metrics and network files.
pub fn audit_and_evaluate(prep: &Prepared, build: &Build, asg: &Assignment, gap: Option<f64>) -> Result<(TrainedNet, MetricsReport)> {
    let cfg = &prep.config;
    let [_, _, audit_path, metrics_path, net_path] = artifact_paths(cfg);
    let report = audit(build, asg, cfg.solve.audit_tol)?;
    write_audit(&report, &audit_path)?;
    if let Some(why) = report.first_failure() {
        return Err(Error::AuditFailure(why));
    }
    let net = reconstruct(build, asg, cfg.solve.audit_tol)?;
    let m = evaluate(prep, &net, gap)?;
    std::fs::write(&metrics_path, metrics_text(&cfg.name, &m)).map_err(|e| Error::io(&metrics_path, e))?;
    std::fs::write(&net_path, net.to_json()).map_err(|e| Error::io(&net_path, e))?;
    Ok((net, m))
}

/// Build, emit, solve, audit, and evaluate. Fails after writing the audit
/// file when the solution does not pass it.
pub fn run_pipeline(cfg: &RunConfig) -> Result<RunSummary> {
    let prep = prepare(cfg)?;
    std::fs::create_dir_all(&cfg.out_dir).map_err(|e| Error::io(&cfg.out_dir, e))?;
    let b = build(&prep, true)?;
    let paths = artifact_paths(cfg);
    write_model(&b, cfg.solve.emit, &paths[0])?;
    let out = solve(&b, cfg, &paths[0], &paths[1])?;
    if cfg.solve.engine != Engine::External {
        write_solution(b.model(), &out.assignment, Some(out.objective), out.gap, &paths[1])?;
    }
    let (net, metrics) = audit_and_evaluate(&prep, &b, &out.assignment, out.gap)?;
    Ok(RunSummary { objective: out.objective, gap: out.gap, metrics, net, artifacts: paths.to_vec() })
}
