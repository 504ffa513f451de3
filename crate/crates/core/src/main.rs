use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;

use mipnet::config::{Emit, Engine, RunConfig};
use mipnet::emit::{forecast_stats, model_stats, read_solution, write_solution};
use mipnet::hyper::Mode;
use mipnet::pipeline::{self, artifact_paths, audit_and_evaluate, metrics_text};
use mipnet::recon::TrainedNet;
use mipnet::{Error, Result};

#[derive(Parser)]
#[command(name = "mipnet", version, about = "Exact mixed-integer models of ReLU networks")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Build the model and write it as LP or MPS.
    Build(Common),
    /// Build, solve, and write the solution file.
    Solve(Common),
    /// Check a fixed network against the data with the exact oracle.
    Verify {
        #[command(flatten)]
        common: Common,
        /// Network JSON, overriding the config.
        #[arg(long)]
        net: Option<PathBuf>,
    },
    /// Audit a solution file, then reconstruct and score the network.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        solution: PathBuf,
    },
    /// Score a saved network and print the summary table.
    Report {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        net: PathBuf,
        /// Reported optimality gap as a fraction.
        #[arg(long)]
        gap: Option<f64>,
    },
    /// Print model size statistics.
    Stats {
        #[command(flatten)]
        common: Common,
        /// Forecast for this many samples instead of building.
        #[arg(long)]
        forecast: Option<usize>,
    },
    /// Build, solve, audit, and evaluate each config.
    Run {
        #[command(flatten)]
        common: Common,
        /// Further configs run alongside the first.
        #[arg(long = "also")]
        also: Vec<PathBuf>,
    },
}

#[derive(Args, Clone)]
struct Common {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    mode: Option<Mode>,
    #[arg(long)]
    engine: Option<Engine>,
    #[arg(long)]
    emit: Option<Emit>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    beta: Option<f64>,
    #[arg(long = "bigM", alias = "big-m")]
    big_m: Option<f64>,
    #[arg(long)]
    bits: Option<u32>,
    /// Relative optimality tolerance.
    #[arg(long)]
    tolerance: Option<f64>,
    /// Wall-clock limit in seconds.
    #[arg(long)]
    timeout: Option<f64>,
    /// Configs run in parallel.
    #[arg(long, default_value_t = 1)]
    jobs: usize,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out_dir: Option<PathBuf>,
}

impl Common {
    fn apply(&self, mut c: RunConfig) -> RunConfig {
        let h = &mut c.hyper;
        if let Some(v) = self.mode {
            h.mode = v;
        }
        if let Some(v) = self.alpha {
            h.alpha = v;
        }
        if let Some(v) = self.lambda {
            h.lambda = v;
        }
        if let Some(v) = self.beta {
            h.beta = v;
        }
        if let Some(v) = self.big_m {
            h.big_m = v;
        }
        if let Some(v) = self.bits {
            h.bits = v;
        }
        let s = &mut c.solve;
        if let Some(v) = self.engine {
            s.engine = v;
        }
        if let Some(v) = self.emit {
            s.emit = v;
        }
        if let Some(v) = self.tolerance {
            s.tolerance = v;
        }
        if let Some(v) = self.timeout {
            s.timeout = Some(v);
        }
        if let Some(v) = self.seed {
            s.seed = v;
        }
        if let Some(v) = &self.out_dir {
            c.out_dir = v.clone();
        }
        c
    }

    fn load(&self) -> Result<RunConfig> {
        self.load_path(&self.config)
    }

    fn load_path(&self, path: &PathBuf) -> Result<RunConfig> {
        let c = self.apply(RunConfig::load(path)?);
        c.validate()?;
        Ok(c)
    }
}

fn out_dir(cfg: &RunConfig) -> Result<()> {
    std::fs::create_dir_all(&cfg.out_dir).map_err(|e| Error::Io { path: cfg.out_dir.clone(), source: e })
}

/// Timing goes to stderr behind a marker so artifacts stay reproducible.
fn timing(what: &str, start: Instant) {
    eprintln!("#timing {what} {:.3}s", start.elapsed().as_secs_f64());
}

fn run(cmd: Cmd) -> Result<()> {
    match cmd {
        Cmd::Build(c) => {
            let cfg = c.load()?;
            out_dir(&cfg)?;
            let t = Instant::now();
            let b = pipeline::build(&pipeline::prepare(&cfg)?, true)?;
            timing("build", t);
            let path = &artifact_paths(&cfg)[0];
            let bytes = pipeline::write_model(&b, cfg.solve.emit, path)?;
            println!("wrote {} ({bytes} bytes)", path.display());
        }
        Cmd::Solve(c) => {
            let cfg = c.load()?;
            out_dir(&cfg)?;
            let prep = pipeline::prepare(&cfg)?;
            let b = pipeline::build(&prep, true)?;
            let [model, solution, ..] = artifact_paths(&cfg);
            pipeline::write_model(&b, cfg.solve.emit, &model)?;
            let t = Instant::now();
            let out = pipeline::solve(&b, &cfg, &model, &solution)?;
            timing("solve", t);
            if cfg.solve.engine != Engine::External {
                write_solution(b.model(), &out.assignment, Some(out.objective), out.gap, &solution)?;
            }
            println!("objective {}", out.objective);
            println!("wrote {}", solution.display());
        }
        Cmd::Verify { common, net } => {
            let mut cfg = common.load()?;
            cfg.hyper.mode = Mode::Verify;
            if cfg.solve.engine == Engine::External {
                cfg.solve.engine = Engine::Oracle;
            }
            if net.is_some() {
                cfg.net = net;
            }
            out_dir(&cfg)?;
            let prep = pipeline::prepare(&cfg)?;
            let b = pipeline::build(&prep, true)?;
            let [model, solution, ..] = artifact_paths(&cfg);
            pipeline::write_model(&b, cfg.solve.emit, &model)?;
            let out = pipeline::solve(&b, &cfg, &model, &solution)?;
            write_solution(b.model(), &out.assignment, Some(out.objective), out.gap, &solution)?;
            let (_, m) = audit_and_evaluate(&prep, &b, &out.assignment, out.gap)?;
            println!("verified: objective {}", out.objective);
            print!("{}", metrics_text(&cfg.name, &m));
        }
        Cmd::Eval { common, solution } => {
            let cfg = common.load()?;
            out_dir(&cfg)?;
            let prep = pipeline::prepare(&cfg)?;
            let b = pipeline::build(&prep, false)?;
            let sol = read_solution(b.model(), &solution, cfg.solve.allow_missing)?;
            let (_, m) = audit_and_evaluate(&prep, &b, &sol.assignment, sol.gap)?;
            print!("{}", metrics_text(&cfg.name, &m));
        }
        Cmd::Report { common, net, gap } => {
            let cfg = common.load()?;
            let prep = pipeline::prepare(&cfg)?;
            let m = pipeline::evaluate(&prep, &TrainedNet::load(&net)?, gap)?;
            print!("{}", metrics_text(&cfg.name, &m));
        }
        Cmd::Stats { common, forecast } => {
            let cfg = common.load()?;
            let s = match forecast {
                Some(n) => forecast_stats(&pipeline::load_arch(&cfg.arch)?, n, &cfg.hyper, &cfg.build)?,
                None => model_stats(pipeline::build(&pipeline::prepare(&cfg)?, false)?.model()),
            };
            print!("{}", s.render());
        }
        Cmd::Run { common, also } => {
            let mut paths = vec![common.config.clone()];
            paths.extend(also);
            let configs = paths.iter().map(|p| common.load_path(p)).collect::<Result<Vec<_>>>()?;
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(common.jobs.max(1))
                .build()
                .map_err(|e| Error::Config(e.to_string()))?;
            let results: Vec<Result<(String, f64)>> = pool.install(|| {
                configs
                    .par_iter()
                    .map(|cfg| {
                        let t = Instant::now();
                        let r = pipeline::run_pipeline(cfg)?;
                        timing(&cfg.name, t);
                        Ok((cfg.name.clone(), r.objective))
                    })
                    .collect()
            });
            let mut first_err = None;
            for r in results {
                match r {
                    Ok((name, obj)) => println!("{name}: objective {obj}"),
                    Err(e) => {
                        eprintln!("error: {e}");
                        first_err.get_or_insert(e);
                    }
                }
            }
            if let Some(e) = first_err {
                return Err(e);
            }
        }
    }
    Ok(())
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::AuditFailure(_) => 3,
        Error::NoFeasibleAssignment => 4,
        Error::Config(_) => 2,
        _ => 1,
    }
}

fn main() -> ExitCode {
    match run(Cli::parse().cmd) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
