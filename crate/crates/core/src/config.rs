//! Run configuration read from a TOML file. Relative paths resolve against
//! the file's directory.

use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::builder::BuildOptions;
use crate::error::{Error, Result};
use crate::hyper::Hyper;

/// Environment variable holding the default external solver template.
pub const SOLVER_ENV: &str = "MIPNET_SOLVER";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Engine {
    /// Exhaustive enumeration.
    Oracle,
    /// Depth-first branch and bound.
    Bnb,
    /// A solver run as a subprocess on the emitted model file.
    External,
}

impl FromStr for Engine {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "oracle" => Ok(Engine::Oracle),
            "bnb" => Ok(Engine::Bnb),
            "external" => Ok(Engine::External),
            _ => Err(Error::Config(format!("unknown engine `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Emit {
    Lp,
    Mps,
}

impl Emit {
    pub fn extension(self) -> &'static str {
        match self {
            Emit::Lp => "lp",
            Emit::Mps => "mps",
        }
    }
}

impl FromStr for Emit {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "lp" => Ok(Emit::Lp),
            "mps" => Ok(Emit::Mps),
            _ => Err(Error::Config(format!("unknown emission format `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolveConfig {
    pub engine: Engine,
    pub emit: Emit,
    /// Argv template for the external engine, split on whitespace. Must name
    /// `{model}` and `{solution}`; `{tolerance}`, `{timeout}` and `{seed}`
    /// are substituted when present.
    pub external: Option<String>,
    /// Relative optimality tolerance.
    pub tolerance: f64,
    /// Wall-clock limit in seconds.
    pub timeout: Option<f64>,
    pub limit_bits: usize,
    pub node_budget: Option<u64>,
    /// Variables absent from a solution file default to zero.
    pub allow_missing: bool,
    pub seed: u64,
    pub audit_tol: f64,
}

impl Default for SolveConfig {
    fn default() -> Self {
        Self {
            engine: Engine::Oracle,
            emit: Emit::Lp,
            external: None,
            tolerance: 0.0,
            timeout: None,
            limit_bits: crate::oracle::DEFAULT_LIMIT_BITS,
            node_budget: None,
            allow_missing: false,
            seed: 0,
            audit_tol: crate::ir::FEAS_TOL,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub name: String,
    pub data: PathBuf,
    /// Label column of the CSV.
    pub label: String,
    /// Architecture JSON.
    pub arch: PathBuf,
    pub out_dir: PathBuf,
    /// Index-list split file; without one, `test_fraction` of the samples are
    /// held out by a seeded shuffle, or none when it is 0.
    pub split: Option<PathBuf>,
    pub test_fraction: f64,
    /// Network JSON, required in verify mode.
    pub net: Option<PathBuf>,
    pub standardize: bool,
    pub one_hot: bool,
    pub hyper: Hyper,
    pub build: BuildOptions,
    pub solve: SolveConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            name: "run".into(),
            data: PathBuf::new(),
            label: "label".into(),
            arch: PathBuf::new(),
            out_dir: PathBuf::from("out"),
            split: None,
            test_fraction: 0.0,
            net: None,
            standardize: false,
            one_hot: false,
            hyper: Hyper::default(),
            build: BuildOptions::default(),
            solve: SolveConfig::default(),
        }
    }
}

fn rebase(base: &Path, p: &mut PathBuf) {
    if !p.as_os_str().is_empty() && p.is_relative() {
        *p = base.join(&*p);
    }
}

impl RunConfig {
    pub fn parse(text: &str, base: &Path) -> Result<Self> {
        let mut cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        for p in [&mut cfg.data, &mut cfg.arch, &mut cfg.out_dir] {
            rebase(base, p);
        }
        for p in [cfg.split.as_mut(), cfg.net.as_mut()].into_iter().flatten() {
            rebase(base, p);
        }
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, path.parent().unwrap_or(Path::new(".")))
    }

    /// External solver template from the config or the environment.
    pub fn solver_template(&self) -> Option<String> {
        self.solve.external.clone().or_else(|| std::env::var(SOLVER_ENV).ok())
    }

    /// Checks everything that can be checked before touching any file.
    pub fn validate(&self) -> Result<()> {
        self.hyper.validate()?;
        if self.data.as_os_str().is_empty() || self.arch.as_os_str().is_empty() {
            return Err(Error::Config("`data` and `arch` are required".into()));
        }
        if !(0.0..1.0).contains(&self.test_fraction) {
            return Err(Error::Config(format!("test_fraction {} outside [0, 1)", self.test_fraction)));
        }
        if !(self.solve.tolerance >= 0.0) {
            return Err(Error::Config("tolerance must be nonnegative".into()));
        }
        if self.solve.timeout.is_some_and(|t| !(t > 0.0)) {
            return Err(Error::Config("timeout must be positive".into()));
        }
        if self.solve.engine == Engine::External {
            let t = self.solver_template().ok_or_else(|| {
                Error::Config(format!("external engine needs `solve.external` or {SOLVER_ENV}"))
            })?;
            for key in ["{model}", "{solution}"] {
                if !t.contains(key) {
                    return Err(Error::Config(format!("external template lacks `{key}`")));
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hyper::Mode;

    #[test]
    fn sections_and_paths() {
        let text = r#"
            data = "xor.csv"
            label = "y"
            arch = "/abs/arch.json"
            [hyper]
            mode = "train-quantized"
            bits = 3
            [solve]
            engine = "bnb"
            emit = "mps"
        "#;
        let c = RunConfig::parse(text, Path::new("/cfg")).unwrap();
        assert_eq!(c.data, PathBuf::from("/cfg/xor.csv"));
        assert_eq!(c.arch, PathBuf::from("/abs/arch.json"));
        assert_eq!(c.out_dir, PathBuf::from("/cfg/out"));
        assert_eq!((c.hyper.mode, c.hyper.bits, c.hyper.alpha), (Mode::TrainQuantized, 3, 0.1));
        assert_eq!((c.solve.engine, c.solve.emit), (Engine::Bnb, Emit::Mps));
        c.validate().unwrap();
    }

    #[test]
    fn unknown_key_rejected() {
        assert!(matches!(RunConfig::parse("dta = 1", Path::new(".")), Err(Error::Config(_))));
    }

    #[test]
    fn external_template_needs_placeholders() {
        let text = "data = \"d\"\narch = \"a\"\n[solve]\nengine = \"external\"\nexternal = \"solver {model} out.sol\"\n";
        let c = RunConfig::parse(text, Path::new(".")).unwrap();
        assert!(matches!(c.validate(), Err(Error::Config(m)) if m.contains("{solution}")));
    }
}
