//! Model builders for dense and convolutional networks.

pub mod cnn;
pub mod dense;
pub mod encode;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hyper::{Hyper, Loss, Mode};
use crate::ir::{Model, VarRef};

pub use cnn::{build_cnn, flatten_index, ConvBuild};
pub use dense::{build_dense, DenseBuild};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BuildOptions {
    /// Use per-unit (per-channel) intervals instead of the collapsed layer interval.
    pub per_unit_bounds: bool,
    pub symmetry: bool,
    /// Use the global M instead of the layer's activation bound in pooling.
    pub pool_global_m: bool,
    /// The model is headed for an LP or MPS file, so bilinear modes are rejected up front.
    #[serde(skip)]
    pub linear_output: bool,
}

impl Default for BuildOptions {
    fn default() -> Self {
        Self { per_unit_bounds: false, symmetry: true, pool_global_m: false, linear_output: false }
    }
}

/// Result of bounding a partial binary assignment.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Bound {
    /// No completion of the prefix is feasible.
    Infeasible,
    /// Every feasible completion has at least this objective.
    AtLeast(f64),
}

/// What the exact oracle needs from a built model. Once all binaries are
/// fixed the continuous variables are determined, so the search runs over
/// binaries only.
pub trait ExactProblem: Sync {
    fn model(&self) -> &Model;

    /// Binaries in the order the search fixes them.
    fn branch_order(&self) -> &[VarRef];

    /// Errors when some continuous variable is not a function of the binaries.
    fn check_exact(&self) -> Result<()>;

    /// Full variable vector for a complete binary vector in branch order.
    fn complete(&self, bits: &[bool]) -> Vec<f64>;

    fn lower_bound(&self, prefix: &[bool]) -> Bound;
}

/// Either kind of built model.
#[derive(Debug)]
pub enum Build {
    Dense(DenseBuild),
    Conv(ConvBuild),
}

impl Build {
    pub fn model(&self) -> &Model {
        match self {
            Build::Dense(b) => &b.model,
            Build::Conv(b) => &b.model,
        }
    }

    pub fn hyper(&self) -> &Hyper {
        match self {
            Build::Dense(b) => &b.hyper,
            Build::Conv(b) => &b.hyper,
        }
    }

    pub fn exact(&self) -> &dyn ExactProblem {
        match self {
            Build::Dense(b) => b,
            Build::Conv(b) => b,
        }
    }
}

fn check_mode(hyper: &Hyper, opts: &BuildOptions) -> Result<()> {
    hyper.validate()?;
    if hyper.mode == Mode::TrainBilinear && opts.linear_output {
        return Err(Error::ModeUnsupported(
            "train-bilinear produces bilinear constraints that LP and MPS files cannot hold; use train-quantized".into(),
        ));
    }
    Ok(())
}

fn check_exact_mode(hyper: &Hyper) -> Result<()> {
    match hyper.mode {
        Mode::Verify => Ok(()),
        Mode::TrainQuantized if hyper.quantize_biases => Ok(()),
        Mode::TrainQuantized => Err(Error::ModeUnsupported("exact search needs quantized biases".into())),
        Mode::TrainBilinear => Err(Error::ModeUnsupported("exact search needs fixed or quantized weights".into())),
    }
}

fn sample_loss(loss: Loss, out: &[f64], target: &[f64]) -> f64 {
    out.iter()
        .zip(target)
        .map(|(o, t)| match loss {
            Loss::Squared => (o - t) * (o - t),
            Loss::Abs => (o - t).abs(),
        })
        .sum()
}

/// Maps variable index to its position in the branch order.
fn branch_positions(model: &Model, branch: &[VarRef]) -> Vec<u32> {
    let mut pos = vec![u32::MAX; model.num_vars()];
    for (p, v) in branch.iter().enumerate() {
        pos[v.index()] = p as u32;
    }
    pos
}

/// Value of binary `v` under `bits`, if fixed.
#[inline]
fn bit_of(pos: &[u32], v: VarRef, bits: &[bool]) -> Option<bool> {
    bits.get(pos[v.index()] as usize).copied()
}

/// Slightly deflated bound so rounding never prunes a tie.
fn deflate(v: f64) -> f64 {
    v - 1e-12 * v.abs().max(1.0)
}
