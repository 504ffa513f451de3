//! Training/verification hyperparameters.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    /// Weights and biases are fixed constants; the program is linear.
    Verify,
    /// Weights are variables; hidden-layer affine maps carry bilinear terms.
    TrainBilinear,
    /// Weights are fixed-point numbers built from binary digits; products
    /// with activations are linearized exactly.
    TrainQuantized,
}

impl FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "verify" => Ok(Mode::Verify),
            "train-bilinear" => Ok(Mode::TrainBilinear),
            "train-quantized" => Ok(Mode::TrainQuantized),
            _ => Err(Error::InvalidHyper(format!("unknown mode `{s}`"))),
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Mode::Verify => "verify",
            Mode::TrainBilinear => "train-bilinear",
            Mode::TrainQuantized => "train-quantized",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Loss {
    Squared,
    Abs,
}

impl FromStr for Loss {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "squared" => Ok(Loss::Squared),
            "abs" => Ok(Loss::Abs),
            _ => Err(Error::InvalidHyper(format!("unknown loss `{s}`"))),
        }
    }
}

/// Fixed-point grid `w = step * k - w_max`, `k in 0..2^bits`,
/// `step = 2 w_max / (2^bits - 1)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuantGrid {
    pub bits: u32,
    pub w_max: f64,
}

impl QuantGrid {
    pub fn step(&self) -> f64 {
        2.0 * self.w_max / ((1u64 << self.bits) - 1) as f64
    }

    pub fn decode(&self, digits: impl IntoIterator<Item = bool>) -> f64 {
        let k: u64 = digits.into_iter().enumerate().map(|(t, d)| u64::from(d) << t).sum();
        self.step() * k as f64 - self.w_max
    }

    pub fn levels(&self) -> u64 {
        1u64 << self.bits
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Hyper {
    pub alpha: f64,
    pub lambda: f64,
    pub beta: f64,
    /// Global box bound on parameters and activations used by the pruning
    /// constraints.
    pub big_m: f64,
    pub mode: Mode,
    pub loss: Loss,
    pub bits: u32,
    pub w_max: f64,
    pub quantize_biases: bool,
}

impl Default for Hyper {
    fn default() -> Self {
        Self {
            alpha: 0.1,
            lambda: 0.9,
            beta: 0.01,
            big_m: 10.0,
            mode: Mode::Verify,
            loss: Loss::Squared,
            bits: 2,
            w_max: 1.0,
            quantize_biases: true,
        }
    }
}

impl Hyper {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidHyper(m));
        if !(0.0..=1.0).contains(&self.lambda) {
            return bad(format!("lambda {} outside [0, 1]", self.lambda));
        }
        if !(self.alpha >= 0.0) || !(self.beta >= 0.0) {
            return bad("alpha and beta must be nonnegative".into());
        }
        if !(self.big_m > 0.0) || !self.big_m.is_finite() {
            return bad(format!("big-M {} must be positive and finite", self.big_m));
        }
        if self.bits == 0 || self.bits > 30 {
            return bad(format!("bits {} outside 1..=30", self.bits));
        }
        if !(self.w_max > 0.0) || !self.w_max.is_finite() {
            return bad(format!("w_max {} must be positive", self.w_max));
        }
        Ok(())
    }

    pub fn grid(&self) -> QuantGrid {
        QuantGrid { bits: self.bits, w_max: self.w_max }
    }

    /// Coefficient of the linearized l1 term.
    pub fn l1_weight(&self) -> f64 {
        self.alpha * self.lambda
    }

    /// Coefficient of `W^2` in the objective.
    pub fn l2_weight(&self) -> f64 {
        0.5 * self.alpha * (1.0 - self.lambda)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_endpoints() {
        let g = QuantGrid { bits: 3, w_max: 1.0 };
        assert!((g.decode([true, true, true]) - 1.0).abs() < 1e-15);
        assert_eq!(g.decode([false, false, false]), -1.0);
    }

    #[test]
    fn validation() {
        assert!(Hyper::default().validate().is_ok());
        assert!(Hyper { lambda: 1.5, ..Hyper::default() }.validate().is_err());
        assert!(Hyper { bits: 0, ..Hyper::default() }.validate().is_err());
    }
}
