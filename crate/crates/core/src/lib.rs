//! Mixed-integer formulations for training and verifying small ReLU networks.

pub mod arch;
pub mod bounds;
pub mod builder;
pub mod config;
pub mod data;
pub mod emit;
pub mod error;
pub mod hyper;
pub mod ir;
pub mod oracle;
pub mod pipeline;
pub mod recon;

pub use error::{Error, Result};
