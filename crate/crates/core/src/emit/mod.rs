//! Solver exchange formats: LP and MPS writers with matching readers,
//! solution files, and model statistics.

mod lp;
mod mps;
mod solution;
mod stats;

use std::path::Path;

use crate::error::{Error, Result};

pub use lp::{lp_string, parse_lp, read_lp, write_lp};
pub use mps::{mps_string, parse_mps, read_mps, write_mps};
pub use solution::{parse_solution, read_solution, solution_string, write_solution, SolutionFile};
pub use stats::{forecast_stats, model_stats, StatsReport};

/// Shortest decimal that parses back to the same `f64`; never uses an
/// exponent. Negative zero prints as `0`.
pub fn fmt_num(v: f64) -> String {
    if v == 0.0 {
        "0".into()
    } else if v == f64::INFINITY {
        "+inf".into()
    } else if v == f64::NEG_INFINITY {
        "-inf".into()
    } else {
        format!("{v}")
    }
}

fn parse_num(tok: &str, path: &str, line: usize) -> Result<f64> {
    match tok.to_ascii_lowercase().as_str() {
        "inf" | "+inf" | "infinity" | "+infinity" => return Ok(f64::INFINITY),
        "-inf" | "-infinity" => return Ok(f64::NEG_INFINITY),
        _ => {}
    }
    tok.parse().map_err(|_| Error::Parse { path: path.into(), line, msg: format!("expected a number, found `{tok}`") })
}

fn write_file(path: &Path, text: &str) -> Result<usize> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))?;
    Ok(text.len())
}

fn read_file(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

/// Splits a row name `label.ordinal` into its label.
fn label_of(row: &str) -> &str {
    match row.rsplit_once('.') {
        Some((label, ord)) if !label.is_empty() && ord.chars().all(|c| c.is_ascii_digit()) => label,
        _ => row,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn numbers_round_trip() {
        for v in [0.1, -2.5, 1.0 / 3.0, 1e-7, 123456789.0, 0.09, f64::MIN_POSITIVE, 9.87654321e12] {
            let s = fmt_num(v);
            assert!(!s.contains('e'), "{s}");
            assert_eq!(s.parse::<f64>().unwrap(), v);
        }
        assert_eq!(fmt_num(-0.0), "0");
        assert_eq!(fmt_num(3.0), "3");
    }
}
