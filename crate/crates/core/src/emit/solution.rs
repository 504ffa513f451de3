//! Solution files: one `name value` pair per line. Lines starting with `#`
//! are comments, except the optional headers `# Objective value = v` and
//! `# MIP gap = g` (gap as a fraction), which are recorded.

use std::fmt::Write as _;
use std::path::Path;

use super::{fmt_num, parse_num, read_file, write_file};
use crate::error::{Error, Result};
use crate::ir::{Assignment, Model, VarKind};

/// Binaries within this distance of 0 or 1 are rounded.
const BINARY_TOL: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct SolutionFile {
    pub assignment: Assignment,
    pub objective: Option<f64>,
    pub gap: Option<f64>,
}

fn header_value(comment: &str, keys: &[&str]) -> Option<String> {
    let lower = comment.to_ascii_lowercase();
    let (lhs, rhs) = lower.split_once('=')?;
    let lhs = lhs.trim();
    keys.iter().any(|k| lhs == *k).then(|| rhs.trim().to_string())
}

/// Reads a solution for `model`. Variables absent from the file are an error
/// unless `allow_missing`, in which case they default to 0.
pub fn parse_solution(model: &Model, text: &str, allow_missing: bool) -> Result<SolutionFile> {
    parse_named(model, text, allow_missing, "<solution>")
}

pub fn read_solution(model: &Model, path: impl AsRef<Path>, allow_missing: bool) -> Result<SolutionFile> {
    let path = path.as_ref();
    parse_named(model, &read_file(path)?, allow_missing, &path.display().to_string())
}

fn parse_named(model: &Model, text: &str, allow_missing: bool, path: &str) -> Result<SolutionFile> {
    let mut values = vec![f64::NAN; model.num_vars()];
    let (mut objective, mut gap) = (None, None);
    for (i, raw) in text.lines().enumerate() {
        let line_no = i + 1;
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        if let Some(comment) = line.strip_prefix('#') {
            if let Some(v) = header_value(comment, &["objective value", "objective"]) {
                objective = Some(parse_num(&v, path, line_no)?);
            } else if let Some(v) = header_value(comment, &["mip gap", "gap"]) {
                gap = Some(parse_num(&v, path, line_no)?);
            }
            continue;
        }
        let [name, value] = line.split_whitespace().collect::<Vec<_>>()[..] else {
            return Err(Error::Parse { path: path.into(), line: line_no, msg: format!("expected `name value`, found `{line}`") });
        };
        let v = model.lookup(name).ok_or_else(|| Error::UnknownVariable(name.to_string()))?;
        let mut x = parse_num(value, path, line_no)?;
        if !values[v.index()].is_nan() {
            return Err(Error::Parse { path: path.into(), line: line_no, msg: format!("`{name}` assigned twice") });
        }
        if model.var(v).kind == VarKind::Binary {
            let r = x.round();
            if (r != 0.0 && r != 1.0) || (x - r).abs() > BINARY_TOL {
                return Err(Error::NonIntegralBinary { name: name.to_string(), value: x });
            }
            x = r;
        }
        values[v.index()] = x;
    }
    let missing: Vec<usize> = (0..values.len()).filter(|&j| values[j].is_nan()).collect();
    if !missing.is_empty() {
        if !allow_missing {
            return Err(Error::IncompleteSolution { count: missing.len(), first: model.vars()[missing[0]].name.clone() });
        }
        for j in missing {
            values[j] = 0.0;
        }
    }
    Ok(SolutionFile { assignment: Assignment::from_values(model, values)?, objective, gap })
}

/// Renders a solution in the format read by [`parse_solution`].
pub fn solution_string(model: &Model, asg: &Assignment, objective: Option<f64>, gap: Option<f64>) -> String {
    let mut out = String::new();
    if let Some(o) = objective {
        let _ = writeln!(out, "# Objective value = {}", fmt_num(o));
    }
    if let Some(g) = gap {
        let _ = writeln!(out, "# MIP gap = {}", fmt_num(g));
    }
    for (def, &v) in model.vars().iter().zip(asg.values()) {
        let _ = writeln!(out, "{} {}", def.name, fmt_num(v));
    }
    out
}

pub fn write_solution(model: &Model, asg: &Assignment, objective: Option<f64>, gap: Option<f64>, path: impl AsRef<Path>) -> Result<usize> {
    write_file(path.as_ref(), &solution_string(model, asg, objective, gap))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ir::VarDef;

    fn one(kind_binary: bool) -> Model {
        let mut m = Model::new();
        m.add_variable(if kind_binary { VarDef::binary("x") } else { VarDef::free("x") }).unwrap();
        m.freeze();
        m
    }

    #[test]
    fn single_value() {
        let s = parse_solution(&one(false), "x 1.0\n", false).unwrap();
        assert_eq!(s.assignment.values(), &[1.0]);
        assert_eq!((s.objective, s.gap), (None, None));
    }

    #[test]
    fn unknown_name() {
        assert!(matches!(parse_solution(&one(false), "y 1\n", false), Err(Error::UnknownVariable(n)) if n == "y"));
    }

    #[test]
    fn near_integral_binary_is_rounded() {
        let s = parse_solution(&one(true), "x 0.9999997\n", false).unwrap();
        assert_eq!(s.assignment.values(), &[1.0]);
        assert!(matches!(parse_solution(&one(true), "x 0.99\n", false), Err(Error::NonIntegralBinary { .. })));
    }

    #[test]
    fn headers_and_missing() {
        let mut m = Model::new();
        m.add_variable(VarDef::free("x")).unwrap();
        m.add_variable(VarDef::free("y")).unwrap();
        m.freeze();
        let text = "# Objective value = 2.5\n# MIP gap = 0.04\nx 1\n";
        assert!(matches!(parse_solution(&m, text, false), Err(Error::IncompleteSolution { count: 1, .. })));
        let s = parse_solution(&m, text, true).unwrap();
        assert_eq!(s.assignment.values(), &[1.0, 0.0]);
        assert_eq!((s.objective, s.gap), (Some(2.5), Some(0.04)));
        let again = parse_solution(&m, &solution_string(&m, &s.assignment, s.objective, s.gap), false).unwrap();
        assert_eq!(again, s);
    }
}
