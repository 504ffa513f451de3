use std::fmt::Write as _;

use super::{Assignment, Model, VarKind};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Violation {
    /// Constraint row name, or variable name for bound/integrality failures.
    pub name: String,
    pub label: String,
    pub amount: f64,
}

/// Outcome of checking an assignment against a model.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct AuditReport {
    pub objective: f64,
    pub tol: f64,
    /// Largest violation per constraint label, in first-use order.
    pub max_violation: Vec<(String, f64)>,
    /// Constraints violated by more than `tol`.
    pub violations: Vec<Violation>,
    pub bound_violations: Vec<Violation>,
    pub integrality: Vec<Violation>,
    /// ReLU units whose indicator disagrees with the sign of the
    /// pre-activation (filled by the network-aware audit).
    pub relu_inconsistent: Vec<String>,
}

impl AuditReport {
    pub fn passed(&self) -> bool {
        self.violations.is_empty()
            && self.bound_violations.is_empty()
            && self.integrality.is_empty()
            && self.relu_inconsistent.is_empty()
    }

    pub fn max_violation_of(&self, label: &str) -> Option<f64> {
        self.max_violation.iter().find(|(l, _)| l == label).map(|&(_, v)| v)
    }

    pub fn overall_max_violation(&self) -> f64 {
        self.max_violation.iter().map(|&(_, v)| v).fold(0.0, f64::max)
    }

    /// First failure, phrased for error messages.
    pub fn first_failure(&self) -> Option<String> {
        if let Some(v) = self.violations.first() {
            return Some(format!("constraint {} ({}) violated by {:e}", v.name, v.label, v.amount));
        }
        if let Some(v) = self.bound_violations.first() {
            return Some(format!("variable {} outside bounds by {:e}", v.name, v.amount));
        }
        if let Some(v) = self.integrality.first() {
            return Some(format!("binary {} has fractional value {}", v.name, v.amount));
        }
        self.relu_inconsistent.first().map(|n| format!("ReLU indicator {n} disagrees with pre-activation sign"))
    }

    pub fn render(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "status {}", if self.passed() { "pass" } else { "fail" });
        let _ = writeln!(out, "objective {}", self.objective);
        let _ = writeln!(out, "tolerance {:e}", self.tol);
        for (label, v) in &self.max_violation {
            let _ = writeln!(out, "max_violation {label} {v:e}");
        }
        for v in &self.violations {
            let _ = writeln!(out, "violated {} {} {:e}", v.label, v.name, v.amount);
        }
        for v in &self.bound_violations {
            let _ = writeln!(out, "out_of_bounds {} {:e}", v.name, v.amount);
        }
        for v in &self.integrality {
            let _ = writeln!(out, "fractional {} {}", v.name, v.amount);
        }
        for n in &self.relu_inconsistent {
            let _ = writeln!(out, "relu_inconsistent {n}");
        }
        out
    }
}

/// Checks every bound, integrality requirement, and constraint; reports the
/// maximum violation per label and the objective value.
pub fn evaluate_assignment(model: &Model, asg: &Assignment, tol: f64) -> Result<AuditReport> {
    let x = asg.values();
    if x.len() != model.num_vars() {
        return Err(Error::MissingVariable(model.vars().get(x.len()).map(|v| v.name.clone()).unwrap_or_default()));
    }
    if let Some(i) = x.iter().position(|v| v.is_nan()) {
        return Err(Error::MissingVariable(model.vars()[i].name.clone()));
    }
    let mut report = AuditReport { tol, objective: model.objective_value(x), ..Default::default() };

    for (def, &v) in model.vars().iter().zip(x) {
        let out = (def.lo - v).max(v - def.hi).max(0.0);
        if out > tol {
            report.bound_violations.push(Violation { name: def.name.clone(), label: "bounds".into(), amount: out });
        }
        if def.kind == VarKind::Binary && (v - v.round()).abs() > tol {
            report.integrality.push(Violation { name: def.name.clone(), label: "integrality".into(), amount: v });
        }
    }

    let bump = |label: &str, amount: f64, report: &mut AuditReport| {
        match report.max_violation.iter_mut().find(|(l, _)| l == label) {
            Some(slot) => slot.1 = slot.1.max(amount),
            None => report.max_violation.push((label.to_string(), amount)),
        }
    };
    for c in model.constraints() {
        let amount = c.violation(x);
        bump(c.label, amount, &mut report);
        if amount > tol {
            report.violations.push(Violation { name: c.name(), label: c.label.to_string(), amount });
        }
    }
    for (i, b) in model.bilinear_constraints().iter().enumerate() {
        let amount = b.sense.violation(Model::bilinear_lhs(b, x), b.rhs);
        bump(&b.label, amount, &mut report);
        if amount > tol {
            report.violations.push(Violation { name: format!("{}.b{}", b.label, i), label: b.label.clone(), amount });
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ir::{Sense, VarDef};

    #[test]
    fn feasible_assignment_passes() {
        let mut m = Model::new();
        let a = m.add_variable(VarDef::free("a")).unwrap();
        m.add_constraint("relu_lower", &[(1.0, a)], Sense::Ge, 0.0).unwrap();
        let r = evaluate_assignment(&m, &Assignment::from_values(&m, vec![0.5]).unwrap(), 1e-6).unwrap();
        assert!(r.passed());
        assert!(r.overall_max_violation() <= 1e-6);
    }

    #[test]
    fn violation_reported_under_label() {
        let mut m = Model::new();
        let a = m.add_variable(VarDef::free("a")).unwrap();
        m.add_constraint("relu_lower", &[(1.0, a)], Sense::Ge, 0.0).unwrap();
        let r = evaluate_assignment(&m, &Assignment::from_values(&m, vec![-1.0]).unwrap(), 1e-6).unwrap();
        assert_eq!(r.max_violation_of("relu_lower"), Some(1.0));
        assert_eq!(r.violations.len(), 1);
        assert_eq!(r.violations[0].label, "relu_lower");
    }

    #[test]
    fn zero_assignment_has_zero_objective() {
        let mut m = Model::new();
        let u = m.add_variable(VarDef::nonneg("u[1][0][0]")).unwrap();
        let w = m.add_variable(VarDef::free("W[1][0][0]")).unwrap();
        m.add_objective_linear(0.09, u).unwrap();
        m.add_objective_quadratic(0.005, w, w).unwrap();
        let r = evaluate_assignment(&m, &Assignment::zeros(&m), 1e-6).unwrap();
        assert_eq!(r.objective, 0.0);
    }

    #[test]
    fn missing_value_is_an_error() {
        let mut m = Model::new();
        m.add_variable(VarDef::free("a")).unwrap();
        let asg = Assignment::from_values(&m, vec![f64::NAN]).unwrap();
        assert!(matches!(evaluate_assignment(&m, &asg, 1e-6), Err(Error::MissingVariable(_))));
    }
}
