//! Solver-agnostic mixed-integer program: typed variables with bounds, linear
//! constraints, an optional list of bilinear constraints, and a quadratic
//! objective.
//!
//! Storage is append-only. Once [`Model::freeze`] is called the model is
//! immutable and may be shared across threads.

mod audit;

use std::collections::HashMap;
use std::fmt;
use std::sync::atomic::{AtomicU32, Ordering};

pub use audit::{evaluate_assignment, AuditReport, Violation};

use crate::error::{Error, Result};

/// Absolute feasibility tolerance used throughout.
pub const FEAS_TOL: f64 = 1e-6;

static NEXT_MODEL_ID: AtomicU32 = AtomicU32::new(1);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum VarKind {
    Continuous,
    Binary,
}

#[derive(Debug, Clone, PartialEq)]
pub struct VarDef {
    pub name: String,
    pub kind: VarKind,
    pub lo: f64,
    pub hi: f64,
}

impl VarDef {
    pub fn binary(name: impl Into<String>) -> Self {
        Self { name: name.into(), kind: VarKind::Binary, lo: 0.0, hi: 1.0 }
    }

    pub fn continuous(name: impl Into<String>, lo: f64, hi: f64) -> Self {
        Self { name: name.into(), kind: VarKind::Continuous, lo, hi }
    }

    pub fn free(name: impl Into<String>) -> Self {
        Self::continuous(name, f64::NEG_INFINITY, f64::INFINITY)
    }

    pub fn nonneg(name: impl Into<String>) -> Self {
        Self::continuous(name, 0.0, f64::INFINITY)
    }

    pub fn fixed(name: impl Into<String>, value: f64) -> Self {
        Self::continuous(name, value, value)
    }
}

/// Handle to a variable of one specific model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct VarRef {
    model: u32,
    index: u32,
}

impl VarRef {
    pub fn index(self) -> usize {
        self.index as usize
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Sense {
    Le,
    Eq,
    Ge,
}

impl Sense {
    /// Amount by which `lhs (sense) rhs` is violated; zero when satisfied.
    pub fn violation(self, lhs: f64, rhs: f64) -> f64 {
        match self {
            Sense::Le => (lhs - rhs).max(0.0),
            Sense::Ge => (rhs - lhs).max(0.0),
            Sense::Eq => (lhs - rhs).abs(),
        }
    }
}

impl fmt::Display for Sense {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Sense::Le => "<=",
            Sense::Eq => "=",
            Sense::Ge => ">=",
        })
    }
}

/// A linear constraint as supplied by callers. Duplicate variables are merged
/// on insertion.
#[derive(Debug, Clone, PartialEq)]
pub struct LinCon {
    pub terms: Vec<(f64, VarRef)>,
    pub sense: Sense,
    pub rhs: f64,
    pub label: String,
}

impl LinCon {
    pub fn new(label: impl Into<String>, terms: Vec<(f64, VarRef)>, sense: Sense, rhs: f64) -> Self {
        Self { terms, sense, rhs, label: label.into() }
    }
}

/// Constraint carrying products of two variables. Only produced by the
/// bilinear training mode; the LP and MPS writers reject these.
#[derive(Debug, Clone, PartialEq)]
pub struct BilinCon {
    pub linear: Vec<(f64, VarRef)>,
    pub bilinear: Vec<(f64, VarRef, VarRef)>,
    pub sense: Sense,
    pub rhs: f64,
    pub label: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConRef(u32);

impl ConRef {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

#[derive(Debug, Clone, PartialEq)]
struct Row {
    start: u32,
    end: u32,
    sense: Sense,
    rhs: f64,
    label: u16,
    ordinal: u32,
}

/// Borrowed view of one stored linear constraint.
#[derive(Debug, Clone, Copy)]
pub struct ConstraintView<'a> {
    pub vars: &'a [u32],
    pub coefs: &'a [f64],
    pub sense: Sense,
    pub rhs: f64,
    pub label: &'a str,
    pub ordinal: u32,
}

impl ConstraintView<'_> {
    pub fn lhs(&self, values: &[f64]) -> f64 {
        self.vars.iter().zip(self.coefs).map(|(&v, &c)| c * values[v as usize]).sum()
    }

    pub fn violation(&self, values: &[f64]) -> f64 {
        self.sense.violation(self.lhs(values), self.rhs)
    }

    /// Deterministic row name: `<label>.<ordinal within label>`.
    pub fn name(&self) -> String {
        format!("{}.{}", self.label, self.ordinal)
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Objective {
    pub linear: Vec<(f64, VarRef)>,
    /// Products `c * x * y` with `name(x) <= name(y)`.
    pub quadratic: Vec<(f64, VarRef, VarRef)>,
    pub constant: f64,
}

#[derive(Debug, Clone)]
pub struct Model {
    id: u32,
    frozen: bool,
    vars: Vec<VarDef>,
    by_name: HashMap<String, u32>,
    term_vars: Vec<u32>,
    term_coefs: Vec<f64>,
    rows: Vec<Row>,
    labels: Vec<String>,
    label_ids: HashMap<String, u16>,
    label_counts: Vec<u32>,
    bilinear: Vec<BilinCon>,
    objective: Objective,
    obj_lin_index: HashMap<u32, usize>,
    obj_quad_index: HashMap<(u32, u32), usize>,
}

impl Default for Model {
    fn default() -> Self {
        Self::new()
    }
}

impl PartialEq for Model {
    /// Structural equality: variables, constraints, and objective. Model
    /// identity is ignored.
    fn eq(&self, other: &Self) -> bool {
        if self.vars != other.vars || self.rows.len() != other.rows.len() {
            return false;
        }
        let same_rows = self.constraints().zip(other.constraints()).all(|(a, b)| {
            a.vars == b.vars && a.coefs == b.coefs && a.sense == b.sense && a.rhs == b.rhs && a.label == b.label
        });
        let strip = |o: &Objective| {
            (
                o.linear.iter().map(|&(c, v)| (c, v.index)).collect::<Vec<_>>(),
                o.quadratic.iter().map(|&(c, a, b)| (c, a.index, b.index)).collect::<Vec<_>>(),
                o.constant,
            )
        };
        let strip_bil = |b: &BilinCon| {
            (
                b.linear.iter().map(|&(c, v)| (c, v.index)).collect::<Vec<_>>(),
                b.bilinear.iter().map(|&(c, x, y)| (c, x.index, y.index)).collect::<Vec<_>>(),
                b.sense,
                b.rhs,
                b.label.clone(),
            )
        };
        same_rows
            && strip(&self.objective) == strip(&other.objective)
            && self.bilinear.len() == other.bilinear.len()
            && self.bilinear.iter().zip(&other.bilinear).all(|(a, b)| strip_bil(a) == strip_bil(b))
    }
}

impl Model {
    pub fn new() -> Self {
        Self {
            id: NEXT_MODEL_ID.fetch_add(1, Ordering::Relaxed),
            frozen: false,
            vars: Vec::new(),
            by_name: HashMap::new(),
            term_vars: Vec::new(),
            term_coefs: Vec::new(),
            rows: Vec::new(),
            labels: Vec::new(),
            label_ids: HashMap::new(),
            label_counts: Vec::new(),
            bilinear: Vec::new(),
            objective: Objective::default(),
            obj_lin_index: HashMap::new(),
            obj_quad_index: HashMap::new(),
        }
    }

    /// Makes the model immutable and puts it in canonical order: terms of
    /// every row and of the linear objective sorted by variable index,
    /// quadratic objective terms by index pair. Two models with the same
    /// content freeze to equal models whatever the insertion order.
    pub fn freeze(&mut self) {
        if self.frozen {
            return;
        }
        let mut buf: Vec<(u32, f64)> = Vec::new();
        for r in &self.rows {
            let (s, e) = (r.start as usize, r.end as usize);
            buf.clear();
            buf.extend(self.term_vars[s..e].iter().copied().zip(self.term_coefs[s..e].iter().copied()));
            buf.sort_by_key(|&(v, _)| v);
            for (k, &(v, c)) in buf.iter().enumerate() {
                self.term_vars[s + k] = v;
                self.term_coefs[s + k] = c;
            }
        }
        self.objective.linear.sort_by_key(|&(_, v)| v.index);
        self.objective.quadratic.sort_by_key(|&(_, x, y)| (x.index, y.index));
        self.obj_lin_index = HashMap::new();
        self.obj_quad_index = HashMap::new();
        self.frozen = true;
    }

    pub fn is_frozen(&self) -> bool {
        self.frozen
    }

    fn check_open(&self) -> Result<()> {
        if self.frozen {
            Err(Error::Frozen)
        } else {
            Ok(())
        }
    }

    fn check_ref(&self, v: VarRef) -> Result<u32> {
        if v.model != self.id || v.index() >= self.vars.len() {
            return Err(Error::ForeignVariable);
        }
        Ok(v.index)
    }

    pub fn add_variable(&mut self, def: VarDef) -> Result<VarRef> {
        self.check_open()?;
        if self.by_name.contains_key(&def.name) {
            return Err(Error::DuplicateName(def.name));
        }
        let def = match def.kind {
            VarKind::Binary => VarDef { lo: 0.0, hi: 1.0, ..def },
            VarKind::Continuous => def,
        };
        if def.lo.is_nan() || def.hi.is_nan() || def.lo > def.hi {
            return Err(Error::InvertedBounds { name: def.name, lo: def.lo, hi: def.hi });
        }
        let index = self.vars.len() as u32;
        self.by_name.insert(def.name.clone(), index);
        self.vars.push(def);
        Ok(VarRef { model: self.id, index })
    }

    fn intern_label(&mut self, label: &str) -> u16 {
        if let Some(&id) = self.label_ids.get(label) {
            return id;
        }
        let id = self.labels.len() as u16;
        self.labels.push(label.to_string());
        self.label_ids.insert(label.to_string(), id);
        self.label_counts.push(0);
        id
    }

    /// Appends a linear constraint, merging repeated variables.
    pub fn add_constraint(&mut self, label: &str, terms: &[(f64, VarRef)], sense: Sense, rhs: f64) -> Result<ConRef> {
        self.check_open()?;
        let mut merged: Vec<(u32, f64)> = Vec::with_capacity(terms.len());
        if terms.len() <= 16 {
            for &(c, v) in terms {
                let idx = self.check_ref(v)?;
                match merged.iter_mut().find(|(i, _)| *i == idx) {
                    Some(slot) => slot.1 += c,
                    None => merged.push((idx, c)),
                }
            }
        } else {
            let mut pos: HashMap<u32, usize> = HashMap::with_capacity(terms.len());
            for &(c, v) in terms {
                let idx = self.check_ref(v)?;
                match pos.get(&idx) {
                    Some(&p) => merged[p].1 += c,
                    None => {
                        pos.insert(idx, merged.len());
                        merged.push((idx, c));
                    }
                }
            }
        }
        let label = self.intern_label(label);
        let ordinal = self.label_counts[label as usize];
        self.label_counts[label as usize] += 1;
        let start = self.term_vars.len() as u32;
        for (idx, c) in merged {
            self.term_vars.push(idx);
            self.term_coefs.push(c);
        }
        self.rows.push(Row { start, end: self.term_vars.len() as u32, sense, rhs, label, ordinal });
        Ok(ConRef(self.rows.len() as u32 - 1))
    }

    pub fn add_linear_constraint(&mut self, con: LinCon) -> Result<ConRef> {
        self.add_constraint(&con.label, &con.terms, con.sense, con.rhs)
    }

    pub fn add_bilinear_constraint(&mut self, con: BilinCon) -> Result<()> {
        self.check_open()?;
        for &(_, v) in &con.linear {
            self.check_ref(v)?;
        }
        for &(_, x, y) in &con.bilinear {
            self.check_ref(x)?;
            self.check_ref(y)?;
        }
        self.bilinear.push(con);
        Ok(())
    }

    pub fn add_objective_linear(&mut self, coef: f64, v: VarRef) -> Result<()> {
        self.check_open()?;
        let idx = self.check_ref(v)?;
        if coef == 0.0 {
            return Ok(());
        }
        match self.obj_lin_index.get(&idx) {
            Some(&p) => self.objective.linear[p].0 += coef,
            None => {
                self.obj_lin_index.insert(idx, self.objective.linear.len());
                self.objective.linear.push((coef, v));
            }
        }
        Ok(())
    }

    /// Adds `coef * x * y`, stored with the lexicographically smaller name first.
    pub fn add_objective_quadratic(&mut self, coef: f64, x: VarRef, y: VarRef) -> Result<()> {
        self.check_open()?;
        let (ix, iy) = (self.check_ref(x)?, self.check_ref(y)?);
        if coef == 0.0 {
            return Ok(());
        }
        let (x, y, ix, iy) = if self.vars[ix as usize].name <= self.vars[iy as usize].name {
            (x, y, ix, iy)
        } else {
            (y, x, iy, ix)
        };
        match self.obj_quad_index.get(&(ix, iy)) {
            Some(&p) => self.objective.quadratic[p].0 += coef,
            None => {
                self.obj_quad_index.insert((ix, iy), self.objective.quadratic.len());
                self.objective.quadratic.push((coef, x, y));
            }
        }
        Ok(())
    }

    pub fn add_objective_constant(&mut self, c: f64) -> Result<()> {
        self.check_open()?;
        self.objective.constant += c;
        Ok(())
    }

    pub fn num_vars(&self) -> usize {
        self.vars.len()
    }

    pub fn num_constraints(&self) -> usize {
        self.rows.len()
    }

    pub fn vars(&self) -> &[VarDef] {
        &self.vars
    }

    pub fn var(&self, v: VarRef) -> &VarDef {
        &self.vars[v.index()]
    }

    pub fn var_ref(&self, index: usize) -> VarRef {
        assert!(index < self.vars.len());
        VarRef { model: self.id, index: index as u32 }
    }

    pub fn lookup(&self, name: &str) -> Option<VarRef> {
        self.by_name.get(name).map(|&index| VarRef { model: self.id, index })
    }

    pub fn constraint(&self, i: usize) -> ConstraintView<'_> {
        let r = &self.rows[i];
        let (s, e) = (r.start as usize, r.end as usize);
        ConstraintView {
            vars: &self.term_vars[s..e],
            coefs: &self.term_coefs[s..e],
            sense: r.sense,
            rhs: r.rhs,
            label: &self.labels[r.label as usize],
            ordinal: r.ordinal,
        }
    }

    pub fn constraints(&self) -> impl Iterator<Item = ConstraintView<'_>> + '_ {
        (0..self.rows.len()).map(move |i| self.constraint(i))
    }

    pub fn bilinear_constraints(&self) -> &[BilinCon] {
        &self.bilinear
    }

    pub fn objective(&self) -> &Objective {
        &self.objective
    }

    /// Constraint labels in first-use order.
    pub fn labels(&self) -> Vec<&str> {
        let mut out: Vec<&str> = self.labels.iter().map(String::as_str).collect();
        for b in &self.bilinear {
            if !out.contains(&b.label.as_str()) {
                out.push(&b.label);
            }
        }
        out
    }

    pub fn binaries(&self) -> impl Iterator<Item = VarRef> + '_ {
        self.vars
            .iter()
            .enumerate()
            .filter(|(_, v)| v.kind == VarKind::Binary)
            .map(move |(i, _)| VarRef { model: self.id, index: i as u32 })
    }

    pub fn objective_value(&self, values: &[f64]) -> f64 {
        let o = &self.objective;
        let lin: f64 = o.linear.iter().map(|&(c, v)| c * values[v.index()]).sum();
        let quad: f64 = o.quadratic.iter().map(|&(c, x, y)| c * values[x.index()] * values[y.index()]).sum();
        o.constant + lin + quad
    }

    fn bilinear_lhs(con: &BilinCon, values: &[f64]) -> f64 {
        let lin: f64 = con.linear.iter().map(|&(c, v)| c * values[v.index()]).sum();
        let quad: f64 = con.bilinear.iter().map(|&(c, x, y)| c * values[x.index()] * values[y.index()]).sum();
        lin + quad
    }

    /// Early-exit feasibility test over bounds, integrality, and all
    /// constraints. `values` is indexed like the model's variables.
    pub fn is_feasible(&self, values: &[f64], tol: f64) -> bool {
        debug_assert_eq!(values.len(), self.vars.len());
        for (def, &x) in self.vars.iter().zip(values) {
            if x < def.lo - tol || x > def.hi + tol || x.is_nan() {
                return false;
            }
            if def.kind == VarKind::Binary && (x - x.round()).abs() > tol {
                return false;
            }
        }
        for r in &self.rows {
            let (s, e) = (r.start as usize, r.end as usize);
            let lhs: f64 =
                self.term_vars[s..e].iter().zip(&self.term_coefs[s..e]).map(|(&v, &c)| c * values[v as usize]).sum();
            if r.sense.violation(lhs, r.rhs) > tol {
                return false;
            }
        }
        self.bilinear.iter().all(|b| b.sense.violation(Self::bilinear_lhs(b, values), b.rhs) <= tol)
    }
}

/// Complete set of variable values, indexed like the model's variables.
#[derive(Debug, Clone, PartialEq)]
pub struct Assignment {
    values: Vec<f64>,
}

impl Assignment {
    pub fn from_values(model: &Model, values: Vec<f64>) -> Result<Self> {
        if values.len() != model.num_vars() {
            let first = model.vars().get(values.len()).map(|v| v.name.clone()).unwrap_or_default();
            return Err(Error::MissingVariable(first));
        }
        Ok(Self { values })
    }

    /// Builds an assignment from `(name, value)` pairs; every model variable
    /// must appear.
    pub fn from_pairs<'a>(model: &Model, pairs: impl IntoIterator<Item = (&'a str, f64)>) -> Result<Self> {
        let mut values = vec![f64::NAN; model.num_vars()];
        for (name, x) in pairs {
            let v = model.lookup(name).ok_or_else(|| Error::UnknownVariable(name.to_string()))?;
            values[v.index()] = x;
        }
        if let Some(i) = values.iter().position(|x| x.is_nan()) {
            return Err(Error::MissingVariable(model.vars()[i].name.clone()));
        }
        Ok(Self { values })
    }

    pub fn zeros(model: &Model) -> Self {
        Self { values: vec![0.0; model.num_vars()] }
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn get(&self, v: VarRef) -> f64 {
        self.values[v.index()]
    }

    pub fn set(&mut self, v: VarRef, x: f64) {
        self.values[v.index()] = x;
    }

    pub fn by_name(&self, model: &Model, name: &str) -> Option<f64> {
        model.lookup(name).map(|v| self.values[v.index()])
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn binary_domain_is_forced() {
        let mut m = Model::new();
        let d = m.add_variable(VarDef { kind: VarKind::Binary, ..VarDef::continuous("delta[0][1][2]", -5.0, 5.0) }).unwrap();
        assert_eq!((m.var(d).lo, m.var(d).hi), (0.0, 1.0));
    }

    #[test]
    fn continuous_bounds_echo() {
        let mut m = Model::new();
        let w = m.add_variable(VarDef::continuous("W[1][0][0]", -10.0, 10.0)).unwrap();
        assert_eq!((m.var(w).lo, m.var(w).hi), (-10.0, 10.0));
    }

    #[test]
    fn duplicate_and_inverted() {
        let mut m = Model::new();
        m.add_variable(VarDef::binary("delta[0][1][2]")).unwrap();
        assert!(matches!(m.add_variable(VarDef::binary("delta[0][1][2]")), Err(Error::DuplicateName(_))));
        assert!(matches!(m.add_variable(VarDef::continuous("x", 1.0, 0.0)), Err(Error::InvertedBounds { .. })));
    }

    #[test]
    fn constraints_merge_and_reject_foreign() {
        let mut m = Model::new();
        let a = m.add_variable(VarDef::free("a")).unwrap();
        let z = m.add_variable(VarDef::free("z")).unwrap();
        m.add_constraint("relu_identity_lb", &[(1.0, a), (-1.0, z)], Sense::Ge, 0.0).unwrap();
        m.add_constraint("cap", &[(1.0, a), (1.0, a)], Sense::Le, 4.0).unwrap();
        let c = m.constraint(1);
        assert_eq!(c.vars, &[a.index() as u32]);
        assert_eq!(c.coefs, &[2.0]);
        assert_eq!(m.constraint(0).coefs, &[1.0, -1.0]);
        let mut other = Model::new();
        let x = other.add_variable(VarDef::free("x")).unwrap();
        assert!(matches!(m.add_constraint("bad", &[(1.0, x)], Sense::Le, 0.0), Err(Error::ForeignVariable)));
    }

    #[test]
    fn frozen_rejects_additions() {
        let mut m = Model::new();
        m.freeze();
        assert!(matches!(m.add_variable(VarDef::free("x")), Err(Error::Frozen)));
    }

    #[test]
    fn quadratic_terms_canonical_and_merged() {
        let mut m = Model::new();
        let x = m.add_variable(VarDef::free("x")).unwrap();
        let y = m.add_variable(VarDef::free("y")).unwrap();
        m.add_objective_quadratic(1.0, y, x).unwrap();
        m.add_objective_quadratic(2.0, x, y).unwrap();
        assert_eq!(m.objective().quadratic, vec![(3.0, x, y)]);
    }

    #[test]
    fn row_names_count_per_label() {
        let mut m = Model::new();
        let x = m.add_variable(VarDef::free("x")).unwrap();
        m.add_constraint("a", &[(1.0, x)], Sense::Le, 1.0).unwrap();
        m.add_constraint("b", &[(1.0, x)], Sense::Le, 1.0).unwrap();
        m.add_constraint("a", &[(1.0, x)], Sense::Le, 1.0).unwrap();
        let names: Vec<String> = m.constraints().map(|c| c.name()).collect();
        assert_eq!(names, ["a.0", "b.0", "a.1"]);
    }
}
