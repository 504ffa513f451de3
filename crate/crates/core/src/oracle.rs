//! Exact search over the binaries of a built model. Every full binary vector
//! determines the continuous variables by forward propagation, so the global
//! optimum is found by visiting binary vectors only. Used as ground truth for
//! the encodings on tiny instances.

use std::time::Instant;

use rayon::prelude::*;

use crate::builder::{Bound, ExactProblem};
use crate::error::{Error, Result};
use crate::ir::{Assignment, VarRef, FEAS_TOL};

pub const DEFAULT_LIMIT_BITS: usize = 24;

/// Prefix length used to split the enumeration across threads.
const SPLIT_BITS: usize = 6;

/// A feasible full assignment found by the search.
#[derive(Debug, Clone, PartialEq)]
pub struct Solved {
    /// Binaries in branch order.
    pub bits: Vec<bool>,
    pub values: Vec<f64>,
    pub objective: f64,
}

impl Solved {
    pub fn assignment(&self, p: &dyn ExactProblem) -> Result<Assignment> {
        Assignment::from_values(p.model(), self.values.clone())
    }

    pub fn value(&self, v: VarRef) -> f64 {
        self.values[v.index()]
    }

    /// Deterministic order: objective first, then the binary vector.
    fn beats(&self, other: &Solved) -> bool {
        self.objective < other.objective || (self.objective == other.objective && self.bits < other.bits)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Exhaustive {
    pub best: Solved,
    /// Search nodes visited, leaves included.
    pub nodes: u64,
    /// Full binary vectors that passed the feasibility check.
    pub feasible: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BnbOutcome {
    pub incumbent: Option<Solved>,
    /// Proven lower bound on the optimum.
    pub bound: f64,
    pub proven: bool,
    pub nodes: u64,
}

/// Restricts the search to binaries with the given values.
#[derive(Debug, Clone, Default)]
pub struct Fixings {
    forced: Vec<Option<bool>>,
}

impl Fixings {
    pub fn new(p: &dyn ExactProblem, fixed: &[(VarRef, bool)]) -> Result<Self> {
        let order = p.branch_order();
        let mut forced = vec![None; order.len()];
        for &(v, b) in fixed {
            let at = order.iter().position(|&o| o == v).ok_or_else(|| {
                Error::OutOfRange(format!("`{}` is not a branching binary", p.model().var(v).name))
            })?;
            forced[at] = Some(b);
        }
        Ok(Self { forced })
    }

    fn choices(&self, depth: usize) -> &'static [bool] {
        match self.forced.get(depth).copied().flatten() {
            Some(false) => &[false],
            Some(true) => &[true],
            None => &[false, true],
        }
    }
}

fn leaf(p: &dyn ExactProblem, bits: &[bool]) -> Option<Solved> {
    let values = p.complete(bits);
    let model = p.model();
    model.is_feasible(&values, FEAS_TOL).then(|| Solved { bits: bits.to_vec(), objective: model.objective_value(&values), values })
}

fn check_size(p: &dyn ExactProblem, limit_bits: usize) -> Result<()> {
    p.check_exact()?;
    let count = p.branch_order().len();
    if count > limit_bits {
        return Err(Error::TooManyBinaries { count, limit: limit_bits });
    }
    Ok(())
}

/// Depth-first walk that skips only subtrees with no feasible completion and
/// hands every feasible leaf to `visit`. Returns the node count.
fn walk(p: &dyn ExactProblem, fix: &Fixings, bits: &mut Vec<bool>, visit: &mut dyn FnMut(Solved) -> bool) -> (u64, bool) {
    if p.lower_bound(bits) == Bound::Infeasible {
        return (1, true);
    }
    if bits.len() == p.branch_order().len() {
        let go_on = match leaf(p, bits) {
            Some(s) => visit(s),
            None => true,
        };
        return (1, go_on);
    }
    let mut nodes = 1;
    for &b in fix.choices(bits.len()) {
        bits.push(b);
        let (n, go_on) = walk(p, fix, bits, visit);
        bits.pop();
        nodes += n;
        if !go_on {
            return (nodes, false);
        }
    }
    (nodes, true)
}

/// Global optimum over every binary vector, ties broken toward the
/// lexicographically smallest vector. Subtrees are skipped only when they
/// contain no feasible vector, so the result is that of plain enumeration.
pub fn enumerate_exact(p: &dyn ExactProblem, limit_bits: usize) -> Result<Exhaustive> {
    enumerate_fixed(p, limit_bits, &Fixings::new(p, &[])?)
}

pub fn enumerate_fixed(p: &dyn ExactProblem, limit_bits: usize, fix: &Fixings) -> Result<Exhaustive> {
    check_size(p, limit_bits)?;
    let split = SPLIT_BITS.min(p.branch_order().len());
    let mut prefixes = vec![Vec::new()];
    for depth in 0..split {
        prefixes = prefixes
            .into_iter()
            .flat_map(|pre: Vec<bool>| {
                fix.choices(depth).iter().map(move |&b| {
                    let mut next = pre.clone();
                    next.push(b);
                    next
                })
            })
            .collect();
    }
    let parts: Vec<(Option<Solved>, u64, u64)> = prefixes
        .into_par_iter()
        .map(|mut bits| {
            let mut best: Option<Solved> = None;
            let mut feasible = 0;
            let (nodes, _) = walk(p, fix, &mut bits, &mut |s| {
                feasible += 1;
                if best.as_ref().is_none_or(|b| s.beats(b)) {
                    best = Some(s);
                }
                true
            });
            (best, nodes, feasible)
        })
        .collect();
    let mut best: Option<Solved> = None;
    let (mut nodes, mut feasible) = (0, 0);
    for (b, n, f) in parts {
        nodes += n;
        feasible += f;
        if let Some(b) = b {
            if best.as_ref().is_none_or(|cur| b.beats(cur)) {
                best = Some(b);
            }
        }
    }
    let best = best.ok_or(Error::NoFeasibleAssignment)?;
    Ok(Exhaustive { best, nodes, feasible })
}

/// Every feasible full assignment under `fix`, up to `cap` of them, in
/// lexicographic order of the binary vector. No size limit applies since
/// subtrees without feasible completions are skipped.
pub fn feasible_assignments(p: &dyn ExactProblem, fix: &Fixings, cap: usize) -> Result<Vec<Solved>> {
    p.check_exact()?;
    let mut found = Vec::new();
    walk(p, fix, &mut Vec::new(), &mut |s| {
        found.push(s);
        found.len() < cap
    });
    Ok(found)
}

/// Stopping rules for [`branch_and_bound_with`].
#[derive(Debug, Clone, Copy)]
pub struct BnbLimits {
    pub nodes: u64,
    pub deadline: Option<Instant>,
    /// Nodes whose bound is within this relative distance of the incumbent
    /// are pruned.
    pub rel_gap: f64,
}

impl Default for BnbLimits {
    fn default() -> Self {
        Self { nodes: u64::MAX, deadline: None, rel_gap: 0.0 }
    }
}

impl BnbOutcome {
    /// Relative distance between incumbent and bound, 0 when proven exact.
    pub fn gap(&self) -> Option<f64> {
        let inc = self.incumbent.as_ref()?.objective;
        Some(((inc - self.bound) / inc.abs().max(1e-10)).max(0.0))
    }
}

/// Depth-first branch and bound, 0-branch first. A node is pruned when it has
/// no feasible completion or its bound reaches the incumbent. Stops after
/// `budget` nodes; the outcome is then unproven.
pub fn branch_and_bound(p: &dyn ExactProblem, budget: u64) -> Result<BnbOutcome> {
    branch_and_bound_with(p, &BnbLimits { nodes: budget, ..BnbLimits::default() }, &Fixings::new(p, &[])?)
}

pub fn branch_and_bound_with(p: &dyn ExactProblem, limits: &BnbLimits, fix: &Fixings) -> Result<BnbOutcome> {
    p.check_exact()?;
    let total = p.branch_order().len();
    let mut incumbent: Option<Solved> = None;
    let mut stack: Vec<(Vec<bool>, f64)> = vec![(Vec::new(), 0.0)];
    let mut nodes = 0;
    // smallest bound among nodes dropped by the gap tolerance
    let mut floor = f64::INFINITY;
    while let Some((bits, parent)) = stack.pop() {
        let timed_out = limits.deadline.is_some_and(|d| nodes % 1024 == 0 && Instant::now() >= d);
        if nodes >= limits.nodes || timed_out {
            stack.push((bits, parent));
            break;
        }
        nodes += 1;
        let lb = match p.lower_bound(&bits) {
            Bound::Infeasible => continue,
            Bound::AtLeast(b) => b.max(parent),
        };
        if let Some(inc) = incumbent.as_ref().map(|s| s.objective) {
            if lb >= inc {
                continue;
            }
            if lb >= inc - limits.rel_gap * inc.abs() {
                floor = floor.min(lb);
                continue;
            }
        }
        if bits.len() == total {
            if let Some(s) = leaf(p, &bits) {
                if incumbent.as_ref().is_none_or(|cur| s.beats(cur)) {
                    incumbent = Some(s);
                }
            }
            continue;
        }
        for &b in fix.choices(bits.len()).iter().rev() {
            let mut child = bits.clone();
            child.push(b);
            stack.push((child, lb));
        }
    }
    let proven = stack.is_empty();
    let best = incumbent.as_ref().map_or(f64::INFINITY, |s| s.objective);
    let open = stack.iter().map(|&(_, lb)| lb).fold(floor, f64::min);
    let bound = if proven && floor == f64::INFINITY { best } else { open.min(best) };
    if proven && incumbent.is_none() {
        return Err(Error::NoFeasibleAssignment);
    }
    Ok(BnbOutcome { incumbent, bound, proven, nodes })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::arch::{ArchSpec, DenseArch};
    use crate::bounds::{propagate_bounds, Interval, ParamBox};
    use crate::builder::{build_dense, BuildOptions, DenseBuild};
    use crate::data::Dataset;
    use crate::hyper::{Hyper, Mode};
    use crate::recon::net::{DenseLayer, DenseNet, TrainedNet};

    fn verify(net: &DenseNet, inputs: Vec<Vec<f64>>) -> DenseBuild {
        let arch = net.arch();
        let targets = inputs.iter().map(|_| vec![0.0; arch.output_dim]).collect();
        let data = Dataset::new(inputs, targets).unwrap();
        let tn = TrainedNet::Dense(net.clone());
        let boxes = vec![Interval::new(-2.0, 2.0); arch.input_dim];
        let bounds = propagate_bounds(&ArchSpec::Dense(arch.clone()), &boxes, ParamBox::Fixed(&tn)).unwrap();
        build_dense(&arch, &data, &Hyper::default(), &bounds, Some(net), &BuildOptions::default()).unwrap()
    }

    fn one_unit(w: f64) -> DenseNet {
        DenseNet {
            layers: vec![
                DenseLayer { weights: vec![vec![w]], bias: vec![0.0] },
                DenseLayer { weights: vec![vec![1.0]], bias: vec![0.5] },
            ],
            gamma: vec![true],
            quant: None,
        }
    }

    #[test]
    fn indicator_follows_sign() {
        let b = verify(&one_unit(1.0), vec![vec![-1.5]]);
        let e = enumerate_exact(&b, DEFAULT_LIMIT_BITS).unwrap();
        assert_eq!(e.best.bits, vec![true, false]);
        assert_eq!(e.feasible, 1);
        assert!((e.best.value(b.out[0][0]) - 0.5).abs() < 1e-12);
    }

    #[test]
    fn zero_preactivation_allows_both_indicators() {
        let b = verify(&one_unit(1.0), vec![vec![0.0]]);
        let all = feasible_assignments(&b, &Fixings::default(), 16).unwrap();
        assert_eq!(all.len(), 2);
        assert!(all.iter().all(|s| s.value(b.a[0][0][0]) == 0.0));
    }

    #[test]
    fn too_many_binaries() {
        let b = verify(&one_unit(1.0), vec![vec![1.0]; 30]);
        assert!(matches!(enumerate_exact(&b, 24), Err(Error::TooManyBinaries { count: 31, limit: 24 })));
    }

    #[test]
    fn zero_budget_is_unproven() {
        let b = verify(&one_unit(1.0), vec![vec![1.0]]);
        let r = branch_and_bound(&b, 0).unwrap();
        assert_eq!((r.incumbent, r.bound, r.proven, r.nodes), (None, 0.0, false, 0));
    }

    #[test]
    fn pruned_root_is_infeasible() {
        let b = verify(&one_unit(1.0), vec![vec![1.0]]);
        let fix = Fixings::new(&b, &[(b.gamma[0], false)]).unwrap();
        assert!(matches!(enumerate_fixed(&b, 24, &fix), Err(Error::NoFeasibleAssignment)));
        assert!(matches!(branch_and_bound_with(&b, &BnbLimits::default(), &fix), Err(Error::NoFeasibleAssignment)));
    }

    #[test]
    fn bnb_matches_enumeration_on_quantized() {
        let arch = DenseArch::new(1, vec![1], 1);
        let data = Dataset::new(vec![vec![0.0], vec![1.0]], vec![vec![0.0], vec![1.0]]).unwrap();
        let hyper = Hyper { mode: Mode::TrainQuantized, bits: 2, quantize_biases: true, ..Hyper::default() };
        let bounds = propagate_bounds(&ArchSpec::Dense(arch.clone()), &[Interval::new(0.0, 1.0)], ParamBox::from_hyper(&hyper)).unwrap();
        let b = build_dense(&arch, &data, &hyper, &bounds, None, &BuildOptions::default()).unwrap();
        let e = enumerate_exact(&b, 24).unwrap();
        let r = branch_and_bound(&b, u64::MAX).unwrap();
        assert!(r.proven);
        assert!((r.incumbent.unwrap().objective - e.best.objective).abs() < 1e-9);
        assert!((r.bound - e.best.objective).abs() < 1e-9);
        assert!(r.nodes < e.nodes, "{} vs {}", r.nodes, e.nodes);
    }
}
