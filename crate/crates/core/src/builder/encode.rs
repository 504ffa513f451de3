//! Constraint gadgets shared by the dense and convolutional builders.

use crate::bounds::Interval;
use crate::error::{Error, Result};
use crate::hyper::QuantGrid;
use crate::ir::{ConRef, Model, Sense, VarDef, VarRef};

/// Affine expression `sum(c * v) + constant`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct LinExpr {
    pub terms: Vec<(f64, VarRef)>,
    pub constant: f64,
}

impl LinExpr {
    pub fn eval(&self, values: &[f64]) -> f64 {
        self.constant + self.terms.iter().map(|&(c, v)| c * values[v.index()]).sum::<f64>()
    }
}

/// Big-M encoding of `a = max(0, z)` with indicator `delta`:
///
/// ```text
/// a >= 0
/// a >= z
/// a <= z - z_lo (1 - delta)
/// a <= z_hi delta
/// ```
pub fn encode_relu(model: &mut Model, z: VarRef, a: VarRef, delta: VarRef, zb: Interval) -> Result<[ConRef; 4]> {
    if !(zb.lo <= 0.0 && 0.0 <= zb.hi) || !zb.lo.is_finite() || !zb.hi.is_finite() {
        return Err(Error::IllPosedBounds { lo: zb.lo, hi: zb.hi });
    }
    Ok([
        model.add_constraint("relu_lower", &[(1.0, a)], Sense::Ge, 0.0)?,
        model.add_constraint("relu_identity_lb", &[(1.0, a), (-1.0, z)], Sense::Ge, 0.0)?,
        model.add_constraint("relu_identity_ub", &[(1.0, a), (-1.0, z), (-zb.lo, delta)], Sense::Le, -zb.lo)?,
        model.add_constraint("relu_activation_bound", &[(1.0, a), (-zb.hi, delta)], Sense::Le, 0.0)?,
    ])
}

/// Fixed-point value of a digit vector, `step * sum(2^t d_t) - w_max`.
pub fn quantized_value(digits: &[VarRef], grid: QuantGrid) -> LinExpr {
    let step = grid.step();
    LinExpr {
        terms: digits.iter().enumerate().map(|(t, &d)| (step * (1u64 << t) as f64, d)).collect(),
        constant: -grid.w_max,
    }
}

/// Result of linearizing `w * a` where `w` is a fixed-point digit expansion.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantProduct {
    /// The weight value as an affine function of its digits.
    pub weight: LinExpr,
    /// `w * a` as `step * sum(2^t y_t) - w_max * a`.
    pub product: LinExpr,
    /// Product variables `y_t = d_t * a`.
    pub products: Vec<VarRef>,
}

/// Introduces `y_t = d_t * a` for each digit with the four McCormick
/// inequalities, which are exact because `d_t` is binary:
///
/// ```text
/// y <= a_hi d          y >= a_lo d
/// y <= a - a_lo (1-d)  y >= a - a_hi (1-d)
/// ```
pub fn encode_quantized_product(
    model: &mut Model,
    digits: &[VarRef],
    a: VarRef,
    range: Interval,
    grid: QuantGrid,
    product_name: impl Fn(usize) -> String,
) -> Result<QuantProduct> {
    if digits.is_empty() {
        return Err(Error::InvalidHyper("quantized weight needs at least one digit".into()));
    }
    if !range.lo.is_finite() || !range.hi.is_finite() {
        return Err(Error::UnboundedActivation);
    }
    let (lo, hi) = (range.lo, range.hi);
    let step = grid.step();
    let mut products = Vec::with_capacity(digits.len());
    let mut terms = Vec::with_capacity(digits.len() + 1);
    for (t, &d) in digits.iter().enumerate() {
        let y = model.add_variable(VarDef::continuous(product_name(t), lo.min(0.0), hi.max(0.0)))?;
        model.add_constraint("quant_product", &[(1.0, y), (-hi, d)], Sense::Le, 0.0)?;
        model.add_constraint("quant_product", &[(1.0, y), (-lo, d)], Sense::Ge, 0.0)?;
        model.add_constraint("quant_product", &[(1.0, y), (-1.0, a), (-lo, d)], Sense::Le, -lo)?;
        model.add_constraint("quant_product", &[(1.0, y), (-1.0, a), (-hi, d)], Sense::Ge, -hi)?;
        terms.push((step * (1u64 << t) as f64, y));
        products.push(y);
    }
    terms.push((-grid.w_max, a));
    Ok(QuantProduct { weight: quantized_value(digits, grid), product: LinExpr { terms, constant: 0.0 }, products })
}

/// Max pooling over one window:
///
/// ```text
/// sum(zeta_q) = 1
/// p >= a_q                   for all q
/// p <= a_q + M (1 - zeta_q)  for all q
/// ```
pub fn encode_maxpool(model: &mut Model, cells: &[VarRef], pooled: VarRef, selectors: &[VarRef], big_m: f64) -> Result<()> {
    if cells.is_empty() {
        return Err(Error::EmptyWindow);
    }
    if cells.len() != selectors.len() {
        return Err(Error::ShapeMismatch("one selector per pooling cell".into()));
    }
    let sum: Vec<(f64, VarRef)> = selectors.iter().map(|&s| (1.0, s)).collect();
    model.add_constraint("pool_select", &sum, Sense::Eq, 1.0)?;
    for &a in cells {
        model.add_constraint("pool_lb", &[(1.0, pooled), (-1.0, a)], Sense::Ge, 0.0)?;
    }
    for (&a, &s) in cells.iter().zip(selectors) {
        model.add_constraint("pool_ub", &[(1.0, pooled), (-1.0, a), (big_m, s)], Sense::Le, big_m)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ir::{Assignment, VarDef};

    fn relu_model(zb: Interval) -> (Model, [VarRef; 3]) {
        let mut m = Model::new();
        let z = m.add_variable(VarDef::free("z")).unwrap();
        let a = m.add_variable(VarDef::free("a")).unwrap();
        let d = m.add_variable(VarDef::binary("delta")).unwrap();
        encode_relu(&mut m, z, a, d, zb).unwrap();
        (m, [z, a, d])
    }

    fn feasible(m: &Model, vals: &[f64]) -> bool {
        m.is_feasible(Assignment::from_values(m, vals.to_vec()).unwrap().values(), 1e-9)
    }

    /// Feasible `a` values on a fine grid for given `z` and `delta`.
    fn feasible_a(m: &Model, z: f64, d: f64) -> Vec<f64> {
        (-400..=400).map(|k| k as f64 * 0.01).filter(|&a| feasible(m, &[z, a, d])).collect()
    }

    #[test]
    fn active_unit_copies_z() {
        let (m, _) = relu_model(Interval::new(-3.0, 3.0));
        assert_eq!(feasible_a(&m, 1.5, 1.0), vec![1.5]);
        assert!(feasible_a(&m, 1.5, 0.0).is_empty());
    }

    #[test]
    fn inactive_unit_is_zero() {
        let (m, _) = relu_model(Interval::new(-3.0, 3.0));
        assert_eq!(feasible_a(&m, -2.0, 0.0), vec![0.0]);
        assert!(feasible_a(&m, -2.0, 1.0).is_empty());
    }

    #[test]
    fn zero_preactivation_admits_both_branches() {
        let (m, _) = relu_model(Interval::new(-3.0, 3.0));
        assert_eq!(feasible_a(&m, 0.0, 0.0), vec![0.0]);
        assert_eq!(feasible_a(&m, 0.0, 1.0), vec![0.0]);
    }

    #[test]
    fn ill_posed_bounds() {
        let mut m = Model::new();
        let z = m.add_variable(VarDef::free("z")).unwrap();
        let a = m.add_variable(VarDef::free("a")).unwrap();
        let d = m.add_variable(VarDef::binary("d")).unwrap();
        assert!(matches!(encode_relu(&mut m, z, a, d, Interval::new(0.5, 2.0)), Err(Error::IllPosedBounds { .. })));
    }

    #[test]
    fn digit_grid_endpoints() {
        let mut m = Model::new();
        let d: Vec<VarRef> = (0..3).map(|t| m.add_variable(VarDef::binary(format!("d{t}"))).unwrap()).collect();
        let w = quantized_value(&d, QuantGrid { bits: 3, w_max: 1.0 });
        assert!((w.eval(&[1.0, 1.0, 1.0]) - 1.0).abs() < 1e-15);
        assert_eq!(w.eval(&[0.0, 0.0, 0.0]), -1.0);
    }

    #[test]
    fn mccormick_exact_for_binary_factor() {
        let mut m = Model::new();
        let d = m.add_variable(VarDef::binary("d")).unwrap();
        let a = m.add_variable(VarDef::continuous("a", 0.0, 2.0)).unwrap();
        let q = encode_quantized_product(&mut m, &[d], a, Interval::new(0.0, 2.0), QuantGrid { bits: 1, w_max: 1.0 }, |t| {
            format!("y{t}")
        })
        .unwrap();
        assert_eq!(q.products.len(), 1);
        for av in [0.0, 0.5, 1.3, 2.0] {
            for dv in [0.0, 1.0] {
                let ys: Vec<f64> = (-300..=300)
                    .map(|k| k as f64 * 0.01)
                    .filter(|&y| m.is_feasible(&[dv, av, y], 1e-9))
                    .collect();
                let want = dv * av;
                assert_eq!(ys.len(), 1, "a={av} d={dv}: {ys:?}");
                assert!((ys[0] - want).abs() < 1e-9);
            }
        }
        // product expression: with one bit, w = 2d - 1, so w*a = 2y - a
        assert!((q.product.eval(&[1.0, 1.5, 1.5]) - 1.5).abs() < 1e-12);
        assert!((q.product.eval(&[0.0, 1.5, 0.0]) + 1.5).abs() < 1e-12);
    }

    #[test]
    fn unbounded_activation_rejected() {
        let mut m = Model::new();
        let d = m.add_variable(VarDef::binary("d")).unwrap();
        let a = m.add_variable(VarDef::free("a")).unwrap();
        let r = encode_quantized_product(&mut m, &[d], a, Interval { lo: 0.0, hi: f64::INFINITY }, QuantGrid { bits: 1, w_max: 1.0 }, |t| {
            format!("y{t}")
        });
        assert!(matches!(r, Err(Error::UnboundedActivation)));
    }

    fn pool_model(n: usize) -> (Model, Vec<VarRef>, VarRef, Vec<VarRef>) {
        let mut m = Model::new();
        let cells: Vec<VarRef> = (0..n).map(|q| m.add_variable(VarDef::continuous(format!("a{q}"), 0.0, 10.0)).unwrap()).collect();
        let p = m.add_variable(VarDef::continuous("p", 0.0, 10.0)).unwrap();
        let sel: Vec<VarRef> = (0..n).map(|q| m.add_variable(VarDef::binary(format!("zeta{q}"))).unwrap()).collect();
        encode_maxpool(&mut m, &cells, p, &sel, 10.0).unwrap();
        (m, cells, p, sel)
    }

    /// All `(p, selected cell)` pairs feasible for given cell values, with
    /// `p` scanned on a grid.
    fn feasible_pools(m: &Model, vals: &[f64]) -> Vec<(f64, usize)> {
        let mut out = Vec::new();
        for q in 0..vals.len() {
            for k in 0..=1000 {
                let p = k as f64 * 0.01;
                let mut x = vals.to_vec();
                x.push(p);
                x.extend((0..vals.len()).map(|r| if r == q { 1.0 } else { 0.0 }));
                if m.is_feasible(&x, 1e-9) {
                    out.push((p, q));
                }
            }
        }
        out
    }

    #[test]
    fn maxpool_selects_argmax() {
        let (m, ..) = pool_model(4);
        assert_eq!(feasible_pools(&m, &[1.0, 3.0, 2.0, 0.0]), vec![(3.0, 1)]);
    }

    #[test]
    fn maxpool_ties() {
        let (m, ..) = pool_model(4);
        let f = feasible_pools(&m, &[2.0; 4]);
        assert_eq!(f.len(), 4);
        assert!(f.iter().all(|&(p, _)| p == 2.0));
    }

    #[test]
    fn empty_window() {
        let mut m = Model::new();
        let p = m.add_variable(VarDef::free("p")).unwrap();
        assert!(matches!(encode_maxpool(&mut m, &[], p, &[], 1.0), Err(Error::EmptyWindow)));
    }
}
