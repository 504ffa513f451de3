//! Mixed-integer model of a fully connected ReLU network over a dataset.

use crate::arch::{validate_dense, DenseArch};
use crate::bounds::{BoundsTable, Interval};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::hyper::{Hyper, Loss, Mode};
use crate::ir::{Model, Sense, VarDef, VarRef, FEAS_TOL};
use crate::recon::net::{DenseLayer, DenseNet};

use super::encode::{encode_quantized_product, encode_relu, quantized_value};
use super::{bit_of, branch_positions, check_exact_mode, check_mode, deflate, sample_loss, Bound, BuildOptions, ExactProblem};

/// A built dense model with handles to every variable family. Layer-indexed
/// vectors are 0-based over layers `1..=L+1`; hidden-only families stop at `L`.
#[derive(Debug)]
pub struct DenseBuild {
    pub model: Model,
    pub arch: DenseArch,
    pub hyper: Hyper,
    pub opts: BuildOptions,
    pub data: Dataset,
    pub gamma: Vec<VarRef>,
    /// `[layer][j][k]`.
    pub weights: Vec<Vec<Vec<VarRef>>>,
    pub biases: Vec<Vec<VarRef>>,
    pub abs_weights: Vec<Vec<Vec<VarRef>>>,
    /// `[layer][j][k][t]`, quantized mode only.
    pub digits: Vec<Vec<Vec<Vec<VarRef>>>>,
    /// `[layer][j][t]`, quantized biases only.
    pub bias_digits: Vec<Vec<Vec<VarRef>>>,
    /// `[i][k]`.
    pub input: Vec<Vec<VarRef>>,
    /// `[i][layer][j]`, hidden layers.
    pub z: Vec<Vec<Vec<VarRef>>>,
    pub a: Vec<Vec<Vec<VarRef>>>,
    pub delta: Vec<Vec<Vec<VarRef>>>,
    /// `[i][j]`.
    pub out: Vec<Vec<VarRef>>,
    /// `[i][layer][j][k][t]`, quantized mode, empty for the first layer.
    pub products: Vec<Vec<Vec<Vec<Vec<VarRef>>>>>,
    /// `[i][j]`, absolute loss only.
    pub resid: Vec<Vec<VarRef>>,
    fixed: Option<DenseNet>,
    branch: Vec<VarRef>,
    pos: Vec<u32>,
    struct_bits: usize,
}

/// Builds the training or verification model of `arch` over `data`.
/// `net` supplies the fixed parameters in verify mode.
pub fn build_dense(
    arch: &DenseArch,
    data: &Dataset,
    hyper: &Hyper,
    bounds: &BoundsTable,
    net: Option<&DenseNet>,
    opts: &BuildOptions,
) -> Result<DenseBuild> {
    check_mode(hyper, opts)?;
    let widths = validate_dense(arch)?;
    let depth = arch.depth();
    if data.input_dim() != arch.input_dim || data.target_dim() != arch.output_dim {
        return Err(Error::ShapeMismatch(format!(
            "dataset has {} features and {} targets, architecture expects {} and {}",
            data.input_dim(),
            data.target_dim(),
            arch.input_dim,
            arch.output_dim
        )));
    }
    let fixed = match hyper.mode {
        Mode::Verify => {
            let n = net.ok_or_else(|| Error::InvalidHyper("verify mode needs a network".into()))?;
            n.check_shape(arch)?;
            Some(n.clone())
        }
        _ => None,
    };

    let m = hyper.big_m;
    let mut relu_bounds: Vec<Vec<Interval>> = Vec::with_capacity(depth);
    for l in 1..=depth {
        let lb = bounds.layer(l)?;
        if opts.per_unit_bounds && lb.units.len() != widths[l] {
            return Err(Error::ShapeMismatch(format!("layer {l} bounds have {} units, expected {}", lb.units.len(), widths[l])));
        }
        let mut row = Vec::with_capacity(widths[l]);
        for j in 0..widths[l] {
            let iv = lb.unit(j, opts.per_unit_bounds);
            if fixed.is_some() {
                let need = iv.lo.abs().max(iv.hi.abs());
                if need > m {
                    return Err(Error::BigMTooSmall { layer: l, bound: need, m });
                }
                row.push(iv);
            } else {
                // z is boxed by M anyway, so the tighter of the two is sound.
                row.push(Interval::new(iv.lo.max(-m), iv.hi.min(m)));
            }
        }
        relu_bounds.push(row);
    }

    let quantized = hyper.mode == Mode::TrainQuantized;
    let grid = hyper.grid();
    let bits = hyper.bits as usize;
    let (w_box, b_box) = match hyper.mode {
        Mode::TrainQuantized => (hyper.w_max, if hyper.quantize_biases { hyper.w_max } else { m }),
        _ => (m, m),
    };

    let mut model = Model::new();
    let mut branch = Vec::new();

    // structural variables
    let mut gamma = Vec::with_capacity(depth);
    for l in 1..=depth {
        let g = model.add_variable(VarDef::binary(format!("gamma[{l}]")))?;
        gamma.push(g);
        branch.push(g);
    }
    let mut weights = Vec::new();
    let mut biases = Vec::new();
    let mut abs_weights = Vec::new();
    let mut digits = Vec::new();
    let mut bias_digits = Vec::new();
    for l in 1..=depth + 1 {
        let (rows, cols) = (widths[l], widths[l - 1]);
        let layer = fixed.as_ref().map(|n| &n.layers[l - 1]);
        let mut wl = Vec::with_capacity(rows);
        let mut ul = Vec::with_capacity(rows);
        let mut bl = Vec::with_capacity(rows);
        for j in 0..rows {
            let mut wr = Vec::with_capacity(cols);
            let mut ur = Vec::with_capacity(cols);
            for k in 0..cols {
                let name = format!("W[{l}][{j}][{k}]");
                wr.push(model.add_variable(match layer {
                    Some(p) => VarDef::fixed(name, p.weights[j][k]),
                    None => VarDef::continuous(name, -w_box, w_box),
                })?);
                ur.push(model.add_variable(VarDef::continuous(format!("u[{l}][{j}][{k}]"), 0.0, w_box))?);
            }
            let name = format!("b[{l}][{j}]");
            bl.push(model.add_variable(match layer {
                Some(p) => VarDef::fixed(name, p.bias[j]),
                None => VarDef::continuous(name, -b_box, b_box),
            })?);
            wl.push(wr);
            ul.push(ur);
        }
        if quantized {
            let mut dl = Vec::with_capacity(rows);
            for j in 0..rows {
                let mut dr = Vec::with_capacity(cols);
                for k in 0..cols {
                    let mut dt = Vec::with_capacity(bits);
                    for t in 0..bits {
                        let d = model.add_variable(VarDef::binary(format!("d[{l}][{j}][{k}][{t}]")))?;
                        branch.push(d);
                        dt.push(d);
                    }
                    dr.push(dt);
                }
                dl.push(dr);
            }
            digits.push(dl);
            if hyper.quantize_biases {
                let mut bd = Vec::with_capacity(rows);
                for j in 0..rows {
                    let mut dt = Vec::with_capacity(bits);
                    for t in 0..bits {
                        let d = model.add_variable(VarDef::binary(format!("db[{l}][{j}][{t}]")))?;
                        branch.push(d);
                        dt.push(d);
                    }
                    bd.push(dt);
                }
                bias_digits.push(bd);
            }
        }
        weights.push(wl);
        biases.push(bl);
        abs_weights.push(ul);
    }
    let struct_bits = branch.len();

    // structural constraints
    model.add_constraint("root_layer_active", &[(1.0, gamma[0])], Sense::Eq, 1.0)?;
    for l in 1..depth {
        model.add_constraint("layer_ordering", &[(1.0, gamma[l]), (-1.0, gamma[l - 1])], Sense::Le, 0.0)?;
    }
    for l in 0..=depth {
        for j in 0..widths[l + 1] {
            if quantized {
                for k in 0..widths[l] {
                    let w = quantized_value(&digits[l][j][k], grid);
                    let mut terms = vec![(1.0, weights[l][j][k])];
                    terms.extend(w.terms.iter().map(|&(c, d)| (-c, d)));
                    model.add_constraint("quant_weight", &terms, Sense::Eq, w.constant)?;
                }
                if hyper.quantize_biases {
                    let b = quantized_value(&bias_digits[l][j], grid);
                    let mut terms = vec![(1.0, biases[l][j])];
                    terms.extend(b.terms.iter().map(|&(c, d)| (-c, d)));
                    model.add_constraint("quant_bias", &terms, Sense::Eq, b.constant)?;
                }
            }
            for k in 0..widths[l] {
                let (w, u) = (weights[l][j][k], abs_weights[l][j][k]);
                model.add_constraint("l1_linearization", &[(1.0, u), (-1.0, w)], Sense::Ge, 0.0)?;
                model.add_constraint("l1_linearization", &[(1.0, u), (1.0, w)], Sense::Ge, 0.0)?;
            }
            if l < depth {
                let g = gamma[l];
                for k in 0..widths[l] {
                    let w = weights[l][j][k];
                    model.add_constraint("prune_weights", &[(1.0, w), (-m, g)], Sense::Le, 0.0)?;
                    model.add_constraint("prune_weights", &[(-1.0, w), (-m, g)], Sense::Le, 0.0)?;
                }
                let b = biases[l][j];
                model.add_constraint("prune_biases", &[(1.0, b), (-m, g)], Sense::Le, 0.0)?;
                model.add_constraint("prune_biases", &[(-1.0, b), (-m, g)], Sense::Le, 0.0)?;
            }
        }
    }
    if opts.symmetry {
        for l in 0..depth {
            for j in 0..widths[l + 1] - 1 {
                let mut terms: Vec<(f64, VarRef)> = weights[l][j].iter().map(|&w| (1.0, w)).collect();
                terms.extend(weights[l][j + 1].iter().map(|&w| (-1.0, w)));
                model.add_constraint("symmetry_breaking", &terms, Sense::Ge, 0.0)?;
            }
        }
    }

    // per-sample variables and constraints
    let n = data.len();
    let mut input = Vec::with_capacity(n);
    let mut zs = Vec::with_capacity(n);
    let mut acts = Vec::with_capacity(n);
    let mut deltas = Vec::with_capacity(n);
    let mut outs = Vec::with_capacity(n);
    let mut products = Vec::with_capacity(n);
    let mut resid = Vec::new();
    for i in 0..n {
        let x = &data.inputs[i];
        let mut a0 = Vec::with_capacity(x.len());
        for (k, &xv) in x.iter().enumerate() {
            let v = model.add_variable(VarDef::free(format!("a[{i}][0][{k}]")))?;
            model.add_constraint("input_assignment", &[(1.0, v)], Sense::Eq, xv)?;
            a0.push(v);
        }
        let mut prev = a0.clone();
        let (mut zi, mut ai, mut di, mut yi) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
        for l in 1..=depth + 1 {
            let head = l == depth + 1;
            let rows = widths[l];
            let mut zl = Vec::with_capacity(rows);
            let mut yl = Vec::new();
            for j in 0..rows {
                let zname = if head { format!("a[{i}][{l}][{j}]") } else { format!("z[{i}][{l}][{j}]") };
                let z = model.add_variable(if head { VarDef::free(zname) } else { VarDef::continuous(zname, -m, m) })?;
                let label = if head { "output_map" } else { "affine_map" };
                let b = biases[l - 1][j];
                match (hyper.mode, l) {
                    (Mode::Verify, _) => {
                        let p = &fixed.as_ref().expect("verify has a network").layers[l - 1];
                        let mut terms = vec![(1.0, z), (-1.0, b)];
                        terms.extend(prev.iter().zip(&p.weights[j]).map(|(&a, &w)| (-w, a)));
                        model.add_constraint(label, &terms, Sense::Eq, 0.0)?;
                    }
                    (_, 1) => {
                        let mut terms = vec![(1.0, z), (-1.0, b)];
                        terms.extend(x.iter().zip(&weights[0][j]).map(|(&xv, &w)| (-xv, w)));
                        model.add_constraint(label, &terms, Sense::Eq, 0.0)?;
                    }
                    (Mode::TrainBilinear, _) => {
                        let bilinear = weights[l - 1][j].iter().zip(&prev).map(|(&w, &a)| (-1.0, w, a)).collect();
                        model.add_bilinear_constraint(crate::ir::BilinCon {
                            linear: vec![(1.0, z), (-1.0, b)],
                            bilinear,
                            sense: Sense::Eq,
                            rhs: 0.0,
                            label: label.into(),
                        })?;
                    }
                    (Mode::TrainQuantized, _) => {
                        let range = Interval::new(0.0, relu_bounds[l - 2].iter().map(|iv| iv.hi.max(0.0)).fold(0.0, f64::max));
                        let mut terms = vec![(1.0, z), (-1.0, b)];
                        let mut yj = Vec::with_capacity(prev.len());
                        for (k, &a) in prev.iter().enumerate() {
                            let range = if opts.per_unit_bounds { Interval::new(0.0, relu_bounds[l - 2][k].hi.max(0.0)) } else { range };
                            let q = encode_quantized_product(&mut model, &digits[l - 1][j][k], a, range, grid, |t| {
                                format!("y[{i}][{l}][{j}][{k}][{t}]")
                            })?;
                            terms.extend(q.product.terms.iter().map(|&(c, v)| (-c, v)));
                            yj.push(q.products);
                        }
                        model.add_constraint(label, &terms, Sense::Eq, 0.0)?;
                        yl.push(yj);
                    }
                }
                zl.push(z);
            }
            yi.push(yl);
            if head {
                outs.push(zl);
                break;
            }
            let g = gamma[l - 1];
            let mut al = Vec::with_capacity(rows);
            let mut dl = Vec::with_capacity(rows);
            for (j, &z) in zl.iter().enumerate() {
                let a = model.add_variable(VarDef::continuous(format!("a[{i}][{l}][{j}]"), 0.0, m))?;
                let d = model.add_variable(VarDef::binary(format!("delta[{i}][{l}][{j}]")))?;
                branch.push(d);
                encode_relu(&mut model, z, a, d, relu_bounds[l - 1][j])?;
                model.add_constraint("pruning_activation", &[(1.0, a), (-m, g)], Sense::Le, 0.0)?;
                model.add_constraint("pruning_activation", &[(1.0, z), (-m, g)], Sense::Le, 0.0)?;
                model.add_constraint("pruning_activation", &[(-1.0, z), (-m, g)], Sense::Le, 0.0)?;
                al.push(a);
                dl.push(d);
            }
            prev = al.clone();
            zi.push(zl);
            ai.push(al);
            di.push(dl);
        }
        let out = outs.last().expect("head pushed");
        if hyper.loss == Loss::Abs {
            let mut ri = Vec::with_capacity(out.len());
            for (j, (&o, &t)) in out.iter().zip(&data.targets[i]).enumerate() {
                let r = model.add_variable(VarDef::nonneg(format!("r[{i}][{j}]")))?;
                model.add_constraint("abs_loss", &[(1.0, r), (-1.0, o)], Sense::Ge, -t)?;
                model.add_constraint("abs_loss", &[(1.0, r), (1.0, o)], Sense::Ge, t)?;
                model.add_objective_linear(1.0, r)?;
                ri.push(r);
            }
            resid.push(ri);
        } else {
            for (&o, &t) in out.iter().zip(&data.targets[i]) {
                model.add_objective_quadratic(1.0, o, o)?;
                model.add_objective_linear(-2.0 * t, o)?;
                model.add_objective_constant(t * t)?;
            }
        }
        input.push(a0);
        zs.push(zi);
        acts.push(ai);
        deltas.push(di);
        products.push(yi);
    }

    // regularization
    for (wl, ul) in weights.iter().zip(&abs_weights) {
        for (wr, ur) in wl.iter().zip(ul) {
            for (&w, &u) in wr.iter().zip(ur) {
                model.add_objective_linear(hyper.l1_weight(), u)?;
                model.add_objective_quadratic(hyper.l2_weight(), w, w)?;
            }
        }
    }
    for &g in &gamma {
        model.add_objective_linear(hyper.beta, g)?;
    }
    model.freeze();

    let pos = branch_positions(&model, &branch);
    Ok(DenseBuild {
        model,
        arch: arch.clone(),
        hyper: hyper.clone(),
        opts: *opts,
        data: data.clone(),
        gamma,
        weights,
        biases,
        abs_weights,
        digits,
        bias_digits,
        input,
        z: zs,
        a: acts,
        delta: deltas,
        out: outs,
        products,
        resid,
        fixed,
        branch,
        pos,
        struct_bits,
    })
}

enum Replay {
    Conflict,
    Partial,
    Done(Vec<f64>),
}

impl DenseBuild {
    pub fn depth(&self) -> usize {
        self.arch.depth()
    }

    /// Parameters implied by `bits`, or `None` while some digit is unfixed.
    fn params(&self, bits: &[bool]) -> Option<Vec<DenseLayer>> {
        if let Some(n) = &self.fixed {
            return Some(n.layers.clone());
        }
        let grid = self.hyper.grid();
        let decode = |ds: &[VarRef]| -> Option<f64> {
            let mut v = Vec::with_capacity(ds.len());
            for &d in ds {
                v.push(bit_of(&self.pos, d, bits)?);
            }
            Some(grid.decode(v))
        };
        let mut layers = Vec::with_capacity(self.weights.len());
        for (l, wl) in self.weights.iter().enumerate() {
            let mut layer = DenseLayer::zeros(wl.len(), wl[0].len());
            for j in 0..wl.len() {
                for k in 0..wl[j].len() {
                    layer.weights[j][k] = decode(&self.digits[l][j][k])?;
                }
                layer.bias[j] = decode(&self.bias_digits[l][j])?;
            }
            layers.push(layer);
        }
        Some(layers)
    }

    /// Forward pass of sample `i` in which each activation follows its
    /// indicator (`a = z` when on, `0` when off). With `check`, indicators
    /// that contradict the sign of `z`, or activations outside their pruning
    /// box, end the replay with a conflict. With `sink`, every continuous
    /// per-sample value is written out.
    fn replay(&self, params: &[DenseLayer], i: usize, bits: &[bool], check: bool, mut sink: Option<&mut [f64]>) -> Replay {
        let m = self.hyper.big_m;
        let x = &self.data.inputs[i];
        if let Some(s) = sink.as_deref_mut() {
            for (k, &v) in self.input[i].iter().enumerate() {
                s[v.index()] = x[k];
            }
        }
        let mut prev = x.clone();
        let depth = self.depth();
        for (l, layer) in params.iter().enumerate() {
            let head = l == depth;
            let z = layer.affine(&prev);
            if let Some(s) = sink.as_deref_mut() {
                if self.hyper.mode == Mode::TrainQuantized && l > 0 {
                    for (j, yj) in self.products[i][l].iter().enumerate() {
                        for (k, yk) in yj.iter().enumerate() {
                            for (t, &y) in yk.iter().enumerate() {
                                s[y.index()] = if s[self.digits[l][j][k][t].index()] > 0.5 { prev[k] } else { 0.0 };
                            }
                        }
                    }
                }
            }
            if head {
                if let Some(s) = sink.as_deref_mut() {
                    for (j, &o) in self.out[i].iter().enumerate() {
                        s[o.index()] = z[j];
                    }
                    if let Some(ri) = self.resid.get(i) {
                        for (j, &r) in ri.iter().enumerate() {
                            s[r.index()] = (z[j] - self.data.targets[i][j]).abs();
                        }
                    }
                }
                return Replay::Done(z);
            }
            let limit = match bit_of(&self.pos, self.gamma[l], bits) {
                Some(false) => FEAS_TOL,
                _ => m + FEAS_TOL,
            };
            let mut a = vec![0.0; z.len()];
            for (j, &zj) in z.iter().enumerate() {
                let Some(d) = bit_of(&self.pos, self.delta[i][l][j], bits) else {
                    return Replay::Partial;
                };
                if check && ((d && zj < -FEAS_TOL) || (!d && zj > FEAS_TOL) || zj.abs() > limit) {
                    return Replay::Conflict;
                }
                a[j] = if d { zj } else { 0.0 };
                if let Some(s) = sink.as_deref_mut() {
                    s[self.z[i][l][j].index()] = zj;
                    s[self.a[i][l][j].index()] = a[j];
                }
            }
            prev = a;
        }
        unreachable!("head layer returns")
    }
}

impl ExactProblem for DenseBuild {
    fn model(&self) -> &Model {
        &self.model
    }

    fn branch_order(&self) -> &[VarRef] {
        &self.branch
    }

    fn check_exact(&self) -> Result<()> {
        check_exact_mode(&self.hyper)
    }

    fn complete(&self, bits: &[bool]) -> Vec<f64> {
        let mut v = vec![0.0; self.model.num_vars()];
        for (&var, &b) in self.branch.iter().zip(bits) {
            v[var.index()] = f64::from(u8::from(b));
        }
        let params = self.params(bits).expect("all digits fixed");
        for (l, layer) in params.iter().enumerate() {
            for j in 0..layer.rows() {
                for k in 0..layer.cols() {
                    let w = layer.weights[j][k];
                    v[self.weights[l][j][k].index()] = w;
                    v[self.abs_weights[l][j][k].index()] = w.abs();
                }
                v[self.biases[l][j].index()] = layer.bias[j];
            }
        }
        for i in 0..self.data.len() {
            self.replay(&params, i, bits, false, Some(&mut v));
        }
        v
    }

    fn lower_bound(&self, prefix: &[bool]) -> Bound {
        let h = &self.hyper;
        let mut lb = 0.0;
        let mut prev_gamma = true;
        let mut gammas = Vec::with_capacity(self.gamma.len());
        for (l, &g) in self.gamma.iter().enumerate() {
            let gv = bit_of(&self.pos, g, prefix);
            match gv {
                Some(true) if !prev_gamma => return Bound::Infeasible,
                Some(false) if l == 0 => return Bound::Infeasible,
                Some(true) => lb += h.beta,
                _ => {}
            }
            prev_gamma = gv != Some(false);
            gammas.push(gv);
        }
        let grid = h.grid();
        let weight = |l: usize, j: usize, k: usize| -> Option<f64> {
            match &self.fixed {
                Some(n) => Some(n.layers[l].weights[j][k]),
                None => {
                    let mut ds = Vec::with_capacity(h.bits as usize);
                    for &d in &self.digits[l][j][k] {
                        ds.push(bit_of(&self.pos, d, prefix)?);
                    }
                    Some(grid.decode(ds))
                }
            }
        };
        for (l, wl) in self.weights.iter().enumerate() {
            let pruned = gammas.get(l).copied().flatten() == Some(false);
            for (j, wr) in wl.iter().enumerate() {
                for k in 0..wr.len() {
                    if let Some(w) = weight(l, j, k) {
                        if pruned && w.abs() > FEAS_TOL {
                            return Bound::Infeasible;
                        }
                        lb += h.l1_weight() * w.abs() + h.l2_weight() * w * w;
                    }
                }
            }
        }
        if prefix.len() < self.struct_bits {
            return Bound::AtLeast(deflate(lb));
        }
        let params = self.params(prefix).expect("structural bits fixed");
        for (l, layer) in params.iter().enumerate().take(self.depth()) {
            if gammas[l] == Some(false) && layer.bias.iter().any(|b| b.abs() > FEAS_TOL) {
                return Bound::Infeasible;
            }
        }
        for i in 0..self.data.len() {
            match self.replay(&params, i, prefix, true, None) {
                Replay::Conflict => return Bound::Infeasible,
                Replay::Partial => break,
                Replay::Done(out) => lb += sample_loss(h.loss, &out, &self.data.targets[i]),
            }
        }
        Bound::AtLeast(deflate(lb))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bounds::{propagate_bounds, Interval, ParamBox};
    use crate::ir::evaluate_assignment;
    use crate::ir::Assignment;
    use crate::recon::net::TrainedNet;

    fn xor_data() -> Dataset {
        Dataset::new(
            vec![vec![0.0, 0.0], vec![0.0, 1.0], vec![1.0, 0.0], vec![1.0, 1.0]],
            vec![vec![0.0], vec![1.0], vec![1.0], vec![0.0]],
        )
        .unwrap()
    }

    fn xor_net() -> DenseNet {
        DenseNet {
            layers: vec![
                DenseLayer { weights: vec![vec![1.0, 1.0], vec![1.0, 1.0]], bias: vec![0.0, -1.0] },
                DenseLayer { weights: vec![vec![1.0, -2.0]], bias: vec![0.0] },
            ],
            gamma: vec![true],
            quant: None,
        }
    }

    fn verify_build(symmetry: bool) -> DenseBuild {
        let net = xor_net();
        let arch = net.arch();
        let tn = TrainedNet::Dense(net.clone());
        let bounds = propagate_bounds(&crate::arch::ArchSpec::Dense(arch.clone()), &[Interval::new(0.0, 1.0); 2], ParamBox::Fixed(&tn)).unwrap();
        let opts = BuildOptions { symmetry, ..Default::default() };
        build_dense(&arch, &xor_data(), &Hyper::default(), &bounds, Some(&net), &opts).unwrap()
    }

    #[test]
    fn verify_model_accepts_true_trace() {
        let b = verify_build(true);
        let bits: Vec<bool> = std::iter::once(true)
            .chain(b.data.inputs.iter().flat_map(|x| {
                let (h, _) = xor_net().trace(x);
                h[0].0.iter().map(|&z| z > 0.0).collect::<Vec<_>>()
            }))
            .collect();
        let v = b.complete(&bits);
        let r = evaluate_assignment(&b.model, &Assignment::from_values(&b.model, v).unwrap(), 1e-9).unwrap();
        assert!(r.passed(), "{}", r.render());
        // outputs reproduce XOR exactly, so only regularization remains
        assert!((r.objective - XOR_REG).abs() < 1e-12, "{}", r.objective);
    }

    #[test]
    fn names_follow_grammar() {
        let b = verify_build(true);
        for name in ["gamma[1]", "W[1][0][1]", "b[2][0]", "u[2][0][1]", "a[3][0][1]", "z[3][1][1]", "a[3][1][0]", "delta[2][1][1]", "a[1][2][0]"] {
            assert!(b.model.lookup(name).is_some(), "{name}");
        }
        assert_eq!(b.branch_order().len(), 1 + 4 * 2);
    }

    const XOR_REG: f64 = 0.1 * 0.9 * 7.0 + 0.5 * 0.1 * 0.1 * 9.0 + 0.01;

    #[test]
    fn wrong_indicator_is_infeasible() {
        let b = verify_build(true);
        // layer-1 pre-activations: [0, -1], [1, 0], [1, 0], [2, 1]
        for prefix in [&[true, false, false][..], &[true, true, false]] {
            match b.lower_bound(prefix) {
                Bound::AtLeast(lb) => assert!((lb - XOR_REG).abs() < 1e-9),
                Bound::Infeasible => panic!("{prefix:?} is feasible"),
            }
        }
        assert_eq!(b.lower_bound(&[true, false, true]), Bound::Infeasible);
        assert_eq!(b.lower_bound(&[true, false, false, false]), Bound::Infeasible);
        assert_eq!(b.lower_bound(&[false]), Bound::Infeasible);
    }

    #[test]
    fn verify_rejects_small_big_m() {
        let net = xor_net();
        let arch = net.arch();
        let tn = TrainedNet::Dense(net.clone());
        let bounds = propagate_bounds(&crate::arch::ArchSpec::Dense(arch.clone()), &[Interval::new(0.0, 1.0); 2], ParamBox::Fixed(&tn)).unwrap();
        let hyper = Hyper { big_m: 1.5, ..Hyper::default() };
        let e = build_dense(&arch, &xor_data(), &hyper, &bounds, Some(&net), &BuildOptions::default()).unwrap_err();
        assert!(matches!(e, Error::BigMTooSmall { layer: 1, .. }));
    }

    #[test]
    fn bilinear_rejected_for_linear_output() {
        let arch = DenseArch::new(2, vec![2], 1);
        let hyper = Hyper { mode: Mode::TrainBilinear, ..Hyper::default() };
        let bounds = propagate_bounds(&crate::arch::ArchSpec::Dense(arch.clone()), &[Interval::new(0.0, 1.0); 2], ParamBox::from_hyper(&hyper)).unwrap();
        let opts = BuildOptions { linear_output: true, ..Default::default() };
        let e = build_dense(&arch, &xor_data(), &hyper, &bounds, None, &opts).unwrap_err();
        assert!(matches!(e, Error::ModeUnsupported(_)));
        let b = build_dense(&arch, &xor_data(), &hyper, &bounds, None, &BuildOptions::default()).unwrap();
        assert_eq!(b.model.bilinear_constraints().len(), 4);
    }
}
