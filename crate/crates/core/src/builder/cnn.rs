//! Mixed-integer model of a convolutional ReLU network with max pooling and
//! a linear head over the flattened feature map.

use crate::arch::{pool_window, validate_conv, ConvArch, ConvDims, Shape3};
use crate::bounds::{BoundsTable, Interval};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::hyper::{Hyper, Loss, Mode};
use crate::ir::{BilinCon, Model, Sense, VarDef, VarRef, FEAS_TOL};
use crate::recon::net::{correlate, ConvLayer, ConvNet, DenseLayer};

use super::encode::{encode_maxpool, encode_quantized_product, encode_relu, quantized_value};
use super::{bit_of, branch_positions, check_exact_mode, check_mode, deflate, sample_loss, Bound, BuildOptions, ExactProblem};

/// Position of `(c, h, w)` in the flattened vector, `c*H*W + h*W + w`.
pub fn flatten_index(shape: Shape3, c: usize, h: usize, w: usize) -> usize {
    (c * shape.h + h) * shape.w + w
}

/// Product `y = d * a` introduced by a quantized weight, with `src` the
/// flat index of `a` in the layer's input.
#[derive(Debug, Clone, Copy)]
struct ProductLink {
    y: VarRef,
    d: VarRef,
    src: usize,
}

/// A built convolutional model. Layer vectors are 0-based over the
/// convolutional layers; per-sample feature maps are flat and channel-major.
#[derive(Debug)]
pub struct ConvBuild {
    pub model: Model,
    pub arch: ConvArch,
    pub dims: ConvDims,
    pub hyper: Hyper,
    pub opts: BuildOptions,
    pub data: Dataset,
    /// `[layer][c]`.
    pub gamma: Vec<Vec<VarRef>>,
    /// `[layer][kernel index]`, laid out like [`ConvLayer::kernel`].
    pub kernels: Vec<Vec<VarRef>>,
    pub kernel_abs: Vec<Vec<VarRef>>,
    pub kernel_digits: Vec<Vec<Vec<VarRef>>>,
    pub conv_biases: Vec<Vec<VarRef>>,
    pub conv_bias_digits: Vec<Vec<Vec<VarRef>>>,
    /// `[j][f]`.
    pub head_weights: Vec<Vec<VarRef>>,
    pub head_abs: Vec<Vec<VarRef>>,
    pub head_digits: Vec<Vec<Vec<VarRef>>>,
    pub head_biases: Vec<VarRef>,
    pub head_bias_digits: Vec<Vec<VarRef>>,
    /// `[i][flat]`.
    pub input: Vec<Vec<VarRef>>,
    /// `[i][layer][flat]`.
    pub z: Vec<Vec<Vec<VarRef>>>,
    pub a: Vec<Vec<Vec<VarRef>>>,
    pub delta: Vec<Vec<Vec<VarRef>>>,
    /// `[i][layer][flat pooled]`, empty for layers without pooling.
    pub pooled: Vec<Vec<Vec<VarRef>>>,
    /// `[i][layer][flat conv cell]`, `None` for cells outside every window.
    pub zeta: Vec<Vec<Vec<Option<VarRef>>>>,
    pub out: Vec<Vec<VarRef>>,
    pub resid: Vec<Vec<VarRef>>,
    /// `[i][layer]` including the head at index `L`.
    products: Vec<Vec<Vec<ProductLink>>>,
    fixed: Option<ConvNet>,
    branch: Vec<VarRef>,
    pos: Vec<u32>,
    struct_bits: usize,
}

fn push_digits(model: &mut Model, branch: &mut Vec<VarRef>, bits: usize, name: impl Fn(usize) -> String) -> Result<Vec<VarRef>> {
    let mut ds = Vec::with_capacity(bits);
    for t in 0..bits {
        let d = model.add_variable(VarDef::binary(name(t)))?;
        branch.push(d);
        ds.push(d);
    }
    Ok(ds)
}

fn link_quantized(model: &mut Model, label: &str, var: VarRef, digits: &[VarRef], hyper: &Hyper) -> Result<()> {
    let q = quantized_value(digits, hyper.grid());
    let mut terms = vec![(1.0, var)];
    terms.extend(q.terms.iter().map(|&(c, d)| (-c, d)));
    model.add_constraint(label, &terms, Sense::Eq, q.constant)?;
    Ok(())
}

/// Builds the model of a convolutional network over `data`, whose inputs are
/// flattened channel-major. `net` supplies the fixed parameters in verify mode.
pub fn build_cnn(
    arch: &ConvArch,
    data: &Dataset,
    hyper: &Hyper,
    bounds: &BoundsTable,
    net: Option<&ConvNet>,
    opts: &BuildOptions,
) -> Result<ConvBuild> {
    check_mode(hyper, opts)?;
    let dims = validate_conv(arch)?;
    let depth = arch.layers.len();
    if data.input_dim() != dims.input.len() || data.target_dim() != arch.head {
        return Err(Error::ShapeMismatch(format!(
            "dataset has {} features and {} targets, architecture expects {} and {}",
            data.input_dim(),
            data.target_dim(),
            dims.input.len(),
            arch.head
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
        let channels = dims.layers[l - 1].conv.c;
        if opts.per_unit_bounds && lb.units.len() != channels {
            return Err(Error::ShapeMismatch(format!("layer {l} bounds have {} channels, expected {channels}", lb.units.len())));
        }
        let mut row = Vec::with_capacity(channels);
        for c in 0..channels {
            let iv = lb.unit(c, opts.per_unit_bounds);
            if fixed.is_some() {
                let need = iv.lo.abs().max(iv.hi.abs());
                if need > m {
                    return Err(Error::BigMTooSmall { layer: l, bound: need, m });
                }
                row.push(iv);
            } else {
                row.push(Interval::new(iv.lo.max(-m), iv.hi.min(m)));
            }
        }
        relu_bounds.push(row);
    }
    // upper bound of each layer's output activations, per channel
    let act_hi: Vec<Vec<f64>> = relu_bounds
        .iter()
        .map(|row| {
            let layer_hi = row.iter().map(|iv| iv.hi.max(0.0)).fold(0.0, f64::max);
            row.iter().map(|iv| if opts.per_unit_bounds { iv.hi.max(0.0) } else { layer_hi }).collect()
        })
        .collect();

    let quantized = hyper.mode == Mode::TrainQuantized;
    let bits = hyper.bits as usize;
    let (w_box, b_box) = match hyper.mode {
        Mode::TrainQuantized => (hyper.w_max, if hyper.quantize_biases { hyper.w_max } else { m }),
        _ => (m, m),
    };

    let mut model = Model::new();
    let mut branch = Vec::new();

    let mut gamma = Vec::with_capacity(depth);
    for (l, ld) in dims.layers.iter().enumerate() {
        let mut gl = Vec::with_capacity(ld.conv.c);
        for c in 0..ld.conv.c {
            let g = model.add_variable(VarDef::binary(format!("gamma[{}][{c}]", l + 1)))?;
            branch.push(g);
            gl.push(g);
        }
        gamma.push(gl);
    }

    let mut kernels = Vec::with_capacity(depth);
    let mut kernel_abs = Vec::with_capacity(depth);
    let mut kernel_digits = Vec::with_capacity(depth);
    let mut conv_biases = Vec::with_capacity(depth);
    let mut conv_bias_digits = Vec::with_capacity(depth);
    let mut cin = dims.input.c;
    for (li, spec) in arch.layers.iter().enumerate() {
        let l = li + 1;
        let (kh, kw) = spec.kernel;
        let shape = (spec.filters, cin, kh, kw);
        let mut wl = Vec::new();
        let mut ul = Vec::new();
        let mut dl = Vec::new();
        for c in 0..shape.0 {
            for cp in 0..cin {
                for u in 0..kh {
                    for v in 0..kw {
                        let name = format!("Wc[{l}][{c}][{cp}][{u}][{v}]");
                        let idx = wl.len();
                        wl.push(model.add_variable(match &fixed {
                            Some(n) => VarDef::fixed(name, n.layers[li].kernel[idx]),
                            None => VarDef::continuous(name, -w_box, w_box),
                        })?);
                        ul.push(model.add_variable(VarDef::continuous(format!("u[{l}][{c}][{cp}][{u}][{v}]"), 0.0, w_box))?);
                        if quantized {
                            dl.push(push_digits(&mut model, &mut branch, bits, |t| format!("d[{l}][{c}][{cp}][{u}][{v}][{t}]"))?);
                        }
                    }
                }
            }
        }
        let mut bl = Vec::with_capacity(shape.0);
        let mut bd = Vec::new();
        for c in 0..shape.0 {
            let name = format!("bc[{l}][{c}]");
            bl.push(model.add_variable(match &fixed {
                Some(n) => VarDef::fixed(name, n.layers[li].bias[c]),
                None => VarDef::continuous(name, -b_box, b_box),
            })?);
            if quantized && hyper.quantize_biases {
                bd.push(push_digits(&mut model, &mut branch, bits, |t| format!("db[{l}][{c}][{t}]"))?);
            }
        }
        kernels.push(wl);
        kernel_abs.push(ul);
        kernel_digits.push(dl);
        conv_biases.push(bl);
        conv_bias_digits.push(bd);
        cin = spec.filters;
    }

    let lh = depth + 1;
    let flat = dims.flat_len();
    let flat_shape = dims.layers[depth - 1].out();
    let mut head_weights = Vec::with_capacity(arch.head);
    let mut head_abs = Vec::with_capacity(arch.head);
    let mut head_digits = Vec::new();
    let mut head_biases = Vec::with_capacity(arch.head);
    let mut head_bias_digits = Vec::new();
    for j in 0..arch.head {
        let mut wr = Vec::with_capacity(flat);
        let mut ur = Vec::with_capacity(flat);
        let mut dr = Vec::new();
        for f in 0..flat {
            let name = format!("W[{lh}][{j}][{f}]");
            wr.push(model.add_variable(match &fixed {
                Some(n) => VarDef::fixed(name, n.head.weights[j][f]),
                None => VarDef::continuous(name, -w_box, w_box),
            })?);
            ur.push(model.add_variable(VarDef::continuous(format!("u[{lh}][{j}][{f}]"), 0.0, w_box))?);
            if quantized {
                dr.push(push_digits(&mut model, &mut branch, bits, |t| format!("d[{lh}][{j}][{f}][{t}]"))?);
            }
        }
        let name = format!("b[{lh}][{j}]");
        head_biases.push(model.add_variable(match &fixed {
            Some(n) => VarDef::fixed(name, n.head.bias[j]),
            None => VarDef::continuous(name, -b_box, b_box),
        })?);
        if quantized && hyper.quantize_biases {
            head_bias_digits.push(push_digits(&mut model, &mut branch, bits, |t| format!("db[{lh}][{j}][{t}]"))?);
        }
        head_weights.push(wr);
        head_abs.push(ur);
        head_digits.push(dr);
    }
    let struct_bits = branch.len();

    // structural constraints
    for l in 0..depth {
        let channels = gamma[l].len();
        let per = kernels[l].len() / channels;
        for c in 0..channels {
            let g = gamma[l][c];
            for idx in c * per..(c + 1) * per {
                let (w, u) = (kernels[l][idx], kernel_abs[l][idx]);
                if quantized {
                    link_quantized(&mut model, "quant_weight", w, &kernel_digits[l][idx], hyper)?;
                }
                model.add_constraint("l1_linearization", &[(1.0, u), (-1.0, w)], Sense::Ge, 0.0)?;
                model.add_constraint("l1_linearization", &[(1.0, u), (1.0, w)], Sense::Ge, 0.0)?;
                model.add_constraint("prune_weights", &[(1.0, w), (-m, g)], Sense::Le, 0.0)?;
                model.add_constraint("prune_weights", &[(-1.0, w), (-m, g)], Sense::Le, 0.0)?;
            }
            let b = conv_biases[l][c];
            if quantized && hyper.quantize_biases {
                link_quantized(&mut model, "quant_bias", b, &conv_bias_digits[l][c], hyper)?;
            }
            model.add_constraint("prune_biases", &[(1.0, b), (-m, g)], Sense::Le, 0.0)?;
            model.add_constraint("prune_biases", &[(-1.0, b), (-m, g)], Sense::Le, 0.0)?;
        }
        if opts.symmetry {
            for c in 0..channels - 1 {
                let mut terms: Vec<(f64, VarRef)> = kernel_abs[l][c * per..(c + 1) * per].iter().map(|&u| (1.0, u)).collect();
                terms.extend(kernel_abs[l][(c + 1) * per..(c + 2) * per].iter().map(|&u| (-1.0, u)));
                model.add_constraint("symmetry_breaking", &terms, Sense::Ge, 0.0)?;
            }
        }
    }
    for j in 0..arch.head {
        for f in 0..flat {
            let (w, u) = (head_weights[j][f], head_abs[j][f]);
            if quantized {
                link_quantized(&mut model, "quant_weight", w, &head_digits[j][f], hyper)?;
            }
            model.add_constraint("l1_linearization", &[(1.0, u), (-1.0, w)], Sense::Ge, 0.0)?;
            model.add_constraint("l1_linearization", &[(1.0, u), (1.0, w)], Sense::Ge, 0.0)?;
        }
        if quantized && hyper.quantize_biases {
            link_quantized(&mut model, "quant_bias", head_biases[j], &head_bias_digits[j], hyper)?;
        }
    }

    // per-sample variables and constraints
    let grid = hyper.grid();
    let n = data.len();
    let mut input = Vec::with_capacity(n);
    let (mut zs, mut acts, mut deltas, mut pools, mut zetas) = (Vec::new(), Vec::new(), Vec::new(), Vec::new(), Vec::new());
    let mut outs = Vec::with_capacity(n);
    let mut resid = Vec::new();
    let mut products = Vec::with_capacity(n);
    for i in 0..n {
        let x = &data.inputs[i];
        let s0 = dims.input;
        let mut a0 = Vec::with_capacity(s0.len());
        for c in 0..s0.c {
            for h in 0..s0.h {
                for w in 0..s0.w {
                    let v = model.add_variable(VarDef::free(format!("a[{i}][0][{c}][{h}][{w}]")))?;
                    model.add_constraint("input_assignment", &[(1.0, v)], Sense::Eq, x[flatten_index(s0, c, h, w)])?;
                    a0.push(v);
                }
            }
        }
        let mut prev = a0.clone();
        let mut prev_shape = s0;
        let (mut zi, mut ai, mut di, mut pi, mut qi, mut yi) = (Vec::new(), Vec::new(), Vec::new(), Vec::new(), Vec::new(), Vec::new());
        for (li, spec) in arch.layers.iter().enumerate() {
            let l = li + 1;
            let out = dims.layers[li].conv;
            let (kh, kw) = spec.kernel;
            let mut zl = Vec::with_capacity(out.len());
            let mut al = Vec::with_capacity(out.len());
            let mut dl = Vec::with_capacity(out.len());
            let mut links = Vec::new();
            for c in 0..out.c {
                let g = gamma[li][c];
                for h in 0..out.h {
                    for w in 0..out.w {
                        let z = model.add_variable(VarDef::continuous(format!("z[{i}][{l}][{c}][{h}][{w}]"), -m, m))?;
                        let mut terms = vec![(1.0, z), (-1.0, conv_biases[li][c])];
                        let mut bilinear = Vec::new();
                        for cp in 0..prev_shape.c {
                            for u in 0..kh {
                                for v in 0..kw {
                                    let ih = (h * spec.stride + u) as isize - spec.padding as isize;
                                    let iw = (w * spec.stride + v) as isize - spec.padding as isize;
                                    if ih < 0 || iw < 0 || ih as usize >= prev_shape.h || iw as usize >= prev_shape.w {
                                        continue;
                                    }
                                    let src = flatten_index(prev_shape, cp, ih as usize, iw as usize);
                                    let kidx = ((c * prev_shape.c + cp) * kh + u) * kw + v;
                                    let wvar = kernels[li][kidx];
                                    match (hyper.mode, li) {
                                        (Mode::Verify, _) => {
                                            terms.push((-fixed.as_ref().expect("verify").layers[li].kernel[kidx], prev[src]))
                                        }
                                        (_, 0) => terms.push((-x[src], wvar)),
                                        (Mode::TrainBilinear, _) => bilinear.push((-1.0, wvar, prev[src])),
                                        (Mode::TrainQuantized, _) => {
                                            let range = Interval::new(0.0, act_hi[li - 1][cp]);
                                            let q = encode_quantized_product(
                                                &mut model,
                                                &kernel_digits[li][kidx],
                                                prev[src],
                                                range,
                                                grid,
                                                |t| format!("y[{i}][{l}][{c}][{h}][{w}][{cp}][{u}][{v}][{t}]"),
                                            )?;
                                            terms.extend(q.product.terms.iter().map(|&(k, v)| (-k, v)));
                                            links.extend(q.products.iter().zip(&kernel_digits[li][kidx]).map(|(&y, &d)| ProductLink { y, d, src }));
                                        }
                                    }
                                }
                            }
                        }
                        if bilinear.is_empty() {
                            model.add_constraint("conv_map", &terms, Sense::Eq, 0.0)?;
                        } else {
                            model.add_bilinear_constraint(BilinCon { linear: terms, bilinear, sense: Sense::Eq, rhs: 0.0, label: "conv_map".into() })?;
                        }
                        let a = model.add_variable(VarDef::continuous(format!("a[{i}][{l}][{c}][{h}][{w}]"), 0.0, m))?;
                        let d = model.add_variable(VarDef::binary(format!("delta[{i}][{l}][{c}][{h}][{w}]")))?;
                        branch.push(d);
                        encode_relu(&mut model, z, a, d, relu_bounds[li][c])?;
                        model.add_constraint("pruning_activation", &[(1.0, a), (-m, g)], Sense::Le, 0.0)?;
                        model.add_constraint("pruning_activation", &[(1.0, z), (-m, g)], Sense::Le, 0.0)?;
                        model.add_constraint("pruning_activation", &[(-1.0, z), (-m, g)], Sense::Le, 0.0)?;
                        zl.push(z);
                        al.push(a);
                        dl.push(d);
                    }
                }
            }
            let mut pl = Vec::new();
            let mut ql = vec![None; out.len()];
            if let (Some(pool), Some(ps)) = (spec.pool, dims.layers[li].pooled) {
                for c in 0..ps.c {
                    let pool_m = if opts.pool_global_m { m } else { act_hi[li][c] };
                    for ph in 0..ps.h {
                        for pw in 0..ps.w {
                            let p = model.add_variable(VarDef::continuous(format!("p[{i}][{l}][{c}][{ph}][{pw}]"), 0.0, m))?;
                            let mut cells = Vec::new();
                            let mut sel = Vec::new();
                            for (h, w) in pool_window(&pool, ph, pw) {
                                let f = flatten_index(out, c, h, w);
                                let s = model.add_variable(VarDef::binary(format!("zeta[{i}][{l}][{c}][{h}][{w}]")))?;
                                branch.push(s);
                                ql[f] = Some(s);
                                cells.push(al[f]);
                                sel.push(s);
                            }
                            encode_maxpool(&mut model, &cells, p, &sel, pool_m)?;
                            pl.push(p);
                        }
                    }
                }
            }
            prev = if pl.is_empty() { al.clone() } else { pl.clone() };
            prev_shape = dims.layers[li].out();
            zi.push(zl);
            ai.push(al);
            di.push(dl);
            pi.push(pl);
            qi.push(ql);
            yi.push(links);
        }

        // linear head on the flattened map
        let mut oi = Vec::with_capacity(arch.head);
        let mut links = Vec::new();
        for j in 0..arch.head {
            let o = model.add_variable(VarDef::free(format!("a[{i}][{lh}][{j}]")))?;
            let mut terms = vec![(1.0, o), (-1.0, head_biases[j])];
            let mut bilinear = Vec::new();
            for (f, &a) in prev.iter().enumerate() {
                match hyper.mode {
                    Mode::Verify => terms.push((-fixed.as_ref().expect("verify").head.weights[j][f], a)),
                    Mode::TrainBilinear => bilinear.push((-1.0, head_weights[j][f], a)),
                    Mode::TrainQuantized => {
                        let c = f / (flat_shape.h * flat_shape.w);
                        let range = Interval::new(0.0, act_hi[depth - 1][c]);
                        let q = encode_quantized_product(&mut model, &head_digits[j][f], a, range, grid, |t| {
                            format!("y[{i}][{lh}][{j}][{f}][{t}]")
                        })?;
                        terms.extend(q.product.terms.iter().map(|&(k, v)| (-k, v)));
                        links.extend(q.products.iter().zip(&head_digits[j][f]).map(|(&y, &d)| ProductLink { y, d, src: f }));
                    }
                }
            }
            if bilinear.is_empty() {
                model.add_constraint("output_map", &terms, Sense::Eq, 0.0)?;
            } else {
                model.add_bilinear_constraint(BilinCon { linear: terms, bilinear, sense: Sense::Eq, rhs: 0.0, label: "output_map".into() })?;
            }
            oi.push(o);
        }
        yi.push(links);
        if hyper.loss == Loss::Abs {
            let mut ri = Vec::with_capacity(oi.len());
            for (j, (&o, &t)) in oi.iter().zip(&data.targets[i]).enumerate() {
                let r = model.add_variable(VarDef::nonneg(format!("r[{i}][{j}]")))?;
                model.add_constraint("abs_loss", &[(1.0, r), (-1.0, o)], Sense::Ge, -t)?;
                model.add_constraint("abs_loss", &[(1.0, r), (1.0, o)], Sense::Ge, t)?;
                model.add_objective_linear(1.0, r)?;
                ri.push(r);
            }
            resid.push(ri);
        } else {
            for (&o, &t) in oi.iter().zip(&data.targets[i]) {
                model.add_objective_quadratic(1.0, o, o)?;
                model.add_objective_linear(-2.0 * t, o)?;
                model.add_objective_constant(t * t)?;
            }
        }
        input.push(a0);
        zs.push(zi);
        acts.push(ai);
        deltas.push(di);
        pools.push(pi);
        zetas.push(qi);
        outs.push(oi);
        products.push(yi);
    }

    let all_w = kernels.iter().flatten().chain(head_weights.iter().flatten());
    let all_u = kernel_abs.iter().flatten().chain(head_abs.iter().flatten());
    for (&w, &u) in all_w.zip(all_u) {
        model.add_objective_linear(hyper.l1_weight(), u)?;
        model.add_objective_quadratic(hyper.l2_weight(), w, w)?;
    }
    for &g in gamma.iter().flatten() {
        model.add_objective_linear(hyper.beta, g)?;
    }
    model.freeze();

    let pos = branch_positions(&model, &branch);
    Ok(ConvBuild {
        model,
        arch: arch.clone(),
        dims,
        hyper: hyper.clone(),
        opts: *opts,
        data: data.clone(),
        gamma,
        kernels,
        kernel_abs,
        kernel_digits,
        conv_biases,
        conv_bias_digits,
        head_weights,
        head_abs,
        head_digits,
        head_biases,
        head_bias_digits,
        input,
        z: zs,
        a: acts,
        delta: deltas,
        pooled: pools,
        zeta: zetas,
        out: outs,
        resid,
        products,
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

impl ConvBuild {
    fn decode(&self, ds: &[VarRef], bits: &[bool]) -> Option<f64> {
        let mut v = Vec::with_capacity(ds.len());
        for &d in ds {
            v.push(bit_of(&self.pos, d, bits)?);
        }
        Some(self.hyper.grid().decode(v))
    }

    /// Parameters implied by `bits`, or `None` while some digit is unfixed.
    fn params(&self, bits: &[bool]) -> Option<(Vec<ConvLayer>, DenseLayer)> {
        if let Some(n) = &self.fixed {
            return Some((n.layers.clone(), n.head.clone()));
        }
        let mut layers = Vec::with_capacity(self.kernels.len());
        let mut cin = self.dims.input.c;
        for (l, spec) in self.arch.layers.iter().enumerate() {
            let mut layer = ConvLayer::zeros((spec.filters, cin, spec.kernel.0, spec.kernel.1));
            for (idx, ds) in self.kernel_digits[l].iter().enumerate() {
                layer.kernel[idx] = self.decode(ds, bits)?;
            }
            for (c, ds) in self.conv_bias_digits[l].iter().enumerate() {
                layer.bias[c] = self.decode(ds, bits)?;
            }
            layers.push(layer);
            cin = spec.filters;
        }
        let mut head = DenseLayer::zeros(self.arch.head, self.dims.flat_len());
        for j in 0..self.arch.head {
            for f in 0..self.dims.flat_len() {
                head.weights[j][f] = self.decode(&self.head_digits[j][f], bits)?;
            }
            head.bias[j] = self.decode(&self.head_bias_digits[j], bits)?;
        }
        Some((layers, head))
    }

    fn write_products(&self, s: &mut [f64], links: &[ProductLink], input: &[f64]) {
        for link in links {
            s[link.y.index()] = if s[link.d.index()] > 0.5 { input[link.src] } else { 0.0 };
        }
    }

    /// Forward pass of sample `i` in which activations follow their
    /// indicators and each pool copies its selected cell. See the dense
    /// counterpart for `check` and `sink`.
    fn replay(&self, params: &(Vec<ConvLayer>, DenseLayer), i: usize, bits: &[bool], check: bool, mut sink: Option<&mut [f64]>) -> Replay {
        let m = self.hyper.big_m;
        let x = &self.data.inputs[i];
        if let Some(s) = sink.as_deref_mut() {
            for (f, &v) in self.input[i].iter().enumerate() {
                s[v.index()] = x[f];
            }
        }
        let mut prev = x.clone();
        let mut prev_shape = self.dims.input;
        for (l, spec) in self.arch.layers.iter().enumerate() {
            let out = self.dims.layers[l].conv;
            if let Some(s) = sink.as_deref_mut() {
                self.write_products(s, &self.products[i][l], &prev);
            }
            let z = correlate(&prev, prev_shape, &params.0[l], out, spec.stride, spec.padding);
            let plane = out.h * out.w;
            let mut a = vec![0.0; z.len()];
            for (f, &zf) in z.iter().enumerate() {
                let Some(d) = bit_of(&self.pos, self.delta[i][l][f], bits) else {
                    return Replay::Partial;
                };
                if check {
                    let limit = match bit_of(&self.pos, self.gamma[l][f / plane], bits) {
                        Some(false) => FEAS_TOL,
                        _ => m + FEAS_TOL,
                    };
                    if (d && zf < -FEAS_TOL) || (!d && zf > FEAS_TOL) || zf.abs() > limit {
                        return Replay::Conflict;
                    }
                }
                a[f] = if d { zf } else { 0.0 };
                if let Some(s) = sink.as_deref_mut() {
                    s[self.z[i][l][f].index()] = zf;
                    s[self.a[i][l][f].index()] = a[f];
                }
            }
            prev = match (spec.pool, self.dims.layers[l].pooled) {
                (Some(pool), Some(ps)) => {
                    let mut p = vec![0.0; ps.len()];
                    for c in 0..ps.c {
                        for ph in 0..ps.h {
                            for pw in 0..ps.w {
                                let mut chosen = None;
                                let mut count = 0;
                                let mut best = f64::NEG_INFINITY;
                                for (h, w) in pool_window(&pool, ph, pw) {
                                    let f = flatten_index(out, c, h, w);
                                    let zeta = self.zeta[i][l][f].expect("window cell has a selector");
                                    let Some(sel) = bit_of(&self.pos, zeta, bits) else {
                                        return Replay::Partial;
                                    };
                                    best = best.max(a[f]);
                                    if sel {
                                        count += 1;
                                        chosen.get_or_insert(a[f]);
                                    }
                                }
                                let value = chosen.unwrap_or(0.0);
                                if check && (count != 1 || value < best - FEAS_TOL) {
                                    return Replay::Conflict;
                                }
                                let q = flatten_index(ps, c, ph, pw);
                                p[q] = value;
                                if let Some(s) = sink.as_deref_mut() {
                                    s[self.pooled[i][l][q].index()] = value;
                                }
                            }
                        }
                    }
                    p
                }
                _ => a,
            };
            prev_shape = self.dims.layers[l].out();
        }
        let out = params.1.affine(&prev);
        if let Some(s) = sink {
            self.write_products(s, &self.products[i][self.arch.layers.len()], &prev);
            for (j, &o) in self.out[i].iter().enumerate() {
                s[o.index()] = out[j];
            }
            if let Some(ri) = self.resid.get(i) {
                for (j, &r) in ri.iter().enumerate() {
                    s[r.index()] = (out[j] - self.data.targets[i][j]).abs();
                }
            }
        }
        Replay::Done(out)
    }
}

impl ExactProblem for ConvBuild {
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
        let u_max = self.model.var(self.head_abs[0][0]).hi;
        for (l, layer) in params.0.iter().enumerate() {
            for (idx, &w) in layer.kernel.iter().enumerate() {
                v[self.kernels[l][idx].index()] = w;
                v[self.kernel_abs[l][idx].index()] = w.abs();
            }
            for (c, &b) in layer.bias.iter().enumerate() {
                v[self.conv_biases[l][c].index()] = b;
            }
            if self.opts.symmetry {
                // Channel sums of u must be non-increasing. Raising u above |W|
                // is allowed, so lift each channel to the one after it,
                // working backwards; this is the cheapest feasible choice.
                let channels = layer.shape.0;
                let per = layer.kernel.len() / channels;
                let mut need = 0.0f64;
                for c in (0..channels).rev() {
                    let cells = &self.kernel_abs[l][c * per..(c + 1) * per];
                    let mut deficit = need - cells.iter().map(|u| v[u.index()]).sum::<f64>();
                    for u in cells {
                        if deficit <= 0.0 {
                            break;
                        }
                        let room = (u_max - v[u.index()]).min(deficit);
                        v[u.index()] += room;
                        deficit -= room;
                    }
                    need = cells.iter().map(|u| v[u.index()]).sum();
                }
            }
        }
        for j in 0..params.1.rows() {
            for f in 0..params.1.cols() {
                let w = params.1.weights[j][f];
                v[self.head_weights[j][f].index()] = w;
                v[self.head_abs[j][f].index()] = w.abs();
            }
            v[self.head_biases[j].index()] = params.1.bias[j];
        }
        for i in 0..self.data.len() {
            self.replay(&params, i, bits, false, Some(&mut v));
        }
        v
    }

    fn lower_bound(&self, prefix: &[bool]) -> Bound {
        let h = &self.hyper;
        let mut lb = 0.0;
        let mut pruned = Vec::with_capacity(self.gamma.len());
        for gl in &self.gamma {
            let mut row = Vec::with_capacity(gl.len());
            for &g in gl {
                let gv = bit_of(&self.pos, g, prefix);
                if gv == Some(true) {
                    lb += h.beta;
                }
                row.push(gv == Some(false));
            }
            pruned.push(row);
        }
        let reg = |w: f64| h.l1_weight() * w.abs() + h.l2_weight() * w * w;
        for (l, wl) in self.kernels.iter().enumerate() {
            let per = wl.len() / self.gamma[l].len();
            for idx in 0..wl.len() {
                let w = match &self.fixed {
                    Some(n) => Some(n.layers[l].kernel[idx]),
                    None => self.decode(&self.kernel_digits[l][idx], prefix),
                };
                if let Some(w) = w {
                    if pruned[l][idx / per] && w.abs() > FEAS_TOL {
                        return Bound::Infeasible;
                    }
                    lb += reg(w);
                }
            }
        }
        for j in 0..self.arch.head {
            for f in 0..self.dims.flat_len() {
                let w = match &self.fixed {
                    Some(n) => Some(n.head.weights[j][f]),
                    None => self.decode(&self.head_digits[j][f], prefix),
                };
                lb += w.map_or(0.0, reg);
            }
        }
        if prefix.len() < self.struct_bits {
            return Bound::AtLeast(deflate(lb));
        }
        let params = self.params(prefix).expect("structural bits fixed");
        for (l, layer) in params.0.iter().enumerate() {
            if layer.bias.iter().zip(&pruned[l]).any(|(b, &p)| p && b.abs() > FEAS_TOL) {
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
    use crate::arch::ConvLayerSpec;
    use crate::bounds::{propagate_bounds, ParamBox};
    use crate::ir::evaluate_assignment;
    use crate::ir::Assignment;
    use crate::recon::net::TrainedNet;

    fn small_net() -> ConvNet {
        let arch = ConvArch { input: (1, 3, 3), layers: vec![ConvLayerSpec::new(2, 2).with_pool(2, 2)], head: 1 };
        let mut net = ConvNet::zeros(&arch).unwrap();
        net.layers[0].kernel = vec![1.0, 0.0, 0.0, 1.0, 0.5, -0.5, 0.0, 0.0];
        net.layers[0].bias = vec![0.0, 0.25];
        net.head.weights = vec![vec![1.0, -1.0]];
        net.head.bias = vec![0.1];
        net
    }

    fn data() -> Dataset {
        let xs = vec![vec![1.0, 2.0, 0.0, 0.0, 1.0, 3.0, 2.0, 0.0, 1.0], vec![0.0, 0.0, 1.0, 1.0, 0.0, 0.0, 0.0, 2.0, 0.0]];
        Dataset::new(xs, vec![vec![1.0], vec![0.0]]).unwrap()
    }

    fn build(symmetry: bool) -> (ConvBuild, ConvNet) {
        let net = small_net();
        let tn = TrainedNet::Conv(net.clone());
        let spec = crate::arch::ArchSpec::Conv(net.arch.clone());
        let bounds = propagate_bounds(&spec, &[Interval::new(0.0, 3.0); 9], ParamBox::Fixed(&tn)).unwrap();
        let opts = BuildOptions { symmetry, ..Default::default() };
        (build_cnn(&net.arch, &data(), &Hyper::default(), &bounds, Some(&net), &opts).unwrap(), net)
    }

    /// Binary vector from the true forward pass: gammas on, deltas by sign,
    /// first maximal cell selected in each window.
    fn true_bits(b: &ConvBuild, net: &ConvNet) -> Vec<bool> {
        let mut bits = vec![true; 2];
        for x in &b.data.inputs {
            let (tr, _) = net.trace(x).unwrap();
            bits.extend(tr[0].z.iter().map(|&z| z > 0.0));
            let pool = net.arch.layers[0].pool.unwrap();
            let out = b.dims.layers[0].conv;
            for c in 0..out.c {
                let cells: Vec<usize> = pool_window(&pool, 0, 0).map(|(h, w)| flatten_index(out, c, h, w)).collect();
                let best = cells.iter().map(|&f| tr[0].a[f]).fold(f64::NEG_INFINITY, f64::max);
                let first = cells.iter().position(|&f| tr[0].a[f] == best).unwrap();
                bits.extend((0..cells.len()).map(|q| q == first));
            }
        }
        bits
    }

    #[test]
    fn true_trace_is_feasible_and_matches_forward() {
        let (b, net) = build(false);
        let bits = true_bits(&b, &net);
        assert_eq!(bits.len(), b.branch_order().len());
        let v = b.complete(&bits);
        let asg = Assignment::from_values(&b.model, v).unwrap();
        let r = evaluate_assignment(&b.model, &asg, 1e-9).unwrap();
        assert!(r.passed(), "{}", r.render());
        for (i, x) in b.data.inputs.iter().enumerate() {
            let want = net.forward(x).unwrap()[0];
            assert!((asg.get(b.out[i][0]) - want).abs() < 1e-12);
        }
        match b.lower_bound(&bits) {
            Bound::AtLeast(lb) => assert!((lb - r.objective).abs() < 1e-9, "{lb} vs {}", r.objective),
            Bound::Infeasible => panic!("true trace reported infeasible"),
        }
    }

    #[test]
    fn names_follow_grammar() {
        let (b, _) = build(true);
        for name in [
            "gamma[1][1]",
            "Wc[1][1][0][1][0]",
            "bc[1][0]",
            "u[1][0][0][1][1]",
            "W[2][0][1]",
            "b[2][0]",
            "u[2][0][0]",
            "a[1][0][0][2][2]",
            "z[0][1][1][1][1]",
            "delta[0][1][0][0][1]",
            "p[1][1][1][0][0]",
            "zeta[0][1][1][1][0]",
            "a[1][2][0]",
        ] {
            assert!(b.model.lookup(name).is_some(), "{name}");
        }
    }

    #[test]
    fn wrong_pool_selection_is_infeasible() {
        let (b, net) = build(false);
        let mut bits = true_bits(&b, &net);
        // sample 0, channel 0 window: move the selection to a different cell
        let start = 2 + 8;
        let chosen = (0..4).find(|&q| bits[start + q]).unwrap();
        let a = net.trace(&b.data.inputs[0]).unwrap().0[0].a.clone();
        let other = (0..4).find(|&q| a[q] < a[chosen] - 1e-9).unwrap();
        bits[start + chosen] = false;
        bits[start + other] = true;
        assert_eq!(b.lower_bound(&bits[..start + 4]), Bound::Infeasible);
        let v = b.complete(&bits);
        assert!(!b.model.is_feasible(&v, 1e-6));
    }

    #[test]
    fn symmetry_lift_keeps_true_trace_feasible() {
        // channel 0 has |W| sum 2, channel 1 has 1: already ordered
        let (b, net) = build(true);
        let v = b.complete(&true_bits(&b, &net));
        assert!(b.model.is_feasible(&v, 1e-9));
    }

    #[test]
    fn flatten_is_channel_major() {
        let s = Shape3 { c: 2, h: 3, w: 4 };
        let mut seen = vec![false; s.len()];
        let mut expect = 0;
        for c in 0..2 {
            for h in 0..3 {
                for w in 0..4 {
                    let f = flatten_index(s, c, h, w);
                    assert_eq!(f, expect);
                    seen[f] = true;
                    expect += 1;
                }
            }
        }
        assert!(seen.into_iter().all(|x| x));
    }
}
