//! Model size statistics, measured on a built model or forecast from the
//! architecture alone.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use crate::arch::{validate_conv, validate_dense, ArchSpec};
use crate::builder::BuildOptions;
use crate::error::Result;
use crate::hyper::{Hyper, Loss, Mode};
use crate::ir::{Model, VarKind};

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct StatsReport {
    pub continuous: usize,
    pub binary: usize,
    /// Linear rows.
    pub constraints: usize,
    pub bilinear: usize,
    /// Linear and bilinear rows per label.
    pub per_label: BTreeMap<String, usize>,
    pub quadratic_terms: usize,
    /// Variables per family, the part of the name before the first `[`.
    pub families: BTreeMap<String, usize>,
}

impl StatsReport {
    pub fn family(&self, name: &str) -> usize {
        self.families.get(name).copied().unwrap_or(0)
    }

    pub fn label(&self, name: &str) -> usize {
        self.per_label.get(name).copied().unwrap_or(0)
    }

    pub fn render(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "variables {}", self.continuous + self.binary);
        let _ = writeln!(out, "continuous {}", self.continuous);
        let _ = writeln!(out, "binary {}", self.binary);
        let _ = writeln!(out, "constraints {}", self.constraints);
        let _ = writeln!(out, "bilinear {}", self.bilinear);
        let _ = writeln!(out, "quadratic_terms {}", self.quadratic_terms);
        for (k, v) in &self.families {
            let _ = writeln!(out, "family {k} {v}");
        }
        for (k, v) in &self.per_label {
            let _ = writeln!(out, "label {k} {v}");
        }
        out
    }

    fn add_family(&mut self, name: &str, count: usize, binary: bool) {
        if count == 0 {
            return;
        }
        *self.families.entry(name.into()).or_default() += count;
        if binary {
            self.binary += count;
        } else {
            self.continuous += count;
        }
    }

    fn add_label(&mut self, name: &str, count: usize) {
        if count > 0 {
            *self.per_label.entry(name.into()).or_default() += count;
            self.constraints += count;
        }
    }

    fn add_bilinear(&mut self, name: &str, count: usize) {
        if count > 0 {
            *self.per_label.entry(name.into()).or_default() += count;
            self.bilinear += count;
        }
    }
}

/// Counts taken directly from the model.
pub fn model_stats(model: &Model) -> StatsReport {
    let mut s = StatsReport::default();
    for v in model.vars() {
        let family = v.name.split('[').next().unwrap_or(&v.name);
        s.add_family(family, 1, v.kind == VarKind::Binary);
    }
    for row in model.constraints() {
        s.add_label(row.label, 1);
    }
    for b in model.bilinear_constraints() {
        s.add_bilinear(&b.label, 1);
    }
    s.quadratic_terms = model.objective().quadratic.len();
    s
}

/// The statistics a build of `arch` over `n` samples would produce, without
/// building it.
pub fn forecast_stats(arch: &ArchSpec, n: usize, hyper: &Hyper, opts: &BuildOptions) -> Result<StatsReport> {
    let q = hyper.mode == Mode::TrainQuantized;
    let qb = q && hyper.quantize_biases;
    let bits = hyper.bits as usize;
    let abs = hyper.loss == Loss::Abs;
    let l2 = hyper.l2_weight() != 0.0;
    let mut s = StatsReport::default();
    match arch {
        ArchSpec::Dense(a) => {
            let w = validate_dense(a)?;
            let depth = a.depth();
            let out = w[depth + 1];
            let weights = |from: usize, to: usize| (from..=to).map(|l| w[l] * w[l - 1]).sum::<usize>();
            let all_w = weights(1, depth + 1);
            let hidden_w = weights(1, depth);
            let later_w = weights(2, depth + 1);
            let units: usize = w[1..=depth].iter().sum();
            let all_units: usize = w[1..].iter().sum();

            s.add_family("gamma", depth, true);
            s.add_family("W", all_w, false);
            s.add_family("u", all_w, false);
            s.add_family("b", all_units, false);
            s.add_family("d", if q { all_w * bits } else { 0 }, true);
            s.add_family("db", if qb { all_units * bits } else { 0 }, true);
            s.add_family("a", n * (w[0] + units + out), false);
            s.add_family("z", n * units, false);
            s.add_family("delta", n * units, true);
            s.add_family("y", if q { n * later_w * bits } else { 0 }, false);
            s.add_family("r", if abs { n * out } else { 0 }, false);

            s.add_label("root_layer_active", 1);
            s.add_label("layer_ordering", depth - 1);
            s.add_label("quant_weight", if q { all_w } else { 0 });
            s.add_label("quant_bias", if qb { all_units } else { 0 });
            s.add_label("l1_linearization", 2 * all_w);
            s.add_label("prune_weights", 2 * hidden_w);
            s.add_label("prune_biases", 2 * units);
            s.add_label("symmetry_breaking", if opts.symmetry { w[1..=depth].iter().map(|&k| k - 1).sum() } else { 0 });
            s.add_label("input_assignment", n * w[0]);
            let later_units: usize = w[2..=depth].iter().sum();
            if hyper.mode == Mode::TrainBilinear {
                s.add_label("affine_map", n * w[1]);
                s.add_bilinear("affine_map", n * later_units);
                s.add_bilinear("output_map", n * out);
            } else {
                s.add_label("affine_map", n * units);
                s.add_label("output_map", n * out);
            }
            s.add_label("quant_product", if q { 4 * n * later_w * bits } else { 0 });
            for label in ["relu_lower", "relu_identity_lb", "relu_identity_ub", "relu_activation_bound"] {
                s.add_label(label, n * units);
            }
            s.add_label("pruning_activation", 3 * n * units);
            s.add_label("abs_loss", if abs { 2 * n * out } else { 0 });
            s.quadratic_terms = if abs { 0 } else { n * out } + if l2 { all_w } else { 0 };
        }
        ArchSpec::Conv(a) => {
            let dims = validate_conv(a)?;
            let flat = dims.flat_len();
            let head = a.head;
            let mut kernel_total = 0;
            let mut channels = 0;
            let mut cells = 0;
            let mut pooled = 0;
            let mut window_cells = 0;
            let mut products = 0;
            let mut bilinear_rows = 0;
            let mut symmetry = 0;
            let mut prev = dims.input;
            for (l, spec) in a.layers.iter().enumerate() {
                let out = dims.layers[l].conv;
                let (kh, kw) = spec.kernel;
                kernel_total += out.c * prev.c * kh * kw;
                channels += out.c;
                cells += out.len();
                symmetry += out.c - 1;
                let taps = |extent: usize, k: usize, pos: usize| {
                    (0..k).filter(|&u| (pos * spec.stride + u).checked_sub(spec.padding).is_some_and(|i| i < extent)).count()
                };
                let rows_h: Vec<usize> = (0..out.h).map(|h| taps(prev.h, kh, h)).collect();
                let rows_w: Vec<usize> = (0..out.w).map(|w| taps(prev.w, kw, w)).collect();
                if l > 0 {
                    let valid = rows_h.iter().sum::<usize>() * rows_w.iter().sum::<usize>() * prev.c;
                    products += out.c * valid;
                    let nonempty = rows_h.iter().filter(|&&k| k > 0).count() * rows_w.iter().filter(|&&k| k > 0).count();
                    bilinear_rows += if prev.c > 0 { out.c * nonempty } else { 0 };
                }
                if let (Some(p), Some(ps)) = (spec.pool, dims.layers[l].pooled) {
                    pooled += ps.len();
                    window_cells += ps.len() * p.window.0 * p.window.1;
                }
                prev = dims.layers[l].out();
            }
            let head_w = head * flat;

            s.add_family("gamma", channels, true);
            s.add_family("Wc", kernel_total, false);
            s.add_family("u", kernel_total + head_w, false);
            s.add_family("bc", channels, false);
            s.add_family("W", head_w, false);
            s.add_family("b", head, false);
            s.add_family("d", if q { (kernel_total + head_w) * bits } else { 0 }, true);
            s.add_family("db", if qb { (channels + head) * bits } else { 0 }, true);
            s.add_family("a", n * (dims.input.len() + cells + head), false);
            s.add_family("z", n * cells, false);
            s.add_family("delta", n * cells, true);
            s.add_family("p", n * pooled, false);
            s.add_family("zeta", n * window_cells, true);
            s.add_family("y", if q { n * (products + head_w) * bits } else { 0 }, false);
            s.add_family("r", if abs { n * head } else { 0 }, false);

            s.add_label("quant_weight", if q { kernel_total + head_w } else { 0 });
            s.add_label("quant_bias", if qb { channels + head } else { 0 });
            s.add_label("l1_linearization", 2 * (kernel_total + head_w));
            s.add_label("prune_weights", 2 * kernel_total);
            s.add_label("prune_biases", 2 * channels);
            s.add_label("symmetry_breaking", if opts.symmetry { symmetry } else { 0 });
            s.add_label("input_assignment", n * dims.input.len());
            if hyper.mode == Mode::TrainBilinear {
                s.add_label("conv_map", n * (cells - bilinear_rows));
                s.add_bilinear("conv_map", n * bilinear_rows);
                s.add_bilinear("output_map", n * head);
            } else {
                s.add_label("conv_map", n * cells);
                s.add_label("output_map", n * head);
            }
            for label in ["relu_lower", "relu_identity_lb", "relu_identity_ub", "relu_activation_bound"] {
                s.add_label(label, n * cells);
            }
            s.add_label("pruning_activation", 3 * n * cells);
            s.add_label("pool_select", n * pooled);
            s.add_label("pool_lb", n * window_cells);
            s.add_label("pool_ub", n * window_cells);
            s.add_label("quant_product", if q { 4 * n * (products + head_w) * bits } else { 0 });
            s.add_label("abs_loss", if abs { 2 * n * head } else { 0 });
            s.quadratic_terms = if abs { 0 } else { n * head } + if l2 { kernel_total + head_w } else { 0 };
        }
    }
    Ok(s)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_model_counts_zero() {
        let mut m = Model::new();
        m.freeze();
        assert_eq!(model_stats(&m), StatsReport::default());
    }
}
