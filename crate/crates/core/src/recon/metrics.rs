//! Accuracy, sparsity, retained structure, and the two summary tables.

use std::fmt::Write as _;

use rayon::prelude::*;

use crate::data::{target_class, Dataset};
use crate::error::{Error, Result};
use crate::hyper::{Hyper, Loss};

use super::net::{DenseLayer, DenseNet, TrainedNet};

/// Weights at or below this magnitude count as zero.
pub const ZERO_TOL: f64 = 1e-6;

/// Objective terms recomputed from a network, without the optimization model.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ObjectiveBreakdown {
    pub loss: f64,
    pub l1: f64,
    pub l2: f64,
    pub structural: f64,
}

impl ObjectiveBreakdown {
    pub fn total(&self) -> f64 {
        self.loss + self.l1 + self.l2 + self.structural
    }
}

/// Objective of `net` on `data` under `hyper`: loss over all samples plus the
/// elastic-net terms over every weight and `beta` per retained layer or channel.
pub fn direct_objective(net: &TrainedNet, data: &Dataset, hyper: &Hyper) -> Result<ObjectiveBreakdown> {
    let mut loss = 0.0;
    for (x, t) in data.inputs.iter().zip(&data.targets) {
        let out = net.forward(x)?;
        loss += out
            .iter()
            .zip(t)
            .map(|(o, t)| match hyper.loss {
                Loss::Squared => (o - t) * (o - t),
                Loss::Abs => (o - t).abs(),
            })
            .sum::<f64>();
    }
    let (weights, kept): (Vec<f64>, usize) = match net {
        TrainedNet::Dense(n) => {
            (n.layers.iter().flat_map(|l| l.weights.iter().flatten().copied()).collect(), n.gamma.iter().filter(|&&g| g).count())
        }
        TrainedNet::Conv(n) => {
            let mut w: Vec<f64> = n.layers.iter().flat_map(|l| l.kernel.iter().copied()).collect();
            w.extend(n.head.weights.iter().flatten());
            (w, n.gamma.iter().flatten().filter(|&&g| g).count())
        }
    };
    Ok(ObjectiveBreakdown {
        loss,
        l1: hyper.l1_weight() * weights.iter().map(|w| w.abs()).sum::<f64>(),
        l2: hyper.l2_weight() * weights.iter().map(|w| w * w).sum::<f64>(),
        structural: hyper.beta * kept as f64,
    })
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct MetricsReport {
    /// Percent of evaluated samples classified correctly.
    pub accuracy: f64,
    pub samples: usize,
    /// Dense: retained units per hidden layer.
    pub retained_units: Vec<usize>,
    /// Dense: percent of zero incoming weights per hidden layer, `None` when
    /// the layer is pruned.
    pub layer_sparsity: Vec<Option<f64>>,
    /// Dense: percent of hidden units not retained, per hidden layer.
    pub unit_sparsity: Vec<Option<f64>>,
    /// Convolutional: retained and total filters.
    pub retained_filters: Option<(usize, usize)>,
    /// Units of a dense hidden layer after the convolutions, if any.
    pub hidden_neurons: Option<usize>,
    pub conv_sparsity: Option<f64>,
    /// Percent of zero weights in the output layer.
    pub head_sparsity: f64,
    /// Optimality gap reported by the solver, in percent.
    pub gap: Option<f64>,
    pub breakdown: Option<ObjectiveBreakdown>,
}

fn percent_zero<'a>(ws: impl IntoIterator<Item = &'a f64>) -> f64 {
    let (mut zero, mut total) = (0usize, 0usize);
    for w in ws {
        total += 1;
        zero += usize::from(w.abs() <= ZERO_TOL);
    }
    if total == 0 {
        0.0
    } else {
        100.0 * zero as f64 / total as f64
    }
}

fn any_nonzero<'a>(mut ws: impl Iterator<Item = &'a f64>) -> bool {
    ws.any(|w| w.abs() > ZERO_TOL)
}

/// A hidden unit counts as retained when its layer is kept and it has both a
/// nonzero incoming and a nonzero outgoing weight.
fn retained(net: &DenseNet, l: usize) -> usize {
    if !net.gamma[l] {
        return 0;
    }
    let (layer, next): (&DenseLayer, &DenseLayer) = (&net.layers[l], &net.layers[l + 1]);
    (0..layer.rows())
        .filter(|&j| any_nonzero(layer.weights[j].iter()) && any_nonzero(next.weights.iter().map(|r| &r[j])))
        .count()
}

/// Metrics of `net` over the samples `eval` of `data`. `gap` is the solver's
/// reported gap as a fraction.
pub fn metrics(net: &TrainedNet, data: &Dataset, eval: &[usize], gap: Option<f64>) -> Result<MetricsReport> {
    if let Some(&i) = eval.iter().find(|&&i| i >= data.len()) {
        return Err(Error::OutOfRange(format!("sample {i} of {}", data.len())));
    }
    let hits = eval
        .par_iter()
        .map(|&i| Ok(usize::from(target_class(&net.forward(&data.inputs[i])?) == target_class(&data.targets[i]))))
        .collect::<Result<Vec<usize>>>()?
        .into_iter()
        .sum::<usize>();
    let mut r = MetricsReport {
        accuracy: if eval.is_empty() { 0.0 } else { 100.0 * hits as f64 / eval.len() as f64 },
        samples: eval.len(),
        gap: gap.map(|g| 100.0 * g),
        ..Default::default()
    };
    match net {
        TrainedNet::Dense(n) => {
            for l in 0..n.depth() {
                let kept = retained(n, l);
                let rows = n.layers[l].rows();
                r.retained_units.push(kept);
                r.layer_sparsity.push(n.gamma[l].then(|| percent_zero(n.layers[l].weights.iter().flatten())));
                r.unit_sparsity.push(n.gamma[l].then(|| 100.0 * (rows - kept) as f64 / rows as f64));
            }
            r.head_sparsity = percent_zero(n.layers[n.depth()].weights.iter().flatten());
        }
        TrainedNet::Conv(n) => {
            let flags: Vec<bool> = n.gamma.iter().flatten().copied().collect();
            r.retained_filters = Some((flags.iter().filter(|&&g| g).count(), flags.len()));
            r.conv_sparsity = Some(percent_zero(n.layers.iter().flat_map(|l| l.kernel.iter())));
            r.head_sparsity = percent_zero(n.head.weights.iter().flatten());
        }
    }
    Ok(r)
}

fn pct(v: Option<f64>) -> String {
    v.map_or_else(|| "-".into(), |v| format!("{v:.1}"))
}

fn bracket(items: impl IntoIterator<Item = String>) -> String {
    format!("[{}]", items.into_iter().collect::<Vec<_>>().join(", "))
}

/// Left-aligned columns separated by two spaces, trailing space trimmed.
fn align(rows: &[Vec<String>]) -> String {
    let cols = rows.iter().map(Vec::len).max().unwrap_or(0);
    let widths: Vec<usize> =
        (0..cols).map(|c| rows.iter().filter_map(|r| r.get(c)).map(|s| s.chars().count()).max().unwrap_or(0)).collect();
    let mut out = String::new();
    for row in rows {
        let mut line = String::new();
        for (c, cell) in row.iter().enumerate() {
            let _ = write!(line, "{cell:<w$}  ", w = widths[c]);
        }
        out.push_str(line.trim_end());
        out.push('\n');
    }
    out
}

/// Cells of one dense summary row: retained units per hidden layer, sparsity
/// per hidden layer, accuracy, and gap.
pub fn dense_row(r: &MetricsReport) -> [String; 4] {
    [
        bracket(r.retained_units.iter().map(usize::to_string)),
        bracket(r.layer_sparsity.iter().map(|&s| pct(s))),
        format!("{:.1}", r.accuracy),
        pct(r.gap),
    ]
}

/// Summary table of dense runs, one row per named report.
pub fn dense_table(runs: &[(&str, &MetricsReport)]) -> String {
    let mut rows = vec![["Dataset", "Hidden Layers", "Sparsity (%)", "Test Accuracy (%)", "MIP Gap (%)"].map(String::from).to_vec()];
    for (name, r) in runs {
        let mut row = vec![name.to_string()];
        row.extend(dense_row(r));
        rows.push(row);
    }
    align(&rows)
}

/// Metric and value pairs of a convolutional run.
pub fn conv_rows(r: &MetricsReport) -> Vec<(&'static str, String)> {
    let pct_sign = |v: Option<f64>| v.map_or_else(|| "-".into(), |v| format!("{v:.1}%"));
    vec![
        ("Test Accuracy", pct_sign(Some(r.accuracy))),
        ("Retained Filters", r.retained_filters.map_or_else(|| "-".into(), |(k, n)| format!("{k} of {n}"))),
        ("Hidden Neurons (Dense)", r.hidden_neurons.map_or_else(|| "-".into(), |h| h.to_string())),
        ("CNN Weight Sparsity", pct_sign(r.conv_sparsity)),
        ("Dense Weight Sparsity", pct_sign(Some(r.head_sparsity))),
        ("Final MIP Gap", pct_sign(r.gap)),
    ]
}

pub fn conv_table(r: &MetricsReport) -> String {
    let mut rows = vec![vec!["Metric".to_string(), "Value".to_string()]];
    rows.extend(conv_rows(r).into_iter().map(|(k, v)| vec![k.to_string(), v]));
    align(&rows)
}

/// Machine-readable `key value` lines.
pub fn render_kv(r: &MetricsReport) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "accuracy {:.4}", r.accuracy);
    let _ = writeln!(out, "samples {}", r.samples);
    for (l, ((&k, s), u)) in r.retained_units.iter().zip(&r.layer_sparsity).zip(&r.unit_sparsity).enumerate() {
        let _ = writeln!(out, "layer {} retained_units {k} weight_sparsity {} unit_sparsity {}", l + 1, pct(*s), pct(*u));
    }
    if let Some((k, n)) = r.retained_filters {
        let _ = writeln!(out, "retained_filters {k} {n}");
    }
    if let Some(s) = r.conv_sparsity {
        let _ = writeln!(out, "conv_sparsity {s:.4}");
    }
    let _ = writeln!(out, "head_sparsity {:.4}", r.head_sparsity);
    let _ = writeln!(out, "gap {}", r.gap.map_or_else(|| "-".into(), |g| format!("{g:.4}")));
    if let Some(b) = r.breakdown {
        let _ = writeln!(out, "objective {}", b.total());
        let _ = writeln!(out, "objective_loss {}", b.loss);
        let _ = writeln!(out, "objective_l1 {}", b.l1);
        let _ = writeln!(out, "objective_l2 {}", b.l2);
        let _ = writeln!(out, "objective_structural {}", b.structural);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::arch::DenseArch;

    #[test]
    fn wbc_row() {
        let r = MetricsReport {
            accuracy: 98.2,
            retained_units: vec![1, 0, 0],
            layer_sparsity: vec![Some(63.6), None, None],
            gap: Some(4.0),
            ..Default::default()
        };
        let t = dense_table(&[("WBC", &r)]);
        let row = t.lines().nth(1).unwrap();
        let cells: Vec<&str> = row.split("  ").map(str::trim).filter(|c| !c.is_empty()).collect();
        assert_eq!(cells, ["WBC", "[1, 0, 0]", "[63.6, -, -]", "98.2", "4.0"]);
    }

    #[test]
    fn all_zero_net() {
        let arch = DenseArch::new(2, vec![3], 1);
        let net = TrainedNet::Dense(DenseNet::zeros(&arch));
        let data = Dataset::new(vec![vec![1.0, 2.0]; 5], vec![vec![0.0], vec![0.0], vec![0.0], vec![1.0], vec![1.0]]).unwrap();
        let r = metrics(&net, &data, &[0, 1, 2, 3, 4], None).unwrap();
        assert!((r.accuracy - 60.0).abs() < 1e-12);
        assert_eq!(r.layer_sparsity, vec![Some(100.0)]);
        assert_eq!(r.retained_units, vec![0]);
        assert_eq!(r.head_sparsity, 100.0);
    }

    #[test]
    fn bad_index() {
        let arch = DenseArch::new(1, vec![1], 1);
        let net = TrainedNet::Dense(DenseNet::zeros(&arch));
        let data = Dataset::new(vec![vec![1.0]], vec![vec![0.0]]).unwrap();
        assert!(matches!(metrics(&net, &data, &[1], None), Err(Error::OutOfRange(_))));
    }
}
