//! Pre-activation bounds that instantiate the big-M constants of every ReLU
//! encoding.
//!
//! Two routes are provided: interval propagation, sound for every parameter
//! inside its box, and empirical calibration from forward passes of a fixed
//! network. Either way each ReLU layer ends up with `z_lo <= 0 <= z_hi`.

use std::fmt::{self, Write as _};
use std::str::FromStr;

use crate::arch::{validate_conv, validate_dense, ArchSpec, ConvArch, DenseArch, Shape3};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::hyper::{Hyper, Mode};
use crate::recon::net::{ConvNet, DenseNet, TrainedNet};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
}

impl Interval {
    pub const ZERO: Interval = Interval { lo: 0.0, hi: 0.0 };

    pub fn new(lo: f64, hi: f64) -> Self {
        debug_assert!(lo <= hi, "[{lo}, {hi}]");
        Self { lo, hi }
    }

    pub fn point(v: f64) -> Self {
        Self { lo: v, hi: v }
    }

    pub fn symmetric(r: f64) -> Self {
        Self { lo: -r, hi: r }
    }

    pub fn add(self, o: Interval) -> Self {
        Self { lo: self.lo + o.lo, hi: self.hi + o.hi }
    }

    /// Product using the four endpoint combinations.
    pub fn mul(self, o: Interval) -> Self {
        let p = [self.lo * o.lo, self.lo * o.hi, self.hi * o.lo, self.hi * o.hi];
        Self { lo: p.iter().copied().fold(f64::INFINITY, f64::min), hi: p.iter().copied().fold(f64::NEG_INFINITY, f64::max) }
    }

    pub fn relu(self) -> Self {
        Self { lo: self.lo.max(0.0), hi: self.hi.max(0.0) }
    }

    pub fn union(self, o: Interval) -> Self {
        Self { lo: self.lo.min(o.lo), hi: self.hi.max(o.hi) }
    }

    /// Elementwise max of two intervals.
    pub fn max(self, o: Interval) -> Self {
        Self { lo: self.lo.max(o.lo), hi: self.hi.max(o.hi) }
    }

    pub fn with_zero(self) -> Self {
        Self { lo: self.lo.min(0.0), hi: self.hi.max(0.0) }
    }

    pub fn contains(self, v: f64) -> bool {
        self.lo <= v && v <= self.hi
    }

    pub fn contains_interval(self, o: Interval) -> bool {
        self.lo <= o.lo && o.hi <= self.hi
    }

    const EMPTY: Interval = Interval { lo: f64::INFINITY, hi: f64::NEG_INFINITY };
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Provenance {
    Interval,
    Sampled,
}

impl fmt::Display for Provenance {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Provenance::Interval => "interval",
            Provenance::Sampled => "sampled",
        })
    }
}

impl FromStr for Provenance {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "interval" => Ok(Provenance::Interval),
            "sampled" => Ok(Provenance::Sampled),
            _ => Err(Error::Config(format!("unknown bounds provenance `{s}`"))),
        }
    }
}

/// Bounds of one layer: the collapsed layer interval and one interval per
/// unit (dense) or per output channel (convolutional).
#[derive(Debug, Clone, PartialEq)]
pub struct LayerBounds {
    pub z: Interval,
    pub units: Vec<Interval>,
}

impl LayerBounds {
    fn from_units(units: Vec<Interval>) -> Self {
        let units: Vec<Interval> = units.into_iter().map(Interval::with_zero).collect();
        let z = units.iter().fold(Interval::ZERO, |acc, &u| acc.union(u));
        Self { z, units }
    }

    pub fn z_lo(&self) -> f64 {
        self.z.lo
    }

    pub fn z_hi(&self) -> f64 {
        self.z.hi
    }

    /// Upper bound on the post-ReLU activation.
    pub fn a_hi(&self) -> f64 {
        self.z.hi.max(0.0)
    }

    /// Interval used for unit (or channel) `j`.
    pub fn unit(&self, j: usize, per_unit: bool) -> Interval {
        if per_unit {
            self.units[j]
        } else {
            self.z
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BoundsTable {
    /// ReLU layers `1..=L`.
    pub layers: Vec<LayerBounds>,
    /// Linear head `L+1` (no ReLU; recorded for reference).
    pub head: LayerBounds,
    pub provenance: Provenance,
}

impl BoundsTable {
    pub fn layer(&self, l: usize) -> Result<&LayerBounds> {
        l.checked_sub(1).and_then(|i| self.layers.get(i)).ok_or(Error::BoundsMissing(l))
    }

    /// Text table: `layer unit z_lo z_hi provenance`, `*` for the collapsed row.
    pub fn to_text(&self) -> String {
        let mut out = String::from("# layer unit z_lo z_hi provenance\n");
        let rows = self.layers.iter().chain(std::iter::once(&self.head));
        for (i, lb) in rows.enumerate() {
            let l = i + 1;
            let _ = writeln!(out, "{l} * {} {} {}", fmt_num(lb.z.lo), fmt_num(lb.z.hi), self.provenance);
            for (j, u) in lb.units.iter().enumerate() {
                let _ = writeln!(out, "{l} {j} {} {} {}", fmt_num(u.lo), fmt_num(u.hi), self.provenance);
            }
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut layers: Vec<LayerBounds> = Vec::new();
        let mut provenance = None;
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let bad = |msg: &str| Error::Parse { path: "bounds".into(), line: lineno + 1, msg: msg.to_string() };
            let f: Vec<&str> = line.split_whitespace().collect();
            if f.len() != 5 {
                return Err(bad("expected 5 fields"));
            }
            let l: usize = f[0].parse().map_err(|_| bad("bad layer"))?;
            let lo: f64 = f[2].parse().map_err(|_| bad("bad z_lo"))?;
            let hi: f64 = f[3].parse().map_err(|_| bad("bad z_hi"))?;
            provenance = Some(f[4].parse()?);
            if l == 0 || l > layers.len() + 1 {
                return Err(bad("layers out of order"));
            }
            if f[1] == "*" {
                if l != layers.len() + 1 {
                    return Err(bad("duplicate layer row"));
                }
                layers.push(LayerBounds { z: Interval::new(lo, hi), units: Vec::new() });
            } else {
                layers[l - 1].units.push(Interval::new(lo, hi));
            }
        }
        let head = layers.pop().ok_or(Error::BoundsMissing(1))?;
        Ok(Self { layers, head, provenance: provenance.unwrap_or(Provenance::Interval) })
    }
}

/// Shortest round-trip decimal, with `-0` normalized.
fn fmt_num(v: f64) -> String {
    if v == 0.0 {
        "0".into()
    } else {
        format!("{v}")
    }
}

/// How the parameters may vary during propagation.
#[derive(Debug, Clone, Copy)]
pub enum ParamBox<'a> {
    /// Every weight in `weight`, every bias in `bias`.
    Uniform { weight: Interval, bias: Interval },
    /// Parameters fixed to a concrete network.
    Fixed(&'a TrainedNet),
}

impl ParamBox<'_> {
    /// Parameter boxes implied by a training mode.
    pub fn from_hyper(h: &Hyper) -> ParamBox<'static> {
        match h.mode {
            Mode::TrainQuantized => ParamBox::Uniform {
                weight: Interval::symmetric(h.w_max),
                bias: Interval::symmetric(if h.quantize_biases { h.w_max } else { h.big_m }),
            },
            _ => ParamBox::Uniform { weight: Interval::symmetric(h.big_m), bias: Interval::symmetric(h.big_m) },
        }
    }
}

/// Interval forward pass. `input_box` has one interval per input feature
/// (channel-major for convolutional inputs).
pub fn propagate_bounds(arch: &ArchSpec, input_box: &[Interval], params: ParamBox<'_>) -> Result<BoundsTable> {
    if input_box.len() != arch.input_len() {
        return Err(Error::ShapeMismatch(format!("input box has {} entries, expected {}", input_box.len(), arch.input_len())));
    }
    if input_box.iter().any(|iv| !iv.lo.is_finite() || !iv.hi.is_finite()) {
        return Err(Error::ShapeMismatch("input box must be finite".into()));
    }
    match arch {
        ArchSpec::Dense(a) => propagate_dense(a, input_box, params),
        ArchSpec::Conv(a) => propagate_conv(a, input_box, params),
    }
}

fn propagate_dense(arch: &DenseArch, input_box: &[Interval], params: ParamBox<'_>) -> Result<BoundsTable> {
    let widths = validate_dense(arch)?;
    let fixed = match params {
        ParamBox::Fixed(TrainedNet::Dense(n)) => {
            n.check_shape(arch)?;
            Some(n)
        }
        ParamBox::Fixed(_) => return Err(Error::ShapeMismatch("expected a dense network".into())),
        ParamBox::Uniform { .. } => None,
    };
    let weight = |l: usize, j: usize, k: usize| match (fixed, params) {
        (Some(n), _) => Interval::point(n.layers[l].weights[j][k]),
        (None, ParamBox::Uniform { weight, .. }) => weight,
        _ => unreachable!(),
    };
    let bias = |l: usize, j: usize| match (fixed, params) {
        (Some(n), _) => Interval::point(n.layers[l].bias[j]),
        (None, ParamBox::Uniform { bias, .. }) => bias,
        _ => unreachable!(),
    };
    let mut act: Vec<Interval> = input_box.to_vec();
    let mut layers = Vec::new();
    let depth = arch.depth();
    let mut head = None;
    for l in 0..=depth {
        let z: Vec<Interval> = (0..widths[l + 1])
            .map(|j| act.iter().enumerate().fold(bias(l, j), |acc, (k, &a)| acc.add(weight(l, j, k).mul(a))))
            .collect();
        if l == depth {
            head = Some(LayerBounds { z: z.iter().fold(Interval::EMPTY, |acc, &u| acc.union(u)), units: z });
        } else {
            act = z.iter().map(|iv| iv.relu()).collect();
            layers.push(LayerBounds::from_units(z));
        }
    }
    Ok(BoundsTable { layers, head: head.expect("head layer"), provenance: Provenance::Interval })
}

fn propagate_conv(arch: &ConvArch, input_box: &[Interval], params: ParamBox<'_>) -> Result<BoundsTable> {
    let dims = validate_conv(arch)?;
    let fixed: Option<&ConvNet> = match params {
        ParamBox::Fixed(TrainedNet::Conv(n)) => {
            n.check_shape(arch)?;
            Some(n)
        }
        ParamBox::Fixed(_) => return Err(Error::ShapeMismatch("expected a convolutional network".into())),
        ParamBox::Uniform { .. } => None,
    };
    let mut act: Vec<Interval> = input_box.to_vec();
    let mut in_shape: Shape3 = dims.input;
    let mut layers = Vec::new();
    for (l, spec) in arch.layers.iter().enumerate() {
        let out = dims.layers[l].conv;
        let (kh, kw) = spec.kernel;
        let mut z = vec![Interval::ZERO; out.len()];
        for c in 0..out.c {
            for h in 0..out.h {
                for w in 0..out.w {
                    let mut acc = match (fixed, params) {
                        (Some(n), _) => Interval::point(n.layers[l].bias[c]),
                        (None, ParamBox::Uniform { bias, .. }) => bias,
                        _ => unreachable!(),
                    };
                    for cp in 0..in_shape.c {
                        for u in 0..kh {
                            for v in 0..kw {
                                let ih = (h * spec.stride + u) as isize - spec.padding as isize;
                                let iw = (w * spec.stride + v) as isize - spec.padding as isize;
                                if ih < 0 || iw < 0 || ih as usize >= in_shape.h || iw as usize >= in_shape.w {
                                    continue;
                                }
                                let a = act[(cp * in_shape.h + ih as usize) * in_shape.w + iw as usize];
                                let wt = match (fixed, params) {
                                    (Some(n), _) => Interval::point(n.layers[l].at(c, cp, u, v)),
                                    (None, ParamBox::Uniform { weight, .. }) => weight,
                                    _ => unreachable!(),
                                };
                                acc = acc.add(wt.mul(a));
                            }
                        }
                    }
                    z[(c * out.h + h) * out.w + w] = acc;
                }
            }
        }
        let per_channel: Vec<Interval> = (0..out.c)
            .map(|c| z[c * out.h * out.w..(c + 1) * out.h * out.w].iter().fold(Interval::EMPTY, |acc, &u| acc.union(u)))
            .collect();
        layers.push(LayerBounds::from_units(per_channel));
        let a: Vec<Interval> = z.iter().map(|iv| iv.relu()).collect();
        act = match (spec.pool, dims.layers[l].pooled) {
            (Some(p), Some(ps)) => {
                let mut pooled = vec![Interval::EMPTY; ps.len()];
                for c in 0..ps.c {
                    for h in 0..ps.h {
                        for w in 0..ps.w {
                            let slot = &mut pooled[(c * ps.h + h) * ps.w + w];
                            for (ch, cw) in crate::arch::pool_window(&p, h, w) {
                                let cell = a[(c * out.h + ch) * out.w + cw];
                                *slot = if slot.lo > slot.hi { cell } else { slot.max(cell) };
                            }
                        }
                    }
                }
                pooled
            }
            _ => a,
        };
        in_shape = dims.layers[l].out();
    }
    let head_units: Vec<Interval> = (0..arch.head)
        .map(|j| {
            let b = match (fixed, params) {
                (Some(n), _) => Interval::point(n.head.bias[j]),
                (None, ParamBox::Uniform { bias, .. }) => bias,
                _ => unreachable!(),
            };
            act.iter().enumerate().fold(b, |acc, (f, &a)| {
                let w = match (fixed, params) {
                    (Some(n), _) => Interval::point(n.head.weights[j][f]),
                    (None, ParamBox::Uniform { weight, .. }) => weight,
                    _ => unreachable!(),
                };
                acc.add(w.mul(a))
            })
        })
        .collect();
    let head = LayerBounds { z: head_units.iter().fold(Interval::EMPTY, |acc, &u| acc.union(u)), units: head_units };
    Ok(BoundsTable { layers, head, provenance: Provenance::Interval })
}

/// Empirical bounds from forward passes of a fixed network over `data`,
/// widened by `(1 + slack)` and then to include zero.
pub fn calibrate_from_samples(net: &TrainedNet, data: &Dataset, slack: f64) -> Result<BoundsTable> {
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let widen = |iv: Interval| {
        let lo = if iv.lo < 0.0 { iv.lo * (1.0 + slack) } else { iv.lo };
        let hi = if iv.hi > 0.0 { iv.hi * (1.0 + slack) } else { iv.hi };
        Interval::new(lo, hi)
    };
    let (mut units, mut head): (Vec<Vec<Interval>>, Vec<Interval>) = (Vec::new(), Vec::new());
    let mut observe = |hidden: Vec<Vec<f64>>, groups: Vec<usize>, out: &[f64]| {
        if units.is_empty() {
            units = groups.iter().map(|&g| vec![Interval::EMPTY; g]).collect();
            head = vec![Interval::EMPTY; out.len()];
        }
        for (l, z) in hidden.iter().enumerate() {
            let per = z.len() / groups[l];
            for (idx, &v) in z.iter().enumerate() {
                let slot = &mut units[l][idx / per];
                *slot = slot.union(Interval::point(v));
            }
        }
        for (slot, &v) in head.iter_mut().zip(out) {
            *slot = slot.union(Interval::point(v));
        }
    };
    match net {
        TrainedNet::Dense(n) => {
            for x in &data.inputs {
                let (hidden, out) = check_dense(n, x)?;
                let groups = hidden.iter().map(Vec::len).collect();
                observe(hidden, groups, &out);
            }
        }
        TrainedNet::Conv(n) => {
            for x in &data.inputs {
                let (traces, out) = n.trace(x)?;
                let groups = n.layers.iter().map(|l| l.shape.0).collect();
                observe(traces.into_iter().map(|t| t.z).collect(), groups, &out);
            }
        }
    }
    let layers = units.into_iter().map(|u| LayerBounds::from_units(u.into_iter().map(widen).collect())).collect();
    let head_units: Vec<Interval> = head.into_iter().map(widen).collect();
    let head = LayerBounds { z: head_units.iter().fold(Interval::EMPTY, |acc, &u| acc.union(u)), units: head_units };
    Ok(BoundsTable { layers, head, provenance: Provenance::Sampled })
}

fn check_dense(n: &DenseNet, x: &[f64]) -> Result<(Vec<Vec<f64>>, Vec<f64>)> {
    if x.len() != n.layers[0].cols() {
        return Err(Error::ShapeMismatch(format!("input length {} != {}", x.len(), n.layers[0].cols())));
    }
    let (hidden, out) = n.trace(x);
    Ok((hidden.into_iter().map(|(z, _)| z).collect(), out))
}

/// Layer-level bounds of a set of raw pre-activation values, as used by the
/// calibration rule.
pub fn calibrate_values(values: &[f64], slack: f64) -> Interval {
    let iv = values.iter().fold(Interval::EMPTY, |acc, &v| acc.union(Interval::point(v)));
    let lo = if iv.lo < 0.0 { iv.lo * (1.0 + slack) } else { iv.lo };
    let hi = if iv.hi > 0.0 { iv.hi * (1.0 + slack) } else { iv.hi };
    Interval::new(lo, hi).with_zero()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::recon::net::DenseLayer;

    fn one_unit() -> ArchSpec {
        ArchSpec::Dense(DenseArch::new(2, vec![1], 1))
    }

    #[test]
    fn uniform_box_single_unit() {
        let b = propagate_bounds(
            &one_unit(),
            &[Interval::new(0.0, 1.0); 2],
            ParamBox::Uniform { weight: Interval::symmetric(1.0), bias: Interval::symmetric(1.0) },
        )
        .unwrap();
        assert_eq!(b.layers[0].z, Interval::new(-3.0, 3.0));
    }

    fn fixed_net(second: Option<f64>) -> DenseNet {
        let mut layers = vec![DenseLayer { weights: vec![vec![1.0, -1.0]], bias: vec![0.0] }];
        if let Some(w) = second {
            layers.push(DenseLayer { weights: vec![vec![w]], bias: vec![0.0] });
        }
        layers.push(DenseLayer { weights: vec![vec![1.0]], bias: vec![0.0] });
        let depth = layers.len() - 1;
        DenseNet { layers, gamma: vec![true; depth], quant: None }
    }

    #[test]
    fn fixed_weights_single_unit() {
        let net = TrainedNet::Dense(fixed_net(None));
        let b = propagate_bounds(&one_unit(), &[Interval::new(0.0, 1.0); 2], ParamBox::Fixed(&net)).unwrap();
        assert_eq!(b.layers[0].z, Interval::new(-1.0, 1.0));
    }

    #[test]
    fn two_layer_contains_grid_samples() {
        let n = fixed_net(Some(2.0));
        let arch = ArchSpec::Dense(DenseArch::new(2, vec![1, 1], 1));
        let net = TrainedNet::Dense(n.clone());
        let b = propagate_bounds(&arch, &[Interval::new(0.0, 1.0); 2], ParamBox::Fixed(&net)).unwrap();
        assert_eq!(b.layers[1].units[0], Interval::new(0.0, 2.0));
        let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
        for i in 0..=100 {
            for j in 0..=100 {
                let (hidden, _) = n.trace(&[i as f64 * 0.01, j as f64 * 0.01]);
                lo = lo.min(hidden[1].0[0]);
                hi = hi.max(hidden[1].0[0]);
            }
        }
        assert!(b.layers[1].z.contains_interval(Interval::new(lo, hi)));
    }

    #[test]
    fn calibration_rule() {
        assert_eq!(calibrate_values(&[-2.0, 1.0, 3.0], 0.0), Interval::new(-2.0, 3.0));
        assert_eq!(calibrate_values(&[1.0, 2.0], 0.0), Interval::new(0.0, 2.0));
        let iv = calibrate_values(&[-2.0, 3.0], 0.1);
        assert!((iv.lo + 2.2).abs() < 1e-12 && (iv.hi - 3.3).abs() < 1e-12);
    }

    #[test]
    fn calibrate_from_network() {
        let net = TrainedNet::Dense(fixed_net(None));
        let data = Dataset::new(vec![vec![0.0, 2.0], vec![1.0, 0.0], vec![3.0, 0.0]], vec![vec![0.0]; 3]).unwrap();
        let b = calibrate_from_samples(&net, &data, 0.0).unwrap();
        assert_eq!(b.layers[0].z, Interval::new(-2.0, 3.0));
        assert_eq!(b.provenance, Provenance::Sampled);
        let empty = Dataset::new(vec![], vec![]).unwrap();
        assert!(matches!(calibrate_from_samples(&net, &empty, 0.0), Err(Error::EmptyDataset)));
    }

    #[test]
    fn text_round_trip() {
        let net = TrainedNet::Dense(fixed_net(Some(0.5)));
        let arch = ArchSpec::Dense(DenseArch::new(2, vec![1, 1], 1));
        let b = propagate_bounds(&arch, &[Interval::new(-0.3, 1.7); 2], ParamBox::Fixed(&net)).unwrap();
        assert_eq!(BoundsTable::from_text(&b.to_text()).unwrap(), b);
    }
}
