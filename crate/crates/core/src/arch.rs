//! Declarative network architectures and dimension inference.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Fully connected ReLU network with a linear head.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DenseArch {
    pub input_dim: usize,
    pub hidden: Vec<usize>,
    pub output_dim: usize,
}

impl DenseArch {
    pub fn new(input_dim: usize, hidden: Vec<usize>, output_dim: usize) -> Self {
        Self { input_dim, hidden, output_dim }
    }

    /// Number of hidden layers `L`.
    pub fn depth(&self) -> usize {
        self.hidden.len()
    }

    /// `[n_0, n_1, .., n_L, n_{L+1}]`.
    pub fn widths(&self) -> Vec<usize> {
        let mut w = Vec::with_capacity(self.hidden.len() + 2);
        w.push(self.input_dim);
        w.extend(&self.hidden);
        w.push(self.output_dim);
        w
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PoolSpec {
    pub window: (usize, usize),
    pub stride: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvLayerSpec {
    pub filters: usize,
    pub kernel: (usize, usize),
    #[serde(default = "one")]
    pub stride: usize,
    #[serde(default)]
    pub padding: usize,
    /// Max pooling applied to this layer's activations.
    #[serde(default)]
    pub pool: Option<PoolSpec>,
}

fn one() -> usize {
    1
}

impl ConvLayerSpec {
    pub fn new(filters: usize, kernel: usize) -> Self {
        Self { filters, kernel: (kernel, kernel), stride: 1, padding: 0, pool: None }
    }

    pub fn with_pool(mut self, window: usize, stride: usize) -> Self {
        self.pool = Some(PoolSpec { window: (window, window), stride });
        self
    }
}

/// Convolutional stack followed by a flattened linear head.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvArch {
    /// `(C_0, H_0, W_0)`.
    pub input: (usize, usize, usize),
    pub layers: Vec<ConvLayerSpec>,
    pub head: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum ArchSpec {
    Dense(DenseArch),
    Conv(ConvArch),
}

impl ArchSpec {
    pub fn output_dim(&self) -> usize {
        match self {
            ArchSpec::Dense(d) => d.output_dim,
            ArchSpec::Conv(c) => c.head,
        }
    }

    pub fn input_len(&self) -> usize {
        match self {
            ArchSpec::Dense(d) => d.input_dim,
            ArchSpec::Conv(c) => c.input.0 * c.input.1 * c.input.2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Shape3 {
    pub c: usize,
    pub h: usize,
    pub w: usize,
}

impl Shape3 {
    pub fn len(&self) -> usize {
        self.c * self.h * self.w
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvLayerDims {
    /// Feature map produced by the convolution (and its ReLU).
    pub conv: Shape3,
    /// Feature map after pooling, if this layer pools.
    pub pooled: Option<Shape3>,
}

impl ConvLayerDims {
    /// Shape consumed by the next layer.
    pub fn out(&self) -> Shape3 {
        self.pooled.unwrap_or(self.conv)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConvDims {
    pub input: Shape3,
    pub layers: Vec<ConvLayerDims>,
    pub head: usize,
}

impl ConvDims {
    /// Length of the flattened vector entering the head.
    pub fn flat_len(&self) -> usize {
        self.layers.last().map(|l| l.out().len()).unwrap_or(self.input.len())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum LayerDims {
    Dense(Vec<usize>),
    Conv(ConvDims),
}

/// Output extent of a sliding window; `None` when the window does not fit.
pub fn window_out(input: usize, kernel: usize, stride: usize, padding: usize) -> Option<usize> {
    let padded = input + 2 * padding;
    if kernel == 0 || stride == 0 || padded < kernel {
        return None;
    }
    Some((padded - kernel) / stride + 1)
}

pub fn validate_dense(a: &DenseArch) -> Result<Vec<usize>> {
    if a.hidden.is_empty() {
        return Err(Error::InvalidArch("at least one hidden layer is required".into()));
    }
    let widths = a.widths();
    if let Some(l) = widths.iter().position(|&w| w == 0) {
        return Err(Error::NonpositiveDimension { layer: l, detail: "width is zero".into() });
    }
    Ok(widths)
}

pub fn validate_conv(a: &ConvArch) -> Result<ConvDims> {
    if a.layers.is_empty() {
        return Err(Error::InvalidArch("at least one convolutional layer is required".into()));
    }
    let (c0, h0, w0) = a.input;
    if c0 == 0 || h0 == 0 || w0 == 0 {
        return Err(Error::NonpositiveDimension { layer: 0, detail: format!("input shape {:?}", a.input) });
    }
    if a.head == 0 {
        return Err(Error::NonpositiveDimension { layer: a.layers.len() + 1, detail: "head width is zero".into() });
    }
    let input = Shape3 { c: c0, h: h0, w: w0 };
    let mut prev = input;
    let mut layers = Vec::with_capacity(a.layers.len());
    for (i, spec) in a.layers.iter().enumerate() {
        let l = i + 1;
        if spec.filters == 0 {
            return Err(Error::NonpositiveDimension { layer: l, detail: "zero filters".into() });
        }
        let (kh, kw) = spec.kernel;
        let h = window_out(prev.h, kh, spec.stride, spec.padding);
        let w = window_out(prev.w, kw, spec.stride, spec.padding);
        let (Some(h), Some(w)) = (h, w) else {
            return Err(Error::NonpositiveDimension {
                layer: l,
                detail: format!("kernel {kh}x{kw} does not fit a {}x{} input", prev.h, prev.w),
            });
        };
        let conv = Shape3 { c: spec.filters, h, w };
        let pooled = match spec.pool {
            None => None,
            Some(p) => {
                let (ph, pw) = p.window;
                if p.stride < ph.max(pw) {
                    return Err(Error::InvalidArch(format!(
                        "layer {l}: pooling windows overlap (stride {} < window {ph}x{pw})",
                        p.stride
                    )));
                }
                match (window_out(h, ph, p.stride, 0), window_out(w, pw, p.stride, 0)) {
                    (Some(ph_out), Some(pw_out)) => Some(Shape3 { c: spec.filters, h: ph_out, w: pw_out }),
                    _ => {
                        return Err(Error::NonpositiveDimension {
                            layer: l,
                            detail: format!("pool window {ph}x{pw} does not fit a {h}x{w} map"),
                        })
                    }
                }
            }
        };
        let dims = ConvLayerDims { conv, pooled };
        prev = dims.out();
        layers.push(dims);
    }
    Ok(ConvDims { input, layers, head: a.head })
}

pub fn validate_arch(a: &ArchSpec) -> Result<LayerDims> {
    match a {
        ArchSpec::Dense(d) => validate_dense(d).map(LayerDims::Dense),
        ArchSpec::Conv(c) => validate_conv(c).map(LayerDims::Conv),
    }
}

/// Cells `(h, w)` of the map feeding pooled output `(ph, pw)`.
pub fn pool_window(pool: &PoolSpec, ph: usize, pw: usize) -> impl Iterator<Item = (usize, usize)> {
    let (wh, ww) = pool.window;
    let (h0, w0) = (ph * pool.stride, pw * pool.stride);
    (0..wh).flat_map(move |dh| (0..ww).map(move |dw| (h0 + dh, w0 + dw)))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn conv(input: (usize, usize, usize), layers: Vec<ConvLayerSpec>) -> ConvArch {
        ConvArch { input, layers, head: 2 }
    }

    #[test]
    fn mnist_like_single_layer() {
        let d = validate_conv(&conv((1, 28, 28), vec![ConvLayerSpec::new(6, 3)])).unwrap();
        assert_eq!(d.layers[0].conv, Shape3 { c: 6, h: 26, w: 26 });
    }

    #[test]
    fn kernel_larger_than_input() {
        let e = validate_conv(&conv((1, 4, 4), vec![ConvLayerSpec::new(1, 5)])).unwrap_err();
        assert!(matches!(e, Error::NonpositiveDimension { layer: 1, .. }));
    }

    #[test]
    fn conv_then_pool() {
        let d = validate_conv(&conv((1, 6, 6), vec![ConvLayerSpec::new(3, 3).with_pool(2, 2)])).unwrap();
        assert_eq!(d.layers[0].conv, Shape3 { c: 3, h: 4, w: 4 });
        assert_eq!(d.layers[0].pooled, Some(Shape3 { c: 3, h: 2, w: 2 }));
        assert_eq!(d.flat_len(), 12);
    }

    /// Brute force: count top-left corners whose window stays inside the
    /// (padded) input along one axis.
    fn brute_positions(input: usize, k: usize, stride: usize) -> usize {
        (0..input).filter(|&p| p % stride == 0 && p + k <= input).count()
    }

    #[test]
    fn dimension_rule_matches_enumeration() {
        for h in 1..=10 {
            for k in 1..=5 {
                for s in 1..=3 {
                    let want = brute_positions(h, k, s);
                    let got = window_out(h, k, s, 0).unwrap_or(0);
                    assert_eq!(got, want, "h={h} k={k} s={s}");
                }
            }
        }
        // pooled 2x2/2 on a 4x4 map: enumerate window origins
        let pool = PoolSpec { window: (2, 2), stride: 2 };
        let cells: Vec<_> = (0..2).flat_map(|a| (0..2).flat_map(move |b| pool_window(&pool, a, b))).collect();
        let mut sorted = cells.clone();
        sorted.sort();
        sorted.dedup();
        assert_eq!(sorted.len(), 16);
        assert!(cells.iter().all(|&(h, w)| h < 4 && w < 4));
    }

    #[test]
    fn overlapping_pool_rejected() {
        let mut l = ConvLayerSpec::new(1, 3);
        l.pool = Some(PoolSpec { window: (2, 2), stride: 1 });
        assert!(matches!(validate_conv(&conv((1, 6, 6), vec![l])), Err(Error::InvalidArch(_))));
    }

    #[test]
    fn dense_requires_hidden_layer() {
        assert!(validate_dense(&DenseArch::new(2, vec![], 1)).is_err());
        assert_eq!(validate_dense(&DenseArch::new(2, vec![3, 4], 1)).unwrap(), vec![2, 3, 4, 1]);
    }
}
