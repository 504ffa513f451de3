//! Concrete networks and plain-arithmetic inference. Nothing here touches the
//! optimization model, so it serves as the independent reference for every
//! encoding.

use serde::{Deserialize, Serialize};

use crate::arch::{validate_conv, ConvArch, ConvDims, DenseArch, Shape3};
use crate::error::{Error, Result};
use crate::hyper::QuantGrid;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseLayer {
    /// `n_l x n_{l-1}`, row `j` holds the incoming weights of unit `j`.
    pub weights: Vec<Vec<f64>>,
    pub bias: Vec<f64>,
}

impl DenseLayer {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { weights: vec![vec![0.0; cols]; rows], bias: vec![0.0; rows] }
    }

    pub fn rows(&self) -> usize {
        self.weights.len()
    }

    pub fn cols(&self) -> usize {
        self.weights.first().map_or(0, Vec::len)
    }

    pub fn affine(&self, x: &[f64]) -> Vec<f64> {
        self.weights.iter().zip(&self.bias).map(|(row, b)| row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>() + b).collect()
    }

    pub fn num_weights(&self) -> usize {
        self.rows() * self.cols()
    }

    pub fn row_sum(&self, j: usize) -> f64 {
        self.weights[j].iter().sum()
    }
}

/// Dense ReLU network: `layers[0..L]` are hidden, `layers[L]` is the linear head.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseNet {
    pub layers: Vec<DenseLayer>,
    /// Retention flag per hidden layer.
    pub gamma: Vec<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub quant: Option<QuantGrid>,
}

impl DenseNet {
    pub fn zeros(arch: &DenseArch) -> Self {
        let w = arch.widths();
        Self {
            layers: w.windows(2).map(|p| DenseLayer::zeros(p[1], p[0])).collect(),
            gamma: vec![true; arch.depth()],
            quant: None,
        }
    }

    pub fn depth(&self) -> usize {
        self.layers.len() - 1
    }

    pub fn arch(&self) -> DenseArch {
        DenseArch {
            input_dim: self.layers[0].cols(),
            hidden: self.layers[..self.depth()].iter().map(DenseLayer::rows).collect(),
            output_dim: self.layers[self.depth()].rows(),
        }
    }

    pub fn check_shape(&self, arch: &DenseArch) -> Result<()> {
        if self.arch() != *arch || self.gamma.len() != arch.depth() {
            return Err(Error::ShapeMismatch(format!("network shape {:?} does not match {:?}", self.arch(), arch)));
        }
        for (l, layer) in self.layers.iter().enumerate() {
            if layer.weights.iter().any(|r| r.len() != layer.cols()) || layer.bias.len() != layer.rows() {
                return Err(Error::ShapeMismatch(format!("ragged parameters in layer {}", l + 1)));
            }
        }
        Ok(())
    }

    /// Pre-activations and activations of each hidden layer, then the output.
    pub fn trace(&self, x: &[f64]) -> (Vec<(Vec<f64>, Vec<f64>)>, Vec<f64>) {
        let mut a = x.to_vec();
        let mut hidden = Vec::with_capacity(self.depth());
        for layer in &self.layers[..self.depth()] {
            let z = layer.affine(&a);
            a = z.iter().map(|&v| v.max(0.0)).collect();
            hidden.push((z, a.clone()));
        }
        let out = self.layers[self.depth()].affine(&a);
        (hidden, out)
    }

    pub fn forward(&self, x: &[f64]) -> Vec<f64> {
        self.trace(x).1
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvLayer {
    /// `(C_l, C_{l-1}, K_H, K_W)`.
    pub shape: (usize, usize, usize, usize),
    /// Row-major over `shape`.
    pub kernel: Vec<f64>,
    pub bias: Vec<f64>,
}

impl ConvLayer {
    pub fn zeros(shape: (usize, usize, usize, usize)) -> Self {
        Self { shape, kernel: vec![0.0; shape.0 * shape.1 * shape.2 * shape.3], bias: vec![0.0; shape.0] }
    }

    pub fn idx(&self, c: usize, cp: usize, u: usize, v: usize) -> usize {
        let (_, ci, kh, kw) = self.shape;
        ((c * ci + cp) * kh + u) * kw + v
    }

    pub fn at(&self, c: usize, cp: usize, u: usize, v: usize) -> f64 {
        self.kernel[self.idx(c, cp, u, v)]
    }

    /// Kernel slice of output channel `c`.
    pub fn channel(&self, c: usize) -> &[f64] {
        let per = self.shape.1 * self.shape.2 * self.shape.3;
        &self.kernel[c * per..(c + 1) * per]
    }
}

/// Activations of one convolutional layer for one sample, channel-major.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvTrace {
    pub z: Vec<f64>,
    pub a: Vec<f64>,
    pub pooled: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvNet {
    pub arch: ConvArch,
    pub layers: Vec<ConvLayer>,
    pub head: DenseLayer,
    /// Retention flag per layer and output channel.
    pub gamma: Vec<Vec<bool>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub quant: Option<QuantGrid>,
}

impl ConvNet {
    pub fn zeros(arch: &ConvArch) -> Result<Self> {
        let dims = validate_conv(arch)?;
        let mut cin = arch.input.0;
        let mut layers = Vec::new();
        for spec in &arch.layers {
            layers.push(ConvLayer::zeros((spec.filters, cin, spec.kernel.0, spec.kernel.1)));
            cin = spec.filters;
        }
        Ok(Self {
            arch: arch.clone(),
            gamma: arch.layers.iter().map(|s| vec![true; s.filters]).collect(),
            layers,
            head: DenseLayer::zeros(arch.head, dims.flat_len()),
            quant: None,
        })
    }

    pub fn check_shape(&self, arch: &ConvArch) -> Result<()> {
        let want = ConvNet::zeros(arch)?;
        let same = self.arch == *arch
            && self.layers.len() == want.layers.len()
            && self.layers.iter().zip(&want.layers).all(|(a, b)| {
                a.shape == b.shape && a.kernel.len() == b.kernel.len() && a.bias.len() == b.bias.len()
            })
            && self.head.rows() == want.head.rows()
            && self.head.cols() == want.head.cols()
            && self.gamma.iter().map(Vec::len).eq(want.gamma.iter().map(Vec::len));
        if same {
            Ok(())
        } else {
            Err(Error::ShapeMismatch("convolutional network does not match its architecture".into()))
        }
    }

    pub fn trace(&self, x: &[f64]) -> Result<(Vec<ConvTrace>, Vec<f64>)> {
        let dims = validate_conv(&self.arch)?;
        if x.len() != dims.input.len() {
            return Err(Error::ShapeMismatch(format!("input length {} != {}", x.len(), dims.input.len())));
        }
        let mut input = x.to_vec();
        let mut in_shape = dims.input;
        let mut traces = Vec::with_capacity(self.layers.len());
        for (l, layer) in self.layers.iter().enumerate() {
            let spec = &self.arch.layers[l];
            let out = dims.layers[l].conv;
            let z = correlate(&input, in_shape, layer, out, spec.stride, spec.padding);
            let a: Vec<f64> = z.iter().map(|&v| v.max(0.0)).collect();
            let pooled = match (spec.pool, dims.layers[l].pooled) {
                (Some(p), Some(ps)) => Some(max_pool(&a, out, ps, p.window, p.stride)),
                _ => None,
            };
            input = pooled.clone().unwrap_or_else(|| a.clone());
            in_shape = dims.layers[l].out();
            traces.push(ConvTrace { z, a, pooled });
        }
        // channel-major storage is already the flatten order c*H*W + h*W + w
        let out = self.head.affine(&input);
        Ok((traces, out))
    }

    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        Ok(self.trace(x)?.1)
    }

    pub fn dims(&self) -> Result<ConvDims> {
        validate_conv(&self.arch)
    }
}

pub(crate) fn correlate(input: &[f64], ins: Shape3, layer: &ConvLayer, out: Shape3, stride: usize, pad: usize) -> Vec<f64> {
    let (_, _, kh, kw) = layer.shape;
    let mut z = vec![0.0; out.len()];
    for c in 0..out.c {
        for h in 0..out.h {
            for w in 0..out.w {
                let mut acc = layer.bias[c];
                for cp in 0..ins.c {
                    for u in 0..kh {
                        for v in 0..kw {
                            let (ih, iw) = ((h * stride + u) as isize - pad as isize, (w * stride + v) as isize - pad as isize);
                            if ih < 0 || iw < 0 || ih as usize >= ins.h || iw as usize >= ins.w {
                                continue;
                            }
                            acc += layer.at(c, cp, u, v) * input[(cp * ins.h + ih as usize) * ins.w + iw as usize];
                        }
                    }
                }
                z[(c * out.h + h) * out.w + w] = acc;
            }
        }
    }
    z
}

fn max_pool(a: &[f64], s: Shape3, ps: Shape3, window: (usize, usize), stride: usize) -> Vec<f64> {
    let mut p = vec![f64::NEG_INFINITY; ps.len()];
    for c in 0..ps.c {
        for h in 0..ps.h {
            for w in 0..ps.w {
                let slot = &mut p[(c * ps.h + h) * ps.w + w];
                for dh in 0..window.0 {
                    for dw in 0..window.1 {
                        let v = a[(c * s.h + h * stride + dh) * s.w + w * stride + dw];
                        *slot = slot.max(v);
                    }
                }
            }
        }
    }
    p
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum TrainedNet {
    Dense(DenseNet),
    Conv(ConvNet),
}

impl TrainedNet {
    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        match self {
            TrainedNet::Dense(n) => {
                if x.len() != n.layers[0].cols() {
                    return Err(Error::ShapeMismatch(format!("input length {} != {}", x.len(), n.layers[0].cols())));
                }
                Ok(n.forward(x))
            }
            TrainedNet::Conv(n) => n.forward(x),
        }
    }

    pub fn load(path: impl AsRef<std::path::Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("network serializes")
    }
}

/// Reorders hidden units so row sums of each hidden weight matrix are
/// non-increasing, permuting the next layer's columns to match. Stable, so
/// already-ordered networks are returned unchanged.
pub fn canonicalize(net: &DenseNet) -> DenseNet {
    let mut out = net.clone();
    for l in 0..out.depth() {
        let layer = &out.layers[l];
        let mut order: Vec<usize> = (0..layer.rows()).collect();
        order.sort_by(|&i, &j| layer.row_sum(j).total_cmp(&layer.row_sum(i)));
        let permuted = DenseLayer {
            weights: order.iter().map(|&j| layer.weights[j].clone()).collect(),
            bias: order.iter().map(|&j| layer.bias[j]).collect(),
        };
        out.layers[l] = permuted;
        let next = &mut out.layers[l + 1];
        for row in &mut next.weights {
            *row = order.iter().map(|&k| row[k]).collect();
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::arch::ConvLayerSpec;

    fn net(hidden: Vec<Vec<f64>>, hb: Vec<f64>, head: Vec<Vec<f64>>, ob: Vec<f64>) -> DenseNet {
        DenseNet {
            layers: vec![DenseLayer { weights: hidden, bias: hb }, DenseLayer { weights: head, bias: ob }],
            gamma: vec![true],
            quant: None,
        }
    }

    #[test]
    fn zero_weights_output_bias() {
        let n = net(vec![vec![0.0, 0.0]], vec![0.0], vec![vec![0.0]], vec![0.7]);
        assert_eq!(n.forward(&[3.0, -2.0]), vec![0.7]);
    }

    #[test]
    fn relu_kills_negative() {
        let n = net(vec![vec![1.0]], vec![0.0], vec![vec![5.0]], vec![0.25]);
        let (hidden, out) = n.trace(&[-3.0]);
        assert_eq!(hidden[0].1, vec![0.0]);
        assert_eq!(out, vec![0.25]);
    }

    #[test]
    fn canonicalize_swaps_rows() {
        let n = net(vec![vec![1.0, 0.0], vec![2.0, 1.0]], vec![0.1, 0.2], vec![vec![5.0, 7.0]], vec![0.0]);
        let c = canonicalize(&n);
        assert_eq!(c.layers[0].weights, vec![vec![2.0, 1.0], vec![1.0, 0.0]]);
        assert_eq!(c.layers[0].bias, vec![0.2, 0.1]);
        assert_eq!(c.layers[1].weights, vec![vec![7.0, 5.0]]);
        assert_eq!(canonicalize(&c), c);
        for x in [[0.3, -1.0], [2.0, 0.5], [-1.0, -1.0]] {
            assert_eq!(n.forward(&x), c.forward(&x));
        }
    }

    #[test]
    fn conv_forward_small() {
        // 1x3x3 input, one 2x2 all-ones filter, 2x2 map, pooled to 1x1
        let arch = ConvArch { input: (1, 3, 3), layers: vec![ConvLayerSpec::new(1, 2).with_pool(2, 2)], head: 1 };
        let mut n = ConvNet::zeros(&arch).unwrap();
        n.layers[0].kernel = vec![1.0; 4];
        n.layers[0].bias = vec![-4.0];
        n.head.weights = vec![vec![2.0]];
        let x = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0, 9.0];
        let (tr, out) = n.trace(&x).unwrap();
        assert_eq!(tr[0].z, vec![8.0, 12.0, 20.0, 24.0]);
        assert_eq!(tr[0].pooled, Some(vec![24.0]));
        assert_eq!(out, vec![48.0]);
    }
}
