#![allow(dead_code)]

use rand::rngs::StdRng;
use rand::Rng;

use mipnet::arch::{ArchSpec, ConvArch, DenseArch};
use mipnet::bounds::{propagate_bounds, BoundsTable, Interval, ParamBox};
use mipnet::builder::{build_cnn, build_dense, BuildOptions, ConvBuild, DenseBuild, ExactProblem};
use mipnet::data::Dataset;
use mipnet::hyper::{Hyper, Mode};
use mipnet::ir::FEAS_TOL;
use mipnet::oracle::Solved;
use mipnet::recon::{ConvNet, DenseLayer, DenseNet, TrainedNet};

pub fn xor_data() -> Dataset {
    Dataset::new(
        vec![vec![0.0, 0.0], vec![0.0, 1.0], vec![1.0, 0.0], vec![1.0, 1.0]],
        vec![vec![0.0], vec![1.0], vec![1.0], vec![0.0]],
    )
    .unwrap()
}

/// Weights from {-2..2} when `integer`, else uniform in [-1, 1].
pub fn random_param(rng: &mut StdRng, integer: bool) -> f64 {
    if integer {
        rng.gen_range(-2i32..=2) as f64
    } else {
        rng.gen_range(-1.0..=1.0)
    }
}

pub fn random_dense(arch: &DenseArch, rng: &mut StdRng, integer: bool) -> DenseNet {
    let w = arch.widths();
    let layers = w
        .windows(2)
        .map(|p| DenseLayer {
            weights: (0..p[1]).map(|_| (0..p[0]).map(|_| random_param(rng, integer)).collect()).collect(),
            bias: (0..p[1]).map(|_| random_param(rng, integer)).collect(),
        })
        .collect();
    DenseNet { layers, gamma: vec![true; arch.depth()], quant: None }
}

/// Samples from {-1, 0, 1} when `integer`, else uniform in [-1, 1].
pub fn random_input(rng: &mut StdRng, n: usize, integer: bool) -> Vec<f64> {
    (0..n).map(|_| if integer { rng.gen_range(-1i32..=1) as f64 } else { rng.gen_range(-1.0..=1.0) }).collect()
}

/// Smallest sound M plus one: covers every interval bound and every parameter,
/// since the pruning rows box parameters by M too.
fn big_m(bounds: &BoundsTable, params: impl Iterator<Item = f64>) -> f64 {
    let z = bounds.layers.iter().chain(std::iter::once(&bounds.head)).map(|l| l.z.lo.abs().max(l.z.hi.abs()));
    z.chain(params.map(f64::abs)).fold(0.0, f64::max) + 1.0
}

/// Verify-mode model of `net` over `inputs` (targets zero) with inputs boxed
/// in [-1, 1].
pub fn verify_dense(net: &DenseNet, inputs: Vec<Vec<f64>>, opts: BuildOptions) -> DenseBuild {
    let arch = net.arch();
    let targets = inputs.iter().map(|_| vec![0.0; arch.output_dim]).collect();
    let data = Dataset::new(inputs, targets).unwrap();
    let tn = TrainedNet::Dense(net.clone());
    let spec = ArchSpec::Dense(arch.clone());
    let bounds = propagate_bounds(&spec, &vec![Interval::new(-1.0, 1.0); arch.input_dim], ParamBox::Fixed(&tn)).unwrap();
    let params = net.layers.iter().flat_map(|l| l.weights.iter().flatten().chain(&l.bias)).copied();
    let hyper = Hyper { big_m: big_m(&bounds, params), ..Hyper::default() };
    build_dense(&arch, &data, &hyper, &bounds, Some(net), &opts).unwrap()
}

pub fn verify_conv(net: &ConvNet, inputs: Vec<Vec<f64>>, opts: BuildOptions) -> ConvBuild {
    let targets = inputs.iter().map(|_| vec![0.0; net.arch.head]).collect();
    let data = Dataset::new(inputs, targets).unwrap();
    let tn = TrainedNet::Conv(net.clone());
    let spec = ArchSpec::Conv(net.arch.clone());
    let bounds = propagate_bounds(&spec, &vec![Interval::new(-1.0, 1.0); spec.input_len()], ParamBox::Fixed(&tn)).unwrap();
    let conv = net.layers.iter().flat_map(|l| l.kernel.iter().chain(&l.bias));
    let head = net.head.weights.iter().flatten().chain(&net.head.bias);
    let hyper = Hyper { big_m: big_m(&bounds, conv.chain(head).copied()), ..Hyper::default() };
    build_cnn(&net.arch, &data, &hyper, &bounds, Some(net), &opts).unwrap()
}

pub fn quantized_hyper(bits: u32) -> Hyper {
    Hyper { mode: Mode::TrainQuantized, bits, quantize_biases: true, alpha: 0.1, lambda: 0.9, beta: 0.01, ..Hyper::default() }
}

/// Quantized training model with input boxes taken from the data.
pub fn quantized_dense(arch: &DenseArch, data: &Dataset, hyper: &Hyper, opts: BuildOptions) -> DenseBuild {
    let boxes: Vec<Interval> = data.bounding_box().into_iter().map(|(lo, hi)| Interval::new(lo, hi)).collect();
    let bounds = propagate_bounds(&ArchSpec::Dense(arch.clone()), &boxes, ParamBox::from_hyper(hyper)).unwrap();
    build_dense(arch, data, hyper, &bounds, None, &opts).unwrap()
}

pub fn quantized_conv(arch: &ConvArch, data: &Dataset, hyper: &Hyper, opts: BuildOptions) -> ConvBuild {
    let boxes: Vec<Interval> = data.bounding_box().into_iter().map(|(lo, hi)| Interval::new(lo, hi)).collect();
    let bounds = propagate_bounds(&ArchSpec::Conv(arch.clone()), &boxes, ParamBox::from_hyper(hyper)).unwrap();
    build_cnn(arch, data, hyper, &bounds, None, &opts).unwrap()
}

/// Every binary vector with the given fixings, completed and checked against
/// the model directly, with no pruning at all.
pub fn brute_force(p: &dyn ExactProblem, fixed: &[(mipnet::ir::VarRef, bool)]) -> Vec<Solved> {
    let order = p.branch_order();
    assert!(order.len() <= 20, "{} binaries is too many for brute force", order.len());
    let pos: Vec<(usize, bool)> = fixed.iter().map(|&(v, b)| (order.iter().position(|&o| o == v).unwrap(), b)).collect();
    let model = p.model();
    let mut out = Vec::new();
    for code in 0u64..(1 << order.len()) {
        // most significant bit first, so codes run in lexicographic order
        let bits: Vec<bool> = (0..order.len()).map(|t| code >> (order.len() - 1 - t) & 1 == 1).collect();
        if pos.iter().any(|&(i, b)| bits[i] != b) {
            continue;
        }
        let values = p.complete(&bits);
        if model.is_feasible(&values, FEAS_TOL) {
            out.push(Solved { objective: model.objective_value(&values), bits, values });
        }
    }
    out
}
