//! Reading a network back out of a solved model.

use crate::builder::{Build, ConvBuild, DenseBuild};
use crate::error::{Error, Result};
use crate::hyper::{Hyper, Mode, QuantGrid};
use crate::ir::{evaluate_assignment, Assignment, AuditReport, VarRef};

use super::net::{ConvNet, DenseLayer, DenseNet, TrainedNet};

/// Constraint and bound audit plus a check that every ReLU indicator agrees
/// with the sign of its pre-activation. A pre-activation within `tol` of zero
/// accepts either indicator.
pub fn audit(build: &Build, asg: &Assignment, tol: f64) -> Result<AuditReport> {
    let model = build.model();
    let mut report = evaluate_assignment(model, asg, tol)?;
    let mut check = |z: &[VarRef], delta: &[VarRef]| {
        for (&zv, &dv) in z.iter().zip(delta) {
            let (zx, on) = (asg.get(zv), asg.get(dv) > 0.5);
            if (on && zx < -tol) || (!on && zx > tol) {
                report.relu_inconsistent.push(model.var(dv).name.clone());
            }
        }
    };
    match build {
        Build::Dense(b) => {
            for (zi, di) in b.z.iter().zip(&b.delta) {
                for (zl, dl) in zi.iter().zip(di) {
                    check(zl, dl);
                }
            }
        }
        Build::Conv(b) => {
            for (zi, di) in b.z.iter().zip(&b.delta) {
                for (zl, dl) in zi.iter().zip(di) {
                    check(zl, dl);
                }
            }
        }
    }
    Ok(report)
}

fn grid_of(h: &Hyper) -> Option<QuantGrid> {
    (h.mode == Mode::TrainQuantized).then(|| h.grid())
}

/// Weight value: decoded from its digits when quantized, read directly otherwise.
fn param(asg: &Assignment, var: VarRef, digits: Option<&Vec<VarRef>>, grid: Option<QuantGrid>) -> f64 {
    match (digits, grid) {
        (Some(ds), Some(g)) if !ds.is_empty() => g.decode(ds.iter().map(|&d| asg.get(d) > 0.5)),
        _ => asg.get(var),
    }
}

fn flag(asg: &Assignment, v: VarRef) -> bool {
    asg.get(v) >= 0.5
}

/// Rebuilds the network encoded by `asg`. The assignment must pass [`audit`]
/// at `tol`; parameters of pruned layers or channels are set to exactly zero.
pub fn reconstruct(build: &Build, asg: &Assignment, tol: f64) -> Result<TrainedNet> {
    if asg.values().len() != build.model().num_vars() {
        return Err(Error::MissingVariable(String::new()));
    }
    if let Build::Dense(b) = build {
        if !flag(asg, b.gamma[0]) {
            return Err(Error::RootLayerPruned);
        }
    }
    let report = audit(build, asg, tol)?;
    if let Some(why) = report.first_failure() {
        return Err(Error::AuditFailure(why));
    }
    Ok(match build {
        Build::Dense(b) => TrainedNet::Dense(dense_net(b, asg)),
        Build::Conv(b) => TrainedNet::Conv(conv_net(b, asg)?),
    })
}

fn dense_net(b: &DenseBuild, asg: &Assignment) -> DenseNet {
    let grid = grid_of(&b.hyper);
    let gamma: Vec<bool> = b.gamma.iter().map(|&g| flag(asg, g)).collect();
    let layers = b
        .weights
        .iter()
        .enumerate()
        .map(|(l, wl)| {
            let kept = gamma.get(l).copied().unwrap_or(true);
            let mut layer = DenseLayer::zeros(wl.len(), wl[0].len());
            for (j, row) in wl.iter().enumerate() {
                for (k, &w) in row.iter().enumerate() {
                    let ds = b.digits.get(l).map(|d| &d[j][k]);
                    layer.weights[j][k] = if kept { param(asg, w, ds, grid) } else { 0.0 };
                }
                let ds = b.bias_digits.get(l).map(|d| &d[j]);
                layer.bias[j] = if kept { param(asg, b.biases[l][j], ds, grid) } else { 0.0 };
            }
            layer
        })
        .collect();
    DenseNet { layers, gamma, quant: grid }
}

fn conv_net(b: &ConvBuild, asg: &Assignment) -> Result<ConvNet> {
    let grid = grid_of(&b.hyper);
    let mut net = ConvNet::zeros(&b.arch)?;
    for (l, layer) in net.layers.iter_mut().enumerate() {
        let per = layer.shape.1 * layer.shape.2 * layer.shape.3;
        for c in 0..layer.shape.0 {
            let kept = flag(asg, b.gamma[l][c]);
            net.gamma[l][c] = kept;
            if !kept {
                continue;
            }
            for idx in c * per..(c + 1) * per {
                layer.kernel[idx] = param(asg, b.kernels[l][idx], b.kernel_digits.get(l).map(|d| &d[idx]), grid);
            }
            layer.bias[c] = param(asg, b.conv_biases[l][c], b.conv_bias_digits.get(l).map(|d| &d[c]), grid);
        }
    }
    for (j, row) in b.head_weights.iter().enumerate() {
        for (f, &w) in row.iter().enumerate() {
            net.head.weights[j][f] = param(asg, w, b.head_digits.get(j).map(|d| &d[f]), grid);
        }
        net.head.bias[j] = param(asg, b.head_biases[j], b.head_bias_digits.get(j), grid);
    }
    net.quant = grid;
    Ok(net)
}

/// Values of the head outputs for sample `i`, as recorded in the assignment.
pub fn recorded_outputs(build: &Build, asg: &Assignment, i: usize) -> Vec<f64> {
    let out = match build {
        Build::Dense(b) => &b.out[i],
        Build::Conv(b) => &b.out[i],
    };
    out.iter().map(|&v| asg.get(v)).collect()
}

