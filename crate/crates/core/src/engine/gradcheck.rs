//! Central finite-difference validation of analytic gradients.

use ndarray::ArrayView2;

use crate::engine::backprop::{Gradients, Loss, Targets};
use crate::engine::network::Network;
use crate::error::Result;
use crate::scalar::Scalar;

pub const FD_STEP: f64 = 1e-5;
/// Gradients smaller than this are compared in absolute terms.
pub const RELATIVE_FLOOR: f64 = 1e-5;

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub passed: bool,
    pub max_relative_error: f64,
    /// (1-based layer, flat parameter index) of the worst disagreement.
    pub worst: Option<(usize, usize)>,
    pub checked: usize,
}

/// Compares backpropagation against central differences for every
/// parameter of `network`. Costs two forward passes per parameter, so keep
/// networks to roughly 10^4 parameters.
pub fn grad_check<T: Scalar>(
    network: &Network<T>,
    inputs: ArrayView2<'_, T>,
    targets: Targets<'_, T>,
    loss: Loss,
    tolerance: f64,
) -> Result<GradCheckReport> {
    grad_check_with(network, inputs, targets, loss, tolerance, |net| {
        Ok(net.loss_and_gradients(inputs, targets, loss)?.1)
    })
}

/// As [`grad_check`], with the analytic gradient supplied by `analytic`.
pub fn grad_check_with<T: Scalar>(
    network: &Network<T>,
    inputs: ArrayView2<'_, T>,
    targets: Targets<'_, T>,
    loss: Loss,
    tolerance: f64,
    analytic: impl Fn(&Network<T>) -> Result<Gradients<T>>,
) -> Result<GradCheckReport> {
    let grads = analytic(network)?;
    let mut probe = network.clone();
    let h = T::of(FD_STEP);
    let mut worst_err = 0.0f64;
    let mut worst = None;
    let mut checked = 0;
    for layer in 0..network.depth() {
        let analytic_flat = grads[layer].to_flat();
        let count = analytic_flat.len();
        for idx in 0..count {
            let original = nth_param(&mut probe, layer, idx);
            set_param(&mut probe, layer, idx, original + h);
            let plus = probe.loss(inputs, targets, loss)?.to_f64_lossless();
            set_param(&mut probe, layer, idx, original - h);
            let minus = probe.loss(inputs, targets, loss)?.to_f64_lossless();
            set_param(&mut probe, layer, idx, original);

            let numeric = (plus - minus) / (2.0 * FD_STEP);
            let a = analytic_flat[idx].to_f64_lossless();
            let denom = a.abs().max(numeric.abs()).max(RELATIVE_FLOOR);
            let err = (a - numeric).abs() / denom;
            if err > worst_err || !err.is_finite() {
                worst_err = if err.is_finite() { err } else { f64::INFINITY };
                worst = Some((layer + 1, idx));
            }
            checked += 1;
        }
    }
    Ok(GradCheckReport {
        passed: worst_err < tolerance,
        max_relative_error: worst_err,
        worst,
        checked,
    })
}

fn nth_param<T: Scalar>(net: &mut Network<T>, layer: usize, idx: usize) -> T {
    let mut value = T::zero();
    let mut i = 0;
    net.layers[layer].for_each_mut(|v| {
        if i == idx {
            value = *v;
        }
        i += 1;
    });
    value
}

fn set_param<T: Scalar>(net: &mut Network<T>, layer: usize, idx: usize, to: T) {
    let mut i = 0;
    net.layers[layer].for_each_mut(|v| {
        if i == idx {
            *v = to;
        }
        i += 1;
    });
}
