//! Losses and reverse-mode gradients for every layer kind.

use ndarray::{Array2, ArrayView2, Axis, Zip};
use serde::{Deserialize, Serialize};

use crate::engine::architecture::{Activation, LayerSpec};
use crate::engine::forward::{
    channel_major_to_positions, col2im, im2col, scatter_step, step_input, ConvGeometry,
    ForwardTrace, LayerTrace,
};
use crate::engine::network::{LayerParams, Network};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Loss {
    /// Mean over the batch of `-log softmax(y)[label]`; applied outside the
    /// traced layers.
    SoftmaxCrossEntropy,
    /// Mean over the batch of `0.5 * |y - target|^2`.
    Mse,
}

/// Supervision for one batch.
#[derive(Clone, Copy, Debug)]
pub enum Targets<'a, T> {
    Labels(&'a [usize]),
    Values(ArrayView2<'a, T>),
}

impl<T: Scalar> Targets<'_, T> {
    fn len(&self) -> usize {
        match self {
            Targets::Labels(l) => l.len(),
            Targets::Values(v) => v.nrows(),
        }
    }
}

/// Gradient with the same layout as the network parameters.
pub type Gradients<T> = Vec<LayerParams<T>>;

fn log_softmax_row<T: Scalar>(row: ndarray::ArrayView1<'_, T>) -> (T, T) {
    let max = row.iter().copied().fold(T::neg_infinity(), T::max);
    let sum: T = row.iter().map(|&v| (v - max).exp()).sum();
    (max, sum.ln())
}

/// Loss value and its gradient with respect to the raw outputs.
pub fn loss_and_output_grad<T: Scalar>(
    output: ArrayView2<'_, T>,
    targets: Targets<'_, T>,
    loss: Loss,
) -> Result<(T, Array2<T>)> {
    let batch = output.nrows();
    if targets.len() != batch {
        return Err(Error::shape("targets", batch, targets.len()));
    }
    let inv_b = T::one() / T::of(batch as f64);
    match (loss, targets) {
        (Loss::SoftmaxCrossEntropy, Targets::Labels(labels)) => {
            let classes = output.ncols();
            let mut grad = Array2::<T>::zeros(output.dim());
            let mut total = T::zero();
            for (b, (row, &label)) in output.axis_iter(Axis(0)).zip(labels).enumerate() {
                if label >= classes {
                    return Err(Error::InvalidArgument(format!(
                        "label {label} out of range for {classes} outputs"
                    )));
                }
                let (max, lse) = log_softmax_row(row);
                total -= row[label] - max - lse;
                for (c, &v) in row.iter().enumerate() {
                    let p = (v - max - lse).exp();
                    let onehot = if c == label { T::one() } else { T::zero() };
                    grad[[b, c]] = (p - onehot) * inv_b;
                }
            }
            Ok((total * inv_b, grad))
        }
        (Loss::Mse, Targets::Values(values)) => {
            if values.dim() != output.dim() {
                return Err(Error::shape(
                    "reconstruction targets",
                    format!("{:?}", output.dim()),
                    format!("{:?}", values.dim()),
                ));
            }
            let diff = &output - &values;
            let half = T::of(0.5);
            let total = diff.iter().map(|&d| d * d).sum::<T>() * half * inv_b;
            Ok((total, diff * inv_b))
        }
        (Loss::SoftmaxCrossEntropy, Targets::Values(_)) => Err(Error::InvalidArgument(
            "cross-entropy needs class labels".into(),
        )),
        (Loss::Mse, Targets::Labels(_)) => {
            Err(Error::InvalidArgument("mse needs target values".into()))
        }
    }
}

impl<T: Scalar> Network<T> {
    /// Scalar loss on a batch.
    pub fn loss(
        &self,
        inputs: ArrayView2<'_, T>,
        targets: Targets<'_, T>,
        loss: Loss,
    ) -> Result<T> {
        let trace = self.forward(inputs)?;
        Ok(loss_and_output_grad(trace.output(), targets, loss)?.0)
    }

    /// Loss and gradient of every parameter on a batch.
    pub fn loss_and_gradients(
        &self,
        inputs: ArrayView2<'_, T>,
        targets: Targets<'_, T>,
        loss: Loss,
    ) -> Result<(T, Gradients<T>)> {
        let trace = self.forward(inputs)?;
        let (value, grad_out) = loss_and_output_grad(trace.output(), targets, loss)?;
        Ok((value, self.backward(&trace, grad_out)))
    }

    /// Backpropagates `grad_out` (gradient w.r.t. the network output)
    /// through a trace produced by [`Network::forward`].
    pub fn backward(&self, trace: &ForwardTrace<T>, grad_out: Array2<T>) -> Gradients<T> {
        let depth = self.depth();
        let mut grads: Vec<Option<LayerParams<T>>> = vec![None; depth];
        let mut delta = grad_out;
        for i in (0..depth).rev() {
            let spec = &self.spec.layers[i];
            let params = &self.layers[i];
            let act = self.spec.activation_of(i);
            let input = trace.layer_input(i);
            let need_input_grad = i > 0;
            let (g, d_in) = layer_backward(
                spec,
                params,
                act,
                input,
                &trace.layers[i],
                delta,
                need_input_grad,
            );
            grads[i] = Some(g);
            match d_in {
                Some(d) => delta = d,
                None => break,
            }
        }
        grads
            .into_iter()
            .map(|g| g.expect("every layer visited"))
            .collect()
    }
}

/// Multiplies by `f'(z)`; the sigmoid derivative is read off the stored
/// activation.
fn times_derivative<T: Scalar>(
    delta: &mut Array2<T>,
    pre: ArrayView2<'_, T>,
    post: ArrayView2<'_, T>,
    act: Activation,
) {
    match act {
        Activation::Linear => {}
        Activation::Sigmoid => Zip::from(delta)
            .and(post)
            .for_each(|d, &a| *d *= a * (T::one() - a)),
        Activation::Relu => Zip::from(delta)
            .and(pre)
            .for_each(|d, &z| *d *= act.derivative(z)),
    }
}

/// Returns the parameter gradient and, if requested, the gradient with
/// respect to the layer input. `delta` is the gradient w.r.t. the layer
/// output (the final hidden state for recurrent layers).
fn layer_backward<T: Scalar>(
    spec: &LayerSpec,
    params: &LayerParams<T>,
    act: Activation,
    input: ArrayView2<'_, T>,
    trace: &LayerTrace<T>,
    mut delta: Array2<T>,
    need_input_grad: bool,
) -> (LayerParams<T>, Option<Array2<T>>) {
    match *spec {
        LayerSpec::Dense { .. } => {
            times_derivative(
                &mut delta,
                trace.pre_activations.view(),
                trace.activations.view(),
                act,
            );
            let grad = LayerParams {
                weights: input.t().dot(&delta),
                recurrent: None,
                bias: delta.sum_axis(Axis(0)),
            };
            let d_in = need_input_grad.then(|| delta.dot(&params.weights.t()));
            (grad, d_in)
        }
        LayerSpec::Conv2d { .. } => {
            let g = ConvGeometry::of(spec).expect("validated convolution spec");
            times_derivative(
                &mut delta,
                trace.pre_activations.view(),
                trace.activations.view(),
                act,
            );
            let rows = channel_major_to_positions(&g, delta.view());
            let cols = im2col(&g, input);
            let grad = LayerParams {
                weights: rows.t().dot(&cols),
                recurrent: None,
                bias: rows.sum_axis(Axis(0)),
            };
            let d_in = need_input_grad.then(|| {
                let d_cols = rows.dot(&params.weights);
                col2im(&g, d_cols.view(), input.nrows())
            });
            (grad, d_in)
        }
        LayerSpec::Recurrent {
            time_steps, hidden, ..
        } => {
            let u = params.recurrent.as_ref().expect("recurrent map present");
            let batch = input.nrows();
            let mut d_w = Array2::<T>::zeros(params.weights.dim());
            let mut d_u = Array2::<T>::zeros(u.dim());
            let mut d_b = ndarray::Array1::<T>::zeros(hidden);
            let mut d_in = need_input_grad.then(|| Array2::<T>::zeros(input.dim()));
            // delta holds dL/dh(t+1) while walking t backwards.
            for t in (0..time_steps).rev() {
                let mut dz = delta;
                times_derivative(&mut dz, trace.pre_at(t), trace.act_at(t), act);
                let x = step_input(spec, input, t);
                d_w += &x.t().dot(&dz);
                d_b += &dz.sum_axis(Axis(0));
                if t > 0 {
                    let h_prev = trace.act_at(t - 1);
                    d_u += &h_prev.t().dot(&dz);
                }
                if let Some(d_in) = d_in.as_mut() {
                    let dx = dz.dot(&params.weights.t());
                    scatter_step(spec, d_in, dx.view(), t);
                }
                delta = if t > 0 {
                    dz.dot(&u.t())
                } else {
                    Array2::zeros((batch, hidden))
                };
            }
            let grad = LayerParams {
                weights: d_w,
                recurrent: Some(d_u),
                bias: d_b,
            };
            (grad, d_in)
        }
    }
}

/// Mean per-element squared reconstruction error.
pub fn mean_squared_error<T: Scalar>(output: ArrayView2<'_, T>, target: ArrayView2<'_, T>) -> f64 {
    let n = output.len().max(1) as f64;
    Zip::from(output)
        .and(target)
        .fold(0.0, |acc, &y, &t| acc + (y - t).to_f64_lossless().powi(2))
        / n
}

/// Fraction of rows whose argmax matches the label.
pub fn accuracy<T: Scalar>(output: ArrayView2<'_, T>, labels: &[usize]) -> f64 {
    let predicted = crate::engine::forward::argmax_rows(output);
    let hits = predicted.iter().zip(labels).filter(|(p, l)| p == l).count();
    hits as f64 / labels.len().max(1) as f64
}
