//! Forward evaluation with full per-layer capture.

use ndarray::{s, Array2, ArrayView2, Axis, Zip};

use crate::engine::architecture::{Activation, LayerSpec};
use crate::engine::network::{LayerParams, Network};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Pre-activations and activations of one layer for a batch.
///
/// Both arrays are `[batch x width * time_steps]`; for recurrent layers the
/// columns `t*width .. (t+1)*width` hold `z(t)` and `h(t+1) = f(z(t))`.
#[derive(Clone, Debug)]
pub struct LayerTrace<T> {
    pub pre_activations: Array2<T>,
    pub activations: Array2<T>,
    pub time_steps: usize,
    pub width: usize,
}

impl<T: Scalar> LayerTrace<T> {
    pub fn pre_at(&self, t: usize) -> ArrayView2<'_, T> {
        self.pre_activations
            .slice(s![.., t * self.width..(t + 1) * self.width])
    }

    pub fn act_at(&self, t: usize) -> ArrayView2<'_, T> {
        self.activations
            .slice(s![.., t * self.width..(t + 1) * self.width])
    }

    /// What the next layer consumes: the activations, or the final hidden
    /// state of a recurrent layer.
    pub fn output(&self) -> ArrayView2<'_, T> {
        self.act_at(self.time_steps - 1)
    }
}

#[derive(Clone, Debug)]
pub struct ForwardTrace<T> {
    pub inputs: Array2<T>,
    pub layers: Vec<LayerTrace<T>>,
}

impl<T: Scalar> ForwardTrace<T> {
    /// Raw network output (logits or reconstruction).
    pub fn output(&self) -> ArrayView2<'_, T> {
        self.layers
            .last()
            .map(LayerTrace::output)
            .unwrap_or_else(|| self.inputs.view())
    }

    /// Input consumed by 0-based layer `index`.
    pub fn layer_input(&self, index: usize) -> ArrayView2<'_, T> {
        if index == 0 {
            self.inputs.view()
        } else {
            self.layers[index - 1].output()
        }
    }

    pub fn batch_size(&self) -> usize {
        self.inputs.nrows()
    }
}

impl<T: Scalar> Network<T> {
    pub fn forward(&self, batch: ArrayView2<'_, T>) -> Result<ForwardTrace<T>> {
        let expected = self.spec.input_width();
        if batch.ncols() != expected {
            return Err(Error::shape(
                "forward input",
                format!("{expected} features"),
                format!("{} features", batch.ncols()),
            ));
        }
        if batch.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("forward input batch".into()));
        }
        let mut layers: Vec<LayerTrace<T>> = Vec::with_capacity(self.depth());
        for (i, (spec, params)) in self.spec.layers.iter().zip(&self.layers).enumerate() {
            let act = self.spec.activation_of(i);
            let input = match layers.last() {
                Some(prev) => prev.output(),
                None => batch.view(),
            };
            let trace = layer_forward(spec, params, act, input);
            layers.push(trace);
        }
        Ok(ForwardTrace {
            inputs: batch.to_owned(),
            layers,
        })
    }

    /// Network output only, without keeping the trace.
    pub fn predict(&self, batch: ArrayView2<'_, T>) -> Result<Array2<T>> {
        Ok(self.forward(batch)?.output().to_owned())
    }
}

pub(crate) fn layer_forward<T: Scalar>(
    spec: &LayerSpec,
    params: &LayerParams<T>,
    act: Activation,
    input: ArrayView2<'_, T>,
) -> LayerTrace<T> {
    match *spec {
        LayerSpec::Dense { fan_out, .. } => {
            let pre = dense_affine(input, params);
            let activations = pre.mapv(|z| act.apply(z));
            LayerTrace {
                pre_activations: pre,
                activations,
                time_steps: 1,
                width: fan_out,
            }
        }
        LayerSpec::Conv2d { .. } => {
            let pre = conv_affine(spec, params, input);
            let activations = pre.mapv(|z| act.apply(z));
            LayerTrace {
                pre_activations: pre,
                activations,
                time_steps: 1,
                width: spec.fan_out(),
            }
        }
        LayerSpec::Recurrent {
            time_steps, hidden, ..
        } => recurrent_forward(spec, params, act, input, time_steps, hidden),
    }
}

/// `z = a W + b` over a batch.
pub(crate) fn dense_affine<T: Scalar>(
    input: ArrayView2<'_, T>,
    params: &LayerParams<T>,
) -> Array2<T> {
    let mut z = input.dot(&params.weights);
    z += &params.bias;
    z
}

/// Convolution geometry unpacked from a [`LayerSpec::Conv2d`].
#[derive(Clone, Copy, Debug)]
pub(crate) struct ConvGeometry {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub out_height: usize,
    pub out_width: usize,
}

impl ConvGeometry {
    pub fn of(spec: &LayerSpec) -> Option<Self> {
        let (out_height, out_width) = spec.conv_output_hw()?;
        match *spec {
            LayerSpec::Conv2d {
                in_channels,
                in_height,
                in_width,
                out_channels,
                kernel_size,
                stride,
            } => Some(ConvGeometry {
                channels: in_channels,
                height: in_height,
                width: in_width,
                out_channels,
                kernel: kernel_size,
                stride,
                out_height,
                out_width,
            }),
            _ => None,
        }
    }

    pub fn positions(&self) -> usize {
        self.out_height * self.out_width
    }

    pub fn patch_len(&self) -> usize {
        self.channels * self.kernel * self.kernel
    }
}

/// Unrolls every receptive field of every sample into a row:
/// `[batch * positions x channels * m * m]`. Working memory for the batched
/// product only; the memory is linear in the input size times `m^2`.
pub(crate) fn im2col<T: Scalar>(g: &ConvGeometry, input: ArrayView2<'_, T>) -> Array2<T> {
    let batch = input.nrows();
    let positions = g.positions();
    let patch = g.patch_len();
    let m = g.kernel;
    let mut cols: Vec<T> = Vec::with_capacity(batch * positions * patch);
    let input = input.as_standard_layout();
    let flat = input.as_slice().expect("standard layout is contiguous");
    let sample_len = g.channels * g.height * g.width;
    for sample in flat.chunks_exact(sample_len.max(1)).take(batch) {
        for oy in 0..g.out_height {
            for ox in 0..g.out_width {
                for c in 0..g.channels {
                    let plane = c * g.height * g.width;
                    for ky in 0..m {
                        let start = plane + (oy * g.stride + ky) * g.width + ox * g.stride;
                        cols.extend_from_slice(&sample[start..start + m]);
                    }
                }
            }
        }
    }
    Array2::from_shape_vec((batch * positions, patch), cols).expect("one row per patch")
}

/// Scatters patch gradients back onto the input layout (adjoint of
/// [`im2col`]).
pub(crate) fn col2im<T: Scalar>(
    g: &ConvGeometry,
    cols: ArrayView2<'_, T>,
    batch: usize,
) -> Array2<T> {
    let positions = g.positions();
    let patch = g.patch_len();
    let m = g.kernel;
    let sample_len = g.channels * g.height * g.width;
    let cols = cols.as_standard_layout();
    let cols = cols.as_slice().expect("standard layout is contiguous");
    let mut out = vec![T::zero(); batch * sample_len];
    for (b, sample) in out
        .chunks_exact_mut(sample_len.max(1))
        .enumerate()
        .take(batch)
    {
        for oy in 0..g.out_height {
            for ox in 0..g.out_width {
                let r = (b * positions + oy * g.out_width + ox) * patch;
                let row = &cols[r..r + patch];
                let mut k = 0;
                for c in 0..g.channels {
                    let plane = c * g.height * g.width;
                    for ky in 0..m {
                        let start = plane + (oy * g.stride + ky) * g.width + ox * g.stride;
                        for (dst, &v) in sample[start..start + m].iter_mut().zip(&row[k..k + m]) {
                            *dst += v;
                        }
                        k += m;
                    }
                }
            }
        }
    }
    Array2::from_shape_vec((batch, sample_len), out).expect("one row per sample")
}

/// `[batch * positions x out_channels]` to `[batch x out_channels * positions]`.
pub(crate) fn positions_to_channel_major<T: Scalar>(
    g: &ConvGeometry,
    rows: ArrayView2<'_, T>,
    batch: usize,
) -> Array2<T> {
    let p = g.positions();
    let oc = g.out_channels;
    let rows = rows.as_standard_layout();
    let src = rows.as_slice().expect("standard layout is contiguous");
    let mut out = vec![T::zero(); batch * oc * p];
    for b in 0..batch {
        let dst = &mut out[b * oc * p..(b + 1) * oc * p];
        let block = &src[b * p * oc..(b + 1) * p * oc];
        for pos in 0..p {
            for o in 0..oc {
                dst[o * p + pos] = block[pos * oc + o];
            }
        }
    }
    Array2::from_shape_vec((batch, oc * p), out).expect("sizes match")
}

pub(crate) fn channel_major_to_positions<T: Scalar>(
    g: &ConvGeometry,
    values: ArrayView2<'_, T>,
) -> Array2<T> {
    let p = g.positions();
    let oc = g.out_channels;
    let batch = values.nrows();
    let values = values.as_standard_layout();
    let src = values.as_slice().expect("standard layout is contiguous");
    let mut out = vec![T::zero(); batch * p * oc];
    for b in 0..batch {
        let dst = &mut out[b * p * oc..(b + 1) * p * oc];
        let block = &src[b * oc * p..(b + 1) * oc * p];
        for o in 0..oc {
            for pos in 0..p {
                dst[pos * oc + o] = block[o * p + pos];
            }
        }
    }
    Array2::from_shape_vec((batch * p, oc), out).expect("sizes match")
}

fn conv_affine<T: Scalar>(
    spec: &LayerSpec,
    params: &LayerParams<T>,
    input: ArrayView2<'_, T>,
) -> Array2<T> {
    let g = ConvGeometry::of(spec).expect("validated convolution spec");
    let cols = im2col(&g, input);
    let mut rows = cols.dot(&params.weights.t());
    rows += &params.bias;
    positions_to_channel_major(&g, rows.view(), input.nrows())
}

/// Gathers the features of time step `t` (0-based) from flat inputs.
pub(crate) fn step_input<T: Scalar>(
    spec: &LayerSpec,
    input: ArrayView2<'_, T>,
    t: usize,
) -> Array2<T> {
    match *spec {
        LayerSpec::Recurrent {
            channels,
            time_steps,
            step_width,
            ..
        } => {
            if channels == 1 {
                return input
                    .slice(s![.., t * step_width..(t + 1) * step_width])
                    .to_owned();
            }
            let mut out = Array2::zeros((input.nrows(), channels * step_width));
            for c in 0..channels {
                let src = c * time_steps * step_width + t * step_width;
                out.slice_mut(s![.., c * step_width..(c + 1) * step_width])
                    .assign(&input.slice(s![.., src..src + step_width]));
            }
            out
        }
        _ => panic!("step_input on a non-recurrent layer"),
    }
}

/// Adds the gradient of step `t`'s features back onto flat input positions.
pub(crate) fn scatter_step<T: Scalar>(
    spec: &LayerSpec,
    grad_input: &mut Array2<T>,
    step_grad: ArrayView2<'_, T>,
    t: usize,
) {
    if let LayerSpec::Recurrent {
        channels,
        time_steps,
        step_width,
        ..
    } = *spec
    {
        for c in 0..channels {
            let dst = c * time_steps * step_width + t * step_width;
            let mut target = grad_input.slice_mut(s![.., dst..dst + step_width]);
            target += &step_grad.slice(s![.., c * step_width..(c + 1) * step_width]);
        }
    }
}

/// Loop-based recurrence with `h(1) = 0`.
fn recurrent_forward<T: Scalar>(
    spec: &LayerSpec,
    params: &LayerParams<T>,
    act: Activation,
    input: ArrayView2<'_, T>,
    time_steps: usize,
    hidden: usize,
) -> LayerTrace<T> {
    let batch = input.nrows();
    let u = params
        .recurrent
        .as_ref()
        .expect("recurrent layer carries a recurrent map");
    let mut pre = Array2::<T>::zeros((batch, time_steps * hidden));
    let mut post = Array2::<T>::zeros((batch, time_steps * hidden));
    let mut h = Array2::<T>::zeros((batch, hidden));
    for t in 0..time_steps {
        let x = step_input(spec, input, t);
        let mut z = x.dot(&params.weights);
        z += &h.dot(u);
        z += &params.bias;
        h = z.mapv(|v| act.apply(v));
        pre.slice_mut(s![.., t * hidden..(t + 1) * hidden])
            .assign(&z);
        post.slice_mut(s![.., t * hidden..(t + 1) * hidden])
            .assign(&h);
    }
    LayerTrace {
        pre_activations: pre,
        activations: post,
        time_steps,
        width: hidden,
    }
}

/// Row-wise argmax of raw outputs.
pub fn argmax_rows<T: Scalar>(values: ArrayView2<'_, T>) -> Vec<usize> {
    values
        .axis_iter(Axis(0))
        .map(|row| {
            let mut best = 0;
            for (i, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = i;
                }
            }
            best
        })
        .collect()
}

/// Elementwise `f(z)` check used by trace-consistency tests.
pub fn max_activation_residual<T: Scalar>(trace: &LayerTrace<T>, act: Activation) -> T {
    let mut worst = T::zero();
    Zip::from(&trace.pre_activations)
        .and(&trace.activations)
        .for_each(|&z, &a| {
            let d = (act.apply(z) - a).abs();
            if d > worst {
                worst = d;
            }
        });
    worst
}
