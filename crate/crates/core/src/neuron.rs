//! Data-dependent metrics: neuron strength (the pre-activation of a unit for
//! a sampled input) and neuron activation.
//!
//! Each layer kind has its own evaluation path, written as explicit sums
//! and independent of the batched forward pass:
//!
//! - dense layers sum `z_i w_ik + b_k` directly;
//! - convolutions iterate over input patches (patch isolation), never
//!   forming the Toeplitz matrix, which is kept only as a test oracle;
//! - recurrent layers are unfolded in time, one feed-forward stage per step.

use std::fmt::Write as _;

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::data::SampleBatch;
use crate::engine::forward::{layer_forward, ConvGeometry};
use crate::engine::{Activation, InputGeometry, LayerParams, LayerSpec, Network};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NeuronMetricKind {
    Strength,
    Activation,
}

/// Per-sample values of one layer's units.
///
/// `values` is `[samples x time_steps * width]`; column `t * width + k`
/// holds unit `k` at time step `t`. Non-recurrent layers have one step.
#[derive(Clone, Debug, PartialEq)]
pub struct NeuronMetricMatrix<T> {
    pub layer: usize,
    pub kind: NeuronMetricKind,
    pub values: Array2<T>,
    pub time_steps: usize,
    pub width: usize,
    pub seed: u64,
}

impl<T: Scalar> NeuronMetricMatrix<T> {
    pub fn samples(&self) -> usize {
        self.values.nrows()
    }

    pub fn at(&self, sample: usize, t: usize, unit: usize) -> T {
        self.values[[sample, t * self.width + unit]]
    }

    /// Mean over samples and time steps for each unit.
    pub fn unit_means(&self) -> Vec<f64> {
        let mut sums = vec![0.0; self.width];
        for row in self.values.rows() {
            for (i, &v) in row.iter().enumerate() {
                sums[i % self.width] += v.to_f64_lossless();
            }
        }
        let n = (self.samples() * self.time_steps).max(1) as f64;
        sums.into_iter().map(|s| s / n).collect()
    }

    pub fn to_f64_vec(&self) -> Vec<f64> {
        self.values.iter().map(|v| v.to_f64_lossless()).collect()
    }

    /// CSV rows `network_seed,layer,sample_idx,neuron_idx[,time_step],value`.
    pub fn write_csv(&self, network_seed: u64, out: &mut String) {
        let recurrent = self.time_steps > 1;
        out.push_str(if recurrent {
            "network_seed,layer,sample_idx,neuron_idx,time_step,value\n"
        } else {
            "network_seed,layer,sample_idx,neuron_idx,value\n"
        });
        for (s, row) in self.values.rows().into_iter().enumerate() {
            for (i, &v) in row.iter().enumerate() {
                let (t, k) = (i / self.width, i % self.width);
                let v = v.to_f64_lossless();
                let layer = self.layer;
                if recurrent {
                    writeln!(out, "{network_seed},{layer},{s},{k},{},{v:e}", t + 1)
                } else {
                    writeln!(out, "{network_seed},{layer},{s},{k},{v:e}")
                }
                .expect("writing to a String");
            }
        }
    }
}

/// Input reaching 1-based `layer`, propagated through the layers before it.
fn input_of_layer<T: Scalar>(
    network: &Network<T>,
    samples: &SampleBatch<T>,
    layer: usize,
) -> Result<Array2<T>> {
    network.layer(layer)?;
    let expected = network.spec.input_width();
    if samples.inputs.ncols() != expected {
        return Err(Error::shape(
            "sample batch",
            format!("{expected} features"),
            format!("{} features", samples.inputs.ncols()),
        ));
    }
    if samples.inputs.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("sample batch".into()));
    }
    let mut z = samples.inputs.clone();
    for i in 0..layer - 1 {
        let act = network.spec.activation_of(i);
        z = layer_forward(&network.spec.layers[i], &network.layers[i], act, z.view())
            .output()
            .to_owned();
    }
    Ok(z)
}

/// Neuron strength of every unit of `layer` for every sample.
pub fn neuron_strength<T: Scalar>(
    network: &Network<T>,
    samples: &SampleBatch<T>,
    layer: usize,
) -> Result<NeuronMetricMatrix<T>> {
    let (spec, params) = network.layer(layer)?;
    let z = input_of_layer(network, samples, layer)?;
    let (values, time_steps, width) = match spec {
        LayerSpec::Dense { fan_out, .. } => (dense_strength(params, z.view()), 1, *fan_out),
        LayerSpec::Conv2d { .. } => (
            conv_patch_strength(spec, params, z.view())?,
            1,
            spec.fan_out(),
        ),
        LayerSpec::Recurrent {
            time_steps, hidden, ..
        } => (
            unfolded_strength(
                spec,
                params,
                network.spec.activation_of(layer - 1),
                z.view(),
            )?,
            *time_steps,
            *hidden,
        ),
    };
    Ok(NeuronMetricMatrix {
        layer,
        kind: NeuronMetricKind::Strength,
        values,
        time_steps,
        width,
        seed: samples.seed,
    })
}

/// Element-wise activation of [`neuron_strength`].
pub fn neuron_activation<T: Scalar>(
    network: &Network<T>,
    samples: &SampleBatch<T>,
    layer: usize,
) -> Result<NeuronMetricMatrix<T>> {
    let strength = neuron_strength(network, samples, layer)?;
    Ok(activation_of_strength(
        &strength,
        network.spec.activation_of(layer - 1),
    ))
}

pub fn activation_of_strength<T: Scalar>(
    strength: &NeuronMetricMatrix<T>,
    act: Activation,
) -> NeuronMetricMatrix<T> {
    NeuronMetricMatrix {
        kind: NeuronMetricKind::Activation,
        values: strength.values.mapv(|z| act.apply(z)),
        ..strength.clone()
    }
}

fn dense_strength<T: Scalar>(params: &LayerParams<T>, z: ArrayView2<'_, T>) -> Array2<T> {
    let (fan_in, fan_out) = params.weights.dim();
    let mut out = Array2::zeros((z.nrows(), fan_out));
    for (s, sample) in z.outer_iter().enumerate() {
        for k in 0..fan_out {
            let mut acc = params.bias[k];
            for i in 0..fan_in {
                acc += sample[i] * params.weights[[i, k]];
            }
            out[[s, k]] = acc;
        }
    }
    out
}

fn require_conv(spec: &LayerSpec) -> Result<ConvGeometry> {
    ConvGeometry::of(spec).ok_or(Error::LayerKind {
        layer: 0,
        expected: "conv2d",
        found: spec.kind_name(),
    })
}

/// Convolution strengths by patch isolation: each output unit is the dot
/// product of its input patch with the kernel, plus the channel bias.
/// Output columns are `[out_channel][out_row][out_col]`.
pub fn conv_patch_strength<T: Scalar>(
    spec: &LayerSpec,
    params: &LayerParams<T>,
    input: ArrayView2<'_, T>,
) -> Result<Array2<T>> {
    let g = require_conv(spec)?;
    if input.ncols() != spec.fan_in() {
        return Err(Error::shape(
            "convolution input",
            spec.fan_in(),
            input.ncols(),
        ));
    }
    let m = g.kernel;
    let mut out = Array2::zeros((input.nrows(), spec.fan_out()));
    for (s, x) in input.outer_iter().enumerate() {
        for o in 0..g.out_channels {
            let kernel = params.weights.row(o);
            for oy in 0..g.out_height {
                for ox in 0..g.out_width {
                    let mut acc = params.bias[o];
                    for c in 0..g.channels {
                        for ky in 0..m {
                            let row = (c * g.height + oy * g.stride + ky) * g.width + ox * g.stride;
                            for kx in 0..m {
                                acc += x[row + kx] * kernel[(c * m + ky) * m + kx];
                            }
                        }
                    }
                    out[[s, (o * g.out_height + oy) * g.out_width + ox]] = acc;
                }
            }
        }
    }
    Ok(out)
}

/// Patch-isolation strengths of a convolution layer.
pub fn conv_neuron_strength<T: Scalar>(
    network: &Network<T>,
    samples: &SampleBatch<T>,
    layer: usize,
) -> Result<NeuronMetricMatrix<T>> {
    let (spec, _) = network.layer(layer)?;
    if !matches!(spec, LayerSpec::Conv2d { .. }) {
        return Err(Error::LayerKind {
            layer,
            expected: "conv2d",
            found: spec.kind_name(),
        });
    }
    neuron_strength(network, samples, layer)
}

/// Test oracle: builds the doubly blocked Toeplitz matrix of the
/// convolution and applies it to one flat input. Quadratic in the input
/// size.
pub fn conv_toeplitz_oracle<T: Scalar>(
    spec: &LayerSpec,
    params: &LayerParams<T>,
    input: ArrayView1<'_, T>,
) -> Result<Array1<T>> {
    let g = match spec {
        LayerSpec::Conv2d {
            kernel_size,
            in_height,
            in_width,
            ..
        } if kernel_size > in_height || kernel_size > in_width => {
            return Err(Error::InvalidSpec(format!(
                "kernel {kernel_size}x{kernel_size} larger than input {in_height}x{in_width}"
            )))
        }
        _ => require_conv(spec)?,
    };
    if input.len() != spec.fan_in() {
        return Err(Error::shape(
            "convolution input",
            spec.fan_in(),
            input.len(),
        ));
    }
    let m = g.kernel;
    let mut toeplitz = Array2::<T>::zeros((spec.fan_out(), spec.fan_in()));
    let mut bias = Array1::<T>::zeros(spec.fan_out());
    for o in 0..g.out_channels {
        for oy in 0..g.out_height {
            for ox in 0..g.out_width {
                let r = (o * g.out_height + oy) * g.out_width + ox;
                bias[r] = params.bias[o];
                for c in 0..g.channels {
                    for ky in 0..m {
                        for kx in 0..m {
                            let col =
                                (c * g.height + oy * g.stride + ky) * g.width + ox * g.stride + kx;
                            toeplitz[[r, col]] = params.weights[[o, (c * m + ky) * m + kx]];
                        }
                    }
                }
            }
        }
    }
    Ok(toeplitz.dot(&input) + bias)
}

/// Temporal unfolding: step `t` is a feed-forward stage computing
/// `z(t) = x(t) W + f(z(t-1)) U + b`, with a zero hidden state before the
/// first step.
fn unfolded_strength<T: Scalar>(
    spec: &LayerSpec,
    params: &LayerParams<T>,
    act: Activation,
    input: ArrayView2<'_, T>,
) -> Result<Array2<T>> {
    let LayerSpec::Recurrent {
        channels,
        time_steps,
        step_width,
        hidden,
    } = *spec
    else {
        return Err(Error::LayerKind {
            layer: 0,
            expected: "recurrent",
            found: spec.kind_name(),
        });
    };
    if input.ncols() != spec.fan_in() {
        return Err(Error::shape(
            "recurrent input",
            spec.fan_in(),
            input.ncols(),
        ));
    }
    let u = params
        .recurrent
        .as_ref()
        .expect("recurrent layer carries U");
    let w = &params.weights;
    let mut out = Array2::zeros((input.nrows(), time_steps * hidden));
    let mut h = vec![T::zero(); hidden];
    let mut z = vec![T::zero(); hidden];
    for (s, x) in input.outer_iter().enumerate() {
        h.iter_mut().for_each(|v| *v = T::zero());
        for t in 0..time_steps {
            for (j, zj) in z.iter_mut().enumerate() {
                let mut acc = params.bias[j];
                for c in 0..channels {
                    let base = (c * time_steps + t) * step_width;
                    for i in 0..step_width {
                        acc += x[base + i] * w[[c * step_width + i, j]];
                    }
                }
                for (k, &hk) in h.iter().enumerate() {
                    acc += hk * u[[k, j]];
                }
                *zj = acc;
            }
            for j in 0..hidden {
                out[[s, t * hidden + j]] = z[j];
                h[j] = act.apply(z[j]);
            }
        }
    }
    Ok(out)
}

/// 1-based index of the first recurrent layer.
pub fn recurrent_layer<T: Scalar>(network: &Network<T>) -> Result<usize> {
    network
        .spec
        .layers
        .iter()
        .position(|l| matches!(l, LayerSpec::Recurrent { .. }))
        .map(|i| i + 1)
        .ok_or_else(|| Error::InvalidArgument("network has no recurrent layer".into()))
}

/// Per-step strengths of the network's recurrent layer.
pub fn rnn_unfolded_strength<T: Scalar>(
    network: &Network<T>,
    samples: &SampleBatch<T>,
) -> Result<NeuronMetricMatrix<T>> {
    neuron_strength(network, samples, recurrent_layer(network)?)
}

/// Mean absolute recurrent strength attributed to input positions. Step
/// `t` consumes image row `t`, so its value fills row `t` of the grid.
#[derive(Clone, Debug, PartialEq)]
pub struct StrengthHeatmap {
    pub grid: Array2<f64>,
    pub trained: bool,
    pub dataset: String,
}

#[derive(Serialize)]
struct HeatmapSidecar<'a> {
    height: usize,
    width: usize,
    trained: bool,
    dataset: &'a str,
}

impl StrengthHeatmap {
    pub fn height(&self) -> usize {
        self.grid.nrows()
    }

    pub fn width(&self) -> usize {
        self.grid.ncols()
    }

    pub fn row_means(&self) -> Vec<f64> {
        self.grid
            .mean_axis(Axis(1))
            .expect("non-empty grid")
            .to_vec()
    }

    /// Means of the middle half of the rows and of the remaining outer rows.
    pub fn central_and_outer_means(&self) -> (f64, f64) {
        let rows = self.row_means();
        let h = rows.len();
        let lo = h / 4;
        let hi = h - h / 4;
        let central: Vec<f64> = rows[lo..hi].to_vec();
        let outer: Vec<f64> = rows[..lo].iter().chain(&rows[hi..]).copied().collect();
        let mean = |v: &[f64]| {
            if v.is_empty() {
                0.0
            } else {
                v.iter().sum::<f64>() / v.len() as f64
            }
        };
        (mean(&central), mean(&outer))
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        for row in self.grid.rows() {
            let line: Vec<String> = row.iter().map(|v| format!("{v:e}")).collect();
            out.push_str(&line.join(","));
            out.push('\n');
        }
        out
    }

    pub fn sidecar_json(&self) -> String {
        serde_json::to_string_pretty(&HeatmapSidecar {
            height: self.height(),
            width: self.width(),
            trained: self.trained,
            dataset: &self.dataset,
        })
        .expect("plain struct serializes")
    }
}

pub fn rnn_strength_heatmap<T: Scalar>(
    network: &Network<T>,
    samples: &SampleBatch<T>,
    geometry: InputGeometry,
    dataset: &str,
) -> Result<StrengthHeatmap> {
    let layer = recurrent_layer(network)?;
    let spec = network.spec.layers[layer - 1];
    let LayerSpec::Recurrent {
        channels,
        time_steps,
        step_width,
        ..
    } = spec
    else {
        unreachable!("recurrent_layer returns a recurrent layer");
    };
    if geometry.channels != channels
        || geometry.height != time_steps
        || geometry.width != step_width
    {
        return Err(Error::shape(
            "heatmap geometry",
            format!("{channels}x{time_steps}x{step_width}"),
            format!(
                "{}x{}x{}",
                geometry.channels, geometry.height, geometry.width
            ),
        ));
    }
    let strength = neuron_strength(network, samples, layer)?;
    let mut grid = Array2::zeros((geometry.height, geometry.width));
    let denom = (strength.samples() * strength.width).max(1) as f64;
    for t in 0..time_steps {
        let mut sum = 0.0;
        for s in 0..strength.samples() {
            for k in 0..strength.width {
                sum += strength.at(s, t, k).to_f64_lossless().abs();
            }
        }
        grid.row_mut(t).fill(sum / denom);
    }
    Ok(StrengthHeatmap {
        grid,
        trained: network.trained,
        dataset: dataset.to_string(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::{ArchitectureSpec, Task};
    use ndarray::array;

    fn one_layer(w: Array2<f64>, b: Array1<f64>, act: Activation) -> Network<f64> {
        let spec =
            ArchitectureSpec::fully_connected(&[w.nrows(), w.ncols()], act, Task::Classification);
        let mut spec = spec;
        // Single-layer nets are output layers, which are always linear; a
        // second identity layer keeps `act` on the layer under test.
        spec.layers.push(LayerSpec::dense(w.ncols(), w.ncols()));
        let eye = Array2::eye(w.ncols());
        let n = w.ncols();
        Network::from_parts(
            spec,
            vec![
                LayerParams {
                    weights: w,
                    recurrent: None,
                    bias: b,
                },
                LayerParams {
                    weights: eye,
                    recurrent: None,
                    bias: Array1::zeros(n),
                },
            ],
        )
        .unwrap()
    }

    #[test]
    fn dense_hand_example() {
        let net = one_layer(
            array![[2.0, 1.0], [1.0, 2.0]],
            array![0.5, 0.5],
            Activation::Relu,
        );
        let batch = SampleBatch::from_inputs(array![[1.0, -1.0]]);
        let z = neuron_strength(&net, &batch, 1).unwrap();
        assert_eq!(z.values, array![[1.5, -0.5]]);
        let a = neuron_activation(&net, &batch, 1).unwrap();
        assert_eq!(a.values, array![[1.5, 0.0]]);
    }

    #[test]
    fn identity_and_zero_input() {
        let net = one_layer(Array2::eye(3), array![0.1, 0.2, 0.3], Activation::Linear);
        let x = array![[0.0, 0.0, 0.0]];
        let z = neuron_strength(&net, &SampleBatch::from_inputs(x), 1).unwrap();
        assert_eq!(z.values, array![[0.1, 0.2, 0.3]]);
        let net = one_layer(Array2::eye(3), Array1::zeros(3), Activation::Linear);
        let x = array![[0.4, -2.0, 7.0]];
        let z = neuron_strength(&net, &SampleBatch::from_inputs(x.clone()), 1).unwrap();
        assert_eq!(z.values, x);
        let a = neuron_activation(&net, &SampleBatch::from_inputs(x), 1).unwrap();
        assert_eq!(a.values, z.values);
    }

    fn conv(
        h: usize,
        w: usize,
        m: usize,
        stride: usize,
        kernel: Vec<f64>,
        bias: f64,
    ) -> (LayerSpec, LayerParams<f64>) {
        let spec = LayerSpec::Conv2d {
            in_channels: 1,
            in_height: h,
            in_width: w,
            out_channels: 1,
            kernel_size: m,
            stride,
        };
        let params = LayerParams {
            weights: Array2::from_shape_vec((1, m * m), kernel).unwrap(),
            recurrent: None,
            bias: array![bias],
        };
        (spec, params)
    }

    #[test]
    fn conv_all_ones() {
        let (spec, params) = conv(3, 3, 2, 1, vec![1.0; 4], 0.0);
        let x = Array2::ones((1, 9));
        let out = conv_patch_strength(&spec, &params, x.view()).unwrap();
        assert_eq!(out, Array2::from_elem((1, 4), 4.0));
    }

    #[test]
    fn conv_zero_kernel_gives_bias() {
        let (spec, params) = conv(4, 4, 3, 1, vec![0.0; 9], -0.25);
        let x = Array2::from_shape_fn((2, 16), |(i, j)| (i * 16 + j) as f64);
        let out = conv_patch_strength(&spec, &params, x.view()).unwrap();
        assert!(out.iter().all(|&v| v == -0.25));
    }

    #[test]
    fn toeplitz_unit_and_shift_kernels() {
        let x = Array1::from_shape_fn(12, |i| i as f64 * 0.5 - 1.0);
        let (spec, params) = conv(3, 4, 1, 1, vec![2.5], 0.0);
        assert_eq!(
            conv_toeplitz_oracle(&spec, &params, x.view()).unwrap(),
            &x * 2.5
        );
        let (spec, params) = conv(3, 4, 2, 1, vec![1.0, 0.0, 0.0, 0.0], 0.0);
        let out = conv_toeplitz_oracle(&spec, &params, x.view()).unwrap();
        let expected: Vec<f64> = (0..2)
            .flat_map(|r| (0..3).map(move |c| r * 4 + c))
            .map(|i| x[i])
            .collect();
        assert_eq!(out.to_vec(), expected);
        let (spec, params) = conv(2, 2, 1, 1, vec![1.0], 0.0);
        let big = LayerSpec::Conv2d {
            in_channels: 1,
            in_height: 2,
            in_width: 2,
            out_channels: 1,
            kernel_size: 3,
            stride: 1,
        };
        assert!(conv_toeplitz_oracle(&big, &params, Array1::zeros(4).view()).is_err());
        assert!(conv_toeplitz_oracle(&spec, &params, Array1::zeros(4).view()).is_ok());
    }

    fn scalar_rnn(w: f64, u: f64, act: Activation, steps: usize) -> Network<f64> {
        let spec = ArchitectureSpec {
            kind: crate::engine::ArchitectureKind::Rnn,
            layers: vec![
                LayerSpec::Recurrent {
                    channels: 1,
                    time_steps: steps,
                    step_width: 1,
                    hidden: 1,
                },
                LayerSpec::dense(1, 1),
            ],
            activation: act,
            task: Task::Classification,
        };
        Network::from_parts(
            spec,
            vec![
                LayerParams {
                    weights: array![[w]],
                    recurrent: Some(array![[u]]),
                    bias: array![0.0],
                },
                LayerParams {
                    weights: array![[1.0]],
                    recurrent: None,
                    bias: array![0.0],
                },
            ],
        )
        .unwrap()
    }

    #[test]
    fn scalar_recursion() {
        let net = scalar_rnn(1.0, 1.0, Activation::Linear, 2);
        let z = rnn_unfolded_strength(&net, &SampleBatch::from_inputs(array![[1.0, 1.0]])).unwrap();
        assert_eq!(z.at(0, 0, 0), 1.0);
        assert_eq!(z.at(0, 1, 0), 2.0);
    }

    #[test]
    fn severed_recurrence() {
        let net = scalar_rnn(0.7, 0.0, Activation::Sigmoid, 4);
        let x = array![[0.1, -0.4, 2.0, 3.0]];
        let z = rnn_unfolded_strength(&net, &SampleBatch::from_inputs(x.clone())).unwrap();
        for t in 0..4 {
            assert_eq!(z.at(0, t, 0), 0.7 * x[[0, t]]);
        }
    }

    #[test]
    fn zero_rnn_heatmap_is_zero() {
        let geometry = InputGeometry {
            channels: 1,
            height: 5,
            width: 3,
        };
        let spec = ArchitectureSpec::preset(
            crate::engine::ArchitectureKind::Rnn,
            2,
            Activation::Sigmoid,
            geometry,
            3,
        )
        .unwrap();
        let net = Network::<f64>::zeros(&spec).unwrap();
        let x = Array2::from_elem((4, 15), 0.5);
        let map = rnn_strength_heatmap(&net, &SampleBatch::from_inputs(x.clone()), geometry, "toy")
            .unwrap();
        assert_eq!((map.height(), map.width()), (5, 3));
        assert!(map.grid.iter().all(|&v| v == 0.0));
        let wrong = InputGeometry {
            height: 4,
            ..geometry
        };
        assert!(rnn_strength_heatmap(&net, &SampleBatch::from_inputs(x), wrong, "toy").is_err());
    }

    #[test]
    fn non_conv_layer_is_rejected() {
        let net = one_layer(Array2::eye(2), Array1::zeros(2), Activation::Linear);
        let batch = SampleBatch::from_inputs(array![[1.0, 2.0]]);
        assert!(matches!(
            conv_neuron_strength(&net, &batch, 1),
            Err(Error::LayerKind { layer: 1, .. })
        ));
        assert!(rnn_unfolded_strength(&net, &batch).is_err());
    }
}
