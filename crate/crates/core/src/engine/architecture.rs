//! Declarative network descriptions and the default presets used by the
//! experiments.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ArchitectureKind {
    Fc,
    Cnn,
    Rnn,
    Ae,
}

impl ArchitectureKind {
    pub fn name(self) -> &'static str {
        match self {
            ArchitectureKind::Fc => "fc",
            ArchitectureKind::Cnn => "cnn",
            ArchitectureKind::Rnn => "rnn",
            ArchitectureKind::Ae => "ae",
        }
    }
}

impl fmt::Display for ArchitectureKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Linear,
    Relu,
    Sigmoid,
}

impl Activation {
    #[inline]
    pub fn apply<T: Scalar>(self, z: T) -> T {
        match self {
            Activation::Linear => z,
            Activation::Relu => {
                if z > T::zero() {
                    z
                } else {
                    T::zero()
                }
            }
            Activation::Sigmoid => T::one() / (T::one() + (-z).exp()),
        }
    }

    /// Derivative with respect to the pre-activation `z`.
    #[inline]
    pub fn derivative<T: Scalar>(self, z: T) -> T {
        match self {
            Activation::Linear => T::one(),
            Activation::Relu => {
                if z > T::zero() {
                    T::one()
                } else {
                    T::zero()
                }
            }
            Activation::Sigmoid => {
                let s = self.apply(z);
                s * (T::one() - s)
            }
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Activation::Linear => "linear",
            Activation::Relu => "relu",
            Activation::Sigmoid => "sigmoid",
        }
    }
}

impl fmt::Display for Activation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    Classification,
    Reconstruction,
}

/// Image geometry of a flattened, channel-major input.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct InputGeometry {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
}

impl InputGeometry {
    pub const MNIST: InputGeometry = InputGeometry {
        channels: 1,
        height: 28,
        width: 28,
    };
    pub const CIFAR10: InputGeometry = InputGeometry {
        channels: 3,
        height: 32,
        width: 32,
    };

    pub fn len(&self) -> usize {
        self.channels * self.height * self.width
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// One parameterized transformation.
///
/// Inputs are flat rows. Convolutions read them channel-major
/// (`[channel][row][col]`); recurrent layers split them into `time_steps`
/// segments, where step `t` gathers image row `t` of every channel.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LayerSpec {
    Dense {
        fan_in: usize,
        fan_out: usize,
    },
    /// Valid-padding convolution with a square kernel.
    Conv2d {
        in_channels: usize,
        in_height: usize,
        in_width: usize,
        out_channels: usize,
        kernel_size: usize,
        stride: usize,
    },
    /// Plain recurrent cell, `h(t+1) = f(x(t) W + h(t) U + b)`, `h(1) = 0`.
    /// The layer output is the final hidden state.
    Recurrent {
        channels: usize,
        time_steps: usize,
        step_width: usize,
        hidden: usize,
    },
}

impl LayerSpec {
    pub fn dense(fan_in: usize, fan_out: usize) -> Self {
        LayerSpec::Dense { fan_in, fan_out }
    }

    pub fn kind_name(&self) -> &'static str {
        match self {
            LayerSpec::Dense { .. } => "dense",
            LayerSpec::Conv2d { .. } => "conv2d",
            LayerSpec::Recurrent { .. } => "recurrent",
        }
    }

    pub fn fan_in(&self) -> usize {
        match *self {
            LayerSpec::Dense { fan_in, .. } => fan_in,
            LayerSpec::Conv2d {
                in_channels,
                in_height,
                in_width,
                ..
            } => in_channels * in_height * in_width,
            LayerSpec::Recurrent {
                channels,
                time_steps,
                step_width,
                ..
            } => channels * time_steps * step_width,
        }
    }

    pub fn fan_out(&self) -> usize {
        match *self {
            LayerSpec::Dense { fan_out, .. } => fan_out,
            LayerSpec::Conv2d { out_channels, .. } => {
                let (oh, ow) = self.conv_output_hw().unwrap_or((0, 0));
                out_channels * oh * ow
            }
            LayerSpec::Recurrent { hidden, .. } => hidden,
        }
    }

    /// Spatial output size of a convolution, `None` for other kinds or when
    /// the kernel does not fit.
    pub fn conv_output_hw(&self) -> Option<(usize, usize)> {
        match *self {
            LayerSpec::Conv2d {
                in_height,
                in_width,
                kernel_size,
                stride,
                ..
            } if kernel_size <= in_height && kernel_size <= in_width && stride > 0 => Some((
                (in_height - kernel_size) / stride + 1,
                (in_width - kernel_size) / stride + 1,
            )),
            _ => None,
        }
    }

    /// Number of features consumed per time step (recurrent only).
    pub fn step_features(&self) -> Option<usize> {
        match *self {
            LayerSpec::Recurrent {
                channels,
                step_width,
                ..
            } => Some(channels * step_width),
            _ => None,
        }
    }

    /// Number of values a trace stores per sample for this layer.
    pub fn trace_width(&self) -> usize {
        match *self {
            LayerSpec::Recurrent {
                time_steps, hidden, ..
            } => time_steps * hidden,
            _ => self.fan_out(),
        }
    }

    pub fn time_steps(&self) -> usize {
        match *self {
            LayerSpec::Recurrent { time_steps, .. } => time_steps,
            _ => 1,
        }
    }

    /// Shape of the main weight array as (rows, cols).
    ///
    /// Dense and recurrent input maps are `[fan_in x fan_out]`; convolution
    /// kernels are stored `[out_channels x (in_channels * m * m)]`.
    pub fn weight_shape(&self) -> (usize, usize) {
        match *self {
            LayerSpec::Dense { fan_in, fan_out } => (fan_in, fan_out),
            LayerSpec::Conv2d {
                in_channels,
                out_channels,
                kernel_size,
                ..
            } => (out_channels, in_channels * kernel_size * kernel_size),
            LayerSpec::Recurrent {
                channels,
                step_width,
                hidden,
                ..
            } => (channels * step_width, hidden),
        }
    }

    /// Shape of the recurrent map `U`, if any.
    pub fn recurrent_shape(&self) -> Option<(usize, usize)> {
        match *self {
            LayerSpec::Recurrent { hidden, .. } => Some((hidden, hidden)),
            _ => None,
        }
    }

    pub fn bias_len(&self) -> usize {
        match *self {
            LayerSpec::Dense { fan_out, .. } => fan_out,
            LayerSpec::Conv2d { out_channels, .. } => out_channels,
            LayerSpec::Recurrent { hidden, .. } => hidden,
        }
    }

    pub fn parameter_count(&self) -> usize {
        let (r, c) = self.weight_shape();
        let u = self.recurrent_shape().map_or(0, |(a, b)| a * b);
        r * c + u + self.bias_len()
    }

    fn validate(&self, index: usize) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidSpec(format!("layer {}: {msg}", index + 1)));
        match *self {
            LayerSpec::Dense { fan_in, fan_out } => {
                if fan_in == 0 || fan_out == 0 {
                    return bad(format!(
                        "dense dimensions must be positive ({fan_in}x{fan_out})"
                    ));
                }
            }
            LayerSpec::Conv2d {
                in_channels,
                in_height,
                in_width,
                out_channels,
                kernel_size,
                stride,
            } => {
                if in_channels == 0 || in_height == 0 || in_width == 0 || out_channels == 0 {
                    return bad("convolution dimensions must be positive".into());
                }
                if kernel_size == 0 || stride == 0 {
                    return bad("kernel size and stride must be positive".into());
                }
                if kernel_size > in_height || kernel_size > in_width {
                    return bad(format!(
                        "kernel {kernel_size}x{kernel_size} larger than input {in_height}x{in_width}"
                    ));
                }
            }
            LayerSpec::Recurrent {
                channels,
                time_steps,
                step_width,
                hidden,
            } => {
                if time_steps == 0 {
                    return bad("recurrent layers need at least one time step".into());
                }
                if channels == 0 || step_width == 0 || hidden == 0 {
                    return bad("recurrent dimensions must be positive".into());
                }
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArchitectureSpec {
    pub kind: ArchitectureKind,
    pub layers: Vec<LayerSpec>,
    /// Applied to every hidden layer; the output layer is always linear.
    pub activation: Activation,
    pub task: Task,
}

impl ArchitectureSpec {
    /// Number of parameterized layers `L`.
    pub fn depth(&self) -> usize {
        self.layers.len()
    }

    pub fn input_width(&self) -> usize {
        self.layers.first().map_or(0, LayerSpec::fan_in)
    }

    pub fn output_width(&self) -> usize {
        self.layers.last().map_or(0, LayerSpec::fan_out)
    }

    /// Activation of parameterized layer `index` (0-based).
    pub fn activation_of(&self, index: usize) -> Activation {
        if index + 1 == self.layers.len() {
            Activation::Linear
        } else {
            self.activation
        }
    }

    pub fn parameter_count(&self) -> usize {
        self.layers.iter().map(LayerSpec::parameter_count).sum()
    }

    pub fn validate(&self) -> Result<()> {
        if self.layers.is_empty() {
            return Err(Error::InvalidSpec("at least one layer is required".into()));
        }
        for (i, layer) in self.layers.iter().enumerate() {
            layer.validate(i)?;
        }
        for (i, pair) in self.layers.windows(2).enumerate() {
            let (a, b) = (&pair[0], &pair[1]);
            if a.fan_out() != b.fan_in() {
                return Err(Error::InvalidSpec(format!(
                    "layers {} -> {}: {} output width {} does not match {} input width {}",
                    i + 1,
                    i + 2,
                    a.kind_name(),
                    a.fan_out(),
                    b.kind_name(),
                    b.fan_in()
                )));
            }
        }
        if self.kind == ArchitectureKind::Ae {
            if self.task != Task::Reconstruction {
                return Err(Error::InvalidSpec(
                    "autoencoders must use the reconstruction task".into(),
                ));
            }
            let mut widths = vec![self.input_width()];
            widths.extend(self.layers.iter().map(LayerSpec::fan_out));
            let reversed: Vec<_> = widths.iter().rev().copied().collect();
            if widths != reversed {
                return Err(Error::InvalidSpec(format!(
                    "autoencoder widths {widths:?} are not symmetric"
                )));
            }
            let bottleneck = widths.iter().copied().min().unwrap_or(0);
            if bottleneck >= widths[0] {
                return Err(Error::InvalidSpec(format!(
                    "autoencoder bottleneck {bottleneck} must be narrower than the input {}",
                    widths[0]
                )));
            }
        }
        if self.task == Task::Reconstruction && self.output_width() != self.input_width() {
            return Err(Error::InvalidSpec(format!(
                "reconstruction output width {} differs from input width {}",
                self.output_width(),
                self.input_width()
            )));
        }
        Ok(())
    }

    /// Fully connected stack through the given widths (input first).
    pub fn fully_connected(widths: &[usize], activation: Activation, task: Task) -> Self {
        let kind = if task == Task::Reconstruction {
            ArchitectureKind::Ae
        } else {
            ArchitectureKind::Fc
        };
        ArchitectureSpec {
            kind,
            layers: widths
                .windows(2)
                .map(|w| LayerSpec::dense(w[0], w[1]))
                .collect(),
            activation,
            task,
        }
    }

    /// Default experiment architectures.
    ///
    /// `depth` counts parameterized layers for FC and CNN, and neuron layers
    /// (input and output included) for AE presets, so a 3-layer AE is
    /// `d -> 64 -> d`. RNN presets ignore `depth`: one 128-wide recurrent
    /// layer reading one image row per step, then a dense classifier.
    pub fn preset(
        kind: ArchitectureKind,
        depth: usize,
        activation: Activation,
        input: InputGeometry,
        classes: usize,
    ) -> Result<Self> {
        let d = input.len();
        let spec = match kind {
            ArchitectureKind::Fc => {
                if depth == 0 {
                    return Err(Error::InvalidSpec("FC depth must be at least 1".into()));
                }
                let mut widths = vec![d];
                widths.extend(fc_hidden_widths(depth, classes));
                widths.push(classes);
                Self::fully_connected(&widths, activation, Task::Classification)
            }
            ArchitectureKind::Ae => {
                let inner: &[usize] = match depth {
                    3 => &[64],
                    5 => &[256, 64, 256],
                    7 => &[256, 128, 32, 128, 256],
                    9 => &[256, 128, 64, 32, 64, 128, 256],
                    _ => {
                        return Err(Error::InvalidSpec(format!(
                            "no autoencoder preset for {depth} layers (available: 3, 5, 7, 9)"
                        )))
                    }
                };
                let mut widths = vec![d];
                widths.extend_from_slice(inner);
                widths.push(d);
                Self::fully_connected(&widths, activation, Task::Reconstruction)
            }
            ArchitectureKind::Cnn => {
                if depth < 2 {
                    return Err(Error::InvalidSpec(
                        "CNN presets need at least one convolution and a dense head".into(),
                    ));
                }
                let mut layers = Vec::with_capacity(depth);
                let (mut c, mut h, mut w) = (input.channels, input.height, input.width);
                for i in 0..depth - 1 {
                    let (out_channels, stride) = match i {
                        0 => (8, 1),
                        1 => (16, 2),
                        _ => (16, 1),
                    };
                    let layer = LayerSpec::Conv2d {
                        in_channels: c,
                        in_height: h,
                        in_width: w,
                        out_channels,
                        kernel_size: 3,
                        stride,
                    };
                    let (oh, ow) = layer.conv_output_hw().ok_or_else(|| {
                        Error::InvalidSpec(format!(
                            "CNN preset of depth {depth} shrinks the input below the kernel size at layer {}",
                            i + 1
                        ))
                    })?;
                    layers.push(layer);
                    (c, h, w) = (out_channels, oh, ow);
                }
                layers.push(LayerSpec::dense(c * h * w, classes));
                ArchitectureSpec {
                    kind,
                    layers,
                    activation,
                    task: Task::Classification,
                }
            }
            ArchitectureKind::Rnn => ArchitectureSpec {
                kind,
                layers: vec![
                    LayerSpec::Recurrent {
                        channels: input.channels,
                        time_steps: input.height,
                        step_width: input.width,
                        hidden: 128,
                    },
                    LayerSpec::dense(128, classes),
                ],
                activation,
                task: Task::Classification,
            },
        };
        spec.validate()?;
        Ok(spec)
    }
}

/// Hidden widths of the FC presets: 128 and 64 for three layers, otherwise a
/// geometric progression from 128 towards the output width.
fn fc_hidden_widths(depth: usize, out: usize) -> Vec<usize> {
    match depth {
        1 => vec![],
        2 => vec![128],
        3 => vec![128, 64],
        _ => {
            let ratio = out as f64 / 128.0;
            (0..depth - 1)
                .map(|i| {
                    let w = 128.0 * ratio.powf(i as f64 / (depth - 1) as f64);
                    (w.round() as usize).max(out)
                })
                .collect()
        }
    }
}
