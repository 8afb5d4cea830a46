//! Random instances and independent oracles shared by the integration
//! tests and the acceptance suite. Each `check_*` returns the largest
//! observed error, or a description of the violated property.

#![allow(dead_code)]

use cnt_core::data::SampleBatch;
use cnt_core::engine::{
    Activation, ArchitectureKind, ArchitectureSpec, LayerParams, LayerSpec, Network, Task,
};
use cnt_core::neuron::{
    conv_patch_strength, conv_toeplitz_oracle, neuron_activation, neuron_strength,
    rnn_unfolded_strength,
};
use cnt_core::stats::{ks_statistic, pearson, Histogram};
use cnt_core::topology::{
    layer_fluctuation, layer_stats, link_weight_mean, link_weight_variance, node_strength, BiasMode,
};
use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const ACTIVATIONS: [Activation; 3] =
    [Activation::Linear, Activation::Relu, Activation::Sigmoid];

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn uniform(rng: &mut ChaCha8Rng, rows: usize, cols: usize, scale: f64) -> Array2<f64> {
    Array2::from_shape_fn((rows, cols), |_| rng.random_range(-scale..scale))
}

/// Network with Gaussian weights and uniform biases in `[-0.5, 0.5)`.
pub fn random_network(spec: &ArchitectureSpec, std: f64, seed: u64) -> Network<f64> {
    let mut net = Network::<f64>::build(spec, std, seed).expect("valid test spec");
    let mut r = rng(seed ^ 0xb1a5);
    for layer in &mut net.layers {
        layer.bias.mapv_inplace(|_| r.random_range(-0.5..0.5));
    }
    net
}

pub fn spec(
    kind: ArchitectureKind,
    layers: Vec<LayerSpec>,
    activation: Activation,
    task: Task,
) -> ArchitectureSpec {
    let s = ArchitectureSpec {
        kind,
        layers,
        activation,
        task,
    };
    s.validate().expect("valid test spec");
    s
}

pub fn random_conv(r: &mut ChaCha8Rng, kernel: usize, stride: usize) -> LayerSpec {
    LayerSpec::Conv2d {
        in_channels: r.random_range(1..=3),
        in_height: r.random_range(kernel..kernel + 7),
        in_width: r.random_range(kernel..kernel + 7),
        out_channels: r.random_range(1..=3),
        kernel_size: kernel,
        stride,
    }
}

pub fn random_params(r: &mut ChaCha8Rng, layer: &LayerSpec) -> LayerParams<f64> {
    let mut p = LayerParams::zeros(layer);
    p.for_each_mut(|v| *v = r.random_range(-1.0..1.0));
    p
}

/// Patch isolation against the Toeplitz matrix on `instances` random
/// convolutions.
pub fn check_conv_oracle(
    kernel: usize,
    stride: usize,
    instances: usize,
    seed: u64,
) -> Result<f64, String> {
    let mut r = rng(seed);
    let mut worst = 0.0f64;
    for _ in 0..instances {
        let layer = random_conv(&mut r, kernel, stride);
        let params = random_params(&mut r, &layer);
        let x = uniform(&mut r, 1, layer.fan_in(), 1.0);
        let patch = conv_patch_strength(&layer, &params, x.view()).map_err(|e| e.to_string())?;
        let dense = conv_toeplitz_oracle(&layer, &params, x.row(0)).map_err(|e| e.to_string())?;
        if dense.len() != patch.ncols() {
            return Err(format!(
                "{layer:?}: oracle has {} outputs, patch isolation {}",
                dense.len(),
                patch.ncols()
            ));
        }
        for (a, b) in patch.row(0).iter().zip(&dense) {
            worst = worst.max((a - b).abs());
        }
    }
    Ok(worst)
}

/// Random recurrent classifier: one recurrent layer and a dense head.
pub fn random_rnn(r: &mut ChaCha8Rng, activation: Activation) -> ArchitectureSpec {
    let channels = r.random_range(1..=2);
    let time_steps = r.random_range(2..=6);
    let step_width = r.random_range(1..=4);
    let hidden = r.random_range(1..=5);
    spec(
        ArchitectureKind::Rnn,
        vec![
            LayerSpec::Recurrent {
                channels,
                time_steps,
                step_width,
                hidden,
            },
            LayerSpec::dense(hidden, 3),
        ],
        activation,
        Task::Classification,
    )
}

/// Recurrence evaluated step by step with explicit indexing; returns
/// `z(t)` for every step, `[batch][t][hidden]`.
pub fn loop_rnn_pre_activations(net: &Network<f64>, x: &Array2<f64>) -> Vec<Vec<Array1<f64>>> {
    let LayerSpec::Recurrent {
        channels,
        time_steps,
        step_width,
        hidden,
    } = net.spec.layers[0]
    else {
        panic!("first layer must be recurrent");
    };
    let p = &net.layers[0];
    let u = p.recurrent.as_ref().unwrap();
    let act = net.spec.activation;
    let mut out = Vec::new();
    for row in x.rows() {
        let mut h = Array1::<f64>::zeros(hidden);
        let mut steps = Vec::new();
        for t in 0..time_steps {
            let mut z = p.bias.clone();
            for c in 0..channels {
                for k in 0..step_width {
                    let xv = row[(c * time_steps + t) * step_width + k];
                    for j in 0..hidden {
                        z[j] += xv * p.weights[[c * step_width + k, j]];
                    }
                }
            }
            for i in 0..hidden {
                for j in 0..hidden {
                    z[j] += h[i] * u[[i, j]];
                }
            }
            h = z.mapv(|v| act.apply(v));
            steps.push(z);
        }
        out.push(steps);
    }
    out
}

/// Unfolded strengths and the traced forward pass against the loop oracle.
pub fn check_rnn_oracle(instances: usize, seed: u64) -> Result<f64, String> {
    let mut r = rng(seed);
    let mut worst = 0.0f64;
    for i in 0..instances {
        let act = ACTIVATIONS[i % 3];
        let spec = random_rnn(&mut r, act);
        let net = random_network(&spec, 0.7, r.random());
        let batch = r.random_range(1..=4);
        let x = uniform(&mut r, batch, spec.input_width(), 1.0);
        let expected = loop_rnn_pre_activations(&net, &x);
        let trace = net.forward(x.view()).map_err(|e| e.to_string())?;
        let unfolded = rnn_unfolded_strength(&net, &SampleBatch::from_inputs(x.clone()))
            .map_err(|e| e.to_string())?;
        for (s, steps) in expected.iter().enumerate() {
            for (t, z) in steps.iter().enumerate() {
                for (k, &v) in z.iter().enumerate() {
                    worst = worst.max((trace.layers[0].pre_at(t)[[s, k]] - v).abs());
                    worst = worst.max((unfolded.at(s, t, k) - v).abs());
                }
            }
        }
    }
    Ok(worst)
}

/// Link mean and variance against a naive double loop over a dense layer.
pub fn check_link_oracle(fan_in: usize, fan_out: usize, seed: u64) -> Result<f64, String> {
    let mut r = rng(seed);
    let layer = LayerSpec::dense(fan_in, fan_out);
    let p = random_params(&mut r, &layer);
    let mut sum = 0.0;
    for i in 0..fan_in {
        for j in 0..fan_out {
            sum += p.weights[[i, j]] + p.bias[j];
        }
    }
    let n = (fan_in * fan_out) as f64;
    let mean = sum / n;
    let mut sq = 0.0;
    for i in 0..fan_in {
        for j in 0..fan_out {
            let d = p.weights[[i, j]] + p.bias[j] - mean;
            sq += d * d;
        }
    }
    let variance = sq / n;
    let got_mean = link_weight_mean(&layer, &p).map_err(|e| e.to_string())?;
    let got_var = link_weight_variance(&layer, &p).map_err(|e| e.to_string())?;
    if got_var < 0.0 {
        return Err(format!("negative variance {got_var}"));
    }
    Ok((got_mean - mean).abs().max((got_var - variance).abs()))
}

/// Small network with dense, convolutional or recurrent hidden layers.
pub fn mixed_network(kind: ArchitectureKind, activation: Activation, seed: u64) -> Network<f64> {
    let layers = match kind {
        ArchitectureKind::Fc | ArchitectureKind::Ae => vec![
            LayerSpec::dense(6, 5),
            LayerSpec::dense(5, 4),
            LayerSpec::dense(4, 3),
        ],
        ArchitectureKind::Cnn => vec![
            LayerSpec::Conv2d {
                in_channels: 2,
                in_height: 5,
                in_width: 5,
                out_channels: 3,
                kernel_size: 3,
                stride: 1,
            },
            LayerSpec::Conv2d {
                in_channels: 3,
                in_height: 3,
                in_width: 3,
                out_channels: 2,
                kernel_size: 2,
                stride: 1,
            },
            LayerSpec::dense(8, 3),
        ],
        ArchitectureKind::Rnn => vec![
            LayerSpec::Recurrent {
                channels: 2,
                time_steps: 3,
                step_width: 2,
                hidden: 4,
            },
            LayerSpec::dense(4, 3),
        ],
    };
    let kind = if kind == ArchitectureKind::Ae {
        ArchitectureKind::Fc
    } else {
        kind
    };
    random_network(
        &spec(kind, layers, activation, Task::Classification),
        0.8,
        seed,
    )
}

pub const KINDS: [ArchitectureKind; 3] = [
    ArchitectureKind::Fc,
    ArchitectureKind::Cnn,
    ArchitectureKind::Rnn,
];

/// `s_total = s_in + s_out` exactly, on every node layer, in both bias modes.
pub fn check_strength_decomposition(net: &Network<f64>) -> Result<(), String> {
    for mode in [BiasMode::PerEdge, BiasMode::PerNode] {
        for l in 0..=net.depth() {
            for rec in node_strength(net, l, mode).map_err(|e| e.to_string())? {
                if rec.s_total != rec.s_in + rec.s_out {
                    return Err(format!(
                        "node layer {l} node {}: {} != {} + {}",
                        rec.node, rec.s_total, rec.s_in, rec.s_out
                    ));
                }
            }
        }
    }
    Ok(())
}

/// Scaling layer `l` by `c` scales its link mean by `c`, its variance by
/// `c^2`, the in strengths it feeds and the out strengths it reads by `c`,
/// and the matching fluctuations by `|c|`. Returns the largest relative
/// error.
pub fn check_scaling_covariance(net: &Network<f64>, c: f64) -> Result<f64, String> {
    let mut worst = 0.0f64;
    let mut rel = |a: f64, b: f64| {
        let e = (a - b).abs() / b.abs().max(1e-12);
        worst = worst.max(if (a - b).abs() < 1e-12 { 0.0 } else { e });
    };
    for l in 1..=net.depth() {
        let mut scaled = net.clone();
        scaled.layers[l - 1].for_each_mut(|v| *v *= c);
        let before = layer_stats(net, l, BiasMode::PerEdge).map_err(|e| e.to_string())?;
        let after = layer_stats(&scaled, l, BiasMode::PerEdge).map_err(|e| e.to_string())?;
        rel(after.mean, c * before.mean);
        rel(after.variance, c * c * before.variance);
        rel(after.fluctuation_in, c.abs() * before.fluctuation_in);
        let nb = node_strength(net, l, BiasMode::PerEdge).map_err(|e| e.to_string())?;
        let na = node_strength(&scaled, l, BiasMode::PerEdge).map_err(|e| e.to_string())?;
        for (a, b) in na.iter().zip(&nb) {
            rel(a.s_in, c * b.s_in);
        }
        // Out strengths of the source layer; a recurrent source also sends
        // through its own U, which this layer does not own.
        let source_recurrent = l >= 2 && net.layers[l - 2].recurrent.is_some();
        if !source_recurrent {
            let ob = node_strength(net, l - 1, BiasMode::PerEdge).map_err(|e| e.to_string())?;
            let oa = node_strength(&scaled, l - 1, BiasMode::PerEdge).map_err(|e| e.to_string())?;
            for (a, b) in oa.iter().zip(&ob) {
                rel(a.s_out, c * b.s_out);
            }
            let fb = layer_fluctuation(&ob.iter().map(|r| r.s_out).collect::<Vec<_>>())
                .map_err(|e| e.to_string())?;
            let fa = layer_fluctuation(&oa.iter().map(|r| r.s_out).collect::<Vec<_>>())
                .map_err(|e| e.to_string())?;
            rel(fa, c.abs() * fb);
        }
    }
    Ok(worst)
}

/// `Y(s + k) = Y(s)`; returns the absolute difference.
pub fn check_translation_invariance(strengths: &[f64], k: f64) -> Result<f64, String> {
    let shifted: Vec<f64> = strengths.iter().map(|s| s + k).collect();
    let a = layer_fluctuation(strengths).map_err(|e| e.to_string())?;
    let b = layer_fluctuation(&shifted).map_err(|e| e.to_string())?;
    Ok((a - b).abs())
}

/// Activation equals `f(strength)` on every layer, and the range of each
/// activation kind holds. Returns the largest deviation.
pub fn check_strength_activation_link(
    net: &Network<f64>,
    samples: &SampleBatch<f64>,
) -> Result<f64, String> {
    let mut worst = 0.0f64;
    for l in 1..=net.depth() {
        let act = net.spec.activation_of(l - 1);
        let zeta = neuron_strength(net, samples, l).map_err(|e| e.to_string())?;
        let a = neuron_activation(net, samples, l).map_err(|e| e.to_string())?;
        for (&z, &v) in zeta.values.iter().zip(&a.values) {
            worst = worst.max((act.apply(z) - v).abs());
            let in_range = match act {
                Activation::Sigmoid => v > 0.0 && v < 1.0 || z.abs() > 30.0,
                Activation::Relu => v >= 0.0,
                Activation::Linear => v == z,
            };
            if !in_range {
                return Err(format!(
                    "layer {l}: {act} activation {v} of strength {z} out of range"
                ));
            }
        }
    }
    Ok(worst)
}

/// Neuron strength of every dense layer equals the traced pre-activations.
pub fn check_dense_consistency(
    net: &Network<f64>,
    samples: &SampleBatch<f64>,
) -> Result<f64, String> {
    let trace = net
        .forward(samples.inputs.view())
        .map_err(|e| e.to_string())?;
    let mut worst = 0.0f64;
    for l in 1..=net.depth() {
        let zeta = neuron_strength(net, samples, l).map_err(|e| e.to_string())?;
        for (a, b) in zeta.values.iter().zip(&trace.layers[l - 1].pre_activations) {
            worst = worst.max((a - b).abs());
        }
    }
    Ok(worst)
}

/// `|r| <= 1`, and `r(x, a*y + b) = sign(a) * r(x, y)` for `a != 0`.
pub fn check_pearson_bounds(x: &[f64], y: &[f64], a: f64, b: f64) -> Result<(), String> {
    if let Some(r) = pearson(x, y) {
        if r.abs() > 1.0 {
            return Err(format!("|r| = {} > 1", r.abs()));
        }
        let shifted: Vec<f64> = y.iter().map(|v| a * v + b).collect();
        match pearson(x, &shifted) {
            Some(r2) if (a.signum() * r - r2).abs() < 1e-9 => {}
            other => return Err(format!("affine transform moved r from {r} to {other:?}")),
        }
    }
    Ok(())
}

pub fn check_ks_bounds(a: &[f64], b: &[f64]) -> Result<(), String> {
    let d = ks_statistic(a, b).map_err(|e| e.to_string())?;
    let e = ks_statistic(b, a).map_err(|e| e.to_string())?;
    if !(0.0..=1.0).contains(&d) || d != e {
        return Err(format!("KS {d} vs reversed {e}"));
    }
    Ok(())
}

pub fn check_histogram_conservation(values: &[f64], bins: usize) -> Result<(), String> {
    let h = Histogram::new(values, bins).map_err(|e| e.to_string())?;
    if h.total() != values.len() as u64 {
        return Err(format!("{} counts for {} values", h.total(), values.len()));
    }
    Ok(())
}

pub fn random_vec(r: &mut ChaCha8Rng, n: usize, scale: f64) -> Vec<f64> {
    (0..n).map(|_| r.random_range(-scale..scale)).collect()
}

/// Redraws the instance until no hidden pre-activation sits within 1e-3
/// of the ReLU kink, where central differences straddle two slopes.
pub fn away_from_kinks(
    kind: ArchitectureKind,
    act: Activation,
    seed: u64,
) -> (Network<f64>, Array2<f64>) {
    for attempt in 0..50 {
        let s = seed * 100 + attempt;
        let net = mixed_network(kind, act, s);
        let mut r = rng(s);
        let x = uniform(&mut r, 3, net.spec.input_width(), 1.0);
        if act != Activation::Relu {
            return (net, x);
        }
        let trace = net.forward(x.view()).unwrap();
        let hidden = &trace.layers[..trace.layers.len() - 1];
        let closest = hidden
            .iter()
            .flat_map(|l| l.pre_activations.iter())
            .fold(f64::INFINITY, |m, v| m.min(v.abs()));
        if closest > 1e-3 {
            return (net, x);
        }
    }
    panic!("no kink-free instance for {kind} {act}");
}
