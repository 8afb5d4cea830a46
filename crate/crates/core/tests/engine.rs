mod common;

use cnt_core::data::synthetic_dataset;
use cnt_core::engine::{
    evaluate, export_network, grad_check, grad_check_with, import_network, network_from_json,
    network_to_json, train, Activation, ArchitectureKind, ArchitectureSpec, InputGeometry,
    LayerSpec, Loss, Network, Targets, Task, TrainConfig,
};
use cnt_core::Error;
use common::*;
use rand::Rng;

const GRAD_TOL: f64 = 1e-4;

#[test]
fn gradients_match_finite_differences_for_every_layer_kind() {
    for kind in KINDS {
        for act in ACTIVATIONS {
            for seed in 0..3 {
                let (net, x) = away_from_kinks(kind, act, seed);
                let labels: Vec<usize> = (0..x.nrows()).map(|i| (i + seed as usize) % 3).collect();
                let ce = grad_check(
                    &net,
                    x.view(),
                    Targets::Labels(&labels),
                    Loss::SoftmaxCrossEntropy,
                    GRAD_TOL,
                )
                .unwrap();
                assert!(ce.passed, "{kind} {act} seed {seed}: cross-entropy {ce:?}");
                let target = uniform(&mut rng(seed), x.nrows(), 3, 1.0);
                let mse = grad_check(
                    &net,
                    x.view(),
                    Targets::Values(target.view()),
                    Loss::Mse,
                    GRAD_TOL,
                )
                .unwrap();
                assert!(mse.passed, "{kind} {act} seed {seed}: mse {mse:?}");
                assert_eq!(ce.checked, net.parameter_count());
            }
        }
    }
}

#[test]
fn grad_check_catches_a_corrupted_gradient() {
    let (net, x) = away_from_kinks(ArchitectureKind::Cnn, Activation::Sigmoid, 1);
    let labels = [0, 1, 2];
    let targets = Targets::Labels(&labels);
    let report = grad_check_with(
        &net,
        x.view(),
        targets,
        Loss::SoftmaxCrossEntropy,
        GRAD_TOL,
        |n| {
            let mut g = n
                .loss_and_gradients(x.view(), targets, Loss::SoftmaxCrossEntropy)?
                .1;
            g[1].bias[0] += 1e-2;
            Ok(g)
        },
    )
    .unwrap();
    assert!(!report.passed);
    let bias_index = bias_offset(&net, 1);
    assert_eq!(report.worst, Some((2, bias_index)));
}

fn bias_offset(net: &Network<f64>, layer: usize) -> usize {
    let p = &net.layers[layer];
    p.weights.len() + p.recurrent.as_ref().map_or(0, |u| u.len())
}

#[test]
fn linear_network_collapses_to_one_affine_map() {
    let spec =
        ArchitectureSpec::fully_connected(&[7, 6, 5, 4], Activation::Linear, Task::Classification);
    for seed in 0..5 {
        let net = random_network(&spec, 0.6, seed);
        let x = uniform(&mut rng(seed + 10), 9, 7, 2.0);
        let mut m = net.layers[0].weights.clone();
        let mut b = net.layers[0].bias.clone();
        for p in &net.layers[1..] {
            m = m.dot(&p.weights);
            b = b.dot(&p.weights) + &p.bias;
        }
        let expected = x.dot(&m) + &b;
        let got = net.predict(x.view()).unwrap();
        for (a, e) in got.iter().zip(&expected) {
            assert!((a - e).abs() < 1e-9, "{a} vs {e}");
        }
    }
}

#[test]
fn zero_linear_network_outputs_zero() {
    let spec =
        ArchitectureSpec::fully_connected(&[4, 3, 2], Activation::Linear, Task::Classification);
    let net = Network::<f64>::zeros(&spec).unwrap();
    let trace = net.forward(uniform(&mut rng(0), 5, 4, 3.0).view()).unwrap();
    for l in &trace.layers {
        assert!(l
            .pre_activations
            .iter()
            .chain(&l.activations)
            .all(|&v| v == 0.0));
    }
}

#[test]
fn traces_apply_the_activation_elementwise() {
    for kind in KINDS {
        for act in ACTIVATIONS {
            let net = mixed_network(kind, act, 4);
            let x = uniform(&mut rng(4), 6, net.spec.input_width(), 1.0);
            let trace = net.forward(x.view()).unwrap();
            for (i, l) in trace.layers.iter().enumerate() {
                let f = net.spec.activation_of(i);
                for (z, a) in l.pre_activations.iter().zip(&l.activations) {
                    assert!((f.apply(*z) - a).abs() < 1e-12);
                }
            }
            let last = trace.layers.last().unwrap();
            assert_eq!(
                last.pre_activations, last.activations,
                "output layer must be linear"
            );
        }
    }
}

#[test]
fn recurrent_forward_matches_the_loop_oracle() {
    let worst = check_rnn_oracle(100, 17).unwrap();
    assert!(worst < 1e-10, "{worst}");
}

#[test]
fn recurrent_first_step_sees_no_history() {
    let mut r = rng(5);
    let spec = random_rnn(&mut r, Activation::Sigmoid);
    let net = random_network(&spec, 0.9, 5);
    let LayerSpec::Recurrent {
        step_width,
        channels,
        ..
    } = spec.layers[0]
    else {
        unreachable!()
    };
    let x = uniform(&mut r, 2, spec.input_width(), 1.0);
    let trace = net.forward(x.view()).unwrap();
    let p = &net.layers[0];
    let first = trace.layers[0].pre_at(0);
    for s in 0..2 {
        for j in 0..first.ncols() {
            let mut z = p.bias[j];
            for c in 0..channels {
                for k in 0..step_width {
                    z += x[[s, c * spec.layers[0].time_steps() * step_width + k]]
                        * p.weights[[c * step_width + k, j]];
                }
            }
            assert!((first[[s, j]] - z).abs() < 1e-12);
        }
    }
}

#[test]
fn building_is_deterministic_in_the_seed() {
    let spec = ArchitectureSpec::preset(
        ArchitectureKind::Cnn,
        3,
        Activation::Relu,
        InputGeometry::MNIST,
        10,
    )
    .unwrap();
    let a = Network::<f64>::build(&spec, 0.05, 11).unwrap();
    let b = Network::<f64>::build(&spec, 0.05, 11).unwrap();
    let c = Network::<f64>::build(&spec, 0.05, 12).unwrap();
    assert!(a.bit_identical(&b));
    assert!(!a.bit_identical(&c));
    assert!(a.layers.iter().all(|l| l.bias.iter().all(|&v| v == 0.0)));
}

#[test]
fn initial_weights_have_the_requested_spread() {
    let spec =
        ArchitectureSpec::fully_connected(&[300, 200], Activation::Sigmoid, Task::Classification);
    let net = Network::<f64>::build(&spec, 0.5, 3).unwrap();
    let w = &net.layers[0].weights;
    let n = w.len() as f64;
    let mean = w.sum() / n;
    let std = (w.mapv(|v| (v - mean).powi(2)).sum() / n).sqrt();
    assert!(mean.abs() < 0.01, "{mean}");
    assert!((std - 0.5).abs() < 0.01, "{std}");
}

fn linear_classifier_config(epochs: usize) -> TrainConfig {
    let mut c = TrainConfig::defaults(Task::Classification, "synthetic");
    c.epochs = epochs;
    c.learning_rate = 0.1;
    c.batch_size = 16;
    c
}

#[test]
fn synthetic_blobs_are_linearly_separable() {
    let data = synthetic_dataset::<f64>(0, 200, 4, 2).unwrap();
    let spec = ArchitectureSpec::fully_connected(&[4, 2], Activation::Linear, Task::Classification);
    let mut net = Network::<f64>::build(&spec, 0.05, 0).unwrap();
    let report = train(&mut net, &data, Some(&data), &linear_classifier_config(20)).unwrap();
    assert!(report.final_metric >= 0.95, "{report:?}");
    assert!(net.trained);
}

#[test]
fn training_is_deterministic() {
    let data = synthetic_dataset::<f64>(1, 120, 6, 3).unwrap();
    let spec =
        ArchitectureSpec::fully_connected(&[6, 5, 3], Activation::Sigmoid, Task::Classification);
    let run = || {
        let mut net = Network::<f64>::build(&spec, 0.3, 9).unwrap();
        let report = train(&mut net, &data, None, &linear_classifier_config(3)).unwrap();
        (net, report.epoch_losses)
    };
    let (a, la) = run();
    let (b, lb) = run();
    assert!(a.bit_identical(&b));
    assert_eq!(la, lb);
}

#[test]
fn zero_learning_rate_leaves_parameters_unchanged() {
    let data = synthetic_dataset::<f64>(2, 100, 4, 2).unwrap();
    let spec =
        ArchitectureSpec::fully_connected(&[4, 3, 2], Activation::Relu, Task::Classification);
    let mut net = Network::<f64>::build(&spec, 0.2, 4).unwrap();
    let before = net.clone();
    let baseline = evaluate(&before, &data).unwrap();
    let mut config = linear_classifier_config(2);
    config.learning_rate = 0.0;
    let report = train(&mut net, &data, Some(&data), &config).unwrap();
    assert!(before.layers.iter().zip(&net.layers).all(|(a, b)| a == b));
    assert_eq!(report.final_metric, baseline);
}

#[test]
fn least_squares_loss_decreases_monotonically() {
    // Targets are an exact linear function of the inputs.
    let mut r = rng(8);
    let x = uniform(&mut r, 64, 3, 1.0).mapv(|v| v.abs());
    let truth = uniform(&mut r, 3, 3, 1.0);
    let y = x.dot(&truth);
    let spec = spec(
        ArchitectureKind::Fc,
        vec![LayerSpec::dense(3, 3)],
        Activation::Linear,
        Task::Reconstruction,
    );
    let mut net = Network::<f64>::build(&spec, 0.05, 1).unwrap();
    let mut losses = Vec::new();
    let mut velocity: Option<Vec<_>> = None;
    for _ in 0..5 {
        // Full-batch gradient descent through the public gradient API.
        let (loss, grads) = net
            .loss_and_gradients(x.view(), Targets::Values(y.view()), Loss::Mse)
            .unwrap();
        losses.push(loss);
        let v = velocity.get_or_insert_with(|| grads.iter().map(|g| g.clone()).collect());
        for ((p, g), vel) in net.layers.iter_mut().zip(&grads).zip(v.iter_mut()) {
            vel.scale(0.0);
            vel.scaled_add(1.0, g);
            p.scaled_add(-0.1, vel);
        }
    }
    assert!(losses.windows(2).all(|w| w[1] < w[0]), "{losses:?}");

    // Same through the trainer, on the reconstruction path.
    let data = cnt_core::data::Dataset {
        name: "linear".into(),
        split: cnt_core::data::Split::Train,
        inputs: x.clone(),
        labels: None,
        class_count: 0,
        geometry: None,
    };
    let mut net = Network::<f64>::build(&spec, 0.05, 1).unwrap();
    let mut config = TrainConfig::defaults(Task::Reconstruction, "synthetic");
    config.epochs = 5;
    config.momentum = 0.0;
    config.batch_size = 64;
    config.learning_rate = 0.1;
    let report = train(&mut net, &data, None, &config).unwrap();
    assert!(
        report.epoch_losses.windows(2).all(|w| w[1] < w[0]),
        "{:?}",
        report.epoch_losses
    );
}

#[test]
fn divergence_reports_the_epoch_and_rolls_back() {
    let data = synthetic_dataset::<f64>(3, 64, 4, 2).unwrap();
    let spec =
        ArchitectureSpec::fully_connected(&[4, 8, 2], Activation::Linear, Task::Classification);
    let mut net = Network::<f64>::build(&spec, 1.0, 0).unwrap();
    let mut config = linear_classifier_config(40);
    config.learning_rate = 1e6;
    match train(&mut net, &data, None, &config) {
        Err(Error::Diverged { epoch, .. }) => assert!(epoch >= 1),
        other => panic!("expected divergence, got {other:?}"),
    }
    assert!(net.is_finite());
}

#[test]
fn serialization_round_trips_bit_exactly() {
    for kind in KINDS {
        for act in ACTIVATIONS {
            let net = mixed_network(kind, act, 21);
            let back: Network<f64> = network_from_json(&network_to_json(&net).unwrap()).unwrap();
            assert!(net.bit_identical(&back), "{kind} {act}");
        }
    }
    let mut r = rng(3);
    let spec =
        ArchitectureSpec::fully_connected(&[5, 4], Activation::Sigmoid, Task::Classification);
    let mut net = Network::<f32>::build(&spec, 0.3, 1).unwrap();
    net.layers[0]
        .bias
        .mapv_inplace(|_| r.random_range(-1.0f32..1.0));
    let back: Network<f32> = network_from_json(&network_to_json(&net).unwrap()).unwrap();
    assert!(net.bit_identical(&back));
}

#[test]
fn trained_network_scores_the_same_after_a_file_round_trip() {
    let data = synthetic_dataset::<f64>(4, 300, 16, 4).unwrap();
    let spec = ArchitectureSpec::fully_connected(
        &[16, 12, 8, 4],
        Activation::Sigmoid,
        Task::Classification,
    );
    let mut net = Network::<f64>::build(&spec, 0.5, 2).unwrap();
    let report = train(&mut net, &data, Some(&data), &linear_classifier_config(5)).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("fc.json");
    export_network(&net, &path).unwrap();
    let back: Network<f64> = import_network(&path).unwrap();
    assert!(net.bit_identical(&back));
    assert_eq!(evaluate(&back, &data).unwrap(), report.final_metric);
}

#[test]
fn import_widens_but_never_narrows() {
    let spec = ArchitectureSpec::fully_connected(&[3, 2], Activation::Relu, Task::Classification);
    let narrow = Network::<f32>::build(&spec, 0.3, 1).unwrap();
    let wide: Network<f64> = network_from_json(&network_to_json(&narrow).unwrap()).unwrap();
    assert_eq!(
        wide.layers[0].weights[[1, 1]],
        narrow.layers[0].weights[[1, 1]] as f64
    );
    let err = network_from_json::<f32>(&network_to_json(&wide).unwrap()).unwrap_err();
    assert!(err.to_string().contains("scalar"), "{err}");
}
