//! Mini-batch SGD with momentum.

use std::time::Instant;

use ndarray::{s, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::engine::architecture::Task;
use crate::engine::backprop::{accuracy, mean_squared_error, Loss, Targets};
use crate::engine::network::{LayerParams, Network};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub momentum: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub loss: Loss,
    /// Standard deviation of the Gaussian weight initialization.
    pub init_std: f64,
    pub seed: u64,
}

impl TrainConfig {
    /// SGD, lr 0.01, momentum 0.9, batch 64; 10 epochs and init std 0.05
    /// for MNIST, 20 epochs and init std 0.5 for CIFAR-10.
    pub fn defaults(task: Task, dataset: &str) -> Self {
        let cifar = dataset.eq_ignore_ascii_case("cifar10");
        TrainConfig {
            learning_rate: 0.01,
            momentum: 0.9,
            batch_size: 64,
            epochs: if cifar { 20 } else { 10 },
            loss: match task {
                Task::Classification => Loss::SoftmaxCrossEntropy,
                Task::Reconstruction => Loss::Mse,
            },
            init_std: if cifar { 0.5 } else { 0.05 },
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if !(self.learning_rate.is_finite() && self.learning_rate >= 0.0) {
            return bad(format!(
                "learning_rate must be finite and non-negative, got {}",
                self.learning_rate
            ));
        }
        if !(self.momentum.is_finite() && (0.0..1.0).contains(&self.momentum)) {
            return bad(format!(
                "momentum must lie in [0, 1), got {}",
                self.momentum
            ));
        }
        if self.batch_size == 0 {
            return bad("batch_size must be positive".into());
        }
        if self.epochs == 0 {
            return bad("epochs must be positive".into());
        }
        if !(self.init_std.is_finite() && self.init_std > 0.0) {
            return bad(format!("init_std must be positive, got {}", self.init_std));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MetricKind {
    Accuracy,
    Mse,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    /// Mean training loss of each epoch.
    pub epoch_losses: Vec<f64>,
    /// Accuracy (classification) or per-element MSE (reconstruction) on the
    /// evaluation split.
    pub final_metric: f64,
    pub metric: MetricKind,
    pub wall_time_secs: f64,
}

/// Accuracy or reconstruction MSE of `network` on `dataset`.
pub fn evaluate<T: Scalar>(network: &Network<T>, dataset: &Dataset<T>) -> Result<f64> {
    const CHUNK: usize = 2000;
    let n = dataset.len();
    let mut weighted = 0.0;
    for start in (0..n).step_by(CHUNK) {
        let end = (start + CHUNK).min(n);
        let x = dataset.inputs.slice(s![start..end, ..]);
        let out = network.predict(x)?;
        let part = match network.spec.task {
            Task::Classification => {
                let labels = dataset.labels.as_ref().ok_or_else(|| {
                    Error::InvalidArgument(format!("dataset `{}` has no labels", dataset.name))
                })?;
                accuracy(out.view(), &labels[start..end])
            }
            Task::Reconstruction => mean_squared_error(out.view(), x),
        };
        weighted += part * (end - start) as f64;
    }
    Ok(weighted / n.max(1) as f64)
}

fn check_compatible<T: Scalar>(
    network: &Network<T>,
    dataset: &Dataset<T>,
    config: &TrainConfig,
) -> Result<()> {
    if dataset.feature_dim() != network.spec.input_width() {
        return Err(Error::shape(
            format!("dataset `{}`", dataset.name),
            format!("{} features", network.spec.input_width()),
            format!("{} features", dataset.feature_dim()),
        ));
    }
    match (network.spec.task, config.loss) {
        (Task::Classification, Loss::SoftmaxCrossEntropy) => {
            if dataset.labels.is_none() {
                return Err(Error::InvalidArgument(
                    "classification training needs a labelled dataset".into(),
                ));
            }
            if dataset.class_count > network.spec.output_width() {
                return Err(Error::InvalidArgument(format!(
                    "{} classes but only {} outputs",
                    dataset.class_count,
                    network.spec.output_width()
                )));
            }
        }
        (Task::Reconstruction, Loss::Mse) => {}
        (task, loss) => {
            return Err(Error::InvalidArgument(format!(
                "loss {loss:?} does not fit task {task:?}"
            )))
        }
    }
    if dataset.is_empty() {
        return Err(Error::InvalidArgument(
            "cannot train on an empty dataset".into(),
        ));
    }
    Ok(())
}

/// Trains in place. On divergence the parameters are rolled back to the
/// start of the failing epoch and [`Error::Diverged`] is returned.
pub fn train<T: Scalar>(
    network: &mut Network<T>,
    train_set: &Dataset<T>,
    eval_set: Option<&Dataset<T>>,
    config: &TrainConfig,
) -> Result<TrainReport> {
    config.validate()?;
    check_compatible(network, train_set, config)?;
    let started = Instant::now();
    let lr = T::of(config.learning_rate);
    let momentum = T::of(config.momentum);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ network.seed.rotate_left(32));
    let mut velocity: Vec<LayerParams<T>> =
        network.spec.layers.iter().map(LayerParams::zeros).collect();
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut epoch_losses = Vec::with_capacity(config.epochs);

    for epoch in 0..config.epochs {
        let snapshot = network.layers.clone();
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for chunk in order.chunks(config.batch_size) {
            let x = train_set.inputs.select(Axis(0), chunk);
            let labels: Vec<usize>;
            let targets = match config.loss {
                Loss::SoftmaxCrossEntropy => {
                    let all = train_set.labels.as_ref().expect("checked above");
                    labels = chunk.iter().map(|&i| all[i]).collect();
                    Targets::Labels(&labels)
                }
                Loss::Mse => Targets::Values(x.view()),
            };
            let (loss, grads) = network.loss_and_gradients(x.view(), targets, config.loss)?;
            let loss = loss.to_f64_lossless();
            if !loss.is_finite() {
                network.layers = snapshot;
                return Err(Error::Diverged { epoch, loss });
            }
            total += loss * chunk.len() as f64;
            for ((p, v), g) in network.layers.iter_mut().zip(&mut velocity).zip(&grads) {
                v.scale(momentum);
                v.scaled_add(-lr, g);
                p.scaled_add(T::one(), v);
            }
            if !network.is_finite() {
                network.layers = snapshot;
                return Err(Error::Diverged {
                    epoch,
                    loss: f64::NAN,
                });
            }
        }
        epoch_losses.push(total / train_set.len() as f64);
    }
    network.trained = true;
    let eval = eval_set.unwrap_or(train_set);
    let final_metric = evaluate(network, eval)?;
    Ok(TrainReport {
        epoch_losses,
        final_metric,
        metric: match network.spec.task {
            Task::Classification => MetricKind::Accuracy,
            Task::Reconstruction => MetricKind::Mse,
        },
        wall_time_secs: started.elapsed().as_secs_f64(),
    })
}
