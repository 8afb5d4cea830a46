//! Pools of identically specified networks that differ only in their
//! initialization seed, and the distributions of metrics pooled over them.

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{sample_inputs, Dataset, DEFAULT_SAMPLE_SIZE};
use crate::engine::{train, ArchitectureSpec, Network, TrainConfig, TrainReport};
use crate::error::{Error, Result};
use crate::neuron::{neuron_activation, neuron_strength};
use crate::scalar::Scalar;
use crate::stats::{ks_statistic, pearson, Histogram, Moments};
use crate::topology::{
    layer_fluctuation, link_weight_mean, link_weight_variance, node_strength, BiasMode,
};

/// Default number of equal-width histogram bins.
pub const DEFAULT_BINS: usize = 100;

#[derive(Clone, Debug)]
pub struct PoolMember<T> {
    /// Position in the pool; the member was built with `base_seed + index`.
    pub index: usize,
    pub seed: u64,
    pub untrained: Network<T>,
    pub trained: Network<T>,
    pub report: TrainReport,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PoolFailure {
    pub index: usize,
    pub seed: u64,
    pub message: String,
}

#[derive(Clone, Debug)]
pub struct PoolResult<T> {
    pub spec: ArchitectureSpec,
    pub base_seed: u64,
    pub config: TrainConfig,
    pub members: Vec<PoolMember<T>>,
    /// Members that diverged; they are excluded from every aggregate.
    pub failures: Vec<PoolFailure>,
}

impl<T: Scalar> PoolResult<T> {
    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn final_metrics(&self) -> Vec<f64> {
        self.members.iter().map(|m| m.report.final_metric).collect()
    }

    pub fn networks(&self, state: NetworkState) -> impl Iterator<Item = (usize, &Network<T>)> {
        self.members.iter().map(move |m| {
            (
                m.index,
                match state {
                    NetworkState::Trained => &m.trained,
                    NetworkState::Untrained => &m.untrained,
                },
            )
        })
    }
}

/// Trains `n` networks in parallel. Member `i` is built with seed
/// `base_seed + i` and trained with `config`; the pool is identical for
/// identical arguments regardless of scheduling.
pub fn train_pool<T: Scalar>(
    spec: &ArchitectureSpec,
    n: usize,
    base_seed: u64,
    train_set: &Dataset<T>,
    eval_set: Option<&Dataset<T>>,
    config: &TrainConfig,
) -> Result<PoolResult<T>> {
    if n == 0 {
        return Err(Error::InvalidArgument(
            "pool size must be at least 1".into(),
        ));
    }
    spec.validate()?;
    config.validate()?;
    let outcomes: Vec<(usize, u64, Result<PoolMember<T>>)> = (0..n)
        .into_par_iter()
        .map(|index| {
            let seed = base_seed.wrapping_add(index as u64);
            let run = || -> Result<PoolMember<T>> {
                let untrained = Network::build(spec, config.init_std, seed)?;
                let mut trained = untrained.clone();
                let report = train(&mut trained, train_set, eval_set, config)?;
                Ok(PoolMember {
                    index,
                    seed,
                    untrained,
                    trained,
                    report,
                })
            };
            (index, seed, run())
        })
        .collect();

    let mut members = Vec::with_capacity(n);
    let mut failures = Vec::new();
    for (index, seed, outcome) in outcomes {
        match outcome {
            Ok(m) => members.push(m),
            Err(e @ Error::Diverged { .. }) => failures.push(PoolFailure {
                index,
                seed,
                message: e.to_string(),
            }),
            Err(e) => return Err(e),
        }
    }
    if members.is_empty() {
        let list: Vec<String> = failures
            .iter()
            .map(|f| format!("member {}: {}", f.index, f.message))
            .collect();
        return Err(Error::PoolFailed(list.join("; ")));
    }
    Ok(PoolResult {
        spec: spec.clone(),
        base_seed,
        config: config.clone(),
        members,
        failures,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NetworkState {
    Trained,
    Untrained,
}

impl NetworkState {
    pub fn name(self) -> &'static str {
        match self {
            NetworkState::Trained => "trained",
            NetworkState::Untrained => "untrained",
        }
    }
}

impl FromStr for NetworkState {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "trained" => Ok(NetworkState::Trained),
            "untrained" => Ok(NetworkState::Untrained),
            _ => Err(Error::InvalidArgument(format!(
                "state must be `trained` or `untrained`, got `{s}`"
            ))),
        }
    }
}

/// Metrics that can be pooled. Layer indices follow the metric APIs:
/// link statistics and neuron metrics take a parameterized layer
/// (`1..=L`), node strengths and fluctuations take a node layer (`0..=L`).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    LinkMean,
    LinkVariance,
    NodeStrengthIn,
    NodeStrengthOut,
    NodeStrengthTotal,
    /// Fluctuation of the total node strength.
    LayerFluctuation,
    LayerFluctuationIn,
    LayerFluctuationOut,
    NeuronStrength,
    NeuronActivation,
}

impl Metric {
    pub const ALL: [Metric; 10] = [
        Metric::LinkMean,
        Metric::LinkVariance,
        Metric::NodeStrengthIn,
        Metric::NodeStrengthOut,
        Metric::NodeStrengthTotal,
        Metric::LayerFluctuation,
        Metric::LayerFluctuationIn,
        Metric::LayerFluctuationOut,
        Metric::NeuronStrength,
        Metric::NeuronActivation,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Metric::LinkMean => "link_mean",
            Metric::LinkVariance => "link_variance",
            Metric::NodeStrengthIn => "node_strength_in",
            Metric::NodeStrengthOut => "node_strength_out",
            Metric::NodeStrengthTotal => "node_strength_total",
            Metric::LayerFluctuation => "layer_fluctuation",
            Metric::LayerFluctuationIn => "layer_fluctuation_in",
            Metric::LayerFluctuationOut => "layer_fluctuation_out",
            Metric::NeuronStrength => "neuron_strength",
            Metric::NeuronActivation => "neuron_activation",
        }
    }

    pub fn is_data_dependent(self) -> bool {
        matches!(self, Metric::NeuronStrength | Metric::NeuronActivation)
    }

    /// Whether the metric yields one value per unit of a layer.
    pub fn is_per_neuron(self) -> bool {
        matches!(
            self,
            Metric::NodeStrengthIn
                | Metric::NodeStrengthOut
                | Metric::NodeStrengthTotal
                | Metric::NeuronStrength
                | Metric::NeuronActivation
        )
    }

    /// Smallest valid layer index.
    pub fn first_layer(self) -> usize {
        match self {
            Metric::LinkMean
            | Metric::LinkVariance
            | Metric::NeuronStrength
            | Metric::NeuronActivation => 1,
            _ => 0,
        }
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Metric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Metric::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::UnknownMetric(s.to_string()))
    }
}

/// Where the data-dependent metrics draw their inputs from.
#[derive(Clone, Copy, Debug)]
pub struct Sampling<'a, T> {
    pub dataset: &'a Dataset<T>,
    pub size: usize,
    /// Member `i` samples with `seed + i`.
    pub seed: u64,
}

impl<'a, T> Sampling<'a, T> {
    pub fn new(dataset: &'a Dataset<T>, seed: u64) -> Self {
        Sampling {
            dataset,
            size: DEFAULT_SAMPLE_SIZE,
            seed,
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct MetricOptions<'a, T> {
    pub sampling: Option<Sampling<'a, T>>,
    pub bias_mode: BiasMode,
    pub bins: usize,
}

impl<'a, T> MetricOptions<'a, T> {
    pub fn topological() -> Self {
        MetricOptions {
            sampling: None,
            bias_mode: BiasMode::PerEdge,
            bins: DEFAULT_BINS,
        }
    }

    pub fn with_sampling(sampling: Sampling<'a, T>) -> Self {
        MetricOptions {
            sampling: Some(sampling),
            ..Self::topological()
        }
    }
}

/// Values of `metric` at `layer` for one network. `member` selects the
/// sample seed.
pub fn metric_values<T: Scalar>(
    network: &Network<T>,
    metric: Metric,
    layer: usize,
    member: usize,
    options: &MetricOptions<'_, T>,
) -> Result<Vec<f64>> {
    let f = |v: T| v.to_f64_lossless();
    let depth = network.depth();
    if layer < metric.first_layer() || layer > depth {
        return Err(Error::LayerIndex {
            layer,
            valid: format!("{}..={depth} for {metric}", metric.first_layer()),
        });
    }
    Ok(match metric {
        Metric::LinkMean | Metric::LinkVariance => {
            let (spec, params) = network.layer(layer)?;
            let v = if metric == Metric::LinkMean {
                link_weight_mean(spec, params)?
            } else {
                link_weight_variance(spec, params)?
            };
            vec![f(v)]
        }
        Metric::NodeStrengthIn | Metric::NodeStrengthOut | Metric::NodeStrengthTotal => {
            node_strength(network, layer, options.bias_mode)?
                .into_iter()
                .map(|r| {
                    f(match metric {
                        Metric::NodeStrengthIn => r.s_in,
                        Metric::NodeStrengthOut => r.s_out,
                        _ => r.s_total,
                    })
                })
                .collect()
        }
        Metric::LayerFluctuation | Metric::LayerFluctuationIn | Metric::LayerFluctuationOut => {
            let records = node_strength(network, layer, options.bias_mode)?;
            let values: Vec<T> = records
                .iter()
                .map(|r| match metric {
                    Metric::LayerFluctuationIn => r.s_in,
                    Metric::LayerFluctuationOut => r.s_out,
                    _ => r.s_total,
                })
                .collect();
            vec![f(layer_fluctuation(&values)?)]
        }
        Metric::NeuronStrength | Metric::NeuronActivation => {
            let matrix = neuron_matrix(network, metric, layer, member, options)?;
            matrix.values.iter().map(|&v| f(v)).collect()
        }
    })
}

fn neuron_matrix<T: Scalar>(
    network: &Network<T>,
    metric: Metric,
    layer: usize,
    member: usize,
    options: &MetricOptions<'_, T>,
) -> Result<crate::neuron::NeuronMetricMatrix<T>> {
    let sampling = options.sampling.as_ref().ok_or_else(|| {
        Error::InvalidArgument(format!("{metric} needs a dataset to sample inputs from"))
    })?;
    let samples = sample_inputs(
        sampling.dataset,
        sampling.size,
        sampling.seed.wrapping_add(member as u64),
    )?;
    if metric == Metric::NeuronStrength {
        neuron_strength(network, &samples, layer)
    } else {
        neuron_activation(network, &samples, layer)
    }
}

/// One value per unit of `layer`; neuron metrics are averaged over samples
/// and time steps.
pub fn per_neuron_values<T: Scalar>(
    network: &Network<T>,
    metric: Metric,
    layer: usize,
    member: usize,
    options: &MetricOptions<'_, T>,
) -> Result<Vec<f64>> {
    if !metric.is_per_neuron() {
        return Err(Error::InvalidArgument(format!(
            "{metric} is not a per-neuron metric"
        )));
    }
    if metric.is_data_dependent() {
        network.layer(layer)?;
        Ok(neuron_matrix(network, metric, layer, member, options)?.unit_means())
    } else {
        metric_values(network, metric, layer, member, options)
    }
}

/// Pooled values of one metric with their histogram and moments.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricDistribution {
    pub metric: String,
    pub layer: usize,
    /// Sorted ascending, so the distribution does not depend on member order.
    pub values: Vec<f64>,
    pub histogram: Histogram,
    pub summary: Moments,
}

impl MetricDistribution {
    pub fn from_values(
        metric: impl Into<String>,
        layer: usize,
        mut values: Vec<f64>,
        bins: usize,
    ) -> Result<Self> {
        values.sort_by(f64::total_cmp);
        let histogram = Histogram::new(&values, bins)?;
        let summary = Moments::of(&values)?;
        Ok(MetricDistribution {
            metric: metric.into(),
            layer,
            values,
            histogram,
            summary,
        })
    }

    /// Fraction of values inside `[lo, hi]`.
    pub fn fraction_within(&self, lo: f64, hi: f64) -> f64 {
        let n = self.values.iter().filter(|&&v| v >= lo && v <= hi).count();
        n as f64 / self.values.len() as f64
    }

    /// CSV rows `metric,layer,bin_left,bin_right,count`.
    pub fn histogram_csv(&self) -> String {
        let mut out = String::from("metric,layer,bin_left,bin_right,count\n");
        for (i, c) in self.histogram.counts.iter().enumerate() {
            out.push_str(&format!(
                "{},{},{:e},{:e},{c}\n",
                self.metric,
                self.layer,
                self.histogram.edges[i],
                self.histogram.edges[i + 1]
            ));
        }
        out
    }

    /// One value per line, in shortest round-trip form.
    pub fn values_csv(&self) -> String {
        let mut out = String::from("value\n");
        for v in &self.values {
            out.push_str(&format!("{v:e}\n"));
        }
        out
    }

    pub fn summary_json(&self) -> String {
        serde_json::to_string_pretty(&self.summary).expect("plain struct serializes")
    }
}

pub fn aggregate_metric<T: Scalar>(
    pool: &PoolResult<T>,
    metric: Metric,
    layer: usize,
    state: NetworkState,
    options: &MetricOptions<'_, T>,
) -> Result<MetricDistribution> {
    let per_member: Vec<Vec<f64>> = pool
        .networks(state)
        .map(|(i, net)| metric_values(net, metric, layer, i, options))
        .collect::<Result<_>>()?;
    MetricDistribution::from_values(metric.name(), layer, per_member.concat(), options.bins)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorrelationRecord {
    pub metric_a: String,
    pub metric_b: String,
    pub layer: usize,
    /// `None` when fewer than two points exist or a coordinate is constant.
    pub pearson: Option<f64>,
    pub points: usize,
    /// `(a, b)` per (member, neuron).
    pub scatter: Vec<(f64, f64)>,
}

impl CorrelationRecord {
    pub fn scatter_csv(&self) -> String {
        let mut out = format!("{},{}\n", self.metric_a, self.metric_b);
        for (a, b) in &self.scatter {
            out.push_str(&format!("{a:e},{b:e}\n"));
        }
        out
    }
}

/// Pearson correlation between two per-neuron metrics, pairing values by
/// (member, neuron).
pub fn correlate<T: Scalar>(
    pool: &PoolResult<T>,
    metric_a: Metric,
    metric_b: Metric,
    layer: usize,
    state: NetworkState,
    options: &MetricOptions<'_, T>,
) -> Result<CorrelationRecord> {
    let mut scatter = Vec::new();
    for (i, net) in pool.networks(state) {
        let a = per_neuron_values(net, metric_a, layer, i, options)?;
        let b = per_neuron_values(net, metric_b, layer, i, options)?;
        if a.len() != b.len() {
            return Err(Error::shape(
                format!("pairing {metric_a} with {metric_b} at layer {layer}"),
                a.len(),
                b.len(),
            ));
        }
        scatter.extend(a.into_iter().zip(b));
    }
    let (xs, ys): (Vec<f64>, Vec<f64>) = scatter.iter().copied().unzip();
    Ok(CorrelationRecord {
        metric_a: metric_a.name().into(),
        metric_b: metric_b.name().into(),
        layer,
        pearson: pearson(&xs, &ys),
        points: scatter.len(),
        scatter,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StateComparison {
    pub trained: MetricDistribution,
    pub untrained: MetricDistribution,
    pub ks: f64,
}

pub fn compare_trained_untrained<T: Scalar>(
    pool: &PoolResult<T>,
    metric: Metric,
    layer: usize,
    options: &MetricOptions<'_, T>,
) -> Result<StateComparison> {
    let trained = aggregate_metric(pool, metric, layer, NetworkState::Trained, options)?;
    let untrained = aggregate_metric(pool, metric, layer, NetworkState::Untrained, options)?;
    let ks = ks_statistic(&trained.values, &untrained.values)?;
    Ok(StateComparison {
        trained,
        untrained,
        ks,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::synthetic_dataset;
    use crate::engine::{Activation, Task};

    fn pool(n: usize, seed: u64) -> (PoolResult<f64>, Dataset<f64>) {
        let data: Dataset<f64> = synthetic_dataset(1, 120, 6, 3).unwrap();
        let spec = ArchitectureSpec::fully_connected(
            &[6, 5, 3],
            Activation::Sigmoid,
            Task::Classification,
        );
        let mut config = TrainConfig::defaults(Task::Classification, "synthetic");
        config.epochs = 2;
        config.init_std = 0.3;
        (
            train_pool(&spec, n, seed, &data, None, &config).unwrap(),
            data,
        )
    }

    #[test]
    fn metric_names_round_trip() {
        for m in Metric::ALL {
            assert_eq!(m.name().parse::<Metric>().unwrap(), m);
        }
        assert!(matches!(
            "node_disparity".parse::<Metric>(),
            Err(Error::UnknownMetric(_))
        ));
    }

    #[test]
    fn pool_is_deterministic_and_twins_rebuild() {
        let (a, _) = pool(3, 40);
        let (b, _) = pool(3, 40);
        for (x, y) in a.members.iter().zip(&b.members) {
            assert!(x.trained.bit_identical(&y.trained));
            let rebuilt = Network::<f64>::build(&a.spec, a.config.init_std, x.seed).unwrap();
            assert!(rebuilt.bit_identical(&x.untrained));
        }
        let seeds: Vec<u64> = a.members.iter().map(|m| m.seed).collect();
        assert_eq!(seeds, vec![40, 41, 42]);
    }

    #[test]
    fn node_strength_counts() {
        let (p, _) = pool(2, 0);
        let d = aggregate_metric(
            &p,
            Metric::NodeStrengthIn,
            1,
            NetworkState::Trained,
            &MetricOptions::topological(),
        )
        .unwrap();
        assert_eq!(d.histogram.total(), 2 * 5);
        assert_eq!(d.values.len(), 10);
    }

    #[test]
    fn self_comparison_and_correlation() {
        let (p, data) = pool(2, 5);
        let opts = MetricOptions::with_sampling(Sampling {
            dataset: &data,
            size: 20,
            seed: 3,
        });
        let a = aggregate_metric(
            &p,
            Metric::NeuronStrength,
            1,
            NetworkState::Untrained,
            &opts,
        )
        .unwrap();
        let b = aggregate_metric(
            &p,
            Metric::NeuronStrength,
            1,
            NetworkState::Untrained,
            &opts,
        )
        .unwrap();
        assert_eq!(ks_statistic(&a.values, &b.values).unwrap(), 0.0);
        let r = correlate(
            &p,
            Metric::NeuronStrength,
            Metric::NeuronStrength,
            1,
            NetworkState::Trained,
            &opts,
        )
        .unwrap();
        assert!((r.pearson.unwrap() - 1.0).abs() < 1e-12);
        assert_eq!(r.points, 10);
        assert!(correlate(
            &p,
            Metric::LinkMean,
            Metric::NeuronStrength,
            1,
            NetworkState::Trained,
            &opts
        )
        .is_err());
    }

    #[test]
    fn data_metrics_need_sampling() {
        let (p, _) = pool(1, 0);
        let err = aggregate_metric(
            &p,
            Metric::NeuronActivation,
            1,
            NetworkState::Trained,
            &MetricOptions::topological(),
        );
        assert!(err.is_err());
    }
}
