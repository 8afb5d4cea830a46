//! Config-driven experiments: train one pool per (architecture,
//! activation, depth) combination, compute the requested metrics, and write
//! CSV/JSON artifacts listed with their SHA-256 digests in `manifest.json`.
//!
//! Output layout, relative to the output directory:
//!
//! ```text
//! manifest.json
//! <pool>/pool.json
//! <pool>/networks/member-NN.{trained,untrained}.json
//! <pool>/topology/{node_strength,layer_stats}-<state>.csv
//! <pool>/distributions/<metric>-l<layer>-<state>.{hist.csv,values.csv,summary.json}
//! <pool>/correlations/<a>-vs-<b>-l<layer>-<state>.csv
//! <pool>/heatmap-<state>.{csv,json}            (recurrent pools)
//! ```
//!
//! Every file except the manifest is a pure function of the config, so
//! re-running a config reproduces every digest.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::{
    load_cifar10_dir, load_mnist_dir, resolve_data_root, sample_inputs, synthetic_dataset, Dataset,
    Split, DEFAULT_SAMPLE_SIZE,
};
use crate::engine::{
    network_from_json, network_to_json, Activation, ArchitectureKind, ArchitectureSpec,
    InputGeometry, MetricKind, Network, Task, TrainConfig, TrainReport,
};
use crate::error::{Error, Result};
use crate::neuron::rnn_strength_heatmap;
use crate::population::{
    aggregate_metric, compare_trained_untrained, correlate, train_pool, Metric, MetricOptions,
    NetworkState, PoolFailure, PoolMember, PoolResult, Sampling, DEFAULT_BINS,
};
use crate::stats::{ks_statistic, Moments};
use crate::topology::{
    layer_stats, layer_stats_csv_row, node_strength, node_strength_csv_rows, BiasMode,
    LAYER_STATS_CSV_HEADER, NODE_STRENGTH_CSV_HEADER,
};

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DatasetName {
    Mnist,
    Cifar10,
    Synthetic,
}

impl DatasetName {
    pub fn name(self) -> &'static str {
        match self {
            DatasetName::Mnist => "mnist",
            DatasetName::Cifar10 => "cifar10",
            DatasetName::Synthetic => "synthetic",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetConfig {
    pub name: DatasetName,
    /// Directory holding the dataset files; falls back to `CNT_DATA_ROOT`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub root: Option<PathBuf>,
    /// Use only the first `n` training rows.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub train_limit: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eval_limit: Option<usize>,
    /// Synthetic datasets only.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub synthetic: Option<SyntheticConfig>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticConfig {
    pub count: usize,
    pub eval_count: usize,
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub classes: usize,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainOverrides {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub learning_rate: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub momentum: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub batch_size: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub epochs: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub init_std: Option<f64>,
}

impl TrainOverrides {
    fn apply(&self, config: &mut TrainConfig) {
        if let Some(v) = self.learning_rate {
            config.learning_rate = v;
        }
        if let Some(v) = self.momentum {
            config.momentum = v;
        }
        if let Some(v) = self.batch_size {
            config.batch_size = v;
        }
        if let Some(v) = self.epochs {
            config.epochs = v;
        }
        if let Some(v) = self.init_std {
            config.init_std = v;
        }
    }
}

/// `[train]` applies to every pool; `[train.<arch>]` refines it.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSection {
    #[serde(flatten)]
    pub all: TrainOverrides,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fc: Option<TrainOverrides>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cnn: Option<TrainOverrides>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rnn: Option<TrainOverrides>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ae: Option<TrainOverrides>,
}

impl TrainSection {
    pub fn resolve(
        &self,
        kind: ArchitectureKind,
        task: Task,
        dataset: DatasetName,
        seed: u64,
    ) -> TrainConfig {
        let mut config = TrainConfig::defaults(task, dataset.name());
        config.seed = seed;
        self.all.apply(&mut config);
        let specific = match kind {
            ArchitectureKind::Fc => &self.fc,
            ArchitectureKind::Cnn => &self.cnn,
            ArchitectureKind::Rnn => &self.rnn,
            ArchitectureKind::Ae => &self.ae,
        };
        if let Some(o) = specific {
            o.apply(&mut config);
        }
        config
    }
}

fn default_activations() -> Vec<Activation> {
    vec![Activation::Sigmoid]
}
fn default_depths() -> Vec<usize> {
    vec![3]
}
fn default_pool_size() -> usize {
    30
}
fn default_sample_size() -> usize {
    DEFAULT_SAMPLE_SIZE
}
fn default_bins() -> usize {
    DEFAULT_BINS
}
fn default_metrics() -> Vec<Metric> {
    Metric::ALL.to_vec()
}
fn default_true() -> bool {
    true
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub name: String,
    pub dataset: DatasetConfig,
    pub architectures: Vec<ArchitectureKind>,
    #[serde(default = "default_activations")]
    pub activations: Vec<Activation>,
    /// Preset depths; see [`ArchitectureSpec::preset`]. Recurrent pools
    /// ignore the value.
    #[serde(default = "default_depths")]
    pub depths: Vec<usize>,
    #[serde(default = "default_pool_size")]
    pub pool_size: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_sample_size")]
    pub sample_size: usize,
    #[serde(default = "default_bins")]
    pub bins: usize,
    #[serde(default = "default_metrics")]
    pub metrics: Vec<Metric>,
    /// Layers to evaluate; all valid layers of each pool when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub layers: Option<Vec<usize>>,
    #[serde(default)]
    pub correlations: Vec<(Metric, Metric)>,
    #[serde(default)]
    pub bias_mode: BiasMode,
    /// Also evaluate the untrained twins and their KS distance.
    #[serde(default = "default_true")]
    pub compare_untrained: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<PathBuf>,
    #[serde(default)]
    pub train: TrainSection,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let config: ExperimentConfig =
            toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |field: &str, msg: &str| Err(Error::Config(format!("{field}: {msg}")));
        if self.architectures.is_empty() {
            return bad("architectures", "list at least one architecture");
        }
        if self.activations.is_empty() {
            return bad("activations", "list at least one activation");
        }
        if self.depths.is_empty() || self.depths.contains(&0) {
            return bad("depths", "list at least one positive depth");
        }
        if self.pool_size == 0 {
            return bad("pool_size", "must be at least 1");
        }
        if self.sample_size == 0 {
            return bad("sample_size", "must be at least 1");
        }
        if self.bins == 0 {
            return bad("bins", "must be at least 1");
        }
        if self.metrics.is_empty() {
            return bad("metrics", "list at least one metric");
        }
        if let Some(layers) = &self.layers {
            if layers.is_empty() {
                return bad("layers", "omit the key to evaluate every layer");
            }
        }
        for (a, b) in &self.correlations {
            for m in [a, b] {
                if !m.is_per_neuron() {
                    return bad("correlations", &format!("{m} has no per-neuron values"));
                }
            }
        }
        match (self.dataset.name, &self.dataset.synthetic) {
            (DatasetName::Synthetic, None) => {
                return bad("dataset.synthetic", "required for the synthetic dataset")
            }
            (DatasetName::Synthetic, Some(s)) => {
                if [
                    s.count,
                    s.eval_count,
                    s.channels,
                    s.height,
                    s.width,
                    s.classes,
                ]
                .contains(&0)
                {
                    return bad("dataset.synthetic", "all sizes must be positive");
                }
                if s.count < self.sample_size {
                    return bad("sample_size", "larger than dataset.synthetic.count");
                }
            }
            (_, Some(_)) => {
                return bad("dataset.synthetic", "only valid with name = \"synthetic\"")
            }
            _ => {}
        }
        for kind in &self.architectures {
            for (name, o) in [
                ("train", Some(&self.train.all)),
                ("train.<arch>", self.train_override(*kind)),
            ] {
                if let Some(o) = o {
                    let task = task_of(*kind);
                    let mut c = TrainConfig::defaults(task, self.dataset.name.name());
                    o.apply(&mut c);
                    if let Err(e) = c.validate() {
                        return bad(name, &e.to_string());
                    }
                }
            }
        }
        Ok(())
    }

    fn train_override(&self, kind: ArchitectureKind) -> Option<&TrainOverrides> {
        match kind {
            ArchitectureKind::Fc => self.train.fc.as_ref(),
            ArchitectureKind::Cnn => self.train.cnn.as_ref(),
            ArchitectureKind::Rnn => self.train.rnn.as_ref(),
            ArchitectureKind::Ae => self.train.ae.as_ref(),
        }
    }

    /// Every (architecture, activation, depth) combination, in config order.
    /// Recurrent pools appear once per activation.
    pub fn pool_keys(&self) -> Vec<PoolKey> {
        let mut keys = Vec::new();
        for &kind in &self.architectures {
            for &activation in &self.activations {
                for &depth in &self.depths {
                    let key = PoolKey {
                        kind,
                        activation,
                        depth,
                    };
                    if !keys.contains(&key) {
                        keys.push(key);
                    }
                    if kind == ArchitectureKind::Rnn {
                        break;
                    }
                }
            }
        }
        keys
    }
}

fn task_of(kind: ArchitectureKind) -> Task {
    if kind == ArchitectureKind::Ae {
        Task::Reconstruction
    } else {
        Task::Classification
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PoolKey {
    pub kind: ArchitectureKind,
    pub activation: Activation,
    pub depth: usize,
}

impl PoolKey {
    pub fn id(&self) -> String {
        format!("{}-{}-d{}", self.kind, self.activation, self.depth)
    }
}

/// Command-line overrides of config values.
#[derive(Clone, Debug, Default)]
pub struct RunOptions {
    pub data_root: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub seed: Option<u64>,
    pub pool_size: Option<usize>,
    /// Stop after training and exporting the networks.
    pub train_only: bool,
}

impl RunOptions {
    pub fn apply(&self, config: &mut ExperimentConfig) -> Result<()> {
        if let Some(root) = &self.data_root {
            config.dataset.root = Some(root.clone());
        }
        if let Some(out) = &self.out {
            config.output = Some(out.clone());
        }
        if let Some(seed) = self.seed {
            config.seed = seed;
        }
        if let Some(n) = self.pool_size {
            config.pool_size = n;
        }
        config.validate()
    }
}

pub struct LoadedData {
    pub train: Dataset<f64>,
    pub eval: Dataset<f64>,
    pub geometry: InputGeometry,
    pub classes: usize,
}

pub fn load_data(config: &DatasetConfig, seed: u64) -> Result<LoadedData> {
    let (mut train, mut eval) = match config.name {
        DatasetName::Mnist => {
            let root = resolve_data_root(config.root.as_deref());
            (
                load_mnist_dir(&root, Split::Train)?,
                load_mnist_dir(&root, Split::Test)?,
            )
        }
        DatasetName::Cifar10 => {
            let root = resolve_data_root(config.root.as_deref());
            (
                load_cifar10_dir(&root, Split::Train)?,
                load_cifar10_dir(&root, Split::Test)?,
            )
        }
        DatasetName::Synthetic => {
            let s = config.synthetic.as_ref().expect("validated");
            let geometry = InputGeometry {
                channels: s.channels,
                height: s.height,
                width: s.width,
            };
            let mut train = synthetic_dataset(seed, s.count, geometry.len(), s.classes)?;
            let mut eval = synthetic_dataset(
                seed.wrapping_add(1),
                s.eval_count,
                geometry.len(),
                s.classes,
            )?;
            train.geometry = Some(geometry);
            eval.geometry = Some(geometry);
            eval.split = Split::Test;
            (train, eval)
        }
    };
    if let Some(n) = config.train_limit {
        train = train.head(n);
    }
    if let Some(n) = config.eval_limit {
        eval = eval.head(n);
    }
    let geometry = train.geometry.ok_or_else(|| {
        Error::InvalidArgument(format!("dataset `{}` has no image geometry", train.name))
    })?;
    let classes = train.class_count;
    Ok(LoadedData {
        train,
        eval,
        geometry,
        classes,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FileDigest {
    pub path: String,
    pub sha256: String,
    pub bytes: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MemberSummary {
    pub index: usize,
    pub seed: u64,
    pub final_metric: f64,
    pub epoch_losses: Vec<f64>,
    pub trained: String,
    pub untrained: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PoolSummary {
    pub id: String,
    pub key: PoolKey,
    pub spec: ArchitectureSpec,
    pub train: TrainConfig,
    pub metric: MetricKind,
    /// Digest of everything that determines the trained networks.
    pub fingerprint: String,
    pub members: Vec<MemberSummary>,
    pub failures: Vec<PoolFailure>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DistributionEntry {
    pub pool: String,
    pub metric: Metric,
    pub layer: usize,
    pub state: NetworkState,
    pub values: String,
    pub histogram: String,
    pub summary: Moments,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComparisonEntry {
    pub pool: String,
    pub metric: Metric,
    pub layer: usize,
    /// Trained versus untrained.
    pub ks: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorrelationEntry {
    pub pool: String,
    pub metric_a: Metric,
    pub metric_b: Metric,
    pub layer: usize,
    pub state: NetworkState,
    pub pearson: Option<f64>,
    pub points: usize,
    pub scatter: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HeatmapEntry {
    pub pool: String,
    pub state: NetworkState,
    pub grid: String,
    pub sidecar: String,
    pub central_mean: f64,
    pub outer_mean: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentManifest {
    pub name: String,
    pub config: ExperimentConfig,
    pub pools: Vec<PoolSummary>,
    pub distributions: Vec<DistributionEntry>,
    pub comparisons: Vec<ComparisonEntry>,
    pub correlations: Vec<CorrelationEntry>,
    pub heatmaps: Vec<HeatmapEntry>,
    /// Every emitted file except the manifest itself, sorted by path.
    pub files: Vec<FileDigest>,
    pub wall_time_secs: f64,
}

impl ExperimentManifest {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Schema(format!("{}: {e}", path.display())))
    }

    pub fn digests(&self) -> BTreeMap<&str, &str> {
        self.files
            .iter()
            .map(|f| (f.path.as_str(), f.sha256.as_str()))
            .collect()
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Re-reads every listed file and checks its digest.
pub fn verify_manifest(dir: &Path, manifest: &ExperimentManifest) -> Result<()> {
    for f in &manifest.files {
        let path = dir.join(&f.path);
        let bytes = std::fs::read(&path).map_err(|e| Error::io(&path, e))?;
        let found = sha256_hex(&bytes);
        if found != f.sha256 {
            return Err(Error::Schema(format!(
                "{}: digest {found} does not match manifest {}",
                f.path, f.sha256
            )));
        }
    }
    Ok(())
}

struct ArtifactWriter {
    root: PathBuf,
    files: BTreeMap<String, FileDigest>,
}

impl ArtifactWriter {
    fn write(&mut self, rel: &str, contents: &[u8]) -> Result<String> {
        let path = self.root.join(rel);
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
        std::fs::write(&path, contents).map_err(|e| Error::io(&path, e))?;
        self.files.insert(
            rel.to_string(),
            FileDigest {
                path: rel.to_string(),
                sha256: sha256_hex(contents),
                bytes: contents.len() as u64,
            },
        );
        Ok(rel.to_string())
    }
}

/// Relative paths of every regular file below `dir`.
fn list_files(dir: &Path) -> Result<BTreeSet<String>> {
    let mut out = BTreeSet::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        let entries = match std::fs::read_dir(&d) {
            Ok(e) => e,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => continue,
            Err(e) => return Err(Error::io(&d, e)),
        };
        for entry in entries {
            let entry = entry.map_err(|e| Error::io(&d, e))?;
            let path = entry.path();
            if path.is_dir() {
                stack.push(path);
            } else {
                let rel = path.strip_prefix(dir).expect("below root");
                out.insert(rel.to_string_lossy().replace('\\', "/"));
            }
        }
    }
    Ok(out)
}

fn fingerprint(
    config: &ExperimentConfig,
    key: &PoolKey,
    spec: &ArchitectureSpec,
    train: &TrainConfig,
) -> String {
    #[derive(Serialize)]
    struct Inputs<'a> {
        dataset: &'a DatasetConfig,
        key: &'a PoolKey,
        spec: &'a ArchitectureSpec,
        train: &'a TrainConfig,
        pool_size: usize,
        seed: u64,
    }
    let mut dataset = config.dataset.clone();
    dataset.root = None;
    let text = serde_json::to_string(&Inputs {
        dataset: &dataset,
        key,
        spec,
        train,
        pool_size: config.pool_size,
        seed: config.seed,
    })
    .expect("plain structs serialize");
    sha256_hex(text.as_bytes())
}

fn member_path(id: &str, index: usize, state: NetworkState) -> String {
    format!("{id}/networks/member-{index:02}.{}.json", state.name())
}

/// Reloads a pool written by an earlier run with the same fingerprint.
fn reuse_pool(
    dir: &Path,
    previous: Option<&ExperimentManifest>,
    fingerprint: &str,
    id: &str,
) -> Option<(PoolResult<f64>, PoolSummary)> {
    let summary = previous?
        .pools
        .iter()
        .find(|p| p.id == id && p.fingerprint == fingerprint)?
        .clone();
    let digests = previous?.digests();
    let mut members = Vec::with_capacity(summary.members.len());
    for m in &summary.members {
        let load = |rel: &str| -> Option<Network<f64>> {
            let bytes = std::fs::read(dir.join(rel)).ok()?;
            if digests.get(rel).copied() != Some(sha256_hex(&bytes).as_str()) {
                return None;
            }
            network_from_json(std::str::from_utf8(&bytes).ok()?).ok()
        };
        members.push(PoolMember {
            index: m.index,
            seed: m.seed,
            untrained: load(&m.untrained)?,
            trained: load(&m.trained)?,
            report: TrainReport {
                epoch_losses: m.epoch_losses.clone(),
                final_metric: m.final_metric,
                metric: summary.metric,
                wall_time_secs: 0.0,
            },
        });
    }
    let pool = PoolResult {
        spec: summary.spec.clone(),
        base_seed: summary
            .members
            .first()
            .map_or(0, |m| m.seed - m.index as u64),
        config: summary.train.clone(),
        members,
        failures: summary.failures.clone(),
    };
    Some((pool, summary))
}

pub fn run_experiment_file(path: &Path, options: &RunOptions) -> Result<ExperimentManifest> {
    let mut config = ExperimentConfig::load(path)?;
    options.apply(&mut config)?;
    run_experiment(&config, options.train_only)
}

/// Trains every pool of `config` and writes its artifacts. Pools whose
/// networks already exist in the output directory with a matching
/// fingerprint are reloaded instead of retrained.
pub fn run_experiment(config: &ExperimentConfig, train_only: bool) -> Result<ExperimentManifest> {
    config.validate()?;
    let started = Instant::now();
    let out = config.output.clone().ok_or_else(|| {
        Error::Config("output: no output directory given (set `output` or pass --out)".into())
    })?;
    let manifest_path = out.join(MANIFEST_FILE);
    let previous = if manifest_path.exists() {
        Some(ExperimentManifest::load(&manifest_path)?)
    } else {
        None
    };
    let existing = list_files(&out)?;
    let owned: BTreeSet<String> = previous
        .iter()
        .flat_map(|m| m.files.iter().map(|f| f.path.clone()))
        .chain(std::iter::once(MANIFEST_FILE.to_string()))
        .collect();
    if let Some(foreign) = existing.iter().find(|f| !owned.contains(*f)) {
        return Err(Error::Config(format!(
            "output: {} contains `{foreign}`, which no earlier run wrote; use an empty directory",
            out.display()
        )));
    }

    let data = load_data(&config.dataset, config.seed)?;
    let mut writer = ArtifactWriter {
        root: out.clone(),
        files: BTreeMap::new(),
    };
    let mut manifest = ExperimentManifest {
        name: config.name.clone(),
        config: config.clone(),
        pools: Vec::new(),
        distributions: Vec::new(),
        comparisons: Vec::new(),
        correlations: Vec::new(),
        heatmaps: Vec::new(),
        files: Vec::new(),
        wall_time_secs: 0.0,
    };

    for key in config.pool_keys() {
        let id = key.id();
        let spec = ArchitectureSpec::preset(
            key.kind,
            key.depth,
            key.activation,
            data.geometry,
            data.classes,
        )
        .map_err(|e| Error::Config(format!("pool {id}: {e}")))?;
        let train_config =
            config
                .train
                .resolve(key.kind, spec.task, config.dataset.name, config.seed);
        let print = fingerprint(config, &key, &spec, &train_config);

        let (pool, mut summary) = match reuse_pool(&out, previous.as_ref(), &print, &id) {
            Some(found) => found,
            None => {
                let pool = train_pool(
                    &spec,
                    config.pool_size,
                    config.seed,
                    &data.train,
                    Some(&data.eval),
                    &train_config,
                )?;
                let summary = PoolSummary {
                    id: id.clone(),
                    key,
                    spec: spec.clone(),
                    train: train_config.clone(),
                    metric: if spec.task == Task::Classification {
                        MetricKind::Accuracy
                    } else {
                        MetricKind::Mse
                    },
                    fingerprint: print.clone(),
                    members: Vec::new(),
                    failures: pool.failures.clone(),
                };
                (pool, summary)
            }
        };
        summary.members.clear();
        for m in &pool.members {
            let trained = writer.write(
                &member_path(&id, m.index, NetworkState::Trained),
                network_to_json(&m.trained)?.as_bytes(),
            )?;
            let untrained = writer.write(
                &member_path(&id, m.index, NetworkState::Untrained),
                network_to_json(&m.untrained)?.as_bytes(),
            )?;
            summary.members.push(MemberSummary {
                index: m.index,
                seed: m.seed,
                final_metric: m.report.final_metric,
                epoch_losses: m.report.epoch_losses.clone(),
                trained,
                untrained,
            });
        }
        writer.write(
            &format!("{id}/pool.json"),
            serde_json::to_string_pretty(&summary)?.as_bytes(),
        )?;
        if !train_only {
            write_pool_metrics(config, &id, &pool, &data, &mut writer, &mut manifest)?;
        }
        manifest.pools.push(summary);
    }

    for stale in owned
        .iter()
        .filter(|f| f.as_str() != MANIFEST_FILE && !writer.files.contains_key(*f))
    {
        let path = out.join(stale);
        if path.exists() {
            std::fs::remove_file(&path).map_err(|e| Error::io(&path, e))?;
        }
    }
    manifest.files = writer.files.into_values().collect();
    manifest.wall_time_secs = started.elapsed().as_secs_f64();
    std::fs::create_dir_all(&out).map_err(|e| Error::io(&out, e))?;
    std::fs::write(&manifest_path, serde_json::to_string_pretty(&manifest)?)
        .map_err(|e| Error::io(&manifest_path, e))?;
    Ok(manifest)
}

fn write_pool_metrics(
    config: &ExperimentConfig,
    id: &str,
    pool: &PoolResult<f64>,
    data: &LoadedData,
    writer: &mut ArtifactWriter,
    manifest: &mut ExperimentManifest,
) -> Result<()> {
    let options = MetricOptions {
        sampling: Some(Sampling {
            dataset: &data.train,
            size: config.sample_size,
            seed: config.seed,
        }),
        bias_mode: config.bias_mode,
        bins: config.bins,
    };
    let depth = pool.spec.depth();
    let states: &[NetworkState] = if config.compare_untrained {
        &[NetworkState::Trained, NetworkState::Untrained]
    } else {
        &[NetworkState::Trained]
    };

    for &state in states {
        let mut nodes = format!("{NODE_STRENGTH_CSV_HEADER}\n");
        let mut stats = format!("{LAYER_STATS_CSV_HEADER}\n");
        for (_, net) in pool.networks(state) {
            for l in 0..=depth {
                node_strength_csv_rows(
                    net.seed,
                    &node_strength(net, l, config.bias_mode)?,
                    &mut nodes,
                );
            }
            for l in 1..=depth {
                layer_stats_csv_row(
                    net.seed,
                    &layer_stats(net, l, config.bias_mode)?,
                    &mut stats,
                );
            }
        }
        writer.write(
            &format!("{id}/topology/node_strength-{}.csv", state.name()),
            nodes.as_bytes(),
        )?;
        writer.write(
            &format!("{id}/topology/layer_stats-{}.csv", state.name()),
            stats.as_bytes(),
        )?;
    }

    for &metric in &config.metrics {
        for layer in layers_for(config, metric, depth) {
            let comparison = if config.compare_untrained {
                Some(compare_trained_untrained(pool, metric, layer, &options)?)
            } else {
                None
            };
            let dists = match &comparison {
                Some(c) => vec![
                    (NetworkState::Trained, c.trained.clone()),
                    (NetworkState::Untrained, c.untrained.clone()),
                ],
                None => vec![(
                    NetworkState::Trained,
                    aggregate_metric(pool, metric, layer, NetworkState::Trained, &options)?,
                )],
            };
            for (state, d) in dists {
                let stem = format!("{id}/distributions/{metric}-l{layer}-{}", state.name());
                let values =
                    writer.write(&format!("{stem}.values.csv"), d.values_csv().as_bytes())?;
                let histogram =
                    writer.write(&format!("{stem}.hist.csv"), d.histogram_csv().as_bytes())?;
                writer.write(&format!("{stem}.summary.json"), d.summary_json().as_bytes())?;
                manifest.distributions.push(DistributionEntry {
                    pool: id.to_string(),
                    metric,
                    layer,
                    state,
                    values,
                    histogram,
                    summary: d.summary,
                });
            }
            if let Some(c) = comparison {
                manifest.comparisons.push(ComparisonEntry {
                    pool: id.to_string(),
                    metric,
                    layer,
                    ks: c.ks,
                });
            }
        }
    }

    for &(a, b) in &config.correlations {
        let first = a.first_layer().max(b.first_layer());
        let layers: Vec<usize> = match &config.layers {
            Some(ls) => ls
                .iter()
                .copied()
                .filter(|&l| l >= first && l <= depth)
                .collect(),
            None => (first..=depth).collect(),
        };
        for layer in layers {
            for &state in states {
                let r = correlate(pool, a, b, layer, state, &options)?;
                let scatter = writer.write(
                    &format!("{id}/correlations/{a}-vs-{b}-l{layer}-{}.csv", state.name()),
                    r.scatter_csv().as_bytes(),
                )?;
                manifest.correlations.push(CorrelationEntry {
                    pool: id.to_string(),
                    metric_a: a,
                    metric_b: b,
                    layer,
                    state,
                    pearson: r.pearson,
                    points: r.points,
                    scatter,
                });
            }
        }
    }

    if pool.spec.kind == ArchitectureKind::Rnn {
        for &state in states {
            let mut sum: Option<ndarray::Array2<f64>> = None;
            let mut trained = false;
            for (i, net) in pool.networks(state) {
                let samples = sample_inputs(
                    &data.train,
                    config.sample_size,
                    config.seed.wrapping_add(i as u64),
                )?;
                let map = rnn_strength_heatmap(net, &samples, data.geometry, &data.train.name)?;
                trained = map.trained;
                sum = Some(match sum {
                    Some(s) => s + &map.grid,
                    None => map.grid,
                });
            }
            let grid = sum.expect("pool has members") / pool.len() as f64;
            let map = crate::neuron::StrengthHeatmap {
                grid,
                trained,
                dataset: data.train.name.clone(),
            };
            let (central_mean, outer_mean) = map.central_and_outer_means();
            let stem = format!("{id}/heatmap-{}", state.name());
            let grid = writer.write(&format!("{stem}.csv"), map.to_csv().as_bytes())?;
            let sidecar = writer.write(&format!("{stem}.json"), map.sidecar_json().as_bytes())?;
            manifest.heatmaps.push(HeatmapEntry {
                pool: id.to_string(),
                state,
                grid,
                sidecar,
                central_mean,
                outer_mean,
            });
        }
    }
    Ok(())
}

fn layers_for(config: &ExperimentConfig, metric: Metric, depth: usize) -> Vec<usize> {
    let first = metric.first_layer();
    match &config.layers {
        Some(ls) => ls
            .iter()
            .copied()
            .filter(|&l| l >= first && l <= depth)
            .collect(),
        None => (first..=depth).collect(),
    }
}

/// Distance between the same metric in two experiments.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentComparison {
    pub metric: Metric,
    pub layer: usize,
    pub state: NetworkState,
    pub pool_a: String,
    pub pool_b: String,
    pub ks: f64,
    pub n_a: usize,
    pub n_b: usize,
    pub mean_delta: f64,
    pub std_delta: f64,
    pub skewness_delta: f64,
    pub kurtosis_delta: f64,
}

fn read_values(dir: &Path, manifest: &ExperimentManifest, rel: &str) -> Result<Vec<f64>> {
    let path = dir.join(rel);
    let bytes = std::fs::read(&path).map_err(|e| Error::io(&path, e))?;
    if manifest.digests().get(rel).copied() != Some(sha256_hex(&bytes).as_str()) {
        return Err(Error::Schema(format!(
            "{}: digest does not match the manifest",
            path.display()
        )));
    }
    let text = String::from_utf8(bytes)
        .map_err(|_| Error::Schema(format!("{}: not UTF-8", path.display())))?;
    text.lines()
        .skip(1)
        .map(|l| {
            l.trim()
                .parse::<f64>()
                .map_err(|e| Error::Schema(format!("{}: bad value `{l}`: {e}", path.display())))
        })
        .collect()
}

fn find_distribution<'a>(
    manifest: &'a ExperimentManifest,
    pool: Option<&str>,
    metric: Metric,
    layer: usize,
    state: NetworkState,
) -> Result<&'a DistributionEntry> {
    let matches: Vec<&DistributionEntry> = manifest
        .distributions
        .iter()
        .filter(|d| d.metric == metric && d.layer == layer && d.state == state)
        .filter(|d| pool.is_none_or(|p| d.pool == p))
        .collect();
    match matches.as_slice() {
        [one] => Ok(one),
        [] => Err(Error::InvalidArgument(format!(
            "experiment `{}` has no {} {metric} distribution at layer {layer}{}",
            manifest.name,
            state.name(),
            pool.map(|p| format!(" in pool {p}")).unwrap_or_default()
        ))),
        many => Err(Error::InvalidArgument(format!(
            "experiment `{}` has {metric} at layer {layer} in several pools ({}); choose one",
            manifest.name,
            many.iter()
                .map(|d| d.pool.as_str())
                .collect::<Vec<_>>()
                .join(", ")
        ))),
    }
}

pub fn compare_experiments(
    manifest_a: &Path,
    manifest_b: &Path,
    metric: Metric,
    layer: usize,
    state: NetworkState,
    pool_a: Option<&str>,
    pool_b: Option<&str>,
) -> Result<ExperimentComparison> {
    let dir = |p: &Path| p.parent().map(Path::to_path_buf).unwrap_or_default();
    let a = ExperimentManifest::load(manifest_a)?;
    let b = ExperimentManifest::load(manifest_b)?;
    let da = find_distribution(&a, pool_a, metric, layer, state)?;
    let db = find_distribution(&b, pool_b, metric, layer, state)?;
    let va = read_values(&dir(manifest_a), &a, &da.values)?;
    let vb = read_values(&dir(manifest_b), &b, &db.values)?;
    let (ma, mb) = (Moments::of(&va)?, Moments::of(&vb)?);
    Ok(ExperimentComparison {
        metric,
        layer,
        state,
        pool_a: da.pool.clone(),
        pool_b: db.pool.clone(),
        ks: ks_statistic(&va, &vb)?,
        n_a: va.len(),
        n_b: vb.len(),
        mean_delta: mb.mean - ma.mean,
        std_delta: mb.std - ma.std,
        skewness_delta: mb.skewness - ma.skewness,
        kurtosis_delta: mb.kurtosis - ma.kurtosis,
    })
}
