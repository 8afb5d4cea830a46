//! `cnt`: train network pools and export complex-network metrics.
//!
//! Every subcommand prints one JSON object on stdout when it succeeds. On
//! failure it prints `{"error": <kind>, "message": <text>}` on stderr and
//! exits with status 1 (2 for command-line usage errors).

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use cnt_core::engine::{evaluate, export_network, import_network};
use cnt_core::experiment::{
    compare_experiments, load_data, run_experiment, verify_manifest, ExperimentConfig,
    ExperimentManifest, RunOptions, MANIFEST_FILE,
};
use cnt_core::population::{Metric, NetworkState};
use cnt_core::{Error, Network64};
use serde_json::json;

#[derive(Parser)]
#[command(
    name = "cnt",
    version,
    about = "Complex-network metrics for pools of small neural networks"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone, Debug, Default)]
struct Common {
    /// Experiment config (TOML).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Dataset directory; overrides the config and CNT_DATA_ROOT.
    #[arg(long)]
    data_root: Option<PathBuf>,
    /// Experiment output directory; overrides the config.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Base seed; member i uses seed + i.
    #[arg(long)]
    seed: Option<u64>,
    /// Networks per pool.
    #[arg(long)]
    pool_size: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Train (or reload) every pool of a config and write the networks.
    TrainPool(Common),
    /// Train or reload the pools, then write all metric artifacts.
    Metrics(Common),
    /// KS statistic and moment deltas between two experiments.
    Compare {
        #[command(flatten)]
        common: Common,
        /// First manifest, or the experiment directory holding it.
        #[arg(long)]
        a: PathBuf,
        /// Second manifest, or the experiment directory holding it.
        #[arg(long)]
        b: PathBuf,
        #[arg(long)]
        metric: Metric,
        #[arg(long)]
        layer: usize,
        #[arg(long, default_value = "trained")]
        state: NetworkState,
        /// Pool id inside experiment a, needed when it has several pools.
        #[arg(long)]
        pool_a: Option<String>,
        #[arg(long)]
        pool_b: Option<String>,
    },
    /// Copy one pool member out of the experiment in `--out` (or the
    /// config's output directory) into `--to`.
    Export {
        #[command(flatten)]
        common: Common,
        /// Pool id, needed when the experiment has several pools.
        #[arg(long)]
        pool: Option<String>,
        #[arg(long, default_value_t = 0)]
        member: usize,
        #[arg(long, default_value = "trained")]
        state: NetworkState,
        /// File to write the network to.
        #[arg(long)]
        to: PathBuf,
    },
    /// Validate a network file; with `--config`, also evaluate it on the
    /// config's test split.
    Import {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        network: PathBuf,
    },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let message = e.to_string();
            let first = message
                .lines()
                .next()
                .unwrap_or_default()
                .trim_start_matches("error: ");
            eprintln!("{}", json!({"error": "usage", "message": first}));
            return ExitCode::from(2);
        }
    };
    match run(cli.command) {
        Ok(value) => {
            println!("{value}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!(
                "{}",
                json!({"error": error_kind(&e), "message": e.to_string()})
            );
            ExitCode::FAILURE
        }
    }
}

fn error_kind(e: &Error) -> &'static str {
    match e {
        Error::InvalidSpec(_) => "invalid_spec",
        Error::ShapeMismatch { .. } => "shape_mismatch",
        Error::NonFinite(_) => "non_finite",
        Error::Diverged { .. } => "diverged",
        Error::LayerIndex { .. } => "layer_index",
        Error::LayerKind { .. } => "layer_kind",
        Error::Format { .. } => "format",
        Error::MissingData { .. } => "missing_data",
        Error::Io { .. } => "io",
        Error::InvalidArgument(_) => "invalid_argument",
        Error::UnknownMetric(_) => "unknown_metric",
        Error::Config(_) => "config",
        Error::Schema(_) | Error::Json(_) => "schema",
        Error::PoolFailed(_) => "pool_failed",
    }
}

fn load_config(common: &Common) -> cnt_core::Result<ExperimentConfig> {
    let path = common
        .config
        .as_deref()
        .ok_or_else(|| Error::Config("--config is required for this subcommand".into()))?;
    let mut config = ExperimentConfig::load(path)?;
    RunOptions {
        data_root: common.data_root.clone(),
        out: common.out.clone(),
        seed: common.seed,
        pool_size: common.pool_size,
        train_only: false,
    }
    .apply(&mut config)?;
    Ok(config)
}

fn manifest_path(p: &Path) -> PathBuf {
    if p.is_dir() {
        p.join(MANIFEST_FILE)
    } else {
        p.to_path_buf()
    }
}

fn summary(manifest: &ExperimentManifest, out: &Path) -> serde_json::Value {
    let pools: Vec<_> = manifest
        .pools
        .iter()
        .map(|p| {
            json!({
                "pool": p.id,
                "metric": p.metric,
                "final_metrics": p.members.iter().map(|m| m.final_metric).collect::<Vec<_>>(),
                "failures": p.failures.len(),
            })
        })
        .collect();
    json!({
        "manifest": out.join(MANIFEST_FILE),
        "files": manifest.files.len(),
        "pools": pools,
        "wall_time_secs": manifest.wall_time_secs,
    })
}

fn run(command: Command) -> cnt_core::Result<serde_json::Value> {
    match command {
        Command::TrainPool(common) => {
            let config = load_config(&common)?;
            let manifest = run_experiment(&config, true)?;
            Ok(summary(
                &manifest,
                config.output.as_deref().expect("validated"),
            ))
        }
        Command::Metrics(common) => {
            let config = load_config(&common)?;
            let manifest = run_experiment(&config, false)?;
            Ok(summary(
                &manifest,
                config.output.as_deref().expect("validated"),
            ))
        }
        Command::Compare {
            common,
            a,
            b,
            metric,
            layer,
            state,
            pool_a,
            pool_b,
        } => {
            let result = compare_experiments(
                &manifest_path(&a),
                &manifest_path(&b),
                metric,
                layer,
                state,
                pool_a.as_deref(),
                pool_b.as_deref(),
            )?;
            let value = serde_json::to_value(&result)?;
            if let Some(out) = &common.out {
                std::fs::write(out, serde_json::to_string_pretty(&value)?)
                    .map_err(|e| io_error(out, e))?;
            }
            Ok(value)
        }
        Command::Export {
            common,
            pool,
            member,
            state,
            to,
        } => {
            let dir = match (&common.config, &common.out) {
                (_, Some(out)) => out.clone(),
                (Some(_), None) => load_config(&common)?.output.ok_or_else(|| {
                    Error::Config("output: the config names no experiment directory".into())
                })?,
                (None, None) => {
                    return Err(Error::Config(
                        "--out or --config: name the experiment to export from".into(),
                    ))
                }
            };
            let manifest = ExperimentManifest::load(&dir.join(MANIFEST_FILE))?;
            verify_manifest(&dir, &manifest)?;
            let summary = match pool.as_deref() {
                Some(id) => manifest.pools.iter().find(|p| p.id == id),
                None if manifest.pools.len() == 1 => manifest.pools.first(),
                None => {
                    return Err(Error::InvalidArgument(format!(
                        "--pool: choose one of {}",
                        manifest
                            .pools
                            .iter()
                            .map(|p| p.id.as_str())
                            .collect::<Vec<_>>()
                            .join(", ")
                    )))
                }
            }
            .ok_or_else(|| {
                Error::InvalidArgument(format!("--pool: no pool `{}`", pool.unwrap_or_default()))
            })?;
            let m = summary
                .members
                .iter()
                .find(|m| m.index == member)
                .ok_or_else(|| {
                    Error::InvalidArgument(format!(
                        "--member: pool {} has no member {member}",
                        summary.id
                    ))
                })?;
            let rel = match state {
                NetworkState::Trained => &m.trained,
                NetworkState::Untrained => &m.untrained,
            };
            let network: Network64 = import_network(&dir.join(rel))?;
            export_network(&network, &to)?;
            Ok(
                json!({"pool": summary.id, "member": member, "state": state, "seed": network.seed, "to": to}),
            )
        }
        Command::Import { common, network } => {
            let net: Network64 = import_network(&network)?;
            let mut value = json!({
                "network": network,
                "kind": net.spec.kind,
                "depth": net.depth(),
                "parameters": net.parameter_count(),
                "seed": net.seed,
                "trained": net.trained,
            });
            if common.config.is_some() {
                let config = load_config(&common)?;
                let data = load_data(&config.dataset, config.seed)?;
                value["eval_metric"] = json!(evaluate(&net, &data.eval)?);
            }
            Ok(value)
        }
    }
}

fn io_error(path: &Path, source: std::io::Error) -> Error {
    Error::Io {
        path: path.to_path_buf(),
        source,
    }
}
