//! Input-independent metrics of the layer graph: link-weight mean and
//! variance, node strength and layer fluctuation.
//!
//! Every parameterized layer is read as a bipartite graph from its source
//! nodes to its destination nodes. The bias of a destination node is added
//! to each of its incoming link terms, so a link contributes `w_ij + b_j`.
//!
//! - Dense: the weight matrix itself.
//! - Convolution: the unrolled graph, in which output neuron `(o, y, x)`
//!   receives one edge per entry of its input patch. Each kernel entry is
//!   used exactly once per output position, so link statistics over the
//!   unrolled graph equal those over the kernel entries.
//! - Recurrent: the hidden units receive edges from the step features
//!   (`W`) and from the hidden units themselves (`U`). A hidden unit's out
//!   strength includes its row of `U`.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::engine::forward::ConvGeometry;
use crate::engine::{LayerParams, LayerSpec, Network};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// How the destination bias enters a node's in strength.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BiasMode {
    /// Once per incoming edge.
    #[default]
    PerEdge,
    /// Once per node.
    PerNode,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NodeStrengthRecord<T> {
    /// Node layer, `0` is the input.
    pub layer: usize,
    pub node: usize,
    pub s_in: T,
    pub s_out: T,
    pub s_total: T,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerStatRecord<T> {
    /// Parameterized layer, 1-based.
    pub layer: usize,
    pub mean: T,
    pub variance: T,
    pub fluctuation_in: T,
    pub fluctuation_out: T,
    pub fluctuation_total: T,
}

/// Calls `f` once per link term `w + b` of the layer's graph.
fn for_each_link_term<T: Scalar>(spec: &LayerSpec, params: &LayerParams<T>, mut f: impl FnMut(T)) {
    match spec {
        LayerSpec::Dense { .. } => {
            for row in params.weights.rows() {
                for (&w, &b) in row.iter().zip(&params.bias) {
                    f(w + b);
                }
            }
        }
        LayerSpec::Conv2d { .. } => {
            for (row, &b) in params.weights.rows().into_iter().zip(&params.bias) {
                for &w in row {
                    f(w + b);
                }
            }
        }
        LayerSpec::Recurrent { .. } => {
            let u = params
                .recurrent
                .as_ref()
                .expect("recurrent layer carries U");
            for m in [&params.weights, u] {
                for row in m.rows() {
                    for (&w, &b) in row.iter().zip(&params.bias) {
                        f(w + b);
                    }
                }
            }
        }
    }
}

fn link_count<T: Scalar>(params: &LayerParams<T>) -> usize {
    params.weights.len() + params.recurrent.as_ref().map_or(0, |u| u.len())
}

/// Mean of the link terms `w_ij + b_j` of one layer.
pub fn link_weight_mean<T: Scalar>(spec: &LayerSpec, params: &LayerParams<T>) -> Result<T> {
    let n = link_count(params);
    if n == 0 {
        return Err(Error::InvalidArgument(
            "link statistics of an empty layer".into(),
        ));
    }
    let mut sum = T::zero();
    for_each_link_term(spec, params, |v| sum += v);
    Ok(sum / T::of(n as f64))
}

/// Population variance of the link terms around [`link_weight_mean`].
pub fn link_weight_variance<T: Scalar>(spec: &LayerSpec, params: &LayerParams<T>) -> Result<T> {
    let mean = link_weight_mean(spec, params)?;
    let mut sum = T::zero();
    for_each_link_term(spec, params, |v| {
        let d = v - mean;
        sum += d * d;
    });
    Ok(sum / T::of(link_count(params) as f64))
}

/// In strength of every destination node of a layer.
pub fn in_strengths<T: Scalar>(
    spec: &LayerSpec,
    params: &LayerParams<T>,
    mode: BiasMode,
) -> Vec<T> {
    let bias_weight = |edges: usize| match mode {
        BiasMode::PerEdge => T::of(edges as f64),
        BiasMode::PerNode => T::one(),
    };
    match spec {
        LayerSpec::Dense { fan_in, .. } => {
            let k = bias_weight(*fan_in);
            params
                .weights
                .columns()
                .into_iter()
                .zip(&params.bias)
                .map(|(col, &b)| col.sum() + k * b)
                .collect()
        }
        LayerSpec::Conv2d { .. } => {
            let g = ConvGeometry::of(spec).expect("validated convolution spec");
            let k = bias_weight(g.patch_len());
            let mut out = Vec::with_capacity(spec.fan_out());
            for (row, &b) in params.weights.rows().into_iter().zip(&params.bias) {
                let s = row.sum() + k * b;
                out.extend(std::iter::repeat_n(s, g.positions()));
            }
            out
        }
        LayerSpec::Recurrent { hidden, .. } => {
            let u = params
                .recurrent
                .as_ref()
                .expect("recurrent layer carries U");
            let k = bias_weight(params.weights.nrows() + hidden);
            (0..*hidden)
                .map(|j| params.weights.column(j).sum() + u.column(j).sum() + k * params.bias[j])
                .collect()
        }
    }
}

/// Out strength of every source node of a layer, indexed like the flat
/// layer input.
pub fn out_strengths<T: Scalar>(spec: &LayerSpec, params: &LayerParams<T>) -> Vec<T> {
    match *spec {
        LayerSpec::Dense { .. } => params.weights.rows().into_iter().map(|r| r.sum()).collect(),
        LayerSpec::Conv2d { .. } => {
            let g = ConvGeometry::of(spec).expect("validated convolution spec");
            let m = g.kernel;
            let mut out = vec![T::zero(); spec.fan_in()];
            // Patch isolation: scatter each kernel onto the inputs it touches.
            for o in 0..g.out_channels {
                let kernel = params.weights.row(o);
                for oy in 0..g.out_height {
                    for ox in 0..g.out_width {
                        for c in 0..g.channels {
                            for ky in 0..m {
                                for kx in 0..m {
                                    let y = oy * g.stride + ky;
                                    let x = ox * g.stride + kx;
                                    out[(c * g.height + y) * g.width + x] +=
                                        kernel[(c * m + ky) * m + kx];
                                }
                            }
                        }
                    }
                }
            }
            out
        }
        LayerSpec::Recurrent {
            channels,
            time_steps,
            step_width,
            ..
        } => {
            let row_sums: Vec<T> = params.weights.rows().into_iter().map(|r| r.sum()).collect();
            let mut out = Vec::with_capacity(spec.fan_in());
            for c in 0..channels {
                for _t in 0..time_steps {
                    out.extend_from_slice(&row_sums[c * step_width..(c + 1) * step_width]);
                }
            }
            out
        }
    }
}

/// Node strengths of node layer `node_layer` (`0..=L`).
pub fn node_strength<T: Scalar>(
    network: &Network<T>,
    node_layer: usize,
    mode: BiasMode,
) -> Result<Vec<NodeStrengthRecord<T>>> {
    let depth = network.depth();
    if node_layer > depth {
        return Err(Error::LayerIndex {
            layer: node_layer,
            valid: format!("0..={depth}"),
        });
    }
    let width = if node_layer == 0 {
        network.spec.input_width()
    } else {
        network.spec.layers[node_layer - 1].fan_out()
    };
    let s_in = if node_layer == 0 {
        vec![T::zero(); width]
    } else {
        let (spec, params) = network.layer(node_layer)?;
        in_strengths(spec, params, mode)
    };
    let mut s_out = if node_layer == depth {
        vec![T::zero(); width]
    } else {
        let (spec, params) = network.layer(node_layer + 1)?;
        out_strengths(spec, params)
    };
    if node_layer > 0 {
        if let Some(u) = &network.layers[node_layer - 1].recurrent {
            for (s, row) in s_out.iter_mut().zip(u.rows()) {
                *s += row.sum();
            }
        }
    }
    Ok(s_in
        .into_iter()
        .zip(s_out)
        .enumerate()
        .map(|(node, (s_in, s_out))| NodeStrengthRecord {
            layer: node_layer,
            node,
            s_in,
            s_out,
            s_total: s_in + s_out,
        })
        .collect())
}

/// Population standard deviation of a layer's node strengths.
pub fn layer_fluctuation<T: Scalar>(strengths: &[T]) -> Result<T> {
    if strengths.is_empty() {
        return Err(Error::InvalidArgument(
            "fluctuation of an empty layer".into(),
        ));
    }
    let n = T::of(strengths.len() as f64);
    let mean = strengths.iter().copied().sum::<T>() / n;
    let var = strengths
        .iter()
        .map(|&s| (s - mean) * (s - mean))
        .sum::<T>()
        / n;
    Ok(var.sqrt())
}

/// Link statistics of parameterized layer `layer` and the fluctuations of
/// the node layer it feeds.
pub fn layer_stats<T: Scalar>(
    network: &Network<T>,
    layer: usize,
    mode: BiasMode,
) -> Result<LayerStatRecord<T>> {
    let (spec, params) = network.layer(layer)?;
    let nodes = node_strength(network, layer, mode)?;
    let column = |f: fn(&NodeStrengthRecord<T>) -> T| nodes.iter().map(f).collect::<Vec<_>>();
    Ok(LayerStatRecord {
        layer,
        mean: link_weight_mean(spec, params)?,
        variance: link_weight_variance(spec, params)?,
        fluctuation_in: layer_fluctuation(&column(|r| r.s_in))?,
        fluctuation_out: layer_fluctuation(&column(|r| r.s_out))?,
        fluctuation_total: layer_fluctuation(&column(|r| r.s_total))?,
    })
}

pub const NODE_STRENGTH_CSV_HEADER: &str = "network_seed,layer,node,s_in,s_out,s_total";
pub const LAYER_STATS_CSV_HEADER: &str =
    "network_seed,layer,mean,variance,fluctuation_in,fluctuation_out,fluctuation_total";

pub fn node_strength_csv_rows<T: Scalar>(
    seed: u64,
    records: &[NodeStrengthRecord<T>],
    out: &mut String,
) {
    for r in records {
        writeln!(
            out,
            "{seed},{},{},{:e},{:e},{:e}",
            r.layer,
            r.node,
            r.s_in.to_f64_lossless(),
            r.s_out.to_f64_lossless(),
            r.s_total.to_f64_lossless()
        )
        .expect("writing to a String");
    }
}

pub fn layer_stats_csv_row<T: Scalar>(seed: u64, r: &LayerStatRecord<T>, out: &mut String) {
    writeln!(
        out,
        "{seed},{},{:e},{:e},{:e},{:e},{:e}",
        r.layer,
        r.mean.to_f64_lossless(),
        r.variance.to_f64_lossless(),
        r.fluctuation_in.to_f64_lossless(),
        r.fluctuation_out.to_f64_lossless(),
        r.fluctuation_total.to_f64_lossless()
    )
    .expect("writing to a String");
}
