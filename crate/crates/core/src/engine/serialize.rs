//! JSON network documents. Every parameter is written with 17 significant
//! digits so `f64` values survive the decimal round trip bit for bit.

use std::fmt::Write as _;
use std::path::Path;

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};
use serde_json::value::RawValue;

use crate::engine::architecture::ArchitectureSpec;
use crate::engine::network::{LayerParams, Network};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

const FORMAT: &str = "cnt-network";
const VERSION: u32 = 1;

#[derive(Serialize)]
struct NetworkDocOut<'a> {
    format: &'static str,
    version: u32,
    scalar: &'static str,
    spec: &'a ArchitectureSpec,
    seed: u64,
    init_std: f64,
    trained: bool,
    layers: Vec<LayerDocOut>,
}

#[derive(Serialize)]
struct LayerDocOut {
    kind: &'static str,
    shape: [usize; 2],
    weights: Box<RawValue>,
    #[serde(skip_serializing_if = "Option::is_none")]
    recurrent_shape: Option<[usize; 2]>,
    #[serde(skip_serializing_if = "Option::is_none")]
    recurrent: Option<Box<RawValue>>,
    bias: Box<RawValue>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct NetworkDocIn {
    format: String,
    version: u32,
    #[allow(dead_code)]
    scalar: String,
    spec: ArchitectureSpec,
    seed: u64,
    init_std: f64,
    trained: bool,
    layers: Vec<LayerDocIn>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct LayerDocIn {
    kind: String,
    shape: [usize; 2],
    weights: Vec<f64>,
    #[serde(default)]
    recurrent_shape: Option<[usize; 2]>,
    #[serde(default)]
    recurrent: Option<Vec<f64>>,
    bias: Vec<f64>,
}

fn number_list<'a, T: Scalar>(values: impl IntoIterator<Item = &'a T>) -> Box<RawValue> {
    let mut s = String::from("[");
    for (i, v) in values.into_iter().enumerate() {
        if i > 0 {
            s.push(',');
        }
        write!(s, "{:.16e}", v.to_f64_lossless()).expect("writing to a String");
    }
    s.push(']');
    RawValue::from_string(s).expect("formatted floats are valid JSON")
}

pub fn network_to_json<T: Scalar>(network: &Network<T>) -> Result<String> {
    let layers = network
        .spec
        .layers
        .iter()
        .zip(&network.layers)
        .map(|(spec, p)| {
            let (r, c) = p.weights.dim();
            LayerDocOut {
                kind: spec.kind_name(),
                shape: [r, c],
                weights: number_list(p.weights.iter()),
                recurrent_shape: p.recurrent.as_ref().map(|u| [u.nrows(), u.ncols()]),
                recurrent: p.recurrent.as_ref().map(|u| number_list(u.iter())),
                bias: number_list(p.bias.iter()),
            }
        })
        .collect();
    let doc = NetworkDocOut {
        format: FORMAT,
        version: VERSION,
        scalar: T::NAME,
        spec: &network.spec,
        seed: network.seed,
        init_std: network.init_std,
        trained: network.trained,
        layers,
    };
    Ok(serde_json::to_string_pretty(&doc)?)
}

fn matrix<T: Scalar>(
    layer: usize,
    what: &str,
    shape: [usize; 2],
    values: Vec<f64>,
) -> Result<Array2<T>> {
    if shape[0] * shape[1] != values.len() {
        return Err(Error::Schema(format!(
            "layer {layer}: {what} shape {shape:?} needs {} values, found {}",
            shape[0] * shape[1],
            values.len()
        )));
    }
    Ok(Array2::from_shape_vec(
        (shape[0], shape[1]),
        values.into_iter().map(T::of).collect(),
    )
    .expect("length checked"))
}

pub fn network_from_json<T: Scalar>(text: &str) -> Result<Network<T>> {
    let doc: NetworkDocIn = serde_json::from_str(text).map_err(|e| Error::Schema(e.to_string()))?;
    if doc.format != FORMAT {
        return Err(Error::Schema(format!(
            "format: expected `{FORMAT}`, found `{}`",
            doc.format
        )));
    }
    if doc.version != VERSION {
        return Err(Error::Schema(format!(
            "version: unsupported {}",
            doc.version
        )));
    }
    match (doc.scalar.as_str(), T::NAME) {
        ("f32", _) | ("f64", "f64") => {}
        ("f64", to) => {
            return Err(Error::Schema(format!(
                "scalar: f64 parameters cannot be loaded as {to} without rounding"
            )))
        }
        (other, _) => return Err(Error::Schema(format!("scalar: unknown type `{other}`"))),
    }
    doc.spec
        .validate()
        .map_err(|e| Error::Schema(format!("spec: {e}")))?;
    if doc.layers.len() != doc.spec.layers.len() {
        return Err(Error::Schema(format!(
            "layers: spec declares {} layers, document has {}",
            doc.spec.layers.len(),
            doc.layers.len()
        )));
    }
    let mut layers = Vec::with_capacity(doc.layers.len());
    for (i, (ld, spec)) in doc.layers.into_iter().zip(&doc.spec.layers).enumerate() {
        let n = i + 1;
        if ld.kind != spec.kind_name() {
            return Err(Error::Schema(format!(
                "layer {n}: kind `{}` but spec says `{}`",
                ld.kind,
                spec.kind_name()
            )));
        }
        let expected = spec.weight_shape();
        if ld.shape != [expected.0, expected.1] {
            return Err(Error::Schema(format!(
                "layer {n}: shape {:?} does not match spec shape {:?}",
                ld.shape,
                [expected.0, expected.1]
            )));
        }
        let weights = matrix(n, "weights", ld.shape, ld.weights)?;
        let recurrent = match (spec.recurrent_shape(), ld.recurrent_shape, ld.recurrent) {
            (None, None, None) => None,
            (Some(exp), Some(shape), Some(values)) if shape == [exp.0, exp.1] => {
                Some(matrix(n, "recurrent", shape, values)?)
            }
            (exp, shape, _) => {
                return Err(Error::Schema(format!(
                    "layer {n}: recurrent shape {shape:?} does not match spec {exp:?}"
                )))
            }
        };
        if ld.bias.len() != spec.bias_len() {
            return Err(Error::Schema(format!(
                "layer {n}: bias has {} values, spec needs {}",
                ld.bias.len(),
                spec.bias_len()
            )));
        }
        let params = LayerParams {
            weights,
            recurrent,
            bias: Array1::from_vec(ld.bias.into_iter().map(T::of).collect()),
        };
        if !params.is_finite() {
            return Err(Error::Schema(format!("layer {n}: non-finite parameter")));
        }
        layers.push(params);
    }
    let mut net = Network::from_parts(doc.spec, layers)?;
    net.seed = doc.seed;
    net.init_std = doc.init_std;
    net.trained = doc.trained;
    Ok(net)
}

pub fn export_network<T: Scalar>(network: &Network<T>, path: &Path) -> Result<()> {
    let text = network_to_json(network)?;
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn import_network<T: Scalar>(path: &Path) -> Result<Network<T>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    network_from_json(&text)
}
