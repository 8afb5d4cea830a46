//! Dataset ingestion, synthetic data, and the input sampler behind the
//! data-dependent metrics.

mod cifar;
mod mnist;
mod sample;
mod storage;
mod synthetic;

use std::fmt;
use std::path::{Path, PathBuf};

use ndarray::{Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::engine::architecture::InputGeometry;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

pub use cifar::{load_cifar10, load_cifar10_dir, CIFAR10_RECORD_LEN};
pub use mnist::{load_mnist, load_mnist_dir, write_idx_images, write_idx_labels, MNIST_FILES};
pub use sample::{sample_inputs, SampleBatch, DEFAULT_SAMPLE_SIZE};
pub use storage::{read_dataset, write_dataset};
pub use synthetic::synthetic_dataset;

/// Environment variable consulted when no data root is given explicitly.
pub const DATA_ROOT_ENV: &str = "CNT_DATA_ROOT";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Test => "test",
        })
    }
}

/// In-memory dataset; inputs are `[count x feature_dim]` with values in
/// `[0, 1]`. Reconstruction tasks use the inputs as targets.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset<T> {
    pub name: String,
    pub split: Split,
    pub inputs: Array2<T>,
    pub labels: Option<Vec<usize>>,
    pub class_count: usize,
    pub geometry: Option<InputGeometry>,
}

impl<T: Scalar> Dataset<T> {
    pub fn len(&self) -> usize {
        self.inputs.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn feature_dim(&self) -> usize {
        self.inputs.ncols()
    }

    pub fn inputs(&self) -> ArrayView2<'_, T> {
        self.inputs.view()
    }

    /// Checks the dataset invariants: labels in range, inputs finite and in
    /// `[0, 1]`.
    pub fn validate(&self) -> Result<()> {
        if let Some(labels) = &self.labels {
            if labels.len() != self.len() {
                return Err(Error::shape("dataset labels", self.len(), labels.len()));
            }
            if let Some((i, l)) = labels
                .iter()
                .enumerate()
                .find(|(_, &l)| l >= self.class_count)
            {
                return Err(Error::InvalidArgument(format!(
                    "label {l} at row {i} outside [0, {})",
                    self.class_count
                )));
            }
        }
        if let Some(g) = self.geometry {
            if g.len() != self.feature_dim() {
                return Err(Error::shape(
                    "dataset geometry",
                    g.len(),
                    self.feature_dim(),
                ));
            }
        }
        let bad = self
            .inputs
            .iter()
            .any(|&v| !v.is_finite() || v < T::zero() || v > T::one());
        if bad {
            return Err(Error::InvalidArgument(format!(
                "dataset `{}` has inputs outside [0, 1]",
                self.name
            )));
        }
        Ok(())
    }

    /// Rows at `indices`, in that order.
    pub fn select(&self, indices: &[usize]) -> Dataset<T> {
        Dataset {
            name: self.name.clone(),
            split: self.split,
            inputs: self.inputs.select(Axis(0), indices),
            labels: self
                .labels
                .as_ref()
                .map(|l| indices.iter().map(|&i| l[i]).collect()),
            class_count: self.class_count,
            geometry: self.geometry,
        }
    }

    /// First `n` rows (all rows when `n >= len`).
    pub fn head(&self, n: usize) -> Dataset<T> {
        let n = n.min(self.len());
        self.select(&(0..n).collect::<Vec<_>>())
    }

    pub fn cast<U: Scalar>(&self) -> Dataset<U> {
        Dataset {
            name: self.name.clone(),
            split: self.split,
            inputs: self.inputs.mapv(|v| U::of(v.to_f64_lossless())),
            labels: self.labels.clone(),
            class_count: self.class_count,
            geometry: self.geometry,
        }
    }
}

/// Resolves the data root from an explicit flag, then the
/// [`DATA_ROOT_ENV`] variable, then `./data`.
pub fn resolve_data_root(flag: Option<&Path>) -> PathBuf {
    if let Some(p) = flag {
        return p.to_path_buf();
    }
    std::env::var_os(DATA_ROOT_ENV)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from("data"))
}

pub(crate) fn read_file(path: &Path, expected: &str) -> Result<Vec<u8>> {
    match std::fs::read(path) {
        Ok(bytes) => Ok(bytes),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => Err(Error::MissingData {
            path: path.to_path_buf(),
            expected: expected.to_string(),
        }),
        Err(e) => Err(Error::io(path, e)),
    }
}
