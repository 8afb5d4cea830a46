use ndarray::{Array2, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::Dataset;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Samples drawn per network for the data-dependent metrics.
pub const DEFAULT_SAMPLE_SIZE: usize = 100;

/// Inputs drawn from a dataset, with the rows they came from.
#[derive(Clone, Debug, PartialEq)]
pub struct SampleBatch<T> {
    pub inputs: Array2<T>,
    pub indices: Vec<usize>,
    pub seed: u64,
}

impl<T: Scalar> SampleBatch<T> {
    /// Wraps explicit inputs (indices are `0..n`).
    pub fn from_inputs(inputs: Array2<T>) -> Self {
        let n = inputs.nrows();
        SampleBatch {
            inputs,
            indices: (0..n).collect(),
            seed: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.inputs.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// `n` distinct rows chosen uniformly without replacement.
pub fn sample_inputs<T: Scalar>(
    dataset: &Dataset<T>,
    n: usize,
    seed: u64,
) -> Result<SampleBatch<T>> {
    if n == 0 {
        return Err(Error::InvalidArgument(
            "sample size must be positive".into(),
        ));
    }
    if n > dataset.len() {
        return Err(Error::InvalidArgument(format!(
            "cannot sample {n} rows without replacement from {} rows",
            dataset.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let indices = rand::seq::index::sample(&mut rng, dataset.len(), n).into_vec();
    Ok(SampleBatch {
        inputs: dataset.inputs.select(Axis(0), &indices),
        indices,
        seed,
    })
}
