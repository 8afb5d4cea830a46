use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::{Dataset, Split};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

const BASE: f64 = 0.15;
const NOISE_STD: f64 = 0.08;

/// Gaussian class blobs in `[0, 1]^feature_dim`.
///
/// Class `c` is centred on `BASE + e_(c mod d) / sqrt(2)`, so any two means
/// that use distinct axes sit at unit distance. Classes beyond the feature
/// count reuse axes with an extra uniform offset. Labels are assigned
/// round-robin and then shuffled, so every class appears when
/// `count >= class_count`.
pub fn synthetic_dataset<T: Scalar>(
    seed: u64,
    count: usize,
    feature_dim: usize,
    class_count: usize,
) -> Result<Dataset<T>> {
    if count == 0 || feature_dim == 0 || class_count == 0 {
        return Err(Error::InvalidArgument(
            "synthetic dataset dimensions must be positive".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, NOISE_STD).expect("constant std is valid");
    let mut labels: Vec<usize> = (0..count).map(|i| i % class_count).collect();
    labels.shuffle(&mut rng);
    let offset = std::f64::consts::FRAC_1_SQRT_2;
    let mut inputs = Array2::<T>::zeros((count, feature_dim));
    for (row, &label) in inputs.outer_iter_mut().zip(&labels) {
        let axis = label % feature_dim;
        let shift = 0.1 * (label / feature_dim) as f64;
        for (j, v) in row.into_iter().enumerate() {
            let mean = BASE + shift + if j == axis { offset } else { 0.0 };
            *v = T::of((mean + noise.sample(&mut rng)).clamp(0.0, 1.0));
        }
    }
    Ok(Dataset {
        name: "synthetic".into(),
        split: Split::Train,
        inputs,
        labels: Some(labels),
        class_count,
        geometry: None,
    })
}
