//! CIFAR-10 binary batches: 1 label byte + 3072 channel-major pixel bytes
//! per record.

use std::path::{Path, PathBuf};

use ndarray::Array2;

use super::{read_file, Dataset, Split};
use crate::engine::architecture::InputGeometry;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

pub const CIFAR10_RECORD_LEN: usize = 1 + 3 * 32 * 32;

const TRAIN_BATCHES: [&str; 5] = [
    "data_batch_1.bin",
    "data_batch_2.bin",
    "data_batch_3.bin",
    "data_batch_4.bin",
    "data_batch_5.bin",
];
const TEST_BATCH: &str = "test_batch.bin";

pub fn load_cifar10<T: Scalar>(batch_paths: &[PathBuf], split: Split) -> Result<Dataset<T>> {
    let expected = format!("{}, {TEST_BATCH}", TRAIN_BATCHES.join(", "));
    let scale = T::of(1.0 / 255.0);
    let mut pixels = Vec::new();
    let mut labels = Vec::new();
    for path in batch_paths {
        let bytes = read_file(path, &expected)?;
        if bytes.len() % CIFAR10_RECORD_LEN != 0 {
            return Err(Error::Format {
                path: path.clone(),
                offset: (bytes.len() - bytes.len() % CIFAR10_RECORD_LEN) as u64,
                message: format!(
                    "length {} is not a multiple of the {CIFAR10_RECORD_LEN}-byte record size",
                    bytes.len()
                ),
            });
        }
        for (r, record) in bytes.chunks_exact(CIFAR10_RECORD_LEN).enumerate() {
            if record[0] >= 10 {
                return Err(Error::Format {
                    path: path.clone(),
                    offset: (r * CIFAR10_RECORD_LEN) as u64,
                    message: format!("label {} outside [0, 10)", record[0]),
                });
            }
            labels.push(record[0] as usize);
            pixels.extend(record[1..].iter().map(|&p| T::of(p as f64) * scale));
        }
    }
    let count = labels.len();
    Ok(Dataset {
        name: "cifar10".into(),
        split,
        inputs: Array2::from_shape_vec((count, CIFAR10_RECORD_LEN - 1), pixels)
            .expect("records have a fixed size"),
        labels: Some(labels),
        class_count: 10,
        geometry: Some(InputGeometry::CIFAR10),
    })
}

/// Loads a split from `root/cifar-10-batches-bin` (or `root` itself).
pub fn load_cifar10_dir<T: Scalar>(root: &Path, split: Split) -> Result<Dataset<T>> {
    let names: Vec<&str> = match split {
        Split::Train => TRAIN_BATCHES.to_vec(),
        Split::Test => vec![TEST_BATCH],
    };
    let dir = [
        root.join("cifar-10-batches-bin"),
        root.join("cifar10"),
        root.to_path_buf(),
    ]
    .into_iter()
    .find(|d| d.join(names[0]).exists())
    .unwrap_or_else(|| root.join("cifar-10-batches-bin"));
    let paths: Vec<PathBuf> = names.iter().map(|n| dir.join(n)).collect();
    load_cifar10(&paths, split)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(label: u8, fill: u8) -> Vec<u8> {
        let mut r = vec![fill; CIFAR10_RECORD_LEN];
        r[0] = label;
        r
    }

    #[test]
    fn single_record() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("one.bin");
        std::fs::write(&p, record(7, 255)).unwrap();
        let ds: Dataset<f64> = load_cifar10(&[p], Split::Train).unwrap();
        assert_eq!(ds.len(), 1);
        assert_eq!(ds.feature_dim(), 3072);
        assert_eq!(ds.labels.as_deref(), Some(&[7][..]));
        assert!(ds.inputs.iter().all(|&v| v == 1.0));
    }

    #[test]
    fn multiple_files_concatenate() {
        let dir = tempfile::tempdir().unwrap();
        let a = dir.path().join("a.bin");
        let b = dir.path().join("b.bin");
        std::fs::write(&a, [record(1, 0), record(2, 10)].concat()).unwrap();
        std::fs::write(&b, record(9, 20)).unwrap();
        let ds: Dataset<f32> = load_cifar10(&[a, b], Split::Test).unwrap();
        assert_eq!(ds.labels.as_deref(), Some(&[1, 2, 9][..]));
        ds.validate().unwrap();
    }

    #[test]
    fn partial_record_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("bad.bin");
        let mut bytes = record(1, 3);
        bytes.extend([0u8; 5]);
        std::fs::write(&p, bytes).unwrap();
        let err = load_cifar10::<f64>(&[p], Split::Train)
            .unwrap_err()
            .to_string();
        assert!(err.contains("not a multiple"), "{err}");
    }
}
