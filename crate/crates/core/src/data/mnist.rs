//! MNIST in the IDX format: big-endian `u32` header fields followed by raw
//! unsigned bytes.

use std::io::Write;
use std::path::{Path, PathBuf};

use byteorder::{BigEndian, ByteOrder, WriteBytesExt};
use ndarray::Array2;

use super::{read_file, Dataset, Split};
use crate::engine::architecture::InputGeometry;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

const IMAGE_MAGIC: u32 = 0x0000_0803;
const LABEL_MAGIC: u32 = 0x0000_0801;

/// Canonical file names: (train images, train labels, test images, test labels).
pub const MNIST_FILES: [&str; 4] = [
    "train-images-idx3-ubyte",
    "train-labels-idx1-ubyte",
    "t10k-images-idx3-ubyte",
    "t10k-labels-idx1-ubyte",
];

fn format_err(path: &Path, offset: usize, message: impl Into<String>) -> Error {
    Error::Format {
        path: path.to_path_buf(),
        offset: offset as u64,
        message: message.into(),
    }
}

fn header(bytes: &[u8], path: &Path, fields: usize) -> Result<Vec<u32>> {
    let need = 4 * fields;
    if bytes.len() < need {
        return Err(format_err(
            path,
            bytes.len(),
            format!(
                "truncated header: need {need} bytes, file has {}",
                bytes.len()
            ),
        ));
    }
    Ok((0..fields)
        .map(|i| BigEndian::read_u32(&bytes[4 * i..]))
        .collect())
}

fn check_magic(found: u32, expected: u32, path: &Path) -> Result<()> {
    if found != expected {
        return Err(format_err(
            path,
            0,
            format!("bad magic: expected 0x{expected:08x}, found 0x{found:08x}"),
        ));
    }
    Ok(())
}

fn check_body(bytes: &[u8], start: usize, len: usize, path: &Path) -> Result<()> {
    if bytes.len() < start + len {
        return Err(format_err(
            path,
            bytes.len(),
            format!(
                "truncated data: expected {} bytes, file ends at byte {}",
                start + len,
                bytes.len()
            ),
        ));
    }
    Ok(())
}

pub(crate) fn parse_images<'a>(
    bytes: &'a [u8],
    path: &Path,
) -> Result<(usize, usize, usize, &'a [u8])> {
    check_magic(header(bytes, path, 1)?[0], IMAGE_MAGIC, path)?;
    let h = header(bytes, path, 4)?;
    let (count, rows, cols) = (h[1] as usize, h[2] as usize, h[3] as usize);
    let len = count * rows * cols;
    check_body(bytes, 16, len, path)?;
    Ok((count, rows, cols, &bytes[16..16 + len]))
}

pub(crate) fn parse_labels<'a>(bytes: &'a [u8], path: &Path) -> Result<&'a [u8]> {
    check_magic(header(bytes, path, 1)?[0], LABEL_MAGIC, path)?;
    let h = header(bytes, path, 2)?;
    let count = h[1] as usize;
    check_body(bytes, 8, count, path)?;
    Ok(&bytes[8..8 + count])
}

/// Loads an IDX image/label file pair; pixels are scaled by `1/255`.
pub fn load_mnist<T: Scalar>(
    images_path: &Path,
    labels_path: &Path,
    split: Split,
) -> Result<Dataset<T>> {
    let expected = MNIST_FILES.join(", ");
    let image_bytes = read_file(images_path, &expected)?;
    let label_bytes = read_file(labels_path, &expected)?;
    let (count, rows, cols, pixels) = parse_images(&image_bytes, images_path)?;
    let labels = parse_labels(&label_bytes, labels_path)?;
    if labels.len() != count {
        return Err(format_err(
            labels_path,
            4,
            format!(
                "label count {} does not match image count {count} in {}",
                labels.len(),
                images_path.display()
            ),
        ));
    }
    if let Some((i, &l)) = labels.iter().enumerate().find(|(_, &l)| l >= 10) {
        return Err(format_err(
            labels_path,
            8 + i,
            format!("label {l} outside [0, 10)"),
        ));
    }
    let inputs = Array2::from_shape_vec(
        (count, rows * cols),
        pixels.iter().map(|&p| T::of(p as f64 / 255.0)).collect(),
    )
    .expect("pixel buffer length checked against header");
    Ok(Dataset {
        name: "mnist".into(),
        split,
        inputs,
        labels: Some(labels.iter().map(|&l| l as usize).collect()),
        class_count: 10,
        geometry: Some(InputGeometry {
            channels: 1,
            height: rows,
            width: cols,
        }),
    })
}

/// Loads a split from `root` or `root/mnist` using the canonical file names.
pub fn load_mnist_dir<T: Scalar>(root: &Path, split: Split) -> Result<Dataset<T>> {
    let (img, lbl) = match split {
        Split::Train => (MNIST_FILES[0], MNIST_FILES[1]),
        Split::Test => (MNIST_FILES[2], MNIST_FILES[3]),
    };
    let dir = [root.join("mnist"), root.to_path_buf()]
        .into_iter()
        .find(|d| d.join(img).exists())
        .unwrap_or_else(|| root.join("mnist"));
    load_mnist(&dir.join(img), &dir.join(lbl), split)
}

fn create(path: &Path) -> Result<std::io::BufWriter<std::fs::File>> {
    std::fs::File::create(path)
        .map(std::io::BufWriter::new)
        .map_err(|e| Error::io(path, e))
}

/// Writes an IDX image file (used for fixtures and dataset export).
pub fn write_idx_images(path: &Path, rows: usize, cols: usize, pixels: &[u8]) -> Result<()> {
    let count = pixels.len() / (rows * cols).max(1);
    let mut f = create(path)?;
    let io = |e| Error::io(PathBuf::from(path), e);
    f.write_u32::<BigEndian>(IMAGE_MAGIC).map_err(io)?;
    for v in [count, rows, cols] {
        f.write_u32::<BigEndian>(v as u32).map_err(io)?;
    }
    f.write_all(pixels).map_err(io)?;
    f.flush().map_err(io)
}

pub fn write_idx_labels(path: &Path, labels: &[u8]) -> Result<()> {
    let mut f = create(path)?;
    let io = |e| Error::io(PathBuf::from(path), e);
    f.write_u32::<BigEndian>(LABEL_MAGIC).map_err(io)?;
    f.write_u32::<BigEndian>(labels.len() as u32).map_err(io)?;
    f.write_all(labels).map_err(io)?;
    f.flush().map_err(io)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fixture(dir: &Path, count: usize) -> (PathBuf, PathBuf) {
        let images = dir.join("img");
        let labels = dir.join("lbl");
        let pixels: Vec<u8> = (0..count * 4).map(|i| (i * 37 % 256) as u8).collect();
        write_idx_images(&images, 2, 2, &pixels).unwrap();
        write_idx_labels(
            &labels,
            &(0..count).map(|i| (i % 10) as u8).collect::<Vec<_>>(),
        )
        .unwrap();
        (images, labels)
    }

    #[test]
    fn parses_written_files() {
        let dir = tempfile::tempdir().unwrap();
        let (img, lbl) = fixture(dir.path(), 12);
        let ds: Dataset<f64> = load_mnist(&img, &lbl, Split::Train).unwrap();
        assert_eq!(ds.len(), 12);
        assert_eq!(ds.feature_dim(), 4);
        assert_eq!(ds.inputs[[0, 1]], 37.0 / 255.0);
        assert!(ds.inputs.iter().all(|&v| (0.0..=1.0).contains(&v)));
        assert_eq!(ds.labels.as_ref().unwrap()[11], 1);
        ds.validate().unwrap();
    }

    #[test]
    fn wrong_magic_reports_both_values() {
        let dir = tempfile::tempdir().unwrap();
        let (img, lbl) = fixture(dir.path(), 3);
        let err = load_mnist::<f64>(&lbl, &img, Split::Train)
            .unwrap_err()
            .to_string();
        assert!(
            err.contains("expected 0x00000803") && err.contains("found 0x00000801"),
            "{err}"
        );
    }

    #[test]
    fn truncated_file_names_offset() {
        let dir = tempfile::tempdir().unwrap();
        let (img, lbl) = fixture(dir.path(), 5);
        let bytes = std::fs::read(&img).unwrap();
        std::fs::write(&img, &bytes[..bytes.len() - 3]).unwrap();
        let err = load_mnist::<f64>(&img, &lbl, Split::Train).unwrap_err();
        match err {
            Error::Format { offset, .. } => assert_eq!(offset as usize, bytes.len() - 3),
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn count_mismatch_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let (img, _) = fixture(dir.path(), 5);
        let lbl = dir.path().join("short");
        write_idx_labels(&lbl, &[1, 2, 3]).unwrap();
        let err = load_mnist::<f64>(&img, &lbl, Split::Test)
            .unwrap_err()
            .to_string();
        assert!(err.contains("does not match image count 5"), "{err}");
    }

    #[test]
    fn missing_files_list_expected_names() {
        let dir = tempfile::tempdir().unwrap();
        let err = load_mnist_dir::<f64>(dir.path(), Split::Train)
            .unwrap_err()
            .to_string();
        assert!(err.contains("train-images-idx3-ubyte"), "{err}");
    }
}
