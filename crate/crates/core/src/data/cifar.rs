//! CIFAR-10 binary batches: each record is one label byte followed by
//! 3,072 pixel bytes (red, green, blue planes of 32×32, row-major).

use std::fs;
use std::path::Path;

use super::{DataError, Dataset, Split};

pub const CIFAR_RECORD_BYTES: usize = 1 + 3 * 32 * 32;
pub const CIFAR_RECORDS_PER_FILE: usize = 10_000;
const TRAIN_FILES: [&str; 5] = [
    "data_batch_1.bin",
    "data_batch_2.bin",
    "data_batch_3.bin",
    "data_batch_4.bin",
    "data_batch_5.bin",
];
const TEST_FILE: &str = "test_batch.bin";

fn read_file(path: &Path, expected_records: Option<usize>) -> Result<Dataset, DataError> {
    let bytes = fs::read(path).map_err(|source| DataError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let size_error = |expected| DataError::FileSize {
        path: path.to_path_buf(),
        expected,
        actual: bytes.len(),
    };
    match expected_records {
        Some(records) if bytes.len() != records * CIFAR_RECORD_BYTES => {
            return Err(size_error(records * CIFAR_RECORD_BYTES));
        }
        None if bytes.is_empty() || bytes.len() % CIFAR_RECORD_BYTES != 0 => {
            let whole = (bytes.len() / CIFAR_RECORD_BYTES).max(1);
            return Err(size_error(whole * CIFAR_RECORD_BYTES));
        }
        _ => {}
    }
    let records = bytes.len() / CIFAR_RECORD_BYTES;
    let mut labels = Vec::with_capacity(records);
    let mut images = Vec::with_capacity(records * (CIFAR_RECORD_BYTES - 1));
    for (r, record) in bytes.chunks_exact(CIFAR_RECORD_BYTES).enumerate() {
        let label = record[0];
        if label > 9 {
            return Err(DataError::Label {
                path: path.to_path_buf(),
                offset: r * CIFAR_RECORD_BYTES,
                label,
            });
        }
        labels.push(label as usize);
        images.extend(record[1..].iter().map(|&b| b as f32 / 255.0));
    }
    Dataset::new(images, labels, 10, 3, 32, Split::Train)
}

/// Any whole number of records from one file.
pub fn read_records(path: impl AsRef<Path>, split: Split) -> Result<Dataset, DataError> {
    let mut d = read_file(path.as_ref(), None)?;
    d.split = split;
    Ok(d)
}

/// Writes `dataset` in the binary record layout, quantizing pixels to bytes.
pub fn write_records(dataset: &Dataset, path: impl AsRef<Path>) -> Result<(), DataError> {
    let path = path.as_ref();
    if dataset.channels != 3 || dataset.image_size != 32 || dataset.num_classes > 10 {
        return Err(DataError::Invalid("only 3x32x32 images with at most 10 classes can be written".into()));
    }
    let mut bytes = Vec::with_capacity(dataset.len() * CIFAR_RECORD_BYTES);
    for i in 0..dataset.len() {
        bytes.push(dataset.labels[i] as u8);
        bytes.extend(dataset.image(i).iter().map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8));
    }
    fs::write(path, bytes).map_err(|source| DataError::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// The five training batches (50,000 images) and the test batch (10,000).
pub fn load_cifar10(dir: impl AsRef<Path>) -> Result<(Dataset, Dataset), DataError> {
    let dir = dir.as_ref();
    let mut train: Option<Dataset> = None;
    for name in TRAIN_FILES {
        let part = read_file(&dir.join(name), Some(CIFAR_RECORDS_PER_FILE))?;
        match train.as_mut() {
            None => train = Some(part),
            Some(t) => {
                t.images.extend(part.images);
                t.labels.extend(part.labels);
            }
        }
    }
    let train = train.expect("five training files");
    let mut test = read_file(&dir.join(TEST_FILE), Some(CIFAR_RECORDS_PER_FILE))?;
    test.split = Split::Test;
    Ok((train, test))
}
