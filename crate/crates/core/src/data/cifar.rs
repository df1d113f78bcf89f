//! CIFAR-10 binary batches: records of one label byte followed by 3072
//! pixel bytes, channel-planar and row-major.

use std::path::Path;

use crate::data::{LabeledImageSet, Split};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub const RECORD_BYTES: usize = 1 + 3 * 32 * 32;
const CLASSES: usize = 10;

pub fn parse_cifar10<T: Scalar>(bytes: &[u8], split: Split) -> Result<LabeledImageSet<T>> {
    if bytes.len() % RECORD_BYTES != 0 {
        let offset = bytes.len() - bytes.len() % RECORD_BYTES;
        return Err(Error::Data(format!(
            "length {} is not a multiple of {RECORD_BYTES}; partial record at byte offset {offset}",
            bytes.len()
        )));
    }
    let n = bytes.len() / RECORD_BYTES;
    let scale = T::lit(1.0 / 255.0);
    let mut labels = Vec::with_capacity(n);
    let mut pixels = Vec::with_capacity(n * (RECORD_BYTES - 1));
    for (i, rec) in bytes.chunks_exact(RECORD_BYTES).enumerate() {
        let label = rec[0] as usize;
        if label >= CLASSES {
            return Err(Error::Data(format!(
                "label {label} at byte offset {}",
                i * RECORD_BYTES
            )));
        }
        labels.push(label);
        pixels.extend(rec[1..].iter().map(|&b| T::lit(b as f64) * scale));
    }
    LabeledImageSet::new(Tensor::new([n, 3, 32, 32], pixels)?, labels, split, CLASSES)
}

pub fn load_cifar10_binary<T: Scalar>(path: impl AsRef<Path>, split: Split) -> Result<LabeledImageSet<T>> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
    parse_cifar10(&bytes, split).map_err(|e| match e {
        Error::Data(msg) => Error::Data(format!("{}: {msg}", path.display())),
        other => other,
    })
}

/// Loads `data_batch_1..5.bin` and `test_batch.bin` from `dir` or from its
/// `cifar-10-batches-bin` subdirectory.
pub fn load_cifar10_dir<T: Scalar>(dir: impl AsRef<Path>) -> Result<(LabeledImageSet<T>, LabeledImageSet<T>)> {
    let mut dir = dir.as_ref().to_path_buf();
    if !dir.join("test_batch.bin").exists() && dir.join("cifar-10-batches-bin").is_dir() {
        dir = dir.join("cifar-10-batches-bin");
    }
    let mut train = Vec::new();
    for i in 1..=5 {
        let path = dir.join(format!("data_batch_{i}.bin"));
        train.extend(std::fs::read(&path).map_err(|e| Error::Data(format!("{}: {e}", path.display())))?);
    }
    let train = parse_cifar10(&train, Split::Train)?;
    let test = load_cifar10_binary(dir.join("test_batch.bin"), Split::Test)?;
    Ok((train, test))
}

/// Serializes a 3x32x32 image set with at most ten classes. Pixels are
/// quantized to the nearest of the 256 levels.
pub fn encode_cifar10<T: Scalar>(set: &LabeledImageSet<T>) -> Result<Vec<u8>> {
    if set.image_shape() != [3, 32, 32] || set.classes > CLASSES {
        return Err(Error::Data(format!(
            "CIFAR-10 format needs 3x32x32 images and at most 10 classes, got {:?} and {}",
            set.image_shape(),
            set.classes
        )));
    }
    let mut out = Vec::with_capacity(set.len() * RECORD_BYTES);
    for (img, &label) in set.images.data().chunks(RECORD_BYTES - 1).zip(&set.labels) {
        out.push(label as u8);
        out.extend(img.iter().map(|v| (v.to_f64_lossy() * 255.0).round().clamp(0.0, 255.0) as u8));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_white_record() {
        let mut rec = vec![255u8; RECORD_BYTES];
        rec[0] = 7;
        let set = parse_cifar10::<f32>(&rec, Split::Train).unwrap();
        assert_eq!(set.labels, vec![7]);
        assert!(set.images.data().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn empty_file_is_empty_set() {
        let set = parse_cifar10::<f32>(&[], Split::Test).unwrap();
        assert!(set.is_empty());
    }

    #[test]
    fn errors_name_the_offset() {
        let err = parse_cifar10::<f32>(&vec![0u8; RECORD_BYTES + 5], Split::Train).unwrap_err();
        assert!(err.to_string().contains("offset 3073"), "{err}");
        let mut two = vec![0u8; 2 * RECORD_BYTES];
        two[RECORD_BYTES] = 10;
        let err = parse_cifar10::<f32>(&two, Split::Train).unwrap_err();
        assert!(err.to_string().contains("offset 3073"), "{err}");
    }

    #[test]
    fn byte_round_trip() {
        let bytes: Vec<u8> = (0..3 * RECORD_BYTES)
            .map(|i| if i % RECORD_BYTES == 0 { (i / RECORD_BYTES) as u8 * 3 } else { (i * 31 % 256) as u8 })
            .collect();
        let set = parse_cifar10::<f32>(&bytes, Split::Train).unwrap();
        assert_eq!(encode_cifar10(&set).unwrap(), bytes);
    }
}
