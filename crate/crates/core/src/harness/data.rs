//! Dataset ingestion: IDX image/label files and CIFAR-10 binary batches.
//! All pixel values are rescaled to [0,1]. The NNFRAG_DATA environment
//! variable supplies a default dataset root when none is given.

use crate::dataset::Dataset;
use crate::error::NnError;
use crate::tensor::Tensor;
use std::path::{Path, PathBuf};

type Result<T> = std::result::Result<T, NnError>;

const IDX_IMAGE_MAGIC: u32 = 0x0000_0803;
const IDX_LABEL_MAGIC: u32 = 0x0000_0801;
const CIFAR_RECORD: usize = 3073; // 1 label byte + 3×32×32 pixels

/// Both splits of a dataset on disk.
#[derive(Debug, Clone)]
pub struct Splits {
    pub train: Dataset,
    pub test: Dataset,
}

/// Resolves a dataset root: explicit directory if given, otherwise the
/// NNFRAG_DATA environment variable, otherwise the current directory.
pub fn data_root(explicit: Option<&Path>) -> PathBuf {
    if let Some(p) = explicit {
        return p.to_path_buf();
    }
    if let Ok(v) = std::env::var("NNFRAG_DATA") {
        if !v.is_empty() {
            return PathBuf::from(v);
        }
    }
    PathBuf::from(".")
}

fn read_u32_be(bytes: &[u8], offset: usize, path: &Path) -> Result<u32> {
    if offset + 4 > bytes.len() {
        return Err(NnError::TruncatedFile {
            path: path.display().to_string(),
        });
    }
    Ok(u32::from_be_bytes([
        bytes[offset],
        bytes[offset + 1],
        bytes[offset + 2],
        bytes[offset + 3],
    ]))
}

/// Loads an IDX image file (magic 0x00000803): big-endian header of
/// count, rows, cols, then one unsigned byte per pixel, row-major.
pub fn load_idx_images(path: &Path) -> Result<Vec<Tensor>> {
    let bytes =
        std::fs::read(path).map_err(NnError::io(format!("reading {}", path.display())))?;
    let magic = read_u32_be(&bytes, 0, path)?;
    if magic != IDX_IMAGE_MAGIC {
        return Err(NnError::BadMagic {
            expected: format!("{IDX_IMAGE_MAGIC:#010x}"),
            got: format!("{magic:#010x}"),
        });
    }
    let n = read_u32_be(&bytes, 4, path)? as usize;
    let rows = read_u32_be(&bytes, 8, path)? as usize;
    let cols = read_u32_be(&bytes, 12, path)? as usize;
    let need = 16 + n * rows * cols;
    if bytes.len() < need {
        return Err(NnError::TruncatedFile {
            path: path.display().to_string(),
        });
    }
    let mut images = Vec::with_capacity(n);
    for i in 0..n {
        let start = 16 + i * rows * cols;
        let data = bytes[start..start + rows * cols]
            .iter()
            .map(|&b| b as f64 / 255.0)
            .collect();
        images.push(Tensor {
            shape: vec![1, rows, cols],
            data,
        });
    }
    Ok(images)
}

/// Loads an IDX label file (magic 0x00000801): big-endian count then one
/// unsigned byte per label.
pub fn load_idx_labels(path: &Path) -> Result<Vec<usize>> {
    let bytes =
        std::fs::read(path).map_err(NnError::io(format!("reading {}", path.display())))?;
    let magic = read_u32_be(&bytes, 0, path)?;
    if magic != IDX_LABEL_MAGIC {
        return Err(NnError::BadMagic {
            expected: format!("{IDX_LABEL_MAGIC:#010x}"),
            got: format!("{magic:#010x}"),
        });
    }
    let n = read_u32_be(&bytes, 4, path)? as usize;
    if bytes.len() < 8 + n {
        return Err(NnError::TruncatedFile {
            path: path.display().to_string(),
        });
    }
    let labels: Vec<usize> = bytes[8..8 + n].iter().map(|&b| b as usize).collect();
    for &l in &labels {
        if l > 9 {
            return Err(NnError::LabelOutOfRange { label: l });
        }
    }
    Ok(labels)
}

fn idx_pair(dir: &Path, images: &str, labels: &str) -> Result<Dataset> {
    let imgs = load_idx_images(&dir.join(images))?;
    let labs = load_idx_labels(&dir.join(labels))?;
    if imgs.len() != labs.len() {
        return Err(NnError::config(format!(
            "{images} has {} images but {labels} has {} labels",
            imgs.len(),
            labs.len()
        )));
    }
    Dataset::new(imgs, labs, 10)
}

/// Loads the standard four-file IDX layout from a directory.
pub fn load_mnist(dir: &Path) -> Result<Splits> {
    Ok(Splits {
        train: idx_pair(dir, "train-images-idx3-ubyte", "train-labels-idx1-ubyte")?,
        test: idx_pair(dir, "t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte")?,
    })
}

/// Writes an IDX image file (testing and data staging).
pub fn write_idx_images(path: &Path, images: &[Tensor]) -> Result<()> {
    let (rows, cols) = match images.first().map(|t| t.shape.as_slice()) {
        Some([1, r, c]) | Some([r, c]) => (*r, *c),
        _ => return Err(NnError::config("images must be [1,h,w] or [h,w]")),
    };
    let mut bytes = Vec::with_capacity(16 + images.len() * rows * cols);
    bytes.extend_from_slice(&IDX_IMAGE_MAGIC.to_be_bytes());
    bytes.extend_from_slice(&(images.len() as u32).to_be_bytes());
    bytes.extend_from_slice(&(rows as u32).to_be_bytes());
    bytes.extend_from_slice(&(cols as u32).to_be_bytes());
    for img in images {
        for v in &img.data {
            bytes.push((v * 255.0).round().clamp(0.0, 255.0) as u8);
        }
    }
    std::fs::write(path, bytes).map_err(NnError::io(format!("writing {}", path.display())))
}

/// Writes an IDX label file (testing and data staging).
pub fn write_idx_labels(path: &Path, labels: &[usize]) -> Result<()> {
    let mut bytes = Vec::with_capacity(8 + labels.len());
    bytes.extend_from_slice(&IDX_LABEL_MAGIC.to_be_bytes());
    bytes.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    for &l in labels {
        bytes.push(l as u8);
    }
    std::fs::write(path, bytes).map_err(NnError::io(format!("writing {}", path.display())))
}

/// Loads one CIFAR-10 binary batch: 3073-byte records of one label byte
/// followed by 3072 channel-planar pixels (1024 red, 1024 green, 1024 blue).
pub fn load_cifar_batch(path: &Path) -> Result<Dataset> {
    let bytes =
        std::fs::read(path).map_err(NnError::io(format!("reading {}", path.display())))?;
    if bytes.is_empty() || bytes.len() % CIFAR_RECORD != 0 {
        return Err(NnError::TruncatedFile {
            path: path.display().to_string(),
        });
    }
    let n = bytes.len() / CIFAR_RECORD;
    let mut images = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let rec = &bytes[i * CIFAR_RECORD..(i + 1) * CIFAR_RECORD];
        let label = rec[0] as usize;
        if label > 9 {
            return Err(NnError::LabelOutOfRange { label });
        }
        labels.push(label);
        let data = rec[1..].iter().map(|&b| b as f64 / 255.0).collect();
        images.push(Tensor {
            shape: vec![3, 32, 32],
            data,
        });
    }
    Dataset::new(images, labels, 10)
}

fn concat(mut a: Dataset, b: Dataset) -> Dataset {
    a.images.extend(b.images);
    a.labels.extend(b.labels);
    a
}

/// Loads the standard five training batches plus the test batch.
pub fn load_cifar10(dir: &Path) -> Result<Splits> {
    let mut train: Option<Dataset> = None;
    for i in 1..=5 {
        let batch = load_cifar_batch(&dir.join(format!("data_batch_{i}.bin")))?;
        train = Some(match train {
            Some(t) => concat(t, batch),
            None => batch,
        });
    }
    Ok(Splits {
        train: train.unwrap(),
        test: load_cifar_batch(&dir.join("test_batch.bin"))?,
    })
}
