//! Dataset ingestion: IDX (MNIST / Fashion-MNIST) and CIFAR-10 binary
//! records. Pixels are scaled to [0, 1] before fixed-point encoding.

use crate::{Error, Result};
use std::io::Read;
use std::path::{Path, PathBuf};

pub const IDX_IMAGE_MAGIC: u32 = 2051;
pub const IDX_LABEL_MAGIC: u32 = 2049;

/// A loaded split: row-major normalized pixels plus integer labels.
#[derive(Clone)]
pub struct Split {
    /// n * rows * cols (or n * channels * rows * cols for CIFAR), in [0, 1].
    pub images: Vec<f32>,
    pub labels: Vec<u8>,
    pub rows: usize,
    pub cols: usize,
    pub channels: usize,
}

impl Split {
    pub fn len(&self) -> usize {
        self.labels.len()
    }
    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
    pub fn sample_size(&self) -> usize {
        self.channels * self.rows * self.cols
    }
}

#[derive(Clone)]
pub struct Dataset {
    pub train: Split,
    pub test: Split,
    pub classes: usize,
}

fn read_be_u32(bytes: &[u8], off: usize) -> Result<u32> {
    let chunk = bytes
        .get(off..off + 4)
        .ok_or_else(|| Error::Data("truncated IDX header".into()))?;
    Ok(u32::from_be_bytes(chunk.try_into().unwrap()))
}

/// Parse an IDX image/label file pair into a normalized split.
pub fn load_idx(images_path: &Path, labels_path: &Path) -> Result<Split> {
    let mut img_bytes = Vec::new();
    std::fs::File::open(images_path)
        .map_err(|e| Error::Data(format!("{}: {e}", images_path.display())))?
        .read_to_end(&mut img_bytes)?;
    let mut lab_bytes = Vec::new();
    std::fs::File::open(labels_path)
        .map_err(|e| Error::Data(format!("{}: {e}", labels_path.display())))?
        .read_to_end(&mut lab_bytes)?;

    let img_magic = read_be_u32(&img_bytes, 0)?;
    if img_magic != IDX_IMAGE_MAGIC {
        return Err(Error::Data(format!(
            "bad image magic {img_magic} in {}",
            images_path.display()
        )));
    }
    let lab_magic = read_be_u32(&lab_bytes, 0)?;
    if lab_magic != IDX_LABEL_MAGIC {
        return Err(Error::Data(format!(
            "bad label magic {lab_magic} in {}",
            labels_path.display()
        )));
    }
    let n = read_be_u32(&img_bytes, 4)? as usize;
    let rows = read_be_u32(&img_bytes, 8)? as usize;
    let cols = read_be_u32(&img_bytes, 12)? as usize;
    let n_labels = read_be_u32(&lab_bytes, 4)? as usize;
    if n != n_labels {
        return Err(Error::Data(format!(
            "image count {n} does not match label count {n_labels}"
        )));
    }
    let pixels = img_bytes
        .get(16..16 + n * rows * cols)
        .ok_or_else(|| Error::Data("truncated IDX image payload".into()))?;
    let labels = lab_bytes
        .get(8..8 + n)
        .ok_or_else(|| Error::Data("truncated IDX label payload".into()))?;
    Ok(Split {
        images: pixels.iter().map(|&b| b as f32 / 255.0).collect(),
        labels: labels.to_vec(),
        rows,
        cols,
        channels: 1,
    })
}

/// Standard MNIST-style file names under a directory.
pub fn load_mnist_dir(dir: &Path) -> Result<Dataset> {
    let train = load_idx(
        &dir.join("train-images-idx3-ubyte"),
        &dir.join("train-labels-idx1-ubyte"),
    )?;
    let test = load_idx(
        &dir.join("t10k-images-idx3-ubyte"),
        &dir.join("t10k-labels-idx1-ubyte"),
    )?;
    Ok(Dataset {
        train,
        test,
        classes: 10,
    })
}

/// CIFAR-10 binary format: 3073-byte records, one label byte then
/// 3 * 32 * 32 pixel bytes in channel-major order.
pub fn load_cifar10_bin(paths: &[PathBuf]) -> Result<Split> {
    const REC: usize = 3073;
    let mut images = Vec::new();
    let mut labels = Vec::new();
    for path in paths {
        let mut bytes = Vec::new();
        std::fs::File::open(path)
            .map_err(|e| Error::Data(format!("{}: {e}", path.display())))?
            .read_to_end(&mut bytes)?;
        if bytes.is_empty() || bytes.len() % REC != 0 {
            return Err(Error::Data(format!(
                "{}: size {} is not a multiple of {REC}",
                path.display(),
                bytes.len()
            )));
        }
        for rec in bytes.chunks_exact(REC) {
            if rec[0] > 9 {
                return Err(Error::Data(format!("label {} out of range", rec[0])));
            }
            labels.push(rec[0]);
            images.extend(rec[1..].iter().map(|&b| b as f32 / 255.0));
        }
    }
    Ok(Split {
        images,
        labels,
        rows: 32,
        cols: 32,
        channels: 3,
    })
}

/// Resolve the dataset directory: explicit flag, then the DEEPMPC_DATA
/// environment variable, then ./data/mnist.
pub fn resolve_data_dir(flag: Option<&Path>) -> PathBuf {
    if let Some(p) = flag {
        return p.to_path_buf();
    }
    if let Ok(env) = std::env::var("DEEPMPC_DATA") {
        return PathBuf::from(env);
    }
    PathBuf::from("data/mnist")
}
