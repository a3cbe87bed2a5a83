//! IDX dataset ingestion (big-endian, optionally gzip-compressed).

use std::io::Read;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};

pub const IMAGES_MAGIC: u32 = 2051;
pub const LABELS_MAGIC: u32 = 2049;

/// Environment variable naming the dataset directory.
pub const DATA_DIR_ENV: &str = "MEMSYN_MNIST_DIR";

/// Hard cap on decompressed payloads; the real files are < 50 MB.
const MAX_DECOMPRESSED: u64 = 256 << 20;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Images {
    pub n: usize,
    pub rows: usize,
    pub cols: usize,
    /// n * rows * cols pixels, image-major.
    pub pixels: Vec<u8>,
}

impl Images {
    pub fn image(&self, i: usize) -> &[u8] {
        let len = self.rows * self.cols;
        &self.pixels[i * len..(i + 1) * len]
    }

    pub fn pixel_count(&self) -> usize {
        self.rows * self.cols
    }
}

fn be_u32(bytes: &[u8], off: usize) -> Option<u32> {
    let b = bytes.get(off..off + 4)?;
    Some(u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
}

/// Parse an IDX image file (magic 2051): u32 magic, count, rows, cols,
/// then count*rows*cols pixel bytes. Exact length required.
pub fn parse_idx_images(bytes: &[u8]) -> Result<Images> {
    let magic = be_u32(bytes, 0).ok_or_else(|| Error::Input("image header truncated".into()))?;
    if magic != IMAGES_MAGIC {
        return Err(Error::Input(format!(
            "bad image magic {magic:#010x}, want {IMAGES_MAGIC}"
        )));
    }
    let n = be_u32(bytes, 4).ok_or_else(|| Error::Input("image count truncated".into()))? as usize;
    let rows =
        be_u32(bytes, 8).ok_or_else(|| Error::Input("image rows truncated".into()))? as usize;
    let cols =
        be_u32(bytes, 12).ok_or_else(|| Error::Input("image cols truncated".into()))? as usize;
    if rows == 0 || cols == 0 || rows > 4096 || cols > 4096 {
        return Err(Error::Input(format!(
            "implausible image shape {rows}x{cols}"
        )));
    }
    let payload = n
        .checked_mul(rows)
        .and_then(|v| v.checked_mul(cols))
        .ok_or_else(|| Error::Input("image payload size overflows".into()))?;
    let expected = payload
        .checked_add(16)
        .ok_or_else(|| Error::Input("image payload size overflows".into()))?;
    if bytes.len() < expected {
        return Err(Error::Input(format!(
            "image file truncated: {} bytes, want {expected}",
            bytes.len()
        )));
    }
    if bytes.len() > expected {
        return Err(Error::Input(format!(
            "image file has {} trailing bytes",
            bytes.len() - expected
        )));
    }
    Ok(Images {
        n,
        rows,
        cols,
        pixels: bytes[16..].to_vec(),
    })
}

/// Parse an IDX label file (magic 2049): u32 magic, count, then count label
/// bytes, each a digit class 0..=9. Exact length required.
pub fn parse_idx_labels(bytes: &[u8]) -> Result<Vec<u8>> {
    let magic = be_u32(bytes, 0).ok_or_else(|| Error::Input("label header truncated".into()))?;
    if magic != LABELS_MAGIC {
        return Err(Error::Input(format!(
            "bad label magic {magic:#010x}, want {LABELS_MAGIC}"
        )));
    }
    let n = be_u32(bytes, 4).ok_or_else(|| Error::Input("label count truncated".into()))? as usize;
    let expected = n
        .checked_add(8)
        .ok_or_else(|| Error::Input("label count overflows".into()))?;
    if bytes.len() < expected {
        return Err(Error::Input(format!(
            "label file truncated: {} bytes, want {expected}",
            bytes.len()
        )));
    }
    if bytes.len() > expected {
        return Err(Error::Input(format!(
            "label file has {} trailing bytes",
            bytes.len() - expected
        )));
    }
    let labels = bytes[8..].to_vec();
    if let Some(bad) = labels.iter().find(|&&l| l > 9) {
        return Err(Error::Input(format!("label {bad} outside 0..=9")));
    }
    Ok(labels)
}

/// Transparently gunzip when the two-byte gzip signature is present.
pub fn maybe_decompress(bytes: &[u8]) -> Result<Vec<u8>> {
    if bytes.len() >= 2 && bytes[0] == 0x1f && bytes[1] == 0x8b {
        let mut out = Vec::new();
        flate2::read::GzDecoder::new(bytes)
            .take(MAX_DECOMPRESSED)
            .read_to_end(&mut out)
            .map_err(|e| Error::Input(format!("gzip decode failed: {e}")))?;
        if out.len() as u64 >= MAX_DECOMPRESSED {
            return Err(Error::Input("gzip payload exceeds the size cap".into()));
        }
        Ok(out)
    } else {
        Ok(bytes.to_vec())
    }
}

#[derive(Clone, Debug)]
pub struct Dataset {
    pub images: Images,
    pub labels: Vec<u8>,
}

#[derive(Clone, Debug)]
pub struct Mnist {
    pub train: Dataset,
    pub test: Dataset,
}

fn read_named(dir: &Path, stem: &str) -> Result<Vec<u8>> {
    for name in [stem.to_string(), format!("{stem}.gz")] {
        let path = dir.join(&name);
        if path.is_file() {
            let raw = std::fs::read(&path)
                .map_err(|e| Error::ingest(path.display().to_string(), e.to_string()))?;
            return maybe_decompress(&raw)
                .map_err(|e| Error::ingest(path.display().to_string(), e.to_string()));
        }
    }
    Err(Error::ingest(
        dir.join(stem).display().to_string(),
        "file not found (also tried .gz)".to_string(),
    ))
}

fn load_pair(dir: &Path, images_stem: &str, labels_stem: &str) -> Result<Dataset> {
    let images = parse_idx_images(&read_named(dir, images_stem)?)
        .map_err(|e| Error::ingest(dir.join(images_stem).display().to_string(), e.to_string()))?;
    let labels = parse_idx_labels(&read_named(dir, labels_stem)?)
        .map_err(|e| Error::ingest(dir.join(labels_stem).display().to_string(), e.to_string()))?;
    if images.n != labels.len() {
        return Err(Error::ingest(
            dir.join(images_stem).display().to_string(),
            format!("{} images but {} labels", images.n, labels.len()),
        ));
    }
    Ok(Dataset { images, labels })
}

/// Load the train and test splits from a directory holding the four
/// standard IDX files (plain or .gz).
pub fn load_dir(dir: &Path) -> Result<Mnist> {
    let train = load_pair(dir, "train-images-idx3-ubyte", "train-labels-idx1-ubyte")?;
    let test = load_pair(dir, "t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte")?;
    Ok(Mnist { train, test })
}

/// Resolve the dataset directory: an explicit path wins, then the
/// environment variable, then ./data/mnist.
pub fn locate_dir(explicit: Option<&Path>) -> Result<PathBuf> {
    if let Some(p) = explicit {
        return Ok(p.to_path_buf());
    }
    if let Ok(env) = std::env::var(DATA_DIR_ENV) {
        if !env.is_empty() {
            return Ok(PathBuf::from(env));
        }
    }
    let fallback = PathBuf::from("data/mnist");
    if fallback.is_dir() {
        return Ok(fallback);
    }
    Err(Error::ingest(
        fallback.display().to_string(),
        format!("dataset directory not found; pass --mnist-dir or set {DATA_DIR_ENV}"),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn image_bytes(n: u32, rows: u32, cols: u32, pixels: &[u8]) -> Vec<u8> {
        let mut v = Vec::new();
        v.extend_from_slice(&IMAGES_MAGIC.to_be_bytes());
        v.extend_from_slice(&n.to_be_bytes());
        v.extend_from_slice(&rows.to_be_bytes());
        v.extend_from_slice(&cols.to_be_bytes());
        v.extend_from_slice(pixels);
        v
    }

    fn label_bytes(labels: &[u8]) -> Vec<u8> {
        let mut v = Vec::new();
        v.extend_from_slice(&LABELS_MAGIC.to_be_bytes());
        v.extend_from_slice(&(labels.len() as u32).to_be_bytes());
        v.extend_from_slice(labels);
        v
    }

    #[test]
    fn parses_a_tiny_image_file() {
        let bytes = image_bytes(2, 2, 3, &[1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11, 12]);
        let imgs = parse_idx_images(&bytes).unwrap();
        assert_eq!((imgs.n, imgs.rows, imgs.cols), (2, 2, 3));
        assert_eq!(imgs.image(1), &[7, 8, 9, 10, 11, 12]);
    }

    #[test]
    fn rejects_wrong_magic_truncation_and_trailing() {
        let good = image_bytes(1, 2, 2, &[0, 1, 2, 3]);
        let mut bad_magic = good.clone();
        bad_magic[3] = 0x01;
        assert!(parse_idx_images(&bad_magic).is_err());
        assert!(parse_idx_images(&good[..good.len() - 1]).is_err());
        let mut trailing = good.clone();
        trailing.push(0);
        assert!(parse_idx_images(&trailing).is_err());
        assert!(parse_idx_images(&[]).is_err());
    }

    #[test]
    fn rejects_overflowing_dimensions() {
        let mut v = Vec::new();
        v.extend_from_slice(&IMAGES_MAGIC.to_be_bytes());
        v.extend_from_slice(&u32::MAX.to_be_bytes());
        v.extend_from_slice(&4000u32.to_be_bytes());
        v.extend_from_slice(&4000u32.to_be_bytes());
        assert!(parse_idx_images(&v).is_err());
    }

    #[test]
    fn parses_labels_and_validates_range() {
        let bytes = label_bytes(&[0, 5, 9]);
        assert_eq!(parse_idx_labels(&bytes).unwrap(), vec![0, 5, 9]);
        let bad = label_bytes(&[0, 10]);
        assert!(parse_idx_labels(&bad).is_err());
        let mut magic = label_bytes(&[1]);
        magic[3] = 0x03;
        assert!(parse_idx_labels(&magic).is_err());
    }

    #[test]
    fn gzip_round_trip() {
        let plain = label_bytes(&[1, 2, 3]);
        let mut enc = flate2::write::GzEncoder::new(Vec::new(), flate2::Compression::default());
        std::io::Write::write_all(&mut enc, &plain).unwrap();
        let gz = enc.finish().unwrap();
        assert_eq!(maybe_decompress(&gz).unwrap(), plain);
        assert_eq!(maybe_decompress(&plain).unwrap(), plain);
    }

    #[test]
    fn count_mismatch_names_the_file() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(
            dir.path().join("train-images-idx3-ubyte"),
            image_bytes(2, 1, 1, &[9, 9]),
        )
        .unwrap();
        std::fs::write(
            dir.path().join("train-labels-idx1-ubyte"),
            label_bytes(&[1]),
        )
        .unwrap();
        let err = load_pair(
            dir.path(),
            "train-images-idx3-ubyte",
            "train-labels-idx1-ubyte",
        )
        .unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("train-images-idx3-ubyte"), "{msg}");
        assert!(msg.contains("2 images but 1 labels"), "{msg}");
    }

    // The shipped dataset: counts, shapes, and a few known labels.
    #[test]
    fn shipped_dataset_loads() {
        let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data/mnist");
        if !dir.is_dir() {
            panic!("expected dataset directory at {}", dir.display());
        }
        let data = load_dir(&dir).unwrap();
        assert_eq!(data.train.images.n, 60_000);
        assert_eq!(data.test.images.n, 10_000);
        assert_eq!(data.train.images.pixel_count(), 784);
        assert_eq!(&data.train.labels[..10], &[5, 0, 4, 1, 9, 2, 1, 3, 1, 4]);
        assert_eq!(&data.test.labels[..10], &[7, 2, 1, 0, 4, 1, 4, 9, 5, 9]);
    }
}
