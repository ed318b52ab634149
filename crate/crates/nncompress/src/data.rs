//! Datasets and batches: the MNIST IDX reader (plain or gzipped), zero
//! padding to the model's input size, and a small synthetic set for tests.

use std::fs::File;
use std::io::Read;
use std::path::{Path, PathBuf};

use byteorder::{BigEndian, ReadBytesExt};
use ndarray::Array4;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

pub const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
pub const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

/// One training batch: images in `(N, C, H, W)` layout, values in `[0, 1]`.
#[derive(Debug, Clone)]
pub struct Batch {
    pub images: Array4<f64>,
    pub labels: Vec<usize>,
}

impl Batch {
    pub fn new(images: Array4<f64>, labels: Vec<usize>, class_count: usize) -> Result<Self> {
        if images.shape()[0] != labels.len() || labels.is_empty() {
            return Err(Error::Data("batch images/labels mismatch or empty".into()));
        }
        if let Some(bad) = labels.iter().find(|l| **l >= class_count) {
            return Err(Error::Data(format!("label {bad} >= class count {class_count}")));
        }
        Ok(Self { images, labels })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

/// An image classification dataset held as raw bytes; batches are
/// materialized (normalized and zero-padded) on demand.
#[derive(Debug, Clone)]
pub struct Dataset {
    pixels: Vec<u8>,
    labels: Vec<u8>,
    count: usize,
    height: usize,
    width: usize,
    pad_h: usize,
    pad_w: usize,
    class_count: usize,
}

impl Dataset {
    pub fn from_raw(
        pixels: Vec<u8>,
        labels: Vec<u8>,
        height: usize,
        width: usize,
        class_count: usize,
    ) -> Result<Self> {
        if labels.is_empty() || pixels.len() != labels.len() * height * width {
            return Err(Error::Data("pixel buffer does not match label count".into()));
        }
        if let Some(bad) = labels.iter().find(|l| (**l as usize) >= class_count) {
            return Err(Error::Data(format!("label {bad} >= class count {class_count}")));
        }
        Ok(Self {
            count: labels.len(),
            pixels,
            labels,
            height,
            width,
            pad_h: height,
            pad_w: width,
            class_count,
        })
    }

    /// Zero-pad every image (centered) to `h x w` when batches are built.
    pub fn with_padding(mut self, h: usize, w: usize) -> Result<Self> {
        if h < self.height || w < self.width {
            return Err(Error::Data("padding smaller than image".into()));
        }
        self.pad_h = h;
        self.pad_w = w;
        Ok(self)
    }

    pub fn len(&self) -> usize {
        self.count
    }

    pub fn is_empty(&self) -> bool {
        self.count == 0
    }

    pub fn class_count(&self) -> usize {
        self.class_count
    }

    pub fn input_shape(&self) -> (usize, usize, usize) {
        (1, self.pad_h, self.pad_w)
    }

    pub fn label(&self, i: usize) -> usize {
        self.labels[i] as usize
    }

    /// First `n` samples, keeping padding settings.
    pub fn take(&self, n: usize) -> Dataset {
        let n = n.min(self.count);
        Dataset {
            pixels: self.pixels[..n * self.height * self.width].to_vec(),
            labels: self.labels[..n].to_vec(),
            count: n,
            ..self.clone()
        }
    }

    pub fn batch(&self, indices: &[usize]) -> Batch {
        let n = indices.len();
        let (oy, ox) = ((self.pad_h - self.height) / 2, (self.pad_w - self.width) / 2);
        let mut images = Array4::<f64>::zeros((n, 1, self.pad_h, self.pad_w));
        let mut labels = Vec::with_capacity(n);
        for (bi, &si) in indices.iter().enumerate() {
            let base = si * self.height * self.width;
            for y in 0..self.height {
                for x in 0..self.width {
                    images[[bi, 0, oy + y, ox + x]] =
                        self.pixels[base + y * self.width + x] as f64 / 255.0;
                }
            }
            labels.push(self.labels[si] as usize);
        }
        Batch::new(images, labels, self.class_count).expect("dataset invariants")
    }

    /// Shuffled batch index lists for one epoch.
    pub fn epoch_indices(&self, batch_size: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<usize>> {
        let mut order: Vec<usize> = (0..self.count).collect();
        order.shuffle(rng);
        order
            .chunks(batch_size.max(1))
            .map(|c| c.to_vec())
            .collect()
    }

    /// Sequential batch index lists (no shuffle), e.g. for evaluation.
    pub fn sequential_indices(&self, batch_size: usize) -> Vec<Vec<usize>> {
        (0..self.count)
            .collect::<Vec<_>>()
            .chunks(batch_size.max(1))
            .map(|c| c.to_vec())
            .collect()
    }
}

// ---------------------------------------------------------------------------
// MNIST IDX format
// ---------------------------------------------------------------------------

fn open_maybe_gz(path: &Path) -> Result<Box<dyn Read>> {
    let file = File::open(path)?;
    if path.extension().is_some_and(|e| e == "gz") {
        Ok(Box::new(flate2::read::GzDecoder::new(file)))
    } else {
        Ok(Box::new(file))
    }
}

pub fn read_idx_images(path: &Path) -> Result<(Vec<u8>, usize, usize, usize)> {
    let mut r = open_maybe_gz(path)?;
    let magic = r.read_u32::<BigEndian>()?;
    if magic != IDX_IMAGES_MAGIC {
        return Err(Error::Data(format!(
            "{}: bad image magic {magic:#010x} (expected {IDX_IMAGES_MAGIC:#010x})",
            path.display()
        )));
    }
    let n = r.read_u32::<BigEndian>()? as usize;
    let h = r.read_u32::<BigEndian>()? as usize;
    let w = r.read_u32::<BigEndian>()? as usize;
    let mut pixels = vec![0u8; n * h * w];
    r.read_exact(&mut pixels)?;
    Ok((pixels, n, h, w))
}

pub fn read_idx_labels(path: &Path) -> Result<Vec<u8>> {
    let mut r = open_maybe_gz(path)?;
    let magic = r.read_u32::<BigEndian>()?;
    if magic != IDX_LABELS_MAGIC {
        return Err(Error::Data(format!(
            "{}: bad label magic {magic:#010x} (expected {IDX_LABELS_MAGIC:#010x})",
            path.display()
        )));
    }
    let n = r.read_u32::<BigEndian>()? as usize;
    let mut labels = vec![0u8; n];
    r.read_exact(&mut labels)?;
    Ok(labels)
}

fn find_idx_file(dir: &Path, stem: &str) -> Result<PathBuf> {
    // Accept the common name variants and gzipped copies.
    let candidates = [
        format!("{stem}-ubyte"),
        format!("{stem}-ubyte.gz"),
        format!("{stem}.ubyte"),
    ];
    let dashed = candidates.iter().map(|c| dir.join(c));
    let dotted = [
        format!("{}.{}", stem.replace("-idx", ""), "idx3-ubyte"),
        format!("{}.{}", stem.replace("-idx", ""), "idx1-ubyte"),
    ]
    .map(|c| dir.join(c));
    for p in dashed.chain(dotted) {
        if p.exists() {
            return Ok(p);
        }
    }
    Err(Error::Data(format!(
        "no MNIST file matching '{stem}-ubyte[.gz]' in {}",
        dir.display()
    )))
}

fn load_split(dir: &Path, prefix: &str) -> Result<Dataset> {
    let images = find_idx_file(dir, &format!("{prefix}-images-idx3"))?;
    let labels = find_idx_file(dir, &format!("{prefix}-labels-idx1"))?;
    let (pixels, n, h, w) = read_idx_images(&images)?;
    let labels = read_idx_labels(&labels)?;
    if labels.len() != n {
        return Err(Error::Data(format!(
            "{prefix}: {n} images but {} labels",
            labels.len()
        )));
    }
    Dataset::from_raw(pixels, labels, h, w, 10)
}

/// Load the train and test splits from a directory holding the four
/// canonical IDX files.
pub fn load_mnist(dir: &Path) -> Result<(Dataset, Dataset)> {
    Ok((load_split(dir, "train")?, load_split(dir, "t10k")?))
}

// ---------------------------------------------------------------------------
// Synthetic data
// ---------------------------------------------------------------------------

/// Deterministic synthetic classification set: one bright block per class on
/// a noisy background. Easy enough that toy models can overfit quickly.
pub fn synthetic(seed: u64, count: usize, height: usize, width: usize, classes: usize) -> Dataset {
    assert!(classes >= 2 && height >= 4 && width >= 4);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut pixels = Vec::with_capacity(count * height * width);
    let mut labels = Vec::with_capacity(count);
    for i in 0..count {
        let class = i % classes;
        let cy = (class * (height - 2)) / classes;
        let cx = ((class * 7 + 3) % (width - 2)).min(width - 3);
        for y in 0..height {
            for x in 0..width {
                let noise: u8 = rng.random_range(0..48);
                let lit = y >= cy && y < cy + 3 && x >= cx && x < cx + 3;
                pixels.push(if lit { 220 + (noise / 8) } else { noise });
            }
        }
        labels.push(class as u8);
    }
    Dataset::from_raw(pixels, labels, height, width, classes).unwrap()
}

/// Directory holding the MNIST IDX files, from `NNC_MNIST_DIR` or the
/// workspace-level `data/mnist`.
pub fn default_mnist_dir() -> Option<PathBuf> {
    if let Ok(dir) = std::env::var("NNC_MNIST_DIR") {
        let p = PathBuf::from(dir);
        if p.is_dir() {
            return Some(p);
        }
    }
    let mut here = PathBuf::from(env!("CARGO_MANIFEST_DIR"));
    for _ in 0..3 {
        let candidate = here.join("data/mnist");
        if candidate.is_dir() {
            return Some(candidate);
        }
        if !here.pop() {
            break;
        }
    }
    None
}
