//! Dataset loading, splitting and batching, plus the PGM and CSV writers used
//! for experiment outputs.

mod idx;
mod output;

use std::fs;
use std::ops::Range;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub use idx::{parse_idx, write_idx, IdxArray, IdxError, IMAGES_MAGIC, LABELS_MAGIC};
pub use output::{
    metrics_csv_string, pgm_grid_bytes, quantize_pixel, read_metrics_csv, write_metrics_csv, write_pgm_grid,
    MetricsRow, METRICS_HEADER,
};

use crate::error::{Error, Result};
use crate::seed::derive_seed;
use crate::tensor::Tensor;

pub const IMAGE_SIDE: usize = 28;
pub const IMAGE_PIXELS: usize = IMAGE_SIDE * IMAGE_SIDE;
pub const NUM_CLASSES: usize = 10;

/// Storage orientation of the image payload in an IDX file.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Orientation {
    Standard,
    /// EMNIST stores every image transposed relative to MNIST.
    Transposed,
}

/// Paths to an image file and its label file.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DatasetFiles {
    pub name: String,
    pub images: PathBuf,
    pub labels: PathBuf,
    pub orientation: Orientation,
}

fn resolve(dir: &Path, stem: &str) -> PathBuf {
    let plain = dir.join(stem);
    let gz = dir.join(format!("{stem}.gz"));
    if !plain.exists() && gz.exists() {
        gz
    } else {
        plain
    }
}

impl DatasetFiles {
    pub fn mnist_train(dir: &Path) -> Self {
        Self {
            name: "mnist-train".into(),
            images: resolve(dir, "train-images-idx3-ubyte"),
            labels: resolve(dir, "train-labels-idx1-ubyte"),
            orientation: Orientation::Standard,
        }
    }

    pub fn mnist_test(dir: &Path) -> Self {
        Self {
            name: "mnist-test".into(),
            images: resolve(dir, "t10k-images-idx3-ubyte"),
            labels: resolve(dir, "t10k-labels-idx1-ubyte"),
            orientation: Orientation::Standard,
        }
    }

    /// The EMNIST "letters" training split.
    pub fn emnist_letters(dir: &Path) -> Self {
        Self {
            name: "emnist-letters-train".into(),
            images: resolve(dir, "emnist-letters-train-images-idx3-ubyte"),
            labels: resolve(dir, "emnist-letters-train-labels-idx1-ubyte"),
            orientation: Orientation::Transposed,
        }
    }

    /// Any MNIST-layout directory (standard orientation, MNIST file names).
    pub fn generic_train(dir: &Path, name: &str) -> Self {
        Self {
            name: name.into(),
            ..Self::mnist_train(dir)
        }
    }

    fn read(path: &Path) -> Result<IdxArray> {
        let bytes = fs::read(path).map_err(|e| Error::MissingData {
            path: path.to_path_buf(),
            hint: format!("{e}; place the IDX file (optionally .gz) there or pass a different data directory"),
        })?;
        Ok(parse_idx(&bytes)?)
    }

    /// Loads every image in the file; pixels scaled to `[0, 1]`.
    pub fn load(&self) -> Result<LabeledDataset> {
        let images = Self::read(&self.images)?;
        let labels = Self::read(&self.labels)?;
        if images.dims.len() != 3 {
            return Err(Error::Shape {
                op: "load",
                msg: format!("{} is not a 3-D image file", self.images.display()),
            });
        }
        let (count, rows, cols) = (images.dims[0], images.dims[1], images.dims[2]);
        if (rows, cols) != (IMAGE_SIDE, IMAGE_SIDE) {
            return Err(Error::Shape {
                op: "load",
                msg: format!("expected 28x28 images, found {rows}x{cols}"),
            });
        }
        if labels.dims != [count] {
            return Err(Error::Dimension {
                op: "load",
                axis: "label",
                expected: count,
                got: labels.dims.iter().product(),
            });
        }
        let mut pixels = Vec::with_capacity(images.data.len());
        match self.orientation {
            Orientation::Standard => pixels.extend(images.data.iter().map(|&b| b as f32 / 255.0)),
            Orientation::Transposed => {
                for img in images.data.chunks_exact(IMAGE_PIXELS) {
                    for y in 0..IMAGE_SIDE {
                        for x in 0..IMAGE_SIDE {
                            pixels.push(img[x * IMAGE_SIDE + y] as f32 / 255.0);
                        }
                    }
                }
            }
        }
        Ok(LabeledDataset {
            name: self.name.clone(),
            pixels,
            labels: labels.data.iter().map(|&l| l as usize).collect(),
        })
    }
}

/// Images `[N,1,28,28]` in `[0,1]` with integer labels.
#[derive(Clone, Debug, PartialEq)]
pub struct LabeledDataset {
    pub name: String,
    pixels: Vec<f32>,
    labels: Vec<usize>,
}

impl LabeledDataset {
    pub fn new(name: impl Into<String>, pixels: Vec<f32>, labels: Vec<usize>) -> Result<Self> {
        if pixels.len() != labels.len() * IMAGE_PIXELS {
            return Err(Error::Dimension {
                op: "dataset",
                axis: "sample",
                expected: labels.len() * IMAGE_PIXELS,
                got: pixels.len(),
            });
        }
        if pixels.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return Err(Error::Shape {
                op: "dataset",
                msg: "pixel values must lie in [0, 1]".into(),
            });
        }
        Ok(Self {
            name: name.into(),
            pixels,
            labels,
        })
    }

    pub fn from_tensor(name: impl Into<String>, images: &Tensor, labels: Vec<usize>) -> Result<Self> {
        Self::new(name, images.data().to_vec(), labels)
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn pixels(&self, i: usize) -> &[f32] {
        &self.pixels[i * IMAGE_PIXELS..(i + 1) * IMAGE_PIXELS]
    }

    /// Gathers the given samples into an image tensor and label list.
    pub fn gather(&self, indices: &[usize]) -> (Tensor, Vec<usize>) {
        let mut data = Vec::with_capacity(indices.len() * IMAGE_PIXELS);
        let mut labels = Vec::with_capacity(indices.len());
        for &i in indices {
            data.extend_from_slice(self.pixels(i));
            labels.push(self.labels[i]);
        }
        let images =
            Tensor::new(vec![indices.len(), 1, IMAGE_SIDE, IMAGE_SIDE], data).expect("gather of at least one sample");
        (images, labels)
    }

    pub fn images(&self, range: Range<usize>) -> Tensor {
        let idx: Vec<usize> = range.collect();
        self.gather(&idx).0
    }

    pub fn slice(&self, range: Range<usize>, name: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            pixels: self.pixels[range.start * IMAGE_PIXELS..range.end * IMAGE_PIXELS].to_vec(),
            labels: self.labels[range].to_vec(),
        }
    }

    /// The first `n` samples (or all of them when fewer exist).
    pub fn truncated(&self, n: usize) -> Self {
        self.slice(0..n.min(self.len()), self.name.clone())
    }

    /// Index of the first sample of each class, in class order, for classes
    /// that occur in the dataset.
    pub fn one_per_class(&self, classes: usize) -> Vec<usize> {
        (0..classes)
            .filter_map(|c| self.labels.iter().position(|&l| l == c))
            .collect()
    }
}

/// Index ranges carving one source file into the three experiment sets.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SplitSpec {
    pub classifier_train: Range<usize>,
    pub attacker_train: Range<usize>,
    pub attacker_val: Range<usize>,
}

impl Default for SplitSpec {
    fn default() -> Self {
        Self {
            classifier_train: 0..40_000,
            attacker_train: 40_000..45_000,
            attacker_val: 45_000..50_000,
        }
    }
}

impl SplitSpec {
    pub fn validate(&self, available: usize) -> Result<()> {
        let named = [
            ("classifier_train", &self.classifier_train),
            ("attacker_train", &self.attacker_train),
            ("attacker_val", &self.attacker_val),
        ];
        for (name, r) in named {
            if r.start > r.end {
                return Err(Error::Split(format!("{name} range {r:?} is reversed")));
            }
            if r.end > available {
                return Err(Error::Split(format!(
                    "{name} range {r:?} exceeds the {available} available samples"
                )));
            }
        }
        for (i, (na, a)) in named.iter().enumerate() {
            for (nb, b) in &named[i + 1..] {
                if !a.is_empty() && !b.is_empty() && a.start < b.end && b.start < a.end {
                    return Err(Error::Split(format!("{na} {a:?} overlaps {nb} {b:?}")));
                }
            }
        }
        Ok(())
    }
}

pub struct Splits {
    pub classifier_train: LabeledDataset,
    pub attacker_train: LabeledDataset,
    pub attacker_val: LabeledDataset,
}

/// Slices an already loaded dataset according to `spec`.
pub fn split(source: &LabeledDataset, spec: &SplitSpec) -> Result<Splits> {
    spec.validate(source.len())?;
    Ok(Splits {
        classifier_train: source.slice(spec.classifier_train.clone(), "classifier-train"),
        attacker_train: source.slice(spec.attacker_train.clone(), "attacker-train"),
        attacker_val: source.slice(spec.attacker_val.clone(), "attacker-val"),
    })
}

pub fn load_split(files: &DatasetFiles, spec: &SplitSpec) -> Result<Splits> {
    split(&files.load()?, spec)
}

/// Shuffled index batches for one epoch.
///
/// The permutation depends only on `(seed, epoch)`. A trailing batch smaller
/// than two samples is dropped, since distance correlation is undefined on it.
pub fn batch_indices(len: usize, batch_size: usize, seed: u64, epoch: u64) -> Result<Vec<Vec<usize>>> {
    if batch_size == 0 {
        return Err(Error::BatchSize(0));
    }
    let mut order: Vec<usize> = (0..len).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, epoch));
    order.shuffle(&mut rng);
    Ok(chunk(order, batch_size))
}

/// In-order batches (evaluation), same short-batch rule as [`batch_indices`].
pub fn sequential_batches(len: usize, batch_size: usize) -> Result<Vec<Vec<usize>>> {
    if batch_size == 0 {
        return Err(Error::BatchSize(0));
    }
    Ok(chunk((0..len).collect(), batch_size))
}

fn chunk(order: Vec<usize>, batch_size: usize) -> Vec<Vec<usize>> {
    let mut out: Vec<Vec<usize>> = order.chunks(batch_size).map(<[usize]>::to_vec).collect();
    if batch_size > 1 && out.last().is_some_and(|b| b.len() < 2) {
        out.pop();
    }
    out
}

/// Materialised `(images, labels)` batches for one epoch.
pub fn batches(
    dataset: &LabeledDataset,
    batch_size: usize,
    seed: u64,
    epoch: u64,
) -> Result<impl Iterator<Item = (Tensor, Vec<usize>)> + '_> {
    let plan = batch_indices(dataset.len(), batch_size, seed, epoch)?;
    Ok(plan.into_iter().map(move |idx| dataset.gather(&idx)))
}
