//! Datasets: MNIST IDX files, a synthetic relevant/noise feature task, and
//! seeded mini-batch iteration.

use std::fs;
use std::io::Write;
use std::path::Path;

use ndarray::{Array2, Axis};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{check_dim, Error, Result};
use crate::net::Batch;
use crate::real::Real;

pub const IDX_IMAGE_MAGIC: u32 = 2051;
pub const IDX_LABEL_MAGIC: u32 = 2049;

/// Labeled samples with features in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    inputs: Array2<f64>,
    labels: Vec<usize>,
    classes: usize,
}

impl Dataset {
    pub fn new(inputs: Array2<f64>, labels: Vec<usize>, classes: usize) -> Result<Self> {
        check_dim("dataset labels", inputs.nrows(), labels.len())?;
        if let Some(&l) = labels.iter().find(|&&l| l >= classes) {
            return Err(Error::invalid(format!(
                "label {l} out of range for {classes} classes"
            )));
        }
        if inputs.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("dataset feature"));
        }
        Ok(Self {
            inputs,
            labels,
            classes,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn feature_dim(&self) -> usize {
        self.inputs.ncols()
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn inputs(&self) -> &Array2<f64> {
        &self.inputs
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    /// The first `n` samples (or all, if fewer).
    pub fn take(&self, n: usize) -> Self {
        let n = n.min(self.len());
        Self {
            inputs: self.inputs.slice(ndarray::s![..n, ..]).to_owned(),
            labels: self.labels[..n].to_vec(),
            classes: self.classes,
        }
    }

    /// Gathers the given rows into a batch of element type `F`.
    pub fn batch<F: Real>(&self, indices: &[usize]) -> Batch<F> {
        let inputs = self.inputs.select(Axis(0), indices).mapv(F::from_f64_lossy);
        let labels = indices.iter().map(|&i| self.labels[i]).collect();
        Batch { inputs, labels }
    }

    /// The whole dataset as one batch.
    pub fn as_batch<F: Real>(&self) -> Batch<F> {
        Batch {
            inputs: self.inputs.mapv(F::from_f64_lossy),
            labels: self.labels.clone(),
        }
    }
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

fn be_u32(bytes: &[u8], offset: usize, kind: &'static str) -> Result<u32> {
    bytes
        .get(offset..offset + 4)
        .map(|b| u32::from_be_bytes(b.try_into().unwrap()))
        .ok_or_else(|| Error::format(kind, "truncated header"))
}

/// Parses an IDX3 image file into `count x (rows * cols)` bytes.
pub fn parse_idx_images(bytes: &[u8]) -> Result<(usize, usize, Vec<u8>)> {
    const KIND: &str = "IDX image";
    let magic = be_u32(bytes, 0, KIND)?;
    if magic != IDX_IMAGE_MAGIC {
        return Err(Error::format(
            KIND,
            format!("magic {magic}, expected {IDX_IMAGE_MAGIC}"),
        ));
    }
    let count = be_u32(bytes, 4, KIND)? as usize;
    let rows = be_u32(bytes, 8, KIND)? as usize;
    let cols = be_u32(bytes, 12, KIND)? as usize;
    let features = rows * cols;
    let body = &bytes[16..];
    if body.len() != count * features {
        return Err(Error::format(
            KIND,
            format!(
                "header declares {count} images of {rows}x{cols}, body has {} bytes",
                body.len()
            ),
        ));
    }
    Ok((count, features, body.to_vec()))
}

/// Parses an IDX1 label file.
pub fn parse_idx_labels(bytes: &[u8]) -> Result<Vec<u8>> {
    const KIND: &str = "IDX label";
    let magic = be_u32(bytes, 0, KIND)?;
    if magic != IDX_LABEL_MAGIC {
        return Err(Error::format(
            KIND,
            format!("magic {magic}, expected {IDX_LABEL_MAGIC}"),
        ));
    }
    let count = be_u32(bytes, 4, KIND)? as usize;
    let body = &bytes[8..];
    if body.len() != count {
        return Err(Error::format(
            KIND,
            format!(
                "header declares {count} labels, body has {} bytes",
                body.len()
            ),
        ));
    }
    Ok(body.to_vec())
}

/// Loads an MNIST-style image/label pair. Pixels are scaled to `[0, 1]` by `/255`;
/// the class count is 10.
pub fn load_mnist_idx(images: impl AsRef<Path>, labels: impl AsRef<Path>) -> Result<Dataset> {
    let (count, features, pixels) = parse_idx_images(&read_file(images.as_ref())?)?;
    let raw_labels = parse_idx_labels(&read_file(labels.as_ref())?)?;
    if raw_labels.len() != count {
        return Err(Error::format(
            "IDX",
            format!("{count} images but {} labels", raw_labels.len()),
        ));
    }
    let inputs = Array2::from_shape_vec((count, features), pixels)
        .expect("length checked")
        .mapv(|p| p as f64 / 255.0);
    let labels = raw_labels.into_iter().map(usize::from).collect();
    Dataset::new(inputs, labels, 10)
}

pub fn encode_idx_images(rows: usize, cols: usize, pixels: &[u8]) -> Result<Vec<u8>> {
    let features = rows * cols;
    if features == 0 || !pixels.len().is_multiple_of(features) {
        return Err(Error::invalid(
            "pixel buffer is not a whole number of images",
        ));
    }
    let mut out = Vec::with_capacity(16 + pixels.len());
    for v in [
        IDX_IMAGE_MAGIC,
        (pixels.len() / features) as u32,
        rows as u32,
        cols as u32,
    ] {
        out.extend_from_slice(&v.to_be_bytes());
    }
    out.extend_from_slice(pixels);
    Ok(out)
}

pub fn encode_idx_labels(labels: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + labels.len());
    out.extend_from_slice(&IDX_LABEL_MAGIC.to_be_bytes());
    out.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    out.extend_from_slice(labels);
    out
}

/// Writes an image/label IDX pair.
pub fn write_idx_pair(
    images: impl AsRef<Path>,
    labels: impl AsRef<Path>,
    rows: usize,
    cols: usize,
    pixels: &[u8],
    label_bytes: &[u8],
) -> Result<()> {
    let write = |path: &Path, bytes: &[u8]| -> Result<()> {
        let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(bytes).map_err(|e| Error::io(path, e))
    };
    write(images.as_ref(), &encode_idx_images(rows, cols, pixels)?)?;
    write(labels.as_ref(), &encode_idx_labels(label_bytes))
}

/// Default separation between the class-defining statistic and its threshold.
pub const SYNTHETIC_MARGIN: f64 = 0.05;

/// Binary task whose label depends only on the first `d_relevant` features.
///
/// Features are uniform on `[0, 1]`. The label is `1` iff the mean of the
/// relevant features exceeds `0.5`; samples whose mean falls within
/// [`SYNTHETIC_MARGIN`] of `0.5` are redrawn, so the classes are separable and
/// the Bayes error is zero. The remaining `d_noise` features are independent noise.
pub fn synthetic_subset_task<R: Rng + ?Sized>(
    d_relevant: usize,
    d_noise: usize,
    n: usize,
    rng: &mut R,
) -> Result<Dataset> {
    synthetic_subset_task_with_margin(d_relevant, d_noise, n, SYNTHETIC_MARGIN, rng)
}

pub fn synthetic_subset_task_with_margin<R: Rng + ?Sized>(
    d_relevant: usize,
    d_noise: usize,
    n: usize,
    margin: f64,
    rng: &mut R,
) -> Result<Dataset> {
    if d_relevant == 0 || n == 0 {
        return Err(Error::invalid(
            "synthetic task needs relevant features and samples",
        ));
    }
    if !(0.0..0.5).contains(&margin) {
        return Err(Error::invalid(format!(
            "margin must be in [0, 0.5), got {margin}"
        )));
    }
    let dim = d_relevant + d_noise;
    let mut inputs = Array2::zeros((n, dim));
    let mut labels = Vec::with_capacity(n);
    for mut row in inputs.rows_mut() {
        let mean = loop {
            for x in row.iter_mut().take(d_relevant) {
                *x = rng.random::<f64>();
            }
            let mean = row.iter().take(d_relevant).sum::<f64>() / d_relevant as f64;
            if (mean - 0.5).abs() >= margin {
                break mean;
            }
        };
        for x in row.iter_mut().skip(d_relevant) {
            *x = rng.random::<f64>();
        }
        labels.push(usize::from(mean > 0.5));
    }
    Dataset::new(inputs, labels, 2)
}

/// The labeling rule of [`synthetic_subset_task`], applied to one feature row.
pub fn synthetic_label(features: &[f64], d_relevant: usize) -> usize {
    let mean = features[..d_relevant].iter().sum::<f64>() / d_relevant as f64;
    usize::from(mean > 0.5)
}

/// Shuffled indices of one epoch, split into batches of `batch_size` (the
/// last batch may be smaller).
#[derive(Debug, Clone)]
pub struct MinibatchIter<'a, F> {
    dataset: &'a Dataset,
    order: Vec<usize>,
    batch_size: usize,
    pos: usize,
    _elem: std::marker::PhantomData<F>,
}

impl<F: Real> Iterator for MinibatchIter<'_, F> {
    type Item = Batch<F>;

    fn next(&mut self) -> Option<Batch<F>> {
        if self.pos >= self.order.len() {
            return None;
        }
        let end = (self.pos + self.batch_size).min(self.order.len());
        let batch = self.dataset.batch(&self.order[self.pos..end]);
        self.pos = end;
        Some(batch)
    }

    fn size_hint(&self) -> (usize, Option<usize>) {
        let left = (self.order.len() - self.pos).div_ceil(self.batch_size);
        (left, Some(left))
    }
}

impl<F: Real> ExactSizeIterator for MinibatchIter<'_, F> {}

impl<F> MinibatchIter<'_, F> {
    /// The epoch's sample order.
    pub fn order(&self) -> &[usize] {
        &self.order
    }
}

/// One seeded shuffled pass over `dataset`.
pub fn minibatch_iterator<F: Real>(
    dataset: &Dataset,
    batch_size: usize,
    epoch_seed: u64,
) -> Result<MinibatchIter<'_, F>> {
    if batch_size == 0 {
        return Err(Error::invalid("batch size must be >= 1"));
    }
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(epoch_seed));
    Ok(MinibatchIter {
        dataset,
        order,
        batch_size,
        pos: 0,
        _elem: std::marker::PhantomData,
    })
}

/// `⌈n / batch_size⌉`.
pub fn iterations_per_epoch(n: usize, batch_size: usize) -> usize {
    n.div_ceil(batch_size)
}
