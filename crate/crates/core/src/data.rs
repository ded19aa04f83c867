//! Image datasets: IDX and CIFAR binary loaders, synthetic blobs,
//! normalization and seeded mini-batching.

use std::fmt;
use std::path::{Path, PathBuf};

use fmce_autograd::Tensor;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::binio::{read_maybe_gzip, write_file, ByteReader};
use crate::error::{FmceError, Result};
use crate::losses::one_hot;

/// u8 images, rank 3 (`N×H×W`).
pub const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
/// u8 images, rank 4 (`N×C×H×W`), used for multi-channel exports.
pub const IDX_IMAGES4_MAGIC: u32 = 0x0000_0804;
pub const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Test => "test",
        })
    }
}

/// Axis-aligned foreground box in pixel coordinates, bounds inclusive.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BBox {
    pub x0: f32,
    pub y0: f32,
    pub x1: f32,
    pub y1: f32,
}

impl BBox {
    pub fn contains(&self, x: f32, y: f32) -> bool {
        x >= self.x0 && x <= self.x1 && y >= self.y0 && y <= self.y1
    }
}

/// Per-channel affine normalization `(x − mean) / std`.
#[derive(Clone, Debug, PartialEq)]
pub struct Normalization {
    pub mean: Vec<f32>,
    pub std: Vec<f32>,
}

impl Normalization {
    /// Channel statistics of `ds` (population standard deviation, accumulated in f64).
    pub fn fit(ds: &ImageDataset) -> Self {
        let [c, h, w] = ds.image_dims();
        let plane = h * w;
        let mut mean = vec![0.0f32; c];
        let mut std = vec![0.0f32; c];
        for ch in 0..c {
            let values = || {
                ds.images
                    .data()
                    .chunks(c * plane)
                    .flat_map(move |img| img[ch * plane..(ch + 1) * plane].iter().map(|&v| v as f64))
            };
            let n = (ds.len() * plane) as f64;
            let m = values().sum::<f64>() / n;
            let var = values().map(|v| (v - m) * (v - m)).sum::<f64>() / n;
            mean[ch] = m as f32;
            std[ch] = var.sqrt().max(1e-6) as f32;
        }
        Normalization { mean, std }
    }

    pub fn identity(channels: usize) -> Self {
        Normalization {
            mean: vec![0.0; channels],
            std: vec![1.0; channels],
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ImageDataset {
    images: Tensor<f32>,
    labels: Vec<usize>,
    classes: usize,
    split: Split,
    boxes: Option<Vec<BBox>>,
    normalization: Option<Normalization>,
}

/// One mini-batch, normalized and ready for the backbone.
#[derive(Clone, Debug)]
pub struct Batch {
    pub indices: Vec<usize>,
    pub images: Tensor<f32>,
    pub labels: Vec<usize>,
    pub targets: Tensor<f32>,
}

impl ImageDataset {
    /// `images` is `N×C×H×W` with values in `[0, 1]`.
    pub fn new(images: Tensor<f32>, labels: Vec<usize>, classes: usize, split: Split) -> Result<Self> {
        if images.dims().len() != 4 {
            return Err(FmceError::Spec(format!("images must be N×C×H×W, got {}", images.shape())));
        }
        if labels.is_empty() {
            return Err(FmceError::EmptyDataset);
        }
        if images.dims()[0] != labels.len() {
            return Err(FmceError::Spec(format!(
                "{} images but {} labels",
                images.dims()[0],
                labels.len()
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= classes) {
            return Err(FmceError::Spec(format!("label {bad} outside {classes} classes")));
        }
        if let Some(v) = images.data().iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(FmceError::Spec(format!("pixel value {v} outside [0, 1]")));
        }
        Ok(ImageDataset {
            images,
            labels,
            classes,
            split,
            boxes: None,
            normalization: None,
        })
    }

    pub fn with_boxes(mut self, boxes: Vec<BBox>) -> Result<Self> {
        if boxes.len() != self.len() {
            return Err(FmceError::Spec(format!("{} boxes for {} images", boxes.len(), self.len())));
        }
        self.boxes = Some(boxes);
        Ok(self)
    }

    /// Overrides the class count (e.g. when a subset lacks the top labels).
    pub fn with_classes(mut self, classes: usize) -> Result<Self> {
        if let Some(&bad) = self.labels.iter().find(|&&l| l >= classes) {
            return Err(FmceError::Spec(format!("label {bad} outside {classes} classes")));
        }
        self.classes = classes;
        Ok(self)
    }

    pub fn with_split(mut self, split: Split) -> Self {
        self.split = split;
        self
    }

    pub fn with_normalization(mut self, norm: Normalization) -> Result<Self> {
        if norm.mean.len() != self.image_dims()[0] || norm.std.len() != norm.mean.len() {
            return Err(FmceError::Spec("normalization channel count differs from images".into()));
        }
        self.normalization = Some(norm);
        Ok(self)
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn split(&self) -> Split {
        self.split
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn images(&self) -> &Tensor<f32> {
        &self.images
    }

    pub fn boxes(&self) -> Option<&[BBox]> {
        self.boxes.as_deref()
    }

    pub fn normalization(&self) -> Option<&Normalization> {
        self.normalization.as_ref()
    }

    /// `[C, H, W]`.
    pub fn image_dims(&self) -> [usize; 3] {
        let d = self.images.dims();
        [d[1], d[2], d[3]]
    }

    /// Raw `[0, 1]` pixels of image `i`.
    pub fn raw_image(&self, i: usize) -> &[f32] {
        let per: usize = self.image_dims().iter().product();
        &self.images.data()[i * per..(i + 1) * per]
    }

    /// Normalized `n×C×H×W` tensor of the given images.
    pub fn gather(&self, indices: &[usize]) -> Result<Tensor<f32>> {
        let [c, h, w] = self.image_dims();
        let plane = h * w;
        let mut out = self.images.gather_outer(indices)?;
        if let Some(norm) = &self.normalization {
            for img in out.data_mut().chunks_mut(c * plane) {
                for (ch, p) in img.chunks_mut(plane).enumerate() {
                    let (m, s) = (norm.mean[ch], norm.std[ch]);
                    p.iter_mut().for_each(|v| *v = (*v - m) / s);
                }
            }
        }
        Ok(out)
    }

    pub fn batch(&self, indices: Vec<usize>) -> Result<Batch> {
        let images = self.gather(&indices)?;
        let labels: Vec<usize> = indices.iter().map(|&i| self.labels[i]).collect();
        let targets = one_hot(&labels, self.classes)?;
        Ok(Batch {
            indices,
            images,
            labels,
            targets,
        })
    }

    /// Mini-batches over one epoch. `shuffle_seed = None` keeps dataset order.
    /// The final partial batch is included.
    pub fn batches(&self, batch_size: usize, shuffle_seed: Option<u64>) -> Result<Batches<'_>> {
        if batch_size == 0 {
            return Err(FmceError::Config("batch size must be at least 1".into()));
        }
        let mut order: Vec<usize> = (0..self.len()).collect();
        if let Some(seed) = shuffle_seed {
            order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        }
        Ok(Batches {
            ds: self,
            order,
            batch_size,
            pos: 0,
        })
    }

    /// Images at `indices`, in that order; normalization and boxes carried over.
    pub fn select(&self, indices: &[usize]) -> Result<Self> {
        if indices.is_empty() {
            return Err(FmceError::EmptyDataset);
        }
        Ok(ImageDataset {
            images: self.images.gather_outer(indices)?,
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            classes: self.classes,
            split: self.split,
            boxes: self.boxes.as_ref().map(|b| indices.iter().map(|&i| b[i]).collect()),
            normalization: self.normalization.clone(),
        })
    }

    /// A seeded random subset of `n` images kept in original order, or the
    /// whole dataset when `n ≥ len`.
    pub fn subset(&self, n: usize, seed: u64) -> Result<Self> {
        if n >= self.len() {
            return Ok(self.clone());
        }
        let mut order: Vec<usize> = (0..self.len()).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let mut keep = order[..n].to_vec();
        keep.sort_unstable();
        self.select(&keep)
    }
}

pub struct Batches<'a> {
    ds: &'a ImageDataset,
    order: Vec<usize>,
    batch_size: usize,
    pos: usize,
}

impl Batches<'_> {
    pub fn order(&self) -> &[usize] {
        &self.order
    }
}

impl Iterator for Batches<'_> {
    type Item = Result<Batch>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.pos >= self.order.len() {
            return None;
        }
        let end = (self.pos + self.batch_size).min(self.order.len());
        let idx = self.order[self.pos..end].to_vec();
        self.pos = end;
        Some(self.ds.batch(idx))
    }

    fn size_hint(&self) -> (usize, Option<usize>) {
        let n = (self.order.len() - self.pos).div_ceil(self.batch_size);
        (n, Some(n))
    }
}

impl ExactSizeIterator for Batches<'_> {}

/// Loads an IDX image/label pair (optionally gzip-compressed).
///
/// Images are u8 of rank 3 (`N×H×W`, one channel) or rank 4 (`N×C×H×W`).
/// The class count is one past the largest label, and at least 10.
pub fn load_idx(images_path: &Path, labels_path: &Path, split: Split) -> Result<ImageDataset> {
    let img_bytes = read_maybe_gzip(images_path)?;
    let lbl_bytes = read_maybe_gzip(labels_path)?;

    let mut r = ByteReader::new(images_path.display().to_string(), &img_bytes);
    let magic = r.u32_be()?;
    let rank = match magic {
        IDX_IMAGES_MAGIC => 3,
        IDX_IMAGES4_MAGIC => 4,
        _ => {
            return Err(r.error(format!(
                "bad IDX image magic {magic:#010x}, expected {IDX_IMAGES_MAGIC:#010x}"
            )))
        }
    };
    let n = r.u32_be()? as usize;
    let c = if rank == 4 { r.u32_be()? as usize } else { 1 };
    let (h, w) = (r.u32_be()? as usize, r.u32_be()? as usize);
    if n == 0 {
        return Err(FmceError::EmptyDataset);
    }
    if c == 0 || h == 0 || w == 0 {
        return Err(r.error("zero image extent"));
    }
    let pixels = r.take(n * c * h * w)?;
    r.expect_end()?;

    let mut lr = ByteReader::new(labels_path.display().to_string(), &lbl_bytes);
    let magic = lr.u32_be()?;
    if magic != IDX_LABELS_MAGIC {
        return Err(lr.error(format!("bad IDX label magic {magic:#010x}, expected {IDX_LABELS_MAGIC:#010x}")));
    }
    let count = lr.u32_be()? as usize;
    if count != n {
        return Err(lr.error(format!("{count} labels for {n} images")));
    }
    let labels: Vec<usize> = lr.take(n)?.iter().map(|&b| b as usize).collect();
    lr.expect_end()?;

    let classes = labels.iter().max().map_or(0, |&m| m + 1).max(10);
    let images = Tensor::from_vec([n, c, h, w], pixels.iter().map(|&p| p as f32 / 255.0).collect())?;
    ImageDataset::new(images, labels, classes, split)
}

fn to_u8(v: f32) -> u8 {
    (v * 255.0).round().clamp(0.0, 255.0) as u8
}

/// Writes a dataset as an IDX pair, pixels quantized to u8: rank 3 for one
/// channel, rank 4 otherwise. Paths ending in `.gz` are gzip-compressed.
pub fn write_idx(ds: &ImageDataset, images_path: &Path, labels_path: &Path) -> Result<()> {
    let [c, h, w] = ds.image_dims();
    if ds.classes > 256 {
        return Err(FmceError::Config(format!("IDX labels are bytes, dataset has {} classes", ds.classes)));
    }
    let n = ds.len() as u32;
    let header: Vec<u32> = if c == 1 {
        vec![IDX_IMAGES_MAGIC, n, h as u32, w as u32]
    } else {
        vec![IDX_IMAGES4_MAGIC, n, c as u32, h as u32, w as u32]
    };
    let mut img = Vec::with_capacity(20 + ds.images.numel());
    for v in header {
        img.extend_from_slice(&v.to_be_bytes());
    }
    img.extend(ds.images.data().iter().map(|&v| to_u8(v)));
    let mut lbl = Vec::with_capacity(8 + ds.len());
    for v in [IDX_LABELS_MAGIC, n] {
        lbl.extend_from_slice(&v.to_be_bytes());
    }
    lbl.extend(ds.labels.iter().map(|&l| l as u8));
    write_file(images_path, &img)?;
    write_file(labels_path, &lbl)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CifarLabels {
    /// CIFAR-10: one label byte per record.
    Ten,
    /// CIFAR-100: coarse then fine label byte; the fine label is used.
    Hundred,
}

impl CifarLabels {
    fn label_bytes(self) -> usize {
        match self {
            CifarLabels::Ten => 1,
            CifarLabels::Hundred => 2,
        }
    }

    fn classes(self) -> usize {
        match self {
            CifarLabels::Ten => 10,
            CifarLabels::Hundred => 100,
        }
    }
}

/// Loads one or more CIFAR binary batch files (3×32×32, planar RGB).
pub fn load_cifar_binary(paths: &[PathBuf], mode: CifarLabels, split: Split) -> Result<ImageDataset> {
    const PIXELS: usize = 3 * 32 * 32;
    let record = mode.label_bytes() + PIXELS;
    let mut labels = Vec::new();
    let mut pixels = Vec::new();
    for path in paths {
        let bytes = read_maybe_gzip(path)?;
        if bytes.len() % record != 0 {
            return Err(FmceError::format(
                path.display(),
                format!("{} bytes is not a multiple of the {record}-byte record", bytes.len()),
            ));
        }
        for rec in bytes.chunks_exact(record) {
            let label = rec[mode.label_bytes() - 1] as usize;
            if label >= mode.classes() {
                return Err(FmceError::format(path.display(), format!("label {label} out of range")));
            }
            labels.push(label);
            pixels.extend(rec[mode.label_bytes()..].iter().map(|&p| p as f32 / 255.0));
        }
    }
    if labels.is_empty() {
        return Err(FmceError::EmptyDataset);
    }
    let images = Tensor::from_vec([labels.len(), 3, 32, 32], pixels)?;
    ImageDataset::new(images, labels, mode.classes(), split)
}

/// Class-conditional Gaussian blobs on a noisy background.
///
/// Class `c` places one blob near angle `2πc/classes` on a circle around the
/// image centre; image `i` has label `i mod classes`. The per-image bounding
/// box spans two blob widths around the blob centre.
pub fn synthetic_blobs(classes: usize, per_class: usize, size: usize, seed: u64) -> Result<ImageDataset> {
    if classes < 2 {
        return Err(FmceError::Config(format!("synthetic blobs need at least 2 classes, got {classes}")));
    }
    if per_class == 0 {
        return Err(FmceError::EmptyDataset);
    }
    if size < 8 {
        return Err(FmceError::Config(format!("synthetic images must be at least 8 px, got {size}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let s = size as f32;
    let sigma = s / 10.0;
    let radius = 0.28 * s;
    let mid = (s - 1.0) / 2.0;
    let n = classes * per_class;
    let mut pixels = Vec::with_capacity(n * size * size);
    let mut labels = Vec::with_capacity(n);
    let mut boxes = Vec::with_capacity(n);
    for i in 0..n {
        let label = i % classes;
        let angle = std::f32::consts::TAU * label as f32 / classes as f32;
        let cx = mid + radius * angle.cos() + rng.random_range(-1.5..=1.5);
        let cy = mid + radius * angle.sin() + rng.random_range(-1.5..=1.5);
        let amp = rng.random_range(0.6..=1.0f32);
        for y in 0..size {
            for x in 0..size {
                let d2 = (x as f32 - cx).powi(2) + (y as f32 - cy).powi(2);
                let noise = rng.random_range(0.0..0.15f32);
                pixels.push((noise + amp * (-d2 / (2.0 * sigma * sigma)).exp()).clamp(0.0, 1.0));
            }
        }
        labels.push(label);
        boxes.push(BBox {
            x0: cx - 2.0 * sigma,
            y0: cy - 2.0 * sigma,
            x1: cx + 2.0 * sigma,
            y1: cy + 2.0 * sigma,
        });
    }
    let images = Tensor::from_vec([n, 1, size, size], pixels)?;
    ImageDataset::new(images, labels, classes, Split::Train)?.with_boxes(boxes)
}
