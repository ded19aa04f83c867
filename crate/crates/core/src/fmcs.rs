//! FMCS pipeline: checkpoint selection along the loss curve, feature-map
//! harvesting, FMCE-Net training and attaching the frozen scorer.

use std::path::Path;

use fmce_autograd::{Tape, Tensor};
use rand::seq::SliceRandom;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::binio::{checked_u32, put_f32s, put_u32, read_file, write_file, ByteReader};
use crate::data::ImageDataset;
use crate::error::{FmceError, Result};
use crate::losses::{loss_fmce_train, one_hot};
use crate::model::{build_backbone, build_fmce_net, fmce_forward, infer_features, infer_fmcs, BackboneSpec, FmceNetSpec};
use crate::optim::{Adam, AdamConfig, CosineSchedule};
use crate::params::{ParamSet, Partition};

pub const SELECTION_METHOD: &str = "loss-decrease-quantiles";

/// `K` epochs (1-based, strictly increasing, last = final epoch) at which
/// backbone snapshots feed the FMCS dataset.
#[derive(Clone, Debug, PartialEq)]
pub struct CheckpointSchedule {
    pub levels: usize,
    pub epochs: Vec<usize>,
    pub method: &'static str,
    pub curve: Vec<f64>,
}

/// Picks the first epoch at which the cumulative loss decrease
/// `L[1] − min_{j≤e} L[j]` reaches `j/(K−1)` of the total decrease, for
/// `j = 0..K−1`. Collisions advance to the next free epoch, and the last
/// checkpoint is always the final epoch.
pub fn select_checkpoints(curve: &[f64], levels: usize) -> Result<CheckpointSchedule> {
    if levels < 2 {
        return Err(FmceError::Config(format!("need K ≥ 2 checkpoints, got {levels}")));
    }
    if curve.len() < levels {
        return Err(FmceError::Config(format!(
            "K = {levels} checkpoints exceed the {} recorded epochs",
            curve.len()
        )));
    }
    if let Some(v) = curve.iter().find(|v| !v.is_finite()) {
        return Err(FmceError::Config(format!("loss curve contains {v}")));
    }
    let e = curve.len();
    let mut running_min = f64::INFINITY;
    let decrease: Vec<f64> = curve
        .iter()
        .map(|&l| {
            running_min = running_min.min(l);
            curve[0] - running_min
        })
        .collect();
    let total = decrease[e - 1];
    let tol = 1e-12 * total.abs().max(1.0);

    let mut epochs = Vec::with_capacity(levels);
    for j in 0..levels {
        let latest = e - (levels - 1 - j);
        let pick = if j == levels - 1 {
            e
        } else {
            let target = j as f64 / (levels - 1) as f64 * total;
            let first = decrease.iter().position(|&d| d >= target - tol).map_or(e, |i| i + 1);
            let floor = epochs.last().map_or(1, |&p: &usize| p + 1);
            first.max(floor).min(latest)
        };
        epochs.push(pick);
    }
    Ok(CheckpointSchedule {
        levels,
        epochs,
        method: SELECTION_METHOD,
        curve: curve.to_vec(),
    })
}

/// Feature maps labeled by checkpoint level, stored in `(k, image)` order.
#[derive(Clone, Debug, PartialEq)]
pub struct FmcsDataset {
    levels: usize,
    images: usize,
    feature: [usize; 3],
    values: Vec<f32>,
}

impl FmcsDataset {
    /// `values` holds `levels × images` feature maps of shape `feature`,
    /// level-major.
    pub fn new(levels: usize, images: usize, feature: [usize; 3], values: Vec<f32>) -> Result<Self> {
        if levels == 0 || images == 0 {
            return Err(FmceError::EmptyDataset);
        }
        let per: usize = feature.iter().product();
        if per == 0 || values.len() != levels * images * per {
            return Err(FmceError::Spec(format!(
                "{} values for {levels}×{images} maps of {feature:?}",
                values.len()
            )));
        }
        Ok(FmcsDataset {
            levels,
            images,
            feature,
            values,
        })
    }

    pub fn levels(&self) -> usize {
        self.levels
    }

    pub fn images(&self) -> usize {
        self.images
    }

    pub fn feature_shape(&self) -> [usize; 3] {
        self.feature
    }

    pub fn len(&self) -> usize {
        self.levels * self.images
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn per_map(&self) -> usize {
        self.feature.iter().product()
    }

    /// `(level k ∈ 1..=K, image index, feature map)` of record `r`.
    pub fn record(&self, r: usize) -> (usize, usize, &[f32]) {
        let per = self.per_map();
        (r / self.images + 1, r % self.images, &self.values[r * per..(r + 1) * per])
    }

    pub fn record_index(&self, level: usize, image: usize) -> usize {
        (level - 1) * self.images + image
    }

    /// Record count per level, index 0 = level 1.
    pub fn label_histogram(&self) -> Vec<usize> {
        let mut h = vec![0; self.levels];
        for r in 0..self.len() {
            h[self.record(r).0 - 1] += 1;
        }
        h
    }

    /// `n×C×H×W` feature maps and 0-based level labels of the given records.
    pub fn gather(&self, records: &[usize]) -> Result<(Tensor<f32>, Vec<usize>)> {
        let per = self.per_map();
        let mut data = Vec::with_capacity(records.len() * per);
        let mut labels = Vec::with_capacity(records.len());
        for &r in records {
            let (k, _, map) = self.record(r);
            data.extend_from_slice(map);
            labels.push(k - 1);
        }
        let [c, h, w] = self.feature;
        Ok((Tensor::from_vec([records.len(), c, h, w], data)?, labels))
    }
}

pub const FMCS_MAGIC: &[u8; 4] = b"FMCS";
pub const FMCS_VERSION: u32 = 1;

/// Little-endian container:
/// `"FMCS"`, version u32, K u32, N_img u32, rank u32, extents u32[rank],
/// then per record in `(k, image)` order: level u32 (1-based), image index
/// u32, f32 values.
pub fn encode_fmcs(ds: &FmcsDataset) -> Result<Vec<u8>> {
    let per = ds.per_map();
    let mut out = Vec::with_capacity(24 + ds.len() * (8 + 4 * per));
    out.extend_from_slice(FMCS_MAGIC);
    put_u32(&mut out, FMCS_VERSION);
    put_u32(&mut out, checked_u32(ds.levels, "K")?);
    put_u32(&mut out, checked_u32(ds.images, "N_img")?);
    put_u32(&mut out, 3);
    for d in ds.feature {
        put_u32(&mut out, checked_u32(d, "extent")?);
    }
    for r in 0..ds.len() {
        let (k, i, map) = ds.record(r);
        put_u32(&mut out, k as u32);
        put_u32(&mut out, i as u32);
        put_f32s(&mut out, map);
    }
    Ok(out)
}

pub fn decode_fmcs(origin: &str, bytes: &[u8]) -> Result<FmcsDataset> {
    let mut r = ByteReader::new(origin, bytes);
    if r.take(4)? != FMCS_MAGIC {
        return Err(r.error("bad magic, expected \"FMCS\""));
    }
    let version = r.u32_le()?;
    if version != FMCS_VERSION {
        return Err(r.error(format!("unsupported version {version}")));
    }
    let levels = r.u32_le()? as usize;
    let images = r.u32_le()? as usize;
    let rank = r.u32_le()?;
    if rank != 3 {
        return Err(r.error(format!("feature maps must have rank 3, header says {rank}")));
    }
    let feature = [r.u32_le()? as usize, r.u32_le()? as usize, r.u32_le()? as usize];
    let per: usize = feature.iter().product();
    if levels == 0 || images == 0 || per == 0 {
        return Err(r.error("zero K, N_img or feature extent"));
    }
    let expected = levels
        .checked_mul(images)
        .and_then(|n| n.checked_mul(8 + 4 * per))
        .ok_or_else(|| r.error("size overflow"))?;
    if r.remaining() != expected {
        return Err(r.error(format!("{} record bytes, expected {expected}", r.remaining())));
    }
    let mut values = Vec::with_capacity(levels * images * per);
    for rec in 0..levels * images {
        let k = r.u32_le()? as usize;
        let i = r.u32_le()? as usize;
        if k != rec / images + 1 || i != rec % images {
            return Err(r.error(format!("record {rec} is ({k}, {i}), out of (k, image) order")));
        }
        values.extend(r.f32_vec(per)?);
    }
    FmcsDataset::new(levels, images, feature, values)
}

pub fn save_fmcs(path: &Path, ds: &FmcsDataset) -> Result<()> {
    write_file(path, &encode_fmcs(ds)?)
}

pub fn load_fmcs(path: &Path) -> Result<FmcsDataset> {
    decode_fmcs(&path.display().to_string(), &read_file(path)?)
}

/// Checks that `params` has exactly the backbone/classifier layout of `spec`.
pub fn check_backbone(params: &ParamSet<f32>, spec: &BackboneSpec) -> Result<()> {
    let reference = build_backbone::<f32>(spec, 0)?;
    for (name, p) in reference.iter() {
        match params.get(name) {
            Some(q) if q.tensor.dims() == p.tensor.dims() && q.partition == p.partition => {}
            Some(q) => {
                return Err(FmceError::Spec(format!(
                    "checkpoint parameter `{name}` has shape {} ({}), backbone expects {} ({})",
                    q.tensor.shape(),
                    q.partition,
                    p.tensor.shape(),
                    p.partition
                )))
            }
            None => return Err(FmceError::Spec(format!("checkpoint lacks parameter `{name}`"))),
        }
    }
    Ok(())
}

/// Forwards every image through each checkpoint once; level `k` holds the
/// feature maps of checkpoint `k`. No parameter is modified.
///
/// Checkpoints are split over up to `threads` workers; the result does not
/// depend on the thread count.
pub fn harvest_feature_maps(
    checkpoints: &[ParamSet<f32>],
    spec: &BackboneSpec,
    ds: &ImageDataset,
    batch_size: usize,
    threads: usize,
) -> Result<FmcsDataset> {
    if checkpoints.is_empty() {
        return Err(FmceError::Config("no checkpoints to harvest".into()));
    }
    for ckpt in checkpoints {
        check_backbone(ckpt, spec)?;
    }
    let feature = spec.feature_shape()?;
    let per: usize = feature.iter().product();
    let harvest_one = |params: &ParamSet<f32>| -> Result<Vec<f32>> {
        let mut out = Vec::with_capacity(ds.len() * per);
        for batch in ds.batches(batch_size, None)? {
            out.extend_from_slice(infer_features(params, spec, &batch?.images)?.data());
        }
        Ok(out)
    };
    let threads = threads.clamp(1, checkpoints.len());
    let per_level: Vec<Result<Vec<f32>>> = if threads == 1 {
        checkpoints.iter().map(harvest_one).collect()
    } else {
        let chunk = checkpoints.len().div_ceil(threads);
        std::thread::scope(|s| {
            let handles: Vec<_> = checkpoints
                .chunks(chunk)
                .map(|group| s.spawn(|| group.iter().map(harvest_one).collect::<Vec<_>>()))
                .collect();
            handles
                .into_iter()
                .flat_map(|h| h.join().expect("harvest worker panicked"))
                .collect()
        })
    };
    let mut values = Vec::with_capacity(checkpoints.len() * ds.len() * per);
    for level in per_level {
        values.extend(level?);
    }
    FmcsDataset::new(checkpoints.len(), ds.len(), feature, values)
}

#[derive(Clone, Debug, PartialEq)]
pub struct FmceTrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr_max: f64,
    pub lr_min: f64,
    pub seed: u64,
    /// Fraction of images (not records) held out for validation.
    pub val_fraction: f64,
    pub adam: AdamConfig,
}

impl Default for FmceTrainConfig {
    fn default() -> Self {
        FmceTrainConfig {
            epochs: 10,
            batch_size: 64,
            lr_max: 1e-3,
            lr_min: 1e-5,
            seed: 0,
            val_fraction: 0.1,
            adam: AdamConfig::default(),
        }
    }
}

#[derive(Clone, Debug)]
pub struct FmceTrainOutcome {
    /// Trained and frozen scorer θ*.
    pub theta: ParamSet<f32>,
    /// Held-out FMCS accuracy of the initial, untrained scorer (fraction).
    pub initial_val_acc: f64,
    /// Held-out FMCS accuracy after training (fraction).
    pub val_acc: f64,
    /// Mean training loss per epoch.
    pub losses: Vec<f64>,
    /// Spearman correlation between true level and predicted mean level on
    /// the held-out records.
    pub spearman: f64,
    pub val_images: Vec<usize>,
}

/// Image ids held out for validation: a seeded `val_fraction` of all images
/// (at least one, and at least one left for training).
pub fn validation_images(n_img: usize, val_fraction: f64, seed: u64) -> Result<Vec<usize>> {
    if !(0.0..1.0).contains(&val_fraction) || val_fraction <= 0.0 {
        return Err(FmceError::Config(format!("validation fraction {val_fraction} outside (0, 1)")));
    }
    if n_img < 2 {
        return Err(FmceError::Config("need at least 2 images to split".into()));
    }
    let n_val = ((n_img as f64 * val_fraction).round() as usize).clamp(1, n_img - 1);
    let mut ids: Vec<usize> = (0..n_img).collect();
    ids.shuffle(&mut ChaCha8Rng::seed_from_u64(seed ^ 0x7661_6c5f_7370_6c74));
    let mut val = ids[..n_val].to_vec();
    val.sort_unstable();
    Ok(val)
}

fn scored(theta: &ParamSet<f32>, spec: &FmceNetSpec, ds: &FmcsDataset, records: &[usize]) -> Result<(f64, Vec<f64>)> {
    let mut correct = 0usize;
    let mut expected = Vec::with_capacity(records.len());
    for chunk in records.chunks(512) {
        let (x, labels) = ds.gather(chunk)?;
        let q = infer_fmcs(theta, spec, &x)?;
        for (row, &label) in q.data().chunks(spec.levels).zip(&labels) {
            let max = row.iter().fold(f32::NEG_INFINITY, |m, &v| m.max(v));
            let w: Vec<f64> = row.iter().map(|&v| ((v - max) as f64).exp()).collect();
            let z: f64 = w.iter().sum();
            expected.push(w.iter().enumerate().map(|(k, p)| (k + 1) as f64 * p / z).sum());
            let arg = row
                .iter()
                .enumerate()
                .fold((0, f32::NEG_INFINITY), |(bi, bv), (i, &v)| if v > bv { (i, v) } else { (bi, bv) })
                .0;
            correct += usize::from(arg == label);
        }
    }
    Ok((correct as f64 / records.len() as f64, expected))
}

/// Average ranks (ties share the mean rank), 1-based.
fn ranks(v: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut r = vec![0.0; v.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            r[k] = avg;
        }
        i = j + 1;
    }
    r
}

/// Spearman rank correlation; 0 when either side is constant.
pub fn spearman(a: &[f64], b: &[f64]) -> f64 {
    let (ra, rb) = (ranks(a), ranks(b));
    let n = a.len() as f64;
    let (ma, mb) = (ra.iter().sum::<f64>() / n, rb.iter().sum::<f64>() / n);
    let cov: f64 = ra.iter().zip(&rb).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let va: f64 = ra.iter().map(|x| (x - ma).powi(2)).sum();
    let vb: f64 = rb.iter().map(|y| (y - mb).powi(2)).sum();
    if va == 0.0 || vb == 0.0 {
        0.0
    } else {
        cov / (va * vb).sqrt()
    }
}

/// Learns θ on the FMCS dataset with Adam and cross-entropy over levels,
/// validating on held-out images. The returned θ* is frozen.
pub fn train_fmce_net(ds: &FmcsDataset, spec: &FmceNetSpec, cfg: &FmceTrainConfig) -> Result<FmceTrainOutcome> {
    if ds.levels() < 2 {
        return Err(FmceError::Config("FMCS dataset has a single level; nothing to learn".into()));
    }
    if spec.levels != ds.levels() {
        return Err(FmceError::Spec(format!(
            "FMCE-Net has K = {}, FMCS dataset has {} levels",
            spec.levels,
            ds.levels()
        )));
    }
    spec.check_input(ds.feature_shape())?;
    if cfg.batch_size == 0 {
        return Err(FmceError::Config("batch size must be at least 1".into()));
    }
    let schedule = CosineSchedule::new(cfg.lr_max, cfg.lr_min, cfg.epochs)?;

    let val_images = validation_images(ds.images(), cfg.val_fraction, cfg.seed)?;
    let mut is_val = vec![false; ds.images()];
    val_images.iter().for_each(|&i| is_val[i] = true);
    let (mut train_rec, mut val_rec) = (Vec::new(), Vec::new());
    for r in 0..ds.len() {
        if is_val[ds.record(r).1] {
            val_rec.push(r);
        } else {
            train_rec.push(r);
        }
    }

    let mut theta = build_fmce_net::<f32>(spec, cfg.seed)?;
    let (initial_val_acc, _) = scored(&theta, spec, ds, &val_rec)?;
    let mut adam = Adam::<f32>::new(cfg.adam);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x666d_6365_5f74_726e);
    let mut losses = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let lr = schedule.lr_at(epoch);
        let mut order = train_rec.clone();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(rng.next_u64()));
        let mut total = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            let (x, labels) = ds.gather(chunk)?;
            let target = one_hot::<f32>(&labels, spec.levels)?;
            let mut tape = Tape::<f32>::new();
            let b = theta.bind(&mut tape);
            let x = tape.constant(x);
            let q = fmce_forward(&mut tape, spec, &b, x)?;
            let loss = loss_fmce_train(&mut tape, q, &target)?;
            let value = tape.value(loss).item() as f64;
            if !value.is_finite() {
                return Err(FmceError::Divergence {
                    epoch: epoch + 1,
                    step: 0,
                    loss: value,
                });
            }
            total += value * chunk.len() as f64;
            tape.backward(loss)?;
            theta.zero_grad();
            theta.accumulate_grads(&tape, &b)?;
            adam.step(&mut theta, lr)?;
        }
        let mean = total / train_rec.len() as f64;
        log::info!("fmce epoch {:>3}  lr {:.2e}  loss {:.4}", epoch + 1, lr, mean);
        losses.push(mean);
    }

    let (val_acc, expected) = scored(&theta, spec, ds, &val_rec)?;
    let truth: Vec<f64> = val_rec.iter().map(|&r| ds.record(r).0 as f64).collect();
    let rho = spearman(&truth, &expected);
    theta.freeze(Partition::Fmce)?;
    Ok(FmceTrainOutcome {
        theta,
        initial_val_acc,
        val_acc,
        losses,
        spearman: rho,
        val_images,
    })
}

/// Backbone and classifier plus the frozen scorer, ready for joint training.
pub fn attach_oracle(
    backbone: ParamSet<f32>,
    backbone_spec: &BackboneSpec,
    theta: ParamSet<f32>,
    fmce_spec: &FmceNetSpec,
) -> Result<ParamSet<f32>> {
    check_backbone(&backbone, backbone_spec)?;
    fmce_spec.check_input(backbone_spec.feature_shape()?)?;
    if !theta.is_frozen(Partition::Fmce) {
        return Err(FmceError::Config("FMCE-Net parameters must be frozen before attaching".into()));
    }
    if theta.len() != theta.select(Partition::Fmce).len() || backbone.has_partition(Partition::Fmce) {
        return Err(FmceError::Spec("partitions overlap when attaching the scorer".into()));
    }
    backbone.merge(theta)
}
