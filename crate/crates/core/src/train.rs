//! Baseline and joint (classification + frozen FMCE-Net) training loops.

use std::fmt::Write as _;
use std::path::Path;

use fmce_autograd::Tape;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::binio::write_file;
use crate::data::ImageDataset;
use crate::error::{FmceError, Result};
use crate::losses::{loss_base, loss_fmcs, loss_ral, RalConfig};
use crate::model::{argmax_rows, build_backbone, classify, fmce_forward, forward_features, infer_logits, BackboneSpec, FmceNetSpec};
use crate::optim::{Adam, AdamConfig, CosineSchedule};
use crate::params::{ParamSet, Partition};

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub lr_max: f64,
    pub lr_min: f64,
    /// Stop once the test loss has not reached a new minimum for this many
    /// consecutive epochs. `None` always runs the full budget.
    pub patience: Option<usize>,
    pub adam: AdamConfig,
    pub eval_batch_size: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 30,
            batch_size: 64,
            seed: 0,
            lr_max: 1e-3,
            lr_min: 1e-5,
            patience: Some(5),
            adam: AdamConfig::default(),
            eval_batch_size: 500,
        }
    }
}

impl TrainConfig {
    pub fn schedule(&self) -> Result<CosineSchedule> {
        CosineSchedule::new(self.lr_max, self.lr_min, self.epochs)
    }

    fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.eval_batch_size == 0 {
            return Err(FmceError::Config("batch sizes must be at least 1".into()));
        }
        if self.patience == Some(0) {
            return Err(FmceError::Config("early-stop patience must be at least 1".into()));
        }
        self.schedule().map(|_| ())
    }
}

/// What the backbone is trained against.
#[derive(Clone, Debug)]
pub enum Objective {
    /// Classification loss only.
    Baseline,
    /// `α·L_base + (1−α)·L_FMCS` through a frozen scorer.
    Joint {
        theta: ParamSet<f32>,
        fmce: FmceNetSpec,
        ral: RalConfig,
    },
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochMetrics {
    /// 1-based.
    pub epoch: usize,
    pub lr: f64,
    pub loss_base: f64,
    /// Absent for baseline training.
    pub loss_fmcs: Option<f64>,
    pub loss_ral: f64,
    /// Percent.
    pub train_acc: f64,
    pub test_loss: f64,
    /// Percent.
    pub test_acc: f64,
}

/// Parameter checksums of the trainable partitions after one optimizer step.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct StepChecksum {
    pub step: u64,
    pub backbone: u64,
    pub classifier: u64,
}

impl StepChecksum {
    fn of(step: u64, params: &ParamSet<f32>) -> Self {
        StepChecksum {
            step,
            backbone: params.checksum(Some(Partition::Backbone)),
            classifier: params.checksum(Some(Partition::Classifier)),
        }
    }
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub params: ParamSet<f32>,
    pub metrics: Vec<EpochMetrics>,
    pub stopped_early: bool,
    pub first_step: StepChecksum,
    pub final_step: StepChecksum,
}

impl TrainOutcome {
    pub fn final_test_acc(&self) -> f64 {
        self.metrics.last().map_or(0.0, |m| m.test_acc)
    }

    /// Per-epoch training loss (the blended loss for joint training).
    pub fn loss_curve(&self) -> Vec<f64> {
        self.metrics.iter().map(|m| m.loss_ral).collect()
    }
}

/// Mean classification loss and accuracy (percent) over a dataset.
pub fn evaluate(params: &ParamSet<f32>, spec: &BackboneSpec, ds: &ImageDataset, batch_size: usize) -> Result<(f64, f64)> {
    let mut loss = 0.0;
    let mut correct = 0usize;
    for batch in ds.batches(batch_size, None)? {
        let batch = batch?;
        let logits = infer_logits(params, spec, &batch.images)?;
        let c = spec.classes;
        for (row, &label) in logits.data().chunks(c).zip(&batch.labels) {
            let max = row.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v as f64));
            let lse = max + row.iter().map(|&v| (v as f64 - max).exp()).sum::<f64>().ln();
            loss += lse - row[label] as f64;
        }
        correct += argmax_rows(&logits)
            .iter()
            .zip(&batch.labels)
            .filter(|(p, l)| p == l)
            .count();
    }
    Ok((loss / ds.len() as f64, 100.0 * correct as f64 / ds.len() as f64))
}

/// Per-epoch shuffle seeds derived from the run seed.
fn epoch_seeds(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed ^ 0x6f72_6465_725f_7368)
}

/// Trains a freshly initialized backbone.
///
/// `on_epoch` sees the parameters and metrics after every epoch (used to
/// snapshot checkpoints). The returned parameters include θ for joint runs.
pub fn train(
    spec: &BackboneSpec,
    cfg: &TrainConfig,
    objective: &Objective,
    train_ds: &ImageDataset,
    test_ds: &ImageDataset,
    on_epoch: &mut dyn FnMut(&ParamSet<f32>, &EpochMetrics) -> Result<()>,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    let params = build_backbone::<f32>(spec, cfg.seed)?;
    train_from(spec, cfg, objective, params, train_ds, test_ds, on_epoch)
}

/// As [`train`], starting from the given backbone and classifier parameters.
pub fn train_from(
    spec: &BackboneSpec,
    cfg: &TrainConfig,
    objective: &Objective,
    mut params: ParamSet<f32>,
    train_ds: &ImageDataset,
    test_ds: &ImageDataset,
    on_epoch: &mut dyn FnMut(&ParamSet<f32>, &EpochMetrics) -> Result<()>,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if train_ds.classes() != spec.classes {
        return Err(FmceError::Config(format!(
            "dataset has {} classes, backbone {}",
            train_ds.classes(),
            spec.classes
        )));
    }
    let joint = match objective {
        Objective::Baseline => None,
        Objective::Joint { theta, fmce, ral } => {
            if !theta.is_frozen(Partition::Fmce) {
                return Err(FmceError::Config("FMCE-Net parameters must be frozen before joint training".into()));
            }
            fmce.check_input(spec.feature_shape()?)?;
            params = params.merge(theta.clone())?;
            Some((fmce, *ral))
        }
    };

    let schedule = cfg.schedule()?;
    let mut adam = Adam::<f32>::new(cfg.adam);
    let mut seeds = epoch_seeds(cfg.seed);
    let mut metrics = Vec::new();
    let mut first_step = None;
    let mut best_test = f64::INFINITY;
    let mut since_best = 0usize;
    let mut stopped_early = false;

    for epoch in 0..cfg.epochs {
        let lr = schedule.lr_at(epoch);
        let (mut sum_base, mut sum_fmcs, mut sum_ral) = (0.0, 0.0, 0.0);
        let mut correct = 0usize;
        for (step_in_epoch, batch) in train_ds.batches(cfg.batch_size, Some(seeds.next_u64()))?.enumerate() {
            let batch = batch?;
            let n = batch.labels.len() as f64;
            let mut tape = Tape::<f32>::new();
            let b = params.bind(&mut tape);
            let x = tape.constant(batch.images);
            let features = forward_features(&mut tape, spec, &b, x)?;
            let logits = classify(&mut tape, spec, &b, features)?;
            let l_base = loss_base(&mut tape, logits, &batch.targets)?;
            let (loss, l_fmcs) = match joint {
                None => (l_base, None),
                Some((fmce, ral)) => {
                    let q = fmce_forward(&mut tape, fmce, &b, features)?;
                    let l_fmcs = loss_fmcs(&mut tape, q)?;
                    (loss_ral(&mut tape, l_base, l_fmcs, ral)?, Some(l_fmcs))
                }
            };
            let value = tape.value(loss).item() as f64;
            if !value.is_finite() {
                return Err(FmceError::Divergence {
                    epoch: epoch + 1,
                    step: step_in_epoch + 1,
                    loss: value,
                });
            }
            sum_base += n * tape.value(l_base).item() as f64;
            if let Some(l) = l_fmcs {
                sum_fmcs += n * tape.value(l).item() as f64;
            }
            sum_ral += n * value;
            correct += argmax_rows(tape.value(logits))
                .iter()
                .zip(&batch.labels)
                .filter(|(p, l)| p == l)
                .count();

            tape.backward(loss)?;
            params.zero_grad();
            params.accumulate_grads(&tape, &b)?;
            adam.step(&mut params, lr)?;
            if first_step.is_none() {
                first_step = Some(StepChecksum::of(adam.steps(), &params));
            }
        }

        let n = train_ds.len() as f64;
        let (test_loss, test_acc) = evaluate(&params, spec, test_ds, cfg.eval_batch_size)?;
        if !test_loss.is_finite() {
            return Err(FmceError::Divergence {
                epoch: epoch + 1,
                step: 0,
                loss: test_loss,
            });
        }
        let m = EpochMetrics {
            epoch: epoch + 1,
            lr,
            loss_base: sum_base / n,
            loss_fmcs: joint.map(|_| sum_fmcs / n),
            loss_ral: sum_ral / n,
            train_acc: 100.0 * correct as f64 / n,
            test_loss,
            test_acc,
        };
        log::info!(
            "epoch {:>3}  lr {:.2e}  loss {:.4}  train {:.2}%  test {:.2}%",
            m.epoch,
            m.lr,
            m.loss_ral,
            m.train_acc,
            m.test_acc
        );
        on_epoch(&params, &m)?;
        metrics.push(m);

        if test_loss < best_test {
            best_test = test_loss;
            since_best = 0;
        } else {
            since_best += 1;
        }
        if cfg.patience.is_some_and(|p| since_best >= p) && epoch + 1 < cfg.epochs {
            stopped_early = true;
            break;
        }
    }

    let first_step = first_step.ok_or(FmceError::EmptyDataset)?;
    let final_step = StepChecksum::of(adam.steps(), &params);
    Ok(TrainOutcome {
        params,
        metrics,
        stopped_early,
        first_step,
        final_step,
    })
}

pub const METRICS_HEADER: &str = "epoch,lr,L_base,L_FMCS,L_RAL,train_acc,test_acc";

/// Metrics CSV; `L_FMCS` is empty for baseline runs.
pub fn metrics_csv(metrics: &[EpochMetrics]) -> String {
    let mut out = String::from(METRICS_HEADER);
    out.push('\n');
    for m in metrics {
        let fmcs = m.loss_fmcs.map(|v| v.to_string()).unwrap_or_default();
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{}",
            m.epoch, m.lr, m.loss_base, fmcs, m.loss_ral, m.train_acc, m.test_acc
        );
    }
    out
}

pub fn write_metrics_csv(path: &Path, metrics: &[EpochMetrics]) -> Result<()> {
    write_file(path, metrics_csv(metrics).as_bytes())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_layout() {
        let m = EpochMetrics {
            epoch: 1,
            lr: 1e-3,
            loss_base: 0.5,
            loss_fmcs: None,
            loss_ral: 0.5,
            train_acc: 90.0,
            test_loss: 0.4,
            test_acc: 91.25,
        };
        let csv = metrics_csv(&[m]);
        assert_eq!(csv, "epoch,lr,L_base,L_FMCS,L_RAL,train_acc,test_acc\n1,0.001,0.5,,0.5,90,91.25\n");
    }

    #[test]
    fn invalid_config_rejected() {
        let cfg = TrainConfig {
            batch_size: 0,
            ..TrainConfig::default()
        };
        assert!(cfg.validate().is_err());
    }
}
