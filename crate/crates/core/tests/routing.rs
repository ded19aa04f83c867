mod common;

use fmce_autograd::Tape;
use fmce_core::fmcs::attach_oracle;
use fmce_core::losses::{loss_fmcs, RalConfig};
use fmce_core::model::{build_backbone, build_fmce_net, fmce_forward, forward_features, FmceNetSpec};
use fmce_core::optim::{Adam, AdamConfig};
use fmce_core::train::{metrics_csv, train, Objective, TrainConfig};
use fmce_core::{ParamSet, Partition};

fn frozen_theta(fspec: &FmceNetSpec) -> ParamSet<f32> {
    let mut theta = build_fmce_net::<f32>(fspec, 5).unwrap();
    theta.freeze(Partition::Fmce).unwrap();
    theta
}

fn short(epochs: usize, seed: u64) -> TrainConfig {
    TrainConfig {
        epochs,
        batch_size: 16,
        seed,
        patience: None,
        ..TrainConfig::default()
    }
}

#[test]
fn fmcs_loss_alone_reaches_only_the_backbone() {
    let (train_ds, _, spec) = common::blobs(4, 8, 28);
    let fspec = FmceNetSpec::for_backbone(&spec, 5).unwrap();
    let theta = frozen_theta(&fspec);
    let mut params = attach_oracle(build_backbone(&spec, 1).unwrap(), &spec, theta.clone(), &fspec).unwrap();
    let before_cls = params.checksum(Some(Partition::Classifier));

    let batch = train_ds.batch((0..16).collect()).unwrap();
    let mut tape = Tape::<f32>::new();
    let b = params.bind(&mut tape);
    let x = tape.constant(batch.images);
    let f = forward_features(&mut tape, &spec, &b, x).unwrap();
    let q = fmce_forward(&mut tape, &fspec, &b, f).unwrap();
    let loss = loss_fmcs(&mut tape, q).unwrap();
    tape.backward(loss).unwrap();
    params.zero_grad();
    params.accumulate_grads(&tape, &b).unwrap();

    let mut backbone_signal = false;
    for (name, p) in params.iter() {
        match p.partition {
            Partition::Classifier => assert!(p.tensor.grad().unwrap().iter().all(|&g| g == 0.0), "{name}"),
            Partition::Fmce => assert!(p.tensor.grad().is_none_or(|g| g.iter().all(|&v| v == 0.0)), "{name}"),
            Partition::Backbone => backbone_signal |= p.tensor.grad().unwrap().iter().any(|&g| g != 0.0),
        }
    }
    assert!(backbone_signal);

    Adam::new(AdamConfig::default()).step(&mut params, 1e-2).unwrap();
    assert_eq!(params.checksum(Some(Partition::Fmce)), theta.checksum(None));
    assert_eq!(params.checksum(Some(Partition::Classifier)), before_cls);
}

#[test]
fn theta_is_unchanged_by_joint_training() {
    let (train_ds, test_ds, spec) = common::blobs(4, 16, 28);
    let fspec = FmceNetSpec::for_backbone(&spec, 5).unwrap();
    let theta = frozen_theta(&fspec);
    for alpha in [0.0, 0.5, 0.9] {
        let obj = Objective::Joint {
            theta: theta.clone(),
            fmce: fspec,
            ral: RalConfig::new(alpha).unwrap(),
        };
        let out = train(&spec, &short(2, 3), &obj, &train_ds, &test_ds, &mut |_, _| Ok(())).unwrap();
        assert_eq!(out.params.checksum(Some(Partition::Fmce)), theta.checksum(None), "alpha {alpha}");
    }
}

#[test]
fn unfrozen_theta_is_refused() {
    let (train_ds, test_ds, spec) = common::blobs(2, 4, 28);
    let fspec = FmceNetSpec::for_backbone(&spec, 3).unwrap();
    let obj = Objective::Joint {
        theta: build_fmce_net(&fspec, 0).unwrap(),
        fmce: fspec,
        ral: RalConfig::new(0.5).unwrap(),
    };
    assert!(train(&spec, &short(1, 0), &obj, &train_ds, &test_ds, &mut |_, _| Ok(())).is_err());
}

#[test]
fn alpha_one_reproduces_baseline_bitwise() {
    let (train_ds, test_ds, spec) = common::blobs(4, 16, 28);
    let fspec = FmceNetSpec::for_backbone(&spec, 5).unwrap();
    let cfg = short(3, 9);
    let base = train(&spec, &cfg, &Objective::Baseline, &train_ds, &test_ds, &mut |_, _| Ok(())).unwrap();
    let obj = Objective::Joint {
        theta: frozen_theta(&fspec),
        fmce: fspec,
        ral: RalConfig::new(1.0).unwrap(),
    };
    let joint = train(&spec, &cfg, &obj, &train_ds, &test_ds, &mut |_, _| Ok(())).unwrap();
    assert_eq!(base.first_step, joint.first_step);
    assert_eq!(base.final_step, joint.final_step);
    for (a, b) in base.metrics.iter().zip(&joint.metrics) {
        assert_eq!(a.loss_base.to_bits(), b.loss_base.to_bits());
        assert_eq!(a.test_acc.to_bits(), b.test_acc.to_bits());
    }
}

#[test]
fn identical_runs_give_identical_metrics_csv() {
    let (train_ds, test_ds, spec) = common::blobs(4, 16, 28);
    let run = || {
        let out = train(&spec, &short(2, 4), &Objective::Baseline, &train_ds, &test_ds, &mut |_, _| Ok(())).unwrap();
        metrics_csv(&out.metrics)
    };
    assert_eq!(run(), run());
}
