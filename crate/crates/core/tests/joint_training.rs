mod common;

use fmce_autograd::Tape;
use fmce_core::fmcs::{attach_oracle, harvest_feature_maps, select_checkpoints, train_fmce_net, FmceTrainConfig};
use fmce_core::losses::{loss_base, loss_fmcs, loss_ral, RalConfig};
use fmce_core::model::{build_backbone, build_fmce_net, classify, fmce_forward, forward_features, FmceNetSpec};
use fmce_core::stats::RunStats;
use fmce_core::train::{train, Objective, TrainConfig};
use fmce_core::{FmceError, ParamSet, Partition};

fn cfg(epochs: usize, seed: u64) -> TrainConfig {
    TrainConfig {
        epochs,
        batch_size: 16,
        seed,
        patience: None,
        ..TrainConfig::default()
    }
}

#[derive(Clone, Copy)]
enum Which {
    Base,
    Fmcs,
    Ral(f64),
}

/// Backbone and classifier gradients of one loss on a probe batch, in f64.
fn grads(params: &ParamSet<f64>, which: Which) -> Vec<f64> {
    let (train_ds, _, spec) = common::blobs(4, 4, 28);
    let fspec = FmceNetSpec::for_backbone(&spec, 5).unwrap();
    let batch = train_ds.batch((0..16).collect()).unwrap();
    let mut params = params.clone();
    let mut tape = Tape::<f64>::new();
    let b = params.bind(&mut tape);
    let x = tape.constant(batch.images.cast());
    let f = forward_features(&mut tape, &spec, &b, x).unwrap();
    let logits = classify(&mut tape, &spec, &b, f).unwrap();
    let l_base = loss_base(&mut tape, logits, &batch.targets.cast()).unwrap();
    let q = fmce_forward(&mut tape, &fspec, &b, f).unwrap();
    let l_fmcs = loss_fmcs(&mut tape, q).unwrap();
    let loss = match which {
        Which::Base => l_base,
        Which::Fmcs => l_fmcs,
        Which::Ral(a) => loss_ral(&mut tape, l_base, l_fmcs, RalConfig::new(a).unwrap()).unwrap(),
    };
    tape.backward(loss).unwrap();
    params.zero_grad();
    params.accumulate_grads(&tape, &b).unwrap();
    params
        .iter()
        .filter(|(_, p)| p.partition != Partition::Fmce)
        .flat_map(|(_, p)| p.tensor.grad().unwrap().to_vec())
        .collect()
}

#[test]
fn blended_gradient_is_blend_of_gradients() {
    let (_, _, spec) = common::blobs(4, 1, 28);
    let fspec = FmceNetSpec::for_backbone(&spec, 5).unwrap();
    let mut theta = build_fmce_net::<f32>(&fspec, 2).unwrap();
    theta.freeze(Partition::Fmce).unwrap();
    let params = attach_oracle(build_backbone(&spec, 1).unwrap(), &spec, theta, &fspec)
        .unwrap()
        .cast::<f64>();
    let g_base = grads(&params, Which::Base);
    let g_fmcs = grads(&params, Which::Fmcs);
    for alpha in [0.0, 0.3, 0.8, 1.0] {
        let g = grads(&params, Which::Ral(alpha));
        let expect: Vec<f64> = g_base.iter().zip(&g_fmcs).map(|(b, f)| alpha * b + (1.0 - alpha) * f).collect();
        let scale = expect.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let err = g.iter().zip(&expect).fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
        assert!(err <= 1e-6 * scale, "alpha {alpha}: {err:e} vs scale {scale:e}");
    }
}

#[test]
fn non_finite_loss_aborts_with_divergence() {
    let (train_ds, test_ds, spec) = common::blobs(4, 8, 28);
    let wild = TrainConfig {
        lr_max: 1e30,
        lr_min: 1e30,
        ..cfg(3, 0)
    };
    match train(&spec, &wild, &Objective::Baseline, &train_ds, &test_ds, &mut |_, _| Ok(())) {
        Err(FmceError::Divergence { epoch, loss, .. }) => {
            assert_eq!(epoch, 1);
            assert!(!loss.is_finite());
        }
        other => panic!("expected divergence, got {:?}", other.map(|o| o.metrics)),
    }
}

#[test]
fn baseline_loss_falls_and_blob_accuracy_is_high() {
    let (train_ds, test_ds, spec) = common::blobs(4, 500, 28);
    let out = train(&spec, &cfg(5, 0), &Objective::Baseline, &train_ds, &test_ds, &mut |_, _| Ok(())).unwrap();
    let curve = out.loss_curve();
    assert!(curve.last() < curve.first());
    assert!(out.final_test_acc() > 90.0, "{}", out.final_test_acc());
}

#[test]
fn mild_blend_keeps_blob_accuracy() {
    let (train_ds, test_ds, spec) = common::blobs(4, 500, 28);
    let mut snaps = Vec::new();
    let base = train(&spec, &cfg(5, 7), &Objective::Baseline, &train_ds, &test_ds, &mut |p, _| {
        snaps.push(p.clone());
        Ok(())
    })
    .unwrap();
    let schedule = select_checkpoints(&base.loss_curve(), 3).unwrap();
    let chosen: Vec<_> = schedule.epochs.iter().map(|e| snaps[e - 1].clone()).collect();
    let fmcs = harvest_feature_maps(&chosen, &spec, &train_ds, 200, 1).unwrap();
    let fspec = FmceNetSpec::for_backbone(&spec, 3).unwrap();
    let fcfg = FmceTrainConfig {
        epochs: 3,
        batch_size: 32,
        ..FmceTrainConfig::default()
    };
    let theta = train_fmce_net(&fmcs, &fspec, &fcfg).unwrap().theta;

    let mut accs = [Vec::new(), Vec::new()];
    for seed in 0..3 {
        for (slot, alpha) in [1.0, 0.8].into_iter().enumerate() {
            let obj = Objective::Joint {
                theta: theta.clone(),
                fmce: fspec,
                ral: RalConfig::new(alpha).unwrap(),
            };
            let out = train(&spec, &cfg(5, seed), &obj, &train_ds, &test_ds, &mut |_, _| Ok(())).unwrap();
            accs[slot].push(out.final_test_acc());
        }
    }
    let (one, mild) = (RunStats::new(&accs[0]).unwrap(), RunStats::new(&accs[1]).unwrap());
    assert!(mild.mean >= one.mean - 0.5, "alpha 0.8 {:?} vs alpha 1 {:?}", accs[1], accs[0]);
}
