mod common;

use fmce_core::checkpoint::{load_checkpoint, save_checkpoint};
use fmce_core::fmcs::{encode_fmcs, harvest_feature_maps, load_fmcs, save_fmcs, select_checkpoints, train_fmce_net, FmceTrainConfig};
use fmce_core::model::{build_backbone, infer_features, FmceNetSpec};
use fmce_core::train::{train, Objective, TrainConfig};
use fmce_core::{ParamSet, Partition};

fn checkpoints(spec: &fmce_core::model::BackboneSpec, k: u64) -> Vec<ParamSet<f32>> {
    (0..k).map(|s| build_backbone(spec, s).unwrap()).collect()
}

#[test]
fn harvest_yields_k_times_n_balanced_records() {
    let (train_ds, _, spec) = common::blobs(4, 10, 28);
    let ckpts = checkpoints(&spec, 3);
    let sums: Vec<u64> = ckpts.iter().map(|c| c.checksum(None)).collect();
    let ds = harvest_feature_maps(&ckpts, &spec, &train_ds, 7, 1).unwrap();
    assert_eq!(ds.len(), 3 * 40);
    assert_eq!(ds.label_histogram(), vec![40, 40, 40]);
    assert_eq!(ds.feature_shape(), spec.feature_shape().unwrap());
    assert_eq!(sums, ckpts.iter().map(|c| c.checksum(None)).collect::<Vec<_>>());

    // record (k, i) is checkpoint k's feature map of image i
    let img = train_ds.gather(&[17]).unwrap();
    let expect = infer_features(&ckpts[1], &spec, &img).unwrap();
    let (k, i, values) = ds.record(ds.record_index(2, 17));
    assert_eq!((k, i), (2, 17));
    assert_eq!(values, expect.data());
}

#[test]
fn harvest_does_not_depend_on_thread_count() {
    let (train_ds, _, spec) = common::blobs(4, 5, 28);
    let ckpts = checkpoints(&spec, 4);
    let one = encode_fmcs(&harvest_feature_maps(&ckpts, &spec, &train_ds, 8, 1).unwrap()).unwrap();
    let three = encode_fmcs(&harvest_feature_maps(&ckpts, &spec, &train_ds, 8, 3).unwrap()).unwrap();
    assert_eq!(one, three);
}

#[test]
fn foreign_checkpoint_is_rejected() {
    let (train_ds, _, spec) = common::blobs(4, 2, 28);
    let other = fmce_core::model::BackboneSpec::desk(1, 28, 28, 7);
    let ckpts = vec![build_backbone(&other, 0).unwrap()];
    assert!(harvest_feature_maps(&ckpts, &spec, &train_ds, 8, 1).is_err());
}

#[test]
fn checkpoints_and_fmcs_files_survive_disk() {
    let dir = tempfile::tempdir().unwrap();
    let (train_ds, _, spec) = common::blobs(4, 3, 28);
    let ckpts = checkpoints(&spec, 2);
    let path = dir.path().join("nested/epoch-001.fmce");
    save_checkpoint(&path, &ckpts[0]).unwrap();
    assert_eq!(load_checkpoint(&path).unwrap(), ckpts[0]);

    let ds = harvest_feature_maps(&ckpts, &spec, &train_ds, 8, 1).unwrap();
    let fpath = dir.path().join("fmcs.bin");
    save_fmcs(&fpath, &ds).unwrap();
    assert_eq!(load_fmcs(&fpath).unwrap(), ds);
}

#[test]
fn end_to_end_scorer_learns_blob_checkpoints() {
    let (train_ds, test_ds, spec) = common::blobs(4, 50, 28);
    let cfg = TrainConfig {
        epochs: 6,
        batch_size: 16,
        patience: None,
        ..TrainConfig::default()
    };
    let mut snaps = Vec::new();
    let out = train(&spec, &cfg, &Objective::Baseline, &train_ds, &test_ds, &mut |p, _| {
        snaps.push(p.clone());
        Ok(())
    })
    .unwrap();
    let schedule = select_checkpoints(&out.loss_curve(), 3).unwrap();
    assert_eq!(schedule.epochs.len(), 3);
    assert_eq!(*schedule.epochs.last().unwrap(), 6);
    let chosen: Vec<_> = schedule.epochs.iter().map(|e| snaps[e - 1].clone()).collect();
    let ds = harvest_feature_maps(&chosen, &spec, &train_ds, 50, 1).unwrap();

    let fspec = FmceNetSpec::for_backbone(&spec, 3).unwrap();
    let fcfg = FmceTrainConfig {
        epochs: 8,
        batch_size: 32,
        ..FmceTrainConfig::default()
    };
    let res = train_fmce_net(&ds, &fspec, &fcfg).unwrap();
    assert!(res.theta.is_frozen(Partition::Fmce));
    assert!(res.val_acc > 2.0 / 3.0, "held-out accuracy {}", res.val_acc);
    assert!(res.losses.first() > res.losses.last());
}
