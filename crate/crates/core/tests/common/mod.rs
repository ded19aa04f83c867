#![allow(dead_code)]

use fmce_core::data::{synthetic_blobs, ImageDataset, Normalization, Split};
use fmce_core::model::BackboneSpec;

/// Normalized blob train/test splits and the matching desk backbone.
pub fn blobs(classes: usize, per_class: usize, size: usize) -> (ImageDataset, ImageDataset, BackboneSpec) {
    let train = synthetic_blobs(classes, per_class, size, 11).unwrap();
    let test = synthetic_blobs(classes, (per_class / 4).max(1), size, 12)
        .unwrap()
        .with_split(Split::Test);
    let norm = Normalization::fit(&train);
    let train = train.with_normalization(norm.clone()).unwrap();
    let test = test.with_normalization(norm).unwrap();
    (train, test, BackboneSpec::desk(1, size, size, classes))
}
