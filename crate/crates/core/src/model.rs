//! Desk-scale backbone, classification head and FMCE-Net scorer.
//!
//! All three are plain functions over a [`ParamSet`] bound onto a tape, so the
//! same code serves training (f32, trainable leaves), inference (constants) and
//! finite-difference oracles (f64).

use fmce_autograd::{Scalar, Tape, Tensor, Var};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{FmceError, Result};
use crate::params::{Bindings, ParamSet, Partition};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvStage {
    pub channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
    /// Optional max pooling `(window, stride)` after the activation.
    pub pool: Option<(usize, usize)>,
}

impl ConvStage {
    pub const fn new(channels: usize, kernel: usize, stride: usize, padding: usize) -> Self {
        ConvStage {
            channels,
            kernel,
            stride,
            padding,
            pool: None,
        }
    }

    fn out_extent(&self, n: usize) -> Option<usize> {
        let padded = n + 2 * self.padding;
        let conv = padded.checked_sub(self.kernel)? / self.stride + 1;
        match self.pool {
            None => Some(conv),
            Some((w, s)) => Some(conv.checked_sub(w)? / s + 1),
        }
    }
}

/// Convolutional feature extractor followed by global average pooling and a
/// linear classifier. Every stage is conv → relu (→ optional max pool); the
/// tap point is the output of the last stage.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BackboneSpec {
    pub in_channels: usize,
    pub height: usize,
    pub width: usize,
    pub stages: Vec<ConvStage>,
    pub classes: usize,
}

impl BackboneSpec {
    /// Three 3×3 stages of 16, 32, 32 channels with strides 2, 1, 2.
    pub fn desk(in_channels: usize, height: usize, width: usize, classes: usize) -> Self {
        BackboneSpec {
            in_channels,
            height,
            width,
            stages: vec![
                ConvStage::new(16, 3, 2, 1),
                ConvStage::new(32, 3, 1, 1),
                ConvStage::new(32, 3, 2, 1),
            ],
            classes,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.feature_shape().map(|_| ())
    }

    /// `[C_f, H_f, W_f]` of the tap-point feature map.
    pub fn feature_shape(&self) -> Result<[usize; 3]> {
        if self.stages.is_empty() {
            return Err(FmceError::Spec("backbone needs at least one conv stage".into()));
        }
        if self.in_channels == 0 || self.classes == 0 {
            return Err(FmceError::Spec("input channels and classes must be positive".into()));
        }
        let (mut c, mut h, mut w) = (self.in_channels, self.height, self.width);
        for (i, s) in self.stages.iter().enumerate() {
            if s.channels == 0 || s.kernel == 0 || s.stride == 0 {
                return Err(FmceError::Spec(format!("stage {i}: zero channels, kernel or stride")));
            }
            if matches!(s.pool, Some((0, _)) | Some((_, 0))) {
                return Err(FmceError::Spec(format!("stage {i}: zero pooling window or stride")));
            }
            let msg = format!(
                "stage {i}: {c}×{h}×{w} input is too small for kernel {} / padding {}",
                s.kernel, s.padding
            );
            match (s.out_extent(h), s.out_extent(w)) {
                (Some(nh), Some(nw)) => (h, w) = (nh, nw),
                _ => return Err(FmceError::Spec(msg)),
            }
            c = s.channels;
        }
        Ok([c, h, w])
    }
}

/// FMCE-Net: conv → relu → global average pool → linear to K logits.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct FmceNetSpec {
    pub in_channels: usize,
    pub channels: usize,
    pub kernel: usize,
    pub padding: usize,
    pub levels: usize,
}

impl FmceNetSpec {
    pub const DEFAULT_CHANNELS: usize = 4;
    pub const DEFAULT_LEVELS: usize = 9;

    /// Default scorer for the feature maps of `backbone`.
    pub fn for_backbone(backbone: &BackboneSpec, levels: usize) -> Result<Self> {
        let [c, _, _] = backbone.feature_shape()?;
        Ok(FmceNetSpec {
            in_channels: c,
            channels: Self::DEFAULT_CHANNELS,
            kernel: 3,
            padding: 1,
            levels,
        })
    }

    /// Checks that this scorer accepts feature maps of the given shape.
    pub fn check_input(&self, feature: [usize; 3]) -> Result<()> {
        let [c, h, w] = feature;
        if c != self.in_channels {
            return Err(FmceError::Spec(format!(
                "FMCE-Net expects {} input channels, feature maps have {c}",
                self.in_channels
            )));
        }
        if self.kernel > h + 2 * self.padding || self.kernel > w + 2 * self.padding {
            return Err(FmceError::Spec(format!(
                "FMCE-Net kernel {} does not fit a {h}×{w} feature map",
                self.kernel
            )));
        }
        Ok(())
    }

    fn validate(&self) -> Result<()> {
        if self.in_channels == 0 || self.channels == 0 || self.kernel == 0 {
            return Err(FmceError::Spec("FMCE-Net extents must be positive".into()));
        }
        if self.levels < 2 {
            return Err(FmceError::Spec(format!("FMCE-Net needs K ≥ 2 levels, got {}", self.levels)));
        }
        Ok(())
    }
}

pub fn conv_weight(i: usize) -> String {
    format!("backbone.conv{i}.weight")
}

pub fn conv_bias(i: usize) -> String {
    format!("backbone.conv{i}.bias")
}

pub const CLASSIFIER_WEIGHT: &str = "classifier.weight";
pub const CLASSIFIER_BIAS: &str = "classifier.bias";
pub const FMCE_CONV_WEIGHT: &str = "fmce.conv.weight";
pub const FMCE_CONV_BIAS: &str = "fmce.conv.bias";
pub const FMCE_LINEAR_WEIGHT: &str = "fmce.linear.weight";
pub const FMCE_LINEAR_BIAS: &str = "fmce.linear.bias";

fn he_normal<T: Scalar>(rng: &mut ChaCha8Rng, dims: &[usize], fan_in: usize) -> Result<Tensor<T>> {
    let normal = Normal::new(0.0, (2.0 / fan_in as f64).sqrt()).expect("positive std");
    let n: usize = dims.iter().product();
    let data = (0..n).map(|_| T::of(normal.sample(rng))).collect();
    Ok(Tensor::from_vec(dims.to_vec(), data)?)
}

fn zeros<T: Scalar>(n: usize) -> Result<Tensor<T>> {
    Ok(Tensor::zeros([n])?)
}

/// He-normal weights and zero biases for the backbone and classifier.
pub fn build_backbone<T: Scalar>(spec: &BackboneSpec, seed: u64) -> Result<ParamSet<T>> {
    let [feat_c, _, _] = spec.feature_shape()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut ps = ParamSet::new();
    let mut c_in = spec.in_channels;
    for (i, s) in spec.stages.iter().enumerate() {
        let fan_in = c_in * s.kernel * s.kernel;
        let w = he_normal(&mut rng, &[s.channels, c_in, s.kernel, s.kernel], fan_in)?;
        ps.insert(conv_weight(i), Partition::Backbone, w)?;
        ps.insert(conv_bias(i), Partition::Backbone, zeros(s.channels)?)?;
        c_in = s.channels;
    }
    let w = he_normal(&mut rng, &[feat_c, spec.classes], feat_c)?;
    ps.insert(CLASSIFIER_WEIGHT, Partition::Classifier, w)?;
    ps.insert(CLASSIFIER_BIAS, Partition::Classifier, zeros(spec.classes)?)?;
    Ok(ps)
}

pub fn build_fmce_net<T: Scalar>(spec: &FmceNetSpec, seed: u64) -> Result<ParamSet<T>> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut ps = ParamSet::new();
    let fan_in = spec.in_channels * spec.kernel * spec.kernel;
    let w = he_normal(&mut rng, &[spec.channels, spec.in_channels, spec.kernel, spec.kernel], fan_in)?;
    ps.insert(FMCE_CONV_WEIGHT, Partition::Fmce, w)?;
    ps.insert(FMCE_CONV_BIAS, Partition::Fmce, zeros(spec.channels)?)?;
    let w = he_normal(&mut rng, &[spec.channels, spec.levels], spec.channels)?;
    ps.insert(FMCE_LINEAR_WEIGHT, Partition::Fmce, w)?;
    ps.insert(FMCE_LINEAR_BIAS, Partition::Fmce, zeros(spec.levels)?)?;
    Ok(ps)
}

fn linear<T: Scalar>(tape: &mut Tape<T>, x: Var, w: Var, b: Var) -> Result<Var> {
    let rows = tape.shape(x).dims()[0];
    let y = tape.matmul(x, w)?;
    let bias = tape.expand_rows(b, rows)?;
    Ok(tape.add(y, bias)?)
}

/// Tap-point activations for an `N×C×H×W` input.
pub fn forward_features<T: Scalar>(
    tape: &mut Tape<T>,
    spec: &BackboneSpec,
    params: &Bindings,
    input: Var,
) -> Result<Var> {
    let dims = tape.shape(input).dims().to_vec();
    if dims.len() != 4 || dims[1..] != [spec.in_channels, spec.height, spec.width] {
        return Err(FmceError::Spec(format!(
            "backbone expects N×{}×{}×{} input, got {}",
            spec.in_channels,
            spec.height,
            spec.width,
            tape.shape(input)
        )));
    }
    let mut x = input;
    for (i, s) in spec.stages.iter().enumerate() {
        let w = params.get(&conv_weight(i))?;
        let b = params.get(&conv_bias(i))?;
        x = tape.conv2d(x, w, b, s.stride, s.padding)?;
        x = tape.relu(x)?;
        if let Some((window, stride)) = s.pool {
            x = tape.maxpool2d(x, window, stride)?;
        }
    }
    Ok(x)
}

/// Class logits `N×classes` from tap-point features.
pub fn classify<T: Scalar>(
    tape: &mut Tape<T>,
    spec: &BackboneSpec,
    params: &Bindings,
    features: Var,
) -> Result<Var> {
    let [c, h, w] = spec.feature_shape()?;
    let dims = tape.shape(features).dims();
    if dims.len() != 4 || dims[1..] != [c, h, w] {
        return Err(FmceError::Spec(format!(
            "classifier expects N×{c}×{h}×{w} features, got {}",
            tape.shape(features)
        )));
    }
    let pooled = tape.global_avg_pool(features)?;
    let logits = linear(
        tape,
        pooled,
        params.get(CLASSIFIER_WEIGHT)?,
        params.get(CLASSIFIER_BIAS)?,
    )?;
    if tape.shape(logits).dims()[1] != spec.classes {
        return Err(FmceError::Spec(format!(
            "classifier produces {} logits, expected {}",
            tape.shape(logits).dims()[1],
            spec.classes
        )));
    }
    Ok(logits)
}

/// FMCS logits `N×K` from tap-point features; reads only the FMCE partition.
pub fn fmce_forward<T: Scalar>(
    tape: &mut Tape<T>,
    spec: &FmceNetSpec,
    params: &Bindings,
    features: Var,
) -> Result<Var> {
    let dims = tape.shape(features).dims().to_vec();
    if dims.len() != 4 {
        return Err(FmceError::Spec(format!(
            "FMCE-Net expects rank-4 features, got {}",
            tape.shape(features)
        )));
    }
    spec.check_input([dims[1], dims[2], dims[3]])?;
    let x = tape.conv2d(
        features,
        params.get(FMCE_CONV_WEIGHT)?,
        params.get(FMCE_CONV_BIAS)?,
        1,
        spec.padding,
    )?;
    let x = tape.relu(x)?;
    let pooled = tape.global_avg_pool(x)?;
    let logits = linear(
        tape,
        pooled,
        params.get(FMCE_LINEAR_WEIGHT)?,
        params.get(FMCE_LINEAR_BIAS)?,
    )?;
    if tape.shape(logits).dims()[1] != spec.levels {
        return Err(FmceError::Spec(format!(
            "FMCE-Net produces {} logits, expected K = {}",
            tape.shape(logits).dims()[1],
            spec.levels
        )));
    }
    Ok(logits)
}

/// Tap-point feature maps without recording gradients.
pub fn infer_features(params: &ParamSet<f32>, spec: &BackboneSpec, images: &Tensor<f32>) -> Result<Tensor<f32>> {
    let mut tape = Tape::new();
    let b = params.bind_constants(&mut tape);
    let x = tape.constant(images.clone());
    let f = forward_features(&mut tape, spec, &b, x)?;
    Ok(tape.value(f).clone())
}

/// Class logits without recording gradients.
pub fn infer_logits(params: &ParamSet<f32>, spec: &BackboneSpec, images: &Tensor<f32>) -> Result<Tensor<f32>> {
    let mut tape = Tape::new();
    let b = params.bind_constants(&mut tape);
    let x = tape.constant(images.clone());
    let f = forward_features(&mut tape, spec, &b, x)?;
    let logits = classify(&mut tape, spec, &b, f)?;
    Ok(tape.value(logits).clone())
}

/// FMCS logits for precomputed feature maps, without recording gradients.
pub fn infer_fmcs(theta: &ParamSet<f32>, spec: &FmceNetSpec, features: &Tensor<f32>) -> Result<Tensor<f32>> {
    let mut tape = Tape::new();
    let b = theta.bind_constants(&mut tape);
    let x = tape.constant(features.clone());
    let q = fmce_forward(&mut tape, spec, &b, x)?;
    Ok(tape.value(q).clone())
}

/// Row-wise argmax of an `N×C` tensor (first maximum on ties).
pub fn argmax_rows<T: Scalar>(t: &Tensor<T>) -> Vec<usize> {
    let cols = t.dims()[t.dims().len() - 1];
    t.data()
        .chunks(cols)
        .map(|row| {
            row.iter()
                .enumerate()
                .fold((0, row[0]), |(bi, bv), (i, &v)| if v > bv { (i, v) } else { (bi, bv) })
                .0
        })
        .collect()
}
