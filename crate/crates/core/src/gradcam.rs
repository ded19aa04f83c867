//! Grad-CAM heatmaps at the backbone tap point, and PPM overlays.

use std::path::Path;

use fmce_autograd::{Tape, Tensor};

use crate::binio::{read_file, write_file};
use crate::error::{FmceError, Result};
use crate::model::{classify, forward_features, BackboneSpec};
use crate::params::ParamSet;

pub const TAP_LAYER: &str = "tap";

#[derive(Clone, Debug, PartialEq)]
pub struct Heatmap {
    pub height: usize,
    pub width: usize,
    /// Row-major, in `[0, 1]`.
    pub values: Vec<f32>,
    pub layer: String,
    pub target_class: usize,
}

impl Heatmap {
    pub fn max(&self) -> f32 {
        self.values.iter().copied().fold(0.0, f32::max)
    }

    /// Bilinearly resampled to `height × width` (half-pixel centres, edge clamped).
    pub fn upsample(&self, height: usize, width: usize) -> Vec<f32> {
        bilinear(&self.values, self.height, self.width, height, width)
    }
}

/// Rectified, gradient-weighted channel sum, normalized by its maximum.
///
/// `activations` and `grads` are `C×H×W`; channel weights are the spatial
/// means of `grads`. An all-nonpositive map stays zero.
pub fn cam_from_parts(activations: &[f32], grads: &[f32], channels: usize, height: usize, width: usize) -> Result<Vec<f32>> {
    let plane = height * width;
    if activations.len() != channels * plane || grads.len() != activations.len() {
        return Err(FmceError::Spec(format!(
            "Grad-CAM needs {channels}×{height}×{width} activations and gradients"
        )));
    }
    let mut cam = vec![0.0f32; plane];
    for c in 0..channels {
        let g = &grads[c * plane..(c + 1) * plane];
        let weight = g.iter().map(|&v| v as f64).sum::<f64>() / plane as f64;
        let a = &activations[c * plane..(c + 1) * plane];
        for (o, &v) in cam.iter_mut().zip(a) {
            *o += (weight * v as f64) as f32;
        }
    }
    cam.iter_mut().for_each(|v| *v = v.max(0.0));
    let max = cam.iter().copied().fold(0.0f32, f32::max);
    if max > 0.0 {
        cam.iter_mut().for_each(|v| *v = (*v / max).min(1.0));
    }
    Ok(cam)
}

/// Grad-CAM of the target-class logit at the tap point for one normalized
/// `1×C×H×W` image.
pub fn gradcam(params: &ParamSet<f32>, spec: &BackboneSpec, image: &Tensor<f32>, target_class: usize) -> Result<Heatmap> {
    if target_class >= spec.classes {
        return Err(FmceError::Config(format!(
            "target class {target_class} out of range for {} classes",
            spec.classes
        )));
    }
    if image.dims().first() != Some(&1) {
        return Err(FmceError::Spec(format!("Grad-CAM takes one image, got {}", image.shape())));
    }
    let mut tape = Tape::<f32>::new();
    let b = params.bind_constants(&mut tape);
    let x = tape.constant(image.clone());
    let features = forward_features(&mut tape, spec, &b, x)?;
    // Restart from the tap activations as a differentiable leaf.
    let tap = tape.leaf(tape.value(features).clone().with_grad());
    let logits = classify(&mut tape, spec, &b, tap)?;
    let mut mask = vec![0.0f32; spec.classes];
    mask[target_class] = 1.0;
    let mask = tape.constant(Tensor::from_vec([1, spec.classes], mask)?);
    let picked = tape.mul(logits, mask)?;
    let score = tape.sum(picked)?;
    tape.backward(score)?;

    let [c, h, w] = spec.feature_shape()?;
    let grads = tape
        .grad(tap)
        .ok_or_else(|| FmceError::Spec("no gradient reached the tap point".into()))?;
    let values = cam_from_parts(tape.data(tap), grads, c, h, w)?;
    Ok(Heatmap {
        height: h,
        width: w,
        values,
        layer: TAP_LAYER.to_string(),
        target_class,
    })
}

pub fn bilinear(src: &[f32], h: usize, w: usize, out_h: usize, out_w: usize) -> Vec<f32> {
    let coord = |i: usize, n_in: usize, n_out: usize| -> (usize, usize, f32) {
        let s = ((i as f32 + 0.5) * n_in as f32 / n_out as f32 - 0.5).clamp(0.0, (n_in - 1) as f32);
        let lo = s.floor() as usize;
        let hi = (lo + 1).min(n_in - 1);
        (lo, hi, s - lo as f32)
    };
    let mut out = Vec::with_capacity(out_h * out_w);
    for y in 0..out_h {
        let (y0, y1, fy) = coord(y, h, out_h);
        for x in 0..out_w {
            let (x0, x1, fx) = coord(x, w, out_w);
            let top = src[y0 * w + x0] * (1.0 - fx) + src[y0 * w + x1] * fx;
            let bottom = src[y1 * w + x0] * (1.0 - fx) + src[y1 * w + x1] * fx;
            out.push(top * (1.0 - fy) + bottom * fy);
        }
    }
    out
}

/// Piecewise-linear blue → cyan → yellow → red ramp.
fn colormap(v: f32) -> [f32; 3] {
    let v = v.clamp(0.0, 1.0);
    let r = (1.5 - (4.0 * v - 3.0).abs()).clamp(0.0, 1.0);
    let g = (1.5 - (4.0 * v - 2.0).abs()).clamp(0.0, 1.0);
    let b = (1.5 - (4.0 * v - 1.0).abs()).clamp(0.0, 1.0);
    [r, g, b]
}

/// RGB overlay at input resolution: each pixel mixes the input with the
/// heat colour using opacity `0.5 · heat`, so a zero heatmap leaves the image
/// unchanged. `image` is raw `C×H×W` in `[0, 1]` with one or three channels.
pub fn overlay(heatmap: &Heatmap, image: &[f32], channels: usize, height: usize, width: usize) -> Result<Vec<u8>> {
    if !(channels == 1 || channels == 3) || image.len() != channels * height * width {
        return Err(FmceError::Spec(format!(
            "overlay needs a 1- or 3-channel {height}×{width} image"
        )));
    }
    let heat = heatmap.upsample(height, width);
    let plane = height * width;
    let mut rgb = Vec::with_capacity(3 * plane);
    for (p, &hv) in heat.iter().enumerate() {
        let alpha = 0.5 * hv;
        let color = colormap(hv);
        for (ch, &col) in color.iter().enumerate() {
            let base = image[if channels == 1 { p } else { ch * plane + p }];
            let v = (1.0 - alpha) * base + alpha * col;
            rgb.push((v * 255.0).round().clamp(0.0, 255.0) as u8);
        }
    }
    Ok(rgb)
}

pub fn encode_ppm(width: usize, height: usize, rgb: &[u8]) -> Result<Vec<u8>> {
    if rgb.len() != 3 * width * height {
        return Err(FmceError::Spec("RGB buffer does not match PPM extents".into()));
    }
    let mut out = format!("P6\n{width} {height}\n255\n").into_bytes();
    out.extend_from_slice(rgb);
    Ok(out)
}

/// Parses a binary PPM (maxval 255) into `(width, height, rgb)`.
pub fn decode_ppm(origin: &str, bytes: &[u8]) -> Result<(usize, usize, Vec<u8>)> {
    let err = |m: &str| FmceError::format(origin, m.to_string());
    let mut fields = Vec::new();
    let mut pos = 0;
    while fields.len() < 4 {
        while pos < bytes.len() && (bytes[pos].is_ascii_whitespace() || bytes[pos] == b'#') {
            if bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
            } else {
                pos += 1;
            }
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(err("truncated PPM header"));
        }
        fields.push(std::str::from_utf8(&bytes[start..pos]).map_err(|_| err("non-ASCII header"))?);
    }
    if fields[0] != "P6" {
        return Err(err("not a binary PPM (P6)"));
    }
    let num = |s: &str| s.parse::<usize>().map_err(|_| err("bad header number"));
    let (w, h, maxval) = (num(fields[1])?, num(fields[2])?, num(fields[3])?);
    if maxval != 255 {
        return Err(err("only maxval 255 is supported"));
    }
    let data = &bytes[pos + 1..];
    if data.len() != 3 * w * h {
        return Err(err("pixel payload size differs from header"));
    }
    Ok((w, h, data.to_vec()))
}

/// Writes the overlay of `heatmap` on `image` as a PPM file.
pub fn export_overlay(heatmap: &Heatmap, image: &[f32], channels: usize, height: usize, width: usize, path: &Path) -> Result<()> {
    let rgb = overlay(heatmap, image, channels, height, width)?;
    write_file(path, &encode_ppm(width, height, &rgb)?)
}

pub fn read_ppm(path: &Path) -> Result<(usize, usize, Vec<u8>)> {
    decode_ppm(&path.display().to_string(), &read_file(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_positive_channel_gives_ones() {
        let cam = cam_from_parts(&[2.0; 9], &[0.5; 9], 1, 3, 3).unwrap();
        assert_eq!(cam, vec![1.0; 9]);
    }

    #[test]
    fn zero_activations_stay_zero() {
        let cam = cam_from_parts(&[0.0; 8], &[1.0; 8], 2, 2, 2).unwrap();
        assert_eq!(cam, vec![0.0; 4]);
    }

    #[test]
    fn bilinear_preserves_constants_and_identity() {
        assert_eq!(bilinear(&[0.25; 4], 2, 2, 5, 7), vec![0.25; 35]);
        let src: Vec<f32> = (0..6).map(|v| v as f32).collect();
        assert_eq!(bilinear(&src, 2, 3, 2, 3), src);
    }

    #[test]
    fn ppm_round_trip() {
        let rgb: Vec<u8> = (0..24).collect();
        let bytes = encode_ppm(4, 2, &rgb).unwrap();
        assert_eq!(decode_ppm("m", &bytes).unwrap(), (4, 2, rgb));
        assert!(decode_ppm("m", b"P3\n1 1\n255\n   ").is_err());
    }
}
