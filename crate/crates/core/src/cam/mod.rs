//! Class activation maps over the `last_conv` tap: CAM, Grad-CAM and
//! Score-CAM, plus overlays and localization scoring.

mod plasma;

use std::time::Instant;

use serde::{Deserialize, Serialize};

pub use plasma::PLASMA;

use crate::error::{shape_err, Error, Result};
use crate::imaging::{Image, Mask};
use crate::model::{LayerKind, Session, LAST_CONV_TAP};
use crate::ops::Mode;
use crate::tensor::{Element, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CamMethod {
    Cam,
    GradCam,
    ScoreCam,
}

impl CamMethod {
    pub fn name(self) -> &'static str {
        match self {
            CamMethod::Cam => "cam",
            CamMethod::GradCam => "grad-cam",
            CamMethod::ScoreCam => "score-cam",
        }
    }
}

impl std::str::FromStr for CamMethod {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "cam" => Ok(CamMethod::Cam),
            "grad-cam" => Ok(CamMethod::GradCam),
            "score-cam" => Ok(CamMethod::ScoreCam),
            _ => Err(Error::Argument(format!("unknown CAM method {s:?} (cam, grad-cam, score-cam)"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Heatmap {
    pub method: CamMethod,
    pub sample_id: String,
    /// Weighted channel sum at tap resolution, before rectification.
    pub native: Vec<f64>,
    pub native_size: (usize, usize),
    /// Rectified, min-max normalized native map.
    pub normalized: Vec<f64>,
    /// `normalized` resized to the input resolution.
    pub upsampled: Vec<f64>,
    pub size: (usize, usize),
}

impl Heatmap {
    fn build(method: CamMethod, sample_id: &str, native: Vec<f64>, native_size: (usize, usize), size: (usize, usize)) -> Self {
        let normalized = normalize(&native.iter().map(|&v| v.max(0.0)).collect::<Vec<_>>());
        let upsampled = resize_bilinear(&normalized, native_size, size);
        Heatmap {
            method,
            sample_id: sample_id.to_string(),
            native,
            native_size,
            normalized,
            upsampled,
            size,
        }
    }

    /// Mean of the rectified native map.
    pub fn magnitude(&self) -> f64 {
        self.native.iter().map(|&v| v.max(0.0)).sum::<f64>() / self.native.len() as f64
    }
}

/// Min-max normalization to [0, 1]; a constant map becomes all zero.
pub fn normalize(map: &[f64]) -> Vec<f64> {
    let lo = map.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = map.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !(hi > lo) {
        return vec![0.0; map.len()];
    }
    map.iter().map(|&v| (v - lo) / (hi - lo)).collect()
}

/// Bilinear resize with pixel-center alignment and edge clamping.
pub fn resize_bilinear(src: &[f64], (sh, sw): (usize, usize), (dh, dw): (usize, usize)) -> Vec<f64> {
    let coord = |d: usize, dn: usize, sn: usize| -> (usize, usize, f64) {
        let s = ((d as f64 + 0.5) * sn as f64 / dn as f64 - 0.5).clamp(0.0, (sn - 1) as f64);
        let i = s.floor() as usize;
        (i, (i + 1).min(sn - 1), s - i as f64)
    };
    let xs: Vec<_> = (0..dw).map(|x| coord(x, dw, sw)).collect();
    let mut out = Vec::with_capacity(dh * dw);
    for y in 0..dh {
        let (y0, y1, fy) = coord(y, dh, sh);
        for &(x0, x1, fx) in &xs {
            let top = src[y0 * sw + x0] * (1.0 - fx) + src[y0 * sw + x1] * fx;
            let bottom = src[y1 * sw + x0] * (1.0 - fx) + src[y1 * sw + x1] * fx;
            out.push(top * (1.0 - fy) + bottom * fy);
        }
    }
    out
}

fn to_f64<T: Element>(v: T) -> f64 {
    v.to_f64().unwrap_or(f64::NAN)
}

fn tap_dims<T: Element>(session: &Session<T>) -> Result<(usize, usize, usize)> {
    let layer = session
        .graph()
        .tap_layer(LAST_CONV_TAP)
        .ok_or_else(|| Error::Config(format!("model {} has no {LAST_CONV_TAP} tap", session.graph().arch)))?;
    match layer.out_shape[..] {
        [c, h, w] => Ok((c, h, w)),
        _ => Err(shape_err!("tap {LAST_CONV_TAP} is not a feature map: {:?}", layer.out_shape)),
    }
}

/// Channel-weighted sum of a `[C, H, W]` activation block.
fn weighted_sum(acts: &[f64], weights: &[f64], hw: usize) -> Vec<f64> {
    let mut out = vec![0.0; hw];
    for (c, &w) in weights.iter().enumerate() {
        if w == 0.0 {
            continue;
        }
        for (o, &a) in out.iter_mut().zip(&acts[c * hw..(c + 1) * hw]) {
            *o += w * a;
        }
    }
    out
}

fn single_input<T: Element>(session: &Session<T>, image: &Image) -> Result<Tensor<T>> {
    let input = Image::batch_tensor::<T>(&[image])?;
    session.check_input(&input)?;
    Ok(input)
}

/// Gradient-weighted CAM of the damage logit.
pub fn grad_cam<T: Element>(session: &mut Session<T>, image: &Image, sample_id: &str) -> Result<Heatmap> {
    let (c, h, w) = tap_dims(session)?;
    let input = single_input(session, image)?;
    let mut fwd = session.forward(&input, Mode::Infer)?;
    let tap = fwd
        .tap_var(LAST_CONV_TAP)
        .ok_or_else(|| Error::Config(format!("forward pass recorded no {LAST_CONV_TAP} tap")))?;
    let score = fwd.tape.sum(fwd.logits)?;
    let grads = fwd.tape.backward(score)?;
    let hw = h * w;
    let acts: Vec<f64> = fwd.tape.value(tap).data().iter().map(|&v| to_f64(v)).collect();
    let weights: Vec<f64> = match grads.get(tap) {
        Some(g) => g
            .data()
            .chunks_exact(hw)
            .map(|ch| ch.iter().map(|&v| to_f64(v)).sum::<f64>() / hw as f64)
            .collect(),
        None => vec![0.0; c],
    };
    let native = weighted_sum(&acts, &weights, hw);
    Ok(Heatmap::build(CamMethod::GradCam, sample_id, native, (h, w), (image.height(), image.width())))
}

/// Dense-weight CAM; needs a global-average-pool → dense(1) head.
pub fn original_cam<T: Element>(session: &mut Session<T>, image: &Image, sample_id: &str) -> Result<Heatmap> {
    let graph = session.graph().clone();
    if !graph.has_gap_dense_head() {
        return Err(Error::UnsupportedArchitecture(format!(
            "CAM needs a global-average-pool and single dense head; {} has {:?} ({:?} pooling)",
            graph.arch,
            graph.head_kinds(),
            graph.head_pool
        )));
    }
    let LayerKind::Dense { weight, .. } = graph.layers[graph.logit_layer].kind else {
        return Err(Error::UnsupportedArchitecture("logit layer is not dense".into()));
    };
    let (_, h, w) = tap_dims(session)?;
    let input = single_input(session, image)?;
    let (_, taps) = session.forward_with_taps(&input, Mode::Infer)?;
    let acts: Vec<f64> = taps[LAST_CONV_TAP].data().iter().map(|&v| to_f64(v)).collect();
    let weights: Vec<f64> = session.params()[weight].data().iter().map(|&v| to_f64(v)).collect();
    let native = weighted_sum(&acts, &weights, h * w);
    Ok(Heatmap::build(CamMethod::Cam, sample_id, native, (h, w), (image.height(), image.width())))
}

/// Softmax with max subtraction.
pub fn softmax(xs: &[f64]) -> Vec<f64> {
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = xs.iter().map(|&x| (x - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.iter().map(|v| v / s).collect()
}

/// Score-CAM: every tap channel, normalized and upsampled, masks the input;
/// the damage logits of the masked inputs, softmaxed over channels, weight
/// the channel sum. Masked inputs go through the model `batch` at a time.
pub fn score_cam<T: Element>(session: &mut Session<T>, image: &Image, sample_id: &str, batch: usize) -> Result<Heatmap> {
    let (c, h, w) = tap_dims(session)?;
    let input = single_input(session, image)?;
    let (_, taps) = session.forward_with_taps(&input, Mode::Infer)?;
    let acts: Vec<f64> = taps[LAST_CONV_TAP].data().iter().map(|&v| to_f64(v)).collect();
    let hw = h * w;
    let (ih, iw) = (image.height(), image.width());
    let channels = input.shape()[1];
    let pixels = input.data();
    let mut scores = Vec::with_capacity(c);
    let batch = batch.max(1);
    for start in (0..c).step_by(batch) {
        let end = (start + batch).min(c);
        let mut data = Vec::with_capacity((end - start) * pixels.len());
        for ch in start..end {
            let mask = resize_bilinear(&normalize(&acts[ch * hw..(ch + 1) * hw]), (h, w), (ih, iw));
            for k in 0..channels {
                let plane = &pixels[k * ih * iw..(k + 1) * ih * iw];
                data.extend(plane.iter().zip(&mask).map(|(&p, &m)| p * T::from_f64(m).unwrap_or(T::zero())));
            }
        }
        let masked = Tensor::new([end - start, channels, ih, iw], data)?;
        let fwd = session.forward(&masked, Mode::Infer)?;
        scores.extend(fwd.logit_values().iter().map(|&v| to_f64(v)));
    }
    let weights = softmax(&scores);
    let native = weighted_sum(&acts, &weights, hw);
    Ok(Heatmap::build(CamMethod::ScoreCam, sample_id, native, (h, w), (ih, iw)))
}

pub fn compute<T: Element>(session: &mut Session<T>, method: CamMethod, image: &Image, sample_id: &str) -> Result<Heatmap> {
    match method {
        CamMethod::Cam => original_cam(session, image, sample_id),
        CamMethod::GradCam => grad_cam(session, image, sample_id),
        CamMethod::ScoreCam => score_cam(session, image, sample_id, 16),
    }
}

pub fn lut_color(v: f64) -> [u8; 3] {
    PLASMA[(v.clamp(0.0, 1.0) * 255.0).round() as usize]
}

/// Blends the colormapped heatmap over the grayscale image.
pub fn render_overlay(heatmap: &Heatmap, image: &Image, alpha: f64) -> Result<Image> {
    if heatmap.size != (image.height(), image.width()) {
        return Err(shape_err!(
            "heatmap {:?} does not match image {}x{}",
            heatmap.size,
            image.width(),
            image.height()
        ));
    }
    let lum = image.luminance();
    let mut out = Image::new(image.width(), image.height());
    for (i, (px, &v)) in out.data_mut().chunks_exact_mut(3).zip(&heatmap.upsampled).enumerate() {
        let color = lut_color(v);
        for (o, &col) in px.iter_mut().zip(&color) {
            *o = ((1.0 - alpha) * lum[i] as f64 + alpha * col as f64).round().clamp(0.0, 255.0) as u8;
        }
    }
    Ok(out)
}

/// Heatmap rendered on its own through the colormap.
pub fn render_heatmap(heatmap: &Heatmap) -> Image {
    let (h, w) = heatmap.size;
    let mut out = Image::new(w, h);
    for (px, &v) in out.data_mut().chunks_exact_mut(3).zip(&heatmap.upsampled) {
        px.copy_from_slice(&lut_color(v));
    }
    out
}

/// Share of the upsampled heatmap's mass inside the mask grown by `dilation` px.
pub fn localization_energy(heatmap: &Heatmap, mask: &Mask, dilation: usize) -> Result<f64> {
    if heatmap.size != (mask.height(), mask.width()) {
        return Err(shape_err!(
            "heatmap {:?} does not match mask {}x{}",
            heatmap.size,
            mask.width(),
            mask.height()
        ));
    }
    let grown = mask.dilate(dilation);
    let total: f64 = heatmap.upsampled.iter().sum();
    if total <= 0.0 {
        return Ok(0.0);
    }
    let inside: f64 = heatmap
        .upsampled
        .iter()
        .zip(grown.data())
        .filter(|(_, &m)| m != 0)
        .map(|(&v, _)| v)
        .sum();
    Ok(inside / total)
}

/// Wall time in seconds of one heatmap per method per image.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkRow {
    pub sample_id: String,
    pub method: CamMethod,
    pub seconds: f64,
}

pub fn benchmark<T: Element>(
    session: &mut Session<T>,
    images: &[(&str, &Image)],
    methods: &[CamMethod],
) -> Result<Vec<BenchmarkRow>> {
    let mut rows = Vec::new();
    for &(id, image) in images {
        for &m in methods {
            let t0 = Instant::now();
            compute(session, m, image, id)?;
            rows.push(BenchmarkRow {
                sample_id: id.to_string(),
                method: m,
                seconds: t0.elapsed().as_secs_f64(),
            });
        }
    }
    Ok(rows)
}
