use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use super::{BBox, BoxSource, Image};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DetectorParams {
    /// Brightness quantile used as the foreground threshold.
    pub quantile: f64,
    /// Components smaller than this (px) do not count as a pillar.
    pub min_area: usize,
    /// Half-width of the box blur applied before thresholding; 0 disables it.
    pub blur_radius: usize,
}

impl Default for DetectorParams {
    fn default() -> Self {
        DetectorParams {
            quantile: 0.98,
            min_area: 200,
            blur_radius: 2,
        }
    }
}

/// Separable box blur with edge clamping.
fn box_blur(src: &[f32], w: usize, h: usize, r: usize) -> Vec<f32> {
    if r == 0 {
        return src.to_vec();
    }
    let norm = 1.0 / (2 * r + 1) as f32;
    let mut tmp = vec![0.0; src.len()];
    for y in 0..h {
        let row = &src[y * w..(y + 1) * w];
        for x in 0..w {
            let mut s = 0.0;
            for d in 0..=2 * r {
                let xx = (x + d).saturating_sub(r).min(w - 1);
                s += row[xx];
            }
            tmp[y * w + x] = s * norm;
        }
    }
    let mut out = vec![0.0; src.len()];
    for y in 0..h {
        for x in 0..w {
            let mut s = 0.0;
            for d in 0..=2 * r {
                let yy = (y + d).saturating_sub(r).min(h - 1);
                s += tmp[yy * w + x];
            }
            out[y * w + x] = s * norm;
        }
    }
    out
}

/// Finds the pillar as the largest 8-connected component of pixels at or
/// above the brightness quantile and returns its intensity-weighted
/// centroid with the component's tight box.
pub fn locate_pillar(image: &Image, params: &DetectorParams) -> Result<BBox> {
    if !(0.0..=1.0).contains(&params.quantile) {
        return Err(Error::Argument(format!("quantile {} outside [0, 1]", params.quantile)));
    }
    let (w, h) = (image.width(), image.height());
    let lum = box_blur(&image.luminance(), w, h, params.blur_radius);
    let mut sorted = lum.clone();
    sorted.sort_by(f32::total_cmp);
    let idx = ((sorted.len() - 1) as f64 * params.quantile).round() as usize;
    let threshold = sorted[idx];
    let floor = sorted[0];
    let fg: Vec<bool> = lum.iter().map(|&v| v >= threshold && v > floor).collect();

    let mut label = vec![0u32; w * h];
    let mut best: Option<Vec<usize>> = None;
    let mut next = 0u32;
    let mut queue = VecDeque::new();
    for start in 0..w * h {
        if !fg[start] || label[start] != 0 {
            continue;
        }
        next += 1;
        label[start] = next;
        queue.push_back(start);
        let mut comp = Vec::new();
        while let Some(i) = queue.pop_front() {
            comp.push(i);
            let (x, y) = ((i % w) as isize, (i / w) as isize);
            for dy in -1..=1 {
                for dx in -1..=1 {
                    let (nx, ny) = (x + dx, y + dy);
                    if nx < 0 || ny < 0 || nx >= w as isize || ny >= h as isize {
                        continue;
                    }
                    let j = ny as usize * w + nx as usize;
                    if fg[j] && label[j] == 0 {
                        label[j] = next;
                        queue.push_back(j);
                    }
                }
            }
        }
        if best.as_ref().is_none_or(|b| comp.len() > b.len()) {
            best = Some(comp);
        }
    }
    let comp = match best {
        Some(c) if c.len() >= params.min_area => c,
        Some(c) => {
            return Err(Error::NoPillarFound(format!(
                "largest bright component has {} px, below the minimum of {}",
                c.len(),
                params.min_area
            )))
        }
        None => return Err(Error::NoPillarFound("no pixel above the brightness threshold".into())),
    };
    let (mut sw, mut sx, mut sy) = (0.0f64, 0.0f64, 0.0f64);
    let (mut x0, mut x1, mut y0, mut y1) = (w, 0, h, 0);
    for &i in &comp {
        let (x, y) = (i % w, i / w);
        let v = lum[i] as f64;
        sw += v;
        sx += v * x as f64;
        sy += v * y as f64;
        x0 = x0.min(x);
        x1 = x1.max(x);
        y0 = y0.min(y);
        y1 = y1.max(y);
    }
    Ok(BBox {
        cx: sx / sw,
        cy: sy / sw,
        width: (x1 - x0 + 1) as f64,
        height: (y1 - y0 + 1) as f64,
        source: BoxSource::Detector,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn disk(size: usize, cx: f64, cy: f64, r: f64) -> Image {
        let mut im = Image::new(size, size);
        for y in 0..size {
            for x in 0..size {
                let d = ((x as f64 - cx).powi(2) + (y as f64 - cy).powi(2)).sqrt();
                if d <= r {
                    im.set(x, y, [220, 220, 220]);
                }
            }
        }
        im
    }

    #[test]
    fn black_image_has_no_pillar() {
        let err = locate_pillar(&Image::new(64, 64), &DetectorParams::default()).unwrap_err();
        assert!(matches!(err, Error::NoPillarFound(_)));
    }

    #[test]
    fn small_blob_is_rejected() {
        let im = disk(100, 50.0, 50.0, 3.0);
        assert!(matches!(
            locate_pillar(&im, &DetectorParams::default()),
            Err(Error::NoPillarFound(_))
        ));
    }

    #[test]
    fn disk_center_found() {
        let im = disk(200, 90.0, 110.0, 20.0);
        let params = DetectorParams {
            quantile: 0.9,
            ..DetectorParams::default()
        };
        let b = locate_pillar(&im, &params).unwrap();
        assert!((b.cx - 90.0).abs() < 0.5 && (b.cy - 110.0).abs() < 0.5, "{b:?}");
        assert_eq!(b.source, BoxSource::Detector);
    }
}
