//! Training-time augmentation: rotation, channel shift, flips, brightness and
//! random erasing, applied in that order.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imaging::Image;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AugmentConfig {
    pub rotation_deg: f64,
    /// Additive per-channel shift bound on the 0-255 scale.
    pub channel_shift: f64,
    pub h_flip: bool,
    pub v_flip: bool,
    pub brightness_range: [f64; 2],
    pub erase_prob: f64,
    /// Fraction of the image area overwritten by one erase.
    pub erase_frac: [f64; 2],
    /// Width/height ratio range of the erased rectangle.
    pub erase_aspect: [f64; 2],
}

impl Default for AugmentConfig {
    fn default() -> Self {
        AugmentConfig {
            rotation_deg: 10.0,
            channel_shift: 25.0,
            h_flip: true,
            v_flip: true,
            brightness_range: [0.7, 1.3],
            erase_prob: 0.5,
            erase_frac: [0.25, 0.40],
            erase_aspect: [0.5, 2.0],
        }
    }
}

impl AugmentConfig {
    pub fn validate(&self) -> Result<()> {
        let ordered = |r: [f64; 2]| r[0].is_finite() && r[1].is_finite() && r[0] <= r[1];
        if !(self.rotation_deg >= 0.0) || !(self.channel_shift >= 0.0) {
            return Err(Error::Config("augment.rotation_deg and channel_shift must be non-negative".into()));
        }
        if !ordered(self.brightness_range) || self.brightness_range[0] < 0.0 {
            return Err(Error::Config("augment.brightness_range must be an ordered non-negative range".into()));
        }
        if !(0.0..=1.0).contains(&self.erase_prob) {
            return Err(Error::Config("augment.erase_prob must lie in [0, 1]".into()));
        }
        if !ordered(self.erase_frac) || self.erase_frac[0] <= 0.0 || self.erase_frac[1] > 1.0 {
            return Err(Error::Config("augment.erase_frac must be an ordered range in (0, 1]".into()));
        }
        if !ordered(self.erase_aspect) || self.erase_aspect[0] <= 0.0 {
            return Err(Error::Config("augment.erase_aspect must be an ordered positive range".into()));
        }
        Ok(())
    }

    /// Configuration whose every draw is the identity.
    pub fn identity() -> Self {
        AugmentConfig {
            rotation_deg: 0.0,
            channel_shift: 0.0,
            h_flip: false,
            v_flip: false,
            brightness_range: [1.0, 1.0],
            erase_prob: 0.0,
            ..AugmentConfig::default()
        }
    }
}

/// Axis-aligned pixel rectangle.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Rect {
    pub x: usize,
    pub y: usize,
    pub width: usize,
    pub height: usize,
}

/// Every random decision of one augmentation, drawn up front.
#[derive(Clone, Debug, PartialEq)]
pub struct AugmentDraw {
    pub angle_deg: f64,
    pub shift: [f64; 3],
    pub h_flip: bool,
    pub v_flip: bool,
    pub brightness: f64,
    pub erase: Option<Rect>,
}

impl AugmentDraw {
    pub fn identity() -> Self {
        AugmentDraw {
            angle_deg: 0.0,
            shift: [0.0; 3],
            h_flip: false,
            v_flip: false,
            brightness: 1.0,
            erase: None,
        }
    }
}

fn sym<R: Rng>(rng: &mut R, bound: f64) -> f64 {
    if bound > 0.0 {
        rng.random_range(-bound..=bound)
    } else {
        0.0
    }
}

fn range<R: Rng>(rng: &mut R, r: [f64; 2]) -> f64 {
    if r[1] > r[0] {
        rng.random_range(r[0]..=r[1])
    } else {
        r[0]
    }
}

/// Rectangle covering a fraction in `frac` of a `w`×`h` frame.
fn erase_rect<R: Rng>(rng: &mut R, cfg: &AugmentConfig, w: usize, h: usize) -> Rect {
    let total = (w * h) as f64;
    let in_range = |rw: usize, rh: usize| {
        let f = (rw * rh) as f64 / total;
        rw >= 1 && rh >= 1 && rw <= w && rh <= h && f >= cfg.erase_frac[0] && f <= cfg.erase_frac[1]
    };
    let place = |rng: &mut R, rw: usize, rh: usize| Rect {
        x: rng.random_range(0..=w - rw),
        y: rng.random_range(0..=h - rh),
        width: rw,
        height: rh,
    };
    for _ in 0..16 {
        let area = range(rng, cfg.erase_frac) * total;
        let aspect = range(rng, cfg.erase_aspect);
        let rw = (area * aspect).sqrt().round() as usize;
        let rh = (area / aspect).sqrt().round() as usize;
        if in_range(rw, rh) {
            return place(rng, rw, rh);
        }
    }
    // Full-width band of the target height, always realizable.
    let frac = range(rng, cfg.erase_frac);
    let rh = ((frac * h as f64).round() as usize).clamp(1, h);
    place(rng, w, rh)
}

pub fn draw<R: Rng>(cfg: &AugmentConfig, width: usize, height: usize, rng: &mut R) -> AugmentDraw {
    let angle_deg = sym(rng, cfg.rotation_deg);
    let shift = [
        sym(rng, cfg.channel_shift),
        sym(rng, cfg.channel_shift),
        sym(rng, cfg.channel_shift),
    ];
    let h_flip = cfg.h_flip && rng.random_bool(0.5);
    let v_flip = cfg.v_flip && rng.random_bool(0.5);
    let brightness = range(rng, cfg.brightness_range);
    let erase = (rng.random_bool(cfg.erase_prob)).then(|| erase_rect(rng, cfg, width, height));
    AugmentDraw {
        angle_deg,
        shift,
        h_flip,
        v_flip,
        brightness,
        erase,
    }
}

/// Bilinear rotation about the image center; samples from outside the frame are zero.
pub fn rotate(image: &Image, angle_deg: f64) -> Image {
    if angle_deg == 0.0 {
        return image.clone();
    }
    let (w, h) = (image.width(), image.height());
    let (cx, cy) = ((w as f64 - 1.0) / 2.0, (h as f64 - 1.0) / 2.0);
    let (s, c) = angle_deg.to_radians().sin_cos();
    let src = image.data();
    let px = |x: isize, y: isize, ch: usize| -> f64 {
        if x < 0 || y < 0 || x >= w as isize || y >= h as isize {
            0.0
        } else {
            src[(y as usize * w + x as usize) * 3 + ch] as f64
        }
    };
    let mut out = Image::new(w, h);
    for y in 0..h {
        for x in 0..w {
            let (dx, dy) = (x as f64 - cx, y as f64 - cy);
            // Inverse mapping: output pixel samples the source rotated back.
            let sx = c * dx + s * dy + cx;
            let sy = -s * dx + c * dy + cy;
            let (x0, y0) = (sx.floor(), sy.floor());
            let (fx, fy) = (sx - x0, sy - y0);
            let (x0, y0) = (x0 as isize, y0 as isize);
            let inside = x0 >= 0 && y0 >= 0 && x0 + 1 < w as isize && y0 + 1 < h as isize;
            let mut rgb = [0u8; 3];
            for (ch, v) in rgb.iter_mut().enumerate() {
                let [a, b, c, d] = if inside {
                    let i = (y0 as usize * w + x0 as usize) * 3 + ch;
                    [src[i], src[i + 3], src[i + w * 3], src[i + w * 3 + 3]].map(f64::from)
                } else {
                    [px(x0, y0, ch), px(x0 + 1, y0, ch), px(x0, y0 + 1, ch), px(x0 + 1, y0 + 1, ch)]
                };
                let top = a * (1.0 - fx) + b * fx;
                let bottom = c * (1.0 - fx) + d * fx;
                *v = (top * (1.0 - fy) + bottom * fy).round().clamp(0.0, 255.0) as u8;
            }
            out.set(x, y, rgb);
        }
    }
    out
}

pub fn flip_horizontal(image: &mut Image) {
    let w = image.width();
    for row in image.data_mut().chunks_exact_mut(w * 3) {
        for x in 0..w / 2 {
            for ch in 0..3 {
                row.swap(x * 3 + ch, (w - 1 - x) * 3 + ch);
            }
        }
    }
}

pub fn flip_vertical(image: &mut Image) {
    let (w, h) = (image.width(), image.height());
    let stride = w * 3;
    let data = image.data_mut();
    for y in 0..h / 2 {
        let (top, bottom) = data.split_at_mut((h - 1 - y) * stride);
        top[y * stride..(y + 1) * stride].swap_with_slice(&mut bottom[..stride]);
    }
}

/// Applies `d` in the fixed stage order; `rng` supplies the erase fill.
pub fn apply<R: Rng>(image: &Image, d: &AugmentDraw, rng: &mut R) -> Image {
    let degenerate = image.width() == 1 || image.height() == 1;
    let mut out = if degenerate { image.clone() } else { rotate(image, d.angle_deg) };
    if !degenerate && d.shift != [0.0; 3] {
        for p in out.data_mut().chunks_exact_mut(3) {
            for (v, s) in p.iter_mut().zip(d.shift) {
                *v = (*v as f64 + s).round().clamp(0.0, 255.0) as u8;
            }
        }
    }
    if d.h_flip {
        flip_horizontal(&mut out);
    }
    if d.v_flip {
        flip_vertical(&mut out);
    }
    if d.brightness != 1.0 {
        for v in out.data_mut() {
            *v = (*v as f64 * d.brightness).round().clamp(0.0, 255.0) as u8;
        }
    }
    if let (Some(r), false) = (d.erase, degenerate) {
        let w = out.width();
        let data = out.data_mut();
        for y in r.y..r.y + r.height {
            let i = (y * w + r.x) * 3;
            rng.fill_bytes(&mut data[i..i + r.width * 3]);
        }
    }
    out
}

/// Draws and applies one augmentation; the label passes through unchanged.
pub fn augment<R: Rng>(image: &Image, label: u8, cfg: &AugmentConfig, rng: &mut R) -> (Image, u8) {
    let d = draw(cfg, image.width(), image.height(), rng);
    (apply(image, &d, rng), label)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;

    fn pattern(w: usize, h: usize) -> Image {
        let mut im = Image::new(w, h);
        for (i, v) in im.data_mut().iter_mut().enumerate() {
            *v = (i * 31 % 256) as u8;
        }
        im
    }

    #[test]
    fn identity_draw_is_bit_exact() {
        let im = pattern(17, 11);
        let mut rng = stream(1, &[]);
        assert_eq!(apply(&im, &AugmentDraw::identity(), &mut rng), im);
        let (out, label) = augment(&im, 1, &AugmentConfig::identity(), &mut rng);
        assert_eq!((out, label), (im, 1));
    }

    #[test]
    fn flips_are_involutions() {
        let im = pattern(6, 5);
        let mut a = im.clone();
        flip_horizontal(&mut a);
        assert_ne!(a, im);
        assert_eq!(a.get(0, 0), im.get(5, 0));
        flip_horizontal(&mut a);
        assert_eq!(a, im);
        flip_vertical(&mut a);
        assert_eq!(a.get(2, 0), im.get(2, 4));
        flip_vertical(&mut a);
        assert_eq!(a, im);
    }

    #[test]
    fn rotation_zero_fills_corners() {
        let mut im = Image::new(21, 21);
        im.data_mut().fill(200);
        let r = rotate(&im, 10.0);
        assert_eq!(r.get(0, 0), [0, 0, 0]);
        assert_eq!(r.get(10, 10), [200, 200, 200]);
    }

    #[test]
    fn seeds_determine_outputs() {
        let im = pattern(32, 32);
        let cfg = AugmentConfig::default();
        let a = augment(&im, 0, &cfg, &mut stream(5, &[1])).0;
        let b = augment(&im, 0, &cfg, &mut stream(5, &[1])).0;
        let c = augment(&im, 0, &cfg, &mut stream(5, &[2])).0;
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn one_pixel_image_survives() {
        let im = pattern(1, 1);
        let mut rng = stream(3, &[]);
        for _ in 0..20 {
            let (out, _) = augment(&im, 0, &AugmentConfig::default(), &mut rng);
            assert_eq!((out.width(), out.height()), (1, 1));
        }
    }
}
