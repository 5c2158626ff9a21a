//! RGB images, binary masks, PNG I/O, pillar localization and the
//! crop/quadrant geometry of the preprocessing stage.

mod detect;
mod geometry;
mod preprocess;
mod via;

use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{cst, Element, Tensor};

pub use detect::{locate_pillar, DetectorParams};
pub use geometry::{
    crop_centered, crop_mask_centered, crop_origin, quadrant_anchors, quadrant_split, quadrant_split_mask,
    reassemble_quadrants, Quadrant,
};
pub use preprocess::{preprocess, tile_id, ImagingConfig};
pub use via::{parse_via, read_via};

/// 8-bit RGB raster, row-major, channels interleaved.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Image {
    width: usize,
    height: usize,
    data: Vec<u8>,
}

impl Image {
    /// Black image.
    pub fn new(width: usize, height: usize) -> Self {
        assert!(width >= 1 && height >= 1, "image extents must be positive");
        Image {
            width,
            height,
            data: vec![0; width * height * 3],
        }
    }

    pub fn from_raw(width: usize, height: usize, data: Vec<u8>) -> Result<Self> {
        if width == 0 || height == 0 || data.len() != width * height * 3 {
            return Err(Error::Argument(format!(
                "{} bytes do not form a {width}x{height} RGB image",
                data.len()
            )));
        }
        Ok(Image { width, height, data })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [u8] {
        &mut self.data
    }

    pub fn get(&self, x: usize, y: usize) -> [u8; 3] {
        let i = (y * self.width + x) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    pub fn set(&mut self, x: usize, y: usize, rgb: [u8; 3]) {
        let i = (y * self.width + x) * 3;
        self.data[i..i + 3].copy_from_slice(&rgb);
    }

    /// Rec. 601 luma per pixel, in 0..=255.
    pub fn luminance(&self) -> Vec<f32> {
        self.data
            .chunks_exact(3)
            .map(|p| 0.299 * p[0] as f32 + 0.587 * p[1] as f32 + 0.114 * p[2] as f32)
            .collect()
    }

    pub fn to_grayscale(&self) -> Image {
        let mut out = self.clone();
        for (p, l) in out.data.chunks_exact_mut(3).zip(self.luminance()) {
            let v = l.round().clamp(0.0, 255.0) as u8;
            p.copy_from_slice(&[v, v, v]);
        }
        out
    }

    pub fn mean_brightness(&self) -> f64 {
        self.data.iter().map(|&v| v as f64).sum::<f64>() / self.data.len() as f64
    }

    /// Channel-planar `[3, H, W]` values scaled to [0, 1].
    pub fn to_chw<T: Element>(&self) -> Vec<T> {
        let hw = self.width * self.height;
        let scale = cst::<T>(1.0 / 255.0);
        let mut out = vec![T::zero(); 3 * hw];
        for (i, p) in self.data.chunks_exact(3).enumerate() {
            for c in 0..3 {
                out[c * hw + i] = cst::<T>(p[c] as f64) * scale;
            }
        }
        out
    }

    /// Stacks images of equal size into an `[N, 3, H, W]` tensor.
    pub fn batch_tensor<T: Element>(images: &[&Image]) -> Result<Tensor<T>> {
        let first = images
            .first()
            .ok_or_else(|| Error::Argument("empty image batch".into()))?;
        let (w, h) = (first.width, first.height);
        let mut data = Vec::with_capacity(images.len() * 3 * w * h);
        for im in images {
            if (im.width, im.height) != (w, h) {
                return Err(Error::Shape(format!(
                    "batch mixes {w}x{h} and {}x{} images",
                    im.width, im.height
                )));
            }
            data.extend(im.to_chw::<T>());
        }
        Tensor::new([images.len(), 3, h, w], data)
    }
}

/// Single-channel 0/1 mask at image resolution.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Mask {
    width: usize,
    height: usize,
    data: Vec<u8>,
}

impl Mask {
    pub fn new(width: usize, height: usize) -> Self {
        Mask {
            width,
            height,
            data: vec![0; width * height],
        }
    }

    pub fn from_raw(width: usize, height: usize, data: Vec<u8>) -> Result<Self> {
        if data.len() != width * height {
            return Err(Error::Argument(format!(
                "{} values do not form a {width}x{height} mask",
                data.len()
            )));
        }
        Ok(Mask {
            width,
            height,
            data: data.into_iter().map(|v| u8::from(v != 0)).collect(),
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn get(&self, x: usize, y: usize) -> bool {
        self.data[y * self.width + x] != 0
    }

    pub fn set(&mut self, x: usize, y: usize, on: bool) {
        self.data[y * self.width + x] = u8::from(on);
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&v| v != 0).count()
    }

    pub fn is_empty(&self) -> bool {
        self.count() == 0
    }

    /// Grows the mask by `radius` pixels (Euclidean disk structuring element).
    pub fn dilate(&self, radius: usize) -> Mask {
        if radius == 0 {
            return self.clone();
        }
        let r = radius as isize;
        let offsets: Vec<(isize, isize)> = (-r..=r)
            .flat_map(|dy| (-r..=r).map(move |dx| (dx, dy)))
            .filter(|(dx, dy)| dx * dx + dy * dy <= r * r)
            .collect();
        let mut out = Mask::new(self.width, self.height);
        let (w, h) = (self.width as isize, self.height as isize);
        for y in 0..h {
            for x in 0..w {
                if !self.get(x as usize, y as usize) {
                    continue;
                }
                for &(dx, dy) in &offsets {
                    let (nx, ny) = (x + dx, y + dy);
                    if nx >= 0 && ny >= 0 && nx < w && ny < h {
                        out.data[(ny * w + nx) as usize] = 1;
                    }
                }
            }
        }
        out
    }
}

/// Pixel box around a pillar.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BBox {
    pub cx: f64,
    pub cy: f64,
    pub width: f64,
    pub height: f64,
    pub source: BoxSource,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BoxSource {
    Annotation,
    Detector,
    Truth,
}

impl BBox {
    /// True when the box overlaps the `width`×`height` frame.
    pub fn intersects(&self, width: usize, height: usize) -> bool {
        let (x0, x1) = (self.cx - self.width / 2.0, self.cx + self.width / 2.0);
        let (y0, y1) = (self.cy - self.height / 2.0, self.cy + self.height / 2.0);
        x1 > 0.0 && y1 > 0.0 && x0 < width as f64 && y0 < height as f64
    }
}

fn decode_png(path: &Path) -> Result<(usize, usize, png::ColorType, Vec<u8>)> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut decoder = png::Decoder::new(BufReader::new(file));
    decoder.set_transformations(png::Transformations::EXPAND | png::Transformations::STRIP_16);
    let mut reader = decoder
        .read_info()
        .map_err(|e| Error::format(path, e.to_string()))?;
    let size = reader
        .output_buffer_size()
        .ok_or_else(|| Error::format(path, "image too large"))?;
    let mut buf = vec![0; size];
    let info = reader
        .next_frame(&mut buf)
        .map_err(|e| Error::format(path, e.to_string()))?;
    buf.truncate(info.buffer_size());
    Ok((info.width as usize, info.height as usize, info.color_type, buf))
}

fn encode_png(path: &Path, width: usize, height: usize, color: png::ColorType, data: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut enc = png::Encoder::new(BufWriter::new(file), width as u32, height as u32);
    enc.set_color(color);
    enc.set_depth(png::BitDepth::Eight);
    let mut writer = enc
        .write_header()
        .map_err(|e| Error::format(path, e.to_string()))?;
    writer
        .write_image_data(data)
        .map_err(|e| Error::format(path, e.to_string()))?;
    writer.finish().map_err(|e| Error::format(path, e.to_string()))
}

/// Grid of equally sized images, `cols` per row, separated by `gap` black pixels.
pub fn contact_sheet(images: &[Image], cols: usize, gap: usize) -> Result<Image> {
    let first = images
        .first()
        .ok_or_else(|| Error::Argument("contact sheet needs at least one image".into()))?;
    let (tw, th) = (first.width, first.height);
    if images.iter().any(|im| im.width != tw || im.height != th) {
        return Err(Error::Argument("contact sheet images must share one size".into()));
    }
    let cols = cols.clamp(1, images.len());
    let rows = images.len().div_ceil(cols);
    let w = cols * tw + (cols - 1) * gap;
    let h = rows * th + (rows - 1) * gap;
    let mut out = Image::new(w, h);
    for (i, im) in images.iter().enumerate() {
        let (ox, oy) = ((i % cols) * (tw + gap), (i / cols) * (th + gap));
        for y in 0..th {
            let dst = ((oy + y) * w + ox) * 3;
            out.data[dst..dst + tw * 3].copy_from_slice(&im.data[y * tw * 3..(y + 1) * tw * 3]);
        }
    }
    Ok(out)
}

/// Reads a PNG; gray, gray+alpha and RGBA inputs are converted to RGB.
pub fn load_image(path: &Path) -> Result<Image> {
    let (w, h, color, buf) = decode_png(path)?;
    let data = match color {
        png::ColorType::Rgb => buf,
        png::ColorType::Rgba => buf.chunks_exact(4).flat_map(|p| [p[0], p[1], p[2]]).collect(),
        png::ColorType::Grayscale => buf.iter().flat_map(|&v| [v, v, v]).collect(),
        png::ColorType::GrayscaleAlpha => buf.chunks_exact(2).flat_map(|p| [p[0], p[0], p[0]]).collect(),
        png::ColorType::Indexed => return Err(Error::format(path, "unexpanded palette image")),
    };
    Image::from_raw(w, h, data).map_err(|e| Error::format(path, e.to_string()))
}

pub fn save_image(image: &Image, path: &Path) -> Result<()> {
    encode_png(path, image.width, image.height, png::ColorType::Rgb, &image.data)
}

/// Reads a mask PNG; any nonzero luma counts as set.
pub fn load_mask(path: &Path) -> Result<Mask> {
    let im = load_image(path)?;
    let data = im.data.chunks_exact(3).map(|p| u8::from(p.iter().any(|&v| v != 0))).collect();
    Mask::from_raw(im.width, im.height, data)
}

/// Writes the mask as an 8-bit grayscale PNG with values 0 and 255.
pub fn save_mask(mask: &Mask, path: &Path) -> Result<()> {
    let data: Vec<u8> = mask.data.iter().map(|&v| if v != 0 { 255 } else { 0 }).collect();
    encode_png(path, mask.width, mask.height, png::ColorType::Grayscale, &data)
}
