//! Browser bindings: generate a synthetic pillar image, show the crop window
//! and its four quadrant tiles, and preview training augmentations.

use serde_json::json;
use vig_core::augment::{self, AugmentConfig, AugmentDraw};
use vig_core::imaging::{crop_centered, crop_mask_centered, crop_origin, quadrant_anchors, BBox, Image, ImagingConfig, Mask};
use vig_core::rng::{stream, tag};
use vig_core::synth::{self, SynthParams};
use wasm_bindgen::prelude::*;

/// Red used to paint crack-mask pixels.
const MASK_RGB: [u8; 3] = [255, 40, 40];

fn rgba(image: &Image, mask: Option<&Mask>) -> Vec<u8> {
    let mut out = Vec::with_capacity(image.width() * image.height() * 4);
    for y in 0..image.height() {
        for x in 0..image.width() {
            let rgb = match mask {
                Some(m) if m.get(x, y) => MASK_RGB,
                _ => image.get(x, y),
            };
            out.extend_from_slice(&[rgb[0], rgb[1], rgb[2], 255]);
        }
    }
    out
}

fn err(e: vig_core::Error) -> JsError {
    JsError::new(&e.to_string())
}

#[wasm_bindgen]
pub struct Demo {
    image: Image,
    mask: Mask,
    bbox: BBox,
    label: u8,
    arcs: usize,
    crop: Image,
    crop_mask: Mask,
    imaging: ImagingConfig,
    last_draw: AugmentDraw,
}

#[wasm_bindgen]
impl Demo {
    /// Sample drawn from the same seed stream the pipeline uses for image 0.
    #[wasm_bindgen(constructor)]
    pub fn new(seed: u64, damaged: bool) -> Result<Demo, JsError> {
        let params = SynthParams::half();
        let label = u8::from(damaged);
        let sample = synth::generate_sample(&params, label, "demo", &mut stream(seed, &[tag::SYNTH, 0])).map_err(err)?;
        let imaging = ImagingConfig::half();
        let bbox = sample.truth.bbox();
        let crop = crop_centered(&sample.image, &bbox, imaging.crop_size).map_err(err)?;
        let crop_mask = crop_mask_centered(&sample.mask, &bbox, imaging.crop_size).map_err(err)?;
        Ok(Demo {
            arcs: sample.truth.arcs.len(),
            image: sample.image,
            mask: sample.mask,
            bbox,
            label,
            crop,
            crop_mask,
            imaging,
            last_draw: AugmentDraw::identity(),
        })
    }

    pub fn width(&self) -> usize {
        self.image.width()
    }

    pub fn height(&self) -> usize {
        self.image.height()
    }

    pub fn crop_size(&self) -> usize {
        self.imaging.crop_size
    }

    /// Full frame as RGBA, crack pixels painted red when `show_mask` is set.
    pub fn image_rgba(&self, show_mask: bool) -> Vec<u8> {
        rgba(&self.image, show_mask.then_some(&self.mask))
    }

    pub fn crop_rgba(&self, show_mask: bool) -> Vec<u8> {
        rgba(&self.crop, show_mask.then_some(&self.crop_mask))
    }

    /// Crop window and quadrant tiles in frame coordinates, as JSON.
    pub fn geometry(&self) -> Result<String, JsError> {
        let (x0, y0) = crop_origin(&self.bbox, self.imaging.crop_size);
        let anchors = quadrant_anchors(self.imaging.crop_size, self.imaging.tile_size).map_err(err)?;
        let tiles: Vec<_> = anchors
            .iter()
            .enumerate()
            .map(|(q, &(ax, ay))| json!({ "quadrant": q, "x": x0 + ax as isize, "y": y0 + ay as isize }))
            .collect();
        Ok(json!({
            "label": self.label,
            "arcs": self.arcs,
            "pillar": { "cx": self.bbox.cx, "cy": self.bbox.cy, "radius": self.bbox.width / 2.0 },
            "crop": { "x": x0, "y": y0, "size": self.imaging.crop_size },
            "tile_size": self.imaging.tile_size,
            "overlap": 2 * self.imaging.tile_size - self.imaging.crop_size,
            "tiles": tiles,
        })
        .to_string())
    }

    /// One random augmentation of the crop; the draw is kept for `last_draw`.
    pub fn augment_rgba(&mut self, seed: u64) -> Vec<u8> {
        let mut rng = stream(seed, &[tag::PREVIEW]);
        let cfg = AugmentConfig::default();
        let d = augment::draw(&cfg, self.crop.width(), self.crop.height(), &mut rng);
        let out = augment::apply(&self.crop, &d, &mut rng);
        self.last_draw = d;
        rgba(&out, None)
    }

    /// Parameters of the latest augmentation, as JSON.
    pub fn last_draw(&self) -> String {
        let d = &self.last_draw;
        json!({
            "angle_deg": d.angle_deg,
            "shift": d.shift,
            "h_flip": d.h_flip,
            "v_flip": d.v_flip,
            "brightness": d.brightness,
            "erase": d.erase.map(|r| json!({ "x": r.x, "y": r.y, "width": r.width, "height": r.height })),
        })
        .to_string()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn buffers_match_dimensions() {
        let mut d = Demo::new(3, true).unwrap();
        assert_eq!(d.image_rgba(false).len(), d.width() * d.height() * 4);
        assert_eq!(d.crop_rgba(true).len(), d.crop_size() * d.crop_size() * 4);
        assert_eq!(d.augment_rgba(1).len(), d.crop_size() * d.crop_size() * 4);
        assert!(d.image_rgba(true) != d.image_rgba(false));
    }

    #[test]
    fn geometry_places_tiles_inside_the_crop() {
        let d = Demo::new(8, false).unwrap();
        let g: serde_json::Value = serde_json::from_str(&d.geometry().unwrap()).unwrap();
        assert_eq!(g["overlap"], 2);
        let cx = g["crop"]["x"].as_i64().unwrap();
        let ts = g["tile_size"].as_i64().unwrap();
        let xs: Vec<i64> = g["tiles"].as_array().unwrap().iter().map(|t| t["x"].as_i64().unwrap()).collect();
        assert_eq!(xs, vec![cx, cx + 350 - ts, cx, cx + 350 - ts]);
        assert_eq!(g["arcs"], 0);
    }

    #[test]
    fn augmentation_is_seeded() {
        let mut d = Demo::new(1, true).unwrap();
        let a = d.augment_rgba(5);
        let da = d.last_draw();
        let b = d.augment_rgba(5);
        assert_eq!(a, b);
        assert_eq!(da, d.last_draw());
        assert_ne!(a, d.augment_rgba(6));
    }
}
