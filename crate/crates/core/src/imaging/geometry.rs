use super::{BBox, Image, Mask};
use crate::error::{Error, Result};

/// Copies a `size`×`size` window at `(x0, y0)` (may lie partly outside the
/// source); uncovered pixels stay zero.
fn window(src: &[u8], w: usize, h: usize, ch: usize, x0: isize, y0: isize, size: usize) -> Vec<u8> {
    let mut out = vec![0u8; size * size * ch];
    let xs = x0.max(0);
    let xe = (x0 + size as isize).min(w as isize);
    if xe <= xs {
        return out;
    }
    for oy in 0..size {
        let sy = y0 + oy as isize;
        if sy < 0 || sy >= h as isize {
            continue;
        }
        let src_row = sy as usize * w;
        let from = (src_row + xs as usize) * ch;
        let to = (src_row + xe as usize) * ch;
        let dst = (oy * size + (xs - x0) as usize) * ch;
        out[dst..dst + (to - from)].copy_from_slice(&src[from..to]);
    }
    out
}

/// Top-left corner of the crop window: the rounded box center lands on pixel
/// `(crop/2, crop/2)` of the crop.
pub fn crop_origin(bbox: &BBox, crop: usize) -> (isize, isize) {
    let half = (crop / 2) as isize;
    (bbox.cx.round() as isize - half, bbox.cy.round() as isize - half)
}

fn check_crop(bbox: &BBox, w: usize, h: usize, crop: usize) -> Result<()> {
    if crop == 0 || crop % 2 != 0 {
        return Err(Error::Argument(format!("crop size {crop} must be even and positive")));
    }
    if !bbox.intersects(w, h) {
        return Err(Error::Argument(format!(
            "box centered at ({:.1}, {:.1}) lies outside the {w}x{h} image",
            bbox.cx, bbox.cy
        )));
    }
    Ok(())
}

/// Crop of `crop`×`crop` pixels centered on the box, zero-padded where the
/// window leaves the image.
pub fn crop_centered(image: &Image, bbox: &BBox, crop: usize) -> Result<Image> {
    check_crop(bbox, image.width(), image.height(), crop)?;
    let (x0, y0) = crop_origin(bbox, crop);
    Image::from_raw(crop, crop, window(image.data(), image.width(), image.height(), 3, x0, y0, crop))
}

pub fn crop_mask_centered(mask: &Mask, bbox: &BBox, crop: usize) -> Result<Mask> {
    check_crop(bbox, mask.width(), mask.height(), crop)?;
    let (x0, y0) = crop_origin(bbox, crop);
    Mask::from_raw(crop, crop, window(mask.data(), mask.width(), mask.height(), 1, x0, y0, crop))
}

/// Tile anchors `(x, y)` in quadrant order: top-left, top-right, bottom-left, bottom-right.
pub fn quadrant_anchors(size: usize, tile: usize) -> Result<[(usize, usize); 4]> {
    if tile == 0 || tile > size {
        return Err(Error::Argument(format!("tile {tile} does not fit in a {size}px image")));
    }
    if 2 * tile < size {
        return Err(Error::Argument(format!("four {tile}px tiles cannot cover a {size}px image")));
    }
    let o = size - tile;
    Ok([(0, 0), (o, 0), (0, o), (o, o)])
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Quadrant {
    pub index: usize,
    pub x: usize,
    pub y: usize,
    pub image: Image,
}

/// Four overlapping corner tiles of a square image.
pub fn quadrant_split(image: &Image, tile: usize) -> Result<Vec<Quadrant>> {
    if image.width() != image.height() {
        return Err(Error::Argument(format!(
            "quadrant split needs a square image, got {}x{}",
            image.width(),
            image.height()
        )));
    }
    let anchors = quadrant_anchors(image.width(), tile)?;
    anchors
        .iter()
        .enumerate()
        .map(|(index, &(x, y))| {
            let data = window(image.data(), image.width(), image.height(), 3, x as isize, y as isize, tile);
            Ok(Quadrant {
                index,
                x,
                y,
                image: Image::from_raw(tile, tile, data)?,
            })
        })
        .collect()
}

pub fn quadrant_split_mask(mask: &Mask, tile: usize) -> Result<Vec<Mask>> {
    let anchors = quadrant_anchors(mask.width(), tile)?;
    anchors
        .iter()
        .map(|&(x, y)| {
            Mask::from_raw(tile, tile, window(mask.data(), mask.width(), mask.height(), 1, x as isize, y as isize, tile))
        })
        .collect()
}

/// Pastes the tiles back at their anchors; later tiles win on overlaps.
pub fn reassemble_quadrants(tiles: &[Quadrant], size: usize) -> Result<Image> {
    let mut out = Image::new(size, size);
    for q in tiles {
        let t = q.image.width();
        if q.x + t > size || q.y + q.image.height() > size {
            return Err(Error::Argument(format!("tile {} overruns a {size}px image", q.index)));
        }
        for y in 0..q.image.height() {
            let src = &q.image.data()[y * t * 3..(y + 1) * t * 3];
            let off = ((q.y + y) * size + q.x) * 3;
            out.data_mut()[off..off + t * 3].copy_from_slice(src);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::imaging::BoxSource;

    fn gradient(size: usize) -> Image {
        let mut im = Image::new(size, size);
        for (i, v) in im.data_mut().iter_mut().enumerate() {
            *v = (i % 251) as u8;
        }
        im
    }

    fn bbox(cx: f64, cy: f64) -> BBox {
        BBox {
            cx,
            cy,
            width: 10.0,
            height: 10.0,
            source: BoxSource::Annotation,
        }
    }

    #[test]
    fn crop_puts_center_at_crop_center() {
        let im = gradient(50);
        let c = crop_centered(&im, &bbox(20.0, 30.0), 10).unwrap();
        assert_eq!(c.get(5, 5), im.get(20, 30));
        assert_eq!(c.get(0, 0), im.get(15, 25));
    }

    #[test]
    fn corner_pillar_zero_pads() {
        let im = gradient(50);
        let c = crop_centered(&im, &bbox(0.0, 0.0), 20).unwrap();
        assert_eq!(c.width(), 20);
        assert_eq!(c.get(9, 9), [0, 0, 0]);
        assert_eq!(c.get(10, 10), im.get(0, 0));
        let qs = quadrant_split(&c, 10).unwrap();
        assert!(qs[0].image.data().iter().all(|&v| v == 0));
    }

    #[test]
    fn crop_errors() {
        let im = gradient(50);
        assert!(crop_centered(&im, &bbox(10.0, 10.0), 11).is_err());
        assert!(crop_centered(&im, &bbox(-40.0, 10.0), 10).is_err());
    }

    #[test]
    fn overlap_band_and_anchors() {
        let a = quadrant_anchors(700, 352).unwrap();
        assert_eq!(a, [(0, 0), (348, 0), (0, 348), (348, 348)]);
        assert_eq!(2 * 352 - 700, 4);
        assert_eq!(quadrant_anchors(704, 352).unwrap()[3], (352, 352));
        assert!(quadrant_anchors(300, 352).is_err());
    }

    #[test]
    fn reassembly_is_exact() {
        let im = gradient(30);
        let qs = quadrant_split(&im, 16).unwrap();
        assert_eq!(reassemble_quadrants(&qs, 30).unwrap(), im);
    }
}
