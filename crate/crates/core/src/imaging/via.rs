//! Bounding boxes from VGG Image Annotator exports.

use std::collections::BTreeMap;
use std::path::Path;

use serde_json::Value;

use super::{BBox, BoxSource};
use crate::error::{Error, Result};

fn num(v: &Value, key: &str) -> Option<f64> {
    v.get(key).and_then(Value::as_f64)
}

fn region_box(shape: &Value) -> Option<BBox> {
    let bbox = |cx, cy, width, height| BBox {
        cx,
        cy,
        width,
        height,
        source: BoxSource::Annotation,
    };
    match shape.get("name").and_then(Value::as_str)? {
        "rect" => {
            let (x, y) = (num(shape, "x")?, num(shape, "y")?);
            let (w, h) = (num(shape, "width")?, num(shape, "height")?);
            Some(bbox(x + w / 2.0, y + h / 2.0, w, h))
        }
        "circle" => {
            let r = num(shape, "r")?;
            Some(bbox(num(shape, "cx")?, num(shape, "cy")?, 2.0 * r, 2.0 * r))
        }
        "ellipse" => {
            let (rx, ry) = (num(shape, "rx")?, num(shape, "ry")?);
            Some(bbox(num(shape, "cx")?, num(shape, "cy")?, 2.0 * rx, 2.0 * ry))
        }
        _ => None,
    }
}

/// Maps file name → first box-like region of each annotated file.
///
/// Accepts the per-image export (`{"<key>": {"filename": .., "regions": ..}}`)
/// and full project files with a `_via_img_metadata` section; regions may be
/// a list or an index-keyed object.
pub fn parse_via(text: &str, path: &Path) -> Result<BTreeMap<String, BBox>> {
    let root: Value = serde_json::from_str(text).map_err(|e| Error::format(path, e.to_string()))?;
    let images = root.get("_via_img_metadata").unwrap_or(&root);
    let images = images
        .as_object()
        .ok_or_else(|| Error::format(path, "expected an object of image records"))?;
    let mut out = BTreeMap::new();
    for (key, rec) in images {
        let Some(filename) = rec.get("filename").and_then(Value::as_str) else {
            continue;
        };
        let regions: Vec<&Value> = match rec.get("regions") {
            Some(Value::Array(a)) => a.iter().collect(),
            Some(Value::Object(o)) => o.values().collect(),
            _ => vec![],
        };
        let found = regions
            .iter()
            .filter_map(|r| r.get("shape_attributes").and_then(region_box))
            .next();
        match found {
            Some(b) => {
                out.insert(filename.to_string(), b);
            }
            None => log::warn!("{}: record {key} has no box region", path.display()),
        }
    }
    Ok(out)
}

pub fn read_via(path: &Path) -> Result<BTreeMap<String, BBox>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_via(&text, path)
}
