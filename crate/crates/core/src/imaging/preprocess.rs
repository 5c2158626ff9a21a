//! Source manifest → pillar-centered crop → four quadrant tiles.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{
    crop_centered, crop_mask_centered, load_image, load_mask, locate_pillar, quadrant_split, quadrant_split_mask,
    save_image, save_mask, BBox, DetectorParams,
};
use crate::error::{Error, Result};
use crate::manifest::{Manifest, ManifestHeader, Record};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ImagingConfig {
    pub crop_size: usize,
    pub tile_size: usize,
    /// Locate pillars even when the manifest carries a box.
    pub use_detector: bool,
    pub detector: DetectorParams,
}

impl Default for ImagingConfig {
    fn default() -> Self {
        ImagingConfig::full()
    }
}

impl ImagingConfig {
    pub fn full() -> Self {
        ImagingConfig {
            crop_size: 700,
            tile_size: 352,
            use_detector: false,
            detector: DetectorParams::default(),
        }
    }

    pub fn half() -> Self {
        ImagingConfig {
            crop_size: 350,
            tile_size: 176,
            ..ImagingConfig::full()
        }
    }

    pub fn validate(&self) -> Result<()> {
        super::quadrant_anchors(self.crop_size, self.tile_size).map_err(|e| Error::Config(format!("imaging: {e}")))?;
        if self.crop_size % 2 != 0 {
            return Err(Error::Config(format!("imaging: crop_size {} must be even", self.crop_size)));
        }
        Ok(())
    }
}

pub fn tile_id(parent: &str, quadrant: usize) -> String {
    format!("{parent}_q{quadrant}")
}

fn process_one(src: &Manifest, rec: &Record, cfg: &ImagingConfig, out_dir: &Path) -> Result<Vec<Record>> {
    let image = load_image(&src.resolve(&rec.path))?;
    let bbox: BBox = match (&rec.bbox, cfg.use_detector) {
        (Some(b), false) => b.clone(),
        _ => match locate_pillar(&image, &cfg.detector) {
            Ok(b) => b,
            Err(Error::NoPillarFound(why)) => {
                let mut flagged = rec.clone();
                flagged.flag = Some(format!("no pillar found: {why}"));
                return Ok(vec![flagged]);
            }
            Err(e) => return Err(e),
        },
    };
    let crop = crop_centered(&image, &bbox, cfg.crop_size)?;
    let tiles = quadrant_split(&crop, cfg.tile_size)?;
    let masks = match &rec.mask_path {
        Some(p) => {
            let mask = load_mask(&src.resolve(p))?;
            Some(quadrant_split_mask(&crop_mask_centered(&mask, &bbox, cfg.crop_size)?, cfg.tile_size)?)
        }
        None => None,
    };
    let mut out = Vec::with_capacity(4);
    for q in tiles {
        let id = tile_id(&rec.id, q.index);
        let rel = format!("tiles/{id}.png");
        save_image(&q.image, &out_dir.join(&rel))?;
        let mut r = Record::new(&id, &rel, rec.label, &rec.id);
        r.quadrant = Some(q.index as u8);
        r.discarded = rec.discarded;
        if let Some(ms) = &masks {
            let mrel = format!("tile_masks/{id}.png");
            save_mask(&ms[q.index], &out_dir.join(&mrel))?;
            r.mask_path = Some(mrel);
        }
        out.push(r);
    }
    Ok(out)
}

/// Crops and splits every record of `src`, writing tiles (and mask tiles when
/// the source has masks) under `out_dir` plus a tile manifest. Records whose
/// pillar cannot be found are kept, flagged, without tiles.
pub fn preprocess(
    src: &Manifest,
    cfg: &ImagingConfig,
    seed: u64,
    config_hash: &str,
    out_dir: &Path,
    jobs: usize,
) -> Result<Manifest> {
    cfg.validate()?;
    let results = crate::par::map_indexed(src.records.len(), jobs, |i| {
        process_one(src, &src.records[i], cfg, out_dir)
    });
    let mut manifest = Manifest::new(ManifestHeader::new("preprocess", seed, config_hash), out_dir);
    for r in results {
        manifest.records.extend(r?);
    }
    manifest.write(&out_dir.join("manifest.jsonl"))?;
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::imaging::{BoxSource, Image};

    #[test]
    fn black_image_is_flagged_not_fatal() {
        let dir = tempfile::tempdir().unwrap();
        save_image(&Image::new(60, 60), &dir.path().join("a.png")).unwrap();
        let mut src = Manifest::new(ManifestHeader::new("synth", 1, "h"), dir.path());
        src.records.push(Record::new("a", "a.png", 0, "a"));
        let cfg = ImagingConfig {
            crop_size: 40,
            tile_size: 20,
            ..ImagingConfig::full()
        };
        let out = preprocess(&src, &cfg, 1, "h", &dir.path().join("pre"), 1).unwrap();
        assert_eq!(out.records.len(), 1);
        assert!(out.records[0].flag.as_deref().unwrap().starts_with("no pillar found"));
        assert_eq!(out.active().count(), 0);
    }

    #[test]
    fn stored_box_gives_four_tiles() {
        let dir = tempfile::tempdir().unwrap();
        save_image(&Image::new(60, 60), &dir.path().join("a.png")).unwrap();
        let mut src = Manifest::new(ManifestHeader::new("synth", 1, "h"), dir.path());
        let mut r = Record::new("a", "a.png", 1, "a");
        r.bbox = Some(BBox {
            cx: 30.0,
            cy: 30.0,
            width: 20.0,
            height: 20.0,
            source: BoxSource::Annotation,
        });
        src.records.push(r);
        let cfg = ImagingConfig {
            crop_size: 40,
            tile_size: 22,
            ..ImagingConfig::full()
        };
        let out = preprocess(&src, &cfg, 1, "h", &dir.path().join("pre"), 2).unwrap();
        let ids: Vec<&str> = out.records.iter().map(|r| r.id.as_str()).collect();
        assert_eq!(ids, ["a_q0", "a_q1", "a_q2", "a_q3"]);
        assert!(out.records.iter().all(|r| r.label == 1 && r.parent_id == "a"));
        let back = Manifest::read(&dir.path().join("pre/manifest.jsonl")).unwrap();
        assert_eq!(back.records, out.records);
    }
}
