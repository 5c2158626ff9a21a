//! Line-delimited JSON dataset manifests: a header line followed by one
//! record per sample.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imaging::BBox;

pub const MANIFEST_KIND: &str = "vig-manifest";

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestHeader {
    pub kind: String,
    pub stage: String,
    pub seed: u64,
    pub config_hash: String,
}

impl ManifestHeader {
    pub fn new(stage: &str, seed: u64, config_hash: &str) -> Self {
        ManifestHeader {
            kind: MANIFEST_KIND.into(),
            stage: stage.into(),
            seed,
            config_hash: config_hash.into(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Record {
    pub id: String,
    /// Image path relative to the manifest's directory.
    pub path: String,
    pub label: u8,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bbox: Option<BBox>,
    pub parent_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub quadrant: Option<u8>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub split: Option<Split>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mask_path: Option<String>,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub discarded: bool,
    /// Reason the sample was set aside, e.g. a failed pillar detection.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub flag: Option<String>,
}

impl Record {
    pub fn new(id: &str, path: &str, label: u8, parent_id: &str) -> Self {
        Record {
            id: id.into(),
            path: path.into(),
            label,
            bbox: None,
            parent_id: parent_id.into(),
            quadrant: None,
            split: None,
            mask_path: None,
            discarded: false,
            flag: None,
        }
    }

    /// Usable for training and evaluation.
    pub fn active(&self) -> bool {
        !self.discarded && self.flag.is_none()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Manifest {
    pub header: ManifestHeader,
    pub records: Vec<Record>,
    /// Directory that relative record paths resolve against.
    pub root: PathBuf,
}

impl Manifest {
    pub fn new(header: ManifestHeader, root: impl Into<PathBuf>) -> Self {
        Manifest {
            header,
            records: Vec::new(),
            root: root.into(),
        }
    }

    pub fn resolve(&self, rel: &str) -> PathBuf {
        self.root.join(rel)
    }

    pub fn active(&self) -> impl Iterator<Item = &Record> {
        self.records.iter().filter(|r| r.active())
    }

    pub fn find(&self, id: &str) -> Option<&Record> {
        self.records.iter().find(|r| r.id == id)
    }

    pub fn to_jsonl(&self) -> String {
        let mut s = serde_json::to_string(&self.header).expect("header serializes");
        s.push('\n');
        for r in &self.records {
            let _ = writeln!(s, "{}", serde_json::to_string(r).expect("record serializes"));
        }
        s
    }

    pub fn parse(text: &str, path: &Path) -> Result<Self> {
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
        let (_, first) = lines
            .next()
            .ok_or_else(|| Error::format(path, "empty manifest"))?;
        let header: ManifestHeader =
            serde_json::from_str(first).map_err(|e| Error::format(path, format!("header: {e}")))?;
        if header.kind != MANIFEST_KIND {
            return Err(Error::format(path, format!("unknown manifest kind {:?}", header.kind)));
        }
        let mut records = Vec::new();
        for (i, line) in lines {
            let r: Record = serde_json::from_str(line)
                .map_err(|e| Error::format(path, format!("line {}: {e}", i + 1)))?;
            if r.label > 1 {
                return Err(Error::format(path, format!("line {}: label {} is not 0 or 1", i + 1, r.label)));
            }
            records.push(r);
        }
        let root = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(Manifest { header, records, root })
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, path)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        write_file(path, self.to_jsonl().as_bytes())
    }
}

/// Writes `bytes`, creating parent directories.
pub fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::imaging::BoxSource;

    #[test]
    fn jsonl_roundtrip() {
        let mut m = Manifest::new(ManifestHeader::new("synth", 42, "abc"), "/data");
        let mut r = Record::new("p0", "images/p0.png", 1, "p0");
        r.bbox = Some(BBox {
            cx: 1.5,
            cy: 2.0,
            width: 3.0,
            height: 4.0,
            source: BoxSource::Truth,
        });
        r.mask_path = Some("masks/p0.png".into());
        m.records.push(r);
        let mut q = Record::new("p1", "images/p1.png", 0, "p1");
        q.flag = Some("no pillar found".into());
        m.records.push(q);
        let text = m.to_jsonl();
        assert_eq!(text.lines().count(), 3);
        let back = Manifest::parse(&text, Path::new("/data/manifest.jsonl")).unwrap();
        assert_eq!(back, m);
        assert_eq!(back.active().count(), 1);
    }

    #[test]
    fn rejects_bad_label_and_kind() {
        let h = r#"{"kind":"vig-manifest","stage":"s","seed":1,"config_hash":"x"}"#;
        let bad = format!("{h}\n{{\"id\":\"a\",\"path\":\"a\",\"label\":2,\"parent_id\":\"a\"}}\n");
        assert!(Manifest::parse(&bad, Path::new("m")).is_err());
        assert!(Manifest::parse(r#"{"kind":"other","stage":"s","seed":1,"config_hash":"x"}"#, Path::new("m")).is_err());
    }
}
