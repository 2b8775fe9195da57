//! Dataset manifests: CSV with header `image_path,mask_path,split`.

use std::collections::HashSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Record {
    pub image_path: PathBuf,
    pub mask_path: PathBuf,
    pub split: Split,
}

impl Record {
    /// The image file stem; names every per-image output.
    pub fn id(&self) -> String {
        image_id(&self.image_path)
    }
}

pub fn image_id(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default()
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Manifest {
    pub records: Vec<Record>,
}

impl Manifest {
    pub fn new(records: Vec<Record>) -> Result<Self> {
        let manifest = Self { records };
        manifest.validate()?;
        Ok(manifest)
    }

    /// Paths must be non-empty and unique, and image ids (file stems) must
    /// be unique because they name the outputs.
    pub fn validate(&self) -> Result<()> {
        let mut paths = HashSet::new();
        let mut ids = HashSet::new();
        for (i, r) in self.records.iter().enumerate() {
            let line = i + 2;
            for p in [&r.image_path, &r.mask_path] {
                if p.as_os_str().is_empty() {
                    return Err(Error::Manifest(format!("row {line}: empty path")));
                }
                if !paths.insert(p.clone()) {
                    return Err(Error::Manifest(format!(
                        "row {line}: duplicate path {}",
                        p.display()
                    )));
                }
            }
            let id = r.id();
            if id.is_empty() || !ids.insert(id.clone()) {
                return Err(Error::Manifest(format!("row {line}: duplicate or empty image id {id:?}")));
            }
        }
        Ok(())
    }

    pub fn from_csv(bytes: &[u8]) -> Result<Self> {
        let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(bytes);
        let header = reader
            .headers()
            .map_err(|e| Error::Manifest(e.to_string()))?
            .clone();
        if header.iter().collect::<Vec<_>>() != ["image_path", "mask_path", "split"] {
            return Err(Error::Manifest(format!(
                "header must be image_path,mask_path,split, found {}",
                header.iter().collect::<Vec<_>>().join(",")
            )));
        }
        let records = reader
            .deserialize()
            .collect::<std::result::Result<Vec<Record>, _>>()
            .map_err(|e| Error::Manifest(e.to_string()))?;
        Self::new(records)
    }

    pub fn to_csv(&self) -> Vec<u8> {
        let mut w = csv::Writer::from_writer(Vec::new());
        if self.records.is_empty() {
            w.write_record(["image_path", "mask_path", "split"]).expect("in-memory CSV");
        }
        // The header comes from the first serialized record.
        for r in &self.records {
            w.serialize(r).expect("in-memory CSV");
        }
        w.into_inner().expect("in-memory CSV")
    }

    /// Reads a manifest, resolving relative paths against its directory.
    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        let mut manifest = Self::from_csv(&bytes)
            .map_err(|e| match e {
                Error::Manifest(m) => Error::Manifest(format!("{}: {m}", path.display())),
                other => other,
            })?;
        let base = path.parent().unwrap_or(Path::new(""));
        for r in &mut manifest.records {
            r.image_path = base.join(&r.image_path);
            r.mask_path = base.join(&r.mask_path);
        }
        Ok(manifest)
    }

    pub fn split(&self, split: Split) -> impl Iterator<Item = &Record> {
        self.records.iter().filter(move |r| r.split == split)
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }
}
