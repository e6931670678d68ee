//! Dataset manifests: JSON files listing the four data splits.
//!
//! The manifest enforces the adaptation contract at load time: source entries
//! are labeled, target training entries must not carry masks (the pipeline
//! never sees target labels during training), and every referenced path must
//! resolve. Paths are stored relative to the manifest file.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One image, optionally paired with a mask.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub image: PathBuf,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub mask: Option<PathBuf>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct ManifestFile {
    n_c: usize,
    level_count: u32,
    source_train: Vec<ManifestEntry>,
    source_test: Vec<ManifestEntry>,
    target_train: Vec<ManifestEntry>,
    target_test: Vec<ManifestEntry>,
}

/// The loaded, validated dataset description. All paths are absolute.
#[derive(Debug, Clone)]
pub struct DatasetManifest {
    pub n_c: usize,
    pub level_count: u32,
    pub source_train: Vec<ManifestEntry>,
    pub source_test: Vec<ManifestEntry>,
    pub target_train: Vec<ManifestEntry>,
    pub target_test: Vec<ManifestEntry>,
}

impl DatasetManifest {
    pub fn source_train_len(&self) -> usize {
        self.source_train.len()
    }

    pub fn target_train_len(&self) -> usize {
        self.target_train.len()
    }
}

/// Loads and eagerly validates a manifest.
pub fn load_manifest(path: impl AsRef<Path>) -> Result<DatasetManifest> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let file: ManifestFile =
        serde_json::from_str(&text).map_err(|e| Error::Manifest(format!("{}: {e}", path.display())))?;

    if file.n_c < 2 {
        return Err(Error::Manifest(format!("n_c must be >= 2, got {}", file.n_c)));
    }
    if file.level_count < 2 {
        return Err(Error::Manifest(format!(
            "level_count must be >= 2, got {}",
            file.level_count
        )));
    }

    let root = path.parent().unwrap_or_else(|| Path::new(".")).to_path_buf();
    let resolve = |entries: &[ManifestEntry]| -> Result<Vec<ManifestEntry>> {
        entries
            .iter()
            .map(|e| {
                Ok(ManifestEntry {
                    image: resolve_existing(&root, &e.image)?,
                    mask: e.mask.as_ref().map(|m| resolve_existing(&root, m)).transpose()?,
                })
            })
            .collect()
    };

    let manifest = DatasetManifest {
        n_c: file.n_c,
        level_count: file.level_count,
        source_train: resolve(&file.source_train)?,
        source_test: resolve(&file.source_test)?,
        target_train: resolve(&file.target_train)?,
        target_test: resolve(&file.target_test)?,
    };

    for (split, entries) in [
        ("source_train", &manifest.source_train),
        ("source_test", &manifest.source_test),
    ] {
        for e in entries {
            if e.mask.is_none() {
                return Err(Error::Manifest(format!(
                    "{split} entry {} is missing its mask",
                    e.image.display()
                )));
            }
        }
    }
    for e in &manifest.target_train {
        if e.mask.is_some() {
            return Err(Error::Manifest(format!(
                "labels forbidden in target training split (entry {})",
                e.image.display()
            )));
        }
    }
    Ok(manifest)
}

/// Writes a manifest with paths stored relative to `path`'s directory when
/// possible.
pub fn save_manifest(manifest: &DatasetManifest, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let root = path.parent().unwrap_or_else(|| Path::new("."));
    let relativize = |entries: &[ManifestEntry]| {
        entries
            .iter()
            .map(|e| ManifestEntry {
                image: e.image.strip_prefix(root).unwrap_or(&e.image).to_path_buf(),
                mask: e
                    .mask
                    .as_ref()
                    .map(|m| m.strip_prefix(root).unwrap_or(m).to_path_buf()),
            })
            .collect()
    };
    let file = ManifestFile {
        n_c: manifest.n_c,
        level_count: manifest.level_count,
        source_train: relativize(&manifest.source_train),
        source_test: relativize(&manifest.source_test),
        target_train: relativize(&manifest.target_train),
        target_test: relativize(&manifest.target_test),
    };
    let text = serde_json::to_string_pretty(&file)
        .map_err(|e| Error::Manifest(e.to_string()))?;
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn resolve_existing(root: &Path, p: &Path) -> Result<PathBuf> {
    let abs = if p.is_absolute() {
        p.to_path_buf()
    } else {
        root.join(p)
    };
    if !abs.is_file() {
        return Err(Error::Manifest(format!("referenced file not found: {}", abs.display())));
    }
    Ok(abs)
}
