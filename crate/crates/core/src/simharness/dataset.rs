use std::fs;
use std::path::{Path, PathBuf};

use super::HarnessError;
use crate::quantkernel::Label;

const IMAGE_EXTENSIONS: &[&str] = &["png", "pgm", "bmp", "jpg", "jpeg"];

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Sample {
    /// Path relative to the dataset root, `/`-separated. Doubles as the
    /// sample's identity for seeded draws.
    pub key: String,
    pub path: PathBuf,
    pub truth: Label,
}

/// A binary `{good, defect}` image folder.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Dataset {
    pub root: PathBuf,
    pub samples: Vec<Sample>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn count(&self, label: Label) -> usize {
        self.samples.iter().filter(|s| s.truth == label).count()
    }
}

pub fn is_image_file(path: &Path) -> bool {
    path.is_file()
        && path
            .extension()
            .and_then(|e| e.to_str())
            .is_some_and(|e| IMAGE_EXTENSIONS.contains(&e.to_ascii_lowercase().as_str()))
}

/// Image files directly inside `dir`, sorted by file name.
pub fn list_images(dir: &Path) -> Result<Vec<PathBuf>, HarnessError> {
    let entries = fs::read_dir(dir).map_err(|e| HarnessError::io(dir, e))?;
    let mut files = Vec::new();
    for entry in entries {
        let path = entry.map_err(|e| HarnessError::io(dir, e))?.path();
        if is_image_file(&path) {
            files.push(path);
        }
    }
    files.sort();
    Ok(files)
}

/// Loads `root/{good,defect}` or `root/val/{good,defect}`.
pub fn load_dataset(root: impl AsRef<Path>) -> Result<Dataset, HarnessError> {
    let root = root.as_ref();
    let base = if root.join("val").is_dir() && !root.join("good").is_dir() {
        root.join("val")
    } else {
        root.to_path_buf()
    };
    let mut samples = Vec::new();
    for label in [Label::Defect, Label::Good] {
        let dir = base.join(label.as_str());
        if !dir.is_dir() {
            return Err(HarnessError::MissingClassDir(dir));
        }
        for path in list_images(&dir)? {
            let rel = path.strip_prefix(root).unwrap_or(&path);
            let key = rel
                .components()
                .map(|c| c.as_os_str().to_string_lossy())
                .collect::<Vec<_>>()
                .join("/");
            samples.push(Sample {
                key,
                path,
                truth: label,
            });
        }
    }
    if samples.is_empty() {
        return Err(HarnessError::EmptyDataset(root.to_path_buf()));
    }
    samples.sort_by(|a, b| a.key.cmp(&b.key));
    Ok(Dataset {
        root: root.to_path_buf(),
        samples,
    })
}
