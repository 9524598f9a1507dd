use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::CellImage;
use crate::error::{Error, IoContext, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
        }
    }
}

impl std::str::FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "test" => Ok(Split::Test),
            other => Err(Error::Config(format!("unknown split `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    /// Relative to the manifest root.
    pub path: PathBuf,
    pub class: String,
    pub split: Split,
}

/// The labeled image list. Class order is lexicographic and defines the
/// label index used by every downstream stage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub root: PathBuf,
    pub classes: Vec<String>,
    pub seed: u64,
    pub split_fraction: f64,
    pub entries: Vec<ManifestEntry>,
}

impl DatasetManifest {
    pub fn class_index(&self, class: &str) -> Option<usize> {
        self.classes.iter().position(|c| c == class)
    }

    pub fn split(&self, split: Split) -> impl Iterator<Item = &ManifestEntry> {
        self.entries.iter().filter(move |e| e.split == split)
    }

    pub fn count(&self, split: Split) -> usize {
        self.split(split).count()
    }

    pub fn absolute(&self, entry: &ManifestEntry) -> PathBuf {
        self.root.join(&entry.path)
    }

    /// Loads every image of `split` as a [`CellImage`] with its label index.
    pub fn load_split(&self, split: Split) -> Result<Vec<(CellImage, usize)>> {
        use rayon::prelude::*;
        let entries: Vec<_> = self.split(split).collect();
        entries
            .par_iter()
            .map(|e| {
                let label = self.class_index(&e.class).expect("entry class is listed");
                Ok((CellImage::load(&self.absolute(e), &e.class)?, label))
            })
            .collect()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?).at(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).at(path)?;
        let m: Self = serde_json::from_str(&text)?;
        for e in &m.entries {
            if m.class_index(&e.class).is_none() {
                return Err(Error::Format {
                    path: path.to_path_buf(),
                    reason: format!("entry class `{}` not in class list", e.class),
                });
            }
        }
        Ok(m)
    }
}

fn is_image(path: &Path) -> bool {
    path.extension()
        .and_then(|e| e.to_str())
        .map(|e| matches!(e.to_ascii_lowercase().as_str(), "png" | "jpg" | "jpeg"))
        .unwrap_or(false)
}

/// Sorted `(class name, directory)` pairs under `root`.
pub(crate) fn class_dirs(root: &Path) -> Result<Vec<(String, PathBuf)>> {
    let mut dirs = Vec::new();
    for entry in std::fs::read_dir(root).at(root)? {
        let entry = entry.at(root)?;
        let path = entry.path();
        if path.is_dir() {
            let name = entry.file_name().to_string_lossy().into_owned();
            if !name.starts_with('.') {
                dirs.push((name, path));
            }
        }
    }
    dirs.sort();
    Ok(dirs)
}

/// Sorted image files directly inside `dir`.
pub(crate) fn image_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut files = Vec::new();
    for entry in std::fs::read_dir(dir).at(dir)? {
        let path = entry.at(dir)?.path();
        if path.is_file() && is_image(&path) {
            files.push(path);
        }
    }
    files.sort();
    Ok(files)
}

/// Lists `<root>/<class>/*.{png,jpg,jpeg}` and assigns a per-class
/// stratified train/test split. `split_fraction` is the train share.
pub fn build_manifest(root: &Path, split_fraction: f64, seed: u64) -> Result<DatasetManifest> {
    if !(0.0..=1.0).contains(&split_fraction) {
        return Err(Error::Config(format!("split fraction {split_fraction} outside [0, 1]")));
    }
    let dirs = class_dirs(root)?;
    if dirs.is_empty() {
        return Err(Error::EmptyDataset(root.to_path_buf()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut classes = Vec::new();
    let mut entries = Vec::new();
    for (class, dir) in dirs {
        let files = image_files(&dir)?;
        if files.is_empty() {
            return Err(Error::EmptyClass(class));
        }
        let mut order: Vec<usize> = (0..files.len()).collect();
        order.shuffle(&mut rng);
        let n_train = (files.len() as f64 * split_fraction).round() as usize;
        let mut split = vec![Split::Test; files.len()];
        for &i in &order[..n_train] {
            split[i] = Split::Train;
        }
        for (file, split) in files.into_iter().zip(split) {
            let rel = file.strip_prefix(root).unwrap_or(&file).to_path_buf();
            entries.push(ManifestEntry {
                path: rel,
                class: class.clone(),
                split,
            });
        }
        classes.push(class);
    }
    Ok(DatasetManifest {
        root: root.to_path_buf(),
        classes,
        seed,
        split_fraction,
        entries,
    })
}
