//! Named spatial features, per-image feature maps and the flattened
//! feature table the decision tree is fit on.
//!
//! Flattening is row-major with the channel index fastest:
//! `index = row·W·C + col·C + channel`. Every module that converts between
//! names like `6_5_9` and vector positions goes through [`feature_index`]
//! and [`feature_id_of`].

use std::fmt;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{LayerShape, TrainedModel};
use crate::cellcrop::{DatasetManifest, Split};
use crate::error::{Error, IoContext, Result};

/// One activation of a layer: spatial position plus channel.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct FeatureId {
    pub row: usize,
    pub col: usize,
    pub channel: usize,
}

impl FeatureId {
    pub fn new(row: usize, col: usize, channel: usize) -> Self {
        Self { row, col, channel }
    }
}

impl fmt::Display for FeatureId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}_{}_{}", self.row, self.col, self.channel)
    }
}

impl std::str::FromStr for FeatureId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        parse_feature_name(s)
    }
}

/// Parses `<row>_<col>_<channel>`, e.g. `6_5_9`.
pub fn parse_feature_name(s: &str) -> Result<FeatureId> {
    let bad = || Error::BadFeatureName(s.to_string());
    let mut parts = s.split('_');
    let mut next = || -> Result<usize> {
        let p = parts.next().ok_or_else(bad)?;
        if p.is_empty() || !p.bytes().all(|b| b.is_ascii_digit()) {
            return Err(bad());
        }
        p.parse().map_err(|_| bad())
    };
    let id = FeatureId::new(next()?, next()?, next()?);
    if parts.next().is_some() {
        return Err(bad());
    }
    Ok(id)
}

pub fn feature_index(id: FeatureId, (h, w, c): LayerShape) -> Result<usize> {
    for (what, value, limit) in [("row", id.row, h), ("col", id.col, w), ("channel", id.channel, c)] {
        if value >= limit {
            return Err(Error::OutOfRange { what, value, limit });
        }
    }
    Ok(id.row * w * c + id.col * c + id.channel)
}

pub fn feature_id_of(index: usize, (h, w, c): LayerShape) -> Result<FeatureId> {
    if index >= h * w * c {
        return Err(Error::OutOfRange {
            what: "feature index",
            value: index,
            limit: h * w * c,
        });
    }
    Ok(FeatureId::new(index / (w * c), (index / c) % w, index % c))
}

/// Post-ReLU activations of one layer for one image, `H × W × C`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureMap {
    pub layer_name: String,
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    /// Flattened with [`feature_index`] ordering.
    pub values: Vec<f64>,
}

impl FeatureMap {
    pub fn from_values(layer_name: &str, (h, w, c): LayerShape, values: Vec<f64>) -> Self {
        assert_eq!(values.len(), h * w * c);
        Self {
            layer_name: layer_name.to_string(),
            height: h,
            width: w,
            channels: c,
            values,
        }
    }

    pub fn shape(&self) -> LayerShape {
        (self.height, self.width, self.channels)
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize, channel: usize) -> f64 {
        self.values[(row * self.width + col) * self.channels + channel]
    }

    pub fn cell(&self, row: usize, col: usize) -> &[f64] {
        let start = (row * self.width + col) * self.channels;
        &self.values[start..start + self.channels]
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureRow {
    /// Image path relative to the table root.
    pub path: PathBuf,
    pub label: usize,
    pub split: Split,
}

/// Dense `rows × (H·W·C)` matrix of flattened feature maps with labels.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureTable {
    pub layer_name: String,
    pub layer_shape: LayerShape,
    pub class_order: Vec<String>,
    pub root: PathBuf,
    pub rows: Vec<FeatureRow>,
    data: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct TableHeader {
    layer_name: String,
    layer_shape: LayerShape,
    class_order: Vec<String>,
    root: PathBuf,
    rows: Vec<FeatureRow>,
}

const TABLE_MAGIC: &[u8; 8] = b"IDTFEAT1";

impl FeatureTable {
    pub fn new(
        layer_name: &str,
        layer_shape: LayerShape,
        class_order: Vec<String>,
        root: PathBuf,
        rows: Vec<FeatureRow>,
        data: Vec<f64>,
    ) -> Result<Self> {
        let width = layer_shape.0 * layer_shape.1 * layer_shape.2;
        if data.len() != rows.len() * width {
            return Err(Error::DimensionMismatch {
                expected: rows.len() * width,
                got: data.len(),
            });
        }
        if let Some(r) = rows.iter().find(|r| r.label >= class_order.len()) {
            return Err(Error::OutOfRange {
                what: "label",
                value: r.label,
                limit: class_order.len(),
            });
        }
        Ok(Self {
            layer_name: layer_name.to_string(),
            layer_shape,
            class_order,
            root,
            rows,
            data,
        })
    }

    /// In-memory table from plain vectors, treating each vector as a
    /// `1 × 1 × width` layer. Handy for tests and non-image data.
    pub fn from_vectors(vectors: &[Vec<f64>], labels: &[usize], class_order: Vec<String>) -> Result<Self> {
        let width = vectors.first().map_or(0, |v| v.len());
        if let Some(v) = vectors.iter().find(|v| v.len() != width) {
            return Err(Error::DimensionMismatch {
                expected: width,
                got: v.len(),
            });
        }
        let rows = labels
            .iter()
            .enumerate()
            .map(|(i, &label)| FeatureRow {
                path: PathBuf::from(format!("row{i}")),
                label,
                split: Split::Train,
            })
            .collect();
        Self::new(
            "input",
            (1, 1, width),
            class_order,
            PathBuf::new(),
            rows,
            vectors.concat(),
        )
    }

    pub fn n_rows(&self) -> usize {
        self.rows.len()
    }

    pub fn width(&self) -> usize {
        self.layer_shape.0 * self.layer_shape.1 * self.layer_shape.2
    }

    pub fn n_classes(&self) -> usize {
        self.class_order.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let w = self.width();
        &self.data[i * w..(i + 1) * w]
    }

    #[inline]
    pub fn value(&self, row: usize, feature: usize) -> f64 {
        self.data[row * self.width() + feature]
    }

    pub fn label(&self, i: usize) -> usize {
        self.rows[i].label
    }

    pub fn labels(&self) -> Vec<usize> {
        self.rows.iter().map(|r| r.label).collect()
    }

    pub fn image_path(&self, i: usize) -> PathBuf {
        self.root.join(&self.rows[i].path)
    }

    pub fn feature_name(&self, index: usize) -> Result<String> {
        Ok(feature_id_of(index, self.layer_shape)?.to_string())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let header = serde_json::to_vec(&TableHeader {
            layer_name: self.layer_name.clone(),
            layer_shape: self.layer_shape,
            class_order: self.class_order.clone(),
            root: self.root.clone(),
            rows: self.rows.clone(),
        })?;
        let file = std::fs::File::create(path).at(path)?;
        let mut out = std::io::BufWriter::new(file);
        out.write_all(TABLE_MAGIC).at(path)?;
        out.write_all(&(header.len() as u64).to_le_bytes()).at(path)?;
        out.write_all(&header).at(path)?;
        for v in &self.data {
            out.write_all(&v.to_le_bytes()).at(path)?;
        }
        out.flush().at(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let malformed = |reason: &str| Error::Format {
            path: path.to_path_buf(),
            reason: reason.to_string(),
        };
        let mut bytes = Vec::new();
        std::fs::File::open(path)
            .at(path)?
            .read_to_end(&mut bytes)
            .at(path)?;
        if bytes.len() < 16 || &bytes[..8] != TABLE_MAGIC {
            return Err(malformed("not a feature table"));
        }
        let hlen = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
        let body = 16 + hlen;
        if bytes.len() < body {
            return Err(malformed("truncated header"));
        }
        let h: TableHeader = serde_json::from_slice(&bytes[16..body])?;
        let width = h.layer_shape.0 * h.layer_shape.1 * h.layer_shape.2;
        if bytes.len() - body != h.rows.len() * width * 8 {
            return Err(malformed("data size does not match header"));
        }
        let data = bytes[body..]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        Self::new(&h.layer_name, h.layer_shape, h.class_order, h.root, h.rows, data)
    }
}

/// Runs every image of `split` (all splits when `None`) through the model
/// and flattens the `layer_name` feature map of each into one table row.
pub fn extract_feature_vectors(
    model: &TrainedModel,
    manifest: &DatasetManifest,
    layer_name: &str,
    split: Option<Split>,
) -> Result<FeatureTable> {
    let shape = model.layer_shape(layer_name)?;
    let entries: Vec<_> = manifest
        .entries
        .iter()
        .filter(|e| split.is_none_or(|s| e.split == s))
        .collect();
    let maps: Vec<Vec<f64>> = entries
        .par_iter()
        .map(|e| {
            let cell = crate::cellcrop::CellImage::load(&manifest.absolute(e), &e.class)?;
            Ok(model.forward_features(&cell, layer_name)?.values)
        })
        .collect::<Result<_>>()?;
    let rows = entries
        .iter()
        .map(|e| FeatureRow {
            path: e.path.clone(),
            label: manifest.class_index(&e.class).expect("entry class is listed"),
            split: e.split,
        })
        .collect();
    FeatureTable::new(
        layer_name,
        shape,
        model.class_order.clone(),
        manifest.root.clone(),
        rows,
        maps.concat(),
    )
}

/// Channels whose maximum activation over `maps` stays below `threshold`,
/// with that maximum.
pub fn dead_channels<'a>(maps: impl IntoIterator<Item = &'a FeatureMap>, threshold: f64) -> Vec<(usize, f64)> {
    let mut max: Vec<f64> = Vec::new();
    for m in maps {
        if max.is_empty() {
            max = vec![f64::NEG_INFINITY; m.channels];
        }
        for cell in m.values.chunks_exact(m.channels) {
            for (mx, &v) in max.iter_mut().zip(cell) {
                *mx = mx.max(v);
            }
        }
    }
    max.into_iter()
        .enumerate()
        .filter(|&(_, m)| m < threshold)
        .collect()
}

/// [`dead_channels`] over every image of the manifest.
pub fn dead_channel_report(
    model: &TrainedModel,
    manifest: &DatasetManifest,
    layer_name: &str,
    threshold: f64,
) -> Result<Vec<(usize, f64)>> {
    model.layer_shape(layer_name)?;
    if manifest.entries.is_empty() {
        return Err(Error::EmptySplit("all".into()));
    }
    let maps: Vec<FeatureMap> = manifest
        .entries
        .par_iter()
        .map(|e| {
            let cell = crate::cellcrop::CellImage::load(&manifest.absolute(e), &e.class)?;
            model.forward_features(&cell, layer_name)
        })
        .collect::<Result<_>>()?;
    Ok(dead_channels(&maps, threshold))
}
