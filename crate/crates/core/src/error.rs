use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("no cell found: {0}")]
    NoCellFound(String),

    #[error("class directory `{0}` contains no images")]
    EmptyClass(String),

    #[error("dataset root {0} has no class directories")]
    EmptyDataset(PathBuf),

    #[error("split `{0}` is empty")]
    EmptySplit(String),

    #[error("training diverged at epoch {epoch}: loss is {loss}")]
    DivergedTraining { epoch: usize, loss: f64 },

    #[error("unknown layer `{0}`")]
    UnknownLayer(String),

    #[error("{what} out of range: {value} (limit {limit})")]
    OutOfRange {
        what: &'static str,
        value: usize,
        limit: usize,
    },

    #[error("bad feature name `{0}`: expected <row>_<col>_<channel>")]
    BadFeatureName(String),

    #[error("node has no samples")]
    EmptyNode,

    #[error("no split improves impurity")]
    NoSplit,

    #[error("feature table is empty")]
    EmptyTable,

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("no visualization cached for layer `{layer}` channel {channel}")]
    MissingVisualization { layer: String, channel: usize },

    #[error("tree width {tree} does not match layer `{layer}` width {layer_width}")]
    LayerMismatch {
        layer: String,
        tree: usize,
        layer_width: usize,
    },

    #[error("invalid image {path}: {reason}")]
    BadImage { path: PathBuf, reason: String },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("malformed file {path}: {reason}")]
    Format { path: PathBuf, reason: String },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Image(#[from] image::ImageError),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) trait IoContext<T> {
    fn at(self, path: impl Into<PathBuf>) -> Result<T>;
}

impl<T> IoContext<T> for std::io::Result<T> {
    fn at(self, path: impl Into<PathBuf>) -> Result<T> {
        self.map_err(|source| Error::Io {
            path: path.into(),
            source,
        })
    }
}
