use std::collections::BTreeSet;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex, RwLock};

use serde::{Deserialize, Serialize};

use super::{build_illuminated_tree, render_tree_svg, ExampleRef, IlluminateContext, IlluminateOptions, IlluminatedTree, SvgStyle};
use crate::cellcrop::Split;
use crate::dtree::{fit_tree, DecisionTree, TreeParams};
use crate::error::{Error, IoContext, Result};
use crate::featviz::{VizCache, VizParams};
use crate::model::{feature_index, parse_feature_name, FeatureTable, TrainedModel};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SessionConfig {
    pub base_params: TreeParams,
    pub viz_params: VizParams,
    pub options: IlluminateOptions,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistoryEntry {
    pub index: usize,
    /// Exclusions requested for this entry, on top of the base exclusions.
    pub requested: Vec<String>,
    pub max_depth: usize,
    pub itree: IlluminatedTree,
}

#[derive(Serialize, Deserialize)]
struct SessionFile {
    config: SessionConfig,
    cnn_test_acc: Option<f64>,
    history: Vec<HistoryRecord>,
}

#[derive(Serialize, Deserialize)]
struct HistoryRecord {
    requested: Vec<String>,
    max_depth: usize,
    file: String,
}

/// A model, its feature tables and an append-only history of illuminated
/// trees. Entry 0 is the baseline.
///
/// On-disk layout:
/// ```text
/// model/               checkpoint
/// features/train.feats features/test.feats
/// viz/                 visualization PNGs and sidecars
/// history/NNN.json     one illuminated tree per entry
/// itree.json tree.json tree.svg metrics.json   latest entry
/// session.json
/// ```
pub struct Session {
    dir: PathBuf,
    model: TrainedModel,
    train: FeatureTable,
    test: Option<FeatureTable>,
    cnn_test_acc: Option<f64>,
    config: SessionConfig,
    viz: VizCache,
    history: RwLock<Vec<Arc<HistoryEntry>>>,
    rebuild: Mutex<()>,
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, bytes).at(&tmp)?;
    std::fs::rename(&tmp, path).at(path)
}

impl Session {
    /// Writes the model and tables under `dir` and builds the baseline entry,
    /// either from `baseline` or by fitting with the configured base params.
    /// A baseline tree that records its fit params overrides them.
    pub fn create(
        dir: &Path,
        model: TrainedModel,
        train: FeatureTable,
        test: Option<FeatureTable>,
        cnn_test_acc: Option<f64>,
        baseline: Option<DecisionTree>,
        mut config: SessionConfig,
    ) -> Result<Self> {
        for sub in ["model", "features", "history"] {
            let p = dir.join(sub);
            std::fs::create_dir_all(&p).at(&p)?;
        }
        if let Some(p) = baseline.as_ref().and_then(|t| t.params.clone()) {
            config.base_params = p;
        }
        config.base_params.validate(train.width())?;
        model.save(&dir.join("model"))?;
        train.save(&dir.join("features/train.feats"))?;
        if let Some(t) = &test {
            t.save(&dir.join("features/test.feats"))?;
        }
        let viz = VizCache::on_disk(&dir.join(&config.options.viz_dir), config.viz_params.clone())?;
        let session = Self {
            dir: dir.to_path_buf(),
            model,
            train,
            test,
            cnn_test_acc,
            config,
            viz,
            history: RwLock::new(Vec::new()),
            rebuild: Mutex::new(()),
        };
        let tree = match baseline {
            Some(t) => t,
            None => fit_tree(&session.train, &session.config.base_params)?,
        };
        let itree = build_illuminated_tree(&tree, &session.context())?;
        session.append(Vec::new(), session.config.base_params.max_depth, itree)?;
        Ok(session)
    }

    pub fn open(dir: &Path) -> Result<Self> {
        let path = dir.join("session.json");
        let file: SessionFile = serde_json::from_str(&std::fs::read_to_string(&path).at(&path)?)?;
        let model = TrainedModel::load(&dir.join("model"))?;
        let train = FeatureTable::load(&dir.join("features/train.feats"))?;
        let test_path = dir.join("features/test.feats");
        let test = if test_path.exists() {
            Some(FeatureTable::load(&test_path)?)
        } else {
            None
        };
        let viz = VizCache::on_disk(&dir.join(&file.config.options.viz_dir), file.config.viz_params.clone())?;
        let history = file
            .history
            .into_iter()
            .enumerate()
            .map(|(index, rec)| {
                Ok(Arc::new(HistoryEntry {
                    index,
                    requested: rec.requested,
                    max_depth: rec.max_depth,
                    itree: IlluminatedTree::load(&dir.join(&rec.file))?,
                }))
            })
            .collect::<Result<Vec<_>>>()?;
        if history.is_empty() {
            return Err(Error::Format {
                path,
                reason: "session has no baseline entry".into(),
            });
        }
        Ok(Self {
            dir: dir.to_path_buf(),
            model,
            train,
            test,
            cnn_test_acc: file.cnn_test_acc,
            config: file.config,
            viz,
            history: RwLock::new(history),
            rebuild: Mutex::new(()),
        })
    }

    fn context(&self) -> IlluminateContext<'_> {
        IlluminateContext {
            model: &self.model,
            viz: &self.viz,
            train: &self.train,
            test: self.test.as_ref(),
            cnn_test_acc: self.cnn_test_acc,
            options: &self.config.options,
        }
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn model(&self) -> &TrainedModel {
        &self.model
    }

    pub fn config(&self) -> &SessionConfig {
        &self.config
    }

    pub fn viz(&self) -> &VizCache {
        &self.viz
    }

    pub fn table(&self, split: Split) -> Option<&FeatureTable> {
        match split {
            Split::Train => Some(&self.train),
            Split::Test => self.test.as_ref(),
        }
    }

    /// Absolute path of an example image.
    pub fn image_path(&self, split: Split, row: usize) -> Option<PathBuf> {
        let t = self.table(split)?;
        (row < t.n_rows()).then(|| t.image_path(row))
    }

    /// Up to `k` example images routed through `node` of `tree`, in table
    /// order, drawn from the test table when there is one.
    pub fn node_examples(&self, tree: &DecisionTree, node: usize, k: usize) -> Result<Vec<ExampleRef>> {
        let table = self.test.as_ref().filter(|t| !t.is_empty()).unwrap_or(&self.train);
        Ok(tree
            .rows_through(table, node)?
            .into_iter()
            .take(k)
            .map(|row| ExampleRef {
                path: table.rows[row].path.to_string_lossy().into_owned(),
                label: table.label(row),
                split: table.rows[row].split,
                row,
            })
            .collect())
    }

    pub fn history(&self) -> Vec<Arc<HistoryEntry>> {
        self.history.read().expect("history lock").clone()
    }

    pub fn latest(&self) -> Arc<HistoryEntry> {
        self.history.read().expect("history lock").last().expect("baseline").clone()
    }

    pub fn baseline(&self) -> Arc<HistoryEntry> {
        self.history.read().expect("history lock")[0].clone()
    }

    /// Parses `r_c_ch` names into feature indices of the session's layer.
    pub fn resolve_exclusions(&self, names: &[String]) -> Result<BTreeSet<usize>> {
        names
            .iter()
            .map(|n| feature_index(parse_feature_name(n.trim())?, self.train.layer_shape))
            .collect()
    }

    /// Refits with the base exclusions plus `names`, appends the result to
    /// the history and makes it the latest entry. Rebuilds run one at a time.
    pub fn rebuild_with_exclusions(&self, names: &[String], max_depth: Option<usize>) -> Result<Arc<HistoryEntry>> {
        let requested = self.resolve_exclusions(names)?;
        let _guard = self.rebuild.lock().expect("rebuild lock");
        let mut params = self.config.base_params.clone();
        params.excluded_features.extend(requested.iter().copied());
        if let Some(d) = max_depth {
            params.max_depth = d;
        }
        let tree = fit_tree(&self.train, &params)?;
        let itree = build_illuminated_tree(&tree, &self.context())?;
        let names = requested
            .iter()
            .map(|&f| self.train.feature_name(f))
            .collect::<Result<Vec<_>>>()?;
        self.append(names, params.max_depth, itree)
    }

    fn append(&self, requested: Vec<String>, max_depth: usize, itree: IlluminatedTree) -> Result<Arc<HistoryEntry>> {
        let mut history = self.history.write().expect("history lock");
        let index = history.len();
        let file = format!("history/{index:03}.json");
        itree.save(&self.dir.join(&file))?;
        let entry = Arc::new(HistoryEntry {
            index,
            requested,
            max_depth,
            itree,
        });
        self.write_latest(&entry.itree)?;
        let mut records: Vec<HistoryRecord> = history
            .iter()
            .map(|e| HistoryRecord {
                requested: e.requested.clone(),
                max_depth: e.max_depth,
                file: format!("history/{:03}.json", e.index),
            })
            .collect();
        records.push(HistoryRecord {
            requested: entry.requested.clone(),
            max_depth,
            file,
        });
        let sf = SessionFile {
            config: self.config.clone(),
            cnn_test_acc: self.cnn_test_acc,
            history: records,
        };
        write_atomic(&self.dir.join("session.json"), serde_json::to_string_pretty(&sf)?.as_bytes())?;
        history.push(entry.clone());
        Ok(entry)
    }

    fn write_latest(&self, itree: &IlluminatedTree) -> Result<()> {
        write_atomic(&self.dir.join("itree.json"), itree.to_json()?.as_bytes())?;
        write_atomic(&self.dir.join("tree.json"), itree.tree.to_json()?.as_bytes())?;
        write_atomic(&self.dir.join("tree.svg"), render_tree_svg(itree, &SvgStyle::default()).as_bytes())?;
        write_atomic(
            &self.dir.join("metrics.json"),
            serde_json::to_string_pretty(&itree.metrics)?.as_bytes(),
        )
    }
}
