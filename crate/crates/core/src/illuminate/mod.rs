//! Illuminated trees: a fitted tree whose split nodes carry the feature
//! visualization of their channel and the class flow through them, and whose
//! leaves carry example images.

mod session;
mod svg;

use std::collections::BTreeSet;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use crate::model::parse_feature_name;
pub use session::{HistoryEntry, Session, SessionConfig};
pub use svg::{render_tree_svg, SvgStyle};

use crate::cellcrop::Split;
use crate::dtree::{class_flow, tree_accuracy, DecisionTree, FlowFraction};
use crate::error::{Error, IoContext, Result};
use crate::featviz::{VizCache, VizKey};
use crate::model::{feature_id_of, FeatureTable, TrainedModel};

pub const SCHEMA_VERSION: u32 = 1;

/// Which activation-maximization objective illustrates a split feature.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NodeObjective {
    /// The channel's activation averaged over all positions.
    #[default]
    ChannelMean,
    /// The activation at the split feature's own position.
    Positioned,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct IlluminateOptions {
    pub examples_per_leaf: usize,
    pub objective: NodeObjective,
    /// Directory holding visualization PNGs, relative to the output root.
    pub viz_dir: String,
}

impl Default for IlluminateOptions {
    fn default() -> Self {
        Self {
            examples_per_leaf: 9,
            objective: NodeObjective::ChannelMean,
            viz_dir: "viz".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExampleRef {
    /// Image path relative to the dataset root.
    pub path: String,
    pub label: usize,
    pub split: Split,
    /// Row in that split's feature table.
    pub row: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeAnnotation {
    pub id: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub feature_name: Option<String>,
    /// Visualization PNG, relative to the output root.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub viz: Option<String>,
    /// Per class, on the training table.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub class_flow: Option<Vec<FlowFraction>>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub examples: Vec<ExampleRef>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TreeMetrics {
    pub tree_train_acc: f64,
    pub tree_test_acc: Option<f64>,
    pub cnn_test_acc: Option<f64>,
    pub n_train: usize,
    pub n_test: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IlluminatedTree {
    pub schema_version: u32,
    pub layer: String,
    pub tree: DecisionTree,
    /// One entry per tree node, in node order.
    pub nodes: Vec<NodeAnnotation>,
    pub metrics: TreeMetrics,
    /// Feature names the tree was forbidden to use.
    pub excluded: Vec<String>,
}

impl IlluminatedTree {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let t: Self = serde_json::from_str(s)?;
        if t.nodes.len() != t.tree.nodes.len() {
            return Err(Error::Config(format!(
                "illuminated tree has {} annotations for {} nodes",
                t.nodes.len(),
                t.tree.nodes.len()
            )));
        }
        Ok(t)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?).at(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path).at(path)?)
    }

    /// Visualization paths referenced by split nodes, without repeats.
    pub fn viz_paths(&self) -> BTreeSet<&str> {
        self.nodes.iter().filter_map(|n| n.viz.as_deref()).collect()
    }
}

/// Inputs that do not change between rebuilds.
pub struct IlluminateContext<'a> {
    pub model: &'a TrainedModel,
    pub viz: &'a VizCache,
    pub train: &'a FeatureTable,
    pub test: Option<&'a FeatureTable>,
    pub cnn_test_acc: Option<f64>,
    pub options: &'a IlluminateOptions,
}

fn viz_key(layer: &str, feature: usize, shape: crate::model::LayerShape, objective: NodeObjective) -> Result<VizKey> {
    let id = feature_id_of(feature, shape)?;
    Ok(match objective {
        NodeObjective::ChannelMean => VizKey::channel(layer, id.channel),
        NodeObjective::Positioned => VizKey::positioned(layer, id.row, id.col, id.channel),
    })
}

/// Annotates `tree` with visualizations, class flows, leaf examples and metrics.
///
/// Visualizations are computed through `ctx.viz`, so nodes sharing a key
/// share one image.
pub fn build_illuminated_tree(tree: &DecisionTree, ctx: &IlluminateContext) -> Result<IlluminatedTree> {
    let layer = ctx.model.feature_layer().to_string();
    let shape = ctx.model.layer_shape(&layer)?;
    let layer_width = shape.0 * shape.1 * shape.2;
    if tree.width() != layer_width || tree.layer_shape != shape {
        return Err(Error::LayerMismatch {
            layer,
            tree: tree.width(),
            layer_width,
        });
    }
    for t in std::iter::once(ctx.train).chain(ctx.test) {
        if t.width() != layer_width {
            return Err(Error::LayerMismatch {
                layer,
                tree: t.width(),
                layer_width,
            });
        }
    }

    let keys: Vec<(usize, VizKey)> = tree
        .internal_nodes()
        .map(|n| Ok((n.id, viz_key(&layer, n.feature().expect("internal"), shape, ctx.options.objective)?)))
        .collect::<Result<_>>()?;
    let unique: BTreeSet<&VizKey> = keys.iter().map(|(_, k)| k).collect();
    let unique: Vec<&VizKey> = unique.into_iter().collect();
    unique
        .par_iter()
        .map(|k| ctx.viz.get_or_compute(ctx.model, k).map(|_| ()))
        .collect::<Result<Vec<()>>>()?;

    let flows = class_flow(tree, ctx.train)?;
    let mut nodes: Vec<NodeAnnotation> = tree
        .nodes
        .iter()
        .map(|n| {
            Ok(NodeAnnotation {
                id: n.id,
                feature_name: n.feature().map(|f| tree.feature_name(f)).transpose()?,
                viz: None,
                class_flow: None,
                examples: Vec::new(),
            })
        })
        .collect::<Result<_>>()?;
    for (id, key) in &keys {
        nodes[*id].viz = Some(format!("{}/{}", ctx.options.viz_dir, VizCache::png_name(key)));
    }
    for flow in flows {
        nodes[flow.node_id].class_flow = Some(flow.per_class);
    }
    if let Some(test) = ctx.test {
        for row in 0..test.n_rows() {
            let leaf = tree.route(test.row(row))?;
            let slot = &mut nodes[leaf.id].examples;
            if slot.len() < ctx.options.examples_per_leaf {
                slot.push(ExampleRef {
                    path: test.rows[row].path.to_string_lossy().into_owned(),
                    label: test.label(row),
                    split: test.rows[row].split,
                    row,
                });
            }
        }
    }

    let tree_test_acc = match ctx.test {
        Some(t) if !t.is_empty() => Some(tree_accuracy(tree, t)?),
        _ => None,
    };
    let excluded = tree
        .params
        .as_ref()
        .map(|p| p.excluded_features.iter().map(|&f| tree.feature_name(f)).collect::<Result<_>>())
        .transpose()?
        .unwrap_or_default();
    Ok(IlluminatedTree {
        schema_version: SCHEMA_VERSION,
        layer,
        tree: tree.clone(),
        nodes,
        metrics: TreeMetrics {
            tree_train_acc: tree_accuracy(tree, ctx.train)?,
            tree_test_acc,
            cnn_test_acc: ctx.cnn_test_acc,
            n_train: ctx.train.n_rows(),
            n_test: ctx.test.map_or(0, |t| t.n_rows()),
        },
        excluded,
    })
}
