//! CART decision trees over flattened feature vectors.
//!
//! Split orientation: a sample goes to the LEFT child when
//! `value > threshold`, and to the RIGHT child otherwise. This is the
//! reverse of the usual library convention.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{argmax, feature_id_of, feature_index, parse_feature_name, FeatureTable, LayerShape};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Criterion {
    #[default]
    Gini,
    Entropy,
}

impl Criterion {
    pub fn impurity(self, counts: &[usize]) -> Result<f64> {
        match self {
            Criterion::Gini => gini(counts),
            Criterion::Entropy => entropy(counts),
        }
    }

    fn of_nonempty(self, counts: &[usize], total: usize) -> f64 {
        let t = total as f64;
        match self {
            Criterion::Gini => 1.0 - counts.iter().map(|&c| (c as f64 / t).powi(2)).sum::<f64>(),
            Criterion::Entropy => counts
                .iter()
                .filter(|&&c| c > 0)
                .map(|&c| {
                    let p = c as f64 / t;
                    -p * p.log2()
                })
                .sum(),
        }
    }
}

impl std::str::FromStr for Criterion {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gini" => Ok(Criterion::Gini),
            "entropy" => Ok(Criterion::Entropy),
            _ => Err(Error::Config(format!("unknown criterion `{s}` (gini or entropy)"))),
        }
    }
}

/// `1 − Σ p_k²`.
pub fn gini(counts: &[usize]) -> Result<f64> {
    let total: usize = counts.iter().sum();
    if total == 0 {
        return Err(Error::EmptyNode);
    }
    Ok(Criterion::Gini.of_nonempty(counts, total))
}

/// Shannon entropy in bits.
pub fn entropy(counts: &[usize]) -> Result<f64> {
    let total: usize = counts.iter().sum();
    if total == 0 {
        return Err(Error::EmptyNode);
    }
    Ok(Criterion::Entropy.of_nonempty(counts, total))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TreeParams {
    pub max_depth: usize,
    pub min_samples_split: usize,
    pub min_samples_leaf: usize,
    pub excluded_features: BTreeSet<usize>,
    /// Recorded with the tree; fitting itself draws no randomness.
    pub seed: u64,
    pub criterion: Criterion,
}

impl Default for TreeParams {
    fn default() -> Self {
        Self {
            max_depth: 4,
            min_samples_split: 2,
            min_samples_leaf: 1,
            excluded_features: BTreeSet::new(),
            seed: 0,
            criterion: Criterion::Gini,
        }
    }
}

impl TreeParams {
    pub fn with_depth(max_depth: usize) -> Self {
        Self {
            max_depth,
            ..Self::default()
        }
    }

    pub fn validate(&self, width: usize) -> Result<()> {
        if self.max_depth < 1 {
            return Err(Error::Config("max_depth must be ≥ 1".into()));
        }
        if self.min_samples_split < 2 {
            return Err(Error::Config("min_samples_split must be ≥ 2".into()));
        }
        if self.min_samples_leaf < 1 {
            return Err(Error::Config("min_samples_leaf must be ≥ 1".into()));
        }
        if let Some(&f) = self.excluded_features.range(width..).next() {
            return Err(Error::OutOfRange {
                what: "excluded feature",
                value: f,
                limit: width,
            });
        }
        Ok(())
    }
}

/// A chosen split: rows with `value > threshold` go left.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitRule {
    pub feature: usize,
    pub threshold: f64,
    pub impurity_decrease: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TreeNode {
    pub id: usize,
    pub depth: usize,
    /// `(feature, threshold, left, right)` for internal nodes.
    pub split: Option<(usize, f64, usize, usize)>,
    pub histogram: Vec<usize>,
    pub predicted_class: usize,
}

impl TreeNode {
    pub fn is_leaf(&self) -> bool {
        self.split.is_none()
    }

    pub fn feature(&self) -> Option<usize> {
        self.split.map(|s| s.0)
    }

    pub fn n_samples(&self) -> usize {
        self.histogram.iter().sum()
    }
}

/// Nodes are stored in preorder; `nodes[i].id == i` and node 0 is the root.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(into = "TreeJson", try_from = "TreeJson")]
pub struct DecisionTree {
    pub class_order: Vec<String>,
    pub layer_shape: LayerShape,
    pub nodes: Vec<TreeNode>,
    /// Parameters the tree was fit with, when known.
    pub params: Option<TreeParams>,
}

impl DecisionTree {
    pub fn root(&self) -> &TreeNode {
        &self.nodes[0]
    }

    pub fn width(&self) -> usize {
        self.layer_shape.0 * self.layer_shape.1 * self.layer_shape.2
    }

    pub fn n_classes(&self) -> usize {
        self.class_order.len()
    }

    pub fn depth(&self) -> usize {
        self.nodes.iter().map(|n| n.depth).max().unwrap_or(0)
    }

    pub fn internal_nodes(&self) -> impl Iterator<Item = &TreeNode> {
        self.nodes.iter().filter(|n| !n.is_leaf())
    }

    pub fn leaves(&self) -> impl Iterator<Item = &TreeNode> {
        self.nodes.iter().filter(|n| n.is_leaf())
    }

    /// Features used by internal nodes, in node order, without repeats.
    pub fn used_features(&self) -> Vec<usize> {
        let mut seen = BTreeSet::new();
        self.internal_nodes()
            .filter_map(|n| n.feature())
            .filter(|f| seen.insert(*f))
            .collect()
    }

    pub fn feature_name(&self, index: usize) -> Result<String> {
        Ok(feature_id_of(index, self.layer_shape)?.to_string())
    }

    /// Leaf reached by `x`.
    pub fn route(&self, x: &[f64]) -> Result<&TreeNode> {
        if x.len() != self.width() {
            return Err(Error::DimensionMismatch {
                expected: self.width(),
                got: x.len(),
            });
        }
        let mut node = &self.nodes[0];
        while let Some((f, t, left, right)) = node.split {
            node = &self.nodes[if x[f] > t { left } else { right }];
        }
        Ok(node)
    }

    /// Ids of the nodes visited by `x`, root first.
    pub fn path(&self, x: &[f64]) -> Result<Vec<usize>> {
        let leaf = self.route(x)?.id;
        let mut path = vec![0];
        while let Some((f, t, left, right)) = self.nodes[*path.last().expect("non-empty")].split {
            path.push(if x[f] > t { left } else { right });
        }
        debug_assert_eq!(path.last(), Some(&leaf));
        Ok(path)
    }

    /// Rows of `table` whose path passes through `node`, in table order.
    pub fn rows_through(&self, table: &FeatureTable, node: usize) -> Result<Vec<usize>> {
        if node >= self.nodes.len() {
            return Err(Error::OutOfRange {
                what: "node id",
                value: node,
                limit: self.nodes.len(),
            });
        }
        self.check_table(table)?;
        let mut rows = Vec::new();
        for i in 0..table.n_rows() {
            if self.path(table.row(i))?.contains(&node) {
                rows.push(i);
            }
        }
        Ok(rows)
    }

    pub fn predict(&self, x: &[f64]) -> Result<usize> {
        Ok(self.route(x)?.predicted_class)
    }

    fn check_table(&self, table: &FeatureTable) -> Result<()> {
        if table.is_empty() {
            return Err(Error::EmptyTable);
        }
        if table.width() != self.width() {
            return Err(Error::DimensionMismatch {
                expected: self.width(),
                got: table.width(),
            });
        }
        Ok(())
    }
}

pub fn predict(tree: &DecisionTree, x: &[f64]) -> Result<usize> {
    tree.predict(x)
}

/// Fraction of rows whose prediction matches the label.
pub fn tree_accuracy(tree: &DecisionTree, table: &FeatureTable) -> Result<f64> {
    tree.check_table(table)?;
    let correct = (0..table.n_rows())
        .filter(|&i| tree.route(table.row(i)).map(|n| n.predicted_class).ok() == Some(table.label(i)))
        .count();
    Ok(correct as f64 / table.n_rows() as f64)
}

/// How one class's samples at a node divide between the two children.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FlowFraction {
    pub n: usize,
    pub left: f64,
    pub right: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassFlow {
    pub node_id: usize,
    /// Indexed by class. Classes absent from the node have `n == 0` and
    /// both fractions zero.
    pub per_class: Vec<FlowFraction>,
}

/// Per internal node (in node order), the share of each class sent left and right.
pub fn class_flow(tree: &DecisionTree, table: &FeatureTable) -> Result<Vec<ClassFlow>> {
    tree.check_table(table)?;
    let k = tree.n_classes();
    // counts[node][class] = (left, right)
    let mut counts = vec![vec![(0usize, 0usize); k]; tree.nodes.len()];
    for i in 0..table.n_rows() {
        let x = table.row(i);
        let label = table.label(i);
        let mut node = &tree.nodes[0];
        while let Some((f, t, left, right)) = node.split {
            let c = &mut counts[node.id][label];
            if x[f] > t {
                c.0 += 1;
                node = &tree.nodes[left];
            } else {
                c.1 += 1;
                node = &tree.nodes[right];
            }
        }
    }
    Ok(tree
        .internal_nodes()
        .map(|node| ClassFlow {
            node_id: node.id,
            per_class: counts[node.id]
                .iter()
                .map(|&(l, r)| {
                    let n = l + r;
                    if n == 0 {
                        FlowFraction { n, left: 0.0, right: 0.0 }
                    } else {
                        FlowFraction {
                            n,
                            left: l as f64 / n as f64,
                            right: r as f64 / n as f64,
                        }
                    }
                })
                .collect(),
        })
        .collect())
}

fn histogram(table: &FeatureTable, rows: &[usize]) -> Vec<usize> {
    let mut h = vec![0; table.n_classes()];
    for &r in rows {
        h[table.label(r)] += 1;
    }
    h
}

fn midpoint(a: f64, b: f64) -> f64 {
    let m = a + (b - a) / 2.0;
    // adjacent floats: keep `b > m` so the upper value still goes left
    if m < b {
        m
    } else {
        a
    }
}

/// Exhaustive search over non-excluded features and midpoint thresholds.
///
/// Ties go to the lowest feature index, then the lowest threshold. Splits
/// leaving fewer than `min_samples_leaf` rows on either side are skipped.
pub fn best_split(table: &FeatureTable, rows: &[usize], params: &TreeParams) -> Result<SplitRule> {
    let k = table.n_classes();
    let n = rows.len();
    let parent = histogram(table, rows);
    if n < 2 || parent.iter().filter(|&&c| c > 0).count() < 2 {
        return Err(Error::NoSplit);
    }
    let crit = params.criterion;
    let parent_imp = crit.of_nonempty(&parent, n);
    let min_leaf = params.min_samples_leaf.max(1);

    let mut best: Option<SplitRule> = None;
    let mut pairs: Vec<(f64, usize)> = Vec::with_capacity(n);
    let mut below = vec![0usize; k];
    let mut above = vec![0usize; k];
    for f in 0..table.width() {
        if params.excluded_features.contains(&f) {
            continue;
        }
        pairs.clear();
        pairs.extend(rows.iter().map(|&r| (table.value(r, f), table.label(r))));
        pairs.sort_unstable_by(|a, b| a.0.total_cmp(&b.0));
        if pairs[0].0 == pairs[n - 1].0 {
            continue;
        }
        below.fill(0);
        above.copy_from_slice(&parent);
        // Sweep upward; `below` holds rows ≤ threshold (the right branch).
        for i in 0..n - 1 {
            let (v, label) = pairs[i];
            below[label] += 1;
            above[label] -= 1;
            let next = pairs[i + 1].0;
            if next == v {
                continue;
            }
            let (nr, nl) = (i + 1, n - i - 1);
            if nr < min_leaf || nl < min_leaf {
                continue;
            }
            let child = (nr as f64 * crit.of_nonempty(&below, nr) + nl as f64 * crit.of_nonempty(&above, nl)) / n as f64;
            let decrease = parent_imp - child;
            if best.is_none_or(|b| decrease > b.impurity_decrease + 1e-12) {
                best = Some(SplitRule {
                    feature: f,
                    threshold: midpoint(v, next),
                    impurity_decrease: decrease,
                });
            }
        }
    }
    match best {
        Some(b) if b.impurity_decrease > 1e-12 => Ok(b),
        _ => Err(Error::NoSplit),
    }
}

/// Greedy recursive partitioning; node ids follow preorder (left subtree first).
pub fn fit_tree(table: &FeatureTable, params: &TreeParams) -> Result<DecisionTree> {
    if table.is_empty() {
        return Err(Error::EmptyTable);
    }
    params.validate(table.width())?;
    let mut nodes = Vec::new();
    let rows: Vec<usize> = (0..table.n_rows()).collect();
    grow(table, params, rows, 0, &mut nodes);
    Ok(DecisionTree {
        class_order: table.class_order.clone(),
        layer_shape: table.layer_shape,
        nodes,
        params: Some(params.clone()),
    })
}

fn grow(table: &FeatureTable, params: &TreeParams, rows: Vec<usize>, depth: usize, nodes: &mut Vec<TreeNode>) -> usize {
    let hist = histogram(table, &rows);
    let id = nodes.len();
    nodes.push(TreeNode {
        id,
        depth,
        split: None,
        predicted_class: argmax(&hist.iter().map(|&c| c as f64).collect::<Vec<_>>()),
        histogram: hist,
    });
    if depth >= params.max_depth || rows.len() < params.min_samples_split {
        return id;
    }
    let Ok(rule) = best_split(table, &rows, params) else {
        return id;
    };
    let (left_rows, right_rows): (Vec<usize>, Vec<usize>) =
        rows.iter().partition(|&&r| table.value(r, rule.feature) > rule.threshold);
    drop(rows);
    let left = grow(table, params, left_rows, depth + 1, nodes);
    let right = grow(table, params, right_rows, depth + 1, nodes);
    nodes[id].split = Some((rule.feature, rule.threshold, left, right));
    id
}

#[derive(Serialize, Deserialize)]
struct TreeJson {
    class_order: Vec<String>,
    layer_shape: LayerShape,
    nodes: Vec<NodeJson>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    params: Option<TreeParams>,
}

#[derive(Serialize, Deserialize)]
struct NodeJson {
    id: usize,
    feature: Option<String>,
    threshold: Option<f64>,
    left: Option<usize>,
    right: Option<usize>,
    histogram: Vec<usize>,
    predicted_class: usize,
}

impl From<DecisionTree> for TreeJson {
    fn from(t: DecisionTree) -> Self {
        let nodes = t
            .nodes
            .iter()
            .map(|n| NodeJson {
                id: n.id,
                feature: n.split.map(|s| feature_id_of(s.0, t.layer_shape).expect("feature in range").to_string()),
                threshold: n.split.map(|s| s.1),
                left: n.split.map(|s| s.2),
                right: n.split.map(|s| s.3),
                histogram: n.histogram.clone(),
                predicted_class: n.predicted_class,
            })
            .collect();
        TreeJson {
            class_order: t.class_order,
            layer_shape: t.layer_shape,
            nodes,
            params: t.params,
        }
    }
}

impl TryFrom<TreeJson> for DecisionTree {
    type Error = Error;

    fn try_from(j: TreeJson) -> Result<Self> {
        let bad = |msg: String| Error::Config(format!("invalid tree: {msg}"));
        let n = j.nodes.len();
        if n == 0 {
            return Err(bad("no nodes".into()));
        }
        let mut nodes: Vec<TreeNode> = Vec::with_capacity(n);
        for (i, nj) in j.nodes.into_iter().enumerate() {
            if nj.id != i {
                return Err(bad(format!("node {i} has id {}", nj.id)));
            }
            if nj.histogram.len() != j.class_order.len() {
                return Err(bad(format!("node {i} histogram length")));
            }
            let split = match (nj.feature, nj.threshold, nj.left, nj.right) {
                (None, None, None, None) => None,
                (Some(name), Some(t), Some(l), Some(r)) => {
                    if l >= n || r >= n || l <= i || r <= i {
                        return Err(bad(format!("node {i} children out of order")));
                    }
                    Some((feature_index(parse_feature_name(&name)?, j.layer_shape)?, t, l, r))
                }
                _ => return Err(bad(format!("node {i} is neither leaf nor internal"))),
            };
            nodes.push(TreeNode {
                id: i,
                depth: 0,
                split,
                histogram: nj.histogram,
                predicted_class: nj.predicted_class,
            });
        }
        for i in 0..n {
            if let Some((_, _, l, r)) = nodes[i].split {
                let d = nodes[i].depth + 1;
                nodes[l].depth = d;
                nodes[r].depth = d;
            }
        }
        Ok(DecisionTree {
            class_order: j.class_order,
            layer_shape: j.layer_shape,
            nodes,
            params: j.params,
        })
    }
}

impl DecisionTree {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        use crate::error::IoContext;
        std::fs::write(path, self.to_json()?).at(path)
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        use crate::error::IoContext;
        Self::from_json(&std::fs::read_to_string(path).at(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn table(vectors: &[Vec<f64>], labels: &[usize], k: usize) -> FeatureTable {
        let names = (0..k).map(|i| format!("c{i}")).collect();
        FeatureTable::from_vectors(vectors, labels, names).unwrap()
    }

    fn all(t: &FeatureTable) -> Vec<usize> {
        (0..t.n_rows()).collect()
    }

    #[test]
    fn gini_examples() {
        assert_eq!(gini(&[4, 0]).unwrap(), 0.0);
        assert_eq!(gini(&[2, 2]).unwrap(), 0.5);
        assert_eq!(gini(&[3, 1]).unwrap(), 0.375);
        assert!(matches!(gini(&[0, 0]), Err(Error::EmptyNode)));
        assert_eq!(entropy(&[2, 2]).unwrap(), 1.0);
        assert_eq!(entropy(&[5, 0]).unwrap(), 0.0);
    }

    #[test]
    fn one_feature_midpoint() {
        let t = table(&[vec![0.1], vec![0.2], vec![0.8], vec![0.9]], &[0, 0, 1, 1], 2);
        let s = best_split(&t, &all(&t), &TreeParams::default()).unwrap();
        assert_eq!(s.feature, 0);
        assert!((s.threshold - 0.5).abs() < 1e-12);
        assert!((s.impurity_decrease - 0.5).abs() < 1e-12);
    }

    #[test]
    fn identical_samples_do_not_split() {
        let t = table(&vec![vec![1.0, 2.0]; 4], &[0, 1, 0, 1], 2);
        assert!(matches!(best_split(&t, &all(&t), &TreeParams::default()), Err(Error::NoSplit)));
        let tree = fit_tree(&t, &TreeParams::default()).unwrap();
        assert_eq!(tree.nodes.len(), 1);
    }

    #[test]
    fn excluding_best_feature_gives_runner_up() {
        // feature 1 separates perfectly, feature 0 only partially
        let v = vec![vec![0.0, 0.0], vec![1.0, 0.1], vec![0.0, 1.0], vec![2.0, 1.1]];
        let t = table(&v, &[0, 0, 1, 1], 2);
        let s = best_split(&t, &all(&t), &TreeParams::default()).unwrap();
        assert_eq!(s.feature, 1);
        let params = TreeParams {
            excluded_features: [1].into(),
            ..TreeParams::default()
        };
        let s = best_split(&t, &all(&t), &params).unwrap();
        assert_eq!(s.feature, 0);
        assert_eq!(s.threshold, 1.5);
    }

    #[test]
    fn ties_prefer_lowest_feature_then_threshold() {
        // features 0 and 1 are identical copies
        let v = vec![vec![0.0, 0.0], vec![1.0, 1.0], vec![2.0, 2.0], vec![3.0, 3.0]];
        let t = table(&v, &[0, 1, 0, 1], 2);
        let s = best_split(&t, &all(&t), &TreeParams::default()).unwrap();
        assert_eq!(s.feature, 0);
        // thresholds 0.5 and 2.5 give equal decrease
        assert_eq!(s.threshold, 0.5);
    }

    #[test]
    fn greater_goes_left() {
        let t = table(&[vec![0.0], vec![1.0]], &[0, 1], 2);
        let tree = fit_tree(&t, &TreeParams::with_depth(1)).unwrap();
        let (f, thr, l, r) = tree.root().split.unwrap();
        assert_eq!((f, thr), (0, 0.5));
        assert_eq!(tree.nodes[l].predicted_class, 1);
        assert_eq!(tree.nodes[r].predicted_class, 0);
        assert_eq!(tree.predict(&[0.7]).unwrap(), 1);
        assert_eq!(tree.predict(&[0.5]).unwrap(), 0, "equal to threshold goes right");
    }

    #[test]
    fn xor_needs_depth_two() {
        let v = vec![vec![0.0, 0.0], vec![0.0, 1.0], vec![1.0, 0.0], vec![1.0, 1.0]];
        let labels = [0, 1, 1, 0];
        let v: Vec<Vec<f64>> = v.iter().cycle().take(8).cloned().collect();
        let labels: Vec<usize> = labels.iter().cycle().take(8).copied().collect();
        let t = table(&v, &labels, 2);
        // No first split reduces Gini on pure XOR, so nudge one sample.
        let mut v2 = v.clone();
        v2.push(vec![0.0, 0.0]);
        let mut l2 = labels.clone();
        l2.push(0);
        let t2 = table(&v2, &l2, 2);
        assert!(matches!(best_split(&t, &all(&t), &TreeParams::default()), Err(Error::NoSplit)));
        let d1 = fit_tree(&t2, &TreeParams::with_depth(1)).unwrap();
        let d2 = fit_tree(&t2, &TreeParams::with_depth(2)).unwrap();
        assert!(tree_accuracy(&d1, &t2).unwrap() < 0.7);
        assert_eq!(tree_accuracy(&d2, &t2).unwrap(), 1.0);
        assert_eq!(tree_accuracy(&d1, &t).unwrap(), 0.5);
    }

    #[test]
    fn rows_through_internal_node_is_union_of_children() {
        let v: Vec<Vec<f64>> = (0..12).map(|i| vec![i as f64, (i % 3) as f64]).collect();
        let labels: Vec<usize> = (0..12).map(|i| usize::from(i >= 6) ^ usize::from(i % 3 == 0)).collect();
        let t = table(&v, &labels, 2);
        let tree = fit_tree(&t, &TreeParams::with_depth(3)).unwrap();
        for node in tree.internal_nodes() {
            let (_, _, l, r) = node.split.unwrap();
            let mut union = tree.rows_through(&t, l).unwrap();
            union.extend(tree.rows_through(&t, r).unwrap());
            union.sort();
            assert_eq!(tree.rows_through(&t, node.id).unwrap(), union);
            assert_eq!(union.len(), node.n_samples());
        }
        assert_eq!(tree.rows_through(&t, 0).unwrap().len(), 12);
        assert!(tree.rows_through(&t, 999).is_err());
    }

    #[test]
    fn min_samples_leaf_forces_single_leaf() {
        let t = table(&[vec![0.0], vec![1.0], vec![2.0]], &[0, 0, 1], 2);
        let params = TreeParams {
            min_samples_leaf: 2,
            ..TreeParams::default()
        };
        let tree = fit_tree(&t, &params).unwrap();
        assert_eq!(tree.nodes.len(), 1);
        assert_eq!(tree.root().predicted_class, 0);
    }

    #[test]
    fn majority_leaf_accuracy() {
        let v: Vec<Vec<f64>> = vec![vec![1.0]; 10];
        let labels = [0, 0, 0, 0, 0, 0, 1, 1, 1, 1];
        let t = table(&v, &labels, 2);
        let tree = fit_tree(&t, &TreeParams::default()).unwrap();
        assert_eq!(tree_accuracy(&tree, &t).unwrap(), 0.6);
        assert_eq!(tree.predict(&[-5.0]).unwrap(), 0);
    }

    #[test]
    fn dimension_and_empty_errors() {
        let t = table(&[vec![0.0, 1.0], vec![1.0, 0.0]], &[0, 1], 2);
        let tree = fit_tree(&t, &TreeParams::default()).unwrap();
        assert!(matches!(tree.predict(&[1.0]), Err(Error::DimensionMismatch { .. })));
        let empty = FeatureTable::from_vectors(&[], &[], vec!["a".into(), "b".into()]).unwrap();
        assert!(matches!(fit_tree(&empty, &TreeParams::default()), Err(Error::EmptyTable)));
        let bad = TreeParams {
            excluded_features: [2].into(),
            ..TreeParams::default()
        };
        assert!(matches!(fit_tree(&t, &bad), Err(Error::OutOfRange { .. })));
    }

    #[test]
    fn flow_by_hand() {
        let v = vec![vec![0.9], vec![0.8], vec![0.1], vec![0.7], vec![0.2], vec![0.3]];
        let labels = [0, 0, 0, 1, 1, 1];
        let t = table(&v, &labels, 2);
        let leaf = |id, histogram: Vec<usize>, predicted_class| TreeNode {
            id,
            depth: 1,
            split: None,
            histogram,
            predicted_class,
        };
        let tree = DecisionTree {
            class_order: t.class_order.clone(),
            layer_shape: (1, 1, 1),
            nodes: vec![
                TreeNode {
                    id: 0,
                    depth: 0,
                    split: Some((0, 0.5, 1, 2)),
                    histogram: vec![3, 3],
                    predicted_class: 0,
                },
                leaf(1, vec![2, 1], 0),
                leaf(2, vec![1, 2], 1),
            ],
            params: None,
        };
        let flow = class_flow(&tree, &t).unwrap();
        assert_eq!(flow.len(), 1);
        let c0 = flow[0].per_class[0];
        let c1 = flow[0].per_class[1];
        assert_eq!((c0.n, c0.left, c0.right), (3, 2.0 / 3.0, 1.0 / 3.0));
        assert_eq!((c1.n, c1.left, c1.right), (3, 1.0 / 3.0, 2.0 / 3.0));
    }

    #[test]
    fn json_round_trip_and_names() {
        let names = vec!["a".to_string(), "b".to_string()];
        let mut vectors = Vec::new();
        let mut labels = Vec::new();
        for i in 0..20 {
            let mut v = vec![0.0; 2 * 2 * 3];
            v[7] = i as f64 / 7.0;
            v[2] = (i % 3) as f64;
            vectors.push(v);
            labels.push(usize::from(i >= 10));
        }
        let mut t = FeatureTable::from_vectors(&vectors, &labels, names).unwrap();
        t.layer_shape = (2, 2, 3);
        let tree = fit_tree(&t, &TreeParams::default()).unwrap();
        let json = tree.to_json().unwrap();
        let v: serde_json::Value = serde_json::from_str(&json).unwrap();
        assert_eq!(v["nodes"][0]["feature"], "1_0_1");
        assert!(v["nodes"][1]["feature"].is_null());
        assert_eq!(DecisionTree::from_json(&json).unwrap(), tree);
    }
}
