use std::collections::BTreeSet;

use idt_core::dtree::{best_split, class_flow, fit_tree, tree_accuracy, DecisionTree, TreeParams};
use idt_core::model::FeatureTable;
use idt_core::Error;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn gini_of(labels: &[usize], k: usize) -> f64 {
    let n = labels.len() as f64;
    let mut g = 1.0;
    for c in 0..k {
        let p = labels.iter().filter(|&&l| l == c).count() as f64 / n;
        g -= p * p;
    }
    g
}

/// Every feature × every midpoint, scored by partitioning the rows directly.
fn brute_force(x: &[Vec<f64>], y: &[usize], k: usize, excluded: &BTreeSet<usize>) -> Option<(usize, f64)> {
    let parent = gini_of(y, k);
    let mut cands: Vec<(usize, f64, f64)> = Vec::new();
    for f in 0..x[0].len() {
        if excluded.contains(&f) {
            continue;
        }
        let mut vals: Vec<f64> = x.iter().map(|r| r[f]).collect();
        vals.sort_by(f64::total_cmp);
        vals.dedup();
        for w in vals.windows(2) {
            let t = (w[0] + w[1]) / 2.0;
            let left: Vec<usize> = (0..x.len()).filter(|&i| x[i][f] > t).map(|i| y[i]).collect();
            let right: Vec<usize> = (0..x.len()).filter(|&i| x[i][f] <= t).map(|i| y[i]).collect();
            let n = x.len() as f64;
            let dec = parent
                - left.len() as f64 / n * gini_of(&left, k)
                - right.len() as f64 / n * gini_of(&right, k);
            cands.push((f, t, dec));
        }
    }
    let best = cands.iter().map(|c| c.2).fold(f64::NEG_INFINITY, f64::max);
    if best <= 1e-9 {
        return None;
    }
    cands.iter().find(|c| c.2 >= best - 1e-9).map(|c| (c.0, c.1))
}

fn random_table(rng: &mut ChaCha8Rng) -> (Vec<Vec<f64>>, Vec<usize>, usize) {
    let n = rng.random_range(2..=8);
    let d = rng.random_range(1..=3);
    let k = rng.random_range(2..=3);
    // coarse values so ties and repeated values are common
    let x = (0..n)
        .map(|_| (0..d).map(|_| rng.random_range(0..5) as f64 * 0.25).collect())
        .collect();
    let y = (0..n).map(|_| rng.random_range(0..k)).collect();
    (x, y, k)
}

fn table(x: &[Vec<f64>], y: &[usize], k: usize) -> FeatureTable {
    FeatureTable::from_vectors(x, y, (0..k).map(|c| format!("c{c}")).collect()).unwrap()
}

fn check_conservation(tree: &DecisionTree) {
    for node in tree.internal_nodes() {
        let (_, _, l, r) = node.split.unwrap();
        let sum: Vec<usize> = tree.nodes[l]
            .histogram
            .iter()
            .zip(&tree.nodes[r].histogram)
            .map(|(a, b)| a + b)
            .collect();
        assert_eq!(sum, node.histogram, "node {}", node.id);
    }
    for leaf in tree.leaves() {
        let h = &leaf.histogram;
        let max = *h.iter().max().unwrap();
        assert_eq!(leaf.predicted_class, h.iter().position(|&c| c == max).unwrap());
    }
}

#[test]
fn root_split_matches_exhaustive_search_on_200_tables() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    for case in 0..200 {
        let (x, y, k) = random_table(&mut rng);
        let t = table(&x, &y, k);
        let tree = fit_tree(&t, &TreeParams::with_depth(3)).unwrap();
        let expected = brute_force(&x, &y, k, &BTreeSet::new());
        let got = tree.root().split.map(|(f, thr, _, _)| (f, thr));
        match (expected, got) {
            (None, None) => {}
            (Some((ef, et)), Some((gf, gt))) => {
                assert_eq!(ef, gf, "case {case}: feature");
                assert!((et - gt).abs() < 1e-12, "case {case}: threshold {et} vs {gt}");
            }
            _ => panic!("case {case}: oracle {expected:?} vs tree {got:?}"),
        }
        check_conservation(&tree);
    }
}

#[test]
fn second_best_when_best_is_excluded() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut checked = 0;
    while checked < 50 {
        let (x, y, k) = random_table(&mut rng);
        let Some((best_f, _)) = brute_force(&x, &y, k, &BTreeSet::new()) else {
            continue;
        };
        let excluded: BTreeSet<usize> = [best_f].into();
        let t = table(&x, &y, k);
        let params = TreeParams {
            excluded_features: excluded.clone(),
            ..TreeParams::default()
        };
        let rows: Vec<usize> = (0..x.len()).collect();
        match (brute_force(&x, &y, k, &excluded), best_split(&t, &rows, &params)) {
            (None, Err(Error::NoSplit)) => {}
            (Some((f, thr)), Ok(s)) => {
                assert_eq!(f, s.feature);
                assert!((thr - s.threshold).abs() < 1e-12);
            }
            (e, g) => panic!("oracle {e:?} vs {g:?}"),
        }
        checked += 1;
    }
}

#[test]
fn excluding_everything_leaves_a_majority_leaf() {
    let x = vec![vec![0.0, 1.0], vec![1.0, 0.0], vec![2.0, 2.0], vec![3.0, 1.0], vec![4.0, 5.0]];
    let y = vec![1, 1, 1, 0, 0];
    let t = table(&x, &y, 2);
    let params = TreeParams {
        excluded_features: [0, 1].into(),
        ..TreeParams::default()
    };
    let tree = fit_tree(&t, &params).unwrap();
    assert_eq!(tree.nodes.len(), 1);
    assert_eq!(tree.root().predicted_class, 1);
}

fn table_strategy() -> impl Strategy<Value = (Vec<Vec<f64>>, Vec<usize>, usize)> {
    (2usize..4, 1usize..6, 4usize..40).prop_flat_map(|(k, d, n)| {
        (
            prop::collection::vec(prop::collection::vec(0u8..6, d), n),
            prop::collection::vec(0..k, n),
            Just(k),
        )
            .prop_map(|(x, y, k)| {
                let x = x.into_iter().map(|r| r.into_iter().map(f64::from).collect()).collect();
                (x, y, k)
            })
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn excluded_features_never_split(
        (x, y, k) in table_strategy(),
        mask in prop::collection::vec(any::<bool>(), 6),
        depth in 1usize..6,
    ) {
        let t = table(&x, &y, k);
        let excluded: BTreeSet<usize> = (0..t.width()).filter(|&f| mask[f]).collect();
        let params = TreeParams { max_depth: depth, excluded_features: excluded.clone(), ..TreeParams::default() };
        let tree = fit_tree(&t, &params).unwrap();
        for node in tree.internal_nodes() {
            prop_assert!(!excluded.contains(&node.feature().unwrap()));
        }
        check_conservation(&tree);
    }

    #[test]
    fn accuracy_is_monotone_in_depth_and_beats_majority((x, y, k) in table_strategy()) {
        let t = table(&x, &y, k);
        let majority = (0..k).map(|c| y.iter().filter(|&&l| l == c).count()).max().unwrap() as f64 / y.len() as f64;
        let mut prev = 0.0;
        for depth in 1..=8 {
            let tree = fit_tree(&t, &TreeParams::with_depth(depth)).unwrap();
            let acc = tree_accuracy(&tree, &t).unwrap();
            prop_assert!(acc >= prev - 1e-12, "depth {depth}: {acc} < {prev}");
            prop_assert!(acc >= majority - 1e-12);
            prev = acc;
        }
    }

    #[test]
    fn fitting_is_deterministic((x, y, k) in table_strategy()) {
        let t = table(&x, &y, k);
        let a = fit_tree(&t, &TreeParams::default()).unwrap();
        let b = fit_tree(&t, &TreeParams::default()).unwrap();
        prop_assert_eq!(&a, &b);
        let back = DecisionTree::from_json(&a.to_json().unwrap()).unwrap();
        prop_assert_eq!(a, back);
    }

    #[test]
    fn flow_fractions_sum_to_one((x, y, k) in table_strategy()) {
        let t = table(&x, &y, k);
        let tree = fit_tree(&t, &TreeParams::default()).unwrap();
        let flows = class_flow(&tree, &t).unwrap();
        prop_assert_eq!(flows.len(), tree.internal_nodes().count());
        for flow in &flows {
            let node = &tree.nodes[flow.node_id];
            for (c, f) in flow.per_class.iter().enumerate() {
                prop_assert_eq!(f.n, node.histogram[c]);
                if f.n > 0 {
                    prop_assert!((f.left + f.right - 1.0).abs() < 1e-12);
                }
            }
        }
    }
}
