use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::dataset::Dataset;

/// Gini impurity `2p(1-p)` of a node with positive fraction `p`.
pub fn gini(positive: f64, total: f64) -> f64 {
    if total <= 0.0 {
        return 0.0;
    }
    let p = positive / total;
    2.0 * p * (1.0 - p)
}

/// Flattened binary tree. Node 0 is the root; leaves have `feature == -1`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecisionTree {
    pub feature: Vec<i32>,
    pub threshold: Vec<f64>,
    pub left: Vec<u32>,
    pub right: Vec<u32>,
    /// Weighted positive fraction of the training rows in the node.
    pub value: Vec<f64>,
    /// Weighted training rows (bootstrap multiplicities) in the node.
    pub weight: Vec<f64>,
    pub impurity: Vec<f64>,
}

pub(crate) struct GrowParams {
    pub max_depth: usize,
    pub min_samples_split: usize,
    pub min_samples_leaf: usize,
    pub max_features: usize,
}

/// Per-dataset row orderings reused by every tree.
pub(crate) struct Presorted {
    pub order: Vec<Vec<u32>>,
}

impl Presorted {
    pub fn new(data: &Dataset) -> Self {
        let order = (0..data.n_features())
            .map(|f| {
                let col = data.column(f);
                let mut idx: Vec<u32> = (0..data.n_rows() as u32).collect();
                idx.sort_by(|&a, &b| col[a as usize].total_cmp(&col[b as usize]));
                idx
            })
            .collect();
        Self { order }
    }
}

struct Split {
    feature: usize,
    threshold: f64,
    score: f64,
}

impl DecisionTree {
    fn push_node(&mut self, value: f64, weight: f64, impurity: f64) -> usize {
        self.feature.push(-1);
        self.threshold.push(0.0);
        self.left.push(0);
        self.right.push(0);
        self.value.push(value);
        self.weight.push(weight);
        self.impurity.push(impurity);
        self.feature.len() - 1
    }

    pub fn n_nodes(&self) -> usize {
        self.feature.len()
    }

    pub fn is_leaf(&self, node: usize) -> bool {
        self.feature[node] < 0
    }

    pub fn depth(&self) -> usize {
        fn walk(t: &DecisionTree, n: usize) -> usize {
            if t.is_leaf(n) {
                0
            } else {
                1 + walk(t, t.left[n] as usize).max(walk(t, t.right[n] as usize))
            }
        }
        walk(self, 0)
    }

    /// Index of the leaf `x` lands in.
    pub fn leaf_of(&self, x: &[f64]) -> usize {
        let mut n = 0usize;
        while self.feature[n] >= 0 {
            n = if x[self.feature[n] as usize] <= self.threshold[n] {
                self.left[n] as usize
            } else {
                self.right[n] as usize
            };
        }
        n
    }

    pub fn predict(&self, x: &[f64]) -> f64 {
        self.value[self.leaf_of(x)]
    }

    /// Grows a tree on rows weighted by `weights` (zero weight = absent).
    pub(crate) fn grow<R: Rng>(
        data: &Dataset,
        presorted: &Presorted,
        weights: &[u32],
        params: &GrowParams,
        rng: &mut R,
    ) -> Self {
        let n_features = data.n_features();
        let labels = data.labels();
        let mut order: Vec<Vec<u32>> = presorted
            .order
            .iter()
            .map(|o| o.iter().copied().filter(|&r| weights[r as usize] > 0).collect())
            .collect();
        let active = order.first().map_or(0, Vec::len);
        let mut tree = DecisionTree {
            feature: Vec::new(),
            threshold: Vec::new(),
            left: Vec::new(),
            right: Vec::new(),
            value: Vec::new(),
            weight: Vec::new(),
            impurity: Vec::new(),
        };
        let stats = |rows: &[u32]| {
            rows.iter().fold((0.0f64, 0.0f64), |(w, p), &r| {
                let wr = f64::from(weights[r as usize]);
                (w + wr, if labels[r as usize] { p + wr } else { p })
            })
        };

        let (w0, p0) = stats(order.first().map_or(&[][..], |o| &o[..]));
        let root = tree.push_node(if w0 > 0.0 { p0 / w0 } else { 0.0 }, w0, gini(p0, w0));
        let mut stack = vec![(root, 0usize, active, 0usize)];
        let mut goes_left = vec![false; data.n_rows()];
        let mut scratch: Vec<u32> = Vec::with_capacity(active);

        while let Some((node, start, end, depth)) = stack.pop() {
            let count = end - start;
            let (w, p) = (tree.weight[node], tree.value[node] * tree.weight[node]);
            if depth >= params.max_depth
                || count < params.min_samples_split
                || count < 2 * params.min_samples_leaf
                || p <= 0.0
                || p >= w
                || n_features == 0
            {
                continue;
            }
            let k = params.max_features.clamp(1, n_features);
            let mut candidates: Vec<usize> = index::sample(rng, n_features, k).into_vec();
            candidates.sort_unstable();

            let parent = w * gini(p, w);
            let mut best: Option<Split> = None;
            for &f in &candidates {
                let col = data.column(f);
                let rows = &order[f][start..end];
                let (mut wl, mut pl) = (0.0f64, 0.0f64);
                for i in 0..count - 1 {
                    let r = rows[i] as usize;
                    let wr = f64::from(weights[r]);
                    wl += wr;
                    if labels[r] {
                        pl += wr;
                    }
                    let (v, next) = (col[r], col[rows[i + 1] as usize]);
                    if v == next {
                        continue;
                    }
                    let n_left = i + 1;
                    if n_left < params.min_samples_leaf || count - n_left < params.min_samples_leaf {
                        continue;
                    }
                    let (wr_, pr) = (w - wl, p - pl);
                    let score = parent - wl * gini(pl, wl) - wr_ * gini(pr, wr_);
                    if score > 0.0 && best.as_ref().is_none_or(|b| score > b.score) {
                        let mut threshold = v + (next - v) / 2.0;
                        if !(threshold >= v && threshold < next) {
                            threshold = v;
                        }
                        best = Some(Split {
                            feature: f,
                            threshold,
                            score,
                        });
                    }
                }
            }
            let Some(split) = best else { continue };

            let col = data.column(split.feature);
            let mut n_left = 0usize;
            for &r in &order[split.feature][start..end] {
                let l = col[r as usize] <= split.threshold;
                goes_left[r as usize] = l;
                n_left += usize::from(l);
            }
            for o in order.iter_mut() {
                stable_partition(&mut o[start..end], &goes_left, &mut scratch);
            }
            let mid = start + n_left;
            let (wl, pl) = stats(&order[0][start..mid]);
            let (wr, pr) = stats(&order[0][mid..end]);
            let l = tree.push_node(pl / wl, wl, gini(pl, wl));
            let r = tree.push_node(pr / wr, wr, gini(pr, wr));
            tree.feature[node] = split.feature as i32;
            tree.threshold[node] = split.threshold;
            tree.left[node] = l as u32;
            tree.right[node] = r as u32;
            // Right first so the left subtree is expanded first.
            stack.push((r, mid, end, depth + 1));
            stack.push((l, start, mid, depth + 1));
        }
        tree
    }
}

fn stable_partition(rows: &mut [u32], goes_left: &[bool], scratch: &mut Vec<u32>) {
    scratch.clear();
    let mut w = 0;
    for i in 0..rows.len() {
        let r = rows[i];
        if goes_left[r as usize] {
            rows[w] = r;
            w += 1;
        } else {
            scratch.push(r);
        }
    }
    rows[w..].copy_from_slice(scratch);
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn params(depth: usize) -> GrowParams {
        GrowParams {
            max_depth: depth,
            min_samples_split: 2,
            min_samples_leaf: 1,
            max_features: usize::MAX,
        }
    }

    fn grow(data: &Dataset, depth: usize) -> DecisionTree {
        let pre = Presorted::new(data);
        let w = vec![1u32; data.n_rows()];
        DecisionTree::grow(data, &pre, &w, &params(depth), &mut ChaCha8Rng::seed_from_u64(0))
    }

    #[test]
    fn gini_values() {
        assert_eq!(gini(5.0, 10.0), 0.5);
        assert_eq!(gini(0.0, 10.0), 0.0);
        assert_eq!(gini(10.0, 10.0), 0.0);
    }

    #[test]
    fn pure_positive_data_is_a_single_leaf() {
        let data = Dataset::from_rows(
            &[vec![1.0], vec![2.0], vec![3.0]],
            vec![true; 3],
            vec!["x".into()],
        )
        .unwrap();
        let t = grow(&data, 10);
        assert_eq!(t.n_nodes(), 1);
        assert_eq!(t.predict(&[2.0]), 1.0);
    }

    #[test]
    fn split_at_midpoint_and_depth_limit() {
        let data = Dataset::from_rows(
            &[vec![0.0], vec![1.0], vec![2.0], vec![3.0]],
            vec![false, false, true, true],
            vec!["x".into()],
        )
        .unwrap();
        let t = grow(&data, 5);
        assert_eq!(t.feature[0], 0);
        assert_eq!(t.threshold[0], 1.5);
        assert_eq!(t.predict(&[1.5]), 0.0);
        assert_eq!(t.predict(&[1.6]), 1.0);
        assert_eq!(grow(&data, 0).n_nodes(), 1);
        assert!(grow(&data, 1).depth() <= 1);
    }

    #[test]
    fn ties_prefer_lowest_feature() {
        // Two identical columns: the split must use column 0.
        let rows: Vec<Vec<f64>> = (0..6).map(|i| vec![i as f64, i as f64]).collect();
        let labels = vec![false, false, false, true, true, true];
        let data = Dataset::from_rows(&rows, labels, vec!["a".into(), "b".into()]).unwrap();
        assert_eq!(grow(&data, 3).feature[0], 0);
    }

    #[test]
    fn weights_drive_leaf_values() {
        let data = Dataset::from_rows(
            &[vec![0.0], vec![0.0], vec![1.0]],
            vec![true, false, true],
            vec!["x".into()],
        )
        .unwrap();
        let pre = Presorted::new(&data);
        let t = DecisionTree::grow(
            &data,
            &pre,
            &[3, 1, 0],
            &params(0),
            &mut ChaCha8Rng::seed_from_u64(0),
        );
        assert_eq!(t.value[0], 0.75);
        assert_eq!(t.weight[0], 4.0);
    }
}
