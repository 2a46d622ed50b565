use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::dataset::Dataset;
use super::tree::{DecisionTree, GrowParams, Presorted};
use crate::io::{read_json, write_json};
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MaxFeatures {
    All,
    Sqrt,
    Count(usize),
    Fraction(f64),
}

impl MaxFeatures {
    pub fn resolve(self, n_features: usize) -> usize {
        let k = match self {
            MaxFeatures::All => n_features,
            MaxFeatures::Sqrt => (n_features as f64).sqrt().floor() as usize,
            MaxFeatures::Count(c) => c,
            MaxFeatures::Fraction(f) => (f * n_features as f64).floor() as usize,
        };
        k.clamp(1, n_features.max(1))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Hyperparams {
    pub n_estimators: usize,
    /// Root is depth 0; `max_depth = 0` grows single-leaf trees.
    pub max_depth: usize,
    pub min_samples_split: usize,
    pub min_samples_leaf: usize,
    pub max_features: MaxFeatures,
    pub bootstrap: bool,
    pub seed: u64,
}

impl Default for Hyperparams {
    fn default() -> Self {
        Self {
            n_estimators: 300,
            max_depth: 60,
            min_samples_split: 2,
            min_samples_leaf: 1,
            max_features: MaxFeatures::Sqrt,
            bootstrap: true,
            seed: 0,
        }
    }
}

impl Hyperparams {
    pub fn validate(&self) -> Result<()> {
        if self.n_estimators == 0 || self.min_samples_split == 0 || self.min_samples_leaf == 0 {
            return Err(Error::Config(
                "n_estimators, min_samples_split and min_samples_leaf must be >= 1".into(),
            ));
        }
        match self.max_features {
            MaxFeatures::Count(0) => Err(Error::Config("max_features count must be >= 1".into())),
            MaxFeatures::Fraction(f) if !(f > 0.0 && f <= 1.0) => Err(Error::Config(format!(
                "max_features fraction must be in (0, 1], got {f}"
            ))),
            _ => Ok(()),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Parallelism {
    Serial,
    /// Trees are grown on the rayon pool. Per-tree seeds make the forest
    /// identical to the serial one.
    Rayon,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ForestModel {
    pub format: String,
    pub hyperparams: Hyperparams,
    pub feature_names: Vec<String>,
    pub tree_seeds: Vec<u64>,
    pub trees: Vec<DecisionTree>,
}

const FORMAT: &str = "tastegraph-forest-v1";

impl ForestModel {
    pub fn n_features(&self) -> usize {
        self.feature_names.len()
    }

    pub fn predict_proba(&self, x: &[f64]) -> Result<f64> {
        predict_proba(self, x)
    }

    /// Probabilities for every row of `data`.
    pub fn predict_dataset(&self, data: &Dataset) -> Result<Vec<f64>> {
        if data.n_features() != self.n_features() {
            return Err(Error::DimensionMismatch {
                expected: self.n_features(),
                got: data.n_features(),
            });
        }
        let mut row = vec![0.0; data.n_features()];
        Ok((0..data.n_rows())
            .map(|i| {
                for (f, v) in row.iter_mut().enumerate() {
                    *v = data.column(f)[i];
                }
                self.mean_over_trees(&row)
            })
            .collect())
    }

    fn mean_over_trees(&self, x: &[f64]) -> f64 {
        let s: f64 = self.trees.iter().map(|t| t.predict(x)).sum();
        s / self.trees.len() as f64
    }

    /// JSON file: header fields (format, hyperparams, feature names, tree
    /// seeds) followed by per-tree flattened node arrays.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        write_json(path, self)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let m: ForestModel = read_json(path)?;
        if m.format != FORMAT {
            return Err(Error::Data(format!("unsupported model format `{}`", m.format)));
        }
        Ok(m)
    }
}

/// Mean over trees of the leaf positive fraction.
pub fn predict_proba(model: &ForestModel, x: &[f64]) -> Result<f64> {
    if x.len() != model.n_features() {
        return Err(Error::DimensionMismatch {
            expected: model.n_features(),
            got: x.len(),
        });
    }
    Ok(model.mean_over_trees(x))
}

/// Seed of tree `t`: a splitmix64 step over the master seed and tree index.
/// Independent stream seed `t` derived from `master` (a splitmix64 step).
pub fn derive_seed(master: u64, t: usize) -> u64 {
    tree_seed(master, t)
}

pub(crate) fn tree_seed(master: u64, t: usize) -> u64 {
    let mut z = master
        .wrapping_add((t as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Bootstrap multiplicities: `n` draws with replacement.
pub(crate) fn bootstrap_counts<R: Rng>(n: usize, rng: &mut R) -> Vec<u32> {
    let mut counts = vec![0u32; n];
    for _ in 0..n {
        counts[rng.random_range(0..n)] += 1;
    }
    counts
}

pub fn fit_forest(data: &Dataset, hp: &Hyperparams) -> Result<ForestModel> {
    fit_forest_with(data, hp, Parallelism::Rayon)
}

pub fn fit_forest_with(data: &Dataset, hp: &Hyperparams, par: Parallelism) -> Result<ForestModel> {
    hp.validate()?;
    data.require_both_classes()?;
    let presorted = Presorted::new(data);
    let params = GrowParams {
        max_depth: hp.max_depth,
        min_samples_split: hp.min_samples_split.max(2),
        min_samples_leaf: hp.min_samples_leaf,
        max_features: hp.max_features.resolve(data.n_features()),
    };
    let seeds: Vec<u64> = (0..hp.n_estimators).map(|t| tree_seed(hp.seed, t)).collect();
    let grow_one = |seed: &u64| {
        let mut rng = ChaCha8Rng::seed_from_u64(*seed);
        let weights = if hp.bootstrap {
            bootstrap_counts(data.n_rows(), &mut rng)
        } else {
            vec![1; data.n_rows()]
        };
        DecisionTree::grow(data, &presorted, &weights, &params, &mut rng)
    };
    let trees = match par {
        Parallelism::Serial => seeds.iter().map(grow_one).collect(),
        Parallelism::Rayon => seeds.par_iter().map(grow_one).collect(),
    };
    Ok(ForestModel {
        format: FORMAT.to_string(),
        hyperparams: hp.clone(),
        feature_names: data.names().to_vec(),
        tree_seeds: seeds,
        trees,
    })
}

/// Mean decrease in impurity. Each split adds its weighted Gini decrease
/// (weights are node sample fractions) to its feature; totals are averaged
/// over trees and normalised to sum to one.
pub fn mdi_importance(model: &ForestModel) -> Result<Vec<f64>> {
    let mut acc = vec![0.0f64; model.n_features()];
    for t in &model.trees {
        let root = t.weight[0];
        if root <= 0.0 {
            continue;
        }
        for n in 0..t.n_nodes() {
            if t.is_leaf(n) {
                continue;
            }
            let (l, r) = (t.left[n] as usize, t.right[n] as usize);
            let decrease = t.weight[n] * t.impurity[n]
                - t.weight[l] * t.impurity[l]
                - t.weight[r] * t.impurity[r];
            acc[t.feature[n] as usize] += decrease / root;
        }
    }
    let k = model.trees.len().max(1) as f64;
    acc.iter_mut().for_each(|v| *v /= k);
    let total: f64 = acc.iter().sum();
    if total <= 0.0 {
        return Err(Error::NoSplits);
    }
    acc.iter_mut().for_each(|v| *v /= total);
    Ok(acc)
}
