use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::dataset::Dataset;
use super::forest::{fit_forest, Hyperparams, MaxFeatures};
use super::metrics::{evaluate, EvalReport};
use crate::{Error, Result};

/// Fold id (0..k) for every row. Each class is shuffled separately and dealt
/// round-robin, so every fold gets the class balance of the whole set.
pub fn stratified_folds(labels: &[bool], k: usize, seed: u64) -> Result<Vec<usize>> {
    if k < 2 {
        return Err(Error::Config(format!("need at least 2 folds, got {k}")));
    }
    if labels.len() < k {
        return Err(Error::Data(format!("{} rows cannot fill {k} folds", labels.len())));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut fold = vec![0usize; labels.len()];
    let mut next = 0usize;
    for class in [true, false] {
        let mut rows: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == class).collect();
        rows.shuffle(&mut rng);
        for r in rows {
            fold[r] = next % k;
            next += 1;
        }
    }
    Ok(fold)
}

/// k-fold cross-validation of one configuration. Fails with `SingleClass`
/// when some fold's training or test part lacks a class.
pub fn cross_validate(data: &Dataset, hp: &Hyperparams, k: usize, seed: u64) -> Result<EvalReport> {
    let fold = stratified_folds(data.labels(), k, seed)?;
    let mut scores = Vec::with_capacity(k);
    for f in 0..k {
        let (test, train): (Vec<usize>, Vec<usize>) = (0..data.n_rows()).partition(|&i| fold[i] == f);
        let train = data.subset_rows(&train);
        let test = data.subset_rows(&test);
        let model = fit_forest(&train, hp)?;
        let p = model.predict_dataset(&test)?;
        scores.push(evaluate(&p, test.labels())?);
    }
    EvalReport::from_folds(scores)
}

/// Inclusive integer ranges and discrete choices sampled uniformly.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SearchSpace {
    pub n_estimators: (usize, usize),
    pub max_depth: (usize, usize),
    pub min_samples_split: (usize, usize),
    pub min_samples_leaf: (usize, usize),
    pub max_features: Vec<MaxFeatures>,
    pub bootstrap: Vec<bool>,
}

impl Default for SearchSpace {
    fn default() -> Self {
        Self {
            n_estimators: (50, 300),
            max_depth: (4, 60),
            min_samples_split: (2, 20),
            min_samples_leaf: (1, 20),
            max_features: vec![MaxFeatures::Sqrt, MaxFeatures::Fraction(0.5), MaxFeatures::All],
            bootstrap: vec![true],
        }
    }
}

impl SearchSpace {
    /// Space holding exactly `hp`.
    pub fn point(hp: &Hyperparams) -> Self {
        Self {
            n_estimators: (hp.n_estimators, hp.n_estimators),
            max_depth: (hp.max_depth, hp.max_depth),
            min_samples_split: (hp.min_samples_split, hp.min_samples_split),
            min_samples_leaf: (hp.min_samples_leaf, hp.min_samples_leaf),
            max_features: vec![hp.max_features],
            bootstrap: vec![hp.bootstrap],
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, (lo, hi)) in [
            ("n_estimators", self.n_estimators),
            ("max_depth", self.max_depth),
            ("min_samples_split", self.min_samples_split),
            ("min_samples_leaf", self.min_samples_leaf),
        ] {
            if lo > hi {
                return Err(Error::Config(format!("search range {name} is empty ({lo} > {hi})")));
            }
        }
        if self.max_features.is_empty() || self.bootstrap.is_empty() {
            return Err(Error::Config("search choices must be non-empty".into()));
        }
        Ok(())
    }

    pub fn sample<R: Rng>(&self, rng: &mut R, seed: u64) -> Hyperparams {
        Hyperparams {
            n_estimators: rng.random_range(self.n_estimators.0..=self.n_estimators.1),
            max_depth: rng.random_range(self.max_depth.0..=self.max_depth.1),
            min_samples_split: rng.random_range(self.min_samples_split.0..=self.min_samples_split.1),
            min_samples_leaf: rng.random_range(self.min_samples_leaf.0..=self.min_samples_leaf.1),
            max_features: self.max_features[rng.random_range(0..self.max_features.len())],
            bootstrap: self.bootstrap[rng.random_range(0..self.bootstrap.len())],
            seed,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SearchTrial {
    pub index: usize,
    pub hyperparams: Hyperparams,
    pub report: Option<EvalReport>,
    pub skipped: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SearchResult {
    pub best: Hyperparams,
    pub report: EvalReport,
    pub trials: Vec<SearchTrial>,
}

/// Scores each candidate by mean CV ROC-AUC on shared folds. Candidates
/// whose folds are degenerate are skipped; the first best candidate wins.
pub fn evaluate_candidates(
    data: &Dataset,
    candidates: Vec<Hyperparams>,
    k: usize,
    seed: u64,
) -> Result<SearchResult> {
    if candidates.is_empty() {
        return Err(Error::Config("at least one candidate is required".into()));
    }
    let mut trials = Vec::with_capacity(candidates.len());
    let mut best: Option<usize> = None;
    for (index, hp) in candidates.into_iter().enumerate() {
        let trial = match cross_validate(data, &hp, k, seed) {
            Ok(report) => {
                let better = best.is_none_or(|b: usize| {
                    let cur: &EvalReport = trials_report(&trials, b);
                    report.mean.roc_auc > cur.mean.roc_auc
                });
                if better {
                    best = Some(index);
                }
                SearchTrial {
                    index,
                    hyperparams: hp,
                    report: Some(report),
                    skipped: None,
                }
            }
            Err(e @ (Error::SingleClass | Error::Empty(_))) => {
                log::warn!("search draw {index} skipped: degenerate fold ({e})");
                SearchTrial {
                    index,
                    hyperparams: hp,
                    report: None,
                    skipped: Some(e.to_string()),
                }
            }
            Err(e) => return Err(e),
        };
        log::debug!(
            "search draw {index}: {:?}",
            trial.report.as_ref().map(|r| r.mean.roc_auc)
        );
        trials.push(trial);
    }
    let best = best.ok_or(Error::NoValidDraw)?;
    Ok(SearchResult {
        best: trials[best].hyperparams.clone(),
        report: trials_report(&trials, best).clone(),
        trials,
    })
}

fn trials_report(trials: &[SearchTrial], i: usize) -> &EvalReport {
    trials[i].report.as_ref().expect("scored trial")
}

/// Randomised search: `n_fits` seeded draws from `space`, each scored with
/// k-fold CV.
pub fn random_search_cv(
    data: &Dataset,
    space: &SearchSpace,
    n_fits: usize,
    k: usize,
    seed: u64,
) -> Result<SearchResult> {
    space.validate()?;
    if n_fits == 0 {
        return Err(Error::Config("n_fits must be >= 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let candidates = (0..n_fits).map(|_| space.sample(&mut rng, seed)).collect();
    evaluate_candidates(data, candidates, k, seed)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IsolationRow {
    pub name: String,
    pub columns: Vec<usize>,
    pub report: EvalReport,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IsolationTable {
    /// Group rows ascending by ROC-AUC, then the full model.
    pub rows: Vec<IsolationRow>,
}

pub const FULL_MODEL: &str = "Full Model";

impl IsolationTable {
    pub fn row(&self, name: &str) -> Option<&IsolationRow> {
        self.rows.iter().find(|r| r.name == name)
    }

    pub fn full(&self) -> &IsolationRow {
        self.rows.last().expect("full model row")
    }

    /// Group rows only.
    pub fn groups(&self) -> &[IsolationRow] {
        &self.rows[..self.rows.len() - 1]
    }

    /// `feature_set,roc_auc,roc_auc_se,precision,...` one line per row.
    pub fn to_csv(&self) -> String {
        let mut s = String::from(
            "feature_set,roc_auc,roc_auc_se,precision,precision_se,recall,recall_se,avg_precision,avg_precision_se\n",
        );
        for r in &self.rows {
            let (m, e) = (&r.report.mean, &r.report.std_err);
            let _ = writeln!(
                s,
                "{},{:.4},{:.4},{:.4},{:.4},{:.4},{:.4},{:.4},{:.4}",
                r.name,
                m.roc_auc,
                e.roc_auc,
                m.precision,
                e.precision,
                m.recall,
                e.recall,
                m.average_precision,
                e.average_precision
            );
        }
        s
    }
}

/// Trains one model per column group and one on all columns, each scored by
/// k-fold CV on the same folds. `groups` must partition the columns.
pub fn feature_set_isolation(
    data: &Dataset,
    groups: &[(String, Vec<usize>)],
    hp: &Hyperparams,
    k: usize,
    seed: u64,
) -> Result<IsolationTable> {
    let mut seen = vec![false; data.n_features()];
    for (name, cols) in groups {
        if cols.is_empty() {
            return Err(Error::Config(format!("feature group {name} is empty")));
        }
        for &c in cols {
            if c >= seen.len() || std::mem::replace(&mut seen[c], true) {
                return Err(Error::Config(format!(
                    "feature groups must partition the columns (column {c} in {name})"
                )));
            }
        }
    }
    if let Some(c) = seen.iter().position(|s| !s) {
        return Err(Error::Config(format!("column {c} belongs to no feature group")));
    }

    let mut rows = Vec::with_capacity(groups.len() + 1);
    for (name, cols) in groups {
        let report = cross_validate(&data.select_columns(cols), hp, k, seed)?;
        log::info!("isolation {name}: roc_auc {:.4}", report.mean.roc_auc);
        rows.push(IsolationRow {
            name: name.clone(),
            columns: cols.clone(),
            report,
        });
    }
    rows.sort_by(|a, b| a.report.mean.roc_auc.total_cmp(&b.report.mean.roc_auc));
    let report = cross_validate(data, hp, k, seed)?;
    log::info!("isolation full model: roc_auc {:.4}", report.mean.roc_auc);
    rows.push(IsolationRow {
        name: FULL_MODEL.to_string(),
        columns: (0..data.n_features()).collect(),
        report,
    });
    Ok(IsolationTable { rows })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn separable(n: usize) -> Dataset {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut rows = Vec::new();
        let mut labels = Vec::new();
        for i in 0..n {
            let y = i % 3 == 0;
            let x: f64 = rng.random::<f64>() + if y { 2.0 } else { 0.0 };
            let noise: f64 = rng.random();
            rows.push(vec![x, noise]);
            labels.push(y);
        }
        Dataset::from_rows(&rows, labels, vec!["x".into(), "noise".into()]).unwrap()
    }

    fn small() -> Hyperparams {
        Hyperparams {
            n_estimators: 10,
            max_depth: 5,
            ..Default::default()
        }
    }

    #[test]
    fn folds_are_stratified() {
        let labels: Vec<bool> = (0..103).map(|i| i % 4 == 0).collect();
        let fold = stratified_folds(&labels, 5, 1).unwrap();
        for f in 0..5 {
            let pos = (0..103).filter(|&i| fold[i] == f && labels[i]).count();
            let all = fold.iter().filter(|&&x| x == f).count();
            assert!((5..=6).contains(&pos), "{pos}");
            assert!((20..=21).contains(&all), "{all}");
        }
        assert!(stratified_folds(&labels, 1, 1).is_err());
    }

    #[test]
    fn one_point_space_returns_it() {
        let data = separable(120);
        let hp = small();
        let r = random_search_cv(&data, &SearchSpace::point(&hp), 2, 3, 0).unwrap();
        assert_eq!(r.best, Hyperparams { seed: 0, ..hp });
        assert_eq!(r.trials.len(), 2);
    }

    #[test]
    fn deeper_config_beats_stumps() {
        let data = separable(150);
        let stump = Hyperparams {
            max_depth: 0,
            ..small()
        };
        let r = evaluate_candidates(&data, vec![stump, small()], 3, 4).unwrap();
        assert_eq!(r.best.max_depth, 5);
        assert_eq!(r.trials[0].report.as_ref().unwrap().mean.roc_auc, 0.5);
    }

    #[test]
    fn degenerate_folds_are_skipped() {
        // Two positives cannot be spread over three folds.
        let mut labels = vec![false; 30];
        labels[0] = true;
        labels[1] = true;
        let rows: Vec<Vec<f64>> = (0..30).map(|i| vec![i as f64]).collect();
        let data = Dataset::from_rows(&rows, labels, vec!["x".into()]).unwrap();
        let r = evaluate_candidates(&data, vec![small()], 3, 0);
        assert!(matches!(r, Err(Error::NoValidDraw)));
    }

    #[test]
    fn isolation_table_shape() {
        let data = separable(150);
        let groups = vec![("X".to_string(), vec![0]), ("N".to_string(), vec![1])];
        let t = feature_set_isolation(&data, &groups, &small(), 3, 0).unwrap();
        assert_eq!(t.rows.len(), 3);
        assert_eq!(t.rows[1].name, "X");
        assert_eq!(t.full().name, FULL_MODEL);
        assert!(t.to_csv().lines().count() == 4);
        let bad = vec![("X".to_string(), vec![0])];
        assert!(feature_set_isolation(&data, &bad, &small(), 3, 0).is_err());
    }
}
