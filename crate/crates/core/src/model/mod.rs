//! Random forest engagement classifier.
//!
//! Trees are Gini CART grown on bootstrap resamples with a per-split random
//! subset of candidate features. Candidate thresholds are midpoints between
//! consecutive distinct values; a row goes left when `x <= threshold`.

mod dataset;
mod forest;
mod metrics;
mod search;
mod tree;

pub use dataset::Dataset;
pub use forest::{
    derive_seed,
    fit_forest, fit_forest_with, mdi_importance, predict_proba, ForestModel, Hyperparams,
    MaxFeatures, Parallelism,
};
pub use metrics::{
    average_precision, evaluate, precision_recall_at, roc_auc, EvalReport, EvalScores,
    DECISION_THRESHOLD,
};
pub use search::{
    cross_validate, evaluate_candidates, feature_set_isolation, random_search_cv,
    stratified_folds, IsolationRow, FULL_MODEL, IsolationTable, SearchResult, SearchSpace, SearchTrial,
};
pub use tree::{gini, DecisionTree};
