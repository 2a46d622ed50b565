//! Descriptive statistics for the analyses: ECDFs, binned engagement
//! probability curves with Wilson intervals, two-sample KS, Pearson and
//! Spearman correlation, and the shuffled-pair homophily baseline.
//!
//! Sums go through [`pairwise_sum`] so results do not depend on evaluation
//! order beyond the fixed ascending-index pairing.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::embeddings::{cosine_similarity, TasteMap};
use crate::{Error, Result, UserId};

/// z for a two-sided 95% interval.
pub const Z_95: f64 = 1.959_963_984_540_054;

/// Ascending-index pairwise summation.
pub fn pairwise_sum(xs: &[f64]) -> f64 {
    if xs.len() <= 8 {
        xs.iter().sum()
    } else {
        let mid = xs.len() / 2;
        pairwise_sum(&xs[..mid]) + pairwise_sum(&xs[mid..])
    }
}

pub fn mean(xs: &[f64]) -> Option<f64> {
    (!xs.is_empty()).then(|| pairwise_sum(xs) / xs.len() as f64)
}

fn sort_floats(v: &mut [f64]) {
    v.sort_unstable_by(f64::total_cmp);
}

#[derive(Clone, Debug, PartialEq)]
pub struct Ecdf {
    sorted: Vec<f64>,
}

impl Ecdf {
    pub fn new(sample: &[f64]) -> Result<Self> {
        if sample.is_empty() {
            return Err(Error::Empty("ecdf sample"));
        }
        if sample.iter().any(|x| x.is_nan()) {
            return Err(Error::Data("ecdf sample contains NaN".into()));
        }
        let mut sorted = sample.to_vec();
        sort_floats(&mut sorted);
        Ok(Self { sorted })
    }

    /// Fraction of the sample `<= x`.
    pub fn eval(&self, x: f64) -> f64 {
        self.sorted.partition_point(|&v| v <= x) as f64 / self.sorted.len() as f64
    }

    pub fn sorted(&self) -> &[f64] {
        &self.sorted
    }

    /// `(value, F(value))` at each distinct sample value.
    pub fn steps(&self) -> Vec<(f64, f64)> {
        let n = self.sorted.len() as f64;
        let mut out: Vec<(f64, f64)> = Vec::new();
        for (i, &v) in self.sorted.iter().enumerate() {
            match out.last_mut() {
                Some(last) if last.0 == v => last.1 = (i + 1) as f64 / n,
                _ => out.push((v, (i + 1) as f64 / n)),
            }
        }
        out
    }
}

pub fn ecdf(sample: &[f64]) -> Result<Ecdf> {
    Ecdf::new(sample)
}

/// Wilson score interval for `successes` out of `n` trials.
pub fn wilson_interval(successes: u64, n: u64, z: f64) -> (f64, f64) {
    if n == 0 {
        return (0.0, 1.0);
    }
    let n_f = n as f64;
    let p = successes as f64 / n_f;
    let z2 = z * z;
    let denom = 1.0 + z2 / n_f;
    let center = (p + z2 / (2.0 * n_f)) / denom;
    let half = z * (p * (1.0 - p) / n_f + z2 / (4.0 * n_f * n_f)).sqrt() / denom;
    let lo = if successes == 0 { 0.0 } else { (center - half).max(0.0) };
    let hi = if successes == n { 1.0 } else { (center + half).min(1.0) };
    (lo.min(p), hi.max(p))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CurveBins {
    /// `n` equal-width bins spanning the observed range.
    EqualWidth(usize),
    /// Up to `n` bins at sample quantiles; duplicate cut points collapse.
    Quantile(usize),
    /// Explicit strictly increasing edges. Values outside are clamped into
    /// the first or last bin.
    Edges(Vec<f64>),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CurveConfig {
    pub bins: CurveBins,
    /// Bins with fewer events are masked.
    pub min_count: u64,
}

impl Default for CurveConfig {
    fn default() -> Self {
        Self {
            bins: CurveBins::Quantile(20),
            min_count: 30,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurveBin {
    pub lo: f64,
    pub hi: f64,
    pub count: u64,
    pub engaged: u64,
    pub p_hat: Option<f64>,
    pub ci_low: Option<f64>,
    pub ci_high: Option<f64>,
    pub masked: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BinnedCurve {
    pub edges: Vec<f64>,
    pub bins: Vec<CurveBin>,
}

impl BinnedCurve {
    pub fn total_count(&self) -> u64 {
        self.bins.iter().map(|b| b.count).sum()
    }

    /// Unmasked `(bin midpoint, p_hat)` points.
    pub fn points(&self) -> Vec<(f64, f64)> {
        self.bins
            .iter()
            .filter(|b| !b.masked)
            .filter_map(|b| b.p_hat.map(|p| ((b.lo + b.hi) / 2.0, p)))
            .collect()
    }
}

/// Resolves bin edges for `values` (which must be non-empty).
pub fn resolve_edges(values: &[f64], spec: &CurveBins) -> Result<Vec<f64>> {
    if values.is_empty() {
        return Err(Error::Empty("curve input"));
    }
    let (lo, hi) = values
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    let edges = match spec {
        CurveBins::EqualWidth(n) => {
            let n = (*n).max(1);
            if hi > lo {
                (0..=n).map(|i| lo + (hi - lo) * i as f64 / n as f64).collect()
            } else {
                vec![lo, lo]
            }
        }
        CurveBins::Quantile(n) => {
            let n = (*n).max(1);
            let mut sorted = values.to_vec();
            sort_floats(&mut sorted);
            let mut e = vec![lo];
            for q in 1..n {
                let cut = sorted[(q * sorted.len()) / n];
                if cut > *e.last().unwrap() && cut < hi {
                    e.push(cut);
                }
            }
            e.push(hi);
            e
        }
        CurveBins::Edges(e) => {
            if e.len() < 2 || e.windows(2).any(|w| !(w[0] < w[1])) {
                return Err(Error::Config(format!(
                    "curve edges must be at least two strictly increasing values: {e:?}"
                )));
            }
            e.clone()
        }
    };
    Ok(edges)
}

fn bin_index(edges: &[f64], x: f64) -> usize {
    let bins = edges.len() - 1;
    edges[1..bins].partition_point(|&e| e <= x).min(bins - 1)
}

/// Engagement probability per bin of a feature with Wilson 95% intervals.
pub fn binned_probability_curve(pairs: &[(f64, bool)], config: &CurveConfig) -> Result<BinnedCurve> {
    let values: Vec<f64> = pairs.iter().map(|p| p.0).collect();
    let edges = resolve_edges(&values, &config.bins)?;
    Ok(curve_with_edges(pairs, edges, config.min_count))
}

/// One curve per stratum, all sharing edges computed over the pooled data.
pub fn binned_probability_curves_by<K: Ord + Clone>(
    items: &[(K, f64, bool)],
    config: &CurveConfig,
) -> Result<BTreeMap<K, BinnedCurve>> {
    let values: Vec<f64> = items.iter().map(|i| i.1).collect();
    let edges = resolve_edges(&values, &config.bins)?;
    let mut groups: BTreeMap<K, Vec<(f64, bool)>> = BTreeMap::new();
    for (k, x, y) in items {
        groups.entry(k.clone()).or_default().push((*x, *y));
    }
    Ok(groups
        .into_iter()
        .map(|(k, pairs)| (k, curve_with_edges(&pairs, edges.clone(), config.min_count)))
        .collect())
}

fn curve_with_edges(pairs: &[(f64, bool)], edges: Vec<f64>, min_count: u64) -> BinnedCurve {
    let nbins = edges.len() - 1;
    let mut counts = vec![(0u64, 0u64); nbins];
    for &(x, y) in pairs {
        let c = &mut counts[bin_index(&edges, x)];
        c.0 += 1;
        c.1 += u64::from(y);
    }
    let bins = counts
        .iter()
        .enumerate()
        .map(|(i, &(count, engaged))| {
            let (p_hat, ci_low, ci_high) = if count == 0 {
                (None, None, None)
            } else {
                let (lo, hi) = wilson_interval(engaged, count, Z_95);
                (Some(engaged as f64 / count as f64), Some(lo), Some(hi))
            };
            CurveBin {
                lo: edges[i],
                hi: edges[i + 1],
                count,
                engaged,
                p_hat,
                ci_low,
                ci_high,
                masked: count == 0 || count < min_count,
            }
        })
        .collect();
    BinnedCurve { edges, bins }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct KsResult {
    pub d: f64,
    pub p_value: f64,
    pub n_a: usize,
    pub n_b: usize,
}

/// Two-sample Kolmogorov-Smirnov test with the asymptotic p-value.
pub fn ks_two_sample(a: &[f64], b: &[f64]) -> Result<KsResult> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::Empty("ks sample"));
    }
    if a.iter().chain(b).any(|x| x.is_nan()) {
        return Err(Error::Data("ks sample contains NaN".into()));
    }
    let d = ks_statistic(a, b);
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let lambda = (na * nb / (na + nb)).sqrt() * d;
    Ok(KsResult {
        d,
        p_value: kolmogorov_q(lambda),
        n_a: a.len(),
        n_b: b.len(),
    })
}

/// `sup_x |F_a(x) - F_b(x)|` via a merged sweep over sorted samples.
pub fn ks_statistic(a: &[f64], b: &[f64]) -> f64 {
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    sort_floats(&mut a);
    sort_floats(&mut b);
    let (na, nb) = (a.len(), b.len());
    let (mut i, mut j) = (0usize, 0usize);
    // Integer cross-multiplied differences keep the sweep exact.
    let mut best: u128 = 0;
    while i < na || j < nb {
        let x = match (a.get(i), b.get(j)) {
            (Some(&x), Some(&y)) => x.min(y),
            (Some(&x), None) => x,
            (None, Some(&y)) => y,
            (None, None) => unreachable!(),
        };
        while i < na && a[i] == x {
            i += 1;
        }
        while j < nb && b[j] == x {
            j += 1;
        }
        let diff = (i as u128 * nb as u128).abs_diff(j as u128 * na as u128);
        best = best.max(diff);
    }
    best as f64 / (na as f64 * nb as f64)
}

/// Kolmogorov survival function `Q(λ) = 2 Σ (-1)^(k-1) exp(-2 k² λ²)`.
///
/// The alternating series is truncated at 100 terms. Below `λ = 1` it
/// converges slowly, so the equivalent theta-function form is used there.
pub fn kolmogorov_q(lambda: f64) -> f64 {
    if lambda <= 0.0 {
        return 1.0;
    }
    if lambda < 1.0 {
        let c = std::f64::consts::PI.powi(2) / (8.0 * lambda * lambda);
        let mut s = 0.0;
        for k in 1..=100 {
            let m = (2 * k - 1) as f64;
            let term = (-m * m * c).exp();
            s += term;
            if term < 1e-300 {
                break;
            }
        }
        return (1.0 - (2.0 * std::f64::consts::PI).sqrt() / lambda * s).clamp(0.0, 1.0);
    }
    let mut s = 0.0;
    for k in 1..=100 {
        let kf = k as f64;
        let term = (-2.0 * kf * kf * lambda * lambda).exp();
        s += if k % 2 == 1 { term } else { -term };
    }
    (2.0 * s).clamp(0.0, 1.0)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Correlation {
    pub r: f64,
    /// Two-sided p-value from the t approximation with `n - 2` degrees of
    /// freedom. Reported as 1 when `n = 2`.
    pub p_value: f64,
    pub n: usize,
}

pub fn pearson_correlation(x: &[f64], y: &[f64]) -> Result<Correlation> {
    if x.len() != y.len() {
        return Err(Error::DimensionMismatch {
            expected: x.len(),
            got: y.len(),
        });
    }
    if x.len() < 2 {
        return Err(Error::Empty("correlation needs at least two points"));
    }
    let mx = mean(x).unwrap();
    let my = mean(y).unwrap();
    let dx: Vec<f64> = x.iter().map(|v| v - mx).collect();
    let dy: Vec<f64> = y.iter().map(|v| v - my).collect();
    let sxy = pairwise_sum(&dx.iter().zip(&dy).map(|(a, b)| a * b).collect::<Vec<_>>());
    let sxx = pairwise_sum(&dx.iter().map(|a| a * a).collect::<Vec<_>>());
    let syy = pairwise_sum(&dy.iter().map(|b| b * b).collect::<Vec<_>>());
    if sxx == 0.0 {
        return Err(Error::ZeroVariance("x"));
    }
    if syy == 0.0 {
        return Err(Error::ZeroVariance("y"));
    }
    let r = (sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0);
    let n = x.len();
    let p_value = if n <= 2 {
        1.0
    } else if r.abs() >= 1.0 {
        0.0
    } else {
        let df = (n - 2) as f64;
        let t = r * (df / (1.0 - r * r)).sqrt();
        let dist = StudentsT::new(0.0, 1.0, df).expect("df > 0");
        (2.0 * (1.0 - dist.cdf(t.abs()))).clamp(0.0, 1.0)
    };
    Ok(Correlation { r, p_value, n })
}

/// Average ranks (1-based), ties sharing their mean rank.
pub fn ranks(x: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..x.len()).collect();
    order.sort_by(|&a, &b| x[a].total_cmp(&x[b]));
    let mut out = vec![0.0; x.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && x[order[j + 1]] == x[order[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            out[k] = r;
        }
        i = j + 1;
    }
    out
}

pub fn spearman_correlation(x: &[f64], y: &[f64]) -> Result<Correlation> {
    pearson_correlation(&ranks(x), &ranks(y))
}

/// Taste similarity of the observed pairs and of the same pairs with senders
/// permuted by `perm` (`perm[i]` is the pair whose sender replaces pair i's).
pub fn similarity_under_permutation(
    pairs: &[(UserId, UserId)],
    vectors: &TasteMap,
    perm: &[usize],
) -> Result<(Vec<f64>, Vec<f64>)> {
    if perm.len() != pairs.len() {
        return Err(Error::DimensionMismatch {
            expected: pairs.len(),
            got: perm.len(),
        });
    }
    let get = |u: UserId| vectors.get(&u).ok_or(Error::MissingVector(u));
    let mut observed = Vec::with_capacity(pairs.len());
    let mut shuffled = Vec::with_capacity(pairs.len());
    for (i, &(s, r)) in pairs.iter().enumerate() {
        observed.push(cosine_similarity(get(s)?, get(r)?)?);
        let s2 = pairs[perm[i]].0;
        shuffled.push(cosine_similarity(get(s2)?, get(r)?)?);
    }
    Ok((observed, shuffled))
}

/// Observed pair similarities and a seeded shuffled-sender baseline.
pub fn permutation_baseline(
    pairs: &[(UserId, UserId)],
    vectors: &TasteMap,
    seed: u64,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let mut perm: Vec<usize> = (0..pairs.len()).collect();
    perm.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    similarity_under_permutation(pairs, vectors, &perm)
}
