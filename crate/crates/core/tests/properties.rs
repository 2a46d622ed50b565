//! Property tests for the statistical, embedding, metric and feature invariants.

use std::sync::OnceLock;

use proptest::prelude::*;

use tastegraph::embeddings::{
    cosine_similarity, train_track_embeddings, user_vector, EmbeddingConfig, EmbeddingSpace, PlaylistCorpus,
    TasteAveraging,
};
use tastegraph::engagement::engagement_score;
use tastegraph::features::{read_examples_csv, write_examples_csv, FeatureVector, LabeledExample, N_COLUMNS};
use tastegraph::model::{average_precision, roc_auc, stratified_folds};
use tastegraph::shares::ShareKey;
use tastegraph::stats::{
    binned_probability_curve, ecdf, ks_statistic, ks_two_sample, ranks, wilson_interval, CurveBins, CurveConfig,
};
use tastegraph::{TrackId, UserId};

fn sample(max: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec((0i32..50).prop_map(|v| v as f64 / 4.0), 1..max)
}

fn scored(max: usize) -> impl Strategy<Value = (Vec<f64>, Vec<bool>)> {
    prop::collection::vec(((0i32..20).prop_map(f64::from), any::<bool>()), 2..max).prop_map(|v| {
        let (s, mut y): (Vec<f64>, Vec<bool>) = v.into_iter().unzip();
        y[0] = true;
        y[1] = false;
        (s, y)
    })
}

fn space() -> &'static EmbeddingSpace {
    static CELL: OnceLock<EmbeddingSpace> = OnceLock::new();
    CELL.get_or_init(|| {
        let lists = (0..60u64)
            .map(|p| (0..12).map(|k| TrackId((p * 7 + k * 3) % 40)).collect())
            .collect();
        let cfg = EmbeddingConfig {
            dim: 8,
            epochs: 2,
            ..Default::default()
        };
        train_track_embeddings(&PlaylistCorpus::new(lists).unwrap(), &cfg).unwrap()
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn engagement_score_is_increasing(n in 1u32..10_000) {
        prop_assert!(engagement_score(n + 1) > engagement_score(n));
        prop_assert!(engagement_score(n) >= 1.0);
    }

    #[test]
    fn ecdf_is_monotone_and_bounded(xs in sample(200), probes in sample(50)) {
        let f = ecdf(&xs).unwrap();
        let mut probes = probes;
        probes.sort_by(f64::total_cmp);
        let vals: Vec<f64> = probes.iter().map(|&p| f.eval(p)).collect();
        prop_assert!(vals.windows(2).all(|w| w[0] <= w[1]));
        prop_assert!(vals.iter().all(|v| (0.0..=1.0).contains(v)));
        let top = xs.iter().copied().fold(f64::MIN, f64::max);
        prop_assert_eq!(f.eval(top), 1.0);
    }

    #[test]
    fn wilson_interval_brackets_estimate(n in 1u64..5000, frac in 0.0f64..=1.0, z in 0.5f64..3.5) {
        let k = ((n as f64) * frac).round() as u64;
        let (lo, hi) = wilson_interval(k, n, z);
        let p = k as f64 / n as f64;
        prop_assert!(0.0 <= lo && lo <= p && p <= hi && hi <= 1.0);
    }

    #[test]
    fn ks_is_symmetric_and_bounded(a in sample(200), b in sample(200)) {
        let ab = ks_two_sample(&a, &b).unwrap();
        let ba = ks_two_sample(&b, &a).unwrap();
        prop_assert_eq!(ab.d, ba.d);
        prop_assert!((0.0..=1.0).contains(&ab.d));
        prop_assert!((0.0..=1.0).contains(&ab.p_value));
        prop_assert_eq!(ks_statistic(&a, &a), 0.0);
    }

    #[test]
    fn ranks_sum_is_triangular(xs in sample(200)) {
        let n = xs.len() as f64;
        let total: f64 = ranks(&xs).iter().sum();
        prop_assert!((total - n * (n + 1.0) / 2.0).abs() < 1e-9);
    }

    #[test]
    fn cosine_is_symmetric_and_scale_invariant(
        v in prop::collection::vec((-100i32..100, -100i32..100), 1..32),
        scale in 0.01f64..100.0,
    ) {
        let a: Vec<f64> = v.iter().map(|p| f64::from(p.0)).collect();
        let b: Vec<f64> = v.iter().map(|p| f64::from(p.1)).collect();
        prop_assume!(a.iter().any(|&x| x != 0.0) && b.iter().any(|&x| x != 0.0));
        let ab = cosine_similarity(&a, &b).unwrap();
        let ba = cosine_similarity(&b, &a).unwrap();
        let scaled: Vec<f64> = a.iter().map(|x| x * scale).collect();
        prop_assert!((ab - ba).abs() < 1e-12);
        prop_assert!((cosine_similarity(&scaled, &b).unwrap() - ab).abs() < 1e-9);
        prop_assert!((-1.0..=1.0).contains(&ab));
    }

    #[test]
    fn user_vector_ignores_listen_order(
        listens in prop::collection::vec((0u64..45, 0i64..100), 1..80),
        seed in any::<u64>(),
    ) {
        let listening: Vec<(TrackId, i64)> = listens.iter().map(|&(t, ts)| (TrackId(t), ts)).collect();
        let mut shuffled = listening.clone();
        let n = shuffled.len();
        for i in (1..n).rev() {
            shuffled.swap(i, (seed.wrapping_mul(i as u64 + 1) >> 7) as usize % (i + 1));
        }
        for avg in [TasteAveraging::PerListen, TasteAveraging::DistinctTracks] {
            let a = user_vector(UserId(1), &listening, space(), (10, 90), avg);
            let b = user_vector(UserId(1), &shuffled, space(), (10, 90), avg);
            match (a, b) {
                (Ok(a), Ok(b)) => {
                    for (x, y) in a.vector.iter().zip(&b.vector) {
                        prop_assert!((x - y).abs() < 1e-9);
                    }
                }
                (a, b) => prop_assert_eq!(a.is_err(), b.is_err()),
            }
        }
    }

    #[test]
    fn curve_counts_every_pair(
        pairs in prop::collection::vec(((0i32..100).prop_map(f64::from), any::<bool>()), 1..400),
        bins in 1usize..12,
        min_count in 0u64..40,
    ) {
        let curve = binned_probability_curve(&pairs, &CurveConfig { bins: CurveBins::Quantile(bins), min_count }).unwrap();
        prop_assert_eq!(curve.total_count(), pairs.len() as u64);
        let engaged: u64 = curve.bins.iter().map(|b| b.engaged).sum();
        prop_assert_eq!(engaged, pairs.iter().filter(|p| p.1).count() as u64);
        for b in &curve.bins {
            prop_assert_eq!(b.masked, b.count < min_count.max(1));
        }
    }

    #[test]
    fn auc_flips_under_score_negation((s, y) in scored(300)) {
        let auc = roc_auc(&s, &y).unwrap();
        let neg: Vec<f64> = s.iter().map(|x| -x).collect();
        prop_assert!((auc + roc_auc(&neg, &y).unwrap() - 1.0).abs() < 1e-12);
        let ap = average_precision(&s, &y).unwrap();
        prop_assert!((0.0..=1.0).contains(&ap));
    }

    #[test]
    fn folds_are_stratified(labels in prop::collection::vec(any::<bool>(), 10..400), k in 2usize..6, seed in any::<u64>()) {
        let folds = stratified_folds(&labels, k, seed).unwrap();
        for class in [true, false] {
            let per: Vec<usize> = (0..k)
                .map(|f| labels.iter().zip(&folds).filter(|(l, fo)| **l == class && **fo == f).count())
                .collect();
            let (lo, hi) = (per.iter().min().unwrap(), per.iter().max().unwrap());
            prop_assert!(hi - lo <= 1);
        }
    }

    #[test]
    fn feature_rows_round_trip(raw in prop::collection::vec(0u32..1000, N_COLUMNS), frac in prop::option::of(0.0f64..=1.0)) {
        let fv = FeatureVector {
            sum_social_interactions: u64::from(raw[0]),
            direct_link_share: raw[1] % 2 == 0,
            reciprocal_link_sharing: raw[2] % 2 == 0,
            receiver_share_in_degree: u64::from(raw[3]),
            receiver_share_out_degree: u64::from(raw[4]),
            sender_share_out_degree: u64::from(raw[5]),
            fraction_engaged_friends: frac,
            sr_cosine: f64::from(raw[6]) / 1000.0 - 0.5,
            rt_cosine: f64::from(raw[7]) / 999.0,
            artist_popularity_rank: raw[8] + 1,
            release_age_s: i64::from(raw[9]) * 86_400,
            sender_artist_engagement_7d: f64::from(raw[10]) / 7.0,
            is_subscriber: raw[11] % 2 == 0,
            receiver_streaming_hours_7d: f64::from(raw[12]) / 3.0,
            receiver_days_on_platform: i64::from(raw[13]),
        };
        prop_assert_eq!(&FeatureVector::from_row(&fv.to_row()).unwrap(), &fv);

        let ex = LabeledExample {
            key: ShareKey { share_ts: i64::from(raw[14]), sender: UserId(1), receiver: UserId(2), track_id: TrackId(3) },
            features: fv,
            label: raw[15] % 2 == 0,
        };
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("rows.csv");
        write_examples_csv(&path, std::slice::from_ref(&ex)).unwrap();
        prop_assert_eq!(read_examples_csv(&path).unwrap(), vec![ex]);
    }
}
