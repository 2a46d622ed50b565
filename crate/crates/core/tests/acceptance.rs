//! Acceptance criteria 1-10. Each test prints one `PASS`/`FAIL` line to
//! stderr (bypassing the harness's output capture) and fails on `FAIL`.
//! Tests take a shared lock so timings are not distorted by each other.
//!
//! Run with `cargo test -p tastegraph --test acceptance`.

use std::collections::BTreeSet;
use std::io::Write as _;
use std::sync::{Mutex, MutexGuard, OnceLock};
use std::time::Instant;

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

use tastegraph::embeddings::train_track_embeddings;
use tastegraph::engagement::{
    engagement_score, is_engaged_receiver, PlaybackLog, PlaybackRecord, RECEIVER_WINDOW_DAYS,
};
use tastegraph::features::{
    build_dataset, examples_to_dataset, feature_groups, hygiene_audit, FeatureContext, FeatureSetId,
    LabeledExample, COLUMNS, N_COLUMNS,
};
use tastegraph::graph::{InteractionEvent, LayerKind, MultiplexNetwork};
use tastegraph::model::{
    average_precision, fit_forest, fit_forest_with, mdi_importance, roc_auc, stratified_folds, Dataset,
    IsolationTable, Parallelism,
};
use tastegraph::pipeline::{self, homophily_analysis, Command, RunConfig};
use tastegraph::shares::{filter_discovery_shares, AppModeTable, ShareEvent};
use tastegraph::stats::{binned_probability_curve, ks_two_sample, spearman_correlation, CurveBins, CurveConfig};
use tastegraph::synth::{generate, generate_world, PlantedCoefficients, SynthConfig, Synthetic};
use tastegraph::{ArtistId, TrackId, UserId, DAY_SECONDS};

static SERIAL: Mutex<()> = Mutex::new(());

fn serial() -> MutexGuard<'static, ()> {
    SERIAL.lock().unwrap_or_else(|e| e.into_inner())
}

fn verdict(n: u32, name: &str, checks: &[(String, bool)]) {
    let pass = checks.iter().all(|c| c.1);
    let detail: Vec<String> = checks
        .iter()
        .map(|(d, ok)| if *ok { d.clone() } else { format!("FAILED {d}") })
        .collect();
    let line = format!(
        "criterion {n:>2} {}: {name} ({})",
        if pass { "PASS" } else { "FAIL" },
        detail.join("; ")
    );
    let _ = writeln!(std::io::stderr(), "{line}");
    assert!(pass, "{line}");
}

fn check(desc: String, ok: bool) -> (String, bool) {
    (desc, ok)
}

// ---------------------------------------------------------------------------
// Shared 100k-event world.

struct Shared {
    cfg: SynthConfig,
    syn: Synthetic,
    discovery: Vec<ShareEvent>,
    examples: Vec<LabeledExample>,
    data: Dataset,
    extraction_rate: f64,
}

fn shared() -> &'static Shared {
    static CELL: OnceLock<Shared> = OnceLock::new();
    CELL.get_or_init(|| {
        let cfg = RunConfig::default().resolved().synth;
        assert_eq!(cfg.n_share_events, 100_000);
        let syn = generate(&cfg).expect("generation");
        let discovery = filter_discovery_shares(&syn.shares, &syn.playback);
        let modes = AppModeTable::new();
        let t = Instant::now();
        let ctx = FeatureContext::new(
            &syn.network,
            &syn.space,
            &syn.playback,
            &syn.accounts,
            &modes,
            cfg.feature_config(),
        );
        let (examples, _) = build_dataset(&ctx, &discovery).expect("extraction");
        let extraction_rate = discovery.len() as f64 / t.elapsed().as_secs_f64();
        let data = examples_to_dataset(&examples).expect("dataset");
        Shared {
            cfg,
            syn,
            discovery,
            examples,
            data,
            extraction_rate,
        }
    })
}

fn isolation() -> &'static IsolationTable {
    static CELL: OnceLock<IsolationTable> = OnceLock::new();
    CELL.get_or_init(|| {
        let s = shared();
        let m = RunConfig::default().resolved().model;
        tastegraph::model::feature_set_isolation(&s.data, &feature_groups(), &m.hyperparams, 5, m.seed)
            .expect("isolation")
    })
}

// ---------------------------------------------------------------------------

fn play(user: u64, track: u64, ts: i64) -> PlaybackRecord {
    PlaybackRecord {
        user: UserId(user),
        track: TrackId(track),
        artist: ArtistId(1),
        ts,
        duration_s: 60.0,
    }
}

#[test]
fn criterion_01_engagement_formula() {
    let _g = serial();
    let mut checks = Vec::new();
    for (n, want) in [(1u32, 1.0), (2, 1.30103), (10, 2.0)] {
        let got = engagement_score(n);
        let tol = if n == 2 { 1e-5 } else { 1e-9 };
        checks.push(check(format!("e({n})={got:.6}"), (got - want).abs() < tol));
    }
    checks.push(check("e(0)=0".into(), engagement_score(0) == 0.0));
    checks.push(check(
        "e(2) exact".into(),
        (engagement_score(2) - (2f64.log10() + 1.0)).abs() < 1e-9,
    ));
    let day = 100;
    let two = PlaybackLog::from_records(vec![play(1, 10, day * DAY_SECONDS + 5), play(1, 11, day * DAY_SECONDS + 9)]).unwrap();
    let one = PlaybackLog::from_records(vec![play(1, 10, day * DAY_SECONDS + 5)]).unwrap();
    let w2 = two.aggregate_engagement(UserId(1), ArtistId(1), day, RECEIVER_WINDOW_DAYS).unwrap();
    let w1 = one.aggregate_engagement(UserId(1), ArtistId(1), day, RECEIVER_WINDOW_DAYS).unwrap();
    checks.push(check("two tracks one day engaged".into(), is_engaged_receiver(&w2)));
    checks.push(check("one track not engaged".into(), !is_engaged_receiver(&w1)));
    verdict(1, "engagement formula exactness", &checks);
}

#[test]
fn criterion_02_engagement_curve_family() {
    let _g = serial();
    let t = Instant::now();
    let mut family_ok = true;
    for n in 1..=20u64 {
        for t_max in 1..=RECEIVER_WINDOW_DAYS {
            let mut recs = Vec::new();
            for d in 0..t_max {
                for k in 0..n {
                    recs.push(play(1, 100 + k, (50 + d) * DAY_SECONDS + 60 * k as i64));
                }
            }
            let log = PlaybackLog::from_records(recs).unwrap();
            let e = log
                .aggregate_engagement(UserId(1), ArtistId(1), 50, RECEIVER_WINDOW_DAYS)
                .unwrap()
                .e;
            let want = t_max as f64 * ((n as f64).log10() + 1.0);
            family_ok &= (e - want).abs() < 1e-9;
        }
    }
    let mut spread_ok = true;
    for m in 2..=100u64 {
        let spread: Vec<_> = (0..m).map(|d| play(1, 100, (50 + d as i64) * DAY_SECONDS)).collect();
        let packed: Vec<_> = (0..m).map(|k| play(1, 100 + k, 50 * DAY_SECONDS + k as i64)).collect();
        let e = |recs: Vec<PlaybackRecord>| {
            PlaybackLog::from_records(recs)
                .unwrap()
                .aggregate_engagement(UserId(1), ArtistId(1), 50, 100)
                .unwrap()
                .e
        };
        spread_ok &= e(spread) > e(packed);
    }
    let secs = t.elapsed().as_secs_f64();
    verdict(
        2,
        "engagement curve family",
        &[
            check("E = t_max(log10 n + 1) for n<=20, t_max<=7".into(), family_ok),
            check("m days x 1 > 1 day x m for 2<=m<=100".into(), spread_ok),
            check(format!("runtime {secs:.3}s < 1s"), secs < 1.0),
        ],
    );
}

fn brute_ks(a: &[f64], b: &[f64]) -> (i64, i64) {
    let (n, m) = (a.len() as i64, b.len() as i64);
    let mut best = 0i64;
    for &t in a.iter().chain(b) {
        let ca = a.iter().filter(|&&x| x <= t).count() as i64;
        let cb = b.iter().filter(|&&x| x <= t).count() as i64;
        best = best.max((ca * m - cb * n).abs());
    }
    (best, n * m)
}

fn brute_auc_twice(s: &[f64], y: &[bool]) -> (u64, u64) {
    let mut twice = 0u64;
    let mut pairs = 0u64;
    for i in 0..s.len() {
        for j in 0..s.len() {
            if y[i] && !y[j] {
                pairs += 1;
                twice += if s[i] > s[j] { 2 } else if s[i] == s[j] { 1 } else { 0 };
            }
        }
    }
    (twice, pairs)
}

fn brute_ap(s: &[f64], y: &[bool]) -> f64 {
    let pos = y.iter().filter(|&&l| l).count() as f64;
    let mut total = 0.0;
    for i in (0..s.len()).filter(|&i| y[i]) {
        let above: Vec<usize> = (0..s.len()).filter(|&j| s[j] >= s[i]).collect();
        let tp = above.iter().filter(|&&j| y[j]).count() as f64;
        total += tp / above.len() as f64;
    }
    total / pos
}

fn brute_friends(events: &[InteractionEvent], n: u64, as_of: i64) -> Vec<BTreeSet<u64>> {
    let mut f = vec![BTreeSet::new(); n as usize + 1];
    let before: Vec<&InteractionEvent> = events.iter().filter(|e| e.timestamp < as_of).collect();
    for e in &before {
        let (a, b) = (e.src.0, e.dst.0);
        let mutual = match e.layer {
            LayerKind::LinkShare => before
                .iter()
                .any(|o| o.layer == LayerKind::LinkShare && o.src.0 == b && o.dst.0 == a),
            _ => true,
        };
        if mutual {
            f[a as usize].insert(b);
            f[b as usize].insert(a);
        }
    }
    f
}

#[test]
fn criterion_03_oracle_equivalence() {
    let _g = serial();
    let t = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let (mut ks_ok, mut auc_ok, mut ap_ok, mut cc_ok, mut eo_ok) = (0, 0, 0, 0, 0);
    let instances = 120;
    for _ in 0..instances {
        let n = rng.random_range(1..=500);
        let m = rng.random_range(1..=500);
        let levels = rng.random_range(2..=60);
        let a: Vec<f64> = (0..n).map(|_| rng.random_range(0..levels) as f64).collect();
        let b: Vec<f64> = (0..m).map(|_| rng.random_range(0..levels) as f64 + 0.5 * rng.random_range(0..2) as f64).collect();
        let ks = ks_two_sample(&a, &b).unwrap();
        let (num, den) = brute_ks(&a, &b);
        ks_ok += usize::from((ks.d * den as f64).round() as i64 == num && (ks.d - num as f64 / den as f64).abs() < 1e-12);

        let len = rng.random_range(2..=500);
        let mut y: Vec<bool> = (0..len).map(|_| rng.random_bool(0.4)).collect();
        y[0] = true;
        y[1] = false;
        let s: Vec<f64> = (0..len).map(|_| rng.random_range(0..levels) as f64 / levels as f64).collect();
        let auc = roc_auc(&s, &y).unwrap();
        let (twice, pairs) = brute_auc_twice(&s, &y);
        auc_ok += usize::from((auc * 2.0 * pairs as f64).round() as u64 == twice && (auc - twice as f64 / (2.0 * pairs as f64)).abs() < 1e-12);
        ap_ok += usize::from((average_precision(&s, &y).unwrap() - brute_ap(&s, &y)).abs() < 1e-12);

        let users = rng.random_range(3..=40u64);
        let n_events = rng.random_range(1..=500);
        let layers = [LayerKind::LinkShare, LayerKind::LinkShare, LayerKind::SocialListening, LayerKind::CollabPlaylist];
        let events: Vec<InteractionEvent> = (0..n_events)
            .filter_map(|_| {
                let s = rng.random_range(1..=users);
                let d = rng.random_range(1..=users);
                (s != d).then(|| {
                    InteractionEvent::new(*layers.choose(&mut rng).unwrap(), UserId(s), UserId(d), rng.random_range(0..1000))
                })
            })
            .collect();
        let net = MultiplexNetwork::from_events(events.iter().copied()).unwrap();
        let as_of = rng.random_range(0..=1100);
        let f = brute_friends(&events, users, as_of);
        let mut cc_all = true;
        let mut eo_all = true;
        for i in 1..=users {
            let fi: Vec<u64> = f[i as usize].iter().copied().collect();
            let k = fi.len();
            let want_cc = if k < 2 {
                0.0
            } else {
                let mut links = 0;
                for x in 0..k {
                    for z in x + 1..k {
                        links += usize::from(f[fi[x] as usize].contains(&fi[z]));
                    }
                }
                links as f64 / (k * (k - 1) / 2) as f64
            };
            cc_all &= net.clustering_coefficient(UserId(i), as_of) == want_cc;
            for j in 1..=users {
                if i == j {
                    continue;
                }
                let a: BTreeSet<u64> = f[i as usize].iter().copied().filter(|&u| u != i && u != j).collect();
                let b: BTreeSet<u64> = f[j as usize].iter().copied().filter(|&u| u != i && u != j).collect();
                let uni = a.union(&b).count();
                let want = if uni == 0 { 0.0 } else { a.intersection(&b).count() as f64 / uni as f64 };
                eo_all &= net.edge_overlap(UserId(i), UserId(j), as_of) == want;
            }
        }
        cc_ok += usize::from(cc_all);
        eo_ok += usize::from(eo_all);
    }
    let secs = t.elapsed().as_secs_f64();
    let all = |k: usize, name: &str| check(format!("{name} {k}/{instances}"), k == instances);
    verdict(
        3,
        "oracle equivalence",
        &[
            all(ks_ok, "KS D"),
            all(auc_ok, "ROC-AUC"),
            all(ap_ok, "average precision"),
            all(cc_ok, "clustering"),
            all(eo_ok, "edge overlap"),
            check(format!("runtime {secs:.1}s < 60s"), secs < 60.0),
        ],
    );
}

#[test]
fn criterion_04_homophily_recovery() {
    let _g = serial();
    let t = Instant::now();
    let run = |h: f64| {
        let cfg = SynthConfig {
            homophily: h,
            ..RunConfig::default().resolved().synth
        };
        assert_eq!(cfg.n_users, 10_000);
        let w = generate_world(&cfg).unwrap();
        let space = train_track_embeddings(&w.playlists, &cfg.embedding).unwrap();
        let net = MultiplexNetwork::from_events(w.interactions.iter().copied()).unwrap();
        let log = PlaybackLog::from_records(w.playback.clone()).unwrap();
        homophily_analysis(&net, &log, &space, &cfg.feature_config(), 99).unwrap().0
    };
    let hi = run(0.8);
    let lo = run(0.0);
    let secs = t.elapsed().as_secs_f64();
    let diff = hi.mean_observed - hi.mean_shuffled;
    verdict(
        4,
        "homophily recovery",
        &[
            check(format!("h=0.8 mean diff {diff:.3} >= 0.1 ({} pairs)", hi.pairs), diff >= 0.1),
            check(format!("h=0.8 KS p {:.2e} < 0.01 (D {:.3})", hi.ks_p, hi.ks_d), hi.ks_p < 0.01),
            check(format!("h=0 KS D {:.4} < 0.05 ({} pairs)", lo.ks_d, lo.pairs), lo.ks_d < 0.05 && lo.pairs >= 10_000),
            check(format!("runtime {secs:.0}s < 120s"), secs < 120.0),
        ],
    );
}

/// Column whose planted coefficient times its transformed spread is largest.
fn dominant_column(s: &Shared) -> usize {
    let b = s.cfg.coefficients.as_array();
    let g: Vec<[f64; N_COLUMNS]> = s.examples.iter().map(|e| PlantedCoefficients::transform(&e.features)).collect();
    let n = g.len() as f64;
    let effect: Vec<f64> = (0..N_COLUMNS)
        .map(|j| {
            let m = g.iter().map(|r| r[j]).sum::<f64>() / n;
            let sd = (g.iter().map(|r| (r[j] - m).powi(2)).sum::<f64>() / n).sqrt();
            (b[j] * sd).abs()
        })
        .collect();
    (0..N_COLUMNS).max_by(|&a, &c| effect[a].total_cmp(&effect[c])).unwrap()
}

#[test]
fn criterion_05_planted_model_recovery() {
    let _g = serial();
    let t = Instant::now();
    let s = shared();
    let table = isolation();
    let full = &table.full().report;
    let m = RunConfig::default().resolved().model;

    // Bayes ROC-AUC of p* on the same test folds.
    let p_star: Vec<f64> = s.syn.truth.events.iter().map(|e| e.p_star).collect();
    let labels = s.data.labels();
    assert!(s.examples.iter().zip(&s.syn.truth.events).all(|(e, t)| e.key == t.key));
    let folds = stratified_folds(labels, 5, m.seed).unwrap();
    let mut bayes = 0.0;
    for f in 0..5 {
        let idx: Vec<usize> = (0..labels.len()).filter(|&i| folds[i] == f).collect();
        let sc: Vec<f64> = idx.iter().map(|&i| p_star[i]).collect();
        let y: Vec<bool> = idx.iter().map(|&i| labels[i]).collect();
        bayes += roc_auc(&sc, &y).unwrap() / 5.0;
    }
    let auc = full.mean.roc_auc;

    let dom = dominant_column(s);
    let model = fit_forest(&s.data, &m.hyperparams).unwrap();
    let mdi = mdi_importance(&model).unwrap();
    let mut order: Vec<usize> = (0..N_COLUMNS).collect();
    order.sort_by(|&a, &b| mdi[b].total_cmp(&mdi[a]));
    let dom_rank = order.iter().position(|&j| j == dom).unwrap() + 1;

    let dom_group = COLUMNS[dom].1.title();
    let best_group = table
        .groups()
        .iter()
        .max_by(|a, b| a.report.mean.roc_auc.total_cmp(&b.report.mean.roc_auc))
        .unwrap();
    let full_top = table.groups().iter().all(|r| full.mean.roc_auc >= r.report.mean.roc_auc);
    let secs = t.elapsed().as_secs_f64();
    verdict(
        5,
        "planted-model recovery",
        &[
            check(
                format!("CV ROC-AUC {auc:.4} in [Bayes-0.05, Bayes+0.01] = [{:.4}, {:.4}]", bayes - 0.05, bayes + 0.01),
                auc >= bayes - 0.05 && auc <= bayes + 0.01,
            ),
            check(format!("dominant feature {} MDI rank {dom_rank} <= 2", COLUMNS[dom].0), dom_rank <= 2),
            check(
                format!("best solo group {} ({:.4}) is {dom_group}", best_group.name, best_group.report.mean.roc_auc),
                best_group.name == dom_group,
            ),
            check(format!("Full Model {:.4} >= every group", full.mean.roc_auc), full_top),
            check(format!("runtime {secs:.0}s < 600s"), secs < 600.0),
        ],
    );
}

#[test]
fn criterion_06_planted_effect_shapes() {
    let _g = serial();
    let s = shared();
    let rt: Vec<(f64, bool)> = s.examples.iter().map(|e| (e.features.rt_cosine, e.label)).collect();
    let curve = binned_probability_curve(
        &rt,
        &CurveConfig {
            bins: CurveBins::Quantile(10),
            min_count: 30,
        },
    )
    .unwrap();
    let pts = curve.points();
    let xs: Vec<f64> = pts.iter().map(|p| p.0).collect();
    let ps: Vec<f64> = pts.iter().map(|p| p.1).collect();
    let rho = spearman_correlation(&xs, &ps).map(|c| c.r).unwrap_or(f64::NAN);

    let cap = tastegraph::synth::INTERACTION_CAP;
    let above: Vec<(f64, bool)> = s
        .examples
        .iter()
        .map(|e| (e.features.sum_social_interactions as f64, e.label))
        .filter(|p| p.0 >= cap)
        .collect();
    let top = above.iter().map(|p| p.0).fold(0.0, f64::max).max(10.0) + 1.0;
    let plateau = binned_probability_curve(
        &above,
        &CurveConfig {
            bins: CurveBins::Edges(vec![cap, cap + 1.0, cap + 2.0, cap + 3.0, cap + 5.0, top]),
            min_count: 30,
        },
    )
    .unwrap();
    let live: Vec<_> = plateau.bins.iter().filter(|b| !b.masked).collect();
    let max_low = live.iter().filter_map(|b| b.ci_low).fold(0.0, f64::max);
    let min_high = live.iter().filter_map(|b| b.ci_high).fold(1.0, f64::min);
    let p_hats: Vec<String> = live.iter().filter_map(|b| b.p_hat).map(|p| format!("{p:.3}")).collect();
    verdict(
        6,
        "planted effect shapes",
        &[
            check(format!("rt_cosine bin Spearman {rho:.3} > 0.9 over {} bins", pts.len()), rho > 0.9 && pts.len() >= 5),
            check(
                format!(
                    "interactions >= 5 flat within CI: {} bins p=[{}], max ci_low {max_low:.3} <= min ci_high {min_high:.3}",
                    live.len(),
                    p_hats.join(",")
                ),
                live.len() >= 3 && max_low <= min_high,
            ),
        ],
    );
}

#[test]
fn criterion_07_sparse_feature_behavior() {
    let _g = serial();
    let s = shared();
    let n = s.examples.len() as f64;
    let avail = s.examples.iter().filter(|e| e.features.fraction_engaged_friends.is_some()).count() as f64 / n;
    let sc = isolation().row(FeatureSetId::SC.title()).expect("SC row");
    let (p, r) = (sc.report.mean.precision, sc.report.mean.recall);
    verdict(
        7,
        "sparse-feature behavior",
        &[
            check(format!("friend fraction available in {:.2}% of rows (~1%)", 100.0 * avail), (0.005..=0.03).contains(&avail)),
            check(format!("SC precision {p:.4} - recall {r:.4} = {:.4} >= 0.3", p - r), p - r >= 0.3),
        ],
    );
}

const SMALL_RUN: &str = r#"
[synth]
n_users = 800
n_artists = 300
n_playlists = 300
n_share_events = 3000

[embedding]
dim = 16
epochs = 2

[audit]
events = 300

[model]
folds = 3

[model.hyperparams]
n_estimators = 20
max_depth = 12
min_samples_leaf = 10
"#;

#[test]
fn criterion_08_determinism() {
    let _g = serial();
    let tmp = tempfile::tempdir().unwrap();
    let mut outs = Vec::new();
    for name in ["a", "b"] {
        let mut cfg = RunConfig::from_toml_str(SMALL_RUN).unwrap();
        cfg.out_dir = tmp.path().join(name);
        outs.push(pipeline::run_all(&Command::ALL, &cfg).unwrap());
    }
    let mut stage_checks = Vec::new();
    for (ma, mb) in outs[0].iter().zip(&outs[1]) {
        stage_checks.push(check(
            format!("{} ({} files)", ma.command, ma.outputs.len()),
            !ma.outputs.is_empty() && ma.outputs == mb.outputs,
        ));
    }

    let s = shared();
    let rows: Vec<usize> = (0..20_000).collect();
    let sub = s.data.subset_rows(&rows);
    let hp = tastegraph::model::Hyperparams {
        n_estimators: 24,
        max_depth: 20,
        min_samples_leaf: 10,
        seed: 5,
        ..Default::default()
    };
    let serial_m = fit_forest_with(&sub, &hp, Parallelism::Serial).unwrap();
    let par_m = fit_forest_with(&sub, &hp, Parallelism::Rayon).unwrap();
    let same_forest = serial_m == par_m
        && serde_json::to_string(&serial_m).unwrap() == serde_json::to_string(&par_m).unwrap();
    let again = generate_world(&SynthConfig {
        n_users: 2000,
        ..s.cfg.clone()
    })
    .unwrap();
    let again2 = generate_world(&SynthConfig {
        n_users: 2000,
        ..s.cfg.clone()
    })
    .unwrap();
    stage_checks.push(check("forest serial == parallel".into(), same_forest));
    stage_checks.push(check(
        "world regenerated identically".into(),
        again.interactions == again2.interactions && again.playback == again2.playback,
    ));
    verdict(8, "determinism", &stage_checks);
}

#[test]
fn criterion_09_temporal_hygiene() {
    let _g = serial();
    let t = Instant::now();
    let s = shared();
    let modes = AppModeTable::new();
    let ctx = FeatureContext::new(
        &s.syn.network,
        &s.syn.space,
        &s.syn.playback,
        &s.syn.accounts,
        &modes,
        s.cfg.feature_config(),
    );
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let mut picks = rand::seq::index::sample(&mut rng, s.discovery.len(), 10_000).into_vec();
    picks.sort_unstable();
    let events: Vec<ShareEvent> = picks.iter().map(|&i| s.discovery[i].clone()).collect();
    let report = hygiene_audit(&ctx, &events).unwrap();
    let secs = t.elapsed().as_secs_f64();
    verdict(
        9,
        "temporal hygiene",
        &[
            check(format!("{} audited, {} skipped", report.audited, report.skipped), report.audited == 10_000),
            check(format!("{} mismatches", report.mismatches.len()), report.mismatches.is_empty()),
            check(format!("audit took {secs:.1}s"), true),
        ],
    );
}

#[test]
fn criterion_10_desk_scale_performance() {
    let _g = serial();
    let tmp = tempfile::tempdir().unwrap();
    let cfg = RunConfig {
        out_dir: tmp.path().join("run"),
        ..Default::default()
    };
    let t = Instant::now();
    let steps = [Command::Generate, Command::Ingest, Command::Embed, Command::Features, Command::Train];
    let ok = pipeline::run_all(&steps, &cfg).is_ok();
    let secs = t.elapsed().as_secs_f64();
    let rate = shared().extraction_rate;
    verdict(
        10,
        "desk-scale performance",
        &[
            check(format!("generate..train on 100k events ok={ok} in {secs:.0}s < 600s"), ok && secs < 600.0),
            check(format!("extraction {rate:.0} events/s >= 10000"), rate >= 10_000.0),
        ],
    );
}
