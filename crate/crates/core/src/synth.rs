//! Synthetic worlds with planted ground truth.
//!
//! A world has users with genre-mixture tastes wired into a homophilous
//! network, a genre-structured catalog, playlists, pre-analysis listening and
//! account records. Share events are then drawn along the network and each
//! discovery share gets an engagement probability `p* = logistic(b0 + b·g(x))`
//! over transforms `g` of its own extracted feature vector. The realised
//! label is written into the playback log as witness plays, so running the
//! extraction pipeline on the output recovers every label exactly.
//!
//! Timing rules that keep share-time features honest:
//! * all social ties, account changes and fan listening happen before the
//!   analysis start;
//! * a receiver has no playback between a share and its open (inclusive), so
//!   open-anchored usage features equal what was known at share time.

use rand::distr::weighted::WeightedIndex;
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Exp, Gamma, Geometric, LogNormal, Poisson};
use rustc_hash::{FxHashMap, FxHashSet};
use serde::{Deserialize, Serialize};

use crate::embeddings::{cosine_similarity, train_track_embeddings, EmbeddingConfig, EmbeddingSpace, PlaylistCorpus};
use crate::engagement::{PlaybackLog, PlaybackRecord, FRIEND_WINDOW_DAYS, RECEIVER_WINDOW_DAYS};
use crate::features::{
    AccountLog, AccountRecord, FeatureConfig, FeatureContext, FeatureVector, SubscriptionSpan,
    N_COLUMNS,
};
use crate::graph::{InteractionEvent, LayerKind, MultiplexNetwork};
use crate::model::roc_auc;
use crate::shares::{AppModeTable, ShareEvent, ShareKey, BROADCAST_APPS, DIRECT_APPS};
use crate::{day_of, AlbumId, ArtistId, Error, Result, Timestamp, TrackId, UserId, DAY_SECONDS};

/// Logit coefficients, one per model column, applied to transformed values:
/// `min(x, 5)` for the interaction sum, `ln(1 + x)` for degrees, streaming
/// hours, days on platform and sender-artist engagement, `ln(rank)` for
/// popularity, years for release age, identity otherwise. A missing friend
/// fraction contributes 0.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PlantedCoefficients {
    pub sum_social_interactions: f64,
    pub direct_link_share: f64,
    pub reciprocal_link_sharing: f64,
    pub receiver_share_in_degree: f64,
    pub receiver_share_out_degree: f64,
    pub sender_share_out_degree: f64,
    pub fraction_engaged_friends: f64,
    pub fraction_engaged_friends_available: f64,
    pub sr_cosine: f64,
    pub rt_cosine: f64,
    pub artist_popularity_rank: f64,
    pub release_age_s: f64,
    pub sender_artist_engagement_7d: f64,
    pub is_subscriber: f64,
    pub receiver_streaming_hours_7d: f64,
    pub receiver_days_on_platform: f64,
}

impl Default for PlantedCoefficients {
    fn default() -> Self {
        Self {
            sum_social_interactions: 0.3,
            direct_link_share: 0.3,
            reciprocal_link_sharing: 0.3,
            receiver_share_in_degree: 0.05,
            receiver_share_out_degree: 0.05,
            sender_share_out_degree: -0.05,
            fraction_engaged_friends: 4.0,
            fraction_engaged_friends_available: 0.0,
            sr_cosine: 0.5,
            rt_cosine: 2.5,
            artist_popularity_rank: -0.1,
            release_age_s: -0.05,
            sender_artist_engagement_7d: 1.5,
            is_subscriber: 0.3,
            receiver_streaming_hours_7d: 0.25,
            receiver_days_on_platform: 0.05,
        }
    }
}

/// Cap of the saturating interaction-sum transform.
pub const INTERACTION_CAP: f64 = 5.0;
const YEAR_SECONDS: f64 = 365.25 * DAY_SECONDS as f64;

impl PlantedCoefficients {
    pub fn zeros() -> Self {
        Self {
            sum_social_interactions: 0.0,
            direct_link_share: 0.0,
            reciprocal_link_sharing: 0.0,
            receiver_share_in_degree: 0.0,
            receiver_share_out_degree: 0.0,
            sender_share_out_degree: 0.0,
            fraction_engaged_friends: 0.0,
            fraction_engaged_friends_available: 0.0,
            sr_cosine: 0.0,
            rt_cosine: 0.0,
            artist_popularity_rank: 0.0,
            release_age_s: 0.0,
            sender_artist_engagement_7d: 0.0,
            is_subscriber: 0.0,
            receiver_streaming_hours_7d: 0.0,
            receiver_days_on_platform: 0.0,
        }
    }

    /// Coefficients in model column order.
    pub fn as_array(&self) -> [f64; N_COLUMNS] {
        [
            self.sum_social_interactions,
            self.direct_link_share,
            self.reciprocal_link_sharing,
            self.receiver_share_in_degree,
            self.receiver_share_out_degree,
            self.sender_share_out_degree,
            self.fraction_engaged_friends,
            self.fraction_engaged_friends_available,
            self.sr_cosine,
            self.rt_cosine,
            self.artist_popularity_rank,
            self.release_age_s,
            self.sender_artist_engagement_7d,
            self.is_subscriber,
            self.receiver_streaming_hours_7d,
            self.receiver_days_on_platform,
        ]
    }

    /// Transformed feature values in model column order.
    pub fn transform(fv: &FeatureVector) -> [f64; N_COLUMNS] {
        let ln1p = |x: f64| x.max(0.0).ln_1p();
        let b = |x: bool| f64::from(u8::from(x));
        [
            (fv.sum_social_interactions as f64).min(INTERACTION_CAP),
            b(fv.direct_link_share),
            b(fv.reciprocal_link_sharing),
            ln1p(fv.receiver_share_in_degree as f64),
            ln1p(fv.receiver_share_out_degree as f64),
            ln1p(fv.sender_share_out_degree as f64),
            fv.fraction_engaged_friends.unwrap_or(0.0),
            b(fv.fraction_engaged_friends.is_some()),
            fv.sr_cosine,
            fv.rt_cosine,
            f64::from(fv.artist_popularity_rank.max(1)).ln(),
            fv.release_age_s as f64 / YEAR_SECONDS,
            ln1p(fv.sender_artist_engagement_7d),
            b(fv.is_subscriber),
            ln1p(fv.receiver_streaming_hours_7d),
            ln1p(fv.receiver_days_on_platform as f64),
        ]
    }

    /// `b·g(x)` without the intercept.
    pub fn linear(&self, fv: &FeatureVector) -> f64 {
        let g = Self::transform(fv);
        self.as_array().iter().zip(g).map(|(b, x)| b * x).sum()
    }
}

pub fn logistic(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub seed: u64,
    pub n_users: usize,
    pub n_genres: usize,
    pub n_artists: usize,
    pub tracks_per_artist: usize,
    pub albums_per_artist: usize,
    /// Probability that a new tie links users of the same dominant genre;
    /// otherwise the partner is uniform.
    pub homophily: f64,
    /// Weight of a user's dominant genre in their taste mixture.
    pub taste_focus: f64,
    pub mean_degree: f64,
    pub favorites_per_user: usize,
    pub n_playlists: usize,
    pub playlist_len: usize,
    /// Probability that a playlist track comes from the playlist's genre.
    pub playlist_purity: f64,
    pub analysis_start_day: i64,
    pub analysis_days: i64,
    pub taste_window_days: i64,
    /// Mean listens per user in the taste window.
    pub taste_plays_mean: f64,
    /// Median daily plays during the analysis period.
    pub activity_plays_per_day: f64,
    /// Mean number of pre-analysis link shares along a tie.
    pub history_links_mean: f64,
    pub reverse_link_rate: f64,
    pub listening_tie_rate: f64,
    pub playlist_tie_rate: f64,
    /// Discovery shares (opened, played for 30s) to generate.
    pub n_share_events: usize,
    /// Extra shares, relative to `n_share_events`, that are never opened.
    pub unopened_rate: f64,
    /// Extra opened shares, relative to `n_share_events`, without a 30s play.
    pub unplayed_rate: f64,
    /// Fraction of shares sent to a random user instead of along a tie.
    pub broadcast_fraction: f64,
    /// Probability that a share along a tie goes against its usual direction.
    pub reverse_share_rate: f64,
    pub open_delay_mean_s: f64,
    /// Probability that the sender listened to the shared artist in the week
    /// before the share.
    pub sender_engaged_rate: f64,
    /// Probability that a receiver's friend is a long-term fan of the shared
    /// artist.
    pub fan_rate: f64,
    /// Within a fan share, probability that each eligible friend is a fan.
    pub fan_friend_rate: f64,
    pub subscriber_rate: f64,
    pub coefficients: PlantedCoefficients,
    pub target_positive_rate: f64,
    pub embedding: EmbeddingConfig,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            seed: 7,
            n_users: 10_000,
            n_genres: 10,
            n_artists: 2_000,
            tracks_per_artist: 5,
            albums_per_artist: 2,
            homophily: 0.8,
            taste_focus: 0.85,
            mean_degree: 6.0,
            favorites_per_user: 25,
            n_playlists: 4_000,
            playlist_len: 20,
            playlist_purity: 0.95,
            analysis_start_day: 20_000,
            analysis_days: 28,
            taste_window_days: 28,
            taste_plays_mean: 60.0,
            activity_plays_per_day: 2.0,
            history_links_mean: 2.5,
            reverse_link_rate: 0.0003,
            listening_tie_rate: 0.00015,
            playlist_tie_rate: 0.00015,
            n_share_events: 20_000,
            unopened_rate: 0.08,
            unplayed_rate: 0.04,
            broadcast_fraction: 0.15,
            reverse_share_rate: 0.001,
            open_delay_mean_s: 3_600.0,
            sender_engaged_rate: 0.5,
            fan_rate: 0.8,
            fan_friend_rate: 0.8,
            subscriber_rate: 0.45,
            coefficients: PlantedCoefficients::default(),
            target_positive_rate: 0.4,
            embedding: EmbeddingConfig::default(),
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.n_users < 2 || self.n_genres == 0 || self.n_artists < self.n_genres {
            return bad("need >= 2 users, >= 1 genre and at least one artist per genre".into());
        }
        if self.tracks_per_artist < 2 || self.albums_per_artist == 0 {
            return bad("tracks_per_artist must be >= 2 and albums_per_artist >= 1".into());
        }
        if self.favorites_per_user == 0 || self.n_playlists == 0 || self.playlist_len == 0 {
            return bad("favorites, playlists and playlist length must be >= 1".into());
        }
        for (name, p) in [
            ("homophily", self.homophily),
            ("taste_focus", self.taste_focus),
            ("playlist_purity", self.playlist_purity),
            ("reverse_link_rate", self.reverse_link_rate),
            ("listening_tie_rate", self.listening_tie_rate),
            ("playlist_tie_rate", self.playlist_tie_rate),
            ("broadcast_fraction", self.broadcast_fraction),
            ("reverse_share_rate", self.reverse_share_rate),
            ("sender_engaged_rate", self.sender_engaged_rate),
            ("fan_rate", self.fan_rate),
            ("fan_friend_rate", self.fan_friend_rate),
            ("subscriber_rate", self.subscriber_rate),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return bad(format!("{name} must be in [0, 1], got {p}"));
            }
        }
        if !(self.target_positive_rate > 0.0 && self.target_positive_rate < 1.0) {
            return bad("target_positive_rate must be in (0, 1)".into());
        }
        for (name, r) in [
            ("mean_degree", self.mean_degree),
            ("taste_plays_mean", self.taste_plays_mean),
            ("activity_plays_per_day", self.activity_plays_per_day),
            ("history_links_mean", self.history_links_mean),
            ("open_delay_mean_s", self.open_delay_mean_s),
        ] {
            if !(r > 0.0 && r.is_finite()) {
                return bad(format!("{name} must be > 0, got {r}"));
            }
        }
        if self.unopened_rate < 0.0 || self.unplayed_rate < 0.0 {
            return bad("unopened_rate and unplayed_rate must be >= 0".into());
        }
        if self.analysis_days < 1 || self.taste_window_days < 1 {
            return bad("analysis_days and taste_window_days must be >= 1".into());
        }
        let pairs = self.n_users as f64 * (self.n_users as f64 - 1.0) / 2.0;
        if self.n_edges() as f64 > 0.5 * pairs {
            return bad(format!(
                "{} ties requested but only {pairs} user pairs exist",
                self.n_edges()
            ));
        }
        Ok(())
    }

    pub fn n_edges(&self) -> usize {
        (self.n_users as f64 * self.mean_degree / 2.0).round() as usize
    }

    pub fn feature_config(&self) -> FeatureConfig {
        FeatureConfig {
            analysis_start_day: self.analysis_start_day,
            taste_window_days: self.taste_window_days,
            ..Default::default()
        }
    }

    fn stage_seed(&self, stage: u64) -> u64 {
        crate::model::derive_seed(self.seed, stage as usize)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArtistInfo {
    pub id: ArtistId,
    pub genre: usize,
    pub popularity_rank: u32,
    pub tracks: Vec<TrackId>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrackInfo {
    pub id: TrackId,
    pub artist: usize,
    pub album: AlbumId,
    pub release_ts: Timestamp,
}

/// A generated world before any share events.
#[derive(Clone, Debug)]
pub struct World {
    pub config: SynthConfig,
    pub users: Vec<UserId>,
    /// Genre mixture per user (the latent taste).
    pub latent: Vec<Vec<f64>>,
    pub dominant_genre: Vec<usize>,
    pub artists: Vec<ArtistInfo>,
    pub tracks: Vec<TrackInfo>,
    /// Ties as (usual sender, usual receiver) user indices.
    pub ties: Vec<(u32, u32)>,
    pub interactions: Vec<InteractionEvent>,
    pub playlists: PlaylistCorpus,
    pub playback: Vec<PlaybackRecord>,
    pub accounts: Vec<AccountRecord>,
    pub favorites: Vec<Vec<u32>>,
}

impl World {
    pub fn analysis_start(&self) -> Timestamp {
        self.config.analysis_start_day * DAY_SECONDS
    }

    fn user_index(&self, u: UserId) -> usize {
        (u.0 - 1) as usize
    }
}

fn user_id(i: usize) -> UserId {
    UserId(i as u64 + 1)
}

fn track_index(t: TrackId) -> usize {
    (t.0 - 1_000_000) as usize
}

fn popularity_weights(artists: &[ArtistInfo], members: &[u32]) -> WeightedIndex<f64> {
    WeightedIndex::new(members.iter().map(|&a| 1.0 / f64::from(artists[a as usize].popularity_rank)))
        .expect("non-empty genre")
}

/// Users, catalog, network history, playlists, listening and accounts.
pub fn generate_world(cfg: &SynthConfig) -> Result<World> {
    cfg.validate()?;
    let a_ts = cfg.analysis_start_day * DAY_SECONDS;
    let g = cfg.n_genres;

    // Tastes.
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.stage_seed(1));
    let spread = Gamma::new(0.5, 1.0).expect("valid gamma");
    let mut latent = Vec::with_capacity(cfg.n_users);
    let mut dominant_genre = Vec::with_capacity(cfg.n_users);
    for _ in 0..cfg.n_users {
        let dom = rng.random_range(0..g);
        let mut w: Vec<f64> = (0..g).map(|k| if k == dom { 0.0 } else { spread.sample(&mut rng) }).collect();
        let rest: f64 = w.iter().sum();
        for (k, x) in w.iter_mut().enumerate() {
            *x = if k == dom {
                cfg.taste_focus
            } else if rest > 0.0 {
                (1.0 - cfg.taste_focus) * *x / rest
            } else {
                (1.0 - cfg.taste_focus) / (g.max(2) - 1) as f64
            };
        }
        if g == 1 {
            w[0] = 1.0;
        }
        latent.push(w);
        dominant_genre.push(dom);
    }

    // Catalog: every genre gets artists; ranks are a random permutation.
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.stage_seed(2));
    let mut ranks: Vec<u32> = (1..=cfg.n_artists as u32).collect();
    ranks.shuffle(&mut rng);
    let release_age = Exp::new(1.0 / (3.0 * 365.0)).expect("valid rate");
    let mut artists = Vec::with_capacity(cfg.n_artists);
    let mut tracks = Vec::new();
    for a in 0..cfg.n_artists {
        let genre = if a < g { a } else { rng.random_range(0..g) };
        let releases: Vec<Timestamp> = (0..cfg.albums_per_artist)
            .map(|_| a_ts - 30 * DAY_SECONDS - (release_age.sample(&mut rng) * DAY_SECONDS as f64) as i64)
            .collect();
        let mut ids = Vec::with_capacity(cfg.tracks_per_artist);
        for k in 0..cfg.tracks_per_artist {
            let album = k % cfg.albums_per_artist;
            let id = TrackId(1_000_000 + tracks.len() as u64);
            tracks.push(TrackInfo {
                id,
                artist: a,
                album: AlbumId(2_000_000 + (a * cfg.albums_per_artist + album) as u64),
                release_ts: releases[album],
            });
            ids.push(id);
        }
        artists.push(ArtistInfo {
            id: ArtistId(3_000_000 + a as u64),
            genre,
            popularity_rank: ranks[a],
            tracks: ids,
        });
    }
    let mut by_genre: Vec<Vec<u32>> = vec![Vec::new(); g];
    for (a, info) in artists.iter().enumerate() {
        by_genre[info.genre].push(a as u32);
    }
    let genre_pick: Vec<WeightedIndex<f64>> =
        by_genre.iter().map(|m| popularity_weights(&artists, m)).collect();

    // Playlists: one pass covering every track within its genre, then random
    // genre-conditional lists.
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.stage_seed(3));
    let mut playlists: Vec<Vec<TrackId>> = Vec::new();
    for members in &by_genre {
        let mut pool: Vec<TrackId> = members
            .iter()
            .flat_map(|&a| artists[a as usize].tracks.iter().copied())
            .collect();
        pool.shuffle(&mut rng);
        let start = playlists.len();
        playlists.extend(pool.chunks(cfg.playlist_len.max(2)).map(<[TrackId]>::to_vec));
        // A lone track has no context; fold it into the previous list.
        if playlists.len() - start > 1 && playlists.last().is_some_and(|l| l.len() < 2) {
            let tail = playlists.pop().expect("non-empty");
            playlists.last_mut().expect("non-empty").extend(tail);
        }
    }
    for _ in 0..cfg.n_playlists {
        let genre = rng.random_range(0..g);
        let list = (0..cfg.playlist_len)
            .map(|_| {
                let gg = if rng.random_bool(cfg.playlist_purity) {
                    genre
                } else {
                    rng.random_range(0..g)
                };
                let a = by_genre[gg][genre_pick[gg].sample(&mut rng)] as usize;
                *artists[a].tracks.choose(&mut rng).expect("tracks")
            })
            .collect();
        playlists.push(list);
    }
    let playlists = PlaylistCorpus::new(playlists)?;

    // Favorite artists drawn from each user's mixture.
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.stage_seed(4));
    let mut favorites = Vec::with_capacity(cfg.n_users);
    for w in &latent {
        let mix = WeightedIndex::new(w).expect("valid mixture");
        let mut fav: Vec<u32> = Vec::with_capacity(cfg.favorites_per_user);
        let mut tries = 0;
        while fav.len() < cfg.favorites_per_user && tries < 20 * cfg.favorites_per_user {
            tries += 1;
            let gg = mix.sample(&mut rng);
            let a = by_genre[gg][genre_pick[gg].sample(&mut rng)];
            if !fav.contains(&a) {
                fav.push(a);
            }
        }
        favorites.push(fav);
    }

    // Taste-window listening from favorites.
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.stage_seed(5));
    let plays_dist = Poisson::new(cfg.taste_plays_mean).expect("valid mean");
    let window = cfg.taste_window_days * DAY_SECONDS;
    let mut playback = Vec::new();
    for (u, fav) in favorites.iter().enumerate() {
        let n = (plays_dist.sample(&mut rng) as usize).max(5);
        for _ in 0..n {
            let a = fav[rng.random_range(0..fav.len())] as usize;
            playback.push(PlaybackRecord {
                user: user_id(u),
                track: *artists[a].tracks.choose(&mut rng).expect("tracks"),
                artist: artists[a].id,
                ts: a_ts - window + rng.random_range(0..window),
                duration_s: f64::from(rng.random_range(30..=240u32)),
            });
        }
    }

    // Ties and pre-analysis interactions.
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.stage_seed(6));
    let mut same_genre: Vec<Vec<u32>> = vec![Vec::new(); g];
    for (u, &d) in dominant_genre.iter().enumerate() {
        same_genre[d].push(u as u32);
    }
    let mut seen: FxHashSet<(u32, u32)> = FxHashSet::default();
    let mut ties = Vec::with_capacity(cfg.n_edges());
    while ties.len() < cfg.n_edges() {
        let u = rng.random_range(0..cfg.n_users) as u32;
        let v = if rng.random_bool(cfg.homophily) {
            let pool = &same_genre[dominant_genre[u as usize]];
            pool[rng.random_range(0..pool.len())]
        } else {
            rng.random_range(0..cfg.n_users) as u32
        };
        if u == v || !seen.insert((u.min(v), u.max(v))) {
            continue;
        }
        ties.push((u, v));
    }
    let history = FRIEND_WINDOW_DAYS * DAY_SECONDS;
    let links = Geometric::new(1.0 / (1.0 + cfg.history_links_mean)).expect("valid p");
    let extra = Geometric::new(0.5).expect("valid p");
    let mut interactions = Vec::new();
    let at = |rng: &mut ChaCha8Rng| a_ts - history + rng.random_range(0..history);
    for &(s, r) in &ties {
        let (su, ru) = (user_id(s as usize), user_id(r as usize));
        for _ in 0..links.sample(&mut rng) {
            interactions.push(InteractionEvent::new(LayerKind::LinkShare, su, ru, at(&mut rng)));
        }
        for (layer, rate) in [
            (LayerKind::LinkShare, cfg.reverse_link_rate),
            (LayerKind::SocialListening, cfg.listening_tie_rate),
            (LayerKind::CollabPlaylist, cfg.playlist_tie_rate),
        ] {
            if rng.random_bool(rate) {
                for _ in 0..=extra.sample(&mut rng) {
                    interactions.push(InteractionEvent::new(layer, ru, su, at(&mut rng)));
                }
            }
        }
    }

    // Accounts: registration and subscription history end before analysis.
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.stage_seed(7));
    let accounts = (0..cfg.n_users)
        .map(|u| {
            let registered_ts = a_ts - rng.random_range(200..3000) * DAY_SECONDS - rng.random_range(0..DAY_SECONDS);
            let mut subscriptions = Vec::new();
            if rng.random_bool(cfg.subscriber_rate) {
                let start = rng.random_range(registered_ts..a_ts - window);
                let end = rng.random_bool(0.2).then(|| rng.random_range(start + 1..a_ts - window));
                subscriptions.push(SubscriptionSpan { start, end });
            }
            AccountRecord {
                user: user_id(u),
                registered_ts,
                subscriptions,
            }
        })
        .collect();

    Ok(World {
        config: cfg.clone(),
        users: (0..cfg.n_users).map(user_id).collect(),
        latent,
        dominant_genre,
        artists,
        tracks,
        ties,
        interactions,
        playlists,
        playback,
        accounts,
        favorites,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlantedEvent {
    pub key: ShareKey,
    pub p_star: f64,
    pub label: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LatentTaste {
    pub user: UserId,
    pub mixture: Vec<f64>,
}

/// Sidecar for tests; the pipeline never reads it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub coefficients: PlantedCoefficients,
    pub intercept: f64,
    pub target_positive_rate: f64,
    pub realized_positive_rate: f64,
    /// ROC-AUC of `p*` against the realised labels.
    pub bayes_auc: f64,
    pub users: Vec<LatentTaste>,
    /// Discovery shares in key order.
    pub events: Vec<PlantedEvent>,
}

impl GroundTruth {
    pub fn p_star_by_key(&self) -> FxHashMap<ShareKey, f64> {
        self.events.iter().map(|e| (e.key, e.p_star)).collect()
    }
}

/// Complete synthetic output.
#[derive(Clone, Debug)]
pub struct Synthetic {
    pub world: World,
    pub shares: Vec<ShareEvent>,
    pub network: MultiplexNetwork,
    pub playback: PlaybackLog,
    pub accounts: AccountLog,
    pub space: EmbeddingSpace,
    pub truth: GroundTruth,
}

struct Blackouts {
    spans: FxHashMap<u32, Vec<(Timestamp, Timestamp)>>,
}

impl Blackouts {
    /// `[from, to]` inclusive spans in which the user has no playback.
    fn blocked(&self, u: u32, t: Timestamp) -> bool {
        self.spans
            .get(&u)
            .is_some_and(|v| v.iter().any(|&(a, b)| a <= t && t <= b))
    }

    fn place(&self, rng: &mut ChaCha8Rng, u: u32, lo: Timestamp, hi: Timestamp) -> Option<Timestamp> {
        if hi <= lo {
            return None;
        }
        for _ in 0..64 {
            let t = rng.random_range(lo..hi);
            if !self.blocked(u, t) {
                return Some(t);
            }
        }
        None
    }
}

struct Skeleton {
    sender: u32,
    receiver: u32,
    share_ts: Timestamp,
    open_ts: Option<Timestamp>,
    played: bool,
    app: &'static str,
}

const UNKNOWN_APPS: [&str; 2] = ["copy_link", "email"];

/// Generates share events on `world`, plants outcomes and returns all
/// stores, the trained embedding space and the ground truth.
pub fn generate_share_events(mut world: World) -> Result<Synthetic> {
    let cfg = world.config.clone();
    let a_ts = world.analysis_start();
    let n_users = cfg.n_users;

    // Event skeletons in time order.
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.stage_seed(10));
    let n_unopened = (cfg.n_share_events as f64 * cfg.unopened_rate).round() as usize;
    let n_unplayed = (cfg.n_share_events as f64 * cfg.unplayed_rate).round() as usize;
    let total = cfg.n_share_events + n_unopened + n_unplayed;
    let mut hist_links: FxHashMap<(u32, u32), u64> = FxHashMap::default();
    for ev in &world.interactions {
        if ev.layer == LayerKind::LinkShare {
            *hist_links
                .entry((world.user_index(ev.src) as u32, world.user_index(ev.dst) as u32))
                .or_default() += 1;
        }
    }
    let tie_pick = WeightedIndex::new(
        world
            .ties
            .iter()
            .map(|t| 1.0 + *hist_links.get(t).unwrap_or(&0) as f64),
    )
    .expect("ties exist");
    let delay = Exp::new(1.0 / cfg.open_delay_mean_s).expect("valid rate");
    let span = cfg.analysis_days * DAY_SECONDS;
    let mut skeletons: Vec<Skeleton> = (0..total)
        .map(|k| {
            let (sender, receiver, app) = if rng.random_bool(cfg.broadcast_fraction) {
                let s = rng.random_range(0..n_users) as u32;
                let mut r = rng.random_range(0..n_users - 1) as u32;
                if r >= s {
                    r += 1;
                }
                (s, r, *BROADCAST_APPS.choose(&mut rng).expect("apps"))
            } else {
                let (s, r) = world.ties[tie_pick.sample(&mut rng)];
                let (s, r) = if rng.random_bool(cfg.reverse_share_rate) { (r, s) } else { (s, r) };
                let x: f64 = rng.random();
                let app = if x < 0.75 {
                    *DIRECT_APPS.choose(&mut rng).expect("apps")
                } else if x < 0.95 {
                    *BROADCAST_APPS.choose(&mut rng).expect("apps")
                } else {
                    *UNKNOWN_APPS.choose(&mut rng).expect("apps")
                };
                (s, r, app)
            };
            let share_ts = a_ts + rng.random_range(0..span);
            let opened = k >= n_unopened;
            let open_ts = opened.then(|| share_ts + 1 + delay.sample(&mut rng).min(DAY_SECONDS as f64 / 2.0) as i64);
            Skeleton {
                sender,
                receiver,
                share_ts,
                open_ts,
                played: k >= n_unopened + n_unplayed,
                app,
            }
        })
        .collect();
    skeletons.sort_by_key(|s| (s.share_ts, s.sender, s.receiver));

    for s in &skeletons {
        world.interactions.push(InteractionEvent::new(
            LayerKind::LinkShare,
            user_id(s.sender as usize),
            user_id(s.receiver as usize),
            s.share_ts,
        ));
    }
    let network = MultiplexNetwork::from_events(world.interactions.iter().copied())?;

    let mut spans: FxHashMap<u32, Vec<(Timestamp, Timestamp)>> = FxHashMap::default();
    for s in skeletons.iter().filter(|s| s.played) {
        spans
            .entry(s.receiver)
            .or_default()
            .push((s.share_ts, s.open_ts.expect("played shares are opened")));
    }
    let blackouts = Blackouts { spans };

    // Background activity during the analysis period, outside blackouts.
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.stage_seed(11));
    let activity = LogNormal::new(cfg.activity_plays_per_day.ln(), 0.6).expect("valid lognormal");
    let active_span = (cfg.analysis_days + RECEIVER_WINDOW_DAYS + 1) * DAY_SECONDS;
    for u in 0..n_users {
        let rate = activity.sample(&mut rng) * (active_span / DAY_SECONDS) as f64;
        let n = Poisson::new(rate.max(1e-9)).expect("valid mean").sample(&mut rng) as usize;
        let fav = &world.favorites[u];
        for _ in 0..n {
            let Some(ts) = blackouts.place(&mut rng, u as u32, a_ts, a_ts + active_span) else {
                continue;
            };
            let a = fav[rng.random_range(0..fav.len())] as usize;
            world.playback.push(PlaybackRecord {
                user: user_id(u),
                track: *world.artists[a].tracks.choose(&mut rng).expect("tracks"),
                artist: world.artists[a].id,
                ts,
                duration_s: f64::from(rng.random_range(10..=300u32)),
            });
        }
    }

    // Artist choice, sender engagement and fan listening.
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.stage_seed(12));
    let g = cfg.n_genres;
    let mut by_genre: Vec<Vec<u32>> = vec![Vec::new(); g];
    for (a, info) in world.artists.iter().enumerate() {
        by_genre[info.genre].push(a as u32);
    }
    let genre_pick: Vec<WeightedIndex<f64>> =
        by_genre.iter().map(|m| popularity_weights(&world.artists, m)).collect();
    let mixes: Vec<WeightedIndex<f64>> = world
        .latent
        .iter()
        .map(|w| WeightedIndex::new(w).expect("valid mixture"))
        .collect();
    let mut used: FxHashSet<(u32, u32)> = FxHashSet::default();
    for (u, fav) in world.favorites.iter().enumerate() {
        for &a in fav {
            used.insert((u as u32, a));
        }
    }
    let fan_start = a_ts - FRIEND_WINDOW_DAYS * DAY_SECONDS;
    let mut shares = Vec::with_capacity(skeletons.len());
    for s in &skeletons {
        let mut chosen = None;
        for _ in 0..200 {
            let gg = if rng.random_bool(0.7) {
                mixes[s.sender as usize].sample(&mut rng)
            } else {
                rng.random_range(0..g)
            };
            let a = by_genre[gg][genre_pick[gg].sample(&mut rng)];
            if !used.contains(&(s.receiver, a)) && !used.contains(&(s.sender, a)) {
                chosen = Some(a);
                break;
            }
        }
        let Some(a) = chosen else {
            log::warn!("no unused artist for share at {}; event skipped", s.share_ts);
            continue;
        };
        used.insert((s.receiver, a));
        used.insert((s.sender, a));
        let artist = &world.artists[a as usize];
        let track = *artist.tracks.choose(&mut rng).expect("tracks");
        let info = world.tracks[track_index(track)];

        if s.played && rng.random_bool(cfg.sender_engaged_rate) {
            let share_day = day_of(s.share_ts);
            let mut days: Vec<i64> = (1..=RECEIVER_WINDOW_DAYS).collect();
            days.shuffle(&mut rng);
            let n_days = rng.random_range(1..=RECEIVER_WINDOW_DAYS as usize);
            for &d in &days[..n_days] {
                let day0 = (share_day - d) * DAY_SECONDS;
                let per_day = rng.random_range(1..=3);
                for &t in artist.tracks.choose_multiple(&mut rng, per_day).collect::<Vec<_>>() {
                    if let Some(ts) = blackouts.place(&mut rng, s.sender, day0, day0 + DAY_SECONDS) {
                        world.playback.push(PlaybackRecord {
                            user: user_id(s.sender as usize),
                            track: t,
                            artist: artist.id,
                            ts,
                            duration_s: f64::from(rng.random_range(30..=240u32)),
                        });
                    }
                }
            }
        }
        if s.played {
            let friends = network.friends(user_id(s.receiver as usize), s.share_ts);
            let fans_wanted = rng.random_bool(cfg.fan_rate);
            for f in friends {
                let fu = world.user_index(f) as u32;
                if fu == s.sender || used.contains(&(fu, a)) || !fans_wanted || !rng.random_bool(cfg.fan_friend_rate) {
                    continue;
                }
                used.insert((fu, a));
                // One play on every one of the 180 days, two on one of them.
                let double = rng.random_range(0..FRIEND_WINDOW_DAYS);
                for d in 0..FRIEND_WINDOW_DAYS {
                    let day0 = fan_start + d * DAY_SECONDS;
                    let picks = if d == double { 2 } else { 1 };
                    for &t in artist.tracks.choose_multiple(&mut rng, picks).collect::<Vec<_>>() {
                        world.playback.push(PlaybackRecord {
                            user: f,
                            track: t,
                            artist: artist.id,
                            ts: day0 + rng.random_range(0..DAY_SECONDS),
                            duration_s: f64::from(rng.random_range(30..=240u32)),
                        });
                    }
                }
            }
        }
        shares.push(ShareEvent {
            sender: user_id(s.sender as usize),
            receiver: user_id(s.receiver as usize),
            track_id: track,
            album_id: info.album,
            artist_id: artist.id,
            artist_popularity_rank: artist.popularity_rank,
            album_release_age: s.share_ts - info.release_ts,
            app_type: s.app.to_string(),
            share_ts: s.share_ts,
            open_ts: s.open_ts,
            playback_30s: s.played,
        });
    }

    // Embeddings and features over the pre-outcome stores.
    let space = train_track_embeddings(&world.playlists, &cfg.embedding)?;
    let accounts = AccountLog::new(world.accounts.clone())?;
    let mut playback = PlaybackLog::from_records(world.playback.clone())?;
    let modes = AppModeTable::new();
    let fcfg = cfg.feature_config();
    let modeled: Vec<usize> = (0..shares.len()).filter(|&k| shares[k].playback_30s).collect();

    let mut taste = {
        let ctx = FeatureContext::new(&network, &space, &playback, &accounts, &modes, fcfg);
        ctx.taste
    };
    let linear_of = |playback: &PlaybackLog, taste: &mut crate::embeddings::TasteMap, ev: &ShareEvent| -> Result<Option<f64>> {
        let ctx = FeatureContext::with_taste(&network, &space, playback, &accounts, &modes, fcfg, std::mem::take(taste));
        let out = ctx.extract(ev)?.ok().map(|fv| cfg.coefficients.linear(&fv));
        *taste = ctx.taste;
        Ok(out)
    };

    // Intercept so that the mean planted probability hits the target rate.
    let mut z0 = Vec::with_capacity(modeled.len());
    for &k in &modeled {
        if let Some(z) = linear_of(&playback, &mut taste, &shares[k])? {
            z0.push(z);
        }
    }
    let intercept = calibrate_intercept(&z0, cfg.target_positive_rate);

    // Sequential realisation in time order; witnesses feed later features.
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.stage_seed(14));
    let mut planted = Vec::with_capacity(modeled.len());
    for &k in &modeled {
        let ev = &shares[k];
        let z = linear_of(&playback, &mut taste, ev)?;
        let p_star = z.map(|z| logistic(intercept + z));
        let label = p_star.is_some_and(|p| rng.random_bool(p));
        let r = world.user_index(ev.receiver) as u32;
        let open = ev.open_ts.expect("played shares are opened");
        let window_end = (day_of(open) + RECEIVER_WINDOW_DAYS) * DAY_SECONDS;
        let first = blackouts
            .place(&mut rng, r, open + 1, (open + DAY_SECONDS).min(window_end))
            .ok_or_else(|| Error::Data(format!("no room for the witness play of share at {}", ev.share_ts)))?;
        playback.push(PlaybackRecord {
            user: ev.receiver,
            track: ev.track_id,
            artist: ev.artist_id,
            ts: first,
            duration_s: f64::from(rng.random_range(30..=240u32)),
        })?;
        if label {
            let artist = &world.artists[track_and_artist(&world, ev.track_id)];
            let other = *artist
                .tracks
                .iter()
                .filter(|&&t| t != ev.track_id)
                .collect::<Vec<_>>()
                .choose(&mut rng)
                .expect("artists have >= 2 tracks");
            let ts = blackouts
                .place(&mut rng, r, first + 1, window_end)
                .ok_or_else(|| Error::Data(format!("no room for the engagement play of share at {}", ev.share_ts)))?;
            playback.push(PlaybackRecord {
                user: ev.receiver,
                track: *other,
                artist: ev.artist_id,
                ts,
                duration_s: f64::from(rng.random_range(30..=240u32)),
            })?;
        }
        if let Some(p_star) = p_star {
            planted.push(PlantedEvent {
                key: ev.key(),
                p_star,
                label,
            });
        }
    }
    planted.sort_by_key(|e| e.key);
    shares.sort_by_key(ShareEvent::key);

    let scores: Vec<f64> = planted.iter().map(|e| e.p_star).collect();
    let labels: Vec<bool> = planted.iter().map(|e| e.label).collect();
    let positives = labels.iter().filter(|&&l| l).count();
    let truth = GroundTruth {
        coefficients: cfg.coefficients.clone(),
        intercept,
        target_positive_rate: cfg.target_positive_rate,
        realized_positive_rate: positives as f64 / labels.len().max(1) as f64,
        bayes_auc: roc_auc(&scores, &labels).unwrap_or(0.5),
        users: world
            .users
            .iter()
            .zip(&world.latent)
            .map(|(&user, m)| LatentTaste {
                user,
                mixture: m.clone(),
            })
            .collect(),
        events: planted,
    };
    world.playback = playback.records().to_vec();
    Ok(Synthetic {
        world,
        shares,
        network,
        playback,
        accounts,
        space,
        truth,
    })
}

fn track_and_artist(world: &World, t: TrackId) -> usize {
    world.tracks[track_index(t)].artist
}

/// Intercept `b0` with `mean(logistic(b0 + z)) = target`, by bisection.
pub fn calibrate_intercept(z: &[f64], target: f64) -> f64 {
    if z.is_empty() {
        return (target / (1.0 - target)).ln();
    }
    let mean_p = |b: f64| z.iter().map(|&x| logistic(b + x)).sum::<f64>() / z.len() as f64;
    let (mut lo, mut hi) = (-50.0, 50.0);
    for _ in 0..100 {
        let mid = 0.5 * (lo + hi);
        if mean_p(mid) < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// World plus share events.
pub fn generate(cfg: &SynthConfig) -> Result<Synthetic> {
    generate_share_events(generate_world(cfg)?)
}

/// Latent-taste homophily diagnostics of a world's ties.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct HomophilyCheck {
    /// Point-biserial correlation of tie presence with latent cosine over
    /// all ties plus as many random non-tied pairs.
    pub edge_cosine_r: f64,
    pub connected_mean: f64,
    pub random_mean: f64,
    pub pairs: usize,
}

pub fn homophily_self_test(world: &World, seed: u64) -> Result<HomophilyCheck> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = world.users.len();
    let tied: FxHashSet<(u32, u32)> = world.ties.iter().map(|&(a, b)| (a.min(b), a.max(b))).collect();
    let cos = |a: usize, b: usize| cosine_similarity(&world.latent[a], &world.latent[b]);
    let mut xs = Vec::with_capacity(2 * world.ties.len());
    let mut ys = Vec::with_capacity(2 * world.ties.len());
    for &(a, b) in &world.ties {
        xs.push(1.0);
        ys.push(cos(a as usize, b as usize)?);
    }
    let connected = ys.len();
    while ys.len() < 2 * connected {
        let a = rng.random_range(0..n) as u32;
        let b = rng.random_range(0..n) as u32;
        if a == b || tied.contains(&(a.min(b), a.max(b))) {
            continue;
        }
        xs.push(0.0);
        ys.push(cos(a as usize, b as usize)?);
    }
    let r = crate::stats::pearson_correlation(&xs, &ys)?.r;
    let connected_mean = ys[..connected].iter().sum::<f64>() / connected as f64;
    let random_mean = ys[connected..].iter().sum::<f64>() / connected as f64;
    Ok(HomophilyCheck {
        edge_cosine_r: r,
        connected_mean,
        random_mean,
        pairs: ys.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::{build_dataset, engagement_label};
    use crate::shares::filter_discovery_shares;

    fn small(seed: u64) -> SynthConfig {
        SynthConfig {
            seed,
            n_users: 600,
            n_artists: 300,
            n_playlists: 300,
            n_share_events: 1_500,
            embedding: EmbeddingConfig {
                dim: 16,
                epochs: 2,
                ..Default::default()
            },
            ..Default::default()
        }
    }

    #[test]
    fn rejects_infeasible_configs() {
        let cfg = SynthConfig {
            n_users: 4,
            mean_degree: 10.0,
            ..small(1)
        };
        assert!(matches!(generate_world(&cfg), Err(Error::Config(_))));
        let cfg = SynthConfig {
            homophily: 1.5,
            ..small(1)
        };
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn calibration_hits_target() {
        let z: Vec<f64> = (0..1000).map(|i| (i as f64 / 100.0).sin() * 2.0).collect();
        let b = calibrate_intercept(&z, 0.3);
        let m = z.iter().map(|&x| logistic(b + x)).sum::<f64>() / 1000.0;
        assert!((m - 0.3).abs() < 1e-9);
        assert!(calibrate_intercept(&[0.0; 10], 0.5).abs() < 1e-9);
    }

    #[test]
    fn world_is_deterministic() {
        let a = generate_world(&small(3)).unwrap();
        let b = generate_world(&small(3)).unwrap();
        assert_eq!(a.interactions, b.interactions);
        assert_eq!(a.playback, b.playback);
        assert_eq!(a.accounts, b.accounts);
    }

    #[test]
    fn labels_round_trip_through_extraction() {
        let syn = generate(&small(5)).unwrap();
        let discovery = filter_discovery_shares(&syn.shares, &syn.playback);
        assert_eq!(discovery.len(), syn.truth.events.len());
        let modes = AppModeTable::new();
        let ctx = FeatureContext::new(
            &syn.network,
            &syn.space,
            &syn.playback,
            &syn.accounts,
            &modes,
            syn.world.config.feature_config(),
        );
        let (examples, report) = build_dataset(&ctx, &discovery).unwrap();
        assert_eq!(report.examples, syn.truth.events.len(), "{report:?}");
        for (ex, t) in examples.iter().zip(&syn.truth.events) {
            assert_eq!(ex.key, t.key);
            assert_eq!(ex.label, t.label);
        }
        // Unopened shares never count as engaged.
        for ev in syn.shares.iter().filter(|e| e.open_ts.is_none()) {
            assert!(!engagement_label(&syn.playback, ev).unwrap());
        }
    }

    #[test]
    fn homophily_knob() {
        let w0 = generate_world(&SynthConfig {
            homophily: 0.0,
            n_users: 3000,
            ..small(9)
        })
        .unwrap();
        let w8 = generate_world(&SynthConfig {
            homophily: 0.8,
            n_users: 3000,
            ..small(9)
        })
        .unwrap();
        let h0 = homophily_self_test(&w0, 1).unwrap();
        let h8 = homophily_self_test(&w8, 1).unwrap();
        assert!(h0.edge_cosine_r.abs() < 0.03, "{h0:?}");
        assert!(h8.connected_mean - h8.random_mean >= 0.1, "{h8:?}");
    }
}
