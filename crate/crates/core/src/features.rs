//! Share-time feature vectors and post-open engagement labels.
//!
//! Notation: `i` is the receiver and `j` the sender. Network and playback
//! quantities are read strictly before the share timestamp, except the
//! receiver platform-usage group, which is anchored at the open time.
//! Taste vectors are frozen at the start of the analysis period.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use rayon::prelude::*;
use rustc_hash::FxHashMap;
use serde::{Deserialize, Serialize};

use crate::embeddings::{cosine_similarity, user_vector_from_log, EmbeddingSpace, TasteAveraging, TasteMap};
use crate::engagement::{
    is_engaged_friend, is_engaged_receiver, PlaybackLog, FRIEND_WINDOW_DAYS, RECEIVER_WINDOW_DAYS,
};
use crate::graph::{InteractionEvent, LayerKind, MultiplexNetwork};
use crate::io::{read_jsonl, write_json, write_jsonl};
use crate::model::Dataset;
use crate::shares::{AppMode, AppModeTable, ShareEvent, ShareKey};
use crate::{day_of, Error, Result, Timestamp, UserId, DAY_SECONDS};

/// Value stored in `fraction_engaged_friends` when the receiver has no friends.
pub const MISSING_FRACTION: f64 = -1.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum FeatureSetId {
    ST,
    SN,
    SC,
    TS,
    TC,
    SA,
    PU,
}

impl FeatureSetId {
    pub const ALL: [FeatureSetId; 7] = [
        FeatureSetId::ST,
        FeatureSetId::SN,
        FeatureSetId::SC,
        FeatureSetId::TS,
        FeatureSetId::TC,
        FeatureSetId::SA,
        FeatureSetId::PU,
    ];

    pub fn title(self) -> &'static str {
        match self {
            FeatureSetId::ST => "Social Tie Strength (ST)",
            FeatureSetId::SN => "Social Network Degrees (SN)",
            FeatureSetId::SC => "Social Cohesion (SC)",
            FeatureSetId::TS => "Taste Similarity (TS)",
            FeatureSetId::TC => "Track Context (TC)",
            FeatureSetId::SA => "Sender-Artist Engagement (SA)",
            FeatureSetId::PU => "Receiver Platform Usage (PU)",
        }
    }

    /// Model columns belonging to the group.
    pub fn columns(self) -> Vec<usize> {
        (0..N_COLUMNS).filter(|&c| COLUMNS[c].1 == self).collect()
    }
}

impl fmt::Display for FeatureSetId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{self:?}")
    }
}

pub const N_COLUMNS: usize = 16;

/// Model column order: name, group, description.
pub const COLUMNS: [(&str, FeatureSetId, &str); N_COLUMNS] = [
    ("sum_social_interactions", FeatureSetId::ST, "L_s(ij) + L_c(ij) + L_l(ij) + L_l(ji) before share time"),
    ("direct_link_share", FeatureSetId::ST, "1 if the app type is a direct messenger, else 0"),
    ("reciprocal_link_sharing", FeatureSetId::ST, "1 if the receiver shared a link with the sender before, else 0"),
    ("receiver_share_in_degree", FeatureSetId::SN, "links received by the receiver before share time"),
    ("receiver_share_out_degree", FeatureSetId::SN, "links sent by the receiver before share time"),
    ("sender_share_out_degree", FeatureSetId::SN, "links sent by the sender before share time"),
    ("fraction_engaged_friends", FeatureSetId::SC, "engaged friends / friends; -1 when the receiver has no friends"),
    ("fraction_engaged_friends_available", FeatureSetId::SC, "1 if the receiver has at least one friend, else 0"),
    ("sr_cosine", FeatureSetId::TS, "cosine of sender and receiver taste vectors"),
    ("rt_cosine", FeatureSetId::TS, "cosine of receiver taste vector and shared track vector"),
    ("artist_popularity_rank", FeatureSetId::TC, "artist popularity rank at share time (1 = most popular)"),
    ("release_age_s", FeatureSetId::TC, "seconds from album release to share"),
    ("sender_artist_engagement_7d", FeatureSetId::SA, "sender engagement with the artist over the 7 days before the share day"),
    ("is_subscriber", FeatureSetId::PU, "1 if the receiver was a paid subscriber at open time"),
    ("receiver_streaming_hours_7d", FeatureSetId::PU, "hours streamed by the receiver in the 7 days before opening"),
    ("receiver_days_on_platform", FeatureSetId::PU, "days from registration to the open day"),
];

pub fn column_names() -> Vec<String> {
    COLUMNS.iter().map(|c| c.0.to_string()).collect()
}

/// `(title, columns)` for every group, in [`FeatureSetId::ALL`] order.
pub fn feature_groups() -> Vec<(String, Vec<usize>)> {
    FeatureSetId::ALL
        .iter()
        .map(|g| (g.title().to_string(), g.columns()))
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector {
    pub sum_social_interactions: u64,
    pub direct_link_share: bool,
    pub reciprocal_link_sharing: bool,
    pub receiver_share_in_degree: u64,
    pub receiver_share_out_degree: u64,
    pub sender_share_out_degree: u64,
    /// `None` when the receiver has no friends.
    pub fraction_engaged_friends: Option<f64>,
    pub sr_cosine: f64,
    pub rt_cosine: f64,
    pub artist_popularity_rank: u32,
    pub release_age_s: i64,
    pub sender_artist_engagement_7d: f64,
    pub is_subscriber: bool,
    pub receiver_streaming_hours_7d: f64,
    pub receiver_days_on_platform: i64,
}

fn flag(b: bool) -> f64 {
    if b {
        1.0
    } else {
        0.0
    }
}

impl FeatureVector {
    /// Values in [`COLUMNS`] order.
    pub fn to_row(&self) -> [f64; N_COLUMNS] {
        [
            self.sum_social_interactions as f64,
            flag(self.direct_link_share),
            flag(self.reciprocal_link_sharing),
            self.receiver_share_in_degree as f64,
            self.receiver_share_out_degree as f64,
            self.sender_share_out_degree as f64,
            self.fraction_engaged_friends.unwrap_or(MISSING_FRACTION),
            flag(self.fraction_engaged_friends.is_some()),
            self.sr_cosine,
            self.rt_cosine,
            f64::from(self.artist_popularity_rank),
            self.release_age_s as f64,
            self.sender_artist_engagement_7d,
            flag(self.is_subscriber),
            self.receiver_streaming_hours_7d,
            self.receiver_days_on_platform as f64,
        ]
    }

    pub fn from_row(row: &[f64]) -> Result<Self> {
        if row.len() != N_COLUMNS {
            return Err(Error::DimensionMismatch {
                expected: N_COLUMNS,
                got: row.len(),
            });
        }
        let count = |v: f64| v as u64;
        Ok(Self {
            sum_social_interactions: count(row[0]),
            direct_link_share: row[1] != 0.0,
            reciprocal_link_sharing: row[2] != 0.0,
            receiver_share_in_degree: count(row[3]),
            receiver_share_out_degree: count(row[4]),
            sender_share_out_degree: count(row[5]),
            fraction_engaged_friends: (row[7] != 0.0).then_some(row[6]),
            sr_cosine: row[8],
            rt_cosine: row[9],
            artist_popularity_rank: row[10] as u32,
            release_age_s: row[11] as i64,
            sender_artist_engagement_7d: row[12],
            is_subscriber: row[13] != 0.0,
            receiver_streaming_hours_7d: row[14],
            receiver_days_on_platform: row[15] as i64,
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SubscriptionSpan {
    pub start: Timestamp,
    /// Exclusive end; `None` while ongoing.
    pub end: Option<Timestamp>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AccountRecord {
    pub user: UserId,
    pub registered_ts: Timestamp,
    #[serde(default)]
    pub subscriptions: Vec<SubscriptionSpan>,
}

impl AccountRecord {
    pub fn is_subscriber_at(&self, ts: Timestamp) -> bool {
        self.subscriptions
            .iter()
            .any(|s| s.start <= ts && s.end.is_none_or(|e| ts < e))
    }
}

/// Account registry keyed by user.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct AccountLog {
    accounts: BTreeMap<UserId, AccountRecord>,
}

impl AccountLog {
    pub fn new(records: Vec<AccountRecord>) -> Result<Self> {
        let mut accounts = BTreeMap::new();
        for r in records {
            let user = r.user;
            if accounts.insert(user, r).is_some() {
                return Err(Error::Data(format!("duplicate account record for user {user}")));
            }
        }
        Ok(Self { accounts })
    }

    pub fn get(&self, user: UserId) -> Option<&AccountRecord> {
        self.accounts.get(&user)
    }

    pub fn len(&self) -> usize {
        self.accounts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.accounts.is_empty()
    }

    pub fn records(&self) -> impl Iterator<Item = &AccountRecord> {
        self.accounts.values()
    }

    /// What the registry looked like at `as_of`: later registrations and
    /// subscription starts are dropped, later ends are reopened.
    pub fn truncated(&self, as_of: Timestamp) -> Self {
        let accounts = self
            .accounts
            .values()
            .filter(|r| r.registered_ts < as_of)
            .map(|r| AccountRecord {
                user: r.user,
                registered_ts: r.registered_ts,
                subscriptions: r
                    .subscriptions
                    .iter()
                    .filter(|s| s.start < as_of)
                    .map(|s| SubscriptionSpan {
                        start: s.start,
                        end: s.end.filter(|&e| e < as_of),
                    })
                    .collect(),
            })
            .map(|r| (r.user, r))
            .collect();
        Self { accounts }
    }

    pub fn read_jsonl(path: impl AsRef<Path>) -> Result<Self> {
        Self::new(read_jsonl(path)?)
    }

    pub fn write_jsonl(&self, path: impl AsRef<Path>) -> Result<()> {
        write_jsonl(path, self.accounts.values())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DropReason {
    NotOpened,
    BeforeAnalysisStart,
    ColdReceiver,
    ColdSender,
    UnknownTrack,
}

impl DropReason {
    pub fn code(self) -> &'static str {
        match self {
            DropReason::NotOpened => "not_opened",
            DropReason::BeforeAnalysisStart => "before_analysis_start",
            DropReason::ColdReceiver => "cold_receiver",
            DropReason::ColdSender => "cold_sender",
            DropReason::UnknownTrack => "unknown_track",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FeatureConfig {
    /// First day of the analysis period; taste vectors and the engaged-friend
    /// rule look back from here.
    pub analysis_start_day: i64,
    pub taste_window_days: i64,
    pub taste_averaging: TasteAveraging,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        Self {
            analysis_start_day: 0,
            taste_window_days: 28,
            taste_averaging: TasteAveraging::PerListen,
        }
    }
}

impl FeatureConfig {
    pub fn analysis_start(&self) -> Timestamp {
        self.analysis_start_day * DAY_SECONDS
    }

    pub fn taste_window(&self) -> (Timestamp, Timestamp) {
        let a = self.analysis_start();
        (a - self.taste_window_days * DAY_SECONDS, a)
    }
}

/// Taste vectors of every user with in-window listening. Users without any
/// are absent (cold).
pub fn taste_vectors(
    log: &PlaybackLog,
    users: impl IntoIterator<Item = UserId>,
    space: &EmbeddingSpace,
    config: &FeatureConfig,
) -> TasteMap {
    let window = config.taste_window();
    let mut out = TasteMap::default();
    for u in users {
        if let Ok(v) = user_vector_from_log(u, log, space, window, config.taste_averaging) {
            out.insert(u, v.vector);
        }
    }
    out
}

/// Read-only stores for extraction.
pub struct FeatureContext<'a> {
    pub network: &'a MultiplexNetwork,
    pub space: &'a EmbeddingSpace,
    pub playback: &'a PlaybackLog,
    pub accounts: &'a AccountLog,
    pub modes: &'a AppModeTable,
    pub config: FeatureConfig,
    pub taste: TasteMap,
}

impl<'a> FeatureContext<'a> {
    /// Builds the context, computing taste vectors for every user who appears
    /// in the playback log.
    pub fn new(
        network: &'a MultiplexNetwork,
        space: &'a EmbeddingSpace,
        playback: &'a PlaybackLog,
        accounts: &'a AccountLog,
        modes: &'a AppModeTable,
        config: FeatureConfig,
    ) -> Self {
        let mut users: Vec<UserId> = playback.records().iter().map(|r| r.user).collect();
        users.sort_unstable();
        users.dedup();
        let taste = taste_vectors(playback, users, space, &config);
        Self::with_taste(network, space, playback, accounts, modes, config, taste)
    }

    pub fn with_taste(
        network: &'a MultiplexNetwork,
        space: &'a EmbeddingSpace,
        playback: &'a PlaybackLog,
        accounts: &'a AccountLog,
        modes: &'a AppModeTable,
        config: FeatureConfig,
        taste: TasteMap,
    ) -> Self {
        Self {
            network,
            space,
            playback,
            accounts,
            modes,
            config,
            taste,
        }
    }

    /// Fraction of the receiver's friends (as of share time) engaged with the
    /// artist over the 180 days before the analysis start.
    fn fraction_engaged_friends(&self, ev: &ShareEvent) -> Result<Option<f64>> {
        let friends = self.network.friends(ev.receiver, ev.share_ts);
        if friends.is_empty() {
            return Ok(None);
        }
        let mut engaged = 0usize;
        for &u in &friends {
            let w = self.playback.aggregate_engagement(
                u,
                ev.artist_id,
                self.config.analysis_start_day,
                -FRIEND_WINDOW_DAYS,
            )?;
            engaged += usize::from(is_engaged_friend(&w));
        }
        Ok(Some(engaged as f64 / friends.len() as f64))
    }

    /// Feature vector of one share, or the reason it cannot be built.
    pub fn extract(&self, ev: &ShareEvent) -> Result<std::result::Result<FeatureVector, DropReason>> {
        let Some(open_ts) = ev.open_ts else {
            return Ok(Err(DropReason::NotOpened));
        };
        if ev.share_ts < self.config.analysis_start() {
            return Ok(Err(DropReason::BeforeAnalysisStart));
        }
        let Some(rv) = self.taste.get(&ev.receiver) else {
            return Ok(Err(DropReason::ColdReceiver));
        };
        let Some(sv) = self.taste.get(&ev.sender) else {
            return Ok(Err(DropReason::ColdSender));
        };
        let Some(tv) = self.space.vector(ev.track_id) else {
            return Ok(Err(DropReason::UnknownTrack));
        };
        let account = self
            .accounts
            .get(ev.receiver)
            .ok_or(Error::MissingAccount(ev.receiver))?;

        let net = self.network;
        let (i, j, t) = (ev.receiver, ev.sender, ev.share_ts);
        let link = LayerKind::LinkShare;
        let back = net.layer_weight(link, i, j, t);
        let sum_social = net.layer_weight(LayerKind::SocialListening, i, j, t)
            + net.layer_weight(LayerKind::CollabPlaylist, i, j, t)
            + back
            + net.layer_weight(link, j, i, t);
        let sa = self
            .playback
            .aggregate_engagement(j, ev.artist_id, day_of(t), -RECEIVER_WINDOW_DAYS)?;
        let streamed = self
            .playback
            .streaming_seconds(i, open_ts - RECEIVER_WINDOW_DAYS * DAY_SECONDS, open_ts);

        Ok(Ok(FeatureVector {
            sum_social_interactions: sum_social,
            direct_link_share: self.modes.classify(&ev.app_type) == AppMode::Direct,
            reciprocal_link_sharing: back > 0,
            receiver_share_in_degree: net.in_degree(link, i, t),
            receiver_share_out_degree: net.out_degree(link, i, t),
            sender_share_out_degree: net.out_degree(link, j, t),
            fraction_engaged_friends: self.fraction_engaged_friends(ev)?,
            sr_cosine: cosine_similarity(sv, rv)?,
            rt_cosine: cosine_similarity(rv, tv)?,
            artist_popularity_rank: ev.artist_popularity_rank,
            release_age_s: ev.album_release_age,
            sender_artist_engagement_7d: sa.e,
            is_subscriber: account.is_subscriber_at(open_ts),
            receiver_streaming_hours_7d: streamed / 3600.0,
            receiver_days_on_platform: day_of(open_ts) - day_of(account.registered_ts),
        }))
    }
}

/// Receiver engaged with the shared artist over `[open day, open day + 7)`.
/// Unopened shares are never engaged.
pub fn engagement_label(log: &PlaybackLog, ev: &ShareEvent) -> Result<bool> {
    let Some(open) = ev.open_ts else {
        return Ok(false);
    };
    let w = log.aggregate_engagement(ev.receiver, ev.artist_id, day_of(open), RECEIVER_WINDOW_DAYS)?;
    Ok(is_engaged_receiver(&w))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LabeledExample {
    pub key: ShareKey,
    pub features: FeatureVector,
    pub label: bool,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ExtractionReport {
    pub input_events: usize,
    pub examples: usize,
    pub dropped: BTreeMap<String, usize>,
    pub positives: usize,
    pub positive_rate: f64,
}

/// Extracts features and labels for every event, in event-key order.
pub fn build_dataset(
    ctx: &FeatureContext<'_>,
    events: &[ShareEvent],
) -> Result<(Vec<LabeledExample>, ExtractionReport)> {
    let mut order: Vec<&ShareEvent> = events.iter().collect();
    order.sort_by_key(|e| e.key());
    let results: Vec<Result<std::result::Result<LabeledExample, DropReason>>> = order
        .par_iter()
        .map(|ev| {
            Ok(match ctx.extract(ev)? {
                Ok(features) => Ok(LabeledExample {
                    key: ev.key(),
                    features,
                    label: engagement_label(ctx.playback, ev)?,
                }),
                Err(reason) => Err(reason),
            })
        })
        .collect();

    let mut examples = Vec::with_capacity(events.len());
    let mut report = ExtractionReport {
        input_events: events.len(),
        ..Default::default()
    };
    for r in results {
        match r? {
            Ok(ex) => examples.push(ex),
            Err(reason) => *report.dropped.entry(reason.code().to_string()).or_default() += 1,
        }
    }
    report.examples = examples.len();
    report.positives = examples.iter().filter(|e| e.label).count();
    report.positive_rate = if examples.is_empty() {
        0.0
    } else {
        report.positives as f64 / examples.len() as f64
    };
    for (reason, n) in &report.dropped {
        log::info!("dropped {n} events: {reason}");
    }
    Ok((examples, report))
}

pub fn examples_to_dataset(examples: &[LabeledExample]) -> Result<Dataset> {
    let rows: Vec<Vec<f64>> = examples.iter().map(|e| e.features.to_row().to_vec()).collect();
    let labels = examples.iter().map(|e| e.label).collect();
    Dataset::from_rows(&rows, labels, column_names())
}

const KEY_COLUMNS: [&str; 4] = ["share_ts", "sender", "receiver", "track_id"];

/// CSV with the event key, the model columns in order, then `label`.
pub fn write_examples_csv(path: impl AsRef<Path>, examples: &[LabeledExample]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let mut header: Vec<String> = KEY_COLUMNS.iter().map(|s| s.to_string()).collect();
    header.extend(column_names());
    header.push("label".into());
    w.write_record(&header)?;
    for e in examples {
        let mut rec = vec![
            e.key.share_ts.to_string(),
            e.key.sender.to_string(),
            e.key.receiver.to_string(),
            e.key.track_id.to_string(),
        ];
        rec.extend(e.features.to_row().iter().map(|v| v.to_string()));
        rec.push(u8::from(e.label).to_string());
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_examples_csv(path: impl AsRef<Path>) -> Result<Vec<LabeledExample>> {
    let path = path.as_ref();
    let mut r = csv::Reader::from_path(path)?;
    let expected = KEY_COLUMNS.len() + N_COLUMNS + 1;
    let mut out = Vec::new();
    for (n, rec) in r.records().enumerate() {
        let rec = rec?;
        let bad = |msg: String| Error::Parse {
            path: path.to_path_buf(),
            line: n + 2,
            msg,
        };
        if rec.len() != expected {
            return Err(bad(format!("expected {expected} fields, got {}", rec.len())));
        }
        let int = |k: usize| rec[k].parse::<i64>().map_err(|e| bad(format!("{}: {e}", &rec[k])));
        let id = |k: usize| rec[k].parse::<u64>().map_err(|e| bad(format!("{}: {e}", &rec[k])));
        let row = (0..N_COLUMNS)
            .map(|c| {
                let s = &rec[KEY_COLUMNS.len() + c];
                s.parse::<f64>().map_err(|e| bad(format!("{s}: {e}")))
            })
            .collect::<Result<Vec<f64>>>()?;
        out.push(LabeledExample {
            key: ShareKey {
                share_ts: int(0)?,
                sender: id(1)?.into(),
                receiver: id(2)?.into(),
                track_id: id(3)?.into(),
            },
            features: FeatureVector::from_row(&row)?,
            label: &rec[expected - 1] == "1",
        });
    }
    Ok(out)
}

#[derive(Serialize)]
struct SchemaColumn<'a> {
    index: usize,
    name: &'a str,
    group: FeatureSetId,
    group_title: &'a str,
    description: &'a str,
}

/// Sidecar describing the dataset CSV columns, groups and sentinels.
pub fn write_schema(path: impl AsRef<Path>) -> Result<()> {
    let columns: Vec<SchemaColumn> = COLUMNS
        .iter()
        .enumerate()
        .map(|(index, &(name, group, description))| SchemaColumn {
            index,
            name,
            group,
            group_title: group.title(),
            description,
        })
        .collect();
    let schema = serde_json::json!({
        "format": "tastegraph-features-v1",
        "key_columns": KEY_COLUMNS,
        "columns": columns,
        "label": "1 if receiver-artist engagement over [open day, open day + 7) exceeds 1.3",
        "booleans": "encoded as 0/1",
        "sentinels": { "fraction_engaged_friends": MISSING_FRACTION },
    });
    write_json(path, &schema)
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct HygieneReport {
    pub audited: usize,
    pub skipped: usize,
    pub mismatches: Vec<ShareKey>,
}

/// Re-extracts each event from stores cut at its share time and compares the
/// result with the full-store extraction.
///
/// For each event the cut stores hold the records of the users its features
/// read: interactions touching sender or receiver, playback of sender,
/// receiver and the receiver's friends (per the cut network), and the
/// receiver's account.
pub fn hygiene_audit(ctx: &FeatureContext<'_>, events: &[ShareEvent]) -> Result<HygieneReport> {
    let mut by_user: FxHashMap<UserId, Vec<usize>> = FxHashMap::default();
    for (k, ev) in ctx.network.events().iter().enumerate() {
        by_user.entry(ev.src).or_default().push(k);
        by_user.entry(ev.dst).or_default().push(k);
    }
    let results: Vec<Result<Option<bool>>> = events
        .par_iter()
        .map(|ev| {
            let full = match ctx.extract(ev)? {
                Ok(v) => v,
                Err(_) => return Ok(None),
            };
            let cut = ev.share_ts;
            let mut idx: Vec<usize> = [ev.sender, ev.receiver]
                .iter()
                .flat_map(|u| by_user.get(u).into_iter().flatten().copied())
                .collect();
            idx.sort_unstable();
            idx.dedup();
            let all = ctx.network.events();
            let net = MultiplexNetwork::from_events(
                idx.iter()
                    .map(|&k| all[k])
                    .filter(|e: &InteractionEvent| e.timestamp < cut),
            )?;
            let mut users: Vec<UserId> = net.friends(ev.receiver, cut).into_iter().collect();
            users.extend([ev.sender, ev.receiver]);
            users.sort_unstable();
            users.dedup();
            let mut records = Vec::new();
            for &u in &users {
                for p in ctx.playback.user_plays(u) {
                    if p.ts < cut {
                        records.push(crate::engagement::PlaybackRecord {
                            user: u,
                            track: p.track,
                            artist: p.artist,
                            ts: p.ts,
                            duration_s: p.duration_s,
                        });
                    }
                }
            }
            let playback = PlaybackLog::from_records(records)?;
            let accounts = AccountLog::new(
                ctx.accounts
                    .get(ev.receiver)
                    .into_iter()
                    .cloned()
                    .collect(),
            )?
            .truncated(cut);
            let taste = taste_vectors(&playback, users.iter().copied(), ctx.space, &ctx.config);
            let cut_ctx = FeatureContext::with_taste(
                &net,
                ctx.space,
                &playback,
                &accounts,
                ctx.modes,
                ctx.config,
                taste,
            );
            let again = cut_ctx.extract(ev)?;
            Ok(Some(again.as_ref() == Ok(&full)))
        })
        .collect();
    let mut report = HygieneReport::default();
    for (ev, r) in events.iter().zip(results) {
        match r? {
            None => report.skipped += 1,
            Some(ok) => {
                report.audited += 1;
                if !ok {
                    report.mismatches.push(ev.key());
                }
            }
        }
    }
    Ok(report)
}
