//! Link-share events: app-mode classification, the discovery filter and
//! popularity-stratified sampling.

use std::collections::BTreeMap;
use std::path::Path;

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::engagement::PlaybackLog;
use crate::io::{read_json, read_jsonl, write_jsonl};
use crate::{AlbumId, ArtistId, Error, Result, Timestamp, TrackId, UserId};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ShareEvent {
    pub sender: UserId,
    pub receiver: UserId,
    pub track_id: TrackId,
    pub album_id: AlbumId,
    pub artist_id: ArtistId,
    /// 1 = most streamed artist at share time.
    pub artist_popularity_rank: u32,
    /// Seconds from album release to the share.
    pub album_release_age: i64,
    pub app_type: String,
    pub share_ts: Timestamp,
    pub open_ts: Option<Timestamp>,
    /// Receiver played the shared content for at least 30 seconds.
    pub playback_30s: bool,
}

impl ShareEvent {
    pub fn validate(&self) -> Result<()> {
        if self.sender == self.receiver {
            return Err(Error::InvalidShare(format!(
                "sender and receiver are both {}",
                self.sender
            )));
        }
        if self.artist_popularity_rank == 0 {
            return Err(Error::InvalidShare("popularity rank must be >= 1".into()));
        }
        match self.open_ts {
            Some(open) if open < self.share_ts => Err(Error::InvalidShare(format!(
                "open_ts {open} precedes share_ts {}",
                self.share_ts
            ))),
            None if self.playback_30s => Err(Error::InvalidShare(
                "playback_30s set on an unopened share".into(),
            )),
            _ => Ok(()),
        }
    }

    /// Stable key used to order datasets and reports.
    pub fn key(&self) -> ShareKey {
        ShareKey {
            share_ts: self.share_ts,
            sender: self.sender,
            receiver: self.receiver,
            track_id: self.track_id,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ShareKey {
    pub share_ts: Timestamp,
    pub sender: UserId,
    pub receiver: UserId,
    pub track_id: TrackId,
}

pub fn read_shares(path: impl AsRef<Path>) -> Result<Vec<ShareEvent>> {
    let events: Vec<ShareEvent> = read_jsonl(path)?;
    for ev in &events {
        ev.validate()?;
    }
    Ok(events)
}

pub fn write_shares(path: impl AsRef<Path>, events: &[ShareEvent]) -> Result<()> {
    write_jsonl(path, events)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AppMode {
    /// One-to-one messaging.
    Direct,
    /// One-to-many posting.
    Broadcast,
    Unknown,
}

pub const DIRECT_APPS: [&str; 6] = [
    "whatsapp",
    "facebook_messenger",
    "sms",
    "line",
    "instagram_direct",
    "samsung_messenger",
];

pub const BROADCAST_APPS: [&str; 4] = [
    "instagram_stories",
    "facebook_feed",
    "facebook_stories",
    "x_twitter",
];

/// Token to mode lookup. Canonical tokens are the lower snake case entries
/// of [`DIRECT_APPS`] and [`BROADCAST_APPS`]; aliases map extra tokens onto
/// them.
#[derive(Clone, Debug, Default)]
pub struct AppModeTable {
    aliases: BTreeMap<String, String>,
}

impl AppModeTable {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_aliases(aliases: BTreeMap<String, String>) -> Result<Self> {
        let mut table = Self::default();
        for (alias, canonical) in aliases {
            let canonical = canonical.trim().to_lowercase();
            if mode_of_canonical(&canonical) == AppMode::Unknown {
                return Err(Error::Config(format!(
                    "alias `{alias}` maps to unknown app token `{canonical}`"
                )));
            }
            table.aliases.insert(alias.trim().to_lowercase(), canonical);
        }
        Ok(table)
    }

    /// Loads a JSON object of `alias -> canonical token`.
    pub fn from_alias_file(path: impl AsRef<Path>) -> Result<Self> {
        Self::with_aliases(read_json(path)?)
    }

    pub fn classify(&self, app_type: &str) -> AppMode {
        let token = app_type.trim().to_lowercase();
        let canonical = self.aliases.get(&token).unwrap_or(&token);
        mode_of_canonical(canonical)
    }
}

fn mode_of_canonical(token: &str) -> AppMode {
    if DIRECT_APPS.contains(&token) {
        AppMode::Direct
    } else if BROADCAST_APPS.contains(&token) {
        AppMode::Broadcast
    } else {
        AppMode::Unknown
    }
}

/// Classification against the fixed lists, case-insensitively.
pub fn classify_app_mode(app_type: &str) -> AppMode {
    mode_of_canonical(&app_type.trim().to_lowercase())
}

/// Keeps opened shares with a 30-second playback whose receiver had never
/// played the artist before the share.
pub fn filter_discovery_shares(events: &[ShareEvent], log: &PlaybackLog) -> Vec<ShareEvent> {
    events
        .iter()
        .filter(|ev| {
            ev.open_ts.is_some()
                && ev.playback_30s
                && !log.has_played_before(ev.receiver, ev.artist_id, ev.share_ts)
        })
        .cloned()
        .collect()
}

/// Popularity-rank bins. `edges` are interior cut points: with edges
/// `[e0, .., em]` the bins are `[1, e0)`, `[e0, e1)`, .., `[em, inf)`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PopularityBins {
    edges: Vec<u32>,
}

impl PopularityBins {
    pub fn new(edges: Vec<u32>) -> Result<Self> {
        if edges.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Config(format!(
                "popularity bin edges must be strictly increasing: {edges:?}"
            )));
        }
        Ok(Self { edges })
    }

    /// Decile cut points of the observed ranks.
    pub fn deciles(events: &[ShareEvent]) -> Self {
        let mut ranks: Vec<u32> = events.iter().map(|e| e.artist_popularity_rank).collect();
        ranks.sort_unstable();
        let mut edges: Vec<u32> = Vec::new();
        if !ranks.is_empty() {
            for q in 1..10 {
                let cut = ranks[(q * ranks.len()) / 10];
                if edges.last().is_none_or(|&last| cut > last) && cut > ranks[0] {
                    edges.push(cut);
                }
            }
        }
        Self { edges }
    }

    pub fn edges(&self) -> &[u32] {
        &self.edges
    }

    pub fn len(&self) -> usize {
        self.edges.len() + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn bin_of(&self, rank: u32) -> usize {
        self.edges.partition_point(|&e| e <= rank)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BinSpec {
    Deciles,
    Edges(Vec<u32>),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SamplingConfig {
    pub bins: BinSpec,
    pub cap_per_bin: usize,
    pub seed: u64,
}

impl Default for SamplingConfig {
    fn default() -> Self {
        Self {
            bins: BinSpec::Deciles,
            cap_per_bin: 1_000_000,
            seed: 0,
        }
    }
}

impl SamplingConfig {
    pub fn resolve_bins(&self, events: &[ShareEvent]) -> Result<PopularityBins> {
        match &self.bins {
            BinSpec::Deciles => Ok(PopularityBins::deciles(events)),
            BinSpec::Edges(e) => PopularityBins::new(e.clone()),
        }
    }
}

/// Per popularity bin, draws `min(cap, bin size)` events uniformly without
/// replacement. Output keeps input order.
pub fn stratified_sample_by_artist(
    events: &[ShareEvent],
    bins: &PopularityBins,
    cap_per_bin: usize,
    seed: u64,
) -> Vec<ShareEvent> {
    let mut members: Vec<Vec<usize>> = vec![Vec::new(); bins.len()];
    for (i, ev) in events.iter().enumerate() {
        members[bins.bin_of(ev.artist_popularity_rank)].push(i);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut keep: Vec<usize> = Vec::new();
    for bin in &members {
        if bin.len() <= cap_per_bin {
            keep.extend_from_slice(bin);
        } else {
            keep.extend(
                index::sample(&mut rng, bin.len(), cap_per_bin)
                    .into_iter()
                    .map(|j| bin[j]),
            );
        }
    }
    keep.sort_unstable();
    keep.into_iter().map(|i| events[i].clone()).collect()
}
