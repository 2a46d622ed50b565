//! User-artist engagement.
//!
//! The daily score is `e = log10(n) + 1` where `n` is the number of distinct
//! tracks by the artist streamed for at least 30 seconds that UTC day, and
//! `e = 0` when `n = 0`. Windowed engagement sums the daily score over a
//! half-open day range anchored at `t0`:
//!
//! * `k > 0`: days `[t0, t0 + k)`, i.e. `k` days including `t0`;
//! * `k < 0`: days `[t0 + k, t0)`, i.e. `|k|` days strictly before `t0`.
//!
//! Spreading listens over days is rewarded: `m` days with one track each
//! scores `m`, whereas one day with `m` tracks scores `log10(m) + 1`.

use std::path::Path;

use rustc_hash::FxHashMap;
use serde::{Deserialize, Serialize};

use crate::io::{read_jsonl, write_jsonl};
use crate::{day_of, ArtistId, Error, Result, Timestamp, TrackId, UserId, DAY_SECONDS};

/// Minimum stream length for a play to count towards engagement.
pub const QUALIFYING_PLAY_SECONDS: f64 = 30.0;
/// Post-open window for the engaged-receiver label.
pub const RECEIVER_WINDOW_DAYS: i64 = 7;
pub const RECEIVER_THRESHOLD: f64 = 1.3;
/// Look-back window for the engaged-friend rule.
pub const FRIEND_WINDOW_DAYS: i64 = 180;
pub const FRIEND_THRESHOLD: f64 = 180.0;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlaybackRecord {
    pub user: UserId,
    pub track: TrackId,
    pub artist: ArtistId,
    pub ts: Timestamp,
    pub duration_s: f64,
}

impl PlaybackRecord {
    pub fn qualifies(&self) -> bool {
        self.duration_s >= QUALIFYING_PLAY_SECONDS
    }
}

/// A play as stored in the per-key indices.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Play {
    pub ts: Timestamp,
    pub track: TrackId,
    pub artist: ArtistId,
    pub duration_s: f64,
}

impl Play {
    pub fn qualifies(&self) -> bool {
        self.duration_s >= QUALIFYING_PLAY_SECONDS
    }
}

/// Playback log indexed by `(user, artist)` and by user, both sorted by time.
#[derive(Debug, Clone, Default)]
pub struct PlaybackLog {
    records: Vec<PlaybackRecord>,
    by_pair: FxHashMap<(UserId, ArtistId), Vec<Play>>,
    by_user: FxHashMap<UserId, Vec<Play>>,
}

impl PlaybackLog {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_records(records: Vec<PlaybackRecord>) -> Result<Self> {
        let mut by_pair: FxHashMap<(UserId, ArtistId), Vec<Play>> = FxHashMap::default();
        let mut by_user: FxHashMap<UserId, Vec<Play>> = FxHashMap::default();
        for r in &records {
            validate(r)?;
            let p = play(r);
            by_pair.entry((r.user, r.artist)).or_default().push(p);
            by_user.entry(r.user).or_default().push(p);
        }
        // Stable sort keeps input order among equal timestamps.
        for v in by_pair.values_mut().chain(by_user.values_mut()) {
            v.sort_by_key(|p| p.ts);
        }
        Ok(Self {
            records,
            by_pair,
            by_user,
        })
    }

    /// Appends one record, keeping the indices sorted.
    pub fn push(&mut self, r: PlaybackRecord) -> Result<()> {
        validate(&r)?;
        let p = play(&r);
        insert_sorted(self.by_pair.entry((r.user, r.artist)).or_default(), p);
        insert_sorted(self.by_user.entry(r.user).or_default(), p);
        self.records.push(r);
        Ok(())
    }

    pub fn records(&self) -> &[PlaybackRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn artist_plays(&self, user: UserId, artist: ArtistId) -> &[Play] {
        self.by_pair
            .get(&(user, artist))
            .map_or(&[], |v| v.as_slice())
    }

    pub fn user_plays(&self, user: UserId) -> &[Play] {
        self.by_user.get(&user).map_or(&[], |v| v.as_slice())
    }

    /// Plays of `user` with `from <= ts < to`.
    pub fn user_plays_between(&self, user: UserId, from: Timestamp, to: Timestamp) -> &[Play] {
        slice_between(self.user_plays(user), from, to)
    }

    /// Any playback record of the artist by the user strictly before `before`,
    /// regardless of duration.
    pub fn has_played_before(&self, user: UserId, artist: ArtistId, before: Timestamp) -> bool {
        self.artist_plays(user, artist)
            .first()
            .is_some_and(|p| p.ts < before)
    }

    /// Total streamed seconds in `[from, to)`.
    pub fn streaming_seconds(&self, user: UserId, from: Timestamp, to: Timestamp) -> f64 {
        self.user_plays_between(user, from, to)
            .iter()
            .map(|p| p.duration_s)
            .sum()
    }

    /// Copy of the log keeping only records with `ts < as_of`.
    pub fn truncated(&self, as_of: Timestamp) -> Result<Self> {
        Self::from_records(
            self.records
                .iter()
                .filter(|r| r.ts < as_of)
                .copied()
                .collect(),
        )
    }

    pub fn daily_engagement(&self, user: UserId, artist: ArtistId, day: i64) -> DailyEngagement {
        let plays = slice_between(
            self.artist_plays(user, artist),
            day * DAY_SECONDS,
            (day + 1) * DAY_SECONDS,
        );
        let n = distinct_qualifying(plays);
        DailyEngagement {
            user,
            artist,
            day,
            n,
            e: engagement_score(n),
        }
    }

    /// Windowed engagement `E(t0, k)`; see the module docs for the window
    /// convention.
    pub fn aggregate_engagement(
        &self,
        user: UserId,
        artist: ArtistId,
        t0: i64,
        k: i64,
    ) -> Result<EngagementWindowSum> {
        if k == 0 {
            return Err(Error::Config("engagement window length k must be non-zero".into()));
        }
        let (first, last) = if k > 0 { (t0, t0 + k) } else { (t0 + k, t0) };
        let plays = slice_between(
            self.artist_plays(user, artist),
            first * DAY_SECONDS,
            last * DAY_SECONDS,
        );
        let mut total = 0.0;
        let mut start = 0;
        while start < plays.len() {
            let day = day_of(plays[start].ts);
            let end = start + plays[start..].partition_point(|p| day_of(p.ts) == day);
            total += engagement_score(distinct_qualifying(&plays[start..end]));
            start = end;
        }
        Ok(EngagementWindowSum {
            user,
            artist,
            t0,
            k,
            e: total,
        })
    }

    pub fn read_jsonl(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_records(read_jsonl(path)?)
    }

    pub fn write_jsonl(&self, path: impl AsRef<Path>) -> Result<()> {
        write_jsonl(path, &self.records)
    }
}

fn validate(r: &PlaybackRecord) -> Result<()> {
    if !(r.duration_s >= 0.0 && r.duration_s.is_finite()) {
        return Err(Error::Data(format!(
            "playback of user {} has invalid duration {}",
            r.user, r.duration_s
        )));
    }
    Ok(())
}

fn play(r: &PlaybackRecord) -> Play {
    Play {
        ts: r.ts,
        track: r.track,
        artist: r.artist,
        duration_s: r.duration_s,
    }
}

fn insert_sorted(v: &mut Vec<Play>, p: Play) {
    let at = v.partition_point(|q| q.ts <= p.ts);
    v.insert(at, p);
}

fn slice_between(plays: &[Play], from: Timestamp, to: Timestamp) -> &[Play] {
    let lo = plays.partition_point(|p| p.ts < from);
    let hi = plays.partition_point(|p| p.ts < to);
    &plays[lo..hi.max(lo)]
}

fn distinct_qualifying(plays: &[Play]) -> u32 {
    let mut tracks: Vec<TrackId> = plays
        .iter()
        .filter(|p| p.qualifies())
        .map(|p| p.track)
        .collect();
    tracks.sort_unstable();
    tracks.dedup();
    tracks.len() as u32
}

/// `log10(n) + 1` for `n >= 1`, else 0.
pub fn engagement_score(n: u32) -> f64 {
    if n == 0 {
        0.0
    } else {
        f64::from(n).log10() + 1.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DailyEngagement {
    pub user: UserId,
    pub artist: ArtistId,
    pub day: i64,
    pub n: u32,
    pub e: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EngagementWindowSum {
    pub user: UserId,
    pub artist: ArtistId,
    pub t0: i64,
    pub k: i64,
    pub e: f64,
}

/// Receiver engaged with the shared artist in the week after opening.
pub fn is_engaged_receiver(window: &EngagementWindowSum) -> bool {
    debug_assert_eq!(window.k, RECEIVER_WINDOW_DAYS);
    window.e > RECEIVER_THRESHOLD
}

/// Friend engaged with the artist over the 180 days before the analysis
/// period.
pub fn is_engaged_friend(window: &EngagementWindowSum) -> bool {
    debug_assert_eq!(window.k, -FRIEND_WINDOW_DAYS);
    window.e > FRIEND_THRESHOLD
}
