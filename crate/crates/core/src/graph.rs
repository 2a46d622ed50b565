//! Multiplex interaction network with as-of-time queries.
//!
//! Every query takes an `as_of` timestamp and only sees events with
//! `timestamp < as_of`, so a share at time `t` never observes itself.

use std::collections::BTreeSet;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rustc_hash::FxHashMap;
use serde::{Deserialize, Serialize};

use crate::io::{read_jsonl, write_jsonl};
use crate::{Error, Result, Timestamp, UserId};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum LayerKind {
    /// Joint listening sessions; undirected.
    SocialListening,
    /// Collaborative playlist co-editing; undirected.
    CollabPlaylist,
    /// Link shares; directed sender to receiver.
    LinkShare,
}

impl LayerKind {
    pub const ALL: [LayerKind; 3] = [
        LayerKind::SocialListening,
        LayerKind::CollabPlaylist,
        LayerKind::LinkShare,
    ];

    pub fn is_directed(self) -> bool {
        matches!(self, LayerKind::LinkShare)
    }

    /// Token used in the interaction log.
    pub fn token(self) -> &'static str {
        match self {
            LayerKind::SocialListening => "listening",
            LayerKind::CollabPlaylist => "playlist",
            LayerKind::LinkShare => "share",
        }
    }
}

impl fmt::Display for LayerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.token())
    }
}

impl FromStr for LayerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "listening" => Ok(LayerKind::SocialListening),
            "playlist" => Ok(LayerKind::CollabPlaylist),
            "share" => Ok(LayerKind::LinkShare),
            other => Err(Error::UnknownLayer(other.to_string())),
        }
    }
}

impl TryFrom<String> for LayerKind {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<LayerKind> for String {
    fn from(l: LayerKind) -> String {
        l.token().to_string()
    }
}

/// One pairwise interaction. Group interactions arrive already flattened
/// into pairs.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct InteractionEvent {
    pub layer: LayerKind,
    pub src: UserId,
    pub dst: UserId,
    #[serde(rename = "ts")]
    pub timestamp: Timestamp,
}

impl InteractionEvent {
    pub fn new(layer: LayerKind, src: UserId, dst: UserId, timestamp: Timestamp) -> Self {
        Self {
            layer,
            src,
            dst,
            timestamp,
        }
    }

    /// Undirected layers store the smaller id first.
    pub fn canonical(self) -> Self {
        if !self.layer.is_directed() && self.src > self.dst {
            Self {
                src: self.dst,
                dst: self.src,
                ..self
            }
        } else {
            self
        }
    }
}

type PairKey = (LayerKind, UserId, UserId);
type NodeKey = (LayerKind, UserId);

/// Single-writer build phase for a [`MultiplexNetwork`].
#[derive(Debug, Default, Clone)]
pub struct NetworkBuilder {
    events: Vec<InteractionEvent>,
}

impl NetworkBuilder {
    pub fn new() -> Self {
        Self::default()
    }

    /// Duplicates are kept: two identical events count as two interactions.
    pub fn ingest(&mut self, ev: InteractionEvent) -> Result<()> {
        if ev.src == ev.dst {
            return Err(Error::SelfLoop(ev.src));
        }
        self.events.push(ev.canonical());
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    /// Seals the event log into an indexed, read-only network.
    pub fn build(self) -> MultiplexNetwork {
        MultiplexNetwork::index(self.events)
    }
}

/// Sealed, immutable multiplex network. All queries are `&self` and safe to
/// share across threads.
#[derive(Debug, Clone)]
pub struct MultiplexNetwork {
    events: Vec<InteractionEvent>,
    pair_times: FxHashMap<PairKey, Vec<Timestamp>>,
    out_times: FxHashMap<NodeKey, Vec<Timestamp>>,
    in_times: FxHashMap<NodeKey, Vec<Timestamp>>,
    // Per node: (neighbor, time from which the pair counts as friends),
    // sorted by neighbor.
    friend_since: FxHashMap<UserId, Vec<(UserId, Timestamp)>>,
}

impl MultiplexNetwork {
    pub fn from_events<I>(events: I) -> Result<Self>
    where
        I: IntoIterator<Item = InteractionEvent>,
    {
        let mut b = NetworkBuilder::new();
        for ev in events {
            b.ingest(ev)?;
        }
        Ok(b.build())
    }

    fn index(events: Vec<InteractionEvent>) -> Self {
        let mut pair_times: FxHashMap<PairKey, Vec<Timestamp>> = FxHashMap::default();
        let mut out_times: FxHashMap<NodeKey, Vec<Timestamp>> = FxHashMap::default();
        let mut in_times: FxHashMap<NodeKey, Vec<Timestamp>> = FxHashMap::default();
        for ev in &events {
            pair_times
                .entry((ev.layer, ev.src, ev.dst))
                .or_default()
                .push(ev.timestamp);
            out_times
                .entry((ev.layer, ev.src))
                .or_default()
                .push(ev.timestamp);
            in_times
                .entry((ev.layer, ev.dst))
                .or_default()
                .push(ev.timestamp);
            if !ev.layer.is_directed() {
                out_times
                    .entry((ev.layer, ev.dst))
                    .or_default()
                    .push(ev.timestamp);
                in_times
                    .entry((ev.layer, ev.src))
                    .or_default()
                    .push(ev.timestamp);
            }
        }
        for v in pair_times
            .values_mut()
            .chain(out_times.values_mut())
            .chain(in_times.values_mut())
        {
            v.sort_unstable();
        }

        let mut since: FxHashMap<(UserId, UserId), Timestamp> = FxHashMap::default();
        let mut relax = |a: UserId, b: UserId, t: Timestamp| {
            let key = if a < b { (a, b) } else { (b, a) };
            since
                .entry(key)
                .and_modify(|cur| *cur = (*cur).min(t))
                .or_insert(t);
        };
        for (&(layer, a, b), times) in &pair_times {
            let first = times[0];
            if layer.is_directed() {
                // Link ties need both directions; count from the later first.
                if a < b {
                    if let Some(back) = pair_times.get(&(layer, b, a)) {
                        relax(a, b, first.max(back[0]));
                    }
                }
            } else {
                relax(a, b, first);
            }
        }
        let mut friend_since: FxHashMap<UserId, Vec<(UserId, Timestamp)>> = FxHashMap::default();
        for (&(a, b), &t) in &since {
            friend_since.entry(a).or_default().push((b, t));
            friend_since.entry(b).or_default().push((a, t));
        }
        for v in friend_since.values_mut() {
            v.sort_unstable();
        }

        Self {
            events,
            pair_times,
            out_times,
            in_times,
            friend_since,
        }
    }

    /// Events in ingestion order, canonicalised.
    pub fn events(&self) -> &[InteractionEvent] {
        &self.events
    }

    /// Number of interactions in `layer` from `i` to `j` strictly before
    /// `as_of`. Undirected layers are symmetric.
    pub fn layer_weight(&self, layer: LayerKind, i: UserId, j: UserId, as_of: Timestamp) -> u64 {
        let key = if !layer.is_directed() && i > j {
            (layer, j, i)
        } else {
            (layer, i, j)
        };
        self.pair_times
            .get(&key)
            .map_or(0, |ts| count_before(ts, as_of))
    }

    /// Row sum of the layer's adjacency matrix (`Σ_k L_ik`) as of `as_of`.
    pub fn out_degree(&self, layer: LayerKind, i: UserId, as_of: Timestamp) -> u64 {
        self.out_times
            .get(&(layer, i))
            .map_or(0, |ts| count_before(ts, as_of))
    }

    /// Column sum of the layer's adjacency matrix (`Σ_k L_ki`) as of `as_of`.
    pub fn in_degree(&self, layer: LayerKind, i: UserId, as_of: Timestamp) -> u64 {
        self.in_times
            .get(&(layer, i))
            .map_or(0, |ts| count_before(ts, as_of))
    }

    /// Users with a reciprocal relationship to `i`: any listening session,
    /// any collaborative playlist, or link shares in both directions.
    pub fn friends(&self, i: UserId, as_of: Timestamp) -> BTreeSet<UserId> {
        self.friend_since
            .get(&i)
            .map(|v| {
                v.iter()
                    .filter(|&&(_, t)| t < as_of)
                    .map(|&(u, _)| u)
                    .collect()
            })
            .unwrap_or_default()
    }

    pub fn friend_count(&self, i: UserId, as_of: Timestamp) -> usize {
        self.friend_since
            .get(&i)
            .map_or(0, |v| v.iter().filter(|&&(_, t)| t < as_of).count())
    }

    pub fn are_friends(&self, i: UserId, j: UserId, as_of: Timestamp) -> bool {
        self.friend_since.get(&i).is_some_and(|v| {
            v.binary_search_by(|&(u, _)| u.cmp(&j))
                .is_ok_and(|pos| v[pos].1 < as_of)
        })
    }

    /// Local clustering coefficient of the unweighted friendship graph.
    /// Returns 0 when `i` has fewer than two friends.
    pub fn clustering_coefficient(&self, i: UserId, as_of: Timestamp) -> f64 {
        let friends: Vec<UserId> = self.friends(i, as_of).into_iter().collect();
        let k = friends.len();
        if k < 2 {
            return 0.0;
        }
        let mut linked = 0u64;
        for (a, &u) in friends.iter().enumerate() {
            for &v in &friends[a + 1..] {
                if self.are_friends(u, v, as_of) {
                    linked += 1;
                }
            }
        }
        linked as f64 / (k * (k - 1) / 2) as f64
    }

    /// Jaccard overlap of the two friend sets, endpoints excluded. Returns 0
    /// when the union is empty.
    pub fn edge_overlap(&self, i: UserId, j: UserId, as_of: Timestamp) -> f64 {
        let mut fi = self.friends(i, as_of);
        let mut fj = self.friends(j, as_of);
        for s in [&mut fi, &mut fj] {
            s.remove(&i);
            s.remove(&j);
        }
        let union = fi.union(&fj).count();
        if union == 0 {
            return 0.0;
        }
        fi.intersection(&fj).count() as f64 / union as f64
    }

    /// All users that appear in any event, ascending.
    pub fn users(&self) -> Vec<UserId> {
        let set: BTreeSet<UserId> = self.events.iter().flat_map(|e| [e.src, e.dst]).collect();
        set.into_iter().collect()
    }

    /// Reads an interaction log (`layer`, `src`, `dst`, `ts` per line).
    pub fn read_jsonl(path: impl AsRef<Path>) -> Result<Self> {
        let events: Vec<InteractionEvent> = read_jsonl(path)?;
        Self::from_events(events)
    }

    /// Writes the canonicalised event log. Reading it back with
    /// [`MultiplexNetwork::read_jsonl`] reproduces the same network.
    pub fn write_snapshot(&self, path: impl AsRef<Path>) -> Result<()> {
        write_jsonl(path, &self.events)
    }
}

fn count_before(sorted: &[Timestamp], as_of: Timestamp) -> u64 {
    sorted.partition_point(|&t| t < as_of) as u64
}

#[cfg(test)]
mod tests {
    use super::*;
    use LayerKind::*;

    fn u(i: u64) -> UserId {
        UserId(i)
    }

    fn net(events: &[(LayerKind, u64, u64, i64)]) -> MultiplexNetwork {
        MultiplexNetwork::from_events(
            events
                .iter()
                .map(|&(l, a, b, t)| InteractionEvent::new(l, u(a), u(b), t)),
        )
        .unwrap()
    }

    #[test]
    fn single_and_duplicate_events() {
        let n = net(&[(LinkShare, 1, 2, 100)]);
        assert_eq!(n.layer_weight(LinkShare, u(1), u(2), 101), 1);
        assert_eq!(n.layer_weight(LinkShare, u(2), u(1), 101), 0);
        let n = net(&[(LinkShare, 1, 2, 100), (LinkShare, 1, 2, 100)]);
        assert_eq!(n.layer_weight(LinkShare, u(1), u(2), 101), 2);
    }

    #[test]
    fn undirected_layers_are_symmetric() {
        let n = net(&[(SocialListening, 1, 2, 100)]);
        assert_eq!(n.layer_weight(SocialListening, u(2), u(1), 101), 1);
        let n = net(&[(CollabPlaylist, 1, 2, 10), (CollabPlaylist, 2, 1, 20)]);
        assert_eq!(n.layer_weight(CollabPlaylist, u(1), u(2), 21), 2);
        assert_eq!(n.layer_weight(CollabPlaylist, u(2), u(1), 21), 2);
    }

    #[test]
    fn as_of_is_strict() {
        let n = net(&[
            (LinkShare, 1, 2, 10),
            (LinkShare, 1, 2, 20),
            (LinkShare, 1, 2, 30),
            (LinkShare, 1, 2, 50),
        ]);
        assert_eq!(n.layer_weight(LinkShare, u(1), u(2), 40), 3);
        assert_eq!(n.layer_weight(LinkShare, u(1), u(2), 10), 0);
        assert_eq!(n.layer_weight(LinkShare, u(3), u(4), 1000), 0);
    }

    #[test]
    fn rejects_self_loops_and_unknown_layers() {
        let mut b = NetworkBuilder::new();
        assert!(matches!(
            b.ingest(InteractionEvent::new(LinkShare, u(1), u(1), 0)),
            Err(Error::SelfLoop(_))
        ));
        let parsed: std::result::Result<InteractionEvent, _> =
            serde_json::from_str(r#"{"layer":"blend","src":1,"dst":2,"ts":3}"#);
        assert!(parsed.is_err());
    }

    #[test]
    fn friendship_rules() {
        let n = net(&[
            (SocialListening, 1, 2, 5),
            (LinkShare, 1, 3, 5),
            (LinkShare, 1, 4, 5),
            (LinkShare, 4, 1, 8),
        ]);
        let f = n.friends(u(1), 100);
        assert!(f.contains(&u(2)));
        assert!(!f.contains(&u(3)));
        assert!(f.contains(&u(4)));
        assert!(!f.contains(&u(1)));
        // Reciprocal link tie only exists once the second direction happened.
        assert!(!n.friends(u(1), 8).contains(&u(4)));
        assert!(n.friends(u(4), 9).contains(&u(1)));
        assert!(n.friends(u(99), 100).is_empty());
    }

    #[test]
    fn clustering_examples() {
        let tri = net(&[
            (SocialListening, 1, 2, 0),
            (SocialListening, 2, 3, 0),
            (SocialListening, 1, 3, 0),
        ]);
        assert_eq!(tri.clustering_coefficient(u(1), 1), 1.0);
        let star = net(&[
            (SocialListening, 1, 2, 0),
            (SocialListening, 1, 3, 0),
            (SocialListening, 1, 4, 0),
        ]);
        assert_eq!(star.clustering_coefficient(u(1), 1), 0.0);
        assert_eq!(star.clustering_coefficient(u(2), 1), 0.0);
    }

    #[test]
    fn overlap_examples() {
        let n = net(&[
            (SocialListening, 1, 10, 0),
            (SocialListening, 1, 11, 0),
            (SocialListening, 2, 11, 0),
            (SocialListening, 2, 12, 0),
        ]);
        assert!((n.edge_overlap(u(1), u(2), 1) - 1.0 / 3.0).abs() < 1e-12);
        let same = net(&[(SocialListening, 1, 10, 0), (SocialListening, 2, 10, 0)]);
        assert_eq!(same.edge_overlap(u(1), u(2), 1), 1.0);
        let disjoint = net(&[(SocialListening, 1, 10, 0), (SocialListening, 2, 11, 0)]);
        assert_eq!(disjoint.edge_overlap(u(1), u(2), 1), 0.0);
        assert_eq!(disjoint.edge_overlap(u(1), u(2), 0), 0.0);
    }

    #[test]
    fn degrees_are_row_and_column_sums() {
        let n = net(&[
            (LinkShare, 1, 2, 1),
            (LinkShare, 1, 3, 2),
            (LinkShare, 3, 2, 3),
            (SocialListening, 2, 4, 4),
        ]);
        assert_eq!(n.out_degree(LinkShare, u(1), 10), 2);
        assert_eq!(n.in_degree(LinkShare, u(2), 10), 2);
        assert_eq!(n.in_degree(LinkShare, u(2), 3), 1);
        assert_eq!(n.out_degree(SocialListening, u(4), 10), 1);
    }
}
