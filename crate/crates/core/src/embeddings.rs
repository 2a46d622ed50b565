//! Track embeddings from playlist co-occurrence and user taste vectors.
//!
//! Playlists play the role of documents and tracks the role of words. Track
//! vectors are trained with skip-gram and negative sampling over a symmetric
//! context window in playlist order. A user's taste vector is the mean of
//! the vectors of tracks they listened to in a time window.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use rustc_hash::FxHashMap;
use serde::{Deserialize, Serialize};

use crate::engagement::PlaybackLog;
use crate::io::{read_jsonl, write_jsonl};
use crate::{Error, Result, Timestamp, TrackId, UserId};

/// Ordered track lists, one per playlist.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct PlaylistCorpus {
    playlists: Vec<Vec<TrackId>>,
}

impl PlaylistCorpus {
    pub fn new(playlists: Vec<Vec<TrackId>>) -> Result<Self> {
        if playlists.iter().any(|p| p.is_empty()) {
            return Err(Error::Data("playlists must be non-empty".into()));
        }
        Ok(Self { playlists })
    }

    pub fn playlists(&self) -> &[Vec<TrackId>] {
        &self.playlists
    }

    pub fn is_empty(&self) -> bool {
        self.playlists.is_empty()
    }

    pub fn read_jsonl(path: impl AsRef<Path>) -> Result<Self> {
        Self::new(read_jsonl(path)?)
    }

    pub fn write_jsonl(&self, path: impl AsRef<Path>) -> Result<()> {
        write_jsonl(path, &self.playlists)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EmbeddingConfig {
    pub dim: usize,
    /// Symmetric context half-width in playlist positions.
    pub window: usize,
    pub negatives: usize,
    pub epochs: usize,
    pub learning_rate: f32,
    pub seed: u64,
    /// 1 is deterministic serial SGD. More workers train shards on copies of
    /// the parameters and average them after every epoch; the result depends
    /// on the worker count.
    pub workers: usize,
}

impl Default for EmbeddingConfig {
    fn default() -> Self {
        Self {
            dim: 80,
            window: 5,
            negatives: 5,
            epochs: 5,
            learning_rate: 0.025,
            seed: 0,
            workers: 1,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainingMeta {
    pub config: EmbeddingConfig,
    pub vocab_size: usize,
    /// Number of (center, context) updates performed over all epochs.
    pub training_pairs: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingSpace {
    dim: usize,
    tracks: Vec<TrackId>,
    index: FxHashMap<TrackId, usize>,
    vectors: Vec<f32>,
    meta: TrainingMeta,
}

impl EmbeddingSpace {
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.tracks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tracks.is_empty()
    }

    pub fn tracks(&self) -> &[TrackId] {
        &self.tracks
    }

    pub fn meta(&self) -> &TrainingMeta {
        &self.meta
    }

    pub fn vector(&self, track: TrackId) -> Option<&[f32]> {
        self.index
            .get(&track)
            .map(|&i| &self.vectors[i * self.dim..(i + 1) * self.dim])
    }

    fn from_parts(tracks: Vec<TrackId>, vectors: Vec<f32>, meta: TrainingMeta) -> Result<Self> {
        let dim = meta.config.dim;
        if vectors.len() != tracks.len() * dim {
            return Err(Error::DimensionMismatch {
                expected: tracks.len() * dim,
                got: vectors.len(),
            });
        }
        if vectors.iter().any(|v| !v.is_finite()) {
            return Err(Error::Data("embedding contains non-finite values".into()));
        }
        let index = tracks.iter().enumerate().map(|(i, &t)| (t, i)).collect();
        Ok(Self {
            dim,
            tracks,
            index,
            vectors,
            meta,
        })
    }

    /// Text form: a header line, a JSON metadata line, then one
    /// `track_id v1 .. vd` row per track. Floats use the shortest
    /// representation that parses back to the same `f32`.
    pub fn write_text(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        writeln!(w, "{TEXT_MAGIC} {} {}", self.dim, self.tracks.len())?;
        writeln!(w, "{}", serde_json::to_string(&self.meta)?)?;
        for (i, t) in self.tracks.iter().enumerate() {
            write!(w, "{}", t.0)?;
            for v in &self.vectors[i * self.dim..(i + 1) * self.dim] {
                write!(w, " {v}")?;
            }
            writeln!(w)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_text(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bad = |line: usize, msg: String| Error::Parse {
            path: path.to_path_buf(),
            line,
            msg,
        };
        let mut lines = BufReader::new(File::open(path)?).lines();
        let header = lines.next().transpose()?.unwrap_or_default();
        let parts: Vec<&str> = header.split_whitespace().collect();
        if parts.len() != 3 || parts[0] != TEXT_MAGIC {
            return Err(bad(1, "missing embedding header".into()));
        }
        let dim: usize = parts[1].parse().map_err(|_| bad(1, "bad dim".into()))?;
        let n: usize = parts[2].parse().map_err(|_| bad(1, "bad vocab size".into()))?;
        let meta_line = lines.next().transpose()?.unwrap_or_default();
        let meta: TrainingMeta =
            serde_json::from_str(&meta_line).map_err(|e| bad(2, e.to_string()))?;
        if meta.config.dim != dim {
            return Err(bad(2, "metadata dim disagrees with header".into()));
        }
        let mut tracks = Vec::with_capacity(n);
        let mut vectors = Vec::with_capacity(n * dim);
        for (i, line) in lines.enumerate() {
            let line = line?;
            let mut it = line.split_whitespace();
            let id: u64 = it
                .next()
                .and_then(|s| s.parse().ok())
                .ok_or_else(|| bad(i + 3, "bad track id".into()))?;
            tracks.push(TrackId(id));
            let before = vectors.len();
            for s in it {
                vectors.push(s.parse::<f32>().map_err(|e| bad(i + 3, e.to_string()))?);
            }
            if vectors.len() - before != dim {
                return Err(bad(i + 3, format!("expected {dim} values")));
            }
        }
        if tracks.len() != n {
            return Err(bad(0, format!("expected {n} rows, found {}", tracks.len())));
        }
        Self::from_parts(tracks, vectors, meta)
    }

    /// Binary form: 8-byte magic, little-endian `u32` metadata length, the
    /// metadata JSON, then per track a `u64` id and `dim` `f32` values.
    pub fn write_binary(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        w.write_all(BINARY_MAGIC)?;
        let meta = serde_json::to_vec(&self.meta)?;
        w.write_all(&(meta.len() as u32).to_le_bytes())?;
        w.write_all(&meta)?;
        for (i, t) in self.tracks.iter().enumerate() {
            w.write_all(&t.0.to_le_bytes())?;
            for v in &self.vectors[i * self.dim..(i + 1) * self.dim] {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_binary(path: impl AsRef<Path>) -> Result<Self> {
        let mut bytes = Vec::new();
        File::open(path.as_ref())?.read_to_end(&mut bytes)?;
        let corrupt = || Error::Data("corrupt binary embedding file".into());
        if bytes.len() < 12 || &bytes[..8] != BINARY_MAGIC {
            return Err(corrupt());
        }
        let meta_len = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
        let meta_end = 12 + meta_len;
        let meta: TrainingMeta =
            serde_json::from_slice(bytes.get(12..meta_end).ok_or_else(corrupt)?)?;
        let dim = meta.config.dim;
        let row = 8 + 4 * dim;
        let body = &bytes[meta_end..];
        if body.len() % row != 0 {
            return Err(corrupt());
        }
        let mut tracks = Vec::with_capacity(body.len() / row);
        let mut vectors = Vec::with_capacity(body.len() / row * dim);
        for chunk in body.chunks_exact(row) {
            tracks.push(TrackId(u64::from_le_bytes(chunk[..8].try_into().unwrap())));
            vectors.extend(
                chunk[8..]
                    .chunks_exact(4)
                    .map(|b| f32::from_le_bytes(b.try_into().unwrap())),
            );
        }
        Self::from_parts(tracks, vectors, meta)
    }
}

const TEXT_MAGIC: &str = "tastegraph-embeddings-v1";
const BINARY_MAGIC: &[u8; 8] = b"TGEMB\x00\x01\x00";

struct Params {
    input: Vec<f32>,
    output: Vec<f32>,
}

struct Trainer<'a> {
    dim: usize,
    window: usize,
    negatives: usize,
    lr0: f32,
    total_steps: f64,
    noise_cdf: &'a [f64],
}

impl Trainer<'_> {
    fn draw_negative(&self, rng: &mut ChaCha8Rng) -> usize {
        let u: f64 = rng.random::<f64>() * self.noise_cdf[self.noise_cdf.len() - 1];
        self.noise_cdf
            .partition_point(|&c| c <= u)
            .min(self.noise_cdf.len() - 1)
    }

    /// One pass over `docs`. Returns the number of pair updates.
    fn epoch(
        &self,
        p: &mut Params,
        docs: &[Vec<usize>],
        rng: &mut ChaCha8Rng,
        step: &mut f64,
    ) -> u64 {
        let d = self.dim;
        let mut grad = vec![0f32; d];
        let mut pairs = 0u64;
        for doc in docs {
            for (pos, &center) in doc.iter().enumerate() {
                let lr = self.lr0 * (1.0 - *step / self.total_steps).max(1e-4) as f32;
                *step += 1.0;
                // Random shrink of the window, as in word2vec.
                let reach = self.window - rng.random_range(0..self.window);
                let lo = pos.saturating_sub(reach);
                let hi = (pos + reach + 1).min(doc.len());
                for (ctx_pos, &context) in doc.iter().enumerate().take(hi).skip(lo) {
                    if ctx_pos == pos {
                        continue;
                    }
                    pairs += 1;
                    grad.iter_mut().for_each(|g| *g = 0.0);
                    let inp = center * d;
                    for k in 0..=self.negatives {
                        let (target, label) = if k == 0 {
                            (context, 1.0f32)
                        } else {
                            let t = self.draw_negative(rng);
                            if t == context {
                                continue;
                            }
                            (t, 0.0)
                        };
                        let out = target * d;
                        let dot: f32 = (0..d).map(|x| p.input[inp + x] * p.output[out + x]).sum();
                        let g = (label - sigmoid(dot)) * lr;
                        for x in 0..d {
                            grad[x] += g * p.output[out + x];
                            p.output[out + x] += g * p.input[inp + x];
                        }
                    }
                    for x in 0..d {
                        p.input[inp + x] += grad[x];
                    }
                }
            }
        }
        pairs
    }
}

fn sigmoid(x: f32) -> f32 {
    if x > 8.0 {
        1.0
    } else if x < -8.0 {
        0.0
    } else {
        1.0 / (1.0 + (-x).exp())
    }
}

/// Trains skip-gram with negative sampling over playlist contexts.
pub fn train_track_embeddings(
    corpus: &PlaylistCorpus,
    config: &EmbeddingConfig,
) -> Result<EmbeddingSpace> {
    if corpus.is_empty() {
        return Err(Error::Empty("playlist corpus"));
    }
    if config.dim < 2 {
        return Err(Error::Config(format!("embedding dim must be >= 2, got {}", config.dim)));
    }
    if config.window == 0 || config.epochs == 0 || config.workers == 0 {
        return Err(Error::Config(
            "window, epochs and workers must be >= 1".into(),
        ));
    }

    let mut tracks: Vec<TrackId> = corpus.playlists.iter().flatten().copied().collect();
    tracks.sort_unstable();
    tracks.dedup();
    let index: FxHashMap<TrackId, usize> =
        tracks.iter().enumerate().map(|(i, &t)| (t, i)).collect();
    let docs: Vec<Vec<usize>> = corpus
        .playlists
        .iter()
        .map(|p| p.iter().map(|t| index[t]).collect())
        .collect();

    let mut counts = vec![0u64; tracks.len()];
    for &t in docs.iter().flatten() {
        counts[t] += 1;
    }
    let mut acc = 0.0;
    let noise_cdf: Vec<f64> = counts
        .iter()
        .map(|&c| {
            acc += (c as f64).powf(0.75);
            acc
        })
        .collect();

    let d = config.dim;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut params = Params {
        input: (0..tracks.len() * d)
            .map(|_| (rng.random::<f32>() - 0.5) / d as f32)
            .collect(),
        output: vec![0.0; tracks.len() * d],
    };

    let has_context = docs.iter().any(|doc| doc.len() > 1);
    let tokens: usize = docs.iter().map(Vec::len).sum();
    let trainer = Trainer {
        dim: d,
        window: config.window,
        negatives: config.negatives,
        lr0: config.learning_rate,
        total_steps: (tokens * config.epochs) as f64,
        noise_cdf: &noise_cdf,
    };

    let mut training_pairs = 0u64;
    if !has_context {
        log::warn!("no training pairs: every playlist has a single track; vectors stay at initialisation");
    } else if config.workers == 1 {
        let mut step = 0.0;
        for _ in 0..config.epochs {
            training_pairs += trainer.epoch(&mut params, &docs, &mut rng, &mut step);
        }
    } else {
        let shard = docs.len().div_ceil(config.workers);
        for epoch in 0..config.epochs {
            let base_step = (epoch * tokens) as f64;
            let results: Vec<(Params, u64)> = docs
                .par_chunks(shard)
                .enumerate()
                .map(|(w, chunk)| {
                    let mut local = Params {
                        input: params.input.clone(),
                        output: params.output.clone(),
                    };
                    let stream = config.seed ^ (((epoch as u64) << 32) | w as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15);
                    let mut wrng = ChaCha8Rng::seed_from_u64(stream);
                    let mut step = base_step;
                    let n = trainer.epoch(&mut local, chunk, &mut wrng, &mut step);
                    (local, n)
                })
                .collect();
            let k = results.len() as f32;
            for v in params.input.iter_mut().chain(params.output.iter_mut()) {
                *v = 0.0;
            }
            for (local, n) in &results {
                training_pairs += n;
                for (a, b) in params.input.iter_mut().zip(&local.input) {
                    *a += b / k;
                }
                for (a, b) in params.output.iter_mut().zip(&local.output) {
                    *a += b / k;
                }
            }
        }
    }

    let meta = TrainingMeta {
        config: config.clone(),
        vocab_size: tracks.len(),
        training_pairs,
    };
    EmbeddingSpace::from_parts(tracks, params.input, meta)
}

/// Taste vectors keyed by user.
pub type TasteMap = FxHashMap<UserId, Vec<f64>>;

/// Whether repeat listens weight the user mean.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TasteAveraging {
    /// Every listen event contributes once.
    #[default]
    PerListen,
    /// Each distinct track contributes once.
    DistinctTracks,
}

#[derive(Clone, Debug, PartialEq)]
pub struct UserTasteVector {
    pub user: UserId,
    pub vector: Vec<f64>,
    /// Half-open `[from, to)` time span of the averaged listens.
    pub window: (Timestamp, Timestamp),
}

/// Mean vector of the user's in-window listens of known tracks.
pub fn user_vector(
    user: UserId,
    listening: &[(TrackId, Timestamp)],
    space: &EmbeddingSpace,
    window: (Timestamp, Timestamp),
    averaging: TasteAveraging,
) -> Result<UserTasteVector> {
    let mut in_window: Vec<TrackId> = listening
        .iter()
        .filter(|(t, ts)| *ts >= window.0 && *ts < window.1 && space.index.contains_key(t))
        .map(|&(t, _)| t)
        .collect();
    if averaging == TasteAveraging::DistinctTracks {
        in_window.sort_unstable();
        in_window.dedup();
    }
    mean_of(user, &in_window, space, window)
}

/// [`user_vector`] over the user's plays in a [`PlaybackLog`].
pub fn user_vector_from_log(
    user: UserId,
    log: &PlaybackLog,
    space: &EmbeddingSpace,
    window: (Timestamp, Timestamp),
    averaging: TasteAveraging,
) -> Result<UserTasteVector> {
    let mut tracks: Vec<TrackId> = log
        .user_plays_between(user, window.0, window.1)
        .iter()
        .map(|p| p.track)
        .filter(|t| space.index.contains_key(t))
        .collect();
    if averaging == TasteAveraging::DistinctTracks {
        tracks.sort_unstable();
        tracks.dedup();
    } else {
        // Summation order must not depend on listen order.
        tracks.sort_unstable();
    }
    mean_of(user, &tracks, space, window)
}

fn mean_of(
    user: UserId,
    tracks: &[TrackId],
    space: &EmbeddingSpace,
    window: (Timestamp, Timestamp),
) -> Result<UserTasteVector> {
    if tracks.is_empty() {
        return Err(Error::ColdUser(user));
    }
    let mut sorted = tracks.to_vec();
    sorted.sort_unstable();
    let mut sum = vec![0f64; space.dim];
    for t in &sorted {
        let v = space.vector(*t).expect("filtered to known tracks");
        for (s, x) in sum.iter_mut().zip(v) {
            *s += f64::from(*x);
        }
    }
    let n = sorted.len() as f64;
    sum.iter_mut().for_each(|s| *s /= n);
    Ok(UserTasteVector {
        user,
        vector: sum,
        window,
    })
}

/// `dot(a, b) / (|a| |b|)`, clamped to `[-1, 1]`.
pub fn cosine_similarity<A, B>(a: &[A], b: &[B]) -> Result<f64>
where
    A: Copy + Into<f64>,
    B: Copy + Into<f64>,
{
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch {
            expected: a.len(),
            got: b.len(),
        });
    }
    let (mut dot, mut na, mut nb) = (0.0f64, 0.0f64, 0.0f64);
    for (&x, &y) in a.iter().zip(b) {
        let (x, y): (f64, f64) = (x.into(), y.into());
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    if na == 0.0 || nb == 0.0 {
        return Err(Error::ZeroNorm);
    }
    Ok((dot / (na.sqrt() * nb.sqrt())).clamp(-1.0, 1.0))
}
