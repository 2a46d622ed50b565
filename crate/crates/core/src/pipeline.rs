//! Config-driven commands over a run directory.
//!
//! Every command reads its inputs from the run directory (or from external
//! paths given in `[inputs]`), writes its outputs under the run directory and
//! records a manifest in `manifests/<command>.json` with the resolved config,
//! the config hashes, the master seed and the SHA-256 of every file it read
//! or wrote. Outputs carry no wall-clock data, so reruns with the same config
//! and seed are byte-identical.
//!
//! Each command also stores a stage hash covering the config sections it and
//! its upstream stages depend on. A command refuses to consume artifacts
//! whose producer's stage hash differs from the current config's.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use rand::seq::index;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::embeddings::{train_track_embeddings, EmbeddingConfig, EmbeddingSpace, PlaylistCorpus};
use crate::engagement::{engagement_score, PlaybackLog, RECEIVER_WINDOW_DAYS};
use crate::features::{
    build_dataset, column_names, examples_to_dataset, feature_groups, hygiene_audit, read_examples_csv,
    taste_vectors, write_examples_csv, write_schema, AccountLog, FeatureConfig, HygieneReport,
    FeatureContext, LabeledExample, COLUMNS,
};
use crate::graph::{LayerKind, MultiplexNetwork};
use crate::io::{read_json, sha256_bytes, sha256_file, write_json};
use crate::model::{
    cross_validate, derive_seed, feature_set_isolation, fit_forest, mdi_importance,
    random_search_cv, EvalReport, ForestModel, Hyperparams, SearchSpace, SearchTrial,
};
use crate::shares::{
    filter_discovery_shares, read_shares, write_shares, AppMode, AppModeTable, PopularityBins,
    SamplingConfig, ShareEvent, ShareKey,
};
use crate::stats::{
    binned_probability_curve, binned_probability_curves_by, ecdf, ks_two_sample, permutation_baseline,
    wilson_interval, BinnedCurve, CurveBins, CurveConfig, Z_95,
};
use crate::synth::{self, SynthConfig};
use crate::{day_of, Error, Result, UserId};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Command {
    Generate,
    Ingest,
    Embed,
    Features,
    Analyze,
    Train,
    Isolate,
    Report,
}

impl Command {
    pub const ALL: [Command; 8] = [
        Command::Generate,
        Command::Ingest,
        Command::Embed,
        Command::Features,
        Command::Analyze,
        Command::Train,
        Command::Isolate,
        Command::Report,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Command::Generate => "generate",
            Command::Ingest => "ingest",
            Command::Embed => "embed",
            Command::Features => "features",
            Command::Analyze => "analyze",
            Command::Train => "train",
            Command::Isolate => "isolate",
            Command::Report => "report",
        }
    }
}

impl fmt::Display for Command {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Command {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Command::ALL
            .into_iter()
            .find(|c| c.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown command `{s}`")))
    }
}

/// Figure-data outputs of `analyze`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Analysis {
    Fig2a,
    Fig2b,
    Fig3,
    Fig4,
    Fig5,
    Fig6,
    Fig7,
    Fig8,
}

impl Analysis {
    pub const ALL: [Analysis; 8] = [
        Analysis::Fig2a,
        Analysis::Fig2b,
        Analysis::Fig3,
        Analysis::Fig4,
        Analysis::Fig5,
        Analysis::Fig6,
        Analysis::Fig7,
        Analysis::Fig8,
    ];

    pub fn file_stem(self) -> &'static str {
        match self {
            Analysis::Fig2a => "fig2a",
            Analysis::Fig2b => "fig2b",
            Analysis::Fig3 => "fig3",
            Analysis::Fig4 => "fig4",
            Analysis::Fig5 => "fig5",
            Analysis::Fig6 => "fig6",
            Analysis::Fig7 => "fig7",
            Analysis::Fig8 => "fig8",
        }
    }
}

/// External input files. Unset entries fall back to the files written by
/// `generate` under `<out_dir>/data/`.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InputPaths {
    pub interactions: Option<PathBuf>,
    pub playback: Option<PathBuf>,
    pub shares: Option<PathBuf>,
    pub accounts: Option<PathBuf>,
    pub playlists: Option<PathBuf>,
}

impl InputPaths {
    fn entries(&self) -> [(&'static str, &Option<PathBuf>); 5] {
        [
            ("interactions", &self.interactions),
            ("playback", &self.playback),
            ("shares", &self.shares),
            ("accounts", &self.accounts),
            ("playlists", &self.playlists),
        ]
    }

    fn any_generated(&self, names: &[&str]) -> bool {
        self.entries()
            .iter()
            .any(|(n, p)| names.contains(n) && p.is_none())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AuditConfig {
    /// Events re-extracted from time-cut stores by `features`; 0 disables.
    pub events: usize,
    pub seed: u64,
}

impl Default for AuditConfig {
    fn default() -> Self {
        Self { events: 1_000, seed: 0 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StatsConfig {
    /// Quantile bins for continuous features.
    pub curve_bins: usize,
    pub min_count: u64,
    pub histogram_bins: usize,
    /// Largest integer with its own bin in count-valued curves.
    pub count_cap: usize,
    pub seed: u64,
}

impl Default for StatsConfig {
    fn default() -> Self {
        Self {
            curve_bins: 10,
            min_count: 30,
            histogram_bins: 40,
            count_cap: 15,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub hyperparams: Hyperparams,
    pub folds: usize,
    /// Random-search draws; 0 cross-validates `hyperparams` only.
    pub search_fits: usize,
    pub search_space: SearchSpace,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            hyperparams: Hyperparams {
                n_estimators: 100,
                max_depth: 30,
                min_samples_leaf: 20,
                ..Default::default()
            },
            folds: 5,
            search_fits: 0,
            search_space: SearchSpace::default(),
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Master seed. Module seeds are derived from it and override any seed
    /// set in a section.
    pub seed: u64,
    pub out_dir: PathBuf,
    pub inputs: InputPaths,
    pub synth: SynthConfig,
    pub sampling: SamplingConfig,
    pub embedding: EmbeddingConfig,
    pub features: FeatureConfig,
    pub audit: AuditConfig,
    pub stats: StatsConfig,
    pub model: ModelConfig,
    pub analyses: Vec<Analysis>,
}

impl Default for RunConfig {
    fn default() -> Self {
        let synth = SynthConfig {
            n_share_events: 100_000,
            ..Default::default()
        };
        Self {
            seed: 42,
            out_dir: PathBuf::from("run"),
            inputs: InputPaths::default(),
            features: FeatureConfig {
                analysis_start_day: synth.analysis_start_day,
                ..Default::default()
            },
            synth,
            sampling: SamplingConfig::default(),
            embedding: EmbeddingConfig::default(),
            audit: AuditConfig::default(),
            stats: StatsConfig::default(),
            model: ModelConfig::default(),
            analyses: Analysis::ALL.to_vec(),
        }
    }
}

const SEED_SYNTH: usize = 1;
const SEED_EMBEDDING: usize = 2;
const SEED_SAMPLING: usize = 3;
const SEED_STATS: usize = 4;
const SEED_AUDIT: usize = 5;
const SEED_FOREST: usize = 6;
const SEED_FOLDS: usize = 7;

impl RunConfig {
    pub fn from_toml_str(s: &str) -> Result<Self> {
        toml::from_str(s).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    /// Copy with every module seed derived from the master seed. The
    /// generator trains its embeddings with the run's embedding config so
    /// planted and extracted features agree.
    pub fn resolved(&self) -> Self {
        let mut c = self.clone();
        c.synth.seed = derive_seed(c.seed, SEED_SYNTH);
        c.embedding.seed = derive_seed(c.seed, SEED_EMBEDDING);
        c.synth.embedding = c.embedding.clone();
        c.sampling.seed = derive_seed(c.seed, SEED_SAMPLING);
        c.stats.seed = derive_seed(c.seed, SEED_STATS);
        c.audit.seed = derive_seed(c.seed, SEED_AUDIT);
        c.model.hyperparams.seed = derive_seed(c.seed, SEED_FOREST);
        c.model.seed = derive_seed(c.seed, SEED_FOLDS);
        c
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        self.synth.validate()?;
        self.model.hyperparams.validate()?;
        if self.model.search_fits > 0 {
            self.model.search_space.validate()?;
        }
        if self.model.folds < 2 {
            return bad("model.folds must be >= 2".into());
        }
        if self.embedding.dim < 2 || self.embedding.window == 0 || self.embedding.epochs == 0 {
            return bad("embedding needs dim >= 2, window >= 1 and epochs >= 1".into());
        }
        if self.embedding.workers == 0 {
            return bad("embedding.workers must be >= 1".into());
        }
        if self.features.taste_window_days < 1 {
            return bad("features.taste_window_days must be >= 1".into());
        }
        if self.stats.curve_bins == 0 || self.stats.histogram_bins == 0 || self.stats.count_cap == 0 {
            return bad("stats.curve_bins, histogram_bins and count_cap must be >= 1".into());
        }
        if self.sampling.cap_per_bin == 0 {
            return bad("sampling.cap_per_bin must be >= 1".into());
        }
        for (name, p) in self.inputs.entries() {
            if let Some(p) = p {
                if !p.is_file() {
                    return bad(format!("inputs.{name}: {} does not exist", p.display()));
                }
            }
        }
        let generated = self
            .inputs
            .any_generated(&["interactions", "playback", "shares", "accounts"]);
        if generated && self.synth.analysis_start_day != self.features.analysis_start_day {
            return bad(format!(
                "synth.analysis_start_day ({}) differs from features.analysis_start_day ({})",
                self.synth.analysis_start_day, self.features.analysis_start_day
            ));
        }
        Ok(())
    }

    /// SHA-256 of the canonical JSON form of the config.
    pub fn config_hash(&self) -> String {
        sha256_bytes(&serde_json::to_vec(self).expect("config serialises"))
    }

    /// Hash of the config sections `cmd` and its upstream stages read.
    pub fn stage_hash(&self, cmd: Command) -> String {
        let mut sections = BTreeSet::new();
        self.collect_sections(cmd, &mut sections);
        let full = serde_json::to_value(self).expect("config serialises");
        let mut picked = serde_json::Map::new();
        picked.insert("seed".into(), full["seed"].clone());
        for s in sections {
            picked.insert(s.into(), full[s].clone());
        }
        sha256_bytes(Value::Object(picked).to_string().as_bytes())
    }

    fn collect_sections(&self, cmd: Command, out: &mut BTreeSet<&'static str>) {
        let own: &[&'static str] = match cmd {
            Command::Generate => &["synth"],
            Command::Ingest => &["inputs", "sampling"],
            Command::Embed => &["inputs", "embedding"],
            Command::Features => &["features", "audit"],
            Command::Analyze => &["stats", "analyses"],
            Command::Train | Command::Isolate | Command::Report => &["model"],
        };
        out.extend(own);
        for up in self.upstream(cmd) {
            self.collect_sections(up, out);
        }
    }

    /// Commands whose artifacts `cmd` reads.
    pub fn upstream(&self, cmd: Command) -> Vec<Command> {
        let gen = |names: &[&str]| self.inputs.any_generated(names);
        let mut up = match cmd {
            Command::Generate => vec![],
            Command::Ingest => vec![],
            Command::Embed => vec![],
            Command::Features => vec![Command::Ingest, Command::Embed],
            Command::Analyze => vec![Command::Features, Command::Ingest, Command::Embed],
            Command::Train => vec![Command::Features],
            Command::Isolate | Command::Report => vec![Command::Train, Command::Features],
        };
        let needs_generated = match cmd {
            Command::Ingest => gen(&["interactions", "playback", "shares"]),
            Command::Embed => gen(&["playlists"]),
            Command::Features => gen(&["playback", "accounts"]),
            Command::Analyze => gen(&["playback"]),
            _ => false,
        };
        if needs_generated {
            up.push(Command::Generate);
        }
        up
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub command: String,
    pub seed: u64,
    pub config_hash: String,
    pub stage_hash: String,
    /// The resolved config, every default included.
    pub config: RunConfig,
    pub inputs: BTreeMap<String, String>,
    pub outputs: BTreeMap<String, String>,
}

/// Run-directory layout.
pub mod layout {
    pub const INTERACTIONS: &str = "data/interactions.jsonl";
    pub const PLAYBACK: &str = "data/playback.jsonl";
    pub const SHARES: &str = "data/shares.jsonl";
    pub const ACCOUNTS: &str = "data/accounts.jsonl";
    pub const PLAYLISTS: &str = "data/playlists.jsonl";
    pub const GROUND_TRUTH: &str = "data/ground_truth.json";
    pub const NETWORK: &str = "ingest/network.jsonl";
    pub const DISCOVERY: &str = "ingest/discovery.jsonl";
    pub const INGEST_SUMMARY: &str = "ingest/summary.json";
    pub const EMBEDDINGS: &str = "embed/tracks.emb";
    pub const DATASET: &str = "features/dataset.csv";
    pub const SCHEMA: &str = "features/schema.json";
    pub const EXTRACTION: &str = "features/extraction.json";
    pub const HYGIENE: &str = "features/hygiene.json";
    pub const FOREST: &str = "model/forest.json";
    pub const CV: &str = "model/cv.json";
    pub const ISOLATION: &str = "model/isolation.json";
    pub const TABLE2: &str = "figures/table2.csv";
    pub const FIG3_KS: &str = "figures/fig3_ks.csv";
    pub const FIG9: &str = "figures/fig9.csv";
    pub const SUMMARY: &str = "report/summary.json";
    pub const MANIFESTS: &str = "manifests";
}

struct Stage<'a> {
    cfg: &'a RunConfig,
    cmd: Command,
    dir: PathBuf,
    inputs: BTreeMap<String, String>,
    outputs: Vec<PathBuf>,
}

impl<'a> Stage<'a> {
    fn new(cfg: &'a RunConfig, cmd: Command) -> Result<Self> {
        let dir = cfg.out_dir.clone();
        for up in cfg.upstream(cmd) {
            let path = dir.join(layout::MANIFESTS).join(format!("{up}.json"));
            if !path.is_file() {
                return Err(Error::Data(format!(
                    "`{cmd}` needs the output of `{up}`; run `{up}` first ({} is missing)",
                    path.display()
                )));
            }
            let m: Manifest = read_json(&path)?;
            if m.seed != cfg.seed || m.stage_hash != cfg.stage_hash(up) {
                return Err(Error::Config(format!(
                    "`{up}` artifacts in {} were produced with a different seed or configuration; rerun `{up}`",
                    dir.display()
                )));
            }
        }
        Ok(Self {
            cfg,
            cmd,
            dir,
            inputs: BTreeMap::new(),
            outputs: Vec::new(),
        })
    }

    fn label(&self, p: &Path) -> String {
        p.strip_prefix(&self.dir).unwrap_or(p).to_string_lossy().into_owned()
    }

    /// Registers an input and returns its path, failing early if missing.
    fn input(&mut self, p: PathBuf) -> Result<PathBuf> {
        if !p.is_file() {
            return Err(Error::Data(format!("missing input {}", p.display())));
        }
        self.inputs.insert(self.label(&p), sha256_file(&p)?);
        Ok(p)
    }

    fn run_input(&mut self, rel: &str) -> Result<PathBuf> {
        self.input(self.dir.join(rel))
    }

    fn external(&mut self, name: &str) -> Result<PathBuf> {
        let ext = self
            .cfg
            .inputs
            .entries()
            .into_iter()
            .find(|(n, _)| *n == name)
            .and_then(|(_, p)| p.clone());
        let p = ext.unwrap_or_else(|| self.dir.join("data").join(format!("{name}.jsonl")));
        self.input(p)
    }

    /// Creates the parent directory and returns the output path.
    fn output(&mut self, rel: &str) -> Result<PathBuf> {
        let p = self.dir.join(rel);
        if let Some(parent) = p.parent() {
            fs::create_dir_all(parent)?;
        }
        self.outputs.push(p.clone());
        Ok(p)
    }

    fn finish(self) -> Result<Manifest> {
        let mut outputs = BTreeMap::new();
        for p in &self.outputs {
            outputs.insert(self.label(p), sha256_file(p)?);
        }
        let m = Manifest {
            command: self.cmd.name().into(),
            seed: self.cfg.seed,
            config_hash: self.cfg.config_hash(),
            stage_hash: self.cfg.stage_hash(self.cmd),
            config: self.cfg.clone(),
            inputs: self.inputs,
            outputs,
        };
        let dir = self.dir.join(layout::MANIFESTS);
        fs::create_dir_all(&dir)?;
        write_json(dir.join(format!("{}.json", self.cmd)), &m)?;
        Ok(m)
    }
}

/// Runs one command. `cfg` is resolved and validated first.
pub fn run(cmd: Command, cfg: &RunConfig) -> Result<Manifest> {
    let cfg = cfg.resolved();
    cfg.validate()?;
    let started = Instant::now();
    let mut stage = Stage::new(&cfg, cmd)?;
    match cmd {
        Command::Generate => generate(&mut stage)?,
        Command::Ingest => ingest(&mut stage)?,
        Command::Embed => embed(&mut stage)?,
        Command::Features => features(&mut stage)?,
        Command::Analyze => analyze(&mut stage)?,
        Command::Train => train(&mut stage)?,
        Command::Isolate => isolate(&mut stage)?,
        Command::Report => report(&mut stage)?,
    }
    let m = stage.finish()?;
    log::info!("{cmd} finished in {:.1?}", started.elapsed());
    Ok(m)
}

/// Runs `commands` in order.
pub fn run_all(commands: &[Command], cfg: &RunConfig) -> Result<Vec<Manifest>> {
    commands.iter().map(|&c| run(c, cfg)).collect()
}

fn generate(st: &mut Stage<'_>) -> Result<()> {
    let syn = synth::generate(&st.cfg.synth)?;
    log::info!(
        "generated {} users, {} interactions, {} shares, {} plays",
        syn.world.users.len(),
        syn.network.events().len(),
        syn.shares.len(),
        syn.playback.len()
    );
    syn.network.write_snapshot(st.output(layout::INTERACTIONS)?)?;
    syn.playback.write_jsonl(st.output(layout::PLAYBACK)?)?;
    write_shares(st.output(layout::SHARES)?, &syn.shares)?;
    syn.accounts.write_jsonl(st.output(layout::ACCOUNTS)?)?;
    syn.world.playlists.write_jsonl(st.output(layout::PLAYLISTS)?)?;
    write_json(st.output(layout::GROUND_TRUTH)?, &syn.truth)?;
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IngestSummary {
    pub interactions: usize,
    pub users: usize,
    pub playback_records: usize,
    pub shares: usize,
    pub opened: usize,
    pub played_30s: usize,
    pub discovery: usize,
    pub sampled: usize,
    pub popularity_edges: Vec<u32>,
    pub by_mode: BTreeMap<String, usize>,
}

fn mode_name(m: AppMode) -> &'static str {
    match m {
        AppMode::Direct => "direct",
        AppMode::Broadcast => "broadcast",
        AppMode::Unknown => "unknown",
    }
}

fn ingest(st: &mut Stage<'_>) -> Result<()> {
    let network = MultiplexNetwork::read_jsonl(st.external("interactions")?)?;
    let shares = read_shares(st.external("shares")?)?;
    let playback = PlaybackLog::read_jsonl(st.external("playback")?)?;
    let discovery = filter_discovery_shares(&shares, &playback);
    let sampling = &st.cfg.sampling;
    let bins = sampling.resolve_bins(&discovery)?;
    let sampled = crate::shares::stratified_sample_by_artist(&discovery, &bins, sampling.cap_per_bin, sampling.seed);
    let modes = AppModeTable::new();
    let mut by_mode = BTreeMap::new();
    for ev in &shares {
        *by_mode.entry(mode_name(modes.classify(&ev.app_type)).to_string()).or_insert(0) += 1;
    }
    let summary = IngestSummary {
        interactions: network.events().len(),
        users: network.users().len(),
        playback_records: playback.len(),
        shares: shares.len(),
        opened: shares.iter().filter(|e| e.open_ts.is_some()).count(),
        played_30s: shares.iter().filter(|e| e.playback_30s).count(),
        discovery: discovery.len(),
        sampled: sampled.len(),
        popularity_edges: bins.edges().to_vec(),
        by_mode,
    };
    log::info!("ingest: {} shares, {} discovery, {} sampled", summary.shares, summary.discovery, summary.sampled);
    network.write_snapshot(st.output(layout::NETWORK)?)?;
    write_shares(st.output(layout::DISCOVERY)?, &sampled)?;
    write_json(st.output(layout::INGEST_SUMMARY)?, &summary)?;
    Ok(())
}

fn embed(st: &mut Stage<'_>) -> Result<()> {
    let corpus = PlaylistCorpus::read_jsonl(st.external("playlists")?)?;
    let space = train_track_embeddings(&corpus, &st.cfg.embedding)?;
    log::info!("embed: {} tracks, dim {}", space.len(), space.dim());
    space.write_text(st.output(layout::EMBEDDINGS)?)?;
    Ok(())
}

struct Stores {
    network: MultiplexNetwork,
    playback: PlaybackLog,
    space: EmbeddingSpace,
    discovery: Vec<ShareEvent>,
}

fn load_stores(st: &mut Stage<'_>) -> Result<Stores> {
    Ok(Stores {
        network: MultiplexNetwork::read_jsonl(st.run_input(layout::NETWORK)?)?,
        playback: PlaybackLog::read_jsonl(st.external("playback")?)?,
        space: EmbeddingSpace::read_text(st.run_input(layout::EMBEDDINGS)?)?,
        discovery: read_shares(st.run_input(layout::DISCOVERY)?)?,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AuditSample {
    pub requested: usize,
    pub report: HygieneReport,
}

fn features(st: &mut Stage<'_>) -> Result<()> {
    let stores = load_stores(st)?;
    let accounts = AccountLog::read_jsonl(st.external("accounts")?)?;
    let modes = AppModeTable::new();
    let t = Instant::now();
    let ctx = FeatureContext::new(
        &stores.network,
        &stores.space,
        &stores.playback,
        &accounts,
        &modes,
        st.cfg.features,
    );
    let (examples, report) = build_dataset(&ctx, &stores.discovery)?;
    let secs = t.elapsed().as_secs_f64();
    log::info!(
        "features: {} examples from {} events in {secs:.2}s ({:.0} events/s), positive rate {:.3}",
        report.examples,
        report.input_events,
        report.input_events as f64 / secs.max(1e-9),
        report.positive_rate
    );
    write_examples_csv(st.output(layout::DATASET)?, &examples)?;
    write_schema(st.output(layout::SCHEMA)?)?;
    write_json(st.output(layout::EXTRACTION)?, &report)?;

    let audit = &st.cfg.audit;
    let n = audit.events.min(stores.discovery.len());
    let mut picks = index::sample(&mut ChaCha8Rng::seed_from_u64(audit.seed), stores.discovery.len(), n).into_vec();
    picks.sort_unstable();
    let sample: Vec<ShareEvent> = picks.iter().map(|&i| stores.discovery[i].clone()).collect();
    let hygiene = hygiene_audit(&ctx, &sample)?;
    write_json(
        st.output(layout::HYGIENE)?,
        &AuditSample {
            requested: audit.events,
            report: hygiene.clone(),
        },
    )?;
    if !hygiene.mismatches.is_empty() {
        return Err(Error::Data(format!(
            "{} of {} audited events changed when stores were cut at share time",
            hygiene.mismatches.len(),
            hygiene.audited
        )));
    }
    Ok(())
}

/// One row of a binned or categorical engagement-probability table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurveRow {
    pub panel: String,
    pub stratum: String,
    pub lo: Option<f64>,
    pub hi: Option<f64>,
    pub count: u64,
    pub engaged: u64,
    pub p_hat: Option<f64>,
    pub ci_low: Option<f64>,
    pub ci_high: Option<f64>,
    pub masked: bool,
}

fn curve_rows(panel: &str, stratum: &str, c: &BinnedCurve) -> Vec<CurveRow> {
    c.bins
        .iter()
        .map(|b| CurveRow {
            panel: panel.into(),
            stratum: stratum.into(),
            lo: Some(b.lo),
            hi: Some(b.hi),
            count: b.count,
            engaged: b.engaged,
            p_hat: if b.masked { None } else { b.p_hat },
            ci_low: if b.masked { None } else { b.ci_low },
            ci_high: if b.masked { None } else { b.ci_high },
            masked: b.masked,
        })
        .collect()
}

fn categorical_rows(panel: &str, items: &[(String, bool)], min_count: u64) -> Vec<CurveRow> {
    let mut groups: BTreeMap<&str, (u64, u64)> = BTreeMap::new();
    for (k, y) in items {
        let g = groups.entry(k.as_str()).or_default();
        g.0 += 1;
        g.1 += u64::from(*y);
    }
    groups
        .into_iter()
        .map(|(k, (n, e))| {
            let masked = n < min_count || n == 0;
            let (lo, hi) = wilson_interval(e, n, Z_95);
            CurveRow {
                panel: panel.into(),
                stratum: k.into(),
                lo: None,
                hi: None,
                count: n,
                engaged: e,
                p_hat: (!masked).then(|| e as f64 / n as f64),
                ci_low: (!masked).then_some(lo),
                ci_high: (!masked).then_some(hi),
                masked,
            }
        })
        .collect()
}

fn write_rows<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

/// Unit-width edges `0, 1, ..., cap + 1`; larger values land in the last bin.
pub fn count_edges(cap: usize) -> CurveBins {
    CurveBins::Edges((0..=cap + 1).map(|k| k as f64).collect())
}

struct AnalysisInput<'a> {
    cfg: &'a RunConfig,
    stores: &'a Stores,
    examples: &'a [LabeledExample],
    events: BTreeMap<ShareKey, &'a ShareEvent>,
}

impl AnalysisInput<'_> {
    fn curve(&self, bins: CurveBins) -> CurveConfig {
        CurveConfig {
            bins,
            min_count: self.cfg.stats.min_count,
        }
    }

    fn quantile(&self) -> CurveConfig {
        self.curve(CurveBins::Quantile(self.cfg.stats.curve_bins))
    }

    fn event(&self, k: &ShareKey) -> Result<&ShareEvent> {
        self.events
            .get(k)
            .copied()
            .ok_or_else(|| Error::Data(format!("dataset row {k:?} has no matching share event")))
    }
}

fn analyze(st: &mut Stage<'_>) -> Result<()> {
    let stores = load_stores(st)?;
    let examples = read_examples_csv(st.run_input(layout::DATASET)?)?;
    if examples.is_empty() {
        return Err(Error::Data("dataset is empty".into()));
    }
    let input = AnalysisInput {
        cfg: st.cfg,
        stores: &stores,
        examples: &examples,
        events: stores.discovery.iter().map(|e| (e.key(), e)).collect(),
    };
    let mut selected = st.cfg.analyses.clone();
    selected.sort_unstable();
    selected.dedup();
    for a in selected {
        let path = st.output(&format!("figures/{}.csv", a.file_stem()))?;
        match a {
            Analysis::Fig2a => fig2a(&path)?,
            Analysis::Fig2b => fig2b(&input, &path)?,
            Analysis::Fig3 => {
                let ks = st.output(layout::FIG3_KS)?;
                fig3(&input, &path, &ks)?
            }
            Analysis::Fig4 => fig4(&input, &path)?,
            Analysis::Fig5 => fig5(&input, &path)?,
            Analysis::Fig6 => fig6(&input, &path)?,
            Analysis::Fig7 => fig7(&input, &path)?,
            Analysis::Fig8 => fig8(&input, &path)?,
        }
    }
    Ok(())
}

#[derive(Serialize)]
struct CurveFamilyRow {
    tracks_per_day: u32,
    days: i64,
    engagement: f64,
}

/// Window engagement for `n` distinct tracks on each of `days` days.
fn fig2a(path: &Path) -> Result<()> {
    let mut rows = Vec::new();
    for n in [1u32, 2, 3, 5, 10, 20, 50] {
        for days in 1..=RECEIVER_WINDOW_DAYS {
            rows.push(CurveFamilyRow {
                tracks_per_day: n,
                days,
                engagement: days as f64 * engagement_score(n),
            });
        }
    }
    write_rows(path, &rows)
}

#[derive(Serialize)]
struct EcdfRow {
    engagement: f64,
    ecdf: f64,
}

/// ECDF of receiver engagement in the week after opening.
fn fig2b(input: &AnalysisInput<'_>, path: &Path) -> Result<()> {
    let mut e7 = Vec::with_capacity(input.examples.len());
    for ex in input.examples {
        let ev = input.event(&ex.key)?;
        let open = ev.open_ts.ok_or_else(|| Error::Data("dataset row for an unopened share".into()))?;
        e7.push(
            input
                .stores
                .playback
                .aggregate_engagement(ev.receiver, ev.artist_id, day_of(open), RECEIVER_WINDOW_DAYS)?
                .e,
        );
    }
    let rows: Vec<EcdfRow> = ecdf(&e7)?
        .steps()
        .into_iter()
        .map(|(engagement, ecdf)| EcdfRow { engagement, ecdf })
        .collect();
    write_rows(path, &rows)
}

#[derive(Serialize)]
struct HistRow {
    series: &'static str,
    lo: f64,
    hi: f64,
    count: u64,
    density: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HomophilyRow {
    pub pairs: usize,
    pub mean_observed: f64,
    pub mean_shuffled: f64,
    pub ks_d: f64,
    pub ks_p: f64,
}

/// Distinct pre-analysis link-share pairs whose users both have a taste
/// vector.
pub fn homophily_pairs(network: &MultiplexNetwork, before: i64, has: impl Fn(UserId) -> bool) -> Vec<(UserId, UserId)> {
    let set: BTreeSet<(UserId, UserId)> = network
        .events()
        .iter()
        .filter(|e| e.layer == LayerKind::LinkShare && e.timestamp < before)
        .map(|e| (e.src, e.dst))
        .filter(|&(s, r)| has(s) && has(r))
        .collect();
    set.into_iter().collect()
}

/// Observed versus shuffled-sender taste cosines.
pub fn homophily_analysis(
    network: &MultiplexNetwork,
    playback: &PlaybackLog,
    space: &EmbeddingSpace,
    features: &FeatureConfig,
    seed: u64,
) -> Result<(HomophilyRow, Vec<f64>, Vec<f64>)> {
    let users = network.users();
    let taste = taste_vectors(playback, users, space, features);
    let pairs = homophily_pairs(network, features.analysis_start(), |u| taste.contains_key(&u));
    if pairs.len() < 2 {
        return Err(Error::Data("fewer than two link-share pairs with taste vectors".into()));
    }
    let (observed, shuffled) = permutation_baseline(&pairs, &taste, seed)?;
    let ks = ks_two_sample(&observed, &shuffled)?;
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let row = HomophilyRow {
        pairs: pairs.len(),
        mean_observed: mean(&observed),
        mean_shuffled: mean(&shuffled),
        ks_d: ks.d,
        ks_p: ks.p_value,
    };
    Ok((row, observed, shuffled))
}

fn fig3(input: &AnalysisInput<'_>, path: &Path, ks_path: &Path) -> Result<()> {
    let (row, observed, shuffled) = homophily_analysis(
        &input.stores.network,
        &input.stores.playback,
        &input.stores.space,
        &input.cfg.features,
        input.cfg.stats.seed,
    )?;
    log::info!(
        "homophily: observed mean {:.3}, shuffled mean {:.3}, KS D {:.3} (p {:.2e})",
        row.mean_observed,
        row.mean_shuffled,
        row.ks_d,
        row.ks_p
    );
    let nb = input.cfg.stats.histogram_bins;
    let width = 2.0 / nb as f64;
    let mut rows = Vec::new();
    for (series, sample) in [("observed", &observed), ("shuffled", &shuffled)] {
        let mut counts = vec![0u64; nb];
        for &x in sample.iter() {
            let b = (((x + 1.0) / width).floor().max(0.0) as usize).min(nb - 1);
            counts[b] += 1;
        }
        for (b, &count) in counts.iter().enumerate() {
            rows.push(HistRow {
                series,
                lo: -1.0 + b as f64 * width,
                hi: -1.0 + (b + 1) as f64 * width,
                count,
                density: count as f64 / (sample.len() as f64 * width),
            });
        }
    }
    write_rows(path, &rows)?;
    write_rows(ks_path, &[row])
}

fn feature_curve(
    input: &AnalysisInput<'_>,
    panel: &str,
    cfg: &CurveConfig,
    value: impl Fn(&LabeledExample) -> Option<f64>,
) -> Result<Vec<CurveRow>> {
    let pairs: Vec<(f64, bool)> = input
        .examples
        .iter()
        .filter_map(|e| value(e).map(|x| (x, e.label)))
        .collect();
    if pairs.is_empty() {
        log::warn!("{panel}: no rows");
        return Ok(Vec::new());
    }
    Ok(curve_rows(panel, "all", &binned_probability_curve(&pairs, cfg)?))
}

fn stratified_curves(
    panel: &str,
    items: &[(String, f64, bool)],
    cfg: &CurveConfig,
) -> Result<Vec<CurveRow>> {
    if items.is_empty() {
        log::warn!("{panel}: no rows");
        return Ok(Vec::new());
    }
    Ok(binned_probability_curves_by(items, cfg)?
        .iter()
        .flat_map(|(k, c)| curve_rows(panel, k, c))
        .collect())
}

fn fig4(input: &AnalysisInput<'_>, path: &Path) -> Result<()> {
    let q = input.quantile();
    let mut rows = feature_curve(input, "sr_cosine", &q, |e| Some(e.features.sr_cosine))?;
    rows.extend(feature_curve(input, "rt_cosine", &q, |e| Some(e.features.rt_cosine))?);
    write_rows(path, &rows)
}

fn fig5(input: &AnalysisInput<'_>, path: &Path) -> Result<()> {
    let rows = feature_curve(input, "sender_artist_engagement_7d", &input.quantile(), |e| {
        Some(e.features.sender_artist_engagement_7d)
    })?;
    write_rows(path, &rows)
}

fn fig6(input: &AnalysisInput<'_>, path: &Path) -> Result<()> {
    let min = input.cfg.stats.min_count;
    let counts = input.curve(count_edges(input.cfg.stats.count_cap));
    let modes = AppModeTable::new();
    let mut recip = Vec::new();
    let mut mode = Vec::new();
    let mut by_recip = Vec::new();
    let mut by_mode = Vec::new();
    for ex in input.examples {
        let r = if ex.features.reciprocal_link_sharing { "reciprocal" } else { "one_way" };
        let m = mode_name(modes.classify(&input.event(&ex.key)?.app_type));
        let x = ex.features.sum_social_interactions as f64;
        recip.push((r.to_string(), ex.label));
        mode.push((m.to_string(), ex.label));
        by_recip.push((r.to_string(), x, ex.label));
        by_mode.push((m.to_string(), x, ex.label));
    }
    let mut rows = categorical_rows("reciprocity", &recip, min);
    rows.extend(stratified_curves("interactions_by_reciprocity", &by_recip, &counts)?);
    rows.extend(categorical_rows("app_mode", &mode, min));
    rows.extend(stratified_curves("interactions_by_app_mode", &by_mode, &counts)?);
    write_rows(path, &rows)
}

fn fig7(input: &AnalysisInput<'_>, path: &Path) -> Result<()> {
    let net = &input.stores.network;
    let events: Vec<ShareEvent> = input.events.values().map(|e| (*e).clone()).collect();
    let bins = PopularityBins::deciles(&events);
    let counts = input.curve(count_edges(input.cfg.stats.count_cap));
    let fractions = input.curve(CurveBins::Edges(vec![0.0, 0.2, 0.4, 0.6, 0.8, 1.0]));
    let mut n_engaged = Vec::new();
    let mut by_pop = Vec::new();
    let mut clustering = Vec::new();
    let mut overlap = Vec::new();
    for ex in input.examples {
        let ev = input.event(&ex.key)?;
        let f = ex.features.fraction_engaged_friends;
        if let Some(f) = f {
            let k = net.friend_count(ev.receiver, ev.share_ts) as f64;
            n_engaged.push(((f * k).round(), ex.label));
            let b = bins.bin_of(ev.artist_popularity_rank);
            by_pop.push((format!("popularity_bin_{b:02}"), f, ex.label));
        }
        clustering.push((net.clustering_coefficient(ev.receiver, ev.share_ts), ex.label));
        overlap.push((net.edge_overlap(ev.sender, ev.receiver, ev.share_ts), ex.label));
    }
    let mut rows = Vec::new();
    if !n_engaged.is_empty() {
        rows.extend(curve_rows("engaged_friends", "all", &binned_probability_curve(&n_engaged, &counts)?));
    }
    rows.extend(stratified_curves("fraction_engaged_by_popularity", &by_pop, &fractions)?);
    let q = input.quantile();
    rows.extend(curve_rows("receiver_clustering", "all", &binned_probability_curve(&clustering, &q)?));
    rows.extend(curve_rows("edge_overlap", "all", &binned_probability_curve(&overlap, &q)?));
    write_rows(path, &rows)
}

fn fig8(input: &AnalysisInput<'_>, path: &Path) -> Result<()> {
    let cfg = input.curve(count_edges(input.cfg.stats.count_cap));
    let rows = feature_curve(input, "sum_social_interactions", &cfg, |e| {
        Some(e.features.sum_social_interactions as f64)
    })?;
    write_rows(path, &rows)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainSummary {
    pub hyperparams: Hyperparams,
    pub folds: usize,
    pub rows: usize,
    pub positives: usize,
    pub cv: EvalReport,
    pub search: Option<Vec<SearchTrial>>,
}

fn load_dataset(st: &mut Stage<'_>) -> Result<crate::model::Dataset> {
    let examples = read_examples_csv(st.run_input(layout::DATASET)?)?;
    examples_to_dataset(&examples)
}

fn train(st: &mut Stage<'_>) -> Result<()> {
    let data = load_dataset(st)?;
    let m = &st.cfg.model;
    let (hp, cv, search) = if m.search_fits > 0 {
        let r = random_search_cv(&data, &m.search_space, m.search_fits, m.folds, m.seed)?;
        let mut hp = r.best.clone();
        hp.seed = m.hyperparams.seed;
        (hp, r.report, Some(r.trials))
    } else {
        let r = cross_validate(&data, &m.hyperparams, m.folds, m.seed)?;
        (m.hyperparams.clone(), r, None)
    };
    log::info!(
        "train: CV ROC-AUC {:.4} ± {:.4}, AP {:.4}",
        cv.mean.roc_auc,
        cv.std_err.roc_auc,
        cv.mean.average_precision
    );
    let model = fit_forest(&data, &hp)?;
    model.save(st.output(layout::FOREST)?)?;
    write_json(
        st.output(layout::CV)?,
        &TrainSummary {
            hyperparams: hp,
            folds: m.folds,
            rows: data.n_rows(),
            positives: data.positives(),
            cv,
            search,
        },
    )?;
    Ok(())
}

fn isolate(st: &mut Stage<'_>) -> Result<()> {
    let model = ForestModel::load(st.run_input(layout::FOREST)?)?;
    let data = load_dataset(st)?;
    let m = &st.cfg.model;
    let table = feature_set_isolation(&data, &feature_groups(), &model.hyperparams, m.folds, m.seed)?;
    fs::write(st.output(layout::TABLE2)?, table.to_csv())?;
    write_json(st.output(layout::ISOLATION)?, &table)?;
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MdiRow {
    pub rank: usize,
    pub feature: String,
    pub group: String,
    pub importance: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub rows: usize,
    pub positive_rate: f64,
    pub cv: EvalReport,
    pub hyperparams: Hyperparams,
    pub mdi: Vec<MdiRow>,
    pub mdi_by_group: BTreeMap<String, f64>,
}

/// Features by descending MDI; ties keep column order.
pub fn mdi_rows(importance: &[f64]) -> Vec<MdiRow> {
    let mut order: Vec<usize> = (0..importance.len()).collect();
    order.sort_by(|&a, &b| importance[b].total_cmp(&importance[a]).then(a.cmp(&b)));
    order
        .into_iter()
        .enumerate()
        .map(|(r, j)| MdiRow {
            rank: r + 1,
            feature: COLUMNS[j].0.into(),
            group: COLUMNS[j].1.to_string(),
            importance: importance[j],
        })
        .collect()
}

fn report(st: &mut Stage<'_>) -> Result<()> {
    let model = ForestModel::load(st.run_input(layout::FOREST)?)?;
    if model.feature_names != column_names() {
        return Err(Error::Data("model feature schema does not match the dataset schema".into()));
    }
    let summary: TrainSummary = read_json(st.run_input(layout::CV)?)?;
    let importance = mdi_importance(&model)?;
    let rows = mdi_rows(&importance);
    write_rows(&st.output(layout::FIG9)?, &rows)?;
    let mut by_group = BTreeMap::new();
    for r in &rows {
        *by_group.entry(r.group.clone()).or_insert(0.0) += r.importance;
    }
    write_json(
        st.output(layout::SUMMARY)?,
        &RunSummary {
            rows: summary.rows,
            positive_rate: summary.positives as f64 / summary.rows.max(1) as f64,
            cv: summary.cv,
            hyperparams: summary.hyperparams,
            mdi: rows,
            mdi_by_group: by_group,
        },
    )?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn command_names_round_trip() {
        for c in Command::ALL {
            assert_eq!(c.name().parse::<Command>().unwrap(), c);
        }
        assert!("plot".parse::<Command>().is_err());
    }

    #[test]
    fn empty_toml_gives_defaults() {
        assert_eq!(RunConfig::from_toml_str("").unwrap(), RunConfig::default());
        let c = RunConfig::from_toml_str("seed = 9\n[model]\nfolds = 3\n").unwrap();
        assert_eq!((c.seed, c.model.folds), (9, 3));
        assert!(RunConfig::from_toml_str("bogus = 1").unwrap_err().is_config());
    }

    #[test]
    fn toml_round_trip() {
        let c = RunConfig::default();
        let back = RunConfig::from_toml_str(&c.to_toml_string().unwrap()).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn seeds_follow_master() {
        let a = RunConfig::default().resolved();
        let b = RunConfig { seed: 43, ..Default::default() }.resolved();
        assert_ne!(a.synth.seed, b.synth.seed);
        assert_ne!(a.model.hyperparams.seed, b.model.hyperparams.seed);
        assert_eq!(a.synth.embedding, a.embedding);
        assert_eq!(a, a.resolved());
    }

    #[test]
    fn stage_hash_ignores_downstream_sections() {
        let a = RunConfig::default();
        let mut b = a.clone();
        b.model.folds = 3;
        assert_eq!(a.stage_hash(Command::Features), b.stage_hash(Command::Features));
        assert_ne!(a.stage_hash(Command::Train), b.stage_hash(Command::Train));
        b.synth.homophily = 0.1;
        assert_ne!(a.stage_hash(Command::Features), b.stage_hash(Command::Features));
    }

    #[test]
    fn validation_errors_are_config_errors() {
        let mut c = RunConfig::default();
        c.model.folds = 1;
        assert!(c.validate().unwrap_err().is_config());
        let mut c = RunConfig::default();
        c.inputs.shares = Some(PathBuf::from("/nonexistent/shares.jsonl"));
        assert!(c.validate().unwrap_err().is_config());
        let mut c = RunConfig::default();
        c.features.analysis_start_day += 1;
        assert!(c.validate().unwrap_err().is_config());
    }

    #[test]
    fn categorical_rows_mask_small_groups() {
        let items: Vec<(String, bool)> = (0..40)
            .map(|i| ((if i < 35 { "a" } else { "b" }).to_string(), i % 2 == 0))
            .collect();
        let rows = categorical_rows("p", &items, 30);
        assert_eq!(rows.len(), 2);
        assert!(!rows[0].masked && rows[1].masked);
        assert_eq!(rows[0].p_hat, Some(18.0 / 35.0));
        assert_eq!(rows[1].p_hat, None);
    }

    #[test]
    fn mdi_rows_sort_descending() {
        let mut imp = vec![0.0; COLUMNS.len()];
        imp[12] = 0.6;
        imp[9] = 0.3;
        imp[0] = 0.1;
        let rows = mdi_rows(&imp);
        assert_eq!(rows[0].feature, "sender_artist_engagement_7d");
        assert_eq!(rows[1].feature, "rt_cosine");
        assert_eq!(rows[2].rank, 3);
    }
}
