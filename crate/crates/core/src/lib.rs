//! Share-network analytics for person-to-person music discovery.
//!
//! The crate is organised bottom-up:
//!
//! * [`graph`] stores timestamped interactions in three layers and answers
//!   as-of-time weight, friendship and local-structure queries.
//! * [`shares`] models link-share events, app-mode classification, the
//!   discovery filter and popularity-stratified sampling.
//! * [`embeddings`] trains track vectors with skip-gram negative sampling and
//!   derives user taste vectors.
//! * [`engagement`] implements the daily and windowed user-artist engagement
//!   score and the engaged-receiver / engaged-friend rules.
//! * [`features`] builds the 15-feature share-time vector and its label.
//! * [`stats`] has the ECDF, binned probability curves, KS and correlation
//!   tests used by the analyses.
//! * [`model`] is a random forest with CV search, MDI and the feature-set
//!   isolation test.
//! * [`synth`] generates a synthetic world with planted ground truth.
//! * [`pipeline`] wires everything into config-driven commands.

pub mod embeddings;
pub mod engagement;
mod error;
pub mod features;
pub mod graph;
mod ids;
pub mod io;
pub mod model;
pub mod pipeline;
pub mod shares;
pub mod stats;
pub mod synth;

pub use error::{Error, Result};
pub use ids::{day_of, AlbumId, ArtistId, Timestamp, TrackId, UserId, DAY_SECONDS};
