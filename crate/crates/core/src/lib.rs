//! Auditing recommender systems for bias toward or against local music.
//!
//! The crate ingests listening logs and per-artist country labels, trains an
//! item-based nearest-neighbour recommender and a neural matrix factorization
//! model, and measures how the share of local tracks in recommendation lists
//! deviates from the share users actually listen to.
//!
//! Module map:
//!
//! - [`corpus`]: event and label ingestion, country filters, user splits and
//!   binarized interaction matrices.
//! - [`locality`]: label resolution, per-user local proportions, coverage
//!   reports and histograms.
//! - [`itemknn`] and [`neumf`]: the two recommenders.
//! - [`eval`]: masked-user hold-out and MRR@10.
//! - [`bias`]: the local-music bias, K sweeps and seed aggregation.
//! - [`synth`]: synthetic corpora with known ground truth.
//! - [`config`], [`runner`] and [`plot`]: the batch experiment driver.

pub mod bias;
pub mod config;
pub mod corpus;
mod error;
pub mod eval;
pub mod itemknn;
pub mod locality;
pub mod neumf;
pub mod plot;
pub mod runner;
pub mod synth;

pub use corpus::{Country, Dataset, InteractionMatrix, ListeningEvent};
pub use error::{Error, ErrorKind, Result};
pub use locality::{LabelSource, LabelTable, UnlabeledPolicy};
