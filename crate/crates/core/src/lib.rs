//! Auditing of train/validation/test splits for surgical phase and
//! instrument recognition datasets.
//!
//! The pipeline is: [`ingest`] annotation files into a [`model::Dataset`],
//! pick or edit a [`splits::SplitAssignment`], tally per-set aggregates with
//! [`stats`], find unrepresented cases with [`coverage`], and optionally
//! search for a better split with [`optimizer`]. [`viewmodel`] and
//! [`session`] back the interactive explorer.

pub mod coverage;
pub mod ingest;
pub mod model;
pub mod optimizer;
pub mod session;
pub mod splits;
pub mod stats;
pub mod viewmodel;
