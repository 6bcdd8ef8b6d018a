//! Synthetic EHR generation, validation and relational loading.
//!
//! The pipeline runs in stages: [`synth`] generates patient bundles from
//! prompt templates, the validators ([`coherence`], [`plausibility`],
//! [`consistency`], [`anomaly`], [`diversity`]) score each hospital visit,
//! [`scoring`] combines the checks into a gate, and [`load`] writes the
//! surviving rows as SQL or into a live PostgreSQL database.

pub mod anomaly;
pub mod catalog;
pub mod coherence;
pub mod config;
pub mod consistency;
pub mod diversity;
pub mod load;
pub mod pipeline;
pub mod plausibility;
pub mod record;
pub mod remote;
pub mod schema;
pub mod scoring;
pub mod scorers;
pub mod synth;
pub mod text;
pub mod value;
