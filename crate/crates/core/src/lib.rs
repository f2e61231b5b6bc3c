//! Sensitivity analysis of antitrust market definitions.
//!
//! Candidate markets are indexed by *exclusion sets*: subsets of a marginal
//! set of firms (or store formats) dropped from the broadest market. The
//! crate evaluates outcome metrics over the whole subset lattice, builds
//! annotated Hasse diagrams, and attributes outcome changes to individual
//! marginal members with Shapley values and Shapley-Shubik power indices.
//!
//! - [`lattice`]: exclusion sets, subset enumeration, annotated Hasse diagrams.
//! - [`metrics`]: shares, HHI, merger deltas, diversion, UPP, CMCR, presumption rule.
//! - [`shapley`]: coalitional games, exact and sampled Shapley values, SSPI.
//! - [`geomarket`]: stores, circle markets, batch local-market analysis.

pub mod error;
pub mod geomarket;
pub mod lattice;
pub mod metrics;
pub mod shapley;

pub use error::{Error, Result};
