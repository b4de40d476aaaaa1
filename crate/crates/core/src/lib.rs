//! Demand outlier detection for station-based bike-sharing networks.
//!
//! The crate is organised as a sequence of stages that mirror the analysis
//! workflow:
//!
//! - [`ingest`]: parse trip records, cleanse them and aggregate them into
//!   hourly daily curves per terminal.
//! - [`baseline`]: remove known temporal structure with a pointwise functional
//!   regression, assign days to variance-homogeneous partitions, and provide
//!   the residual diagnostics (changepoints, skewness, autocorrelation).
//! - [`spatial`]: build the geographic permission graph, weight it by
//!   dynamical correlation, and cut its minimum spanning forest into clusters.
//! - [`detect`]: functional depth, bootstrap depth thresholds and cluster
//!   exceedance sums.
//! - [`severity`]: the bounded Beta severity model and the analyst reports
//!   built on top of it.
//! - [`synth`]: seeded synthetic generators used by tests and fixtures.

pub mod baseline;
pub mod curve;
pub mod detect;
pub mod ingest;
pub mod severity;
pub mod spatial;
pub mod synth;
pub mod terminal;

pub use curve::{Curve, HOURS};
pub use terminal::TerminalId;
