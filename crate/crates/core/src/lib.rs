//! Estimation pipeline for the labor-market effects of mergers and acquisitions.
//!
//! The stages mirror the flow of the data:
//!
//! 1. [`ingest`] turns raw worker-year files into canonical [`model::JobRecord`]s.
//! 2. [`events`] flags acquired/merged establishments in the business registry and
//!    recovers the counterpart firm from worker flows.
//! 3. [`markets`] computes concentration (HHI), predicted concentration changes,
//!    treatment cohorts and the balanced market-year panel.
//! 4. [`wage`] estimates the composition-adjusted market earnings index.
//! 5. [`did`] computes group-time ATTs with not-yet-treated controls and the
//!    event-study aggregation; [`inference`] adds cluster multiplier-bootstrap bands.
//!
//! [`synth`] generates synthetic data with a known ground truth for verification.

pub mod did;
pub mod error;
pub mod events;
pub mod inference;
pub mod ingest;
pub mod io;
pub mod markets;
pub mod model;
pub mod stats;
pub mod synth;
pub mod wage;

pub use error::{Error, Result};
pub use model::{Id, JobRecord, MarketKey, Split, Subpop};
