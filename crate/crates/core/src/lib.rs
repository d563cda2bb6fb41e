//! Weekly hospitalization forecasting and forecast evaluation.
//!
//! The crate is organised the way data flows through an evaluation:
//!
//! * [`panel`] ingests CSV snapshots into a weekly county panel, applies
//!   state-level fallback, assigns intensity tertiles and ranks indicators.
//! * [`models`] holds the classical one-step forecasters (Lag-1, AR(1),
//!   Holt, ARX, linear regression) and the small least-squares solver they share.
//! * [`context`] renders prompts, talks to a text-completion backend, and
//!   parses labeled numeric answers.
//! * [`hybrid`] chains a context forecaster into ARX / linear regression.
//! * [`evaluate`] runs the rolling-origin harness and computes MAPE, MPE
//!   and lead-lag alignment, aggregated across counties.

pub mod context;
pub mod evaluate;
pub mod hybrid;
pub mod models;
pub mod panel;
pub mod stats;
