//! Fleet-level probabilistic forecasts from site-level quantile forecasts.
//!
//! Site marginals are coupled with a Gaussian copula fitted on PIT normal
//! scores, sampled by Monte Carlo into a fleet distribution, and the
//! resulting intervals are calibrated with CQR or context-weighted conformal
//! prediction (CACP). [`backtest`] runs the rolling day-ahead evaluation and
//! [`synth`] generates fleets with known ground truth.

pub mod backtest;
pub mod conformal;
pub mod context;
pub mod copula;
pub mod dataio;
pub mod error;
pub mod manifest;
pub mod marginal;
pub mod metrics;
pub mod normal;
pub mod synth;
pub mod timefmt;

pub use error::{Error, Result};
pub use marginal::{ObservationSeries, QuantileCurve};
