//! Gaussian-copula aggregation of site forecasts into fleet distributions.

mod fit;
mod sample;

pub use fit::{
    estimate_correlation, normal_scores, pd_repair, pit_transform, pit_value, CorrelationModel, MissingPair,
    NormalScoreMatrix, PitMatrix, MIN_EIGENVALUE, PIT_EPS,
};
pub use sample::{
    aggregate, empirical_quantile, fleet_interval, sample_mvn, stream_rng, FleetDistribution, DEFAULT_SAMPLES,
};
