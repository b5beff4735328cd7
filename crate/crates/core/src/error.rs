//! Crate-wide error type.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("series must contain at least one observation")]
    EmptySeries,

    #[error("value {value} at position {position} is not 0 or 1 in a binary series")]
    NonBinaryValue { value: f64, position: usize },

    #[error("series of length {len} is too short: need at least {min}")]
    SeriesTooShort { len: usize, min: usize },

    #[error("rolling window must be at least 1")]
    ZeroWindow,

    #[error("rolling window {window} exceeds series length {len}")]
    WindowTooLarge { window: usize, len: usize },

    #[error("rate {0} is outside [0, 1]")]
    InvalidRate(f64),

    #[error(
        "sampling sd {sigma_samp} exceeds observed sd {sigma_obs}: latent variance is negative"
    )]
    NegativeLatentVariance { sigma_obs: f64, sigma_samp: f64 },

    #[error("metric does not stabilize: latent sd is zero (observed spread is pure sampling noise)")]
    UnstableMetric,

    #[error("cohort stabilization needs at least 2 players, got {0}")]
    TooFewPlayers(usize),

    #[error("player at index {0} has zero trials")]
    ZeroTrials(usize),

    #[error("alpha {0} must lie strictly inside (0, 1)")]
    InvalidAlpha(f64),

    #[error("bounds [{lo}, {hi}] do not form an interval")]
    InvalidBounds { lo: f64, hi: f64 },

    #[error("value {value} at position {position} lies outside declared bounds [{lo}, {hi}]")]
    ValueOutsideBounds {
        value: f64,
        position: usize,
        lo: f64,
        hi: f64,
    },

    #[error("min_side must be at least {min} for this likelihood")]
    MinSideTooSmall { min: usize },

    #[error("contingency table is degenerate: row margin is zero")]
    DegenerateTable,

    #[error("permutation test requires nonempty samples on both sides")]
    EmptySample,

    #[error("shift parameter {0} must be nonnegative and finite")]
    InvalidShift(f64),

    #[error("n_perm must be at least 1")]
    ZeroPermutations,

    #[error("duplicate entity id {0:?} in cohort")]
    DuplicateEntityId(String),

    #[error("{test} cannot be applied to a {kind} series")]
    IncompatibleTest {
        test: &'static str,
        kind: &'static str,
    },

    #[error("invalid detection config: {0}")]
    InvalidConfig(String),

    #[error("invalid planted spec: {0}")]
    InvalidSpec(String),

    #[error("required column {0:?} not found in header")]
    MissingColumn(String),

    #[error("no qualifying observations for entity {entity:?} ({label})")]
    EmptyDerivedSeries { entity: String, label: String },

    #[error("pitcher {0:?} has no usable pitches in the event stream")]
    MissingPitcher(String),

    #[error("empty threshold ladder")]
    EmptyLadder,

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
