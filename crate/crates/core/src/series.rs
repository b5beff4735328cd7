//! Ordered per-entity metric streams and basic reshaping operations.
//!
//! A [`MetricSeries`] is the unit every detector and estimator consumes: one
//! entity, one metric, observations in play order. Each observation keeps the
//! 1-based index it had in the stream it was derived from (`original_index`),
//! so downstream splits and segment slices can always report changepoint
//! locations in the coordinates of the source stream.

use serde::{Deserialize, Serialize};

use crate::error::Error;
use crate::Result;

/// Observation type of a series.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MetricKind {
    /// Values restricted to {0, 1}.
    Binary,
    /// Unrestricted real values (velocities, spin rates, ...).
    Continuous,
}

impl MetricKind {
    pub fn as_str(self) -> &'static str {
        match self {
            MetricKind::Binary => "binary",
            MetricKind::Continuous => "continuous",
        }
    }
}

/// One entity's ordered observations of a single metric.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricSeries {
    pub values: Vec<f64>,
    pub kind: MetricKind,
    /// 1-based position of each observation in the source stream.
    /// Strictly increasing; equals `1..=n` for freshly constructed series.
    pub original_index: Vec<usize>,
    pub entity_id: String,
    pub label: String,
    /// Optional per-observation date tags, parallel to `values`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub timestamp: Option<Vec<String>>,
}

impl MetricSeries {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Checks the structural invariants. Constructors and derivations call
    /// this; it is public so hand-assembled series can be validated too.
    pub fn validate(&self) -> Result<()> {
        if self.values.is_empty() {
            return Err(Error::EmptySeries);
        }
        if self.original_index.len() != self.values.len() {
            return Err(Error::InvalidConfig(format!(
                "original_index length {} does not match values length {}",
                self.original_index.len(),
                self.values.len()
            )));
        }
        if let Some(ts) = &self.timestamp {
            if ts.len() != self.values.len() {
                return Err(Error::InvalidConfig(format!(
                    "timestamp length {} does not match values length {}",
                    ts.len(),
                    self.values.len()
                )));
            }
        }
        let increasing = self
            .original_index
            .windows(2)
            .all(|w| w[0] < w[1]);
        if !increasing || self.original_index[0] == 0 {
            return Err(Error::InvalidConfig(
                "original_index must be 1-based and strictly increasing".into(),
            ));
        }
        if self.kind == MetricKind::Binary {
            for (i, &v) in self.values.iter().enumerate() {
                if v != 0.0 && v != 1.0 {
                    return Err(Error::NonBinaryValue {
                        value: v,
                        position: i + 1,
                    });
                }
            }
        }
        Ok(())
    }
}

/// Odd/even interleave of a parent series, used by split-sample inference.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitPair {
    /// Observations at parent positions 1, 3, 5, ... (1-based).
    pub odd: MetricSeries,
    /// Observations at parent positions 2, 4, 6, ...
    pub even: MetricSeries,
}

/// Builds a series from raw values, assigning `original_index = 1..=n`.
pub fn new_metric_series(
    values: Vec<f64>,
    kind: MetricKind,
    entity_id: impl Into<String>,
    label: impl Into<String>,
) -> Result<MetricSeries> {
    let series = MetricSeries {
        original_index: (1..=values.len()).collect(),
        values,
        kind,
        entity_id: entity_id.into(),
        label: label.into(),
        timestamp: None,
    };
    series.validate()?;
    Ok(series)
}

/// Splits a series into its odd- and even-position halves (1-based positions
/// within `s`), preserving `original_index` from the parent.
pub fn split_odd_even(s: &MetricSeries) -> Result<SplitPair> {
    if s.len() < 2 {
        return Err(Error::SeriesTooShort {
            len: s.len(),
            min: 2,
        });
    }
    let take = |parity: usize| -> MetricSeries {
        let pick = |n: usize| (parity..n).step_by(2);
        MetricSeries {
            values: pick(s.values.len()).map(|i| s.values[i]).collect(),
            kind: s.kind,
            original_index: pick(s.original_index.len())
                .map(|i| s.original_index[i])
                .collect(),
            entity_id: s.entity_id.clone(),
            label: s.label.clone(),
            timestamp: s
                .timestamp
                .as_ref()
                .map(|ts| pick(ts.len()).map(|i| ts[i].clone()).collect()),
        }
    };
    Ok(SplitPair {
        odd: take(0),
        even: take(1),
    })
}

/// Rolling mean with a fully contained window: output k covers positions
/// `k..k+window-1`, so the result has length `n - window + 1`.
pub fn rolling_mean(s: &MetricSeries, window: usize) -> Result<Vec<f64>> {
    if window == 0 {
        return Err(Error::ZeroWindow);
    }
    let n = s.len();
    if window > n {
        return Err(Error::WindowTooLarge { window, len: n });
    }
    let w = window as f64;
    let mut out = Vec::with_capacity(n - window + 1);
    let mut acc: f64 = s.values[..window].iter().sum();
    out.push(acc / w);
    for k in window..n {
        acc += s.values[k] - s.values[k - window];
        out.push(acc / w);
    }
    Ok(out)
}
