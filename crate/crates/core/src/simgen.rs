//! Seeded generation of series with planted changes, and Monte Carlo
//! estimation of detection operating characteristics.
//!
//! Generation is fully determined by the spec's seed, so any series used in
//! a test or report can be reproduced from its spec alone. Replication
//! seeds are derived, not sequential, which keeps estimates identical no
//! matter how replications are scheduled across threads.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::detect::{self, DetectionConfig};
use crate::error::Error;
use crate::seed;
use crate::series::{new_metric_series, MetricKind, MetricSeries};
use crate::Result;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "dist", rename_all = "snake_case")]
pub enum SegmentDist {
    Bernoulli { p: f64 },
    Gaussian { mu: f64, sigma: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SegmentSpec {
    pub length: usize,
    #[serde(flatten)]
    pub dist: SegmentDist,
}

impl SegmentSpec {
    pub fn bernoulli(length: usize, p: f64) -> Self {
        SegmentSpec {
            length,
            dist: SegmentDist::Bernoulli { p },
        }
    }

    pub fn gaussian(length: usize, mu: f64, sigma: f64) -> Self {
        SegmentSpec {
            length,
            dist: SegmentDist::Gaussian { mu, sigma },
        }
    }
}

/// A piecewise-constant generating process: consecutive segments with their
/// own distribution, changing at the segment boundaries.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantedSpec {
    pub kind: MetricKind,
    /// Total length; must equal the sum of segment lengths.
    pub n: usize,
    pub segments: Vec<SegmentSpec>,
    #[serde(default)]
    pub seed: u64,
}

impl PlantedSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return Err(Error::InvalidSpec("series length must be positive".into()));
        }
        if self.segments.is_empty() {
            return Err(Error::InvalidSpec("at least one segment required".into()));
        }
        let mut total = 0usize;
        for (i, seg) in self.segments.iter().enumerate() {
            if seg.length == 0 {
                return Err(Error::InvalidSpec(format!("segment {i} has length 0")));
            }
            total += seg.length;
            match (self.kind, seg.dist) {
                (MetricKind::Binary, SegmentDist::Bernoulli { p }) => {
                    if !(0.0..=1.0).contains(&p) {
                        return Err(Error::InvalidSpec(format!(
                            "segment {i}: success probability {p} outside [0, 1]"
                        )));
                    }
                }
                (MetricKind::Continuous, SegmentDist::Gaussian { mu, sigma }) => {
                    if !mu.is_finite() || !sigma.is_finite() || sigma <= 0.0 {
                        return Err(Error::InvalidSpec(format!(
                            "segment {i}: gaussian({mu}, {sigma}) is not a valid distribution"
                        )));
                    }
                }
                _ => {
                    return Err(Error::InvalidSpec(format!(
                        "segment {i} distribution does not match series kind {}",
                        self.kind.as_str()
                    )));
                }
            }
        }
        if total != self.n {
            return Err(Error::InvalidSpec(format!(
                "segment lengths sum to {total}, expected n = {}",
                self.n
            )));
        }
        Ok(())
    }

    /// Positions of the planted changes: the last index of each segment but
    /// the final one, 1-based.
    pub fn planted_changepoints(&self) -> Vec<usize> {
        let mut out = Vec::new();
        let mut acc = 0;
        for seg in self.segments.iter().take(self.segments.len().saturating_sub(1)) {
            acc += seg.length;
            out.push(acc);
        }
        out
    }
}

/// Draws one series from the spec. Same spec, same bytes.
pub fn generate(spec: &PlantedSpec) -> Result<MetricSeries> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut values = Vec::with_capacity(spec.n);
    for seg in &spec.segments {
        match seg.dist {
            SegmentDist::Bernoulli { p } => {
                for _ in 0..seg.length {
                    values.push(if rng.gen_bool(p) { 1.0 } else { 0.0 });
                }
            }
            SegmentDist::Gaussian { mu, sigma } => {
                let normal = Normal::new(mu, sigma).expect("validated parameters");
                for _ in 0..seg.length {
                    values.push(normal.sample(&mut rng));
                }
            }
        }
    }
    new_metric_series(values, spec.kind, "sim", "planted")
}

/// Monte Carlo estimate of how a detection configuration behaves on a
/// generating process.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateEstimate {
    /// Fraction of replications with at least one flagged changepoint.
    /// False positive rate under a single-segment spec, power otherwise.
    pub flag_rate: f64,
    /// Mean absolute distance from the planted change over flagging
    /// replications. Only for single-change specs, and only when at least
    /// one replication flagged.
    pub localization_mae: Option<f64>,
    pub reps: u64,
    /// Binomial standard error of `flag_rate`.
    pub mc_stderr: f64,
}

/// Runs `reps` generate-and-detect replications. Replication `r` draws its
/// data and its detection seed from independent streams derived from
/// `seed`, so the estimate does not depend on thread scheduling.
pub fn estimate_rates(
    spec: &PlantedSpec,
    cfg: &DetectionConfig,
    reps: u64,
    seed_base: u64,
) -> Result<RateEstimate> {
    spec.validate()?;
    cfg.validate()?;
    if reps == 0 {
        return Err(Error::InvalidConfig("reps must be positive".into()));
    }
    let planted = spec.planted_changepoints();
    let per_rep: Result<Vec<(bool, Option<f64>)>> = (0..reps)
        .into_par_iter()
        .map(|r| {
            let mut rep_spec = spec.clone();
            rep_spec.seed = seed::mix(seed_base, &[r, 0]);
            let mut rep_cfg = cfg.clone();
            rep_cfg.seed = seed::mix(seed_base, &[r, 1]);
            let series = generate(&rep_spec)?;
            let result = detect::detect_multiple(&series, &rep_cfg)?;
            let flagged = result.flagged();
            let localization = match planted.as_slice() {
                [tau] if flagged => Some(
                    result
                        .changepoints
                        .iter()
                        .map(|cp| (cp.t_original as f64 - *tau as f64).abs())
                        .fold(f64::INFINITY, f64::min),
                ),
                _ => None,
            };
            Ok((flagged, localization))
        })
        .collect();
    let per_rep = per_rep?;
    let flags = per_rep.iter().filter(|(f, _)| *f).count() as f64;
    let flag_rate = flags / reps as f64;
    let errors: Vec<f64> = per_rep.iter().filter_map(|(_, e)| *e).collect();
    let localization_mae = if planted.len() == 1 && !errors.is_empty() {
        Some(errors.iter().sum::<f64>() / errors.len() as f64)
    } else {
        None
    };
    Ok(RateEstimate {
        flag_rate,
        localization_mae,
        reps,
        mc_stderr: (flag_rate * (1.0 - flag_rate) / reps as f64).sqrt(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn null_spec(n: usize, p: f64, seed: u64) -> PlantedSpec {
        PlantedSpec {
            kind: MetricKind::Binary,
            n,
            segments: vec![SegmentSpec::bernoulli(n, p)],
            seed,
        }
    }

    fn step_spec(seed: u64) -> PlantedSpec {
        PlantedSpec {
            kind: MetricKind::Binary,
            n: 600,
            segments: vec![
                SegmentSpec::bernoulli(300, 0.15),
                SegmentSpec::bernoulli(300, 0.45),
            ],
            seed,
        }
    }

    #[test]
    fn validation_rejects_malformed_specs() {
        let mut spec = step_spec(1);
        spec.n = 500;
        assert!(matches!(spec.validate(), Err(Error::InvalidSpec(_))));

        let mixed = PlantedSpec {
            kind: MetricKind::Binary,
            n: 100,
            segments: vec![SegmentSpec::gaussian(100, 90.0, 1.0)],
            seed: 1,
        };
        assert!(matches!(mixed.validate(), Err(Error::InvalidSpec(_))));

        let bad_p = null_spec(100, 1.5, 1);
        assert!(matches!(bad_p.validate(), Err(Error::InvalidSpec(_))));

        let bad_sigma = PlantedSpec {
            kind: MetricKind::Continuous,
            n: 100,
            segments: vec![SegmentSpec::gaussian(100, 90.0, 0.0)],
            seed: 1,
        };
        assert!(matches!(bad_sigma.validate(), Err(Error::InvalidSpec(_))));

        let empty = PlantedSpec {
            kind: MetricKind::Binary,
            n: 10,
            segments: vec![],
            seed: 1,
        };
        assert!(matches!(empty.validate(), Err(Error::InvalidSpec(_))));
    }

    #[test]
    fn generation_is_seed_deterministic() {
        let spec = step_spec(77);
        let a = generate(&spec).unwrap();
        let b = generate(&spec).unwrap();
        assert_eq!(a.values, b.values);

        let other = generate(&step_spec(78)).unwrap();
        assert_ne!(a.values, other.values);
    }

    #[test]
    fn generated_segments_match_their_distributions() {
        let spec = PlantedSpec {
            kind: MetricKind::Binary,
            n: 10_000,
            segments: vec![
                SegmentSpec::bernoulli(5_000, 0.2),
                SegmentSpec::bernoulli(5_000, 0.7),
            ],
            seed: 5,
        };
        let s = generate(&spec).unwrap();
        let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
        assert!((mean(&s.values[..5_000]) - 0.2).abs() < 0.02);
        assert!((mean(&s.values[5_000..]) - 0.7).abs() < 0.02);

        let velo = PlantedSpec {
            kind: MetricKind::Continuous,
            n: 8_000,
            segments: vec![SegmentSpec::gaussian(8_000, 94.0, 1.3)],
            seed: 6,
        };
        let v = generate(&velo).unwrap();
        let m = mean(&v.values);
        let sd = (v.values.iter().map(|x| (x - m).powi(2)).sum::<f64>()
            / (v.values.len() - 1) as f64)
            .sqrt();
        assert!((m - 94.0).abs() < 0.1);
        assert!((sd - 1.3).abs() < 0.1);
    }

    #[test]
    fn degenerate_probabilities_generate() {
        let zeros = generate(&null_spec(50, 0.0, 9)).unwrap();
        assert!(zeros.values.iter().all(|&v| v == 0.0));
        let ones = generate(&null_spec(50, 1.0, 9)).unwrap();
        assert!(ones.values.iter().all(|&v| v == 1.0));
    }

    #[test]
    fn planted_positions_are_cumulative_segment_ends() {
        let spec = PlantedSpec {
            kind: MetricKind::Binary,
            n: 600,
            segments: vec![
                SegmentSpec::bernoulli(200, 0.1),
                SegmentSpec::bernoulli(150, 0.5),
                SegmentSpec::bernoulli(250, 0.1),
            ],
            seed: 1,
        };
        assert_eq!(spec.planted_changepoints(), vec![200, 350]);
        assert!(null_spec(100, 0.5, 1).planted_changepoints().is_empty());
    }

    #[test]
    fn spec_round_trips_through_json() {
        let spec = step_spec(12);
        let text = serde_json::to_string(&spec).unwrap();
        let back: PlantedSpec = serde_json::from_str(&text).unwrap();
        assert_eq!(spec, back);

        // The flat segment encoding is part of the CLI contract.
        let raw = r#"{
            "kind": "continuous",
            "n": 300,
            "segments": [
                {"length": 150, "dist": "gaussian", "mu": 95.0, "sigma": 1.2},
                {"length": 150, "dist": "gaussian", "mu": 92.0, "sigma": 1.2}
            ],
            "seed": 3
        }"#;
        let parsed: PlantedSpec = serde_json::from_str(raw).unwrap();
        assert!(parsed.validate().is_ok());
        assert_eq!(parsed.planted_changepoints(), vec![150]);
    }

    #[test]
    fn strong_change_yields_high_flag_rate_and_tight_localization() {
        let est = estimate_rates(&step_spec(0), &DetectionConfig::default(), 60, 2001).unwrap();
        assert!(est.flag_rate >= 0.95, "flag rate {}", est.flag_rate);
        let mae = est.localization_mae.expect("single planted change");
        assert!(mae <= 25.0, "localization mae {mae}");
        assert_eq!(est.reps, 60);
    }

    #[test]
    fn null_flag_rate_stays_near_alpha() {
        let est = estimate_rates(
            &null_spec(400, 0.3, 0),
            &DetectionConfig::default(),
            150,
            909,
        )
        .unwrap();
        assert!(est.flag_rate <= 0.10, "null flag rate {}", est.flag_rate);
        assert!(est.localization_mae.is_none());
        let expected_se = (est.flag_rate * (1.0 - est.flag_rate) / 150.0).sqrt();
        assert!((est.mc_stderr - expected_se).abs() < 1e-15);
    }

    #[test]
    fn estimates_are_reproducible() {
        let spec = step_spec(0);
        let cfg = DetectionConfig::default();
        let a = estimate_rates(&spec, &cfg, 40, 123).unwrap();
        let b = estimate_rates(&spec, &cfg, 40, 123).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn multi_change_specs_report_no_localization() {
        let spec = PlantedSpec {
            kind: MetricKind::Binary,
            n: 600,
            segments: vec![
                SegmentSpec::bernoulli(200, 0.1),
                SegmentSpec::bernoulli(200, 0.6),
                SegmentSpec::bernoulli(200, 0.1),
            ],
            seed: 4,
        };
        let est = estimate_rates(&spec, &DetectionConfig::default(), 30, 55).unwrap();
        assert!(est.flag_rate >= 0.9);
        assert!(est.localization_mae.is_none());
    }

    #[test]
    fn zero_reps_is_rejected() {
        let err = estimate_rates(&step_spec(0), &DetectionConfig::default(), 0, 1).unwrap_err();
        assert!(matches!(err, Error::InvalidConfig(_)));
    }
}
