//! Likelihood-ratio changepoint profiles.
//!
//! For a candidate split after position t, the profile value is the gain in
//! maximized log-likelihood from fitting the two sides separately instead of
//! pooled:
//!
//! ```text
//! lambda_t = l(y[1..t]) + l(y[t+1..T]) - l(y[1..T])
//! ```
//!
//! Binary streams use Bernoulli likelihoods with the 0*log(0) = 0 convention;
//! continuous streams use Gaussian likelihoods with MLE (length-denominator)
//! variances. Both profiles are computed in one pass over prefix sums, so a
//! full scan is O(T). The profile is a *search* device, not an inference
//! device: its maximizer locates a candidate, and significance comes from an
//! independent test on held-out data (see [`crate::detect`]).

use serde::{Deserialize, Serialize};

use crate::error::Error;
use crate::series::{MetricKind, MetricSeries};
use crate::Result;

/// Variance floor for Gaussian segments; constant segments would otherwise
/// give a degenerate likelihood.
pub const VARIANCE_FLOOR: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LikelihoodKind {
    Bernoulli,
    Gaussian,
}

/// Profile of lambda values over the admissible split positions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LambdaProfile {
    /// `lambda[i]` is the gain for the split after position `t_range.0 + i`.
    pub lambda: Vec<f64>,
    /// Inclusive range `(t_min, t_max)` of split positions scanned, in
    /// 1-based positions within the scanned series.
    pub t_range: (usize, usize),
    pub kind: LikelihoodKind,
}

/// Location and strength of the best split in a profile.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CandidateChangepoint {
    /// 1-based position within the scanned series.
    pub t_local: usize,
    /// Index of that observation in the source stream.
    pub t_original: usize,
    pub lambda_max: f64,
}

/// Bernoulli log-likelihood of a segment with `ones` successes in `n` trials
/// at its MLE rate, using 0*log(0) = 0.
fn bernoulli_segment_ll(ones: f64, n: f64) -> f64 {
    debug_assert!(n > 0.0);
    let zeros = n - ones;
    let p = ones / n;
    let mut ll = 0.0;
    if ones > 0.0 {
        ll += ones * p.ln();
    }
    if zeros > 0.0 {
        ll += zeros * (1.0 - p).ln();
    }
    ll
}

/// Gaussian log-likelihood of a segment at its MLE parameters, reduced to
/// the variance term: -(n/2) * ln(2*pi*var) - n/2.
fn gaussian_segment_ll(sum: f64, sumsq: f64, n: f64) -> f64 {
    debug_assert!(n > 0.0);
    let mean = sum / n;
    let var = (sumsq / n - mean * mean).max(VARIANCE_FLOOR);
    -(n / 2.0) * (2.0 * std::f64::consts::PI * var).ln() - n / 2.0
}

pub(crate) fn bernoulli_profile_values(values: &[f64], min_side: usize) -> Result<LambdaProfile> {
    if min_side < 1 {
        return Err(Error::MinSideTooSmall { min: 1 });
    }
    let n = values.len();
    if n < 2 * min_side {
        return Err(Error::SeriesTooShort {
            len: n,
            min: 2 * min_side,
        });
    }
    let total_ones: f64 = values.iter().sum();
    let total = n as f64;
    let pooled = bernoulli_segment_ll(total_ones, total);
    let (t_min, t_max) = (min_side, n - min_side);
    let mut lambda = Vec::with_capacity(t_max - t_min + 1);
    let mut prefix_ones: f64 = values[..t_min - 1].iter().sum();
    for t in t_min..=t_max {
        prefix_ones += values[t - 1];
        let left = bernoulli_segment_ll(prefix_ones, t as f64);
        let right = bernoulli_segment_ll(total_ones - prefix_ones, (n - t) as f64);
        lambda.push(left + right - pooled);
    }
    Ok(LambdaProfile {
        lambda,
        t_range: (t_min, t_max),
        kind: LikelihoodKind::Bernoulli,
    })
}

pub(crate) fn gaussian_profile_values(values: &[f64], min_side: usize) -> Result<LambdaProfile> {
    if min_side < 2 {
        return Err(Error::MinSideTooSmall { min: 2 });
    }
    let n = values.len();
    if n < 2 * min_side {
        return Err(Error::SeriesTooShort {
            len: n,
            min: 2 * min_side,
        });
    }
    // Segment variances are shift-invariant, so center at the grand mean
    // before the prefix sums. Raw sums of squares of values far from zero
    // (velocities near 90) would cancel against mean^2 and lose most of a
    // small variance's digits.
    let grand_mean = values.iter().sum::<f64>() / n as f64;
    let centered: Vec<f64> = values.iter().map(|v| v - grand_mean).collect();
    let total_sum: f64 = centered.iter().sum();
    let total_sumsq: f64 = centered.iter().map(|v| v * v).sum();
    let pooled = gaussian_segment_ll(total_sum, total_sumsq, n as f64);
    let (t_min, t_max) = (min_side, n - min_side);
    let mut lambda = Vec::with_capacity(t_max - t_min + 1);
    let mut sum: f64 = centered[..t_min - 1].iter().sum();
    let mut sumsq: f64 = centered[..t_min - 1].iter().map(|v| v * v).sum();
    for t in t_min..=t_max {
        let v = centered[t - 1];
        sum += v;
        sumsq += v * v;
        let left = gaussian_segment_ll(sum, sumsq, t as f64);
        let right =
            gaussian_segment_ll(total_sum - sum, total_sumsq - sumsq, (n - t) as f64);
        lambda.push(left + right - pooled);
    }
    Ok(LambdaProfile {
        lambda,
        t_range: (t_min, t_max),
        kind: LikelihoodKind::Gaussian,
    })
}

/// Bernoulli lambda profile of a binary series. Splits with fewer than
/// `min_side` observations on either side are not scanned.
pub fn bernoulli_lambda_profile(s: &MetricSeries, min_side: usize) -> Result<LambdaProfile> {
    s.validate()?;
    if s.kind != MetricKind::Binary {
        return Err(Error::IncompatibleTest {
            test: "Bernoulli likelihood",
            kind: s.kind.as_str(),
        });
    }
    bernoulli_profile_values(&s.values, min_side)
}

/// Gaussian lambda profile of a continuous series. `min_side` must be at
/// least 2 so each side admits a variance estimate.
pub fn gaussian_lambda_profile(s: &MetricSeries, min_side: usize) -> Result<LambdaProfile> {
    s.validate()?;
    gaussian_profile_values(&s.values, min_side)
}

/// Earliest maximizer of a profile, mapped back to source-stream indices via
/// the scanned series. Ties break toward the earliest split.
pub fn argmax_candidate(
    profile: &LambdaProfile,
    scanned: &MetricSeries,
) -> Result<CandidateChangepoint> {
    if profile.lambda.is_empty() {
        return Err(Error::EmptySeries);
    }
    if profile.t_range.1 > scanned.len() {
        return Err(Error::InvalidConfig(format!(
            "profile scans up to position {} but series has length {}",
            profile.t_range.1,
            scanned.len()
        )));
    }
    let mut best = 0;
    for (i, &l) in profile.lambda.iter().enumerate() {
        if l > profile.lambda[best] {
            best = i;
        }
    }
    let t_local = profile.t_range.0 + best;
    Ok(CandidateChangepoint {
        t_local,
        t_original: scanned.original_index[t_local - 1],
        lambda_max: profile.lambda[best],
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::series::{new_metric_series, split_odd_even};
    use proptest::prelude::*;

    fn binary(vals: &[u8]) -> MetricSeries {
        new_metric_series(
            vals.iter().map(|&b| f64::from(b)).collect(),
            MetricKind::Binary,
            "e",
            "m",
        )
        .unwrap()
    }

    fn continuous(vals: &[f64]) -> MetricSeries {
        new_metric_series(vals.to_vec(), MetricKind::Continuous, "e", "m").unwrap()
    }

    /// Direct per-split recomputation, no prefix sums. Kept deliberately
    /// naive so it exercises an independent arithmetic path.
    fn brute_force_lambda(values: &[f64], kind: LikelihoodKind, min_side: usize) -> Vec<f64> {
        let n = values.len();
        let seg_ll = |seg: &[f64]| -> f64 {
            match kind {
                LikelihoodKind::Bernoulli => {
                    let ones = seg.iter().filter(|&&v| v == 1.0).count() as f64;
                    let m = seg.len() as f64;
                    let p = ones / m;
                    let mut ll = 0.0;
                    if ones > 0.0 {
                        ll += ones * p.ln();
                    }
                    if m - ones > 0.0 {
                        ll += (m - ones) * (1.0 - p).ln();
                    }
                    ll
                }
                LikelihoodKind::Gaussian => {
                    let m = seg.len() as f64;
                    let mean = seg.iter().sum::<f64>() / m;
                    let var = (seg.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / m)
                        .max(VARIANCE_FLOOR);
                    -(m / 2.0) * (2.0 * std::f64::consts::PI * var).ln() - m / 2.0
                }
            }
        };
        let pooled = seg_ll(values);
        (min_side..=n - min_side)
            .map(|t| seg_ll(&values[..t]) + seg_ll(&values[t..]) - pooled)
            .collect()
    }

    #[test]
    fn bernoulli_profile_matches_hand_computed_values() {
        let profile = bernoulli_lambda_profile(&binary(&[1, 1, 0, 0]), 1).unwrap();
        assert_eq!(profile.t_range, (1, 3));
        let expected = [0.8630462173553428, 2.772588722239781, 0.8630462173553428];
        for (l, e) in profile.lambda.iter().zip(expected) {
            assert!((l - e).abs() < 1e-12, "lambda {l} vs {e}");
        }
    }

    #[test]
    fn constant_bits_give_zero_profile() {
        let profile = bernoulli_lambda_profile(&binary(&[1; 12]), 1).unwrap();
        assert!(profile.lambda.iter().all(|&l| l == 0.0));
    }

    #[test]
    fn gaussian_profile_matches_hand_computed_value() {
        let profile = gaussian_lambda_profile(&continuous(&[1.0, 2.0, 9.0, 10.0]), 2).unwrap();
        assert_eq!(profile.t_range, (2, 2));
        assert!((profile.lambda[0] - 8.348774539791275).abs() < 1e-10);
    }

    #[test]
    fn profiles_reject_bad_min_side_and_short_series() {
        assert!(matches!(
            bernoulli_lambda_profile(&binary(&[1, 0]), 0),
            Err(Error::MinSideTooSmall { min: 1 })
        ));
        assert!(matches!(
            bernoulli_lambda_profile(&binary(&[1, 0, 1]), 2),
            Err(Error::SeriesTooShort { len: 3, min: 4 })
        ));
        assert!(matches!(
            gaussian_lambda_profile(&continuous(&[1.0, 2.0, 3.0]), 1),
            Err(Error::MinSideTooSmall { min: 2 })
        ));
        assert!(matches!(
            bernoulli_lambda_profile(&continuous(&[0.5, 0.5]), 1),
            Err(Error::IncompatibleTest { .. })
        ));
    }

    #[test]
    fn argmax_finds_the_peak() {
        let s = binary(&[1, 1, 0, 0]);
        let profile = bernoulli_lambda_profile(&s, 1).unwrap();
        let cand = argmax_candidate(&profile, &s).unwrap();
        assert_eq!(cand.t_local, 2);
        assert_eq!(cand.t_original, 2);
        assert!((cand.lambda_max - 2.772588722239781).abs() < 1e-12);
    }

    #[test]
    fn argmax_breaks_ties_earliest() {
        // Symmetric series: lambda at t=1 and t=3 tie.
        let s = binary(&[0, 1, 0, 1]);
        let profile = bernoulli_lambda_profile(&s, 1).unwrap();
        assert!((profile.lambda[0] - profile.lambda[2]).abs() < 1e-15);
        let cand = argmax_candidate(&profile, &s).unwrap();
        assert_eq!(cand.t_local, 1);
    }

    #[test]
    fn argmax_reports_parent_indices_after_split() {
        let s = binary(&[0, 0, 0, 1, 1, 1]);
        let pair = split_odd_even(&s).unwrap();
        let profile = bernoulli_lambda_profile(&pair.odd, 1).unwrap();
        let cand = argmax_candidate(&profile, &pair.odd).unwrap();
        assert_eq!(cand.t_local, 2);
        assert_eq!(cand.t_original, 3);
    }

    #[test]
    fn profiles_match_brute_force_on_mixed_examples() {
        let bits: Vec<f64> = vec![1., 0., 0., 1., 1., 1., 0., 1., 0., 0., 0., 1., 1.];
        let profile = bernoulli_profile_values(&bits, 1).unwrap();
        let brute = brute_force_lambda(&bits, LikelihoodKind::Bernoulli, 1);
        for (a, b) in profile.lambda.iter().zip(&brute) {
            assert!((a - b).abs() < 1e-10);
        }

        let vals = [5.1, 4.8, 5.3, 9.9, 10.2, 9.7, 10.1, 5.0, 5.2];
        let profile = gaussian_profile_values(&vals, 2).unwrap();
        let brute = brute_force_lambda(&vals, LikelihoodKind::Gaussian, 2);
        for (a, b) in profile.lambda.iter().zip(&brute) {
            assert!((a - b).abs() < 1e-10);
        }
    }

    #[test]
    fn lambda_grows_with_planted_shift_size() {
        let base: Vec<f64> = (0..60).map(|i| 90.0 + f64::from(i % 5) * 0.3).collect();
        let mut shifted = base.clone();
        for v in &mut shifted[30..] {
            *v += 4.0;
        }
        let null_max = gaussian_profile_values(&base, 2)
            .unwrap()
            .lambda
            .into_iter()
            .fold(f64::NEG_INFINITY, f64::max);
        let alt_max = gaussian_profile_values(&shifted, 2)
            .unwrap()
            .lambda
            .into_iter()
            .fold(f64::NEG_INFINITY, f64::max);
        assert!(alt_max > null_max + 10.0);
    }

    proptest! {
        /// Splitting can never fit worse than pooling.
        #[test]
        fn bernoulli_lambda_is_nonnegative(vals in proptest::collection::vec(0u8..=1, 2..80)) {
            let profile = bernoulli_profile_values(
                &vals.iter().map(|&b| f64::from(b)).collect::<Vec<_>>(),
                1,
            )
            .unwrap();
            for l in profile.lambda {
                prop_assert!(l >= -1e-9);
            }
        }

        /// Grid-valued data keeps variances well above the floor, where the
        /// nonnegativity argument is exact.
        #[test]
        fn gaussian_lambda_is_nonnegative(
            steps in proptest::collection::vec(-20i32..=20, 4..80),
        ) {
            let vals: Vec<f64> = steps.iter().map(|&k| f64::from(k) * 0.5).collect();
            let profile = gaussian_profile_values(&vals, 2).unwrap();
            for l in profile.lambda {
                prop_assert!(l >= -1e-9);
            }
        }

        /// Swapping the roles of 0 and 1 leaves the profile unchanged.
        #[test]
        fn bernoulli_profile_is_relabel_invariant(
            vals in proptest::collection::vec(0u8..=1, 2..60),
        ) {
            let as_f: Vec<f64> = vals.iter().map(|&b| f64::from(b)).collect();
            let flipped: Vec<f64> = as_f.iter().map(|v| 1.0 - v).collect();
            let a = bernoulli_profile_values(&as_f, 1).unwrap();
            let b = bernoulli_profile_values(&flipped, 1).unwrap();
            for (x, y) in a.lambda.iter().zip(&b.lambda) {
                prop_assert!((x - y).abs() < 1e-9);
            }
        }

        /// Adding a constant shifts means but not variances.
        #[test]
        fn gaussian_profile_is_translation_invariant(
            steps in proptest::collection::vec(-20i32..=20, 4..60),
            shift in -50.0f64..50.0,
        ) {
            let vals: Vec<f64> = steps.iter().map(|&k| f64::from(k) * 0.5).collect();
            let moved: Vec<f64> = vals.iter().map(|v| v + shift).collect();
            let a = gaussian_profile_values(&vals, 2).unwrap();
            let b = gaussian_profile_values(&moved, 2).unwrap();
            for (x, y) in a.lambda.iter().zip(&b.lambda) {
                prop_assert!((x - y).abs() < 1e-6);
            }
        }

        /// Reversing the series reverses the profile.
        #[test]
        fn profile_of_reversed_series_is_reversed(
            vals in proptest::collection::vec(0u8..=1, 2..60),
        ) {
            let as_f: Vec<f64> = vals.iter().map(|&b| f64::from(b)).collect();
            let rev: Vec<f64> = as_f.iter().rev().copied().collect();
            let a = bernoulli_profile_values(&as_f, 1).unwrap();
            let b = bernoulli_profile_values(&rev, 1).unwrap();
            let mut b_rev = b.lambda.clone();
            b_rev.reverse();
            for (x, y) in a.lambda.iter().zip(&b_rev) {
                prop_assert!((x - y).abs() < 1e-9);
            }
        }
    }
}
