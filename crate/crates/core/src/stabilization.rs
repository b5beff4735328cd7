//! Stabilization points and anytime-valid confidence intervals.
//!
//! A rate metric "stabilizes" once the signal in a player's observed rate
//! outweighs binomial sampling noise. Decomposing the cohort's observed
//! variance into latent (true-talent) and sampling parts gives the sample
//! size at which the two contribute equally:
//!
//! ```text
//! n_stable = ceil( p(1-p) / sigma_latent^2 )
//! ```
//!
//! For monitoring a single player's running rate, Hoeffding's inequality
//! gives distribution-free intervals for any bounded metric that are valid
//! at every fixed sample size without normality or variance estimates.

use serde::{Deserialize, Serialize};

use crate::error::Error;
use crate::series::MetricSeries;
use crate::Result;

/// Cohort-level stabilization summary for one metric.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StabilizationReport {
    pub metric: String,
    /// Mean of per-player observed rates.
    pub p_hat: f64,
    /// Sample sd (n-1 denominator) of per-player observed rates.
    pub sigma_obs: f64,
    /// Root mean per-player binomial sampling variance.
    pub sigma_samp: f64,
    /// sqrt(sigma_obs^2 - sigma_samp^2).
    pub sigma_latent: f64,
    pub n_stable: u64,
    pub player_count: usize,
}

impl StabilizationReport {
    /// Header for the cohort summary CSV, one column per report field in
    /// display order.
    pub const CSV_HEADER: [&'static str; 6] = [
        "metric",
        "p_hat",
        "sigma_obs",
        "sigma_samp",
        "sigma_latent",
        "n_stable",
    ];

    pub fn csv_record(&self) -> [String; 6] {
        [
            self.metric.clone(),
            format!("{:.6}", self.p_hat),
            format!("{:.6}", self.sigma_obs),
            format!("{:.6}", self.sigma_samp),
            format!("{:.6}", self.sigma_latent),
            self.n_stable.to_string(),
        ]
    }
}

/// A two-sided interval for a bounded metric at sample size `t`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfidenceInterval {
    pub center: f64,
    /// Reported endpoints, clipped to the declared bounds.
    pub lower: f64,
    pub upper: f64,
    pub t: u64,
    pub alpha: f64,
    pub bounds: (f64, f64),
    /// Unclipped Hoeffding half-width; `lower`/`upper` derive from it.
    pub half_width: f64,
}

/// Latent (true-talent) sd from observed and sampling sds.
pub fn latent_sd(sigma_obs: f64, sigma_samp: f64) -> Result<f64> {
    if !(sigma_obs >= 0.0) || !(sigma_samp >= 0.0) {
        return Err(Error::InvalidConfig(
            "standard deviations must be nonnegative".into(),
        ));
    }
    if sigma_samp > sigma_obs {
        return Err(Error::NegativeLatentVariance {
            sigma_obs,
            sigma_samp,
        });
    }
    Ok((sigma_obs * sigma_obs - sigma_samp * sigma_samp).sqrt())
}

/// Smallest sample size at which binomial sampling noise at rate `p_hat`
/// drops to the latent sd. Degenerate rates (0 or 1) have no sampling noise,
/// so they stabilize immediately.
pub fn stabilization_point(p_hat: f64, sigma_latent: f64) -> Result<u64> {
    if !(0.0..=1.0).contains(&p_hat) {
        return Err(Error::InvalidRate(p_hat));
    }
    if p_hat == 0.0 || p_hat == 1.0 {
        return Ok(1);
    }
    if !(sigma_latent > 0.0) {
        return Err(Error::UnstableMetric);
    }
    let ratio = p_hat * (1.0 - p_hat) / (sigma_latent * sigma_latent);
    // Guard against an exact-integer ratio landing epsilon above its value.
    Ok((ratio - 1e-9).ceil().max(1.0) as u64)
}

/// Variance decomposition over a cohort of `(successes, trials)` pairs,
/// one pair per player.
pub fn cohort_stabilization(per_player: &[(u64, u64)], metric: &str) -> Result<StabilizationReport> {
    if per_player.len() < 2 {
        return Err(Error::TooFewPlayers(per_player.len()));
    }
    let mut rates = Vec::with_capacity(per_player.len());
    let mut samp_var_sum = 0.0;
    for (i, &(successes, trials)) in per_player.iter().enumerate() {
        if trials == 0 {
            return Err(Error::ZeroTrials(i));
        }
        if successes > trials {
            return Err(Error::InvalidRate(successes as f64 / trials as f64));
        }
        let p = successes as f64 / trials as f64;
        rates.push(p);
        samp_var_sum += p * (1.0 - p) / trials as f64;
    }
    let k = rates.len() as f64;
    let p_hat = rates.iter().sum::<f64>() / k;
    let obs_var = rates.iter().map(|p| (p - p_hat).powi(2)).sum::<f64>() / (k - 1.0);
    let sigma_obs = obs_var.sqrt();
    let sigma_samp = (samp_var_sum / k).sqrt();
    let sigma_latent = latent_sd(sigma_obs, sigma_samp)?;
    let n_stable = stabilization_point(p_hat, sigma_latent)?;
    Ok(StabilizationReport {
        metric: metric.to_string(),
        p_hat,
        sigma_obs,
        sigma_samp,
        sigma_latent,
        n_stable,
        player_count: per_player.len(),
    })
}

fn check_bounds(bounds: (f64, f64)) -> Result<()> {
    let (a, b) = bounds;
    if !(a < b) || !a.is_finite() || !b.is_finite() {
        return Err(Error::InvalidBounds { lo: a, hi: b });
    }
    Ok(())
}

fn check_alpha(alpha: f64) -> Result<()> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::InvalidAlpha(alpha));
    }
    Ok(())
}

/// Two-sided Hoeffding interval for the mean of `t` observations bounded in
/// `[a, b]`: half-width `(b - a) * sqrt(ln(2/alpha) / (2t))`. Reported
/// endpoints are clipped to the bounds; the raw half-width is kept on the
/// result so width ratios stay exact.
pub fn hoeffding_interval(
    mean: f64,
    t: u64,
    alpha: f64,
    bounds: (f64, f64),
) -> Result<ConfidenceInterval> {
    check_bounds(bounds)?;
    check_alpha(alpha)?;
    if t == 0 {
        return Err(Error::SeriesTooShort { len: 0, min: 1 });
    }
    let (a, b) = bounds;
    if !(mean >= a && mean <= b) {
        return Err(Error::ValueOutsideBounds {
            value: mean,
            position: 0,
            lo: a,
            hi: b,
        });
    }
    let half_width = (b - a) * ((2.0 / alpha).ln() / (2.0 * t as f64)).sqrt();
    Ok(ConfidenceInterval {
        center: mean,
        lower: (mean - half_width).max(a),
        upper: (mean + half_width).min(b),
        t,
        alpha,
        bounds,
        half_width,
    })
}

/// Per-step significance allocation for [`confidence_sequence`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SequenceCorrection {
    /// Each interval holds at level alpha at its own fixed t (pointwise).
    #[default]
    Pointwise,
    /// Spends alpha_t = alpha * 6 / (pi^2 t^2) at step t, so the union over
    /// all steps still holds at level alpha (uniformly valid, wider).
    UnionBound,
}

/// Hoeffding interval around the running mean after each observation.
pub fn confidence_sequence(
    s: &MetricSeries,
    alpha: f64,
    bounds: (f64, f64),
) -> Result<Vec<ConfidenceInterval>> {
    confidence_sequence_with(s, alpha, bounds, SequenceCorrection::Pointwise)
}

/// As [`confidence_sequence`], with an explicit per-step alpha allocation.
pub fn confidence_sequence_with(
    s: &MetricSeries,
    alpha: f64,
    bounds: (f64, f64),
    correction: SequenceCorrection,
) -> Result<Vec<ConfidenceInterval>> {
    check_bounds(bounds)?;
    check_alpha(alpha)?;
    s.validate()?;
    let (a, b) = bounds;
    for (i, &v) in s.values.iter().enumerate() {
        if !(v >= a && v <= b) {
            return Err(Error::ValueOutsideBounds {
                value: v,
                position: i + 1,
                lo: a,
                hi: b,
            });
        }
    }
    let mut out = Vec::with_capacity(s.len());
    let mut acc = 0.0;
    for (i, &v) in s.values.iter().enumerate() {
        acc += v;
        let t = (i + 1) as u64;
        let alpha_t = match correction {
            SequenceCorrection::Pointwise => alpha,
            SequenceCorrection::UnionBound => {
                alpha * 6.0 / (std::f64::consts::PI.powi(2) * (t as f64).powi(2))
            }
        };
        out.push(hoeffding_interval(acc / t as f64, t, alpha_t, bounds)?);
    }
    Ok(out)
}
