//! Confirmation tests used on the held-out half of a split series.
//!
//! Binary streams: Fisher's exact test on the 2x2 table of successes before
//! and after the candidate, two-sided by the point-probability rule (sum the
//! hypergeometric probabilities of every table at most as likely as the one
//! observed). Computed exactly in log space; no normal approximation at any
//! sample size.
//!
//! Continuous streams: a permutation test for a shift of at least `delta`.
//! The post sample is translated by `delta` toward the pre sample, then the
//! one-sided tail (in the direction of the observed difference) of the mean
//! difference is evaluated under random relabeling. Small problems are fully
//! enumerated; larger ones fall back to seeded Monte Carlo with the add-one
//! correction, which keeps the p-value valid rather than merely unbiased.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::Error;
use crate::Result;

/// Enumerate the relabeling null exactly when the number of assignments is
/// at most this; sample otherwise.
pub const EXACT_ENUMERATION_CUTOFF: u64 = 20_000;

/// Counts before/after a candidate split: rows are pre/post, columns are
/// success/failure.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ContingencyTable {
    /// Successes before.
    pub a: u64,
    /// Failures before.
    pub b: u64,
    /// Successes after.
    pub c: u64,
    /// Failures after.
    pub d: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TestMethod {
    FisherExact,
    PermutationShift,
}

/// How the null distribution was evaluated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Resampling {
    /// Closed form or full enumeration; `evaluations` distinct outcomes.
    Exact { evaluations: u64 },
    /// Seeded sampling of the null.
    MonteCarlo { draws: u64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TestOutcome {
    pub p_value: f64,
    /// Observed effect, oriented post minus pre. For the permutation test
    /// this is the shift-adjusted mean difference; for Fisher the difference
    /// in success rates.
    pub statistic: f64,
    pub method: TestMethod,
    pub resampling: Resampling,
    /// Seed actually consumed; none on exact paths.
    pub seed: Option<u64>,
}

/// Natural logs of factorials 0..=n via cumulative summation.
fn ln_factorials(n: usize) -> Vec<f64> {
    let mut table = Vec::with_capacity(n + 1);
    table.push(0.0);
    let mut acc = 0.0;
    for i in 1..=n {
        acc += (i as f64).ln();
        table.push(acc);
    }
    table
}

/// Two-sided Fisher's exact test by the point-probability rule.
pub fn fisher_exact(table: &ContingencyTable) -> Result<TestOutcome> {
    let &ContingencyTable { a, b, c, d } = table;
    let (r1, r2) = (a + b, c + d);
    let c1 = a + c;
    if r1 == 0 || r2 == 0 {
        return Err(Error::DegenerateTable);
    }
    let n = r1 + r2;
    let lnf = ln_factorials(n as usize);
    let ln_choose = |n: u64, k: u64| -> f64 {
        lnf[n as usize] - lnf[k as usize] - lnf[(n - k) as usize]
    };
    let denom = ln_choose(n, c1);
    let ln_point = |k: u64| ln_choose(r1, k) + ln_choose(r2, c1 - k) - denom;

    let k_lo = c1.saturating_sub(r2);
    let k_hi = r1.min(c1);
    let ln_obs = ln_point(a);
    // Distinct hypergeometric weights are never this close without being
    // equal at the table sizes we exactness-check, and log-space noise is
    // orders of magnitude smaller, so this tolerance only absorbs ties.
    let tie_slack = 1e-7;
    let mut p = 0.0;
    for k in k_lo..=k_hi {
        let lp = ln_point(k);
        if lp <= ln_obs + tie_slack {
            p += lp.exp();
        }
    }
    let rate_before = a as f64 / r1 as f64;
    let rate_after = c as f64 / r2 as f64;
    Ok(TestOutcome {
        p_value: p.min(1.0),
        statistic: rate_after - rate_before,
        method: TestMethod::FisherExact,
        resampling: Resampling::Exact {
            evaluations: k_hi - k_lo + 1,
        },
        seed: None,
    })
}

/// C(n, k) capped at `cap`; returns None when the count exceeds the cap.
fn binomial_at_most(n: u64, k: u64, cap: u64) -> Option<u64> {
    let k = k.min(n - k);
    let mut acc: u128 = 1;
    for i in 0..k {
        acc = acc * u128::from(n - i) / u128::from(i + 1);
        if acc > u128::from(cap) {
            return None;
        }
    }
    Some(acc as u64)
}

fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Permutation test for a location shift of at least `delta` between `x`
/// (pre) and `y` (post), one-sided in the direction of the observed
/// difference. `delta = 0` is the plain no-change null.
pub fn perm_test_shift(
    x: &[f64],
    y: &[f64],
    delta: f64,
    n_perm: u64,
    seed: u64,
) -> Result<TestOutcome> {
    perm_test_shift_with_cutoff(x, y, delta, n_perm, seed, EXACT_ENUMERATION_CUTOFF)
}

/// As [`perm_test_shift`] with an explicit exact-enumeration cutoff.
pub fn perm_test_shift_with_cutoff(
    x: &[f64],
    y: &[f64],
    delta: f64,
    n_perm: u64,
    seed: u64,
    exact_cutoff: u64,
) -> Result<TestOutcome> {
    if x.is_empty() || y.is_empty() {
        return Err(Error::EmptySample);
    }
    if !(delta >= 0.0) || !delta.is_finite() {
        return Err(Error::InvalidShift(delta));
    }
    let (nx, ny) = (x.len(), y.len());
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let d_obs = mean(y) - mean(x);
    let shift = sign(d_obs) * delta;

    // Pool x with the shifted y; relabelings draw ny of these as "post".
    let mut pooled: Vec<f64> = Vec::with_capacity(nx + ny);
    pooled.extend_from_slice(x);
    pooled.extend(y.iter().map(|v| v - shift));
    let total: f64 = pooled.iter().sum();
    let n = nx + ny;

    // stat(S) = mean(pooled[S]) - mean(pooled[!S]) for a post-index set S.
    let stat_of_sum = |post_sum: f64| -> f64 {
        post_sum / ny as f64 - (total - post_sum) / nx as f64
    };
    let s_obs = stat_of_sum(pooled[nx..].iter().sum());
    let eps = 1e-12 * (1.0 + s_obs.abs());
    let positive_tail = d_obs >= 0.0;
    let extreme = |stat: f64| -> bool {
        if positive_tail {
            stat >= s_obs - eps
        } else {
            stat <= s_obs + eps
        }
    };

    let outcome = |p_value: f64, resampling: Resampling, seed: Option<u64>| TestOutcome {
        p_value,
        statistic: s_obs,
        method: TestMethod::PermutationShift,
        resampling,
        seed,
    };

    if let Some(combos) = binomial_at_most(n as u64, ny as u64, exact_cutoff) {
        // Lexicographic walk over all ny-subsets of the pooled indices.
        let mut idx: Vec<usize> = (0..ny).collect();
        let mut post_sum: f64 = idx.iter().map(|&i| pooled[i]).sum();
        let mut hits: u64 = 0;
        loop {
            if extreme(stat_of_sum(post_sum)) {
                hits += 1;
            }
            // Advance to the next combination, maintaining the subset sum.
            let mut i = ny;
            loop {
                if i == 0 {
                    let p = hits as f64 / combos as f64;
                    return Ok(outcome(
                        p,
                        Resampling::Exact {
                            evaluations: combos,
                        },
                        None,
                    ));
                }
                i -= 1;
                if idx[i] != i + n - ny {
                    break;
                }
            }
            post_sum -= pooled[idx[i]];
            idx[i] += 1;
            post_sum += pooled[idx[i]];
            for j in i + 1..ny {
                post_sum -= pooled[idx[j]];
                idx[j] = idx[j - 1] + 1;
                post_sum += pooled[idx[j]];
            }
        }
    }

    if n_perm == 0 {
        return Err(Error::ZeroPermutations);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut hits: u64 = 0;
    for _ in 0..n_perm {
        let chosen = rand::seq::index::sample(&mut rng, n, ny);
        let post_sum: f64 = chosen.iter().map(|i| pooled[i]).sum();
        if extreme(stat_of_sum(post_sum)) {
            hits += 1;
        }
    }
    // Add-one correction: counts the observed labeling itself, which keeps
    // the p-value stochastically valid under the null.
    let p = (1 + hits) as f64 / (1 + n_perm) as f64;
    Ok(outcome(p, Resampling::MonteCarlo { draws: n_perm }, Some(seed)))
}
