//! Split-sample changepoint detection with binary segmentation.
//!
//! The detector separates *locating* a candidate from *testing* it. With
//! splitting enabled (the default), a series is interleaved into odd- and
//! even-position halves: the likelihood-ratio profile of the odd half
//! proposes a candidate, and a hypothesis test on the even half confirms or
//! rejects it. Because the halves are disjoint, the confirmation test never
//! sees the data that chose the candidate, so its level holds despite the
//! search. Disabling splitting reuses the full series for both steps and is
//! provided as the miscalibrated baseline it is.
//!
//! Multiple changes are found by binary segmentation: test a segment, and on
//! a flag recurse into both sides. Candidates are only accepted at least
//! `min_segment` observations from the ends of the segment they were found
//! in, so flagged changepoints always define segments of length at least
//! `min_segment` and recursion never produces a segment too short to test.

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::Error;
use crate::hypotests::{self, ContingencyTable, TestMethod, TestOutcome};
use crate::loglik;
use crate::seed;
use crate::series::{MetricKind, MetricSeries};
use crate::Result;

/// Which confirmation test to run on the held-out half.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TestChoice {
    FisherExact,
    PermutationShift,
    /// Fisher for binary series with `delta == 0`, permutation otherwise.
    Auto,
}

/// Multiple-testing correction across the segmentation recursion.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Correction {
    None,
    /// Divides alpha by the running number of tests performed on the series.
    Bonferroni,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DetectionConfig {
    /// Significance level for each confirmation test.
    pub alpha: f64,
    /// Smallest shift considered practically meaningful, in metric units.
    /// Zero tests plain no-change.
    pub delta: f64,
    pub test: TestChoice,
    /// Minimum distance from segment ends for a flag, and minimum child
    /// segment length during recursion.
    pub min_segment: usize,
    /// Minimum observations on each side of a scanned split. Raised to 2
    /// automatically for continuous series, which need variance estimates.
    pub min_side: usize,
    /// Monte Carlo draws when a permutation null is too large to enumerate.
    pub n_perm: u64,
    pub seed: u64,
    /// Split into odd/even halves for candidate search vs confirmation.
    pub use_split: bool,
    pub correction: Correction,
}

impl Default for DetectionConfig {
    fn default() -> Self {
        DetectionConfig {
            alpha: 0.05,
            delta: 0.0,
            test: TestChoice::Auto,
            min_segment: 50,
            min_side: 1,
            n_perm: 10_000,
            seed: 0,
            use_split: true,
            correction: Correction::None,
        }
    }
}

impl DetectionConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::InvalidAlpha(self.alpha));
        }
        if !(self.delta >= 0.0) || !self.delta.is_finite() {
            return Err(Error::InvalidShift(self.delta));
        }
        if self.min_segment == 0 {
            return Err(Error::InvalidConfig("min_segment must be at least 1".into()));
        }
        if self.min_side == 0 {
            return Err(Error::InvalidConfig("min_side must be at least 1".into()));
        }
        if self.n_perm == 0 {
            return Err(Error::ZeroPermutations);
        }
        Ok(())
    }

    /// Test actually used for a series of the given kind.
    pub fn resolved_test(&self, kind: MetricKind) -> Result<TestMethod> {
        match self.test {
            TestChoice::FisherExact => {
                if kind != MetricKind::Binary {
                    return Err(Error::IncompatibleTest {
                        test: "fisher_exact",
                        kind: kind.as_str(),
                    });
                }
                if self.delta != 0.0 {
                    return Err(Error::InvalidConfig(
                        "fisher_exact cannot encode a shift threshold; use permutation_shift"
                            .into(),
                    ));
                }
                Ok(TestMethod::FisherExact)
            }
            TestChoice::PermutationShift => Ok(TestMethod::PermutationShift),
            TestChoice::Auto => {
                if kind == MetricKind::Binary && self.delta == 0.0 {
                    Ok(TestMethod::FisherExact)
                } else {
                    Ok(TestMethod::PermutationShift)
                }
            }
        }
    }

    fn effective_min_side(&self, kind: MetricKind) -> usize {
        match kind {
            MetricKind::Binary => self.min_side.max(1),
            MetricKind::Continuous => self.min_side.max(2),
        }
    }
}

/// A confirmed change, located at the last observation of the pre segment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Changepoint {
    /// Source-stream index of the candidate observation.
    pub t_original: usize,
    pub p_value: f64,
    /// Mean of all segment observations up to and including the candidate.
    pub mean_before: f64,
    pub mean_after: f64,
    pub candidate_lambda: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub date: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AuditDecision {
    Flagged,
    NotSignificant,
    /// Candidate found, but the held-out half had no observations on one
    /// side of it; declared no changepoint.
    Untestable,
    /// No admissible split position in this segment.
    NoCandidate,
}

/// One record per segment that reached candidate search, in the order
/// segments were processed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestAudit {
    /// Source-stream indices of the segment's first and last observations.
    pub segment_start: usize,
    pub segment_end: usize,
    pub candidate_t_original: Option<usize>,
    pub candidate_lambda: Option<f64>,
    pub p_value: Option<f64>,
    /// Level the test was held to (alpha, possibly Bonferroni-divided).
    pub alpha_used: Option<f64>,
    pub method: Option<TestMethod>,
    pub decision: AuditDecision,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionResult {
    /// Confirmed changepoints in increasing stream order.
    pub changepoints: Vec<Changepoint>,
    /// Every candidate test performed, including failures to flag.
    pub audit: Vec<TestAudit>,
    pub config: DetectionConfig,
}

impl DetectionResult {
    pub fn flagged(&self) -> bool {
        !self.changepoints.is_empty()
    }
}

/// Shared state for one series' segmentation run.
struct Engine<'a> {
    series: &'a MetricSeries,
    cfg: &'a DetectionConfig,
    method: TestMethod,
    min_side: usize,
    tests_run: u64,
}

/// Outcome of scanning one segment.
struct SegmentScan {
    audit: TestAudit,
    /// Position (1-based within the series) of a flagged changepoint.
    flagged_at: Option<usize>,
    changepoint: Option<Changepoint>,
}

impl<'a> Engine<'a> {
    fn new(series: &'a MetricSeries, cfg: &'a DetectionConfig) -> Result<Self> {
        cfg.validate()?;
        series.validate()?;
        let method = cfg.resolved_test(series.kind)?;
        Ok(Engine {
            series,
            cfg,
            method,
            min_side: cfg.effective_min_side(series.kind),
            tests_run: 0,
        })
    }

    fn profile_values(&self, values: &[f64]) -> Result<loglik::LambdaProfile> {
        match self.series.kind {
            MetricKind::Binary => loglik::bernoulli_profile_values(values, self.min_side),
            MetricKind::Continuous => loglik::gaussian_profile_values(values, self.min_side),
        }
    }

    /// Scans positions `s..=e` (1-based, inclusive) of the series.
    fn scan(&mut self, s: usize, e: usize) -> Result<SegmentScan> {
        let values = &self.series.values[s - 1..e];
        let m = self.cfg.min_segment;
        let audit_base = |decision: AuditDecision| TestAudit {
            segment_start: self.series.original_index[s - 1],
            segment_end: self.series.original_index[e - 1],
            candidate_t_original: None,
            candidate_lambda: None,
            p_value: None,
            alpha_used: None,
            method: None,
            decision,
        };

        // Candidate search half and held-out half, as series positions.
        let (scan_values, scan_positions): (Vec<f64>, Vec<usize>) = if self.cfg.use_split {
            ((s..=e).step_by(2).map(|p| self.series.values[p - 1]).collect(),
             (s..=e).step_by(2).collect())
        } else {
            (values.to_vec(), (s..=e).collect())
        };

        let profile = match self.profile_values(&scan_values) {
            Ok(p) => p,
            Err(Error::SeriesTooShort { .. }) => {
                return Ok(SegmentScan {
                    audit: audit_base(AuditDecision::NoCandidate),
                    flagged_at: None,
                    changepoint: None,
                })
            }
            Err(e) => return Err(e),
        };

        // Earliest maximum over candidates far enough from both segment ends.
        let mut best: Option<(usize, f64)> = None;
        for (i, &lambda) in profile.lambda.iter().enumerate() {
            let t_local = profile.t_range.0 + i;
            let pos = scan_positions[t_local - 1];
            if pos + 1 < s + m || e < pos + m {
                continue;
            }
            if best.map_or(true, |(_, l)| lambda > l) {
                best = Some((pos, lambda));
            }
        }
        let Some((cand_pos, lambda_max)) = best else {
            return Ok(SegmentScan {
                audit: audit_base(AuditDecision::NoCandidate),
                flagged_at: None,
                changepoint: None,
            });
        };

        let mut audit = audit_base(AuditDecision::NotSignificant);
        audit.candidate_t_original = Some(self.series.original_index[cand_pos - 1]);
        audit.candidate_lambda = Some(lambda_max);

        // Held-out observations, partitioned at the candidate position.
        let (before, after): (Vec<f64>, Vec<f64>) = if self.cfg.use_split {
            let held: Vec<usize> = ((s + 1)..=e).step_by(2).collect();
            (
                held.iter().filter(|&&p| p <= cand_pos).map(|&p| self.series.values[p - 1]).collect(),
                held.iter().filter(|&&p| p > cand_pos).map(|&p| self.series.values[p - 1]).collect(),
            )
        } else {
            (
                values[..cand_pos - s + 1].to_vec(),
                values[cand_pos - s + 1..].to_vec(),
            )
        };
        if before.is_empty() || after.is_empty() {
            audit.decision = AuditDecision::Untestable;
            return Ok(SegmentScan {
                audit,
                flagged_at: None,
                changepoint: None,
            });
        }

        let outcome: TestOutcome = match self.method {
            TestMethod::FisherExact => {
                let ones = |v: &[f64]| v.iter().filter(|&&x| x == 1.0).count() as u64;
                let (sb, sa) = (ones(&before), ones(&after));
                hypotests::fisher_exact(&ContingencyTable {
                    a: sb,
                    b: before.len() as u64 - sb,
                    c: sa,
                    d: after.len() as u64 - sa,
                })?
            }
            TestMethod::PermutationShift => {
                let test_seed = seed::mix(self.cfg.seed, &[s as u64, e as u64]);
                hypotests::perm_test_shift(
                    &before,
                    &after,
                    self.cfg.delta,
                    self.cfg.n_perm,
                    test_seed,
                )?
            }
        };

        self.tests_run += 1;
        let alpha_used = match self.cfg.correction {
            Correction::None => self.cfg.alpha,
            Correction::Bonferroni => self.cfg.alpha / self.tests_run as f64,
        };
        audit.p_value = Some(outcome.p_value);
        audit.alpha_used = Some(alpha_used);
        audit.method = Some(self.method);

        if outcome.p_value > alpha_used {
            return Ok(SegmentScan {
                audit,
                flagged_at: None,
                changepoint: None,
            });
        }

        audit.decision = AuditDecision::Flagged;
        let seg_before = &self.series.values[s - 1..cand_pos];
        let seg_after = &self.series.values[cand_pos..e];
        let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
        let changepoint = Changepoint {
            t_original: self.series.original_index[cand_pos - 1],
            p_value: outcome.p_value,
            mean_before: mean(seg_before),
            mean_after: mean(seg_after),
            candidate_lambda: lambda_max,
            date: self
                .series
                .timestamp
                .as_ref()
                .map(|ts| ts[cand_pos - 1].clone()),
        };
        Ok(SegmentScan {
            audit,
            flagged_at: Some(cand_pos),
            changepoint: Some(changepoint),
        })
    }
}

/// Structural minimum length below which a segment cannot be scanned at all.
fn structural_min(cfg: &DetectionConfig, kind: MetricKind) -> usize {
    2 * cfg.effective_min_side(kind).max(2)
}

/// Tests the whole series once: zero or one changepoint.
pub fn detect_single(s: &MetricSeries, cfg: &DetectionConfig) -> Result<DetectionResult> {
    let mut engine = Engine::new(s, cfg)?;
    let min_len = 2 * cfg
        .min_segment
        .max(cfg.effective_min_side(s.kind))
        .max(2);
    if s.len() < min_len {
        return Err(Error::SeriesTooShort {
            len: s.len(),
            min: min_len,
        });
    }
    let scan = engine.scan(1, s.len())?;
    Ok(DetectionResult {
        changepoints: scan.changepoint.into_iter().collect(),
        audit: vec![scan.audit],
        config: cfg.clone(),
    })
}

/// Binary segmentation: recursively tests segments, collecting every
/// confirmed changepoint. Segments shorter than `2 * min_segment` are not
/// tested, so an undersized series yields an empty result rather than an
/// error.
pub fn detect_multiple(s: &MetricSeries, cfg: &DetectionConfig) -> Result<DetectionResult> {
    let mut engine = Engine::new(s, cfg)?;
    let n = s.len();
    if n < structural_min(cfg, s.kind) {
        return Err(Error::SeriesTooShort {
            len: n,
            min: structural_min(cfg, s.kind),
        });
    }
    let m = cfg.min_segment;
    let mut queue: VecDeque<(usize, usize)> = VecDeque::from([(1, n)]);
    let mut audit = Vec::new();
    let mut changepoints = Vec::new();
    while let Some((seg_s, seg_e)) = queue.pop_front() {
        let len = seg_e - seg_s + 1;
        if len < 2 * m || len < structural_min(cfg, s.kind) {
            continue;
        }
        let scan = engine.scan(seg_s, seg_e)?;
        audit.push(scan.audit);
        if let (Some(pos), Some(cp)) = (scan.flagged_at, scan.changepoint) {
            changepoints.push(cp);
            // The candidate guard guarantees both children have length >= m.
            if pos - seg_s + 1 >= m {
                queue.push_back((seg_s, pos));
            }
            if seg_e - pos >= m {
                queue.push_back((pos + 1, seg_e));
            }
        }
    }
    changepoints.sort_by_key(|cp: &Changepoint| cp.t_original);
    Ok(DetectionResult {
        changepoints,
        audit,
        config: cfg.clone(),
    })
}

/// Runs [`detect_multiple`] for every series in a cohort, each with a seed
/// derived from its entity id so results do not depend on scheduling.
/// `parallelism` is the worker thread count; 0 uses all available cores.
pub fn detect_cohort(
    players: &[MetricSeries],
    cfg: &DetectionConfig,
    parallelism: usize,
) -> Result<BTreeMap<String, DetectionResult>> {
    cfg.validate()?;
    let mut seen = BTreeSet::new();
    for p in players {
        if !seen.insert(p.entity_id.as_str()) {
            return Err(Error::DuplicateEntityId(p.entity_id.clone()));
        }
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(parallelism)
        .build()
        .map_err(|e| Error::InvalidConfig(format!("thread pool: {e}")))?;
    let results: Result<Vec<(String, DetectionResult)>> = pool.install(|| {
        players
            .par_iter()
            .map(|series| {
                let mut player_cfg = cfg.clone();
                player_cfg.seed = seed::mix_str(cfg.seed, &series.entity_id);
                detect_multiple(series, &player_cfg)
                    .map(|r| (series.entity_id.clone(), r))
            })
            .collect()
    });
    Ok(results?.into_iter().collect())
}

/// Flagged/total counts over a cohort's results.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CohortSummary {
    pub players: usize,
    pub flagged_players: usize,
}

pub fn summarize_cohort(results: &BTreeMap<String, DetectionResult>) -> CohortSummary {
    CohortSummary {
        players: results.len(),
        flagged_players: results.values().filter(|r| r.flagged()).count(),
    }
}

#[derive(Serialize)]
struct EntityRecord<'a> {
    entity_id: &'a str,
    metric: &'a str,
    changepoints: &'a [Changepoint],
    audit: &'a [TestAudit],
    config: &'a DetectionConfig,
}

/// Canonical JSON for a cohort's results: an array of per-entity records in
/// entity order. Identical inputs produce identical bytes.
pub fn cohort_to_json(
    metric: &str,
    results: &BTreeMap<String, DetectionResult>,
) -> Result<String> {
    let records: Vec<EntityRecord> = results
        .iter()
        .map(|(id, r)| EntityRecord {
            entity_id: id,
            metric,
            changepoints: &r.changepoints,
            audit: &r.audit,
            config: &r.config,
        })
        .collect();
    Ok(serde_json::to_string_pretty(&records)?)
}

/// Header for the flat changepoint CSV.
pub const CHANGEPOINT_CSV_HEADER: [&str; 8] = [
    "entity_id",
    "metric",
    "t_original",
    "date",
    "p_value",
    "mean_before",
    "mean_after",
    "candidate_lambda",
];

/// One row per confirmed changepoint across a cohort, in entity order.
pub fn changepoint_csv_rows(
    metric: &str,
    results: &BTreeMap<String, DetectionResult>,
) -> Vec<[String; 8]> {
    let mut rows = Vec::new();
    for (id, result) in results {
        for cp in &result.changepoints {
            rows.push([
                id.clone(),
                metric.to_string(),
                cp.t_original.to_string(),
                cp.date.clone().unwrap_or_default(),
                format!("{}", cp.p_value),
                format!("{}", cp.mean_before),
                format!("{}", cp.mean_after),
                format!("{}", cp.candidate_lambda),
            ]);
        }
    }
    rows
}
