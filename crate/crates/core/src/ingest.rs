//! Pitch-level CSV ingestion and per-entity metric derivation.
//!
//! The loader reads event CSVs in the Statcast export layout (column names
//! are remappable), normalizes each row into a [`PitchEvent`], and skips
//! rows it cannot interpret while recording why. Derivation then turns an
//! event stream into per-entity metric series: chase and whiff rates for
//! batters, per-pitch-type release speed for pitchers. Each derived series
//! is indexed by the entity's own event order, so a detected changepoint
//! names the k-th qualifying event, not a row number in the file.

use std::collections::{BTreeMap, BTreeSet};
use std::io::Read;
use std::path::Path;

use chrono::{Datelike, NaiveDate};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::detect::{self, DetectionConfig};
use crate::error::Error;
use crate::seed;
use crate::series::{MetricKind, MetricSeries};
use crate::Result;

/// One pitch, normalized. `made_contact` is `None` when there was no swing.
#[derive(Debug, Clone, PartialEq)]
pub struct PitchEvent {
    pub game_date: NaiveDate,
    pub pitcher_id: String,
    pub batter_id: String,
    pub pitch_type: String,
    pub release_speed: Option<f64>,
    /// `Some(true)` for attack-zone locations, `Some(false)` for clear
    /// out-of-zone locations, `None` when the location is unknown.
    pub in_zone: Option<bool>,
    pub swung: bool,
    pub made_contact: Option<bool>,
    pub inning: Option<u32>,
    pub season: i32,
}

/// Column names in the input CSV. Defaults match Statcast exports.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SchemaMap {
    pub game_date: String,
    pub pitcher: String,
    pub batter: String,
    pub pitch_type: String,
    pub description: String,
    pub release_speed: String,
    pub zone: String,
    pub inning: String,
}

impl Default for SchemaMap {
    fn default() -> Self {
        SchemaMap {
            game_date: "game_date".into(),
            pitcher: "pitcher".into(),
            batter: "batter".into(),
            pitch_type: "pitch_type".into(),
            description: "description".into(),
            release_speed: "release_speed".into(),
            zone: "zone".into(),
            inning: "inning".into(),
        }
    }
}

/// Maps pitch outcome descriptions to swing and contact flags. Descriptions
/// not listed anywhere are treated as takes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SwingMap {
    pub swing_no_contact: Vec<String>,
    pub swing_contact: Vec<String>,
    pub no_swing: Vec<String>,
}

impl Default for SwingMap {
    fn default() -> Self {
        serde_json::from_str(include_str!("../data/swing_map.json"))
            .expect("bundled swing map parses")
    }
}

impl SwingMap {
    /// Returns `(swung, made_contact)`.
    pub fn classify(&self, description: &str) -> (bool, Option<bool>) {
        if self.swing_no_contact.iter().any(|d| d == description) {
            (true, Some(false))
        } else if self.swing_contact.iter().any(|d| d == description) {
            (true, Some(true))
        } else {
            (false, None)
        }
    }
}

/// A row the loader refused, with its 1-based line number in the file.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SkippedRow {
    pub line: u64,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LoadOutcome {
    /// Events in chronological order. The sort is stable, so within a date
    /// the file's row order is preserved.
    pub events: Vec<PitchEvent>,
    pub skipped: Vec<SkippedRow>,
}

fn parse_date(text: &str) -> Option<NaiveDate> {
    NaiveDate::parse_from_str(text, "%Y-%m-%d")
        .or_else(|_| NaiveDate::parse_from_str(text, "%m/%d/%Y"))
        .ok()
}

fn parse_optional_f64(text: &str) -> std::result::Result<Option<f64>, String> {
    let t = text.trim();
    if t.is_empty() || t == "null" || t == "NA" || t == "NaN" {
        return Ok(None);
    }
    match t.parse::<f64>() {
        Ok(v) if v.is_finite() => Ok(Some(v)),
        _ => Err(format!("unparseable number {t:?}")),
    }
}

/// Zone codes: 1..=9 are the attack zone, 11..=14 the shadow and chase
/// areas outside it.
fn parse_zone(text: &str) -> std::result::Result<Option<bool>, String> {
    let v = match parse_optional_f64(text)? {
        Some(v) => v,
        None => return Ok(None),
    };
    if v.fract() != 0.0 {
        return Err(format!("non-integer zone {text:?}"));
    }
    match v as i64 {
        1..=9 => Ok(Some(true)),
        11..=14 => Ok(Some(false)),
        _ => Err(format!("zone {text:?} outside 1-9/11-14")),
    }
}

fn parse_inning(text: &str) -> std::result::Result<Option<u32>, String> {
    let v = match parse_optional_f64(text)? {
        Some(v) => v,
        None => return Ok(None),
    };
    if v.fract() != 0.0 || v < 1.0 || v > 30.0 {
        return Err(format!("implausible inning {text:?}"));
    }
    Ok(Some(v as u32))
}

pub fn load_pitch_csv<R: Read>(
    reader: R,
    schema: &SchemaMap,
    swing: &SwingMap,
) -> Result<LoadOutcome> {
    let mut csv_reader = csv::ReaderBuilder::new()
        .flexible(false)
        .from_reader(reader);
    let headers = csv_reader.headers()?.clone();
    let col = |name: &str| headers.iter().position(|h| h == name);
    let require = |name: &str| col(name).ok_or_else(|| Error::MissingColumn(name.to_string()));

    let date_i = require(&schema.game_date)?;
    let pitcher_i = require(&schema.pitcher)?;
    let batter_i = require(&schema.batter)?;
    let pitch_type_i = require(&schema.pitch_type)?;
    let description_i = require(&schema.description)?;
    let speed_i = col(&schema.release_speed);
    let zone_i = col(&schema.zone);
    let inning_i = col(&schema.inning);

    let mut events = Vec::new();
    let mut skipped = Vec::new();
    for record in csv_reader.records() {
        let record = record?;
        let line = record.position().map_or(0, |p| p.line());
        let mut skip = |reason: String| skipped.push(SkippedRow { line, reason });

        let field = |i: usize| record.get(i).unwrap_or("").trim();
        let game_date = match parse_date(field(date_i)) {
            Some(d) => d,
            None => {
                skip(format!("unparseable game date {:?}", field(date_i)));
                continue;
            }
        };
        let pitcher_id = field(pitcher_i).to_string();
        let batter_id = field(batter_i).to_string();
        if pitcher_id.is_empty() || batter_id.is_empty() {
            skip("missing pitcher or batter id".into());
            continue;
        }
        let release_speed = match speed_i.map(|i| parse_optional_f64(field(i))).transpose() {
            Ok(v) => v.flatten(),
            Err(reason) => {
                skip(reason);
                continue;
            }
        };
        let in_zone = match zone_i.map(|i| parse_zone(field(i))).transpose() {
            Ok(v) => v.flatten(),
            Err(reason) => {
                skip(reason);
                continue;
            }
        };
        let inning = match inning_i.map(|i| parse_inning(field(i))).transpose() {
            Ok(v) => v.flatten(),
            Err(reason) => {
                skip(reason);
                continue;
            }
        };
        let (swung, made_contact) = swing.classify(field(description_i));
        events.push(PitchEvent {
            game_date,
            pitcher_id,
            batter_id,
            pitch_type: field(pitch_type_i).to_string(),
            release_speed,
            in_zone,
            swung,
            made_contact,
            inning,
            season: game_date.year(),
        });
    }
    events.sort_by_key(|e| e.game_date);
    Ok(LoadOutcome { events, skipped })
}

pub fn load_pitch_csv_path(
    path: &Path,
    schema: &SchemaMap,
    swing: &SwingMap,
) -> Result<LoadOutcome> {
    load_pitch_csv(std::fs::File::open(path)?, schema, swing)
}

/// A per-entity metric that can be derived from an event stream.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum DerivedMetric {
    /// Swing rate on out-of-zone pitches, per batter.
    Chase,
    /// Miss rate on swings, per batter.
    Whiff,
    /// Release speed for one pitch type, per pitcher.
    Velocity { pitch_type: String },
}

impl DerivedMetric {
    pub fn kind(&self) -> MetricKind {
        match self {
            DerivedMetric::Chase | DerivedMetric::Whiff => MetricKind::Binary,
            DerivedMetric::Velocity { .. } => MetricKind::Continuous,
        }
    }

    pub fn label(&self) -> String {
        match self {
            DerivedMetric::Chase => "chase".into(),
            DerivedMetric::Whiff => "whiff".into(),
            DerivedMetric::Velocity { pitch_type } => {
                format!("{}_velo", pitch_type.to_lowercase())
            }
        }
    }

    /// Entity id and value for one event, when the event qualifies.
    fn observe(&self, e: &PitchEvent) -> Option<(String, f64)> {
        match self {
            DerivedMetric::Chase => match e.in_zone {
                Some(false) => Some((e.batter_id.clone(), f64::from(u8::from(e.swung)))),
                _ => None,
            },
            DerivedMetric::Whiff => {
                if e.swung {
                    let missed = e.made_contact == Some(false);
                    Some((e.batter_id.clone(), f64::from(u8::from(missed))))
                } else {
                    None
                }
            }
            DerivedMetric::Velocity { pitch_type } => {
                if e.pitch_type == *pitch_type {
                    e.release_speed.map(|v| (e.pitcher_id.clone(), v))
                } else {
                    None
                }
            }
        }
    }
}

fn assemble_series(
    entity_id: String,
    label: String,
    kind: MetricKind,
    observations: Vec<(f64, NaiveDate)>,
) -> Result<MetricSeries> {
    let n = observations.len();
    let mut values = Vec::with_capacity(n);
    let mut dates = Vec::with_capacity(n);
    for (v, d) in observations {
        values.push(v);
        dates.push(d.to_string());
    }
    let series = MetricSeries {
        values,
        kind,
        original_index: (1..=n).collect(),
        entity_id,
        label,
        timestamp: Some(dates),
    };
    series.validate()?;
    Ok(series)
}

/// Derives one entity's series. Errors when no event qualifies.
pub fn derive_series(
    events: &[PitchEvent],
    metric: &DerivedMetric,
    entity_id: &str,
) -> Result<MetricSeries> {
    let observations: Vec<(f64, NaiveDate)> = events
        .iter()
        .filter_map(|e| {
            metric
                .observe(e)
                .filter(|(id, _)| id == entity_id)
                .map(|(_, v)| (v, e.game_date))
        })
        .collect();
    if observations.is_empty() {
        return Err(Error::EmptyDerivedSeries {
            entity: entity_id.to_string(),
            label: metric.label(),
        });
    }
    assemble_series(entity_id.to_string(), metric.label(), metric.kind(), observations)
}

pub fn derive_chase(events: &[PitchEvent], batter: &str) -> Result<MetricSeries> {
    derive_series(events, &DerivedMetric::Chase, batter)
}

pub fn derive_whiff(events: &[PitchEvent], batter: &str) -> Result<MetricSeries> {
    derive_series(events, &DerivedMetric::Whiff, batter)
}

pub fn derive_velocity(
    events: &[PitchEvent],
    pitcher: &str,
    pitch_type: &str,
) -> Result<MetricSeries> {
    derive_series(
        events,
        &DerivedMetric::Velocity {
            pitch_type: pitch_type.to_string(),
        },
        pitcher,
    )
}

/// Derives a series for every entity with at least `min_events` qualifying
/// events, in entity order.
pub fn derive_cohort(
    events: &[PitchEvent],
    metric: &DerivedMetric,
    min_events: usize,
) -> Result<Vec<MetricSeries>> {
    let mut grouped: BTreeMap<String, Vec<(f64, NaiveDate)>> = BTreeMap::new();
    for e in events {
        if let Some((id, v)) = metric.observe(e) {
            grouped.entry(id).or_default().push((v, e.game_date));
        }
    }
    grouped
        .into_iter()
        .filter(|(_, obs)| obs.len() >= min_events.max(1))
        .map(|(id, obs)| assemble_series(id, metric.label(), metric.kind(), obs))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Starter,
    Reliever,
    Mixed,
}

/// Usage profile of one pitcher, from outing shapes.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RoleSummary {
    pub pitcher_id: String,
    pub role: Role,
    /// Outings covering more than four distinct innings.
    pub long_outings: usize,
    /// Outings entered in the fifth inning or later.
    pub late_entries: usize,
    /// Outings with inning information.
    pub outings: usize,
    /// Mean distinct innings per outing. Run per season slice to compare
    /// workloads across seasons.
    pub avg_innings: f64,
}

/// Classifies pitchers by outing shape. An outing is one pitcher-date pair;
/// outings without inning data are ignored. More than ten long outings and
/// fewer than five late entries reads as a starter, more than ten late
/// entries with at most ten long outings as a reliever, anything else as
/// mixed usage.
pub fn classify_roles(events: &[PitchEvent]) -> Vec<RoleSummary> {
    let mut outings: BTreeMap<(String, NaiveDate), BTreeSet<u32>> = BTreeMap::new();
    for e in events {
        if let Some(inning) = e.inning {
            outings
                .entry((e.pitcher_id.clone(), e.game_date))
                .or_default()
                .insert(inning);
        }
    }
    #[derive(Default)]
    struct Agg {
        long_outings: usize,
        late_entries: usize,
        outings: usize,
        total_innings: usize,
    }
    let mut per_pitcher: BTreeMap<String, Agg> = BTreeMap::new();
    for ((pitcher, _), innings) in outings {
        let agg = per_pitcher.entry(pitcher).or_default();
        agg.outings += 1;
        agg.total_innings += innings.len();
        if innings.len() > 4 {
            agg.long_outings += 1;
        }
        if innings.iter().next().copied().unwrap_or(1) >= 5 {
            agg.late_entries += 1;
        }
    }
    per_pitcher
        .into_iter()
        .map(|(pitcher_id, agg)| {
            let role = if agg.long_outings > 10 && agg.late_entries < 5 {
                Role::Starter
            } else if agg.late_entries > 10 && agg.long_outings <= 10 {
                Role::Reliever
            } else {
                Role::Mixed
            };
            RoleSummary {
                pitcher_id,
                role,
                long_outings: agg.long_outings,
                late_entries: agg.late_entries,
                outings: agg.outings,
                avg_innings: agg.total_innings as f64 / agg.outings as f64,
            }
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FastballType {
    FourSeam,
    Sinker,
}

impl FastballType {
    pub fn pitch_code(self) -> &'static str {
        match self {
            FastballType::FourSeam => "FF",
            FastballType::Sinker => "SI",
        }
    }

    pub fn parse(text: &str) -> Result<Self> {
        match text.trim().to_ascii_uppercase().as_str() {
            "FF" | "FOUR_SEAM" | "FOUR-SEAM" => Ok(FastballType::FourSeam),
            "SI" | "SINKER" => Ok(FastballType::Sinker),
            other => Err(Error::InvalidSpec(format!(
                "unknown fastball type {other:?}, expected FF or SI"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RosterEntry {
    pub pitcher_id: String,
    pub primary_fastball: FastballType,
}

/// Reads a roster CSV with columns `pitcher` and `primary_fastball`.
pub fn load_roster_csv<R: Read>(reader: R) -> Result<Vec<RosterEntry>> {
    let mut csv_reader = csv::Reader::from_reader(reader);
    let headers = csv_reader.headers()?.clone();
    let pitcher_i = headers
        .iter()
        .position(|h| h == "pitcher")
        .ok_or_else(|| Error::MissingColumn("pitcher".into()))?;
    let fastball_i = headers
        .iter()
        .position(|h| h == "primary_fastball")
        .ok_or_else(|| Error::MissingColumn("primary_fastball".into()))?;
    let mut roster = Vec::new();
    for record in csv_reader.records() {
        let record = record?;
        let pitcher_id = record.get(pitcher_i).unwrap_or("").trim().to_string();
        if pitcher_id.is_empty() {
            continue;
        }
        roster.push(RosterEntry {
            pitcher_id,
            primary_fastball: FastballType::parse(record.get(fastball_i).unwrap_or(""))?,
        });
    }
    Ok(roster)
}

/// Detection outcome for one rostered pitcher across a shift ladder.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GroundTruthRow {
    pub pitcher_id: String,
    pub pitch_type: String,
    pub n_pitches: usize,
    /// Flagged at the smallest ladder shift.
    pub flagged: bool,
    /// Largest ladder shift at which the pitcher is still flagged.
    pub max_cp_threshold: Option<f64>,
    pub flagged_deltas: Vec<f64>,
    /// Whether the flagged shifts form a prefix of the ascending ladder.
    /// Candidate search never depends on the shift and each pitcher's seed
    /// is fixed across the ladder, so this should always hold; it is
    /// recorded so a violation is visible rather than silently absorbed.
    pub monotone: bool,
}

/// Runs detection on each rostered pitcher's primary-fastball velocity at
/// every shift in the ladder. The detection seed is derived per pitcher and
/// shared across the ladder, so shifts differ only in the test threshold.
/// `cfg.delta` is ignored; the ladder supplies it.
pub fn evaluate_ground_truth(
    events: &[PitchEvent],
    roster: &[RosterEntry],
    cfg: &DetectionConfig,
    ladder: &[f64],
) -> Result<Vec<GroundTruthRow>> {
    cfg.validate()?;
    if ladder.is_empty() {
        return Err(Error::EmptyLadder);
    }
    let mut deltas = ladder.to_vec();
    for &d in &deltas {
        if !d.is_finite() || d < 0.0 {
            return Err(Error::InvalidShift(d));
        }
    }
    deltas.sort_by(|a, b| a.partial_cmp(b).expect("finite deltas"));

    roster
        .par_iter()
        .map(|entry| {
            let code = entry.primary_fastball.pitch_code();
            let series = derive_velocity(events, &entry.pitcher_id, code)
                .map_err(|e| match e {
                    Error::EmptyDerivedSeries { entity, .. } => Error::MissingPitcher(entity),
                    other => other,
                })?;
            let pitcher_seed = seed::mix_str(cfg.seed, &entry.pitcher_id);
            let mut flagged_deltas = Vec::new();
            for &delta in &deltas {
                let run_cfg = DetectionConfig {
                    delta,
                    seed: pitcher_seed,
                    ..cfg.clone()
                };
                if detect::detect_multiple(&series, &run_cfg)?.flagged() {
                    flagged_deltas.push(delta);
                }
            }
            let monotone = flagged_deltas.as_slice() == &deltas[..flagged_deltas.len()];
            Ok(GroundTruthRow {
                pitcher_id: entry.pitcher_id.clone(),
                pitch_type: code.to_string(),
                n_pitches: series.len(),
                flagged: flagged_deltas.first() == deltas.first(),
                max_cp_threshold: flagged_deltas.last().copied(),
                flagged_deltas,
                monotone,
            })
        })
        .collect()
}

/// Fraction of rows flagged at the smallest ladder shift.
pub fn ground_truth_flag_fraction(rows: &[GroundTruthRow]) -> f64 {
    if rows.is_empty() {
        return 0.0;
    }
    rows.iter().filter(|r| r.flagged).count() as f64 / rows.len() as f64
}

pub const GROUNDTRUTH_CSV_HEADER: [&str; 7] = [
    "pitcher_id",
    "pitch_type",
    "n_pitches",
    "flagged",
    "max_cp_threshold",
    "flagged_deltas",
    "monotone",
];

pub fn ground_truth_csv_rows(rows: &[GroundTruthRow]) -> Vec<[String; 7]> {
    rows.iter()
        .map(|r| {
            [
                r.pitcher_id.clone(),
                r.pitch_type.clone(),
                r.n_pitches.to_string(),
                r.flagged.to_string(),
                r.max_cp_threshold
                    .map_or_else(|| "NA".to_string(), |d| format!("{d}")),
                r.flagged_deltas
                    .iter()
                    .map(|d| format!("{d}"))
                    .collect::<Vec<_>>()
                    .join(";"),
                r.monotone.to_string(),
            ]
        })
        .collect()
}
