//! The `driftscan` command-line tool.
//!
//! Four subcommands: `stabilize` estimates per-metric stabilization points
//! and anytime confidence sequences from event-level trials, `detect` finds
//! changepoints in metric series derived from pitch-event CSVs, `simulate`
//! estimates flag rates on generated series, and `groundtruth` ranks
//! rostered pitchers by the largest shift at which their fastball velocity
//! still flags.
//!
//! Exit codes: 0 on success, 1 for invalid arguments or data, 2 for I/O
//! failures. Statistical outputs carry no timestamps, so rerunning a
//! command with the same inputs and seed reproduces them byte for byte;
//! run provenance lives in `manifest.json` instead.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};

use chrono::NaiveDate;
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use crate::detect::{self, Correction, DetectionConfig, TestChoice};
use crate::error::Error;
use crate::ingest::{self, DerivedMetric, SchemaMap, SwingMap};
use crate::seed;
use crate::series::{new_metric_series, rolling_mean, MetricKind};
use crate::simgen::{self, PlantedSpec};
use crate::stabilization::{self, SequenceCorrection};
use crate::Result;

#[derive(Parser, Debug)]
#[command(
    name = "driftscan",
    version,
    about = "Stabilization points and changepoint detection for performance metrics"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Estimate stabilization points and write anytime confidence sequences
    Stabilize(StabilizeArgs),
    /// Detect changepoints in per-entity series derived from pitch events
    Detect(DetectArgs),
    /// Estimate flag rates of a detection config on generated series
    Simulate(SimulateArgs),
    /// Rank rostered pitchers by the largest flagged velocity shift
    Groundtruth(GroundtruthArgs),
}

#[derive(Args, Debug)]
struct StabilizeArgs {
    /// Event-level CSV with columns metric, entity_id, value (0 or 1)
    #[arg(long)]
    input: PathBuf,
    /// Directory for stabilization.csv, confidence_sequences.csv, manifest.json
    #[arg(long, default_value = ".")]
    out: PathBuf,
    /// Significance level for the confidence sequences
    #[arg(long, default_value_t = 0.05)]
    alpha: f64,
    /// Metric bounds as "lo,hi"
    #[arg(long, default_value = "0,1", value_parser = parse_bounds)]
    bounds: (f64, f64),
    /// Spend alpha across steps so the whole sequence holds jointly
    #[arg(long)]
    union_bound: bool,
}

#[derive(ValueEnum, Clone, Copy, Debug)]
enum MetricArg {
    Chase,
    Whiff,
    Velocity,
}

#[derive(ValueEnum, Clone, Copy, Debug)]
enum TestArg {
    Auto,
    Fisher,
    Perm,
}

impl From<TestArg> for TestChoice {
    fn from(t: TestArg) -> TestChoice {
        match t {
            TestArg::Auto => TestChoice::Auto,
            TestArg::Fisher => TestChoice::FisherExact,
            TestArg::Perm => TestChoice::PermutationShift,
        }
    }
}

/// Detection options shared by `detect` and `groundtruth`. Every flag
/// overrides the corresponding value from `--config` (or the file named by
/// `DRIFTSCAN_CONFIG`); unset flags leave the config value in place.
#[derive(Args, Debug, Default)]
struct DetectionFlags {
    /// Significance level per confirmation test
    #[arg(long)]
    alpha: Option<f64>,
    /// Smallest practically meaningful shift, in metric units
    #[arg(long)]
    delta: Option<f64>,
    /// Confirmation test; auto picks Fisher for binary series at delta 0
    #[arg(long, value_enum)]
    test: Option<TestArg>,
    /// Minimum segment length, and minimum flag distance from segment ends
    #[arg(long)]
    min_segment: Option<usize>,
    /// Minimum observations on each side of a scanned split
    #[arg(long)]
    min_side: Option<usize>,
    /// Monte Carlo permutation draws
    #[arg(long)]
    n_perm: Option<u64>,
    #[arg(long)]
    seed: Option<u64>,
    /// Locate and test on the full series instead of held-out halves
    #[arg(long)]
    no_split: bool,
    /// Divide alpha by the running test count
    #[arg(long)]
    bonferroni: bool,
    /// TOML or JSON detection config file
    #[arg(long)]
    config: Option<PathBuf>,
}

impl DetectionFlags {
    fn resolve(&self) -> Result<DetectionConfig> {
        let path = self
            .config
            .clone()
            .or_else(|| std::env::var_os("DRIFTSCAN_CONFIG").map(PathBuf::from));
        let mut cfg = match path {
            Some(p) => load_detection_config(&p)?,
            None => DetectionConfig::default(),
        };
        if let Some(v) = self.alpha {
            cfg.alpha = v;
        }
        if let Some(v) = self.delta {
            cfg.delta = v;
        }
        if let Some(v) = self.test {
            cfg.test = v.into();
        }
        if let Some(v) = self.min_segment {
            cfg.min_segment = v;
        }
        if let Some(v) = self.min_side {
            cfg.min_side = v;
        }
        if let Some(v) = self.n_perm {
            cfg.n_perm = v;
        }
        if let Some(v) = self.seed {
            cfg.seed = v;
        }
        if self.no_split {
            cfg.use_split = false;
        }
        if self.bonferroni {
            cfg.correction = Correction::Bonferroni;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn load_detection_config(path: &Path) -> Result<DetectionConfig> {
    let text = fs::read_to_string(path)?;
    let named = |e: String| Error::InvalidConfig(format!("{}: {e}", path.display()));
    match path.extension().and_then(|e| e.to_str()).unwrap_or("") {
        "toml" => toml::from_str(&text).map_err(|e| named(e.to_string())),
        "json" => serde_json::from_str(&text).map_err(|e| named(e.to_string())),
        other => Err(Error::InvalidConfig(format!(
            "config {} has unsupported extension {other:?}, expected .toml or .json",
            path.display()
        ))),
    }
}

#[derive(Args, Debug)]
struct DetectArgs {
    /// Pitch-event CSV (Statcast column layout by default)
    #[arg(long)]
    input: PathBuf,
    #[arg(long, value_enum)]
    metric: MetricArg,
    /// Pitch type code for the velocity metric, e.g. FF or SI
    #[arg(long)]
    pitch_type: Option<String>,
    /// Directory for detections.json, changepoints.csv, rolling_means.csv
    #[arg(long, default_value = ".")]
    out: PathBuf,
    /// Entities with fewer qualifying events are skipped
    #[arg(long, default_value_t = 100)]
    min_events: usize,
    /// Window for the descriptive rolling-mean output
    #[arg(long, default_value_t = 50)]
    window: usize,
    /// Worker threads; 0 uses all cores
    #[arg(long, default_value_t = 0)]
    jobs: usize,
    /// Keep only events on or after this date (YYYY-MM-DD)
    #[arg(long)]
    from_date: Option<NaiveDate>,
    /// Keep only events on or before this date (YYYY-MM-DD)
    #[arg(long)]
    to_date: Option<NaiveDate>,
    /// JSON file remapping input column names
    #[arg(long)]
    schema: Option<PathBuf>,
    /// JSON file mapping outcome descriptions to swing and contact flags
    #[arg(long)]
    swing_map: Option<PathBuf>,
    #[command(flatten)]
    detection: DetectionFlags,
}

#[derive(Args, Debug)]
struct SimulateArgs {
    /// JSON array of {name, spec, config?} generator grid entries
    #[arg(long)]
    grid: PathBuf,
    /// Directory for rates.csv and manifest.json
    #[arg(long, default_value = ".")]
    out: PathBuf,
    /// Replications per grid entry
    #[arg(long, default_value_t = 500)]
    reps: u64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Worker threads; 0 uses all cores
    #[arg(long, default_value_t = 0)]
    jobs: usize,
}

#[derive(Args, Debug)]
struct GroundtruthArgs {
    /// Pitch-event CSV (Statcast column layout by default)
    #[arg(long)]
    input: PathBuf,
    /// CSV with columns pitcher, primary_fastball (FF or SI)
    #[arg(long)]
    roster: PathBuf,
    /// Comma-separated shift ladder in mph; rungs are sorted before use
    #[arg(long, default_value = "0.5,1,2,5")]
    ladder: String,
    /// Directory for groundtruth.csv and manifest.json
    #[arg(long, default_value = ".")]
    out: PathBuf,
    /// Worker threads; 0 uses all cores
    #[arg(long, default_value_t = 0)]
    jobs: usize,
    /// JSON file remapping input column names
    #[arg(long)]
    schema: Option<PathBuf>,
    /// JSON file mapping outcome descriptions to swing and contact flags
    #[arg(long)]
    swing_map: Option<PathBuf>,
    #[command(flatten)]
    detection: DetectionFlags,
}

/// Parses arguments, runs the selected subcommand, and returns the process
/// exit code.
pub fn run() -> i32 {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return code;
        }
    };
    let result = match cli.command {
        Command::Stabilize(args) => run_stabilize(args),
        Command::Detect(args) => run_detect(args),
        Command::Simulate(args) => run_simulate(args),
        Command::Groundtruth(args) => run_groundtruth(args),
    };
    match result {
        Ok(()) => 0,
        Err(err) => {
            eprintln!("error: {err}");
            exit_code(&err)
        }
    }
}

fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Io(_) => 2,
        Error::Csv(e) if matches!(e.kind(), csv::ErrorKind::Io(_)) => 2,
        _ => 1,
    }
}

fn parse_bounds(text: &str) -> std::result::Result<(f64, f64), String> {
    let parts: Vec<&str> = text.split(',').collect();
    if parts.len() != 2 {
        return Err(format!("expected \"lo,hi\", got {text:?}"));
    }
    let parse = |p: &str| {
        p.trim()
            .parse::<f64>()
            .map_err(|_| format!("{p:?} is not a number"))
    };
    Ok((parse(parts[0])?, parse(parts[1])?))
}

fn parse_ladder(text: &str) -> Result<Vec<f64>> {
    let mut out = Vec::new();
    for part in text.split(',') {
        let p = part.trim();
        if p.is_empty() {
            continue;
        }
        out.push(p.parse::<f64>().map_err(|_| {
            Error::InvalidSpec(format!("ladder entry {p:?} is not a number"))
        })?);
    }
    if out.is_empty() {
        return Err(Error::EmptyLadder);
    }
    Ok(out)
}

fn load_json_or_default<T: Default + serde::de::DeserializeOwned>(
    path: &Option<PathBuf>,
    what: &str,
) -> Result<T> {
    match path {
        Some(p) => serde_json::from_str(&fs::read_to_string(p)?)
            .map_err(|e| Error::InvalidConfig(format!("{what} {}: {e}", p.display()))),
        None => Ok(T::default()),
    }
}

/// Best effort: the global worker pool can only be configured once.
fn init_thread_pool(jobs: usize) {
    if jobs > 0 {
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build_global();
    }
}

/// Run provenance, written next to the outputs it lists. This is the only
/// artifact carrying wall-clock times; the statistical outputs stay
/// byte-reproducible.
#[derive(Serialize)]
struct Manifest {
    command: String,
    version: &'static str,
    started_utc: String,
    finished_utc: String,
    seed: Option<u64>,
    inputs: Vec<String>,
    output_dir: String,
    outputs: Vec<String>,
    config: serde_json::Value,
}

fn write_manifest(
    out_dir: &Path,
    command: &str,
    started: chrono::DateTime<chrono::Utc>,
    seed: Option<u64>,
    inputs: &[&Path],
    outputs: &[&str],
    config: serde_json::Value,
) -> Result<()> {
    let manifest = Manifest {
        command: command.to_string(),
        version: env!("CARGO_PKG_VERSION"),
        started_utc: started.to_rfc3339(),
        finished_utc: chrono::Utc::now().to_rfc3339(),
        seed,
        inputs: inputs.iter().map(|p| p.display().to_string()).collect(),
        output_dir: out_dir.display().to_string(),
        outputs: outputs.iter().map(|s| s.to_string()).collect(),
        config,
    };
    let text = serde_json::to_string_pretty(&manifest)?;
    fs::write(out_dir.join("manifest.json"), text + "\n")?;
    Ok(())
}

fn write_csv<const W: usize>(
    path: &Path,
    header: [&str; W],
    rows: impl IntoIterator<Item = [String; W]>,
) -> Result<()> {
    let mut writer = csv::Writer::from_path(path)?;
    writer.write_record(header)?;
    for row in rows {
        writer.write_record(&row)?;
    }
    writer.flush()?;
    Ok(())
}

fn run_stabilize(args: StabilizeArgs) -> Result<()> {
    let started = chrono::Utc::now();
    // Config is checked before the input file is opened, so a bad flag
    // never turns into a misleading I/O error.
    if !(args.alpha > 0.0 && args.alpha < 1.0) {
        return Err(Error::InvalidAlpha(args.alpha));
    }
    let (lo, hi) = args.bounds;
    if !(lo.is_finite() && hi.is_finite() && hi > lo) {
        return Err(Error::InvalidBounds { lo, hi });
    }
    let correction = if args.union_bound {
        SequenceCorrection::UnionBound
    } else {
        SequenceCorrection::Pointwise
    };

    let mut reader = csv::Reader::from_path(&args.input)?;
    let headers = reader.headers()?.clone();
    let col = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::MissingColumn(name.to_string()))
    };
    let metric_i = col("metric")?;
    let entity_i = col("entity_id")?;
    let value_i = col("value")?;

    // metric -> entity -> trial values in file order
    let mut trials: BTreeMap<String, BTreeMap<String, Vec<f64>>> = BTreeMap::new();
    for record in reader.records() {
        let record = record?;
        let line = record.position().map_or(0, |p| p.line()) as usize;
        let value: f64 = record
            .get(value_i)
            .unwrap_or("")
            .trim()
            .parse()
            .map_err(|_| Error::NonBinaryValue {
                value: f64::NAN,
                position: line,
            })?;
        if value != 0.0 && value != 1.0 {
            return Err(Error::NonBinaryValue {
                value,
                position: line,
            });
        }
        let metric = record.get(metric_i).unwrap_or("").trim().to_string();
        let entity = record.get(entity_i).unwrap_or("").trim().to_string();
        if metric.is_empty() || entity.is_empty() {
            return Err(Error::InvalidSpec(format!(
                "line {line}: empty metric or entity_id"
            )));
        }
        trials
            .entry(metric)
            .or_default()
            .entry(entity)
            .or_default()
            .push(value);
    }
    if trials.is_empty() {
        return Err(Error::EmptySeries);
    }

    let mut report_rows = Vec::new();
    let mut sequence_rows = Vec::new();
    let mut entity_count = 0;
    for (metric, entities) in &trials {
        let per_player: Vec<(u64, u64)> = entities
            .values()
            .map(|v| (v.iter().sum::<f64>() as u64, v.len() as u64))
            .collect();
        let report = stabilization::cohort_stabilization(&per_player, metric)?;
        report_rows.push(report.csv_record());
        for (entity, values) in entities {
            entity_count += 1;
            let series =
                new_metric_series(values.clone(), MetricKind::Binary, entity.clone(), metric.clone())?;
            let sequence =
                stabilization::confidence_sequence_with(&series, args.alpha, args.bounds, correction)?;
            for ci in sequence {
                sequence_rows.push([
                    metric.clone(),
                    entity.clone(),
                    ci.t.to_string(),
                    format!("{}", ci.center),
                    format!("{}", ci.lower),
                    format!("{}", ci.upper),
                ]);
            }
        }
    }

    fs::create_dir_all(&args.out)?;
    write_csv(
        &args.out.join("stabilization.csv"),
        stabilization::StabilizationReport::CSV_HEADER,
        report_rows,
    )?;
    write_csv(
        &args.out.join("confidence_sequences.csv"),
        ["metric", "entity_id", "t", "mean", "lower", "upper"],
        sequence_rows,
    )?;
    write_manifest(
        &args.out,
        "stabilize",
        started,
        None,
        &[&args.input],
        &["stabilization.csv", "confidence_sequences.csv"],
        serde_json::json!({
            "alpha": args.alpha,
            "bounds": args.bounds,
            "union_bound": args.union_bound,
        }),
    )?;
    println!(
        "{} metrics over {} entity series -> {}",
        trials.len(),
        entity_count,
        args.out.display()
    );
    Ok(())
}

fn run_detect(args: DetectArgs) -> Result<()> {
    let started = chrono::Utc::now();
    let cfg = args.detection.resolve()?;
    let metric = match args.metric {
        MetricArg::Chase => DerivedMetric::Chase,
        MetricArg::Whiff => DerivedMetric::Whiff,
        MetricArg::Velocity => DerivedMetric::Velocity {
            pitch_type: args.pitch_type.clone().ok_or_else(|| {
                Error::InvalidConfig("--pitch-type is required with --metric velocity".into())
            })?,
        },
    };
    if args.window == 0 {
        return Err(Error::ZeroWindow);
    }
    let schema: SchemaMap = load_json_or_default(&args.schema, "schema")?;
    let swing: SwingMap = load_json_or_default(&args.swing_map, "swing map")?;

    let outcome = ingest::load_pitch_csv_path(&args.input, &schema, &swing)?;
    report_skips(&outcome.skipped);
    let mut events = outcome.events;
    if let Some(from) = args.from_date {
        events.retain(|e| e.game_date >= from);
    }
    if let Some(to) = args.to_date {
        events.retain(|e| e.game_date <= to);
    }

    let cohort = ingest::derive_cohort(&events, &metric, args.min_events)?;
    let results = detect::detect_cohort(&cohort, &cfg, args.jobs)?;
    let label = metric.label();

    fs::create_dir_all(&args.out)?;
    let json = detect::cohort_to_json(&label, &results)?;
    fs::write(args.out.join("detections.json"), json + "\n")?;
    write_csv(
        &args.out.join("changepoints.csv"),
        detect::CHANGEPOINT_CSV_HEADER,
        detect::changepoint_csv_rows(&label, &results),
    )?;

    let mut rolling_rows = Vec::new();
    for series in &cohort {
        if series.len() < args.window {
            continue;
        }
        // Marks the window whose last observation is a confirmed changepoint.
        let flagged: BTreeSet<usize> = results
            .get(&series.entity_id)
            .map(|r| r.changepoints.iter().map(|c| c.t_original).collect())
            .unwrap_or_default();
        for (i, mean) in rolling_mean(series, args.window)?.iter().enumerate() {
            let end = i + args.window;
            rolling_rows.push([
                series.entity_id.clone(),
                label.clone(),
                end.to_string(),
                series
                    .timestamp
                    .as_ref()
                    .map_or_else(String::new, |ts| ts[end - 1].clone()),
                format!("{mean}"),
                if flagged.contains(&end) { "1" } else { "0" }.to_string(),
            ]);
        }
    }
    write_csv(
        &args.out.join("rolling_means.csv"),
        ["entity_id", "metric", "t_end", "date", "mean", "changepoint"],
        rolling_rows,
    )?;

    write_manifest(
        &args.out,
        "detect",
        started,
        Some(cfg.seed),
        &[&args.input],
        &["detections.json", "changepoints.csv", "rolling_means.csv"],
        serde_json::json!({
            "detection": cfg,
            "metric": label,
            "min_events": args.min_events,
            "window": args.window,
        }),
    )?;
    let summary = detect::summarize_cohort(&results);
    println!(
        "{} of {} entities flagged on {} -> {}",
        summary.flagged_players,
        summary.players,
        label,
        args.out.display()
    );
    Ok(())
}

#[derive(Deserialize)]
struct GridEntry {
    name: String,
    spec: PlantedSpec,
    #[serde(default)]
    config: DetectionConfig,
}

fn run_simulate(args: SimulateArgs) -> Result<()> {
    let started = chrono::Utc::now();
    let entries: Vec<GridEntry> = serde_json::from_str(&fs::read_to_string(&args.grid)?)
        .map_err(|e| Error::InvalidSpec(format!("grid {}: {e}", args.grid.display())))?;
    if entries.is_empty() {
        return Err(Error::InvalidSpec("grid is empty".into()));
    }
    init_thread_pool(args.jobs);

    let mut rows = Vec::new();
    for entry in &entries {
        let est = simgen::estimate_rates(
            &entry.spec,
            &entry.config,
            args.reps,
            seed::mix_str(args.seed, &entry.name),
        )?;
        rows.push([
            entry.name.clone(),
            format!("{}", est.flag_rate),
            est.localization_mae
                .map_or_else(|| "NA".to_string(), |m| format!("{m}")),
            est.reps.to_string(),
            format!("{}", est.mc_stderr),
        ]);
    }

    fs::create_dir_all(&args.out)?;
    write_csv(
        &args.out.join("rates.csv"),
        ["name", "flag_rate", "localization_mae", "reps", "mc_stderr"],
        rows,
    )?;
    write_manifest(
        &args.out,
        "simulate",
        started,
        Some(args.seed),
        &[&args.grid],
        &["rates.csv"],
        serde_json::json!({ "reps": args.reps }),
    )?;
    println!(
        "{} grid entries x {} reps -> {}",
        entries.len(),
        args.reps,
        args.out.display()
    );
    Ok(())
}

fn run_groundtruth(args: GroundtruthArgs) -> Result<()> {
    let started = chrono::Utc::now();
    let cfg = args.detection.resolve()?;
    let ladder = parse_ladder(&args.ladder)?;
    let schema: SchemaMap = load_json_or_default(&args.schema, "schema")?;
    let swing: SwingMap = load_json_or_default(&args.swing_map, "swing map")?;

    let outcome = ingest::load_pitch_csv_path(&args.input, &schema, &swing)?;
    report_skips(&outcome.skipped);
    let roster = ingest::load_roster_csv(fs::File::open(&args.roster)?)?;
    init_thread_pool(args.jobs);

    let rows = ingest::evaluate_ground_truth(&outcome.events, &roster, &cfg, &ladder)?;
    fs::create_dir_all(&args.out)?;
    write_csv(
        &args.out.join("groundtruth.csv"),
        ingest::GROUNDTRUTH_CSV_HEADER,
        ingest::ground_truth_csv_rows(&rows),
    )?;
    write_manifest(
        &args.out,
        "groundtruth",
        started,
        Some(cfg.seed),
        &[&args.input, &args.roster],
        &["groundtruth.csv"],
        serde_json::json!({ "detection": cfg, "ladder": ladder }),
    )?;
    let flagged = rows.iter().filter(|r| r.flagged).count();
    let smallest = ladder.iter().cloned().fold(f64::INFINITY, f64::min);
    println!(
        "{flagged} of {} pitchers flagged at delta {smallest} -> {}",
        rows.len(),
        args.out.display()
    );
    Ok(())
}

fn report_skips(skipped: &[ingest::SkippedRow]) {
    if skipped.is_empty() {
        return;
    }
    let lines: Vec<u64> = skipped.iter().take(5).map(|s| s.line).collect();
    eprintln!(
        "skipped {} unparseable rows (first lines: {:?})",
        skipped.len(),
        lines
    );
}
