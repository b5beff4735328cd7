//! End-to-end tests that drive the compiled `driftscan` binary the way a
//! shell user would: real argv, real files, checked exit codes.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use tempfile::TempDir;

fn driftscan() -> Command {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_driftscan"));
    // Tests control the config file per invocation.
    cmd.env_remove("DRIFTSCAN_CONFIG");
    cmd
}

fn stderr_of(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn lines_of(path: &Path) -> Vec<String> {
    fs::read_to_string(path)
        .unwrap()
        .lines()
        .map(str::to_string)
        .collect()
}

/// 240 swings by one batter, 8 per day. Whiffs come 3 per 20 swings for the
/// first 120, then 11 per 20, so the whiff rate steps 0.15 -> 0.55 at swing
/// 120. The pattern alternates between scan and confirmation halves, so both
/// see the step.
fn whiff_fixture() -> String {
    let mut out =
        String::from("game_date,pitcher,batter,pitch_type,description,release_speed,zone,inning\n");
    for i in 0..240usize {
        let date = format!("2024-04-{:02}", i / 8 + 1);
        let whiff = if i < 120 { i % 20 < 3 } else { i % 20 < 11 };
        let desc = if whiff { "swinging_strike" } else { "foul" };
        out.push_str(&format!("{date},p1,b1,FF,{desc},92.5,5,3\n"));
    }
    out
}

/// Two pitchers, 300 fastballs each, 10 per day. Velocity wobbles on a
/// five-pitch cycle (sd about 0.42 mph); hicks drops 3 mph at pitch 150,
/// soriano holds steady.
fn velocity_fixture() -> String {
    let mut out =
        String::from("game_date,pitcher,batter,pitch_type,description,release_speed,zone,inning\n");
    let wobble = [-0.6, -0.3, 0.0, 0.3, 0.6];
    for i in 0..300usize {
        let date = format!("2024-05-{:02}", i / 10 + 1);
        let base = if i < 150 { 94.0 } else { 91.0 };
        let speed = base + wobble[i % 5];
        out.push_str(&format!("{date},hicks,b2,FF,called_strike,{speed},5,1\n"));
        let steady = 93.0 + wobble[(i + 2) % 5];
        out.push_str(&format!("{date},soriano,b2,SI,ball,{steady},8,1\n"));
    }
    out
}

#[test]
fn help_exits_zero() {
    let out = driftscan().arg("--help").output().unwrap();
    assert_eq!(out.status.code(), Some(0));
    let text = String::from_utf8_lossy(&out.stdout);
    for sub in ["stabilize", "detect", "simulate", "groundtruth"] {
        assert!(text.contains(sub), "help does not mention {sub}");
    }
}

#[test]
fn unknown_flag_exits_one() {
    let out = driftscan()
        .args(["detect", "--no-such-flag"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn stabilize_writes_reports_and_sequences() {
    let dir = TempDir::new().unwrap();
    let input = dir.path().join("events.csv");
    let mut csv = String::from("metric,entity_id,value\n");
    // Two players 40 trials each, rates 0.5 and 0.1: clear latent spread.
    for i in 0..40 {
        csv.push_str(&format!("obp,alice,{}\n", u8::from(i % 2 == 0)));
        csv.push_str(&format!("obp,bob,{}\n", u8::from(i % 10 == 0)));
    }
    fs::write(&input, csv).unwrap();
    let out_dir = dir.path().join("out");

    let out = driftscan()
        .args(["stabilize", "--input"])
        .arg(&input)
        .arg("--out")
        .arg(&out_dir)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0), "stderr: {}", stderr_of(&out));

    let report = lines_of(&out_dir.join("stabilization.csv"));
    assert_eq!(
        report[0],
        "metric,p_hat,sigma_obs,sigma_samp,sigma_latent,n_stable"
    );
    assert_eq!(report.len(), 2);
    assert!(report[1].starts_with("obp,"));

    // One interval per trial per player, plus the header.
    let sequences = lines_of(&out_dir.join("confidence_sequences.csv"));
    assert_eq!(sequences.len(), 1 + 2 * 40);
    assert_eq!(sequences[0], "metric,entity_id,t,mean,lower,upper");

    let manifest: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out_dir.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["command"], "stabilize");
    assert!(manifest["started_utc"].is_string());
    assert!(manifest["finished_utc"].is_string());
    assert_eq!(manifest["output_dir"], out_dir.display().to_string());
    let outputs: Vec<&str> = manifest["outputs"]
        .as_array()
        .unwrap()
        .iter()
        .map(|v| v.as_str().unwrap())
        .collect();
    assert_eq!(outputs, ["stabilization.csv", "confidence_sequences.csv"]);
}

#[test]
fn stabilize_checks_flags_before_reading_input() {
    // Bad alpha with a missing input file: the flag error must win, exit 1.
    let out = driftscan()
        .args([
            "stabilize",
            "--input",
            "/nonexistent/events.csv",
            "--alpha",
            "1.5",
        ])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr_of(&out).contains("alpha"));

    // Same missing file with valid flags is an I/O failure, exit 2.
    let out = driftscan()
        .args(["stabilize", "--input", "/nonexistent/events.csv"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn stabilize_degenerate_cohort_exits_one() {
    let dir = TempDir::new().unwrap();
    let input = dir.path().join("events.csv");
    // Identical observed rates: no across-player spread to stabilize toward.
    let mut csv = String::from("metric,entity_id,value\n");
    for i in 0..30 {
        csv.push_str(&format!("k_rate,carl,{}\n", u8::from(i % 2 == 0)));
        csv.push_str(&format!("k_rate,dana,{}\n", u8::from(i % 2 == 0)));
    }
    fs::write(&input, csv).unwrap();

    let out = driftscan()
        .args(["stabilize", "--input"])
        .arg(&input)
        .arg("--out")
        .arg(dir.path())
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
    assert!(
        stderr_of(&out).contains("latent"),
        "stderr: {}",
        stderr_of(&out)
    );
}

#[test]
fn detect_finds_planted_whiff_change() {
    let dir = TempDir::new().unwrap();
    let input = dir.path().join("pitches.csv");
    fs::write(&input, whiff_fixture()).unwrap();
    let out_dir = dir.path().join("out");

    let out = driftscan()
        .args(["detect", "--metric", "whiff", "--seed", "7", "--input"])
        .arg(&input)
        .arg("--out")
        .arg(&out_dir)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0), "stderr: {}", stderr_of(&out));

    let cps = lines_of(&out_dir.join("changepoints.csv"));
    assert_eq!(
        cps[0],
        "entity_id,metric,t_original,date,p_value,mean_before,mean_after,candidate_lambda"
    );
    let flagged_t: Vec<usize> = cps[1..]
        .iter()
        .map(|line| {
            let cols: Vec<&str> = line.split(',').collect();
            assert_eq!(cols[0], "b1");
            assert_eq!(cols[1], "whiff");
            cols[2].parse().unwrap()
        })
        .collect();
    assert!(
        flagged_t.iter().any(|&t| t.abs_diff(120) <= 40),
        "no changepoint near 120: {flagged_t:?}"
    );

    // Rolling means cover every window end, and changepoint markers line up
    // with the flagged indices.
    let rolling = lines_of(&out_dir.join("rolling_means.csv"));
    assert_eq!(rolling[0], "entity_id,metric,t_end,date,mean,changepoint");
    assert_eq!(rolling.len(), 1 + (240 - 50 + 1));
    let marked: Vec<usize> = rolling[1..]
        .iter()
        .filter(|line| line.ends_with(",1"))
        .map(|line| line.split(',').nth(2).unwrap().parse().unwrap())
        .collect();
    let expect: Vec<usize> = flagged_t
        .iter()
        .copied()
        .filter(|&t| (50..=240).contains(&t))
        .collect();
    assert_eq!(marked, expect);

    let detections: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out_dir.join("detections.json")).unwrap())
            .unwrap();
    let records = detections.as_array().unwrap();
    assert_eq!(records.len(), 1);
    assert_eq!(records[0]["entity_id"], "b1");
    // Each record echoes the per-entity config, including the seed derived
    // from the run seed and the entity id.
    assert_eq!(
        records[0]["config"]["seed"],
        driftscan::seed::mix_str(7, "b1")
    );
    assert!(!records[0]["audit"].as_array().unwrap().is_empty());

    let manifest: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out_dir.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["command"], "detect");
    assert_eq!(manifest["seed"], 7);
    let outputs = manifest["outputs"].as_array().unwrap();
    assert_eq!(outputs.len(), 3);
}

#[test]
fn detect_reruns_are_byte_identical() {
    let dir = TempDir::new().unwrap();
    let input = dir.path().join("pitches.csv");
    fs::write(&input, whiff_fixture()).unwrap();

    let run = |out_dir: &Path| {
        let out = driftscan()
            .args(["detect", "--metric", "whiff", "--seed", "11", "--input"])
            .arg(&input)
            .arg("--out")
            .arg(out_dir)
            .output()
            .unwrap();
        assert_eq!(out.status.code(), Some(0), "stderr: {}", stderr_of(&out));
    };
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    run(&a);
    run(&b);

    // Everything except the manifest (which carries wall-clock timestamps)
    // must match byte for byte.
    for name in ["detections.json", "changepoints.csv", "rolling_means.csv"] {
        assert_eq!(
            fs::read(a.join(name)).unwrap(),
            fs::read(b.join(name)).unwrap(),
            "{name} differs between reruns"
        );
    }
}

#[test]
fn detect_velocity_requires_pitch_type() {
    let out = driftscan()
        .args([
            "detect",
            "--metric",
            "velocity",
            "--input",
            "/nonexistent/pitches.csv",
        ])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr_of(&out).contains("--pitch-type"));
}

#[test]
fn detect_missing_input_exits_two() {
    let out = driftscan()
        .args([
            "detect",
            "--metric",
            "whiff",
            "--input",
            "/nonexistent/pitches.csv",
        ])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn config_file_supplies_defaults_and_flags_override() {
    let dir = TempDir::new().unwrap();
    let input = dir.path().join("pitches.csv");
    fs::write(&input, whiff_fixture()).unwrap();
    let config = dir.path().join("detect.toml");
    fs::write(&config, "alpha = 0.01\nmin_segment = 30\n").unwrap();

    // --config supplies min_segment; the explicit --alpha flag wins.
    let out_a = dir.path().join("a");
    let out = driftscan()
        .args(["detect", "--metric", "whiff", "--alpha", "0.05", "--config"])
        .arg(&config)
        .arg("--input")
        .arg(&input)
        .arg("--out")
        .arg(&out_a)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0), "stderr: {}", stderr_of(&out));
    let detections: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out_a.join("detections.json")).unwrap()).unwrap();
    assert_eq!(detections[0]["config"]["alpha"], 0.05);
    assert_eq!(detections[0]["config"]["min_segment"], 30);

    // Same file through the environment variable, no flags.
    let out_b = dir.path().join("b");
    let out = driftscan()
        .env("DRIFTSCAN_CONFIG", &config)
        .args(["detect", "--metric", "whiff", "--input"])
        .arg(&input)
        .arg("--out")
        .arg(&out_b)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0), "stderr: {}", stderr_of(&out));
    let detections: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out_b.join("detections.json")).unwrap()).unwrap();
    assert_eq!(detections[0]["config"]["alpha"], 0.01);
    assert_eq!(detections[0]["config"]["min_segment"], 30);

    // Unknown keys in a config file are rejected, not ignored.
    let bad = dir.path().join("bad.toml");
    fs::write(&bad, "alpa = 0.01\n").unwrap();
    let out = driftscan()
        .args(["detect", "--metric", "whiff", "--config"])
        .arg(&bad)
        .arg("--input")
        .arg(&input)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr_of(&out).contains("alpa"));
}

#[test]
fn simulate_reports_rates_per_grid_entry() {
    let dir = TempDir::new().unwrap();
    let grid = dir.path().join("grid.json");
    fs::write(
        &grid,
        r#"[
            {"name": "null", "spec": {"kind": "binary", "n": 200, "segments": [
                {"length": 200, "dist": "bernoulli", "p": 0.3}
            ]}},
            {"name": "step", "spec": {"kind": "binary", "n": 200, "segments": [
                {"length": 100, "dist": "bernoulli", "p": 0.1},
                {"length": 100, "dist": "bernoulli", "p": 0.8}
            ]}}
        ]"#,
    )
    .unwrap();
    let out_dir = dir.path().join("out");

    let out = driftscan()
        .args(["simulate", "--reps", "40", "--seed", "5", "--grid"])
        .arg(&grid)
        .arg("--out")
        .arg(&out_dir)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0), "stderr: {}", stderr_of(&out));

    let rates = lines_of(&out_dir.join("rates.csv"));
    assert_eq!(rates[0], "name,flag_rate,localization_mae,reps,mc_stderr");
    assert_eq!(rates.len(), 3);
    let row = |name: &str| {
        let line = rates[1..]
            .iter()
            .find(|l| l.starts_with(&format!("{name},")))
            .unwrap_or_else(|| panic!("no row for {name}"));
        line.split(',').map(str::to_string).collect::<Vec<_>>()
    };
    let null = row("null");
    assert!(null[1].parse::<f64>().unwrap() <= 0.2);
    assert_eq!(null[2], "NA");
    assert_eq!(null[3], "40");
    let step = row("step");
    assert!(step[1].parse::<f64>().unwrap() >= 0.8);
    assert!(step[2].parse::<f64>().unwrap() <= 40.0);
}

#[test]
fn groundtruth_ranks_a_planted_velocity_drop() {
    let dir = TempDir::new().unwrap();
    let input = dir.path().join("pitches.csv");
    fs::write(&input, velocity_fixture()).unwrap();
    let roster = dir.path().join("roster.csv");
    fs::write(&roster, "pitcher,primary_fastball\nhicks,FF\nsoriano,SI\n").unwrap();
    let out_dir = dir.path().join("out");

    let out = driftscan()
        .args(["groundtruth", "--seed", "3", "--input"])
        .arg(&input)
        .arg("--roster")
        .arg(&roster)
        .arg("--out")
        .arg(&out_dir)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0), "stderr: {}", stderr_of(&out));

    let rows = lines_of(&out_dir.join("groundtruth.csv"));
    assert_eq!(
        rows[0],
        "pitcher_id,pitch_type,n_pitches,flagged,max_cp_threshold,flagged_deltas,monotone"
    );
    assert_eq!(rows.len(), 3);
    // A 3 mph drop clears shifts up to 2 but not 5; the steady arm stays
    // unflagged at every rung.
    assert_eq!(rows[1], "hicks,FF,300,true,2,0.5;1;2,true");
    assert_eq!(rows[2], "soriano,SI,300,false,NA,,true");

    let summary = String::from_utf8_lossy(&out.stdout);
    assert!(summary.contains("1 of 2"), "stdout: {summary}");
}
