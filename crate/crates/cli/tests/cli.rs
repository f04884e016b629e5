//! End-to-end runs of the subcommands through `radloc_cli::run` and the
//! command functions.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::OnceLock;

use radloc_cli::commands::{cmd_evaluate, cmd_heatmap, cmd_localize, CliError};
use radloc_cli::config::{EvaluateConfig, HeatmapConfig, LocalizeConfig};
use radloc_core::dataset::{frames_file, load_dataset, save_dataset, save_poses};
use radloc_core::occupancy::accumulate;
use radloc_core::simulator::intersection_scenario;
use radloc_core::{OccupancyWindow, SweepConfig};
use tempfile::TempDir;

fn run(args: &[&str]) -> (u8, String, String) {
    let (mut out, mut err) = (Vec::new(), Vec::new());
    let mut full = vec!["radloc"];
    full.extend_from_slice(args);
    let code = radloc_cli::run(full, &mut out, &mut err);
    (code, String::from_utf8(out).unwrap(), String::from_utf8(err).unwrap())
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// The bundled scene, simulated once per test binary.
fn clean_dataset() -> &'static Path {
    static DIR: OnceLock<TempDir> = OnceLock::new();
    DIR.get_or_init(|| {
        let dir = TempDir::new().unwrap();
        let (code, _, err) = run(&["simulate", "--out", s(dir.path())]);
        assert_eq!(code, 0, "{err}");
        dir
    })
    .path()
}

/// Simulates the bundled scene with every moving source switched off.
fn still_dataset(root: &Path) -> PathBuf {
    let mut cfg = intersection_scenario();
    cfg.duration = 60.0;
    cfg.traffic.arrival_rate = 0.0;
    cfg.clutter.dynamic_fraction = 0.0;
    cfg.clutter.spurious_returns = false;
    let scenario = root.join("still.toml");
    fs::write(&scenario, cfg.to_toml().unwrap()).unwrap();
    let out = root.join("still");
    let (code, _, err) = run(&["simulate", "--scenario", s(&scenario), "--out", s(&out)]);
    assert_eq!(code, 0, "{err}");
    out
}

#[test]
fn help_exits_zero_and_bad_flags_exit_two() {
    assert_eq!(run(&["--help"]).0, 0);
    assert_eq!(run(&["simulate", "--no-such-flag"]).0, 2);
    assert_eq!(run(&["frobnicate"]).0, 2);
}

#[test]
fn negative_arrival_rate_is_a_config_error() {
    let tmp = TempDir::new().unwrap();
    let (code, _, err) = run(&["simulate", "--out", s(tmp.path()), "--arrival-rate", "-1"]);
    assert_eq!(code, 2);
    assert!(err.contains("arrival"), "{err}");
    assert!(!tmp.path().join("scan.txt").exists());
}

#[test]
fn unknown_config_key_is_a_config_error() {
    let tmp = TempDir::new().unwrap();
    let cfg = tmp.path().join("run.toml");
    fs::write(&cfg, "[simulate]\nspeed = 3\n").unwrap();
    let (code, _, _) = run(&["--config", s(&cfg), "simulate", "--out", s(tmp.path())]);
    assert_eq!(code, 2);
}

#[test]
fn missing_dataset_is_a_pipeline_error() {
    let tmp = TempDir::new().unwrap();
    let (code, _, err) = run(&["localize", "--dataset", s(&tmp.path().join("nothing"))]);
    assert_eq!(code, 3);
    assert!(err.contains("loading dataset"), "{err}");
}

#[test]
fn seed_override_changes_output() {
    let tmp = TempDir::new().unwrap();
    let frames = |seed: &str| {
        let out = tmp.path().join(seed);
        let (code, _, err) = run(&["simulate", "--out", s(&out), "--seed", seed, "--duration", "5"]);
        assert_eq!(code, 0, "{err}");
        fs::read(frames_file(&out, "radar_sw")).unwrap()
    };
    let (a, b, a_again) = (frames("1"), frames("2"), frames("1"));
    assert_ne!(a, b);
    assert_eq!(a, a_again);
}

#[test]
fn localize_clean_scene() {
    let dir = clean_dataset();
    let tmp = TempDir::new().unwrap();
    let outcomes = cmd_localize(dir, &LocalizeConfig::default(), tmp.path(), false).unwrap();
    assert_eq!(outcomes.len(), 1);
    let err = outcomes[0].error.unwrap();
    assert!(err.d2d < 0.5, "2D error {}", err.d2d);
    assert!(err.yaw.abs() < 0.5, "yaw error {}", err.yaw);
    assert!(outcomes[0].updated_cycles > 0);
    assert!(tmp.path().join("poses.txt").exists());
    assert!(tmp.path().join("track_radar_sw.txt").exists());
}

#[test]
fn localize_without_moving_targets_fails() {
    let tmp = TempDir::new().unwrap();
    let dir = still_dataset(tmp.path());
    let (code, _, err) = run(&["localize", "--dataset", s(&dir)]);
    assert_eq!(code, 3);
    assert!(err.contains("no moving points"), "{err}");
}

#[test]
fn localize_with_half_the_frames() {
    let mut ds = load_dataset(clean_dataset()).unwrap();
    let n = ds.sensors[0].frames.len();
    ds.sensors[0].frames.truncate(n / 2);
    let tmp = TempDir::new().unwrap();
    let dir = tmp.path().join("half");
    save_dataset(&ds, &dir).unwrap();
    let outcomes = cmd_localize(&dir, &LocalizeConfig::default(), &dir, false).unwrap();
    let err = outcomes[0].error.unwrap();
    assert!(outcomes[0].updated_cycles >= 1);
    assert!(err.d2d < 1.0, "2D error {}", err.d2d);
}

#[test]
fn unknown_sensor_is_a_config_error() {
    let (code, _, err) = run(&["localize", "--dataset", s(clean_dataset()), "--sensor", "radar_x"]);
    assert_eq!(code, 2);
    assert!(err.contains("radar_x"), "{err}");
}

#[test]
fn evaluate_rejects_zero_seeds() {
    let tmp = TempDir::new().unwrap();
    let (code, _, _) = run(&[
        "evaluate",
        "--dataset",
        s(clean_dataset()),
        "--out",
        s(tmp.path()),
        "--n-seeds",
        "0",
    ]);
    assert_eq!(code, 2);
    let cfg = EvaluateConfig {
        sensor: None,
        sweep: SweepConfig {
            n_seeds: 0,
            ..SweepConfig::default()
        },
    };
    assert!(matches!(
        cmd_evaluate(clean_dataset(), &cfg, tmp.path()),
        Err(CliError::Config(_))
    ));
}

#[test]
fn evaluate_writes_one_row_per_seed_and_a_summary() {
    let tmp = TempDir::new().unwrap();
    let (code, _, err) = run(&[
        "evaluate",
        "--dataset",
        s(clean_dataset()),
        "--out",
        s(tmp.path()),
        "--n-seeds",
        "50",
    ]);
    assert_eq!(code, 0, "{err}");
    let table = fs::read_to_string(tmp.path().join("sweep_radar_sw.csv")).unwrap();
    let lines: Vec<&str> = table.lines().collect();
    assert_eq!(lines.len(), 1 + 50 + 1);
    assert!(lines[0].starts_with("seed,"));
    assert!(lines[51].starts_with("mean_abs,"));
    let scatter = fs::read_to_string(tmp.path().join("scatter_radar_sw.csv")).unwrap();
    assert_eq!(scatter.lines().count(), 51);
}

#[test]
fn evaluate_is_repeatable_for_a_seed() {
    let tmp = TempDir::new().unwrap();
    let table = |sub: &str, seed: &str| {
        let out = tmp.path().join(sub);
        let args = [
            "evaluate",
            "--dataset",
            s(clean_dataset()),
            "--out",
            s(&out),
            "--n-seeds",
            "3",
            "--seed",
            seed,
        ];
        assert_eq!(run(&args).0, 0);
        fs::read_to_string(out.join("sweep_radar_sw.csv")).unwrap()
    };
    assert_eq!(table("a", "5"), table("b", "5"));
    assert_ne!(table("a", "5"), table("c", "6"));
}

#[test]
fn heatmap_needs_a_pose_for_every_sensor() {
    let tmp = TempDir::new().unwrap();
    let poses = tmp.path().join("poses.txt");
    save_poses(&poses, &[("radar_other".into(), radloc_core::Pose::identity())]).unwrap();
    let (code, _, err) = run(&[
        "heatmap",
        "--dataset",
        s(clean_dataset()),
        "--poses",
        s(&poses),
        "--out",
        s(tmp.path()),
    ]);
    assert_eq!(code, 3);
    assert!(err.contains("radar_sw"), "{err}");
}

#[test]
fn heatmap_without_traffic_is_all_zero() {
    let tmp = TempDir::new().unwrap();
    let dir = still_dataset(tmp.path());
    let ds = load_dataset(&dir).unwrap();
    let truth: Vec<_> = ds.sensors.iter().map(|s| (s.id.clone(), s.truth)).collect();
    let poses = tmp.path().join("truth_poses.txt");
    save_poses(&poses, &truth).unwrap();
    let out = tmp.path().join("heat");
    let outcome = cmd_heatmap(&dir, &poses, &HeatmapConfig::default(), &out, false).unwrap();
    assert!(outcome.messages > 0);
    assert_eq!(outcome.heat.max_count, 0);
    assert!(outcome.heat.counts.is_empty());
    let csv = fs::read_to_string(out.join("heatmap.csv")).unwrap();
    let rows: Vec<&str> = csv.lines().skip_while(|l| *l != "polygon_id,count").skip(1).collect();
    assert!(!rows.is_empty());
    assert!(rows.iter().all(|l| l.ends_with(",0")), "{csv}");
}

#[test]
fn heatmap_on_localized_poses() {
    let tmp = TempDir::new().unwrap();
    let dir = clean_dataset();
    let (code, _, err) = run(&["localize", "--dataset", s(dir), "--out", s(tmp.path())]);
    assert_eq!(code, 0, "{err}");
    let out = tmp.path().join("heat");
    let cfg = HeatmapConfig::default();
    let outcome = cmd_heatmap(dir, &tmp.path().join("poses.txt"), &cfg, &out, false).unwrap();
    assert!(outcome.heat.max_count > 0);
    assert!(outcome.heat.max_count as usize <= cfg.horizon_windows);
    assert_eq!(outcome.late_messages, 0);
    assert!(out.join("heatmap.png").exists());
}

#[test]
fn legend_maximum_is_capped_by_the_horizon() {
    // a tile occupied in every one of 3000 windows
    let windows: Vec<OccupancyWindow> = (0..3000)
        .map(|k| OccupancyWindow {
            window_index: k,
            occupied: [4].into(),
            messages: [("a".to_string(), 1)].into(),
        })
        .collect();
    let heat = accumulate(&windows, 2000).unwrap();
    assert_eq!(heat.max_count, 2000);
    assert_eq!(heat.count(4), 2000);
}
