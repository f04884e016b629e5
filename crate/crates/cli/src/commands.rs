//! Subcommand implementations. Each returns a summary for the caller to
//! print and writes its primary outputs under `out`.

use std::fs;
use std::path::{Path, PathBuf};
use std::thread;
use std::time::{Duration, Instant};

use anyhow::{anyhow, Context};
use radloc_core::dataset::{load_dataset, load_poses, pose_for, save_dataset, save_poses, GROUND_TRUTH_FILE};
use radloc_core::evaluation::{dataset_target, run_seed_sweep};
use radloc_core::filter::{cycle_sources, localize_paced, save_track};
use radloc_core::geometry::transform_cloud;
use radloc_core::occupancy::{
    accumulate, assign_frame, fuse_messages, save_messages, window_len_ns, FusionOutput, WindowAggregator,
};
use radloc_core::render::render;
use radloc_core::simulator::run_scenario;
use radloc_core::{pose_error, HeatMap, LocalizationError, OccupancyMessage, Pose, SweepReport};

use crate::config::{EvaluateConfig, HeatmapConfig, LocalizeConfig, SimulateConfig};

pub const POSES_FILE: &str = "poses.txt";
pub const HEATMAP_PNG: &str = "heatmap.png";
pub const HEATMAP_CSV: &str = "heatmap.csv";
pub const MESSAGES_FILE: &str = "messages.txt";

/// Failure split by exit code: bad configuration (2) or a failing pipeline (3).
#[derive(Debug)]
pub enum CliError {
    Config(anyhow::Error),
    Pipeline(anyhow::Error),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Pipeline(_) => 3,
        }
    }

    pub fn inner(&self) -> &anyhow::Error {
        match self {
            CliError::Config(e) | CliError::Pipeline(e) => e,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Config(e) => write!(f, "configuration error: {e:#}"),
            CliError::Pipeline(e) => write!(f, "{e:#}"),
        }
    }
}

pub type CmdResult<T> = Result<T, CliError>;

pub trait ResultExt<T> {
    fn config(self) -> CmdResult<T>;
    fn pipeline(self) -> CmdResult<T>;
}

impl<T, E: Into<anyhow::Error>> ResultExt<T> for Result<T, E> {
    fn config(self) -> CmdResult<T> {
        self.map_err(|e| CliError::Config(e.into()))
    }

    fn pipeline(self) -> CmdResult<T> {
        self.map_err(|e| CliError::Pipeline(e.into()))
    }
}

/// Sleeps until a replay time has elapsed on the wall clock; a no-op when
/// disabled.
struct Pacer(Option<Instant>);

impl Pacer {
    fn new(enabled: bool) -> Self {
        Pacer(enabled.then(Instant::now))
    }

    fn wait_until(&self, t_seconds: f64) {
        if let Some(start) = self.0 {
            let due = start + Duration::from_secs_f64(t_seconds.max(0.0));
            let now = Instant::now();
            if due > now {
                thread::sleep(due - now);
            }
        }
    }
}

#[derive(Debug, Clone)]
pub struct SimulateSummary {
    pub out: PathBuf,
    pub sensors: Vec<(String, usize, usize)>,
    pub vehicles: usize,
    pub scan_points: usize,
}

pub fn cmd_simulate(cfg: &SimulateConfig, out: &Path) -> CmdResult<SimulateSummary> {
    let scenario = cfg.resolve().config()?;
    let ds = run_scenario(&scenario).pipeline()?;
    save_dataset(&ds, out).pipeline()?;
    Ok(SimulateSummary {
        out: out.to_path_buf(),
        sensors: ds
            .sensors
            .iter()
            .map(|s| (s.id.clone(), s.frames.len(), s.frames.iter().map(|f| f.len()).sum()))
            .collect(),
        vehicles: ds.tracks.len(),
        scan_points: ds.scan.len(),
    })
}

#[derive(Debug, Clone)]
pub struct LocalizeOutcome {
    pub sensor_id: String,
    pub pose: Pose,
    pub cycles: usize,
    pub updated_cycles: usize,
    /// Against the dataset's ground truth, when it has one.
    pub error: Option<LocalizationError>,
}

pub fn cmd_localize(
    dataset_dir: &Path,
    cfg: &LocalizeConfig,
    out: &Path,
    realtime: bool,
) -> CmdResult<Vec<LocalizeOutcome>> {
    cfg.validate().config()?;
    let ds = load_dataset(dataset_dir)
        .with_context(|| format!("loading dataset {}", dataset_dir.display()))
        .pipeline()?;
    let ids: Vec<String> = if cfg.sensors.is_empty() {
        ds.sensors.iter().map(|s| s.id.clone()).collect()
    } else {
        cfg.sensors.clone()
    };
    if let Some(id) = ids.iter().find(|id| ds.sensor(id).is_none()) {
        return Err(CliError::Config(anyhow!("dataset has no sensor {id:?}")));
    }
    let has_truth = dataset_dir.join(GROUND_TRUTH_FILE).exists();
    let target = dataset_target(&ds, &cfg.target)
        .context("building the road target")
        .pipeline()?;
    fs::create_dir_all(out)
        .with_context(|| format!("creating {}", out.display()))
        .pipeline()?;

    let mut outcomes = Vec::new();
    for id in &ids {
        let sensor = ds.sensor(id).expect("checked above");
        let sources = cycle_sources(&sensor.frames, &cfg.filter).pipeline()?;
        if !sources.iter().any(|c| c.points.is_ok()) {
            let reason = sources
                .last()
                .and_then(|c| c.points.as_ref().err().cloned())
                .unwrap_or_else(|| "no frames".into());
            return Err(CliError::Pipeline(anyhow!("sensor {id}: {reason}")));
        }
        let pacer = Pacer::new(realtime);
        let (state, track) = localize_paced(&sources, &target, &sensor.hint.init_pose(), &cfg.filter, |t| {
            pacer.wait_until(t)
        })
        .pipeline()?;
        let updated_cycles = track.iter().filter(|e| e.updated).count();
        if updated_cycles == 0 {
            return Err(CliError::Pipeline(anyhow!(
                "sensor {id}: no registration passed the fitness gate"
            )));
        }
        save_track(&out.join(format!("track_{id}.txt")), &track).pipeline()?;
        let pose = state.pose();
        outcomes.push(LocalizeOutcome {
            sensor_id: id.clone(),
            pose,
            cycles: track.len(),
            updated_cycles,
            error: has_truth.then(|| pose_error(&pose, &sensor.truth)),
        });
    }
    let poses: Vec<(String, Pose)> = outcomes.iter().map(|o| (o.sensor_id.clone(), o.pose)).collect();
    save_poses(&out.join(POSES_FILE), &poses).pipeline()?;
    Ok(outcomes)
}

pub fn cmd_evaluate(dataset_dir: &Path, cfg: &EvaluateConfig, out: &Path) -> CmdResult<SweepReport> {
    cfg.validate().config()?;
    let ds = load_dataset(dataset_dir)
        .with_context(|| format!("loading dataset {}", dataset_dir.display()))
        .pipeline()?;
    let id = match &cfg.sensor {
        Some(id) if ds.sensor(id).is_none() => return Err(CliError::Config(anyhow!("dataset has no sensor {id:?}"))),
        Some(id) => id.clone(),
        None => ds
            .sensors
            .first()
            .map(|s| s.id.clone())
            .ok_or_else(|| CliError::Pipeline(anyhow!("dataset has no sensors")))?,
    };
    let report = run_seed_sweep(&ds, &id, &cfg.sweep).pipeline()?;
    fs::create_dir_all(out)
        .with_context(|| format!("creating {}", out.display()))
        .pipeline()?;
    let write = |name: String, text: String| {
        let path = out.join(name);
        fs::write(&path, text).with_context(|| format!("writing {}", path.display()))
    };
    write(format!("sweep_{id}.csv"), report.to_csv()).pipeline()?;
    write(format!("scatter_{id}.csv"), report.scatter_csv()).pipeline()?;
    Ok(report)
}

#[derive(Debug, Clone)]
pub struct HeatmapOutcome {
    pub heat: HeatMap,
    pub messages: usize,
    pub windows: usize,
    pub late_messages: usize,
}

/// Occupancy messages of every sensor, in the map frame via `poses`.
pub fn sensor_messages(
    ds: &radloc_core::Dataset,
    poses: &[(String, Pose)],
    polygons: &radloc_core::PolygonMap,
    cfg: &HeatmapConfig,
) -> radloc_core::Result<Vec<OccupancyMessage>> {
    let mut messages = Vec::new();
    for sensor in &ds.sensors {
        let pose = pose_for(poses, &sensor.id)?;
        for frame in &sensor.frames {
            // every point of a frame carries the frame's timestamp
            let Some(t_ns) = frame.points.first().map(|p| p.timestamp_ns) else {
                continue;
            };
            let in_map = transform_cloud(&pose, frame);
            messages.push(assign_frame(&sensor.id, t_ns, &in_map, polygons, &cfg.filters));
        }
    }
    messages.sort_by(|a, b| (a.t_ns, &a.sensor_id).cmp(&(b.t_ns, &b.sensor_id)));
    Ok(messages)
}

pub fn cmd_heatmap(
    dataset_dir: &Path,
    poses_path: &Path,
    cfg: &HeatmapConfig,
    out: &Path,
    realtime: bool,
) -> CmdResult<HeatmapOutcome> {
    cfg.validate().config()?;
    let window_ns = window_len_ns(cfg.window_ms).config()?;
    let ds = load_dataset(dataset_dir)
        .with_context(|| format!("loading dataset {}", dataset_dir.display()))
        .pipeline()?;
    let poses = load_poses(poses_path).pipeline()?;
    let polygons = ds.map.polygon_map(cfg.polygon_step).pipeline()?;
    let messages = sensor_messages(&ds, &poses, &polygons, cfg).pipeline()?;

    let fused = if realtime {
        let pacer = Pacer::new(true);
        let t0 = messages.first().map_or(0, |m| m.t_ns);
        let mut agg = WindowAggregator::new(window_ns, cfg.lag);
        let mut windows = Vec::new();
        for m in &messages {
            pacer.wait_until((m.t_ns - t0) as f64 * 1e-9);
            windows.extend(agg.push(m));
        }
        windows.extend(agg.finish());
        FusionOutput {
            windows,
            late_messages: agg.late_messages(),
        }
    } else {
        fuse_messages(&messages, window_ns)
    };
    let heat = accumulate(&fused.windows, cfg.horizon_windows).pipeline()?;
    let rendered = render(&polygons, &heat, &cfg.style).pipeline()?;
    fs::create_dir_all(out)
        .with_context(|| format!("creating {}", out.display()))
        .pipeline()?;
    rendered
        .save(&out.join(HEATMAP_PNG), &out.join(HEATMAP_CSV))
        .pipeline()?;
    save_messages(&out.join(MESSAGES_FILE), &messages).pipeline()?;
    Ok(HeatmapOutcome {
        heat,
        messages: messages.len(),
        windows: fused.windows.len(),
        late_messages: fused.late_messages,
    })
}

/// Default location of the poses file written by `localize`.
pub fn default_poses_path(dataset_dir: &Path) -> PathBuf {
    dataset_dir.join(POSES_FILE)
}
