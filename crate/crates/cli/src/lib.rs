//! `radloc` command line: simulate datasets, localize sensors, sweep
//! initial poses and render occupancy heat maps.

pub mod commands;
pub mod config;

use std::ffi::OsString;
use std::io::Write;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use crate::commands::{
    cmd_evaluate, cmd_heatmap, cmd_localize, cmd_simulate, default_poses_path, CmdResult, ResultExt,
};
use crate::config::{Preset, RunConfig};

#[derive(Debug, Parser)]
#[command(
    name = "radloc",
    version,
    about = "Roadside radar self-localization and occupancy heat maps"
)]
pub struct Cli {
    /// Run configuration (TOML); flags override its values.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic dataset.
    Simulate(SimulateArgs),
    /// Estimate sensor poses with ICP and the Kalman filter.
    Localize(LocalizeArgs),
    /// Sweep random initial poses and tabulate errors.
    Evaluate(EvaluateArgs),
    /// Fuse localized sensors into a heat map.
    Heatmap(HeatmapArgs),
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[arg(long, default_value = "dataset")]
    pub out: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, value_enum)]
    pub preset: Option<Preset>,
    /// Scenario TOML replacing the preset.
    #[arg(long)]
    pub scenario: Option<PathBuf>,
    #[arg(long, allow_negative_numbers = true)]
    pub duration: Option<f64>,
    #[arg(long, allow_negative_numbers = true)]
    pub arrival_rate: Option<f64>,
}

#[derive(Debug, Args)]
pub struct LocalizeArgs {
    #[arg(long)]
    pub dataset: PathBuf,
    /// Output directory; defaults to the dataset directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Sensor to localize (repeatable); all sensors when absent.
    #[arg(long = "sensor")]
    pub sensors: Vec<String>,
    #[arg(long, allow_negative_numbers = true)]
    pub coarse_dist: Option<f64>,
    #[arg(long, allow_negative_numbers = true)]
    pub voxel: Option<f64>,
    #[arg(long)]
    pub window_frames: Option<usize>,
    #[arg(long, allow_negative_numbers = true)]
    pub cycle_period: Option<f64>,
    #[arg(long, allow_negative_numbers = true)]
    pub min_fitness: Option<f64>,
    #[arg(long, allow_negative_numbers = true)]
    pub min_window_fill: Option<f64>,
    /// Throttle the replay to wall clock.
    #[arg(long)]
    pub realtime: bool,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub dataset: PathBuf,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub sensor: Option<String>,
    /// Seed of the initial-pose generator.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub n_seeds: Option<usize>,
    #[arg(long, allow_negative_numbers = true)]
    pub seed_radius: Option<f64>,
    #[arg(long, allow_negative_numbers = true)]
    pub yaw_span_deg: Option<f64>,
    #[arg(long, allow_negative_numbers = true)]
    pub coarse_dist: Option<f64>,
}

#[derive(Debug, Args)]
pub struct HeatmapArgs {
    #[arg(long)]
    pub dataset: PathBuf,
    /// Poses file (`sensor_id,x,y,z,qx,qy,qz,qw`); defaults to the one
    /// `localize` wrote into the dataset.
    #[arg(long)]
    pub poses: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, allow_negative_numbers = true)]
    pub window_ms: Option<f64>,
    #[arg(long)]
    pub horizon_windows: Option<usize>,
    #[arg(long, allow_negative_numbers = true)]
    pub pixels_per_meter: Option<f64>,
    /// Throttle the replay to wall clock and fuse in streaming mode.
    #[arg(long)]
    pub realtime: bool,
}

/// Parses arguments, runs the command and returns the process exit code.
pub fn run<I, T>(args: I, stdout: &mut impl Write, stderr: &mut impl Write) -> u8
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = write!(stderr, "{}", e.render());
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match execute(cli, stdout) {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(stderr, "error: {e}");
            e.exit_code()
        }
    }
}

fn execute(cli: Cli, out: &mut impl Write) -> CmdResult<()> {
    let mut cfg = RunConfig::load_or_default(cli.config.as_deref()).config()?;
    match cli.command {
        Command::Simulate(a) => {
            let s = &mut cfg.simulate;
            if let Some(p) = a.preset {
                s.preset = p;
                s.scenario = None;
            }
            s.scenario = a.scenario.or(s.scenario.take());
            s.seed = a.seed.or(s.seed);
            s.duration = a.duration.or(s.duration);
            s.arrival_rate = a.arrival_rate.or(s.arrival_rate);
            let summary = cmd_simulate(s, &a.out)?;
            let _ = writeln!(
                out,
                "wrote {}: {} vehicles, {} scan points",
                summary.out.display(),
                summary.vehicles,
                summary.scan_points
            );
            for (id, frames, points) in &summary.sensors {
                let _ = writeln!(out, "  {id}: {frames} frames, {points} points");
            }
        }
        Command::Localize(a) => {
            let l = &mut cfg.localize;
            if !a.sensors.is_empty() {
                l.sensors = a.sensors;
            }
            let f = &mut l.filter;
            f.icp.coarse_dist = a.coarse_dist.unwrap_or(f.icp.coarse_dist);
            if let Some(v) = a.voxel {
                f.icp.voxel = v;
                f.source.cell_size = v;
            }
            f.cycle.window_frames = a.window_frames.unwrap_or(f.cycle.window_frames);
            f.cycle.cycle_period = a.cycle_period.unwrap_or(f.cycle.cycle_period);
            f.gating.min_fitness = a.min_fitness.unwrap_or(f.gating.min_fitness);
            f.gating.min_window_fill = a.min_window_fill.unwrap_or(f.gating.min_window_fill);
            let dir = a.out.unwrap_or_else(|| a.dataset.clone());
            for o in cmd_localize(&a.dataset, l, &dir, a.realtime)? {
                let t = o.pose.translation;
                let _ = write!(
                    out,
                    "{}: x {:.3} y {:.3} z {:.3} yaw {:.3} deg ({} of {} cycles updated)",
                    o.sensor_id,
                    t.x,
                    t.y,
                    t.z,
                    o.pose.yaw().to_degrees(),
                    o.updated_cycles,
                    o.cycles
                );
                match o.error {
                    Some(e) => {
                        let _ = writeln!(out, "; error 2D {:.3} m, z {:.3} m, yaw {:.3} deg", e.d2d, e.dz, e.yaw);
                    }
                    None => {
                        let _ = writeln!(out);
                    }
                }
            }
        }
        Command::Evaluate(a) => {
            let e = &mut cfg.evaluate;
            e.sensor = a.sensor.or(e.sensor.take());
            let s = &mut e.sweep;
            s.seed = a.seed.unwrap_or(s.seed);
            s.n_seeds = a.n_seeds.unwrap_or(s.n_seeds);
            s.seed_radius = a.seed_radius.unwrap_or(s.seed_radius);
            s.yaw_span_deg = a.yaw_span_deg.unwrap_or(s.yaw_span_deg);
            s.localization.icp.coarse_dist = a.coarse_dist.unwrap_or(s.localization.icp.coarse_dist);
            let dir = a.out.unwrap_or_else(|| a.dataset.clone());
            let report = cmd_evaluate(&a.dataset, e, &dir)?;
            let m = report.mean_abs();
            let _ = writeln!(
                out,
                "{}: {} seeds, mean |error| 2D {:.3} m, z {:.3} m, yaw {:.3} deg, spread {:.3} m",
                report.sensor_id,
                report.runs.len(),
                m.d2d,
                m.dz,
                m.yaw,
                report.spread()
            );
        }
        Command::Heatmap(a) => {
            let h = &mut cfg.heatmap;
            h.window_ms = a.window_ms.unwrap_or(h.window_ms);
            h.horizon_windows = a.horizon_windows.unwrap_or(h.horizon_windows);
            h.style.pixels_per_meter = a.pixels_per_meter.unwrap_or(h.style.pixels_per_meter);
            let poses = a.poses.unwrap_or_else(|| default_poses_path(&a.dataset));
            let dir = a.out.unwrap_or_else(|| a.dataset.clone());
            let o = cmd_heatmap(&a.dataset, &poses, h, &dir, a.realtime)?;
            let _ = writeln!(
                out,
                "{} messages in {} windows ({} late), {} occupied polygons, max count {} of {}",
                o.messages,
                o.windows,
                o.late_messages,
                o.heat.counts.len(),
                o.heat.max_count,
                o.heat.horizon_windows
            );
        }
    }
    Ok(())
}
