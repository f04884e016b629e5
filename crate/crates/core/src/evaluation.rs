//! Localization error metrics and the random-seed sweep.

use std::f64::consts::PI;
use std::fmt::Write as _;

use nalgebra::UnitQuaternion;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::filter::{cycle_sources, localize_from_sources, LocalizationConfig};
use crate::geometry::{wrap_angle, Pose, Vec3};
use crate::lanelet::DEFAULT_POLYGON_STEP;
use crate::preprocess::{build_target_cloud, TargetParams};
use crate::registration::RegistrationTarget;
use crate::simulator::{Dataset, SensorHint};

/// Estimate minus truth. Translations in meters (map frame), angles in
/// degrees from the relative rotation `R_est * R_truth^-1` split as
/// intrinsic z-y-x.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LocalizationError {
    pub dx: f64,
    pub dy: f64,
    pub dz: f64,
    pub d2d: f64,
    pub roll: f64,
    pub pitch: f64,
    pub yaw: f64,
}

/// Radians in, degrees in `(-180, 180]` out.
fn wrapped_degrees(a: f64) -> f64 {
    let d = wrap_angle(a).to_degrees();
    if d <= -180.0 {
        180.0
    } else {
        d
    }
}

pub fn pose_error(estimate: &Pose, truth: &Pose) -> LocalizationError {
    let d = estimate.translation - truth.translation;
    let rel = estimate.rotation * truth.rotation.inverse();
    let (roll, pitch, yaw) = rel.euler_angles();
    LocalizationError {
        dx: d.x,
        dy: d.y,
        dz: d.z,
        d2d: d.x.hypot(d.y),
        roll: wrapped_degrees(roll),
        pitch: wrapped_degrees(pitch),
        yaw: wrapped_degrees(yaw),
    }
}

impl LocalizationError {
    /// Rebuilds the estimate from the truth this error was measured against.
    pub fn apply_to(&self, truth: &Pose) -> Pose {
        let rel =
            UnitQuaternion::from_euler_angles(self.roll.to_radians(), self.pitch.to_radians(), self.yaw.to_radians());
        Pose::new(
            truth.translation + Vec3::new(self.dx, self.dy, self.dz),
            rel * truth.rotation,
        )
    }

    /// Component-wise absolute value.
    pub fn abs(&self) -> Self {
        Self {
            dx: self.dx.abs(),
            dy: self.dy.abs(),
            dz: self.dz.abs(),
            d2d: self.d2d,
            roll: self.roll.abs(),
            pitch: self.pitch.abs(),
            yaw: self.yaw.abs(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepConfig {
    pub n_seeds: usize,
    /// Initial positions are uniform in a disc of this radius around the hint.
    pub seed_radius: f64,
    /// Initial yaw is uniform within this many degrees of the compass hint.
    pub yaw_span_deg: f64,
    pub seed: u64,
    pub localization: LocalizationConfig,
    pub target: TargetParams,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            n_seeds: 50,
            seed_radius: 15.0,
            yaw_span_deg: 45.0,
            seed: 0,
            localization: LocalizationConfig::default(),
            target: TargetParams::default(),
        }
    }
}

impl SweepConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_seeds == 0 {
            return Err(Error::invalid("n_seeds must be at least 1"));
        }
        if !(self.seed_radius >= 0.0) || !(0.0..=180.0).contains(&self.yaw_span_deg) {
            return Err(Error::invalid(
                "seed_radius must be non-negative and yaw_span_deg in [0, 180]",
            ));
        }
        self.localization.validate()?;
        self.target.validate()
    }
}

/// Initial poses around a manual placement: uniform over the disc, yaw
/// uniform in `hint ± yaw_span`, height and level attitude from the hint.
pub fn seed_poses(hint: &SensorHint, n: usize, radius: f64, yaw_span_deg: f64, seed: u64) -> Vec<Pose> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let r = radius * rng.random::<f64>().sqrt();
            let a = rng.random::<f64>() * 2.0 * PI;
            let dyaw = (2.0 * rng.random::<f64>() - 1.0) * yaw_span_deg;
            Pose::from_xyz_rpy(
                Vec3::new(
                    hint.position[0] + r * a.cos(),
                    hint.position[1] + r * a.sin(),
                    hint.height,
                ),
                0.0,
                0.0,
                (hint.compass.yaw_degrees() + dyaw).to_radians(),
            )
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct SeedRun {
    pub index: usize,
    pub init: Pose,
    pub estimate: Pose,
    pub error: LocalizationError,
    pub fitness: f64,
    pub rmse: f64,
    /// Whether the last filter cycle accepted its registration.
    pub updated: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepReport {
    pub sensor_id: String,
    pub runs: Vec<SeedRun>,
}

impl SweepReport {
    /// Mean of the absolute error components.
    pub fn mean_abs(&self) -> LocalizationError {
        let n = self.runs.len().max(1) as f64;
        let mut m = LocalizationError::default();
        for r in &self.runs {
            let a = r.error.abs();
            m.dx += a.dx / n;
            m.dy += a.dy / n;
            m.dz += a.dz / n;
            m.d2d += a.d2d / n;
            m.roll += a.roll / n;
            m.pitch += a.pitch / n;
            m.yaw += a.yaw / n;
        }
        m
    }

    /// RMS distance of the converged positions from their centroid (2D).
    pub fn spread(&self) -> f64 {
        let n = self.runs.len().max(1) as f64;
        let (cx, cy) = self.runs.iter().fold((0.0, 0.0), |(x, y), r| {
            (x + r.estimate.translation.x / n, y + r.estimate.translation.y / n)
        });
        let ss: f64 = self
            .runs
            .iter()
            .map(|r| (r.estimate.translation.x - cx).powi(2) + (r.estimate.translation.y - cy).powi(2))
            .sum();
        (ss / n).sqrt()
    }

    /// Per-seed rows followed by a `mean_abs` summary row.
    pub fn to_csv(&self) -> String {
        let mut out = String::from(
            "seed,init_x,init_y,init_yaw_deg,est_x,est_y,est_z,est_yaw_deg,dx,dy,dz,d2d,roll,pitch,yaw,fitness,rmse,updated\n",
        );
        for r in &self.runs {
            let (i, e, err) = (&r.init, &r.estimate, &r.error);
            let _ = writeln!(
                out,
                "{},{:.4},{:.4},{:.4},{:.4},{:.4},{:.4},{:.4},{:.4},{:.4},{:.4},{:.4},{:.4},{:.4},{:.4},{:.4},{:.4},{}",
                r.index,
                i.translation.x,
                i.translation.y,
                i.yaw().to_degrees(),
                e.translation.x,
                e.translation.y,
                e.translation.z,
                e.yaw().to_degrees(),
                err.dx,
                err.dy,
                err.dz,
                err.d2d,
                err.roll,
                err.pitch,
                err.yaw,
                r.fitness,
                r.rmse,
                r.updated
            );
        }
        let m = self.mean_abs();
        let _ = writeln!(
            out,
            "mean_abs,,,,,,,,{:.4},{:.4},{:.4},{:.4},{:.4},{:.4},{:.4},,,",
            m.dx, m.dy, m.dz, m.d2d, m.roll, m.pitch, m.yaw
        );
        out
    }

    /// Initial and converged positions, one row per seed.
    pub fn scatter_csv(&self) -> String {
        let mut out = String::from("seed,init_x,init_y,est_x,est_y\n");
        for r in &self.runs {
            let _ = writeln!(
                out,
                "{},{:.4},{:.4},{:.4},{:.4}",
                r.index, r.init.translation.x, r.init.translation.y, r.estimate.translation.x, r.estimate.translation.y
            );
        }
        out
    }
}

/// Road target of a dataset: scan masked by the map's sub-lane polygons.
pub fn dataset_target(dataset: &Dataset, params: &TargetParams) -> Result<RegistrationTarget> {
    let polygons = dataset.map.polygon_map(DEFAULT_POLYGON_STEP)?;
    let target = build_target_cloud(&dataset.scan, &polygons, params)?;
    Ok(RegistrationTarget::new(&target))
}

/// Runs the localization filter from every seed. The per-cycle source
/// clouds do not depend on the pose, so they are built once; the filter runs
/// go in parallel and are reported in seed order.
pub fn run_seed_sweep(dataset: &Dataset, sensor_id: &str, cfg: &SweepConfig) -> Result<SweepReport> {
    cfg.validate()?;
    let sensor = dataset
        .sensor(sensor_id)
        .ok_or_else(|| Error::invalid(format!("unknown sensor {sensor_id}")))?;
    let target = dataset_target(dataset, &cfg.target)?;
    let sources = cycle_sources(&sensor.frames, &cfg.localization)?;
    let inits = seed_poses(&sensor.hint, cfg.n_seeds, cfg.seed_radius, cfg.yaw_span_deg, cfg.seed);
    let runs = inits
        .par_iter()
        .enumerate()
        .map(|(index, init)| {
            let (state, track) = localize_from_sources(&sources, &target, init, &cfg.localization)?;
            let last = track.last();
            let estimate = state.pose();
            Ok(SeedRun {
                index,
                init: *init,
                estimate,
                error: pose_error(&estimate, &sensor.truth),
                fitness: last.map_or(f64::NAN, |e| e.fitness),
                rmse: last.map_or(f64::NAN, |e| e.rmse),
                updated: last.is_some_and(|e| e.updated),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(SweepReport {
        sensor_id: sensor_id.to_string(),
        runs,
    })
}
