//! Static-model Kalman filter over the sensor pose, corrected by periodic
//! ICP fixes.
//!
//! The state is `[x, y, z, qx, qy, qz, qw]`. Prediction keeps the state and
//! inflates the covariance by the process noise; the measurement is the full
//! state, so the observation matrix is the identity. The quaternion block is
//! updated additively and renormalized afterwards, after flipping the
//! measurement into the state's hemisphere.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use nalgebra::{SMatrix, SVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{PointCloud, Pose, Vec3};
use crate::preprocess::{self, SourceParams};
use crate::registration::{multiscale_icp_with_target, IcpResult, MultiscaleParams, RegistrationTarget};

pub type StateVector = SVector<f64, 7>;
pub type StateMatrix = SMatrix<f64, 7, 7>;

pub const DEFAULT_Q_DIAG: [f64; 7] = [1e-4, 1e-4, 1e-4, 1e-6, 1e-6, 1e-6, 1e-6];
pub const DEFAULT_R_DIAG: [f64; 7] = [0.25, 0.25, 0.25, 1e-4, 1e-4, 1e-4, 1e-4];
pub const DEFAULT_P0_DIAG: [f64; 7] = [100.0, 100.0, 100.0, 0.1, 0.1, 0.1, 0.1];
pub const DEFAULT_MIN_FITNESS: f64 = 0.2;
pub const DEFAULT_MIN_WINDOW_FILL: f64 = 0.5;

#[derive(Debug, Clone, PartialEq)]
pub struct FilterState {
    pub x: StateVector,
    pub p: StateMatrix,
    pub q: StateMatrix,
    pub r: StateMatrix,
}

fn diag(d: &[f64; 7]) -> StateMatrix {
    StateMatrix::from_diagonal(&StateVector::from_row_slice(d))
}

fn normalize_quaternion_block(x: &mut StateVector) {
    let n = x.fixed_rows::<4>(3).norm();
    if n > 0.0 {
        x.fixed_rows_mut::<4>(3).unscale_mut(n);
    }
}

impl FilterState {
    pub fn new(pose: &Pose, p: StateMatrix, q: StateMatrix, r: StateMatrix) -> Self {
        Self {
            x: StateVector::from_row_slice(&pose.to_vector7()),
            p,
            q,
            r,
        }
    }

    pub fn from_noise(pose: &Pose, noise: &NoiseConfig) -> Self {
        Self::new(pose, diag(&noise.p0_diag), diag(&noise.q_diag), diag(&noise.r_diag))
    }

    pub fn pose(&self) -> Pose {
        let v: [f64; 7] = self.x.as_slice().try_into().expect("7 entries");
        Pose::from_vector7(&v)
    }

    /// Standard deviations of the position block.
    pub fn position_std(&self) -> [f64; 3] {
        [self.p[(0, 0)].sqrt(), self.p[(1, 1)].sqrt(), self.p[(2, 2)].sqrt()]
    }

    pub fn check_invariants(&self, tol: f64) -> Result<()> {
        for (name, m) in [("P", &self.p), ("Q", &self.q), ("R", &self.r)] {
            let asym = (m - m.transpose()).abs().max();
            if asym > tol {
                return Err(Error::invalid(format!(
                    "{name} is not symmetric (max deviation {asym:e})"
                )));
            }
            let eig = m.symmetric_eigenvalues();
            let scale = m.abs().max().max(1.0);
            if eig.iter().any(|&e| e < -tol * scale) {
                return Err(Error::invalid(format!("{name} has a negative eigenvalue")));
            }
        }
        let qn = self.x.fixed_rows::<4>(3).norm();
        if (qn - 1.0).abs() > tol {
            return Err(Error::invalid(format!("quaternion norm {qn} is not 1")));
        }
        Ok(())
    }
}

/// Static motion model: state carried over, covariance grows by Q.
pub fn predict(state: &FilterState) -> FilterState {
    let mut next = state.clone();
    next.p = state.p + state.q;
    normalize_quaternion_block(&mut next.x);
    next
}

/// Correction with an identity measurement model and Joseph-form covariance
/// update.
pub fn update(state: &FilterState, z: &[f64; 7]) -> Result<FilterState> {
    let mut z = StateVector::from_row_slice(z);
    if !z.iter().all(|v| v.is_finite()) {
        return Err(Error::invalid("measurement is not finite"));
    }
    let zq_norm = z.fixed_rows::<4>(3).norm();
    if !(zq_norm > 0.0) {
        return Err(Error::invalid("measurement quaternion is zero"));
    }
    z.fixed_rows_mut::<4>(3).unscale_mut(zq_norm);
    if z.fixed_rows::<4>(3).dot(&state.x.fixed_rows::<4>(3)) < 0.0 {
        z.fixed_rows_mut::<4>(3).neg_mut();
    }

    let s = state.p + state.r;
    let chol = s.cholesky().ok_or(Error::SingularInnovation)?;
    let l = chol.l();
    let d = l.diagonal();
    let (dmin, dmax) = d
        .iter()
        .fold((f64::INFINITY, 0.0f64), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    if !(dmin > 0.0) || (dmin / dmax).powi(2) < f64::EPSILON {
        return Err(Error::SingularInnovation);
    }
    // K = P S⁻¹, with S symmetric: Kᵀ = S⁻¹ Pᵀ
    let k = chol.solve(&state.p.transpose()).transpose();
    let mut x = state.x + k * (z - state.x);
    normalize_quaternion_block(&mut x);
    let i_k = StateMatrix::identity() - k;
    let p = i_k * state.p * i_k.transpose() + k * state.r * k.transpose();
    Ok(FilterState {
        x,
        p,
        q: state.q,
        r: state.r,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NoiseConfig {
    pub q_diag: [f64; 7],
    pub r_diag: [f64; 7],
    pub p0_diag: [f64; 7],
}

impl Default for NoiseConfig {
    fn default() -> Self {
        Self {
            q_diag: DEFAULT_Q_DIAG,
            r_diag: DEFAULT_R_DIAG,
            p0_diag: DEFAULT_P0_DIAG,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CycleConfig {
    pub cycle_period: f64,
    pub window_frames: usize,
    pub frame_rate: f64,
}

impl Default for CycleConfig {
    fn default() -> Self {
        Self {
            cycle_period: 5.0,
            window_frames: 2000,
            frame_rate: 20.0,
        }
    }
}

impl CycleConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.cycle_period > 0.0) || self.window_frames < 1 || !(self.frame_rate > 0.0) {
            return Err(Error::invalid("cycle period, window and frame rate must be positive"));
        }
        Ok(())
    }

    pub fn frames_per_cycle(&self) -> usize {
        ((self.cycle_period * self.frame_rate).round() as usize).max(1)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct LocalizationConfig {
    pub source: SourceParams,
    pub icp: MultiscaleParams,
    pub cycle: CycleConfig,
    pub noise: NoiseConfig,
    pub gating: Gating,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Gating {
    /// ICP results below this fitness are rejected and the cycle coasts.
    pub min_fitness: f64,
    /// Cycles whose rolling window holds fewer than this fraction of
    /// `window_frames` coast without registering.
    pub min_window_fill: f64,
}

impl Default for Gating {
    fn default() -> Self {
        Self {
            min_fitness: DEFAULT_MIN_FITNESS,
            min_window_fill: DEFAULT_MIN_WINDOW_FILL,
        }
    }
}

impl LocalizationConfig {
    pub fn validate(&self) -> Result<()> {
        self.source.validate()?;
        self.icp.validate()?;
        self.cycle.validate()?;
        for d in self
            .noise
            .q_diag
            .iter()
            .chain(&self.noise.r_diag)
            .chain(&self.noise.p0_diag)
        {
            if !(*d >= 0.0) {
                return Err(Error::invalid("noise variances must be non-negative"));
            }
        }
        if !(0.0..=1.0).contains(&self.gating.min_fitness) {
            return Err(Error::invalid("min_fitness must lie in [0, 1]"));
        }
        if !(0.0..=1.0).contains(&self.gating.min_window_fill) {
            return Err(Error::invalid("min_window_fill must lie in [0, 1]"));
        }
        Ok(())
    }

    /// Source parameters with the rolling window taken from the cycle config.
    pub fn windowed_source(&self) -> SourceParams {
        SourceParams {
            window_frames: self.cycle.window_frames,
            ..self.source
        }
    }
}

#[derive(Debug, Clone)]
pub struct CycleOutcome {
    pub state: FilterState,
    /// Registration result of this cycle, present whenever ICP ran.
    pub icp: Option<IcpResult>,
    /// Why the correction was skipped, if it was.
    pub coast_reason: Option<String>,
}

impl CycleOutcome {
    pub fn updated(&self) -> bool {
        self.coast_reason.is_none()
    }
}

/// One filter cycle: build the source from the rolling window, register it
/// starting from the current estimate, then predict and correct. Any
/// preprocessing or registration failure, or a fit below the gate, leaves a
/// predict-only step.
pub fn run_localization_cycle(
    frames: &[PointCloud],
    target: &RegistrationTarget,
    state: &FilterState,
    cfg: &LocalizationConfig,
) -> CycleOutcome {
    let window = &frames[frames.len().saturating_sub(cfg.cycle.window_frames)..];
    let source = if window.len() < min_window_frames(cfg) {
        Err(format!(
            "window holds {} of the {} frames needed",
            window.len(),
            min_window_frames(cfg)
        ))
    } else {
        preprocess::build_source_cloud(window, &cfg.windowed_source())
            .map(|s| s.positions())
            .map_err(|e| e.to_string())
    };
    correct_with_source(source.as_deref().map_err(String::as_str), target, state, cfg)
}

fn min_window_frames(cfg: &LocalizationConfig) -> usize {
    (cfg.gating.min_window_fill * cfg.cycle.window_frames as f64).ceil() as usize
}

fn correct_with_source(
    source: std::result::Result<&[Vec3], &str>,
    target: &RegistrationTarget,
    state: &FilterState,
    cfg: &LocalizationConfig,
) -> CycleOutcome {
    let predicted = predict(state);
    let coast = |reason: String, icp: Option<IcpResult>| CycleOutcome {
        state: predicted.clone(),
        icp,
        coast_reason: Some(reason),
    };
    let source = match source {
        Ok(s) => s,
        Err(e) => return coast(e.to_string(), None),
    };
    let result = match multiscale_icp_with_target(source, target, &state.pose(), &cfg.icp) {
        Ok(r) => r,
        Err(e) => return coast(e.to_string(), None),
    };
    if result.fitness < cfg.gating.min_fitness {
        return coast(
            format!("fitness {:.3} below gate {}", result.fitness, cfg.gating.min_fitness),
            Some(result),
        );
    }
    match update(&predicted, &result.transform.to_vector7()) {
        Ok(updated) => CycleOutcome {
            state: updated,
            icp: Some(result),
            coast_reason: None,
        },
        Err(e) => coast(e.to_string(), Some(result)),
    }
}

/// One line of the pose-track log.
#[derive(Debug, Clone, PartialEq)]
pub struct TrackEntry {
    pub cycle_index: usize,
    /// Seconds since the first frame.
    pub t: f64,
    pub pose: Pose,
    pub fitness: f64,
    pub rmse: f64,
    pub updated: bool,
}

/// Source cloud of one cycle, or the reason it could not be built.
#[derive(Debug, Clone)]
pub struct CycleSource {
    /// Seconds since the first frame at the end of the window.
    pub t: f64,
    pub points: std::result::Result<Vec<Vec3>, String>,
}

/// Builds the source cloud of every cycle over a recorded frame sequence,
/// one cycle per period, each over the frames available at that point.
/// The clouds do not depend on the pose, so several filter runs can share them.
pub fn cycle_sources(frames: &[PointCloud], cfg: &LocalizationConfig) -> Result<Vec<CycleSource>> {
    cfg.validate()?;
    // The Doppler gate is idempotent and per point, so gating every frame
    // once up front leaves each cycle's source cloud unchanged.
    let gated: Vec<PointCloud> = frames
        .iter()
        .map(|f| preprocess::doppler_filter(f, cfg.source.v_min))
        .collect();
    let step = cfg.cycle.frames_per_cycle();
    let min_frames = min_window_frames(cfg);
    let mut out = Vec::new();
    let mut end = step.min(gated.len());
    while end > 0 {
        let start = end.saturating_sub(cfg.cycle.window_frames);
        let points = if end - start < min_frames {
            Err(format!(
                "window holds {} of the {min_frames} frames needed",
                end - start
            ))
        } else {
            preprocess::build_source_cloud(&gated[start..end], &cfg.windowed_source())
                .map(|s| s.positions())
                .map_err(|e| e.to_string())
        };
        out.push(CycleSource {
            t: end as f64 / cfg.cycle.frame_rate,
            points,
        });
        if end == gated.len() {
            break;
        }
        end = (end + step).min(gated.len());
    }
    Ok(out)
}

/// Runs the filter over prebuilt cycle sources from `init`.
pub fn localize_from_sources(
    sources: &[CycleSource],
    target: &RegistrationTarget,
    init: &Pose,
    cfg: &LocalizationConfig,
) -> Result<(FilterState, Vec<TrackEntry>)> {
    localize_paced(sources, target, init, cfg, |_| {})
}

/// Like [`localize_from_sources`], calling `pace` with each cycle's time
/// before the cycle runs (used to throttle replay to wall clock).
pub fn localize_paced(
    sources: &[CycleSource],
    target: &RegistrationTarget,
    init: &Pose,
    cfg: &LocalizationConfig,
    mut pace: impl FnMut(f64),
) -> Result<(FilterState, Vec<TrackEntry>)> {
    cfg.validate()?;
    let mut state = FilterState::from_noise(init, &cfg.noise);
    let mut track = Vec::with_capacity(sources.len());
    for (cycle_index, src) in sources.iter().enumerate() {
        pace(src.t);
        let points = src.points.as_deref().map_err(String::as_str);
        let outcome = correct_with_source(points, target, &state, cfg);
        state = outcome.state.clone();
        let (fitness, rmse) = outcome
            .icp
            .as_ref()
            .map(|r| (r.fitness, r.inlier_rmse))
            .unwrap_or((f64::NAN, f64::NAN));
        track.push(TrackEntry {
            cycle_index,
            t: src.t,
            pose: state.pose(),
            fitness,
            rmse,
            updated: outcome.updated(),
        });
    }
    Ok((state, track))
}

/// Runs filter cycles over a recorded frame sequence, one per cycle period,
/// each over the frames available at that point.
pub fn localize_sequence(
    frames: &[PointCloud],
    target: &RegistrationTarget,
    init: &Pose,
    cfg: &LocalizationConfig,
) -> Result<(FilterState, Vec<TrackEntry>)> {
    localize_from_sources(&cycle_sources(frames, cfg)?, target, init, cfg)
}

pub fn format_track(track: &[TrackEntry]) -> String {
    let mut out = String::from("# cycle_index,t,x,y,z,qx,qy,qz,qw,fitness,rmse\n");
    for e in track {
        let v = e.pose.to_vector7();
        let _ = writeln!(
            out,
            "{},{:?},{:?},{:?},{:?},{:?},{:?},{:?},{:?},{:?},{:?}",
            e.cycle_index, e.t, v[0], v[1], v[2], v[3], v[4], v[5], v[6], e.fitness, e.rmse
        );
    }
    out
}

pub fn save_track(path: &Path, track: &[TrackEntry]) -> Result<()> {
    fs::write(path, format_track(track)).map_err(Error::io(path))
}

/// Parses a pose-track log; `updated` is not stored and reads back as the
/// presence of a finite fitness.
pub fn parse_track(text: &str, path: &str) -> Result<Vec<TrackEntry>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let err = |msg: String| Error::Parse {
            path: path.to_string(),
            line: i + 1,
            msg,
        };
        let f: Vec<&str> = line.split(',').map(str::trim).collect();
        if f.len() != 11 {
            return Err(err(format!("expected 11 fields, found {}", f.len())));
        }
        let num = |k: usize| f[k].parse::<f64>().map_err(|e| err(format!("field {}: {e}", k + 1)));
        let cycle_index = f[0].parse::<usize>().map_err(|e| err(e.to_string()))?;
        let v = [num(2)?, num(3)?, num(4)?, num(5)?, num(6)?, num(7)?, num(8)?];
        let fitness = num(9)?;
        out.push(TrackEntry {
            cycle_index,
            t: num(1)?,
            pose: Pose::from_vector7(&v),
            fitness,
            rmse: num(10)?,
            updated: fitness.is_finite(),
        });
    }
    Ok(out)
}
