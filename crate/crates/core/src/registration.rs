//! Point-to-point ICP registering the radar road description (source) to
//! the laser-scan road (target).
//!
//! Each iteration associates every transformed source point with its nearest
//! target point inside the correspondence radius, then solves the closed-form
//! least-squares rigid transform over those pairs. The inlier set of an
//! iteration is the largest distance-sorted prefix of the new pairs whose
//! RMSE does not exceed the previous iteration's, so `inlier_rmse` never
//! increases within one run.

use std::fmt;
use std::str::FromStr;

use nalgebra::{Matrix3, Vector3};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{PointCloud, Pose, Vec3};
use crate::kdtree::KdTree;

pub const DEFAULT_COARSE_DIST: f64 = 10.0;
pub const DEFAULT_MAX_ITER: usize = 50;
pub const DEFAULT_REL_TOL: f64 = 1e-6;

/// One association: `(source index, target index, squared distance)`.
pub type Pair = (usize, usize, f64);

#[derive(Debug, Clone, PartialEq)]
pub struct Correspondences {
    /// Sorted by source index; each source index at most once.
    pub pairs: Vec<Pair>,
    pub max_distance: f64,
}

impl Correspondences {
    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn rmse(&self) -> f64 {
        rmse(&self.pairs)
    }
}

fn rmse(pairs: &[Pair]) -> f64 {
    if pairs.is_empty() {
        return 0.0;
    }
    (pairs.iter().map(|p| p.2).sum::<f64>() / pairs.len() as f64).sqrt()
}

/// Target cloud with its search index, reusable across ICP runs.
#[derive(Debug, Clone)]
pub struct RegistrationTarget {
    points: Vec<Vec3>,
    tree: KdTree,
}

impl RegistrationTarget {
    pub fn new(target: &PointCloud) -> Self {
        let points = target.positions();
        let tree = KdTree::new(&points);
        Self { points, tree }
    }

    pub fn points(&self) -> &[Vec3] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Nearest target point for every source position within `max_dist`
    /// (inclusive). Lowest target index wins distance ties.
    pub fn correspondences(&self, source: &[Vec3], max_dist: f64) -> Correspondences {
        let limit = max_dist * max_dist;
        let pairs = source
            .par_iter()
            .enumerate()
            .filter_map(|(i, p)| {
                let (j, d2) = self.tree.nearest(p)?;
                (d2 <= limit).then_some((i, j, d2))
            })
            .collect();
        Correspondences {
            pairs,
            max_distance: max_dist,
        }
    }
}

pub fn nearest_correspondences(source: &PointCloud, target: &PointCloud, max_dist: f64) -> Result<Correspondences> {
    if target.is_empty() {
        return Err(Error::invalid("target cloud is empty"));
    }
    if !(max_dist > 0.0) {
        return Err(Error::invalid(format!("max_dist must be positive, got {max_dist}")));
    }
    Ok(RegistrationTarget::new(target).correspondences(&source.positions(), max_dist))
}

/// Least-squares rigid transform mapping paired source points onto target
/// points: centroid alignment plus an SVD of the cross-covariance, with the
/// reflection case corrected so the rotation has determinant +1.
pub fn estimate_rigid_transform(source: &PointCloud, target: &PointCloud, pairs: &Correspondences) -> Result<Pose> {
    rigid_transform(&source.positions(), &target.positions(), &pairs.pairs)
}

pub(crate) fn rigid_transform(source: &[Vec3], target: &[Vec3], pairs: &[Pair]) -> Result<Pose> {
    if pairs.len() < 3 {
        return Err(Error::TooFewCorrespondences(pairs.len()));
    }
    let n = pairs.len() as f64;
    let mut mu_s = Vector3::zeros();
    let mut mu_t = Vector3::zeros();
    for &(i, j, _) in pairs {
        mu_s += source[i];
        mu_t += target[j];
    }
    mu_s /= n;
    mu_t /= n;
    let mut h = Matrix3::zeros();
    for &(i, j, _) in pairs {
        h += (source[i] - mu_s) * (target[j] - mu_t).transpose();
    }
    let svd = h.svd(true, true);
    let (u, v_t) = match (svd.u, svd.v_t) {
        (Some(u), Some(v_t)) => (u, v_t),
        _ => return Err(Error::Degenerate("SVD did not converge".into())),
    };
    let mut sv: Vec<f64> = svd.singular_values.iter().copied().collect();
    sv.sort_by(|a, b| b.total_cmp(a));
    if !(sv[0] > 0.0) || sv[1] <= 1e-12 * sv[0] {
        return Err(Error::Degenerate("correspondences are collinear or coincident".into()));
    }
    let v = v_t.transpose();
    let d = (v * u.transpose()).determinant().signum();
    let fix = Matrix3::from_diagonal(&Vector3::new(1.0, 1.0, d));
    let r = v * fix * u.transpose();
    let t = mu_t - r * mu_s;
    Ok(Pose::from_matrix(&r, t))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IcpParams {
    pub max_dist: f64,
    pub max_iter: usize,
    pub rel_tol: f64,
}

impl IcpParams {
    pub fn new(max_dist: f64) -> Self {
        Self {
            max_dist,
            max_iter: DEFAULT_MAX_ITER,
            rel_tol: DEFAULT_REL_TOL,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct IcpResult {
    /// Maps source (sensor frame) into the target frame.
    pub transform: Pose,
    /// Fraction of source points in the final inlier set.
    pub fitness: f64,
    pub inlier_rmse: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Inlier RMSE after association, one entry per evaluated pose
    /// (initial pose first).
    pub rmse_history: Vec<f64>,
}

/// Largest prefix of `pairs` sorted by distance whose RMSE is at most `bound`.
fn trim_to_bound(mut pairs: Vec<Pair>, bound: f64) -> Vec<Pair> {
    pairs.sort_by(|a, b| a.2.total_cmp(&b.2).then(a.0.cmp(&b.0)));
    let limit = bound * bound;
    let mut sum = 0.0;
    let mut keep = 0;
    for (k, p) in pairs.iter().enumerate() {
        sum += p.2;
        if sum / (k + 1) as f64 > limit {
            break;
        }
        keep = k + 1;
    }
    pairs.truncate(keep);
    pairs.sort_by_key(|p| p.0);
    pairs
}

fn validate_icp(params: &IcpParams) -> Result<()> {
    if !(params.max_dist > 0.0) {
        return Err(Error::invalid(format!(
            "max_dist must be positive, got {}",
            params.max_dist
        )));
    }
    if params.max_iter < 1 {
        return Err(Error::invalid("max_iter must be at least 1"));
    }
    if !(params.rel_tol >= 0.0) {
        return Err(Error::invalid("rel_tol must be non-negative"));
    }
    Ok(())
}

/// ICP against a prepared target.
///
/// Stops when the relative RMSE change falls below `rel_tol` with an
/// unchanged inlier count, when fewer than three pairs remain, or after
/// `max_iter` transform updates.
pub fn icp_with_target(
    source: &[Vec3],
    target: &RegistrationTarget,
    init: &Pose,
    params: &IcpParams,
) -> Result<IcpResult> {
    validate_icp(params)?;
    if source.is_empty() || target.is_empty() {
        return Err(Error::invalid("ICP needs non-empty source and target clouds"));
    }
    let moved = |t: &Pose| -> Vec<Vec3> { source.iter().map(|p| t.transform_point(p)).collect() };

    let mut transform = *init;
    let mut current = moved(&transform);
    let mut pairs = target.correspondences(&current, params.max_dist).pairs;
    if pairs.is_empty() {
        return Err(Error::NoCorrespondences {
            max_dist: params.max_dist,
        });
    }
    let mut err = rmse(&pairs);
    let mut history = vec![err];
    let mut converged = err == 0.0;
    let mut iterations = 0;

    while !converged && iterations < params.max_iter {
        let step = match rigid_transform(&current, target.points(), &pairs) {
            Ok(step) => step,
            Err(Error::TooFewCorrespondences(_)) | Err(Error::Degenerate(_)) => break,
            Err(e) => return Err(e),
        };
        iterations += 1;
        let candidate = step.compose(&transform);
        let candidate_points = moved(&candidate);
        let all = target.correspondences(&candidate_points, params.max_dist).pairs;
        let next = trim_to_bound(all, err);
        if next.is_empty() {
            break;
        }
        let next_err = rmse(&next);
        let rel = if err > 0.0 { (err - next_err) / err } else { 0.0 };
        let same_count = next.len() == pairs.len();
        transform = candidate;
        current = candidate_points;
        pairs = next;
        err = next_err;
        history.push(err);
        converged = err == 0.0 || (rel.abs() < params.rel_tol && same_count);
    }

    Ok(IcpResult {
        transform,
        fitness: pairs.len() as f64 / source.len() as f64,
        inlier_rmse: err,
        iterations,
        converged,
        rmse_history: history,
    })
}

pub fn icp(source: &PointCloud, target: &PointCloud, init: &Pose, params: &IcpParams) -> Result<IcpResult> {
    if target.is_empty() {
        return Err(Error::invalid("ICP needs non-empty source and target clouds"));
    }
    icp_with_target(&source.positions(), &RegistrationTarget::new(target), init, params)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MultiscaleParams {
    pub voxel: f64,
    pub coarse_dist: f64,
    pub max_iter: usize,
    pub rel_tol: f64,
}

impl Default for MultiscaleParams {
    fn default() -> Self {
        Self {
            voxel: crate::preprocess::DEFAULT_CELL_SIZE,
            coarse_dist: DEFAULT_COARSE_DIST,
            max_iter: DEFAULT_MAX_ITER,
            rel_tol: DEFAULT_REL_TOL,
        }
    }
}

impl MultiscaleParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.voxel > 0.0) {
            return Err(Error::invalid(format!("voxel must be positive, got {}", self.voxel)));
        }
        if !(self.coarse_dist >= 2.0 * self.voxel) {
            return Err(Error::invalid(format!(
                "coarse_dist {} must be at least twice the voxel size {}",
                self.coarse_dist, self.voxel
            )));
        }
        validate_icp(&IcpParams {
            max_dist: self.coarse_dist,
            max_iter: self.max_iter,
            rel_tol: self.rel_tol,
        })
    }

    /// Correspondence radii of the three stages.
    pub fn schedule(&self) -> [f64; 3] {
        [self.coarse_dist, 2.0 * self.voxel, self.voxel]
    }
}

/// Three chained ICP runs with radii `coarse_dist`, `2·voxel`, `voxel`; each
/// starts from the previous result. Returns the final stage.
pub fn multiscale_icp_with_target(
    source: &[Vec3],
    target: &RegistrationTarget,
    init: &Pose,
    params: &MultiscaleParams,
) -> Result<IcpResult> {
    params.validate()?;
    let mut pose = *init;
    let mut last = None;
    for max_dist in params.schedule() {
        let stage = IcpParams {
            max_dist,
            max_iter: params.max_iter,
            rel_tol: params.rel_tol,
        };
        let result = icp_with_target(source, target, &pose, &stage)?;
        pose = result.transform;
        last = Some(result);
    }
    Ok(last.expect("three stages"))
}

pub fn multiscale_icp(
    source: &PointCloud,
    target: &PointCloud,
    init: &Pose,
    params: &MultiscaleParams,
) -> Result<IcpResult> {
    params.validate()?;
    if source.is_empty() || target.is_empty() {
        return Err(Error::invalid("ICP needs non-empty source and target clouds"));
    }
    multiscale_icp_with_target(&source.positions(), &RegistrationTarget::new(target), init, params)
}

/// Eight-point compass heading. Yaw is measured counter-clockwise from east.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Compass {
    #[serde(rename = "E")]
    East,
    #[serde(rename = "NE")]
    NorthEast,
    #[serde(rename = "N")]
    North,
    #[serde(rename = "NW")]
    NorthWest,
    #[serde(rename = "W")]
    West,
    #[serde(rename = "SW")]
    SouthWest,
    #[serde(rename = "S")]
    South,
    #[serde(rename = "SE")]
    SouthEast,
}

impl Compass {
    pub const ALL: [Compass; 8] = [
        Compass::East,
        Compass::NorthEast,
        Compass::North,
        Compass::NorthWest,
        Compass::West,
        Compass::SouthWest,
        Compass::South,
        Compass::SouthEast,
    ];

    pub fn yaw_degrees(self) -> f64 {
        match self {
            Compass::East => 0.0,
            Compass::NorthEast => 45.0,
            Compass::North => 90.0,
            Compass::NorthWest => 135.0,
            Compass::West => 180.0,
            Compass::SouthWest => -135.0,
            Compass::South => -90.0,
            Compass::SouthEast => -45.0,
        }
    }

    pub fn abbreviation(self) -> &'static str {
        match self {
            Compass::East => "E",
            Compass::NorthEast => "NE",
            Compass::North => "N",
            Compass::NorthWest => "NW",
            Compass::West => "W",
            Compass::SouthWest => "SW",
            Compass::South => "S",
            Compass::SouthEast => "SE",
        }
    }

    /// Closest compass direction to a yaw in radians.
    pub fn nearest(yaw: f64) -> Compass {
        let sector = (yaw.to_degrees() / 45.0).round().rem_euclid(8.0) as usize;
        Compass::ALL[sector]
    }
}

impl fmt::Display for Compass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.abbreviation())
    }
}

impl FromStr for Compass {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let key: String = s
            .chars()
            .filter(|c| !matches!(c, '-' | '_' | ' '))
            .collect::<String>()
            .to_ascii_lowercase();
        Ok(match key.as_str() {
            "e" | "east" => Compass::East,
            "ne" | "northeast" => Compass::NorthEast,
            "n" | "north" => Compass::North,
            "nw" | "northwest" => Compass::NorthWest,
            "w" | "west" => Compass::West,
            "sw" | "southwest" => Compass::SouthWest,
            "s" | "south" => Compass::South,
            "se" | "southeast" => Compass::SouthEast,
            _ => return Err(Error::UnknownCompass(s.to_string())),
        })
    }
}

/// Seed pose from a manual placement: map position, compass heading and
/// mounting height; roll and pitch are zero.
pub fn coarse_init(position_hint: [f64; 2], heading: Compass, height_hint: f64) -> Pose {
    Pose::from_xyz_rpy(
        Vec3::new(position_hint[0], position_hint[1], height_hint),
        0.0,
        0.0,
        heading.yaw_degrees().to_radians(),
    )
}
