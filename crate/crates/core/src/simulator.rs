//! Synthetic worlds: lanelet roads, traffic, radar frames and aerial road
//! scans, all driven by one seed.

use std::f64::consts::FRAC_PI_2;
use std::path::PathBuf;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Distribution, Exp, Poisson, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{PointCloud, Pose, RadarPoint, Vec3, MAP_FRAME};
use crate::lanelet::{polyline_length, Lanelet, LaneletMap, Point2, PolygonMap, DEFAULT_POLYGON_STEP};
use crate::occupancy::{skewed_clock, ClockModel};
use crate::registration::{coarse_init, Compass};

pub const VEHICLE_LENGTH: f64 = 4.5;
pub const VEHICLE_WIDTH: f64 = 1.8;
pub const VEHICLE_HEIGHT: f64 = 1.5;
/// Radial speed magnitude of static clutter stays strictly below this.
const STATIC_SPEED_LIMIT: f64 = 0.149;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RadarSpec {
    /// Degrees.
    pub azimuth_fov: f64,
    /// Degrees.
    pub elevation_fov: f64,
    pub max_range: f64,
    pub frame_rate: f64,
    pub points_per_frame: f64,
    pub range_noise_sigma: f64,
    /// Degrees.
    pub angle_noise_sigma: f64,
    pub velocity_noise_sigma: f64,
}

impl Default for RadarSpec {
    fn default() -> Self {
        Self {
            azimuth_fov: 120.0,
            elevation_fov: 30.0,
            max_range: 300.0,
            frame_rate: 20.0,
            points_per_frame: 500.0,
            range_noise_sigma: 0.1,
            angle_noise_sigma: 0.1,
            velocity_noise_sigma: 0.05,
        }
    }
}

impl RadarSpec {
    /// Noise-free variant, used by geometric tests.
    pub fn noiseless() -> Self {
        Self {
            range_noise_sigma: 0.0,
            angle_noise_sigma: 0.0,
            velocity_noise_sigma: 0.0,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [self.azimuth_fov, self.elevation_fov, self.max_range, self.frame_rate];
        if positive.iter().any(|v| !(*v > 0.0)) || self.azimuth_fov > 360.0 || self.elevation_fov > 180.0 {
            return Err(Error::invalid(
                "radar field of view, range and frame rate must be positive",
            ));
        }
        let sigmas = [
            self.range_noise_sigma,
            self.angle_noise_sigma,
            self.velocity_noise_sigma,
        ];
        if !(self.points_per_frame >= 0.0) || sigmas.iter().any(|s| !(*s >= 0.0)) {
            return Err(Error::invalid(
                "radar point budget and noise levels must be non-negative",
            ));
        }
        Ok(())
    }

    /// Whether a sensor-frame point is inside the field of view and range.
    pub fn sees(&self, p: &Vec3) -> bool {
        let r = p.norm();
        if !(r > 0.0) || r > self.max_range {
            return false;
        }
        let az = p.y.atan2(p.x).to_degrees();
        let el = p.z.atan2(p.x.hypot(p.y)).to_degrees();
        az.abs() <= self.azimuth_fov * 0.5 && el.abs() <= self.elevation_fov * 0.5
    }

    pub fn frame_period_ns(&self) -> i64 {
        (1e9 / self.frame_rate).round() as i64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Waypoint {
    pub t: f64,
    pub position: Point2,
    /// Speed held until the next waypoint.
    pub speed: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VehicleTrack {
    pub id: u32,
    pub route: usize,
    pub waypoints: Vec<Waypoint>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VehicleState {
    pub position: Point2,
    pub velocity: Point2,
    /// Yaw of the body axis.
    pub heading: f64,
}

impl VehicleTrack {
    /// Drives along `path` at constant lateral `offset` (left positive),
    /// entering at `t0`. `speed_at(s)` gives the speed held from arc length
    /// `s` on.
    pub fn along(
        id: u32,
        route: usize,
        path: &[Point2],
        offset: f64,
        t0: f64,
        mut speed_at: impl FnMut(f64) -> f64,
    ) -> Self {
        let shifted = offset_polyline(path, offset);
        let mut waypoints = Vec::with_capacity(shifted.len());
        let (mut t, mut s) = (t0, 0.0);
        for (k, p) in shifted.iter().enumerate() {
            if k > 0 {
                let prev: &Waypoint = waypoints.last().unwrap();
                let d = (p[0] - prev.position[0]).hypot(p[1] - prev.position[1]);
                if d <= 0.0 {
                    continue;
                }
                t += d / prev.speed;
                s += d;
            }
            waypoints.push(Waypoint {
                t,
                position: *p,
                speed: speed_at(s),
            });
        }
        Self { id, route, waypoints }
    }

    pub fn start_time(&self) -> f64 {
        self.waypoints.first().map_or(0.0, |w| w.t)
    }

    pub fn end_time(&self) -> f64 {
        self.waypoints.last().map_or(0.0, |w| w.t)
    }

    pub fn duration(&self) -> f64 {
        self.end_time() - self.start_time()
    }

    /// Position and velocity at `t`, or `None` outside the track's lifetime.
    pub fn state_at(&self, t: f64) -> Option<VehicleState> {
        let w = &self.waypoints;
        if w.len() < 2 || t < w[0].t || t > w[w.len() - 1].t {
            return None;
        }
        let k = (w.partition_point(|p| p.t <= t) - 1).min(w.len() - 2);
        let (a, b) = (&w[k], &w[k + 1]);
        let f = (t - a.t) / (b.t - a.t);
        let (dx, dy) = (b.position[0] - a.position[0], b.position[1] - a.position[1]);
        let len = dx.hypot(dy);
        Some(VehicleState {
            position: [a.position[0] + f * dx, a.position[1] + f * dy],
            velocity: [dx / len * a.speed, dy / len * a.speed],
            heading: dy.atan2(dx),
        })
    }

    pub fn validate(&self) -> Result<()> {
        if self.waypoints.windows(2).any(|w| !(w[1].t > w[0].t)) || self.waypoints.iter().any(|w| !(w.speed >= 0.0)) {
            return Err(Error::invalid(format!(
                "track {}: times must increase and speeds be non-negative",
                self.id
            )));
        }
        Ok(())
    }
}

/// Shifts a polyline sideways; each vertex moves along the averaged normal of
/// its adjacent segments.
fn offset_polyline(path: &[Point2], offset: f64) -> Vec<Point2> {
    if offset == 0.0 || path.len() < 2 {
        return path.to_vec();
    }
    let dir = |a: &Point2, b: &Point2| {
        let (dx, dy) = (b[0] - a[0], b[1] - a[1]);
        let l = dx.hypot(dy);
        [dx / l, dy / l]
    };
    let last = path.len() - 2;
    (0..path.len())
        .map(|k| {
            let d0 = dir(&path[k.saturating_sub(1)], &path[k.saturating_sub(1) + 1]);
            let d1 = dir(&path[k.min(last)], &path[k.min(last) + 1]);
            let (mx, my) = (d0[0] + d1[0], d0[1] + d1[1]);
            let m = mx.hypot(my);
            // miter scaling keeps the lateral distance to both segments
            let cos_half = (m * 0.5).max(0.5);
            let (nx, ny) = (-my / m, mx / m);
            [path[k][0] + nx * offset / cos_half, path[k][1] + ny * offset / cos_half]
        })
        .collect()
}

/// Centerline of a route, sampled about every meter.
pub fn route_centerline(map: &LaneletMap, route: &[i64]) -> Result<Vec<Point2>> {
    let mut path: Vec<Point2> = Vec::new();
    for id in route {
        let l = map
            .lanelet(*id)
            .ok_or_else(|| Error::invalid(format!("route references unknown lanelet {id}")))?;
        let len = polyline_length(&l.left).min(polyline_length(&l.right));
        let c = l.centerline((len.ceil() as usize).max(1));
        let skip = match path.last() {
            Some(p) if (p[0] - c[0][0]).hypot(p[1] - c[0][1]) < 1e-6 => 1,
            _ => 0,
        };
        path.extend_from_slice(&c[skip..]);
    }
    if path.len() < 2 {
        return Err(Error::invalid("route has no length"));
    }
    Ok(path)
}

/// Lane width at the start of a route's first lanelet.
fn route_width(map: &LaneletMap, route: &[i64]) -> f64 {
    map.lanelet(route[0])
        .map(|l| (l.left[0][0] - l.right[0][0]).hypot(l.left[0][1] - l.right[0][1]))
        .unwrap_or(VEHICLE_WIDTH)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrafficConfig {
    /// Vehicles per second entering each route.
    pub arrival_rate: f64,
    pub speed_mean: f64,
    pub speed_sigma: f64,
    pub min_speed: f64,
    /// A new speed is drawn every this many meters.
    pub segment_length: f64,
    /// Lateral offset spread; offsets are clamped so the body stays in lane.
    pub lateral_sigma: f64,
}

impl Default for TrafficConfig {
    fn default() -> Self {
        Self {
            arrival_rate: 0.1,
            speed_mean: 10.0,
            speed_sigma: 1.5,
            min_speed: 2.0,
            segment_length: 25.0,
            lateral_sigma: 0.3,
        }
    }
}

impl TrafficConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.arrival_rate >= 0.0) || !self.arrival_rate.is_finite() {
            return Err(Error::invalid(format!(
                "arrival_rate must be non-negative, got {}",
                self.arrival_rate
            )));
        }
        if !(self.speed_mean > 0.0) || !(self.min_speed > 0.0) || !(self.segment_length > 0.0) {
            return Err(Error::invalid("speeds and segment length must be positive"));
        }
        if !(self.speed_sigma >= 0.0) || !(self.lateral_sigma >= 0.0) {
            return Err(Error::invalid("traffic spreads must be non-negative"));
        }
        Ok(())
    }
}

/// Poisson arrivals on every route over `[-warmup, duration)`, where the
/// warmup is one mean traversal so the scene starts populated.
pub fn simulate_traffic(
    map: &LaneletMap,
    cfg: &TrafficConfig,
    duration: f64,
    rng: &mut impl Rng,
) -> Result<Vec<VehicleTrack>> {
    cfg.validate()?;
    if map.routes.is_empty() {
        return Err(Error::invalid("map has no routes"));
    }
    let mut tracks = Vec::new();
    for (r, route) in map.routes.iter().enumerate() {
        let path = route_centerline(map, route)?;
        if cfg.arrival_rate == 0.0 {
            continue;
        }
        let half_room = ((route_width(map, route) - VEHICLE_WIDTH) * 0.5).max(0.0);
        let gap = Exp::new(cfg.arrival_rate).map_err(|e| Error::invalid(e.to_string()))?;
        let mut t = -polyline_length(&path) / cfg.speed_mean;
        loop {
            t += gap.sample(rng);
            if t >= duration {
                break;
            }
            let z: f64 = rng.sample(StandardNormal);
            let offset = (z * cfg.lateral_sigma).clamp(-half_room, half_room);
            let mut speeds: Vec<f64> = Vec::new();
            let track = VehicleTrack::along(tracks.len() as u32, r, &path, offset, t, |s| {
                let seg = (s / cfg.segment_length) as usize;
                while speeds.len() <= seg {
                    let z: f64 = rng.sample(StandardNormal);
                    speeds.push((cfg.speed_mean + z * cfg.speed_sigma).max(cfg.min_speed));
                }
                speeds[seg]
            });
            tracks.push(track);
        }
    }
    Ok(tracks)
}

/// Tree crown that sways in the wind: a ball of detections with small
/// radial speeds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Canopy {
    pub center: [f64; 3],
    pub radius: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClutterConfig {
    /// Share of each frame's detections that are static.
    pub static_fraction: f64,
    /// Share of the moving detections that come from canopies instead of
    /// vehicles.
    pub dynamic_fraction: f64,
    pub canopies: Vec<Canopy>,
    /// Fill unused moving slots with scattered spurious returns; when off
    /// those slots stay empty.
    pub spurious_returns: bool,
}

impl Default for ClutterConfig {
    fn default() -> Self {
        Self {
            static_fraction: 0.93,
            dynamic_fraction: 0.1,
            canopies: Vec::new(),
            spurious_returns: true,
        }
    }
}

impl ClutterConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.static_fraction) || !(0.0..1.0).contains(&self.dynamic_fraction) {
            return Err(Error::invalid(
                "static_fraction must lie in [0, 1] and dynamic_fraction in [0, 1)",
            ));
        }
        if self.canopies.iter().any(|c| !(c.radius > 0.0)) {
            return Err(Error::invalid("canopy radius must be positive"));
        }
        Ok(())
    }
}

fn uniform_in_ball(rng: &mut impl Rng, radius: f64) -> Vec3 {
    loop {
        let p = Vec3::new(
            rng.random_range(-1.0..=1.0),
            rng.random_range(-1.0..=1.0),
            rng.random_range(-1.0..=1.0),
        );
        if p.norm_squared() <= 1.0 {
            return p * radius;
        }
    }
}

/// Direction inside the field of view with range drawn so detections are
/// uniform per unit area between `r_min` and `r_max`.
fn random_in_fov(spec: &RadarSpec, rng: &mut impl Rng, r_min: f64, r_max: f64) -> Vec3 {
    let half_az = (spec.azimuth_fov * 0.5).to_radians();
    let half_el = (spec.elevation_fov * 0.5).to_radians();
    let u: f64 = rng.random();
    let r = (r_min * r_min + u * (r_max * r_max - r_min * r_min)).sqrt();
    let az = rng.random_range(-half_az..=half_az);
    let el = rng.random_range(-half_el..=half_el);
    Vec3::new(r * el.cos() * az.cos(), r * el.cos() * az.sin(), r * el.sin())
}

/// Range and angle noise applied in spherical coordinates.
fn perturb(spec: &RadarSpec, p: &Vec3, rng: &mut impl Rng) -> Vec3 {
    if spec.range_noise_sigma == 0.0 && spec.angle_noise_sigma == 0.0 {
        return *p;
    }
    let r = p.norm();
    let az = p.y.atan2(p.x);
    let el = (p.z / r).asin();
    let (nr, na, ne): (f64, f64, f64) = (
        rng.sample(StandardNormal),
        rng.sample(StandardNormal),
        rng.sample(StandardNormal),
    );
    let sa = spec.angle_noise_sigma.to_radians();
    let (r, az, el) = (r + nr * spec.range_noise_sigma, az + na * sa, el + ne * sa);
    Vec3::new(r * el.cos() * az.cos(), r * el.cos() * az.sin(), r * el.sin())
}

/// Point on a face of the vehicle box that faces the sensor, in map frame.
fn sample_body_point(state: &VehicleState, sensor: &Vec3, rng: &mut impl Rng) -> Option<Vec3> {
    let (s, c) = state.heading.sin_cos();
    let center = Vec3::new(state.position[0], state.position[1], VEHICLE_HEIGHT * 0.5);
    let d = sensor - center;
    let local = Vec3::new(c * d.x + s * d.y, -s * d.x + c * d.y, d.z);
    let (hl, hw, hh) = (VEHICLE_LENGTH * 0.5, VEHICLE_WIDTH * 0.5, VEHICLE_HEIGHT * 0.5);
    // (axis, sign, half extents of the two in-face axes)
    let faces = [
        (0usize, 1.0, hw, hh),
        (0, -1.0, hw, hh),
        (1, 1.0, hl, hh),
        (1, -1.0, hl, hh),
        (2, 1.0, hl, hw),
    ];
    let half = [hl, hw, hh];
    let visible: Vec<_> = faces
        .iter()
        .filter(|(axis, sign, ..)| sign * local[*axis] > half[*axis])
        .collect();
    let total: f64 = visible.iter().map(|f| f.2 * f.3).sum();
    if visible.is_empty() || total <= 0.0 {
        return None;
    }
    let mut pick = rng.random::<f64>() * total;
    let mut face = visible[visible.len() - 1];
    for f in &visible {
        if pick < f.2 * f.3 {
            face = f;
            break;
        }
        pick -= f.2 * f.3;
    }
    let (axis, sign, _, _) = *face;
    let mut q = Vec3::zeros();
    for k in 0..3 {
        q[k] = if k == axis {
            sign * half[k]
        } else {
            rng.random_range(-half[k]..=half[k])
        };
    }
    Some(center + Vec3::new(c * q.x - s * q.y, s * q.x + c * q.y, q.z))
}

/// One radar frame in the sensor frame at true time `t` (seconds).
///
/// Detections number about `points_per_frame`; a binomial share given by
/// `static_fraction` is static clutter below the Doppler gate. The moving
/// slots go first to vehicle returns (3 to 10 per visible vehicle), then to
/// canopy clutter at the configured share, and the rest become sparse
/// spurious returns scattered over the whole field of view (if enabled).
pub fn simulate_radar_frame(
    spec: &RadarSpec,
    sensor_pose: &Pose,
    tracks: &[VehicleTrack],
    t: f64,
    clutter: &ClutterConfig,
    rng: &mut impl Rng,
) -> PointCloud {
    let to_sensor = sensor_pose.inverse();
    let origin = sensor_pose.translation;
    let t_ns = (t * 1e9).round() as i64;
    let vel_noise = |rng: &mut dyn rand::RngCore| -> f64 {
        let z: f64 = StandardNormal.sample(rng);
        z * spec.velocity_noise_sigma
    };

    let total = if spec.points_per_frame > 0.0 {
        Poisson::new(spec.points_per_frame)
            .map(|d| d.sample(rng) as u64)
            .unwrap_or(0)
    } else {
        0
    };
    let n_static = Binomial::new(total, clutter.static_fraction)
        .map(|d| d.sample(rng))
        .unwrap_or(total);
    let mut moving_slots = (total - n_static) as usize;

    let mut vehicle = Vec::new();
    for track in tracks {
        let Some(state) = track.state_at(t) else { continue };
        let center = Vec3::new(state.position[0], state.position[1], VEHICLE_HEIGHT * 0.5);
        if !spec.sees(&to_sensor.transform_point(&center)) {
            continue;
        }
        let n = rng.random_range(3..=10);
        for _ in 0..n {
            let Some(p) = sample_body_point(&state, &origin, rng) else {
                continue;
            };
            let local = to_sensor.transform_point(&p);
            if !spec.sees(&local) {
                continue;
            }
            let los = (p - origin).normalize();
            let v = state.velocity[0] * los.x + state.velocity[1] * los.y + vel_noise(rng);
            vehicle.push(RadarPoint::new(perturb(spec, &local, rng), v, t_ns));
        }
    }
    if vehicle.len() > moving_slots {
        // keep a random subset when traffic exceeds the moving budget
        for k in 0..moving_slots {
            let j = rng.random_range(k..vehicle.len());
            vehicle.swap(k, j);
        }
        vehicle.truncate(moving_slots);
    }
    moving_slots -= vehicle.len();
    let mut points = vehicle;

    let visible_canopies: Vec<&Canopy> = clutter
        .canopies
        .iter()
        .filter(|c| spec.sees(&to_sensor.transform_point(&Vec3::from(c.center))))
        .collect();
    if !visible_canopies.is_empty() && clutter.dynamic_fraction > 0.0 && !points.is_empty() {
        let rate = points.len() as f64 * clutter.dynamic_fraction / (1.0 - clutter.dynamic_fraction);
        let n = (Poisson::new(rate).map(|d| d.sample(rng) as usize).unwrap_or(0)).min(moving_slots);
        for _ in 0..n {
            let c = visible_canopies[rng.random_range(0..visible_canopies.len())];
            let p = Vec3::from(c.center) + uniform_in_ball(rng, c.radius);
            let local = to_sensor.transform_point(&p);
            let sign = if rng.random::<bool>() { 1.0 } else { -1.0 };
            let v = sign * rng.random_range(0.2..=1.0);
            points.push(RadarPoint::new(perturb(spec, &local, rng), v, t_ns));
        }
        moving_slots -= n;
    }
    if !clutter.spurious_returns {
        moving_slots = 0;
    }
    for _ in 0..moving_slots {
        let p = random_in_fov(spec, rng, 5.0_f64.min(spec.max_range), spec.max_range);
        let sign = if rng.random::<bool>() { 1.0 } else { -1.0 };
        points.push(RadarPoint::new(p, sign * rng.random_range(0.5..=15.0), t_ns));
    }
    for _ in 0..n_static {
        let p = random_in_fov(spec, rng, 2.0_f64.min(spec.max_range), spec.max_range / 3.0);
        let v = vel_noise(rng).clamp(-STATIC_SPEED_LIMIT, STATIC_SPEED_LIMIT);
        points.push(RadarPoint::new(p, v, t_ns));
    }
    PointCloud::with_points("radar", points)
}

/// Samples a road surface at height 0 with Poisson counts per polygon.
pub fn generate_scan(map: &PolygonMap, point_density: f64, noise_sigma: f64, rng: &mut impl Rng) -> Result<PointCloud> {
    if !(point_density > 0.0) || !point_density.is_finite() {
        return Err(Error::invalid(format!(
            "scan density must be positive, got {point_density}"
        )));
    }
    if !(noise_sigma >= 0.0) {
        return Err(Error::invalid("scan noise must be non-negative"));
    }
    let mut points = Vec::new();
    for poly in map.polygons() {
        let n = Poisson::new(poly.area() * point_density)
            .map(|d| d.sample(rng) as usize)
            .unwrap_or(0);
        let b = poly.bbox();
        let mut placed = 0;
        while placed < n {
            let p = [
                rng.random_range(b.min[0]..=b.max[0]),
                rng.random_range(b.min[1]..=b.max[1]),
            ];
            if !poly.contains(p) {
                continue;
            }
            let z: f64 = rng.sample(StandardNormal);
            points.push(RadarPoint::at(Vec3::new(p[0], p[1], z * noise_sigma)));
            placed += 1;
        }
    }
    Ok(PointCloud::with_points(MAP_FRAME, points))
}

/// Off-road structures of the laser scan: each canopy becomes a ball of points.
pub fn add_canopies(scan: &mut PointCloud, canopies: &[Canopy], points_per_canopy: usize, rng: &mut impl Rng) {
    for c in canopies {
        for _ in 0..points_per_canopy {
            scan.points
                .push(RadarPoint::at(Vec3::from(c.center) + uniform_in_ball(rng, c.radius)));
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScanConfig {
    /// Points per square meter of road.
    pub density: f64,
    pub noise_sigma: f64,
    pub canopy_points: usize,
}

impl Default for ScanConfig {
    fn default() -> Self {
        Self {
            density: 20.0,
            noise_sigma: 0.02,
            canopy_points: 400,
        }
    }
}

/// Manual placement: rough position, compass heading, mounting height.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SensorHint {
    pub position: [f64; 2],
    pub compass: Compass,
    pub height: f64,
}

impl SensorHint {
    /// Rounded truth: whole meters and the nearest compass point.
    pub fn from_truth(pose: &Pose) -> Self {
        let t = pose.translation;
        Self {
            position: [t.x.round(), t.y.round()],
            compass: Compass::nearest(pose.yaw()),
            height: t.z.round(),
        }
    }

    pub fn init_pose(&self) -> Pose {
        coarse_init(self.position, self.compass, self.height)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SensorConfig {
    pub id: String,
    pub position: [f64; 3],
    /// Roll, pitch, yaw in degrees (intrinsic z-y-x).
    pub rpy_deg: [f64; 3],
    #[serde(default)]
    pub radar: RadarSpec,
    #[serde(default)]
    pub clock: ClockModel,
    #[serde(default)]
    pub hint: Option<SensorHint>,
}

impl SensorConfig {
    pub fn pose(&self) -> Pose {
        let [r, p, y] = self.rpy_deg.map(f64::to_radians);
        Pose::from_xyz_rpy(Vec3::from(self.position), r, p, y)
    }

    pub fn hint(&self) -> SensorHint {
        self.hint.unwrap_or_else(|| SensorHint::from_truth(&self.pose()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MapPreset {
    Intersection,
    TwoLane,
}

impl MapPreset {
    pub fn build(self) -> LaneletMap {
        match self {
            MapPreset::Intersection => intersection_map(),
            MapPreset::TwoLane => two_lane_map(),
        }
    }
}

/// Either a built-in road layout or a map document on disk.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MapSpec {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub preset: Option<MapPreset>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub path: Option<PathBuf>,
}

impl MapSpec {
    pub fn load(&self) -> Result<LaneletMap> {
        match (self.preset, &self.path) {
            (Some(p), None) => Ok(p.build()),
            (None, Some(path)) => LaneletMap::load(path),
            _ => Err(Error::invalid("map needs exactly one of `preset` or `path`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub seed: u64,
    /// Seconds.
    pub duration: f64,
    pub map: MapSpec,
    #[serde(default)]
    pub traffic: TrafficConfig,
    #[serde(default)]
    pub clutter: ClutterConfig,
    #[serde(default)]
    pub scan: ScanConfig,
    pub sensors: Vec<SensorConfig>,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        intersection_scenario()
    }
}

impl ScenarioConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.duration > 0.0) || !self.duration.is_finite() {
            return Err(Error::invalid(format!(
                "duration must be positive, got {}",
                self.duration
            )));
        }
        self.traffic.validate()?;
        self.clutter.validate()?;
        if !(self.scan.density > 0.0) || !(self.scan.noise_sigma >= 0.0) {
            return Err(Error::invalid("scan density must be positive and noise non-negative"));
        }
        if self.sensors.is_empty() {
            return Err(Error::invalid("scenario needs at least one sensor"));
        }
        for (k, s) in self.sensors.iter().enumerate() {
            s.radar.validate()?;
            if s.id.is_empty() || s.id.contains(|c: char| c.is_whitespace() || c == ',' || c == '/') {
                return Err(Error::invalid(format!(
                    "sensor id {:?} must be non-empty without spaces, commas or slashes",
                    s.id
                )));
            }
            if self.sensors[..k].iter().any(|o| o.id == s.id) {
                return Err(Error::invalid(format!("duplicate sensor id {}", s.id)));
            }
            if s.position.iter().chain(&s.rpy_deg).any(|v| !v.is_finite()) {
                return Err(Error::invalid(format!("sensor {}: non-finite pose", s.id)));
            }
        }
        match (self.map.preset, &self.map.path) {
            (Some(_), None) | (None, Some(_)) => Ok(()),
            _ => Err(Error::invalid("map needs exactly one of `preset` or `path`")),
        }
    }

    pub fn from_toml(s: &str) -> Result<Self> {
        let cfg: ScenarioConfig = toml::from_str(s)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        Ok(toml::to_string(self)?)
    }

    pub fn frame_count(&self, sensor: &SensorConfig) -> usize {
        (self.duration * sensor.radar.frame_rate).round() as usize
    }
}

/// Stream of independent RNG seeds derived from one scenario seed.
pub(crate) fn derive_seed(seed: u64, stream: u64, index: u64) -> u64 {
    // splitmix64 finalizer over a mixed key
    let mut z = seed
        .wrapping_add(stream.wrapping_mul(0x9E37_79B9_7F4A_7C15))
        .wrapping_add(index.wrapping_mul(0xD1B5_4A32_D192_ED03));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

const STREAM_TRAFFIC: u64 = 1;
const STREAM_SCAN: u64 = 2;
const STREAM_FRAMES: u64 = 3;

#[derive(Debug, Clone, PartialEq)]
pub struct SensorData {
    pub id: String,
    pub truth: Pose,
    pub hint: SensorHint,
    pub radar: RadarSpec,
    /// Sensor-frame clouds stamped with the sensor's own clock.
    pub frames: Vec<PointCloud>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub config: ScenarioConfig,
    pub map: LaneletMap,
    pub scan: PointCloud,
    pub sensors: Vec<SensorData>,
    pub tracks: Vec<VehicleTrack>,
}

impl Dataset {
    pub fn sensor(&self, id: &str) -> Option<&SensorData> {
        self.sensors.iter().find(|s| s.id == id)
    }
}

/// Frames of one sensor over the whole run; each frame has its own RNG so
/// frames can be generated in parallel.
pub fn simulate_sensor(cfg: &ScenarioConfig, index: usize, tracks: &[VehicleTrack]) -> Vec<PointCloud> {
    let sensor = &cfg.sensors[index];
    let pose = sensor.pose();
    let period = sensor.radar.frame_period_ns();
    (0..cfg.frame_count(sensor))
        .into_par_iter()
        .map(|k| {
            let mut rng =
                ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, STREAM_FRAMES + ((index as u64) << 8), k as u64));
            let t_true = k as i64 * period;
            let mut frame = simulate_radar_frame(
                &sensor.radar,
                &pose,
                tracks,
                t_true as f64 * 1e-9,
                &cfg.clutter,
                &mut rng,
            );
            let stamp = skewed_clock(&sensor.id, t_true, &sensor.clock);
            frame.frame_id = sensor.id.clone();
            for p in &mut frame.points {
                p.timestamp_ns = stamp;
            }
            frame
        })
        .collect()
}

pub fn run_scenario(cfg: &ScenarioConfig) -> Result<Dataset> {
    cfg.validate()?;
    let map = cfg.map.load()?;
    map.validate()?;
    let polygons = map.polygon_map(DEFAULT_POLYGON_STEP)?;

    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, STREAM_TRAFFIC, 0));
    let tracks = simulate_traffic(&map, &cfg.traffic, cfg.duration, &mut rng)?;

    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, STREAM_SCAN, 0));
    let mut scan = generate_scan(&polygons, cfg.scan.density, cfg.scan.noise_sigma, &mut rng)?;
    add_canopies(&mut scan, &cfg.clutter.canopies, cfg.scan.canopy_points, &mut rng);

    let sensors = cfg
        .sensors
        .iter()
        .enumerate()
        .map(|(k, s)| SensorData {
            id: s.id.clone(),
            truth: s.pose(),
            hint: s.hint(),
            radar: s.radar,
            frames: simulate_sensor(cfg, k, &tracks),
        })
        .collect();
    Ok(Dataset {
        config: cfg.clone(),
        map,
        scan,
        sensors,
        tracks,
    })
}

/// T-junction: a through road with one lane per direction and a side arm
/// whose lane turns left onto the westbound lane.
///
/// Routes: eastbound through traffic, and side-arm traffic turning west.
pub fn intersection_map() -> LaneletMap {
    let w = 3.0;
    let lanelets = vec![
        Lanelet::straight(1, [-15.0, -1.5], [-3.0, -1.5], w),
        Lanelet::straight(2, [-3.0, -1.5], [15.0, -1.5], w).with_kind(crate::lanelet::LaneletKind::Junction),
        Lanelet::straight(3, [15.0, -1.5], [60.0, -1.5], w),
        Lanelet::straight(10, [12.0, -40.0], [12.0, -12.0], w),
        Lanelet::arc(11, [-1.5, -12.0], 13.5, w, 0.0, FRAC_PI_2, 24),
        Lanelet::straight(12, [-1.5, 1.5], [-15.0, 1.5], w),
    ];
    LaneletMap {
        origin: Default::default(),
        lanelets,
        routes: vec![vec![1, 2, 3], vec![10, 11, 12]],
    }
}

/// Straight road with one lane per direction.
pub fn two_lane_map() -> LaneletMap {
    LaneletMap {
        origin: Default::default(),
        lanelets: vec![
            Lanelet::straight(1, [-50.0, -1.5], [50.0, -1.5], 3.0),
            Lanelet::straight(2, [50.0, 1.5], [-50.0, 1.5], 3.0),
        ],
        routes: vec![vec![1], vec![2]],
    }
}

/// Bundled scene: the T-junction watched by one pole-mounted radar south-west
/// of the junction, 100 s at 20 Hz.
pub fn intersection_scenario() -> ScenarioConfig {
    ScenarioConfig {
        seed: 7,
        duration: 100.0,
        map: MapSpec {
            preset: Some(MapPreset::Intersection),
            path: None,
        },
        traffic: TrafficConfig::default(),
        clutter: ClutterConfig {
            canopies: vec![
                Canopy {
                    center: [0.0, -12.0, 6.0],
                    radius: 2.0,
                },
                Canopy {
                    center: [40.0, 10.0, 7.0],
                    radius: 2.5,
                },
                Canopy {
                    center: [30.0, -25.0, 5.0],
                    radius: 2.0,
                },
            ],
            ..ClutterConfig::default()
        },
        scan: ScanConfig::default(),
        sensors: vec![SensorConfig {
            id: "radar_sw".into(),
            position: [-10.3, -30.6, 6.2],
            rpy_deg: [0.4, 3.0, 38.5],
            radar: RadarSpec::default(),
            clock: ClockModel::default(),
            hint: None,
        }],
    }
}

/// The bundled scene with 0.3 m range noise and 30 % of the moving
/// detections coming from canopy clutter.
pub fn noisy_intersection_scenario() -> ScenarioConfig {
    let mut cfg = intersection_scenario();
    cfg.clutter.dynamic_fraction = 0.3;
    for s in &mut cfg.sensors {
        s.radar.range_noise_sigma = 0.3;
    }
    cfg
}

/// Two sensors facing each other across the two-lane road, used for
/// fusion demos.
pub fn overlap_scenario() -> ScenarioConfig {
    let sensor = |id: &str, x: f64, yaw: f64, offset_ms: i64| SensorConfig {
        id: id.into(),
        position: [x, -12.0, 6.0],
        rpy_deg: [0.0, 10.0, yaw],
        radar: RadarSpec::default(),
        clock: ClockModel {
            offset_ns: offset_ms * 1_000_000,
            ..ClockModel::default()
        },
        hint: None,
    };
    ScenarioConfig {
        seed: 11,
        duration: 100.0,
        map: MapSpec {
            preset: Some(MapPreset::TwoLane),
            path: None,
        },
        traffic: TrafficConfig {
            arrival_rate: 0.15,
            ..TrafficConfig::default()
        },
        clutter: ClutterConfig::default(),
        scan: ScanConfig::default(),
        sensors: vec![sensor("radar_w", -30.0, 30.0, 0), sensor("radar_e", 30.0, 150.0, 20)],
    }
}
