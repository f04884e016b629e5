//! Sub-lane occupancy: per-frame polygon assignment, multi-sensor fusion in
//! fixed time windows and rolling heat-map accumulation.

use std::collections::hash_map::DefaultHasher;
use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::fs::File;
use std::hash::{Hash, Hasher};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::PointCloud;
use crate::lanelet::PolygonMap;

pub const NS_PER_MS: i64 = 1_000_000;
pub const DEFAULT_WINDOW_MS: f64 = 50.0;
pub const DEFAULT_FINALIZATION_LAG: usize = 5;
/// 100 s of 50 ms windows.
pub const DEFAULT_HORIZON_WINDOWS: usize = 2000;

/// Occupied polygons seen by one sensor in one frame.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct OccupancyMessage {
    pub sensor_id: String,
    /// Frame timestamp on the sensor's clock.
    pub t_ns: i64,
    /// Ascending, no duplicates.
    pub polygon_ids: Vec<u32>,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AssignFilters {
    /// Drop points with `|radial_velocity|` at or below this speed.
    pub min_radial_speed: Option<f64>,
    /// Keep only points whose map-frame height lies in `[lo, hi]`.
    pub height_band: Option<[f64; 2]>,
    /// Drop points with rcs below this value; points without rcs are kept.
    pub min_rcs: Option<f64>,
}

impl AssignFilters {
    fn keeps(&self, p: &crate::geometry::RadarPoint) -> bool {
        if let Some(v) = self.min_radial_speed {
            if p.radial_velocity.abs() <= v {
                return false;
            }
        }
        if let Some([lo, hi]) = self.height_band {
            if p.position.z < lo || p.position.z > hi {
                return false;
            }
        }
        if let (Some(min), Some(rcs)) = (self.min_rcs, p.rcs) {
            if rcs < min {
                return false;
            }
        }
        true
    }
}

/// Maps a frame already expressed in the map frame onto the polygons its
/// points fall in.
pub fn assign_frame(
    sensor_id: &str,
    t_ns: i64,
    frame: &PointCloud,
    map: &PolygonMap,
    filters: &AssignFilters,
) -> OccupancyMessage {
    let ids: BTreeSet<u32> = frame
        .points
        .iter()
        .filter(|p| filters.keeps(p))
        .flat_map(|p| map.query_point([p.position.x, p.position.y]))
        .collect();
    OccupancyMessage {
        sensor_id: sensor_id.to_string(),
        t_ns,
        polygon_ids: ids.into_iter().collect(),
    }
}

pub fn window_len_ns(window_ms: f64) -> Result<i64> {
    let ns = (window_ms * NS_PER_MS as f64).round() as i64;
    if !(window_ms > 0.0) || ns <= 0 {
        return Err(Error::invalid(format!(
            "window length must be positive, got {window_ms} ms"
        )));
    }
    Ok(ns)
}

/// Half-open windows: a timestamp on a boundary belongs to the later window.
pub fn window_of(t_ns: i64, window_ns: i64) -> i64 {
    t_ns.div_euclid(window_ns)
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Default)]
pub struct OccupancyWindow {
    pub window_index: i64,
    pub occupied: BTreeSet<u32>,
    /// Message count per contributing sensor.
    pub messages: BTreeMap<String, usize>,
}

impl OccupancyWindow {
    fn empty(window_index: i64) -> Self {
        Self {
            window_index,
            ..Default::default()
        }
    }

    pub fn contributing_sensors(&self) -> impl Iterator<Item = &str> {
        self.messages.keys().map(String::as_str)
    }

    pub fn message_count(&self) -> usize {
        self.messages.values().sum()
    }

    fn absorb(&mut self, msg: &OccupancyMessage) {
        self.occupied.extend(msg.polygon_ids.iter().copied());
        *self.messages.entry(msg.sensor_id.clone()).or_insert(0) += 1;
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct FusionOutput {
    /// Contiguous run of windows from the earliest to the latest message.
    pub windows: Vec<OccupancyWindow>,
    pub late_messages: usize,
}

/// Batch fusion of a finite message set: union per window across all
/// sensors and messages, empty windows filled in. The result does not depend
/// on message order.
pub fn fuse_messages<'a>(messages: impl IntoIterator<Item = &'a OccupancyMessage>, window_ns: i64) -> FusionOutput {
    let mut by_window: BTreeMap<i64, OccupancyWindow> = BTreeMap::new();
    for m in messages {
        let w = window_of(m.t_ns, window_ns);
        by_window
            .entry(w)
            .or_insert_with(|| OccupancyWindow::empty(w))
            .absorb(m);
    }
    let (Some(&first), Some(&last)) = (by_window.keys().next(), by_window.keys().next_back()) else {
        return FusionOutput::default();
    };
    let windows = (first..=last)
        .map(|w| by_window.remove(&w).unwrap_or_else(|| OccupancyWindow::empty(w)))
        .collect();
    FusionOutput {
        windows,
        late_messages: 0,
    }
}

/// Streaming window aggregator for live replay.
///
/// A window is finalized once a message `lag` windows newer has arrived.
/// Messages for an already-finalized window are counted and dropped.
#[derive(Debug, Clone)]
pub struct WindowAggregator {
    window_ns: i64,
    lag: i64,
    pending: BTreeMap<i64, OccupancyWindow>,
    next_emit: Option<i64>,
    newest: Option<i64>,
    late: usize,
}

impl WindowAggregator {
    pub fn new(window_ns: i64, lag: usize) -> Self {
        Self {
            window_ns,
            lag: lag as i64,
            pending: BTreeMap::new(),
            next_emit: None,
            newest: None,
            late: 0,
        }
    }

    pub fn late_messages(&self) -> usize {
        self.late
    }

    /// Ingests one message and returns the windows it finalized, in order.
    pub fn push(&mut self, msg: &OccupancyMessage) -> Vec<OccupancyWindow> {
        let w = window_of(msg.t_ns, self.window_ns);
        if self.next_emit.is_some_and(|n| w < n) {
            self.late += 1;
            return Vec::new();
        }
        self.pending
            .entry(w)
            .or_insert_with(|| OccupancyWindow::empty(w))
            .absorb(msg);
        self.newest = Some(self.newest.map_or(w, |n| n.max(w)));
        let ready = self.newest.expect("set above") - self.lag;
        self.emit_through(ready)
    }

    fn emit_through(&mut self, last: i64) -> Vec<OccupancyWindow> {
        let start = match (self.next_emit, self.pending.keys().next()) {
            (Some(n), _) => n,
            (None, Some(&first)) => first,
            (None, None) => return Vec::new(),
        };
        if last < start {
            return Vec::new();
        }
        let out: Vec<OccupancyWindow> = (start..=last)
            .map(|w| self.pending.remove(&w).unwrap_or_else(|| OccupancyWindow::empty(w)))
            .collect();
        self.next_emit = Some(last + 1);
        out
    }

    /// Finalizes everything still pending.
    pub fn finish(&mut self) -> Vec<OccupancyWindow> {
        match self.newest {
            Some(n) => self.emit_through(n),
            None => Vec::new(),
        }
    }
}

/// Streams time-ordered (or nearly ordered) messages through a
/// [`WindowAggregator`].
pub fn fuse_stream<'a>(
    messages: impl IntoIterator<Item = &'a OccupancyMessage>,
    window_ns: i64,
    lag: usize,
) -> FusionOutput {
    let mut agg = WindowAggregator::new(window_ns, lag);
    let mut windows = Vec::new();
    for m in messages {
        windows.extend(agg.push(m));
    }
    windows.extend(agg.finish());
    FusionOutput {
        windows,
        late_messages: agg.late_messages(),
    }
}

/// Per-polygon count of occupied windows over the most recent horizon.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct HeatMap {
    /// Only polygons with a non-zero count are stored.
    pub counts: BTreeMap<u32, u32>,
    pub horizon_windows: usize,
    pub max_count: u32,
}

impl HeatMap {
    pub fn count(&self, polygon_id: u32) -> u32 {
        self.counts.get(&polygon_id).copied().unwrap_or(0)
    }

    /// Occupied time in seconds for a given window length.
    pub fn occupied_seconds(&self, polygon_id: u32, window_ms: f64) -> f64 {
        self.count(polygon_id) as f64 * window_ms / 1000.0
    }

    /// Stable 64-bit digest of the counts and horizon.
    pub fn fingerprint(&self) -> u64 {
        let mut h = DefaultHasher::new();
        self.hash(&mut h);
        h.finish()
    }
}

/// Rolling accumulator; windows older than the horizon expire.
#[derive(Debug, Clone)]
pub struct HeatAccumulator {
    horizon: usize,
    recent: VecDeque<(i64, Vec<u32>)>,
    counts: BTreeMap<u32, u32>,
}

impl HeatAccumulator {
    pub fn new(horizon_windows: usize) -> Result<Self> {
        if horizon_windows < 1 {
            return Err(Error::invalid("horizon must be at least one window"));
        }
        Ok(Self {
            horizon: horizon_windows,
            recent: VecDeque::new(),
            counts: BTreeMap::new(),
        })
    }

    pub fn push(&mut self, window: &OccupancyWindow) {
        let newest = window.window_index;
        self.recent
            .push_back((newest, window.occupied.iter().copied().collect()));
        for &id in &window.occupied {
            *self.counts.entry(id).or_insert(0) += 1;
        }
        let oldest_kept = newest - self.horizon as i64 + 1;
        while self.recent.front().is_some_and(|(w, _)| *w < oldest_kept) {
            let (_, ids) = self.recent.pop_front().expect("checked");
            for id in ids {
                if let Some(c) = self.counts.get_mut(&id) {
                    *c -= 1;
                    if *c == 0 {
                        self.counts.remove(&id);
                    }
                }
            }
        }
    }

    pub fn snapshot(&self) -> HeatMap {
        HeatMap {
            max_count: self.counts.values().copied().max().unwrap_or(0),
            counts: self.counts.clone(),
            horizon_windows: self.horizon,
        }
    }
}

/// Heat map over the last `horizon_windows` windows of an ordered sequence.
/// A horizon of 1 gives the instantaneous map.
pub fn accumulate(windows: &[OccupancyWindow], horizon_windows: usize) -> Result<HeatMap> {
    let mut acc = HeatAccumulator::new(horizon_windows)?;
    for w in windows {
        acc.push(w);
    }
    Ok(acc.snapshot())
}

/// Per-sensor clock error model.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClockModel {
    pub offset_ns: i64,
    /// Dimensionless rate error (100 ppm = 1e-4).
    pub drift: f64,
    /// Standard deviation of per-timestamp Gaussian jitter.
    pub jitter_ns: f64,
    pub seed: u64,
}

fn jitter_seed(seed: u64, sensor_id: &str, t_true_ns: i64) -> u64 {
    let mut h = DefaultHasher::new();
    seed.hash(&mut h);
    sensor_id.hash(&mut h);
    t_true_ns.hash(&mut h);
    h.finish()
}

/// `t_sensor = t_true + offset + drift·t_true + jitter`, where the jitter is
/// a deterministic draw keyed by seed, sensor and true time.
pub fn skewed_clock(sensor_id: &str, t_true_ns: i64, clock: &ClockModel) -> i64 {
    let mut t = t_true_ns as f64 + clock.offset_ns as f64 + clock.drift * t_true_ns as f64;
    if clock.jitter_ns > 0.0 {
        let mut rng = ChaCha8Rng::seed_from_u64(jitter_seed(clock.seed, sensor_id, t_true_ns));
        let z: f64 = StandardNormal.sample(&mut rng);
        t += z * clock.jitter_ns;
    }
    t.round() as i64
}

pub fn write_messages(w: &mut impl Write, messages: &[OccupancyMessage]) -> Result<()> {
    for m in messages {
        serde_json::to_writer(&mut *w, m)?;
        w.write_all(b"\n").map_err(Error::io("<messages>"))?;
    }
    Ok(())
}

pub fn read_messages(r: impl BufRead, path: &str) -> Result<Vec<OccupancyMessage>> {
    let mut out = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line = line.map_err(Error::io(path))?;
        if line.trim().is_empty() {
            continue;
        }
        let mut m: OccupancyMessage = serde_json::from_str(&line).map_err(|e| Error::Parse {
            path: path.to_string(),
            line: i + 1,
            msg: e.to_string(),
        })?;
        m.polygon_ids.sort_unstable();
        m.polygon_ids.dedup();
        out.push(m);
    }
    Ok(out)
}

pub fn save_messages(path: &Path, messages: &[OccupancyMessage]) -> Result<()> {
    let file = File::create(path).map_err(Error::io(path))?;
    let mut w = BufWriter::new(file);
    write_messages(&mut w, messages)?;
    w.flush().map_err(Error::io(path))
}

pub fn load_messages(path: &Path) -> Result<Vec<OccupancyMessage>> {
    let file = File::open(path).map_err(Error::io(path))?;
    read_messages(BufReader::new(file), &path.display().to_string())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{RadarPoint, Vec3};
    use crate::lanelet::{build_polygon_map, Lanelet};
    use rand::seq::SliceRandom;
    use rand::Rng;

    const W: i64 = 50 * NS_PER_MS;

    fn msg(sensor: &str, t_ms: f64, ids: &[u32]) -> OccupancyMessage {
        OccupancyMessage {
            sensor_id: sensor.into(),
            t_ns: (t_ms * NS_PER_MS as f64) as i64,
            polygon_ids: ids.to_vec(),
        }
    }

    fn cross_map() -> PolygonMap {
        build_polygon_map(
            &[
                Lanelet::straight(1, [-10.0, 0.0], [10.0, 0.0], 3.0),
                Lanelet::straight(2, [0.0, -10.0], [0.0, 10.0], 3.0),
            ],
            0.5,
        )
        .unwrap()
    }

    #[test]
    fn assign_frame_uses_set_semantics() {
        let map = cross_map();
        let c = map.polygons()[2].centroid();
        let one = PointCloud::with_points("map", vec![RadarPoint::new(Vec3::new(c[0], c[1], 0.5), 5.0, 0)]);
        let m = assign_frame("r", 7, &one, &map, &AssignFilters::default());
        assert_eq!(m.polygon_ids, vec![map.polygons()[2].id]);
        let many = PointCloud::with_points(
            "map",
            (0..50)
                .map(|i| RadarPoint::new(Vec3::new(c[0] + 0.001 * i as f64, c[1], 0.5), 5.0, 0))
                .collect(),
        );
        assert_eq!(
            assign_frame("r", 7, &many, &map, &AssignFilters::default())
                .polygon_ids
                .len(),
            1
        );

        let overlap = PointCloud::with_points("map", vec![RadarPoint::new(Vec3::new(0.2, 0.3, 0.5), 5.0, 0)]);
        let m = assign_frame("r", 7, &overlap, &map, &AssignFilters::default());
        assert_eq!(m.polygon_ids, map.query_point([0.2, 0.3]));
        assert_eq!(m.polygon_ids.len(), 2);
    }

    #[test]
    fn assign_filters() {
        let map = cross_map();
        let pts = vec![
            RadarPoint::new(Vec3::new(-8.0, 0.0, 0.5), 0.05, 0),
            RadarPoint::new(Vec3::new(8.0, 0.0, 9.0), 5.0, 0),
            RadarPoint::new(Vec3::new(0.0, 8.0, 0.5), 5.0, 0).with_rcs(-30.0),
            RadarPoint::new(Vec3::new(0.0, -8.0, 0.5), 5.0, 0).with_rcs(5.0),
        ];
        let frame = PointCloud::with_points("map", pts);
        let f = AssignFilters {
            min_radial_speed: Some(0.15),
            height_band: Some([-0.5, 4.0]),
            min_rcs: Some(-10.0),
        };
        let m = assign_frame("r", 0, &frame, &map, &f);
        assert_eq!(m.polygon_ids, map.query_point([0.0, -8.0]));
        let all: BTreeSet<u32> = frame
            .points
            .iter()
            .flat_map(|p| map.query_point([p.position.x, p.position.y]))
            .collect();
        assert_eq!(
            assign_frame("r", 0, &frame, &map, &AssignFilters::default()).polygon_ids,
            all.into_iter().collect::<Vec<_>>()
        );
    }

    #[test]
    fn window_boundaries() {
        assert_eq!(window_of(0, W), 0);
        assert_eq!(window_of(49_999_999, W), 0);
        assert_eq!(window_of(50_000_000, W), 1);
        assert_eq!(window_of(-1, W), -1);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut ts: Vec<i64> = (0..1000).map(|_| rng.random_range(0..10_000_000_000)).collect();
        ts.sort_unstable();
        let idx: Vec<i64> = ts.iter().map(|&t| window_of(t, W)).collect();
        assert!(idx.windows(2).all(|w| w[0] <= w[1]));
        assert!(window_len_ns(0.0).is_err());
    }

    #[test]
    fn fusion_deduplicates_and_fills_gaps() {
        let ms = vec![
            msg("a", 10.0, &[7, 9]),
            msg("b", 20.0, &[7]),
            msg("a", 40.0, &[3]),
            msg("a", 210.0, &[1]),
        ];
        let out = fuse_messages(&ms, W);
        assert_eq!(out.windows.len(), 5);
        assert_eq!(out.windows[0].occupied, BTreeSet::from([3, 7, 9]));
        assert_eq!(out.windows[0].messages.get("a"), Some(&2));
        assert_eq!(
            out.windows[0].contributing_sensors().collect::<Vec<_>>(),
            vec!["a", "b"]
        );
        for w in &out.windows[1..4] {
            assert!(w.occupied.is_empty() && w.message_count() == 0);
        }
        assert_eq!(out.windows[4].window_index, 4);
    }

    #[test]
    fn streaming_drops_late_messages() {
        let ms = vec![
            msg("a", 0.0, &[1]),
            msg("a", 400.0, &[2]),
            msg("b", 10.0, &[3]),
            msg("b", 390.0, &[4]),
        ];
        let out = fuse_stream(&ms, W, 5);
        assert_eq!(out.late_messages, 1);
        assert_eq!(out.windows.len(), 9);
        assert_eq!(out.windows[0].occupied, BTreeSet::from([1]));
        assert_eq!(out.windows[7].occupied, BTreeSet::from([4]));
        // in-order input gives the batch result
        let mut sorted = ms.clone();
        sorted.sort_by_key(|m| m.t_ns);
        assert_eq!(fuse_stream(&sorted, W, 5), fuse_messages(&ms, W));
    }

    #[test]
    fn fusion_is_order_invariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let mut ms: Vec<OccupancyMessage> = (0..300)
            .map(|i| {
                let s = ["a", "b", "c"][i % 3];
                let ids: BTreeSet<u32> = (0..rng.random_range(0..5)).map(|_| rng.random_range(0..40)).collect();
                msg(s, rng.random_range(0.0..3000.0), &ids.into_iter().collect::<Vec<_>>())
            })
            .collect();
        let base = fuse_messages(&ms, W);
        for _ in 0..10 {
            ms.shuffle(&mut rng);
            assert_eq!(fuse_messages(&ms, W), base);
        }
    }

    #[test]
    fn heat_map_counts_and_horizon() {
        let windows: Vec<OccupancyWindow> = (0..2000)
            .map(|w| OccupancyWindow {
                window_index: w,
                occupied: if w % 8 == 0 && w < 1800 {
                    BTreeSet::from([5, 6])
                } else {
                    BTreeSet::from([6])
                },
                messages: BTreeMap::new(),
            })
            .collect();
        let heat = accumulate(&windows, 2000).unwrap();
        assert_eq!(heat.count(5), 225);
        assert!((heat.occupied_seconds(5, 50.0) - 11.25).abs() < 1e-12);
        assert_eq!(heat.count(6), 2000);
        assert_eq!(heat.count(99), 0);
        assert_eq!(heat.max_count, 2000);
        let inst = accumulate(&windows, 1).unwrap();
        assert_eq!(inst.counts, BTreeMap::from([(6, 1)]));
        assert!(accumulate(&windows, 0).is_err());

        // expired windows leave the count
        let short = accumulate(&windows, 10).unwrap();
        assert_eq!(short.count(6), 10);
        assert_eq!(short.count(5), 0);
    }

    #[test]
    fn clock_model() {
        let id = ClockModel::default();
        assert_eq!(skewed_clock("a", 123_456_789, &id), 123_456_789);
        let drift = ClockModel {
            drift: 100e-6,
            ..Default::default()
        };
        assert_eq!(
            skewed_clock("a", 100_000_000_000, &drift) - 100_000_000_000,
            10 * NS_PER_MS
        );
        let jitter = ClockModel {
            jitter_ns: 1e6,
            seed: 3,
            ..Default::default()
        };
        let a = skewed_clock("a", 5_000_000_000, &jitter);
        assert_eq!(a, skewed_clock("a", 5_000_000_000, &jitter));
        assert_ne!(a, skewed_clock("b", 5_000_000_000, &jitter));
    }

    #[test]
    fn message_lines_round_trip() {
        let ms = vec![msg("radar_0", 5.0, &[1, 2, 3]), msg("radar_1", 55.0, &[])];
        let mut buf = Vec::new();
        write_messages(&mut buf, &ms).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with(r#"{"sensor_id":"radar_0","t_ns":5000000,"polygon_ids":[1,2,3]}"#));
        assert_eq!(read_messages(buf.as_slice(), "mem").unwrap(), ms);
    }
}
