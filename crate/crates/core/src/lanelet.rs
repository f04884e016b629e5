//! Lane-level road map: lanelets, their subdivision into sub-lane polygons
//! and an R-tree backed point lookup.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::MapOrigin;
use crate::rtree::{Aabb, RTree, DEFAULT_NODE_CAPACITY};

pub type Point2 = [f64; 2];

/// Default along-lane length of a sub-lane polygon, meters.
pub const DEFAULT_POLYGON_STEP: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LaneletKind {
    Driving,
    Turn,
    Junction,
}

/// Smallest lane unit, bounded by a left and a right polyline running in the
/// driving direction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Lanelet {
    pub id: i64,
    pub kind: LaneletKind,
    pub left: Vec<Point2>,
    pub right: Vec<Point2>,
}

impl Lanelet {
    /// Straight lanelet from `start` to `end` with the given width.
    pub fn straight(id: i64, start: Point2, end: Point2, width: f64) -> Self {
        let (dx, dy) = (end[0] - start[0], end[1] - start[1]);
        let len = dx.hypot(dy);
        let (nx, ny) = (-dy / len * width * 0.5, dx / len * width * 0.5);
        Self {
            id,
            kind: LaneletKind::Driving,
            left: vec![[start[0] + nx, start[1] + ny], [end[0] + nx, end[1] + ny]],
            right: vec![[start[0] - nx, start[1] - ny], [end[0] - nx, end[1] - ny]],
        }
    }

    /// Circular-arc lanelet whose centerline has radius `radius` about
    /// `center`, sweeping from `start_angle` by `sweep` radians (positive =
    /// counter-clockwise travel).
    pub fn arc(
        id: i64,
        center: Point2,
        radius: f64,
        width: f64,
        start_angle: f64,
        sweep: f64,
        segments: usize,
    ) -> Self {
        let segments = segments.max(1);
        // left of travel direction is toward the center for CCW travel
        let (r_left, r_right) = if sweep >= 0.0 {
            (radius - width * 0.5, radius + width * 0.5)
        } else {
            (radius + width * 0.5, radius - width * 0.5)
        };
        let pts = |r: f64| -> Vec<Point2> {
            (0..=segments)
                .map(|k| {
                    let a = start_angle + sweep * k as f64 / segments as f64;
                    [center[0] + r * a.cos(), center[1] + r * a.sin()]
                })
                .collect()
        };
        Self {
            id,
            kind: LaneletKind::Turn,
            left: pts(r_left),
            right: pts(r_right),
        }
    }

    pub fn with_kind(mut self, kind: LaneletKind) -> Self {
        self.kind = kind;
        self
    }

    /// Midpoint polyline between matched resamplings of both boundaries.
    pub fn centerline(&self, samples: usize) -> Vec<Point2> {
        let n = samples.max(1);
        let l = resample(&self.left, n);
        let r = resample(&self.right, n);
        l.iter()
            .zip(&r)
            .map(|(a, b)| [(a[0] + b[0]) * 0.5, (a[1] + b[1]) * 0.5])
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        if self.left.len() < 2 || self.right.len() < 2 {
            return Err(Error::invalid(format!(
                "lanelet {}: each boundary needs at least 2 vertices",
                self.id
            )));
        }
        if self
            .left
            .iter()
            .chain(&self.right)
            .any(|p| !p[0].is_finite() || !p[1].is_finite())
        {
            return Err(Error::invalid(format!("lanelet {}: non-finite vertex", self.id)));
        }
        if polyline_length(&self.left) <= 0.0 || polyline_length(&self.right) <= 0.0 {
            return Err(Error::DegenerateLanelet(self.id));
        }
        let d = |a: &Point2, b: &Point2| (a[0] - b[0]).hypot(a[1] - b[1]);
        let (l0, l1) = (&self.left[0], self.left.last().unwrap());
        let (r0, r1) = (&self.right[0], self.right.last().unwrap());
        if d(l0, r0) + d(l1, r1) > d(l0, r1) + d(l1, r0) {
            return Err(Error::invalid(format!(
                "lanelet {}: boundaries run in opposite directions",
                self.id
            )));
        }
        if self_intersects(&self.left) || self_intersects(&self.right) {
            return Err(Error::invalid(format!("lanelet {}: boundary self-intersects", self.id)));
        }
        Ok(())
    }
}

pub fn polyline_length(pts: &[Point2]) -> f64 {
    pts.windows(2)
        .map(|w| (w[1][0] - w[0][0]).hypot(w[1][1] - w[0][1]))
        .sum()
}

/// `n + 1` points evenly spaced by arc length; end points are copied exactly.
pub fn resample(pts: &[Point2], n: usize) -> Vec<Point2> {
    let total = polyline_length(pts);
    let mut cum = Vec::with_capacity(pts.len());
    let mut acc = 0.0;
    cum.push(0.0);
    for w in pts.windows(2) {
        acc += (w[1][0] - w[0][0]).hypot(w[1][1] - w[0][1]);
        cum.push(acc);
    }
    let mut out = Vec::with_capacity(n + 1);
    out.push(pts[0]);
    let mut seg = 0;
    for k in 1..n {
        let s = total * k as f64 / n as f64;
        while seg + 2 < cum.len() && cum[seg + 1] < s {
            seg += 1;
        }
        let len = cum[seg + 1] - cum[seg];
        let t = if len > 0.0 {
            ((s - cum[seg]) / len).clamp(0.0, 1.0)
        } else {
            0.0
        };
        let (a, b) = (pts[seg], pts[seg + 1]);
        out.push([a[0] + (b[0] - a[0]) * t, a[1] + (b[1] - a[1]) * t]);
    }
    out.push(*pts.last().expect("non-empty polyline"));
    out
}

fn orient(a: &Point2, b: &Point2, c: &Point2) -> f64 {
    (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])
}

fn segments_cross(a: &Point2, b: &Point2, c: &Point2, d: &Point2) -> bool {
    let o1 = orient(a, b, c);
    let o2 = orient(a, b, d);
    let o3 = orient(c, d, a);
    let o4 = orient(c, d, b);
    (o1 > 0.0) != (o2 > 0.0) && (o3 > 0.0) != (o4 > 0.0) && o1 != 0.0 && o2 != 0.0 && o3 != 0.0 && o4 != 0.0
}

fn self_intersects(pts: &[Point2]) -> bool {
    let n = pts.len();
    for i in 0..n.saturating_sub(1) {
        for j in (i + 2)..n.saturating_sub(1) {
            if segments_cross(&pts[i], &pts[i + 1], &pts[j], &pts[j + 1]) {
                return true;
            }
        }
    }
    false
}

/// Four-corner road tile, vertices counter-clockwise.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubLanePolygon {
    pub id: u32,
    pub vertices: [Point2; 4],
    pub parent_lanelet: i64,
    pub along_index: u32,
}

impl SubLanePolygon {
    pub fn signed_area(&self) -> f64 {
        shoelace(&self.vertices)
    }

    pub fn area(&self) -> f64 {
        self.signed_area().abs()
    }

    pub fn centroid(&self) -> Point2 {
        // area-weighted centroid of the quadrilateral
        let v = &self.vertices;
        let a = shoelace(v);
        if a.abs() < 1e-300 {
            let sx: f64 = v.iter().map(|p| p[0]).sum();
            let sy: f64 = v.iter().map(|p| p[1]).sum();
            return [sx / 4.0, sy / 4.0];
        }
        let (mut cx, mut cy) = (0.0, 0.0);
        for i in 0..4 {
            let (p, q) = (v[i], v[(i + 1) % 4]);
            let cross = p[0] * q[1] - q[0] * p[1];
            cx += (p[0] + q[0]) * cross;
            cy += (p[1] + q[1]) * cross;
        }
        [cx / (6.0 * a), cy / (6.0 * a)]
    }

    pub fn bbox(&self) -> Aabb {
        Aabb::from_points(self.vertices.iter())
    }

    /// Boundary-inclusive point containment.
    pub fn contains(&self, p: Point2) -> bool {
        point_in_polygon(&self.vertices, p)
    }

    pub fn is_simple(&self) -> bool {
        let v = &self.vertices;
        !segments_cross(&v[0], &v[1], &v[2], &v[3]) && !segments_cross(&v[1], &v[2], &v[3], &v[0])
    }
}

fn shoelace(v: &[Point2]) -> f64 {
    let n = v.len();
    (0..n)
        .map(|i| {
            let (p, q) = (v[i], v[(i + 1) % n]);
            p[0] * q[1] - q[0] * p[1]
        })
        .sum::<f64>()
        * 0.5
}

fn on_segment(a: &Point2, b: &Point2, p: &Point2) -> bool {
    let len = (b[0] - a[0]).hypot(b[1] - a[1]);
    if orient(a, b, p).abs() > 1e-12 * len.max(1.0) {
        return false;
    }
    p[0] >= a[0].min(b[0]) && p[0] <= a[0].max(b[0]) && p[1] >= a[1].min(b[1]) && p[1] <= a[1].max(b[1])
}

/// Crossing-number test with explicit boundary inclusion.
pub fn point_in_polygon(poly: &[Point2], p: Point2) -> bool {
    let n = poly.len();
    let mut inside = false;
    for i in 0..n {
        let (a, b) = (&poly[i], &poly[(i + 1) % n]);
        if on_segment(a, b, &p) {
            return true;
        }
        if (a[1] > p[1]) != (b[1] > p[1]) {
            let x = a[0] + (p[1] - a[1]) * (b[0] - a[0]) / (b[1] - a[1]);
            if p[0] < x {
                inside = !inside;
            }
        }
    }
    inside
}

/// Splits a lanelet into quadrilaterals of roughly `step` length. Both
/// boundaries are resampled to the same segment count, fixed by the shorter
/// one; polygon ids start at `first_id`.
pub fn subdivide_lanelet(l: &Lanelet, step: f64, first_id: u32) -> Result<Vec<SubLanePolygon>> {
    if !(step > 0.0) {
        return Err(Error::invalid(format!("polygon step must be positive, got {step}")));
    }
    l.validate()?;
    let shorter = polyline_length(&l.left).min(polyline_length(&l.right));
    let n = ((shorter / step).ceil() as usize).max(1);
    let left = resample(&l.left, n);
    let right = resample(&l.right, n);
    let polys = (0..n)
        .map(|k| {
            let mut vertices = [left[k], left[k + 1], right[k + 1], right[k]];
            if shoelace(&vertices) < 0.0 {
                vertices = [left[k], right[k], right[k + 1], left[k + 1]];
            }
            SubLanePolygon {
                id: first_id + k as u32,
                vertices,
                parent_lanelet: l.id,
                along_index: k as u32,
            }
        })
        .collect();
    Ok(polys)
}

/// Sub-lane polygons with a point index. Immutable after construction.
#[derive(Debug, Clone)]
pub struct PolygonMap {
    polygons: Vec<SubLanePolygon>,
    index: RTree,
}

impl PolygonMap {
    pub fn from_polygons(polygons: Vec<SubLanePolygon>) -> Result<Self> {
        if polygons.is_empty() {
            return Err(Error::EmptyMap);
        }
        let mut ids: Vec<u32> = polygons.iter().map(|p| p.id).collect();
        ids.sort_unstable();
        if ids.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::invalid("duplicate polygon id"));
        }
        let entries = polygons.iter().enumerate().map(|(i, p)| (p.bbox(), i)).collect();
        let index = RTree::bulk_load(entries, DEFAULT_NODE_CAPACITY);
        Ok(Self { polygons, index })
    }

    pub fn polygons(&self) -> &[SubLanePolygon] {
        &self.polygons
    }

    pub fn len(&self) -> usize {
        self.polygons.len()
    }

    pub fn is_empty(&self) -> bool {
        self.polygons.is_empty()
    }

    pub fn index(&self) -> &RTree {
        &self.index
    }

    pub fn get(&self, id: u32) -> Option<&SubLanePolygon> {
        self.polygons.iter().find(|p| p.id == id)
    }

    pub fn bounds(&self) -> Aabb {
        self.polygons.iter().fold(Aabb::empty(), |b, p| b.union(&p.bbox()))
    }

    /// Ids of all polygons containing `xy`, ascending.
    pub fn query_point(&self, xy: Point2) -> Vec<u32> {
        let mut out: Vec<u32> = self
            .index
            .query_point(xy)
            .into_iter()
            .filter(|&i| self.polygons[i].contains(xy))
            .map(|i| self.polygons[i].id)
            .collect();
        out.sort_unstable();
        out
    }

    /// Reference path: exact test against every polygon.
    pub fn query_point_brute_force(&self, xy: Point2) -> Vec<u32> {
        let mut out: Vec<u32> = self.polygons.iter().filter(|p| p.contains(xy)).map(|p| p.id).collect();
        out.sort_unstable();
        out
    }

    pub fn contains_point(&self, xy: Point2) -> bool {
        self.index
            .query_point(xy)
            .into_iter()
            .any(|i| self.polygons[i].contains(xy))
    }
}

/// Subdivides every lanelet and assigns globally unique ids in lanelet order.
pub fn build_polygon_map(lanelets: &[Lanelet], step: f64) -> Result<PolygonMap> {
    if lanelets.is_empty() {
        return Err(Error::EmptyMap);
    }
    let mut seen = std::collections::BTreeSet::new();
    let mut polygons = Vec::new();
    for l in lanelets {
        if !seen.insert(l.id) {
            return Err(Error::invalid(format!("duplicate lanelet id {}", l.id)));
        }
        let next = polygons.len() as u32;
        polygons.extend(subdivide_lanelet(l, step, next)?);
    }
    PolygonMap::from_polygons(polygons)
}

/// Map document: origin metadata, lanelets and optional vehicle routes
/// (ordered lanelet id lists).
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct LaneletMap {
    #[serde(default)]
    pub origin: MapOrigin,
    pub lanelets: Vec<Lanelet>,
    #[serde(default)]
    pub routes: Vec<Vec<i64>>,
}

impl LaneletMap {
    pub fn lanelet(&self, id: i64) -> Option<&Lanelet> {
        self.lanelets.iter().find(|l| l.id == id)
    }

    pub fn validate(&self) -> Result<()> {
        for l in &self.lanelets {
            l.validate()?;
        }
        for route in &self.routes {
            for id in route {
                if self.lanelet(*id).is_none() {
                    return Err(Error::invalid(format!("route references unknown lanelet {id}")));
                }
            }
        }
        Ok(())
    }

    pub fn polygon_map(&self, step: f64) -> Result<PolygonMap> {
        build_polygon_map(&self.lanelets, step)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let map: LaneletMap = serde_json::from_str(s)?;
        map.validate()?;
        Ok(map)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_json()? + "\n").map_err(Error::io(path))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let s = fs::read_to_string(path).map_err(Error::io(path))?;
        Self::from_json(&s)
    }
}

#[cfg(test)]
mod tests {
    use std::f64::consts::FRAC_PI_2;

    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn straight_lanelet_gives_twenty_tiles() {
        let l = Lanelet::straight(1, [0.0, 0.0], [10.0, 0.0], 3.0);
        let polys = subdivide_lanelet(&l, 0.5, 0).unwrap();
        assert_eq!(polys.len(), 20);
        for (k, p) in polys.iter().enumerate() {
            assert_eq!(p.id, k as u32);
            assert!((p.area() - 1.5).abs() < 1e-12);
            assert!(p.signed_area() > 0.0);
            assert!(p.is_simple());
            let b = p.bbox();
            assert!((b.max[0] - b.min[0] - 0.5).abs() < 1e-12);
            assert!((b.max[1] - b.min[1] - 3.0).abs() < 1e-12);
        }
    }

    #[test]
    fn step_longer_than_lanelet_gives_one_tile() {
        let l = Lanelet::straight(1, [0.0, 0.0], [4.0, 0.0], 3.0);
        let polys = subdivide_lanelet(&l, 10.0, 0).unwrap();
        assert_eq!(polys.len(), 1);
        assert!((polys[0].area() - 12.0).abs() < 1e-12);
    }

    #[test]
    fn quarter_circle_area_matches_annulus_sector() {
        let (r, w) = (20.0, 3.0);
        let l = Lanelet::arc(3, [0.0, 0.0], r, w, 0.0, FRAC_PI_2, 90);
        let polys = subdivide_lanelet(&l, 0.5, 0).unwrap();
        let total: f64 = polys.iter().map(SubLanePolygon::area).sum();
        let ro: f64 = r + w / 2.0;
        let ri: f64 = r - w / 2.0;
        let analytic = FRAC_PI_2 / 2.0 * (ro * ro - ri * ri);
        assert!(((total - analytic) / analytic).abs() < 0.01, "{total} vs {analytic}");
        for p in &polys {
            assert!(p.signed_area() > 0.0);
        }
    }

    #[test]
    fn consecutive_tiles_share_bitwise_identical_edges() {
        let l = Lanelet::arc(3, [5.0, -2.0], 12.0, 3.0, 0.3, 1.2, 17);
        let polys = subdivide_lanelet(&l, 0.5, 0).unwrap();
        for w in polys.windows(2) {
            let a: Vec<[u64; 2]> = w[0].vertices.iter().map(|p| [p[0].to_bits(), p[1].to_bits()]).collect();
            let b: Vec<[u64; 2]> = w[1].vertices.iter().map(|p| [p[0].to_bits(), p[1].to_bits()]).collect();
            let shared = a.iter().filter(|v| b.contains(v)).count();
            assert_eq!(shared, 2);
        }
    }

    #[test]
    fn degenerate_lanelets_rejected() {
        let l = Lanelet {
            id: 9,
            kind: LaneletKind::Driving,
            left: vec![[0.0, 1.0], [0.0, 1.0]],
            right: vec![[0.0, 0.0], [5.0, 0.0]],
        };
        assert!(matches!(
            subdivide_lanelet(&l, 0.5, 0),
            Err(Error::DegenerateLanelet(9))
        ));
        let single = Lanelet {
            id: 2,
            kind: LaneletKind::Driving,
            left: vec![[0.0, 1.0]],
            right: vec![[0.0, 0.0], [5.0, 0.0]],
        };
        assert!(subdivide_lanelet(&single, 0.5, 0).is_err());
        let reversed = Lanelet {
            id: 4,
            kind: LaneletKind::Driving,
            left: vec![[0.0, 3.0], [10.0, 3.0]],
            right: vec![[10.0, 0.0], [0.0, 0.0]],
        };
        assert!(subdivide_lanelet(&reversed, 0.5, 0).is_err());
        assert!(subdivide_lanelet(&Lanelet::straight(1, [0.0, 0.0], [1.0, 0.0], 3.0), 0.0, 0).is_err());
    }

    fn crossing() -> Vec<Lanelet> {
        vec![
            Lanelet::straight(1, [-10.0, 0.0], [10.0, 0.0], 3.0).with_kind(LaneletKind::Junction),
            Lanelet::straight(2, [0.0, -10.0], [0.0, 10.0], 3.0).with_kind(LaneletKind::Junction),
        ]
    }

    #[test]
    fn junction_overlap_is_reported_twice() {
        let map = build_polygon_map(&crossing(), 0.5).unwrap();
        assert_eq!(map.len(), 80);
        let ids = map.query_point([0.1, 0.1]);
        assert_eq!(ids.len(), 2);
        let parents: Vec<i64> = ids.iter().map(|&id| map.get(id).unwrap().parent_lanelet).collect();
        assert_eq!(parents, vec![1, 2]);
        assert!(map.query_point([100.0, 0.0]).is_empty());
        let p = &map.polygons()[3];
        assert_eq!(map.query_point(p.centroid()), vec![p.id]);
    }

    #[test]
    fn empty_map_rejected() {
        assert!(matches!(build_polygon_map(&[], 0.5), Err(Error::EmptyMap)));
    }

    #[test]
    fn index_path_equals_brute_force() {
        let mut lanelets = crossing();
        lanelets.push(Lanelet::arc(7, [0.0, 0.0], 6.0, 3.0, 0.0, 2.0, 30));
        let map = build_polygon_map(&lanelets, 0.5).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..5000 {
            let p = [rng.random_range(-12.0..12.0), rng.random_range(-12.0..12.0)];
            assert_eq!(map.query_point(p), map.query_point_brute_force(p));
        }
        // polygon vertices sit exactly on boundaries
        for poly in map.polygons() {
            for v in poly.vertices {
                assert_eq!(map.query_point(v), map.query_point_brute_force(v));
                assert!(map.query_point(v).contains(&poly.id));
            }
        }
        let ids: Vec<usize> = map.index().items();
        assert_eq!(ids, (0..map.len()).collect::<Vec<_>>());
    }

    #[test]
    fn map_document_round_trip() {
        let map = LaneletMap {
            origin: MapOrigin {
                easting: 676_000.0,
                northing: 5_400_000.0,
                zone: Some("32U".into()),
            },
            lanelets: crossing(),
            routes: vec![vec![1], vec![2]],
        };
        let back = LaneletMap::from_json(&map.to_json().unwrap()).unwrap();
        assert_eq!(back, map);
        let bad =
            r#"{"lanelets":[{"id":1,"kind":"driving","left":[[0,0],[1,0]],"right":[[0,-3],[1,-3]]}],"routes":[[5]]}"#;
        assert!(LaneletMap::from_json(bad).is_err());
    }
}
