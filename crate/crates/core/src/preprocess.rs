//! Point-cloud preprocessing for both registration inputs.
//!
//! The radar side accumulates frames, drops static returns with a Doppler
//! gate, keeps the largest density cluster and voxelizes it. The laser-scan
//! side masks the scan with the road polygons and runs the same cluster and
//! voxel chain.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{PointCloud, RadarPoint, Vec3};
use crate::kdtree::KdTree;
use crate::lanelet::PolygonMap;

pub const DEFAULT_MIN_RADIAL_SPEED: f64 = 0.15;
pub const DEFAULT_EPS: f64 = 0.5;
pub const DEFAULT_MIN_PTS: usize = 10;
pub const DEFAULT_CELL_SIZE: f64 = 0.5;
pub const DEFAULT_WINDOW_FRAMES: usize = 2000;

/// Label for points that belong to no cluster.
pub const NOISE: i32 = -1;

/// Keeps points with `|radial_velocity| > v_min`, in input order.
pub fn doppler_filter(cloud: &PointCloud, v_min: f64) -> PointCloud {
    PointCloud {
        frame_id: cloud.frame_id.clone(),
        points: cloud
            .points
            .iter()
            .filter(|p| p.radial_velocity.abs() > v_min)
            .copied()
            .collect(),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClusterLabeling {
    /// `NOISE` or a cluster id; ids are contiguous from 0.
    pub labels: Vec<i32>,
    pub eps: f64,
    pub min_pts: usize,
    pub n_clusters: usize,
}

impl ClusterLabeling {
    pub fn cluster_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.n_clusters];
        for &l in &self.labels {
            if l >= 0 {
                sizes[l as usize] += 1;
            }
        }
        sizes
    }

    pub fn noise_count(&self) -> usize {
        self.labels.iter().filter(|&&l| l == NOISE).count()
    }
}

/// DBSCAN in 3-D Euclidean distance.
///
/// A point is core when at least `min_pts` points (itself included) lie
/// within `eps`, boundary inclusive. Clusters are grown in index order of
/// their first core point, so a border point reachable from several clusters
/// goes to the lowest cluster id.
pub fn dbscan(cloud: &PointCloud, eps: f64, min_pts: usize) -> Result<ClusterLabeling> {
    if !(eps > 0.0) {
        return Err(Error::invalid(format!("eps must be positive, got {eps}")));
    }
    if min_pts < 1 {
        return Err(Error::invalid("min_pts must be at least 1"));
    }
    let positions = cloud.positions();
    let n = positions.len();
    let tree = KdTree::new(&positions);
    let is_core: Vec<bool> = positions
        .iter()
        .map(|p| {
            let mut count = 0;
            tree.for_each_within(p, eps, |_| count += 1);
            count >= min_pts
        })
        .collect();

    let mut labels = vec![NOISE; n];
    let mut assigned = vec![false; n];
    let mut next_id = 0i32;
    let mut queue = Vec::new();
    for seed in 0..n {
        if assigned[seed] || !is_core[seed] {
            continue;
        }
        let id = next_id;
        next_id += 1;
        labels[seed] = id;
        assigned[seed] = true;
        queue.clear();
        queue.push(seed);
        while let Some(p) = queue.pop() {
            tree.for_each_within(&positions[p], eps, |q| {
                if !assigned[q] {
                    assigned[q] = true;
                    labels[q] = id;
                    if is_core[q] {
                        queue.push(q);
                    }
                }
            });
        }
    }
    Ok(ClusterLabeling {
        labels,
        eps,
        min_pts,
        n_clusters: next_id as usize,
    })
}

/// Points of the most populous cluster; ties go to the lower cluster id.
pub fn largest_cluster(cloud: &PointCloud, labeling: &ClusterLabeling) -> Result<PointCloud> {
    if labeling.labels.len() != cloud.len() {
        return Err(Error::invalid(format!(
            "labeling has {} entries for {} points",
            labeling.labels.len(),
            cloud.len()
        )));
    }
    let sizes = labeling.cluster_sizes();
    let best = sizes
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(&a.0)))
        .map(|(id, _)| id as i32)
        .ok_or(Error::AllNoise)?;
    Ok(PointCloud {
        frame_id: cloud.frame_id.clone(),
        points: cloud
            .points
            .iter()
            .zip(&labeling.labels)
            .filter(|(_, &l)| l == best)
            .map(|(p, _)| *p)
            .collect(),
    })
}

/// Set of occupied cubic cells, indexed by `floor(position / cell_size)`.
#[derive(Debug, Clone, PartialEq)]
pub struct VoxelGrid {
    pub cell_size: f64,
    pub origin: Vec3,
    pub occupied_cells: BTreeSet<[i64; 3]>,
}

impl VoxelGrid {
    pub fn from_cloud(cloud: &PointCloud, cell_size: f64) -> Result<Self> {
        if !(cell_size > 0.0) {
            return Err(Error::invalid(format!("cell size must be positive, got {cell_size}")));
        }
        let occupied_cells = cloud
            .points
            .iter()
            .map(|p| cell_index(&p.position, cell_size))
            .collect();
        Ok(Self {
            cell_size,
            origin: Vec3::zeros(),
            occupied_cells,
        })
    }

    pub fn cell_center(&self, idx: &[i64; 3]) -> Vec3 {
        Vec3::new(
            self.origin.x + (idx[0] as f64 + 0.5) * self.cell_size,
            self.origin.y + (idx[1] as f64 + 0.5) * self.cell_size,
            self.origin.z + (idx[2] as f64 + 0.5) * self.cell_size,
        )
    }

    pub fn len(&self) -> usize {
        self.occupied_cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.occupied_cells.is_empty()
    }
}

fn cell_index(p: &Vec3, cell: f64) -> [i64; 3] {
    [
        (p.x / cell).floor() as i64,
        (p.y / cell).floor() as i64,
        (p.z / cell).floor() as i64,
    ]
}

/// One point per occupied cell at the cell's geometric center, in cell-index
/// order.
pub fn voxelize(cloud: &PointCloud, cell_size: f64) -> Result<PointCloud> {
    let grid = VoxelGrid::from_cloud(cloud, cell_size)?;
    Ok(PointCloud::from_positions(
        cloud.frame_id.clone(),
        grid.occupied_cells.iter().map(|c| grid.cell_center(c)),
    ))
}

/// Keeps scan points whose ground footprint lies in some road polygon.
pub fn mask_road(scan: &PointCloud, map: &PolygonMap) -> Result<PointCloud> {
    if map.is_empty() {
        return Err(Error::EmptyMap);
    }
    Ok(PointCloud {
        frame_id: scan.frame_id.clone(),
        points: scan
            .points
            .iter()
            .filter(|p| map.contains_point([p.position.x, p.position.y]))
            .copied()
            .collect(),
    })
}

/// Concatenates the most recent `n_f` frames.
pub fn accumulate_frames(frames: &[PointCloud], n_f: usize) -> Result<PointCloud> {
    if n_f < 1 {
        return Err(Error::invalid("n_f must be at least 1"));
    }
    let start = frames.len().saturating_sub(n_f);
    let window = &frames[start..];
    let frame_id = window.first().map(|f| f.frame_id.clone()).unwrap_or_default();
    let points: Vec<RadarPoint> = window.iter().flat_map(|f| f.points.iter().copied()).collect();
    Ok(PointCloud::with_points(frame_id, points))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SourceParams {
    pub v_min: f64,
    pub eps: f64,
    pub min_pts: usize,
    pub cell_size: f64,
    pub window_frames: usize,
}

impl Default for SourceParams {
    fn default() -> Self {
        Self {
            v_min: DEFAULT_MIN_RADIAL_SPEED,
            eps: DEFAULT_EPS,
            min_pts: DEFAULT_MIN_PTS,
            cell_size: DEFAULT_CELL_SIZE,
            window_frames: DEFAULT_WINDOW_FRAMES,
        }
    }
}

impl SourceParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.v_min >= 0.0) {
            return Err(Error::invalid("v_min must be non-negative"));
        }
        if !(self.eps > 0.0) || self.min_pts < 1 || !(self.cell_size > 0.0) || self.window_frames < 1 {
            return Err(Error::invalid("source parameters out of range"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TargetParams {
    pub eps: f64,
    pub min_pts: usize,
    pub cell_size: f64,
}

impl Default for TargetParams {
    fn default() -> Self {
        Self {
            eps: DEFAULT_EPS,
            min_pts: DEFAULT_MIN_PTS,
            cell_size: DEFAULT_CELL_SIZE,
        }
    }
}

impl TargetParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.eps > 0.0) || self.min_pts < 1 || !(self.cell_size > 0.0) {
            return Err(Error::invalid("target parameters out of range"));
        }
        Ok(())
    }
}

/// Radar road description: accumulate, Doppler gate, DBSCAN, largest
/// cluster, voxelize.
pub fn build_source_cloud(frames: &[PointCloud], params: &SourceParams) -> Result<PointCloud> {
    params.validate()?;
    let accumulated = accumulate_frames(frames, params.window_frames)?;
    let moving = doppler_filter(&accumulated, params.v_min);
    if moving.is_empty() {
        return Err(Error::NoMovingPoints);
    }
    let labels = dbscan(&moving, params.eps, params.min_pts)?;
    let road = largest_cluster(&moving, &labels).map_err(|e| match e {
        Error::AllNoise => Error::NoMovingPoints,
        e => e,
    })?;
    voxelize(&road, params.cell_size)
}

/// Laser-scan road description: mask by map, DBSCAN, largest cluster,
/// voxelize.
pub fn build_target_cloud(scan: &PointCloud, map: &PolygonMap, params: &TargetParams) -> Result<PointCloud> {
    params.validate()?;
    let road = mask_road(scan, map)?;
    let labels = dbscan(&road, params.eps, params.min_pts)?;
    let main = largest_cluster(&road, &labels)?;
    voxelize(&main, params.cell_size)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lanelet::{build_polygon_map, Lanelet};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn cloud_of(pts: &[[f64; 3]]) -> PointCloud {
        PointCloud::from_positions("t", pts.iter().map(|p| Vec3::new(p[0], p[1], p[2])))
    }

    fn with_speeds(speeds: &[f64]) -> PointCloud {
        PointCloud::with_points(
            "t",
            speeds
                .iter()
                .enumerate()
                .map(|(i, &v)| RadarPoint::new(Vec3::new(i as f64, 0.0, 0.0), v, i as i64))
                .collect(),
        )
    }

    /// Independent O(n²) DBSCAN with the same core/border conventions.
    fn reference_dbscan(pts: &[Vec3], eps: f64, min_pts: usize) -> Vec<i32> {
        let n = pts.len();
        let nb: Vec<Vec<usize>> = (0..n)
            .map(|i| (0..n).filter(|&j| (pts[i] - pts[j]).norm() <= eps).collect())
            .collect();
        let core: Vec<bool> = nb.iter().map(|v| v.len() >= min_pts).collect();
        let mut labels = vec![NOISE; n];
        let mut c = 0;
        for i in 0..n {
            if labels[i] != NOISE || !core[i] {
                continue;
            }
            let mut frontier = std::collections::VecDeque::from([i]);
            labels[i] = c;
            while let Some(p) = frontier.pop_front() {
                for &q in &nb[p] {
                    if labels[q] == NOISE {
                        labels[q] = c;
                        if core[q] {
                            frontier.push_back(q);
                        }
                    }
                }
            }
            c += 1;
        }
        labels
    }

    /// Clusters as sorted member lists, comparable regardless of label ids.
    fn partition(labels: &[i32]) -> BTreeSet<Vec<usize>> {
        let mut groups = std::collections::BTreeMap::<i32, Vec<usize>>::new();
        for (i, &l) in labels.iter().enumerate() {
            groups.entry(l).or_default().push(i);
        }
        let mut out: BTreeSet<Vec<usize>> = groups
            .iter()
            .filter(|(k, _)| **k >= 0)
            .map(|(_, v)| v.clone())
            .collect();
        out.insert(groups.get(&NOISE).cloned().unwrap_or_default());
        out
    }

    #[test]
    fn doppler_gate_is_strict() {
        let c = with_speeds(&[0.10, -0.2, 0.15, 0.150001, -0.15]);
        let f = doppler_filter(&c, 0.15);
        let kept: Vec<f64> = f.points.iter().map(|p| p.radial_velocity).collect();
        assert_eq!(kept, vec![-0.2, 0.150001]);
        assert!(doppler_filter(&PointCloud::new("t"), 0.15).is_empty());
    }

    #[test]
    fn doppler_gate_matches_linear_scan_on_mostly_static_cloud() {
        let mut rng = ChaCha8Rng::seed_from_u64(93);
        let speeds: Vec<f64> = (0..10_000)
            .map(|_| {
                if rng.random_bool(0.93) {
                    rng.random_range(-0.149..0.149)
                } else {
                    rng.random_range(0.2..15.0) * if rng.random_bool(0.5) { 1.0 } else { -1.0 }
                }
            })
            .collect();
        let c = with_speeds(&speeds);
        let f = doppler_filter(&c, 0.15);
        let brute = speeds.iter().filter(|v| v.abs() > 0.15).count();
        assert_eq!(f.len(), brute);
        assert_eq!(doppler_filter(&f, 0.15), f);
    }

    #[test]
    fn dbscan_examples() {
        let two = cloud_of(&[[0.0, 0.0, 0.0], [10.0, 0.0, 0.0]]);
        let l = dbscan(&two, 0.5, 1).unwrap();
        assert_eq!(l.labels, vec![0, 1]);

        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut pts: Vec<[f64; 3]> = (0..12)
            .map(|_| {
                [
                    rng.random_range(-0.05..0.05),
                    rng.random_range(-0.05..0.05),
                    rng.random_range(-0.05..0.05),
                ]
            })
            .collect();
        pts.push([5.0, 0.0, 0.0]);
        let c = cloud_of(&pts);
        let l = dbscan(&c, 0.5, 10).unwrap();
        assert_eq!(l.n_clusters, 1);
        assert_eq!(l.cluster_sizes(), vec![12]);
        assert_eq!(l.labels[12], NOISE);
        assert_eq!(l.labels, reference_dbscan(&c.positions(), 0.5, 10));

        let e = dbscan(&PointCloud::new("t"), 0.5, 10).unwrap();
        assert!(e.labels.is_empty() && e.n_clusters == 0);
        assert!(dbscan(&c, 0.0, 10).is_err());
        assert!(dbscan(&c, 0.5, 0).is_err());
    }

    #[test]
    fn border_point_goes_to_lower_cluster() {
        // two cores of 3 points each, with one border point between them
        let pts = [
            [0.0, 0.0, 0.0],
            [0.1, 0.0, 0.0],
            [0.9, 0.0, 0.0],
            [1.8, 0.0, 0.0],
            [1.9, 0.0, 0.0],
            [-0.1, 0.0, 0.0],
            [2.0, 0.0, 0.0],
        ];
        let c = cloud_of(&pts);
        let l = dbscan(&c, 0.85, 3).unwrap();
        assert_eq!(l.labels, reference_dbscan(&c.positions(), 0.85, 3));
        assert_eq!(l.labels[2], 0);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]
        #[test]
        fn dbscan_matches_reference(
            pts in prop::collection::vec(prop::array::uniform3(0.0..4.0f64), 0..200),
            min_pts in 1usize..12,
        ) {
            let c = cloud_of(&pts);
            let got = dbscan(&c, 0.5, min_pts).unwrap();
            let want = reference_dbscan(&c.positions(), 0.5, min_pts);
            prop_assert_eq!(partition(&got.labels), partition(&want));
            prop_assert_eq!(&got.labels, &want);
        }

        #[test]
        fn core_partition_is_permutation_invariant(
            pts in prop::collection::vec(prop::array::uniform3(0.0..3.0f64), 1..150),
            shift in 1usize..149,
        ) {
            let n = pts.len();
            let perm: Vec<usize> = (0..n).map(|i| (i + shift) % n).collect();
            let a = dbscan(&cloud_of(&pts), 0.5, 4).unwrap();
            let b = dbscan(&cloud_of(&perm.iter().map(|&i| pts[i]).collect::<Vec<_>>()), 0.5, 4).unwrap();
            prop_assert_eq!(a.n_clusters, b.n_clusters);
            let positions = cloud_of(&pts).positions();
            let core = |i: usize| positions.iter().filter(|q| (positions[i] - **q).norm() <= 0.5).count() >= 4;
            // labels of b mapped back to original indices
            let mut b_orig = vec![NOISE; n];
            for (k, &i) in perm.iter().enumerate() { b_orig[i] = b.labels[k]; }
            let core_only = |labels: &[i32]| -> Vec<i32> {
                labels.iter().enumerate().map(|(i, &l)| if core(i) { l } else { NOISE }).collect()
            };
            prop_assert_eq!(partition(&core_only(&a.labels)), partition(&core_only(&b_orig)));
            // noise set is identical too (noise = not reachable from any core)
            let noise = |labels: &[i32]| labels.iter().map(|&l| l == NOISE).collect::<Vec<_>>();
            prop_assert_eq!(noise(&a.labels), noise(&b_orig));
        }
    }

    #[test]
    fn largest_cluster_rules() {
        let c = cloud_of(&[[0.0; 3], [1.0, 0.0, 0.0], [2.0, 0.0, 0.0], [3.0, 0.0, 0.0]]);
        let lab = |labels: Vec<i32>, n| ClusterLabeling {
            labels,
            eps: 0.5,
            min_pts: 1,
            n_clusters: n,
        };
        assert_eq!(largest_cluster(&c, &lab(vec![0, 0, 0, 0], 1)).unwrap().len(), 4);
        let big = largest_cluster(&c, &lab(vec![1, 0, 0, 0], 2)).unwrap();
        assert_eq!(big.points[0].position.x, 1.0);
        let tie = largest_cluster(&c, &lab(vec![1, 1, 0, 0], 2)).unwrap();
        assert_eq!(tie.points[0].position.x, 2.0);
        assert!(matches!(
            largest_cluster(&c, &lab(vec![-1; 4], 0)),
            Err(Error::AllNoise)
        ));
        assert!(largest_cluster(&c, &lab(vec![0; 3], 1)).is_err());
    }

    #[test]
    fn voxelize_uses_cell_centers() {
        let v = voxelize(&cloud_of(&[[0.3, 0.2, 0.1]]), 0.5).unwrap();
        assert_eq!(v.points[0].position, Vec3::new(0.25, 0.25, 0.25));
        let v = voxelize(&cloud_of(&[[0.3, 0.2, 0.1], [0.4, 0.1, 0.4]]), 0.5).unwrap();
        assert_eq!(v.len(), 1);
        let v = voxelize(&cloud_of(&[[-0.1, -0.6, 0.0]]), 0.5).unwrap();
        assert_eq!(v.points[0].position, Vec3::new(-0.25, -0.75, 0.25));
        assert!(voxelize(&cloud_of(&[[0.0; 3]]), 0.0).is_err());
    }

    #[test]
    fn voxel_count_matches_distinct_index_triples() {
        let mut rng = ChaCha8Rng::seed_from_u64(1000);
        let pts: Vec<[f64; 3]> = (0..1000)
            .map(|_| [rng.random::<f64>(), rng.random::<f64>(), rng.random::<f64>()])
            .collect();
        let distinct: BTreeSet<[i64; 3]> = pts
            .iter()
            .map(|p| {
                [
                    (p[0] / 0.5).floor() as i64,
                    (p[1] / 0.5).floor() as i64,
                    (p[2] / 0.5).floor() as i64,
                ]
            })
            .collect();
        let c = cloud_of(&pts);
        let v = voxelize(&c, 0.5).unwrap();
        assert_eq!(v.len(), distinct.len());
        let half_diag = 0.5 * 3f64.sqrt() / 2.0;
        for out in &v.points {
            assert!(c
                .points
                .iter()
                .any(|p| (p.position - out.position).norm() <= half_diag + 1e-12));
        }
        assert_eq!(voxelize(&v, 0.5).unwrap(), v);
    }

    #[test]
    fn mask_road_keeps_points_on_the_lanelet() {
        let map = build_polygon_map(&[Lanelet::straight(1, [0.0, 0.0], [10.0, 0.0], 3.0)], 0.5).unwrap();
        let centroid = map.polygons()[4].centroid();
        let c = cloud_of(&[[centroid[0], centroid[1], 0.0], [100.0, 100.0, 0.0]]);
        let m = mask_road(&c, &map).unwrap();
        assert_eq!(m.len(), 1);

        // uniform 0.1 m grid over [-5, 15] x [-5, 5]; lanelet covers [0,10] x [-1.5,1.5]
        let mut grid = Vec::new();
        for i in -50..=150 {
            for j in -50..=50 {
                grid.push([i as f64 * 0.1, j as f64 * 0.1, 0.0]);
            }
        }
        let c = cloud_of(&grid);
        let m = mask_road(&c, &map).unwrap();
        // analytic: 101 columns x 31 rows on the closed rectangle
        let analytic = 101.0 * 31.0;
        let row = 101.0;
        assert!((m.len() as f64 - analytic).abs() <= row, "{} vs {analytic}", m.len());
        assert_eq!(mask_road(&m, &map).unwrap(), m);
    }

    #[test]
    fn accumulate_takes_last_frames() {
        let frames: Vec<PointCloud> = (0..3)
            .map(|k| cloud_of(&[[k as f64, 0.0, 0.0], [k as f64, 1.0, 0.0]]))
            .collect();
        let a = accumulate_frames(&frames, 2).unwrap();
        assert_eq!(a.len(), 4);
        assert_eq!(a.points[0].position.x, 1.0);
        assert_eq!(accumulate_frames(&frames, 10).unwrap().len(), 6);
        assert!(accumulate_frames(&frames, 0).is_err());
    }

    #[test]
    fn source_pipeline_errors_on_static_scene() {
        let frames = vec![with_speeds(&[0.0, 0.01, -0.1])];
        assert!(matches!(
            build_source_cloud(&frames, &SourceParams::default()),
            Err(Error::NoMovingPoints)
        ));
        // moving but isolated points are all noise
        let frames = vec![with_speeds(&[1.0, 2.0, 3.0])];
        assert!(matches!(
            build_source_cloud(&frames, &SourceParams::default()),
            Err(Error::NoMovingPoints)
        ));
    }
}
