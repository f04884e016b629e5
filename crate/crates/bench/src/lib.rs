//! Fixtures shared by the benchmarks in `benches/`.

use radloc_core::geometry::{PointCloud, Pose, RadarPoint, Vec3};
use radloc_core::OccupancyMessage;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Uniform points in a cube of half-width `half`.
pub fn uniform_points(n: usize, half: f64, seed: u64) -> Vec<Vec3> {
    let mut r = rng(seed);
    (0..n)
        .map(|_| {
            Vec3::new(
                r.random_range(-half..half),
                r.random_range(-half..half),
                r.random_range(-half..half),
            )
        })
        .collect()
}

/// Moving points bunched along a few road-like strips.
pub fn strip_cloud(n: usize, seed: u64) -> PointCloud {
    let mut r = rng(seed);
    let points = (0..n)
        .map(|_| {
            let lane = r.random_range(0..4) as f64;
            let p = Vec3::new(
                r.random_range(0.0..80.0),
                lane * 3.5 + r.random_range(-0.8..0.8),
                r.random_range(0.0..1.5),
            );
            RadarPoint::new(p, r.random_range(-12.0..12.0), 0)
        })
        .collect();
    PointCloud::with_points("radar", points)
}

/// A floor, a wall and a pole, plus the same cloud seen from `offset`.
pub fn registration_pair(n: usize, offset: &Pose, seed: u64) -> (PointCloud, PointCloud) {
    let mut r = rng(seed);
    let target: Vec<Vec3> = (0..n)
        .map(|k| {
            let (a, b) = (r.random_range(-20.0..20.0), r.random_range(0.0..8.0));
            match k % 3 {
                0 => Vec3::new(a, b * 2.0, 0.0),
                1 => Vec3::new(a, 16.0, b * 0.5),
                _ => Vec3::new(-6.0, 4.0, b),
            }
        })
        .collect();
    let inv = offset.inverse();
    let source = target.iter().step_by(2).map(|p| inv.transform_point(p));
    (
        PointCloud::from_positions("radar", source),
        PointCloud::from_positions("map", target),
    )
}

/// Messages from `sensors` radars at 20 Hz over `seconds`.
pub fn message_stream(sensors: usize, seconds: f64, seed: u64) -> Vec<OccupancyMessage> {
    let mut r = rng(seed);
    let frames = (seconds * 20.0) as i64;
    let mut out = Vec::new();
    for k in 0..frames {
        for s in 0..sensors {
            let mut ids: Vec<u32> = (0..r.random_range(0..12)).map(|_| r.random_range(0..600)).collect();
            ids.sort_unstable();
            ids.dedup();
            out.push(OccupancyMessage {
                sensor_id: format!("radar_{s}"),
                t_ns: k * 50_000_000 + s as i64 * 20_000_000 + r.random_range(0..1_000_000),
                polygon_ids: ids,
            });
        }
    }
    out.sort_by_key(|m| m.t_ns);
    out
}
