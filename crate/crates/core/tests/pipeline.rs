//! Simulated scenes run through the full pipeline.

use radloc_core::dataset::{load_dataset, save_dataset};
use radloc_core::evaluation::dataset_target;
use radloc_core::filter::localize_sequence;
use radloc_core::geometry::transform_cloud;
use radloc_core::lanelet::DEFAULT_POLYGON_STEP;
use radloc_core::occupancy::{accumulate, assign_frame, fuse_messages, window_len_ns, AssignFilters};
use radloc_core::preprocess::{build_source_cloud, SourceParams};
use radloc_core::simulator::{intersection_scenario, overlap_scenario, run_scenario};
use radloc_core::{pose_error, LocalizationConfig, OccupancyMessage};

#[test]
fn dataset_round_trips_through_files() {
    let mut cfg = intersection_scenario();
    cfg.duration = 3.0;
    let ds = run_scenario(&cfg).unwrap();
    let dir = tempfile::tempdir().unwrap();
    save_dataset(&ds, dir.path()).unwrap();
    // the saved scenario records the hint the sensor was given
    let mut expect = ds.clone();
    for (c, s) in expect.config.sensors.iter_mut().zip(&ds.sensors) {
        c.hint = Some(s.hint);
    }
    assert_eq!(load_dataset(dir.path()).unwrap(), expect);
}

#[test]
fn source_cloud_keeps_roads_and_drops_canopies() {
    let ds = run_scenario(&intersection_scenario()).unwrap();
    let sensor = &ds.sensors[0];
    let source = build_source_cloud(&sensor.frames, &SourceParams::default()).unwrap();
    let in_map = transform_cloud(&sensor.truth, &source);
    let polygons = ds.map.polygon_map(DEFAULT_POLYGON_STEP).unwrap();
    let on_road = in_map
        .points
        .iter()
        .filter(|p| polygons.contains_point([p.position.x, p.position.y]))
        .count();
    assert!(
        on_road as f64 >= 0.9 * in_map.len() as f64,
        "{on_road} of {} on the road",
        in_map.len()
    );
    for c in &ds.config.clutter.canopies {
        let near = in_map
            .points
            .iter()
            .filter(|p| (p.position - radloc_core::Vec3::from(c.center)).norm() < c.radius + 0.5)
            .count();
        assert_eq!(near, 0, "canopy at {:?}", c.center);
    }
}

/// The overlap scene is a single straight road, which leaves roll about
/// the road axis unobservable; fusion runs on the true poses.
#[test]
fn overlap_sensors_fuse() {
    let ds = run_scenario(&overlap_scenario()).unwrap();
    let polygons = ds.map.polygon_map(DEFAULT_POLYGON_STEP).unwrap();
    let filters = AssignFilters {
        min_radial_speed: Some(0.15),
        ..AssignFilters::default()
    };
    let mut messages: Vec<OccupancyMessage> = Vec::new();
    for sensor in &ds.sensors {
        for frame in sensor.frames.iter().filter(|f| !f.is_empty()) {
            let t = frame.points[0].timestamp_ns;
            messages.push(assign_frame(
                &sensor.id,
                t,
                &transform_cloud(&sensor.truth, frame),
                &polygons,
                &filters,
            ));
        }
    }
    let fused = fuse_messages(&messages, window_len_ns(50.0).unwrap());
    assert!(fused.windows.iter().any(|w| w.contributing_sensors().count() == 2));
    let heat = accumulate(&fused.windows, 2000).unwrap();
    assert!(heat.max_count > 0 && heat.max_count <= 2000);
}

#[test]
fn bundled_sensor_localizes_from_its_hint() {
    let ds = run_scenario(&intersection_scenario()).unwrap();
    let target = dataset_target(&ds, &Default::default()).unwrap();
    let sensor = &ds.sensors[0];
    let (state, track) = localize_sequence(
        &sensor.frames,
        &target,
        &sensor.hint.init_pose(),
        &LocalizationConfig::default(),
    )
    .unwrap();
    let err = pose_error(&state.pose(), &sensor.truth);
    assert!(err.d2d < 0.5 && err.yaw.abs() < 0.5, "{err:?}");
    // cycles before the window is half full coast
    assert!(!track[0].updated);
    assert!(track.iter().any(|e| e.updated));
}
