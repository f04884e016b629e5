//! On-disk dataset layout.
//!
//! ```text
//! scenario.toml        scenario config with resolved sensor hints
//! map.json             lanelet map
//! scan.txt             laser-scan road cloud (map frame)
//! frames_<id>.txt      radar frames per sensor (sensor frame)
//! ground_truth.txt     sensor_id,x,y,z,qx,qy,qz,qw
//! tracks.json          vehicle tracks
//! ```

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::cloud_io::{load_cloud, load_frames, save_cloud, save_frames};
use crate::error::{Error, Result};
use crate::geometry::Pose;
use crate::lanelet::LaneletMap;
use crate::simulator::{Dataset, ScenarioConfig, SensorData, VehicleTrack};

pub const SCENARIO_FILE: &str = "scenario.toml";
pub const MAP_FILE: &str = "map.json";
pub const SCAN_FILE: &str = "scan.txt";
pub const GROUND_TRUTH_FILE: &str = "ground_truth.txt";
pub const TRACKS_FILE: &str = "tracks.json";

pub fn frames_file(dir: &Path, sensor_id: &str) -> PathBuf {
    dir.join(format!("frames_{sensor_id}.txt"))
}

/// `sensor_id,x,y,z,qx,qy,qz,qw` lines under a `#` header.
pub fn format_poses(poses: &[(String, Pose)]) -> String {
    let mut out = String::from("# sensor_id,x,y,z,qx,qy,qz,qw\n");
    for (id, pose) in poses {
        let v = pose.to_vector7();
        let _ = writeln!(
            out,
            "{id},{:?},{:?},{:?},{:?},{:?},{:?},{:?}",
            v[0], v[1], v[2], v[3], v[4], v[5], v[6]
        );
    }
    out
}

pub fn parse_poses(text: &str, path: &str) -> Result<Vec<(String, Pose)>> {
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
        if f.len() != 8 {
            return Err(err(format!("expected 8 fields, found {}", f.len())));
        }
        let mut v = [0.0f64; 7];
        for (k, slot) in v.iter_mut().enumerate() {
            *slot = f[k + 1].parse().map_err(|e| err(format!("field {}: {e}", k + 2)))?;
        }
        if v.iter().any(|x| !x.is_finite()) || v[3..].iter().all(|x| *x == 0.0) {
            return Err(err("pose must be finite with a non-zero quaternion".into()));
        }
        out.push((f[0].to_string(), Pose::from_vector7(&v)));
    }
    Ok(out)
}

pub fn save_poses(path: &Path, poses: &[(String, Pose)]) -> Result<()> {
    fs::write(path, format_poses(poses)).map_err(Error::io(path))
}

pub fn load_poses(path: &Path) -> Result<Vec<(String, Pose)>> {
    let text = fs::read_to_string(path).map_err(Error::io(path))?;
    parse_poses(&text, &path.display().to_string())
}

/// Looks up a sensor's pose, failing with `MissingPose`.
pub fn pose_for(poses: &[(String, Pose)], sensor_id: &str) -> Result<Pose> {
    poses
        .iter()
        .find(|(id, _)| id == sensor_id)
        .map(|(_, p)| *p)
        .ok_or_else(|| Error::MissingPose(sensor_id.to_string()))
}

pub fn save_dataset(dataset: &Dataset, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(Error::io(dir))?;
    let mut config = dataset.config.clone();
    for s in &mut config.sensors {
        s.hint = Some(s.hint());
    }
    let path = dir.join(SCENARIO_FILE);
    fs::write(&path, config.to_toml()?).map_err(Error::io(&path))?;
    dataset.map.save(&dir.join(MAP_FILE))?;
    save_cloud(&dir.join(SCAN_FILE), &dataset.scan)?;
    for s in &dataset.sensors {
        save_frames(&frames_file(dir, &s.id), &s.id, &s.frames)?;
    }
    let truth: Vec<(String, Pose)> = dataset.sensors.iter().map(|s| (s.id.clone(), s.truth)).collect();
    save_poses(&dir.join(GROUND_TRUTH_FILE), &truth)?;
    let path = dir.join(TRACKS_FILE);
    fs::write(&path, serde_json::to_string(&dataset.tracks)? + "\n").map_err(Error::io(&path))
}

/// Reads a dataset back. Ground truth is optional (a field deployment has
/// none); missing truth leaves the sensor pose at identity. A sensor whose
/// frame file is absent is an error.
pub fn load_dataset(dir: &Path) -> Result<Dataset> {
    let path = dir.join(SCENARIO_FILE);
    let text = fs::read_to_string(&path).map_err(Error::io(&path))?;
    let config: ScenarioConfig = toml::from_str(&text)?;
    let map = LaneletMap::load(&dir.join(MAP_FILE))?;
    let scan = load_cloud(&dir.join(SCAN_FILE))?;
    let truth_path = dir.join(GROUND_TRUTH_FILE);
    let truth = if truth_path.exists() {
        load_poses(&truth_path)?
    } else {
        Vec::new()
    };
    let mut sensors = Vec::with_capacity(config.sensors.len());
    for s in &config.sensors {
        sensors.push(SensorData {
            id: s.id.clone(),
            truth: pose_for(&truth, &s.id).unwrap_or_else(|_| Pose::identity()),
            hint: s.hint(),
            radar: s.radar,
            frames: load_frames(&frames_file(dir, &s.id))?,
        });
    }
    let tracks_path = dir.join(TRACKS_FILE);
    let tracks: Vec<VehicleTrack> = if tracks_path.exists() {
        let text = fs::read_to_string(&tracks_path).map_err(Error::io(&tracks_path))?;
        serde_json::from_str(&text)?
    } else {
        Vec::new()
    };
    Ok(Dataset {
        config,
        map,
        scan,
        sensors,
        tracks,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Vec3;
    use crate::simulator::{intersection_scenario, run_scenario};

    fn tempdir(tag: &str) -> PathBuf {
        let dir = std::env::temp_dir().join(format!("radloc-dataset-{tag}-{}", std::process::id()));
        let _ = fs::remove_dir_all(&dir);
        dir
    }

    #[test]
    fn poses_round_trip_bit_exact() {
        let poses = vec![
            (
                "a".to_string(),
                Pose::from_xyz_rpy(Vec3::new(1.5, -2.25, 6.1), 0.01, 0.14, 0.7),
            ),
            ("b".to_string(), Pose::identity()),
        ];
        let back = parse_poses(&format_poses(&poses), "mem").unwrap();
        assert_eq!(back, poses);
        assert!(matches!(pose_for(&back, "c"), Err(Error::MissingPose(id)) if id == "c"));
        assert!(parse_poses("a,1,2,3,0,0,0,0\n", "mem").is_err());
        assert!(parse_poses("a,1,2,3\n", "mem").is_err());
    }

    #[test]
    fn dataset_round_trip() {
        let mut cfg = intersection_scenario();
        cfg.duration = 2.0;
        let ds = run_scenario(&cfg).unwrap();
        let dir = tempdir("rt");
        save_dataset(&ds, &dir).unwrap();
        let back = load_dataset(&dir).unwrap();
        assert_eq!(back.map, ds.map);
        assert_eq!(back.scan, ds.scan);
        assert_eq!(back.tracks, ds.tracks);
        assert_eq!(back.sensors, ds.sensors);
        assert_eq!(back.config.sensors[0].hint, Some(ds.sensors[0].hint));
        fs::remove_dir_all(&dir).unwrap();
    }
}
