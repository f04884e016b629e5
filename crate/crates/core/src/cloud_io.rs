//! Plain-text point-cloud files.
//!
//! One point per line, `x,y,z,radial_velocity,timestamp_ns[,rcs]`. Header
//! lines start with `#`; `# frame_id: <label>` names the coordinate frame.
//! Multi-frame files separate frames with `# frame: <index>` markers, which
//! single-cloud readers simply skip. Floats are written in shortest
//! round-trip form, so a write/read cycle is bit-exact.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::geometry::{PointCloud, RadarPoint, Vec3};

const FIELDS_HEADER: &str = "# fields: x,y,z,radial_velocity,timestamp_ns[,rcs]";

fn write_point(w: &mut impl Write, p: &RadarPoint) -> std::io::Result<()> {
    write!(
        w,
        "{:?},{:?},{:?},{:?},{}",
        p.position.x, p.position.y, p.position.z, p.radial_velocity, p.timestamp_ns
    )?;
    if let Some(rcs) = p.rcs {
        write!(w, ",{rcs:?}")?;
    }
    writeln!(w)
}

pub fn write_cloud(w: &mut impl Write, cloud: &PointCloud) -> std::io::Result<()> {
    writeln!(w, "# frame_id: {}", cloud.frame_id)?;
    writeln!(w, "{FIELDS_HEADER}")?;
    for p in &cloud.points {
        write_point(w, p)?;
    }
    Ok(())
}

/// Writes a sequence of frames sharing one frame id. Empty frames are kept.
pub fn write_frames(w: &mut impl Write, frame_id: &str, frames: &[PointCloud]) -> std::io::Result<()> {
    writeln!(w, "# frame_id: {frame_id}")?;
    writeln!(w, "{FIELDS_HEADER}")?;
    for (k, frame) in frames.iter().enumerate() {
        writeln!(w, "# frame: {k}")?;
        for p in &frame.points {
            write_point(w, p)?;
        }
    }
    Ok(())
}

fn parse_point(line: &str, path: &str, lineno: usize) -> Result<RadarPoint> {
    let err = |msg: String| Error::Parse {
        path: path.to_string(),
        line: lineno,
        msg,
    };
    let fields: Vec<&str> = line.split(',').map(str::trim).collect();
    if fields.len() != 5 && fields.len() != 6 {
        return Err(err(format!("expected 5 or 6 fields, found {}", fields.len())));
    }
    let f = |i: usize| -> Result<f64> {
        fields[i]
            .parse::<f64>()
            .map_err(|e| err(format!("field {}: {e}", i + 1)))
    };
    let position = Vec3::new(f(0)?, f(1)?, f(2)?);
    if !position.iter().all(|c| c.is_finite()) {
        return Err(err("non-finite position".into()));
    }
    let radial_velocity = f(3)?;
    let timestamp_ns = fields[4].parse::<i64>().map_err(|e| err(format!("timestamp: {e}")))?;
    let rcs = if fields.len() == 6 { Some(f(5)?) } else { None };
    Ok(RadarPoint {
        position,
        radial_velocity,
        timestamp_ns,
        rcs,
    })
}

/// Reads frames. A file without frame markers yields a single frame.
pub fn read_frames(r: impl BufRead, path: &str) -> Result<(String, Vec<PointCloud>)> {
    let mut frame_id = String::new();
    let mut frames: Vec<Vec<RadarPoint>> = Vec::new();
    let mut saw_marker = false;
    for (i, line) in r.lines().enumerate() {
        let line = line.map_err(Error::io(path))?;
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        if let Some(header) = line.strip_prefix('#') {
            let header = header.trim();
            if let Some(id) = header.strip_prefix("frame_id:") {
                frame_id = id.trim().to_string();
            } else if header.starts_with("frame:") {
                saw_marker = true;
                frames.push(Vec::new());
            }
            continue;
        }
        let point = parse_point(line, path, i + 1)?;
        if frames.is_empty() {
            frames.push(Vec::new());
        }
        frames.last_mut().expect("non-empty").push(point);
    }
    if !saw_marker && frames.is_empty() {
        frames.push(Vec::new());
    }
    let clouds = frames
        .into_iter()
        .map(|points| PointCloud::with_points(frame_id.clone(), points))
        .collect();
    Ok((frame_id, clouds))
}

/// Reads every point of a file into one cloud, ignoring frame markers.
pub fn read_cloud(r: impl BufRead, path: &str) -> Result<PointCloud> {
    let (frame_id, frames) = read_frames(r, path)?;
    let points = frames.into_iter().flat_map(|f| f.points).collect();
    Ok(PointCloud::with_points(frame_id, points))
}

pub fn save_cloud(path: &Path, cloud: &PointCloud) -> Result<()> {
    let file = File::create(path).map_err(Error::io(path))?;
    let mut w = BufWriter::new(file);
    write_cloud(&mut w, cloud)
        .and_then(|_| w.flush())
        .map_err(Error::io(path))
}

pub fn load_cloud(path: &Path) -> Result<PointCloud> {
    let file = File::open(path).map_err(Error::io(path))?;
    read_cloud(BufReader::new(file), &path.display().to_string())
}

pub fn save_frames(path: &Path, frame_id: &str, frames: &[PointCloud]) -> Result<()> {
    let file = File::create(path).map_err(Error::io(path))?;
    let mut w = BufWriter::new(file);
    write_frames(&mut w, frame_id, frames)
        .and_then(|_| w.flush())
        .map_err(Error::io(path))
}

pub fn load_frames(path: &Path) -> Result<Vec<PointCloud>> {
    let file = File::open(path).map_err(Error::io(path))?;
    read_frames(BufReader::new(file), &path.display().to_string()).map(|(_, f)| f)
}
