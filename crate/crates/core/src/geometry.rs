//! Shared geometric types and rigid-transform algebra.
//!
//! Quaternions cross every serialization boundary in `(x, y, z, w)` order.
//! Poses map points from a sensor frame into the local planar map frame.

use nalgebra::{Matrix3, Quaternion, Rotation3, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};

pub type Vec3 = Vector3<f64>;
pub type Vec2 = nalgebra::Vector2<f64>;

/// Frame label used for clouds expressed in the map frame.
pub const MAP_FRAME: &str = "map";

/// A single detection. Laser-scan points reuse this type with zero velocity.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RadarPoint {
    pub position: Vec3,
    /// Signed radial speed in m/s, positive when moving away from the sensor.
    pub radial_velocity: f64,
    pub timestamp_ns: i64,
    /// Radar cross section in dBsm, when the sensor reports it.
    pub rcs: Option<f64>,
}

impl RadarPoint {
    pub fn new(position: Vec3, radial_velocity: f64, timestamp_ns: i64) -> Self {
        Self {
            position,
            radial_velocity,
            timestamp_ns,
            rcs: None,
        }
    }

    pub fn at(position: Vec3) -> Self {
        Self::new(position, 0.0, 0)
    }

    pub fn with_rcs(mut self, rcs: f64) -> Self {
        self.rcs = Some(rcs);
        self
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct PointCloud {
    pub frame_id: String,
    pub points: Vec<RadarPoint>,
}

impl PointCloud {
    pub fn new(frame_id: impl Into<String>) -> Self {
        Self {
            frame_id: frame_id.into(),
            points: Vec::new(),
        }
    }

    pub fn with_points(frame_id: impl Into<String>, points: Vec<RadarPoint>) -> Self {
        Self {
            frame_id: frame_id.into(),
            points,
        }
    }

    /// Bare positions, as produced for laser-scan clouds.
    pub fn from_positions(frame_id: impl Into<String>, positions: impl IntoIterator<Item = Vec3>) -> Self {
        Self::with_points(frame_id, positions.into_iter().map(RadarPoint::at).collect())
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn positions(&self) -> Vec<Vec3> {
        self.points.iter().map(|p| p.position).collect()
    }

    pub fn is_finite(&self) -> bool {
        self.points.iter().all(|p| p.position.iter().all(|c| c.is_finite()))
    }
}

/// Rigid transform in SE(3).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose {
    pub translation: Vec3,
    pub rotation: UnitQuaternion<f64>,
}

impl Default for Pose {
    fn default() -> Self {
        Self::identity()
    }
}

impl Pose {
    pub fn identity() -> Self {
        Self {
            translation: Vec3::zeros(),
            rotation: UnitQuaternion::identity(),
        }
    }

    pub fn new(translation: Vec3, rotation: UnitQuaternion<f64>) -> Self {
        Self {
            translation,
            rotation: renormalized(rotation),
        }
    }

    pub fn from_translation(translation: Vec3) -> Self {
        Self::new(translation, UnitQuaternion::identity())
    }

    /// Translation plus intrinsic z-y-x Euler angles (radians).
    pub fn from_xyz_rpy(translation: Vec3, roll: f64, pitch: f64, yaw: f64) -> Self {
        Self::new(translation, UnitQuaternion::from_euler_angles(roll, pitch, yaw))
    }

    /// Pure rotation about the map z axis.
    pub fn from_yaw(yaw: f64) -> Self {
        Self::from_xyz_rpy(Vec3::zeros(), 0.0, 0.0, yaw)
    }

    /// Builds a pose from `[x, y, z, qx, qy, qz, qw]`, normalizing the quaternion.
    pub fn from_vector7(v: &[f64; 7]) -> Self {
        let q = Quaternion::new(v[6], v[3], v[4], v[5]);
        Self {
            translation: Vec3::new(v[0], v[1], v[2]),
            rotation: UnitQuaternion::from_quaternion(q),
        }
    }

    /// `[x, y, z, qx, qy, qz, qw]`.
    pub fn to_vector7(&self) -> [f64; 7] {
        let q = self.rotation.quaternion();
        [
            self.translation.x,
            self.translation.y,
            self.translation.z,
            q.i,
            q.j,
            q.k,
            q.w,
        ]
    }

    pub fn rotation_matrix(&self) -> Matrix3<f64> {
        *self.rotation.to_rotation_matrix().matrix()
    }

    /// Build from a rotation matrix assumed orthonormal with det +1.
    pub fn from_matrix(rotation: &Matrix3<f64>, translation: Vec3) -> Self {
        let rot = Rotation3::from_matrix_unchecked(*rotation);
        Self::new(translation, UnitQuaternion::from_rotation_matrix(&rot))
    }

    pub fn transform_point(&self, p: &Vec3) -> Vec3 {
        self.rotation * p + self.translation
    }

    /// `self ∘ other`: applies `other` first, then `self`.
    pub fn compose(&self, other: &Pose) -> Pose {
        Pose::new(
            self.rotation * other.translation + self.translation,
            self.rotation * other.rotation,
        )
    }

    pub fn inverse(&self) -> Pose {
        let inv = self.rotation.inverse();
        Pose::new(-(inv * self.translation), inv)
    }

    /// (roll, pitch, yaw) in radians, intrinsic z-y-x.
    pub fn rpy(&self) -> (f64, f64, f64) {
        self.rotation.euler_angles()
    }

    pub fn yaw(&self) -> f64 {
        self.rpy().2
    }

    /// Rotation angle of the relative rotation to `other`, radians.
    pub fn angle_to(&self, other: &Pose) -> f64 {
        self.rotation.angle_to(&other.rotation)
    }
}

fn renormalized(q: UnitQuaternion<f64>) -> UnitQuaternion<f64> {
    UnitQuaternion::new_normalize(q.into_inner())
}

/// Result applies `b` then `a`.
pub fn compose(a: &Pose, b: &Pose) -> Pose {
    a.compose(b)
}

pub fn invert(a: &Pose) -> Pose {
    a.inverse()
}

/// Maps every position by rotation then translation. Velocities, timestamps
/// and rcs are carried over untouched; the frame id is left to the caller.
pub fn transform_cloud(t: &Pose, cloud: &PointCloud) -> PointCloud {
    PointCloud {
        frame_id: cloud.frame_id.clone(),
        points: cloud
            .points
            .iter()
            .map(|p| RadarPoint {
                position: t.transform_point(&p.position),
                ..*p
            })
            .collect(),
    }
}

/// Wraps an angle in radians into (-π, π].
pub fn wrap_angle(a: f64) -> f64 {
    let two_pi = std::f64::consts::TAU;
    let mut r = a % two_pi;
    if r <= -std::f64::consts::PI {
        r += two_pi;
    } else if r > std::f64::consts::PI {
        r -= two_pi;
    }
    r
}

/// Local planar map frame anchored at a projected (UTM-like) origin. Stored
/// as metadata only; no geodetic conversion happens anywhere.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct MapOrigin {
    #[serde(default)]
    pub easting: f64,
    #[serde(default)]
    pub northing: f64,
    #[serde(default)]
    pub zone: Option<String>,
}
