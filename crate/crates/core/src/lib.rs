//! Self-localization of roadside 4D radars against aerial road scans, and
//! fusion of localized sensors into a sub-lane occupancy heat map.

pub mod cloud_io;
pub mod dataset;
pub mod error;
pub mod evaluation;
pub mod filter;
pub mod geometry;
pub mod kdtree;
pub mod lanelet;
pub mod occupancy;
pub mod preprocess;
pub mod registration;
pub mod render;
pub mod rtree;
pub mod simulator;

pub use error::{Error, Result};
pub use evaluation::{pose_error, LocalizationError, SweepConfig, SweepReport};
pub use filter::{FilterState, LocalizationConfig, TrackEntry};
pub use geometry::{PointCloud, Pose, RadarPoint, Vec3};
pub use lanelet::{Lanelet, LaneletMap, PolygonMap, SubLanePolygon};
pub use occupancy::{HeatMap, OccupancyMessage, OccupancyWindow};
pub use registration::{Compass, IcpResult, MultiscaleParams, RegistrationTarget};
pub use simulator::{Dataset, ScenarioConfig, SensorHint};
