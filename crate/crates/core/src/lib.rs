//! Pose localization of leader-follower networks from direction measurements.
//!
//! Followers estimate their attitude on SO(3) from body-frame directions to
//! earlier agents and the attitude estimates those agents publish, then
//! estimate their position from the same directions. Two leaders know their
//! pose; everything else is recovered.

// `!(x > 0.0)` is used on purpose so NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod dynamics;
pub mod error;
pub mod geom3;
pub mod integrator;
pub mod metrics;
pub mod network;
pub mod orientation;
pub mod position;
pub mod scenario;

pub use dynamics::{NetworkModel, NoiseModel, WorldState};
pub use error::{EstimatorError, GeomError, IntegratorError, NetworkError, ScenarioError};
pub use geom3::{Mat3, Rotation, UnitVec3, Vec3};
pub use integrator::{IntegratorConfig, Method};
pub use metrics::{detect_convergence, TraceRecord};
pub use network::{AgentId, GroundTruth, NetworkTopology, Violation};
pub use scenario::{generate_cube_scenario, parse_scenario, run, Scenario, ScenarioDoc};
