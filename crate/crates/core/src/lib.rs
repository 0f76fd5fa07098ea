//! Simulated redundant arm under variable Cartesian impedance control,
//! with learning from demonstration, interactive trajectory shaping,
//! force-triggered spiral search and visual/haptic board localization.

pub mod chain;
pub mod control;
pub mod error;
pub mod lfd;
pub mod localization;
pub mod pose;
pub mod rig;
pub mod scenario;
pub mod sim;
pub mod world;

pub use chain::ChainModel;
pub use control::{ControllerCommand, GripperCommand, ImpedanceGains};
pub use error::*;
pub use pose::{Pose, Wrench};
pub use rig::{Rig, Setpoint};
pub use sim::{JointState, Simulator};
pub use world::BoardWorld;
