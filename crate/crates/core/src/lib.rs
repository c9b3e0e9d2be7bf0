pub mod config;
pub mod datagen;
pub mod diff;
pub mod error;
pub mod eval;
pub mod flow;
pub mod guidance;
pub mod igso3;
pub mod io;
pub mod lie;
pub mod metrics;
pub mod net;
pub mod register;
pub mod rng;
pub mod schedule;
pub mod train;

pub use config::RunConfig;
pub use error::{Error, Result};
pub use lie::{Pose, UnitQuat, Vec3};
pub use net::checkpoint::{Checkpoint, GenMode};
pub use net::{ConditionBundle, ModelParams, NetConfig};
