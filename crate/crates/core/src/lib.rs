pub mod bench;
pub mod contact;
pub mod dynamics;
pub mod error;
pub mod executive;
pub mod kinematics;
pub mod occupancy;
pub mod planner;
pub mod rng;
pub mod workspace;

pub use error::{Error, Result};
