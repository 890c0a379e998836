pub mod bench;
pub mod cli;
pub mod correspond;
pub mod dataset;
pub mod error;
pub mod eval;
pub mod geom;
pub mod icp;
pub mod imu;
pub mod pyramid;
pub mod solver;

pub use error::{Error, Result};
