pub mod cli;
pub mod config;
pub mod contact;
pub mod dynamics;
pub mod error;
pub mod gait_library;
pub mod gait_optimizer;
pub mod math;
pub mod metrics;
pub mod parallel;
pub mod robot_model;
pub mod sim_engine;
pub mod state;

pub use error::{Error, Result};
