//! Collaborative bird's-eye-view perception for camera swarms.

pub mod bev;
pub mod camera;
pub mod config;
pub mod error;
pub mod fusion;
pub mod hlfdc;
pub mod metrics;
pub mod sim;

pub use error::{Error, Result};
