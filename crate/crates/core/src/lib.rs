pub mod data;
pub mod error;
pub mod field;
pub mod geometry;
pub mod image_buf;
pub mod lidar;
pub mod metrics;
pub mod nn;
pub mod selftest;
pub mod supervision;
pub mod synthesis;
pub mod train;

pub use error::{Error, Result};
