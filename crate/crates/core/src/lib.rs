//! Visuo-tactile in-hand object pose estimation with hierarchical graph networks.

pub mod encoder;
pub mod error;
pub mod geometry;
pub mod model;
pub mod sim;

pub use error::{HgnnError, Result};
