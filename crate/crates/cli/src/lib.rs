//! Training, evaluation, ablation and reporting for the visuotactile pose
//! network. The `hgnn` binary is a thin command-line layer over this crate.

pub mod config;
pub mod data;
mod error;
pub mod eval;
pub mod plot;
pub mod report;
pub mod train;

pub use config::{variant_from_flags, RunConfig};
pub use error::{HarnessError, Result};
