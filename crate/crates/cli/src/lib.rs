//! Experiment programs: benchmark sweeps, the extrapolation demo and the small-data study.

pub mod commands;
pub mod config;
pub mod output;

pub use commands::pathology::cmd_pathology;
pub use commands::run_bo::cmd_run_bo;
pub use commands::smalldata::cmd_smalldata;
pub use commands::svg::emit_svg;
