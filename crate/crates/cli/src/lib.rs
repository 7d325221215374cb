//! Front end for the `scatter` binary: scenario files, campaigns and CSV
//! export.

pub mod campaign;
pub mod export;
pub mod scenario_file;

/// Environment variable naming the default output directory.
pub const OUT_DIR_ENV: &str = "SCATTER_OUT_DIR";
