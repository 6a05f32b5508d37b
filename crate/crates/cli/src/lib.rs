//! Batch front end for `opvsim-core`: TOML run configurations, I-V sweeps,
//! CSV, legacy VTK and JSON output.

pub mod config;
pub mod output;
pub mod run;

pub use config::{parse_config, parse_morphology_spec, ConfigError, MorphologySpec, RunConfig};
pub use output::{format_iv_csv, format_vtk, parse_iv_csv, write_iv_csv, write_vtk, Snapshot};
pub use run::{run_generate_morphology, run_simulate, RunSummary, OUTPUT_ROOT_ENV};
