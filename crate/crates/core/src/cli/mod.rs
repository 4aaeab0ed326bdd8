//! Command-line front end: configuration files, command dispatch, CSV
//! tables and SVG plots.

pub mod commands;
pub mod config;
pub mod output;

pub use commands::{
    estimate_report, fisher_trace_report, run, CliConfig, Command, EstimateRow, OutputFormat, TraceRow,
};
pub use config::{config_to_json, parse_config, parse_config_str};
pub use output::{emit_csv, emit_svg_plot, read_csv, render_svg, table_csv, table_series, Series};
