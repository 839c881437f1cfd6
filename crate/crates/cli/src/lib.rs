//! Experiment driver: config parsing, the `run` / `sweep` / `probe` /
//! `demo-dual` / `report` subcommands, and deterministic output files.

pub mod commands {
    pub mod demo_dual;
    pub mod probe;
    pub mod report;
    pub mod run;
    pub mod sweep;
}
pub mod config;
pub mod output;
