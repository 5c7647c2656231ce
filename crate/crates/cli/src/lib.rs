//! Command-line harness: dictionary builds, single runs, parameter sweeps and the check suite.

pub mod commands;
pub mod config;
pub mod output;
pub mod svg;
