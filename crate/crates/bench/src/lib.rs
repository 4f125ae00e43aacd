//! Experiment drivers, configuration and artifact output for the
//! `colupdate` command-line tool.

pub mod cli;
pub mod config;
pub mod error;
pub mod experiments;
pub mod output;
