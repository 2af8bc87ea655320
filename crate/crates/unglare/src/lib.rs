//! File formats, configuration and the command-line front end for
//! `unglare-core`.

pub mod cli;
pub mod config;
pub mod imgio;
pub mod report;
pub mod scenefile;
