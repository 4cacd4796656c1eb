//! Comparator tests, Monte Carlo experiments, file formats and the
//! command-line front end built on `fewclusters-core`.

pub mod cli;
pub mod comparators;
pub mod config;
pub mod harness;
pub mod input;
pub mod report;
