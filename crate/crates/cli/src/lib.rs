//! Annotation service, qualification grading and the `errspan` command line.

pub mod cli;
pub mod config;
pub mod http;
pub mod qualification;
pub mod reports;
pub mod service;
pub mod store;
