//! Command-line tools and the HTTP editing service.

pub mod cli;
pub mod dataset;
pub mod service;
