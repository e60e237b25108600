//! Command line and HTTP JSON service around `tstkit-core`.

pub mod api;
pub mod capture;
pub mod cli;
pub mod config;
pub mod error;

pub use error::ApiError;
