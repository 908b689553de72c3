//! Command-line front end and HTTP blend service for pastiche models.

pub mod commands;
pub mod config;
pub mod error;
pub mod prep;
pub mod service;

pub use error::{CliError, Result};
