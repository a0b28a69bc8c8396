//! Command-line workflow and the HTTP job service.

pub mod args;
pub mod commands;
pub mod runinfo;
pub mod service;
pub mod store;
