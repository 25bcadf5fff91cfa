//! CLI and HTTP service for the honesty-violation detection pipeline.

pub mod api;
pub mod cli;
pub mod config;
pub mod error;
pub mod jobs;
pub mod pipeline;
