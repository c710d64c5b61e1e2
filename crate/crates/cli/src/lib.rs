//! Pipeline orchestration behind the `windcast` binary.

pub mod commands;
pub mod config;
pub mod error;
pub mod lock;
pub mod manifest;
pub mod pipeline;
pub mod report;
pub mod sample;
pub mod stages;
