//! HTTP service and operator tooling around `lectern-core`.

pub mod adapters;
pub mod api;
pub mod config;
pub mod sessions;
pub mod commands;
