//! Pipeline driver and HTTP inference service.
//!
//! The `ser` binary wraps [`cli::run`]; the stages live in [`pipeline`] so
//! tests and other tools can call them directly.

pub mod cli;
pub mod config;
pub mod pipeline;
pub mod repro;
pub mod service;

pub use cli::run;
