//! Command-line front end for the `lpvsd` library: configuration loading,
//! the four verbs (`synthesize`, `simulate`, `compare`, `validate`), and
//! the static SVG plots they emit.
//!
//! The binary in this crate is a thin argument-parsing shell; everything
//! testable lives here. See [`config::RunConfig`] for the configuration
//! document and [`commands`] for the verbs and their exit-code contract.

pub mod commands;
pub mod config;
pub mod plot;
