//! Fountain-coded content distribution on a highway.
//!
//! Vehicles pick up coded packets from roadside infostations and swap them
//! when they pass one another. This crate simulates that process
//! ([`encounter`]), evaluates its expected throughput in closed form
//! ([`analytic`]), and finds the speed mix that maximizes throughput
//! ([`pmf`]). [`codec`] holds the GF(2) fountain code and [`traffic`] the
//! arrival and velocity model.

pub mod analytic;
pub mod codec;
pub mod config;
pub mod encounter;
pub mod error;
pub mod pmf;
pub mod traffic;

pub use error::{Error, Result};
