//! Dynamic load change training engine for an air-separation plant.
//!
//! The crate is layered bottom-up:
//!
//! - [`tf`], [`weighting`], [`lpv`]: the weighted LPV model.
//! - [`plant`]: the simulated process built on the same model.
//! - [`lp`], [`qp`]: dense solvers used by the two control layers.
//! - [`sso`], [`ndpc`], [`impc`]: steady-state targets, iterative multi-step
//!   linearization, and the per-period controller cycle.
//! - [`training`], [`scoring`], [`session`]: training modes, skill scores and
//!   the event-sourced session engine.

pub mod config;
pub mod error;
pub mod impc;
pub mod lp;
pub mod lpv;
pub mod ndpc;
pub mod plant;
pub mod qp;
pub mod scenario;
pub mod scoring;
pub mod session;
pub mod sso;
pub mod tf;
pub mod trace;
pub mod training;
pub mod weighting;

pub use error::{Error, Result};
