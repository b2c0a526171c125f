//! Simulation and design-check library for a modular MVAC-to-LVDC
//! converter: three phases of series-stacked power modules, each an
//! active front end plus an isolated DC-DC stage, all paralleled onto one
//! LVDC bus.
//!
//! The crate has two halves that share parameters and controller math:
//!
//! * [`sim`] — a multirate time-domain engine (averaged switching model,
//!   RK4 plant at 1 us, per-module controllers at 20 kHz, central control
//!   at 10 kHz) with energy-audited bookkeeping and deterministic,
//!   byte-reproducible traces;
//! * [`freq`] — closed-form frequency-domain checks of the same control
//!   design: loop margins, filter placement, timescale separation, and
//!   discretization fidelity.
//!
//! [`sim::catalog`] holds the canned scenarios (start-up, load steps,
//! balance under tolerances, ripple suppression) and the quantitative
//! checks each must satisfy.

pub mod central;
pub mod config;
pub mod dab;
pub mod error;
pub mod freq;
pub mod params;
pub mod plant;
pub mod sim;

pub use config::Config;
pub use error::{Error, Result};
