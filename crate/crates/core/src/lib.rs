//! A Wizard-of-Oz teleoperation platform for a simulated mobile
//! manipulator.
//!
//! A hidden operator (the Wizard) drives a simulated robot through a live
//! websocket session while a participant talks to it. The platform makes
//! four properties of that interaction concrete: goals can be overridden or
//! cancelled mid-flight, progress can be polled at any tick, latency is
//! stamped and decomposed per command, and every session is logged so it
//! can be replayed and re-simulated tick for tick.

pub mod model;
pub mod sim;
pub mod engine;
pub mod clock;
pub mod latency;
pub mod log;
pub mod protocol;
pub mod session;
#[cfg(feature = "net")]
pub mod server;
#[cfg(feature = "net")]
pub mod client;
#[cfg(feature = "net")]
pub mod script;
pub mod replay;
#[cfg(feature = "net")]
pub mod cli;
