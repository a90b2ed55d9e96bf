//! Service middleware for self-reconfigurable modular robots.
//!
//! Every module runs a [`service::Node`]. Nodes talk to their physical
//! neighbours over lossy infrared ports through a stop-and-wait [`link`],
//! exchange typed [`msgnet`] messages, keep each other's software version
//! current by epidemic push, and host a role-based control engine
//! ([`roledsl`]). [`simworld`] wires a set of nodes together on a virtual
//! clock so whole robots can be run deterministically on a desk.

#[doc(hidden)]
pub mod fuzzing;
pub mod link;
pub mod msgnet;
pub mod roledsl;
pub mod service;
pub mod simworld;
pub mod time;
mod wire;

pub use time::{SimDuration, SimTime};
