//! Deterministic simulation of whole robots.
//!
//! A [`WorldTopology`] names the modules and the infrared links between
//! them, a [`Scenario`] lists timed stimuli, and a [`World`] runs both on
//! a virtual clock. The resulting [`EventLog`] depends only on the inputs
//! and the seed.

pub mod log;
pub mod rng;
pub mod scenario;
pub mod shapes;
pub mod topology;
pub mod world;

pub use log::{EventLog, LogLine};
pub use rng::LossRng;
pub use scenario::{Action, Scenario, Step};
pub use topology::{LinkSpec, ModuleSpec, WorldTopology};
pub use world::{ChannelStats, World};
