//! The per-module service: sessions, commands, diffusion and file transfer.

pub mod command;
pub mod node;
pub mod phys;

pub use crate::msgnet::{AppName, ModuleId};
pub use command::{parse_command, Command, Reply};
pub use node::{assign_id, LogRecord, NeighborInfo, Node, NodeConfig, NodeOutput, NodeStats, SessionId};
pub use phys::{Axis, Connector, Direction, ModulePhysState, PortState};
