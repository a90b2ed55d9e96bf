//! Typed messages between neighbouring nodes, carried over [`crate::link`].

pub mod channel;
pub mod chunk;
pub mod ids;
pub mod message;

pub use channel::{ChannelOutput, MsgTicket, PortChannel, ReceiveError, SendError};
pub use ids::{AppName, InvalidAppName, InvalidModuleId, ModuleId};
pub use message::{AppDataFlag, Body, Chunk, MessageKind, ProtocolError, ServiceMessage};
