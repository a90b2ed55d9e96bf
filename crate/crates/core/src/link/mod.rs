//! Reliable point-to-point delivery over one lossy IR port.
//!
//! [`frame`] is the wire codec; [`endpoint`] is the stop-and-wait state
//! machine that sits on top of it. Each port gets its own endpoint and no
//! state is shared between them.

pub mod endpoint;
pub mod frame;

pub use endpoint::{
    Delivery, LinkConfig, LinkEndpoint, LinkError, LinkOutput, LinkStats, SendTicket,
    TransmitBufferEntry,
};
pub use frame::{
    crc16_ccitt_false, decode_frame, encode_frame, DecodeError, EncodingError, Frame,
    FrameDecoder, FrameType, MAX_PAYLOAD,
};
