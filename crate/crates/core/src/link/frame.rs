//! Link-layer wire frames.
//!
//! ```text
//! +------+------+-----+-----------+-------------+-----------+
//! | 0x7E | type | seq | len (BE)  | payload     | crc (BE)  |
//! |  1   |  1   |  1  |    2      | len <= 255  |    2      |
//! +------+------+-----+-----------+-------------+-----------+
//! ```
//!
//! `type` is 0x01 for DATA and 0x02 for ACK. The CRC is CRC-16/CCITT-FALSE
//! (poly 0x1021, init 0xFFFF, no reflection, no final xor) over every byte
//! from `type` through the end of the payload. There is no byte stuffing: a
//! receiver that loses sync scans for the next 0x7E and relies on the length
//! bound and CRC to reject false starts.

use crc::{Crc, CRC_16_IBM_3740};
use thiserror::Error;

pub const START_BYTE: u8 = 0x7E;
pub const MAX_PAYLOAD: usize = 255;
/// Start byte, type, seq and the two length bytes.
pub const HEADER_LEN: usize = 5;
pub const CRC_LEN: usize = 2;
/// Encoded size of a frame with an empty payload.
pub const MIN_FRAME_LEN: usize = HEADER_LEN + CRC_LEN;

// CRC-16/IBM-3740 is the catalogue name for CCITT-FALSE.
const CCITT_FALSE: Crc<u16> = Crc::<u16>::new(&CRC_16_IBM_3740);

/// CRC-16/CCITT-FALSE of `data`.
pub fn crc16_ccitt_false(data: &[u8]) -> u16 {
    CCITT_FALSE.checksum(data)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum FrameType {
    Data,
    Ack,
}

impl FrameType {
    pub fn to_byte(self) -> u8 {
        match self {
            FrameType::Data => 0x01,
            FrameType::Ack => 0x02,
        }
    }

    pub fn from_byte(b: u8) -> Option<Self> {
        match b {
            0x01 => Some(FrameType::Data),
            0x02 => Some(FrameType::Ack),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Frame {
    pub frame_type: FrameType,
    pub seq: u8,
    pub payload: Vec<u8>,
}

impl Frame {
    pub fn data(seq: u8, payload: impl Into<Vec<u8>>) -> Self {
        Frame {
            frame_type: FrameType::Data,
            seq,
            payload: payload.into(),
        }
    }

    pub fn ack(seq: u8) -> Self {
        Frame {
            frame_type: FrameType::Ack,
            seq,
            payload: Vec::new(),
        }
    }

    /// Checksum this frame carries on the wire.
    pub fn crc(&self) -> u16 {
        let mut digest = CCITT_FALSE.digest();
        digest.update(&[
            self.frame_type.to_byte(),
            self.seq,
            (self.payload.len() >> 8) as u8,
            self.payload.len() as u8,
        ]);
        digest.update(&self.payload);
        digest.finalize()
    }

    pub fn encoded_len(&self) -> usize {
        MIN_FRAME_LEN + self.payload.len()
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum EncodingError {
    #[error("payload of {0} bytes exceeds the {MAX_PAYLOAD}-byte frame limit")]
    PayloadTooLong(usize),
    #[error("ACK frames carry no payload")]
    AckWithPayload,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum DecodeError {
    /// The buffer holds a frame prefix; wait for more bytes.
    #[error("need more data")]
    NeedMoreData,
    #[error("buffer does not start with 0x7E (found {0:#04x})")]
    NoStartByte(u8),
    #[error("unknown frame type {0:#04x}")]
    UnknownType(u8),
    #[error("declared length {0} exceeds {MAX_PAYLOAD}")]
    LengthOutOfRange(u16),
    #[error("ACK frame declares {0} payload bytes")]
    AckWithPayload(u16),
    #[error("checksum mismatch: frame says {found:#06x}, computed {computed:#06x}")]
    Checksum { found: u16, computed: u16 },
}

pub fn encode_frame(frame: &Frame) -> Result<Vec<u8>, EncodingError> {
    if frame.payload.len() > MAX_PAYLOAD {
        return Err(EncodingError::PayloadTooLong(frame.payload.len()));
    }
    if frame.frame_type == FrameType::Ack && !frame.payload.is_empty() {
        return Err(EncodingError::AckWithPayload);
    }
    let len = frame.payload.len() as u16;
    let mut out = Vec::with_capacity(frame.encoded_len());
    out.push(START_BYTE);
    out.push(frame.frame_type.to_byte());
    out.push(frame.seq);
    out.extend_from_slice(&len.to_be_bytes());
    out.extend_from_slice(&frame.payload);
    let crc = crc16_ccitt_false(&out[1..]);
    out.extend_from_slice(&crc.to_be_bytes());
    Ok(out)
}

/// Decodes one frame that must begin at `buf[0]`.
///
/// On success returns the frame and the number of bytes it occupied; any
/// bytes past that are left for the caller. Use [`FrameDecoder`] for a byte
/// stream that may contain garbage between frames.
pub fn decode_frame(buf: &[u8]) -> Result<(Frame, usize), DecodeError> {
    let Some(&first) = buf.first() else {
        return Err(DecodeError::NeedMoreData);
    };
    if first != START_BYTE {
        return Err(DecodeError::NoStartByte(first));
    }
    // Header fields are validated as soon as they arrive so a false start
    // is rejected without waiting for bytes that may never come.
    if buf.len() < 2 {
        return Err(DecodeError::NeedMoreData);
    }
    let frame_type = FrameType::from_byte(buf[1]).ok_or(DecodeError::UnknownType(buf[1]))?;
    if buf.len() < HEADER_LEN {
        return Err(DecodeError::NeedMoreData);
    }
    let seq = buf[2];
    let len = u16::from_be_bytes([buf[3], buf[4]]);
    if len as usize > MAX_PAYLOAD {
        return Err(DecodeError::LengthOutOfRange(len));
    }
    if frame_type == FrameType::Ack && len != 0 {
        return Err(DecodeError::AckWithPayload(len));
    }
    let total = MIN_FRAME_LEN + len as usize;
    if buf.len() < total {
        return Err(DecodeError::NeedMoreData);
    }
    let body_end = HEADER_LEN + len as usize;
    let computed = crc16_ccitt_false(&buf[1..body_end]);
    let found = u16::from_be_bytes([buf[body_end], buf[body_end + 1]]);
    if computed != found {
        return Err(DecodeError::Checksum { found, computed });
    }
    Ok((
        Frame {
            frame_type,
            seq,
            payload: buf[HEADER_LEN..body_end].to_vec(),
        },
        total,
    ))
}

/// Incremental frame decoder with resynchronization.
///
/// Bytes before a start byte are discarded. A candidate frame that fails
/// header validation or the CRC is reported once and the decoder restarts
/// its scan one byte past the rejected start byte.
#[derive(Debug, Default)]
pub struct FrameDecoder {
    buf: Vec<u8>,
    discarded: u64,
}

impl FrameDecoder {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, bytes: &[u8]) {
        self.buf.extend_from_slice(bytes);
    }

    /// Number of bytes dropped so far while hunting for a start byte or
    /// skipping rejected candidates.
    pub fn discarded_bytes(&self) -> u64 {
        self.discarded
    }

    /// Bytes buffered but not yet consumed.
    pub fn pending(&self) -> usize {
        self.buf.len()
    }

    pub fn clear(&mut self) {
        self.buf.clear();
    }

    /// Next decoded frame or rejection; `None` once the buffer needs more data.
    pub fn next_frame(&mut self) -> Option<Result<Frame, DecodeError>> {
        let skip = self
            .buf
            .iter()
            .position(|&b| b == START_BYTE)
            .unwrap_or(self.buf.len());
        self.discard(skip);
        if self.buf.is_empty() {
            return None;
        }
        match decode_frame(&self.buf) {
            Ok((frame, used)) => {
                self.buf.drain(..used);
                Some(Ok(frame))
            }
            Err(DecodeError::NeedMoreData) => None,
            Err(err) => {
                self.discard(1);
                Some(Err(err))
            }
        }
    }

    fn discard(&mut self, n: usize) {
        self.buf.drain(..n);
        self.discarded += n as u64;
    }
}

impl Iterator for FrameDecoder {
    type Item = Result<Frame, DecodeError>;

    fn next(&mut self) -> Option<Self::Item> {
        self.next_frame()
    }
}
