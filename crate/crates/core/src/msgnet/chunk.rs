//! Splitting encoded messages into link payloads and putting them back.
//!
//! Every link payload starts with `[index:2][count:2]` (big-endian) followed
//! by at most [`SLICE_LEN`] bytes of the encoded message. The link delivers
//! in order, so reassembly only has to notice gaps left by a sender that
//! gave up on a message part-way through.

use thiserror::Error;

pub const SLICE_LEN: usize = 250;
pub const CHUNK_HEADER_LEN: usize = 4;
/// Upper bound on a reassembled message.
pub const MAX_MESSAGE_LEN: usize = 256 * 1024;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ChunkError {
    #[error("link payload shorter than the chunk header")]
    Short,
    #[error("chunk {index} of {count} is out of range")]
    OutOfRange { index: u16, count: u16 },
    #[error("expected chunk {expected}, got {got}; partial message discarded")]
    Gap { expected: u16, got: u16 },
    #[error("message of {0} bytes exceeds the reassembly limit")]
    TooLarge(usize),
    #[error("chunk count changed mid-message")]
    CountChanged,
}

/// Splits `message` into link payloads. An empty message still yields one
/// payload so the receiver sees it.
pub fn split(message: &[u8]) -> Result<Vec<Vec<u8>>, ChunkError> {
    if message.len() > MAX_MESSAGE_LEN {
        return Err(ChunkError::TooLarge(message.len()));
    }
    let count = message.len().div_ceil(SLICE_LEN).max(1);
    let count16 = count as u16;
    let mut out = Vec::with_capacity(count);
    for index in 0..count {
        let start = index * SLICE_LEN;
        let end = (start + SLICE_LEN).min(message.len());
        let mut payload = Vec::with_capacity(CHUNK_HEADER_LEN + end - start);
        payload.extend_from_slice(&(index as u16).to_be_bytes());
        payload.extend_from_slice(&count16.to_be_bytes());
        payload.extend_from_slice(&message[start..end]);
        out.push(payload);
    }
    Ok(out)
}

#[derive(Debug, Default)]
pub struct Reassembler {
    partial: Option<Partial>,
}

#[derive(Debug)]
struct Partial {
    count: u16,
    next: u16,
    bytes: Vec<u8>,
}

impl Reassembler {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn in_progress(&self) -> bool {
        self.partial.is_some()
    }

    pub fn clear(&mut self) {
        self.partial = None;
    }

    /// Feeds one link payload; returns the whole message once its last
    /// chunk arrives.
    pub fn push(&mut self, payload: &[u8]) -> Result<Option<Vec<u8>>, ChunkError> {
        if payload.len() < CHUNK_HEADER_LEN {
            return Err(ChunkError::Short);
        }
        let index = u16::from_be_bytes([payload[0], payload[1]]);
        let count = u16::from_be_bytes([payload[2], payload[3]]);
        let data = &payload[CHUNK_HEADER_LEN..];
        if count == 0 || index >= count || data.len() > SLICE_LEN {
            self.partial = None;
            return Err(ChunkError::OutOfRange { index, count });
        }
        if index == 0 {
            // A fresh message always wins over a stale partial one.
            self.partial = Some(Partial {
                count,
                next: 0,
                bytes: Vec::new(),
            });
        }
        let Some(partial) = self.partial.as_mut() else {
            return Err(ChunkError::Gap {
                expected: 0,
                got: index,
            });
        };
        if partial.count != count {
            self.partial = None;
            return Err(ChunkError::CountChanged);
        }
        if partial.next != index {
            let expected = partial.next;
            self.partial = None;
            return Err(ChunkError::Gap {
                expected,
                got: index,
            });
        }
        if partial.bytes.len() + data.len() > MAX_MESSAGE_LEN {
            let n = partial.bytes.len() + data.len();
            self.partial = None;
            return Err(ChunkError::TooLarge(n));
        }
        partial.bytes.extend_from_slice(data);
        partial.next += 1;
        if partial.next == partial.count {
            Ok(self.partial.take().map(|p| p.bytes))
        } else {
            Ok(None)
        }
    }
}
