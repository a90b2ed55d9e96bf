//! Stop-and-wait ARQ state machine for one port.
//!
//! The endpoint never touches a clock or a socket. Callers feed it received
//! bytes and timeouts, and drain [`LinkOutput`]s: bytes to put on the wire,
//! payloads to deliver upward, and send-ticket resolutions.

use std::collections::VecDeque;

use thiserror::Error;

use super::frame::{encode_frame, DecodeError, Frame, FrameDecoder, FrameType, MAX_PAYLOAD};
use crate::time::{SimDuration, SimTime};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct LinkConfig {
    pub ack_timeout: SimDuration,
    pub max_retries: u32,
    /// Serialization delay per wire byte. Used by the channel model, carried
    /// here so one struct describes a link.
    pub per_byte_delay: SimDuration,
}

impl Default for LinkConfig {
    fn default() -> Self {
        LinkConfig {
            ack_timeout: SimDuration::from_millis(100),
            max_retries: 5,
            per_byte_delay: SimDuration::from_micros(300),
        }
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum LinkError {
    #[error("payload of {0} bytes exceeds the {MAX_PAYLOAD}-byte frame limit")]
    PayloadTooLong(usize),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct SendTicket(pub u64);

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Delivery {
    Delivered,
    /// Every retry timed out; the frame was dropped from the transmit buffer.
    Failed,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum LinkOutput {
    Transmit(Vec<u8>),
    Deliver(Vec<u8>),
    Resolved(SendTicket, Delivery),
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TransmitBufferEntry {
    pub ticket: SendTicket,
    pub frame: Frame,
    pub retries_used: u32,
    pub deadline: SimTime,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct LinkStats {
    pub data_sent: u64,
    pub retransmissions: u64,
    pub acks_sent: u64,
    pub delivered_up: u64,
    pub duplicates: u64,
    pub corrupt: u64,
    pub stale_acks: u64,
    pub failed: u64,
}

#[derive(Debug)]
pub struct LinkEndpoint {
    config: LinkConfig,
    next_seq: u8,
    next_ticket: u64,
    waiting: VecDeque<(SendTicket, Vec<u8>)>,
    outstanding: Option<TransmitBufferEntry>,
    last_delivered: Option<u8>,
    decoder: FrameDecoder,
    outputs: VecDeque<LinkOutput>,
    stats: LinkStats,
}

impl LinkEndpoint {
    pub fn new(config: LinkConfig) -> Self {
        LinkEndpoint {
            config,
            next_seq: 0,
            next_ticket: 0,
            waiting: VecDeque::new(),
            outstanding: None,
            last_delivered: None,
            decoder: FrameDecoder::new(),
            outputs: VecDeque::new(),
            stats: LinkStats::default(),
        }
    }

    pub fn config(&self) -> &LinkConfig {
        &self.config
    }

    pub fn stats(&self) -> LinkStats {
        self.stats
    }

    /// The single unacknowledged DATA frame, if any.
    pub fn outstanding(&self) -> Option<&TransmitBufferEntry> {
        self.outstanding.as_ref()
    }

    /// Frames queued behind the outstanding one.
    pub fn queued(&self) -> usize {
        self.waiting.len()
    }

    pub fn is_idle(&self) -> bool {
        self.outstanding.is_none() && self.waiting.is_empty()
    }

    pub fn send(&mut self, payload: Vec<u8>, now: SimTime) -> Result<SendTicket, LinkError> {
        if payload.len() > MAX_PAYLOAD {
            return Err(LinkError::PayloadTooLong(payload.len()));
        }
        let ticket = SendTicket(self.next_ticket);
        self.next_ticket += 1;
        self.waiting.push_back((ticket, payload));
        self.start_next(now);
        Ok(ticket)
    }

    /// Drops a frame that has not been transmitted yet. Returns false if the
    /// ticket is unknown or its frame already left through [`poll_output`].
    ///
    /// [`poll_output`]: LinkEndpoint::poll_output
    pub fn cancel(&mut self, ticket: SendTicket, now: SimTime) -> bool {
        let before = self.waiting.len();
        self.waiting.retain(|(t, _)| *t != ticket);
        if before != self.waiting.len() {
            return true;
        }
        let Some(entry) = self.outstanding.as_ref() else {
            return false;
        };
        if entry.ticket != ticket || entry.retries_used != 0 {
            return false;
        }
        let bytes = encode_frame(&entry.frame).expect("buffered frames are valid");
        let Some(pos) = self
            .outputs
            .iter()
            .position(|o| matches!(o, LinkOutput::Transmit(b) if *b == bytes))
        else {
            return false;
        };
        self.outputs.remove(pos);
        self.outstanding = None;
        self.stats.data_sent -= 1;
        self.start_next(now);
        true
    }

    pub fn receive(&mut self, bytes: &[u8], now: SimTime) {
        self.decoder.push(bytes);
        while let Some(result) = self.decoder.next_frame() {
            match result {
                Ok(frame) => self.handle_frame(frame, now),
                Err(DecodeError::NeedMoreData) => break,
                Err(_) => self.stats.corrupt += 1,
            }
        }
    }

    pub fn next_deadline(&self) -> Option<SimTime> {
        self.outstanding.as_ref().map(|e| e.deadline)
    }

    pub fn handle_timeout(&mut self, now: SimTime) {
        let Some(entry) = self.outstanding.as_mut() else {
            return;
        };
        if entry.deadline > now {
            return;
        }
        if entry.retries_used < self.config.max_retries {
            entry.retries_used += 1;
            entry.deadline = now + self.config.ack_timeout;
            let bytes = encode_frame(&entry.frame).expect("buffered frames are valid");
            self.stats.retransmissions += 1;
            self.outputs.push_back(LinkOutput::Transmit(bytes));
        } else {
            let ticket = entry.ticket;
            self.outstanding = None;
            self.stats.failed += 1;
            self.outputs
                .push_back(LinkOutput::Resolved(ticket, Delivery::Failed));
            self.start_next(now);
        }
    }

    /// Fails everything in the transmit buffer and forgets receive state.
    /// Used when the physical link goes away and comes back.
    pub fn reset(&mut self) {
        if let Some(entry) = self.outstanding.take() {
            self.stats.failed += 1;
            self.outputs
                .push_back(LinkOutput::Resolved(entry.ticket, Delivery::Failed));
        }
        for (ticket, _) in self.waiting.drain(..) {
            self.stats.failed += 1;
            self.outputs
                .push_back(LinkOutput::Resolved(ticket, Delivery::Failed));
        }
        self.next_seq = 0;
        self.last_delivered = None;
        self.decoder.clear();
    }

    pub fn poll_output(&mut self) -> Option<LinkOutput> {
        self.outputs.pop_front()
    }

    pub fn drain_outputs(&mut self) -> Vec<LinkOutput> {
        self.outputs.drain(..).collect()
    }

    fn handle_frame(&mut self, frame: Frame, now: SimTime) {
        match frame.frame_type {
            FrameType::Data => {
                let ack = encode_frame(&Frame::ack(frame.seq)).expect("ack encodes");
                self.stats.acks_sent += 1;
                self.outputs.push_back(LinkOutput::Transmit(ack));
                if self.last_delivered == Some(frame.seq) {
                    self.stats.duplicates += 1;
                } else {
                    self.last_delivered = Some(frame.seq);
                    self.stats.delivered_up += 1;
                    self.outputs.push_back(LinkOutput::Deliver(frame.payload));
                }
            }
            FrameType::Ack => match &self.outstanding {
                Some(entry) if entry.frame.seq == frame.seq => {
                    let ticket = entry.ticket;
                    self.outstanding = None;
                    self.outputs
                        .push_back(LinkOutput::Resolved(ticket, Delivery::Delivered));
                    self.start_next(now);
                }
                _ => self.stats.stale_acks += 1,
            },
        }
    }

    fn start_next(&mut self, now: SimTime) {
        if self.outstanding.is_some() {
            return;
        }
        let Some((ticket, payload)) = self.waiting.pop_front() else {
            return;
        };
        let frame = Frame::data(self.next_seq, payload);
        self.next_seq = self.next_seq.wrapping_add(1);
        let bytes = encode_frame(&frame).expect("payload length checked in send");
        self.stats.data_sent += 1;
        self.outputs.push_back(LinkOutput::Transmit(bytes));
        self.outstanding = Some(TransmitBufferEntry {
            ticket,
            frame,
            retries_used: 0,
            deadline: now + self.config.ack_timeout,
        });
    }
}
