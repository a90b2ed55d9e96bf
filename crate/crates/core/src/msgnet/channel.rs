//! One port's message channel: a [`LinkEndpoint`] plus chunking.

use std::collections::{BTreeMap, VecDeque};

use thiserror::Error;

use super::chunk::{split, ChunkError, Reassembler};
use super::message::{ProtocolError, ServiceMessage};
use crate::link::{Delivery, LinkConfig, LinkEndpoint, LinkOutput, LinkStats, SendTicket};
use crate::time::SimTime;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct MsgTicket(pub u64);

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum SendError {
    #[error(transparent)]
    Chunk(#[from] ChunkError),
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ReceiveError {
    #[error(transparent)]
    Chunk(#[from] ChunkError),
    #[error(transparent)]
    Protocol(#[from] ProtocolError),
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum ChannelOutput {
    Transmit(Vec<u8>),
    Received(ServiceMessage),
    Resolved(MsgTicket, Delivery),
    /// A message could not be reassembled or decoded and was dropped.
    Dropped(ReceiveError),
}

#[derive(Debug)]
struct PendingSend {
    chunks: Vec<SendTicket>,
    delivered: usize,
}

#[derive(Debug)]
pub struct PortChannel {
    link: LinkEndpoint,
    next_ticket: u64,
    pending: BTreeMap<MsgTicket, PendingSend>,
    owner: BTreeMap<SendTicket, MsgTicket>,
    reassembly: Reassembler,
    outputs: VecDeque<ChannelOutput>,
}

impl PortChannel {
    pub fn new(config: LinkConfig) -> Self {
        PortChannel {
            link: LinkEndpoint::new(config),
            next_ticket: 0,
            pending: BTreeMap::new(),
            owner: BTreeMap::new(),
            reassembly: Reassembler::new(),
            outputs: VecDeque::new(),
        }
    }

    pub fn link(&self) -> &LinkEndpoint {
        &self.link
    }

    pub fn link_config(&self) -> &LinkConfig {
        self.link.config()
    }

    pub fn link_stats(&self) -> LinkStats {
        self.link.stats()
    }

    /// Messages accepted for sending that have not resolved yet.
    pub fn in_flight(&self) -> usize {
        self.pending.len()
    }

    pub fn send(&mut self, msg: &ServiceMessage, now: SimTime) -> Result<MsgTicket, SendError> {
        let parts = split(&msg.encode())?;
        let ticket = MsgTicket(self.next_ticket);
        self.next_ticket += 1;
        let mut chunks = Vec::with_capacity(parts.len());
        for part in parts {
            let t = self
                .link
                .send(part, now)
                .expect("chunk payloads fit in one frame");
            self.owner.insert(t, ticket);
            chunks.push(t);
        }
        self.pending.insert(
            ticket,
            PendingSend {
                chunks,
                delivered: 0,
            },
        );
        self.pump(now);
        Ok(ticket)
    }

    pub fn receive(&mut self, bytes: &[u8], now: SimTime) {
        self.link.receive(bytes, now);
        self.pump(now);
    }

    pub fn next_deadline(&self) -> Option<SimTime> {
        self.link.next_deadline()
    }

    pub fn handle_timeout(&mut self, now: SimTime) {
        self.link.handle_timeout(now);
        self.pump(now);
    }

    /// Fails every pending message and frees the reassembly buffer.
    pub fn reset(&mut self, now: SimTime) {
        self.link.reset();
        self.reassembly.clear();
        self.pump(now);
    }

    pub fn drain_outputs(&mut self) -> Vec<ChannelOutput> {
        self.outputs.drain(..).collect()
    }

    fn pump(&mut self, now: SimTime) {
        while let Some(out) = self.link.poll_output() {
            match out {
                LinkOutput::Transmit(bytes) => self.outputs.push_back(ChannelOutput::Transmit(bytes)),
                LinkOutput::Deliver(payload) => self.on_payload(&payload),
                LinkOutput::Resolved(t, d) => self.on_resolved(t, d, now),
            }
        }
    }

    fn on_payload(&mut self, payload: &[u8]) {
        match self.reassembly.push(payload) {
            Ok(None) => {}
            Ok(Some(bytes)) => match ServiceMessage::decode(&bytes) {
                Ok(msg) => self.outputs.push_back(ChannelOutput::Received(msg)),
                Err(e) => self.outputs.push_back(ChannelOutput::Dropped(e.into())),
            },
            Err(e) => self.outputs.push_back(ChannelOutput::Dropped(e.into())),
        }
    }

    fn on_resolved(&mut self, link_ticket: SendTicket, delivery: Delivery, now: SimTime) {
        let Some(ticket) = self.owner.remove(&link_ticket) else {
            return;
        };
        let Some(pending) = self.pending.get_mut(&ticket) else {
            return;
        };
        match delivery {
            Delivery::Delivered => {
                pending.delivered += 1;
                if pending.delivered == pending.chunks.len() {
                    self.pending.remove(&ticket);
                    self.outputs
                        .push_back(ChannelOutput::Resolved(ticket, Delivery::Delivered));
                }
            }
            Delivery::Failed => {
                let pending = self.pending.remove(&ticket).expect("checked above");
                for t in pending.chunks {
                    if self.owner.remove(&t).is_some() {
                        self.link.cancel(t, now);
                    }
                }
                self.outputs
                    .push_back(ChannelOutput::Resolved(ticket, Delivery::Failed));
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::msgnet::message::{AppDataFlag, Body};
    use crate::msgnet::{AppName, ModuleId};

    fn appdata(len: usize) -> ServiceMessage {
        ServiceMessage::new(
            ModuleId::root(),
            Some(AppName::new("dst").unwrap()),
            &Body::AppData {
                flag: AppDataFlag::Data,
                req_id: 1,
                src_app: AppName::new("src").unwrap(),
                data: vec![0xAB; len],
            },
        )
    }

    fn frames(outs: &[ChannelOutput]) -> Vec<Vec<u8>> {
        outs.iter()
            .filter_map(|o| match o {
                ChannelOutput::Transmit(b) => Some(b.clone()),
                _ => None,
            })
            .collect()
    }

    // Lossless lockstep shuttle; returns (frames sent by a, messages at b).
    fn shuttle(a: &mut PortChannel, b: &mut PortChannel) -> (usize, Vec<ServiceMessage>, Vec<ChannelOutput>) {
        let now = SimTime::ZERO;
        let mut sent = 0;
        let mut got = Vec::new();
        let mut a_events = Vec::new();
        loop {
            let outs = a.drain_outputs();
            let fs = frames(&outs);
            a_events.extend(outs.into_iter().filter(|o| !matches!(o, ChannelOutput::Transmit(_))));
            if fs.is_empty() {
                break;
            }
            for f in fs {
                sent += 1;
                b.receive(&f, now);
            }
            for o in b.drain_outputs() {
                match o {
                    ChannelOutput::Transmit(ack) => a.receive(&ack, now),
                    ChannelOutput::Received(m) => got.push(m),
                    _ => {}
                }
            }
        }
        (sent, got, a_events)
    }

    #[test]
    fn small_appdata_is_one_frame() {
        let mut a = PortChannel::new(LinkConfig::default());
        let mut b = PortChannel::new(LinkConfig::default());
        let msg = appdata(100);
        let t = a.send(&msg, SimTime::ZERO).unwrap();
        let (sent, got, events) = shuttle(&mut a, &mut b);
        assert_eq!(sent, 1);
        assert_eq!(got, vec![msg]);
        assert_eq!(events, vec![ChannelOutput::Resolved(t, Delivery::Delivered)]);
    }

    #[test]
    fn failed_chunk_fails_message_and_cancels_rest() {
        let cfg = LinkConfig {
            max_retries: 0,
            ..LinkConfig::default()
        };
        let mut a = PortChannel::new(cfg);
        let t = a.send(&appdata(1000), SimTime::ZERO).unwrap();
        a.drain_outputs();
        let deadline = a.next_deadline().unwrap();
        a.handle_timeout(deadline);
        let outs = a.drain_outputs();
        assert!(outs.contains(&ChannelOutput::Resolved(t, Delivery::Failed)));
        assert!(frames(&outs).is_empty(), "remaining chunks were cancelled");
        assert_eq!(a.in_flight(), 0);
        assert!(a.link().is_idle());
    }

    #[test]
    fn garbage_message_is_dropped() {
        let mut b = PortChannel::new(LinkConfig::default());
        let mut payload = vec![0, 0, 0, 1];
        payload.extend_from_slice(&[200, 1, 2]);
        let frame = crate::link::encode_frame(&crate::link::Frame::data(0, payload)).unwrap();
        b.receive(&frame, SimTime::ZERO);
        let outs = b.drain_outputs();
        assert!(outs.iter().any(|o| matches!(o, ChannelOutput::Dropped(_))));
    }
}
