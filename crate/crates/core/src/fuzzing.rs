//! Bodies of the fuzz targets in `fuzz/`. Each takes raw input and panics
//! only on a broken invariant. Kept in the library so the checked-in
//! corpus can be replayed by `cargo test` on stable.

use crate::link::{decode_frame, encode_frame, Frame, FrameDecoder, MAX_PAYLOAD};
use crate::msgnet::chunk::Reassembler;
use crate::msgnet::ServiceMessage;
use crate::roledsl::{assign_role, RoleProgram};
use crate::service::phys::{Axis, Direction, ModulePhysState};
use crate::service::{parse_command, Node, NodeConfig};
use crate::simworld::{Scenario, WorldTopology};
use crate::time::{SimDuration, SimTime};

pub fn frame_decoder(data: &[u8]) {
    if let Ok((frame, used)) = decode_frame(data) {
        assert!(used <= data.len());
        assert_eq!(encode_frame(&frame).unwrap(), &data[..used]);
    }
    // Streamed in two pieces the decoder must not lose or invent bytes.
    let mid = data.len() / 2;
    let mut dec = FrameDecoder::new();
    let mut consumed = 0;
    for part in [&data[..mid], &data[mid..]] {
        dec.push(part);
        while let Some(r) = dec.next_frame() {
            if let Ok(f) = r {
                consumed += f.encoded_len();
            }
        }
    }
    assert!(consumed + dec.pending() + dec.discarded_bytes() as usize <= data.len());
}

pub fn frame_roundtrip(data: &[u8]) {
    let Some((&seq, payload)) = data.split_first() else {
        return;
    };
    let frame = if payload.is_empty() && seq % 2 == 1 {
        Frame::ack(seq)
    } else {
        Frame::data(seq, &payload[..payload.len().min(MAX_PAYLOAD)])
    };
    let bytes = encode_frame(&frame).unwrap();
    assert_eq!(decode_frame(&bytes), Ok((frame, bytes.len())));
}

pub fn service_message(data: &[u8]) {
    let Ok(msg) = ServiceMessage::decode(data) else {
        return;
    };
    assert_eq!(ServiceMessage::decode(&msg.encode()).as_ref(), Ok(&msg));
    if let Ok(body) = msg.decode_body() {
        assert_eq!(body.kind(), msg.kind);
        let again = ServiceMessage::new(msg.src_module.clone(), msg.dst_app.clone(), &body);
        assert_eq!(again.decode_body(), Ok(body));
    }
}

/// Input: chunk payloads, each prefixed by a one-byte length.
pub fn port_reassembly(data: &[u8]) {
    let mut r = Reassembler::new();
    let mut rest = data;
    while let Some((&len, tail)) = rest.split_first() {
        let n = (len as usize).min(tail.len());
        if let Ok(Some(_)) = r.push(&tail[..n]) {
            assert!(!r.in_progress());
        }
        rest = &tail[n..];
    }
}

/// Raw bytes on a live port as bursts, each prefixed by a one-byte
/// length; bursts land 30 ms apart.
pub fn node_receive(data: &[u8]) {
    let phys = ModulePhysState::new(Axis::UpDown).with_port(0, Direction::Up);
    let mut node = Node::new(NodeConfig::member(), phys);
    let mut now = SimTime::ZERO;
    node.boot(now);
    node.port_connected(0, "peer", now);
    let mut rest = data;
    while let Some((&len, tail)) = rest.split_first() {
        let n = (len as usize).min(tail.len());
        node.receive_bytes(0, &tail[..n], now);
        rest = &tail[n..];
        now = now + SimDuration::from_millis(30);
        node.handle_timeout(now);
        node.drain_outputs();
    }
}

pub fn role_program(data: &[u8]) {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    let Ok(program) = RoleProgram::parse(text) else {
        return;
    };
    let mut s = ModulePhysState::new(Axis::EastWest).with_port(0, Direction::East);
    s.connect(0, "n");
    let a = assign_role(&program, &s);
    if let Some(r) = &a.role {
        assert!(program.role(r).is_some_and(|d| !d.is_abstract));
    }
}

pub fn topology(data: &[u8]) {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    match WorldTopology::parse(text) {
        Ok(t) => {
            for l in &t.links {
                assert!((0.0..=1.0).contains(&l.loss));
                assert!(t.module_index(&l.a.0).is_some() && t.module_index(&l.b.0).is_some());
            }
        }
        Err(diags) => assert!(!diags.is_empty()),
    }
}

pub fn scenario(data: &[u8]) {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    let resolve = &mut |p: &str| {
        if p.len() % 2 == 0 {
            Ok(p.as_bytes().to_vec())
        } else {
            Err(format!("no file `{p}`"))
        }
    };
    if let Ok(s) = Scenario::parse_with(text, resolve) {
        assert!(s.steps.windows(2).all(|w| w[0].at <= w[1].at));
    }
}

pub fn app_command(data: &[u8]) {
    let Ok(line) = std::str::from_utf8(data) else {
        return;
    };
    if let Ok(cmd) = parse_command(line) {
        // The canonical form reparses to the same command.
        assert_eq!(parse_command(&cmd.to_string()), Ok(cmd));
    }
}

/// Every target with the name of its corpus directory.
pub const TARGETS: &[(&str, fn(&[u8]))] = &[
    ("frame_decoder", frame_decoder),
    ("frame_roundtrip", frame_roundtrip),
    ("service_message", service_message),
    ("port_reassembly", port_reassembly),
    ("node_receive", node_receive),
    ("role_program", role_program),
    ("topology", topology),
    ("scenario", scenario),
    ("app_command", app_command),
];
