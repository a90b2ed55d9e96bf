use modsvc::link::{
    crc16_ccitt_false, decode_frame, encode_frame, DecodeError, Delivery, Frame, FrameDecoder,
    LinkConfig, LinkEndpoint, LinkOutput, MAX_PAYLOAD,
};
use modsvc::simworld::{LossRng, Scenario, World, WorldTopology};
use modsvc::SimTime;
use proptest::prelude::*;

fn frame() -> impl Strategy<Value = Frame> {
    prop_oneof![
        1 => any::<u8>().prop_map(Frame::ack),
        4 => (any::<u8>(), prop::collection::vec(any::<u8>(), 0..=MAX_PAYLOAD))
            .prop_map(|(s, p)| Frame::data(s, p)),
    ]
}

#[test]
fn crc_check_value() {
    assert_eq!(crc16_ccitt_false(b"123456789"), 0x29B1);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(10_000))]

    #[test]
    fn roundtrip(f in frame()) {
        let bytes = encode_frame(&f).unwrap();
        prop_assert_eq!(bytes.len(), f.encoded_len());
        prop_assert_eq!(decode_frame(&bytes), Ok((f, bytes.len())));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(500))]

    #[test]
    fn single_and_adjacent_bit_flips_rejected(f in frame(), extra in 0usize..=1) {
        let bytes = encode_frame(&f).unwrap();
        for bit in 0..bytes.len() * 8 - extra {
            let mut b = bytes.clone();
            for k in 0..=extra {
                b[(bit + k) / 8] ^= 1 << ((bit + k) % 8);
            }
            prop_assert!(decode_frame(&b).is_err(), "bits {}..={} accepted", bit, bit + extra);
        }
    }

    #[test]
    fn decoder_resyncs_after_garbage(
        garbage in prop::collection::vec(any::<u8>().prop_filter("no start byte", |b| *b != 0x7E), 0..64),
        frames in prop::collection::vec(frame(), 1..8),
        split in any::<prop::sample::Index>(),
    ) {
        let mut stream = garbage.clone();
        for f in &frames {
            stream.extend(encode_frame(f).unwrap());
        }
        let cut = split.index(stream.len() + 1);
        let mut dec = FrameDecoder::new();
        let mut got = Vec::new();
        for part in [&stream[..cut], &stream[cut..]] {
            dec.push(part);
            while let Some(r) = dec.next_frame() {
                if let Ok(f) = r {
                    got.push(f);
                }
            }
        }
        prop_assert_eq!(got, frames);
        prop_assert_eq!(dec.discarded_bytes(), garbage.len() as u64);
    }

    #[test]
    fn truncation_waits_for_more(f in frame(), keep in any::<prop::sample::Index>()) {
        let bytes = encode_frame(&f).unwrap();
        let n = keep.index(bytes.len());
        prop_assert_eq!(decode_frame(&bytes[..n]), Err(DecodeError::NeedMoreData));
    }
}

/// Sender and receiver joined by an independently lossy wire in each
/// direction. Returns resolutions in order and the receiver's deliveries.
fn lossy_exchange(
    payloads: &[Vec<u8>],
    loss: f64,
    max_retries: u32,
    seed: u64,
) -> (Vec<Delivery>, Vec<Vec<u8>>, usize) {
    let cfg = LinkConfig { max_retries, ..LinkConfig::default() };
    let mut tx = LinkEndpoint::new(cfg);
    let mut rx = LinkEndpoint::new(cfg);
    let mut fwd = LossRng::stream(seed, 0);
    let mut back = LossRng::stream(seed, 1);
    let mut now = SimTime::ZERO;
    for p in payloads {
        tx.send(p.clone(), now).unwrap();
    }
    let mut resolved = Vec::new();
    let mut delivered = Vec::new();
    let mut max_outstanding = 0;
    loop {
        let mut progressed = true;
        while progressed {
            progressed = false;
            for o in tx.drain_outputs() {
                progressed = true;
                match o {
                    LinkOutput::Transmit(b) if !fwd.lose(loss) => rx.receive(&b, now),
                    LinkOutput::Resolved(_, d) => resolved.push(d),
                    _ => {}
                }
            }
            for o in rx.drain_outputs() {
                progressed = true;
                match o {
                    LinkOutput::Transmit(b) if !back.lose(loss) => tx.receive(&b, now),
                    LinkOutput::Deliver(p) => delivered.push(p),
                    _ => {}
                }
            }
            max_outstanding = max_outstanding.max(tx.outstanding().is_some() as usize);
        }
        match tx.next_deadline() {
            Some(d) => {
                now = d;
                tx.handle_timeout(now);
            }
            None => break,
        }
    }
    (resolved, delivered, max_outstanding)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn exactly_once_in_order_under_loss(
        payloads in prop::collection::vec(prop::collection::vec(any::<u8>(), 0..40), 1..300),
        loss in 0.0f64..0.5,
        seed in any::<u64>(),
    ) {
        // 40 retries: a frame is lost for good with probability below 1e-12.
        let (resolved, delivered, max_outstanding) = lossy_exchange(&payloads, loss, 40, seed);
        prop_assert_eq!(resolved.len(), payloads.len());
        prop_assert!(resolved.iter().all(|d| *d == Delivery::Delivered));
        prop_assert_eq!(delivered, payloads);
        prop_assert!(max_outstanding <= 1);
    }

    #[test]
    fn failures_never_duplicate(
        payloads in prop::collection::vec(prop::collection::vec(any::<u8>(), 0..8), 1..50),
        loss in 0.3f64..0.9,
        seed in any::<u64>(),
    ) {
        // With few retries some sends fail; still nothing arrives twice and
        // arrivals keep the send order.
        let (resolved, delivered, _) = lossy_exchange(&payloads, loss, 2, seed);
        prop_assert_eq!(resolved.len(), payloads.len());
        let mut cursor = 0;
        for d in &delivered {
            let pos = payloads[cursor..].iter().position(|p| p == d);
            prop_assert!(pos.is_some(), "out of order or duplicate delivery");
            cursor += pos.unwrap() + 1;
        }
        let ok = resolved.iter().filter(|d| **d == Delivery::Delivered).count();
        prop_assert!(delivered.len() >= ok);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn lossy_port_leaves_other_ports_alone(loss in 0.0f64..1.0, seed in any::<u64>()) {
        // The hub's port 1 link is clean; whatever happens on port 0 must
        // not change a single record on the clean side.
        let topo = |l: f64| format!(
            "module hub center=UP_DOWN ports=0:UP,1:DOWN root\n\
             module noisy center=UP_DOWN ports=0:DOWN\n\
             module quiet center=UP_DOWN ports=0:UP\n\
             link hub.1 quiet.0\n\
             link hub.0 noisy.0 loss={l}\n"
        );
        let run = |l: f64| {
            let w = World::new(WorldTopology::parse(&topo(l)).unwrap(), Scenario::default(), seed).unwrap();
            let mut w = w;
            w.run_until(SimTime::from_centis(1500));
            (w.node("quiet").unwrap().link_stats(0), w.node("hub").unwrap().link_stats(1))
        };
        let clean = run(0.0);
        let noisy = run(loss);
        prop_assert_eq!(clean.0.unwrap().delivered_up, noisy.0.unwrap().delivered_up);
        prop_assert_eq!(clean.0.unwrap().retransmissions, 0);
        prop_assert_eq!(noisy.1.unwrap().retransmissions, 0);
    }
}
