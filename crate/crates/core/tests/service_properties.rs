use std::collections::{BTreeMap, BTreeSet};

use modsvc::service::command::b64_encode;
use modsvc::simworld::{shapes, EventLog, Scenario, World, WorldTopology};
use modsvc::SimTime;
use proptest::prelude::*;

/// A random tree plus `extra` cross links between free ports, so the
/// graph is connected and may contain cycles.
fn connected_graph(n: usize, extra: &[(prop::sample::Index, prop::sample::Index)], seed: u64, attrs: &str) -> String {
    let parents = shapes::random_parents(n, seed);
    let mut text = shapes::tree(&parents, attrs);
    let topo = WorldTopology::parse(&text).unwrap();
    let mut used: BTreeSet<(String, u8)> = BTreeSet::new();
    for l in &topo.links {
        used.insert(l.a.clone());
        used.insert(l.b.clone());
    }
    let free = |used: &BTreeSet<(String, u8)>, m: usize| {
        (0..shapes::PORTS).find(|&p| !used.contains(&(format!("m{m}"), p)))
    };
    for (a, b) in extra {
        let (a, b) = (a.index(n), b.index(n));
        if a == b {
            continue;
        }
        if let (Some(pa), Some(pb)) = (free(&used, a), free(&used, b)) {
            used.insert((format!("m{a}"), pa));
            used.insert((format!("m{b}"), pb));
            text.push_str(&format!("link m{a}.{pa} m{b}.{pb}{attrs}\n"));
        }
    }
    text
}

fn world(topo: &str, scen: &str, seed: u64) -> World {
    World::new(WorldTopology::parse(topo).unwrap(), Scenario::parse(scen).unwrap(), seed).unwrap()
}

/// Version values each module reported, in log order.
fn version_history(log: &EventLog) -> BTreeMap<String, Vec<u32>> {
    let mut out: BTreeMap<String, Vec<u32>> = BTreeMap::new();
    for l in &log.lines {
        let v = match l.kind.as_str() {
            "boot" | "push_accept" => l.field("version"),
            "upgrade" => l.field("to"),
            _ => None,
        };
        if let Some(v) = v {
            out.entry(l.module.clone()).or_default().push(v.parse().unwrap());
        }
    }
    out
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn diffusion_converges_with_unique_ids(
        n in 2usize..=50,
        extra in prop::collection::vec((any::<prop::sample::Index>(), any::<prop::sample::Index>()), 0..10),
        loss in 0.0f64..0.2,
        seed in any::<u64>(),
    ) {
        let topo = connected_graph(n, &extra, seed, &format!(" loss={loss}"));
        let mut w = world(&topo, "at 100 upgrade m0 2", seed);
        w.run_until(SimTime::from_centis(6000));
        let behind: Vec<String> = w.nodes().iter().enumerate()
            .filter(|(_, node)| node.version() != 2)
            .map(|(i, _)| format!("m{i}"))
            .collect();
        prop_assert!(behind.is_empty(), "not converged: {:?}", behind);
        let ids: BTreeSet<String> = w.nodes().iter().map(|node| node.id().to_string()).collect();
        prop_assert_eq!(ids.len(), n);
        prop_assert!(!ids.iter().any(|id| id.contains('-')));
        for hist in version_history(w.log()).values() {
            prop_assert!(hist.windows(2).all(|p| p[0] <= p[1]), "{:?}", hist);
        }
    }

    #[test]
    fn versions_monotone_and_files_whole(
        n in 2usize..8,
        loss in 0.0f64..0.4,
        upgrades in prop::collection::vec((0u64..3000, 0u32..6), 1..6),
        files in prop::collection::vec((0u64..3000, 0usize..2500), 1..5),
        seed in any::<u64>(),
    ) {
        let parents = shapes::random_parents(n, seed);
        let children = parents.iter().filter(|&&p| p == 0).count() as u8;
        let topo = shapes::tree(&parents, &format!(" loss={loss} retries=4"));
        let mut steps: Vec<(u64, String)> = upgrades
            .iter()
            .map(|(t, v)| (*t, format!("upgrade m0 {v}")))
            .collect();
        let mut contents = Vec::new();
        for (k, (t, len)) in files.iter().enumerate() {
            let data: Vec<u8> = (0..*len).map(|i| (i * 13 + k * 101) as u8).collect();
            let port = k as u8 % children;
            steps.push((*t, format!("app m0 ctl PUTFILE 0.{port} f.bin {}", b64_encode(&data))));
            contents.push(data);
        }
        steps.sort_by_key(|s| s.0);
        let scen: String = steps.iter().map(|(t, s)| format!("at {t} {s}\n")).collect();
        let mut w = world(&topo, &scen, seed);
        w.run_until(SimTime::from_centis(4000));

        let hist = version_history(w.log());
        for (m, h) in &hist {
            prop_assert!(h.windows(2).all(|p| p[0] <= p[1]), "{}: {:?}", m, h);
        }
        for (i, node) in w.nodes().iter().enumerate() {
            prop_assert_eq!(Some(&node.version()), hist[&format!("m{i}")].last());
            if let Some(f) = node.file("f.bin") {
                prop_assert!(contents.iter().any(|c| c == f), "m{} holds {} bytes that were never sent", i, f.len());
            }
        }
    }

    #[test]
    fn messages_reach_only_registered_sessions(
        ops in prop::collection::vec(prop_oneof![Just(0u8), Just(1u8), Just(2u8), Just(2u8)], 1..30),
        loss in 0.0f64..0.3,
        seed in any::<u64>(),
    ) {
        // 0: receiver registers, 1: receiver unregisters, 2: sender sends.
        let topo = format!(
            "module a center=UP_DOWN ports=0:UP root\nmodule b center=UP_DOWN ports=0:DOWN\nlink a.0 b.0 loss={loss}\n"
        );
        let mut scen = String::from("at 0 app b ctl REGISTER ctl\n");
        for (k, op) in ops.iter().enumerate() {
            let at = 500 + 50 * k as u64;
            let line = match op {
                0 => "app b ctl REGISTER ctl".to_string(),
                1 => "app b ctl UNREGISTER".to_string(),
                _ => format!("app a src SEND 0.0 ctl {}", b64_encode(format!("m{k}").as_bytes())),
            };
            scen.push_str(&format!("at {at} {line}\n"));
        }
        let w = world(&topo, &scen, seed);
        let log = w.run(SimTime::from_centis(500 + 50 * ops.len() as u64 + 1000));
        let mut registered = false;
        for l in log.lines.iter().filter(|l| l.module == "b" && l.kind == "app_rx") {
            if l.payload.starts_with("ctl OK registered") {
                registered = true;
            } else if l.payload.starts_with("ctl OK unregistered") {
                registered = false;
            } else if l.payload.starts_with("ctl MSG ") {
                prop_assert!(registered, "delivery while unregistered at {}", l.at.as_centis());
            }
        }
    }
}
