use modsvc::simworld::{shapes, Scenario, World, WorldTopology};
use modsvc::{SimDuration, SimTime};
use proptest::prelude::*;

fn world(topo: &str, scen: &str, seed: u64) -> World {
    World::new(WorldTopology::parse(topo).unwrap(), Scenario::parse(scen).unwrap(), seed).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn identical_inputs_identical_logs(n in 1usize..10, loss in 0.0f64..0.6, seed in any::<u64>()) {
        let topo = shapes::tree(&shapes::random_parents(n, seed), &format!(" loss={loss}"));
        let scen = "at 300 upgrade m0 2\nat 400 app m0 ctl BCAST aGk=\n";
        let a = world(&topo, scen, seed).run(SimTime::from_centis(1500));
        let b = world(&topo, scen, seed).run(SimTime::from_centis(1500));
        prop_assert_eq!(a.to_text(), b.to_text());
    }

    #[test]
    fn log_time_never_goes_backwards(n in 2usize..10, loss in 0.0f64..0.6, seed in any::<u64>()) {
        let topo = shapes::tree(&shapes::random_parents(n, seed), &format!(" loss={loss} byte_us=50 prop_us=7"));
        let log = world(&topo, "at 250 upgrade m0 3\nat 700 sever m0 m1\nat 900 restore m0 m1\n", seed)
            .run(SimTime::from_centis(1500));
        prop_assert!(log.lines.windows(2).all(|w| w[0].at <= w[1].at));
        // A neighbour is only learned after a HELLO crossed the wire, which
        // takes at least one propagation delay plus one byte time.
        let first_link_up = log.of_kind("link_up").map(|l| l.at).min().unwrap();
        if let Some(first) = log.of_kind("neighbor").map(|l| l.at).min() {
            prop_assert!(first >= first_link_up + SimDuration::from_micros(57));
        }
    }

    #[test]
    fn severing_one_link_stops_only_that_link(n in 3usize..10, seed in any::<u64>()) {
        let parents = shapes::random_parents(n, seed);
        let topo = shapes::tree(&parents, "");
        // Sever the edge to the last module; every other edge stays up.
        let victim = n - 1;
        let parent = parents[victim - 1];
        let scen = format!("at 500 sever m{parent} m{victim}\n");
        let mut w = world(&topo, &scen, seed);
        w.run_until(SimTime::from_centis(600));
        let t = WorldTopology::parse(&topo).unwrap();
        let counts = |w: &World| -> Vec<u64> {
            t.links
                .iter()
                .flat_map(|l| [&l.a, &l.b])
                .map(|(m, p)| w.node(m).unwrap().link_stats(*p).unwrap().delivered_up)
                .collect()
        };
        let before = counts(&w);
        w.run_until(SimTime::from_centis(1500));
        let after = counts(&w);
        for (i, l) in t.links.iter().enumerate() {
            let cut = l.connects(&format!("m{parent}"), &format!("m{victim}"));
            for side in 0..2 {
                let k = 2 * i + side;
                if cut {
                    prop_assert_eq!(after[k], before[k], "delivery on severed link {}", i);
                } else {
                    prop_assert!(after[k] > before[k], "link {} went quiet", i);
                }
            }
        }
    }
}
