//! Topology text for common test shapes. Module `m0` is always the root
//! and every module has six ports, one per direction.
//!
//! In a tree, port 0 of a non-root module faces its parent and children
//! take the next free ports in order.

use std::fmt::Write;

use super::rng::LossRng;
use crate::service::phys::Direction;

pub const PORTS: u8 = 6;

fn module_line(out: &mut String, i: usize) {
    let ports: Vec<String> = Direction::ALL
        .iter()
        .enumerate()
        .map(|(p, d)| format!("{p}:{}", d.name()))
        .collect();
    let root = if i == 0 { " root" } else { "" };
    let _ = writeln!(out, "module m{i} center=UP_DOWN ports={}{root}", ports.join(","));
}

/// `parents[i - 1]` is the parent of module `i`; each must be `< i` and
/// no module may have more children than it has free ports.
pub fn tree(parents: &[usize], link_attrs: &str) -> String {
    let n = parents.len() + 1;
    let mut out = String::new();
    for i in 0..n {
        module_line(&mut out, i);
    }
    let mut next_port: Vec<u8> = (0..n).map(|i| if i == 0 { 0 } else { 1 }).collect();
    for (c, &p) in parents.iter().enumerate() {
        let child = c + 1;
        assert!(p < child, "parent {p} of {child} must come first");
        let port = next_port[p];
        assert!(port < PORTS, "module {p} has no free port");
        next_port[p] += 1;
        let _ = writeln!(out, "link m{p}.{port} m{child}.0{link_attrs}");
    }
    out
}

pub fn chain(n: usize, link_attrs: &str) -> String {
    let parents: Vec<usize> = (0..n.saturating_sub(1)).collect();
    tree(&parents, link_attrs)
}

/// A parent vector for a random tree on `n` modules that respects the
/// port budget.
pub fn random_parents(n: usize, seed: u64) -> Vec<usize> {
    let mut rng = LossRng::stream(seed, 0);
    let mut children = vec![0u8; n];
    let mut parents = Vec::new();
    for child in 1..n {
        let open: Vec<usize> = (0..child)
            .filter(|&p| children[p] < if p == 0 { PORTS } else { PORTS - 1 })
            .collect();
        let p = open[(rng.next_u64() % open.len() as u64) as usize];
        children[p] += 1;
        parents.push(p);
    }
    parents
}

/// m0 feeds m1 and m2, which both feed m3.
pub fn diamond(link_attrs: &str) -> String {
    let mut out = String::new();
    for i in 0..4 {
        module_line(&mut out, i);
    }
    for (a, b) in [("m0.0", "m1.0"), ("m0.1", "m2.0"), ("m1.1", "m3.0"), ("m2.1", "m3.1")] {
        let _ = writeln!(out, "link {a} {b}{link_attrs}");
    }
    out
}
