//! Topology files: one `module` or `link` record per line.
//!
//! ```text
//! module head center=NORTH_SOUTH ports=0:EAST,1:WEST sensors=1:0 root
//! link right.0 head.0 loss=0.1 prop_us=1000 byte_us=300 ack_ms=100 retries=5
//! ```
//!
//! `#` starts a comment. The full grammar is in `docs/formats.md`.

use std::collections::{BTreeMap, BTreeSet};

use crate::link::LinkConfig;
use crate::roledsl::Diagnostic;
use crate::service::phys::{Axis, Direction, ModulePhysState};
use crate::time::SimDuration;

pub const DEFAULT_PROPAGATION: SimDuration = SimDuration::from_millis(1);
pub const DEFAULT_PER_BYTE: SimDuration = SimDuration::from_micros(300);

#[derive(Clone, Debug, PartialEq)]
pub struct ModuleSpec {
    pub name: String,
    pub center: Axis,
    pub ports: BTreeMap<u8, Direction>,
    pub sensors: BTreeMap<u8, i32>,
    pub root: bool,
    /// Overrides the default starting version (1 for the root, else 0).
    pub version: Option<u32>,
    pub image_len: Option<usize>,
    pub line: usize,
}

impl ModuleSpec {
    /// Initial physical state with every port open.
    pub fn initial_state(&self) -> ModulePhysState {
        let mut s = ModulePhysState::new(self.center);
        for (&p, &d) in &self.ports {
            s = s.with_port(p, d);
        }
        s.sensors = self.sensors.clone();
        s
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LinkSpec {
    pub a: (String, u8),
    pub b: (String, u8),
    pub loss: f64,
    pub propagation: SimDuration,
    pub per_byte: SimDuration,
    pub ack_timeout: SimDuration,
    pub max_retries: u32,
    pub line: usize,
}

impl LinkSpec {
    pub fn link_config(&self) -> LinkConfig {
        LinkConfig {
            ack_timeout: self.ack_timeout,
            max_retries: self.max_retries,
            per_byte_delay: self.per_byte,
        }
    }

    pub fn connects(&self, x: &str, y: &str) -> bool {
        (self.a.0 == x && self.b.0 == y) || (self.a.0 == y && self.b.0 == x)
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct WorldTopology {
    pub modules: Vec<ModuleSpec>,
    pub links: Vec<LinkSpec>,
}

impl WorldTopology {
    pub fn module_index(&self, name: &str) -> Option<usize> {
        self.modules.iter().position(|m| m.name == name)
    }

    pub fn parse(text: &str) -> Result<WorldTopology, Vec<Diagnostic>> {
        let mut topo = WorldTopology::default();
        let mut diags = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let words: Vec<&str> = content.split_ascii_whitespace().collect();
            let res = match words[0] {
                "module" => parse_module(&words[1..], line).map(|m| topo.modules.push(m)),
                "link" => parse_link(&words[1..], line).map(|l| topo.links.push(l)),
                other => Err(format!("unknown record `{other}`")),
            };
            if let Err(e) = res {
                diags.push(Diagnostic::new(line, e));
            }
        }
        if diags.is_empty() {
            topo.validate(&mut diags);
        }
        if diags.is_empty() {
            Ok(topo)
        } else {
            Err(diags)
        }
    }

    fn validate(&self, diags: &mut Vec<Diagnostic>) {
        let mut names = BTreeSet::new();
        for m in &self.modules {
            if !names.insert(m.name.as_str()) {
                diags.push(Diagnostic::new(m.line, format!("duplicate module `{}`", m.name)));
            }
        }
        let mut used = BTreeSet::new();
        for l in &self.links {
            for (name, port) in [&l.a, &l.b] {
                match self.modules.iter().find(|m| &m.name == name) {
                    None => diags.push(Diagnostic::new(l.line, format!("unknown module `{name}`"))),
                    Some(m) if !m.ports.contains_key(port) => diags.push(Diagnostic::new(
                        l.line,
                        format!("module `{name}` has no port {port}"),
                    )),
                    Some(_) => {
                        if !used.insert((name.clone(), *port)) {
                            diags.push(Diagnostic::new(
                                l.line,
                                format!("port {name}.{port} is already linked"),
                            ));
                        }
                    }
                }
            }
            if l.a.0 == l.b.0 {
                diags.push(Diagnostic::new(l.line, "a link must join two different modules"));
            }
        }
    }
}

fn kv<'a>(word: &'a str) -> Result<(&'a str, &'a str), String> {
    word.split_once('=')
        .ok_or_else(|| format!("expected key=value, found `{word}`"))
}

fn num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T, String> {
    v.parse::<T>().map_err(|_| format!("bad value for {key}: `{v}`"))
}

fn valid_name(name: &str) -> bool {
    !name.is_empty()
        && name.len() <= 64
        && name
            .chars()
            .all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-')
}

fn parse_module(words: &[&str], line: usize) -> Result<ModuleSpec, String> {
    let Some((&name, rest)) = words.split_first() else {
        return Err("module record needs a name".into());
    };
    if !valid_name(name) {
        return Err(format!("bad module name `{name}`"));
    }
    let mut center = None;
    let mut ports = BTreeMap::new();
    let mut sensors = BTreeMap::new();
    let mut root = false;
    let mut version = None;
    let mut image_len = None;
    for &w in rest {
        if w == "root" {
            root = true;
            continue;
        }
        let (k, v) = kv(w)?;
        match k {
            "center" => center = Some(v.parse::<Axis>().map_err(|e| e.to_string())?),
            "ports" => {
                for item in v.split(',').filter(|s| !s.is_empty()) {
                    let (idx, dir) = item
                        .split_once(':')
                        .ok_or_else(|| format!("expected <index>:<DIRECTION>, found `{item}`"))?;
                    let idx = num::<u8>("port index", idx)?;
                    let dir = dir.parse::<Direction>().map_err(|e| e.to_string())?;
                    if ports.insert(idx, dir).is_some() {
                        return Err(format!("duplicate port {idx}"));
                    }
                }
            }
            "sensors" => {
                for item in v.split(',').filter(|s| !s.is_empty()) {
                    let (id, val) = item
                        .split_once(':')
                        .ok_or_else(|| format!("expected <id>:<value>, found `{item}`"))?;
                    sensors.insert(num::<u8>("sensor id", id)?, num::<i32>("sensor value", val)?);
                }
            }
            "version" => version = Some(num::<u32>(k, v)?),
            "image" => image_len = Some(num::<usize>(k, v)?),
            other => return Err(format!("unknown module attribute `{other}`")),
        }
    }
    let center = center.ok_or("module record needs center=<AXIS>")?;
    Ok(ModuleSpec {
        name: name.to_string(),
        center,
        ports,
        sensors,
        root,
        version,
        image_len,
        line,
    })
}

fn endpoint(word: &str) -> Result<(String, u8), String> {
    let (m, p) = word
        .rsplit_once('.')
        .ok_or_else(|| format!("expected <module>.<port>, found `{word}`"))?;
    if !valid_name(m) {
        return Err(format!("bad module name `{m}`"));
    }
    Ok((m.to_string(), num::<u8>("port", p)?))
}

fn parse_link(words: &[&str], line: usize) -> Result<LinkSpec, String> {
    let [a, b, rest @ ..] = words else {
        return Err("link record needs two endpoints".into());
    };
    let defaults = LinkConfig::default();
    let mut spec = LinkSpec {
        a: endpoint(a)?,
        b: endpoint(b)?,
        loss: 0.0,
        propagation: DEFAULT_PROPAGATION,
        per_byte: DEFAULT_PER_BYTE,
        ack_timeout: defaults.ack_timeout,
        max_retries: defaults.max_retries,
        line,
    };
    for &w in rest {
        let (k, v) = kv(w)?;
        match k {
            "loss" => {
                let loss = num::<f64>(k, v)?;
                if !(0.0..=1.0).contains(&loss) {
                    return Err(format!("loss must be in [0, 1], got {v}"));
                }
                spec.loss = loss;
            }
            "prop_us" => spec.propagation = SimDuration::from_micros(num(k, v)?),
            "byte_us" => spec.per_byte = SimDuration::from_micros(num(k, v)?),
            "ack_ms" => {
                let ms: u64 = num(k, v)?;
                if ms == 0 {
                    return Err("ack_ms must be positive".into());
                }
                spec.ack_timeout = SimDuration::from_millis(ms);
            }
            "retries" => spec.max_retries = num(k, v)?,
            other => return Err(format!("unknown link attribute `{other}`")),
        }
    }
    Ok(spec)
}

#[cfg(test)]
mod tests {
    use super::*;

    const CAR: &str = "\
# three-module car
module head center=NORTH_SOUTH ports=0:EAST,1:WEST sensors=1:0 root
module right center=EAST_WEST ports=0:EAST,1:WEST
module left center=EAST_WEST ports=0:EAST,1:WEST
link right.0 head.0
link left.1 head.1 loss=0.25 retries=9
";

    #[test]
    fn parses_car() {
        let t = WorldTopology::parse(CAR).unwrap();
        assert_eq!(t.modules.len(), 3);
        assert!(t.modules[0].root);
        assert_eq!(t.modules[0].sensors[&1], 0);
        assert_eq!(t.modules[1].ports[&0], Direction::East);
        assert_eq!(t.links[0].a, ("right".to_string(), 0));
        assert_eq!(t.links[0].propagation, DEFAULT_PROPAGATION);
        assert_eq!(t.links[1].loss, 0.25);
        assert_eq!(t.links[1].max_retries, 9);
        assert!(t.links[1].connects("head", "left"));
        assert_eq!(t.module_index("left"), Some(2));
    }

    #[test]
    fn empty_is_valid() {
        assert_eq!(WorldTopology::parse("").unwrap(), WorldTopology::default());
    }

    #[test]
    fn diagnostics() {
        let cases = [
            ("module a", 1, "center"),
            ("module a center=SIDEWAYS", 1, "SIDEWAYS"),
            ("module a center=UP_DOWN ports=0:EAST,0:WEST", 1, "duplicate port"),
            ("bogus", 1, "unknown record"),
            ("module a center=UP_DOWN\nmodule a center=UP_DOWN", 2, "duplicate module"),
            ("module a center=UP_DOWN ports=0:UP\nlink a.0 b.0", 2, "unknown module `b`"),
            ("module a center=UP_DOWN ports=0:UP\nmodule b center=UP_DOWN\nlink a.0 b.3", 3, "no port 3"),
            ("module a center=UP_DOWN ports=0:UP\nmodule b center=UP_DOWN ports=0:UP,1:UP\nlink a.0 b.0\nlink a.0 b.1", 4, "already linked"),
            ("module a center=UP_DOWN ports=0:UP\nmodule b center=UP_DOWN ports=0:UP\nlink a.0 b.0 loss=1.5", 3, "loss"),
            ("module a center=UP_DOWN ports=0:UP,1:UP\nlink a.0 a.1", 2, "different modules"),
        ];
        for (src, line, needle) in cases {
            let d = WorldTopology::parse(src).unwrap_err();
            assert_eq!(d[0].line, line, "{src}: {:?}", d);
            assert!(d[0].message.contains(needle), "{src}: {}", d[0]);
        }
    }
}
