//! Symbolic physical state of a module.
//!
//! There is no geometry here: a module is an orientation of its centre
//! axis, a set of labelled ports that are either open or latched to a
//! neighbour, one rotation setpoint and a bank of integer sensors.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use crate::wire::{Reader, WireError, Writer};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Axis {
    NorthSouth,
    EastWest,
    UpDown,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Direction {
    North,
    South,
    East,
    West,
    Up,
    Down,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Connector {
    Open,
    Closed,
}

impl Axis {
    pub const ALL: [Axis; 3] = [Axis::NorthSouth, Axis::EastWest, Axis::UpDown];

    pub fn name(self) -> &'static str {
        match self {
            Axis::NorthSouth => "NORTH_SOUTH",
            Axis::EastWest => "EAST_WEST",
            Axis::UpDown => "UP_DOWN",
        }
    }

    fn code(self) -> u8 {
        self as u8
    }

    fn from_code(c: u8) -> Option<Self> {
        Axis::ALL.get(c as usize).copied()
    }
}

impl Direction {
    pub const ALL: [Direction; 6] = [
        Direction::North,
        Direction::South,
        Direction::East,
        Direction::West,
        Direction::Up,
        Direction::Down,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Direction::North => "NORTH",
            Direction::South => "SOUTH",
            Direction::East => "EAST",
            Direction::West => "WEST",
            Direction::Up => "UP",
            Direction::Down => "DOWN",
        }
    }

    fn code(self) -> u8 {
        self as u8
    }

    fn from_code(c: u8) -> Option<Self> {
        Direction::ALL.get(c as usize).copied()
    }
}

impl Connector {
    pub fn name(self) -> &'static str {
        match self {
            Connector::Open => "OPEN",
            Connector::Closed => "CLOSED",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct UnknownName(pub String);

impl fmt::Display for UnknownName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "unknown name `{}`", self.0)
    }
}

impl std::error::Error for UnknownName {}

impl FromStr for Axis {
    type Err = UnknownName;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Axis::ALL
            .into_iter()
            .find(|a| a.name() == s)
            .ok_or_else(|| UnknownName(s.to_string()))
    }
}

impl FromStr for Direction {
    type Err = UnknownName;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Direction::ALL
            .into_iter()
            .find(|d| d.name() == s)
            .ok_or_else(|| UnknownName(s.to_string()))
    }
}

impl fmt::Display for Axis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl fmt::Display for Direction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PortState {
    pub direction: Direction,
    pub connector: Connector,
    /// Physical name of the latched neighbour.
    pub neighbor: Option<String>,
}

impl PortState {
    pub fn open(direction: Direction) -> Self {
        PortState {
            direction,
            connector: Connector::Open,
            neighbor: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ModulePhysState {
    pub center: Axis,
    pub ports: BTreeMap<u8, PortState>,
    pub rotation_speed: i32,
    pub sensors: BTreeMap<u8, i32>,
}

impl ModulePhysState {
    pub fn new(center: Axis) -> Self {
        ModulePhysState {
            center,
            ports: BTreeMap::new(),
            rotation_speed: 0,
            sensors: BTreeMap::new(),
        }
    }

    pub fn with_port(mut self, port: u8, direction: Direction) -> Self {
        self.ports.insert(port, PortState::open(direction));
        self
    }

    /// Latches `port` to `neighbor`. Unknown ports are ignored.
    pub fn connect(&mut self, port: u8, neighbor: &str) {
        if let Some(p) = self.ports.get_mut(&port) {
            p.connector = Connector::Closed;
            p.neighbor = Some(neighbor.to_string());
        }
    }

    pub fn disconnect(&mut self, port: u8) {
        if let Some(p) = self.ports.get_mut(&port) {
            p.connector = Connector::Open;
            p.neighbor = None;
        }
    }

    /// Neighbours latched on ports carrying direction label `dir`.
    pub fn connected(&self, dir: Direction) -> Vec<&str> {
        self.ports
            .values()
            .filter(|p| p.direction == dir)
            .filter_map(|p| p.neighbor.as_deref())
            .collect()
    }

    pub fn encode(&self, w: &mut Writer) {
        w.u8(self.center.code());
        w.u8(self.ports.len() as u8);
        for (idx, p) in &self.ports {
            w.u8(*idx)
                .u8(p.direction.code())
                .u8(matches!(p.connector, Connector::Closed) as u8)
                .str8(p.neighbor.as_deref().unwrap_or(""));
        }
        w.i32(self.rotation_speed);
        w.u8(self.sensors.len() as u8);
        for (id, v) in &self.sensors {
            w.u8(*id).i32(*v);
        }
    }

    pub fn decode(r: &mut Reader<'_>) -> Result<Self, WireError> {
        let center = Axis::from_code(r.u8("center")?).ok_or(WireError::Invalid {
            field: "center",
            detail: "axis code".into(),
        })?;
        let n = r.u8("port count")?;
        let mut ports = BTreeMap::new();
        for _ in 0..n {
            let idx = r.u8("port index")?;
            let direction = Direction::from_code(r.u8("direction")?).ok_or(WireError::Invalid {
                field: "direction",
                detail: "direction code".into(),
            })?;
            let connector = match r.u8("connector")? {
                0 => Connector::Open,
                1 => Connector::Closed,
                c => {
                    return Err(WireError::Invalid {
                        field: "connector",
                        detail: format!("code {c}"),
                    })
                }
            };
            let name = r.str8("neighbor")?;
            let neighbor = (!name.is_empty()).then(|| name.to_string());
            ports.insert(
                idx,
                PortState {
                    direction,
                    connector,
                    neighbor,
                },
            );
        }
        let rotation_speed = r.i32("rotation speed")?;
        let n = r.u8("sensor count")?;
        let mut sensors = BTreeMap::new();
        for _ in 0..n {
            let id = r.u8("sensor id")?;
            sensors.insert(id, r.i32("sensor value")?);
        }
        Ok(ModulePhysState {
            center,
            ports,
            rotation_speed,
            sensors,
        })
    }
}

/// Text form used in `STATE` replies:
/// `center=EAST_WEST speed=150 ports=0:EAST:CLOSED:head,1:WEST:OPEN:- sensors=1:0`.
impl fmt::Display for ModulePhysState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "center={} speed={} ports=", self.center, self.rotation_speed)?;
        if self.ports.is_empty() {
            f.write_str("-")?;
        }
        for (i, (idx, p)) in self.ports.iter().enumerate() {
            if i > 0 {
                f.write_str(",")?;
            }
            write!(
                f,
                "{idx}:{}:{}:{}",
                p.direction,
                p.connector.name(),
                p.neighbor.as_deref().unwrap_or("-")
            )?;
        }
        f.write_str(" sensors=")?;
        if self.sensors.is_empty() {
            f.write_str("-")?;
        }
        for (i, (id, v)) in self.sensors.iter().enumerate() {
            if i > 0 {
                f.write_str(",")?;
            }
            write!(f, "{id}:{v}")?;
        }
        Ok(())
    }
}
