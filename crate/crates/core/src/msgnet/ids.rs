use std::fmt;
use std::str::FromStr;

use thiserror::Error;

/// Dotted port-index path naming a module, e.g. `0.3.1`.
///
/// The root of a configuration is `0`. A module that has never received a
/// push has the empty path, rendered as `-`.
#[derive(Clone, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ModuleId(Vec<u8>);

/// Longest path that still fits a one-byte length prefix on the wire.
pub const MAX_ID_DEPTH: usize = 255;

impl ModuleId {
    pub fn root() -> Self {
        ModuleId(vec![0])
    }

    pub fn unassigned() -> Self {
        ModuleId(Vec::new())
    }

    pub fn from_path(path: Vec<u8>) -> Self {
        ModuleId(path)
    }

    pub fn path(&self) -> &[u8] {
        &self.0
    }

    pub fn is_assigned(&self) -> bool {
        !self.0.is_empty()
    }

    /// Id handed to the neighbour reached through `port`. Saturates at
    /// [`MAX_ID_DEPTH`] by reusing the parent path.
    pub fn child(&self, port: u8) -> ModuleId {
        let mut path = self.0.clone();
        if path.len() < MAX_ID_DEPTH {
            path.push(port);
        }
        ModuleId(path)
    }
}

impl fmt::Display for ModuleId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.0.is_empty() {
            return f.write_str("-");
        }
        for (i, p) in self.0.iter().enumerate() {
            if i > 0 {
                f.write_str(".")?;
            }
            write!(f, "{p}")?;
        }
        Ok(())
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("invalid module id `{0}`")]
pub struct InvalidModuleId(pub String);

impl FromStr for ModuleId {
    type Err = InvalidModuleId;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s == "-" {
            return Ok(ModuleId::unassigned());
        }
        let path = s
            .split('.')
            .map(|part| {
                if part.is_empty() || !part.bytes().all(|b| b.is_ascii_digit()) {
                    return None;
                }
                part.parse::<u8>().ok()
            })
            .collect::<Option<Vec<u8>>>()
            .ok_or_else(|| InvalidModuleId(s.to_string()))?;
        if path.len() > MAX_ID_DEPTH {
            return Err(InvalidModuleId(s.to_string()));
        }
        Ok(ModuleId(path))
    }
}

/// Name under which an application session registers with its node.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct AppName(String);

pub const MAX_APP_NAME: usize = 64;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("invalid app name `{0}`: must be 1-64 printable characters without whitespace")]
pub struct InvalidAppName(pub String);

impl AppName {
    pub fn new(name: &str) -> Result<Self, InvalidAppName> {
        let ok = !name.is_empty()
            && name.chars().count() <= MAX_APP_NAME
            && name.chars().all(|c| !c.is_whitespace() && !c.is_control());
        if ok {
            Ok(AppName(name.to_string()))
        } else {
            Err(InvalidAppName(name.to_string()))
        }
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl FromStr for AppName {
    type Err = InvalidAppName;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        AppName::new(s)
    }
}

impl fmt::Display for AppName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}
