//! The line-based command protocol spoken by local applications.
//!
//! One command per line; tokens are separated by ASCII whitespace and
//! binary arguments are standard base64 with padding. Replies are
//! `OK <details>` or `ERR <code> <text>`.

use std::fmt;

use base64::engine::general_purpose::STANDARD;
use base64::Engine;

use crate::msgnet::{AppName, ModuleId};

pub fn b64_encode(data: &[u8]) -> String {
    STANDARD.encode(data)
}

pub fn b64_decode(text: &str) -> Result<Vec<u8>, Reply> {
    STANDARD
        .decode(text)
        .map_err(|_| Reply::err(400, "bad base64"))
}

/// File names follow the app-name rules and additionally exclude `/`.
pub fn valid_file_name(name: &str) -> bool {
    AppName::new(name).is_ok() && !name.contains('/')
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Command {
    Register(AppName),
    Unregister,
    /// `None` queries the local module.
    State(Option<ModuleId>),
    Neighbors,
    Send {
        module: ModuleId,
        app: AppName,
        data: Vec<u8>,
    },
    Bcast(Vec<u8>),
    PutFile {
        module: ModuleId,
        name: String,
        data: Vec<u8>,
    },
    Exec {
        module: ModuleId,
        line: String,
    },
    Start {
        module: ModuleId,
        name: String,
    },
    Version,
    Id,
}

impl Command {
    pub fn verb(&self) -> &'static str {
        match self {
            Command::Register(_) => "REGISTER",
            Command::Unregister => "UNREGISTER",
            Command::State(_) => "STATE",
            Command::Neighbors => "NEIGHBORS",
            Command::Send { .. } => "SEND",
            Command::Bcast(_) => "BCAST",
            Command::PutFile { .. } => "PUTFILE",
            Command::Exec { .. } => "EXEC",
            Command::Start { .. } => "START",
            Command::Version => "VERSION",
            Command::Id => "ID",
        }
    }
}

impl fmt::Display for Command {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Command::Register(a) => write!(f, "REGISTER {a}"),
            Command::State(None) => f.write_str("STATE"),
            Command::State(Some(m)) => write!(f, "STATE {m}"),
            Command::Send { module, app, data } => {
                write!(f, "SEND {module} {app} {}", b64_encode(data))
            }
            Command::Bcast(data) => write!(f, "BCAST {}", b64_encode(data)),
            Command::PutFile { module, name, data } => {
                write!(f, "PUTFILE {module} {name} {}", b64_encode(data))
            }
            Command::Exec { module, line } => {
                write!(f, "EXEC {module} {}", b64_encode(line.as_bytes()))
            }
            Command::Start { module, name } => write!(f, "START {module} {name}"),
            other => f.write_str(other.verb()),
        }
    }
}

/// A complete reply line.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Reply {
    Ok(String),
    Err(u16, String),
}

impl Reply {
    pub fn ok(details: impl Into<String>) -> Self {
        Reply::Ok(details.into())
    }

    pub fn err(code: u16, text: impl Into<String>) -> Self {
        Reply::Err(code, text.into())
    }

    pub fn is_ok(&self) -> bool {
        matches!(self, Reply::Ok(_))
    }
}

impl fmt::Display for Reply {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Reply::Ok(d) if d.is_empty() => f.write_str("OK"),
            Reply::Ok(d) => write!(f, "OK {d}"),
            Reply::Err(code, text) => write!(f, "ERR {code} {text}"),
        }
    }
}

fn usage(text: &str) -> Reply {
    Reply::err(400, format!("usage: {text}"))
}

fn module_arg(s: &str) -> Result<ModuleId, Reply> {
    s.parse::<ModuleId>()
        .map_err(|_| Reply::err(400, format!("bad module id `{s}`")))
}

fn app_arg(s: &str) -> Result<AppName, Reply> {
    AppName::new(s).map_err(|_| Reply::err(400, format!("bad app name `{s}`")))
}

fn file_arg(s: &str) -> Result<String, Reply> {
    if valid_file_name(s) {
        Ok(s.to_string())
    } else {
        Err(Reply::err(400, format!("bad file name `{s}`")))
    }
}

/// Parses one command line. The error is the reply to send back.
pub fn parse_command(line: &str) -> Result<Command, Reply> {
    let words: Vec<&str> = line.split_ascii_whitespace().collect();
    let Some((&verb, args)) = words.split_first() else {
        return Err(Reply::err(400, "empty command"));
    };
    let cmd = match (verb, args) {
        ("REGISTER", [app]) => Command::Register(app_arg(app)?),
        ("REGISTER", _) => return Err(usage("REGISTER <app>")),
        ("UNREGISTER", []) => Command::Unregister,
        ("UNREGISTER", _) => return Err(usage("UNREGISTER")),
        ("STATE", []) => Command::State(None),
        ("STATE", [m]) => Command::State(Some(module_arg(m)?)),
        ("STATE", _) => return Err(usage("STATE [<module>]")),
        ("NEIGHBORS", []) => Command::Neighbors,
        ("NEIGHBORS", _) => return Err(usage("NEIGHBORS")),
        ("SEND", [m, app, data]) => Command::Send {
            module: module_arg(m)?,
            app: app_arg(app)?,
            data: b64_decode(data)?,
        },
        ("SEND", _) => return Err(usage("SEND <module> <app> <base64>")),
        ("BCAST", [data]) => Command::Bcast(b64_decode(data)?),
        ("BCAST", _) => return Err(usage("BCAST <base64>")),
        ("PUTFILE", [m, name, data]) => Command::PutFile {
            module: module_arg(m)?,
            name: file_arg(name)?,
            data: b64_decode(data)?,
        },
        ("PUTFILE", _) => return Err(usage("PUTFILE <module> <name> <base64>")),
        ("EXEC", [m, data]) => {
            let module = module_arg(m)?;
            let bytes = b64_decode(data)?;
            let line = String::from_utf8(bytes)
                .map_err(|_| Reply::err(400, "command line is not UTF-8"))?;
            if line.contains(['\n', '\r']) {
                return Err(Reply::err(400, "command line must be a single line"));
            }
            Command::Exec { module, line }
        }
        ("EXEC", _) => return Err(usage("EXEC <module> <base64-command>")),
        ("START", [m, name]) => Command::Start {
            module: module_arg(m)?,
            name: file_arg(name)?,
        },
        ("START", _) => return Err(usage("START <module> <name>")),
        ("VERSION", []) => Command::Version,
        ("VERSION", _) => return Err(usage("VERSION")),
        ("ID", []) => Command::Id,
        ("ID", _) => return Err(usage("ID")),
        (other, _) => return Err(Reply::err(400, format!("unknown verb `{other}`"))),
    };
    Ok(cmd)
}
