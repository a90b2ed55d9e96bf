//! Service messages exchanged between neighbouring nodes.
//!
//! Layout of an encoded message (see `docs/protocol.md` for each body):
//!
//! ```text
//! [kind:1][src path len:1][src path][dst app len:1][dst app][body...]
//! ```
//!
//! A zero-length destination app means "none".

use thiserror::Error;

use super::ids::{AppName, ModuleId};
use crate::service::phys::ModulePhysState;
use crate::wire::{Reader, WireError, Writer};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum MessageKind {
    Hello,
    AppData,
    Bcast,
    StateReq,
    StateRep,
    VersionAnnounce,
    CodeChunk,
    FileChunk,
    Exec,
    Start,
    IdAssign,
}

impl MessageKind {
    pub const ALL: [MessageKind; 11] = [
        MessageKind::Hello,
        MessageKind::AppData,
        MessageKind::Bcast,
        MessageKind::StateReq,
        MessageKind::StateRep,
        MessageKind::VersionAnnounce,
        MessageKind::CodeChunk,
        MessageKind::FileChunk,
        MessageKind::Exec,
        MessageKind::Start,
        MessageKind::IdAssign,
    ];

    pub fn code(self) -> u8 {
        self as u8 + 1
    }

    pub fn from_code(c: u8) -> Option<Self> {
        c.checked_sub(1)
            .and_then(|i| MessageKind::ALL.get(i as usize).copied())
    }

    pub fn name(self) -> &'static str {
        match self {
            MessageKind::Hello => "HELLO",
            MessageKind::AppData => "APPDATA",
            MessageKind::Bcast => "BCAST",
            MessageKind::StateReq => "STATE_REQ",
            MessageKind::StateRep => "STATE_REP",
            MessageKind::VersionAnnounce => "VERSION_ANNOUNCE",
            MessageKind::CodeChunk => "CODE_CHUNK",
            MessageKind::FileChunk => "FILE_CHUNK",
            MessageKind::Exec => "EXEC",
            MessageKind::Start => "START",
            MessageKind::IdAssign => "ID_ASSIGN",
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ProtocolError {
    #[error("unknown message kind {0}")]
    UnknownKind(u8),
    #[error("{kind} {detail}")]
    Header { kind: &'static str, detail: &'static str },
    #[error("malformed {kind} body: {source}")]
    Body {
        kind: &'static str,
        #[source]
        source: WireError,
    },
    #[error("malformed header: {0}")]
    Wire(#[from] WireError),
}

/// What an APPDATA message carries.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AppDataFlag {
    Data,
    /// Positive delivery receipt for request `req_id`.
    Receipt,
    /// The destination app is not registered.
    UnknownApp,
}

impl AppDataFlag {
    fn code(self) -> u8 {
        match self {
            AppDataFlag::Data => 0,
            AppDataFlag::Receipt => 1,
            AppDataFlag::UnknownApp => 2,
        }
    }

    fn from_code(c: u8) -> Option<Self> {
        match c {
            0 => Some(AppDataFlag::Data),
            1 => Some(AppDataFlag::Receipt),
            2 => Some(AppDataFlag::UnknownApp),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Chunk {
    pub transfer_id: u16,
    pub index: u16,
    pub total: u16,
    pub data: Vec<u8>,
}

/// Decoded message body.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Body {
    Hello {
        version: u32,
    },
    AppData {
        flag: AppDataFlag,
        req_id: u16,
        src_app: AppName,
        data: Vec<u8>,
    },
    Bcast {
        src_app: AppName,
        data: Vec<u8>,
    },
    StateReq {
        req_id: u16,
    },
    StateRep {
        req_id: u16,
        state: ModulePhysState,
    },
    VersionAnnounce {
        version: u32,
    },
    CodeChunk(Chunk),
    FileChunk {
        name: String,
        chunk: Chunk,
    },
    Exec {
        reply: bool,
        req_id: u16,
        text: String,
    },
    Start {
        reply: bool,
        req_id: u16,
        text: String,
    },
    IdAssign {
        transfer_id: u16,
        version: u32,
        id: ModuleId,
    },
}

impl Body {
    pub fn kind(&self) -> MessageKind {
        match self {
            Body::Hello { .. } => MessageKind::Hello,
            Body::AppData { .. } => MessageKind::AppData,
            Body::Bcast { .. } => MessageKind::Bcast,
            Body::StateReq { .. } => MessageKind::StateReq,
            Body::StateRep { .. } => MessageKind::StateRep,
            Body::VersionAnnounce { .. } => MessageKind::VersionAnnounce,
            Body::CodeChunk(_) => MessageKind::CodeChunk,
            Body::FileChunk { .. } => MessageKind::FileChunk,
            Body::Exec { .. } => MessageKind::Exec,
            Body::Start { .. } => MessageKind::Start,
            Body::IdAssign { .. } => MessageKind::IdAssign,
        }
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut w = Writer::new();
        match self {
            Body::Hello { version } | Body::VersionAnnounce { version } => {
                w.u32(*version);
            }
            Body::AppData {
                flag,
                req_id,
                src_app,
                data,
            } => {
                w.u8(flag.code()).u16(*req_id).str8(src_app.as_str()).raw(data);
            }
            Body::Bcast { src_app, data } => {
                w.str8(src_app.as_str()).raw(data);
            }
            Body::StateReq { req_id } => {
                w.u16(*req_id);
            }
            Body::StateRep { req_id, state } => {
                w.u16(*req_id);
                state.encode(&mut w);
            }
            Body::CodeChunk(chunk) => encode_chunk(&mut w, chunk),
            Body::FileChunk { name, chunk } => {
                w.u16(chunk.transfer_id)
                    .u16(chunk.index)
                    .u16(chunk.total)
                    .str8(name)
                    .raw(&chunk.data);
            }
            Body::Exec {
                reply,
                req_id,
                text,
            }
            | Body::Start {
                reply,
                req_id,
                text,
            } => {
                w.u8(*reply as u8).u16(*req_id).raw(text.as_bytes());
            }
            Body::IdAssign {
                transfer_id,
                version,
                id,
            } => {
                w.u16(*transfer_id).u32(*version).bytes8(id.path());
            }
        }
        w.into_bytes()
    }

    pub fn decode(kind: MessageKind, body: &[u8]) -> Result<Body, ProtocolError> {
        let wrap = |source| ProtocolError::Body {
            kind: kind.name(),
            source,
        };
        decode_body(kind, body).map_err(wrap)
    }
}

fn encode_chunk(w: &mut Writer, c: &Chunk) {
    w.u16(c.transfer_id).u16(c.index).u16(c.total).raw(&c.data);
}

fn app_name(r: &mut Reader<'_>, field: &'static str) -> Result<AppName, WireError> {
    let s = r.str8(field)?;
    AppName::new(s).map_err(|e| WireError::Invalid {
        field,
        detail: e.to_string(),
    })
}

fn utf8_rest(r: &mut Reader<'_>, field: &'static str) -> Result<String, WireError> {
    String::from_utf8(r.rest().to_vec()).map_err(|_| WireError::Utf8 { field })
}

fn flag_bool(r: &mut Reader<'_>) -> Result<bool, WireError> {
    match r.u8("reply flag")? {
        0 => Ok(false),
        1 => Ok(true),
        c => Err(WireError::Invalid {
            field: "reply flag",
            detail: format!("code {c}"),
        }),
    }
}

fn check_chunk(c: &Chunk) -> Result<(), WireError> {
    if c.total == 0 || c.index >= c.total {
        return Err(WireError::Invalid {
            field: "chunk index",
            detail: format!("{} of {}", c.index, c.total),
        });
    }
    Ok(())
}

fn decode_body(kind: MessageKind, body: &[u8]) -> Result<Body, WireError> {
    let mut r = Reader::new(body);
    let out = match kind {
        MessageKind::Hello => Body::Hello {
            version: r.u32("version")?,
        },
        MessageKind::VersionAnnounce => Body::VersionAnnounce {
            version: r.u32("version")?,
        },
        MessageKind::AppData => {
            let code = r.u8("flag")?;
            let flag = AppDataFlag::from_code(code).ok_or(WireError::Invalid {
                field: "flag",
                detail: format!("code {code}"),
            })?;
            Body::AppData {
                flag,
                req_id: r.u16("request id")?,
                src_app: app_name(&mut r, "source app")?,
                data: r.rest().to_vec(),
            }
        }
        MessageKind::Bcast => Body::Bcast {
            src_app: app_name(&mut r, "source app")?,
            data: r.rest().to_vec(),
        },
        MessageKind::StateReq => Body::StateReq {
            req_id: r.u16("request id")?,
        },
        MessageKind::StateRep => Body::StateRep {
            req_id: r.u16("request id")?,
            state: ModulePhysState::decode(&mut r)?,
        },
        MessageKind::CodeChunk => {
            let chunk = Chunk {
                transfer_id: r.u16("transfer id")?,
                index: r.u16("chunk index")?,
                total: r.u16("total chunks")?,
                data: r.rest().to_vec(),
            };
            check_chunk(&chunk)?;
            Body::CodeChunk(chunk)
        }
        MessageKind::FileChunk => {
            let transfer_id = r.u16("transfer id")?;
            let index = r.u16("chunk index")?;
            let total = r.u16("total chunks")?;
            let name = r.str8("file name")?.to_string();
            let chunk = Chunk {
                transfer_id,
                index,
                total,
                data: r.rest().to_vec(),
            };
            check_chunk(&chunk)?;
            Body::FileChunk { name, chunk }
        }
        MessageKind::Exec => Body::Exec {
            reply: flag_bool(&mut r)?,
            req_id: r.u16("request id")?,
            text: utf8_rest(&mut r, "command text")?,
        },
        MessageKind::Start => Body::Start {
            reply: flag_bool(&mut r)?,
            req_id: r.u16("request id")?,
            text: utf8_rest(&mut r, "start text")?,
        },
        MessageKind::IdAssign => Body::IdAssign {
            transfer_id: r.u16("transfer id")?,
            version: r.u32("version")?,
            id: ModuleId::from_path(r.bytes8("module id")?.to_vec()),
        },
    };
    r.finish()?;
    Ok(out)
}

/// A typed module-to-module message with its body still encoded.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ServiceMessage {
    pub kind: MessageKind,
    pub src_module: ModuleId,
    pub dst_app: Option<AppName>,
    pub body: Vec<u8>,
}

impl ServiceMessage {
    pub fn new(src_module: ModuleId, dst_app: Option<AppName>, body: &Body) -> Self {
        ServiceMessage {
            kind: body.kind(),
            src_module,
            dst_app,
            body: body.encode(),
        }
    }

    pub fn decode_body(&self) -> Result<Body, ProtocolError> {
        Body::decode(self.kind, &self.body)
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut w = Writer::new();
        w.u8(self.kind.code())
            .bytes8(self.src_module.path())
            .str8(self.dst_app.as_ref().map(AppName::as_str).unwrap_or(""))
            .raw(&self.body);
        w.into_bytes()
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, ProtocolError> {
        let mut r = Reader::new(bytes);
        let code = r.u8("kind")?;
        let kind = MessageKind::from_code(code).ok_or(ProtocolError::UnknownKind(code))?;
        let src_module = ModuleId::from_path(r.bytes8("source module")?.to_vec());
        let dst = r.str8("destination app")?;
        let dst_app = if dst.is_empty() {
            None
        } else {
            Some(AppName::new(dst).map_err(|e| WireError::Invalid {
                field: "destination app",
                detail: e.to_string(),
            })?)
        };
        match (kind, &dst_app) {
            (MessageKind::AppData, None) => {
                return Err(ProtocolError::Header {
                    kind: kind.name(),
                    detail: "without destination app",
                })
            }
            (MessageKind::Bcast, Some(_)) => {
                return Err(ProtocolError::Header {
                    kind: kind.name(),
                    detail: "must not name a destination app",
                })
            }
            _ => {}
        }
        Ok(ServiceMessage {
            kind,
            src_module,
            dst_app,
            body: r.rest().to_vec(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::service::phys::{Axis, Direction};

    fn app(s: &str) -> AppName {
        AppName::new(s).unwrap()
    }

    fn samples() -> Vec<(Option<AppName>, Body)> {
        let mut state = ModulePhysState::new(Axis::NorthSouth).with_port(2, Direction::Up);
        state.connect(2, "w");
        let chunk = Chunk {
            transfer_id: 7,
            index: 1,
            total: 3,
            data: vec![1, 2, 3],
        };
        vec![
            (None, Body::Hello { version: 2 }),
            (
                Some(app("b")),
                Body::AppData {
                    flag: AppDataFlag::Data,
                    req_id: 9,
                    src_app: app("a"),
                    data: b"hi".to_vec(),
                },
            ),
            (
                None,
                Body::Bcast {
                    src_app: app("a"),
                    data: vec![],
                },
            ),
            (None, Body::StateReq { req_id: 1 }),
            (None, Body::StateRep { req_id: 1, state }),
            (None, Body::VersionAnnounce { version: 0 }),
            (None, Body::CodeChunk(chunk.clone())),
            (
                None,
                Body::FileChunk {
                    name: "car.role".into(),
                    chunk,
                },
            ),
            (
                None,
                Body::Exec {
                    reply: false,
                    req_id: 4,
                    text: "STATE".into(),
                },
            ),
            (
                None,
                Body::Start {
                    reply: true,
                    req_id: 4,
                    text: "OK started".into(),
                },
            ),
            (
                None,
                Body::IdAssign {
                    transfer_id: 7,
                    version: 2,
                    id: "0.3".parse().unwrap(),
                },
            ),
        ]
    }

    #[test]
    fn every_kind_roundtrips() {
        let src: ModuleId = "0.1".parse().unwrap();
        for (dst, body) in samples() {
            let msg = ServiceMessage::new(src.clone(), dst, &body);
            let back = ServiceMessage::decode(&msg.encode()).unwrap();
            assert_eq!(back, msg);
            assert_eq!(back.decode_body().unwrap(), body);
        }
    }

    #[test]
    fn kind_codes_cover_all() {
        for k in MessageKind::ALL {
            assert_eq!(MessageKind::from_code(k.code()), Some(k));
        }
        assert_eq!(MessageKind::from_code(0), None);
        assert_eq!(MessageKind::from_code(12), None);
    }

    #[test]
    fn appdata_requires_destination() {
        let body = Body::AppData {
            flag: AppDataFlag::Data,
            req_id: 0,
            src_app: app("a"),
            data: vec![],
        };
        let msg = ServiceMessage::new(ModuleId::root(), None, &body);
        assert!(matches!(
            ServiceMessage::decode(&msg.encode()),
            Err(ProtocolError::Header { .. })
        ));
        let msg = ServiceMessage::new(
            ModuleId::root(),
            Some(app("x")),
            &Body::Bcast {
                src_app: app("a"),
                data: vec![],
            },
        );
        assert!(ServiceMessage::decode(&msg.encode()).is_err());
    }

    #[test]
    fn malformed_bodies() {
        assert!(Body::decode(MessageKind::Hello, &[0, 0]).is_err());
        assert!(Body::decode(MessageKind::Hello, &[0, 0, 0, 1, 9]).is_err());
        // index >= total
        assert!(Body::decode(MessageKind::CodeChunk, &[0, 1, 0, 3, 0, 3]).is_err());
        assert!(Body::decode(MessageKind::AppData, &[7, 0, 0, 1, b'a']).is_err());
        assert!(Body::decode(MessageKind::Exec, &[0, 0, 1, 0xFF]).is_err());
        assert!(ServiceMessage::decode(&[99, 0, 0]).is_err());
        assert!(ServiceMessage::decode(&[]).is_err());
    }
}
