//! Wire payloads exchanged over the simulated transport.

use crate::types::{CodedElement, ConfigEntry, Configuration, NextConfig, ObjectId, ScopeId, Tag, Value};

/// Which object state (and which configuration's successor pointer) a
/// request addresses on the receiving server.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Target {
    pub scope: ScopeId,
    pub object: ObjectId,
    pub cfg: Configuration,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Request {
    QueryTag(Target),
    QueryList(Target),
    PutData { target: Target, tag: Tag, fragment: Value },
    ReadConfig(Target),
    WriteConfig { target: Target, entry: ConfigEntry },
    GcConfig { target: Target, entry: ConfigEntry },
    Propose { scope: ScopeId, index: u64, cfg: Configuration },
}

impl Request {
    pub fn kind(&self) -> &'static str {
        match self {
            Request::QueryTag(_) => "QUERY-TAG",
            Request::QueryList(_) => "QUERY-LIST",
            Request::PutData { .. } => "PUT-DATA",
            Request::ReadConfig(_) => "READ-CONFIG",
            Request::WriteConfig { .. } => "WRITE-CONFIG",
            Request::GcConfig { .. } => "GC-CONFIG",
            Request::Propose { .. } => "PROPOSE",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Reply {
    Tag { tag: Tag, next: NextConfig },
    List { list: Vec<CodedElement>, next: NextConfig },
    PutAck { next: NextConfig },
    Next { next: NextConfig },
    Ack,
    Decided { index: u64, cfg: Configuration },
}

impl Reply {
    /// The piggybacked successor pointer, if this reply kind carries one.
    pub fn next(&self) -> Option<&NextConfig> {
        match self {
            Reply::Tag { next, .. } | Reply::List { next, .. } | Reply::PutAck { next } | Reply::Next { next } => {
                Some(next)
            }
            Reply::Ack | Reply::Decided { .. } => None,
        }
    }
}
