//! Server response protocols for both DAP families.
//!
//! One server process hosts many logical states: object lists are keyed by
//! `(scope, configuration, object)` and successor pointers by
//! `(scope, configuration)`. Unknown slots are created lazily at `(t0, v0)`.

use std::collections::BTreeMap;

use crate::codec::{self, CodecParams};
use crate::history::ServerEvent;
use crate::message::{Reply, Request, Target};
use crate::types::{
    next_id, CodedElement, ConfigEntry, Configuration, DapKind, NextConfig, ObjectId, ScopeId, ServerId, Status,
    Tag, Value,
};

#[derive(Clone, Debug, Default, PartialEq, Eq)]
struct ScopeState {
    next: NextConfig,
    collected: bool,
}

/// Per-object list of `(tag, fragment-or-⊥)` pairs. ABD keeps one pair.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ObjectState {
    list: BTreeMap<Tag, Value>,
}

impl ObjectState {
    pub fn len(&self) -> usize {
        self.list.len()
    }

    pub fn is_empty(&self) -> bool {
        self.list.is_empty()
    }

    pub fn max_tag(&self) -> Tag {
        self.list.keys().next_back().copied().unwrap_or(Tag::INITIAL)
    }

    pub fn has_bottom(&self) -> bool {
        self.list.values().any(Value::is_bottom)
    }

    pub fn pairs(&self) -> impl Iterator<Item = (&Tag, &Value)> {
        self.list.iter()
    }
}

pub fn list_bound(cfg: &Configuration) -> usize {
    match cfg.dap {
        DapKind::Ec => cfg.delta + 1,
        DapKind::Abd => 1,
    }
}

#[derive(Debug)]
pub struct ServerNode {
    id: ServerId,
    scopes: BTreeMap<(ScopeId, u64), ScopeState>,
    objects: BTreeMap<(ScopeId, u64, ObjectId), ObjectState>,
}

impl ServerNode {
    pub fn new(id: ServerId) -> Self {
        ServerNode { id, scopes: BTreeMap::new(), objects: BTreeMap::new() }
    }

    pub fn id(&self) -> ServerId {
        self.id
    }

    pub fn next_config(&self, scope: &ScopeId, cfg: u64) -> NextConfig {
        self.scopes.get(&(scope.clone(), cfg)).and_then(|s| s.next.clone())
    }

    pub fn object(&self, target: &Target) -> Option<&ObjectState> {
        self.objects.get(&(target.scope.clone(), target.cfg.id, target.object.clone()))
    }

    /// Runs one handler and reports the resulting slot state.
    pub fn handle(&mut self, tick: u64, req: &Request) -> (Reply, ServerEvent) {
        let reply = match req {
            Request::QueryTag(t) => self.on_query_tag(t),
            Request::QueryList(t) => self.on_query_list(t),
            Request::PutData { target, tag, fragment } => self.on_put_data(target, *tag, fragment.clone()),
            Request::ReadConfig(t) => self.on_read_config(t),
            Request::WriteConfig { target, entry } => self.on_write_config(target, entry.clone()),
            Request::GcConfig { target, entry } => self.on_gc_config(target, entry.clone()),
            Request::Propose { .. } => panic!("{} received a consensus proposal", self.id),
        };
        let target = match req {
            Request::QueryTag(t) | Request::QueryList(t) | Request::ReadConfig(t) => t,
            Request::PutData { target, .. } | Request::WriteConfig { target, .. } | Request::GcConfig { target, .. } => {
                target
            }
            Request::Propose { .. } => unreachable!(),
        };
        let data_request = matches!(req, Request::QueryTag(_) | Request::QueryList(_) | Request::PutData { .. });
        let next = self.next_config(&target.scope, target.cfg.id);
        let event = ServerEvent {
            server: self.id,
            tick,
            request: req.kind().to_string(),
            scope: target.scope.clone(),
            config: target.cfg.id,
            object: data_request.then(|| target.object.clone()),
            next: next_id(&next),
            next_status: next.as_ref().map(|e| e.status),
            list_len: if data_request { self.object(target).map_or(0, ObjectState::len) } else { 0 },
            list_bound: list_bound(&target.cfg),
        };
        (reply, event)
    }

    fn scope_state(&mut self, target: &Target) -> &mut ScopeState {
        self.scopes.entry((target.scope.clone(), target.cfg.id)).or_default()
    }

    fn object_state(&mut self, target: &Target) -> &mut ObjectState {
        let collected = self.scopes.get(&(target.scope.clone(), target.cfg.id)).is_some_and(|s| s.collected);
        let id = self.id;
        self.objects
            .entry((target.scope.clone(), target.cfg.id, target.object.clone()))
            .or_insert_with(|| initial_state(id, &target.cfg, collected))
    }

    fn position(&self, cfg: &Configuration) -> usize {
        cfg.position(self.id).unwrap_or_else(|| panic!("{} is not a member of configuration {}", self.id, cfg.id))
    }

    pub fn on_query_tag(&mut self, target: &Target) -> Reply {
        let tag = self.object_state(target).max_tag();
        Reply::Tag { tag, next: self.scope_state(target).next.clone() }
    }

    /// With a finalized successor the data is suppressed: every fragment in
    /// the reply is `⊥`.
    pub fn on_query_list(&mut self, target: &Target) -> Reply {
        let origin_index = self.position(&target.cfg);
        let next = self.scope_state(target).next.clone();
        let suppress = next.as_ref().is_some_and(ConfigEntry::is_finalized);
        let list = self
            .object_state(target)
            .list
            .iter()
            .map(|(tag, v)| CodedElement {
                tag: *tag,
                fragment: if suppress { Value::Bottom } else { v.clone() },
                origin_index,
            })
            .collect();
        Reply::List { list, next }
    }

    /// A garbage-collected list (one holding `⊥`) absorbs writes unchanged.
    pub fn on_put_data(&mut self, target: &Target, tag: Tag, fragment: Value) -> Reply {
        let dap = target.cfg.dap;
        let bound = list_bound(&target.cfg);
        let state = self.object_state(target);
        if !state.has_bottom() {
            match dap {
                DapKind::Ec => {
                    state.list.entry(tag).or_insert(fragment);
                    if state.list.len() > bound {
                        // Drops every pair with the minimum tag, no tombstone.
                        state.list.pop_first();
                    }
                }
                DapKind::Abd => {
                    if tag > state.max_tag() {
                        state.list.clear();
                        state.list.insert(tag, fragment);
                    }
                }
            }
        }
        Reply::PutAck { next: self.scope_state(target).next.clone() }
    }

    pub fn on_read_config(&mut self, target: &Target) -> Reply {
        Reply::Next { next: self.scope_state(target).next.clone() }
    }

    /// Adopts `incoming` unless the current pointer is finalized and at
    /// least as high.
    pub fn on_write_config(&mut self, target: &Target, incoming: ConfigEntry) -> Reply {
        let state = self.scope_state(target);
        let adopt = match &state.next {
            None => true,
            Some(cur) => cur.status == Status::P || incoming.id() > cur.id(),
        };
        if adopt {
            state.next = Some(incoming);
        }
        Reply::Ack
    }

    /// Points the slot at a newer finalized configuration and blanks every
    /// stored fragment of the scope in this configuration.
    pub fn on_gc_config(&mut self, target: &Target, incoming: ConfigEntry) -> Reply {
        let state = self.scope_state(target);
        if next_id(&state.next).is_none_or(|cur| incoming.id() > cur) {
            state.next = Some(incoming);
        }
        state.collected = true;
        let cfg = target.cfg.id;
        for ((scope, c, _), obj) in self.objects.iter_mut() {
            if *scope == target.scope && *c == cfg {
                for v in obj.list.values_mut() {
                    *v = Value::Bottom;
                }
            }
        }
        Reply::Ack
    }
}

fn initial_state(server: ServerId, cfg: &Configuration, collected: bool) -> ObjectState {
    let value = if collected {
        Value::Bottom
    } else {
        match cfg.dap {
            DapKind::Abd => Value::initial(),
            DapKind::Ec => {
                let index = cfg.position(server).expect("member of configuration");
                let params = CodecParams::new(cfg.n(), cfg.k).expect("validated configuration");
                let mut frags = codec::encode_raw(params, &[]).expect("initial value encodes");
                Value::Bytes(frags.swap_remove(index))
            }
        }
    };
    let mut list = BTreeMap::new();
    list.insert(Tag::INITIAL, value);
    ObjectState { list }
}
