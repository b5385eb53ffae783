//! Client side of the data access primitives for both DAP families. Every
//! primitive is one broadcast and one quorum collect, and returns the
//! successor pointers piggybacked on the replies.

use std::collections::BTreeMap;

use thiserror::Error;

use crate::codec::{self, CodecError, CodecParams};
use crate::history::DapOp;
use crate::message::{Reply, Request, Target};
use crate::netsim::Ctx;
use crate::types::{CodedElement, ConfigEntry, DapKind, SequenceConflict, Tag, TaggedValue, Value};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ProtocolError {
    #[error("no tag appears in {k} lists of configuration {config}")]
    NoDecodableTag { config: u64, k: usize },
    #[error("decoding tag {tag} in configuration {config}: {source}")]
    Decode { config: u64, tag: Tag, source: CodecError },
    #[error(transparent)]
    Conflict(#[from] SequenceConflict),
    #[error("cannot store bottom")]
    PutBottom,
    #[error("unexpected reply {0}")]
    UnexpectedReply(String),
}

/// Non-empty successor pointers collected from one quorum of replies.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct CsSet(Vec<ConfigEntry>);

impl CsSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, entry: Option<&ConfigEntry>) {
        if let Some(e) = entry {
            if !self.0.contains(e) {
                self.0.push(e.clone());
            }
        }
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &ConfigEntry> {
        self.0.iter()
    }

    /// The finalized entry with the highest id, else the highest pending one.
    pub fn pick(&self) -> Option<&ConfigEntry> {
        let finalized = self.0.iter().filter(|e| e.is_finalized()).max_by_key(|e| e.id());
        finalized.or_else(|| self.0.iter().max_by_key(|e| e.id()))
    }
}

impl FromIterator<ConfigEntry> for CsSet {
    fn from_iter<I: IntoIterator<Item = ConfigEntry>>(iter: I) -> Self {
        let mut cs = CsSet::new();
        for e in iter {
            cs.insert(Some(&e));
        }
        cs
    }
}

fn attrs(target: &Target) -> [(&'static str, String); 2] {
    [("object", target.object.to_string()), ("config", target.cfg.id.to_string())]
}

fn broadcast(target: &Target, make: impl Fn(usize) -> Request) -> Vec<(crate::types::ServerId, Request)> {
    target.cfg.servers.iter().enumerate().map(|(i, s)| (*s, make(i))).collect()
}

fn collect_cs(replies: &[(crate::types::ServerId, Reply)]) -> CsSet {
    let mut cs = CsSet::new();
    for (_, r) in replies {
        cs.insert(r.next().and_then(Option::as_ref));
    }
    cs
}

pub async fn get_tag(ctx: &Ctx, target: &Target) -> Result<(Tag, CsSet), ProtocolError> {
    ctx.in_span("get-tag", &attrs(target), async {
        let rec = ctx.begin_dap(DapOp::GetTag, &target.scope, &target.object, target.cfg.id, None);
        let reqs = broadcast(target, |_| Request::QueryTag(target.clone()));
        let replies = ctx.quorum(&target.cfg, reqs, target.cfg.quorum_size()).await;
        let mut max = Tag::INITIAL;
        for (_, r) in &replies {
            match r {
                Reply::Tag { tag, .. } => max = max.max(*tag),
                other => return Err(ProtocolError::UnexpectedReply(format!("{other:?}"))),
            }
        }
        ctx.end_dap(rec, max, None);
        Ok((max, collect_cs(&replies)))
    })
    .await
}

pub async fn get_data(ctx: &Ctx, target: &Target) -> Result<(TaggedValue, CsSet), ProtocolError> {
    ctx.in_span("get-data", &attrs(target), async {
        let rec = ctx.begin_dap(DapOp::GetData, &target.scope, &target.object, target.cfg.id, None);
        let reqs = broadcast(target, |_| Request::QueryList(target.clone()));
        let replies = ctx.quorum(&target.cfg, reqs, target.cfg.quorum_size()).await;
        let mut lists = Vec::with_capacity(replies.len());
        for (_, r) in &replies {
            match r {
                Reply::List { list, .. } => lists.push(list.as_slice()),
                other => return Err(ProtocolError::UnexpectedReply(format!("{other:?}"))),
            }
        }
        let tv = match target.cfg.dap {
            DapKind::Abd => abd_select(&lists),
            DapKind::Ec => ec_select(ctx, target, &lists).await?,
        };
        ctx.end_dap(rec, tv.tag, Some(tv.value.digest()));
        Ok((tv, collect_cs(&replies)))
    })
    .await
}

/// Highest tag over the replies, with its value if any copy is intact.
fn abd_select(lists: &[&[CodedElement]]) -> TaggedValue {
    let mut best = TaggedValue { tag: Tag::INITIAL, value: Value::Bottom };
    let mut seen = false;
    for e in lists.iter().flat_map(|l| l.iter()) {
        if !seen || e.tag > best.tag || (e.tag == best.tag && best.value.is_bottom()) {
            best = TaggedValue { tag: e.tag, value: e.fragment.clone() };
            seen = true;
        }
    }
    best
}

/// Tags present in at least `k` lists (⊥ entries included); the highest is
/// decoded unless one of its fragments is ⊥.
pub fn decodable_tag(lists: &[&[CodedElement]], k: usize) -> Option<Tag> {
    let mut counts: BTreeMap<Tag, usize> = BTreeMap::new();
    for list in lists {
        let mut tags: Vec<Tag> = list.iter().map(|e| e.tag).collect();
        tags.dedup();
        for t in tags {
            *counts.entry(t).or_default() += 1;
        }
    }
    counts.into_iter().rev().find(|(_, c)| *c >= k).map(|(t, _)| t)
}

async fn ec_select(ctx: &Ctx, target: &Target, lists: &[&[CodedElement]]) -> Result<TaggedValue, ProtocolError> {
    let cfg = &target.cfg;
    let tag = decodable_tag(lists, cfg.k).ok_or(ProtocolError::NoDecodableTag { config: cfg.id, k: cfg.k })?;
    let fragments: Vec<CodedElement> =
        lists.iter().flat_map(|l| l.iter()).filter(|e| e.tag == tag).cloned().collect();
    if fragments.iter().any(|e| e.fragment.is_bottom()) {
        return Ok(TaggedValue { tag, value: Value::Bottom });
    }
    let params = CodecParams::new(cfg.n(), cfg.k).expect("validated configuration");
    let value = ctx
        .in_span("decode", &attrs(target), async { codec::decode(params, &fragments) })
        .await
        .map_err(|source| ProtocolError::Decode { config: cfg.id, tag, source })?;
    Ok(TaggedValue { tag, value: Value::Bytes(value) })
}

pub async fn put_data(ctx: &Ctx, target: &Target, tv: &TaggedValue) -> Result<CsSet, ProtocolError> {
    let Value::Bytes(bytes) = &tv.value else { return Err(ProtocolError::PutBottom) };
    ctx.in_span("put-data", &attrs(target), async {
        let rec = ctx.begin_dap(DapOp::PutData, &target.scope, &target.object, target.cfg.id, Some((tv.tag, tv.value.digest())));
        let cfg = &target.cfg;
        let fragments: Vec<Value> = match cfg.dap {
            DapKind::Abd => vec![tv.value.clone(); cfg.n()],
            DapKind::Ec => {
                let params = CodecParams::new(cfg.n(), cfg.k).expect("validated configuration");
                let raw = ctx
                    .in_span("encode", &attrs(target), async { codec::encode_raw(params, bytes) })
                    .await
                    .expect("validated parameters encode");
                raw.into_iter().map(Value::Bytes).collect()
            }
        };
        let reqs =
            broadcast(target, |i| Request::PutData { target: target.clone(), tag: tv.tag, fragment: fragments[i].clone() });
        let replies = ctx.quorum(cfg, reqs, cfg.quorum_size()).await;
        ctx.end_dap(rec, tv.tag, Some(tv.value.digest()));
        Ok(collect_cs(&replies))
    })
    .await
}

/// One READ-CONFIG round: the successor pointers of a quorum.
pub async fn get_next_config(ctx: &Ctx, target: &Target) -> CsSet {
    ctx.in_span("get-next-config", &[("config", target.cfg.id.to_string())], async {
        let reqs = broadcast(target, |_| Request::ReadConfig(target.clone()));
        let replies = ctx.quorum(&target.cfg, reqs, target.cfg.quorum_size()).await;
        collect_cs(&replies)
    })
    .await
}

/// Stores `entry` as the successor pointer at a quorum of `target.cfg`.
pub async fn put_config(ctx: &Ctx, target: &Target, entry: &ConfigEntry) {
    let attrs = [("config", target.cfg.id.to_string()), ("entry", entry.to_string())];
    ctx.in_span("put-config", &attrs, async {
        let reqs = broadcast(target, |_| Request::WriteConfig { target: target.clone(), entry: entry.clone() });
        ctx.quorum(&target.cfg, reqs, target.cfg.quorum_size()).await;
    })
    .await
}

/// Redirects a quorum of `target.cfg` to `entry` and blanks their data.
pub async fn gc_config(ctx: &Ctx, target: &Target, entry: &ConfigEntry) {
    let attrs = [("config", target.cfg.id.to_string()), ("entry", entry.to_string())];
    ctx.in_span("gc-config", &attrs, async {
        let reqs = broadcast(target, |_| Request::GcConfig { target: target.clone(), entry: entry.clone() });
        ctx.quorum(&target.cfg, reqs, target.cfg.quorum_size()).await;
    })
    .await
}
