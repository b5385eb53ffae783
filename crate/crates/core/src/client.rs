//! Reader, writer and reconfigurer protocols, including the traversal of the
//! configuration sequence.

use std::collections::BTreeMap;

use crate::dap::{self, CsSet, ProtocolError};
use crate::history::OpKind;
use crate::message::Target;
use crate::netsim::Ctx;
use crate::types::{
    ConfigEntry, ConfigSequence, Configuration, ObjectId, ScopeId, SequenceSnapshot, Tag, TaggedValue, Value,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Features {
    /// Learn successor pointers from DAP replies instead of separate
    /// READ-CONFIG rounds.
    pub piggyback: bool,
    /// Redirect and blank obsolete configurations after a reconfiguration.
    pub gc: bool,
    /// One configuration sequence and one reconfiguration per fragmented
    /// file instead of one per block.
    pub batching: bool,
}

impl Default for Features {
    fn default() -> Self {
        Features { piggyback: true, gc: true, batching: true }
    }
}

/// One client process. Holds a configuration sequence per scope.
pub struct Client {
    ctx: Ctx,
    c0: Configuration,
    features: Features,
    cseqs: BTreeMap<ScopeId, ConfigSequence>,
}

impl Client {
    pub fn new(ctx: Ctx, c0: Configuration, features: Features) -> Self {
        Client { ctx, c0, features, cseqs: BTreeMap::new() }
    }

    pub fn ctx(&self) -> &Ctx {
        &self.ctx
    }

    pub fn features(&self) -> Features {
        self.features
    }

    pub fn cseq(&mut self, scope: &ScopeId) -> &mut ConfigSequence {
        let c0 = &self.c0;
        self.cseqs.entry(scope.clone()).or_insert_with(|| ConfigSequence::new(c0.clone()))
    }

    pub fn snapshot(&mut self, scope: &ScopeId) -> SequenceSnapshot {
        self.cseq(scope).snapshot()
    }

    fn target(scope: &ScopeId, object: &ObjectId, cfg: &Configuration) -> Target {
        Target { scope: scope.clone(), object: object.clone(), cfg: cfg.clone() }
    }

    /// Records `pick` from `cs` in the sequence and makes it persistent at a
    /// quorum of `prev`, the configuration whose servers reported it.
    async fn find_next_config(
        &mut self,
        scope: &ScopeId,
        object: &ObjectId,
        prev: &Configuration,
        cs: &CsSet,
    ) -> Result<Option<Configuration>, ProtocolError> {
        let Some(pick) = cs.pick() else { return Ok(None) };
        debug_assert!(pick.id() > prev.id, "successor pointers lead forward");
        let held = self.cseq(scope).insert(pick.clone())?;
        dap::put_config(&self.ctx, &Self::target(scope, object, prev), &held).await;
        Ok(Some(held.cfg))
    }

    /// Follows READ-CONFIG pointers from the last finalized configuration.
    pub async fn read_config(&mut self, scope: &ScopeId, object: &ObjectId) -> Result<(), ProtocolError> {
        let ctx = self.ctx.clone();
        ctx.in_span("read-config", &[], async {
            let mut cur = self.cseq(scope).last_finalized().cfg.clone();
            loop {
                let cs = dap::get_next_config(&self.ctx, &Self::target(scope, object, &cur)).await;
                match self.find_next_config(scope, object, &cur, &cs).await? {
                    Some(next) => cur = next,
                    None => return Ok(()),
                }
            }
        })
        .await
    }

    pub async fn read(&mut self, scope: &ScopeId, object: &ObjectId) -> Result<TaggedValue, ProtocolError> {
        let ctx = self.ctx.clone();
        let (op, parent) = ctx.begin_op(OpKind::Read, scope, Some(object));
        let attrs = [("object", object.to_string()), ("client", ctx.client().to_string())];
        let res = ctx
            .in_span("read", &attrs, async {
                if self.features.piggyback {
                    self.read_piggyback(scope, object).await
                } else {
                    self.read_legacy(scope, object).await
                }
            })
            .await;
        ctx.annotate_op(op, |r| match &res {
            Ok(tv) => {
                r.tag = Some(tv.tag);
                r.value = Some(tv.value.digest());
            }
            Err(e) => r.error = Some(e.to_string()),
        });
        let snap = self.snapshot(scope);
        ctx.end_op(op, parent, snap);
        res
    }

    pub async fn write(&mut self, scope: &ScopeId, object: &ObjectId, value: Vec<u8>) -> Result<Tag, ProtocolError> {
        let ctx = self.ctx.clone();
        let (op, parent) = ctx.begin_op(OpKind::Write, scope, Some(object));
        let digest = Value::Bytes(value.clone()).digest();
        ctx.annotate_op(op, |r| r.value = Some(digest));
        let attrs = [("object", object.to_string()), ("client", ctx.client().to_string())];
        let res: Result<Tag, ProtocolError> = ctx
            .in_span("write", &attrs, async {
                let max = if self.features.piggyback {
                    self.max_tag_piggyback(scope, object).await?
                } else {
                    self.max_tag_legacy(scope, object).await?
                };
                let tv = TaggedValue { tag: max.successor(ctx.client().writer_id()), value: Value::Bytes(value) };
                ctx.annotate_op(op, |r| r.tag = Some(tv.tag));
                if self.features.piggyback {
                    self.propagate_piggyback(scope, object, &tv, "write.phase2").await?;
                } else {
                    self.propagate_legacy(scope, object, &tv, "write.phase2").await?;
                }
                Ok(tv.tag)
            })
            .await;
        if let Err(e) = &res {
            ctx.annotate_op(op, |r| r.error = Some(e.to_string()));
        }
        let snap = self.snapshot(scope);
        ctx.end_op(op, parent, snap);
        res
    }

    async fn read_piggyback(&mut self, scope: &ScopeId, object: &ObjectId) -> Result<TaggedValue, ProtocolError> {
        let ctx = self.ctx.clone();
        let (best, max_tag) = ctx
            .in_span("read.phase1", &[], async {
                let mut cur = self.cseq(scope).last_finalized().cfg.clone();
                let mut best: Option<TaggedValue> = None;
                let mut max_tag = Tag::INITIAL;
                loop {
                    let (tv, cs) = dap::get_data(&self.ctx, &Self::target(scope, object, &cur)).await?;
                    max_tag = max_tag.max(tv.tag);
                    if !tv.value.is_bottom() && best.as_ref().is_none_or(|b| tv.tag > b.tag) {
                        best = Some(tv);
                    }
                    match self.find_next_config(scope, object, &cur, &cs).await? {
                        Some(next) => cur = next,
                        None => break,
                    }
                }
                Ok::<_, ProtocolError>((best, max_tag))
            })
            .await?;
        let Some(best) = best else {
            // Every configuration answered ⊥; nothing can be propagated.
            return Ok(TaggedValue { tag: max_tag, value: Value::Bottom });
        };
        self.propagate_piggyback(scope, object, &best, "read.phase2").await?;
        Ok(best)
    }

    async fn max_tag_piggyback(&mut self, scope: &ScopeId, object: &ObjectId) -> Result<Tag, ProtocolError> {
        let ctx = self.ctx.clone();
        ctx.in_span("write.phase1", &[], async {
            let mut cur = self.cseq(scope).last_finalized().cfg.clone();
            let mut max = Tag::INITIAL;
            loop {
                let (tag, cs) = dap::get_tag(&self.ctx, &Self::target(scope, object, &cur)).await?;
                max = max.max(tag);
                match self.find_next_config(scope, object, &cur, &cs).await? {
                    Some(next) => cur = next,
                    None => return Ok(max),
                }
            }
        })
        .await
    }

    /// Puts `tv` into the last known configuration and every successor
    /// discovered on the way.
    async fn propagate_piggyback(
        &mut self,
        scope: &ScopeId,
        object: &ObjectId,
        tv: &TaggedValue,
        span: &str,
    ) -> Result<(), ProtocolError> {
        let ctx = self.ctx.clone();
        ctx.in_span(span, &[], async {
            let mut cur = self.cseq(scope).last().cfg.clone();
            loop {
                let cs = dap::put_data(&self.ctx, &Self::target(scope, object, &cur), tv).await?;
                match self.find_next_config(scope, object, &cur, &cs).await? {
                    Some(next) => cur = next,
                    None => return Ok(()),
                }
            }
        })
        .await
    }

    fn live_indices(&mut self, scope: &ScopeId) -> Vec<(u64, Configuration)> {
        let seq = self.cseq(scope);
        let mu = seq.mu();
        seq.iter().filter(|(i, _)| *i >= mu).map(|(i, e)| (i, e.cfg.clone())).collect()
    }

    async fn read_legacy(&mut self, scope: &ScopeId, object: &ObjectId) -> Result<TaggedValue, ProtocolError> {
        self.read_config(scope, object).await?;
        let ctx = self.ctx.clone();
        let (best, max_tag) = ctx
            .in_span("read.phase1", &[], async {
                let mut best: Option<TaggedValue> = None;
                let mut max_tag = Tag::INITIAL;
                for (_, cfg) in self.live_indices(scope) {
                    let (tv, _) = dap::get_data(&self.ctx, &Self::target(scope, object, &cfg)).await?;
                    max_tag = max_tag.max(tv.tag);
                    if !tv.value.is_bottom() && best.as_ref().is_none_or(|b| tv.tag > b.tag) {
                        best = Some(tv);
                    }
                }
                Ok::<_, ProtocolError>((best, max_tag))
            })
            .await?;
        let Some(best) = best else {
            return Ok(TaggedValue { tag: max_tag, value: Value::Bottom });
        };
        self.propagate_legacy(scope, object, &best, "read.phase2").await?;
        Ok(best)
    }

    async fn max_tag_legacy(&mut self, scope: &ScopeId, object: &ObjectId) -> Result<Tag, ProtocolError> {
        self.read_config(scope, object).await?;
        let ctx = self.ctx.clone();
        ctx.in_span("write.phase1", &[], async {
            let mut max = Tag::INITIAL;
            for (_, cfg) in self.live_indices(scope) {
                let (tag, _) = dap::get_tag(&self.ctx, &Self::target(scope, object, &cfg)).await?;
                max = max.max(tag);
            }
            Ok(max)
        })
        .await
    }

    /// Puts into the last configuration until a READ-CONFIG traversal finds
    /// no newer one.
    async fn propagate_legacy(
        &mut self,
        scope: &ScopeId,
        object: &ObjectId,
        tv: &TaggedValue,
        span: &str,
    ) -> Result<(), ProtocolError> {
        let ctx = self.ctx.clone();
        ctx.in_span(span, &[], async {
            loop {
                let lambda = self.cseq(scope).lambda();
                let cur = self.cseq(scope).last().cfg.clone();
                dap::put_data(&self.ctx, &Self::target(scope, object, &cur), tv).await?;
                self.read_config(scope, object).await?;
                if self.cseq(scope).lambda() == lambda {
                    return Ok(());
                }
            }
        })
        .await
    }

    /// Installs `cfg` as the next configuration of `scope` and moves the
    /// latest value of every object in `domain` into it. Returns the index
    /// the configuration was installed at.
    pub async fn reconfig(
        &mut self,
        scope: &ScopeId,
        domain: &[ObjectId],
        cfg: Configuration,
    ) -> Result<u64, ProtocolError> {
        assert!(!domain.is_empty(), "reconfiguration needs a non-empty domain");
        let ctx = self.ctx.clone();
        let (op, parent) = ctx.begin_op(OpKind::Reconfig, scope, domain.first());
        let attrs = [("scope", scope.to_string()), ("client", ctx.client().to_string())];
        let res = ctx.in_span("reconfig", &attrs, self.reconfig_inner(scope, domain, cfg)).await;
        ctx.annotate_op(op, |r| match &res {
            Ok(id) => r.installed = Some(*id),
            Err(e) => r.error = Some(e.to_string()),
        });
        let snap = self.snapshot(scope);
        ctx.end_op(op, parent, snap);
        res
    }

    async fn reconfig_inner(
        &mut self,
        scope: &ScopeId,
        domain: &[ObjectId],
        cfg: Configuration,
    ) -> Result<u64, ProtocolError> {
        let ctx = self.ctx.clone();
        let anchor = &domain[0];
        self.read_config(scope, anchor).await?;

        let (index, entry) = ctx
            .in_span("add-config", &[], async {
                let lambda = self.cseq(scope).lambda();
                let index = lambda + 1;
                let decided = ctx
                    .in_span("propose", &[("index", index.to_string())], ctx.propose(scope, index, cfg))
                    .await;
                debug_assert_eq!(decided.id, index);
                let held = self.cseq(scope).insert(ConfigEntry::pending(decided))?;
                let prev = self.cseq(scope).get(lambda).expect("traversal ends at a populated index").cfg.clone();
                dap::put_config(&ctx, &Self::target(scope, anchor, &prev), &held).await;
                Ok::<_, ProtocolError>((index, held))
            })
            .await?;
        ctx.span_attr("installed", index.to_string());

        ctx.in_span("update-config", &[("objects", domain.len().to_string())], async {
            let configs = self.live_indices(scope);
            for object in domain {
                let mut best: Option<TaggedValue> = None;
                for (_, c) in &configs {
                    let (tv, _) = dap::get_data(&ctx, &Self::target(scope, object, c)).await?;
                    if !tv.value.is_bottom() && best.as_ref().is_none_or(|b| tv.tag > b.tag) {
                        best = Some(tv);
                    }
                }
                if let Some(best) = best {
                    dap::put_data(&ctx, &Self::target(scope, object, &entry.cfg), &best).await?;
                }
            }
            Ok::<_, ProtocolError>(())
        })
        .await?;

        ctx.in_span("finalize-config", &[], async {
            let seq = self.cseq(scope);
            let fin = seq.finalize(index).expect("installed index is populated").clone();
            let prev = seq.predecessor(index).expect("index 0 is never removed").cfg.clone();
            dap::put_config(&ctx, &Self::target(scope, anchor, &prev), &fin).await;
        })
        .await;

        if self.features.gc {
            ctx.in_span("gc", &[], async {
                let seq = self.cseq(scope);
                let mu = seq.mu();
                let last = seq.last_finalized().clone();
                let old: Vec<(u64, Configuration)> =
                    seq.iter().filter(|(i, _)| *i < mu).map(|(i, e)| (i, e.cfg.clone())).collect();
                for (i, c) in old {
                    dap::gc_config(&ctx, &Self::target(scope, anchor, &c), &last).await;
                    self.cseq(scope).remove(i);
                }
            })
            .await;
        }
        Ok(index)
    }
}
