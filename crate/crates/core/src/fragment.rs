//! Files stored as ordered lists of fixed-size block objects.
//!
//! The block list lives in a manifest shared by all clients of a run rather
//! than in replicated state.

use std::cell::RefCell;
use std::rc::Rc;

use crate::client::Client;
use crate::dap::ProtocolError;
use crate::history::OpKind;
use crate::types::{Configuration, ObjectId, ScopeId, Value, ValueDigest};

/// Fixed-size chunks; the empty value is one empty block.
pub fn split(value: &[u8], block_size: usize) -> Vec<Vec<u8>> {
    assert!(block_size >= 1, "block size must be positive");
    if value.is_empty() {
        return vec![Vec::new()];
    }
    value.chunks(block_size).map(<[u8]>::to_vec).collect()
}

pub fn join(blocks: &[Vec<u8>]) -> Vec<u8> {
    blocks.concat()
}

/// Positions to rewrite when replacing `old` block digests with `new`
/// contents: changed blocks and appended ones.
pub fn changed_blocks(old: &[ValueDigest], new: &[Vec<u8>]) -> Vec<usize> {
    new.iter()
        .enumerate()
        .filter(|(i, b)| old.get(*i).is_none_or(|d| *d != ValueDigest::of(b)))
        .map(|(i, _)| i)
        .collect()
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FragmentedObject {
    pub name: String,
    pub block_size: usize,
    /// Digest of each block's last written content, in file order.
    pub blocks: Vec<ValueDigest>,
}

impl FragmentedObject {
    pub fn new(name: impl Into<String>, block_size: usize) -> Self {
        FragmentedObject { name: name.into(), block_size, blocks: vec![ValueDigest::initial()] }
    }

    /// A file pre-sized to `blocks` empty blocks.
    pub fn with_blocks(name: impl Into<String>, block_size: usize, blocks: usize) -> Self {
        FragmentedObject { name: name.into(), block_size, blocks: vec![ValueDigest::initial(); blocks.max(1)] }
    }

    pub fn block_id(&self, i: usize) -> ObjectId {
        ObjectId::new(format!("{}#{i}", self.name)).expect("file names are non-empty")
    }

    pub fn block_ids(&self) -> Vec<ObjectId> {
        (0..self.blocks.len()).map(|i| self.block_id(i)).collect()
    }

    pub fn file_scope(&self) -> ScopeId {
        ScopeId::new(self.name.clone())
    }

    /// With batching all blocks share the file's configuration sequence;
    /// without it each block is its own scope.
    pub fn scope_of(&self, block: &ObjectId, batching: bool) -> ScopeId {
        if batching {
            self.file_scope()
        } else {
            ScopeId::from(block)
        }
    }
}

pub type Manifest = Rc<RefCell<FragmentedObject>>;

impl Client {
    /// Writes the blocks of `value` that differ from the manifest. Returns
    /// how many block writes were issued.
    pub async fn file_write(&mut self, file: &Manifest, value: &[u8]) -> Result<usize, ProtocolError> {
        let ctx = self.ctx().clone();
        let batching = self.features().batching;
        let (scope, name, block_size, old) = {
            let f = file.borrow();
            (f.file_scope(), f.name.clone(), f.block_size, f.blocks.clone())
        };
        let (op, parent) = ctx.begin_op(OpKind::FileWrite, &scope, None);
        ctx.annotate_op(op, |r| r.value = Some(ValueDigest::of(value)));
        let blocks = split(value, block_size);
        let todo = changed_blocks(&old, &blocks);
        let attrs = [("file", name), ("client", ctx.client().to_string()), ("blocks", todo.len().to_string())];
        let res: Result<usize, ProtocolError> = ctx
            .in_span("file-write", &attrs, async {
                for &i in &todo {
                    let id = file.borrow().block_id(i);
                    let bscope = file.borrow().scope_of(&id, batching);
                    self.write(&bscope, &id, blocks[i].clone()).await?;
                    let mut f = file.borrow_mut();
                    let digest = Value::Bytes(blocks[i].clone()).digest();
                    if i < f.blocks.len() {
                        f.blocks[i] = digest;
                    } else {
                        f.blocks.push(digest);
                    }
                }
                file.borrow_mut().blocks.truncate(blocks.len());
                Ok(todo.len())
            })
            .await;
        if let Err(e) = &res {
            ctx.annotate_op(op, |r| r.error = Some(e.to_string()));
        }
        let snap = self.snapshot(&scope);
        ctx.end_op(op, parent, snap);
        res
    }

    /// Reads every block listed in the manifest and concatenates them.
    pub async fn file_read(&mut self, file: &Manifest) -> Result<Vec<u8>, ProtocolError> {
        let ctx = self.ctx().clone();
        let batching = self.features().batching;
        let (scope, name, ids) = {
            let f = file.borrow();
            (f.file_scope(), f.name.clone(), f.block_ids())
        };
        let (op, parent) = ctx.begin_op(OpKind::FileRead, &scope, None);
        let attrs = [("file", name), ("client", ctx.client().to_string())];
        let res: Result<Vec<u8>, ProtocolError> = ctx
            .in_span("file-read", &attrs, async {
                let mut out = Vec::new();
                for id in &ids {
                    let bscope = file.borrow().scope_of(id, batching);
                    let tv = self.read(&bscope, id).await?;
                    if let Some(b) = tv.value.bytes() {
                        out.extend_from_slice(b);
                    }
                }
                Ok(out)
            })
            .await;
        ctx.annotate_op(op, |r| match &res {
            Ok(v) => r.value = Some(ValueDigest::of(v)),
            Err(e) => r.error = Some(e.to_string()),
        });
        let snap = self.snapshot(&scope);
        ctx.end_op(op, parent, snap);
        res
    }

    /// Moves every block of `file` to `cfg`: one reconfiguration over the
    /// whole block domain with batching, one per block without.
    pub async fn file_reconfig(&mut self, file: &Manifest, cfg: Configuration) -> Result<Vec<u64>, ProtocolError> {
        let (scope, ids) = {
            let f = file.borrow();
            (f.file_scope(), f.block_ids())
        };
        if self.features().batching {
            Ok(vec![self.reconfig(&scope, &ids, cfg).await?])
        } else {
            let mut installed = Vec::with_capacity(ids.len());
            for id in &ids {
                installed.push(self.reconfig(&ScopeId::from(id), std::slice::from_ref(id), cfg.clone()).await?);
            }
            Ok(installed)
        }
    }
}
