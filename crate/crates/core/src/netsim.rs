//! Deterministic discrete-event network.
//!
//! Client protocol code is written as `async` functions over a [`Ctx`]; the
//! simulator polls them with a no-op waker from a single loop, so every
//! `await` on a quorum is a continuation resumed by message delivery. Server
//! and consensus handlers run atomically when their message is delivered.

use std::cell::RefCell;
use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::fmt;
use std::future::Future;
use std::pin::Pin;
use std::rc::Rc;
use std::task::{Context, Poll, Waker};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::consensus::ConsensusService;
use crate::history::{DapOp, DapRecord, ExecutionLog, OpKind, OpRecord, Outcome, RunStatus, Stamp};
use crate::message::{Reply, Request};
use crate::server::ServerNode;
use crate::trace::{Span, Tracer};
use crate::types::{ClientId, Configuration, ObjectId, ScopeId, SequenceSnapshot, ServerId, Tag, ValueDigest};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum NodeId {
    Server(ServerId),
    Client(ClientId),
    Consensus,
}

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            NodeId::Server(s) => s.fmt(f),
            NodeId::Client(c) => c.fmt(f),
            NodeId::Consensus => f.write_str("consensus"),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Payload {
    Request(Request),
    Reply(Reply),
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Envelope {
    pub src: NodeId,
    pub dst: NodeId,
    /// Quorum call this message belongs to.
    pub call: u64,
    /// Originating client operation.
    pub op: u64,
    pub payload: Payload,
    pub deliver_at: u64,
}

#[derive(Debug)]
enum Event {
    Deliver(Box<Envelope>),
    Wake(ClientId),
    Crash(NodeId),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct NetConfig {
    pub seed: u64,
    pub min_delay: u64,
    pub max_delay: u64,
    /// Safety stop for runaway scenarios.
    pub max_ticks: u64,
}

impl Default for NetConfig {
    fn default() -> Self {
        NetConfig { seed: 0, min_delay: 1, max_delay: 10, max_ticks: 10_000_000 }
    }
}

#[derive(Debug)]
struct Call {
    client: ClientId,
    need: usize,
    label: String,
    replies: Vec<(NodeId, Reply)>,
    from: BTreeSet<NodeId>,
}

#[derive(Debug, Default, Clone, Copy, PartialEq, Eq)]
pub struct Stats {
    pub events: u64,
    pub messages: u64,
    pub dropped: u64,
    pub proposals: u64,
}

pub struct World {
    clock: u64,
    seq: u64,
    step: u64,
    rng: ChaCha8Rng,
    net: NetConfig,
    queue: BTreeMap<(u64, u64), Event>,
    crashed: BTreeSet<NodeId>,
    servers: BTreeMap<ServerId, ServerNode>,
    consensus: Box<dyn ConsensusService>,
    calls: BTreeMap<u64, Call>,
    next_call: u64,
    ready: VecDeque<ClientId>,
    tracer: Tracer,
    log: ExecutionLog,
    op_index: BTreeMap<u64, usize>,
    current_op: BTreeMap<ClientId, u64>,
    next_op: u64,
    stats: Stats,
}

impl World {
    pub fn now(&self) -> u64 {
        self.clock
    }

    pub fn server(&self, id: ServerId) -> Option<&ServerNode> {
        self.servers.get(&id)
    }

    pub fn servers(&self) -> impl Iterator<Item = &ServerNode> {
        self.servers.values()
    }

    pub fn stats(&self) -> Stats {
        self.stats
    }

    pub fn log(&self) -> &ExecutionLog {
        &self.log
    }

    pub fn is_crashed(&self, node: NodeId) -> bool {
        self.crashed.contains(&node)
    }

    fn push_event(&mut self, at: u64, ev: Event) {
        self.seq += 1;
        self.queue.insert((at, self.seq), ev);
    }

    fn stamp(&mut self) -> Stamp {
        self.step += 1;
        Stamp { step: self.step, tick: self.clock }
    }

    fn send(&mut self, mut env: Envelope) {
        if self.crashed.contains(&env.src) || self.crashed.contains(&env.dst) {
            self.stats.dropped += 1;
            return;
        }
        let delay = self.rng.gen_range(self.net.min_delay..=self.net.max_delay);
        env.deliver_at = self.clock + delay;
        self.stats.messages += 1;
        self.push_event(env.deliver_at, Event::Deliver(Box::new(env)));
    }

    fn wake(&mut self, client: ClientId) {
        if !self.ready.contains(&client) {
            self.ready.push_back(client);
        }
    }

    fn deliver(&mut self, env: Envelope) {
        if self.crashed.contains(&env.dst) {
            self.stats.dropped += 1;
            return;
        }
        match (env.dst, env.payload) {
            (NodeId::Server(id), Payload::Request(req)) => {
                let server = self.servers.get_mut(&id).unwrap_or_else(|| panic!("unknown server {id}"));
                let (reply, event) = server.handle(self.clock, &req);
                self.log.servers.push(event);
                self.send(Envelope {
                    src: env.dst,
                    dst: env.src,
                    call: env.call,
                    op: env.op,
                    payload: Payload::Reply(reply),
                    deliver_at: 0,
                });
            }
            (NodeId::Consensus, Payload::Request(Request::Propose { scope, index, cfg })) => {
                let decided = self.consensus.propose(&scope, index, cfg);
                self.send(Envelope {
                    src: env.dst,
                    dst: env.src,
                    call: env.call,
                    op: env.op,
                    payload: Payload::Reply(Reply::Decided { index, cfg: decided }),
                    deliver_at: 0,
                });
            }
            (NodeId::Client(_), Payload::Reply(reply)) => {
                let Some(call) = self.calls.get_mut(&env.call) else { return };
                if call.replies.len() >= call.need || !call.from.insert(env.src) {
                    return;
                }
                call.replies.push((env.src, reply));
                if call.replies.len() == call.need {
                    let client = call.client;
                    self.wake(client);
                }
            }
            (dst, payload) => panic!("{dst} cannot handle {payload:?}"),
        }
    }

    fn crash(&mut self, node: NodeId) {
        if !self.crashed.insert(node) {
            return;
        }
        let tick = self.clock;
        self.log.note_crash(node.to_string(), tick);
        if let NodeId::Client(c) = node {
            self.calls.retain(|_, call| call.client != c);
            self.ready.retain(|r| *r != c);
        }
    }

    fn note_round(&mut self, client: ClientId, cfg: u64) {
        self.tracer.round_trip(client);
        if let Some(idx) = self.current_op.get(&client).and_then(|op| self.op_index.get(op)) {
            let rec = &mut self.log.ops[*idx];
            rec.round_trips += 1;
            if !rec.contacted.contains(&cfg) {
                rec.contacted.push(cfg);
            }
        }
    }
}

type Task = Pin<Box<dyn Future<Output = ()>>>;

/// Owns the world and the client tasks.
pub struct Sim {
    world: Rc<RefCell<World>>,
    tasks: BTreeMap<ClientId, Task>,
}

impl Sim {
    pub fn new(net: NetConfig, servers: impl IntoIterator<Item = ServerId>, consensus: Box<dyn ConsensusService>) -> Self {
        assert!(1 <= net.min_delay && net.min_delay <= net.max_delay, "delay range must be within [1, max]");
        let world = World {
            clock: 0,
            seq: 0,
            step: 0,
            rng: ChaCha8Rng::seed_from_u64(net.seed),
            net,
            queue: BTreeMap::new(),
            crashed: BTreeSet::new(),
            servers: servers.into_iter().map(|id| (id, ServerNode::new(id))).collect(),
            consensus,
            calls: BTreeMap::new(),
            next_call: 0,
            ready: VecDeque::new(),
            tracer: Tracer::new(),
            log: ExecutionLog::default(),
            op_index: BTreeMap::new(),
            current_op: BTreeMap::new(),
            next_op: 0,
            stats: Stats::default(),
        };
        Sim { world: Rc::new(RefCell::new(world)), tasks: BTreeMap::new() }
    }

    pub fn ctx(&self, client: ClientId) -> Ctx {
        Ctx { world: self.world.clone(), client }
    }

    pub fn spawn(&mut self, client: ClientId, task: impl Future<Output = ()> + 'static) {
        assert!(!self.tasks.contains_key(&client), "{client} already has a task");
        self.tasks.insert(client, Box::pin(task));
        self.world.borrow_mut().wake(client);
    }

    pub fn schedule_crash(&mut self, node: NodeId, at: u64) {
        self.world.borrow_mut().push_event(at, Event::Crash(node));
    }

    pub fn world(&self) -> std::cell::Ref<'_, World> {
        self.world.borrow()
    }

    /// Runs until no events remain, every task finished, or the tick limit.
    pub fn run(&mut self) -> Outcome {
        let mut cx = Context::from_waker(Waker::noop());
        let status = loop {
            loop {
                let next = self.world.borrow_mut().ready.pop_front();
                let Some(client) = next else { break };
                if let Some(task) = self.tasks.get_mut(&client) {
                    if task.as_mut().poll(&mut cx).is_ready() {
                        self.tasks.remove(&client);
                    }
                }
            }
            let mut w = self.world.borrow_mut();
            let Some(((tick, _), ev)) = w.queue.pop_first() else {
                break if self.tasks.is_empty() { RunStatus::Quiescent } else { RunStatus::Deadlock };
            };
            if tick > w.net.max_ticks {
                break RunStatus::TickLimit;
            }
            w.clock = tick;
            w.stats.events += 1;
            match ev {
                Event::Deliver(env) => w.deliver(*env),
                Event::Wake(c) => w.wake(c),
                Event::Crash(node) => {
                    w.crash(node);
                    if let NodeId::Client(c) = node {
                        drop(w);
                        // Dropped outside the borrow: the task holds `Ctx` clones.
                        self.tasks.remove(&c);
                    }
                }
            }
        };
        let w = self.world.borrow();
        let waiting = match status {
            RunStatus::Quiescent => Vec::new(),
            _ => w
                .calls
                .values()
                .map(|c| format!("{} awaiting {}/{} replies for {}", c.client, c.replies.len(), c.need, c.label))
                .collect(),
        };
        let waiting = if waiting.is_empty() && status != RunStatus::Quiescent {
            self.tasks.keys().map(|c| format!("{c} blocked")).collect()
        } else {
            waiting
        };
        Outcome { status, end_tick: w.clock, events: w.stats.events, proposals: w.stats.proposals, waiting }
    }

    /// Tears the simulation down into its recorded log and spans.
    pub fn finish(mut self, outcome: Outcome) -> (ExecutionLog, Vec<Span>) {
        self.tasks.clear();
        let world = Rc::try_unwrap(self.world).ok().expect("all contexts dropped with their tasks").into_inner();
        let mut log = world.log;
        log.outcome = Some(outcome);
        (log, world.tracer.finish())
    }
}

/// A client's handle on the world.
#[derive(Clone)]
pub struct Ctx {
    world: Rc<RefCell<World>>,
    client: ClientId,
}

impl Ctx {
    pub fn client(&self) -> ClientId {
        self.client
    }

    pub fn now(&self) -> u64 {
        self.world.borrow().clock
    }

    pub async fn sleep_until(&self, tick: u64) {
        {
            let mut w = self.world.borrow_mut();
            if w.clock >= tick {
                return;
            }
            w.push_event(tick, Event::Wake(self.client));
        }
        let world = self.world.clone();
        std::future::poll_fn(move |_| if world.borrow().clock >= tick { Poll::Ready(()) } else { Poll::Pending }).await
    }

    /// Sends each request and resolves with the first `need` replies from
    /// distinct servers. Counts as one round trip against configuration `cfg`.
    pub async fn quorum(&self, cfg: &Configuration, requests: Vec<(ServerId, Request)>, need: usize) -> Vec<(ServerId, Reply)> {
        let label = format!("{} in configuration {}", requests.first().map_or("?", |(_, r)| r.kind()), cfg.id);
        let call = {
            let mut w = self.world.borrow_mut();
            w.next_call += 1;
            let call = w.next_call;
            let op = w.current_op.get(&self.client).copied().unwrap_or(0);
            w.calls.insert(call, Call { client: self.client, need, label, replies: Vec::new(), from: BTreeSet::new() });
            w.note_round(self.client, cfg.id);
            for (server, req) in requests {
                w.send(Envelope {
                    src: NodeId::Client(self.client),
                    dst: NodeId::Server(server),
                    call,
                    op,
                    payload: Payload::Request(req),
                    deliver_at: 0,
                });
            }
            call
        };
        let replies = self.await_call(call).await;
        replies
            .into_iter()
            .map(|(node, r)| match node {
                NodeId::Server(s) => (s, r),
                other => panic!("quorum reply from {other}"),
            })
            .collect()
    }

    pub async fn propose(&self, scope: &ScopeId, index: u64, cfg: Configuration) -> Configuration {
        let call = {
            let mut w = self.world.borrow_mut();
            w.next_call += 1;
            w.stats.proposals += 1;
            let call = w.next_call;
            let op = w.current_op.get(&self.client).copied().unwrap_or(0);
            w.calls.insert(
                call,
                Call {
                    client: self.client,
                    need: 1,
                    label: format!("consensus on index {index}"),
                    replies: Vec::new(),
                    from: BTreeSet::new(),
                },
            );
            w.send(Envelope {
                src: NodeId::Client(self.client),
                dst: NodeId::Consensus,
                call,
                op,
                payload: Payload::Request(Request::Propose { scope: scope.clone(), index, cfg }),
                deliver_at: 0,
            });
            call
        };
        match self.await_call(call).await.pop() {
            Some((_, Reply::Decided { cfg, .. })) => cfg,
            other => panic!("unexpected consensus reply {other:?}"),
        }
    }

    async fn await_call(&self, call: u64) -> Vec<(NodeId, Reply)> {
        let world = self.world.clone();
        std::future::poll_fn(move |_| {
            let mut w = world.borrow_mut();
            let done = w.calls.get(&call).is_some_and(|c| c.replies.len() >= c.need);
            if done {
                Poll::Ready(w.calls.remove(&call).expect("call present").replies)
            } else {
                Poll::Pending
            }
        })
        .await
    }

    /// Runs `f` inside a span named `name`.
    pub async fn in_span<F: Future>(&self, name: &str, attrs: &[(&str, String)], f: F) -> F::Output {
        let id = {
            let mut w = self.world.borrow_mut();
            let trace = w.current_op.get(&self.client).copied().unwrap_or(0);
            let now = w.clock;
            let attrs = attrs.iter().map(|(k, v)| (k.to_string(), v.clone())).collect();
            w.tracer.open(self.client, trace, name, attrs, now)
        };
        let out = f.await;
        let mut w = self.world.borrow_mut();
        let now = w.clock;
        w.tracer.close(self.client, id, now);
        out
    }

    pub fn span_attr(&self, key: &str, value: String) {
        self.world.borrow_mut().tracer.set_attr(self.client, key, value);
    }

    /// Records an operation invocation and makes it the client's current
    /// operation. Returns its id and the previously current one.
    pub fn begin_op(&self, kind: OpKind, scope: &ScopeId, object: Option<&ObjectId>) -> (u64, Option<u64>) {
        let mut w = self.world.borrow_mut();
        w.next_op += 1;
        let op = w.next_op;
        let invoke = w.stamp();
        let parent = w.current_op.insert(self.client, op);
        let rec = OpRecord {
            op,
            parent,
            client: self.client,
            kind,
            scope: scope.clone(),
            object: object.cloned(),
            invoke,
            response: None,
            tag: None,
            value: None,
            installed: None,
            cseq: None,
            contacted: Vec::new(),
            round_trips: 0,
            error: None,
        };
        let idx = w.log.ops.len();
        w.log.ops.push(rec);
        w.op_index.insert(op, idx);
        (op, parent)
    }

    /// Sets the payload fields of an in-progress operation.
    pub fn annotate_op(&self, op: u64, f: impl FnOnce(&mut OpRecord)) {
        let mut w = self.world.borrow_mut();
        let idx = w.op_index[&op];
        f(&mut w.log.ops[idx]);
    }

    pub fn end_op(&self, op: u64, parent: Option<u64>, cseq: SequenceSnapshot) {
        let mut w = self.world.borrow_mut();
        let response = w.stamp();
        let idx = w.op_index[&op];
        let (rounds, contacted) = {
            let rec = &mut w.log.ops[idx];
            rec.response = Some(response);
            rec.cseq = Some(cseq);
            (rec.round_trips, rec.contacted.clone())
        };
        match parent {
            Some(p) => {
                w.current_op.insert(self.client, p);
                let pidx = w.op_index[&p];
                let prec = &mut w.log.ops[pidx];
                prec.round_trips += rounds;
                for c in contacted {
                    if !prec.contacted.contains(&c) {
                        prec.contacted.push(c);
                    }
                }
            }
            None => {
                w.current_op.remove(&self.client);
            }
        }
    }

    /// `put` carries the pair of a put-data, recorded at invocation so
    /// that puts which never complete still show up.
    pub fn begin_dap(
        &self,
        kind: DapOp,
        scope: &ScopeId,
        object: &ObjectId,
        config: u64,
        put: Option<(Tag, ValueDigest)>,
    ) -> usize {
        let mut w = self.world.borrow_mut();
        let invoke = w.stamp();
        let op = w.current_op.get(&self.client).copied().unwrap_or(0);
        w.log.daps.push(DapRecord {
            op,
            client: self.client,
            kind,
            scope: scope.clone(),
            object: object.clone(),
            config,
            invoke,
            response: None,
            tag: put.as_ref().map(|p| p.0),
            value: put.map(|p| p.1),
        });
        w.log.daps.len() - 1
    }

    pub fn end_dap(&self, idx: usize, tag: Tag, value: Option<ValueDigest>) {
        let mut w = self.world.borrow_mut();
        let response = w.stamp();
        let rec = &mut w.log.daps[idx];
        rec.response = Some(response);
        rec.tag = Some(tag);
        rec.value = value;
    }
}
