//! Scenario files: servers, configurations, per-client schedules, crashes.
//!
//! The grammar is TOML; see `scenarios/README.md` for the full reference.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::ops::Range;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Deserialize;
use toml::Spanned;

use crate::client::Features;
use crate::netsim::{NetConfig, NodeId};
use crate::types::{ClientId, Configuration, DapKind, ObjectId, ServerId};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ScenarioError {
    /// Dotted path of the offending field, e.g. `clients[0].ops[2].config`.
    pub path: String,
    pub line: Option<usize>,
    pub message: String,
}

impl fmt::Display for ScenarioError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.line {
            Some(l) => write!(f, "line {l}: {}: {}", self.path, self.message),
            None => write!(f, "{}: {}", self.path, self.message),
        }
    }
}

impl std::error::Error for ScenarioError {}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FileSpec {
    pub name: String,
    pub blocks: usize,
    pub block_size: usize,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Action {
    Read { object: ObjectId },
    Write { object: ObjectId, value: Vec<u8> },
    /// Reconfigure a standalone object's sequence.
    Reconfig { object: ObjectId, config: String },
    FileRead { file: String },
    FileWrite { file: String, value: Vec<u8> },
    FileReconfig { file: String, config: String },
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct OpSpec {
    /// The operation starts no earlier than this tick, and after the
    /// client's previous operation.
    pub at: u64,
    pub action: Action,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ClientSpec {
    pub id: ClientId,
    pub ops: Vec<OpSpec>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Scenario {
    pub net: NetConfig,
    pub servers: Vec<ServerId>,
    pub features: Features,
    /// Configuration templates by name. Ids are assigned on installation.
    pub configs: BTreeMap<String, Configuration>,
    pub initial: String,
    pub files: Vec<FileSpec>,
    pub clients: Vec<ClientSpec>,
    pub crashes: Vec<(NodeId, u64)>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawScenario {
    #[serde(default)]
    seed: u64,
    servers: Spanned<u32>,
    #[serde(default)]
    network: RawNetwork,
    #[serde(default)]
    features: RawFeatures,
    initial: Spanned<String>,
    configs: Vec<RawConfig>,
    #[serde(default)]
    files: Vec<RawFile>,
    #[serde(default)]
    clients: Vec<RawClient>,
    #[serde(default)]
    crashes: Vec<RawCrash>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawNetwork {
    #[serde(default = "one")]
    min_delay: u64,
    #[serde(default = "ten")]
    max_delay: u64,
    #[serde(default = "max_ticks")]
    max_ticks: u64,
}

impl Default for RawNetwork {
    fn default() -> Self {
        RawNetwork { min_delay: 1, max_delay: 10, max_ticks: max_ticks() }
    }
}

fn one() -> u64 {
    1
}
fn ten() -> u64 {
    10
}
fn max_ticks() -> u64 {
    NetConfig::default().max_ticks
}
fn yes() -> bool {
    true
}
fn once() -> usize {
    1
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawFeatures {
    #[serde(default = "yes")]
    piggyback: bool,
    #[serde(default = "yes")]
    gc: bool,
    #[serde(default = "yes")]
    batching: bool,
}

impl Default for RawFeatures {
    fn default() -> Self {
        RawFeatures { piggyback: true, gc: true, batching: true }
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    name: Spanned<String>,
    dap: DapKind,
    /// Server numbers; all servers when absent.
    servers: Option<Spanned<Vec<u32>>>,
    #[serde(default = "once")]
    k: usize,
    #[serde(default = "once")]
    delta: usize,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawFile {
    name: Spanned<String>,
    blocks: usize,
    block_size: usize,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawClient {
    id: Spanned<u32>,
    #[serde(default)]
    ops: Vec<RawOp>,
}

#[derive(Deserialize, Clone, Copy, PartialEq, Eq)]
#[serde(rename_all = "kebab-case")]
enum RawKind {
    Read,
    Write,
    Reconfig,
    FileRead,
    FileWrite,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawOp {
    #[serde(default)]
    at: u64,
    kind: Spanned<RawKind>,
    object: Option<Spanned<String>>,
    file: Option<Spanned<String>>,
    config: Option<Spanned<String>>,
    value: Option<String>,
    /// Length of a generated value.
    size: Option<usize>,
    #[serde(default = "once")]
    repeat: usize,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawCrash {
    node: Spanned<String>,
    at: u64,
}

/// Bytes of a generated value: a unique label padded with `.` to `size`.
pub fn generated_value(client: ClientId, n: usize, size: usize) -> Vec<u8> {
    let mut v = format!("{client}:{n}:").into_bytes();
    if v.len() < size {
        v.resize(size, b'.');
    }
    v
}

struct Lines<'a>(&'a str);

impl Lines<'_> {
    fn of(&self, span: Range<usize>) -> usize {
        self.0[..span.start.min(self.0.len())].bytes().filter(|&b| b == b'\n').count() + 1
    }

    fn err(&self, path: impl Into<String>, span: Range<usize>, message: impl Into<String>) -> ScenarioError {
        ScenarioError { path: path.into(), line: Some(self.of(span)), message: message.into() }
    }
}

pub fn parse_node(s: &str) -> Option<NodeId> {
    let (kind, num) = s.split_at(s.find(|c: char| c.is_ascii_digit())?);
    let num: u32 = num.parse().ok()?;
    match kind {
        "s" => Some(NodeId::Server(ServerId(num))),
        "c" => Some(NodeId::Client(ClientId(num))),
        _ => None,
    }
}

impl Scenario {
    pub fn parse(text: &str) -> Result<Scenario, ScenarioError> {
        let lines = Lines(text);
        let raw: RawScenario = toml::from_str(text).map_err(|e| ScenarioError {
            path: "<document>".into(),
            line: e.span().map(|s| lines.of(s)),
            message: e.message().trim().to_string(),
        })?;
        let n = *raw.servers.get_ref();
        if n == 0 {
            return Err(lines.err("servers", raw.servers.span(), "at least one server is required"));
        }
        let servers: Vec<ServerId> = (1..=n).map(ServerId).collect();

        let mut configs = BTreeMap::new();
        for (i, c) in raw.configs.iter().enumerate() {
            let path = format!("configs[{i}]");
            let members = match &c.servers {
                None => servers.clone(),
                Some(list) => {
                    if let Some(bad) = list.get_ref().iter().find(|s| **s == 0 || **s > n) {
                        return Err(lines.err(
                            format!("{path}.servers"),
                            list.span(),
                            format!("server {bad} does not exist (servers are 1..={n})"),
                        ));
                    }
                    list.get_ref().iter().map(|&s| ServerId(s)).collect()
                }
            };
            let k = if c.dap == DapKind::Abd { 1 } else { c.k };
            let cfg = Configuration::validated(Configuration { id: 0, servers: members, dap: c.dap, k, delta: c.delta })
                .map_err(|e| lines.err(path.clone(), c.name.span(), e.to_string()))?;
            if configs.insert(c.name.get_ref().clone(), cfg).is_some() {
                return Err(lines.err(format!("{path}.name"), c.name.span(), "duplicate configuration name"));
            }
        }
        if !configs.contains_key(raw.initial.get_ref()) {
            return Err(lines.err("initial", raw.initial.span(), format!("unknown configuration {:?}", raw.initial.get_ref())));
        }

        let mut files = Vec::new();
        for (i, f) in raw.files.iter().enumerate() {
            let name = f.name.get_ref();
            if name.is_empty() || name.contains('#') {
                return Err(lines.err(format!("files[{i}].name"), f.name.span(), "file names must be non-empty and free of '#'"));
            }
            if f.blocks == 0 || f.block_size == 0 {
                return Err(lines.err(format!("files[{i}]"), f.name.span(), "blocks and block_size must be positive"));
            }
            if files.iter().any(|x: &FileSpec| &x.name == name) {
                return Err(lines.err(format!("files[{i}].name"), f.name.span(), "duplicate file name"));
            }
            files.push(FileSpec { name: name.clone(), blocks: f.blocks, block_size: f.block_size });
        }

        let mut clients = Vec::new();
        let mut ids = BTreeSet::new();
        for (ci, c) in raw.clients.iter().enumerate() {
            let id = *c.id.get_ref();
            if id == 0 || !ids.insert(id) {
                return Err(lines.err(format!("clients[{ci}].id"), c.id.span(), "client ids must be unique and at least 1"));
            }
            let client = ClientId(id);
            let mut ops = Vec::new();
            for (oi, op) in c.ops.iter().enumerate() {
                let path = format!("clients[{ci}].ops[{oi}]");
                for _ in 0..op.repeat {
                    let n = ops.len();
                    let value = || match &op.value {
                        Some(v) => v.clone().into_bytes(),
                        None => generated_value(client, n, op.size.unwrap_or(0)),
                    };
                    let action = Self::action(&lines, &path, op, &configs, &files, value)?;
                    ops.push(OpSpec { at: op.at, action });
                }
            }
            clients.push(ClientSpec { id: client, ops });
        }

        let mut crashes = Vec::new();
        for (i, c) in raw.crashes.iter().enumerate() {
            let path = format!("crashes[{i}].node");
            let node = parse_node(c.node.get_ref())
                .ok_or_else(|| lines.err(&path, c.node.span(), "nodes are written s<N> or c<N>"))?;
            let exists = match node {
                NodeId::Server(s) => servers.contains(&s),
                NodeId::Client(cl) => ids.contains(&cl.0),
                NodeId::Consensus => false,
            };
            if !exists {
                return Err(lines.err(&path, c.node.span(), format!("no such node {node}")));
            }
            crashes.push((node, c.at));
        }

        let scenario = Scenario {
            net: NetConfig {
                seed: raw.seed,
                min_delay: raw.network.min_delay,
                max_delay: raw.network.max_delay,
                max_ticks: raw.network.max_ticks,
            },
            servers,
            features: Features {
                piggyback: raw.features.piggyback,
                gc: raw.features.gc,
                batching: raw.features.batching,
            },
            configs,
            initial: raw.initial.into_inner(),
            files,
            clients,
            crashes,
        };
        scenario.validate()?;
        Ok(scenario)
    }

    fn action(
        lines: &Lines<'_>,
        path: &str,
        op: &RawOp,
        configs: &BTreeMap<String, Configuration>,
        files: &[FileSpec],
        value: impl Fn() -> Vec<u8>,
    ) -> Result<Action, ScenarioError> {
        let kind = *op.kind.get_ref();
        let object = || -> Result<ObjectId, ScenarioError> {
            let o = op.object.as_ref().ok_or_else(|| lines.err(path, op.kind.span(), "missing object"))?;
            if o.get_ref().contains('#') {
                return Err(lines.err(format!("{path}.object"), o.span(), "'#' is reserved for file blocks"));
            }
            ObjectId::new(o.get_ref().clone()).map_err(|e| lines.err(format!("{path}.object"), o.span(), e.to_string()))
        };
        let file = || -> Result<String, ScenarioError> {
            let f = op.file.as_ref().ok_or_else(|| lines.err(path, op.kind.span(), "missing file"))?;
            if !files.iter().any(|x| &x.name == f.get_ref()) {
                return Err(lines.err(format!("{path}.file"), f.span(), format!("unknown file {:?}", f.get_ref())));
            }
            Ok(f.get_ref().clone())
        };
        let config = || -> Result<String, ScenarioError> {
            let c = op.config.as_ref().ok_or_else(|| lines.err(path, op.kind.span(), "missing config"))?;
            if !configs.contains_key(c.get_ref()) {
                return Err(lines.err(format!("{path}.config"), c.span(), format!("unknown configuration {:?}", c.get_ref())));
            }
            Ok(c.get_ref().clone())
        };
        Ok(match kind {
            RawKind::Read => Action::Read { object: object()? },
            RawKind::Write => Action::Write { object: object()?, value: value() },
            RawKind::Reconfig if op.file.is_some() => Action::FileReconfig { file: file()?, config: config()? },
            RawKind::Reconfig => Action::Reconfig { object: object()?, config: config()? },
            RawKind::FileRead => Action::FileRead { file: file()? },
            RawKind::FileWrite => Action::FileWrite { file: file()?, value: value() },
        })
    }

    pub fn initial_config(&self) -> &Configuration {
        &self.configs[&self.initial]
    }

    /// Structural checks that hold for parsed and generated scenarios alike.
    pub fn validate(&self) -> Result<(), ScenarioError> {
        let err = |path: &str, message: String| ScenarioError { path: path.into(), line: None, message };
        if !(1 <= self.net.min_delay && self.net.min_delay <= self.net.max_delay) {
            return Err(err("network", "delays must satisfy 1 <= min_delay <= max_delay".into()));
        }
        let crashed: BTreeSet<ServerId> = self
            .crashes
            .iter()
            .filter_map(|(n, _)| match n {
                NodeId::Server(s) => Some(*s),
                _ => None,
            })
            .collect();
        for (name, cfg) in &self.configs {
            let alive = cfg.servers.iter().filter(|s| !crashed.contains(s)).count();
            if alive < cfg.quorum_size() {
                return Err(err(
                    "crashes",
                    format!("configuration {name:?} keeps {alive} live servers but needs a quorum of {}", cfg.quorum_size()),
                ));
            }
        }
        Ok(())
    }

    /// Number of operations across all clients.
    pub fn op_count(&self) -> usize {
        self.clients.iter().map(|c| c.ops.len()).sum()
    }
}

/// Server-subset sizes available to generated configurations.
const SUBSET_SIZES: [usize; 5] = [3, 5, 7, 9, 11];

/// A random execution within the fault and concurrency bounds: every
/// configuration keeps a live quorum and δ covers every client that may put
/// data concurrently.
pub fn random(seed: u64) -> Scenario {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_5eed);
    let n = *[3usize, 5, 11].choose(&mut rng).expect("non-empty");
    let servers: Vec<ServerId> = (1..=n as u32).map(ServerId).collect();
    let writers = rng.gen_range(2..=5usize);
    let readers = rng.gen_range(2..=10usize);
    let reconfigurers = rng.gen_range(0..=3usize);
    let delta = writers + reconfigurers;

    let subset = |rng: &mut ChaCha8Rng| {
        let sizes: Vec<usize> = SUBSET_SIZES.iter().copied().filter(|&s| s <= n).collect();
        let size = *sizes.choose(rng).expect("n >= 3");
        let mut s: Vec<ServerId> = servers.choose_multiple(rng, size).copied().collect();
        s.sort();
        s
    };
    let mut configs = BTreeMap::new();
    configs.insert("c0".to_string(), Configuration::abd(0, subset(&mut rng)).expect("valid"));
    // Each reconfigurer alternates between an EC and an ABD template.
    for r in 0..reconfigurers {
        let members = subset(&mut rng);
        let m = rng.gen_range(1..=5usize.min(members.len() - 1));
        let k = members.len() - m;
        configs.insert(format!("ec{r}"), Configuration::ec(0, members, k, delta).expect("valid"));
        configs.insert(format!("abd{r}"), Configuration::abd(0, subset(&mut rng)).expect("valid"));
    }

    let object_count = rng.gen_range(1..=3usize);
    let objects: Vec<ObjectId> = (0..object_count).map(|i| ObjectId::new(format!("x{i}")).expect("non-empty")).collect();
    let with_file = rng.gen_bool(0.25);
    let files = if with_file {
        vec![FileSpec { name: "f".into(), blocks: rng.gen_range(2..=3), block_size: 8 }]
    } else {
        Vec::new()
    };

    let mut clients = Vec::new();
    let mut roles = Vec::new();
    roles.extend(std::iter::repeat_n(0u8, writers));
    roles.extend(std::iter::repeat_n(1u8, readers));
    roles.extend(std::iter::repeat_n(2u8, reconfigurers));
    for (r_index, role) in roles.into_iter().enumerate() {
        let id = ClientId(r_index as u32 + 1);
        let count = match role {
            2 => rng.gen_range(1..=4usize),
            _ => rng.gen_range(1..=20usize),
        };
        let mut at = rng.gen_range(0..50u64);
        let mut ops = Vec::with_capacity(count);
        for i in 0..count {
            let use_file = with_file && role != 2 && rng.gen_bool(0.2);
            let object = objects.choose(&mut rng).expect("non-empty").clone();
            let action = match (role, use_file) {
                (0, false) => Action::Write { object, value: generated_value(id, i, rng.gen_range(0..48)) },
                (0, true) => Action::FileWrite { file: "f".into(), value: generated_value(id, i, rng.gen_range(1..=24)) },
                (1, false) => Action::Read { object },
                (1, true) => Action::FileRead { file: "f".into() },
                _ => {
                    let r = r_index - writers - readers;
                    let config = if i % 2 == 0 { format!("ec{r}") } else { format!("abd{r}") };
                    if with_file && rng.gen_bool(0.3) {
                        Action::FileReconfig { file: "f".into(), config }
                    } else {
                        Action::Reconfig { object, config }
                    }
                }
            };
            ops.push(OpSpec { at, action });
            at += rng.gen_range(0..120u64);
        }
        clients.push(ClientSpec { id, ops });
    }

    // Server crashes that leave every configuration a live quorum.
    let mut crashes = Vec::new();
    let mut crashed = BTreeSet::new();
    for s in &servers {
        if !rng.gen_bool(0.3) {
            continue;
        }
        crashed.insert(*s);
        let ok = configs.values().all(|c| c.servers.iter().filter(|x| !crashed.contains(x)).count() >= c.quorum_size());
        if ok {
            crashes.push((NodeId::Server(*s), rng.gen_range(0..1500u64)));
        } else {
            crashed.remove(s);
        }
    }
    if rng.gen_bool(0.2) {
        let victim = clients.choose(&mut rng).expect("at least four clients").id;
        crashes.push((NodeId::Client(victim), rng.gen_range(0..800u64)));
    }

    let scenario = Scenario {
        net: NetConfig { seed, ..NetConfig::default() },
        servers,
        features: Features { piggyback: rng.gen_bool(0.75), gc: rng.gen_bool(0.75), batching: rng.gen_bool(0.5) },
        configs,
        initial: "c0".into(),
        files,
        clients,
        crashes,
    };
    scenario.validate().expect("generator stays within bounds");
    scenario
}
