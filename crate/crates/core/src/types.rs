//! Shared protocol vocabulary: tags, values, configurations and configuration
//! sequences.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use sha2::{Digest, Sha256};
use thiserror::Error;

/// Identifier of a writer. `0` is reserved for the initial tag.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct WriterId(pub u32);

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ServerId(pub u32);

impl fmt::Display for ServerId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "s{}", self.0)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ClientId(pub u32);

impl fmt::Display for ClientId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "c{}", self.0)
    }
}

impl ClientId {
    /// Clients write under their own id, so ids must start at 1.
    pub fn writer_id(self) -> WriterId {
        WriterId(self.0)
    }
}

/// Version label `(ts, wid)`, ordered lexicographically.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Tag {
    pub ts: u64,
    pub wid: WriterId,
}

impl Tag {
    pub const INITIAL: Tag = Tag { ts: 0, wid: WriterId(0) };

    pub fn new(ts: u64, wid: u32) -> Self {
        Tag { ts, wid: WriterId(wid) }
    }

    /// The tag a writer installs after observing `self` as the maximum.
    pub fn successor(self, wid: WriterId) -> Tag {
        Tag { ts: self.ts + 1, wid }
    }
}

pub fn tag_max(a: Tag, b: Tag) -> Tag {
    if b > a {
        b
    } else {
        a
    }
}

impl fmt::Display for Tag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}.{}", self.ts, self.wid.0)
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
#[error("malformed tag `{0}`, expected `ts.wid`")]
pub struct TagParseError(String);

impl FromStr for Tag {
    type Err = TagParseError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (ts, wid) = s.split_once('.').ok_or_else(|| TagParseError(s.to_string()))?;
        let ts = ts.parse().map_err(|_| TagParseError(s.to_string()))?;
        let wid = wid.parse().map_err(|_| TagParseError(s.to_string()))?;
        Ok(Tag { ts, wid: WriterId(wid) })
    }
}

impl Serialize for Tag {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Tag {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Name of one atomic register.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ObjectId(String);

impl ObjectId {
    pub fn new(name: impl Into<String>) -> Result<Self, TypeError> {
        let name = name.into();
        if name.is_empty() {
            return Err(TypeError::EmptyObjectId);
        }
        Ok(ObjectId(name))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for ObjectId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// Name of a configuration sequence. Every object belongs to exactly one
/// scope; the blocks of a batched fragmented object share their file's scope.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ScopeId(String);

impl ScopeId {
    pub fn new(name: impl Into<String>) -> Self {
        ScopeId(name.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl From<&ObjectId> for ScopeId {
    fn from(obj: &ObjectId) -> Self {
        ScopeId(obj.0.clone())
    }
}

impl fmt::Display for ScopeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// A stored value or coded fragment, or the distinguished `⊥`.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub enum Value {
    Bytes(Vec<u8>),
    Bottom,
}

impl Value {
    pub fn initial() -> Self {
        Value::Bytes(Vec::new())
    }

    pub fn is_bottom(&self) -> bool {
        matches!(self, Value::Bottom)
    }

    pub fn bytes(&self) -> Option<&[u8]> {
        match self {
            Value::Bytes(b) => Some(b),
            Value::Bottom => None,
        }
    }

    pub fn digest(&self) -> ValueDigest {
        match self {
            Value::Bytes(b) => ValueDigest::of(b),
            Value::Bottom => ValueDigest::bottom(),
        }
    }
}

/// Short, stable fingerprint of a value as it appears in operation logs.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ValueDigest(String);

impl ValueDigest {
    const BOTTOM: &'static str = "_|_";

    pub fn of(bytes: &[u8]) -> Self {
        let hash = Sha256::digest(bytes);
        ValueDigest(hex::encode(&hash[..8]))
    }

    pub fn bottom() -> Self {
        ValueDigest(Self::BOTTOM.to_string())
    }

    pub fn initial() -> Self {
        Self::of(&[])
    }

    pub fn is_bottom(&self) -> bool {
        self.0 == Self::BOTTOM
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for ValueDigest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TaggedValue {
    pub tag: Tag,
    pub value: Value,
}

impl TaggedValue {
    pub fn initial() -> Self {
        TaggedValue { tag: Tag::INITIAL, value: Value::initial() }
    }
}

/// One of the `n` encoder outputs for a tagged value.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CodedElement {
    pub tag: Tag,
    pub fragment: Value,
    pub origin_index: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DapKind {
    Abd,
    Ec,
}

impl fmt::Display for DapKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DapKind::Abd => f.write_str("ABD"),
            DapKind::Ec => f.write_str("EC"),
        }
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum TypeError {
    #[error("object id must not be empty")]
    EmptyObjectId,
    #[error("configuration has no servers")]
    NoServers,
    #[error("configuration lists server {0} more than once")]
    DuplicateServer(ServerId),
    #[error("erasure-coded configuration needs 1 <= k <= n <= 255, got k={k}, n={n}")]
    BadCodeParams { n: usize, k: usize },
    #[error("delta must be at least 1")]
    BadDelta,
}

/// A service epoch: servers, DAP choice and codec parameters, placed at
/// index `id` of the global configuration sequence.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Configuration {
    pub id: u64,
    pub servers: Vec<ServerId>,
    pub dap: DapKind,
    /// Data fragments; ignored (treated as 1) for ABD.
    pub k: usize,
    /// Maximum concurrent put-data operations tolerated; bounds list length.
    pub delta: usize,
}

impl Configuration {
    pub fn abd(id: u64, servers: Vec<ServerId>) -> Result<Self, TypeError> {
        Self::validated(Configuration { id, servers, dap: DapKind::Abd, k: 1, delta: 1 })
    }

    pub fn ec(id: u64, servers: Vec<ServerId>, k: usize, delta: usize) -> Result<Self, TypeError> {
        Self::validated(Configuration { id, servers, dap: DapKind::Ec, k, delta })
    }

    pub fn validated(cfg: Configuration) -> Result<Self, TypeError> {
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), TypeError> {
        if self.servers.is_empty() {
            return Err(TypeError::NoServers);
        }
        let mut seen = std::collections::BTreeSet::new();
        for s in &self.servers {
            if !seen.insert(*s) {
                return Err(TypeError::DuplicateServer(*s));
            }
        }
        if self.dap == DapKind::Ec {
            let n = self.n();
            if self.k == 0 || self.k > n || n > 255 {
                return Err(TypeError::BadCodeParams { n, k: self.k });
            }
        }
        if self.delta == 0 {
            return Err(TypeError::BadDelta);
        }
        Ok(())
    }

    pub fn n(&self) -> usize {
        self.servers.len()
    }

    pub fn quorum_size(&self) -> usize {
        quorum_size(self)
    }

    /// Position of `server` among this configuration's servers, i.e. which
    /// encoder output it stores.
    pub fn position(&self, server: ServerId) -> Option<usize> {
        self.servers.iter().position(|s| *s == server)
    }

    pub fn with_id(mut self, id: u64) -> Self {
        self.id = id;
        self
    }

    /// Full rendering used to compare configurations across snapshots.
    pub fn fingerprint(&self) -> String {
        let servers: Vec<String> = self.servers.iter().map(|s| s.to_string()).collect();
        match self.dap {
            DapKind::Abd => format!("{}:ABD[{}]", self.id, servers.join(",")),
            DapKind::Ec => format!("{}:EC(k={},d={})[{}]", self.id, self.k, self.delta, servers.join(",")),
        }
    }
}

impl fmt::Display for Configuration {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.id)
    }
}

/// `⌈(n+k)/2⌉` for EC, `⌊n/2⌋+1` for ABD.
pub fn quorum_size(cfg: &Configuration) -> usize {
    let n = cfg.n();
    match cfg.dap {
        DapKind::Ec => (n + cfg.k).div_ceil(2),
        DapKind::Abd => n / 2 + 1,
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Status {
    P,
    F,
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ConfigEntry {
    pub cfg: Configuration,
    pub status: Status,
}

impl ConfigEntry {
    pub fn pending(cfg: Configuration) -> Self {
        ConfigEntry { cfg, status: Status::P }
    }

    pub fn finalized(cfg: Configuration) -> Self {
        ConfigEntry { cfg, status: Status::F }
    }

    pub fn id(&self) -> u64 {
        self.cfg.id
    }

    pub fn is_finalized(&self) -> bool {
        self.status == Status::F
    }
}

impl fmt::Display for ConfigEntry {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "<c{},{:?}>", self.cfg.id, self.status)
    }
}

/// A server's successor pointer; `None` is `⟨⊥,P⟩`.
pub type NextConfig = Option<ConfigEntry>;

pub fn next_id(next: &NextConfig) -> Option<u64> {
    next.as_ref().map(ConfigEntry::id)
}

#[derive(Debug, Error, PartialEq, Eq)]
#[error("index {index} already holds configuration {existing}, refusing {incoming}")]
pub struct SequenceConflict {
    pub index: u64,
    pub existing: String,
    pub incoming: String,
}

/// A client's sparse view of the global configuration list.
///
/// Index 0 always holds `⟨c0,F⟩`. Each index is write-once: a later insert at
/// a populated index may only promote `P` to `F` for the same configuration.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ConfigSequence {
    entries: BTreeMap<u64, ConfigEntry>,
}

impl ConfigSequence {
    pub fn new(c0: Configuration) -> Self {
        let mut entries = BTreeMap::new();
        entries.insert(0, ConfigEntry::finalized(c0.with_id(0)));
        ConfigSequence { entries }
    }

    /// Index of the last finalized entry.
    pub fn mu(&self) -> u64 {
        self.entries
            .iter()
            .rev()
            .find(|(_, e)| e.is_finalized())
            .map(|(i, _)| *i)
            .unwrap_or(0)
    }

    /// Index of the last populated entry.
    pub fn lambda(&self) -> u64 {
        self.entries.keys().next_back().copied().unwrap_or(0)
    }

    pub fn get(&self, index: u64) -> Option<&ConfigEntry> {
        self.entries.get(&index)
    }

    pub fn last_finalized(&self) -> &ConfigEntry {
        &self.entries[&self.mu()]
    }

    pub fn last(&self) -> &ConfigEntry {
        &self.entries[&self.lambda()]
    }

    /// Stores `entry` at its own id and returns what the slot now holds.
    pub fn insert(&mut self, entry: ConfigEntry) -> Result<ConfigEntry, SequenceConflict> {
        let index = entry.id();
        match self.entries.get_mut(&index) {
            None => {
                self.entries.insert(index, entry.clone());
                Ok(entry)
            }
            Some(existing) if existing.cfg == entry.cfg => {
                if entry.status == Status::F {
                    existing.status = Status::F;
                }
                Ok(existing.clone())
            }
            Some(existing) => Err(SequenceConflict {
                index,
                existing: existing.cfg.fingerprint(),
                incoming: entry.cfg.fingerprint(),
            }),
        }
    }

    pub fn finalize(&mut self, index: u64) -> Option<&ConfigEntry> {
        let e = self.entries.get_mut(&index)?;
        e.status = Status::F;
        Some(e)
    }

    /// Drops a garbage-collected entry. Index 0 is the entry point for fresh
    /// clients and is never removed.
    pub fn remove(&mut self, index: u64) {
        if index != 0 {
            self.entries.remove(&index);
        }
    }

    /// Highest populated index strictly below `index`.
    pub fn predecessor(&self, index: u64) -> Option<&ConfigEntry> {
        self.entries.range(..index).next_back().map(|(_, e)| e)
    }

    pub fn indices(&self) -> impl Iterator<Item = u64> + '_ {
        self.entries.keys().copied()
    }

    pub fn iter(&self) -> impl Iterator<Item = (u64, &ConfigEntry)> {
        self.entries.iter().map(|(i, e)| (*i, e))
    }

    pub fn snapshot(&self) -> SequenceSnapshot {
        SequenceSnapshot {
            mu: self.mu(),
            lambda: self.lambda(),
            entries: self
                .entries
                .iter()
                .map(|(i, e)| SnapshotEntry { index: *i, config: e.cfg.fingerprint(), status: e.status })
                .collect(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SnapshotEntry {
    pub index: u64,
    pub config: String,
    pub status: Status,
}

/// A configuration sequence as recorded at an operation's response.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SequenceSnapshot {
    pub mu: u64,
    pub lambda: u64,
    pub entries: Vec<SnapshotEntry>,
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn servers(n: u32) -> Vec<ServerId> {
        (0..n).map(ServerId).collect()
    }

    #[test]
    fn tag_max_examples() {
        assert_eq!(tag_max(Tag::new(1, 3), Tag::new(1, 5)), Tag::new(1, 5));
        assert_eq!(tag_max(Tag::new(2, 1), Tag::new(1, 9)), Tag::new(2, 1));
        let t = Tag::new(0, 4);
        assert_eq!(tag_max(Tag::INITIAL, t), t);
        assert_eq!(tag_max(t, Tag::INITIAL), t);
    }

    #[test]
    fn tag_text_form() {
        let t = Tag::new(12, 3);
        assert_eq!(t.to_string(), "12.3");
        assert_eq!("12.3".parse::<Tag>().unwrap(), t);
        assert!("12".parse::<Tag>().is_err());
        assert_eq!(serde_json::to_string(&t).unwrap(), "\"12.3\"");
    }

    #[test]
    fn quorum_sizes() {
        let ec = Configuration::ec(0, servers(11), 6, 5).unwrap();
        assert_eq!(quorum_size(&ec), 9);
        let abd = Configuration::abd(0, servers(11)).unwrap();
        assert_eq!(quorum_size(&abd), 6);
        let small = Configuration::ec(0, servers(3), 2, 1).unwrap();
        assert_eq!(quorum_size(&small), 3);
    }

    #[test]
    fn configuration_validation() {
        assert_eq!(Configuration::abd(0, vec![]), Err(TypeError::NoServers));
        assert_eq!(
            Configuration::ec(0, servers(3), 4, 1),
            Err(TypeError::BadCodeParams { n: 3, k: 4 })
        );
        assert_eq!(
            Configuration::abd(0, vec![ServerId(1), ServerId(1)]),
            Err(TypeError::DuplicateServer(ServerId(1)))
        );
        assert_eq!(Configuration::ec(0, servers(3), 2, 0), Err(TypeError::BadDelta));
        assert!(ObjectId::new("").is_err());
    }

    #[test]
    fn bottom_is_not_empty_bytes() {
        assert_ne!(Value::Bottom, Value::Bytes(vec![]));
        assert_ne!(Value::Bottom.digest(), Value::initial().digest());
        assert!(Value::Bottom.digest().is_bottom());
    }

    #[test]
    fn sequence_markers_and_write_once() {
        let c0 = Configuration::abd(0, servers(3)).unwrap();
        let mut seq = ConfigSequence::new(c0.clone());
        assert_eq!((seq.mu(), seq.lambda()), (0, 0));

        let c2 = Configuration::abd(2, servers(5)).unwrap();
        seq.insert(ConfigEntry::pending(c2.clone())).unwrap();
        assert_eq!((seq.mu(), seq.lambda()), (0, 2));

        // Promotion P -> F is allowed, demotion is ignored.
        seq.insert(ConfigEntry::finalized(c2.clone())).unwrap();
        let kept = seq.insert(ConfigEntry::pending(c2.clone())).unwrap();
        assert_eq!(kept.status, Status::F);
        assert_eq!(seq.mu(), 2);

        let other = Configuration::abd(2, servers(3)).unwrap();
        assert!(seq.insert(ConfigEntry::pending(other)).is_err());

        seq.remove(0);
        assert!(seq.get(0).is_some());
        assert_eq!(seq.predecessor(2).unwrap().id(), 0);
    }

    #[test]
    fn ec_quorums_intersect_in_k_exhaustively() {
        // Any two subsets of size q of an n-set share at least 2q - n members.
        for n in 1..=7usize {
            for k in 1..=n {
                let cfg = Configuration::ec(0, servers(n as u32), k, 1).unwrap();
                let q = cfg.quorum_size();
                let subsets: Vec<u32> = (0u32..(1 << n)).filter(|m| m.count_ones() as usize == q).collect();
                for a in &subsets {
                    for b in &subsets {
                        assert!((a & b).count_ones() as usize >= k, "n={n} k={k}");
                    }
                }
            }
            let abd = Configuration::abd(0, servers(n as u32)).unwrap();
            let q = abd.quorum_size();
            let subsets: Vec<u32> = (0u32..(1 << n)).filter(|m| m.count_ones() as usize == q).collect();
            for a in &subsets {
                for b in &subsets {
                    assert!(a & b != 0, "majorities of {n} must intersect");
                }
            }
        }
    }

    proptest! {
        #[test]
        fn tag_order_is_total(a in (0u64..5, 0u32..5), b in (0u64..5, 0u32..5), c in (0u64..5, 0u32..5)) {
            let (a, b, c) = (Tag::new(a.0, a.1), Tag::new(b.0, b.1), Tag::new(c.0, c.1));
            // Exactly one of <, =, > holds, matching the lexicographic definition.
            let lex = (a.ts, a.wid.0).cmp(&(b.ts, b.wid.0));
            prop_assert_eq!(a.cmp(&b), lex);
            prop_assert_eq!(a == b, b == a);
            if a <= b && b <= c { prop_assert!(a <= c); }
            if a <= b && b <= a { prop_assert_eq!(a, b); }
            prop_assert!(Tag::INITIAL <= a);
        }

        #[test]
        fn sampled_large_quorums_intersect(n in 8usize..40, kseed in 0usize..1000, seed in 0u64..1000) {
            use rand::{seq::SliceRandom, SeedableRng};
            let k = 1 + kseed % n;
            let cfg = Configuration::ec(0, servers(n as u32), k, 1).unwrap();
            let q = cfg.quorum_size();
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let mut all = servers(n as u32);
            all.shuffle(&mut rng);
            let a: std::collections::BTreeSet<_> = all[..q].iter().copied().collect();
            all.shuffle(&mut rng);
            let b: std::collections::BTreeSet<_> = all[..q].iter().copied().collect();
            prop_assert!(a.intersection(&b).count() >= k);
            let maj = Configuration::abd(0, servers(n as u32)).unwrap().quorum_size();
            prop_assert!(2 * maj > n);
        }
    }
}
