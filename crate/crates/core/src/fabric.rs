//! Untrusted controller and buses.
//!
//! Time is a logical slot counter. An envelope submitted during slot `s` is
//! delivered in slot `s + 1` unless an adversary rule says otherwise. Within
//! a slot, nodes process their deliveries in parallel; what they emit is
//! routed in node-id order, so runs are reproducible from the seed alone.
//!
//! Every routing decision is appended to the [`Transcript`], which is also
//! the adversary's eavesdropping view.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::fmt;
use std::str::FromStr;

use rand_chacha::ChaCha20Rng;
use rand_core::{RngCore, SeedableRng};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::group::{digest, hex, DomainParams};
use crate::ids::{HostId, NodeId};
use crate::node::{Behavior, IcNode, NodeSecrets};
use crate::wire::{Dest, Envelope, Frame, Opcode, Party, Reply, Request, ERROR_OPCODE};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum FabricError {
    #[error("adversary names unknown node {0}")]
    UnknownNode(NodeId),
    #[error("duplicate node {0}")]
    DuplicateNode(NodeId),
    #[error("rule {index}: {reason}")]
    InvalidRule { index: usize, reason: String },
}

/// Pattern over senders and receivers: `*`, `host`, `host<N>`, `node`,
/// `ic<N>` or `broadcast`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum PartyPattern {
    Any,
    AnyHost,
    Host(HostId),
    AnyNode,
    Node(NodeId),
    Broadcast,
}

impl FromStr for PartyPattern {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        let num = |rest: &str| rest.parse::<u16>().map_err(|_| format!("bad party pattern {s:?}"));
        Ok(match s {
            "*" => Self::Any,
            "host" => Self::AnyHost,
            "node" | "ic" => Self::AnyNode,
            "broadcast" => Self::Broadcast,
            _ if s.starts_with("host") => Self::Host(HostId(num(&s[4..])?)),
            _ if s.starts_with("ic") => Self::Node(NodeId(num(&s[2..])?)),
            _ => return Err(format!("bad party pattern {s:?}")),
        })
    }
}

impl TryFrom<String> for PartyPattern {
    type Error = String;
    fn try_from(s: String) -> Result<Self, String> {
        s.parse()
    }
}

impl fmt::Display for PartyPattern {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Any => f.write_str("*"),
            Self::AnyHost => f.write_str("host"),
            Self::Host(h) => h.fmt(f),
            Self::AnyNode => f.write_str("node"),
            Self::Node(n) => n.fmt(f),
            Self::Broadcast => f.write_str("broadcast"),
        }
    }
}

impl From<PartyPattern> for String {
    fn from(p: PartyPattern) -> String {
        p.to_string()
    }
}

impl PartyPattern {
    fn matches_party(&self, p: Party) -> bool {
        match (self, p) {
            (Self::Any, _) => true,
            (Self::AnyHost, Party::Host(_)) | (Self::AnyNode, Party::Node(_)) => true,
            (Self::Host(a), Party::Host(b)) => *a == b,
            (Self::Node(a), Party::Node(b)) => *a == b,
            _ => false,
        }
    }

    fn matches_dest(&self, d: Dest) -> bool {
        match d {
            Dest::Broadcast => matches!(self, Self::Any | Self::Broadcast),
            Dest::To(p) => self.matches_party(p),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FrameKind {
    Command,
    Response,
    Error,
}

fn frame_kind(f: &Frame) -> FrameKind {
    if f.opcode == ERROR_OPCODE {
        FrameKind::Error
    } else if f.is_response() {
        FrameKind::Response
    } else {
        FrameKind::Command
    }
}

/// All present fields must match.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Matcher {
    pub src: Option<PartyPattern>,
    pub dst: Option<PartyPattern>,
    pub opcode: Option<Opcode>,
    pub kind: Option<FrameKind>,
}

impl Matcher {
    fn matches(&self, env: &Envelope, frame: Option<&Frame>) -> bool {
        if self.src.is_some_and(|p| !p.matches_party(env.src)) {
            return false;
        }
        if self.dst.is_some_and(|p| !p.matches_dest(env.dst)) {
            return false;
        }
        if let Some(op) = self.opcode {
            if frame.and_then(Frame::request_opcode) != Some(op) {
                return false;
            }
        }
        if let Some(kind) = self.kind {
            if frame.map(frame_kind) != Some(kind) {
                return false;
            }
        }
        true
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "kebab-case", deny_unknown_fields)]
pub enum RuleAction {
    Drop,
    /// XOR one payload byte (offset taken modulo the payload length).
    Modify {
        offset: usize,
        #[serde(default = "default_xor")]
        xor: u8,
    },
    /// Protocol-aware change: shift a group element by `G`, flip a
    /// commitment byte, or bump a signature share.
    Tamper,
    Duplicate,
    Delay {
        slots: u64,
    },
    /// Deliver normally, then deliver the same bytes again `after` slots
    /// later.
    Replay {
        after: u64,
    },
    /// Deliver normally and also deliver a forged envelope (hex-encoded
    /// wire bytes).
    Inject {
        hex: String,
    },
}

fn default_xor() -> u8 {
    1
}

fn default_probability() -> f64 {
    1.0
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Rule {
    #[serde(default, rename = "match")]
    pub matcher: Matcher,
    pub action: RuleAction,
    #[serde(default = "default_probability")]
    pub probability: f64,
    #[serde(default)]
    pub max_hits: Option<u32>,
}

impl Rule {
    pub fn new(matcher: Matcher, action: RuleAction) -> Self {
        Self {
            matcher,
            action,
            probability: 1.0,
            max_hits: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MaliciousNode {
    pub node: NodeId,
    #[serde(default)]
    pub behavior: Behavior,
}

/// Which nodes are corrupted and what the controller does.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdversarySpec {
    #[serde(default)]
    pub malicious: Vec<MaliciousNode>,
    /// Controller rules; the first matching rule applies.
    #[serde(default)]
    pub rules: Vec<Rule>,
    /// Controller and malicious nodes share keys: modified envelopes from
    /// a malicious node are re-signed and stay authentic.
    #[serde(default)]
    pub collusion: bool,
    #[serde(default)]
    pub seed: u64,
}

impl AdversarySpec {
    pub fn validate(&self) -> Result<(), FabricError> {
        for (index, r) in self.rules.iter().enumerate() {
            let bad = |reason: &str| FabricError::InvalidRule {
                index,
                reason: reason.into(),
            };
            if !(0.0..=1.0).contains(&r.probability) {
                return Err(bad("probability must be in [0, 1]"));
            }
            match &r.action {
                RuleAction::Modify { xor: 0, .. } => return Err(bad("xor must be nonzero")),
                RuleAction::Inject { hex } => {
                    let bytes = ::hex::decode(hex).map_err(|e| bad(&e.to_string()))?;
                    Envelope::decode(&bytes).map_err(|e| bad(&e.to_string()))?;
                }
                _ => {}
            }
        }
        Ok(())
    }

    pub fn malicious_ids(&self) -> BTreeSet<NodeId> {
        self.malicious.iter().map(|m| m.node).collect()
    }
}

/// What happened to an envelope.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Action {
    Sent,
    Delivered(Party),
    Dropped(u32),
    Modified(u32),
    Tampered(u32),
    Duplicated(u32),
    Delayed(u32, u64),
    Replayed(u32, u64),
    Injected(u32),
    Unroutable,
}

impl Action {
    fn tag(&self) -> u8 {
        match self {
            Action::Sent => 0,
            Action::Delivered(_) => 1,
            Action::Dropped(_) => 2,
            Action::Modified(_) => 3,
            Action::Tampered(_) => 4,
            Action::Duplicated(_) => 5,
            Action::Delayed(..) => 6,
            Action::Replayed(..) => 7,
            Action::Injected(_) => 8,
            Action::Unroutable => 9,
        }
    }

    fn rule(&self) -> Option<u32> {
        match self {
            Action::Dropped(r)
            | Action::Modified(r)
            | Action::Tampered(r)
            | Action::Duplicated(r)
            | Action::Delayed(r, _)
            | Action::Replayed(r, _)
            | Action::Injected(r) => Some(*r),
            _ => None,
        }
    }

    fn extra(&self) -> u64 {
        match self {
            Action::Delivered(Party::Host(h)) => 0x1_0000 | h.0 as u64,
            Action::Delivered(Party::Node(n)) => 0x2_0000 | n.0 as u64,
            Action::Delayed(_, k) | Action::Replayed(_, k) => *k,
            _ => 0,
        }
    }
}

impl fmt::Display for Action {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Action::Sent => f.write_str("sent"),
            Action::Delivered(p) => write!(f, "delivered to {p}"),
            Action::Dropped(r) => write!(f, "dropped by rule {r}"),
            Action::Modified(r) => write!(f, "modified by rule {r}"),
            Action::Tampered(r) => write!(f, "tampered by rule {r}"),
            Action::Duplicated(r) => write!(f, "duplicated by rule {r}"),
            Action::Delayed(r, k) => write!(f, "delayed {k} slots by rule {r}"),
            Action::Replayed(r, k) => write!(f, "replayed after {k} slots by rule {r}"),
            Action::Injected(r) => write!(f, "injected by rule {r}"),
            Action::Unroutable => f.write_str("unroutable"),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Record {
    pub slot: u64,
    pub action: Action,
    /// Envelope wire bytes; empty for delivery records, whose bytes were
    /// logged when sent.
    pub bytes: Vec<u8>,
}

/// Append-only routing log.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Transcript {
    records: Vec<Record>,
}

impl Transcript {
    pub fn records(&self) -> &[Record] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Every envelope that travelled on the bus, after any modification.
    pub fn envelopes(&self) -> impl Iterator<Item = (u64, Envelope)> + '_ {
        self.records.iter().filter_map(|r| {
            if r.bytes.is_empty() {
                return None;
            }
            Envelope::decode(&r.bytes).ok().map(|e| (r.slot, e))
        })
    }

    /// Index of the first record whose bytes contain `needle`.
    pub fn find(&self, needle: &[u8]) -> Option<usize> {
        if needle.is_empty() {
            return None;
        }
        self.records
            .iter()
            .position(|r| r.bytes.windows(needle.len()).any(|w| w == needle))
    }

    /// Binary export. Per record: `slot u64 | action u8 | rule u32 |
    /// extra u64 | len u32 | bytes`, all big-endian; `rule` is
    /// `0xffffffff` when no rule applied.
    pub fn export(&self) -> Vec<u8> {
        let mut out = b"QHTR\x01".to_vec();
        for r in &self.records {
            out.extend(r.slot.to_be_bytes());
            out.push(r.action.tag());
            out.extend(r.action.rule().unwrap_or(u32::MAX).to_be_bytes());
            out.extend(r.action.extra().to_be_bytes());
            out.extend((r.bytes.len() as u32).to_be_bytes());
            out.extend(&r.bytes);
        }
        out
    }

    /// SHA3-512 fingerprint of [`Transcript::export`], hex.
    pub fn fingerprint(&self) -> String {
        hex(&digest(b"qhsm/transcript", &[&self.export()]))
    }

    /// One line per record.
    pub fn render_log(&self) -> String {
        let mut out = String::new();
        for r in &self.records {
            out.push_str(&format!("slot {:>5} {:<32}", r.slot, r.action.to_string()));
            if let Ok(env) = Envelope::decode(&r.bytes) {
                out.push_str(&format!(" {} -> {} seq={}", env.src, env.dst, env.seq));
                if let Ok(f) = env.frame() {
                    let name = f.request_opcode().map_or("?", |o| o.name());
                    let kind = match frame_kind(&f) {
                        FrameKind::Command => "cmd",
                        FrameKind::Response => "resp",
                        FrameKind::Error => "err",
                    };
                    out.push_str(&format!(" {name} {kind} key={}", f.id));
                }
                out.push_str(&format!(" {}B", r.bytes.len()));
            }
            out.push('\n');
        }
        out
    }
}

/// What a host finds in its inbox.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Delivery {
    Envelope(Envelope),
    /// An envelope this host sent could not be routed.
    Unroutable { dst: Dest, seq: u64 },
}

/// A command a node performed work for, for latency modeling.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Work {
    pub slot: u64,
    pub node: NodeId,
    pub opcode: Opcode,
    pub units: u32,
}

pub struct Fabric {
    params: DomainParams,
    nodes: BTreeMap<NodeId, IcNode>,
    hosts: BTreeSet<HostId>,
    inboxes: BTreeMap<HostId, VecDeque<Delivery>>,
    queue: BTreeMap<(u64, u64), Envelope>,
    order: u64,
    slot: u64,
    spec: AdversarySpec,
    hits: Vec<u32>,
    rng: ChaCha20Rng,
    transcript: Transcript,
    work: Vec<Work>,
    parallel: bool,
}

impl Fabric {
    pub fn new(
        params: DomainParams,
        nodes: Vec<IcNode>,
        spec: AdversarySpec,
    ) -> Result<Self, FabricError> {
        spec.validate()?;
        let mut map = BTreeMap::new();
        for n in nodes {
            let id = n.id();
            if map.insert(id, n).is_some() {
                return Err(FabricError::DuplicateNode(id));
            }
        }
        for m in &spec.malicious {
            map.get_mut(&m.node)
                .ok_or(FabricError::UnknownNode(m.node))?
                .set_behavior(m.behavior);
        }
        Ok(Self {
            params,
            nodes: map,
            hosts: BTreeSet::new(),
            inboxes: BTreeMap::new(),
            queue: BTreeMap::new(),
            order: 0,
            slot: 0,
            hits: vec![0; spec.rules.len()],
            rng: ChaCha20Rng::seed_from_u64(spec.seed),
            spec,
            transcript: Transcript::default(),
            work: Vec::new(),
            parallel: true,
        })
    }

    pub fn params(&self) -> &DomainParams {
        &self.params
    }

    /// Process each slot's node work on the rayon pool (the default) or
    /// on the calling thread. The result is identical either way.
    pub fn set_parallel(&mut self, on: bool) {
        self.parallel = on;
    }

    pub fn register_host(&mut self, host: HostId) {
        self.hosts.insert(host);
        self.inboxes.entry(host).or_default();
    }

    pub fn node(&self, id: NodeId) -> Option<&IcNode> {
        self.nodes.get(&id)
    }

    pub fn node_mut(&mut self, id: NodeId) -> Option<&mut IcNode> {
        self.nodes.get_mut(&id)
    }

    pub fn nodes(&self) -> impl Iterator<Item = &IcNode> {
        self.nodes.values()
    }

    pub fn node_ids(&self) -> Vec<NodeId> {
        self.nodes.keys().copied().collect()
    }

    pub fn slot(&self) -> u64 {
        self.slot
    }

    pub fn transcript(&self) -> &Transcript {
        &self.transcript
    }

    pub fn work_log(&self) -> &[Work] {
        &self.work
    }

    pub fn adversary(&self) -> &AdversarySpec {
        &self.spec
    }

    /// Nothing in flight.
    pub fn is_idle(&self) -> bool {
        self.queue.is_empty()
    }

    /// State of every corrupted node, as the adversary knows it.
    pub fn malicious_secrets(&self) -> Vec<NodeSecrets> {
        self.spec
            .malicious_ids()
            .iter()
            .filter_map(|id| self.nodes.get(id).map(IcNode::secrets))
            .collect()
    }

    pub fn honest_secrets(&self) -> Vec<NodeSecrets> {
        let bad = self.spec.malicious_ids();
        self.nodes
            .values()
            .filter(|n| !bad.contains(&n.id()))
            .map(IcNode::secrets)
            .collect()
    }

    pub fn take_inbox(&mut self, host: HostId) -> Vec<Delivery> {
        self.inboxes
            .get_mut(&host)
            .map(|q| q.drain(..).collect())
            .unwrap_or_default()
    }

    /// Hands an envelope to the controller in the current slot.
    pub fn submit(&mut self, env: Envelope) {
        self.route(env);
    }

    fn record(&mut self, action: Action, bytes: Vec<u8>) {
        self.transcript.records.push(Record {
            slot: self.slot,
            action,
            bytes,
        });
    }

    fn schedule(&mut self, env: Envelope, after: u64) {
        self.order += 1;
        self.queue.insert((self.slot + after, self.order), env);
    }

    fn roll(&mut self, p: f64) -> bool {
        if p >= 1.0 {
            return true;
        }
        let u = (self.rng.next_u64() >> 11) as f64 / (1u64 << 53) as f64;
        u < p
    }

    fn first_match(&mut self, env: &Envelope, frame: Option<&Frame>) -> Option<usize> {
        for i in 0..self.spec.rules.len() {
            let rule = &self.spec.rules[i];
            if rule.max_hits.is_some_and(|m| self.hits[i] >= m) {
                continue;
            }
            if !rule.matcher.matches(env, frame) {
                continue;
            }
            let p = rule.probability;
            if self.roll(p) {
                return Some(i);
            }
        }
        None
    }

    fn route(&mut self, env: Envelope) {
        self.record(Action::Sent, env.encode());
        let frame = env.frame().ok();
        let Some(i) = self.first_match(&env, frame.as_ref()) else {
            return self.schedule(env, 1);
        };
        self.hits[i] += 1;
        let r = i as u32;
        match self.spec.rules[i].action.clone() {
            RuleAction::Drop => self.record(Action::Dropped(r), env.encode()),
            RuleAction::Modify { offset, xor } => {
                let m = self.collude(modify(&env, frame.as_ref(), offset, xor));
                self.record(Action::Modified(r), m.encode());
                self.schedule(m, 1);
            }
            RuleAction::Tamper => {
                let m = match frame.as_ref().and_then(|f| tamper(&self.params, &env, f)) {
                    Some(m) => m,
                    None => modify(&env, frame.as_ref(), 0, 1),
                };
                let m = self.collude(m);
                self.record(Action::Tampered(r), m.encode());
                self.schedule(m, 1);
            }
            RuleAction::Duplicate => {
                self.record(Action::Duplicated(r), env.encode());
                self.schedule(env.clone(), 1);
                self.schedule(env, 1);
            }
            RuleAction::Delay { slots } => {
                self.record(Action::Delayed(r, slots), env.encode());
                self.schedule(env, 1 + slots);
            }
            RuleAction::Replay { after } => {
                self.record(Action::Replayed(r, after), env.encode());
                self.schedule(env.clone(), 1);
                self.schedule(env, 1 + after);
            }
            RuleAction::Inject { hex } => {
                self.schedule(env, 1);
                let forged = ::hex::decode(&hex)
                    .ok()
                    .and_then(|b| Envelope::decode(&b).ok());
                if let Some(forged) = forged {
                    self.record(Action::Injected(r), forged.encode());
                    self.schedule(forged, 1);
                }
            }
        }
    }

    /// Re-signs a modified envelope when its sender is a malicious node
    /// that colludes with the controller.
    fn collude(&self, env: Envelope) -> Envelope {
        let Party::Node(src) = env.src else {
            return env;
        };
        if !self.spec.collusion || !self.spec.malicious_ids().contains(&src) {
            return env;
        }
        self.nodes
            .get(&src)
            .and_then(|n| n.resign(&env))
            .unwrap_or(env)
    }

    fn unroutable(&mut self, env: Envelope) {
        self.record(Action::Unroutable, env.encode());
        if let Party::Host(h) = env.src {
            if let Some(q) = self.inboxes.get_mut(&h) {
                q.push_back(Delivery::Unroutable {
                    dst: env.dst,
                    seq: env.seq,
                });
            }
        }
    }

    /// Advances one slot: delivers everything due, runs the nodes, routes
    /// what they emit.
    pub fn step(&mut self) {
        self.slot += 1;
        let slot = self.slot;
        let due: Vec<(u64, u64)> = self
            .queue
            .range((slot, 0)..=(slot, u64::MAX))
            .map(|(k, _)| *k)
            .collect();
        let mut per_node: BTreeMap<NodeId, Vec<Envelope>> = BTreeMap::new();
        for k in due {
            let env = self.queue.remove(&k).expect("key from range");
            match env.dst {
                Dest::To(Party::Host(h)) if self.hosts.contains(&h) => {
                    self.record(Action::Delivered(Party::Host(h)), Vec::new());
                    self.inboxes
                        .get_mut(&h)
                        .expect("registered host")
                        .push_back(Delivery::Envelope(env));
                }
                Dest::To(Party::Node(n)) if self.nodes.contains_key(&n) => {
                    self.record(Action::Delivered(Party::Node(n)), Vec::new());
                    per_node.entry(n).or_default().push(env);
                }
                Dest::Broadcast => {
                    let targets: Vec<NodeId> = self
                        .nodes
                        .keys()
                        .copied()
                        .filter(|n| env.src != Party::Node(*n))
                        .collect();
                    for n in targets {
                        self.record(Action::Delivered(Party::Node(n)), Vec::new());
                        per_node.entry(n).or_default().push(env.clone());
                    }
                }
                Dest::To(_) => self.unroutable(env),
            }
        }
        if per_node.is_empty() {
            return;
        }
        let run = |(id, node): (&NodeId, &mut IcNode)| {
            let envs = per_node.get(id)?;
            let mut out = Vec::new();
            let mut worked = Vec::new();
            for e in envs {
                out.extend(node.handle(e));
                if let Some(w) = node.last_work() {
                    worked.push(w);
                }
            }
            Some((*id, out, worked))
        };
        let mut results: Vec<(NodeId, Vec<Envelope>, Vec<(Opcode, u32)>)> = if self.parallel {
            self.nodes.par_iter_mut().filter_map(run).collect()
        } else {
            self.nodes.iter_mut().filter_map(run).collect()
        };
        results.sort_by_key(|(id, _, _)| *id);
        for (id, out, worked) in results {
            self.work.extend(worked.into_iter().map(|(opcode, units)| Work {
                slot,
                node: id,
                opcode,
                units,
            }));
            for e in out {
                self.route(e);
            }
        }
    }
}

/// XORs one payload byte, keeping the stale signatures.
fn modify(env: &Envelope, frame: Option<&Frame>, offset: usize, xor: u8) -> Envelope {
    let mut out = env.clone();
    match frame {
        Some(f) if !f.payload.is_empty() => {
            let mut f = f.clone();
            let i = offset % f.payload.len();
            f.payload[i] ^= xor;
            out.body = f.encode();
        }
        _ if !out.body.is_empty() => {
            let i = offset % out.body.len();
            out.body[i] ^= xor;
        }
        _ => {}
    }
    out
}

/// Semantic tampering of the protocol value a frame carries.
fn tamper(p: &DomainParams, env: &Envelope, f: &Frame) -> Option<Envelope> {
    let g = p.generator();
    let op = f.request_opcode()?;
    let payload = if !f.is_response() && f.opcode != ERROR_OPCODE {
        let req = match Request::decode(op, &f.payload, p).ok()? {
            Request::StorePubkey { public } => Request::StorePubkey {
                public: public.add(&g).ok()?,
            },
            Request::StoreHash { mut commitment } => {
                commitment[0] ^= 1;
                Request::StoreHash { commitment }
            }
            Request::DecShare { c1, prove, seal } => Request::DecShare {
                c1: c1.add(&g).ok()?,
                prove,
                seal,
            },
            Request::SigShare { mut items } => {
                items.first_mut()?.digest[0] ^= 1;
                Request::SigShare { items }
            }
            _ => return None,
        };
        req.encode()
    } else {
        let (seq, reply) = Reply::decode(f, p).ok()?;
        let reply = match reply {
            Reply::DecShare { mut data } => {
                let w = p.element_width();
                let a = p.decode_element(data.get(..w)?).ok()?.add(&g).ok()?;
                data[..w].copy_from_slice(&a.encode());
                Reply::DecShare { data }
            }
            Reply::SigShares { mut items } => {
                let first = items.first_mut()?;
                first.1 = first.1.add(&p.one()).ok()?;
                Reply::SigShares { items }
            }
            Reply::KeygenDone { aggregate, shares } => Reply::KeygenDone {
                aggregate: aggregate.add(&g).ok()?,
                shares,
            },
            _ => return None,
        };
        reply.encode(op, seq)
    };
    let mut out = env.clone();
    out.body = Frame {
        payload,
        ..f.clone()
    }
    .encode();
    Some(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn party_patterns_parse() {
        assert_eq!("ic3".parse(), Ok(PartyPattern::Node(NodeId(3))));
        assert_eq!("host0".parse(), Ok(PartyPattern::Host(HostId(0))));
        assert_eq!("*".parse(), Ok(PartyPattern::Any));
        assert!("icx".parse::<PartyPattern>().is_err());
        assert!(PartyPattern::Broadcast.matches_dest(Dest::Broadcast));
        assert!(!PartyPattern::AnyNode.matches_dest(Dest::Broadcast));
        assert!(PartyPattern::AnyNode.matches_party(Party::Node(NodeId(9))));
    }

    #[test]
    fn rule_validation() {
        let spec = AdversarySpec {
            rules: vec![Rule {
                probability: 1.5,
                ..Rule::new(Matcher::default(), RuleAction::Drop)
            }],
            ..Default::default()
        };
        assert!(spec.validate().is_err());
        let spec = AdversarySpec {
            rules: vec![Rule::new(
                Matcher::default(),
                RuleAction::Modify { offset: 0, xor: 0 },
            )],
            ..Default::default()
        };
        assert!(spec.validate().is_err());
    }
}
