//! Emulated processing IC.
//!
//! A node is a sequential state machine. Every inbound envelope is checked
//! in a fixed order: lifecycle, sender signature, permission, payload. Host
//! commands are answered with a signed response; node-to-node messages
//! (commitments, reveals, propagated shares) are not acknowledged.
//!
//! DKPG phases per session: `Idle -> Committed -> Revealed -> Finalized`,
//! or `Aborted` on a commitment mismatch. A node releases its public share
//! only once it holds the commitments of every member.

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use rand_chacha::ChaCha20Rng;
use rand_core::{RngCore, SeedableRng};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::elgamal::{dec_share, dleq_prove};
use crate::group::{digest, DomainParams, GroupElement, GroupError, Scalar};
use crate::identity::{Certificate, SigningKey, VerifyingKey};
use crate::ids::{HostId, KeyId, NodeId};
use crate::multisig::{cache_nonce, sig_share, IndexLedger, SignerKey};
use crate::threshold::{
    commit, commit_verify, secret_share_with, sum_elements, sum_scalars, Commitment, KeyTriplet,
};
use crate::wire::{
    error_payload, Dest, Envelope, ErrorCode, Frame, Opcode, Party, Reply, Request, ERROR_OPCODE,
};

pub const RNG_SHARE_LEN: usize = 32;
pub const PRF_SECRET_LEN: usize = 32;
pub const MAX_CACHE_BATCH: u16 = 1024;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum NodeError {
    #[error("lifecycle error: {0}")]
    Lifecycle(&'static str),
    #[error("expected {expected} incoming shares, got {got}")]
    WrongCount { expected: usize, got: usize },
    #[error("no key or pending installation for {0}")]
    UnknownKey(KeyId),
    #[error(transparent)]
    Group(#[from] GroupError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Lifecycle {
    Uninitialized,
    Operational,
}

/// Host permission mask.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash)]
pub struct Permissions(pub u8);

impl Permissions {
    pub const NONE: Self = Self(0);
    pub const KEYGEN: Self = Self(0x01);
    pub const DECRYPT: Self = Self(0x02);
    pub const SIGN: Self = Self(0x04);
    pub const RANDOM: Self = Self(0x08);
    pub const KEYPROP: Self = Self(0x10);
    pub const ALL: Self = Self(0x1f);

    pub fn allows(self, need: Self) -> bool {
        self.0 & need.0 == need.0
    }

    pub fn union(self, other: Self) -> Self {
        Self(self.0 | other.0)
    }
}

/// Permission a host needs for `op`; `None` for node-to-node operations.
pub fn required_permission(op: Opcode) -> Option<Permissions> {
    match op {
        Opcode::KeygenInit | Opcode::KeygenFinalize => Some(Permissions::KEYGEN),
        Opcode::DecShare => Some(Permissions::DECRYPT),
        Opcode::CacheNonce | Opcode::SigShare => Some(Permissions::SIGN),
        Opcode::RngShare => Some(Permissions::RANDOM),
        Opcode::KeypropInstall | Opcode::KeypropSplit | Opcode::KeypropStatus => {
            Some(Permissions::KEYPROP)
        }
        Opcode::StoreHash | Opcode::StorePubkey | Opcode::RevealRequest | Opcode::KeypropShare => {
            None
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct AclEntry {
    pub host: HostId,
    pub key: VerifyingKey,
    pub permissions: Permissions,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct NodeOptions {
    /// Reject signing indices that were already used. Only switched off by
    /// tests that show why it exists.
    pub replay_guard: bool,
}

impl Default for NodeOptions {
    fn default() -> Self {
        Self { replay_guard: true }
    }
}

/// Factory configuration, loaded once.
#[derive(Clone, Debug)]
pub struct Provisioning {
    pub params: DomainParams,
    pub acl: Vec<AclEntry>,
    pub peers: Vec<(NodeId, Certificate)>,
    pub options: NodeOptions,
}

/// Deviations a malicious IC can exhibit. Honest nodes use `Honest`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum Behavior {
    #[default]
    Honest,
    /// Sends nothing at all.
    Silent,
    /// Answers every host command with a refusal.
    Refuse,
    /// Returns `A_i + G` with a proof for the honest `A_i`.
    BadDecShare,
    /// Returns `sigma_ij + 1`.
    BadSigShare,
    /// Never sends its commitment; asks peers for their public shares
    /// instead.
    WithholdCommitment,
    /// Commits honestly, waits for every other reveal, then reveals
    /// `target_secret * G - sum(others)`.
    CraftAfterReveal { target_secret: u64 },
    /// Reveals `Y_i + G`.
    TamperReveal,
    /// Commits to `Hash(Y_i + G)` and reveals `Y_i`.
    TamperCommitment,
    /// Randomness shares are a constant byte.
    FixedRandom { byte: u8 },
}

impl Behavior {
    pub fn is_honest(&self) -> bool {
        matches!(self, Behavior::Honest)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum Phase {
    Idle,
    Committed,
    Revealed,
    Finalized,
    Aborted,
}

/// Counters exposed for tests and reports.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct NodeStats {
    pub processed: u64,
    pub rejected_auth: u64,
    /// Public shares received while this node's own commitment was unsent.
    pub reveals_before_commit: u64,
}

/// Secret material of one key slot.
#[derive(Clone)]
pub struct KeySecrets {
    pub secret: Scalar,
    pub prf_secret: Vec<u8>,
}

/// Everything a node would lose if it were compromised.
#[derive(Clone)]
pub struct NodeSecrets {
    pub node: NodeId,
    pub identity: SigningKey,
    pub keys: BTreeMap<KeyId, KeySecrets>,
    /// Propagation shares this node produced: `(key, target, share)`.
    pub sent_shares: Vec<(KeyId, NodeId, Scalar)>,
}

impl NodeSecrets {
    /// Canonical encodings of every stored secret.
    pub fn encodings(&self) -> Vec<Vec<u8>> {
        let mut out = vec![self.identity.secret_bytes()];
        for k in self.keys.values() {
            out.push(k.secret.to_bytes());
            out.push(k.prf_secret.clone());
        }
        out
    }
}

struct Entropy {
    rng: ChaCha20Rng,
    forced: VecDeque<u64>,
}

impl Entropy {
    fn scalar(&mut self, p: &DomainParams) -> Scalar {
        match self.forced.pop_front() {
            Some(v) => p.scalar(v),
            None => p.random_scalar(&mut self.rng),
        }
    }

    fn bytes<const N: usize>(&mut self) -> [u8; N] {
        let mut b = [0u8; N];
        self.rng.fill_bytes(&mut b);
        b
    }
}

struct KeySlot {
    secret: Scalar,
    public: GroupElement,
    aggregate: GroupElement,
    prf_secret: [u8; PRF_SECRET_LEN],
    ledger: IndexLedger,
}

#[derive(Default)]
struct Session {
    phase: Option<Phase>,
    members: Vec<NodeId>,
    host: Option<(Party, u64)>,
    triplet: Option<KeyTriplet>,
    prf_secret: [u8; PRF_SECRET_LEN],
    hashes: BTreeMap<NodeId, Commitment>,
    publics: BTreeMap<NodeId, GroupElement>,
    commit_sent: bool,
    withheld: bool,
    own_reveal: Option<GroupElement>,
    result: Option<(GroupElement, Vec<(NodeId, GroupElement)>)>,
}

impl Session {
    fn phase(&self) -> Phase {
        self.phase.unwrap_or(Phase::Idle)
    }
}

struct PendingProp {
    aggregate: GroupElement,
    sources: Vec<NodeId>,
    received: BTreeMap<NodeId, Scalar>,
    host: Party,
    req_seq: u64,
}

struct Config {
    params: DomainParams,
    acl: BTreeMap<HostId, AclEntry>,
    peers: BTreeMap<NodeId, VerifyingKey>,
    options: NodeOptions,
}

/// Per-command context.
#[derive(Clone, Copy)]
struct Ctx {
    from: Party,
    seq: u64,
    id: KeyId,
    op: Opcode,
    broadcast: bool,
    params: DomainParams,
}

pub struct IcNode {
    id: NodeId,
    identity: SigningKey,
    lifecycle: Lifecycle,
    config: Option<Config>,
    slots: BTreeMap<KeyId, KeySlot>,
    sessions: BTreeMap<KeyId, Session>,
    props: BTreeMap<KeyId, PendingProp>,
    entropy: Entropy,
    seq: u64,
    behavior: Behavior,
    outbox: Vec<Envelope>,
    stats: NodeStats,
    last_work: Option<(Opcode, u32)>,
    sent_shares: Vec<(KeyId, NodeId, Scalar)>,
}

impl std::fmt::Debug for IcNode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("IcNode")
            .field("id", &self.id)
            .field("lifecycle", &self.lifecycle)
            .field("behavior", &self.behavior)
            .field("keys", &self.slots.len())
            .finish_non_exhaustive()
    }
}

impl IcNode {
    /// A fresh, unprovisioned node. Identity key and entropy are derived
    /// from `(seed, id)`.
    pub fn new(id: NodeId, seed: u64) -> Self {
        let d = digest(b"qhsm/node-seed", &[&seed.to_be_bytes(), &id.0.to_be_bytes()]);
        let mut s = [0u8; 32];
        s.copy_from_slice(&d[..32]);
        let mut rng = ChaCha20Rng::from_seed(s);
        let identity = SigningKey::generate(&mut rng);
        Self {
            id,
            identity,
            lifecycle: Lifecycle::Uninitialized,
            config: None,
            slots: BTreeMap::new(),
            sessions: BTreeMap::new(),
            props: BTreeMap::new(),
            entropy: Entropy {
                rng,
                forced: VecDeque::new(),
            },
            seq: 0,
            behavior: Behavior::Honest,
            outbox: Vec::new(),
            stats: NodeStats::default(),
            last_work: None,
            sent_shares: Vec::new(),
        }
    }

    pub fn id(&self) -> NodeId {
        self.id
    }

    pub fn verifying_key(&self) -> VerifyingKey {
        self.identity.verifying_key()
    }

    pub fn certificate(&self) -> Certificate {
        Certificate {
            public_key: self.verifying_key(),
            issuer: "factory".into(),
        }
    }

    pub fn lifecycle(&self) -> Lifecycle {
        self.lifecycle
    }

    pub fn behavior(&self) -> Behavior {
        self.behavior
    }

    pub fn set_behavior(&mut self, b: Behavior) {
        self.behavior = b;
    }

    pub fn stats(&self) -> NodeStats {
        self.stats
    }

    /// Queues values to be returned by the next scalar draws (key shares,
    /// split randomness) in place of fresh randomness.
    pub fn force_scalars(&mut self, values: impl IntoIterator<Item = u64>) {
        self.entropy.forced.extend(values);
    }

    pub fn provision(&mut self, p: Provisioning) -> Result<(), NodeError> {
        if self.lifecycle == Lifecycle::Operational {
            return Err(NodeError::Lifecycle("already provisioned; reset first"));
        }
        self.config = Some(Config {
            params: p.params,
            acl: p.acl.into_iter().map(|a| (a.host, a)).collect(),
            peers: p
                .peers
                .into_iter()
                .filter(|(n, _)| *n != self.id)
                .map(|(n, c)| (n, c.public_key))
                .collect(),
            options: p.options,
        });
        self.lifecycle = Lifecycle::Operational;
        Ok(())
    }

    /// Wipes keys, sessions and configuration. The identity survives.
    pub fn reset(&mut self) {
        self.config = None;
        self.slots.clear();
        self.sessions.clear();
        self.props.clear();
        self.sent_shares.clear();
        self.lifecycle = Lifecycle::Uninitialized;
    }

    pub fn key_ids(&self) -> impl Iterator<Item = &KeyId> {
        self.slots.keys()
    }

    pub fn public_share(&self, key: &KeyId) -> Option<GroupElement> {
        self.slots.get(key).map(|s| s.public)
    }

    pub fn aggregate_key(&self, key: &KeyId) -> Option<GroupElement> {
        self.slots.get(key).map(|s| s.aggregate)
    }

    pub fn ledger(&self, key: &KeyId) -> Option<&IndexLedger> {
        self.slots.get(key).map(|s| &s.ledger)
    }

    pub fn session_phase(&self, session: &KeyId) -> Option<Phase> {
        self.sessions.get(session).map(Session::phase)
    }

    pub fn secrets(&self) -> NodeSecrets {
        NodeSecrets {
            node: self.id,
            identity: self.identity.clone(),
            keys: self
                .slots
                .iter()
                .map(|(k, s)| {
                    (
                        *k,
                        KeySecrets {
                            secret: s.secret,
                            prf_secret: s.prf_secret.to_vec(),
                        },
                    )
                })
                .collect(),
            sent_shares: self.sent_shares.clone(),
        }
    }

    /// Re-signs a (modified) envelope under this node's identity. Used by a
    /// controller colluding with this node.
    pub(crate) fn resign(&self, env: &Envelope) -> Option<Envelope> {
        let f = env.frame().ok()?;
        let f = Frame::sign(f.opcode, f.id, f.payload, &self.identity);
        Some(Envelope::seal(env.src, env.dst, env.seq, f.encode(), &self.identity))
    }

    /// Command the last [`IcNode::handle`] call did protocol work for, and
    /// how many items it covered (nonces cached, shares signed).
    pub fn last_work(&self) -> Option<(Opcode, u32)> {
        self.last_work
    }

    /// Processes one delivered envelope and returns the envelopes it emits.
    pub fn handle(&mut self, env: &Envelope) -> Vec<Envelope> {
        self.last_work = None;
        self.process(env);
        std::mem::take(&mut self.outbox)
    }

    /// Installs `sum(incoming) mod n` as this node's share of a propagated
    /// key. Needs the key metadata from a prior install command; one share
    /// per source node.
    pub fn keyprop_absorb(
        &mut self,
        key: KeyId,
        incoming: &[Scalar],
    ) -> Result<GroupElement, NodeError> {
        let params = self.params().ok_or(NodeError::Lifecycle("not provisioned"))?;
        let pending = self.props.get(&key).ok_or(NodeError::UnknownKey(key))?;
        if incoming.len() != pending.sources.len() {
            return Err(NodeError::WrongCount {
                expected: pending.sources.len(),
                got: incoming.len(),
            });
        }
        let secret = sum_scalars(incoming).map_err(|_| GroupError::ParameterMismatch)?;
        let public = params.mul_base(&secret)?;
        let aggregate = pending.aggregate;
        self.props.remove(&key);
        let prf_secret = self.entropy.bytes();
        self.slots.insert(
            key,
            KeySlot {
                secret,
                public,
                aggregate,
                prf_secret,
                ledger: IndexLedger::default(),
            },
        );
        Ok(public)
    }

    fn params(&self) -> Option<DomainParams> {
        self.config.as_ref().map(|c| c.params)
    }

    fn send(&mut self, to: Party, opcode: u8, id: KeyId, payload: Vec<u8>) {
        let frame = Frame::sign(opcode, id, payload, &self.identity);
        self.seq += 1;
        let env = Envelope::seal(
            Party::Node(self.id),
            Dest::To(to),
            self.seq,
            frame.encode(),
            &self.identity,
        );
        self.outbox.push(env);
    }

    fn send_request(&mut self, to: NodeId, id: KeyId, req: &Request) {
        self.send(Party::Node(to), req.opcode() as u8, id, req.encode());
    }

    fn reply(&mut self, ctx: &Ctx, reply: Reply) {
        self.reply_to(ctx.from, ctx.op, ctx.seq, ctx.id, reply);
    }

    fn reply_to(&mut self, to: Party, op: Opcode, req_seq: u64, id: KeyId, reply: Reply) {
        let code = reply.opcode_for(op);
        self.send(to, code, id, reply.encode(op, req_seq));
    }

    fn fail(&mut self, ctx: &Ctx, code: ErrorCode, detail: impl AsRef<str>) {
        self.fail_raw(ctx.from, ctx.op as u8, ctx.seq, ctx.id, code, detail.as_ref());
    }

    fn fail_raw(&mut self, to: Party, op: u8, seq: u64, id: KeyId, code: ErrorCode, detail: &str) {
        self.send(to, ERROR_OPCODE, id, error_payload(op, seq, code, detail));
    }

    fn host_key(&self, p: Party) -> Option<VerifyingKey> {
        match p {
            Party::Host(h) => self.config.as_ref()?.acl.get(&h).map(|a| a.key),
            Party::Node(_) => None,
        }
    }

    fn peer_key(&self, n: NodeId) -> Option<VerifyingKey> {
        self.config.as_ref()?.peers.get(&n).copied()
    }

    fn process(&mut self, env: &Envelope) {
        if self.behavior == Behavior::Silent || env.src == Party::Node(self.id) {
            return;
        }
        if let Dest::To(p) = env.dst {
            if p != Party::Node(self.id) {
                return;
            }
        }
        let frame = match env.frame() {
            Ok(f) => f,
            Err(e) => {
                if self.lifecycle == Lifecycle::Operational {
                    let detail = e.to_string();
                    self.fail_raw(env.src, 0, env.seq, KeyId::ZERO, ErrorCode::Malformed, &detail);
                }
                return;
            }
        };
        if frame.is_response() {
            // peer replies carry nothing we act on; count forgeries, never answer
            let key = match (self.config.as_ref(), env.src) {
                (Some(cfg), Party::Node(n)) => cfg.peers.get(&n).copied(),
                (Some(cfg), Party::Host(h)) => cfg.acl.get(&h).map(|a| a.key),
                (None, _) => return,
            };
            if !key.is_some_and(|k| env.verify(&k) && frame.verify(&k)) {
                self.stats.rejected_auth += 1;
            }
            return;
        }
        let Some(cfg) = self.config.as_ref() else {
            self.fail_raw(
                env.src,
                frame.opcode,
                env.seq,
                frame.id,
                ErrorCode::NonOperational,
                "not provisioned",
            );
            return;
        };
        let params = cfg.params;
        let sender = match env.src {
            Party::Host(h) => cfg.acl.get(&h).map(|a| (a.key, Some(a.permissions))),
            Party::Node(n) => cfg.peers.get(&n).map(|k| (*k, None)),
        };
        let reject = |node: &mut Self, detail: &str| {
            node.stats.rejected_auth += 1;
            node.fail_raw(env.src, frame.opcode, env.seq, frame.id, ErrorCode::AccessDenied, detail);
        };
        let Some((key, perms)) = sender else {
            return reject(self, "unknown sender");
        };
        if !env.verify(&key) || !frame.verify(&key) {
            return reject(self, "bad signature");
        }
        let Ok(op) = Opcode::from_u8(frame.opcode) else {
            let detail = format!("unknown opcode 0x{:02x}", frame.opcode);
            self.fail_raw(env.src, frame.opcode, env.seq, frame.id, ErrorCode::Malformed, &detail);
            return;
        };
        let allowed = match (required_permission(op), perms) {
            (Some(need), Some(have)) => have.allows(need),
            (None, None) => true,
            _ => false,
        };
        if !allowed {
            return reject(self, "operation not permitted");
        }
        let ctx = Ctx {
            from: env.src,
            seq: env.seq,
            id: frame.id,
            op,
            broadcast: env.dst == Dest::Broadcast,
            params,
        };
        let req = match Request::decode(op, &frame.payload, &params) {
            Ok(r) => r,
            Err(e) => return self.fail(&ctx, ErrorCode::Malformed, e.to_string()),
        };
        if self.behavior == Behavior::Refuse && perms.is_some() {
            return self.fail(&ctx, ErrorCode::Refused, "refused");
        }
        self.stats.processed += 1;
        self.last_work = Some((op, 1));
        match req {
            Request::KeygenInit { members } => self.keygen_init(&ctx, members),
            Request::StoreHash { commitment } => self.store_hash(&ctx, commitment),
            Request::StorePubkey { public } => self.store_pubkey(&ctx, public),
            Request::RevealRequest => self.reveal_request(&ctx),
            Request::KeygenFinalize => self.keygen_finalize(&ctx),
            Request::DecShare { c1, prove, seal } => self.dec_share(&ctx, c1, prove, seal),
            Request::CacheNonce { first, count } => self.cache(&ctx, first, count),
            Request::SigShare { items } => self.sign(&ctx, items),
            Request::RngShare { seal } => self.random(&ctx, seal),
            Request::KeypropInstall { aggregate, sources } => {
                self.keyprop_install(&ctx, aggregate, sources)
            }
            Request::KeypropSplit { targets } => self.keyprop_split(&ctx, targets),
            Request::KeypropShare { sealed } => self.keyprop_share(&ctx, sealed),
            Request::KeypropStatus => match self.slots.get(&ctx.id) {
                Some(s) => {
                    let public = s.public;
                    self.reply(&ctx, Reply::KeypropStatus { public })
                }
                None => self.fail(&ctx, ErrorCode::UnknownKey, "unknown key"),
            },
        }
    }

    fn sender_node(ctx: &Ctx) -> NodeId {
        match ctx.from {
            Party::Node(n) => n,
            Party::Host(_) => unreachable!("permission check routes host commands elsewhere"),
        }
    }

    fn keygen_init(&mut self, ctx: &Ctx, members: Vec<NodeId>) {
        if !members.contains(&self.id) {
            self.last_work = None;
            return;
        }
        let sorted: BTreeSet<NodeId> = members.iter().copied().collect();
        if sorted.len() != members.len() {
            return self.fail(ctx, ErrorCode::Malformed, "duplicate member");
        }
        if sorted
            .iter()
            .any(|m| *m != self.id && self.peer_key(*m).is_none())
        {
            return self.fail(ctx, ErrorCode::Malformed, "unknown member");
        }
        if self.slots.contains_key(&ctx.id) {
            return self.fail(ctx, ErrorCode::ProtocolOrder, "key id already in use");
        }
        let members: Vec<NodeId> = sorted.into_iter().collect();
        let p = ctx.params;
        let behavior = self.behavior;
        let session = self.sessions.entry(ctx.id).or_default();
        if session.phase() != Phase::Idle || session.host.is_some() {
            return self.fail(ctx, ErrorCode::ProtocolOrder, "session already started");
        }
        let x = self.entropy.scalar(&p);
        let Ok(triplet) = KeyTriplet::from_secret(&p, x) else {
            return self.fail(ctx, ErrorCode::Internal, "triplet generation failed");
        };
        let own_hash = match behavior {
            Behavior::TamperCommitment => match triplet.public.add(&p.generator()) {
                Ok(y) => commit(&y),
                Err(_) => triplet.commitment,
            },
            _ => triplet.commitment,
        };
        session.prf_secret = self.entropy.bytes();
        session.hashes.retain(|n, _| members.contains(n));
        session.hashes.insert(self.id, own_hash);
        session.triplet = Some(triplet);
        session.members = members.clone();
        session.host = Some((ctx.from, ctx.seq));
        session.phase = Some(Phase::Committed);
        let withhold = behavior == Behavior::WithholdCommitment;
        session.withheld = withhold;
        session.commit_sent = !withhold;
        let req = if withhold {
            Request::RevealRequest
        } else {
            Request::StoreHash {
                commitment: own_hash,
            }
        };
        let me = self.id;
        for m in members.iter().filter(|m| **m != me) {
            self.send_request(*m, ctx.id, &req);
        }
        self.advance(ctx.id, &p);
    }

    fn store_hash(&mut self, ctx: &Ctx, commitment: Commitment) {
        let from = Self::sender_node(ctx);
        let session = self.sessions.entry(ctx.id).or_default();
        if session.host.is_some() && !session.members.contains(&from) {
            return self.fail(ctx, ErrorCode::ProtocolOrder, "sender is not a session member");
        }
        if session.phase() > Phase::Committed {
            return self.fail(ctx, ErrorCode::ProtocolOrder, "commitment round is closed");
        }
        match session.hashes.get(&from) {
            Some(prev) if *prev != commitment => {
                return self.fail(ctx, ErrorCode::ProtocolOrder, "conflicting commitment");
            }
            Some(_) => return,
            None => {
                session.hashes.insert(from, commitment);
            }
        }
        self.advance(ctx.id, &ctx.params);
    }

    fn store_pubkey(&mut self, ctx: &Ctx, public: GroupElement) {
        let from = Self::sender_node(ctx);
        let Some(session) = self.sessions.get_mut(&ctx.id) else {
            self.stats.reveals_before_commit += 1;
            return self.fail(ctx, ErrorCode::ProtocolOrder, "no such session");
        };
        if !session.commit_sent {
            self.stats.reveals_before_commit += 1;
        }
        if !session.members.contains(&from) {
            return self.fail(ctx, ErrorCode::ProtocolOrder, "sender is not a session member");
        }
        if session.phase() != Phase::Revealed {
            return self.fail(
                ctx,
                ErrorCode::ProtocolOrder,
                "public share received before all commitments are held",
            );
        }
        if session.publics.contains_key(&from) {
            return self.fail(ctx, ErrorCode::ProtocolOrder, "duplicate public share");
        }
        session.publics.insert(from, public);
        self.advance(ctx.id, &ctx.params);
    }

    fn reveal_request(&mut self, ctx: &Ctx) {
        let from = Self::sender_node(ctx);
        let own = self.sessions.get(&ctx.id).and_then(|s| {
            let released = matches!(s.phase(), Phase::Revealed | Phase::Finalized);
            (released && s.members.contains(&from))
                .then_some(s.own_reveal)
                .flatten()
        });
        match own {
            Some(public) => self.send_request(from, ctx.id, &Request::StorePubkey { public }),
            None => self.fail(
                ctx,
                ErrorCode::ProtocolOrder,
                "public share is not released before all commitments are held",
            ),
        }
    }

    fn keygen_finalize(&mut self, ctx: &Ctx) {
        let Some(session) = self.sessions.get(&ctx.id) else {
            if ctx.broadcast {
                self.last_work = None;
            } else {
                self.fail(ctx, ErrorCode::UnknownKey, "no such session");
            }
            return;
        };
        match (session.phase(), session.result.clone()) {
            (Phase::Finalized, Some((aggregate, shares))) => {
                self.reply(ctx, Reply::KeygenDone { aggregate, shares })
            }
            (Phase::Aborted, _) => self.fail(ctx, ErrorCode::CommitmentFailure, "session aborted"),
            _ => self.fail(ctx, ErrorCode::ProtocolOrder, "session not finalized"),
        }
    }

    /// Moves a session forward as far as its inputs allow.
    fn advance(&mut self, id: KeyId, p: &DomainParams) {
        let behavior = self.behavior;
        let me = self.id;
        let Some(s) = self.sessions.get_mut(&id) else {
            return;
        };
        let t = s.members.len();
        let mut reveal = None;
        if s.phase() == Phase::Committed && !s.withheld && t > 0 && s.hashes.len() == t {
            s.phase = Some(Phase::Revealed);
            let y = s.triplet.as_ref().expect("committed session has a triplet").public;
            match behavior {
                Behavior::CraftAfterReveal { .. } => {}
                Behavior::TamperReveal => reveal = Some(y.add(&p.generator()).unwrap_or(y)),
                _ => reveal = Some(y),
            }
        }
        if let Behavior::CraftAfterReveal { target_secret } = behavior {
            let others: Vec<GroupElement> = s
                .publics
                .iter()
                .filter(|(n, _)| **n != me)
                .map(|(_, y)| *y)
                .collect();
            if s.phase() == Phase::Revealed && s.own_reveal.is_none() && others.len() + 1 == t {
                let target = p.mul_base(&p.scalar(target_secret));
                let sum = sum_elements(&others);
                if let (Ok(target), Ok(sum)) = (target, sum) {
                    reveal = target.sub(&sum).ok();
                }
            }
        }
        if let Some(y) = reveal {
            s.own_reveal = Some(y);
            s.publics.insert(me, y);
        }
        let peers: Vec<NodeId> = s.members.iter().copied().filter(|m| *m != me).collect();
        let mut outcome = None;
        if s.phase() == Phase::Revealed && s.publics.len() == t {
            let ys: Vec<GroupElement> = s.members.iter().map(|m| s.publics[m]).collect();
            let hs: Vec<Commitment> = s.members.iter().map(|m| s.hashes[m]).collect();
            let agg = sum_elements(&ys);
            outcome = Some(match (commit_verify(&ys, &hs), agg) {
                (Ok(true), Ok(aggregate)) => {
                    let shares: Vec<(NodeId, GroupElement)> =
                        s.members.iter().copied().zip(ys).collect();
                    s.phase = Some(Phase::Finalized);
                    s.result = Some((aggregate, shares.clone()));
                    Ok((aggregate, shares))
                }
                _ => {
                    s.phase = Some(Phase::Aborted);
                    Err(())
                }
            });
        }
        let host = s.host;
        let slot = match (&outcome, &s.triplet) {
            (Some(Ok((aggregate, _))), Some(tr)) => Some(KeySlot {
                secret: tr.secret,
                public: tr.public,
                aggregate: *aggregate,
                prf_secret: s.prf_secret,
                ledger: IndexLedger::default(),
            }),
            _ => None,
        };
        if let Some(public) = reveal {
            for m in &peers {
                self.send_request(*m, id, &Request::StorePubkey { public });
            }
        }
        if let Some(slot) = slot {
            self.slots.insert(id, slot);
        }
        if let (Some(outcome), Some((host, seq))) = (outcome, host) {
            match outcome {
                Ok((aggregate, shares)) => self.reply_to(
                    host,
                    Opcode::KeygenInit,
                    seq,
                    id,
                    Reply::KeygenDone { aggregate, shares },
                ),
                Err(()) => self.fail_raw(
                    host,
                    Opcode::KeygenInit as u8,
                    seq,
                    id,
                    ErrorCode::CommitmentFailure,
                    "public share does not match its commitment",
                ),
            }
        }
    }

    fn missing_key(&mut self, ctx: &Ctx) {
        if ctx.broadcast {
            self.last_work = None;
        } else {
            self.fail(ctx, ErrorCode::UnknownKey, "unknown key");
        }
    }

    fn dec_share(&mut self, ctx: &Ctx, c1: GroupElement, prove: bool, seal: bool) {
        let p = ctx.params;
        let Some(slot) = self.slots.get(&ctx.id) else {
            return self.missing_key(ctx);
        };
        let Ok(a) = dec_share(&c1, &slot.secret) else {
            return self.fail(ctx, ErrorCode::Malformed, "bad C1");
        };
        let sent = match self.behavior {
            Behavior::BadDecShare => a.add(&p.generator()).unwrap_or(a),
            _ => a,
        };
        let mut data = sent.encode();
        if prove {
            match dleq_prove(&p, &slot.secret, &c1, &slot.public, &a, &mut self.entropy.rng) {
                Ok(proof) => data.extend(proof.to_bytes()),
                Err(_) => return self.fail(ctx, ErrorCode::Internal, "proof failed"),
            }
        }
        if seal {
            let Some(hk) = self.host_key(ctx.from) else {
                return self.fail(ctx, ErrorCode::AccessDenied, "no host key to seal to");
            };
            data = hk.seal(&data, &mut self.entropy.rng);
        }
        self.reply(ctx, Reply::DecShare { data });
    }

    fn cache(&mut self, ctx: &Ctx, first: u64, count: u16) {
        if count == 0 || count > MAX_CACHE_BATCH || first.checked_add(count as u64).is_none() {
            return self.fail(ctx, ErrorCode::Malformed, "bad index range");
        }
        let p = ctx.params;
        let Some(slot) = self.slots.get(&ctx.id) else {
            return self.missing_key(ctx);
        };
        let mut nonces = Vec::with_capacity(count as usize);
        for j in first..first + count as u64 {
            if slot.ledger.is_consumed(j) {
                return self.fail(ctx, ErrorCode::ReplayRejected, format!("j={j}"));
            }
            match cache_nonce(&p, &slot.prf_secret, j) {
                Ok((_, r)) => nonces.push(r),
                Err(_) => return self.fail(ctx, ErrorCode::Internal, "prf failed"),
            }
        }
        self.last_work = Some((ctx.op, count as u32));
        self.reply(ctx, Reply::Nonces { first, nonces });
    }

    fn sign(&mut self, ctx: &Ctx, items: Vec<crate::wire::SignItem>) {
        let p = ctx.params;
        let guard = self
            .config
            .as_ref()
            .map(|c| c.options.replay_guard)
            .unwrap_or(true);
        let behavior = self.behavior;
        let me = self.id;
        let Some(slot) = self.slots.get_mut(&ctx.id) else {
            return self.missing_key(ctx);
        };
        if items.is_empty() {
            return self.fail(ctx, ErrorCode::Malformed, "empty batch");
        }
        let distinct: BTreeSet<u64> = items.iter().map(|i| i.j).collect();
        if distinct.len() != items.len() {
            return self.fail(ctx, ErrorCode::ReplayRejected, "index repeated within batch");
        }
        if guard {
            if let Some(j) = items.iter().map(|i| i.j).find(|j| slot.ledger.is_consumed(*j)) {
                return self.fail(ctx, ErrorCode::ReplayRejected, format!("j={j}"));
            }
        }
        let key = SignerKey {
            params: &p,
            node: me,
            secret: &slot.secret,
            prf_secret: &slot.prf_secret,
        };
        let mut out = Vec::with_capacity(items.len());
        for it in &items {
            let mut scratch = IndexLedger::default();
            let ledger = if guard { &mut slot.ledger } else { &mut scratch };
            match sig_share(&key, ledger, &it.digest, it.j, &it.nonce) {
                Ok(share) => {
                    let sigma = match behavior {
                        Behavior::BadSigShare => share.sigma.add(&p.one()).unwrap_or(share.sigma),
                        _ => share.sigma,
                    };
                    out.push((share.j, sigma, share.epsilon));
                }
                Err(e) => return self.fail(ctx, ErrorCode::ReplayRejected, e.to_string()),
            }
        }
        self.last_work = Some((ctx.op, out.len() as u32));
        self.reply(ctx, Reply::SigShares { items: out });
    }

    fn random(&mut self, ctx: &Ctx, seal: bool) {
        let mut data = match self.behavior {
            Behavior::FixedRandom { byte } => vec![byte; RNG_SHARE_LEN],
            _ => self.entropy.bytes::<RNG_SHARE_LEN>().to_vec(),
        };
        if seal {
            let Some(hk) = self.host_key(ctx.from) else {
                return self.fail(ctx, ErrorCode::AccessDenied, "no host key to seal to");
            };
            data = hk.seal(&data, &mut self.entropy.rng);
        }
        self.reply(ctx, Reply::Random { data });
    }

    fn keyprop_install(&mut self, ctx: &Ctx, aggregate: GroupElement, sources: Vec<NodeId>) {
        if self.slots.contains_key(&ctx.id) || self.props.contains_key(&ctx.id) {
            return self.fail(ctx, ErrorCode::ProtocolOrder, "key already installed");
        }
        let distinct: BTreeSet<NodeId> = sources.iter().copied().collect();
        if sources.is_empty()
            || distinct.len() != sources.len()
            || sources.iter().any(|s| self.peer_key(*s).is_none())
        {
            return self.fail(ctx, ErrorCode::Malformed, "bad source list");
        }
        self.props.insert(
            ctx.id,
            PendingProp {
                aggregate,
                sources,
                received: BTreeMap::new(),
                host: ctx.from,
                req_seq: ctx.seq,
            },
        );
        self.reply(ctx, Reply::Ack);
    }

    fn keyprop_split(&mut self, ctx: &Ctx, targets: Vec<NodeId>) {
        let p = ctx.params;
        let Some(secret) = self.slots.get(&ctx.id).map(|s| s.secret) else {
            return self.missing_key(ctx);
        };
        let distinct: BTreeSet<NodeId> = targets.iter().copied().collect();
        let keys: Option<Vec<VerifyingKey>> = targets.iter().map(|t| self.peer_key(*t)).collect();
        let (Some(keys), true) = (keys, !targets.is_empty() && distinct.len() == targets.len())
        else {
            return self.fail(ctx, ErrorCode::Malformed, "bad target list");
        };
        let shares = if targets.len() == 1 {
            vec![secret]
        } else {
            let randoms: Vec<Scalar> = (1..targets.len()).map(|_| self.entropy.scalar(&p)).collect();
            match secret_share_with(&p, &secret, &randoms) {
                Ok(v) => v.0,
                Err(_) => return self.fail(ctx, ErrorCode::Internal, "split failed"),
            }
        };
        for ((target, key), share) in targets.iter().zip(keys).zip(shares) {
            self.sent_shares.push((ctx.id, *target, share));
            let sealed = key.seal(&share.to_bytes(), &mut self.entropy.rng);
            self.send_request(*target, ctx.id, &Request::KeypropShare { sealed });
        }
        self.reply(ctx, Reply::Ack);
    }

    fn keyprop_share(&mut self, ctx: &Ctx, sealed: Vec<u8>) {
        let from = Self::sender_node(ctx);
        let p = ctx.params;
        let Some(pending) = self.props.get(&ctx.id) else {
            return self.fail(ctx, ErrorCode::ProtocolOrder, "key metadata not installed");
        };
        if !pending.sources.contains(&from) || pending.received.contains_key(&from) {
            return self.fail(ctx, ErrorCode::ProtocolOrder, "unexpected share");
        }
        let share = self
            .identity
            .open(&sealed)
            .ok()
            .and_then(|b| p.scalar_from_bytes(&b).ok());
        let Some(share) = share else {
            return self.fail(ctx, ErrorCode::Malformed, "undecodable share");
        };
        let pending = self.props.get_mut(&ctx.id).expect("checked above");
        pending.received.insert(from, share);
        if pending.received.len() < pending.sources.len() {
            return;
        }
        let incoming: Vec<Scalar> = pending.sources.iter().map(|s| pending.received[s]).collect();
        let (host, req_seq) = (pending.host, pending.req_seq);
        match self.keyprop_absorb(ctx.id, &incoming) {
            Ok(public) => self.reply_to(
                host,
                Opcode::KeypropStatus,
                req_seq,
                ctx.id,
                Reply::KeypropStatus { public },
            ),
            Err(e) => self.fail_raw(
                host,
                Opcode::KeypropInstall as u8,
                req_seq,
                ctx.id,
                ErrorCode::WrongCount,
                &e.to_string(),
            ),
        }
    }
}
