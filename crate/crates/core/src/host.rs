//! Remote host: drives the quorum protocols over the fabric, combines
//! shares and checks every result against public data.
//!
//! Each operation submits its commands, then steps the fabric until every
//! expected reply is in or the slot budget (`budget_factor * t`) runs out.
//! A reply counts only if its envelope and frame verify under the sender's
//! certified key, it is addressed to this host, and it echoes the sequence
//! number of a command this host is waiting on.

use std::collections::{BTreeMap, BTreeSet};
use std::ops::Range;

use rand_chacha::ChaCha20Rng;
use rand_core::SeedableRng;
use thiserror::Error;

use crate::elgamal::{aggr_dec, dleq_verify, encrypt, Ciphertext, DleqProof};
use crate::fabric::{AdversarySpec, Delivery, Fabric, FabricError};
use crate::group::{digest, message_digest, DomainParams, GroupElement};
use crate::identity::{SigningKey, VerifyingKey};
use crate::ids::{HostId, KeyId, NodeId};
use crate::multisig::{
    aggregate, challenge, verify, AggregateSignature, NonceCache, NonceCacheEntry, SignatureShare,
};
use crate::node::{AclEntry, IcNode, NodeOptions, Permissions, Provisioning};
use crate::threshold::{drng_combine, sum_elements, QuorumKey};
use crate::wire::{Dest, Envelope, ErrorCode, Frame, Party, Reply, Request, SignItem};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum HostError {
    #[error("invalid quorum: {0}")]
    InvalidQuorum(String),
    #[error("setup failed: {0}")]
    Setup(String),
    #[error("quorum {quorum} holds no key {key}")]
    UnknownKey { quorum: u32, key: KeyId },
    #[error("incomplete quorum: no valid reply from {}", list(.missing))]
    IncompleteQuorum { missing: Vec<NodeId> },
    #[error("timed out after {slots} slots waiting for {}", list(.missing))]
    Timeout { slots: u64, missing: Vec<NodeId> },
    #[error("commitment failure reported by {}", list(.nodes))]
    CommitmentFailure { nodes: Vec<NodeId> },
    #[error("decryption share from {node} failed its proof")]
    ShareProofFailure { node: NodeId },
    #[error("signing failed at j={j}: {reason}")]
    SigningFailed { j: u64, reason: String },
    #[error("index j={j} rejected as replayed by {}", list(.nodes))]
    ReplayRejected { j: u64, nodes: Vec<NodeId> },
    #[error("no cached nonce available")]
    NoCachedNonce,
    #[error("forged signature share at j={j}{}", .node.map(|n| format!(" from {n}")).unwrap_or_default())]
    ForgeryDetected { j: u64, node: Option<NodeId> },
    #[error("inconsistent key material: {0}")]
    InconsistentKeys(String),
    #[error("{node} answered {code:?}: {detail}")]
    Node {
        node: NodeId,
        code: ErrorCode,
        detail: String,
    },
    #[error("malformed reply from {node}: {detail}")]
    BadReply { node: NodeId, detail: String },
    #[error("crypto error: {0}")]
    Crypto(String),
}

fn list(nodes: &[NodeId]) -> String {
    nodes.iter().map(|n| n.to_string()).collect::<Vec<_>>().join(", ")
}

impl HostError {
    /// Short machine-readable reason.
    pub fn reason(&self) -> &'static str {
        match self {
            HostError::InvalidQuorum(_) => "invalid-quorum",
            HostError::Setup(_) => "setup",
            HostError::UnknownKey { .. } => "unknown-key",
            HostError::IncompleteQuorum { .. } => "incomplete-quorum",
            HostError::Timeout { .. } => "timeout",
            HostError::CommitmentFailure { .. } => "commitment-failure",
            HostError::ShareProofFailure { .. } => "share-proof-failure",
            HostError::SigningFailed { .. } => "signing-failed",
            HostError::ReplayRejected { .. } => "replay-rejected",
            HostError::NoCachedNonce => "no-cached-nonce",
            HostError::ForgeryDetected { .. } => "forgery-detected",
            HostError::InconsistentKeys(_) => "inconsistent-keys",
            HostError::Node { .. } => "node-error",
            HostError::BadReply { .. } => "bad-reply",
            HostError::Crypto(_) => "crypto",
        }
    }
}

impl From<FabricError> for HostError {
    fn from(e: FabricError) -> Self {
        HostError::Setup(e.to_string())
    }
}

/// A coalition of ICs jointly holding keys. The threshold equals the size.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct QuorumConfig {
    pub quorum_id: u32,
    pub nodes: Vec<NodeId>,
    pub threshold: usize,
    /// Vendor or foundry label per node.
    pub vendors: Vec<String>,
}

impl QuorumConfig {
    pub fn new(quorum_id: u32, nodes: Vec<NodeId>) -> Self {
        let vendors = nodes.iter().map(|n| format!("vendor-{}", n.0)).collect();
        Self {
            quorum_id,
            threshold: nodes.len(),
            nodes,
            vendors,
        }
    }

    /// Nodes `first..first + t`.
    pub fn range(quorum_id: u32, first: u16, t: u16) -> Self {
        Self::new(quorum_id, (first..first + t).map(NodeId).collect())
    }

    pub fn size(&self) -> usize {
        self.nodes.len()
    }

    pub fn validate(&self) -> Result<(), HostError> {
        let distinct: BTreeSet<_> = self.nodes.iter().collect();
        let bad = |m: &str| Err(HostError::InvalidQuorum(format!("quorum {}: {m}", self.quorum_id)));
        if self.nodes.is_empty() {
            return bad("no nodes");
        }
        if distinct.len() != self.nodes.len() {
            return bad("duplicate node ids");
        }
        if self.threshold != self.nodes.len() {
            return bad("threshold must equal the quorum size");
        }
        if self.vendors.len() != self.nodes.len() {
            return bad("one vendor label per node");
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct HostOptions {
    /// Ask for and check DLEQ proofs on decryption shares.
    pub verify_proofs: bool,
    /// Ask nodes to seal decryption and randomness shares to the host key.
    pub seal_responses: bool,
    /// Slot budget per protocol phase is `budget_factor * t`.
    pub budget_factor: u64,
}

impl Default for HostOptions {
    fn default() -> Self {
        Self {
            verify_proofs: true,
            seal_responses: true,
            budget_factor: 4,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct HostStats {
    pub commands: u64,
    pub rejected_auth: u64,
    pub stale_replies: u64,
}

type Expected = BTreeMap<(u64, NodeId), KeyId>;

pub struct Host {
    id: HostId,
    key: SigningKey,
    params: DomainParams,
    options: HostOptions,
    peers: BTreeMap<NodeId, VerifyingKey>,
    seq: u64,
    keys: BTreeMap<(u32, KeyId), QuorumKey>,
    caches: BTreeMap<(u32, KeyId), NonceCache>,
    spent: BTreeMap<(u32, KeyId), BTreeMap<u64, NonceCacheEntry>>,
    next_j: BTreeMap<(u32, KeyId), u64>,
    rng: ChaCha20Rng,
    stats: HostStats,
}

impl Host {
    pub fn new(id: HostId, seed: u64, params: DomainParams, options: HostOptions) -> Self {
        let d = digest(b"qhsm/host-seed", &[&seed.to_be_bytes(), &id.0.to_be_bytes()]);
        let mut s = [0u8; 32];
        s.copy_from_slice(&d[..32]);
        let mut rng = ChaCha20Rng::from_seed(s);
        let key = SigningKey::generate(&mut rng);
        Self {
            id,
            key,
            params,
            options,
            peers: BTreeMap::new(),
            seq: 0,
            keys: BTreeMap::new(),
            caches: BTreeMap::new(),
            spent: BTreeMap::new(),
            next_j: BTreeMap::new(),
            rng,
            stats: HostStats::default(),
        }
    }

    pub fn id(&self) -> HostId {
        self.id
    }

    pub fn verifying_key(&self) -> VerifyingKey {
        self.key.verifying_key()
    }

    pub fn params(&self) -> &DomainParams {
        &self.params
    }

    pub fn options(&self) -> HostOptions {
        self.options
    }

    pub fn set_options(&mut self, options: HostOptions) {
        self.options = options;
    }

    pub fn stats(&self) -> HostStats {
        self.stats
    }

    /// Registers a node's certified identity key.
    pub fn trust_node(&mut self, node: NodeId, key: VerifyingKey) {
        self.peers.insert(node, key);
    }

    pub fn key(&self, quorum: u32, key: KeyId) -> Option<&QuorumKey> {
        self.keys.get(&(quorum, key))
    }

    pub fn cached(&self, quorum: u32, key: KeyId) -> usize {
        self.caches.get(&(quorum, key)).map_or(0, NonceCache::len)
    }

    /// Indices this host has already sent out for signing.
    pub fn spent_indices(&self, quorum: u32, key: KeyId) -> Vec<u64> {
        self.spent
            .get(&(quorum, key))
            .map(|m| m.keys().copied().collect())
            .unwrap_or_default()
    }

    fn budget(&self, t: usize) -> u64 {
        self.options.budget_factor * t.max(1) as u64
    }

    fn send(&mut self, fab: &mut Fabric, dst: Dest, key: KeyId, req: &Request) -> u64 {
        self.seq += 1;
        let f = Frame::sign(req.opcode() as u8, key, req.encode(), &self.key);
        let env = Envelope::seal(Party::Host(self.id), dst, self.seq, f.encode(), &self.key);
        self.stats.commands += 1;
        fab.submit(env);
        self.seq
    }

    /// One command broadcast; every quorum member must answer it. When
    /// another quorum also holds `key`, members are addressed one by one
    /// so the other quorum stays idle.
    fn broadcast(&mut self, fab: &mut Fabric, q: &QuorumConfig, key: KeyId, req: &Request) -> Expected {
        let shared = self
            .keys
            .keys()
            .any(|(other, k)| *k == key && *other != q.quorum_id);
        if shared {
            return self.unicast(fab, &q.nodes, key, req);
        }
        let seq = self.send(fab, Dest::Broadcast, key, req);
        q.nodes.iter().map(|n| ((seq, *n), key)).collect()
    }

    fn unicast(&mut self, fab: &mut Fabric, nodes: &[NodeId], key: KeyId, req: &Request) -> Expected {
        nodes
            .iter()
            .map(|n| {
                let seq = self.send(fab, Dest::To(Party::Node(*n)), key, req);
                ((seq, *n), key)
            })
            .collect()
    }

    fn gather(
        &mut self,
        fab: &mut Fabric,
        expected: &Expected,
        budget: u64,
    ) -> BTreeMap<(u64, NodeId), Reply> {
        let mut got = BTreeMap::new();
        for _ in 0..budget {
            if got.len() == expected.len() || fab.is_idle() {
                break;
            }
            fab.step();
            for d in fab.take_inbox(self.id) {
                if let Delivery::Envelope(env) = d {
                    self.accept(&env, expected, &mut got);
                }
            }
        }
        got
    }

    fn accept(
        &mut self,
        env: &Envelope,
        expected: &Expected,
        got: &mut BTreeMap<(u64, NodeId), Reply>,
    ) {
        let Party::Node(n) = env.src else { return };
        if env.dst != Dest::To(Party::Host(self.id)) {
            return;
        }
        let Some(vk) = self.peers.get(&n) else { return };
        let frame = env.frame().ok().filter(|f| env.verify(vk) && f.verify(vk));
        let Some(frame) = frame else {
            self.stats.rejected_auth += 1;
            return;
        };
        let Ok((seq, reply)) = Reply::decode(&frame, &self.params) else {
            self.stats.stale_replies += 1;
            return;
        };
        match expected.get(&(seq, n)) {
            Some(key) if *key == frame.id => {
                got.entry((seq, n)).or_insert(reply);
            }
            _ => self.stats.stale_replies += 1,
        }
    }

    fn quorum_key(&self, q: &QuorumConfig, key: KeyId) -> Result<&QuorumKey, HostError> {
        self.keys.get(&(q.quorum_id, key)).ok_or(HostError::UnknownKey {
            quorum: q.quorum_id,
            key,
        })
    }

    /// Runs distributed key pair generation on `q` under `key`.
    pub fn dkpg(&mut self, fab: &mut Fabric, q: &QuorumConfig, key: KeyId) -> Result<QuorumKey, HostError> {
        q.validate()?;
        let req = Request::KeygenInit {
            members: q.nodes.clone(),
        };
        let expected = self.broadcast(fab, q, key, &req);
        let budget = self.budget(q.size());
        let got = self.gather(fab, &expected, budget);
        let failed: Vec<NodeId> = got
            .iter()
            .filter(|(_, r)| matches!(r, Reply::Error { code: ErrorCode::CommitmentFailure, .. }))
            .map(|((_, n), _)| *n)
            .collect();
        if !failed.is_empty() {
            return Err(HostError::CommitmentFailure { nodes: failed });
        }
        first_node_error(&got)?;
        let missing = missing_nodes(&expected, &got);
        if !missing.is_empty() {
            return Err(HostError::Timeout {
                slots: budget,
                missing,
            });
        }
        let mut reports = got.into_iter().map(|((_, n), r)| (n, r));
        let mut agreed: Option<(GroupElement, Vec<(NodeId, GroupElement)>)> = None;
        for (n, r) in reports.by_ref() {
            let Reply::KeygenDone { aggregate, shares } = r else {
                return Err(bad_reply(n, "expected a keygen report"));
            };
            match &agreed {
                None => agreed = Some((aggregate, shares)),
                Some(a) if *a == (aggregate, shares) => {}
                Some(_) => {
                    return Err(HostError::InconsistentKeys(format!(
                        "{n} reports a different key"
                    )))
                }
            }
        }
        let (aggregate, shares) = agreed.expect("quorum is non-empty");
        let members: Vec<NodeId> = shares.iter().map(|(n, _)| *n).collect();
        let mut sorted = q.nodes.clone();
        sorted.sort();
        if members != sorted {
            return Err(HostError::InconsistentKeys("share list does not match quorum".into()));
        }
        let qk = QuorumKey {
            key_id: key,
            quorum_id: q.quorum_id,
            aggregate,
            shares: shares.into_iter().collect(),
            threshold: q.threshold,
        };
        if !qk.is_consistent() {
            return Err(HostError::InconsistentKeys("sum of Y_i differs from Y_agg".into()));
        }
        self.keys.insert((q.quorum_id, key), qk.clone());
        Ok(qk)
    }

    pub fn encrypt(&mut self, q: &QuorumConfig, key: KeyId, m: &GroupElement) -> Result<Ciphertext, HostError> {
        let y = self.quorum_key(q, key)?.aggregate;
        encrypt(&self.params, m, &y, &mut self.rng).map_err(|e| HostError::Crypto(e.to_string()))
    }

    /// Embeds a short byte string and encrypts it.
    pub fn encrypt_bytes(&mut self, q: &QuorumConfig, key: KeyId, msg: &[u8]) -> Result<Ciphertext, HostError> {
        let m = self
            .params
            .embed_message(msg)
            .map_err(|e| HostError::Crypto(e.to_string()))?;
        self.encrypt(q, key, &m)
    }

    /// Distributed decryption: one broadcast of `C1`, then `C2 + sum(A_i)`.
    pub fn decrypt(
        &mut self,
        fab: &mut Fabric,
        q: &QuorumConfig,
        key: KeyId,
        ct: &Ciphertext,
    ) -> Result<GroupElement, HostError> {
        let qk = self.quorum_key(q, key)?.clone();
        let (prove, seal) = (self.options.verify_proofs, self.options.seal_responses);
        let req = Request::DecShare {
            c1: ct.c1,
            prove,
            seal,
        };
        let expected = self.broadcast(fab, q, key, &req);
        let got = self.gather(fab, &expected, self.budget(q.size()));
        first_node_error(&got)?;
        let missing = missing_nodes(&expected, &got);
        if !missing.is_empty() {
            return Err(HostError::IncompleteQuorum { missing });
        }
        let p = self.params;
        let w = p.element_width();
        let mut shares = Vec::with_capacity(got.len());
        for ((_, n), r) in got {
            let Reply::DecShare { data } = r else {
                return Err(bad_reply(n, "expected a decryption share"));
            };
            let data = if seal {
                self.key.open(&data).map_err(|e| bad_reply(n, &e.to_string()))?
            } else {
                data
            };
            let want = if prove { w + DleqProof::encoded_len(&p) } else { w };
            if data.len() != want {
                return Err(bad_reply(n, "wrong share length"));
            }
            let a = p
                .decode_element(&data[..w])
                .map_err(|e| bad_reply(n, &e.to_string()))?;
            if prove {
                let proof = DleqProof::from_bytes(&p, &data[w..]).map_err(|e| bad_reply(n, &e.to_string()))?;
                let y_i = qk.shares.get(&n).ok_or(HostError::InconsistentKeys(format!("no Y_i for {n}")))?;
                if !dleq_verify(&p, &proof, y_i, &ct.c1, &a) {
                    return Err(HostError::ShareProofFailure { node: n });
                }
            }
            shares.push(a);
        }
        aggr_dec(&ct.c2, &shares, q.size()).map_err(|e| HostError::Crypto(e.to_string()))
    }

    pub fn decrypt_bytes(
        &mut self,
        fab: &mut Fabric,
        q: &QuorumConfig,
        key: KeyId,
        ct: &Ciphertext,
    ) -> Result<Vec<u8>, HostError> {
        let m = self.decrypt(fab, q, key, ct)?;
        self.params
            .extract_message(&m)
            .map_err(|e| HostError::Crypto(e.to_string()))
    }

    /// Tries each quorum serving `key` in turn; the first success wins.
    /// Returns the index of the quorum that answered.
    pub fn decrypt_any(
        &mut self,
        fab: &mut Fabric,
        quorums: &[QuorumConfig],
        key: KeyId,
        ct: &Ciphertext,
    ) -> Result<(usize, GroupElement), HostError> {
        let mut last = HostError::UnknownKey { quorum: 0, key };
        for (i, q) in quorums.iter().enumerate() {
            match self.decrypt(fab, q, key, ct) {
                Ok(m) => return Ok((i, m)),
                Err(e) => last = e,
            }
        }
        Err(last)
    }

    /// Offline phase: caches `R_j = sum(R_ij)` for the next `count` indices.
    pub fn cache(
        &mut self,
        fab: &mut Fabric,
        q: &QuorumConfig,
        key: KeyId,
        count: u16,
    ) -> Result<Range<u64>, HostError> {
        self.quorum_key(q, key)?;
        let k = (q.quorum_id, key);
        let first = self.next_j.get(&k).copied().unwrap_or(1);
        let expected = self.broadcast(fab, q, key, &Request::CacheNonce { first, count });
        let got = self.gather(fab, &expected, self.budget(q.size()));
        first_node_error(&got)?;
        let missing = missing_nodes(&expected, &got);
        if !missing.is_empty() {
            return Err(HostError::IncompleteQuorum { missing });
        }
        let mut per_j: BTreeMap<u64, BTreeMap<NodeId, GroupElement>> = BTreeMap::new();
        for ((_, n), r) in got {
            match r {
                Reply::Nonces { first: f, nonces } if f == first && nonces.len() == count as usize => {
                    for (i, r) in nonces.into_iter().enumerate() {
                        per_j.entry(first + i as u64).or_default().insert(n, r);
                    }
                }
                _ => return Err(bad_reply(n, "expected the requested nonce range")),
            }
        }
        let cache = self.caches.entry(k).or_default();
        for (j, per_node) in per_j {
            let agg = sum_elements(per_node.values()).map_err(|e| HostError::Crypto(e.to_string()))?;
            cache.insert(NonceCacheEntry {
                j,
                aggregate: agg,
                per_node,
            });
        }
        let end = first + count as u64;
        self.next_j.insert(k, end);
        Ok(first..end)
    }

    /// Online phase with the lowest cached index. A rejected index is
    /// burned; the next call moves on to the following one.
    pub fn sign(
        &mut self,
        fab: &mut Fabric,
        q: &QuorumConfig,
        key: KeyId,
        msg: &[u8],
    ) -> Result<AggregateSignature, HostError> {
        self.quorum_key(q, key)?;
        let entry = self
            .caches
            .get_mut(&(q.quorum_id, key))
            .and_then(NonceCache::take_next)
            .ok_or(HostError::NoCachedNonce)?;
        let j = entry.j;
        self.sign_entry(fab, q, key, msg, entry).map_err(|e| match e {
            HostError::ReplayRejected { .. } | HostError::Node { .. } => HostError::SigningFailed {
                j,
                reason: e.to_string(),
            },
            e => e,
        })
    }

    /// Signs at a chosen index, even one already spent. Nodes must refuse
    /// spent indices.
    pub fn sign_at(
        &mut self,
        fab: &mut Fabric,
        q: &QuorumConfig,
        key: KeyId,
        msg: &[u8],
        j: u64,
    ) -> Result<AggregateSignature, HostError> {
        self.quorum_key(q, key)?;
        let k = (q.quorum_id, key);
        let entry = self
            .caches
            .get_mut(&k)
            .and_then(|c| c.take(j))
            .or_else(|| self.spent.get(&k).and_then(|s| s.get(&j)).cloned())
            .ok_or(HostError::NoCachedNonce)?;
        self.sign_entry(fab, q, key, msg, entry)
    }

    fn sign_entry(
        &mut self,
        fab: &mut Fabric,
        q: &QuorumConfig,
        key: KeyId,
        msg: &[u8],
        entry: NonceCacheEntry,
    ) -> Result<AggregateSignature, HostError> {
        let p = self.params;
        let j = entry.j;
        self.spent
            .entry((q.quorum_id, key))
            .or_default()
            .insert(j, entry.clone());
        let d = message_digest(msg);
        let req = Request::SigShare {
            items: vec![SignItem {
                digest: d,
                j,
                nonce: entry.aggregate,
            }],
        };
        let expected = self.broadcast(fab, q, key, &req);
        let got = self.gather(fab, &expected, self.budget(q.size()));
        let replayed: Vec<NodeId> = got
            .iter()
            .filter(|(_, r)| matches!(r, Reply::Error { code: ErrorCode::ReplayRejected, .. }))
            .map(|((_, n), _)| *n)
            .collect();
        if !replayed.is_empty() {
            return Err(HostError::ReplayRejected { j, nodes: replayed });
        }
        first_node_error(&got)?;
        let missing = missing_nodes(&expected, &got);
        if !missing.is_empty() {
            return Err(HostError::IncompleteQuorum { missing });
        }
        let e = challenge(&p, &entry.aggregate, &d, j);
        let mut shares = Vec::with_capacity(got.len());
        for ((_, n), r) in got {
            match r {
                Reply::SigShares { items } if items.len() == 1 && items[0].0 == j => {
                    let (_, sigma, epsilon) = items[0];
                    if epsilon != e {
                        return Err(HostError::ForgeryDetected { j, node: Some(n) });
                    }
                    shares.push(SignatureShare {
                        node: n,
                        j,
                        sigma,
                        epsilon,
                    });
                }
                _ => return Err(bad_reply(n, "expected one signature share")),
            }
        }
        let sig = aggregate(&shares, &q.nodes).map_err(|e| HostError::Crypto(e.to_string()))?;
        let qk = self.quorum_key(q, key)?;
        if verify(&p, &qk.aggregate, msg, &sig) {
            return Ok(sig);
        }
        // Locate the bad share: sigma_i*G + e*Y_i must equal R_ij.
        let culprit = shares.iter().find(|s| {
            let (Some(y), Some(r)) = (qk.shares.get(&s.node), entry.per_node.get(&s.node)) else {
                return true;
            };
            p.mul_base(&s.sigma)
                .and_then(|a| y.mul(&e).and_then(|b| a.add(&b)))
                .map_or(true, |lhs| lhs != *r)
        });
        Err(HostError::ForgeryDetected {
            j,
            node: culprit.map(|s| s.node),
        })
    }

    /// Distributed randomness: one share per member, XOR-combined and
    /// expanded to `out_len` bytes.
    pub fn gen_random(&mut self, fab: &mut Fabric, q: &QuorumConfig, out_len: usize) -> Result<Vec<u8>, HostError> {
        q.validate()?;
        let seal = self.options.seal_responses;
        let expected = self.unicast(fab, &q.nodes, KeyId::ZERO, &Request::RngShare { seal });
        let got = self.gather(fab, &expected, self.budget(q.size()));
        first_node_error(&got)?;
        let missing = missing_nodes(&expected, &got);
        if !missing.is_empty() {
            return Err(HostError::IncompleteQuorum { missing });
        }
        let mut shares = Vec::with_capacity(got.len());
        for ((_, n), r) in got {
            let Reply::Random { data } = r else {
                return Err(bad_reply(n, "expected a randomness share"));
            };
            let data = if seal {
                self.key.open(&data).map_err(|e| bad_reply(n, &e.to_string()))?
            } else {
                data
            };
            shares.push(data);
        }
        drng_combine(&shares, out_len).map_err(|e| HostError::Crypto(e.to_string()))
    }

    /// Moves `key` from `from` to `to`: Q2 members learn the metadata,
    /// every Q1 member splits its share into `|Q2|` parts sealed to the Q2
    /// members, and each Q2 member reports its new public share.
    pub fn propagate(
        &mut self,
        fab: &mut Fabric,
        from: &QuorumConfig,
        to: &QuorumConfig,
        key: KeyId,
    ) -> Result<QuorumKey, HostError> {
        to.validate()?;
        let aggregate = self.quorum_key(from, key)?.aggregate;
        let budget = self.budget(from.size().max(to.size()));
        let install = Request::KeypropInstall {
            aggregate,
            sources: from.nodes.clone(),
        };
        let installed = self.unicast(fab, &to.nodes, key, &install);
        let got = self.gather(fab, &installed, budget);
        first_node_error(&got)?;
        let missing = missing_nodes(&installed, &got);
        if !missing.is_empty() {
            return Err(HostError::IncompleteQuorum { missing });
        }
        let split = Request::KeypropSplit {
            targets: to.nodes.clone(),
        };
        let mut expected = self.unicast(fab, &from.nodes, key, &split);
        expected.extend(installed.iter().map(|(k, v)| (*k, *v)));
        let got = self.gather(fab, &expected, budget);
        first_node_error(&got)?;
        let missing = missing_nodes(&expected, &got);
        if !missing.is_empty() {
            return Err(HostError::IncompleteQuorum { missing });
        }
        let mut shares = BTreeMap::new();
        for ((seq, n), r) in got {
            match r {
                Reply::KeypropStatus { public } if installed.contains_key(&(seq, n)) => {
                    shares.insert(n, public);
                }
                Reply::Ack if !installed.contains_key(&(seq, n)) => {}
                _ => return Err(bad_reply(n, "unexpected propagation reply")),
            }
        }
        let qk = QuorumKey {
            key_id: key,
            quorum_id: to.quorum_id,
            aggregate,
            shares,
            threshold: to.threshold,
        };
        if !qk.is_consistent() {
            return Err(HostError::InconsistentKeys(
                "propagated shares do not sum to Y_agg".into(),
            ));
        }
        self.keys.insert((to.quorum_id, key), qk.clone());
        Ok(qk)
    }
}

fn bad_reply(node: NodeId, detail: &str) -> HostError {
    HostError::BadReply {
        node,
        detail: detail.into(),
    }
}

fn missing_nodes(expected: &Expected, got: &BTreeMap<(u64, NodeId), Reply>) -> Vec<NodeId> {
    let m: BTreeSet<NodeId> = expected
        .keys()
        .filter(|k| !got.contains_key(k))
        .map(|(_, n)| *n)
        .collect();
    m.into_iter().collect()
}

fn first_node_error(got: &BTreeMap<(u64, NodeId), Reply>) -> Result<(), HostError> {
    for ((_, n), r) in got {
        if let Reply::Error { code, detail } = r {
            return Err(HostError::Node {
                node: *n,
                code: *code,
                detail: detail.clone(),
            });
        }
    }
    Ok(())
}

/// Builds a provisioned deployment: nodes, fabric and one host.
#[derive(Clone, Debug)]
pub struct Setup {
    pub params: DomainParams,
    pub nodes: Vec<NodeId>,
    pub seed: u64,
    pub adversary: AdversarySpec,
    pub node_options: NodeOptions,
    pub host_options: HostOptions,
    pub permissions: Permissions,
    /// Scalars each node draws before fresh randomness.
    pub forced: BTreeMap<NodeId, Vec<u64>>,
    pub parallel: bool,
}

impl Setup {
    pub fn new(params: DomainParams, nodes: Vec<NodeId>, seed: u64) -> Self {
        Self {
            params,
            nodes,
            seed,
            adversary: AdversarySpec::default(),
            node_options: NodeOptions::default(),
            host_options: HostOptions::default(),
            permissions: Permissions::ALL,
            forced: BTreeMap::new(),
            parallel: true,
        }
    }

    /// Nodes `1..=count`.
    pub fn with_nodes(params: DomainParams, count: u16, seed: u64) -> Self {
        Self::new(params, (1..=count).map(NodeId).collect(), seed)
    }

    pub fn adversary(mut self, spec: AdversarySpec) -> Self {
        self.adversary = spec;
        self
    }

    pub fn host_options(mut self, o: HostOptions) -> Self {
        self.host_options = o;
        self
    }

    pub fn node_options(mut self, o: NodeOptions) -> Self {
        self.node_options = o;
        self
    }

    pub fn force(mut self, node: NodeId, values: Vec<u64>) -> Self {
        self.forced.insert(node, values);
        self
    }

    pub fn build(self) -> Result<(Fabric, Host), HostError> {
        let distinct: BTreeSet<_> = self.nodes.iter().collect();
        if self.nodes.is_empty() || distinct.len() != self.nodes.len() {
            return Err(HostError::Setup("node ids must be distinct and non-empty".into()));
        }
        let mut host = Host::new(HostId(0), self.seed, self.params, self.host_options);
        let mut nodes: Vec<IcNode> = self.nodes.iter().map(|n| IcNode::new(*n, self.seed)).collect();
        let peers: Vec<_> = nodes.iter().map(|n| (n.id(), n.certificate())).collect();
        let acl = vec![AclEntry {
            host: host.id(),
            key: host.verifying_key(),
            permissions: self.permissions,
        }];
        for n in &mut nodes {
            if let Some(v) = self.forced.get(&n.id()) {
                n.force_scalars(v.iter().copied());
            }
            n.provision(Provisioning {
                params: self.params,
                acl: acl.clone(),
                peers: peers.clone(),
                options: self.node_options,
            })
            .map_err(|e| HostError::Setup(e.to_string()))?;
            host.trust_node(n.id(), n.verifying_key());
        }
        let mut fab = Fabric::new(self.params, nodes, self.adversary)?;
        fab.set_parallel(self.parallel);
        fab.register_host(host.id());
        Ok((fab, host))
    }
}
