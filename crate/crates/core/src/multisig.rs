//! Schnorr multi-signature with host-side nonce caching.
//!
//! Caching phase: every node derives `r_ij = PRF_s(j)` and returns
//! `R_ij = r_ij * G`; the host stores `R_j = sum(R_ij)`.
//!
//! Signing phase: for `(Hash(m), j, R_j)` each node computes
//! `e_j = Hash(R_j || Hash(m) || j)` and `s_ij = r_ij - x_i * e_j`, consuming
//! `j` in its ledger first. The host adds the `s_ij`; the result verifies as
//! an ordinary Schnorr signature under `Y_agg`.

use std::collections::{BTreeMap, BTreeSet};

use thiserror::Error;

use crate::group::{message_digest, tag, DomainParams, GroupElement, GroupError, Scalar};
use crate::ids::NodeId;

pub type MessageDigest = [u8; 64];

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum MultisigError {
    #[error("index {0} was already used for signing")]
    ReplayRejected(u64),
    #[error("signature shares disagree on (j, challenge)")]
    InconsistentShares,
    #[error("incomplete quorum: expected {expected} signature shares, got {got}")]
    IncompleteQuorum { expected: usize, got: usize },
    #[error("duplicate signature share from {0}")]
    DuplicateShare(NodeId),
    #[error("signature share from {0}, which is not a quorum member")]
    UnknownSigner(NodeId),
    #[error("malformed signature encoding")]
    Malformed,
    #[error(transparent)]
    Group(#[from] GroupError),
}

/// Per-node nonce for index `j`: `(r_ij, R_ij)`.
pub fn cache_nonce(
    params: &DomainParams,
    prf_secret: &[u8],
    j: u64,
) -> Result<(Scalar, GroupElement), GroupError> {
    let r = params.prf(prf_secret, j)?;
    let big_r = params.mul_base(&r)?;
    Ok((r, big_r))
}

/// `e_j = Hash(encode(R_j) || Hash(m) || j)`.
pub fn challenge(
    params: &DomainParams,
    aggregate_nonce: &GroupElement,
    digest: &MessageDigest,
    j: u64,
) -> Scalar {
    params.hash_to_scalar_tagged(
        tag::CHALLENGE,
        &[&aggregate_nonce.encode(), digest, &j.to_be_bytes()],
    )
}

/// `r - x * e mod n`.
pub fn share_response(r: &Scalar, x: &Scalar, e: &Scalar) -> Result<Scalar, GroupError> {
    r.sub(&x.mul(e)?)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SignatureShare {
    pub node: NodeId,
    pub j: u64,
    pub sigma: Scalar,
    pub epsilon: Scalar,
}

/// Inputs a node holds for one key.
pub struct SignerKey<'a> {
    pub params: &'a DomainParams,
    pub node: NodeId,
    pub secret: &'a Scalar,
    pub prf_secret: &'a [u8],
}

/// Computes a signature share, marking `j` as consumed before anything is
/// derived from it. A rejected `j` leaves the ledger unchanged.
pub fn sig_share(
    key: &SignerKey<'_>,
    ledger: &mut IndexLedger,
    digest: &MessageDigest,
    j: u64,
    aggregate_nonce: &GroupElement,
) -> Result<SignatureShare, MultisigError> {
    key.params.check_element(aggregate_nonce)?;
    ledger.consume(j)?;
    let epsilon = challenge(key.params, aggregate_nonce, digest, j);
    let r = key.params.prf(key.prf_secret, j)?;
    let sigma = share_response(&r, key.secret, &epsilon)?;
    Ok(SignatureShare {
        node: key.node,
        j,
        sigma,
        epsilon,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct AggregateSignature {
    pub sigma: Scalar,
    pub epsilon: Scalar,
    pub j: u64,
}

impl AggregateSignature {
    /// `sigma || epsilon || j`, fixed-width big-endian.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = self.sigma.to_bytes();
        out.extend(self.epsilon.to_bytes());
        out.extend(self.j.to_be_bytes());
        out
    }

    pub fn from_bytes(params: &DomainParams, bytes: &[u8]) -> Result<Self, MultisigError> {
        let w = params.scalar_width();
        if bytes.len() != 2 * w + 8 {
            return Err(MultisigError::Malformed);
        }
        Ok(Self {
            sigma: params.scalar_from_bytes(&bytes[..w])?,
            epsilon: params.scalar_from_bytes(&bytes[w..2 * w])?,
            j: u64::from_be_bytes(bytes[2 * w..].try_into().expect("length checked")),
        })
    }
}

/// Sums the `sigma` shares of a full quorum. All shares must carry the same
/// `(j, e_j)` and come from distinct members of `quorum`.
pub fn aggregate(
    shares: &[SignatureShare],
    quorum: &[NodeId],
) -> Result<AggregateSignature, MultisigError> {
    let first = shares.first().ok_or(MultisigError::IncompleteQuorum {
        expected: quorum.len(),
        got: 0,
    })?;
    let members: BTreeSet<_> = quorum.iter().copied().collect();
    let mut seen = BTreeSet::new();
    let mut sigma = first.sigma.sub(&first.sigma)?;
    for s in shares {
        if s.j != first.j || s.epsilon != first.epsilon {
            return Err(MultisigError::InconsistentShares);
        }
        if !members.contains(&s.node) {
            return Err(MultisigError::UnknownSigner(s.node));
        }
        if !seen.insert(s.node) {
            return Err(MultisigError::DuplicateShare(s.node));
        }
        sigma = sigma.add(&s.sigma)?;
    }
    if seen.len() != members.len() {
        return Err(MultisigError::IncompleteQuorum {
            expected: members.len(),
            got: seen.len(),
        });
    }
    Ok(AggregateSignature {
        sigma,
        epsilon: first.epsilon,
        j: first.j,
    })
}

/// Checks `e == Hash(R || Hash(m) || j)` with `R = sigma*G + e*Y`.
pub fn verify(params: &DomainParams, y: &GroupElement, msg: &[u8], sig: &AggregateSignature) -> bool {
    verify_digest(params, y, &message_digest(msg), sig)
}

pub fn verify_digest(
    params: &DomainParams,
    y: &GroupElement,
    digest: &MessageDigest,
    sig: &AggregateSignature,
) -> bool {
    let check = || -> Result<bool, GroupError> {
        params.check_element(y)?;
        let r = params.mul_base(&sig.sigma)?.add(&y.mul(&sig.epsilon)?)?;
        Ok(challenge(params, &r, digest, sig.j) == sig.epsilon)
    };
    check().unwrap_or(false)
}

/// Host-side cache of aggregate nonces.
#[derive(Clone, Debug, Default)]
pub struct NonceCache {
    entries: BTreeMap<u64, NonceCacheEntry>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct NonceCacheEntry {
    pub j: u64,
    pub aggregate: GroupElement,
    pub per_node: BTreeMap<NodeId, GroupElement>,
}

impl NonceCacheEntry {
    /// Stored size: element encoding plus an 8-byte index.
    pub fn stored_len(&self) -> usize {
        self.aggregate.encode().len() + 8
    }
}

impl NonceCache {
    pub fn insert(&mut self, entry: NonceCacheEntry) {
        self.entries.insert(entry.j, entry);
    }

    /// Removes and returns the lowest cached index.
    pub fn take_next(&mut self) -> Option<NonceCacheEntry> {
        self.entries.pop_first().map(|(_, e)| e)
    }

    pub fn take(&mut self, j: u64) -> Option<NonceCacheEntry> {
        self.entries.remove(&j)
    }

    pub fn get(&self, j: u64) -> Option<&NonceCacheEntry> {
        self.entries.get(&j)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn highest(&self) -> Option<u64> {
        self.entries.keys().next_back().copied()
    }
}

/// Record of consumed signing indices: a high-water mark plus a bounded
/// window of skipped indices below it that may still be used once.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct IndexLedger {
    mark: Option<u64>,
    open: BTreeSet<u64>,
}

impl IndexLedger {
    /// Maximum number of skipped indices remembered below the mark.
    pub const WINDOW: usize = 64;

    pub fn consume(&mut self, j: u64) -> Result<(), MultisigError> {
        match self.mark {
            Some(mark) if j <= mark => {
                if self.open.remove(&j) {
                    Ok(())
                } else {
                    Err(MultisigError::ReplayRejected(j))
                }
            }
            prev => {
                let from = prev.map_or(0, |m| m + 1);
                // skipped indices, only the newest WINDOW are kept
                let skip_from = from.max(j.saturating_sub(Self::WINDOW as u64));
                self.open.extend(skip_from..j);
                while self.open.len() > Self::WINDOW {
                    self.open.pop_first();
                }
                self.mark = Some(j);
                Ok(())
            }
        }
    }

    pub fn is_consumed(&self, j: u64) -> bool {
        matches!(self.mark, Some(m) if j <= m && !self.open.contains(&j))
    }

    pub fn high_water_mark(&self) -> Option<u64> {
        self.mark
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::group::HashMode;
    use crate::threshold::sum_elements;
    use proptest::prelude::*;

    fn toy13() -> DomainParams {
        DomainParams::transparent(13)
            .unwrap()
            .with_hash_mode(HashMode::ByteSum)
            .unwrap()
    }

    #[test]
    fn cache_nonce_vectors() {
        let p = toy13();
        let (r, big_r) = cache_nonce(&p, &[8], 1).unwrap();
        assert_eq!(r.as_u32(), Some(9));
        assert_eq!(big_r.as_u32(), Some(9));
        assert_eq!(cache_nonce(&p, &[8], 1).unwrap(), (r, big_r));
        let c = DomainParams::p256();
        assert_ne!(cache_nonce(&c, b"s", 1).unwrap().1, cache_nonce(&c, b"s", 2).unwrap().1);
    }

    #[test]
    fn share_response_vectors() {
        let p = toy13();
        let s = share_response(&p.scalar(9), &p.scalar(3), &p.scalar(4)).unwrap();
        assert_eq!(s.as_u32(), Some(10));
        let s = share_response(&p.scalar(9), &p.zero(), &p.scalar(11)).unwrap();
        assert_eq!(s.as_u32(), Some(9));
    }

    #[test]
    fn sig_share_rejects_replay() {
        let p = DomainParams::p256();
        let x = p.scalar(42);
        let key = SignerKey {
            params: &p,
            node: NodeId(1),
            secret: &x,
            prf_secret: b"prf",
        };
        let mut ledger = IndexLedger::default();
        let r = p.generator();
        let d = message_digest(b"m");
        sig_share(&key, &mut ledger, &d, 1, &r).unwrap();
        assert_eq!(
            sig_share(&key, &mut ledger, &message_digest(b"other"), 1, &r),
            Err(MultisigError::ReplayRejected(1))
        );
    }

    #[test]
    fn aggregate_vectors() {
        let p = toy13();
        let share = |node, sigma| SignatureShare {
            node: NodeId(node),
            j: 1,
            sigma: p.scalar(sigma),
            epsilon: p.scalar(4),
        };
        let one = aggregate(&[share(1, 10)], &[NodeId(1)]).unwrap();
        assert_eq!(one.sigma.as_u32(), Some(10));
        let two = aggregate(&[share(1, 10), share(2, 4)], &[NodeId(1), NodeId(2)]).unwrap();
        assert_eq!((two.sigma.as_u32(), two.epsilon.as_u32(), two.j), (Some(1), Some(4), 1));

        let mut odd = share(2, 4);
        odd.epsilon = p.scalar(5);
        assert_eq!(
            aggregate(&[share(1, 10), odd], &[NodeId(1), NodeId(2)]),
            Err(MultisigError::InconsistentShares)
        );
        assert_eq!(
            aggregate(&[share(1, 10)], &[NodeId(1), NodeId(2)]),
            Err(MultisigError::IncompleteQuorum { expected: 2, got: 1 })
        );
        assert_eq!(
            aggregate(&[share(1, 10), share(1, 10)], &[NodeId(1), NodeId(2)]),
            Err(MultisigError::DuplicateShare(NodeId(1)))
        );
    }

    fn run_quorum(p: &DomainParams, xs: &[Scalar], msg: &[u8], j: u64) -> AggregateSignature {
        let secrets: Vec<Vec<u8>> = (0..xs.len()).map(|i| vec![i as u8 + 1, 7]).collect();
        let nonces: Vec<_> = secrets
            .iter()
            .map(|s| cache_nonce(p, s, j).unwrap().1)
            .collect();
        let r_j = sum_elements(&nonces).unwrap();
        let d = message_digest(msg);
        let ids: Vec<_> = (0..xs.len()).map(|i| NodeId(i as u16)).collect();
        let shares: Vec<_> = xs
            .iter()
            .zip(&secrets)
            .zip(&ids)
            .map(|((x, s), id)| {
                let key = SignerKey {
                    params: p,
                    node: *id,
                    secret: x,
                    prf_secret: s,
                };
                sig_share(&key, &mut IndexLedger::default(), &d, j, &r_j).unwrap()
            })
            .collect();
        aggregate(&shares, &ids).unwrap()
    }

    #[test]
    fn completeness_and_tamper_detection() {
        let p = DomainParams::p256();
        let xs: Vec<_> = (1..=4).map(|v| p.scalar(v * 1000 + 7)).collect();
        let y = sum_elements(
            &xs.iter().map(|x| p.mul_base(x).unwrap()).collect::<Vec<_>>(),
        )
        .unwrap();
        let sig = run_quorum(&p, &xs, b"message", 3);
        assert!(verify(&p, &y, b"message", &sig));
        assert!(!verify(&p, &y, b"messagf", &sig));
        assert!(!verify(&p, &y.add(&p.generator()).unwrap(), b"message", &sig));
        let mut bumped = sig;
        bumped.sigma = bumped.sigma.add(&p.one()).unwrap();
        assert!(!verify(&p, &y, b"message", &bumped));
        let decoded = AggregateSignature::from_bytes(&p, &sig.to_bytes()).unwrap();
        assert_eq!(decoded, sig);
    }

    #[test]
    fn completeness_identity_on_transparent_backend() {
        // sum(r_i - x_i e) + e * sum(x_i) = sum(r_i), checked by plain arithmetic
        let p = DomainParams::transparent(257).unwrap();
        for t in 1..=10u64 {
            let xs: Vec<_> = (0..t).map(|i| p.scalar(i * 31 + 5)).collect();
            let sig = run_quorum(&p, &xs, b"m", t);
            let x_total: u64 = xs.iter().map(|x| x.as_u32().unwrap() as u64).sum::<u64>() % 257;
            let r = (sig.sigma.as_u32().unwrap() as u64
                + sig.epsilon.as_u32().unwrap() as u64 * x_total)
                % 257;
            let secrets: Vec<Vec<u8>> = (0..t).map(|i| vec![i as u8 + 1, 7]).collect();
            let r_sum: u64 = secrets
                .iter()
                .map(|s| p.prf(s, t).unwrap().as_u32().unwrap() as u64)
                .sum::<u64>()
                % 257;
            assert_eq!(r, r_sum);
            assert!(verify(&p, &p.mul_base(&p.scalar(x_total)).unwrap(), b"m", &sig));
        }
    }

    #[test]
    fn ledger_window() {
        let mut l = IndexLedger::default();
        l.consume(5).unwrap();
        assert!(l.consume(5).is_err());
        // 0..5 were skipped and remain usable once
        l.consume(2).unwrap();
        assert!(l.consume(2).is_err());
        l.consume(1000).unwrap();
        // 6..936 fell out of the window
        assert!(l.consume(900).is_err());
        l.consume(999).unwrap();
        assert!(l.is_consumed(999));
        assert!(!l.is_consumed(998));
        assert_eq!(l.high_water_mark(), Some(1000));
    }

    #[test]
    fn nonce_entry_size_matches_encoding() {
        let p = DomainParams::p256();
        let e = NonceCacheEntry {
            j: 1,
            aggregate: p.generator(),
            per_node: BTreeMap::new(),
        };
        assert_eq!(e.stored_len(), 41);
    }

    proptest! {
        #[test]
        fn ledger_never_reaccepts(ops in prop::collection::vec(0u64..200, 1..80)) {
            let mut l = IndexLedger::default();
            let mut used = BTreeSet::new();
            for j in ops {
                match l.consume(j) {
                    Ok(()) => prop_assert!(used.insert(j), "index {} accepted twice", j),
                    Err(MultisigError::ReplayRejected(k)) => prop_assert_eq!(k, j),
                    Err(e) => prop_assert!(false, "unexpected {:?}", e),
                }
            }
        }
    }
}
