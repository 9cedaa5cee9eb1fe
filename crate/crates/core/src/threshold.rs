//! Building blocks shared by the distributed protocols: key triplets and
//! their commitments, share aggregation, additive secret sharing and the
//! randomness combiner.

use std::collections::BTreeMap;

use rand_core::{CryptoRng, RngCore};
use thiserror::Error;

use crate::group::{digest, tag, DomainParams, GroupElement, GroupError, Scalar};
use crate::ids::{KeyId, NodeId};

/// Length of a commitment digest.
pub const COMMITMENT_LEN: usize = 64;

pub type Commitment = [u8; COMMITMENT_LEN];

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ThresholdError {
    #[error("{what}: expected {expected} entries, got {got}")]
    LengthMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("cannot aggregate an empty share set")]
    Empty,
    #[error("share set mixes scalars and group elements")]
    MixedKinds,
    #[error("secret sharing needs at least 2 shares, got {0}")]
    TooFewShares(usize),
    #[error(transparent)]
    Group(#[from] GroupError),
}

/// `(x_i, Y_i, h_i)`: a secret share, its public share `Y_i = x_i * G` and
/// the commitment `h_i = Hash(encode(Y_i))`.
#[derive(Clone, PartialEq, Eq)]
pub struct KeyTriplet {
    pub secret: Scalar,
    pub public: GroupElement,
    pub commitment: Commitment,
}

impl std::fmt::Debug for KeyTriplet {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("KeyTriplet")
            .field("public", &self.public)
            .finish_non_exhaustive()
    }
}

impl KeyTriplet {
    pub fn from_secret(params: &DomainParams, secret: Scalar) -> Result<Self, GroupError> {
        let public = params.mul_base(&secret)?;
        Ok(Self {
            secret,
            public,
            commitment: commit(&public),
        })
    }
}

/// Generates a fresh key triplet.
pub fn triplet_gen<R: RngCore + CryptoRng>(params: &DomainParams, rng: &mut R) -> KeyTriplet {
    let x = params.random_scalar(rng);
    KeyTriplet::from_secret(params, x).expect("scalar drawn from params")
}

/// Commitment to a public share.
pub fn commit(y: &GroupElement) -> Commitment {
    digest(tag::COMMIT, &[&y.encode()])
}

/// Checks every `Y_i` against its commitment `h_i`. The lists are aligned by
/// position; a length mismatch is a protocol error, not a failed check.
pub fn commit_verify(ys: &[GroupElement], hs: &[Commitment]) -> Result<bool, ThresholdError> {
    if ys.len() != hs.len() {
        return Err(ThresholdError::LengthMismatch {
            what: "commitments",
            expected: ys.len(),
            got: hs.len(),
        });
    }
    Ok(ys.iter().zip(hs).all(|(y, h)| commit(y) == *h))
}

/// A share handled by [`share_aggr`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Share {
    Scalar(Scalar),
    Element(GroupElement),
}

/// Sums a homogeneous, nonempty set of shares: modulo `n` for scalars,
/// under the group law for elements.
pub fn share_aggr(shares: &[Share]) -> Result<Share, ThresholdError> {
    let (first, rest) = shares.split_first().ok_or(ThresholdError::Empty)?;
    rest.iter().try_fold(*first, |acc, s| match (acc, s) {
        (Share::Scalar(a), Share::Scalar(b)) => Ok(Share::Scalar(a.add(b)?)),
        (Share::Element(a), Share::Element(b)) => Ok(Share::Element(a.add(b)?)),
        _ => Err(ThresholdError::MixedKinds),
    })
}

pub fn sum_scalars<'a, I>(shares: I) -> Result<Scalar, ThresholdError>
where
    I: IntoIterator<Item = &'a Scalar>,
{
    let mut it = shares.into_iter();
    let first = *it.next().ok_or(ThresholdError::Empty)?;
    it.try_fold(first, |acc, s| acc.add(s).map_err(Into::into))
}

pub fn sum_elements<'a, I>(shares: I) -> Result<GroupElement, ThresholdError>
where
    I: IntoIterator<Item = &'a GroupElement>,
{
    let mut it = shares.into_iter();
    let first = *it.next().ok_or(ThresholdError::Empty)?;
    it.try_fold(first, |acc, s| acc.add(s).map_err(Into::into))
}

/// Additive shares of a secret: the entries sum to it modulo `n`.
#[derive(Clone, PartialEq, Eq)]
pub struct ShareVector(pub Vec<Scalar>);

impl std::fmt::Debug for ShareVector {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "ShareVector(len={})", self.0.len())
    }
}

/// Splits `secret` into `k` additive shares, the first `k - 1` uniform.
pub fn secret_share<R: RngCore + CryptoRng>(
    params: &DomainParams,
    secret: &Scalar,
    k: usize,
    rng: &mut R,
) -> Result<ShareVector, ThresholdError> {
    if k < 2 {
        return Err(ThresholdError::TooFewShares(k));
    }
    let randoms: Vec<Scalar> = (0..k - 1).map(|_| params.random_scalar(rng)).collect();
    secret_share_with(params, secret, &randoms)
}

/// [`secret_share`] with caller-supplied randomness; the last share is
/// `secret - sum(randoms)`.
pub fn secret_share_with(
    params: &DomainParams,
    secret: &Scalar,
    randoms: &[Scalar],
) -> Result<ShareVector, ThresholdError> {
    if randoms.is_empty() {
        return Err(ThresholdError::TooFewShares(randoms.len() + 1));
    }
    params.check_scalar(secret)?;
    let mut last = *secret;
    for r in randoms {
        last = last.sub(r)?;
    }
    let mut v = randoms.to_vec();
    v.push(last);
    Ok(ShareVector(v))
}

/// One-way expansion of `input` to `out_len` bytes: SHA3-512 in counter mode.
pub fn one_way(input: &[u8], out_len: usize) -> Vec<u8> {
    let mut out = Vec::with_capacity(out_len);
    let mut ctr = 0u32;
    while out.len() < out_len {
        let block = digest(tag::RNG, &[input, &ctr.to_be_bytes()]);
        let take = (out_len - out.len()).min(block.len());
        out.extend_from_slice(&block[..take]);
        ctr += 1;
    }
    out
}

/// Combines per-node randomness shares: XOR, then [`one_way`].
pub fn drng_combine(shares: &[Vec<u8>], out_len: usize) -> Result<Vec<u8>, ThresholdError> {
    let (first, rest) = shares.split_first().ok_or(ThresholdError::Empty)?;
    let mut acc = first.clone();
    for s in rest {
        if s.len() != acc.len() {
            return Err(ThresholdError::LengthMismatch {
                what: "randomness share bytes",
                expected: acc.len(),
                got: s.len(),
            });
        }
        acc.iter_mut().zip(s).for_each(|(a, b)| *a ^= b);
    }
    Ok(one_way(&acc, out_len))
}

/// Public record of a quorum key: `Y_agg` and the per-node public shares.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct QuorumKey {
    pub key_id: KeyId,
    pub quorum_id: u32,
    pub aggregate: GroupElement,
    pub shares: BTreeMap<NodeId, GroupElement>,
    /// Secrecy threshold; equals the quorum size here.
    pub threshold: usize,
}

impl QuorumKey {
    pub fn size(&self) -> usize {
        self.shares.len()
    }

    /// Checks `Y_agg = sum(Y_i)`.
    pub fn is_consistent(&self) -> bool {
        sum_elements(self.shares.values())
            .map(|s| s == self.aggregate)
            .unwrap_or(false)
    }
}
