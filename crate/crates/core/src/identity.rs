//! Long-term identities of hosts and ICs.
//!
//! Identities always live on P-256, whatever group the protocols run on, so
//! that envelope authentication stays sound when the protocols use the
//! transparent test group. Signatures use the same Schnorr equation as the
//! multi-signature (a quorum of one), with deterministic nonces.

use rand_core::{CryptoRng, RngCore};
use thiserror::Error;

use crate::group::{digest, message_digest, mul_cached, tag, DomainParams, GroupElement, GroupError, Scalar};
use crate::multisig::{challenge, AggregateSignature};

pub const SIGNATURE_LEN: usize = 64;
pub const PUBLIC_KEY_LEN: usize = 33;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum IdentityError {
    #[error("sealed payload too short")]
    Truncated,
    #[error(transparent)]
    Group(#[from] GroupError),
}

fn curve() -> DomainParams {
    DomainParams::p256()
}

/// `sigma || epsilon`, 32 bytes each.
#[derive(Clone, Copy, PartialEq, Eq)]
pub struct Signature(pub [u8; SIGNATURE_LEN]);

impl std::fmt::Debug for Signature {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Signature({}..)", crate::group::hex(&self.0[..8]))
    }
}

#[derive(Clone)]
pub struct SigningKey {
    secret: Scalar,
    public: GroupElement,
}

impl std::fmt::Debug for SigningKey {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SigningKey")
            .field("public", &self.public)
            .finish_non_exhaustive()
    }
}

impl SigningKey {
    pub fn generate<R: RngCore + CryptoRng>(rng: &mut R) -> Self {
        let p = curve();
        loop {
            let secret = p.random_scalar(rng);
            if !secret.is_zero() {
                let public = p.mul_base(&secret).expect("curve scalar");
                return Self { secret, public };
            }
        }
    }

    pub fn verifying_key(&self) -> VerifyingKey {
        VerifyingKey::new(self.public)
    }

    /// Signs `msg` bound to `index` (an envelope sequence number, or zero).
    pub fn sign(&self, msg: &[u8], index: u64) -> Signature {
        let p = curve();
        let d = message_digest(msg);
        let r = p.hash_to_scalar_tagged(
            tag::NONCE,
            &[&self.secret.to_bytes(), &d, &index.to_be_bytes()],
        );
        let big_r = p.mul_base(&r).expect("curve scalar");
        let e = challenge(&p, &big_r, &d, index);
        let s = r
            .sub(&self.secret.mul(&e).expect("curve scalar"))
            .expect("curve scalar");
        let mut out = [0u8; SIGNATURE_LEN];
        out[..32].copy_from_slice(&s.to_bytes());
        out[32..].copy_from_slice(&e.to_bytes());
        Signature(out)
    }

    /// Opens a payload produced by [`VerifyingKey::seal`].
    pub fn open(&self, sealed: &[u8]) -> Result<Vec<u8>, IdentityError> {
        if sealed.len() < PUBLIC_KEY_LEN {
            return Err(IdentityError::Truncated);
        }
        let p = curve();
        let eph = p.decode_element(&sealed[..PUBLIC_KEY_LEN])?;
        let shared = eph.mul(&self.secret)?;
        Ok(xor_stream(&shared, &eph, &sealed[PUBLIC_KEY_LEN..]))
    }

    /// Secret scalar bytes; used by the leakage tap.
    pub(crate) fn secret_bytes(&self) -> Vec<u8> {
        self.secret.to_bytes()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct VerifyingKey(GroupElement, [u8; 33]);

impl VerifyingKey {
    pub fn verify(&self, msg: &[u8], index: u64, sig: &Signature) -> bool {
        let p = curve();
        let (Ok(sigma), Ok(epsilon)) = (
            p.scalar_from_bytes(&sig.0[..32]),
            p.scalar_from_bytes(&sig.0[32..]),
        ) else {
            return false;
        };
        let agg = AggregateSignature {
            sigma,
            epsilon,
            j: index,
        };
        // sigma*G + epsilon*Y through cached tables, then the usual challenge
        let r = p
            .mul_base(&agg.sigma)
            .and_then(|a| a.add(&mul_cached(&self.1, &self.0, &agg.epsilon)?));
        r.is_ok_and(|r| challenge(&p, &r, &message_digest(msg), agg.j) == agg.epsilon)
    }

    /// Encrypts `data` to this key: ephemeral Diffie-Hellman, then a
    /// SHA3-512 keystream. Integrity comes from the enclosing signature.
    pub fn seal<R: RngCore + CryptoRng>(&self, data: &[u8], rng: &mut R) -> Vec<u8> {
        let p = curve();
        let e = p.random_scalar(rng);
        let eph = p.mul_base(&e).expect("curve scalar");
        let shared = mul_cached(&self.1, &self.0, &e).expect("curve scalar");
        let mut out = eph.encode();
        out.extend(xor_stream(&shared, &eph, data));
        out
    }

    fn new(point: GroupElement) -> Self {
        // the identity encodes shorter and stays zero-padded
        let mut enc = [0u8; 33];
        let e = point.encode();
        enc[..e.len().min(33)].copy_from_slice(&e[..e.len().min(33)]);
        Self(point, enc)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        self.1.to_vec()
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, IdentityError> {
        Ok(Self::new(curve().decode_element(bytes)?))
    }
}

fn xor_stream(shared: &GroupElement, eph: &GroupElement, data: &[u8]) -> Vec<u8> {
    let (s, e) = (shared.encode(), eph.encode());
    data.chunks(64)
        .enumerate()
        .flat_map(|(i, chunk)| {
            let block = digest(tag::SEAL, &[&s, &e, &(i as u32).to_be_bytes()]);
            chunk.iter().zip(block).map(|(a, b)| a ^ b).collect::<Vec<_>>()
        })
        .collect()
}

/// Public key plus the tag of whoever vouched for it.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Certificate {
    pub public_key: VerifyingKey,
    pub issuer: String,
}
