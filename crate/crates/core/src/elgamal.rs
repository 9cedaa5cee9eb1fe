//! Elliptic-curve ElGamal with additive key shares.
//!
//! Encryption uses the aggregate key `Y_agg`. Each node contributes a
//! decryption share `A_i = -x_i * C1`; the host adds all shares to `C2`.
//! A Chaum-Pedersen proof lets the host check that a share was computed
//! with the same `x_i` that backs the node's public share `Y_i`.

use num_bigint::BigUint;
use rand_core::{CryptoRng, RngCore};
use thiserror::Error;

use crate::group::{digest, tag, DomainParams, GroupElement, GroupError, Scalar};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ElGamalError {
    #[error("incomplete quorum: expected {expected} decryption shares, got {got}")]
    IncompleteQuorum { expected: usize, got: usize },
    #[error("malformed ciphertext")]
    Malformed,
    #[error(transparent)]
    Group(#[from] GroupError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Ciphertext {
    pub c1: GroupElement,
    pub c2: GroupElement,
}

impl Ciphertext {
    /// `encode(C1) || encode(C2)`.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = self.c1.encode();
        out.extend(self.c2.encode());
        out
    }

    pub fn from_bytes(params: &DomainParams, bytes: &[u8]) -> Result<Self, ElGamalError> {
        let w = params.element_width();
        if bytes.len() != 2 * w {
            return Err(ElGamalError::Malformed);
        }
        Ok(Self {
            c1: params.decode_element(&bytes[..w])?,
            c2: params.decode_element(&bytes[w..])?,
        })
    }
}

pub fn encrypt<R: RngCore + CryptoRng>(
    params: &DomainParams,
    m: &GroupElement,
    y_agg: &GroupElement,
    rng: &mut R,
) -> Result<Ciphertext, ElGamalError> {
    let r = params.random_scalar(rng);
    encrypt_with_nonce(params, m, y_agg, &r)
}

/// `C1 = r*G`, `C2 = m + r*Y_agg`.
pub fn encrypt_with_nonce(
    params: &DomainParams,
    m: &GroupElement,
    y_agg: &GroupElement,
    r: &Scalar,
) -> Result<Ciphertext, ElGamalError> {
    params.check_element(m)?;
    let c1 = params.mul_base(r)?;
    let c2 = m.add(&params.mul(r, y_agg)?)?;
    Ok(Ciphertext { c1, c2 })
}

/// `A_i = -x_i * C1`.
pub fn dec_share(c1: &GroupElement, x_i: &Scalar) -> Result<GroupElement, ElGamalError> {
    Ok(c1.mul(&x_i.neg())?)
}

/// `C2 + sum(A_i)`; `quorum_size` shares are required.
pub fn aggr_dec(
    c2: &GroupElement,
    shares: &[GroupElement],
    quorum_size: usize,
) -> Result<GroupElement, ElGamalError> {
    if shares.len() != quorum_size {
        return Err(ElGamalError::IncompleteQuorum {
            expected: quorum_size,
            got: shares.len(),
        });
    }
    shares
        .iter()
        .try_fold(*c2, |acc, a| acc.add(a))
        .map_err(Into::into)
}

/// Non-interactive proof that `log_G(Y_i) = log_C1(-A_i)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct DleqProof {
    pub commit_g: GroupElement,
    pub commit_c1: GroupElement,
    pub challenge: Scalar,
    pub response: Scalar,
}

impl DleqProof {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = self.commit_g.encode();
        out.extend(self.commit_c1.encode());
        out.extend(self.challenge.to_bytes());
        out.extend(self.response.to_bytes());
        out
    }

    pub fn encoded_len(params: &DomainParams) -> usize {
        2 * params.element_width() + 2 * params.scalar_width()
    }

    pub fn from_bytes(params: &DomainParams, bytes: &[u8]) -> Result<Self, GroupError> {
        if bytes.len() != Self::encoded_len(params) {
            return Err(GroupError::InvalidEncoding("dleq proof length"));
        }
        let (ew, sw) = (params.element_width(), params.scalar_width());
        Ok(Self {
            commit_g: params.decode_element(&bytes[..ew])?,
            commit_c1: params.decode_element(&bytes[ew..2 * ew])?,
            challenge: params.scalar_from_bytes(&bytes[2 * ew..2 * ew + sw])?,
            response: params.scalar_from_bytes(&bytes[2 * ew + sw..])?,
        })
    }
}

/// Fiat-Shamir challenge in `[1, n)`. A zero challenge would make the
/// share equation vacuous, so it is excluded.
fn dleq_challenge(
    params: &DomainParams,
    y: &GroupElement,
    c1: &GroupElement,
    neg_a: &GroupElement,
    t_g: &GroupElement,
    t_c1: &GroupElement,
) -> Scalar {
    let d = digest(
        tag::DLEQ,
        &[
            &params.generator().encode(),
            &y.encode(),
            &c1.encode(),
            &neg_a.encode(),
            &t_g.encode(),
            &t_c1.encode(),
        ],
    );
    let n_minus_one = params.order() - 1u32;
    let c = BigUint::from_bytes_be(&d) % n_minus_one + 1u32;
    params.scalar_from_biguint(&c)
}

pub fn dleq_prove<R: RngCore + CryptoRng>(
    params: &DomainParams,
    x_i: &Scalar,
    c1: &GroupElement,
    y_i: &GroupElement,
    a_i: &GroupElement,
    rng: &mut R,
) -> Result<DleqProof, GroupError> {
    let w = params.random_scalar(rng);
    let commit_g = params.mul_base(&w)?;
    let commit_c1 = params.mul(&w, c1)?;
    let challenge = dleq_challenge(params, y_i, c1, &a_i.neg(), &commit_g, &commit_c1);
    let response = w.add(&challenge.mul(x_i)?)?;
    Ok(DleqProof {
        commit_g,
        commit_c1,
        challenge,
        response,
    })
}

pub fn dleq_verify(
    params: &DomainParams,
    proof: &DleqProof,
    y_i: &GroupElement,
    c1: &GroupElement,
    a_i: &GroupElement,
) -> bool {
    let check = || -> Result<bool, GroupError> {
        for e in [y_i, c1, a_i, &proof.commit_g, &proof.commit_c1] {
            params.check_element(e)?;
        }
        params.check_scalar(&proof.challenge)?;
        params.check_scalar(&proof.response)?;
        if proof.challenge.is_zero() {
            return Ok(false);
        }
        let neg_a = a_i.neg();
        let expected = dleq_challenge(params, y_i, c1, &neg_a, &proof.commit_g, &proof.commit_c1);
        if expected != proof.challenge {
            return Ok(false);
        }
        let c = &proof.challenge;
        let lhs_g = params.mul_base(&proof.response)?;
        let rhs_g = proof.commit_g.add(&y_i.mul(c)?)?;
        let lhs_c = c1.mul(&proof.response)?;
        let rhs_c = proof.commit_c1.add(&neg_a.mul(c)?)?;
        Ok(lhs_g == rhs_g && lhs_c == rhs_c)
    };
    check().unwrap_or(false)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::threshold::sum_scalars;
    use rand_chacha::rand_core::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    fn zn13() -> DomainParams {
        DomainParams::transparent(13).unwrap()
    }

    fn el(params: &DomainParams, v: u64) -> GroupElement {
        params.mul_base(&params.scalar(v)).unwrap()
    }

    #[test]
    fn encrypt_vector() {
        let p = zn13();
        let ct = encrypt_with_nonce(&p, &el(&p, 4), &el(&p, 2), &p.scalar(5)).unwrap();
        assert_eq!(ct.c1.as_u32(), Some(5));
        assert_eq!(ct.c2.as_u32(), Some(1));
        let ct = encrypt_with_nonce(&p, &el(&p, 4), &p.identity(), &p.scalar(5)).unwrap();
        assert_eq!(ct.c2, el(&p, 4));
    }

    #[test]
    fn dec_share_vectors() {
        let p = zn13();
        assert_eq!(dec_share(&el(&p, 5), &p.scalar(3)).unwrap().as_u32(), Some(11));
        assert_eq!(dec_share(&el(&p, 5), &p.scalar(5)).unwrap().as_u32(), Some(1));
        assert!(dec_share(&el(&p, 5), &p.zero()).unwrap().is_identity());
    }

    #[test]
    fn full_trace_m4() {
        // x = {3,5,7}, r = 5, m = 4 over Z/13
        let p = zn13();
        let xs = [3u64, 5, 7].map(|v| p.scalar(v));
        let y = el(&p, sum_scalars(&xs).unwrap().as_u32().unwrap() as u64);
        let ct = encrypt_with_nonce(&p, &el(&p, 4), &y, &p.scalar(5)).unwrap();
        let shares: Vec<_> = xs.iter().map(|x| dec_share(&ct.c1, x).unwrap()).collect();
        let vals: Vec<_> = shares.iter().map(|a| a.as_u32().unwrap()).collect();
        assert_eq!(vals, vec![11, 1, 4]);
        assert_eq!(aggr_dec(&ct.c2, &shares, 3).unwrap().as_u32(), Some(4));

        let mut tampered = shares.clone();
        tampered[1] = tampered[1].add(&p.generator()).unwrap();
        assert_ne!(aggr_dec(&ct.c2, &tampered, 3).unwrap().as_u32(), Some(4));
        assert_eq!(
            aggr_dec(&ct.c2, &shares[..2], 3),
            Err(ElGamalError::IncompleteQuorum { expected: 3, got: 2 })
        );
        let ids = vec![p.identity(); 3];
        assert_eq!(aggr_dec(&ct.c2, &ids, 3).unwrap(), ct.c2);
    }

    #[test]
    fn ciphertext_bytes_round_trip() {
        let p = DomainParams::p256();
        let mut rng = ChaCha20Rng::seed_from_u64(3);
        let y = p.mul_base(&p.random_scalar(&mut rng)).unwrap();
        let ct = encrypt(&p, &p.embed_message(b"hello").unwrap(), &y, &mut rng).unwrap();
        assert_eq!(Ciphertext::from_bytes(&p, &ct.to_bytes()).unwrap(), ct);
        assert!(Ciphertext::from_bytes(&p, &ct.to_bytes()[1..]).is_err());
    }

    #[test]
    fn dleq_completeness_and_soundness() {
        for p in [DomainParams::p256(), zn13()] {
            let mut rng = ChaCha20Rng::seed_from_u64(9);
            let x = p.random_scalar(&mut rng);
            let y = p.mul_base(&x).unwrap();
            let c1 = p.mul_base(&p.random_scalar(&mut rng)).unwrap();
            let a = dec_share(&c1, &x).unwrap();
            let proof = dleq_prove(&p, &x, &c1, &y, &a, &mut rng).unwrap();
            assert!(dleq_verify(&p, &proof, &y, &c1, &a));
            let bad = a.add(&p.generator()).unwrap();
            assert!(!dleq_verify(&p, &proof, &y, &c1, &bad));
            let zeroed = DleqProof {
                commit_g: p.identity(),
                commit_c1: p.identity(),
                challenge: p.zero(),
                response: p.zero(),
            };
            assert!(!dleq_verify(&p, &zeroed, &y, &c1, &a));
            let decoded = DleqProof::from_bytes(&p, &proof.to_bytes()).unwrap();
            assert_eq!(decoded, proof);
        }
    }
}
