//! Prime-order group abstraction.
//!
//! Two backends sit behind [`DomainParams`]:
//!
//! * `Curve`: NIST P-256, the production backend.
//! * `Transparent`: the additive group of integers modulo a small prime `n`
//!   with generator `1`. Discrete logarithms are trivial there, which makes it
//!   a brute-force oracle for every protocol identity in this crate.
//!
//! Scalars and elements carry their backend tag, so mixing values from
//! different parameter sets is reported as [`GroupError::ParameterMismatch`]
//! instead of silently producing garbage.

use std::collections::HashMap;
use std::fmt;
use std::sync::{Arc, Mutex, OnceLock};

use num_bigint::BigUint;
use p256::elliptic_curve::sec1::{FromEncodedPoint, ToEncodedPoint};
use p256::elliptic_curve::{Field, PrimeField};
use p256::{AffinePoint, EncodedPoint, FieldBytes, ProjectivePoint};
use rand_core::{CryptoRng, RngCore};
use serde::{Deserialize, Serialize};
use sha3::{Digest, Sha3_512};
use thiserror::Error;

/// Domain-separation tags, one per use of the hash function.
pub mod tag {
    pub const COMMIT: &[u8] = b"qhsm/commit";
    pub const CHALLENGE: &[u8] = b"qhsm/challenge";
    pub const PRF: &[u8] = b"qhsm/prf";
    pub const ENVELOPE: &[u8] = b"qhsm/envelope";
    pub const DLEQ: &[u8] = b"qhsm/dleq";
    pub const RNG: &[u8] = b"qhsm/rng";
    pub const NONCE: &[u8] = b"qhsm/nonce";
    pub const SEAL: &[u8] = b"qhsm/seal";
    pub const MESSAGE: &[u8] = b"qhsm/message";
    pub const SCALAR: &[u8] = b"qhsm/scalar";
}

/// Multiples `d * 16^i * P` for `d` in 1..16 and `i` in 0..64, so that a
/// multiplication by a fixed point costs 64 additions. Variable time; the
/// emulator has no timing model.
struct WindowTable(Vec<[ProjectivePoint; 15]>);

impl WindowTable {
    fn new(p: ProjectivePoint) -> Self {
        let mut rows = Vec::with_capacity(64);
        let mut base = p;
        for _ in 0..64 {
            let mut row = [ProjectivePoint::IDENTITY; 15];
            let mut acc = base;
            for r in row.iter_mut() {
                *r = acc;
                acc += base;
            }
            rows.push(row);
            base = acc;
        }
        Self(rows)
    }

    fn mul(&self, k: &p256::Scalar) -> ProjectivePoint {
        let bytes = k.to_bytes();
        let mut acc = ProjectivePoint::IDENTITY;
        for (i, row) in self.0.iter().enumerate() {
            let b = bytes[31 - i / 2];
            let d = if i % 2 == 0 { b & 15 } else { b >> 4 };
            if d != 0 {
                acc += row[d as usize - 1];
            }
        }
        acc
    }
}

enum Cached {
    Uses(u32),
    Table(Arc<WindowTable>),
}

/// Uses of a point before its table is built.
const TABLE_AFTER: u32 = 4;

/// `k * P` for a long-lived point, keyed by `label` (normally the point's
/// encoding). Points seen often get a cached table.
pub(crate) fn mul_cached(label: &[u8], p: &GroupElement, k: &Scalar) -> Result<GroupElement, GroupError> {
    static TABLES: OnceLock<Mutex<HashMap<Vec<u8>, Cached>>> = OnceLock::new();
    let (ElemRepr::P256(point), ScalarRepr::P256(s)) = (p.0, k.0) else {
        return p.mul(k);
    };
    let table = {
        let mut cache = TABLES.get_or_init(Default::default).lock().expect("table cache");
        let entry = cache.entry(label.to_vec()).or_insert(Cached::Uses(0));
        match entry {
            Cached::Table(t) => Some(t.clone()),
            Cached::Uses(n) if *n + 1 >= TABLE_AFTER => {
                let t = Arc::new(WindowTable::new(point));
                *entry = Cached::Table(t.clone());
                Some(t)
            }
            Cached::Uses(n) => {
                *n += 1;
                None
            }
        }
    };
    match table {
        Some(t) => Ok(GroupElement(ElemRepr::P256(t.mul(&s)))),
        None => p.mul(k),
    }
}

/// Width of a P-256 scalar or field element.
const P256_WIDTH: usize = 32;
/// Width of a compressed P-256 point.
const P256_POINT_WIDTH: usize = 33;
/// Width of a transparent-backend residue.
const ZN_WIDTH: usize = 4;

const P256_P: &str = "ffffffff00000001000000000000000000000000ffffffffffffffffffffffff";
const P256_A: &str = "ffffffff00000001000000000000000000000000fffffffffffffffffffffffc";
const P256_B: &str = "5ac635d8aa3a93e7b3ebbd55769886bc651d06b0cc53b0f63bce3c3e27d2604b";
const P256_N: &str = "ffffffff00000000ffffffffffffffffbce6faada7179e84f3b9cac2fc632551";

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum GroupError {
    #[error("operands belong to different domain parameters")]
    ParameterMismatch,
    #[error("invalid encoding: {0}")]
    InvalidEncoding(&'static str),
    #[error("invalid key: {0}")]
    InvalidKey(&'static str),
    #[error("invalid domain parameters: {0}")]
    InvalidParams(String),
    #[error("scalar is not invertible")]
    NotInvertible,
    #[error("message of {0} bytes does not fit in a group element")]
    MessageTooLong(usize),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Backend {
    Curve,
    Transparent,
}

/// How byte strings are mapped to scalars.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum HashMode {
    /// SHA3-512 with a domain-separation prefix, reduced modulo `n`.
    Sha3,
    /// Sum of the input bytes modulo `n`. Transparent backend only; used to
    /// make hand-checked test vectors possible. Not collision resistant.
    ByteSum,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
enum Group {
    P256,
    Zn(u32),
}

/// Group context `(p, a, b, G, n, h)` plus backend selector.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct DomainParams {
    group: Group,
    hash: HashMode,
}

impl DomainParams {
    /// NIST P-256 with SHA3-512 hashing.
    pub fn p256() -> Self {
        Self {
            group: Group::P256,
            hash: HashMode::Sha3,
        }
    }

    /// Integers modulo the prime `n` under addition, generator `1`.
    pub fn transparent(n: u32) -> Result<Self, GroupError> {
        if !is_prime(n) {
            return Err(GroupError::InvalidParams(format!(
                "transparent modulus {n} is not prime"
            )));
        }
        Ok(Self {
            group: Group::Zn(n),
            hash: HashMode::Sha3,
        })
    }

    pub fn with_hash_mode(self, hash: HashMode) -> Result<Self, GroupError> {
        if hash == HashMode::ByteSum && self.group == Group::P256 {
            return Err(GroupError::InvalidParams(
                "byte-sum hashing is only available on the transparent backend".into(),
            ));
        }
        Ok(Self { hash, ..self })
    }

    pub fn backend(&self) -> Backend {
        match self.group {
            Group::P256 => Backend::Curve,
            Group::Zn(_) => Backend::Transparent,
        }
    }

    pub fn hash_mode(&self) -> HashMode {
        self.hash
    }

    /// Order `n` of the generator.
    pub fn order(&self) -> BigUint {
        match self.group {
            Group::P256 => hex_big(P256_N),
            Group::Zn(n) => BigUint::from(n),
        }
    }

    /// Field prime `p`. On the transparent backend this is `n` itself.
    pub fn field_prime(&self) -> BigUint {
        match self.group {
            Group::P256 => hex_big(P256_P),
            Group::Zn(n) => BigUint::from(n),
        }
    }

    /// Curve coefficients `(a, b)`; zero on the transparent backend.
    pub fn curve_coefficients(&self) -> (BigUint, BigUint) {
        match self.group {
            Group::P256 => (hex_big(P256_A), hex_big(P256_B)),
            Group::Zn(_) => (BigUint::default(), BigUint::default()),
        }
    }

    pub fn cofactor(&self) -> u32 {
        1
    }

    /// Modulus of the transparent backend, if that is the active backend.
    pub fn transparent_modulus(&self) -> Option<u32> {
        match self.group {
            Group::P256 => None,
            Group::Zn(n) => Some(n),
        }
    }

    pub fn scalar_width(&self) -> usize {
        match self.group {
            Group::P256 => P256_WIDTH,
            Group::Zn(_) => ZN_WIDTH,
        }
    }

    pub fn element_width(&self) -> usize {
        match self.group {
            Group::P256 => P256_POINT_WIDTH,
            Group::Zn(_) => ZN_WIDTH,
        }
    }

    pub fn generator(&self) -> GroupElement {
        match self.group {
            Group::P256 => GroupElement(ElemRepr::P256(ProjectivePoint::GENERATOR)),
            Group::Zn(n) => GroupElement(ElemRepr::Zn { v: 1 % n, n }),
        }
    }

    pub fn identity(&self) -> GroupElement {
        match self.group {
            Group::P256 => GroupElement(ElemRepr::P256(ProjectivePoint::IDENTITY)),
            Group::Zn(n) => GroupElement(ElemRepr::Zn { v: 0, n }),
        }
    }

    pub fn zero(&self) -> Scalar {
        self.scalar(0)
    }

    pub fn one(&self) -> Scalar {
        self.scalar(1)
    }

    /// The integer `v` reduced modulo `n`.
    pub fn scalar(&self, v: u64) -> Scalar {
        match self.group {
            Group::P256 => Scalar(ScalarRepr::P256(p256::Scalar::from(v))),
            Group::Zn(n) => Scalar(ScalarRepr::Zn {
                v: (v % n as u64) as u32,
                n,
            }),
        }
    }

    /// Reduces an arbitrary non-negative integer modulo `n`.
    pub fn scalar_from_biguint(&self, v: &BigUint) -> Scalar {
        let reduced = v % self.order();
        match self.group {
            Group::P256 => {
                let bytes = left_pad(&reduced.to_bytes_be(), P256_WIDTH);
                let s = p256::Scalar::from_repr(field_bytes(&bytes));
                Scalar(ScalarRepr::P256(
                    Option::from(s).expect("value reduced below the group order"),
                ))
            }
            Group::Zn(n) => {
                let digits = reduced.to_u32_digits();
                Scalar(ScalarRepr::Zn {
                    v: digits.first().copied().unwrap_or(0),
                    n,
                })
            }
        }
    }

    /// Decodes a fixed-width big-endian scalar; values `>= n` are rejected.
    pub fn scalar_from_bytes(&self, bytes: &[u8]) -> Result<Scalar, GroupError> {
        if bytes.len() != self.scalar_width() {
            return Err(GroupError::InvalidEncoding("scalar width"));
        }
        match self.group {
            Group::P256 => {
                let s = p256::Scalar::from_repr(field_bytes(bytes));
                Option::from(s)
                    .map(|s| Scalar(ScalarRepr::P256(s)))
                    .ok_or(GroupError::InvalidEncoding("scalar not reduced"))
            }
            Group::Zn(n) => {
                let v = u32::from_be_bytes(bytes.try_into().expect("width checked"));
                if v >= n {
                    return Err(GroupError::InvalidEncoding("scalar not reduced"));
                }
                Ok(Scalar(ScalarRepr::Zn { v, n }))
            }
        }
    }

    /// Uniform scalar in `[0, n)`.
    pub fn random_scalar<R: RngCore + CryptoRng>(&self, rng: &mut R) -> Scalar {
        match self.group {
            Group::P256 => Scalar(ScalarRepr::P256(p256::Scalar::random(rng))),
            Group::Zn(n) => {
                let space = 1u64 << 32;
                let limit = space - space % n as u64;
                loop {
                    let v = rng.next_u32() as u64;
                    if v < limit {
                        return Scalar(ScalarRepr::Zn {
                            v: (v % n as u64) as u32,
                            n,
                        });
                    }
                }
            }
        }
    }

    pub fn owns_scalar(&self, s: &Scalar) -> bool {
        matches!(
            (self.group, s.0),
            (Group::P256, ScalarRepr::P256(_))
        ) || matches!((self.group, s.0), (Group::Zn(n), ScalarRepr::Zn { n: m, .. }) if n == m)
    }

    pub fn owns_element(&self, p: &GroupElement) -> bool {
        matches!(
            (self.group, p.0),
            (Group::P256, ElemRepr::P256(_))
        ) || matches!((self.group, p.0), (Group::Zn(n), ElemRepr::Zn { n: m, .. }) if n == m)
    }

    /// `k * G`.
    pub fn mul_base(&self, k: &Scalar) -> Result<GroupElement, GroupError> {
        match (self.group, k.0) {
            (Group::P256, ScalarRepr::P256(s)) => {
                static BASE: OnceLock<WindowTable> = OnceLock::new();
                let t = BASE.get_or_init(|| WindowTable::new(ProjectivePoint::GENERATOR));
                Ok(GroupElement(ElemRepr::P256(t.mul(&s))))
            }
            _ => self.generator().mul(k),
        }
    }

    /// `k * P`, checking both operands belong to these parameters.
    pub fn mul(&self, k: &Scalar, p: &GroupElement) -> Result<GroupElement, GroupError> {
        self.check_scalar(k)?;
        self.check_element(p)?;
        p.mul(k)
    }

    pub fn add(&self, p: &GroupElement, q: &GroupElement) -> Result<GroupElement, GroupError> {
        self.check_element(p)?;
        self.check_element(q)?;
        p.add(q)
    }

    pub fn neg(&self, p: &GroupElement) -> Result<GroupElement, GroupError> {
        self.check_element(p)?;
        Ok(p.neg())
    }

    pub fn check_scalar(&self, s: &Scalar) -> Result<(), GroupError> {
        if self.owns_scalar(s) {
            Ok(())
        } else {
            Err(GroupError::ParameterMismatch)
        }
    }

    pub fn check_element(&self, p: &GroupElement) -> Result<(), GroupError> {
        if self.owns_element(p) {
            Ok(())
        } else {
            Err(GroupError::ParameterMismatch)
        }
    }

    /// Decodes a canonical element encoding (see [`GroupElement::encode`]).
    pub fn decode_element(&self, bytes: &[u8]) -> Result<GroupElement, GroupError> {
        if bytes.len() != self.element_width() {
            return Err(GroupError::InvalidEncoding("element width"));
        }
        match self.group {
            Group::P256 => {
                if bytes.iter().all(|b| *b == 0) {
                    return Ok(self.identity());
                }
                if bytes[0] != 0x02 && bytes[0] != 0x03 {
                    return Err(GroupError::InvalidEncoding("point tag"));
                }
                let ep = EncodedPoint::from_bytes(bytes)
                    .map_err(|_| GroupError::InvalidEncoding("sec1 point"))?;
                let affine: Option<AffinePoint> = AffinePoint::from_encoded_point(&ep).into();
                affine
                    .map(|a| GroupElement(ElemRepr::P256(a.into())))
                    .ok_or(GroupError::InvalidEncoding("point not on curve"))
            }
            Group::Zn(n) => {
                let v = u32::from_be_bytes(bytes.try_into().expect("width checked"));
                if v >= n {
                    return Err(GroupError::InvalidEncoding("residue not reduced"));
                }
                Ok(GroupElement(ElemRepr::Zn { v, n }))
            }
        }
    }

    /// Hash of `data` mapped into `[0, n)` with the default scalar tag.
    pub fn hash_to_scalar(&self, data: &[u8]) -> Scalar {
        self.hash_to_scalar_tagged(tag::SCALAR, &[data])
    }

    /// Hash of the concatenated `parts` mapped into `[0, n)`.
    ///
    /// With [`HashMode::Sha3`] the SHA3-512 digest of `tag || parts` is read
    /// as a big-endian integer and reduced modulo `n`. With
    /// [`HashMode::ByteSum`] the tag is ignored and the bytes are summed.
    pub fn hash_to_scalar_tagged(&self, tag: &[u8], parts: &[&[u8]]) -> Scalar {
        match self.hash {
            HashMode::Sha3 => {
                let d = digest(tag, parts);
                self.scalar_from_biguint(&BigUint::from_bytes_be(&d))
            }
            HashMode::ByteSum => {
                let n = self.transparent_modulus().expect("byte-sum requires Zn") as u64;
                let sum = parts
                    .iter()
                    .flat_map(|p| p.iter())
                    .fold(0u64, |acc, b| (acc + *b as u64) % n);
                self.scalar(sum)
            }
        }
    }

    /// Keyed pseudorandom function `Hash(s || j)` with `j` as 8-byte big-endian.
    pub fn prf(&self, key: &[u8], j: u64) -> Result<Scalar, GroupError> {
        if key.is_empty() {
            return Err(GroupError::InvalidKey("empty PRF key"));
        }
        Ok(self.hash_to_scalar_tagged(tag::PRF, &[key, &j.to_be_bytes()]))
    }

    /// Largest message accepted by [`DomainParams::embed_message`].
    pub fn max_message_len(&self) -> usize {
        match self.group {
            Group::P256 => P256_WIDTH - 3,
            Group::Zn(n) => ((32 - n.leading_zeros() as usize).saturating_sub(1)) / 8,
        }
    }

    /// Maps a short byte string to a group element.
    ///
    /// Transparent backend: the big-endian integer value, which must be below
    /// `n`; leading zero bytes are not preserved. Curve backend:
    /// try-and-increment over x-coordinates of the form
    /// `00 || len || data || zero padding || counter`.
    pub fn embed_message(&self, msg: &[u8]) -> Result<GroupElement, GroupError> {
        match self.group {
            Group::P256 => {
                if msg.len() > self.max_message_len() {
                    return Err(GroupError::MessageTooLong(msg.len()));
                }
                let mut x = [0u8; P256_WIDTH];
                x[1] = msg.len() as u8;
                x[2..2 + msg.len()].copy_from_slice(msg);
                for ctr in 0..=u8::MAX {
                    x[P256_WIDTH - 1] = ctr;
                    let mut enc = [0u8; P256_POINT_WIDTH];
                    enc[0] = 0x02;
                    enc[1..].copy_from_slice(&x);
                    if let Ok(p) = self.decode_element(&enc) {
                        return Ok(p);
                    }
                }
                Err(GroupError::InvalidEncoding("no curve point for message"))
            }
            Group::Zn(n) => {
                let v = BigUint::from_bytes_be(msg);
                if v >= BigUint::from(n) {
                    return Err(GroupError::MessageTooLong(msg.len()));
                }
                Ok(GroupElement(ElemRepr::Zn {
                    v: v.to_u32_digits().first().copied().unwrap_or(0),
                    n,
                }))
            }
        }
    }

    /// Inverse of [`DomainParams::embed_message`].
    pub fn extract_message(&self, p: &GroupElement) -> Result<Vec<u8>, GroupError> {
        self.check_element(p)?;
        match p.0 {
            ElemRepr::P256(_) => {
                let enc = p.encode();
                let x = &enc[1..];
                let len = x[1] as usize;
                if x[0] != 0 || len > self.max_message_len() {
                    return Err(GroupError::InvalidEncoding("not an embedded message"));
                }
                if x[2 + len..P256_WIDTH - 1].iter().any(|b| *b != 0) {
                    return Err(GroupError::InvalidEncoding("not an embedded message"));
                }
                Ok(x[2..2 + len].to_vec())
            }
            ElemRepr::Zn { v: 0, .. } => Ok(Vec::new()),
            ElemRepr::Zn { v, .. } => Ok(BigUint::from(v).to_bytes_be()),
        }
    }
}

impl Default for DomainParams {
    fn default() -> Self {
        Self::p256()
    }
}

impl fmt::Display for DomainParams {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.group {
            Group::P256 => write!(f, "P-256"),
            Group::Zn(n) => write!(f, "Z/{n}"),
        }
    }
}

/// Element of `Z_n`.
#[derive(Clone, Copy, PartialEq, Eq)]
pub struct Scalar(ScalarRepr);

#[derive(Clone, Copy, PartialEq, Eq)]
enum ScalarRepr {
    P256(p256::Scalar),
    Zn { v: u32, n: u32 },
}

impl Scalar {
    pub fn add(&self, other: &Scalar) -> Result<Scalar, GroupError> {
        match (self.0, other.0) {
            (ScalarRepr::P256(a), ScalarRepr::P256(b)) => Ok(Scalar(ScalarRepr::P256(a + b))),
            (ScalarRepr::Zn { v: a, n }, ScalarRepr::Zn { v: b, n: m }) if n == m => {
                Ok(zn_scalar((a as u64 + b as u64) % n as u64, n))
            }
            _ => Err(GroupError::ParameterMismatch),
        }
    }

    pub fn sub(&self, other: &Scalar) -> Result<Scalar, GroupError> {
        self.add(&other.neg())
    }

    pub fn mul(&self, other: &Scalar) -> Result<Scalar, GroupError> {
        match (self.0, other.0) {
            (ScalarRepr::P256(a), ScalarRepr::P256(b)) => Ok(Scalar(ScalarRepr::P256(a * b))),
            (ScalarRepr::Zn { v: a, n }, ScalarRepr::Zn { v: b, n: m }) if n == m => {
                Ok(zn_scalar((a as u64 * b as u64) % n as u64, n))
            }
            _ => Err(GroupError::ParameterMismatch),
        }
    }

    pub fn neg(&self) -> Scalar {
        match self.0 {
            ScalarRepr::P256(a) => Scalar(ScalarRepr::P256(-a)),
            ScalarRepr::Zn { v, n } => zn_scalar((n as u64 - v as u64) % n as u64, n),
        }
    }

    pub fn invert(&self) -> Result<Scalar, GroupError> {
        match self.0 {
            ScalarRepr::P256(a) => Option::<p256::Scalar>::from(a.invert())
                .map(|s| Scalar(ScalarRepr::P256(s)))
                .ok_or(GroupError::NotInvertible),
            ScalarRepr::Zn { v, n } => {
                if v == 0 {
                    return Err(GroupError::NotInvertible);
                }
                // Fermat: v^(n-2) mod n
                let inv = BigUint::from(v).modpow(&BigUint::from(n - 2), &BigUint::from(n));
                Ok(zn_scalar(inv.to_u32_digits().first().copied().unwrap_or(0) as u64, n))
            }
        }
    }

    pub fn is_zero(&self) -> bool {
        match self.0 {
            ScalarRepr::P256(a) => bool::from(a.is_zero()),
            ScalarRepr::Zn { v, .. } => v == 0,
        }
    }

    /// Fixed-width big-endian encoding.
    pub fn to_bytes(&self) -> Vec<u8> {
        match self.0 {
            ScalarRepr::P256(a) => a.to_repr().to_vec(),
            ScalarRepr::Zn { v, .. } => v.to_be_bytes().to_vec(),
        }
    }

    pub fn to_biguint(&self) -> BigUint {
        BigUint::from_bytes_be(&self.to_bytes())
    }

    /// Residue on the transparent backend.
    pub fn as_u32(&self) -> Option<u32> {
        match self.0 {
            ScalarRepr::P256(_) => None,
            ScalarRepr::Zn { v, .. } => Some(v),
        }
    }
}

impl fmt::Debug for Scalar {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.0 {
            ScalarRepr::P256(_) => write!(f, "Scalar(0x{})", hex(&self.to_bytes())),
            ScalarRepr::Zn { v, n } => write!(f, "Scalar({v} mod {n})"),
        }
    }
}

/// Element of the group generated by `G`.
#[derive(Clone, Copy, PartialEq, Eq)]
pub struct GroupElement(ElemRepr);

#[derive(Clone, Copy, PartialEq, Eq)]
enum ElemRepr {
    P256(ProjectivePoint),
    Zn { v: u32, n: u32 },
}

impl GroupElement {
    pub fn add(&self, other: &GroupElement) -> Result<GroupElement, GroupError> {
        match (self.0, other.0) {
            (ElemRepr::P256(a), ElemRepr::P256(b)) => Ok(GroupElement(ElemRepr::P256(a + b))),
            (ElemRepr::Zn { v: a, n }, ElemRepr::Zn { v: b, n: m }) if n == m => {
                Ok(zn_elem((a as u64 + b as u64) % n as u64, n))
            }
            _ => Err(GroupError::ParameterMismatch),
        }
    }

    pub fn sub(&self, other: &GroupElement) -> Result<GroupElement, GroupError> {
        self.add(&other.neg())
    }

    pub fn neg(&self) -> GroupElement {
        match self.0 {
            ElemRepr::P256(a) => GroupElement(ElemRepr::P256(-a)),
            ElemRepr::Zn { v, n } => zn_elem((n as u64 - v as u64) % n as u64, n),
        }
    }

    pub fn mul(&self, k: &Scalar) -> Result<GroupElement, GroupError> {
        match (self.0, k.0) {
            (ElemRepr::P256(p), ScalarRepr::P256(s)) => Ok(GroupElement(ElemRepr::P256(p * s))),
            (ElemRepr::Zn { v, n }, ScalarRepr::Zn { v: s, n: m }) if n == m => {
                Ok(zn_elem((v as u64 * s as u64) % n as u64, n))
            }
            _ => Err(GroupError::ParameterMismatch),
        }
    }

    pub fn is_identity(&self) -> bool {
        match self.0 {
            ElemRepr::P256(p) => p == ProjectivePoint::IDENTITY,
            ElemRepr::Zn { v, .. } => v == 0,
        }
    }

    /// Canonical encoding: 33-byte compressed SEC1 point on the curve backend
    /// (identity as 33 zero bytes), 4-byte big-endian residue otherwise.
    pub fn encode(&self) -> Vec<u8> {
        match self.0 {
            ElemRepr::P256(p) => {
                if p == ProjectivePoint::IDENTITY {
                    return vec![0u8; P256_POINT_WIDTH];
                }
                p.to_affine().to_encoded_point(true).as_bytes().to_vec()
            }
            ElemRepr::Zn { v, .. } => v.to_be_bytes().to_vec(),
        }
    }

    /// Residue on the transparent backend.
    pub fn as_u32(&self) -> Option<u32> {
        match self.0 {
            ElemRepr::P256(_) => None,
            ElemRepr::Zn { v, .. } => Some(v),
        }
    }
}

impl fmt::Debug for GroupElement {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.0 {
            ElemRepr::P256(_) => write!(f, "Element(0x{})", hex(&self.encode())),
            ElemRepr::Zn { v, n } => write!(f, "Element({v} mod {n})"),
        }
    }
}

/// SHA3-512 over `len(tag) || tag || parts...`.
pub fn digest(tag: &[u8], parts: &[&[u8]]) -> [u8; 64] {
    let mut h = Sha3_512::new();
    h.update([tag.len() as u8]);
    h.update(tag);
    for p in parts {
        h.update(p);
    }
    h.finalize().into()
}

/// Plain SHA3-512 of a message, the `Hash(m)` fed into signatures.
pub fn message_digest(msg: &[u8]) -> [u8; 64] {
    digest(tag::MESSAGE, &[msg])
}

fn zn_scalar(v: u64, n: u32) -> Scalar {
    Scalar(ScalarRepr::Zn { v: v as u32, n })
}

fn zn_elem(v: u64, n: u32) -> GroupElement {
    GroupElement(ElemRepr::Zn { v: v as u32, n })
}

fn is_prime(n: u32) -> bool {
    if n < 2 {
        return false;
    }
    let n = n as u64;
    let mut d = 2u64;
    while d * d <= n {
        if n % d == 0 {
            return false;
        }
        d += 1;
    }
    true
}

fn field_bytes(bytes: &[u8]) -> FieldBytes {
    let mut out = FieldBytes::default();
    out.copy_from_slice(bytes);
    out
}

fn hex_big(s: &str) -> BigUint {
    BigUint::parse_bytes(s.as_bytes(), 16).expect("valid constant")
}

fn left_pad(bytes: &[u8], width: usize) -> Vec<u8> {
    let mut out = vec![0u8; width.saturating_sub(bytes.len())];
    out.extend_from_slice(bytes);
    out
}

pub(crate) fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_chacha::rand_core::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    fn zn13() -> DomainParams {
        DomainParams::transparent(13).unwrap()
    }

    fn toy13() -> DomainParams {
        zn13().with_hash_mode(HashMode::ByteSum).unwrap()
    }

    #[test]
    fn transparent_requires_prime() {
        assert!(DomainParams::transparent(12).is_err());
        assert!(DomainParams::transparent(1).is_err());
        assert!(DomainParams::transparent(257).is_ok());
    }

    #[test]
    fn window_tables_match_plain_multiplication() {
        let p = DomainParams::p256();
        let mut rng = ChaCha20Rng::seed_from_u64(11);
        let y = p.generator().mul(&p.scalar(987654321)).unwrap();
        let mut ks: Vec<Scalar> = (0..12).map(|_| p.random_scalar(&mut rng)).collect();
        ks.extend([p.zero(), p.one(), p.one().neg()]);
        for k in &ks {
            let plain = ProjectivePoint::GENERATOR * match k.0 {
                ScalarRepr::P256(s) => s,
                _ => unreachable!(),
            };
            assert_eq!(p.mul_base(k).unwrap(), GroupElement(ElemRepr::P256(plain)));
            // the first uses go through plain multiplication, later ones the table
            assert_eq!(mul_cached(b"test-point", &y, k).unwrap(), y.mul(k).unwrap());
        }
    }

    #[test]
    fn byte_sum_rejected_on_curve() {
        assert!(DomainParams::p256().with_hash_mode(HashMode::ByteSum).is_err());
    }

    #[test]
    fn scalar_rand_range_and_determinism() {
        let params = zn13();
        let a = params.random_scalar(&mut ChaCha20Rng::seed_from_u64(7));
        let b = params.random_scalar(&mut ChaCha20Rng::seed_from_u64(7));
        assert_eq!(a, b);
        assert!(a.as_u32().unwrap() < 13);

        let curve = DomainParams::p256();
        let x = curve.random_scalar(&mut ChaCha20Rng::seed_from_u64(1));
        let y = curve.random_scalar(&mut ChaCha20Rng::seed_from_u64(2));
        assert_ne!(x, y);
    }

    #[test]
    fn transparent_mul_and_add() {
        let params = zn13();
        let g = params.generator();
        assert_eq!(params.mul(&params.scalar(3), &g).unwrap().as_u32(), Some(3));
        let p = params.mul(&params.scalar(5), &g).unwrap();
        let q = params.mul(&params.scalar(9), &g).unwrap();
        assert_eq!(params.add(&p, &q).unwrap().as_u32(), Some(1));
        assert!(params.add(&p, &params.neg(&p).unwrap()).unwrap().is_identity());
        // n * G = identity
        assert!(g.mul(&params.scalar(13)).unwrap().is_identity());
    }

    #[test]
    fn curve_group_law() {
        let params = DomainParams::p256();
        let p = params.mul_base(&params.scalar(12345)).unwrap();
        assert!(params.add(&p, &params.neg(&p).unwrap()).unwrap().is_identity());
    }

    #[test]
    fn mixed_parameters_rejected() {
        let a = zn13();
        let b = DomainParams::transparent(17).unwrap();
        let c = DomainParams::p256();
        assert_eq!(
            a.add(&a.generator(), &b.generator()),
            Err(GroupError::ParameterMismatch)
        );
        assert_eq!(
            a.mul(&c.scalar(2), &a.generator()),
            Err(GroupError::ParameterMismatch)
        );
        assert_eq!(a.scalar(1).add(&b.scalar(1)), Err(GroupError::ParameterMismatch));
    }

    #[test]
    fn toy_hash_vectors() {
        let params = toy13();
        assert_eq!(params.hash_to_scalar(&[5, 9]).as_u32(), Some(1));
        assert_eq!(params.hash_to_scalar(&[]).as_u32(), Some(0));
        // 8-byte big-endian counter sums to its value for small j
        assert_eq!(params.prf(&[1], 2).unwrap().as_u32(), Some(3));
        assert_eq!(params.prf(&[8], 1).unwrap().as_u32(), Some(9));
    }

    #[test]
    fn hash_to_scalar_is_deterministic_and_total() {
        let params = DomainParams::p256();
        assert_eq!(params.hash_to_scalar(b"abc"), params.hash_to_scalar(b"abc"));
        let _ = params.hash_to_scalar(&[]);
        let z = zn13();
        assert!(z.hash_to_scalar(b"xyz").as_u32().unwrap() < 13);
    }

    #[test]
    fn prf_contract() {
        let params = DomainParams::p256();
        assert_eq!(params.prf(b"k", 1).unwrap(), params.prf(b"k", 1).unwrap());
        assert_ne!(params.prf(b"k", 1).unwrap(), params.prf(b"k", 2).unwrap());
        assert_eq!(
            params.prf(&[], 1),
            Err(GroupError::InvalidKey("empty PRF key"))
        );
    }

    #[test]
    fn scalar_encoding_rejects_unreduced() {
        let params = zn13();
        assert!(params.scalar_from_bytes(&13u32.to_be_bytes()).is_err());
        assert_eq!(
            params.scalar_from_bytes(&12u32.to_be_bytes()).unwrap().as_u32(),
            Some(12)
        );
        let curve = DomainParams::p256();
        assert!(curve.scalar_from_bytes(&[0xff; 32]).is_err());
    }

    #[test]
    fn curve_identity_round_trip() {
        let params = DomainParams::p256();
        let id = params.identity();
        assert_eq!(params.decode_element(&id.encode()).unwrap(), id);
        assert!(params.decode_element(&[0x04; 33]).is_err());
    }

    #[test]
    fn message_embedding() {
        let curve = DomainParams::p256();
        for msg in [&b""[..], b"hi", &[0u8; 29][..], b"0123456789abcdefghijklmnopqrs"] {
            let p = curve.embed_message(msg).unwrap();
            assert_eq!(curve.extract_message(&p).unwrap(), msg);
        }
        assert!(curve.embed_message(&[1u8; 30]).is_err());

        let zn = DomainParams::transparent(65537).unwrap();
        assert_eq!(zn.max_message_len(), 2);
        let p = zn.embed_message(&[0xab, 0xcd]).unwrap();
        assert_eq!(zn.extract_message(&p).unwrap(), vec![0xab, 0xcd]);
        assert!(zn13().embed_message(&[13]).is_err());
    }

    #[test]
    fn scalar_inverse() {
        let params = zn13();
        let inv = params.scalar(5).invert().unwrap();
        assert_eq!(inv.mul(&params.scalar(5)).unwrap(), params.one());
        assert!(params.zero().invert().is_err());
        let curve = DomainParams::p256();
        let s = curve.scalar(987654321);
        assert_eq!(s.invert().unwrap().mul(&s).unwrap(), curve.one());
    }
}
