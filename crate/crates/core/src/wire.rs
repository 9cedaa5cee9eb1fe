//! Wire formats: signed command/response frames and the envelopes the
//! controller routes.
//!
//! Frame layout (bit-exact):
//!
//! ```text
//! | total length: u32 BE | opcode: u8 | id: 16 bytes | payload | signature: 64 bytes |
//! ```
//!
//! The signature covers every preceding byte. Responses reuse the layout
//! with `opcode | 0x80` on success and [`ERROR_OPCODE`] on failure.
//!
//! Envelope layout:
//!
//! ```text
//! | src: 3 bytes | dst: 3 bytes | seq: u64 BE | body length: u32 BE | body | signature: 64 bytes |
//! ```
//!
//! signed by `src` over `src || dst || seq || body` with `seq` as the
//! signature index.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::group::{DomainParams, GroupElement, GroupError, Scalar};
use crate::identity::{Signature, SigningKey, VerifyingKey, SIGNATURE_LEN};
use crate::ids::{HostId, KeyId, NodeId};
use crate::multisig::MessageDigest;
use crate::threshold::{Commitment, COMMITMENT_LEN};

pub const FRAME_HEADER_LEN: usize = 4 + 1 + 16;
pub const RESPONSE_FLAG: u8 = 0x80;
pub const ERROR_OPCODE: u8 = 0xff;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum WireError {
    #[error("truncated {0}")]
    Truncated(&'static str),
    #[error("length field {declared} does not match {actual} bytes")]
    LengthMismatch { declared: usize, actual: usize },
    #[error("unknown opcode 0x{0:02x}")]
    UnknownOpcode(u8),
    #[error("unknown party tag 0x{0:02x}")]
    UnknownParty(u8),
    #[error("trailing bytes in {0}")]
    Trailing(&'static str),
    #[error(transparent)]
    Group(#[from] GroupError),
}

/// A sender or receiver on the fabric.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Party {
    Host(HostId),
    Node(NodeId),
}

impl fmt::Display for Party {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Party::Host(h) => h.fmt(f),
            Party::Node(n) => n.fmt(f),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Dest {
    To(Party),
    /// Every IC on the fabric except the sender.
    Broadcast,
}

impl fmt::Display for Dest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Dest::To(p) => p.fmt(f),
            Dest::Broadcast => f.write_str("*"),
        }
    }
}

const TAG_HOST: u8 = 0x01;
const TAG_NODE: u8 = 0x02;
const TAG_BROADCAST: u8 = 0xff;

fn encode_party(p: Party) -> [u8; 3] {
    let (tag, id) = match p {
        Party::Host(HostId(id)) => (TAG_HOST, id),
        Party::Node(NodeId(id)) => (TAG_NODE, id),
    };
    let b = id.to_be_bytes();
    [tag, b[0], b[1]]
}

fn decode_dest(b: &[u8]) -> Result<Dest, WireError> {
    let id = u16::from_be_bytes([b[1], b[2]]);
    match b[0] {
        TAG_HOST => Ok(Dest::To(Party::Host(HostId(id)))),
        TAG_NODE => Ok(Dest::To(Party::Node(NodeId(id)))),
        TAG_BROADCAST => Ok(Dest::Broadcast),
        t => Err(WireError::UnknownParty(t)),
    }
}

fn encode_dest(d: Dest) -> [u8; 3] {
    match d {
        Dest::To(p) => encode_party(p),
        Dest::Broadcast => [TAG_BROADCAST, 0xff, 0xff],
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
#[repr(u8)]
pub enum Opcode {
    KeygenInit = 0x01,
    StoreHash = 0x02,
    StorePubkey = 0x03,
    RevealRequest = 0x04,
    KeygenFinalize = 0x05,
    DecShare = 0x10,
    CacheNonce = 0x20,
    SigShare = 0x21,
    RngShare = 0x30,
    KeypropInstall = 0x40,
    KeypropSplit = 0x41,
    KeypropShare = 0x42,
    KeypropStatus = 0x43,
}

impl Opcode {
    pub const ALL: [Opcode; 13] = [
        Opcode::KeygenInit,
        Opcode::StoreHash,
        Opcode::StorePubkey,
        Opcode::RevealRequest,
        Opcode::KeygenFinalize,
        Opcode::DecShare,
        Opcode::CacheNonce,
        Opcode::SigShare,
        Opcode::RngShare,
        Opcode::KeypropInstall,
        Opcode::KeypropSplit,
        Opcode::KeypropShare,
        Opcode::KeypropStatus,
    ];

    pub fn from_u8(b: u8) -> Result<Self, WireError> {
        Self::ALL
            .iter()
            .copied()
            .find(|o| *o as u8 == b)
            .ok_or(WireError::UnknownOpcode(b))
    }

    /// Instruction name in the style of the card firmware.
    pub fn name(&self) -> &'static str {
        match self {
            Opcode::KeygenInit => "INS_KEYGEN_INIT",
            Opcode::StoreHash => "INS_KEYGEN_STORE_HASH",
            Opcode::StorePubkey => "INS_KEYGEN_STORE_PUBKEY",
            Opcode::RevealRequest => "INS_KEYGEN_GET_PUBKEY",
            Opcode::KeygenFinalize => "INS_KEYGEN_FINALIZE",
            Opcode::DecShare => "INS_DECRYPT",
            Opcode::CacheNonce => "INS_SIGN_CACHE",
            Opcode::SigShare => "INS_SIGN",
            Opcode::RngShare => "INS_RANDOM",
            Opcode::KeypropInstall => "INS_KEYPROP_INSTALL",
            Opcode::KeypropSplit => "INS_KEYPROP_SPLIT",
            Opcode::KeypropShare => "INS_KEYPROP_SHARE",
            Opcode::KeypropStatus => "INS_KEYPROP_STATUS",
        }
    }
}

/// Failure codes carried by error responses.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
#[repr(u8)]
pub enum ErrorCode {
    AccessDenied = 1,
    NonOperational = 2,
    ProtocolOrder = 3,
    CommitmentFailure = 4,
    ReplayRejected = 5,
    UnknownKey = 6,
    Malformed = 7,
    Lifecycle = 8,
    WrongCount = 9,
    Refused = 10,
    Internal = 11,
}

impl ErrorCode {
    pub fn from_u8(b: u8) -> Self {
        match b {
            1 => Self::AccessDenied,
            2 => Self::NonOperational,
            3 => Self::ProtocolOrder,
            4 => Self::CommitmentFailure,
            5 => Self::ReplayRejected,
            6 => Self::UnknownKey,
            7 => Self::Malformed,
            8 => Self::Lifecycle,
            9 => Self::WrongCount,
            10 => Self::Refused,
            _ => Self::Internal,
        }
    }
}

/// A signed command or response.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Frame {
    pub opcode: u8,
    pub id: KeyId,
    pub payload: Vec<u8>,
    pub signature: Signature,
}

impl Frame {
    pub fn sign(opcode: u8, id: KeyId, payload: Vec<u8>, key: &SigningKey) -> Self {
        let mut f = Frame {
            opcode,
            id,
            payload,
            signature: Signature([0u8; SIGNATURE_LEN]),
        };
        f.signature = key.sign(&f.signed_bytes(), 0);
        f
    }

    pub fn total_len(&self) -> usize {
        FRAME_HEADER_LEN + self.payload.len() + SIGNATURE_LEN
    }

    fn signed_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.total_len());
        out.extend((self.total_len() as u32).to_be_bytes());
        out.push(self.opcode);
        out.extend(self.id.0);
        out.extend(&self.payload);
        out
    }

    pub fn verify(&self, key: &VerifyingKey) -> bool {
        key.verify(&self.signed_bytes(), 0, &self.signature)
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = self.signed_bytes();
        out.extend(self.signature.0);
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, WireError> {
        if bytes.len() < FRAME_HEADER_LEN + SIGNATURE_LEN {
            return Err(WireError::Truncated("frame"));
        }
        let declared = u32::from_be_bytes(bytes[..4].try_into().expect("4 bytes")) as usize;
        if declared != bytes.len() {
            return Err(WireError::LengthMismatch {
                declared,
                actual: bytes.len(),
            });
        }
        let mut id = [0u8; 16];
        id.copy_from_slice(&bytes[5..21]);
        let sig_at = bytes.len() - SIGNATURE_LEN;
        let mut sig = [0u8; SIGNATURE_LEN];
        sig.copy_from_slice(&bytes[sig_at..]);
        Ok(Frame {
            opcode: bytes[4],
            id: KeyId(id),
            payload: bytes[FRAME_HEADER_LEN..sig_at].to_vec(),
            signature: Signature(sig),
        })
    }

    pub fn is_response(&self) -> bool {
        self.opcode & RESPONSE_FLAG != 0
    }

    /// The request opcode this frame is or answers.
    pub fn request_opcode(&self) -> Option<Opcode> {
        if self.opcode == ERROR_OPCODE {
            self.payload.get(8).and_then(|b| Opcode::from_u8(*b).ok())
        } else {
            Opcode::from_u8(self.opcode & !RESPONSE_FLAG).ok()
        }
    }
}

/// Routed unit on the fabric.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Envelope {
    pub src: Party,
    pub dst: Dest,
    pub seq: u64,
    pub body: Vec<u8>,
    pub signature: Signature,
}

impl Envelope {
    pub fn seal(src: Party, dst: Dest, seq: u64, body: Vec<u8>, key: &SigningKey) -> Self {
        let mut e = Envelope {
            src,
            dst,
            seq,
            body,
            signature: Signature([0u8; SIGNATURE_LEN]),
        };
        e.signature = key.sign(&e.signed_bytes(), seq);
        e
    }

    fn signed_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(14 + self.body.len());
        out.extend(encode_party(self.src));
        out.extend(encode_dest(self.dst));
        out.extend(self.seq.to_be_bytes());
        out.extend(&self.body);
        out
    }

    pub fn verify(&self, key: &VerifyingKey) -> bool {
        key.verify(&self.signed_bytes(), self.seq, &self.signature)
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(18 + self.body.len() + SIGNATURE_LEN);
        out.extend(encode_party(self.src));
        out.extend(encode_dest(self.dst));
        out.extend(self.seq.to_be_bytes());
        out.extend((self.body.len() as u32).to_be_bytes());
        out.extend(&self.body);
        out.extend(self.signature.0);
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, WireError> {
        if bytes.len() < 18 + SIGNATURE_LEN {
            return Err(WireError::Truncated("envelope"));
        }
        let src = match decode_dest(&bytes[..3])? {
            Dest::To(p) => p,
            Dest::Broadcast => return Err(WireError::UnknownParty(TAG_BROADCAST)),
        };
        let dst = decode_dest(&bytes[3..6])?;
        let seq = u64::from_be_bytes(bytes[6..14].try_into().expect("8 bytes"));
        let body_len = u32::from_be_bytes(bytes[14..18].try_into().expect("4 bytes")) as usize;
        if bytes.len() != 18 + body_len + SIGNATURE_LEN {
            return Err(WireError::LengthMismatch {
                declared: body_len,
                actual: bytes.len().saturating_sub(18 + SIGNATURE_LEN),
            });
        }
        let mut sig = [0u8; SIGNATURE_LEN];
        sig.copy_from_slice(&bytes[18 + body_len..]);
        Ok(Envelope {
            src,
            dst,
            seq,
            body: bytes[18..18 + body_len].to_vec(),
            signature: Signature(sig),
        })
    }

    pub fn frame(&self) -> Result<Frame, WireError> {
        Frame::decode(&self.body)
    }
}

/// Big-endian field reader.
pub(crate) struct Reader<'a> {
    buf: &'a [u8],
    what: &'static str,
}

impl<'a> Reader<'a> {
    pub fn new(buf: &'a [u8], what: &'static str) -> Self {
        Self { buf, what }
    }

    pub fn take(&mut self, n: usize) -> Result<&'a [u8], WireError> {
        if self.buf.len() < n {
            return Err(WireError::Truncated(self.what));
        }
        let (head, tail) = self.buf.split_at(n);
        self.buf = tail;
        Ok(head)
    }

    pub fn u8(&mut self) -> Result<u8, WireError> {
        Ok(self.take(1)?[0])
    }

    pub fn u16(&mut self) -> Result<u16, WireError> {
        Ok(u16::from_be_bytes(self.take(2)?.try_into().expect("2 bytes")))
    }

    pub fn u64(&mut self) -> Result<u64, WireError> {
        Ok(u64::from_be_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    pub fn element(&mut self, p: &DomainParams) -> Result<GroupElement, WireError> {
        Ok(p.decode_element(self.take(p.element_width())?)?)
    }

    pub fn scalar(&mut self, p: &DomainParams) -> Result<Scalar, WireError> {
        Ok(p.scalar_from_bytes(self.take(p.scalar_width())?)?)
    }

    pub fn nodes(&mut self) -> Result<Vec<NodeId>, WireError> {
        let n = self.u16()? as usize;
        (0..n).map(|_| self.u16().map(NodeId)).collect()
    }

    pub fn rest(&mut self) -> &'a [u8] {
        std::mem::take(&mut self.buf)
    }

    pub fn finish(self) -> Result<(), WireError> {
        if self.buf.is_empty() {
            Ok(())
        } else {
            Err(WireError::Trailing(self.what))
        }
    }
}

fn put_nodes(out: &mut Vec<u8>, nodes: &[NodeId]) {
    out.extend((nodes.len() as u16).to_be_bytes());
    for n in nodes {
        out.extend(n.0.to_be_bytes());
    }
}

/// One entry of a batched signing request.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SignItem {
    pub digest: MessageDigest,
    pub j: u64,
    pub nonce: GroupElement,
}

/// Typed command payloads.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Request {
    KeygenInit { members: Vec<NodeId> },
    StoreHash { commitment: Commitment },
    StorePubkey { public: GroupElement },
    RevealRequest,
    KeygenFinalize,
    DecShare { c1: GroupElement, prove: bool, seal: bool },
    CacheNonce { first: u64, count: u16 },
    SigShare { items: Vec<SignItem> },
    RngShare { seal: bool },
    KeypropInstall { aggregate: GroupElement, sources: Vec<NodeId> },
    KeypropSplit { targets: Vec<NodeId> },
    /// A share sealed to the receiving IC's identity key.
    KeypropShare { sealed: Vec<u8> },
    KeypropStatus,
}

const FLAG_PROVE: u8 = 0x01;
const FLAG_SEAL: u8 = 0x02;

impl Request {
    pub fn opcode(&self) -> Opcode {
        match self {
            Request::KeygenInit { .. } => Opcode::KeygenInit,
            Request::StoreHash { .. } => Opcode::StoreHash,
            Request::StorePubkey { .. } => Opcode::StorePubkey,
            Request::RevealRequest => Opcode::RevealRequest,
            Request::KeygenFinalize => Opcode::KeygenFinalize,
            Request::DecShare { .. } => Opcode::DecShare,
            Request::CacheNonce { .. } => Opcode::CacheNonce,
            Request::SigShare { .. } => Opcode::SigShare,
            Request::RngShare { .. } => Opcode::RngShare,
            Request::KeypropInstall { .. } => Opcode::KeypropInstall,
            Request::KeypropSplit { .. } => Opcode::KeypropSplit,
            Request::KeypropShare { .. } => Opcode::KeypropShare,
            Request::KeypropStatus => Opcode::KeypropStatus,
        }
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::new();
        match self {
            Request::KeygenInit { members } => put_nodes(&mut out, members),
            Request::StoreHash { commitment } => out.extend(commitment),
            Request::StorePubkey { public } => out.extend(public.encode()),
            Request::RevealRequest | Request::KeygenFinalize | Request::KeypropStatus => {}
            Request::DecShare { c1, prove, seal } => {
                let mut flags = 0;
                if *prove {
                    flags |= FLAG_PROVE;
                }
                if *seal {
                    flags |= FLAG_SEAL;
                }
                out.push(flags);
                out.extend(c1.encode());
            }
            Request::CacheNonce { first, count } => {
                out.extend(first.to_be_bytes());
                out.extend(count.to_be_bytes());
            }
            Request::SigShare { items } => {
                out.extend((items.len() as u16).to_be_bytes());
                for it in items {
                    out.extend(it.digest);
                    out.extend(it.j.to_be_bytes());
                    out.extend(it.nonce.encode());
                }
            }
            Request::RngShare { seal } => out.push(if *seal { FLAG_SEAL } else { 0 }),
            Request::KeypropInstall { aggregate, sources } => {
                out.extend(aggregate.encode());
                put_nodes(&mut out, sources);
            }
            Request::KeypropSplit { targets } => put_nodes(&mut out, targets),
            Request::KeypropShare { sealed } => out.extend(sealed),
        }
        out
    }

    pub fn decode(op: Opcode, payload: &[u8], p: &DomainParams) -> Result<Self, WireError> {
        let mut r = Reader::new(payload, "request payload");
        let req = match op {
            Opcode::KeygenInit => Request::KeygenInit { members: r.nodes()? },
            Opcode::StoreHash => {
                let mut c = [0u8; COMMITMENT_LEN];
                c.copy_from_slice(r.take(COMMITMENT_LEN)?);
                Request::StoreHash { commitment: c }
            }
            Opcode::StorePubkey => Request::StorePubkey { public: r.element(p)? },
            Opcode::RevealRequest => Request::RevealRequest,
            Opcode::KeygenFinalize => Request::KeygenFinalize,
            Opcode::DecShare => {
                let flags = r.u8()?;
                Request::DecShare {
                    prove: flags & FLAG_PROVE != 0,
                    seal: flags & FLAG_SEAL != 0,
                    c1: r.element(p)?,
                }
            }
            Opcode::CacheNonce => Request::CacheNonce {
                first: r.u64()?,
                count: r.u16()?,
            },
            Opcode::SigShare => {
                let n = r.u16()? as usize;
                let mut items = Vec::with_capacity(n);
                for _ in 0..n {
                    let mut digest = [0u8; 64];
                    digest.copy_from_slice(r.take(64)?);
                    items.push(SignItem {
                        digest,
                        j: r.u64()?,
                        nonce: r.element(p)?,
                    });
                }
                Request::SigShare { items }
            }
            Opcode::RngShare => Request::RngShare {
                seal: r.u8()? & FLAG_SEAL != 0,
            },
            Opcode::KeypropInstall => Request::KeypropInstall {
                aggregate: r.element(p)?,
                sources: r.nodes()?,
            },
            Opcode::KeypropSplit => Request::KeypropSplit { targets: r.nodes()? },
            Opcode::KeypropShare => Request::KeypropShare {
                sealed: r.rest().to_vec(),
            },
            Opcode::KeypropStatus => Request::KeypropStatus,
        };
        r.finish()?;
        Ok(req)
    }
}

/// Typed response payloads. On the wire every response payload starts with
/// the envelope `seq` of the command it answers.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Reply {
    Ack,
    KeygenDone {
        aggregate: GroupElement,
        shares: Vec<(NodeId, GroupElement)>,
    },
    /// `A_i` optionally followed by a DLEQ proof; sealed to the host when
    /// requested.
    DecShare { data: Vec<u8> },
    Nonces { first: u64, nonces: Vec<GroupElement> },
    SigShares { items: Vec<(u64, Scalar, Scalar)> },
    Random { data: Vec<u8> },
    KeypropStatus { public: GroupElement },
    Error { code: ErrorCode, detail: String },
}

impl Reply {
    /// Response opcode for a reply to `req`.
    pub fn opcode_for(&self, req: Opcode) -> u8 {
        match self {
            Reply::Error { .. } => ERROR_OPCODE,
            _ => req as u8 | RESPONSE_FLAG,
        }
    }

    pub fn encode(&self, req: Opcode, req_seq: u64) -> Vec<u8> {
        let mut out = req_seq.to_be_bytes().to_vec();
        match self {
            Reply::Ack => {}
            Reply::KeygenDone { aggregate, shares } => {
                out.extend(aggregate.encode());
                out.extend((shares.len() as u16).to_be_bytes());
                for (n, y) in shares {
                    out.extend(n.0.to_be_bytes());
                    out.extend(y.encode());
                }
            }
            Reply::DecShare { data } | Reply::Random { data } => out.extend(data),
            Reply::Nonces { first, nonces } => {
                out.extend(first.to_be_bytes());
                out.extend((nonces.len() as u16).to_be_bytes());
                for n in nonces {
                    out.extend(n.encode());
                }
            }
            Reply::SigShares { items } => {
                out.extend((items.len() as u16).to_be_bytes());
                for (j, s, e) in items {
                    out.extend(j.to_be_bytes());
                    out.extend(s.to_bytes());
                    out.extend(e.to_bytes());
                }
            }
            Reply::KeypropStatus { public } => out.extend(public.encode()),
            Reply::Error { code, detail } => {
                return error_payload(req as u8, req_seq, *code, detail);
            }
        }
        out
    }

    /// Returns the echoed request seq and the reply.
    pub fn decode(frame: &Frame, p: &DomainParams) -> Result<(u64, Self), WireError> {
        let mut r = Reader::new(&frame.payload, "response payload");
        let req_seq = r.u64()?;
        if frame.opcode == ERROR_OPCODE {
            let _req = r.u8()?;
            let code = ErrorCode::from_u8(r.u8()?);
            let detail = String::from_utf8_lossy(r.rest()).into_owned();
            return Ok((req_seq, Reply::Error { code, detail }));
        }
        let op = Opcode::from_u8(frame.opcode & !RESPONSE_FLAG)?;
        let reply = match op {
            Opcode::KeygenInit | Opcode::KeygenFinalize => {
                let aggregate = r.element(p)?;
                let n = r.u16()? as usize;
                let mut shares = Vec::with_capacity(n);
                for _ in 0..n {
                    let id = NodeId(r.u16()?);
                    shares.push((id, r.element(p)?));
                }
                Reply::KeygenDone { aggregate, shares }
            }
            Opcode::DecShare => Reply::DecShare {
                data: r.rest().to_vec(),
            },
            Opcode::RngShare => Reply::Random {
                data: r.rest().to_vec(),
            },
            Opcode::CacheNonce => {
                let first = r.u64()?;
                let n = r.u16()? as usize;
                let nonces = (0..n).map(|_| r.element(p)).collect::<Result<_, _>>()?;
                Reply::Nonces { first, nonces }
            }
            Opcode::SigShare => {
                let n = r.u16()? as usize;
                let mut items = Vec::with_capacity(n);
                for _ in 0..n {
                    items.push((r.u64()?, r.scalar(p)?, r.scalar(p)?));
                }
                Reply::SigShares { items }
            }
            Opcode::KeypropStatus => Reply::KeypropStatus {
                public: r.element(p)?,
            },
            _ => Reply::Ack,
        };
        r.finish()?;
        Ok((req_seq, reply))
    }
}

/// Payload of an error response; `req_op` is the raw opcode byte so that
/// unknown opcodes can be answered too.
pub fn error_payload(req_op: u8, req_seq: u64, code: ErrorCode, detail: &str) -> Vec<u8> {
    let mut out = req_seq.to_be_bytes().to_vec();
    out.push(req_op);
    out.push(code as u8);
    out.extend(detail.as_bytes());
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_chacha::rand_core::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    #[test]
    fn frame_layout_is_bit_exact() {
        let mut rng = ChaCha20Rng::seed_from_u64(0);
        let k = SigningKey::generate(&mut rng);
        let id = KeyId([7u8; 16]);
        let f = Frame::sign(Opcode::DecShare as u8, id, vec![1, 2, 3], &k);
        let bytes = f.encode();
        assert_eq!(bytes.len(), 4 + 1 + 16 + 3 + 64);
        assert_eq!(&bytes[..4], &(bytes.len() as u32).to_be_bytes());
        assert_eq!(bytes[4], 0x10);
        assert_eq!(&bytes[5..21], &[7u8; 16]);
        assert_eq!(&bytes[21..24], &[1, 2, 3]);
        let back = Frame::decode(&bytes).unwrap();
        assert_eq!(back, f);
        assert!(back.verify(&k.verifying_key()));

        let mut tampered = bytes.clone();
        tampered[22] ^= 1;
        assert!(!Frame::decode(&tampered).unwrap().verify(&k.verifying_key()));
        assert!(Frame::decode(&bytes[..bytes.len() - 1]).is_err());
    }

    #[test]
    fn envelope_round_trip_and_auth() {
        let mut rng = ChaCha20Rng::seed_from_u64(1);
        let k = SigningKey::generate(&mut rng);
        let e = Envelope::seal(
            Party::Host(HostId(0)),
            Dest::Broadcast,
            9,
            vec![5; 40],
            &k,
        );
        let back = Envelope::decode(&e.encode()).unwrap();
        assert_eq!(back, e);
        assert!(back.verify(&k.verifying_key()));
        let mut moved = back.clone();
        moved.dst = Dest::To(Party::Node(NodeId(2)));
        assert!(!moved.verify(&k.verifying_key()));
        let mut reseq = back;
        reseq.seq = 10;
        assert!(!reseq.verify(&k.verifying_key()));
    }

    #[test]
    fn request_payloads_round_trip() {
        let p = DomainParams::p256();
        let g = p.generator();
        let reqs = vec![
            Request::KeygenInit {
                members: vec![NodeId(1), NodeId(2)],
            },
            Request::StoreHash {
                commitment: [3u8; 64],
            },
            Request::StorePubkey { public: g },
            Request::RevealRequest,
            Request::KeygenFinalize,
            Request::DecShare {
                c1: g,
                prove: true,
                seal: false,
            },
            Request::CacheNonce { first: 4, count: 9 },
            Request::SigShare {
                items: vec![SignItem {
                    digest: [1u8; 64],
                    j: 3,
                    nonce: g,
                }],
            },
            Request::RngShare { seal: true },
            Request::KeypropInstall {
                aggregate: g,
                sources: vec![NodeId(4)],
            },
            Request::KeypropSplit {
                targets: vec![NodeId(5), NodeId(6)],
            },
            Request::KeypropShare {
                sealed: vec![9; 65],
            },
            Request::KeypropStatus,
        ];
        for r in reqs {
            let back = Request::decode(r.opcode(), &r.encode(), &p).unwrap();
            assert_eq!(back, r);
        }
        assert!(Request::decode(Opcode::CacheNonce, &[0; 11], &p).is_err());
    }

    #[test]
    fn error_reply_round_trip() {
        let mut rng = ChaCha20Rng::seed_from_u64(2);
        let k = SigningKey::generate(&mut rng);
        let reply = Reply::Error {
            code: ErrorCode::ReplayRejected,
            detail: "j=4".into(),
        };
        let f = Frame::sign(
            reply.opcode_for(Opcode::SigShare),
            KeyId::ZERO,
            reply.encode(Opcode::SigShare, 41),
            &k,
        );
        assert!(f.is_response());
        assert_eq!(f.request_opcode(), Some(Opcode::SigShare));
        assert_eq!(Reply::decode(&f, &DomainParams::p256()).unwrap(), (41, reply));
    }
}
