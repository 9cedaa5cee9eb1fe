//! What the adversary can compute about a key from its view.
//!
//! The view is the full bus transcript plus the complete state of every
//! malicious node. Group elements (public shares, nonces, commitments,
//! decryption shares) are treated as opaque: on a real curve their discrete
//! logs are out of reach, and on the transparent group they are trivial by
//! construction, so they would say nothing about the protocols.
//!
//! Every scalar that crosses the bus is linear in the honest unknowns:
//!
//! - a signature share `sigma = r_ij - e * x_i`, with `r_ij` unknown per
//!   (node, key, j);
//! - an unsealed DLEQ response `z = w + c * x_i`, with `w` fresh per proof;
//! - a propagation share opened by a malicious recipient, which is one of
//!   the sender's split randoms or `x_i - sum(randoms)`.
//!
//! The aggregate secret `x` is another linear form. Over the prime field
//! `Z_n` the adversary learns `x` exactly when that form lies in the row
//! space of the observations; otherwise every value of `x` is equally
//! likely. [`LinearView::enumerate`] checks the same thing by brute force.

use std::collections::{BTreeMap, BTreeSet};

use thiserror::Error;

use crate::elgamal::DleqProof;
use crate::fabric::{Action, Fabric};
use crate::group::{DomainParams, Scalar};
use crate::ids::{KeyId, NodeId};
use crate::node::NodeSecrets;
use crate::wire::{Envelope, Frame, Opcode, Party, Reply, Request};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum LeakageError {
    #[error("the linear oracle needs the transparent backend")]
    NotTransparent,
    #[error("no key generation for {0} in the transcript")]
    UnknownKey(KeyId),
    #[error("enumeration over {unknowns} unknowns mod {modulus} exceeds the limit")]
    TooLarge { unknowns: usize, modulus: u64 },
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
struct Form {
    coeffs: BTreeMap<usize, u64>,
    constant: u64,
}

/// Observations as linear equations over `Z_n`, and the target form.
#[derive(Clone, Debug)]
pub struct LinearView {
    modulus: u64,
    names: Vec<String>,
    rows: Vec<(Form, u64)>,
    target: Form,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Analysis {
    pub unknowns: usize,
    pub equations: usize,
    pub rank: usize,
    /// The observations have a solution (always true for a real run).
    pub consistent: bool,
    /// The value of `x` when the view pins it down.
    pub determined: Option<u64>,
}

fn pow_mod(mut b: u64, mut e: u64, n: u64) -> u64 {
    let mut acc = 1 % n;
    b %= n;
    while e > 0 {
        if e & 1 == 1 {
            acc = acc * b % n;
        }
        b = b * b % n;
        e >>= 1;
    }
    acc
}

fn inv_mod(a: u64, n: u64) -> u64 {
    pow_mod(a, n - 2, n)
}

struct Builder {
    n: u64,
    params: DomainParams,
    key: KeyId,
    malicious: BTreeMap<NodeId, NodeSecrets>,
    vars: BTreeMap<String, usize>,
    names: Vec<String>,
    sources: BTreeMap<NodeId, Vec<NodeId>>,
    targets: BTreeMap<NodeId, Vec<NodeId>>,
}

impl Builder {
    fn var(&mut self, name: String) -> Form {
        let next = self.names.len();
        let i = *self.vars.entry(name.clone()).or_insert_with(|| {
            self.names.push(name);
            next
        });
        Form {
            coeffs: BTreeMap::from([(i, 1)]),
            constant: 0,
        }
    }

    fn constant(&self, s: &Scalar) -> Form {
        Form {
            coeffs: BTreeMap::new(),
            constant: s.as_u32().unwrap_or(0) as u64 % self.n,
        }
    }

    fn add(&self, a: &Form, b: &Form, scale_b: u64) -> Form {
        let n = self.n;
        let mut out = a.clone();
        for (i, c) in &b.coeffs {
            let e = out.coeffs.entry(*i).or_insert(0);
            *e = (*e + c * scale_b) % n;
        }
        out.coeffs.retain(|_, c| *c != 0);
        out.constant = (out.constant + b.constant * scale_b) % n;
        out
    }

    fn secret(&mut self, node: NodeId) -> Form {
        if let Some(s) = self.malicious.get(&node).and_then(|m| m.keys.get(&self.key)) {
            let s = s.secret;
            return self.constant(&s);
        }
        match self.sources.get(&node).cloned() {
            Some(sources) => {
                let mut f = Form::default();
                for a in sources {
                    let s = self.share(a, node);
                    f = self.add(&f, &s, 1);
                }
                f
            }
            None => self.var(format!("x[{node}]")),
        }
    }

    /// Form of the share `a` sent to `b` during propagation.
    fn share(&mut self, a: NodeId, b: NodeId) -> Form {
        if let Some(m) = self.malicious.get(&a) {
            let known = m
                .sent_shares
                .iter()
                .find(|(k, t, _)| *k == self.key && *t == b)
                .map(|(_, _, s)| *s);
            if let Some(s) = known {
                return self.constant(&s);
            }
        }
        let targets = self.targets.get(&a).cloned().unwrap_or_else(|| vec![b]);
        let m = targets.len();
        let k = targets.iter().position(|t| *t == b).unwrap_or(m - 1);
        if m == 1 {
            return self.secret(a);
        }
        if k + 1 < m {
            return self.var(format!("rho[{a},{k}]"));
        }
        let mut f = self.secret(a);
        for i in 0..m - 1 {
            let r = self.var(format!("rho[{a},{i}]"));
            f = self.add(&f, &r, self.n - 1);
        }
        f
    }
}

impl LinearView {
    /// Builds the adversary's view of `key` from a finished run.
    pub fn from_run(fab: &Fabric, key: KeyId) -> Result<Self, LeakageError> {
        let params = *fab.params();
        let n = params.transparent_modulus().ok_or(LeakageError::NotTransparent)? as u64;
        let malicious: BTreeMap<NodeId, NodeSecrets> = fab
            .malicious_secrets()
            .into_iter()
            .map(|s| (s.node, s))
            .collect();
        let sent: Vec<Envelope> = fab
            .transcript()
            .records()
            .iter()
            .filter(|r| r.action == Action::Sent)
            .filter_map(|r| Envelope::decode(&r.bytes).ok())
            .collect();
        let frames: Vec<(Envelope, Frame)> = sent
            .into_iter()
            .filter_map(|e| e.frame().ok().map(|f| (e, f)))
            .filter(|(_, f)| f.id == key)
            .collect();

        let mut members = None;
        let mut sources = BTreeMap::new();
        let mut targets = BTreeMap::new();
        for (e, f) in &frames {
            if f.is_response() {
                continue;
            }
            let Some(op) = f.request_opcode() else { continue };
            let Ok(req) = Request::decode(op, &f.payload, &params) else { continue };
            let dst = match e.dst {
                crate::wire::Dest::To(Party::Node(d)) => Some(d),
                _ => None,
            };
            match req {
                Request::KeygenInit { members: m } if members.is_none() => members = Some(m),
                Request::KeypropInstall { sources: s, .. } => {
                    if let Some(d) = dst {
                        sources.entry(d).or_insert(s);
                    }
                }
                Request::KeypropSplit { targets: t } => {
                    if let Some(d) = dst {
                        targets.entry(d).or_insert(t);
                    }
                }
                _ => {}
            }
        }
        let members = members.ok_or(LeakageError::UnknownKey(key))?;

        let mut b = Builder {
            n,
            params,
            key,
            malicious,
            vars: BTreeMap::new(),
            names: Vec::new(),
            sources,
            targets,
        };
        let mut rows = Vec::new();
        let mut proofs = 0usize;
        let ew = params.element_width();
        let proof_len = DleqProof::encoded_len(&params);
        for (e, f) in &frames {
            let Party::Node(src) = e.src else { continue };
            if b.malicious.contains_key(&src) {
                continue;
            }
            let Some(op) = f.request_opcode() else { continue };
            if f.is_response() && f.opcode != crate::wire::ERROR_OPCODE {
                match Reply::decode(f, &params) {
                    Ok((_, Reply::SigShares { items })) => {
                        for (j, sigma, eps) in items {
                            let x = b.secret(src);
                            let r = b.var(format!("r[{src},{j}]"));
                            let eps = eps.as_u32().unwrap_or(0) as u64 % n;
                            let form = b.add(&r, &x, (n - eps) % n);
                            rows.push((form, sigma.as_u32().unwrap_or(0) as u64 % n));
                        }
                    }
                    Ok((_, Reply::DecShare { data })) if data.len() == ew + proof_len => {
                        if let Ok(p) = DleqProof::from_bytes(&params, &data[ew..]) {
                            proofs += 1;
                            let x = b.secret(src);
                            let w = b.var(format!("w#{proofs}[{src}]"));
                            let c = p.challenge.as_u32().unwrap_or(0) as u64 % n;
                            let form = b.add(&w, &x, c);
                            rows.push((form, p.response.as_u32().unwrap_or(0) as u64 % n));
                        }
                    }
                    _ => {}
                }
            } else if op == Opcode::KeypropShare {
                let Ok(Request::KeypropShare { sealed }) = Request::decode(op, &f.payload, &params)
                else {
                    continue;
                };
                let crate::wire::Dest::To(Party::Node(dst)) = e.dst else { continue };
                let opened = b
                    .malicious
                    .get(&dst)
                    .and_then(|m| m.identity.open(&sealed).ok())
                    .and_then(|bytes| b.params.scalar_from_bytes(&bytes).ok());
                if let Some(s) = opened {
                    let form = b.share(src, dst);
                    rows.push((form, s.as_u32().unwrap_or(0) as u64 % n));
                }
            }
        }
        let mut target = Form::default();
        for m in members {
            let s = b.secret(m);
            target = b.add(&target, &s, 1);
        }
        Ok(Self {
            modulus: n,
            names: b.names,
            rows,
            target,
        })
    }

    pub fn modulus(&self) -> u64 {
        self.modulus
    }

    pub fn unknowns(&self) -> &[String] {
        &self.names
    }

    pub fn equations(&self) -> usize {
        self.rows.len()
    }

    fn dense(&self, f: &Form) -> Vec<u64> {
        let mut v = vec![0u64; self.names.len()];
        for (i, c) in &f.coeffs {
            v[*i] = *c;
        }
        v
    }

    /// Gaussian elimination over `Z_n`.
    pub fn analyze(&self) -> Analysis {
        let n = self.modulus;
        let mut echelon: Vec<(usize, Vec<u64>, u64)> = Vec::new();
        let mut consistent = true;
        let reduce = |v: &mut Vec<u64>, rhs: &mut u64, echelon: &[(usize, Vec<u64>, u64)]| {
            for (p, row, r) in echelon {
                let c = v[*p];
                if c != 0 {
                    for (a, b) in v.iter_mut().zip(row) {
                        *a = (*a + n - c * b % n) % n;
                    }
                    *rhs = (*rhs + n - c * r % n) % n;
                }
            }
        };
        for (form, value) in &self.rows {
            let mut v = self.dense(form);
            let mut rhs = (value + n - form.constant) % n;
            reduce(&mut v, &mut rhs, &echelon);
            match v.iter().position(|c| *c != 0) {
                Some(p) => {
                    let inv = inv_mod(v[p], n);
                    v.iter_mut().for_each(|c| *c = *c * inv % n);
                    rhs = rhs * inv % n;
                    // keep the echelon fully reduced
                    for (_, row, r) in echelon.iter_mut() {
                        let c = row[p];
                        if c != 0 {
                            for (a, b) in row.iter_mut().zip(&v) {
                                *a = (*a + n - c * b % n) % n;
                            }
                            *r = (*r + n - c * rhs % n) % n;
                        }
                    }
                    echelon.push((p, v, rhs));
                }
                None if rhs != 0 => consistent = false,
                None => {}
            }
        }
        let mut t = self.dense(&self.target);
        let mut acc = 0u64;
        reduce(&mut t, &mut acc, &echelon);
        // reduce() subtracts; the target value is constant + sum of the
        // row values it consumed
        let determined = t
            .iter()
            .all(|c| *c == 0)
            .then(|| (self.target.constant + n - acc) % n);
        Analysis {
            unknowns: self.names.len(),
            equations: self.rows.len(),
            rank: echelon.len(),
            consistent,
            determined,
        }
    }

    /// Brute force: for every assignment of the unknowns consistent with
    /// the observations, counts the resulting value of `x`. Index `v` of
    /// the result is the number of assignments giving `x = v`.
    pub fn enumerate(&self, limit: u64) -> Result<Vec<u64>, LeakageError> {
        let n = self.modulus;
        let k = self.names.len();
        let too_large = LeakageError::TooLarge {
            unknowns: k,
            modulus: n,
        };
        let total = (0..k).try_fold(1u64, |acc, _| acc.checked_mul(n)).ok_or(too_large.clone())?;
        if total > limit {
            return Err(too_large);
        }
        let rows: Vec<(Vec<u64>, u64)> = self
            .rows
            .iter()
            .map(|(f, v)| (self.dense(f), (v + n - f.constant) % n))
            .collect();
        let target = self.dense(&self.target);
        let mut hist = vec![0u64; n as usize];
        let mut a = vec![0u64; k];
        let dot = |x: &[u64], y: &[u64]| x.iter().zip(y).fold(0u64, |s, (p, q)| (s + p * q) % n);
        for _ in 0..total {
            if rows.iter().all(|(r, v)| dot(r, &a) == *v) {
                hist[((dot(&target, &a) + self.target.constant) % n) as usize] += 1;
            }
            for d in a.iter_mut() {
                *d += 1;
                if *d < n {
                    break;
                }
                *d = 0;
            }
        }
        Ok(hist)
    }
}

/// Uniform and non-empty.
pub fn is_uniform(hist: &[u64]) -> bool {
    hist.first().is_some_and(|h| *h > 0 && hist.iter().all(|x| x == h))
}

/// Raw tap: every (node, record index) where the encoding of an honest
/// node's stored secret appears in the transcript. Only meaningful when
/// scalars are wide enough that chance matches are impossible.
pub fn secret_tap(fab: &Fabric) -> Vec<(NodeId, usize)> {
    if fab.params().scalar_width() < 16 {
        return Vec::new();
    }
    let mut hits = Vec::new();
    for s in fab.honest_secrets() {
        for enc in s.encodings() {
            if let Some(i) = fab.transcript().find(&enc) {
                hits.push((s.node, i));
            }
        }
    }
    hits
}

/// Every propagation share in the transcript, opened with the recipient's
/// identity key: `(key, from, to, share)`. This is an omniscient view used
/// to check that no single message carries a whole `x_i`.
pub fn opened_propagation_shares(fab: &Fabric) -> Vec<(KeyId, NodeId, NodeId, Scalar)> {
    let params = *fab.params();
    let ids: BTreeSet<NodeId> = fab.node_ids().into_iter().collect();
    let mut out = Vec::new();
    for (_, e) in fab.transcript().envelopes() {
        let (Party::Node(from), crate::wire::Dest::To(Party::Node(to))) = (e.src, e.dst) else {
            continue;
        };
        let Ok(f) = e.frame() else { continue };
        if f.opcode != Opcode::KeypropShare as u8 || !ids.contains(&to) {
            continue;
        }
        let Ok(Request::KeypropShare { sealed }) = Request::decode(Opcode::KeypropShare, &f.payload, &params)
        else {
            continue;
        };
        let node = fab.node(to).expect("listed node");
        if let Some(s) = node
            .secrets()
            .identity
            .open(&sealed)
            .ok()
            .and_then(|b| params.scalar_from_bytes(&b).ok())
        {
            out.push((f.id, from, to, s));
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn view(n: u64, names: usize, rows: Vec<(Vec<(usize, u64)>, u64)>, target: Vec<(usize, u64)>) -> LinearView {
        let form = |c: Vec<(usize, u64)>| Form {
            coeffs: c.into_iter().collect(),
            constant: 0,
        };
        LinearView {
            modulus: n,
            names: (0..names).map(|i| format!("u{i}")).collect(),
            rows: rows.into_iter().map(|(c, v)| (form(c), v)).collect(),
            target: form(target),
        }
    }

    #[test]
    fn one_signature_hides_the_share() {
        // sigma = r - 3x = 5
        let v = view(13, 2, vec![(vec![(0, 1), (1, 10)], 5)], vec![(1, 1)]);
        let a = v.analyze();
        assert_eq!(a.determined, None);
        assert!(is_uniform(&v.enumerate(1 << 20).unwrap()));
    }

    #[test]
    fn reused_nonce_reveals_the_share() {
        // r - 3x = 5 and r - 7x = 1: 4x = 4, x = 1
        let v = view(
            13,
            2,
            vec![(vec![(0, 1), (1, 10)], 5), (vec![(0, 1), (1, 6)], 1)],
            vec![(1, 1)],
        );
        assert_eq!(v.analyze().determined, Some(1));
        let h = v.enumerate(1 << 20).unwrap();
        assert_eq!(h.iter().filter(|c| **c > 0).count(), 1);
        assert!(h[1] > 0);
    }

    #[test]
    fn inconsistent_rows_flagged() {
        let v = view(13, 1, vec![(vec![(0, 1)], 1), (vec![(0, 2)], 5)], vec![(0, 1)]);
        assert!(!v.analyze().consistent);
    }
}
