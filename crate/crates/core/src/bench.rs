//! Modeled latency and throughput.
//!
//! Nothing here reads a clock. Each node's protocol work is logged by the
//! fabric per slot; a cost table turns that log into milliseconds. Nodes
//! work in parallel within a slot and slots follow one another, so an
//! operation's latency is the sum over slots of the busiest node.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::fabric::{Action, Fabric, Work};
use crate::group::DomainParams;
use crate::host::{HostError, QuorumConfig, Setup};
use crate::ids::{KeyId, NodeId};
use crate::wire::{Envelope, Opcode, Party};

/// Milliseconds per primitive. Defaults are the per-operation times
/// measured on the original hardware, used only as model inputs. The two
/// keygen store costs have no published per-op figure and are modeled.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CostTable {
    pub keygen_init: f64,
    pub store_hash: f64,
    pub store_pubkey: f64,
    pub reveal_request: f64,
    pub keygen_finalize: f64,
    pub decrypt: f64,
    /// Per cached index.
    pub cache: f64,
    /// Per signature share.
    pub sign: f64,
    pub rng: f64,
    pub keyprop_install: f64,
    pub keyprop_split: f64,
    pub keyprop_share: f64,
}

impl Default for CostTable {
    fn default() -> Self {
        Self {
            keygen_init: 624.0,
            store_hash: 45.0,
            store_pubkey: 45.0,
            reveal_request: 0.0,
            keygen_finalize: 0.0,
            decrypt: 119.0,
            cache: 169.0,
            sign: 517.0,
            rng: 0.0,
            keyprop_install: 0.0,
            keyprop_split: 0.0,
            keyprop_share: 0.0,
        }
    }
}

impl CostTable {
    pub fn cost(&self, op: Opcode) -> f64 {
        match op {
            Opcode::KeygenInit => self.keygen_init,
            Opcode::StoreHash => self.store_hash,
            Opcode::StorePubkey => self.store_pubkey,
            Opcode::RevealRequest => self.reveal_request,
            Opcode::KeygenFinalize => self.keygen_finalize,
            Opcode::DecShare => self.decrypt,
            Opcode::CacheNonce => self.cache,
            Opcode::SigShare => self.sign,
            Opcode::RngShare => self.rng,
            Opcode::KeypropInstall => self.keyprop_install,
            Opcode::KeypropSplit => self.keyprop_split,
            Opcode::KeypropShare => self.keyprop_share,
            Opcode::KeypropStatus => 0.0,
        }
    }

    fn of(&self, w: &Work) -> f64 {
        self.cost(w.opcode) * w.units as f64
    }
}

/// Sum over slots of the busiest node's cost in that slot.
pub fn modeled_latency(work: &[Work], costs: &CostTable) -> f64 {
    let mut per: BTreeMap<u64, BTreeMap<NodeId, f64>> = BTreeMap::new();
    for w in work {
        *per.entry(w.slot).or_default().entry(w.node).or_default() += costs.of(w);
    }
    per.values()
        .map(|nodes| nodes.values().copied().fold(0.0, f64::max))
        .sum()
}

/// Busy time of the most loaded node, for pipelined batches.
pub fn makespan(work: &[Work], costs: &CostTable) -> f64 {
    let mut per: BTreeMap<NodeId, f64> = BTreeMap::new();
    for w in work {
        *per.entry(w.node).or_default() += costs.of(w);
    }
    per.values().copied().fold(0.0, f64::max)
}

/// Cost of `op` on one node.
pub fn node_cost(work: &[Work], costs: &CostTable, node: NodeId, op: Opcode) -> f64 {
    work.iter()
        .filter(|w| w.node == node && w.opcode == op)
        .map(|w| costs.of(w))
        .fold(0.0, |a, c| a + c)
}

/// Node-to-node commands with `op` sent since record `from`.
pub fn count_peer_commands(fab: &Fabric, from: usize, op: Opcode) -> usize {
    fab.transcript().records()[from..]
        .iter()
        .filter(|r| matches!(r.action, Action::Sent))
        .filter_map(|r| Envelope::decode(&r.bytes).ok())
        .filter(|e| matches!(e.src, Party::Node(_)))
        .filter_map(|e| e.frame().ok())
        .filter(|f| !f.is_response() && f.request_opcode() == Some(op))
        .count()
}

#[derive(Clone, Debug, Serialize)]
pub struct LatencyRow {
    pub t: u16,
    pub keygen_ms: f64,
    pub decrypt_ms: f64,
    pub cache_ms: f64,
    pub sign_ms: f64,
    pub rng_ms: f64,
    /// Rounds the host waited for during one decryption.
    pub decrypt_rounds: u64,
    /// Keygen cost on one node, by command.
    pub keygen_breakdown: BTreeMap<String, f64>,
    pub store_hash_msgs: usize,
    pub store_pubkey_msgs: usize,
}

#[derive(Clone, Debug, Serialize)]
pub struct ThroughputRow {
    pub quorums: u32,
    pub requests: u32,
    pub makespan_ms: f64,
    pub ops_per_sec: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct LinearFit {
    pub intercept: f64,
    pub slope: f64,
    /// Largest `|y - fit| / y` over the points.
    pub max_rel_residual: f64,
}

/// Least squares line through `(x, y)`.
pub fn fit_line(points: &[(f64, f64)]) -> LinearFit {
    let n = points.len() as f64;
    let (sx, sy) = points.iter().fold((0.0, 0.0), |a, p| (a.0 + p.0, a.1 + p.1));
    let (mx, my) = (sx / n, sy / n);
    let sxx: f64 = points.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = points.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let slope = if sxx == 0.0 { 0.0 } else { sxy / sxx };
    let intercept = my - slope * mx;
    let max_rel_residual = points
        .iter()
        .map(|p| ((p.1 - (intercept + slope * p.0)) / p.1).abs())
        .fold(0.0, f64::max);
    LinearFit {
        intercept,
        slope,
        max_rel_residual,
    }
}

fn slice_since(fab: &Fabric, from: usize) -> Vec<Work> {
    fab.work_log()[from..].to_vec()
}

/// One quorum of size `t`: keygen, decrypt, cache one index, sign, rng.
pub fn latency_point(params: DomainParams, t: u16, costs: &CostTable, seed: u64) -> Result<LatencyRow, HostError> {
    let (mut fab, mut host) = Setup::with_nodes(params, t, seed).build()?;
    let q = QuorumConfig::range(1, 1, t);
    let k = KeyId::from_label("bench");

    let (w0, r0) = (fab.work_log().len(), fab.transcript().len());
    host.dkpg(&mut fab, &q, k)?;
    let kg = slice_since(&fab, w0);
    let keygen_breakdown = [Opcode::KeygenInit, Opcode::StoreHash, Opcode::StorePubkey]
        .into_iter()
        .map(|op| (op.name().to_string(), node_cost(&kg, costs, q.nodes[0], op)))
        .collect();
    let store_hash_msgs = count_peer_commands(&fab, r0, Opcode::StoreHash);
    let store_pubkey_msgs = count_peer_commands(&fab, r0, Opcode::StorePubkey);

    let ct = host.encrypt_bytes(&q, k, &[1])?;
    let w0 = fab.work_log().len();
    host.decrypt(&mut fab, &q, k, &ct)?;
    let dec = slice_since(&fab, w0);
    let decrypt_rounds = dec.iter().map(|w| w.slot).collect::<std::collections::BTreeSet<_>>().len() as u64;

    let w0 = fab.work_log().len();
    host.cache(&mut fab, &q, k, 1)?;
    let cache = slice_since(&fab, w0);
    let w0 = fab.work_log().len();
    host.sign(&mut fab, &q, k, b"bench")?;
    let sign = slice_since(&fab, w0);
    let w0 = fab.work_log().len();
    host.gen_random(&mut fab, &q, 32)?;
    let rng = slice_since(&fab, w0);

    Ok(LatencyRow {
        t,
        keygen_ms: modeled_latency(&kg, costs),
        decrypt_ms: modeled_latency(&dec, costs),
        cache_ms: modeled_latency(&cache, costs),
        sign_ms: modeled_latency(&sign, costs),
        rng_ms: modeled_latency(&rng, costs),
        decrypt_rounds,
        keygen_breakdown,
        store_hash_msgs,
        store_pubkey_msgs,
    })
}

/// `quorums` disjoint quorums of size `t` serving `requests` decryptions
/// spread round-robin.
pub fn throughput_point(
    params: DomainParams,
    t: u16,
    quorums: u32,
    requests: u32,
    costs: &CostTable,
    seed: u64,
) -> Result<ThroughputRow, HostError> {
    let total = t as u32 * quorums;
    let (mut fab, mut host) = Setup::with_nodes(params, total as u16, seed).build()?;
    let qs: Vec<_> = (0..quorums)
        .map(|i| QuorumConfig::range(i + 1, (i * t as u32) as u16 + 1, t))
        .collect();
    let k = KeyId::from_label("bench");
    let mut cts = Vec::new();
    for q in &qs {
        host.dkpg(&mut fab, q, k)?;
        cts.push(host.encrypt_bytes(q, k, &[1])?);
    }
    let w0 = fab.work_log().len();
    for r in 0..requests {
        let i = (r % quorums) as usize;
        host.decrypt(&mut fab, &qs[i], k, &cts[i])?;
    }
    let ms = makespan(&fab.work_log()[w0..], costs);
    Ok(ThroughputRow {
        quorums,
        requests,
        makespan_ms: ms,
        ops_per_sec: requests as f64 / (ms / 1000.0),
    })
}

#[derive(Clone, Debug, Serialize)]
pub struct Check {
    pub name: String,
    pub pass: bool,
    pub detail: String,
}

#[derive(Clone, Debug, Serialize)]
pub struct BenchReport {
    pub backend: String,
    pub costs: CostTable,
    pub latency: Vec<LatencyRow>,
    pub throughput: Vec<ThroughputRow>,
    pub throughput_fit: Option<LinearFit>,
    pub decrypt_spread: f64,
    pub checks: Vec<Check>,
}

#[derive(Clone, Debug)]
pub struct BenchConfig {
    pub params: DomainParams,
    pub sizes: Vec<u16>,
    pub quorum_counts: Vec<u32>,
    pub throughput_t: u16,
    pub requests: u32,
    pub costs: CostTable,
    pub seed: u64,
}

impl BenchConfig {
    pub fn new(params: DomainParams) -> Self {
        Self {
            params,
            sizes: (1..=10).collect(),
            quorum_counts: (1..=8).collect(),
            throughput_t: 3,
            requests: 840,
            costs: CostTable::default(),
            seed: 0,
        }
    }
}

pub fn run_bench(cfg: &BenchConfig) -> Result<BenchReport, HostError> {
    use rayon::prelude::*;

    let latency = cfg
        .sizes
        .par_iter()
        .map(|&t| latency_point(cfg.params, t, &cfg.costs, cfg.seed))
        .collect::<Result<Vec<_>, _>>()?;
    let throughput = cfg
        .quorum_counts
        .par_iter()
        .map(|&q| throughput_point(cfg.params, cfg.throughput_t, q, cfg.requests, &cfg.costs, cfg.seed))
        .collect::<Result<Vec<_>, _>>()?;

    let mut checks = Vec::new();
    let dec: Vec<f64> = latency.iter().map(|r| r.decrypt_ms).collect();
    let (lo, hi) = dec.iter().fold((f64::MAX, 0.0f64), |a, &d| (a.0.min(d), a.1.max(d)));
    let decrypt_spread = if dec.is_empty() || lo == 0.0 { 0.0 } else { (hi - lo) / lo };
    if !dec.is_empty() {
        checks.push(Check {
            name: "decrypt-latency-spread".into(),
            pass: decrypt_spread < 0.008,
            detail: format!("{:.4}% across t", decrypt_spread * 100.0),
        });
        checks.push(Check {
            name: "decrypt-single-round".into(),
            pass: latency.iter().all(|r| r.decrypt_rounds == 1),
            detail: format!("{:?}", latency.iter().map(|r| r.decrypt_rounds).collect::<Vec<_>>()),
        });
        let formula = latency.iter().all(|r| {
            let want = r.t as usize * (r.t as usize - 1);
            r.store_hash_msgs == want && r.store_pubkey_msgs == want
        });
        checks.push(Check {
            name: "keygen-messages-t(t-1)".into(),
            pass: formula,
            detail: latency
                .iter()
                .map(|r| format!("t={}:{}/{}", r.t, r.store_hash_msgs, r.store_pubkey_msgs))
                .collect::<Vec<_>>()
                .join(" "),
        });
        checks.push(Check {
            name: "keygen-latency-increasing".into(),
            pass: latency.windows(2).all(|w| w[1].t <= w[0].t || w[1].keygen_ms > w[0].keygen_ms),
            detail: String::new(),
        });
    }
    let throughput_fit = (throughput.len() >= 2).then(|| {
        let pts: Vec<_> = throughput.iter().map(|r| (r.quorums as f64, r.ops_per_sec)).collect();
        fit_line(&pts)
    });
    if let Some(f) = &throughput_fit {
        checks.push(Check {
            name: "throughput-linear".into(),
            pass: f.max_rel_residual < 0.01,
            detail: format!(
                "slope {:.3} ops/s per quorum, residual {:.4}%",
                f.slope,
                f.max_rel_residual * 100.0
            ),
        });
    }
    Ok(BenchReport {
        backend: format!("{:?}", cfg.params.backend()).to_lowercase(),
        costs: cfg.costs.clone(),
        latency,
        throughput,
        throughput_fit,
        decrypt_spread,
        checks,
    })
}

impl BenchReport {
    pub fn render(&self) -> String {
        let mut s = String::from("modeled latency (ms; cost table is a model input)\n");
        s.push_str("   t    keygen   decrypt     cache      sign  hash-msgs  pubkey-msgs\n");
        for r in &self.latency {
            s.push_str(&format!(
                "{:>4} {:>9.1} {:>9.1} {:>9.1} {:>9.1} {:>10} {:>12}\n",
                r.t, r.keygen_ms, r.decrypt_ms, r.cache_ms, r.sign_ms, r.store_hash_msgs, r.store_pubkey_msgs
            ));
        }
        if !self.latency.is_empty() {
            s.push_str("\nkeygen cost per node (ms)\n   t");
            let names: Vec<_> = self.latency[0].keygen_breakdown.keys().cloned().collect();
            for n in &names {
                s.push_str(&format!(" {n:>22}"));
            }
            s.push('\n');
            for r in &self.latency {
                s.push_str(&format!("{:>4}", r.t));
                for n in &names {
                    s.push_str(&format!(" {:>22.1}", r.keygen_breakdown[n]));
                }
                s.push('\n');
            }
        }
        if !self.throughput.is_empty() {
            s.push_str("\nmodeled decryption throughput\nquorums  requests  makespan-ms   ops/s\n");
            for r in &self.throughput {
                s.push_str(&format!(
                    "{:>7} {:>9} {:>12.1} {:>7.2}\n",
                    r.quorums, r.requests, r.makespan_ms, r.ops_per_sec
                ));
            }
        }
        s.push('\n');
        for c in &self.checks {
            s.push_str(&format!(
                "{} {} {}\n",
                if c.pass { "PASS" } else { "FAIL" },
                c.name,
                c.detail
            ));
        }
        s
    }

    pub fn all_pass(&self) -> bool {
        self.checks.iter().all(|c| c.pass)
    }
}
