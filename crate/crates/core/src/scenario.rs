//! Scenario files: a deployment, an adversary and a host script, run
//! end to end to one outcome.
//!
//! ```toml
//! seed = 7
//! backend = "transparent"   # or "curve"
//! modulus = 257
//!
//! [[quorum]]
//! id = 1
//! nodes = [1, 2, 3]
//!
//! [[step]]
//! op = "keygen"
//! quorum = 1
//! key = "main"
//! ```

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bench::{modeled_latency, CostTable};
use crate::fabric::{AdversarySpec, Fabric};
use crate::group::{DomainParams, GroupElement};
use crate::host::{Host, HostError, HostOptions, QuorumConfig, Setup};
use crate::ids::{KeyId, NodeId};
use crate::leakage::{secret_tap, LeakageError, LinearView};
use crate::multisig;
use crate::node::NodeOptions;
use crate::threshold::sum_scalars;

pub const HONEST_DECRYPT: &str = include_str!("../scenarios/honest-decrypt.toml");
pub const ROGUE_KEY: &str = include_str!("../scenarios/rogue-key.toml");
pub const REPLAY_INDEX: &str = include_str!("../scenarios/replay-index.toml");
pub const COLLUDING_SIGNERS: &str = include_str!("../scenarios/colluding-signers.toml");

/// Bundled scenarios by name.
pub const BUNDLED: &[(&str, &str)] = &[
    ("honest-decrypt", HONEST_DECRYPT),
    ("rogue-key", ROGUE_KEY),
    ("replay-index", REPLAY_INDEX),
    ("colluding-signers", COLLUDING_SIGNERS),
];

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("scenario: {0}")]
    Parse(String),
    #[error("setup: {0}")]
    Setup(String),
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BackendChoice {
    #[default]
    Curve,
    Transparent,
}

fn default_modulus() -> u32 {
    257
}

fn yes() -> bool {
    true
}

fn default_budget() -> u64 {
    4
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HostSection {
    #[serde(default = "yes")]
    pub verify_proofs: bool,
    #[serde(default = "yes")]
    pub seal_responses: bool,
    #[serde(default = "default_budget")]
    pub budget_factor: u64,
}

impl Default for HostSection {
    fn default() -> Self {
        Self {
            verify_proofs: true,
            seal_responses: true,
            budget_factor: 4,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NodeSection {
    #[serde(default = "yes")]
    pub replay_guard: bool,
}

impl Default for NodeSection {
    fn default() -> Self {
        Self { replay_guard: true }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QuorumSpec {
    pub id: u32,
    pub nodes: Vec<u16>,
    /// Foundry or vendor label per node; informational.
    #[serde(default)]
    pub vendors: Vec<String>,
}

/// Scalars a node draws before its RNG, for reproducing hand-worked traces.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ForceSpec {
    pub node: u16,
    pub values: Vec<u64>,
}

/// Plaintext given as text or as an integer (transparent backend).
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Message {
    Int(u64),
    Text(String),
}

impl Message {
    fn bytes(&self) -> Vec<u8> {
        match self {
            Message::Text(s) => s.as_bytes().to_vec(),
            Message::Int(v) => {
                let b = v.to_be_bytes();
                let z = b.iter().take_while(|x| **x == 0).count();
                b[z..].to_vec()
            }
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "kebab-case", deny_unknown_fields)]
pub enum Step {
    Keygen {
        quorum: u32,
        key: String,
    },
    /// Encrypt under the key and decrypt on the quorum; the plaintext must
    /// come back unchanged.
    Decrypt {
        quorum: u32,
        key: String,
        message: Message,
    },
    Cache {
        quorum: u32,
        key: String,
        count: u16,
    },
    Sign {
        quorum: u32,
        key: String,
        message: String,
    },
    /// Sign with an explicit, possibly spent, index.
    SignAt {
        quorum: u32,
        key: String,
        message: String,
        j: u64,
    },
    Random {
        quorum: u32,
        len: usize,
    },
    Propagate {
        from: u32,
        to: u32,
        key: String,
    },
}

impl Step {
    pub fn name(&self) -> &'static str {
        match self {
            Step::Keygen { .. } => "keygen",
            Step::Decrypt { .. } => "decrypt",
            Step::Cache { .. } => "cache",
            Step::Sign { .. } => "sign",
            Step::SignAt { .. } => "sign-at",
            Step::Random { .. } => "random",
            Step::Propagate { .. } => "propagate",
        }
    }

    fn quorums(&self) -> Vec<u32> {
        match self {
            Step::Keygen { quorum, .. }
            | Step::Decrypt { quorum, .. }
            | Step::Cache { quorum, .. }
            | Step::Sign { quorum, .. }
            | Step::SignAt { quorum, .. }
            | Step::Random { quorum, .. } => vec![*quorum],
            Step::Propagate { from, to, .. } => vec![*from, *to],
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioFile {
    #[serde(default)]
    pub name: String,
    pub seed: u64,
    #[serde(default)]
    pub backend: BackendChoice,
    #[serde(default = "default_modulus")]
    pub modulus: u32,
    #[serde(default)]
    pub host: HostSection,
    #[serde(default)]
    pub nodes: NodeSection,
    #[serde(rename = "quorum")]
    pub quorums: Vec<QuorumSpec>,
    #[serde(default)]
    pub adversary: AdversarySpec,
    #[serde(default, rename = "force")]
    pub forced: Vec<ForceSpec>,
    #[serde(default, rename = "step")]
    pub steps: Vec<Step>,
    #[serde(default)]
    pub costs: CostTable,
    /// Expected outcome, e.g. `"success"` or `"abort(commitment-failure)"`.
    #[serde(default)]
    pub expect: Option<String>,
}

impl ScenarioFile {
    pub fn parse(text: &str) -> Result<Self, ScenarioError> {
        let s: ScenarioFile = toml::from_str(text).map_err(|e| ScenarioError::Parse(e.to_string()))?;
        s.validate()?;
        Ok(s)
    }

    pub fn bundled(name: &str) -> Option<Self> {
        BUNDLED
            .iter()
            .find(|(n, _)| *n == name)
            .map(|(_, t)| Self::parse(t).expect("bundled scenario parses"))
    }

    pub fn params(&self) -> Result<DomainParams, ScenarioError> {
        match self.backend {
            BackendChoice::Curve => Ok(DomainParams::p256()),
            BackendChoice::Transparent => {
                DomainParams::transparent(self.modulus).map_err(|e| ScenarioError::Setup(format!("modulus: {e}")))
            }
        }
    }

    pub fn validate(&self) -> Result<(), ScenarioError> {
        let bad = |m: String| Err(ScenarioError::Setup(m));
        self.params()?;
        if self.quorums.is_empty() {
            return bad("at least one [[quorum]] is required".into());
        }
        let mut ids = BTreeSet::new();
        for q in &self.quorums {
            if !ids.insert(q.id) {
                return bad(format!("quorum {} declared twice", q.id));
            }
            if q.nodes.is_empty() {
                return bad(format!("quorum {} has no nodes", q.id));
            }
            if q.nodes.iter().collect::<BTreeSet<_>>().len() != q.nodes.len() {
                return bad(format!("quorum {} repeats a node", q.id));
            }
            if !q.vendors.is_empty() && q.vendors.len() != q.nodes.len() {
                return bad(format!("quorum {}: one vendor label per node", q.id));
            }
        }
        let nodes = self.node_ids();
        for (i, s) in self.steps.iter().enumerate() {
            for q in s.quorums() {
                if !ids.contains(&q) {
                    return bad(format!("step {}: unknown quorum {q}", i + 1));
                }
            }
        }
        for f in &self.forced {
            if !nodes.contains(&NodeId(f.node)) {
                return bad(format!("force: unknown node {}", f.node));
            }
        }
        for m in &self.adversary.malicious {
            if !nodes.contains(&m.node) {
                return bad(format!("adversary: unknown node {}", m.node.0));
            }
        }
        self.adversary.validate().map_err(|e| ScenarioError::Setup(e.to_string()))?;
        if self.host.budget_factor == 0 {
            return bad("host.budget_factor must be positive".into());
        }
        Ok(())
    }

    pub fn node_ids(&self) -> BTreeSet<NodeId> {
        self.quorums
            .iter()
            .flat_map(|q| q.nodes.iter().map(|n| NodeId(*n)))
            .collect()
    }

    fn quorum(&self, id: u32) -> QuorumConfig {
        let q = self.quorums.iter().find(|q| q.id == id).expect("validated");
        let mut c = QuorumConfig::new(q.id, q.nodes.iter().map(|n| NodeId(*n)).collect());
        if !q.vendors.is_empty() {
            c.vendors = q.vendors.clone();
        }
        c
    }

    pub fn setup(&self) -> Result<Setup, ScenarioError> {
        let mut s = Setup::new(self.params()?, self.node_ids().into_iter().collect(), self.seed)
            .adversary(self.adversary.clone())
            .host_options(HostOptions {
                verify_proofs: self.host.verify_proofs,
                seal_responses: self.host.seal_responses,
                budget_factor: self.host.budget_factor,
            })
            .node_options(NodeOptions {
                replay_guard: self.nodes.replay_guard,
            });
        for f in &self.forced {
            s = s.force(NodeId(f.node), f.values.clone());
        }
        Ok(s)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
#[serde(tag = "outcome", rename_all = "kebab-case")]
pub enum Outcome {
    Success,
    Abort { reason: String, step: usize },
    ForgeryDetected { reason: String, step: usize },
    SecrecyViolated { key: String },
}

impl Outcome {
    /// Process exit status for the CLI.
    pub fn exit_code(&self) -> i32 {
        match self {
            Outcome::Success => 0,
            Outcome::Abort { .. } => 2,
            Outcome::ForgeryDetected { .. } => 3,
            Outcome::SecrecyViolated { .. } => 4,
        }
    }
}

impl fmt::Display for Outcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Outcome::Success => f.write_str("success"),
            Outcome::Abort { reason, .. } => write!(f, "abort({reason})"),
            Outcome::ForgeryDetected { reason, .. } => write!(f, "forgery-detected({reason})"),
            Outcome::SecrecyViolated { .. } => f.write_str("secrecy-violated"),
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct StepReport {
    pub index: usize,
    pub op: String,
    pub ok: bool,
    pub detail: String,
    pub first_slot: u64,
    pub last_slot: u64,
    pub modeled_ms: f64,
}

/// What the adversary's transcript view implies about one key.
#[derive(Clone, Debug, Serialize)]
pub struct KeyLeak {
    pub key: String,
    /// Linear-algebra oracle (transparent backend only).
    pub unknowns: Option<usize>,
    pub equations: Option<usize>,
    pub rank: Option<usize>,
    pub recovered: Option<u64>,
    /// The recovered value matches the real secret.
    pub recovered_is_secret: Option<bool>,
    /// Envelopes containing a whole secret share verbatim (curve backend).
    pub tap_hits: usize,
}

impl KeyLeak {
    pub fn violated(&self) -> bool {
        self.recovered.is_some() || self.tap_hits > 0
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct Summary {
    pub name: String,
    pub seed: u64,
    pub backend: BackendChoice,
    pub outcome: Outcome,
    pub expected: Option<String>,
    pub matches_expectation: Option<bool>,
    pub malicious: Vec<u16>,
    pub steps: Vec<StepReport>,
    pub leakage: Vec<KeyLeak>,
    pub slots: u64,
    pub transcript_records: usize,
    pub transcript_fingerprint: String,
    pub messages: BTreeMap<String, usize>,
}

impl Summary {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("summary serializes")
    }
}

pub struct Run {
    pub fabric: Fabric,
    pub host: Host,
    pub summary: Summary,
}

fn step_failure(e: &HostError, step: usize) -> Outcome {
    let reason = e.reason().to_string();
    match e {
        HostError::ForgeryDetected { .. } | HostError::ShareProofFailure { .. } => {
            Outcome::ForgeryDetected { reason, step }
        }
        _ => Outcome::Abort { reason, step },
    }
}

fn exec(
    sc: &ScenarioFile,
    fab: &mut Fabric,
    host: &mut Host,
    step: &Step,
) -> Result<Result<String, Outcome>, HostError> {
    let p = *host.params();
    Ok(Ok(match step {
        Step::Keygen { quorum, key } => {
            let qk = host.dkpg(fab, &sc.quorum(*quorum), KeyId::from_label(key))?;
            format!("Y = {}", crate::group::hex(&qk.aggregate.encode()))
        }
        Step::Decrypt { quorum, key, message } => {
            let q = sc.quorum(*quorum);
            let k = KeyId::from_label(key);
            let want = message.bytes();
            let ct = host.encrypt_bytes(&q, k, &want)?;
            let m: GroupElement = host.decrypt(fab, &q, k, &ct)?;
            let got = p.extract_message(&m).map_err(|e| HostError::Crypto(e.to_string()))?;
            let norm = |b: &[u8]| -> Vec<u8> {
                match sc.backend {
                    BackendChoice::Transparent => b.iter().copied().skip_while(|x| *x == 0).collect(),
                    BackendChoice::Curve => b.to_vec(),
                }
            };
            if norm(&got) != norm(&want) {
                return Ok(Err(Outcome::ForgeryDetected {
                    reason: "wrong-plaintext".into(),
                    step: 0,
                }));
            }
            format!("plaintext {}", crate::group::hex(&got))
        }
        Step::Cache { quorum, key, count } => {
            let r = host.cache(fab, &sc.quorum(*quorum), KeyId::from_label(key), *count)?;
            format!("cached j {}..{}", r.start, r.end)
        }
        Step::Sign { quorum, key, message } | Step::SignAt { quorum, key, message, .. } => {
            let q = sc.quorum(*quorum);
            let k = KeyId::from_label(key);
            let sig = match step {
                Step::SignAt { j, .. } => host.sign_at(fab, &q, k, message.as_bytes(), *j)?,
                _ => host.sign(fab, &q, k, message.as_bytes())?,
            };
            let y = host.key(q.quorum_id, k).expect("signed with it").aggregate;
            if !multisig::verify(&p, &y, message.as_bytes(), &sig) {
                return Ok(Err(Outcome::ForgeryDetected {
                    reason: "invalid-signature".into(),
                    step: 0,
                }));
            }
            format!("signature j={} verifies", sig.j)
        }
        Step::Random { quorum, len } => {
            let r = host.gen_random(fab, &sc.quorum(*quorum), *len)?;
            format!("{} random bytes", r.len())
        }
        Step::Propagate { from, to, key } => {
            host.propagate(fab, &sc.quorum(*from), &sc.quorum(*to), KeyId::from_label(key))?;
            format!("quorum {to} holds the key")
        }
    }))
}

fn key_leak(sc: &ScenarioFile, fab: &Fabric, label: &str, tap: usize) -> KeyLeak {
    let k = KeyId::from_label(label);
    let mut leak = KeyLeak {
        key: label.to_string(),
        unknowns: None,
        equations: None,
        rank: None,
        recovered: None,
        recovered_is_secret: None,
        tap_hits: tap,
    };
    if sc.backend != BackendChoice::Transparent {
        return leak;
    }
    match LinearView::from_run(fab, k) {
        Ok(view) => {
            let a = view.analyze();
            leak.unknowns = Some(a.unknowns);
            leak.equations = Some(a.equations);
            leak.rank = Some(a.rank);
            leak.recovered = a.determined;
            if let Some(v) = a.determined {
                leak.recovered_is_secret = true_secret(sc, fab, k).map(|x| x == v);
            }
        }
        Err(LeakageError::UnknownKey(_)) | Err(_) => {}
    }
    leak
}

/// Sum of the shares of the first quorum that generated `k`.
fn true_secret(sc: &ScenarioFile, fab: &Fabric, k: KeyId) -> Option<u64> {
    let q = sc.steps.iter().find_map(|s| match s {
        Step::Keygen { quorum, key } if KeyId::from_label(key) == k => Some(sc.quorum(*quorum)),
        _ => None,
    })?;
    let xs: Option<Vec<_>> = q
        .nodes
        .iter()
        .map(|n| fab.node(*n).and_then(|n| n.secrets().keys.get(&k).map(|s| s.secret)))
        .collect();
    sum_scalars(&xs?).ok()?.as_u32().map(u64::from)
}

pub fn run_scenario(sc: &ScenarioFile) -> Result<Run, ScenarioError> {
    sc.validate()?;
    let (mut fab, mut host) = sc.setup()?.build().map_err(|e| ScenarioError::Setup(e.to_string()))?;
    let mut outcome = Outcome::Success;
    let mut steps = Vec::new();
    for (i, step) in sc.steps.iter().enumerate() {
        let index = i + 1;
        let (w0, s0) = (fab.work_log().len(), fab.slot());
        let res = exec(sc, &mut fab, &mut host, step);
        let modeled_ms = modeled_latency(&fab.work_log()[w0..], &sc.costs);
        let (ok, detail) = match res {
            Ok(Ok(d)) => (true, d),
            Ok(Err(o)) => {
                outcome = match o {
                    Outcome::ForgeryDetected { reason, .. } => Outcome::ForgeryDetected { reason, step: index },
                    o => o,
                };
                (false, outcome.to_string())
            }
            Err(e) => {
                outcome = step_failure(&e, index);
                (false, e.to_string())
            }
        };
        steps.push(StepReport {
            index,
            op: step.name().to_string(),
            ok,
            detail,
            first_slot: s0,
            last_slot: fab.slot(),
            modeled_ms,
        });
        if !ok {
            break;
        }
    }

    let tap = secret_tap(&fab).len();
    let labels: BTreeSet<&str> = sc
        .steps
        .iter()
        .filter_map(|s| match s {
            Step::Keygen { key, .. } => Some(key.as_str()),
            _ => None,
        })
        .collect();
    let leakage: Vec<KeyLeak> = labels.iter().map(|l| key_leak(sc, &fab, l, tap)).collect();
    if let Some(l) = leakage.iter().find(|l| l.violated()) {
        outcome = Outcome::SecrecyViolated { key: l.key.clone() };
    }

    let mut messages = BTreeMap::new();
    for (_, env) in fab.transcript().envelopes() {
        if let Ok(f) = env.frame() {
            let name = match f.request_opcode() {
                Some(op) if f.is_response() => format!("{}/response", op.name()),
                Some(op) => op.name().to_string(),
                None => "error".to_string(),
            };
            *messages.entry(name).or_insert(0) += 1;
        }
    }
    let shown = outcome.to_string();
    let summary = Summary {
        name: sc.name.clone(),
        seed: sc.seed,
        backend: sc.backend,
        matches_expectation: sc.expect.as_ref().map(|e| *e == shown),
        expected: sc.expect.clone(),
        outcome,
        malicious: sc.adversary.malicious.iter().map(|m| m.node.0).collect(),
        steps,
        leakage,
        slots: fab.slot(),
        transcript_records: fab.transcript().len(),
        transcript_fingerprint: fab.transcript().fingerprint(),
        messages,
    };
    Ok(Run {
        fabric: fab,
        host,
        summary,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bundled_outcomes() {
        for (name, _) in BUNDLED {
            let sc = ScenarioFile::bundled(name).unwrap();
            let run = run_scenario(&sc).unwrap();
            assert_eq!(run.summary.matches_expectation, Some(true), "{name}: {}", run.summary.outcome);
        }
    }

    #[test]
    fn schema_errors_name_the_field() {
        let e = ScenarioFile::parse("backend = \"curve\"\n[[quorum]]\nid = 1\nnodes = [1]\n").unwrap_err();
        assert!(e.to_string().contains("seed"), "{e}");
        let e = ScenarioFile::parse("seed = 1\n[[quorum]]\nid = 1\nnodes = [1]\nbogus = 3\n").unwrap_err();
        assert!(e.to_string().contains("bogus"), "{e}");
        let e = ScenarioFile::parse("seed = 1\n[[quorum]]\nid = 1\nnodes = [1]\n[[step]]\nop = \"keygen\"\nquorum = 2\nkey = \"k\"\n")
            .unwrap_err();
        assert!(e.to_string().contains("unknown quorum 2"), "{e}");
        let e = ScenarioFile::parse("seed = 1\nbackend = \"transparent\"\nmodulus = 12\n[[quorum]]\nid = 1\nnodes = [1]\n")
            .unwrap_err();
        assert!(e.to_string().contains("modulus"), "{e}");
    }

    #[test]
    fn forced_trace_scenario() {
        let sc = ScenarioFile::parse(
            r#"
seed = 1
backend = "transparent"
modulus = 13
[[quorum]]
id = 1
nodes = [1, 2, 3]
[[force]]
node = 1
values = [3]
[[force]]
node = 2
values = [5]
[[force]]
node = 3
values = [7]
[[step]]
op = "keygen"
quorum = 1
key = "k"
[[step]]
op = "decrypt"
quorum = 1
key = "k"
message = 4
"#,
        )
        .unwrap();
        let run = run_scenario(&sc).unwrap();
        assert_eq!(run.summary.outcome, Outcome::Success);
        assert_eq!(run.summary.steps[0].detail, "Y = 00000002");
    }
}
