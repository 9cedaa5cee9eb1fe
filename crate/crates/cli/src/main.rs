//! `qhsm`: run scenarios, one-off protocol operations and modeled benches
//! against an emulated IC deployment.
//!
//! There is no persistent state. Every command rebuilds the deployment from
//! `--seed`, so `keygen`, `encrypt` and `decrypt` invoked with the same seed
//! and quorum size see the same key.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};

use qhsm_core::bench::{run_bench, BenchConfig, CostTable};
use qhsm_core::elgamal::Ciphertext;
use qhsm_core::fabric::Fabric;
use qhsm_core::group::DomainParams;
use qhsm_core::host::{Host, QuorumConfig, Setup};
use qhsm_core::ids::KeyId;
use qhsm_core::multisig::{self, AggregateSignature};
use qhsm_core::reliability::{k_tolerance, k_tolerance_decimal};
use qhsm_core::scenario::{run_scenario, ScenarioFile, BUNDLED};

#[derive(Clone, Copy, Debug, ValueEnum)]
enum BackendArg {
    Curve,
    Transparent,
}

#[derive(Parser)]
#[command(name = "qhsm", version, about = "Emulated IC quorums: threshold keygen, decryption, signing")]
struct Cli {
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    #[arg(long, global = true, value_enum, default_value_t = BackendArg::Curve)]
    backend: BackendArg,
    /// Prime modulus for the transparent backend.
    #[arg(long, global = true, default_value_t = 257)]
    modulus: u32,
    /// Directory for transcripts, summaries and reports.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(clap::Args, Clone)]
struct QuorumArgs {
    /// Quorum size t (the threshold equals t).
    #[arg(short = 't', long = "size", default_value_t = 3)]
    t: u16,
    #[arg(long, default_value = "default")]
    key: String,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run a scenario file, or a bundled scenario by name.
    Run {
        scenario: String,
        /// List bundled scenarios and exit.
        #[arg(long)]
        list: bool,
    },
    /// Modeled latency and throughput sweeps.
    Bench {
        /// Quorum sizes, e.g. `1..10` or `1,2,4`.
        #[arg(long, default_value = "1..10")]
        sizes: String,
        /// Quorum counts for the throughput sweep.
        #[arg(long, default_value = "1..8")]
        quorums: String,
        /// Quorum size used in the throughput sweep.
        #[arg(long, default_value_t = 3)]
        throughput_t: u16,
        #[arg(long, default_value_t = 840)]
        requests: u32,
        /// TOML cost table overriding the defaults.
        #[arg(long)]
        costs: Option<PathBuf>,
    },
    /// Generate a key and print the aggregate public key.
    Keygen(QuorumArgs),
    /// Encrypt a message under the quorum key.
    Encrypt {
        #[command(flatten)]
        q: QuorumArgs,
        #[arg(long)]
        message: String,
    },
    /// Decrypt a hex ciphertext on the quorum.
    Decrypt {
        #[command(flatten)]
        q: QuorumArgs,
        #[arg(long)]
        ciphertext: String,
    },
    /// Cache an index and sign a message.
    Sign {
        #[command(flatten)]
        q: QuorumArgs,
        #[arg(long)]
        message: String,
    },
    /// Check a signature against a public key; no deployment involved.
    Verify {
        #[arg(long)]
        pubkey: String,
        #[arg(long)]
        message: String,
        #[arg(long)]
        signature: String,
    },
    /// Shared randomness from the quorum.
    Rng {
        #[command(flatten)]
        q: QuorumArgs,
        #[arg(long, default_value_t = 32)]
        len: usize,
    },
    /// Generate on one quorum, propagate to a second, decrypt there.
    Propagate {
        #[arg(long, default_value_t = 3)]
        from_size: u16,
        #[arg(long, default_value_t = 2)]
        to_size: u16,
        #[arg(long, default_value = "default")]
        key: String,
    },
    /// Probability that at least one of k sources is honest.
    Tolerance {
        /// Per-source error probability, as a decimal.
        #[arg(long)]
        p_error: String,
        #[arg(long)]
        k: u32,
    },
}

fn params(cli: &Cli) -> Result<DomainParams> {
    Ok(match cli.backend {
        BackendArg::Curve => DomainParams::p256(),
        BackendArg::Transparent => DomainParams::transparent(cli.modulus).map_err(|e| anyhow!("modulus: {e}"))?,
    })
}

/// `a..b` (inclusive) or a comma list.
fn parse_list<T: std::str::FromStr + Copy + Into<u64> + TryFrom<u64>>(s: &str) -> Result<Vec<T>> {
    let one = |x: &str| x.trim().parse::<T>().map_err(|_| anyhow!("bad number {x:?} in {s:?}"));
    if let Some((a, b)) = s.split_once("..") {
        let (a, b) = (one(a)?.into(), one(b)?.into());
        if a > b {
            bail!("empty range {s:?}");
        }
        return (a..=b)
            .map(|v| T::try_from(v).map_err(|_| anyhow!("out of range")))
            .collect();
    }
    s.split(',').map(one).collect()
}

struct Deployment {
    fab: Fabric,
    host: Host,
    q: QuorumConfig,
    key: KeyId,
}

fn deploy(cli: &Cli, q: &QuorumArgs) -> Result<Deployment> {
    if q.t == 0 {
        bail!("quorum size must be at least 1");
    }
    let (mut fab, mut host) = Setup::with_nodes(params(cli)?, q.t, cli.seed).build()?;
    let quorum = QuorumConfig::range(1, 1, q.t);
    let key = KeyId::from_label(&q.key);
    host.dkpg(&mut fab, &quorum, key)?;
    Ok(Deployment {
        fab,
        host,
        q: quorum,
        key,
    })
}

fn write_out(dir: &Path, name: &str, bytes: &[u8]) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let p = dir.join(name);
    fs::write(&p, bytes).with_context(|| format!("writing {}", p.display()))
}

fn cmd_run(cli: &Cli, scenario: &str, list: bool) -> Result<ExitCode> {
    if list {
        for (name, _) in BUNDLED {
            println!("{name}");
        }
        return Ok(ExitCode::SUCCESS);
    }
    let sc = if Path::new(scenario).exists() {
        let text = fs::read_to_string(scenario).with_context(|| format!("reading {scenario}"))?;
        ScenarioFile::parse(&text).with_context(|| scenario.to_string())?
    } else {
        ScenarioFile::bundled(scenario).ok_or_else(|| anyhow!("no scenario file or bundled scenario named {scenario:?}"))?
    };
    let run = run_scenario(&sc)?;
    let s = &run.summary;
    for st in &s.steps {
        println!(
            "step {:>2} {:<10} {} slots {}..{} {:.0} ms  {}",
            st.index,
            st.op,
            if st.ok { "ok  " } else { "FAIL" },
            st.first_slot,
            st.last_slot,
            st.modeled_ms,
            st.detail
        );
    }
    println!("outcome: {}", s.outcome);
    println!("transcript: {} records, fingerprint {}", s.transcript_records, &s.transcript_fingerprint[..32]);
    if let Some(dir) = &cli.out {
        write_out(dir, "summary.json", s.to_json().as_bytes())?;
        write_out(dir, "transcript.bin", &run.fabric.transcript().export())?;
        write_out(dir, "transcript.log", run.fabric.transcript().render_log().as_bytes())?;
    }
    Ok(match s.matches_expectation {
        Some(false) => {
            eprintln!("expected {}", s.expected.as_deref().unwrap_or(""));
            ExitCode::from(1)
        }
        _ => ExitCode::from(s.outcome.exit_code() as u8),
    })
}

fn cmd_bench(
    cli: &Cli,
    sizes: &str,
    quorums: &str,
    throughput_t: u16,
    requests: u32,
    costs: &Option<PathBuf>,
) -> Result<ExitCode> {
    let mut cfg = BenchConfig::new(params(cli)?);
    cfg.sizes = parse_list(sizes)?;
    cfg.quorum_counts = parse_list(quorums)?;
    cfg.throughput_t = throughput_t;
    cfg.requests = requests;
    cfg.seed = cli.seed;
    if let Some(p) = costs {
        let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
        cfg.costs = toml::from_str::<CostTable>(&text).with_context(|| p.display().to_string())?;
    }
    let report = run_bench(&cfg)?;
    let text = report.render();
    print!("{text}");
    if let Some(dir) = &cli.out {
        write_out(dir, "bench.txt", text.as_bytes())?;
        write_out(dir, "bench.json", serde_json::to_string_pretty(&report)?.as_bytes())?;
    }
    Ok(if report.all_pass() { ExitCode::SUCCESS } else { ExitCode::from(1) })
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(64);
        }
    };
    match dispatch(&cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(64)
        }
    }
}

fn dispatch(cli: &Cli) -> Result<ExitCode> {
    match &cli.cmd {
        Cmd::Run { scenario, list } => return cmd_run(cli, scenario, *list),
        Cmd::Bench {
            sizes,
            quorums,
            throughput_t,
            requests,
            costs,
        } => return cmd_bench(cli, sizes, quorums, *throughput_t, *requests, costs),
        Cmd::Keygen(q) => {
            let d = deploy(cli, q)?;
            let qk = d.host.key(1, d.key).expect("generated");
            println!("{}", hex::encode(qk.aggregate.encode()));
            for (n, y) in &qk.shares {
                eprintln!("{n} {}", hex::encode(y.encode()));
            }
        }
        Cmd::Encrypt { q, message } => {
            let mut d = deploy(cli, q)?;
            let ct = d.host.encrypt_bytes(&d.q, d.key, message.as_bytes())?;
            println!("{}", hex::encode(ct.to_bytes()));
        }
        Cmd::Decrypt { q, ciphertext } => {
            let mut d = deploy(cli, q)?;
            let bytes = hex::decode(ciphertext.trim()).context("ciphertext is not hex")?;
            let ct = Ciphertext::from_bytes(d.host.params(), &bytes)?;
            let m = d.host.decrypt_bytes(&mut d.fab, &d.q, d.key, &ct)?;
            match String::from_utf8(m.clone()) {
                Ok(s) => println!("{s}"),
                Err(_) => println!("{}", hex::encode(m)),
            }
        }
        Cmd::Sign { q, message } => {
            let mut d = deploy(cli, q)?;
            d.host.cache(&mut d.fab, &d.q, d.key, 1)?;
            let sig = d.host.sign(&mut d.fab, &d.q, d.key, message.as_bytes())?;
            let y = d.host.key(1, d.key).expect("generated").aggregate;
            println!("pubkey {}", hex::encode(y.encode()));
            println!("signature {}", hex::encode(sig.to_bytes()));
        }
        Cmd::Verify {
            pubkey,
            message,
            signature,
        } => {
            let p = params(cli)?;
            let y = p.decode_element(&hex::decode(pubkey.trim()).context("pubkey is not hex")?)?;
            let sig = AggregateSignature::from_bytes(&p, &hex::decode(signature.trim()).context("signature is not hex")?)?;
            let ok = multisig::verify(&p, &y, message.as_bytes(), &sig);
            println!("{}", if ok { "valid" } else { "invalid" });
            if !ok {
                return Ok(ExitCode::from(1));
            }
        }
        Cmd::Rng { q, len } => {
            let mut d = deploy(cli, q)?;
            let r = d.host.gen_random(&mut d.fab, &d.q, *len)?;
            println!("{}", hex::encode(r));
        }
        Cmd::Propagate {
            from_size,
            to_size,
            key,
        } => {
            if *from_size == 0 || *to_size == 0 {
                bail!("quorum sizes must be at least 1");
            }
            let (mut fab, mut host) = Setup::with_nodes(params(cli)?, from_size + to_size, cli.seed).build()?;
            let q1 = QuorumConfig::range(1, 1, *from_size);
            let q2 = QuorumConfig::range(2, from_size + 1, *to_size);
            let k = KeyId::from_label(key);
            let qk = host.dkpg(&mut fab, &q1, k)?;
            let ct = host.encrypt_bytes(&q1, k, b"ok")?;
            host.propagate(&mut fab, &q1, &q2, k)?;
            let m = host.decrypt_bytes(&mut fab, &q2, k, &ct)?;
            println!("pubkey {}", hex::encode(qk.aggregate.encode()));
            println!(
                "quorum 2 ({} nodes) decrypts a quorum 1 ciphertext: {}",
                to_size,
                if m == b"ok" { "yes" } else { "no" }
            );
            if let Some(dir) = &cli.out {
                write_out(dir, "transcript.log", fab.transcript().render_log().as_bytes())?;
            }
        }
        Cmd::Tolerance { p_error, k } => {
            let exact = k_tolerance_decimal(p_error, *k)?;
            let p: f64 = p_error.parse().context("p_error")?;
            let approx = k_tolerance(p, *k)?;
            println!("{exact}");
            eprintln!("f64: {approx}");
        }
    }
    Ok(ExitCode::SUCCESS)
}
