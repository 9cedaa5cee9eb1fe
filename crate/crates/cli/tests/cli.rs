use std::fs;
use std::process::{Command, Output};

fn qhsm(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_qhsm")).args(args).output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

#[test]
fn bundled_scenarios_exit_with_their_outcome() {
    for (name, code) in [
        ("honest-decrypt", 0),
        ("rogue-key", 2),
        ("replay-index", 2),
        ("colluding-signers", 0),
    ] {
        let o = qhsm(&["run", name]);
        assert_eq!(o.status.code(), Some(code), "{name}: {}", stdout(&o));
        assert!(stdout(&o).contains("outcome:"));
    }
}

#[test]
fn list_names_every_bundled_scenario() {
    let o = qhsm(&["run", "-", "--list"]);
    assert!(o.status.success());
    let out = stdout(&o);
    for name in ["honest-decrypt", "rogue-key", "replay-index", "colluding-signers"] {
        assert!(out.contains(name));
    }
}

#[test]
fn run_writes_identical_outputs_twice() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    for d in [&a, &b] {
        let o = qhsm(&["run", "honest-decrypt", "--out", d.path().to_str().unwrap()]);
        assert!(o.status.success());
    }
    for f in ["summary.json", "transcript.bin", "transcript.log"] {
        let x = fs::read(a.path().join(f)).unwrap();
        assert!(!x.is_empty(), "{f} empty");
        assert_eq!(x, fs::read(b.path().join(f)).unwrap(), "{f} differs");
    }
    let summary: serde_json::Value =
        serde_json::from_slice(&fs::read(a.path().join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["outcome"]["outcome"], "success");
}

#[test]
fn expectation_mismatch_exits_one() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("s.toml");
    fs::write(
        &p,
        "seed = 1\nexpect = \"abort(timeout)\"\n[[quorum]]\nid = 1\nnodes = [1, 2]\n\
         [[step]]\nop = \"keygen\"\nquorum = 1\nkey = \"k\"\n",
    )
    .unwrap();
    let o = qhsm(&["run", p.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn schema_errors_exit_64() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("bad.toml");
    fs::write(&p, "seed = 1\nunknown_field = true\n").unwrap();
    assert_eq!(qhsm(&["run", p.to_str().unwrap()]).status.code(), Some(64));
    assert_eq!(qhsm(&["run", "no-such-scenario"]).status.code(), Some(64));
    assert_eq!(qhsm(&["frobnicate"]).status.code(), Some(64));
}

#[test]
fn encrypt_then_decrypt_with_the_same_seed() {
    for backend in ["curve", "transparent"] {
        let base = ["--seed", "9", "--backend", backend, "-t", "3"];
        let msg = if backend == "curve" { "hello quorum" } else { "a" };
        let enc = qhsm(&[&["encrypt"], &base[..], &["--message", msg]].concat());
        assert!(enc.status.success(), "{backend}");
        let ct = stdout(&enc).trim().to_string();
        let dec = qhsm(&[&["decrypt"], &base[..], &["--ciphertext", &ct]].concat());
        assert!(dec.status.success(), "{backend}");
        assert!(stdout(&dec).contains(msg), "{backend}: {}", stdout(&dec));
    }
}

#[test]
fn sign_then_verify() {
    let key = stdout(&qhsm(&["keygen", "--seed", "4"])).trim().to_string();
    let sig = stdout(&qhsm(&["sign", "--seed", "4", "--message", "pay 5"])).trim().to_string();
    let sig = sig.lines().find_map(|l| l.strip_prefix("signature ")).unwrap().to_string();
    let ok = qhsm(&["verify", "--pubkey", &key, "--message", "pay 5", "--signature", &sig]);
    assert!(ok.status.success(), "{}", stdout(&ok));
    let bad = qhsm(&["verify", "--pubkey", &key, "--message", "pay 6", "--signature", &sig]);
    assert_eq!(bad.status.code(), Some(1));
}

#[test]
fn tolerance_prints_exact_decimal() {
    let o = qhsm(&["tolerance", "--p-error", "0.1", "--k", "3"]);
    assert!(o.status.success());
    assert_eq!(stdout(&o).trim(), "0.999");
}

#[test]
fn bench_writes_reports() {
    let d = tempfile::tempdir().unwrap();
    let o = qhsm(&[
        "bench", "--backend", "transparent", "--sizes", "1..3", "--quorums", "1..2", "--requests", "12",
        "--out", d.path().to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", stdout(&o));
    assert!(d.path().join("bench.txt").exists());
    let v: serde_json::Value = serde_json::from_slice(&fs::read(d.path().join("bench.json")).unwrap()).unwrap();
    assert!(v["checks"].is_array());
}
