use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;
use streamkey::privacy_amp::{read_key_file, StreamPad};
use streamkey::rates::{self, GllpTag, GllpTagProfile};
use streamkey::{BitString, ToeplitzMatrix};

fn run(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_streamkey"))
        .current_dir(dir)
        .env_remove("STREAMKEY_SEED")
        .args(args)
        .output()
        .unwrap()
}

fn json(out: &Output) -> Value {
    serde_json::from_slice(&out.stdout).unwrap_or_else(|e| {
        panic!("{e}: {}{}", String::from_utf8_lossy(&out.stdout), String::from_utf8_lossy(&out.stderr))
    })
}

fn write(dir: &Path, name: &str, text: &str) {
    std::fs::write(dir.join(name), text).unwrap();
}

#[test]
fn rates_examples() {
    let d = tempfile::tempdir().unwrap();
    let out = run(d.path(), &["--json", "rates", "--eb", "0", "--ep", "0"]);
    assert_eq!(out.status.code(), Some(0));
    let v = json(&out);
    assert_eq!(v["shor_preskill_rate"], 1.0);
    assert_eq!(v["rng_seed"], 0);

    let v = json(&run(d.path(), &["--json", "rates", "--eb", "0.11", "--ep", "0.11"]));
    let r = v["shor_preskill_rate"].as_f64().unwrap();
    assert!((r - 1.6808e-4).abs() < 1e-7, "{r}");

    let profile = GllpTagProfile::new(vec![GllpTag { q: 0.7, e_p: 0.02 }, GllpTag { q: 0.3, e_p: 0.08 }]).unwrap();
    write(d.path(), "profile.json", &serde_json::to_string(&profile).unwrap());
    let v = json(&run(d.path(), &["--json", "rates", "--eb", "0.02", "--gllp", "profile.json"]));
    assert_eq!(v["gllp_rate"].as_f64().unwrap(), rates::gllp_rate(0.02, &profile).unwrap());
}

#[test]
fn invalid_input_exits_three() {
    let d = tempfile::tempdir().unwrap();
    assert_eq!(run(d.path(), &["rates", "--eb", "1.5", "--ep", "0"]).status.code(), Some(3));
    assert_eq!(run(d.path(), &["rates", "--eb", "0"]).status.code(), Some(3));
    assert_eq!(run(d.path(), &["frobnicate"]).status.code(), Some(3));
    assert_eq!(run(d.path(), &["session", "--config", "missing.json"]).status.code(), Some(3));
    write(d.path(), "c.json", "{}");
    let out = run(d.path(), &["session", "--config", "c.json"]);
    assert_eq!(out.status.code(), Some(3), "session without a provisioned pad");
}

#[test]
fn env_seed_overrides_flag() {
    let d = tempfile::tempdir().unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_streamkey"))
        .current_dir(d.path())
        .env("STREAMKEY_SEED", "77")
        .args(["--json", "--rng-seed", "5", "matrix", "gen", "--rows", "4", "--cols", "9", "--out", "m.txt"])
        .output()
        .unwrap();
    assert_eq!(json(&out)["rng_seed"], 77);
    let with_flag = json(&run(d.path(), &["--json", "--rng-seed", "77", "matrix", "gen", "--rows", "4", "--cols", "9", "--out", "m2.txt"]));
    assert_eq!(json(&out)["matrix_id"], with_flag["matrix_id"]);
}

#[test]
fn noiseless_session_and_ordering_invariance() {
    let d = tempfile::tempdir().unwrap();
    write(
        d.path(),
        "noiseless.json",
        r#"{"n_target": 2048, "predicted_e_b": 0, "predicted_e_p": 0, "channel": {"flip_prob_z": 0}}"#,
    );
    let out = run(d.path(), &["--json", "session", "--config", "noiseless.json", "--provision", "--out-dir", "o"]);
    assert_eq!(out.status.code(), Some(0));
    let r = &json(&out)["report"];
    let n = r["n"].as_u64().unwrap();
    let expect = n - r["sampled_bits"].as_u64().unwrap() - r["disclosed_bits"].as_u64().unwrap() - r["seed_bits"].as_u64().unwrap();
    assert_eq!(r["seed_bits"], 0);
    let (ka, sidecar) = read_key_file(&d.path().join("o/alice.key")).unwrap();
    let (kb, _) = read_key_file(&d.path().join("o/bob.key")).unwrap();
    assert_eq!(ka, kb);
    assert_eq!(ka.len() as u64, expect);
    assert_eq!(sidecar.seed_len as u64, r["pad_seed_bits"].as_u64().unwrap());
    assert!(d.path().join("o/report.json").exists());

    write(d.path(), "noisy.json", r#"{"n_target": 4096, "predicted_e_b": 0.02, "predicted_e_p": 0.02}"#);
    for (ord, dir) in [("pa-first", "pa"), ("ir-first", "ir")] {
        let out = run(
            d.path(),
            &["--rng-seed", "12", "session", "--config", "noisy.json", "--ordering", ord, "--provision", "--out-dir", dir],
        );
        assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stdout));
    }
    for f in ["alice.key", "bob.key", "alice.key.json"] {
        let a = std::fs::read(d.path().join("pa").join(f)).unwrap();
        let b = std::fs::read(d.path().join("ir").join(f)).unwrap();
        assert_eq!(a, b, "{f} differs between orderings");
    }
}

#[test]
fn state_directory_tracks_the_budget() {
    let d = tempfile::tempdir().unwrap();
    write(d.path(), "c.json", r#"{"n_target": 1024, "predicted_e_b": 0.01, "predicted_e_p": 0.01, "eps_pa": 1e-10, "eps_total": 2e-10}"#);
    let args = |seed: &'static str, out: &'static str| {
        vec!["--json", "--rng-seed", seed, "session", "--config", "c.json", "--state", "st", "--provision", "--out-dir", out]
    };
    let first = run(d.path(), &args("1", "a"));
    assert_eq!(first.status.code(), Some(0));
    assert!(d.path().join("st/store.json").exists());
    assert!(d.path().join("st/matrix.txt").exists());
    let second = run(d.path(), &args("2", "b"));
    assert_eq!(second.status.code(), Some(0));
    let first_key = read_key_file(&d.path().join("a/alice.key")).unwrap().1;
    let second_key = read_key_file(&d.path().join("b/alice.key")).unwrap().1;
    assert_eq!(first_key.matrix_id, second_key.matrix_id);
    assert_eq!(second_key.ledger_state.unwrap().sessions_used, 2);
    let third = run(d.path(), &args("3", "c"));
    assert_eq!(third.status.code(), Some(2));
    assert_eq!(json(&third)["aborted"], "budget-exhausted");
    assert!(!d.path().join("c/alice.key").exists());
}

#[test]
fn pad_matrix_and_extract_files() {
    let d = tempfile::tempdir().unwrap();
    let out = run(d.path(), &["--rng-seed", "4", "matrix", "gen", "--rows", "8", "--cols", "40", "--full-rank", "--out", "m.txt"]);
    assert_eq!(out.status.code(), Some(0));
    let m = ToeplitzMatrix::from_file_string(&std::fs::read_to_string(d.path().join("m.txt")).unwrap()).unwrap();
    assert_eq!((m.rows(), m.cols()), (8, 40));
    assert_eq!(m.to_dense().rank(), 8);

    let out = run(d.path(), &["pad", "gen", "--n", "40", "--seed-len", "8", "--matrix", "m.txt", "--out", "p.txt"]);
    assert_eq!(out.status.code(), Some(0));
    let pad = StreamPad::read(&d.path().join("p.txt")).unwrap();
    assert_eq!((pad.len(), pad.seed_len()), (40, 8));
    assert_eq!(pad.matrix_id(), m.id());
    let bad = run(d.path(), &["pad", "gen", "--n", "41", "--seed-len", "8", "--matrix", "m.txt", "--out", "p.txt"]);
    assert_eq!(bad.status.code(), Some(3));

    let raw = BitString::from_binary(&"1100101011".repeat(4)).unwrap();
    write(d.path(), "raw.hex", &raw.to_hex());
    let out = run(d.path(), &["--json", "extract", "--raw", "raw.hex", "--h-min", "32", "--matrix", "m.txt", "--out", "k.hex"]);
    assert_eq!(out.status.code(), Some(0));
    assert_eq!(json(&out)["seed_len"], 8);
    let k = BitString::from_hex(std::fs::read_to_string(d.path().join("k.hex")).unwrap().trim()).unwrap();
    assert_eq!(k.len(), 40);
    let out = run(d.path(), &["extract", "--raw", "raw.hex", "--h-min", "40", "--out", "k2.hex"]);
    assert_eq!(out.status.code(), Some(0));
    let k2 = BitString::from_hex(std::fs::read_to_string(d.path().join("k2.hex")).unwrap().trim()).unwrap();
    assert_eq!(k2, raw);
}

#[test]
fn bounds_report() {
    let d = tempfile::tempdir().unwrap();
    let v = json(&run(d.path(), &["--json", "bounds", "--n", "20", "--r", "0.1", "--c", "2", "--eps-ec", "0.01"]));
    let exact = v["log2_exact"].as_f64().unwrap();
    assert!(exact <= v["log2_tight"].as_f64().unwrap());
    assert!(v["log2_tight"].as_f64().unwrap() <= v["log2_general"].as_f64().unwrap());
    assert_eq!(v["syndrome_bits"].as_u64().unwrap(), rates::ec_cost(exact, 0.01).unwrap());
    let v = json(&run(d.path(), &["--json", "bounds", "--n", "64", "--r", "0.05", "--eps-pe", "0.1"]));
    assert!((v["c"].as_f64().unwrap() - rates::deviation(64, 0.1).unwrap()).abs() < 1e-12);
}

#[test]
fn verify_bounds_and_forced_failure() {
    let d = tempfile::tempdir().unwrap();
    let out = run(d.path(), &["--json", "verify-bounds", "--scale", "0.05"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stdout));
    let v = json(&out);
    assert!(v["checks"].as_array().unwrap().iter().all(|c| c["holds"] == true));
    let out = run(d.path(), &["--json", "verify-bounds", "--scale", "0.05", "--forced-failure", "--sessions", "4"]);
    assert_eq!(out.status.code(), Some(2));
    let v = json(&out);
    let forced: Vec<&Value> = v["checks"].as_array().unwrap().iter().filter(|c| c["forced"] == true).collect();
    assert_eq!(forced.len(), 1);
    assert_eq!(forced[0]["holds"], false);
    assert_eq!(v["config"]["reuse_patterns"], 4);
}

#[test]
fn relay_scenario() {
    let d = tempfile::tempdir().unwrap();
    let chain = streamkey::relay::RelayChain::uniform(
        1,
        streamkey::session::SessionParams {
            n_target: 4096,
            predicted_e_b: 0.001,
            predicted_e_p: 0.001,
            ..Default::default()
        },
        streamkey::session::ChannelModel::new(0.001, 3),
    );
    write(d.path(), "chain.json", &serde_json::to_string(&chain).unwrap());
    let short = streamkey::relay::RelayChain::uniform(
        3,
        streamkey::session::SessionParams {
            n_target: 1024,
            predicted_e_b: 0.02,
            predicted_e_p: 0.02,
            ..Default::default()
        },
        streamkey::session::ChannelModel::new(0.02, 3),
    );
    write(d.path(), "short.json", &serde_json::to_string(&short).unwrap());
    let out = run(d.path(), &["--json", "relay", "--scenario", "short.json"]);
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(json(&out)["aborted"], "pad-shortfall");
    let out = run(d.path(), &["--json", "relay", "--scenario", "chain.json", "--sessions", "3", "--out", "r.json"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stdout));
    let v = json(&out);
    assert_eq!(v["report"]["telescoping"], true);
    assert_eq!(v["report"]["endpoints_agree"], true);
    assert!(d.path().join("r.json").exists());
}

#[test]
fn small_bench_runs() {
    let d = tempfile::tempdir().unwrap();
    let out = run(d.path(), &["--json", "bench", "--min-log2", "10", "--max-log2", "14", "--repeats", "3", "--naive-max", "4096"]);
    assert!(matches!(out.status.code(), Some(0) | Some(2)));
    let v = json(&out);
    assert_eq!(v["report"]["rows"].as_array().unwrap().len(), 5);
    assert_eq!(run(d.path(), &["bench", "--min-log2", "12", "--max-log2", "12"]).status.code(), Some(3));
}
