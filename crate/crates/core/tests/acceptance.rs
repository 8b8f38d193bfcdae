//! Acceptance criteria, run in order on one thread so the timing criteria
//! are not disturbed. Each criterion prints one PASS/FAIL line.

use std::time::{Duration, Instant};

use rand::Rng;
use streamkey::bench;
use streamkey::privacy_amp::{self, make_pad, SecurityLedger, StreamPad};
use streamkey::rates::{self, ErrorRates};
use streamkey::relay::{self, RelayChain};
use streamkey::rng;
use streamkey::session::{self, ChannelModel, Ordering, SessionParams, SessionReport};
use streamkey::suites;
use streamkey::{BitString, Gf2Matrix, HashSeedSource, ToeplitzMatrix};

/// `1 - 2 h(0.11)` evaluated with 50-digit arithmetic.
const SP_RATE_AT_011: f64 = 1.680_836_709_440_087_2e-4;

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: impl Into<String>) -> Verdict {
    Verdict {
        pass,
        detail: detail.into(),
    }
}

fn criterion_1() -> Verdict {
    let sp = |e: f64| rates::shor_preskill_rate(&ErrorRates::new(e, e).unwrap());
    let crosses = sp(0.110) > 0.0 && sp(0.111) < 0.0;
    let err = (sp(0.11) - SP_RATE_AT_011).abs();
    verdict(
        crosses && err <= 1e-9,
        format!("r(0.110) = {:.3e}, r(0.111) = {:.3e}, |r(0.11) - oracle| = {err:.1e}", sp(0.110), sp(0.111)),
    )
}

fn criterion_2() -> Verdict {
    let mut checked = 0;
    let mut bad = vec![];
    for n in 1..=24usize {
        let mut hist = vec![0u64; n + 1];
        for x in 0u32..(1u32 << n) {
            hist[x.count_ones() as usize] += 1;
        }
        for ri in 1..=6 {
            let r = 0.05 * ri as f64;
            for c in [0.0, 1.0, 2.0, (n as f64).sqrt()] {
                let limit = n as f64 * r + c;
                let at_most: u64 = hist.iter().enumerate().filter(|(w, _)| *w as f64 <= limit + 1e-9).map(|(_, k)| k).sum();
                let below: u64 = hist.iter().enumerate().filter(|(w, _)| (*w as f64) < limit - 1e-9).map(|(_, k)| k).sum();
                let general = rates::cardinality_bound_general(n, r, c).unwrap();
                if (at_most as f64).log2() >= general {
                    bad.push(format!("general n={n} r={r:.2} c={c:.2}"));
                }
                if let Ok(tight) = rates::cardinality_bound_tight(n, r, c) {
                    if below > 0 && (below as f64).log2() >= tight {
                        bad.push(format!("tight n={n} r={r:.2} c={c:.2}"));
                    }
                    if tight > general + 1e-9 {
                        bad.push(format!("tight > general n={n} r={r:.2} c={c:.2}"));
                    }
                }
                checked += 1;
            }
        }
    }
    verdict(bad.is_empty(), format!("{checked} parameter points, violations: {bad:?}"))
}

fn describe(c: &suites::BoundCheck) -> String {
    format!(
        "{}: observed {:.3e} ({} / {}), bound {:.3e}, margin {:.2} sigma",
        c.name, c.observed, c.hits, c.trials, c.bound, c.margin_sigmas
    )
}

fn criterion_3() -> Verdict {
    let c = suites::collision(8, 32, 100_000, 3).unwrap();
    verdict(c.holds, describe(&c))
}

fn criterion_4() -> Verdict {
    let c = suites::decode(10, 100_000, None, 4).unwrap();
    verdict(c.holds, describe(&c))
}

fn criterion_5() -> Verdict {
    let c = suites::reuse(16, 10_000, 100_000, 6, 5).unwrap();
    verdict(c.holds, describe(&c))
}

fn criterion_6() -> Verdict {
    let mut rng = rng::tape(6, "acceptance/stream");
    let mut cases = 0u64;
    let mut ok = true;
    for n in 1..=12usize {
        for _ in 0..4 {
            let pad = BitString::random(n, &mut rng);
            for x in 0u64..(1 << n) {
                let a = BitString::from_u64(n, x);
                let batch = a.xor(&pad).unwrap();
                let chunk = rng.gen_range(1..=n);
                let mut p = StreamPad::from_parts(pad.clone(), "m", 0);
                let streamed = privacy_amp::stream_finalize_chunked(&mut p, &a, chunk).unwrap();
                ok &= streamed == batch;
                for i in 0..n {
                    let mut a2 = a.clone();
                    a2.flip(i);
                    let k2 = StreamPad::from_parts(pad.clone(), "m", 0).finalize_next(&a2).unwrap();
                    ok &= k2.xor(&batch).unwrap().ones_positions() == vec![i];
                }
                cases += 1;
            }
        }
    }
    verdict(ok, format!("{cases} (pad, input) pairs, every single-bit flip checked"))
}

fn session_params(seed: u64, ordering: Ordering) -> SessionParams {
    SessionParams {
        n_target: 4096,
        predicted_e_b: 0.02,
        predicted_e_p: 0.02,
        rng_seed: seed,
        ordering,
        ..SessionParams::default()
    }
}

fn criterion_7(reports: &mut Vec<SessionReport>) -> Verdict {
    let dir = tempfile::tempdir().unwrap();
    let mut identical = 0;
    let mut keyed = 0;
    for s in 0..100u64 {
        let seed = rng::child_seed(7, "acceptance/ordering", s);
        let channel = ChannelModel::new(0.02, rng::child_seed(seed, "channel", 0));
        let mut files = vec![];
        for ordering in [Ordering::PaFirst, Ordering::IrFirst] {
            let p = session_params(seed, ordering);
            let mut store = session::pad_store_for(&p, seed).unwrap();
            let out = session::run_session(&p, &channel, &SecurityLedger::new(), &mut store).unwrap();
            let bytes = out.alice_key().map(|k| {
                let path = dir.path().join(format!("{s}-{ordering:?}.key"));
                let sidecar = privacy_amp::KeySidecar {
                    matrix_id: out.report.matrix_id.clone(),
                    seed_len: out.report.pad_seed_bits,
                    eps_claimed: out.report.eps_claimed,
                    ledger_state: out.report.ledger.clone(),
                };
                privacy_amp::write_key_file(&path, &k, &sidecar).unwrap();
                (std::fs::read(&path).unwrap(), std::fs::read(privacy_amp::sidecar_path(&path)).unwrap())
            });
            files.push((bytes, out.report.aborted.clone()));
            reports.push(out.report);
        }
        if files[0] == files[1] {
            identical += 1;
        }
        if files[0].0.is_some() {
            keyed += 1;
        }
    }
    verdict(identical == 100, format!("{identical}/100 pairs byte-identical, {keyed} produced keys"))
}

fn criterion_8(reports: &mut Vec<SessionReport>) -> Verdict {
    let mut extra = 0;
    for (i, e) in [0.0, 0.005, 0.01, 0.03].into_iter().enumerate() {
        for mode in [session::PaMode::Stream, session::PaMode::Block] {
            for encrypted in [false, true] {
                let p = SessionParams {
                    n_target: 2048,
                    predicted_e_b: e,
                    predicted_e_p: e,
                    pa_mode: mode,
                    ir_encrypted: encrypted,
                    rng_seed: 80 + i as u64,
                    ..SessionParams::default()
                };
                let mut store = session::pad_store_for(&p, 8).unwrap();
                let out = session::run_session(&p, &ChannelModel::new(e, 81 + i as u64), &SecurityLedger::new(), &mut store)
                    .unwrap();
                reports.push(out.report);
                extra += 1;
            }
        }
    }
    let done: Vec<&SessionReport> = reports.iter().filter(|r| r.aborted.is_none()).collect();
    let failing = done.iter().filter(|r| !r.accounting_holds()).count();
    verdict(
        failing == 0 && !done.is_empty(),
        format!("{} non-aborted sessions ({} from the mode sweep), {failing} violations", done.len(), extra),
    )
}

fn criterion_9() -> Verdict {
    let mut src = HashSeedSource::from_seed(9, "acceptance/kernel");
    let mut rng = rng::tape(9, "acceptance/kernel-shapes");
    let mut ok = true;
    for _ in 0..100 {
        let n = rng.gen_range(2..=64usize);
        let rows = rng.gen_range(1..n);
        let m = ToeplitzMatrix::generate_full_rank(rows, n, &mut src).unwrap();
        let dense = m.to_dense();
        let v = privacy_amp::kernel_for_block_pa(&m).unwrap();
        ok &= v.len() == n - dense.rank();
        ok &= v.iter().all(|col| dense.mat_vec(col).unwrap().is_zero());
        ok &= v.is_empty() || Gf2Matrix::from_rows(n, v.clone()).unwrap().rank() == v.len();
        let d = BitString::random(rows, &mut rng);
        let pad = make_pad(&m, &d).unwrap();
        ok &= v.iter().all(|col| !pad.pad().dot(col));
    }
    verdict(ok, "100 full-row-rank matrices with n <= 64")
}

fn criterion_10() -> Verdict {
    let params = SessionParams {
        n_target: 4096,
        predicted_e_b: 0.0,
        predicted_e_p: 0.0,
        ..SessionParams::default()
    };
    let chain = RelayChain::uniform(2, params, ChannelModel::new(0.0, 10));
    let mut store = privacy_amp::PadStore::generate(4096, 4096, 10).unwrap();
    let ledger = SecurityLedger::new();
    let runs = relay::run_campaign(&chain, 8, &mut store, &ledger, 10).unwrap();
    let telescoping = !runs.is_empty() && runs.iter().all(|(r, k)| r.telescopes() && k.alice == k.bob);
    let report = relay::relay_adversary_report(&chain, &runs);
    let mut ok = telescoping;
    let mut parts = vec![];
    for r in &report {
        let m = &r.final_match;
        let within = m.trials >= 10_000 && (m.rate() - 0.5).abs() <= 3.0 * m.sigma_at(0.5);
        ok &= within;
        parts.push(format!("{} match {:.4} over {} bits", r.relay, m.rate(), m.trials));
    }
    verdict(ok, format!("{} sessions, telescoping {telescoping}; {}", runs.len(), parts.join("; ")))
}

fn criterion_11() -> Verdict {
    let report = bench::run_bench(&bench::pow2_sizes(16, 24), 5, 1 << 16, 11).unwrap();
    let last = report.rows.last().unwrap();
    verdict(
        report.stream_wins_at_largest && report.stream_r2 >= 0.99,
        format!(
            "n = 2^24: stream {:.3e} b/s vs fast block {:.3e} b/s; stream fit R^2 = {:.4}",
            last.stream_bps(),
            last.fast_block_bps(),
            report.stream_r2
        ),
    )
}

fn criterion_12() -> Verdict {
    let mut src = HashSeedSource::from_seed(12, "acceptance/fast-hash");
    let mut rng = rng::tape(12, "acceptance/fast-hash-shapes");
    let mut ok = true;
    let mut small = 0u64;
    for n in 1..=12usize {
        for rows in 1..=n {
            for _ in 0..2 {
                let m = ToeplitzMatrix::generate(rows, n, &mut src).unwrap();
                for x in 0u64..(1 << n) {
                    let v = BitString::from_u64(n, x);
                    ok &= m.apply_fast(&v).unwrap() == m.apply(&v).unwrap();
                    small += 1;
                }
            }
        }
    }
    let n = 1 << 16;
    for _ in 0..100 {
        let rows = rng.gen_range(1..=n);
        let m = ToeplitzMatrix::generate(rows, n, &mut src).unwrap();
        let v = BitString::random(n, &mut rng);
        ok &= m.apply_fast(&v).unwrap() == m.apply(&v).unwrap();
    }
    verdict(ok, format!("{small} exhaustive small cases, 100 random cases at n = 2^16"))
}

#[test]
fn acceptance_criteria() {
    let mut reports = vec![];
    let mut results: Vec<(usize, &str, Duration, Duration, Verdict)> = vec![];
    macro_rules! run {
        ($id:expr, $name:expr, $limit:expr, $body:expr) => {{
            let t = Instant::now();
            let v = $body;
            let elapsed = t.elapsed();
            let timely = elapsed <= $limit;
            let status = if v.pass && timely { "PASS" } else { "FAIL" };
            println!(
                "criterion {:>2} {:<24} {status} in {:.2?} (limit {:?}): {}",
                $id, $name, elapsed, $limit, v.detail
            );
            results.push(($id, $name, elapsed, $limit, v));
        }};
    }
    let secs = Duration::from_secs;
    run!(1, "rate threshold", secs(1), criterion_1());
    run!(2, "cardinality bounds", secs(60), criterion_2());
    run!(3, "universality", secs(60), criterion_3());
    run!(4, "decode failure", secs(300), criterion_4());
    run!(5, "reuse bound", secs(300), criterion_5());
    run!(6, "stream equivalence", secs(10), criterion_6());
    run!(7, "ordering invariance", secs(120), criterion_7(&mut reports));
    run!(8, "accounting identity", secs(3600), criterion_8(&mut reports));
    run!(9, "kernel identities", secs(30), criterion_9());
    run!(10, "relay privacy", secs(60), criterion_10());
    run!(11, "performance", secs(300), criterion_11());
    run!(12, "fast hash equivalence", secs(120), criterion_12());
    let failed: Vec<usize> = results
        .iter()
        .filter(|(_, _, elapsed, limit, v)| !v.pass || elapsed > limit)
        .map(|(id, ..)| *id)
        .collect();
    println!("acceptance: {} of {} criteria passed", results.len() - failed.len(), results.len());
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
