//! Command-line front end.
//!
//! Every command prints a human-readable table, or a JSON object with
//! `--json`. The resolved RNG seed is part of every output. Exit codes are
//! [`EXIT_OK`], [`EXIT_ABORT`] (the pipeline refused, with a reason) and
//! [`EXIT_INVALID`] (bad arguments or inputs).

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::bench;
use crate::error::{Error, Result};
use crate::hashing::{HashSeedSource, ToeplitzMatrix};
use crate::privacy_amp::{self, KeySidecar, LedgerEntry, MinEntropyEstimate, PadStore, SecurityLedger};
use crate::rates::{self, ErrorRates, GllpTagProfile};
use crate::reconciliation::TypicalErrorSet;
use crate::relay::{self, RelayChain, RelayRunReport};
use crate::rng;
use crate::session::{self, ChannelModel, Ordering, PaMode, SessionParams};
use crate::suites::{self, SuiteConfig};
use crate::BitString;

pub const EXIT_OK: i32 = 0;
pub const EXIT_ABORT: i32 = 2;
pub const EXIT_INVALID: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "streamkey", version, about = "QKD post-processing with stream privacy amplification")]
pub struct Cli {
    /// Emit JSON instead of a table.
    #[arg(long, global = true)]
    pub json: bool,
    /// Master RNG seed; the STREAMKEY_SEED environment variable takes precedence.
    #[arg(long, global = true)]
    pub rng_seed: Option<u64>,
    /// Upper bound on worker threads. Commands currently run on one thread.
    #[arg(long, global = true, default_value_t = 1)]
    pub threads: usize,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Asymptotic key rates, seed length and reconciliation cost.
    Rates(RatesArgs),
    /// Cardinality bounds of the typical error set and syndrome length.
    Bounds(BoundsArgs),
    /// Run one simulated session and write keys and a report.
    Session(SessionArgs),
    /// Run a trusted-relay chain with delayed privacy amplification.
    Relay(RelayArgs),
    /// Pad generation.
    #[command(subcommand)]
    Pad(PadCommand),
    /// Hashing matrix generation.
    #[command(subcommand)]
    Matrix(MatrixCommand),
    /// Stream randomness extraction from raw random bits.
    Extract(ExtractArgs),
    /// Monte-Carlo checks of the failure-probability bounds.
    VerifyBounds(VerifyArgs),
    /// Throughput of stream XOR against block Toeplitz hashing.
    Bench(BenchArgs),
}

#[derive(Debug, Args)]
pub struct RatesArgs {
    #[arg(long)]
    pub eb: f64,
    /// Phase-error rate; required unless `--gllp` is given.
    #[arg(long)]
    pub ep: Option<f64>,
    /// Block length for the seed and reconciliation estimates.
    #[arg(long, default_value_t = 4096)]
    pub n: usize,
    /// JSON tag profile `{"tags": [{"q": .., "e_p": ..}, ..]}`.
    #[arg(long)]
    pub gllp: Option<PathBuf>,
    /// Reconciliation traffic is one-time padded.
    #[arg(long)]
    pub ir_encrypted: bool,
}

#[derive(Debug, Args)]
pub struct BoundsArgs {
    #[arg(long)]
    pub n: usize,
    #[arg(long)]
    pub r: f64,
    /// Deviation of the error count from `n r`.
    #[arg(long, conflicts_with = "eps_pe")]
    pub c: Option<f64>,
    /// Derive `c` from a parameter-estimation failure probability.
    #[arg(long)]
    pub eps_pe: Option<f64>,
    /// Also report the syndrome length for this reconciliation budget.
    #[arg(long)]
    pub eps_ec: Option<f64>,
}

#[derive(Debug, Args)]
pub struct SessionArgs {
    /// JSON session parameters, optionally with a `channel` object.
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long, value_parser = parse_ordering)]
    pub ordering: Option<Ordering>,
    #[arg(long, value_parser = parse_pa_mode)]
    pub pa_mode: Option<PaMode>,
    /// Directory holding the pad store and the reuse ledger between runs.
    #[arg(long)]
    pub state: Option<PathBuf>,
    /// Create the pad store if none exists.
    #[arg(long)]
    pub provision: bool,
    #[arg(long, default_value = "streamkey-out")]
    pub out_dir: PathBuf,
}

#[derive(Debug, Args)]
pub struct RelayArgs {
    /// JSON relay chain.
    #[arg(long)]
    pub scenario: PathBuf,
    #[arg(long, default_value_t = 1)]
    pub sessions: usize,
    /// Where to write the run report.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum PadCommand {
    /// Build a pad `d M` from a fresh seed.
    Gen(PadGenArgs),
}

#[derive(Debug, Args)]
pub struct PadGenArgs {
    #[arg(long)]
    pub n: usize,
    #[arg(long)]
    pub seed_len: usize,
    /// Matrix file; drawn from the RNG seed when absent.
    #[arg(long)]
    pub matrix: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Subcommand)]
pub enum MatrixCommand {
    /// Draw a random Toeplitz matrix.
    Gen(MatrixGenArgs),
}

#[derive(Debug, Args)]
pub struct MatrixGenArgs {
    #[arg(long)]
    pub rows: usize,
    #[arg(long)]
    pub cols: usize,
    /// Redraw until the matrix has full row rank.
    #[arg(long)]
    pub full_rank: bool,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ExtractArgs {
    /// Raw bits in `len:hex` form.
    #[arg(long)]
    pub raw: PathBuf,
    #[arg(long)]
    pub h_min: f64,
    /// Matrix file with `n - ceil(h_min)` rows; drawn from the RNG seed when absent.
    #[arg(long)]
    pub matrix: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct VerifyArgs {
    /// Add a decode check whose syndrome is two bits short of `ceil(log|T|)`.
    #[arg(long)]
    pub forced_failure: bool,
    /// Number of committed patterns in the reuse check.
    #[arg(long, default_value_t = 16)]
    pub sessions: usize,
    /// Multiplier on every trial count.
    #[arg(long, default_value_t = 1.0)]
    pub scale: f64,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    #[arg(long, default_value_t = 16)]
    pub min_log2: u32,
    #[arg(long, default_value_t = 24)]
    pub max_log2: u32,
    #[arg(long, default_value_t = 5)]
    pub repeats: usize,
    /// Largest size at which the naive product is timed.
    #[arg(long, default_value_t = 1 << 16)]
    pub naive_max: usize,
}

fn parse_ordering(s: &str) -> std::result::Result<Ordering, String> {
    match s {
        "ir-first" => Ok(Ordering::IrFirst),
        "pa-first" => Ok(Ordering::PaFirst),
        _ => Err(format!("expected ir-first or pa-first, got {s}")),
    }
}

fn parse_pa_mode(s: &str) -> std::result::Result<PaMode, String> {
    match s {
        "stream" => Ok(PaMode::Stream),
        "block" => Ok(PaMode::Block),
        _ => Err(format!("expected stream or block, got {s}")),
    }
}

/// What a command produced: an exit code, a table and a JSON body.
#[derive(Debug)]
pub struct Outcome {
    pub code: i32,
    pub text: String,
    pub body: Value,
}

impl Outcome {
    fn ok(text: String, body: Value) -> Self {
        Outcome {
            code: EXIT_OK,
            text,
            body,
        }
    }
}

/// Per-invocation context shared by the commands.
#[derive(Clone, Copy, Debug)]
pub struct Context {
    pub seed: u64,
    pub seed_given: bool,
    pub threads: usize,
}

/// Resolve the master seed: the environment value wins over the flag.
pub fn resolve_seed(flag: Option<u64>, env: Option<&str>) -> Result<(u64, bool)> {
    if let Some(v) = env {
        let seed = v
            .trim()
            .parse()
            .map_err(|_| Error::InvalidInput(format!("{} is not an unsigned integer: {v}", rng::SEED_ENV)))?;
        return Ok((seed, true));
    }
    Ok(flag.map_or((0, false), |s| (s, true)))
}

/// Parse arguments, run the command, print its output and return the exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_INVALID } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    let env = std::env::var(rng::SEED_ENV).ok();
    let json = cli.json;
    let (code, text, body) = match resolve_seed(cli.rng_seed, env.as_deref()) {
        Err(e) => (EXIT_INVALID, format!("error: {e}\n"), json!({ "error": e.to_string() })),
        Ok((seed, seed_given)) => {
            let ctx = Context {
                seed,
                seed_given,
                threads: cli.threads.max(1),
            };
            let mut out = match execute(&cli.command, &ctx) {
                Ok(o) => o,
                Err(e) => failure(&e),
            };
            if let Value::Object(map) = &mut out.body {
                map.insert("rng_seed".into(), json!(seed));
                map.insert("threads".into(), json!(ctx.threads));
            }
            out.text.push_str(&format!("rng seed: {seed}\n"));
            (out.code, out.text, out.body)
        }
    };
    if json {
        println!("{}", serde_json::to_string_pretty(&body).expect("serialisable"));
    } else if code == EXIT_INVALID {
        eprint!("{text}");
    } else {
        print!("{text}");
    }
    code
}

fn failure(e: &Error) -> Outcome {
    let reason = session::abort_reason(e);
    if reason == "error" {
        Outcome {
            code: EXIT_INVALID,
            text: format!("error: {e}\n"),
            body: json!({ "error": e.to_string() }),
        }
    } else {
        Outcome {
            code: EXIT_ABORT,
            text: format!("aborted: {reason} ({e})\n"),
            body: json!({ "aborted": reason, "error": e.to_string() }),
        }
    }
}

pub fn execute(cmd: &Command, ctx: &Context) -> Result<Outcome> {
    match cmd {
        Command::Rates(a) => cmd_rates(a),
        Command::Bounds(a) => cmd_bounds(a),
        Command::Session(a) => cmd_session(a, ctx),
        Command::Relay(a) => cmd_relay(a, ctx),
        Command::Pad(PadCommand::Gen(a)) => cmd_pad_gen(a, ctx),
        Command::Matrix(MatrixCommand::Gen(a)) => cmd_matrix_gen(a, ctx),
        Command::Extract(a) => cmd_extract(a, ctx),
        Command::VerifyBounds(a) => cmd_verify_bounds(a, ctx),
        Command::Bench(a) => cmd_bench(a, ctx),
    }
}

fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path)
        .map_err(|e| Error::InvalidInput(format!("cannot read {}: {e}", path.display())))
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    serde_json::from_str(&read_text(path)?)
        .map_err(|e| Error::InvalidInput(format!("{}: {e}", path.display())))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    std::fs::write(path, serde_json::to_string_pretty(value)?)?;
    Ok(())
}

fn cmd_rates(a: &RatesArgs) -> Result<Outcome> {
    let profile = match (&a.gllp, a.ep) {
        (Some(path), _) => {
            let p: GllpTagProfile = read_json(path)?;
            p.validate()?;
            p
        }
        (None, Some(ep)) => GllpTagProfile::single(ep)?,
        (None, None) => return Err(Error::InvalidInput("give --ep or --gllp".into())),
    };
    let sp = match a.ep {
        Some(ep) => Some(rates::shor_preskill_rate(&ErrorRates::new(a.eb, ep)?)),
        None => None,
    };
    let gllp = rates::gllp_rate(a.eb, &profile)?;
    let phase_entropy = profile.phase_entropy();
    let seed_bits = rates::ceil_bits(a.n as f64 * phase_entropy);
    let ir_bits = rates::ceil_bits(a.n as f64 * rates::binary_entropy(a.eb)?);
    let seed_fraction = rates::gllp_seed_fraction(a.eb, &profile, a.ir_encrypted)?;
    let mut text = String::new();
    let sp_text = sp.map_or("-".to_string(), |v| format!("{v:.6e}"));
    writeln!(text, "{:<28} {}", "shor-preskill rate", sp_text).unwrap();
    writeln!(text, "{:<28} {:.6e}", "gllp rate", gllp).unwrap();
    writeln!(text, "{:<28} {}", "seed bits ceil(n h(e_p))", seed_bits).unwrap();
    writeln!(text, "{:<28} {}", "ir estimate ceil(n h(e_b))", ir_bits).unwrap();
    writeln!(text, "{:<28} {:.6}", "stream seed fraction", seed_fraction).unwrap();
    writeln!(text, "{:<28} {}", "n", a.n).unwrap();
    Ok(Outcome::ok(
        text,
        json!({
            "command": "rates",
            "e_b": a.eb,
            "e_p": a.ep,
            "n": a.n,
            "ir_encrypted": a.ir_encrypted,
            "shor_preskill_rate": sp,
            "gllp_rate": gllp,
            "gllp_profile": profile,
            "phase_entropy": phase_entropy,
            "seed_bits": seed_bits,
            "ir_estimate_bits": ir_bits,
            "seed_fraction": seed_fraction,
        }),
    ))
}

fn cmd_bounds(a: &BoundsArgs) -> Result<Outcome> {
    let c = match (a.c, a.eps_pe) {
        (Some(c), _) => c,
        (None, Some(eps)) => rates::deviation(a.n, eps)?,
        (None, None) => return Err(Error::InvalidInput("give --c or --eps-pe".into())),
    };
    let general = rates::cardinality_bound_general(a.n, a.r, c)?;
    let tight = rates::cardinality_bound_tight(a.n, a.r, c);
    let set = TypicalErrorSet::from_estimate(a.n, a.r, c)?;
    let exact = set.log2_cardinality();
    let syndrome = match a.eps_ec {
        Some(eps) => Some(rates::ec_cost(exact, eps)?),
        None => None,
    };
    let tight_text = match &tight {
        Ok(v) => format!("{v:.4}"),
        Err(e) => format!("n/a ({e})"),
    };
    let mut text = String::new();
    writeln!(text, "{:<24} {}", "n", a.n).unwrap();
    writeln!(text, "{:<24} {}", "r", a.r).unwrap();
    writeln!(text, "{:<24} {:.4}", "c", c).unwrap();
    writeln!(text, "{:<24} [{}, {}]", "weight window", set.lo, set.hi).unwrap();
    writeln!(text, "{:<24} {:.4}", "log2 |T| exact", exact).unwrap();
    writeln!(text, "{:<24} {:.4}", "log2 bound general", general).unwrap();
    writeln!(text, "{:<24} {}", "log2 bound tight", tight_text).unwrap();
    if let Some(s) = syndrome {
        writeln!(text, "{:<24} {}", "syndrome bits", s).unwrap();
    }
    Ok(Outcome::ok(
        text,
        json!({
            "command": "bounds",
            "n": a.n,
            "r": a.r,
            "c": c,
            "window": [set.lo, set.hi],
            "log2_exact": exact,
            "log2_general": general,
            "log2_tight": tight.as_ref().ok(),
            "tight_error": tight.as_ref().err().map(|e| e.to_string()),
            "eps_ec": a.eps_ec,
            "syndrome_bits": syndrome,
        }),
    ))
}

/// Saved pad-store position; the pools are replayed from `master_seed`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StoreState {
    pub master_seed: u64,
    pub rows: usize,
    pub cols: usize,
    pub matrix_id: String,
    pub seed_offset: usize,
    pub fresh_offset: usize,
}

const STORE_FILE: &str = "store.json";
const LEDGER_FILE: &str = "ledger.json";
const MATRIX_FILE: &str = "matrix.txt";

/// Reload a pad store from a state directory.
pub fn load_store(dir: &Path) -> Result<Option<(PadStore, StoreState)>> {
    let path = dir.join(STORE_FILE);
    if !path.exists() {
        return Ok(None);
    }
    let state: StoreState = read_json(&path)?;
    let mut store = PadStore::generate(state.rows, state.cols, state.master_seed)?;
    if store.matrix_id() != state.matrix_id {
        return Err(Error::InvalidInput(format!(
            "{} names matrix {} but its seed yields {}",
            path.display(),
            state.matrix_id,
            store.matrix_id()
        )));
    }
    store.advance_to(state.seed_offset, state.fresh_offset)?;
    Ok(Some((store, state)))
}

pub fn load_ledger(dir: &Path) -> Result<SecurityLedger> {
    let path = dir.join(LEDGER_FILE);
    if !path.exists() {
        return Ok(SecurityLedger::new());
    }
    let entries: Vec<LedgerEntry> = read_json(&path)?;
    Ok(SecurityLedger::from_entries(entries))
}

fn save_state(dir: &Path, store: &PadStore, mut state: StoreState, ledger: &SecurityLedger) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    (state.seed_offset, state.fresh_offset) = store.pool_offsets();
    write_json(&dir.join(STORE_FILE), &state)?;
    write_json(&dir.join(LEDGER_FILE), &ledger.snapshot())?;
    let matrix = dir.join(MATRIX_FILE);
    if !matrix.exists() {
        std::fs::write(matrix, store.matrix().to_file_string())?;
    }
    Ok(())
}

/// Session parameters from a JSON object: absent fields take their defaults
/// and an optional `channel` object describes the simulated link.
pub fn session_config(text: &str) -> Result<(SessionParams, Option<ChannelModel>)> {
    let mut value: Value =
        serde_json::from_str(text).map_err(|e| Error::InvalidInput(format!("config: {e}")))?;
    let Value::Object(map) = &mut value else {
        return Err(Error::InvalidInput("config must be a JSON object".into()));
    };
    let channel = match map.remove("channel") {
        Some(c) => Some(
            serde_json::from_value::<ChannelModel>(c)
                .map_err(|e| Error::InvalidInput(format!("channel: {e}")))?,
        ),
        None => None,
    };
    let mut merged = serde_json::to_value(SessionParams::default())?;
    if let Value::Object(base) = &mut merged {
        for (k, v) in map.iter() {
            if !base.contains_key(k) {
                return Err(Error::InvalidInput(format!("unknown config field {k}")));
            }
            base.insert(k.clone(), v.clone());
        }
    }
    let params = serde_json::from_value(merged).map_err(|e| Error::InvalidInput(format!("config: {e}")))?;
    Ok((params, channel))
}

fn cmd_session(a: &SessionArgs, ctx: &Context) -> Result<Outcome> {
    let (mut params, channel) = session_config(&read_text(&a.config)?)?;
    if ctx.seed_given {
        params.rng_seed = ctx.seed;
    }
    if let Some(o) = a.ordering {
        params.ordering = o;
    }
    if let Some(m) = a.pa_mode {
        params.pa_mode = m;
    }
    params.validate()?;
    let channel = channel.unwrap_or_else(|| {
        ChannelModel::new(params.predicted_e_b, rng::child_seed(params.rng_seed, "cli/channel", 0))
    });
    channel.validate()?;

    let loaded = match &a.state {
        Some(dir) => load_store(dir)?,
        None => None,
    };
    let (mut store, state) = match loaded {
        Some(s) => s,
        None if a.provision => {
            let master_seed = rng::child_seed(params.rng_seed, "cli/pad-store", 0);
            let store = session::pad_store_for(&params, master_seed)?;
            let state = StoreState {
                master_seed,
                rows: store.matrix().rows(),
                cols: store.matrix().cols(),
                matrix_id: store.matrix_id().to_string(),
                seed_offset: 0,
                fresh_offset: 0,
            };
            (store, state)
        }
        None => {
            return Err(Error::InvalidInput(
                "no pad store provisioned; pass --provision or a --state directory holding one".into(),
            ))
        }
    };
    let ledger = match &a.state {
        Some(dir) => load_ledger(dir)?,
        None => SecurityLedger::new(),
    };

    let output = session::run_session(&params, &channel, &ledger, &mut store)?;
    if let Some(dir) = &a.state {
        save_state(dir, &store, state, &ledger)?;
    }
    std::fs::create_dir_all(&a.out_dir)?;
    let report = &output.report;
    write_json(&a.out_dir.join("report.json"), report)?;
    let mut key_files = vec![];
    if let (Some(ka), Some(kb)) = (output.alice_key(), output.bob_key()) {
        let sidecar = KeySidecar {
            matrix_id: report.matrix_id.clone(),
            seed_len: report.pad_seed_bits,
            eps_claimed: report.eps_claimed,
            ledger_state: report.ledger.clone(),
        };
        for (name, key) in [("alice.key", &ka), ("bob.key", &kb)] {
            let path = a.out_dir.join(name);
            privacy_amp::write_key_file(&path, key, &sidecar)?;
            key_files.push(path.display().to_string());
        }
    }

    let ok = report.aborted.is_none() && report.verified == Some(true);
    let mut text = String::new();
    let rows: [(&str, String); 12] = [
        ("n", report.n.to_string()),
        ("sampled bits", report.sampled_bits.to_string()),
        ("e_b observed", format!("{:.5}", report.e_b_observed)),
        ("e_p observed", report.e_p_observed.map_or("-".into(), |v| format!("{v:.5}"))),
        ("disclosed bits", report.disclosed_bits.to_string()),
        ("seed bits", report.seed_bits.to_string()),
        ("final length", report.final_len.to_string()),
        ("net rate", format!("{:.5}", report.net_rate)),
        ("eps claimed", format!("{:.3e}", report.eps_claimed)),
        ("verified", report.verified.map_or("-".into(), |v| v.to_string())),
        ("ordering / mode", format!("{:?} / {:?}", report.ordering, report.pa_mode)),
        ("status", report.aborted.clone().unwrap_or_else(|| "ok".into())),
    ];
    for (k, v) in rows {
        writeln!(text, "{k:<20} {v}").unwrap();
    }
    let mut body = json!({
        "command": "session",
        "report": report,
        "key_files": key_files,
        "out_dir": a.out_dir.display().to_string(),
    });
    let code = if ok {
        EXIT_OK
    } else {
        let reason = report.aborted.clone().unwrap_or_else(|| "verification-failed".into());
        body["aborted"] = json!(reason);
        EXIT_ABORT
    };
    Ok(Outcome { code, text, body })
}

fn cmd_relay(a: &RelayArgs, ctx: &Context) -> Result<Outcome> {
    if a.sessions == 0 {
        return Err(Error::InvalidInput("--sessions must be positive".into()));
    }
    let chain: RelayChain = read_json(&a.scenario)?;
    chain.validate()?;
    let n = chain.hops.iter().map(|h| h.params.key_len()).max().unwrap_or(1).max(1);
    let mut store = PadStore::generate(n, n, rng::child_seed(ctx.seed, "cli/relay-store", 0))?;
    let ledger = SecurityLedger::new();
    let runs = relay::run_campaign(&chain, a.sessions, &mut store, &ledger, ctx.seed)?;
    let report = RelayRunReport {
        nodes: chain.nodes.clone(),
        sessions: runs.len(),
        telescoping: runs.iter().all(|(r, _)| r.telescopes()),
        endpoints_agree: runs.iter().all(|(_, k)| k.alice == k.bob),
        final_len: runs.last().map_or(0, |(_, k)| k.final_len),
        hops: runs.last().map_or(vec![], |(r, _)| r.hops.clone()),
        relays: relay::relay_adversary_report(&chain, &runs),
    };
    if let Some(out) = &a.out {
        write_json(out, &report)?;
    }
    let mut text = String::new();
    writeln!(text, "sessions completed   {} of {}", runs.len(), a.sessions).unwrap();
    writeln!(text, "telescoping          {}", report.telescoping).unwrap();
    writeln!(text, "endpoints agree      {}", report.endpoints_agree).unwrap();
    writeln!(text, "final length         {}", report.final_len).unwrap();
    writeln!(text, "{:<12} {:>8} {:>12} {:>10}", "relay", "honest", "match", "bits").unwrap();
    for r in &report.relays {
        writeln!(
            text,
            "{:<12} {:>8} {:>12.5} {:>10}",
            r.relay,
            r.honest,
            r.final_match.rate(),
            r.final_match.trials
        )
        .unwrap();
    }
    let ok = !runs.is_empty() && report.telescoping && report.endpoints_agree;
    let mut body = json!({ "command": "relay", "report": report });
    if !ok {
        body["aborted"] = json!("relay-failed");
    }
    Ok(Outcome {
        code: if ok { EXIT_OK } else { EXIT_ABORT },
        text,
        body,
    })
}

fn read_matrix(path: &Path) -> Result<ToeplitzMatrix> {
    ToeplitzMatrix::from_file_string(&read_text(path)?)
}

fn cmd_pad_gen(a: &PadGenArgs, ctx: &Context) -> Result<Outcome> {
    let m = match &a.matrix {
        Some(path) => read_matrix(path)?,
        None if a.seed_len == 0 => ToeplitzMatrix::empty(a.n),
        None => ToeplitzMatrix::generate(
            a.seed_len,
            a.n,
            &mut HashSeedSource::from_seed(ctx.seed, "cli/pad-matrix"),
        )?,
    };
    if m.rows() != a.seed_len || m.cols() != a.n {
        return Err(Error::Dimension(format!(
            "matrix is {} x {}, expected {} x {}",
            m.rows(),
            m.cols(),
            a.seed_len,
            a.n
        )));
    }
    let d = HashSeedSource::from_seed(ctx.seed, "cli/pad-seed").take(a.seed_len)?;
    let pad = privacy_amp::make_pad(&m, &d)?;
    pad.write(&a.out)?;
    let text = format!(
        "pad of {} bits from a {}-bit seed, matrix {}\nwritten to {}\n",
        pad.len(),
        pad.seed_len(),
        pad.matrix_id(),
        a.out.display()
    );
    Ok(Outcome::ok(
        text,
        json!({
            "command": "pad gen",
            "n": pad.len(),
            "seed_len": pad.seed_len(),
            "matrix_id": pad.matrix_id(),
            "out": a.out.display().to_string(),
        }),
    ))
}

fn cmd_matrix_gen(a: &MatrixGenArgs, ctx: &Context) -> Result<Outcome> {
    let mut src = HashSeedSource::from_seed(ctx.seed, "cli/matrix");
    let m = if a.full_rank {
        ToeplitzMatrix::generate_full_rank(a.rows, a.cols, &mut src)?
    } else {
        ToeplitzMatrix::generate(a.rows, a.cols, &mut src)?
    };
    std::fs::write(&a.out, m.to_file_string())?;
    let text = format!(
        "{} x {} Toeplitz matrix {}\nwritten to {}\n",
        m.rows(),
        m.cols(),
        m.id(),
        a.out.display()
    );
    Ok(Outcome::ok(
        text,
        json!({
            "command": "matrix gen",
            "rows": m.rows(),
            "cols": m.cols(),
            "full_rank": a.full_rank,
            "matrix_id": m.id(),
            "out": a.out.display().to_string(),
        }),
    ))
}

fn cmd_extract(a: &ExtractArgs, ctx: &Context) -> Result<Outcome> {
    let raw = BitString::from_hex(read_text(&a.raw)?.trim())?;
    let h = MinEntropyEstimate::new(raw.len(), a.h_min, "command line")?;
    let rows = h.seed_len();
    let m = match &a.matrix {
        Some(path) => read_matrix(path)?,
        None if rows == 0 => ToeplitzMatrix::empty(raw.len()),
        None => ToeplitzMatrix::generate(
            rows,
            raw.len(),
            &mut HashSeedSource::from_seed(ctx.seed, "cli/extract-matrix"),
        )?,
    };
    let d = HashSeedSource::from_seed(ctx.seed, "cli/extract-seed").take(rows)?;
    let out = privacy_amp::stream_extract(&raw, &h, &m, &d)?;
    std::fs::write(&a.out, format!("{}\n", out.to_hex()))?;
    let text = format!(
        "extracted {} bits with a {}-bit seed; certified min-entropy {} bits\nwritten to {}\n",
        out.len(),
        rows,
        a.h_min,
        a.out.display()
    );
    Ok(Outcome::ok(
        text,
        json!({
            "command": "extract",
            "n": out.len(),
            "h_min": a.h_min,
            "seed_len": rows,
            "matrix_id": m.id(),
            "out": a.out.display().to_string(),
        }),
    ))
}

fn cmd_verify_bounds(a: &VerifyArgs, ctx: &Context) -> Result<Outcome> {
    let mut cfg = SuiteConfig {
        reuse_patterns: a.sessions,
        forced_shortfall: a.forced_failure.then_some(2),
        ..SuiteConfig::default()
    }
    .scaled(a.scale)?;
    if cfg.reuse_patterns == 0 {
        cfg.reuse_patterns = 1;
    }
    let checks = suites::run_all(&cfg, ctx.seed)?;
    let mut text = format!(
        "{:<34} {:>11} {:>11} {:>9} {:>10}  {}\n",
        "check", "bound", "observed", "trials", "margin(sd)", "status"
    );
    for c in &checks {
        let status = match (c.holds, c.forced) {
            (true, _) => "pass",
            (false, false) => "FAIL",
            (false, true) => "FAIL (forced)",
        };
        writeln!(
            text,
            "{:<34} {:>11.3e} {:>11.3e} {:>9} {:>10.2}  {}",
            c.name, c.bound, c.observed, c.trials, c.margin_sigmas, status
        )
        .unwrap();
    }
    let violated = checks.iter().any(|c| !c.holds);
    let mut body = json!({ "command": "verify-bounds", "config": cfg, "checks": checks });
    if violated {
        body["aborted"] = json!("bound-violated");
    }
    Ok(Outcome {
        code: if violated { EXIT_ABORT } else { EXIT_OK },
        text,
        body,
    })
}

fn cmd_bench(a: &BenchArgs, ctx: &Context) -> Result<Outcome> {
    if a.min_log2 >= a.max_log2 || a.max_log2 > 28 {
        return Err(Error::InvalidInput("need min-log2 < max-log2 <= 28".into()));
    }
    let report = bench::run_bench(&bench::pow2_sizes(a.min_log2, a.max_log2), a.repeats, a.naive_max, ctx.seed)?;
    let text = bench::format_table(&report);
    let ok = report.stream_wins_at_largest;
    let mut body = json!({ "command": "bench", "report": report });
    if !ok {
        body["aborted"] = json!("stream-slower-than-block");
    }
    Ok(Outcome {
        code: if ok { EXIT_OK } else { EXIT_ABORT },
        text,
        body,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn env_seed_wins() {
        assert_eq!(resolve_seed(Some(5), Some("9")).unwrap(), (9, true));
        assert_eq!(resolve_seed(Some(5), None).unwrap(), (5, true));
        assert_eq!(resolve_seed(None, None).unwrap(), (0, false));
        assert!(resolve_seed(None, Some("x")).is_err());
    }

    #[test]
    fn config_merges_defaults() {
        let (p, c) = session_config(r#"{"n_target": 512, "channel": {"flip_prob_z": 0.01}}"#).unwrap();
        assert_eq!(p.n_target, 512);
        assert_eq!(p.tag_bits, 32);
        assert_eq!(c.unwrap().flip_prob_z, 0.01);
        assert!(session_config(r#"{"n_targt": 512}"#).is_err());
        assert!(session_config("[1]").is_err());
    }

    #[test]
    fn rates_noiseless_is_one() {
        let a = RatesArgs {
            eb: 0.0,
            ep: Some(0.0),
            n: 100,
            gllp: None,
            ir_encrypted: false,
        };
        let o = cmd_rates(&a).unwrap();
        assert_eq!(o.body["shor_preskill_rate"], json!(1.0));
        assert_eq!(o.body["seed_bits"], json!(0));
    }

    #[test]
    fn parse_errors_are_invalid_input() {
        assert_eq!(main_with_args(["streamkey", "rates", "--eb"]), EXIT_INVALID);
        assert_eq!(main_with_args(["streamkey", "no-such-command"]), EXIT_INVALID);
    }

    #[test]
    fn orderings_parse() {
        assert_eq!(parse_ordering("pa-first").unwrap(), Ordering::PaFirst);
        assert!(parse_pa_mode("tree").is_err());
    }
}
