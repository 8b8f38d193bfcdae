//! BB84 session simulation and the post-processing pipeline around it:
//! sifting, sampling-based estimation, segmented reconciliation, verification,
//! and stream or block privacy amplification in either order.
//!
//! Accounting: of the `n` sifted bits, `sampled_bits` are disclosed for
//! estimation, and the remaining `n_key` bits are hashed. The final key is
//! `n_key - seed_bits - disclosed_bits` long (disclosure is not charged when
//! reconciliation traffic is one-time padded). In stream mode the pad is drawn
//! with `seed_bits + disclosed_bits` seed bits and the stream output beyond the
//! final key replenishes the seed pool.

use std::time::Instant;

use rand::seq::index::sample;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::bits::BitString;
use crate::error::{Error, Result};
use crate::hashing::{HashSeedSource, ToeplitzMatrix};
use crate::privacy_amp::{self, LedgerEntry, PadStore, SecurityLedger, StreamEvent};
use crate::rates::{self, ErrorRates};
use crate::reconciliation::{self, DecodeOutcome, Transcript, TypicalErrorSet};
use crate::rng;
use crate::stats;

fn check_probability(name: &'static str, p: f64) -> Result<()> {
    if (0.0..=1.0).contains(&p) {
        Ok(())
    } else {
        Err(Error::Domain {
            name,
            value: p,
            reason: "must lie in [0, 1]",
        })
    }
}

fn check_open_unit(name: &'static str, p: f64) -> Result<()> {
    if p > 0.0 && p < 1.0 {
        Ok(())
    } else {
        Err(Error::Domain {
            name,
            value: p,
            reason: "must lie in (0, 1)",
        })
    }
}

/// Noisy, lossy channel for prepare-and-measure BB84.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChannelModel {
    pub flip_prob_z: f64,
    /// Bit-flip probability on X-basis rounds; defaults to `flip_prob_z`.
    #[serde(default)]
    pub flip_prob_x: Option<f64>,
    #[serde(default)]
    pub loss_prob: f64,
    #[serde(default)]
    pub seed: u64,
}

impl ChannelModel {
    pub fn new(flip_prob: f64, seed: u64) -> Self {
        ChannelModel {
            flip_prob_z: flip_prob,
            flip_prob_x: None,
            loss_prob: 0.0,
            seed,
        }
    }

    pub fn flip_x(&self) -> f64 {
        self.flip_prob_x.unwrap_or(self.flip_prob_z)
    }

    pub fn validate(&self) -> Result<()> {
        check_probability("flip_prob_z", self.flip_prob_z)?;
        check_probability("flip_prob_x", self.flip_x())?;
        check_probability("loss_prob", self.loss_prob)?;
        if self.loss_prob >= 1.0 {
            return Err(Error::InvalidInput("a channel that loses every round yields no key".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PaMode {
    Stream,
    Block,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Ordering {
    IrFirst,
    PaFirst,
}

fn default_segment_max() -> usize {
    128
}
fn default_work_log2() -> u32 {
    16
}
fn default_tag_bits() -> usize {
    32
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SessionParams {
    /// Sifted block size.
    pub n_target: usize,
    pub sample_fraction: f64,
    pub eps_pe: f64,
    /// Reconciliation robustness budget, split over segments.
    pub eps_ec: f64,
    /// Privacy amplification failure per use of the hashing matrix.
    pub eps_pa: f64,
    /// Total failure budget the reused matrix may accumulate.
    pub eps_total: f64,
    pub pa_mode: PaMode,
    pub ordering: Ordering,
    #[serde(default)]
    pub ir_encrypted: bool,
    pub predicted_e_b: f64,
    pub predicted_e_p: f64,
    #[serde(default = "default_segment_max")]
    pub ir_segment_max: usize,
    /// Per-segment decoder search budget, as a power of two.
    #[serde(default = "default_work_log2")]
    pub ir_work_log2: u32,
    #[serde(default = "default_tag_bits")]
    pub tag_bits: usize,
    /// Master seed for sampling, reconciliation and verification tapes.
    #[serde(default)]
    pub rng_seed: u64,
    /// Record stream consume/emit events.
    #[serde(default)]
    pub instrument: bool,
}

impl Default for SessionParams {
    fn default() -> Self {
        SessionParams {
            n_target: 4096,
            sample_fraction: 0.1,
            eps_pe: 1e-10,
            eps_ec: 1e-2,
            eps_pa: 1e-10,
            eps_total: 1e-6,
            pa_mode: PaMode::Stream,
            ordering: Ordering::IrFirst,
            ir_encrypted: false,
            predicted_e_b: 0.02,
            predicted_e_p: 0.02,
            ir_segment_max: default_segment_max(),
            ir_work_log2: default_work_log2(),
            tag_bits: default_tag_bits(),
            rng_seed: 0,
            instrument: false,
        }
    }
}

impl SessionParams {
    pub fn validate(&self) -> Result<()> {
        if self.n_target == 0 {
            return Err(Error::InvalidInput("n_target must be positive".into()));
        }
        check_open_unit("sample_fraction", self.sample_fraction)?;
        check_open_unit("eps_pe", self.eps_pe)?;
        check_open_unit("eps_ec", self.eps_ec)?;
        check_open_unit("eps_pa", self.eps_pa)?;
        check_open_unit("eps_total", self.eps_total)?;
        check_probability("predicted_e_b", self.predicted_e_b)?;
        check_probability("predicted_e_p", self.predicted_e_p)?;
        if self.ir_segment_max == 0 || self.ir_segment_max > 128 {
            return Err(Error::InvalidInput("ir_segment_max must lie in 1..=128".into()));
        }
        if self.ir_work_log2 > 24 {
            return Err(Error::InvalidInput("ir_work_log2 may not exceed 24".into()));
        }
        if self.tag_bits == 0 {
            return Err(Error::InvalidInput("tag_bits must be positive".into()));
        }
        if self.pa_mode == PaMode::Block && self.ordering == Ordering::PaFirst {
            return Err(Error::InvalidInput(
                "block privacy amplification compresses the key and cannot precede reconciliation".into(),
            ));
        }
        Ok(())
    }

    pub fn sample_size(&self) -> usize {
        (self.sample_fraction * self.n_target as f64).round() as usize
    }

    pub fn key_len(&self) -> usize {
        self.n_target - self.sample_size().min(self.n_target)
    }

    /// Phase-error seed length `ceil(n_key h(e_p))` for the predicted rate.
    pub fn seed_bits(&self) -> Result<usize> {
        rates::seed_length(self.key_len(), self.predicted_e_p)
    }
}

/// Sifted strings with the basis of every kept round.
#[derive(Clone, Debug)]
pub struct RawKeys {
    pub alice: BitString,
    pub bob: BitString,
    /// `true` where both parties used the X basis.
    pub x_basis: Vec<bool>,
    pub rounds_sent: u64,
}

/// Prepare-and-measure rounds until `n_target` rounds survive sifting.
pub fn simulate_raw(params: &SessionParams, channel: &ChannelModel) -> Result<RawKeys> {
    channel.validate()?;
    let mut rng = rng::tape(channel.seed, "channel");
    let n = params.n_target;
    let mut alice = BitString::zeros(n);
    let mut bob = BitString::zeros(n);
    let mut x_basis = Vec::with_capacity(n);
    let mut rounds = 0u64;
    let fx = channel.flip_x();
    while x_basis.len() < n {
        rounds += 1;
        let bit: bool = rng.gen();
        let basis_a: bool = rng.gen();
        let basis_b: bool = rng.gen();
        let lost = rng.gen::<f64>() < channel.loss_prob;
        let flip_u: f64 = rng.gen();
        if lost || basis_a != basis_b {
            continue;
        }
        let i = x_basis.len();
        let flip = flip_u < if basis_a { fx } else { channel.flip_prob_z };
        alice.set(i, bit);
        bob.set(i, bit ^ flip);
        x_basis.push(basis_a);
    }
    Ok(RawKeys {
        alice,
        bob,
        x_basis,
        rounds_sent: rounds,
    })
}

#[derive(Clone, Debug)]
pub struct ParamEstimate {
    /// Disclosed positions, ascending.
    pub sampled: Vec<usize>,
    /// Error frequency on the sample.
    pub e_b: f64,
    /// Error frequency on sampled X-basis rounds, when any were sampled.
    pub e_p: Option<f64>,
    /// Count deviation for the unsampled block.
    pub deviation: f64,
    /// Weight window for the unsampled block's error string.
    pub window: TypicalErrorSet,
    pub e_b_bound: f64,
    pub e_p_bound: Option<f64>,
}

impl ParamEstimate {
    pub fn key_len(&self) -> usize {
        self.window.n
    }

    pub fn rates(&self) -> Result<ErrorRates> {
        ErrorRates::new(self.e_b, self.e_p.unwrap_or(self.e_b))
    }
}

/// Sample `round(f n)` positions, disclose them and estimate error rates.
pub fn estimate_params<R: Rng + ?Sized>(
    alice: &BitString,
    bob: &BitString,
    x_basis: Option<&[bool]>,
    sample_fraction: f64,
    eps_pe: f64,
    rng: &mut R,
) -> Result<ParamEstimate> {
    if alice.len() != bob.len() {
        return Err(Error::LengthMismatch {
            expected: alice.len(),
            actual: bob.len(),
        });
    }
    let n = alice.len();
    let k = (sample_fraction * n as f64).round() as usize;
    if k == 0 || k > n {
        return Err(Error::InvalidInput(format!(
            "sample fraction {sample_fraction} of {n} bits gives an empty sample"
        )));
    }
    let mut sampled = sample(rng, n, k).into_vec();
    sampled.sort_unstable();
    let errors = sampled.iter().filter(|&&i| alice.get(i) != bob.get(i)).count();
    let e_b = errors as f64 / k as f64;
    let e_p = x_basis.and_then(|basis| {
        let xs: Vec<usize> = sampled.iter().copied().filter(|&i| basis[i]).collect();
        (!xs.is_empty()).then(|| {
            xs.iter().filter(|&&i| alice.get(i) != bob.get(i)).count() as f64 / xs.len() as f64
        })
    });
    let n_key = n - k;
    let deviation = rates::deviation(n_key, eps_pe)?;
    let window = TypicalErrorSet::from_estimate(n_key, e_b, deviation)?;
    let bound = |r: f64| {
        if n_key == 0 {
            r
        } else {
            (r + deviation / n_key as f64).min(0.5)
        }
    };
    Ok(ParamEstimate {
        sampled,
        e_b,
        e_p,
        deviation,
        window,
        e_b_bound: bound(e_b),
        e_p_bound: e_p.map(bound),
    })
}

/// The bits at positions not in `sampled` (ascending), in order.
pub fn remove_sampled(bits: &BitString, sampled: &[usize]) -> BitString {
    let mut keep = vec![true; bits.len()];
    for &i in sampled {
        keep[i] = false;
    }
    let positions: Vec<usize> = (0..bits.len()).filter(|&i| keep[i]).collect();
    bits.select(&positions)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IrSegment {
    pub start: usize,
    pub window: TypicalErrorSet,
    pub rows: usize,
}

/// How a key is cut into reconciliation segments.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IrPlan {
    pub n_key: usize,
    pub error_rate: f64,
    pub segments: Vec<IrSegment>,
}

impl IrPlan {
    pub fn syndrome_bits(&self) -> usize {
        self.segments.iter().map(|s| s.rows).sum()
    }
}

struct SegmentShape {
    window: TypicalErrorSet,
    rows: usize,
    work_log2: f64,
}

fn segment_shape(len: usize, r: f64, budget: f64) -> Result<SegmentShape> {
    let mut t = 0;
    while t < len && stats::binomial_upper_tail(len as u64, r, t as u64) > budget {
        t += 1;
    }
    let window = TypicalErrorSet::up_to(len, t)?;
    let log_card = window.log2_cardinality();
    let rows = if window.cardinality() == Some(1) {
        0
    } else {
        rates::ec_cost(log_card, budget)? as usize
    };
    let nullity = len.saturating_sub(rows) as f64;
    Ok(SegmentShape {
        window,
        rows,
        work_log2: log_card.min(nullity),
    })
}

/// Choose the segment length up to `max_len` that discloses the fewest
/// syndrome bits while each segment's decoder search stays within
/// `2^work_log2` candidates. Half of `eps_ec` bounds the window tails and half
/// the wrong-decode probability, both split evenly over segments.
pub fn plan_reconciliation(
    n_key: usize,
    error_rate: f64,
    eps_ec: f64,
    max_len: usize,
    work_log2: u32,
) -> Result<IrPlan> {
    check_probability("error_rate", error_rate)?;
    check_open_unit("eps_ec", eps_ec)?;
    if n_key == 0 {
        return Ok(IrPlan {
            n_key,
            error_rate,
            segments: vec![],
        });
    }
    let mut best: Option<(usize, usize, Vec<IrSegment>)> = None;
    for s in 1..=max_len.min(n_key).min(128) {
        let count = n_key.div_ceil(s);
        let budget = eps_ec / (2 * count) as f64;
        let short = n_key / count;
        let long_segments = n_key % count;
        let mut shapes = vec![segment_shape(short, error_rate, budget)?];
        if long_segments > 0 {
            shapes.push(segment_shape(short + 1, error_rate, budget)?);
        }
        if shapes.iter().any(|sh| sh.work_log2 > work_log2 as f64) {
            continue;
        }
        let total = (count - long_segments) * shapes[0].rows
            + long_segments * shapes.get(1).map_or(0, |sh| sh.rows);
        if best.as_ref().is_some_and(|(b, c, _)| (total, count) >= (*b, *c)) {
            continue;
        }
        let mut segments = Vec::with_capacity(count);
        let mut start = 0;
        for i in 0..count {
            let sh = if i < long_segments { &shapes[1] } else { &shapes[0] };
            segments.push(IrSegment {
                start,
                window: sh.window,
                rows: sh.rows,
            });
            start += sh.window.n;
        }
        best = Some((total, count, segments));
    }
    let (_, _, segments) = best.ok_or_else(|| Error::SearchCapExceeded {
        candidates: u128::MAX,
        cap: 1u128 << work_log2,
    })?;
    Ok(IrPlan {
        n_key,
        error_rate,
        segments,
    })
}

/// Result of reconciling every segment.
#[derive(Clone, Debug)]
pub struct IrRun {
    pub corrected: BitString,
    pub transcripts: Vec<Transcript>,
    /// Label of the first segment that did not decode uniquely.
    pub failure: Option<String>,
    pub syndrome_bits: usize,
    pub encryption_bits: usize,
}

/// Reconcile `bob` towards `alice` segment by segment, each with a fresh
/// Toeplitz matrix from `matrices`. With `otp`, syndromes travel one-time padded.
pub fn reconcile_segments(
    alice: &BitString,
    bob: &BitString,
    plan: &IrPlan,
    matrices: &mut HashSeedSource,
    mut otp: Option<&mut HashSeedSource>,
) -> Result<IrRun> {
    if alice.len() != plan.n_key || bob.len() != plan.n_key {
        return Err(Error::LengthMismatch {
            expected: plan.n_key,
            actual: alice.len().max(bob.len()),
        });
    }
    let mut corrected = BitString::zeros(0);
    let mut transcripts = Vec::with_capacity(plan.segments.len());
    let mut failure = None;
    let mut encryption_bits = 0;
    for seg in &plan.segments {
        let len = seg.window.n;
        let a = alice.slice(seg.start, len);
        let b = bob.slice(seg.start, len);
        let t = if seg.rows == 0 {
            ToeplitzMatrix::empty(len)
        } else {
            ToeplitzMatrix::generate(seg.rows, len, matrices)?
        };
        let mut sent = t.apply(&a)?;
        if let Some(pool) = otp.as_deref_mut() {
            let key = pool.take(seg.rows)?;
            sent.xor_assign(&key)?;
            // Bob removes the same pad bits on receipt
            sent.xor_assign(&key)?;
            encryption_bits += seg.rows;
        }
        let s = sent.xor(&t.apply(&b)?)?;
        let outcome = reconciliation::decode(&t, &s, &seg.window)?;
        let fixed = match &outcome {
            DecodeOutcome::Unique(e) => b.xor(e)?,
            _ => {
                failure.get_or_insert_with(|| outcome.label().to_string());
                b
            }
        };
        corrected.extend_from(&fixed);
        transcripts.push(Transcript {
            n: len,
            i_ec: seg.rows,
            set_lo: seg.window.lo,
            set_hi: seg.window.hi,
            outcome: outcome.label().to_string(),
            disclosed_bits: seg.rows,
        });
    }
    Ok(IrRun {
        corrected,
        transcripts,
        failure,
        syndrome_bits: plan.syndrome_bits(),
        encryption_bits,
    })
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct StageTimings {
    pub simulate_ms: f64,
    pub estimate_ms: f64,
    pub reconcile_ms: f64,
    pub verify_ms: f64,
    pub privacy_ms: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SessionReport {
    pub n: usize,
    pub rounds_sent: u64,
    pub sampled_bits: usize,
    pub n_key: usize,
    pub e_b_observed: f64,
    pub e_p_observed: Option<f64>,
    pub e_b_bound: f64,
    pub e_p_bound: Option<f64>,
    pub deviation: f64,
    pub predicted_e_b: f64,
    pub predicted_e_p: f64,
    pub ir_segments: usize,
    pub syndrome_bits: usize,
    pub tag_bits: usize,
    /// Syndrome plus verification-tag bits.
    pub disclosed_bits: usize,
    pub ir_encrypted: bool,
    /// Pool bits spent one-time padding reconciliation traffic.
    pub ir_encryption_bits: usize,
    /// Phase-error seed bits, `ceil(n_key h(e_p))` for the predicted rate
    /// plus any post-hoc top-up.
    pub seed_bits: usize,
    /// Seed bits actually drawn for the pad.
    pub pad_seed_bits: usize,
    pub post_hoc_seed_bits: usize,
    pub final_len: usize,
    pub net_rate: f64,
    pub eps_pe: f64,
    pub eps_cor: f64,
    pub eps_pa_total: f64,
    pub eps_claimed: f64,
    /// Trace-distance form `sqrt(eps (2 - eps))`.
    pub eps_trace: f64,
    pub verified: Option<bool>,
    pub aborted: Option<String>,
    pub matrix_id: String,
    pub ledger: Option<LedgerEntry>,
    pub pa_mode: PaMode,
    pub ordering: Ordering,
    pub transcript: Transcript,
    pub timings: StageTimings,
}

impl SessionReport {
    /// `final + seed + disclosed (unless encrypted) + sampled == n`.
    pub fn accounting_holds(&self) -> bool {
        let charged = if self.ir_encrypted { 0 } else { self.disclosed_bits };
        self.final_len + self.seed_bits + charged + self.sampled_bits == self.n
    }
}

/// Report plus key material of one session.
#[derive(Clone, Debug)]
pub struct SessionOutput {
    pub report: SessionReport,
    /// Full privacy-amplified strings (final key followed by pool refill in
    /// stream mode); `None` when aborted.
    pub alice_stream: Option<BitString>,
    pub bob_stream: Option<BitString>,
    pub events: Vec<StreamEvent>,
}

impl SessionOutput {
    pub fn alice_key(&self) -> Option<BitString> {
        self.alice_stream.as_ref().map(|s| s.slice(0, self.report.final_len))
    }

    pub fn bob_key(&self) -> Option<BitString> {
        self.bob_stream.as_ref().map(|s| s.slice(0, self.report.final_len))
    }

    pub fn succeeded(&self) -> bool {
        self.report.aborted.is_none()
    }
}

fn millis(start: Instant) -> f64 {
    start.elapsed().as_secs_f64() * 1e3
}

/// Machine-readable abort reason for an error raised inside the pipeline.
pub fn abort_reason(err: &Error) -> &'static str {
    match err {
        Error::BudgetExhausted { .. } => "budget-exhausted",
        Error::PadShortfall(_) | Error::SeedExhausted { .. } => "pad-shortfall",
        Error::RankDeficient { .. } => "rank-deficient",
        Error::SearchCapExceeded { .. } => "search-cap-exceeded",
        _ => "error",
    }
}

/// Run one session end to end. Pipeline refusals (negative rate, ledger,
/// pad shortfall, reconciliation or verification failure) yield an aborted
/// report rather than an error.
pub fn run_session(
    params: &SessionParams,
    channel: &ChannelModel,
    ledger: &SecurityLedger,
    store: &mut PadStore,
) -> Result<SessionOutput> {
    params.validate()?;
    let mut timings = StageTimings::default();

    let t0 = Instant::now();
    let raw = simulate_raw(params, channel)?;
    timings.simulate_ms = millis(t0);

    let t0 = Instant::now();
    let mut sampler = rng::tape(params.rng_seed, "session/sample");
    let est = estimate_params(
        &raw.alice,
        &raw.bob,
        Some(&raw.x_basis),
        params.sample_fraction,
        params.eps_pe,
        &mut sampler,
    )?;
    let a = remove_sampled(&raw.alice, &est.sampled);
    let b = remove_sampled(&raw.bob, &est.sampled);
    let n_key = a.len();
    timings.estimate_ms = millis(t0);

    let seed_bits = params.seed_bits()?;
    let eps_cor = 2f64.powi(-(params.tag_bits.min(1000) as i32));
    let mut report = SessionReport {
        n: params.n_target,
        rounds_sent: raw.rounds_sent,
        sampled_bits: est.sampled.len(),
        n_key,
        e_b_observed: est.e_b,
        e_p_observed: est.e_p,
        e_b_bound: est.e_b_bound,
        e_p_bound: est.e_p_bound,
        deviation: est.deviation,
        predicted_e_b: params.predicted_e_b,
        predicted_e_p: params.predicted_e_p,
        ir_segments: 0,
        syndrome_bits: 0,
        tag_bits: params.tag_bits,
        disclosed_bits: 0,
        ir_encrypted: params.ir_encrypted,
        ir_encryption_bits: 0,
        seed_bits,
        pad_seed_bits: 0,
        post_hoc_seed_bits: 0,
        final_len: 0,
        net_rate: 0.0,
        eps_pe: params.eps_pe,
        eps_cor,
        eps_pa_total: 0.0,
        eps_claimed: 0.0,
        eps_trace: 0.0,
        verified: None,
        aborted: None,
        matrix_id: store.matrix_id().to_string(),
        ledger: None,
        pa_mode: params.pa_mode,
        ordering: params.ordering,
        transcript: Transcript {
            n: n_key,
            i_ec: 0,
            set_lo: est.window.lo,
            set_hi: est.window.hi,
            outcome: "not-run".into(),
            disclosed_bits: 0,
        },
        timings: StageTimings::default(),
    };
    let aborted = |mut report: SessionReport, reason: &str, timings: StageTimings| {
        report.aborted = Some(reason.to_string());
        report.final_len = 0;
        report.net_rate = 0.0;
        report.timings = timings;
        Ok(SessionOutput {
            report,
            alice_stream: None,
            bob_stream: None,
            events: vec![],
        })
    };

    let plan = match plan_reconciliation(
        n_key,
        est.e_b.max(params.predicted_e_b),
        params.eps_ec,
        params.ir_segment_max,
        params.ir_work_log2,
    ) {
        Ok(p) => p,
        Err(e @ Error::SearchCapExceeded { .. }) => return aborted(report, abort_reason(&e), timings),
        Err(e) => return Err(e),
    };
    let disclosed = plan.syndrome_bits() + params.tag_bits;
    report.ir_segments = plan.segments.len();
    report.syndrome_bits = plan.syndrome_bits();
    report.disclosed_bits = disclosed;
    report.transcript.i_ec = plan.syndrome_bits();
    report.transcript.disclosed_bits = disclosed;
    let charged = if params.ir_encrypted { 0 } else { disclosed };
    let pad_rows = seed_bits + charged;
    if pad_rows >= n_key {
        return aborted(report, "negative-net-rate", timings);
    }
    let final_len = n_key - pad_rows;

    let grant = match ledger
        .register(store.matrix_id(), params.eps_pa, params.eps_total)
        .and_then(|_| ledger.draw(store.matrix_id()))
    {
        Ok(g) => g,
        Err(e) => return aborted(report, abort_reason(&e), timings),
    };
    report.eps_pa_total = grant.spent();
    report.ledger = Some(grant);
    report.eps_claimed = params.eps_pe + eps_cor + report.eps_pa_total;
    report.eps_trace = rates::compose_soundness(report.eps_claimed.min(1.0))?;

    let t0 = Instant::now();
    let (pad, block_matrix) = match params.pa_mode {
        PaMode::Stream => match store.provision(pad_rows, n_key) {
            Ok(p) => (Some(p), None),
            Err(e) => return aborted(report, abort_reason(&e), timings),
        },
        PaMode::Block => match store.session_matrix(pad_rows, n_key) {
            Ok(m) => (None, Some(m)),
            Err(e) => return aborted(report, abort_reason(&e), timings),
        },
    };
    report.pad_seed_bits = pad_rows;
    timings.privacy_ms += millis(t0);

    let mut ir_tape = HashSeedSource::from_seed(params.rng_seed, "session/ir-matrices");
    let mut otp_tape = HashSeedSource::from_seed(params.rng_seed, "session/ir-otp");
    let mut tag_tape = HashSeedSource::from_seed(params.rng_seed, "session/verify");
    let mut events = Vec::new();

    // In PA-first order both parties pad their strings before reconciling;
    // the error string, and so every decode, is unchanged.
    let (x, y, mut alice_pad_state) = match (params.ordering, pad) {
        (Ordering::PaFirst, Some(mut p)) => {
            let t0 = Instant::now();
            let mut bob_pad = p.clone();
            if params.instrument {
                p.instrument();
            }
            let x = privacy_amp::stream_finalize_chunked(&mut p, &a, 64)?;
            let y = privacy_amp::stream_finalize(&mut bob_pad, &b)?;
            events = p.events().to_vec();
            timings.privacy_ms += millis(t0);
            (x, y, None)
        }
        (_, p) => (a.clone(), b.clone(), p),
    };

    let t0 = Instant::now();
    let otp = params.ir_encrypted.then_some(&mut otp_tape);
    let ir = reconcile_segments(&x, &y, &plan, &mut ir_tape, otp)?;
    timings.reconcile_ms = millis(t0);
    report.transcript.outcome = ir
        .failure
        .clone()
        .unwrap_or_else(|| "unique".to_string());
    report.ir_encryption_bits = if params.ir_encrypted {
        ir.encryption_bits + params.tag_bits
    } else {
        0
    };
    if ir.failure.is_some() {
        return aborted(report, "reconciliation-failed", timings);
    }

    let t0 = Instant::now();
    let ok = reconciliation::verify(&x, &ir.corrected, params.tag_bits, &mut tag_tape)?;
    timings.verify_ms = millis(t0);
    report.verified = Some(ok);
    if !ok {
        return aborted(report, "verification-failed", timings);
    }

    let t0 = Instant::now();
    let (alice_stream, bob_stream) = match (params.ordering, params.pa_mode) {
        (Ordering::PaFirst, _) => (x, ir.corrected),
        (Ordering::IrFirst, PaMode::Stream) => {
            let mut p = alice_pad_state.take().expect("stream pad provisioned");
            let mut bob_pad = p.clone();
            if params.instrument {
                p.instrument();
            }
            // Alice's bits are released segment by segment as reconciliation
            // completes them.
            let mut k_a = BitString::zeros(0);
            for seg in &plan.segments {
                k_a.extend_from(&p.finalize_next(&x.slice(seg.start, seg.window.n))?);
            }
            let k_b = privacy_amp::stream_finalize(&mut bob_pad, &ir.corrected)?;
            events = p.events().to_vec();
            (k_a, k_b)
        }
        (Ordering::IrFirst, PaMode::Block) => {
            let m = block_matrix.expect("block matrix provisioned");
            let basis = match privacy_amp::kernel_for_block_pa(&m) {
                Ok(v) => v,
                Err(e) => return aborted(report, abort_reason(&e), timings),
            };
            let project = |s: &BitString| BitString::from_bits(basis.iter().map(|u| u.dot(s)));
            (project(&x), project(&ir.corrected))
        }
    };
    timings.privacy_ms += millis(t0);

    report.final_len = final_len;
    report.net_rate = final_len as f64 / params.n_target as f64;
    report.timings = timings;
    debug_assert!(report.accounting_holds());
    Ok(SessionOutput {
        report,
        alice_stream: Some(alice_stream),
        bob_stream: Some(bob_stream),
        events,
    })
}

/// Extra seed bits needed when the phase-error rate turns out higher than
/// predicted: `ceil(n h(actual)) - ceil(n h(predicted))`, or zero.
pub fn phase_deficit(n_key: usize, predicted_e_p: f64, actual_e_p: f64) -> Result<usize> {
    let predicted = rates::seed_length(n_key, predicted_e_p)?;
    let actual = rates::seed_length(n_key, actual_e_p)?;
    Ok(actual.saturating_sub(predicted))
}

/// Second stream-PA pass with a fresh single-use matrix sized to the phase
/// entropy deficit. Returns the amended output, or the input unchanged when
/// the prediction was adequate.
pub fn post_hoc_adjust(
    output: &SessionOutput,
    actual_e_p: f64,
    params: &SessionParams,
    store: &mut PadStore,
    ledger: &SecurityLedger,
) -> Result<SessionOutput> {
    if output.report.aborted.is_some() {
        return Err(Error::InvalidInput("cannot adjust an aborted session".into()));
    }
    if output.report.pa_mode != PaMode::Stream {
        return Err(Error::InvalidInput("post-hoc adjustment needs stream mode".into()));
    }
    let report = &output.report;
    let deficit = phase_deficit(report.n_key, report.predicted_e_p, actual_e_p)?;
    if deficit == 0 {
        return Ok(output.clone());
    }
    if deficit >= report.final_len {
        return Err(Error::PadShortfall(format!(
            "deficit of {deficit} seed bits exceeds the {}-bit final key",
            report.final_len
        )));
    }
    let (m, pad) = store.fresh_pad(deficit, report.n_key)?;
    ledger.register(&m.id(), params.eps_pa, params.eps_pa)?;
    ledger.draw(&m.id())?;
    let apply = |s: &Option<BitString>| -> Result<Option<BitString>> {
        s.as_ref().map(|s| s.xor(pad.pad())).transpose()
    };
    let mut amended = output.clone();
    amended.alice_stream = apply(&output.alice_stream)?;
    amended.bob_stream = apply(&output.bob_stream)?;
    let r = &mut amended.report;
    r.seed_bits += deficit;
    r.pad_seed_bits += deficit;
    r.post_hoc_seed_bits += deficit;
    r.final_len -= deficit;
    r.net_rate = r.final_len as f64 / r.n as f64;
    r.eps_pa_total += params.eps_pa;
    r.eps_claimed += params.eps_pa;
    r.eps_trace = rates::compose_soundness(r.eps_claimed.min(1.0))?;
    Ok(amended)
}

/// A pad store sized for sessions with these parameters: as many rows as the
/// key is long, so any feasible seed fits.
pub fn pad_store_for(params: &SessionParams, master_seed: u64) -> Result<PadStore> {
    let n_key = params.key_len().max(1);
    PadStore::generate(n_key, n_key, master_seed)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_params() -> SessionParams {
        SessionParams {
            n_target: 1024,
            predicted_e_b: 0.01,
            predicted_e_p: 0.01,
            ..SessionParams::default()
        }
    }

    #[test]
    fn noiseless_channel_gives_identical_strings() {
        let p = small_params();
        let raw = simulate_raw(&p, &ChannelModel::new(0.0, 1)).unwrap();
        assert_eq!(raw.alice, raw.bob);
        assert_eq!(raw.alice.len(), 1024);
    }

    #[test]
    fn coin_flip_channel() {
        let p = SessionParams {
            n_target: 20000,
            ..small_params()
        };
        let raw = simulate_raw(&p, &ChannelModel::new(0.5, 2)).unwrap();
        let freq = raw.alice.hamming_distance(&raw.bob).unwrap() as f64 / 20000.0;
        let sigma = (0.25f64 / 20000.0).sqrt();
        assert!((freq - 0.5).abs() <= 3.0 * sigma, "{freq}");
    }

    #[test]
    fn sifting_keep_rate() {
        let p = SessionParams {
            n_target: 20000,
            ..small_params()
        };
        let ch = ChannelModel {
            loss_prob: 0.3,
            ..ChannelModel::new(0.0, 3)
        };
        let raw = simulate_raw(&p, &ch).unwrap();
        let keep = 20000.0 / raw.rounds_sent as f64;
        let q = 0.35;
        let sigma = (q * (1.0 - q) / raw.rounds_sent as f64).sqrt();
        assert!((keep - q).abs() <= 3.0 * sigma, "{keep}");
    }

    #[test]
    fn estimate_on_identical_strings() {
        let x = BitString::random(1000, &mut rng::tape(4, "x"));
        let mut r = rng::tape(4, "s");
        let est = estimate_params(&x, &x, None, 0.1, 1e-3, &mut r).unwrap();
        assert_eq!(est.e_b, 0.0);
        assert_eq!(est.sampled.len(), 100);
        assert_eq!(est.window.lo, 0);
        assert_eq!(est.window.hi, est.deviation.floor() as usize);
        assert!(estimate_params(&x, &x, None, 0.0001, 1e-3, &mut r).is_err());
    }

    #[test]
    fn estimate_planted_ten_percent() {
        let mut r = rng::tape(5, "planted");
        let x = BitString::random(10_000, &mut r);
        let mut y = x.clone();
        for i in sample(&mut r, 10_000, 1000).iter() {
            y.flip(i);
        }
        let est = estimate_params(&x, &y, None, 0.1, 1e-3, &mut r).unwrap();
        let sigma = (0.1f64 * 0.9 / 1000.0).sqrt();
        assert!((est.e_b - 0.1).abs() <= 3.0 * sigma, "{}", est.e_b);
    }

    #[test]
    fn plan_covers_the_key() {
        for (n, r) in [(3686, 0.02), (1000, 0.0), (777, 0.05), (5, 0.1)] {
            let plan = plan_reconciliation(n, r, 1e-2, 128, 16).unwrap();
            let mut next = 0;
            for s in &plan.segments {
                assert_eq!(s.start, next);
                next += s.window.n;
            }
            assert_eq!(next, n);
        }
        let noiseless = plan_reconciliation(1000, 0.0, 1e-2, 128, 16).unwrap();
        assert_eq!(noiseless.syndrome_bits(), 0);
    }

    #[test]
    fn segmented_reconciliation_corrects_errors() {
        let p = SessionParams {
            n_target: 2048,
            ..small_params()
        };
        let raw = simulate_raw(&p, &ChannelModel::new(0.02, 6)).unwrap();
        let plan = plan_reconciliation(2048, 0.02, 1e-2, 128, 16).unwrap();
        let mut tape = HashSeedSource::from_seed(6, "ir");
        let run = reconcile_segments(&raw.alice, &raw.bob, &plan, &mut tape, None).unwrap();
        assert!(run.failure.is_none());
        assert_eq!(run.corrected, raw.alice);
    }

    #[test]
    fn noiseless_stream_session() {
        let p = SessionParams {
            predicted_e_b: 0.0,
            predicted_e_p: 0.0,
            ..small_params()
        };
        let ledger = SecurityLedger::new();
        let mut store = pad_store_for(&p, 7).unwrap();
        let out = run_session(&p, &ChannelModel::new(0.0, 7), &ledger, &mut store).unwrap();
        assert!(out.succeeded(), "{:?}", out.report.aborted);
        let r = &out.report;
        assert_eq!(r.syndrome_bits, 0);
        assert_eq!(r.seed_bits, 0);
        assert_eq!(r.final_len, r.n_key - r.tag_bits);
        assert!(r.accounting_holds());
        assert_eq!(out.alice_key(), out.bob_key());
    }

    #[test]
    fn orderings_agree() {
        let ledger = SecurityLedger::new();
        let mut keys = vec![];
        for ordering in [Ordering::IrFirst, Ordering::PaFirst] {
            let p = SessionParams {
                ordering,
                rng_seed: 8,
                ..small_params()
            };
            let mut store = pad_store_for(&p, 8).unwrap();
            let out = run_session(&p, &ChannelModel::new(0.01, 8), &ledger, &mut store).unwrap();
            assert!(out.succeeded(), "{:?}", out.report);
            assert_eq!(out.alice_key(), out.bob_key());
            keys.push(out.alice_stream.unwrap());
        }
        assert_eq!(keys[0], keys[1]);
    }

    #[test]
    fn block_mode_and_encrypted_accounting() {
        let ledger = SecurityLedger::new();
        for (mode, enc) in [(PaMode::Block, false), (PaMode::Stream, true), (PaMode::Block, true)] {
            let p = SessionParams {
                pa_mode: mode,
                ir_encrypted: enc,
                ..small_params()
            };
            let mut store = pad_store_for(&p, 9).unwrap();
            let out = run_session(&p, &ChannelModel::new(0.01, 9), &ledger, &mut store).unwrap();
            assert!(out.succeeded(), "{:?}", out.report.aborted);
            assert!(out.report.accounting_holds());
            assert_eq!(out.alice_key().unwrap().len(), out.report.final_len);
            assert_eq!(out.alice_key(), out.bob_key());
            assert_eq!(out.report.ir_encryption_bits > 0, enc);
        }
        let bad = SessionParams {
            pa_mode: PaMode::Block,
            ordering: Ordering::PaFirst,
            ..small_params()
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn ledger_refusal_aborts() {
        let ledger = SecurityLedger::new();
        let p = SessionParams {
            eps_pa: 1e-3,
            eps_total: 1.5e-3,
            ..small_params()
        };
        let mut store = pad_store_for(&p, 10).unwrap();
        let ch = ChannelModel::new(0.0, 10);
        assert!(run_session(&p, &ch, &ledger, &mut store).unwrap().succeeded());
        let second = run_session(&p, &ch, &ledger, &mut store).unwrap();
        assert_eq!(second.report.aborted.as_deref(), Some("budget-exhausted"));
    }

    #[test]
    fn hopeless_channel_aborts_on_rate() {
        let p = SessionParams {
            predicted_e_p: 0.3,
            ..small_params()
        };
        let ledger = SecurityLedger::new();
        let mut store = pad_store_for(&p, 11).unwrap();
        let out = run_session(&p, &ChannelModel::new(0.3, 11), &ledger, &mut store).unwrap();
        assert!(!out.succeeded());
        assert!(out.alice_key().is_none());
    }

    #[test]
    fn deficit_is_a_difference_of_ceilings() {
        assert_eq!(phase_deficit(1000, 0.02, 0.02).unwrap(), 0);
        assert_eq!(phase_deficit(1000, 0.05, 0.02).unwrap(), 0);
        let want = rates::seed_length(1000, 0.05).unwrap() - rates::seed_length(1000, 0.02).unwrap();
        assert_eq!(phase_deficit(1000, 0.02, 0.05).unwrap(), want);
    }

    #[test]
    fn params_round_trip_json() {
        let p = SessionParams::default();
        let text = serde_json::to_string(&p).unwrap();
        assert!(text.contains("\"ir-first\""));
        let back: SessionParams = serde_json::from_str(&text).unwrap();
        assert_eq!(back, p);
        let minimal: SessionParams = serde_json::from_str(
            r#"{"n_target":100,"sample_fraction":0.1,"eps_pe":1e-6,"eps_ec":0.01,"eps_pa":1e-9,
                "eps_total":1e-6,"pa_mode":"stream","ordering":"pa-first","predicted_e_b":0.0,
                "predicted_e_p":0.0}"#,
        )
        .unwrap();
        assert_eq!(minimal.tag_bits, 32);
    }
}
