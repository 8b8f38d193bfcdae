//! Hash-syndrome information reconciliation with typical-set decoding.
//!
//! Alice sends `T x`; Bob forms `s = T x ^ T y = T e` and searches the typical
//! set for error strings with that syndrome. The search is exhaustive: it walks
//! either the typical set or the solution coset of `T e = s`, whichever is
//! smaller, always to the end so ambiguity is detected. Matches are ordered by
//! weight and then lexicographically by their one positions.

use serde::{Deserialize, Serialize};

use crate::bits::{BitString, Gf2Matrix};
use crate::error::{Error, Result};
use crate::hashing::{HashSeedSource, ToeplitzMatrix};
use crate::rates;
use crate::stats::BinomialEstimate;

/// Largest typical set `decode` will enumerate.
pub const DECODE_CAP: u128 = 1 << 24;

/// Strings of length `n` whose weight lies in `[lo, hi]`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TypicalErrorSet {
    pub n: usize,
    pub lo: usize,
    pub hi: usize,
}

fn checked_binomial(n: u128, k: u128) -> Option<u128> {
    if k > n {
        return Some(0);
    }
    let k = k.min(n - k);
    let mut acc: u128 = 1;
    for i in 0..k {
        // acc * (n - i) is divisible by (i + 1)
        acc = acc.checked_mul(n - i)? / (i + 1);
    }
    Some(acc)
}

fn ln_binomial(n: usize, k: usize) -> f64 {
    let k = k.min(n - k);
    (0..k)
        .map(|i| ((n - i) as f64).ln() - ((i + 1) as f64).ln())
        .sum()
}

impl TypicalErrorSet {
    pub fn new(n: usize, lo: usize, hi: usize) -> Result<Self> {
        if lo > hi || hi > n {
            return Err(Error::InvalidInput(format!(
                "weight window [{lo}, {hi}] invalid for length {n}"
            )));
        }
        Ok(TypicalErrorSet { n, lo, hi })
    }

    /// Strings of weight at most `hi`.
    pub fn up_to(n: usize, hi: usize) -> Result<Self> {
        Self::new(n, 0, hi)
    }

    /// The window `[n r - c, n r + c]` clipped to `[0, n]`, rounded inward to integers.
    pub fn from_estimate(n: usize, r: f64, c: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&r) || c.is_nan() || c < 0.0 {
            return Err(Error::InvalidInput(format!(
                "cannot build a window from r = {r}, c = {c}"
            )));
        }
        let centre = n as f64 * r;
        let lo = (centre - c - 1e-9).ceil().max(0.0) as usize;
        let hi = ((centre + c + 1e-9).floor() as usize).min(n);
        Self::new(n, lo.min(hi), hi)
    }

    pub fn contains(&self, e: &BitString) -> bool {
        let w = e.weight();
        e.len() == self.n && (self.lo..=self.hi).contains(&w)
    }

    /// Exact size, or `None` when it overflows `u128`.
    pub fn cardinality(&self) -> Option<u128> {
        let mut total: u128 = 0;
        for k in self.lo..=self.hi {
            total = total.checked_add(checked_binomial(self.n as u128, k as u128)?)?;
        }
        Some(total)
    }

    pub fn log2_cardinality(&self) -> f64 {
        match self.cardinality() {
            Some(c) if c < (1u128 << 100) => (c as f64).log2(),
            _ => {
                let logs: Vec<f64> = (self.lo..=self.hi).map(|k| ln_binomial(self.n, k)).collect();
                let max = logs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                (max + logs.iter().map(|l| (l - max).exp()).sum::<f64>().ln())
                    / std::f64::consts::LN_2
            }
        }
    }

    /// Syndrome length for decode failure at most `eps_ec`.
    pub fn syndrome_bits(&self, eps_ec: f64) -> Result<usize> {
        Ok(rates::ec_cost(self.log2_cardinality(), eps_ec)? as usize)
    }
}

/// Hash of an error-bearing string, tagged with the producing matrix.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Syndrome {
    pub bits: BitString,
    pub matrix_id: String,
}

impl Syndrome {
    pub fn xor(&self, other: &Syndrome) -> Result<Syndrome> {
        if self.matrix_id != other.matrix_id {
            return Err(Error::InvalidInput(format!(
                "syndromes from different matrices `{}` and `{}`",
                self.matrix_id, other.matrix_id
            )));
        }
        Ok(Syndrome {
            bits: self.bits.xor(&other.bits)?,
            matrix_id: self.matrix_id.clone(),
        })
    }
}

pub fn encode_syndrome(t: &ToeplitzMatrix, x: &BitString) -> Result<Syndrome> {
    Ok(Syndrome {
        bits: t.apply(x)?,
        matrix_id: t.id(),
    })
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum DecodeOutcome {
    /// Exactly one string in the set has the syndrome.
    Unique(BitString),
    /// Two or more do; `first` is the earliest in enumeration order.
    Ambiguous { candidates: usize, first: BitString },
    NotFound,
}

impl DecodeOutcome {
    pub fn label(&self) -> &'static str {
        match self {
            DecodeOutcome::Unique(_) => "unique",
            DecodeOutcome::Ambiguous { .. } => "ambiguous",
            DecodeOutcome::NotFound => "not-found",
        }
    }

    pub fn unique(&self) -> Option<&BitString> {
        match self {
            DecodeOutcome::Unique(e) => Some(e),
            _ => None,
        }
    }
}

#[derive(Default)]
struct Hits {
    count: usize,
    first: Option<Vec<usize>>,
}

impl Hits {
    fn record(&mut self, idx: &[usize]) {
        self.count += 1;
        if self.first.is_none() {
            self.first = Some(idx.to_vec());
        }
    }
}

fn scan_narrow(cols: &[u128], start: usize, left: usize, acc: u128, target: u128, idx: &mut Vec<usize>, hits: &mut Hits) {
    if left == 0 {
        if acc == target {
            hits.record(idx);
        }
        return;
    }
    for j in start..=cols.len() - left {
        idx.push(j);
        scan_narrow(cols, j + 1, left - 1, acc ^ cols[j], target, idx, hits);
        idx.pop();
    }
}

fn scan_wide(
    cols: &[Vec<u64>],
    start: usize,
    left: usize,
    stack: &mut [Vec<u64>],
    target: &[u64],
    idx: &mut Vec<usize>,
    hits: &mut Hits,
) {
    let depth = idx.len();
    if left == 0 {
        if stack[depth] == target {
            hits.record(idx);
        }
        return;
    }
    for j in start..=cols.len() - left {
        let (lower, upper) = stack.split_at_mut(depth + 1);
        for ((dst, a), b) in upper[0].iter_mut().zip(&lower[depth]).zip(&cols[j]) {
            *dst = a ^ b;
        }
        idx.push(j);
        scan_wide(cols, j + 1, left - 1, stack, target, idx, hits);
        idx.pop();
    }
}

fn positions_to_string(n: usize, idx: &[usize]) -> BitString {
    let mut e = BitString::zeros(n);
    for &i in idx {
        e.set(i, true);
    }
    e
}

fn to_u128(b: &BitString) -> u128 {
    b.words()
        .iter()
        .enumerate()
        .fold(0u128, |acc, (k, &w)| acc | (w as u128) << (64 * k))
}

/// The solutions of `T e = s` over at most 128 unknowns: a particular
/// solution plus a kernel basis, or `None` when the system is inconsistent.
struct Coset {
    particular: u128,
    basis: Vec<u128>,
}

impl Coset {
    fn solve(t: &ToeplitzMatrix, s: &BitString) -> Option<Coset> {
        let n = t.cols();
        let dense = t.to_dense();
        let augmented = Gf2Matrix::from_rows(
            n + 1,
            (0..t.rows())
                .map(|i| {
                    let mut row = dense.row(i).clone();
                    row.extend_from(&BitString::from_bits([s.get(i)]));
                    row
                })
                .collect(),
        )
        .expect("rows have n + 1 bits");
        let (reduced, pivots) = augmented.rref();
        if pivots.contains(&n) {
            return None;
        }
        let mut particular = 0u128;
        for (i, &p) in pivots.iter().enumerate() {
            if reduced.get(i, n) {
                particular |= 1 << p;
            }
        }
        let basis = dense.kernel_basis().iter().map(to_u128).collect();
        Some(Coset { particular, basis })
    }

    fn nullity(&self) -> usize {
        self.basis.len()
    }

    /// Walk the coset in Gray-code order and resolve matches in typical-set order.
    fn search(&self, n: usize, set: &TypicalErrorSet) -> DecodeOutcome {
        let in_set = |v: u128| (set.lo..=set.hi).contains(&(v.count_ones() as usize));
        let mut x = self.particular;
        let mut matches = Vec::new();
        if in_set(x) {
            matches.push(x);
        }
        for i in 1u64..1 << self.nullity() {
            x ^= self.basis[i.trailing_zeros() as usize];
            if in_set(x) {
                matches.push(x);
            }
        }
        let order = |v: &u128| (v.count_ones(), (0..128).filter(|b| v >> b & 1 == 1).collect::<Vec<u32>>());
        let as_string = |v: u128| BitString::from_bits((0..n).map(|b| v >> b & 1 == 1));
        match matches.len() {
            0 => DecodeOutcome::NotFound,
            1 => DecodeOutcome::Unique(as_string(matches[0])),
            k => DecodeOutcome::Ambiguous {
                candidates: k,
                first: as_string(*matches.iter().min_by_key(|v| order(v)).unwrap()),
            },
        }
    }
}

/// Number of candidates `decode` would examine: the smaller of the typical
/// set and the solution coset (when the latter can be used).
pub fn search_size(t: &ToeplitzMatrix, set: &TypicalErrorSet) -> u128 {
    let card = set.cardinality().unwrap_or(u128::MAX);
    if set.n > 128 || t.rows() == 0 {
        return card;
    }
    let nullity = set.n - t.to_dense().rank();
    if nullity >= 127 {
        card
    } else {
        card.min(1u128 << nullity)
    }
}

/// Find the error strings in `set` whose hash under `t` equals `s`.
pub fn decode(t: &ToeplitzMatrix, s: &BitString, set: &TypicalErrorSet) -> Result<DecodeOutcome> {
    if s.len() != t.rows() {
        return Err(Error::Dimension(format!(
            "syndrome has {} bits, matrix has {} rows",
            s.len(),
            t.rows()
        )));
    }
    if set.n != t.cols() {
        return Err(Error::Dimension(format!(
            "typical set over {} bits, matrix has {} columns",
            set.n,
            t.cols()
        )));
    }
    let n = set.n;
    let card = set.cardinality();
    if n <= 128 && t.rows() > 0 {
        let coset = match Coset::solve(t, s) {
            Some(c) => c,
            None => return Ok(DecodeOutcome::NotFound),
        };
        let nullity = coset.nullity();
        if nullity < 64 && card.map_or(true, |c| 1u128 << nullity <= c) {
            if 1u128 << nullity > DECODE_CAP {
                return Err(Error::SearchCapExceeded {
                    candidates: 1u128 << nullity,
                    cap: DECODE_CAP,
                });
            }
            return Ok(coset.search(n, set));
        }
    }
    match card {
        Some(c) if c <= DECODE_CAP => {}
        c => {
            return Err(Error::SearchCapExceeded {
                candidates: c.unwrap_or(u128::MAX),
                cap: DECODE_CAP,
            })
        }
    }
    let mut hits = Hits::default();
    let mut idx = Vec::with_capacity(set.hi);
    if t.rows() <= 128 {
        let cols: Vec<u128> = (0..n).map(|j| to_u128(&t.column(j))).collect();
        let target = to_u128(s);
        for w in set.lo..=set.hi {
            scan_narrow(&cols, 0, w, 0, target, &mut idx, &mut hits);
        }
    } else {
        let cols: Vec<Vec<u64>> = (0..n).map(|j| t.column(j).words().to_vec()).collect();
        let width = s.words().len();
        let mut stack = vec![vec![0u64; width]; set.hi + 1];
        for w in set.lo..=set.hi {
            scan_wide(&cols, 0, w, &mut stack, s.words(), &mut idx, &mut hits);
        }
    }
    Ok(match (hits.count, hits.first) {
        (0, _) => DecodeOutcome::NotFound,
        (1, Some(first)) => DecodeOutcome::Unique(positions_to_string(n, &first)),
        (k, Some(first)) => DecodeOutcome::Ambiguous {
            candidates: k,
            first: positions_to_string(n, &first),
        },
        _ => unreachable!(),
    })
}

/// Per-session reconciliation record.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Transcript {
    pub n: usize,
    #[serde(rename = "I_ec")]
    pub i_ec: usize,
    pub set_lo: usize,
    pub set_hi: usize,
    pub outcome: String,
    pub disclosed_bits: usize,
}

#[derive(Clone, Debug)]
pub struct Reconciled {
    /// Bob's string after applying the decoded error (unchanged on failure).
    pub corrected: BitString,
    pub outcome: DecodeOutcome,
    pub transcript: Transcript,
}

impl Reconciled {
    pub fn succeeded(&self) -> bool {
        matches!(self.outcome, DecodeOutcome::Unique(_))
    }
}

/// One-way reconciliation of Bob's string towards Alice's.
pub fn reconcile(
    alice: &BitString,
    bob: &BitString,
    t: &ToeplitzMatrix,
    set: &TypicalErrorSet,
) -> Result<Reconciled> {
    if alice.len() != bob.len() {
        return Err(Error::LengthMismatch {
            expected: alice.len(),
            actual: bob.len(),
        });
    }
    let s_a = encode_syndrome(t, alice)?;
    let s_b = encode_syndrome(t, bob)?;
    let s = s_a.xor(&s_b)?;
    let outcome = decode(t, &s.bits, set)?;
    let corrected = match &outcome {
        DecodeOutcome::Unique(e) => bob.xor(e)?,
        _ => bob.clone(),
    };
    let transcript = Transcript {
        n: alice.len(),
        i_ec: t.rows(),
        set_lo: set.lo,
        set_hi: set.hi,
        outcome: outcome.label().to_string(),
        disclosed_bits: t.rows(),
    };
    Ok(Reconciled {
        corrected,
        outcome,
        transcript,
    })
}

/// Compare authentication tags under a freshly drawn `tag_bits x n` Toeplitz hash.
pub fn verify(alice: &BitString, bob: &BitString, tag_bits: usize, src: &mut HashSeedSource) -> Result<bool> {
    if tag_bits == 0 {
        return Err(Error::InvalidInput("verification needs at least one tag bit".into()));
    }
    if alice.len() != bob.len() {
        return Err(Error::LengthMismatch {
            expected: alice.len(),
            actual: bob.len(),
        });
    }
    if alice.is_empty() {
        return Ok(true);
    }
    let t = ToeplitzMatrix::generate(tag_bits, alice.len(), src)?;
    Ok(t.apply(alice)? == t.apply(bob)?)
}

/// Error patterns fixed before any reconciliation matrix is drawn.
#[derive(Clone, Debug)]
pub struct CommittedPatterns {
    patterns: Vec<BitString>,
    set: TypicalErrorSet,
}

impl CommittedPatterns {
    pub fn commit(patterns: Vec<BitString>, set: TypicalErrorSet) -> Result<Self> {
        if patterns.is_empty() {
            return Err(Error::InvalidInput("no patterns to commit".into()));
        }
        if let Some(p) = patterns.iter().find(|p| p.len() != set.n) {
            return Err(Error::LengthMismatch {
                expected: set.n,
                actual: p.len(),
            });
        }
        Ok(CommittedPatterns { patterns, set })
    }

    pub fn patterns(&self) -> &[BitString] {
        &self.patterns
    }

    /// Draw a `rows x n` matrix and try to identify every committed pattern with it.
    pub fn trial(&self, rows: usize, src: &mut HashSeedSource) -> Result<Vec<bool>> {
        let t = ToeplitzMatrix::generate(rows, self.set.n, src)?;
        reuse_trial(&t, &self.patterns, &self.set)
    }
}

/// Decode each pattern's syndrome with the same matrix; `true` marks a failure.
pub fn reuse_trial(t: &ToeplitzMatrix, patterns: &[BitString], set: &TypicalErrorSet) -> Result<Vec<bool>> {
    patterns
        .iter()
        .map(|e| {
            let s = t.apply(e)?;
            Ok(decode(t, &s, set)?.unique() != Some(e))
        })
        .collect()
}

/// Draw a uniformly random member of the set: a weight with probability
/// proportional to its count, then uniformly random positions.
pub fn sample_from_set<R: rand::Rng + ?Sized>(set: &TypicalErrorSet, rng: &mut R) -> BitString {
    use rand::seq::index::sample;
    let weights: Vec<f64> = (set.lo..=set.hi).map(|k| ln_binomial(set.n, k)).collect();
    let max = weights.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let probs: Vec<f64> = weights.iter().map(|l| (l - max).exp()).collect();
    let total: f64 = probs.iter().sum();
    let mut u = rng.gen::<f64>() * total;
    let mut w = set.hi;
    for (k, p) in (set.lo..=set.hi).zip(&probs) {
        if u < *p {
            w = k;
            break;
        }
        u -= p;
    }
    let mut e = BitString::zeros(set.n);
    for i in sample(rng, set.n, w).iter() {
        e.set(i, true);
    }
    e
}

/// Planted-error experiment: each trial draws an error from the set and a fresh
/// `i_ec x n` matrix independently, and counts decodes that do not return the
/// planted error.
pub fn decode_failure_experiment(
    set: &TypicalErrorSet,
    i_ec: usize,
    trials: usize,
    master_seed: u64,
) -> Result<BinomialEstimate> {
    let mut errors = crate::rng::tape(master_seed, "decode-experiment/errors");
    let mut src = HashSeedSource::from_seed(master_seed, "decode-experiment/matrices");
    let mut failures = 0u64;
    for _ in 0..trials {
        let e = sample_from_set(set, &mut errors);
        let t = ToeplitzMatrix::generate(i_ec, set.n, &mut src)?;
        let s = t.apply(&e)?;
        if decode(&t, &s, set)?.unique() != Some(&e) {
            failures += 1;
        }
    }
    Ok(BinomialEstimate::new(failures, trials as u64))
}

/// Outcome of the matrix-reuse experiment.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct ReuseReport {
    pub patterns: usize,
    /// Single-pattern failure frequency from an independent run.
    pub single: BinomialEstimate,
    /// Frequency with which at least one committed pattern fails.
    pub any_failure: BinomialEstimate,
    /// `patterns * single.rate()`.
    pub union_bound: f64,
}

impl ReuseReport {
    pub fn holds(&self) -> bool {
        self.any_failure.within(self.union_bound)
    }
}

/// Commit `m` patterns drawn from the set, then reuse one fresh matrix per draw
/// across all of them. The single-pattern rate is measured separately with
/// `single_trials` independent planted-error trials.
pub fn reuse_experiment(
    set: &TypicalErrorSet,
    i_ec: usize,
    m: usize,
    draws: usize,
    single_trials: usize,
    master_seed: u64,
) -> Result<ReuseReport> {
    let mut rng = crate::rng::tape(master_seed, "reuse-experiment/patterns");
    let patterns = (0..m).map(|_| sample_from_set(set, &mut rng)).collect();
    let committed = CommittedPatterns::commit(patterns, *set)?;
    reuse_experiment_with(&committed, i_ec, draws, single_trials, master_seed)
}

pub fn reuse_experiment_with(
    committed: &CommittedPatterns,
    i_ec: usize,
    draws: usize,
    single_trials: usize,
    master_seed: u64,
) -> Result<ReuseReport> {
    let mut src = HashSeedSource::from_seed(master_seed, "reuse-experiment/matrices");
    let mut any = 0u64;
    for _ in 0..draws {
        if committed.trial(i_ec, &mut src)?.into_iter().any(|f| f) {
            any += 1;
        }
    }
    let single = decode_failure_experiment(&committed.set, i_ec, single_trials, master_seed ^ 0x5eed)?;
    let m = committed.patterns.len();
    Ok(ReuseReport {
        patterns: m,
        single,
        any_failure: BinomialEstimate::new(any, draws as u64),
        union_bound: (m as f64 * single.rate()).min(1.0),
    })
}

/// False-pass frequency of [`verify`] over random unequal pairs.
pub fn verify_false_pass_experiment(
    n: usize,
    tag_bits: usize,
    pairs: usize,
    master_seed: u64,
) -> Result<BinomialEstimate> {
    let mut rng = crate::rng::tape(master_seed, "verify-experiment/strings");
    let mut src = HashSeedSource::from_seed(master_seed, "verify-experiment/tags");
    let mut passes = 0u64;
    for _ in 0..pairs {
        let x = BitString::random(n, &mut rng);
        let mut e = BitString::random(n, &mut rng);
        while e.is_zero() {
            e = BitString::random(n, &mut rng);
        }
        let y = x.xor(&e)?;
        if verify(&x, &y, tag_bits, &mut src)? {
            passes += 1;
        }
    }
    Ok(BinomialEstimate::new(passes, pairs as u64))
}
