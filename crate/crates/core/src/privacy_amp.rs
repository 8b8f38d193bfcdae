//! Stream and block privacy amplification, stream randomness extraction, and
//! the per-matrix reuse ledger.
//!
//! In stream mode the final key is `k = d M ^ a`: a short private seed `d`
//! selects a pad from the row space of a reused Toeplitz matrix `M`, and each
//! reconciled bit is released as soon as it arrives.

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use crate::bits::BitString;
use crate::error::{Error, Result};
use crate::hashing::{HashSeedSource, ToeplitzMatrix};
use crate::rates;

/// Instrumentation record for stream finalisation.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StreamEvent {
    /// Reconciled bit `i` was taken in.
    Consumed(usize),
    /// Final key bit `i` was released.
    Emitted(usize),
}

/// Precomputed pad `d M` with a consumption cursor.
#[derive(Clone, Debug)]
pub struct StreamPad {
    pad: BitString,
    matrix_id: String,
    seed_len: usize,
    cursor: usize,
    events: Option<Vec<StreamEvent>>,
}

impl StreamPad {
    pub fn from_parts(pad: BitString, matrix_id: impl Into<String>, seed_len: usize) -> Self {
        StreamPad {
            pad,
            matrix_id: matrix_id.into(),
            seed_len,
            cursor: 0,
            events: None,
        }
    }

    pub fn len(&self) -> usize {
        self.pad.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pad.is_empty()
    }

    pub fn pad(&self) -> &BitString {
        &self.pad
    }

    pub fn matrix_id(&self) -> &str {
        &self.matrix_id
    }

    pub fn seed_len(&self) -> usize {
        self.seed_len
    }

    pub fn cursor(&self) -> usize {
        self.cursor
    }

    pub fn remaining(&self) -> usize {
        self.pad.len() - self.cursor
    }

    /// Record consumed/emitted events for every bit from now on.
    pub fn instrument(&mut self) {
        self.events.get_or_insert_with(Vec::new);
    }

    pub fn events(&self) -> &[StreamEvent] {
        self.events.as_deref().unwrap_or(&[])
    }

    /// A copy truncated to the first `len` bits, cursor reset.
    pub fn prefix(&self, len: usize) -> Result<StreamPad> {
        if len > self.pad.len() {
            return Err(Error::PadShortfall(format!(
                "need {len} pad bits, pad holds {}",
                self.pad.len()
            )));
        }
        Ok(StreamPad::from_parts(self.pad.slice(0, len), self.matrix_id.clone(), self.seed_len))
    }

    /// XOR the next chunk of reconciled bits with the pad.
    pub fn finalize_next(&mut self, chunk: &BitString) -> Result<BitString> {
        self.finalize_at(self.cursor, chunk)
    }

    /// XOR a chunk that claims to start at `offset`; it must be the next one.
    pub fn finalize_at(&mut self, offset: usize, chunk: &BitString) -> Result<BitString> {
        let mut out = chunk.clone();
        self.finalize_in_place(offset, &mut out)?;
        Ok(out)
    }

    /// As `finalize_at`, overwriting the chunk with its final bits.
    pub fn finalize_in_place(&mut self, offset: usize, chunk: &mut BitString) -> Result<()> {
        if offset != self.cursor {
            return Err(Error::OutOfOrder {
                expected: self.cursor,
                actual: offset,
            });
        }
        if chunk.len() > self.remaining() {
            return Err(Error::PadOverConsumed {
                cursor: self.cursor,
                requested: chunk.len(),
                len: self.pad.len(),
            });
        }
        match &mut self.events {
            None => chunk.xor_window_assign(&self.pad, self.cursor)?,
            Some(events) => {
                for i in 0..chunk.len() {
                    let j = self.cursor + i;
                    events.push(StreamEvent::Consumed(j));
                    chunk.set(i, chunk.get(i) ^ self.pad.get(j));
                    events.push(StreamEvent::Emitted(j));
                }
            }
        }
        self.cursor += chunk.len();
        Ok(())
    }

    pub fn to_file_string(&self) -> String {
        format!(
            "pad {} {} {}\n{}\n",
            self.pad.len(),
            self.matrix_id,
            self.seed_len,
            self.pad.to_hex()
        )
    }

    pub fn from_file_string(text: &str) -> Result<Self> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let header = lines.next().ok_or_else(|| Error::Parse("empty pad file".into()))?;
        let fields: Vec<&str> = header.split_whitespace().collect();
        if fields.len() != 4 || fields[0] != "pad" {
            return Err(Error::Parse(format!("bad pad header `{header}`")));
        }
        let number = |s: &str| {
            s.parse::<usize>()
                .map_err(|_| Error::Parse(format!("bad number `{s}` in pad header")))
        };
        let n = number(fields[1])?;
        let seed_len = number(fields[3])?;
        let body = lines.next().ok_or_else(|| Error::Parse("pad file has no body".into()))?;
        let pad = BitString::from_hex(body.trim())?;
        if pad.len() != n {
            return Err(Error::Parse(format!(
                "pad header says {n} bits, body holds {}",
                pad.len()
            )));
        }
        Ok(StreamPad::from_parts(pad, fields[2], seed_len))
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_file_string())?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::from_file_string(&std::fs::read_to_string(path)?)
    }
}

/// The pad `d M`, one bit per column of `M`.
pub fn make_pad(m: &ToeplitzMatrix, d: &BitString) -> Result<StreamPad> {
    if d.len() != m.rows() {
        return Err(Error::LengthMismatch {
            expected: m.rows(),
            actual: d.len(),
        });
    }
    let pad = if m.rows() == 0 {
        BitString::zeros(m.cols())
    } else {
        m.transpose().apply_fast(d)?
    };
    Ok(StreamPad::from_parts(pad, m.id(), m.rows()))
}

/// Produces the bits of `d M` in blocks, for when the whole pad should not be
/// held in memory.
pub struct PadGenerator {
    transposed: ToeplitzMatrix,
    seed: BitString,
    next: usize,
}

impl PadGenerator {
    pub fn new(m: &ToeplitzMatrix, d: &BitString) -> Result<Self> {
        if d.len() != m.rows() {
            return Err(Error::LengthMismatch {
                expected: m.rows(),
                actual: d.len(),
            });
        }
        Ok(PadGenerator {
            transposed: m.transpose(),
            seed: d.clone(),
            next: 0,
        })
    }

    pub fn remaining(&self) -> usize {
        self.transposed.rows() - self.next
    }

    /// The next `k` pad bits (fewer at the end).
    pub fn next_block(&mut self, k: usize) -> Result<BitString> {
        let k = k.min(self.remaining());
        let out = if self.seed.is_empty() {
            BitString::zeros(k)
        } else if k == 0 {
            BitString::zeros(0)
        } else {
            self.transposed.row_block(self.next, k).apply_fast(&self.seed)?
        };
        self.next += k;
        Ok(out)
    }
}

/// One-shot stream finalisation of a whole reconciled key.
pub fn stream_finalize(pad: &mut StreamPad, a: &BitString) -> Result<BitString> {
    pad.finalize_next(a)
}

/// Feed `a` in chunks of `chunk` bits and concatenate the outputs.
pub fn stream_finalize_chunked(pad: &mut StreamPad, a: &BitString, chunk: usize) -> Result<BitString> {
    if chunk == 0 {
        return Err(Error::InvalidInput("chunk size must be positive".into()));
    }
    let mut out = BitString::zeros(0);
    let mut start = 0;
    while start < a.len() {
        let k = chunk.min(a.len() - start);
        out.extend_from(&pad.finalize_next(&a.slice(start, k))?);
        start += k;
    }
    Ok(out)
}

/// Block privacy amplification through the kernel of `M`: the key is the
/// parity of `a` along each kernel basis vector, `n - rank(M)` bits.
pub fn block_pa(a: &BitString, m: &ToeplitzMatrix) -> Result<BitString> {
    if a.len() != m.cols() {
        return Err(Error::LengthMismatch {
            expected: m.cols(),
            actual: a.len(),
        });
    }
    let basis = kernel_for_block_pa(m)?;
    Ok(BitString::from_bits(basis.iter().map(|u| u.dot(a))))
}

/// Kernel basis of a full-row-rank `M`; rank-deficient matrices are refused.
pub fn kernel_for_block_pa(m: &ToeplitzMatrix) -> Result<Vec<BitString>> {
    let dense = m.to_dense();
    let rank = dense.rank();
    if rank < m.rows() {
        return Err(Error::RankDeficient { rank, rows: m.rows() });
    }
    Ok(dense.kernel_basis())
}

/// Conventional block extraction `H a` with an `(n - s) x n` Toeplitz `H`.
pub fn block_extract_toeplitz(a: &BitString, h: &ToeplitzMatrix) -> Result<BitString> {
    h.apply_fast(a)
}

/// Certified min-entropy of a raw string.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MinEntropyEstimate {
    pub n: usize,
    pub h_min: f64,
    pub note: String,
}

impl MinEntropyEstimate {
    pub fn new(n: usize, h_min: f64, note: impl Into<String>) -> Result<Self> {
        if !(0.0..=n as f64).contains(&h_min) {
            return Err(Error::Domain {
                name: "h_min",
                value: h_min,
                reason: "must lie in [0, n]",
            });
        }
        Ok(MinEntropyEstimate {
            n,
            h_min,
            note: note.into(),
        })
    }

    /// Rows of the extraction matrix, `n - ceil(h_min)`.
    pub fn seed_len(&self) -> usize {
        self.n - rates::ceil_bits(self.h_min) as usize
    }
}

/// Stream randomness extraction `raw ^ d M` with `M` of `n - ceil(h_min)` rows.
pub fn stream_extract(
    raw: &BitString,
    h: &MinEntropyEstimate,
    m: &ToeplitzMatrix,
    d: &BitString,
) -> Result<BitString> {
    if raw.len() != h.n || m.cols() != h.n {
        return Err(Error::Dimension(format!(
            "raw string of {} bits and a matrix with {} columns for an estimate over {} bits",
            raw.len(),
            m.cols(),
            h.n
        )));
    }
    if m.rows() != h.seed_len() {
        return Err(Error::Dimension(format!(
            "extraction matrix needs {} rows for h_min = {}, has {}",
            h.seed_len(),
            h.h_min,
            m.rows()
        )));
    }
    let mut pad = make_pad(m, d)?;
    pad.finalize_next(raw)
}

/// Reuse record for one hashing matrix.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LedgerEntry {
    pub matrix_id: String,
    pub eps_per_session: f64,
    pub sessions_used: u64,
    pub total_budget: f64,
    pub max_sessions: u64,
}

impl LedgerEntry {
    pub fn remaining(&self) -> u64 {
        self.max_sessions.saturating_sub(self.sessions_used)
    }

    /// `m eps` for the sessions granted so far.
    pub fn spent(&self) -> f64 {
        self.sessions_used as f64 * self.eps_per_session
    }
}

/// Per-matrix reuse accounting with atomic check-and-increment.
#[derive(Debug, Default)]
pub struct SecurityLedger {
    entries: Mutex<BTreeMap<String, LedgerEntry>>,
}

impl SecurityLedger {
    pub fn new() -> Self {
        Self::default()
    }

    /// Rebuild a ledger from saved entries.
    pub fn from_entries(entries: Vec<LedgerEntry>) -> Self {
        SecurityLedger {
            entries: Mutex::new(entries.into_iter().map(|e| (e.matrix_id.clone(), e)).collect()),
        }
    }

    pub fn register(&self, matrix_id: &str, eps_per_session: f64, total_budget: f64) -> Result<LedgerEntry> {
        let max_sessions = rates::max_sessions(eps_per_session, total_budget)?;
        let entry = LedgerEntry {
            matrix_id: matrix_id.to_string(),
            eps_per_session,
            sessions_used: 0,
            total_budget,
            max_sessions,
        };
        let mut entries = self.entries.lock().unwrap();
        Ok(entries
            .entry(matrix_id.to_string())
            .or_insert(entry)
            .clone())
    }

    /// Grant one more session iff `(used + 1) eps <= budget`.
    pub fn draw(&self, matrix_id: &str) -> Result<LedgerEntry> {
        let mut entries = self.entries.lock().unwrap();
        let entry = entries
            .get_mut(matrix_id)
            .ok_or_else(|| Error::UnknownMatrix(matrix_id.to_string()))?;
        if entry.sessions_used >= entry.max_sessions {
            return Err(Error::BudgetExhausted {
                matrix_id: matrix_id.to_string(),
            });
        }
        entry.sessions_used += 1;
        debug_assert!(entry.spent() <= entry.total_budget * (1.0 + 1e-9));
        Ok(entry.clone())
    }

    pub fn entry(&self, matrix_id: &str) -> Option<LedgerEntry> {
        self.entries.lock().unwrap().get(matrix_id).cloned()
    }

    pub fn snapshot(&self) -> Vec<LedgerEntry> {
        self.entries.lock().unwrap().values().cloned().collect()
    }
}

/// Grant a session on `matrix_id`, returning the updated use count.
pub fn ledger_draw(ledger: &SecurityLedger, matrix_id: &str) -> Result<u64> {
    Ok(ledger.draw(matrix_id)?.sessions_used)
}

/// Pre-shared material for stream privacy amplification: one reused Toeplitz
/// matrix and a private pool from which every session draws a fresh seed.
pub struct PadStore {
    matrix: ToeplitzMatrix,
    matrix_id: String,
    seeds: HashSeedSource,
    fresh: HashSeedSource,
}

impl PadStore {
    pub fn new(matrix: ToeplitzMatrix, seeds: HashSeedSource, fresh: HashSeedSource) -> Self {
        let matrix_id = matrix.id();
        PadStore {
            matrix,
            matrix_id,
            seeds,
            fresh,
        }
    }

    /// Draw a `rows x cols` matrix and seed pool from named tapes.
    pub fn generate(rows: usize, cols: usize, master_seed: u64) -> Result<Self> {
        let mut src = HashSeedSource::from_seed(master_seed, "pad-store/matrix");
        let matrix = ToeplitzMatrix::generate(rows, cols, &mut src)?;
        Ok(Self::new(
            matrix,
            HashSeedSource::from_seed(master_seed, "pad-store/seeds"),
            HashSeedSource::from_seed(master_seed, "pad-store/fresh"),
        ))
    }

    pub fn matrix(&self) -> &ToeplitzMatrix {
        &self.matrix
    }

    pub fn matrix_id(&self) -> &str {
        &self.matrix_id
    }

    pub fn seed_bits_drawn(&self) -> usize {
        self.seeds.consumed()
    }

    /// Bits consumed from the seed pool and the fresh-matrix pool.
    pub fn pool_offsets(&self) -> (usize, usize) {
        (self.seeds.consumed(), self.fresh.consumed())
    }

    /// Discard pool bits so that a reloaded store resumes at saved offsets.
    pub fn advance_to(&mut self, seeds: usize, fresh: usize) -> Result<()> {
        let (s, f) = self.pool_offsets();
        if seeds < s || fresh < f {
            return Err(Error::InvalidInput("pool offsets cannot move backwards".into()));
        }
        self.seeds.take(seeds - s)?;
        self.fresh.take(fresh - f)?;
        Ok(())
    }

    /// The `rows x len` corner of the stored matrix used for one session.
    pub fn session_matrix(&self, rows: usize, len: usize) -> Result<ToeplitzMatrix> {
        if rows > self.matrix.rows() || len > self.matrix.cols() {
            return Err(Error::PadShortfall(format!(
                "need a {rows} x {len} matrix, store holds {} x {}",
                self.matrix.rows(),
                self.matrix.cols()
            )));
        }
        if rows == 0 {
            return Ok(ToeplitzMatrix::empty(len));
        }
        self.matrix.top_rows(rows)?.left_columns(len)
    }

    /// A pad of `len` bits from a fresh `rows`-bit seed; the pad carries the
    /// stored matrix's id so reuse is charged against it.
    pub fn provision(&mut self, rows: usize, len: usize) -> Result<StreamPad> {
        let m = self.session_matrix(rows, len)?;
        let d = self.seeds.take(rows)?;
        let pad = make_pad(&m, &d)?;
        Ok(StreamPad::from_parts(pad.pad, self.matrix_id.clone(), rows))
    }

    /// A pad from a newly drawn single-use matrix.
    pub fn fresh_pad(&mut self, rows: usize, len: usize) -> Result<(ToeplitzMatrix, StreamPad)> {
        let m = if rows == 0 {
            ToeplitzMatrix::empty(len)
        } else {
            ToeplitzMatrix::generate(rows, len, &mut self.fresh)?
        };
        let d = self.seeds.take(rows)?;
        let pad = make_pad(&m, &d)?;
        Ok((m, pad))
    }
}

/// JSON sidecar written next to a key file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KeySidecar {
    pub matrix_id: String,
    pub seed_len: usize,
    pub eps_claimed: f64,
    pub ledger_state: Option<LedgerEntry>,
}

/// Writes the key as a hex line and the sidecar to `<path>.json`.
pub fn write_key_file(path: &Path, key: &BitString, sidecar: &KeySidecar) -> Result<()> {
    std::fs::write(path, format!("{}\n", key.to_hex()))?;
    std::fs::write(sidecar_path(path), serde_json::to_string_pretty(sidecar)?)?;
    Ok(())
}

pub fn read_key_file(path: &Path) -> Result<(BitString, KeySidecar)> {
    let key = BitString::from_hex(std::fs::read_to_string(path)?.trim())?;
    let sidecar = serde_json::from_str(&std::fs::read_to_string(sidecar_path(path))?)?;
    Ok((key, sidecar))
}

pub fn sidecar_path(path: &Path) -> std::path::PathBuf {
    let mut os = path.as_os_str().to_owned();
    os.push(".json");
    os.into()
}
