//! Toeplitz universal hashing over GF(2).
//!
//! An `m x n` Toeplitz matrix is stored as its `m + n - 1` diagonal bits:
//! entry `(i, j)` is `diag[i - j + n - 1]`. Drawn uniformly, the family is
//! two-universal: for any nonzero `d`, `Pr[T d = 0] = 2^-m`.

use rand::RngCore;
use sha2::{Digest, Sha256};

use crate::bits::{BitString, Gf2Matrix};
use crate::error::{Error, Result};
use crate::ntt;
use crate::rng::{self, Tape};
use crate::stats::BinomialEstimate;

/// A supply of uniformly random bits with a consumption counter.
///
/// A source is single-consumer: draws must not be shared across threads.
pub struct HashSeedSource {
    supply: Supply,
    consumed: usize,
}

enum Supply {
    Tape {
        rng: Box<Tape>,
        pending: u64,
        pending_bits: u32,
    },
    Fixed {
        bits: BitString,
    },
}

impl HashSeedSource {
    /// Unbounded source backed by a named ChaCha20 tape.
    pub fn from_seed(master: u64, name: &str) -> Self {
        Self::from_tape(rng::tape(master, name))
    }

    pub fn from_tape(tape: Tape) -> Self {
        HashSeedSource {
            supply: Supply::Tape {
                rng: Box::new(tape),
                pending: 0,
                pending_bits: 0,
            },
            consumed: 0,
        }
    }

    /// Finite source that yields exactly these bits, in order.
    pub fn from_bits(bits: BitString) -> Self {
        HashSeedSource {
            supply: Supply::Fixed { bits },
            consumed: 0,
        }
    }

    pub fn consumed(&self) -> usize {
        self.consumed
    }

    /// Remaining bits for a finite source, `None` if unbounded.
    pub fn remaining(&self) -> Option<usize> {
        match &self.supply {
            Supply::Tape { .. } => None,
            Supply::Fixed { bits } => Some(bits.len() - self.consumed),
        }
    }

    /// Draw the next `k` bits of the stream.
    pub fn take(&mut self, k: usize) -> Result<BitString> {
        let out = match &mut self.supply {
            Supply::Fixed { bits } => {
                let available = bits.len() - self.consumed;
                if k > available {
                    return Err(Error::SeedExhausted {
                        requested: k,
                        available,
                    });
                }
                bits.slice(self.consumed, k)
            }
            Supply::Tape {
                rng,
                pending,
                pending_bits,
            } => {
                let from_pending = (*pending_bits as usize).min(k);
                let mut out = BitString::from_u64(from_pending, *pending);
                if from_pending == *pending_bits as usize {
                    *pending = 0;
                } else {
                    *pending >>= from_pending;
                }
                *pending_bits -= from_pending as u32;
                let rest = k - from_pending;
                if rest > 0 {
                    let words = rest.div_ceil(64);
                    let raw: Vec<u64> = (0..words).map(|_| rng.next_u64()).collect();
                    let tail_used = rest - (words - 1) * 64;
                    let last = raw[words - 1];
                    out.extend_from(&BitString::from_words(rest, raw));
                    if tail_used < 64 {
                        *pending = last >> tail_used;
                        *pending_bits = (64 - tail_used) as u32;
                    }
                }
                out
            }
        };
        self.consumed += k;
        Ok(out)
    }
}

/// Diagonal-constant GF(2) matrix.
#[derive(Clone, PartialEq, Eq, Debug)]
pub struct ToeplitzMatrix {
    rows: usize,
    cols: usize,
    diag: BitString,
}

fn diag_len(rows: usize, cols: usize) -> usize {
    if rows == 0 || cols == 0 {
        0
    } else {
        rows + cols - 1
    }
}

impl ToeplitzMatrix {
    pub fn new(rows: usize, cols: usize, diag: BitString) -> Result<Self> {
        let expected = diag_len(rows, cols);
        if diag.len() != expected {
            return Err(Error::LengthMismatch {
                expected,
                actual: diag.len(),
            });
        }
        Ok(ToeplitzMatrix { rows, cols, diag })
    }

    /// The `0 x cols` matrix.
    pub fn empty(cols: usize) -> Self {
        ToeplitzMatrix {
            rows: 0,
            cols,
            diag: BitString::zeros(0),
        }
    }

    /// Draw `m + n - 1` bits from `src` and use them, in order, as the diagonal.
    pub fn generate(rows: usize, cols: usize, src: &mut HashSeedSource) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::InvalidInput(format!(
                "Toeplitz dimensions must be positive, got {rows}x{cols}"
            )));
        }
        let diag = src.take(rows + cols - 1)?;
        Self::new(rows, cols, diag)
    }

    /// Draw until the matrix has full row rank (requires `rows <= cols`).
    pub fn generate_full_rank(rows: usize, cols: usize, src: &mut HashSeedSource) -> Result<Self> {
        if rows > cols {
            return Err(Error::InvalidInput(format!(
                "a {rows}x{cols} matrix cannot have full row rank"
            )));
        }
        loop {
            let t = Self::generate(rows, cols, src)?;
            if t.to_dense().rank() == rows {
                return Ok(t);
            }
        }
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn diag(&self) -> &BitString {
        &self.diag
    }

    #[inline]
    pub fn entry(&self, i: usize, j: usize) -> bool {
        assert!(i < self.rows && j < self.cols);
        self.diag.get(i + self.cols - 1 - j)
    }

    /// Row `i` as a bit string of length `cols`.
    pub fn row(&self, i: usize) -> BitString {
        self.diag.slice(i, self.cols).reversed()
    }

    /// Column `j` as a bit string of length `rows`.
    pub fn column(&self, j: usize) -> BitString {
        assert!(j < self.cols);
        if self.rows == 0 {
            return BitString::zeros(0);
        }
        self.diag.slice(self.cols - 1 - j, self.rows)
    }

    pub fn to_dense(&self) -> Gf2Matrix {
        let rows = (0..self.rows).map(|i| self.row(i)).collect();
        Gf2Matrix::from_rows(self.cols, rows).expect("row length")
    }

    /// Compress a dense matrix; fails if it is not diagonal-constant.
    pub fn from_dense(m: &Gf2Matrix) -> Result<Self> {
        let (rows, cols) = (m.rows(), m.cols());
        if rows == 0 || cols == 0 {
            return Ok(Self::empty(cols));
        }
        let mut diag = BitString::zeros(rows + cols - 1);
        for d in 0..rows + cols - 1 {
            // any cell on the diagonal i - j = d - (n - 1)
            let (i, j) = if d >= cols - 1 {
                (d - (cols - 1), 0)
            } else {
                (0, cols - 1 - d)
            };
            diag.set(d, m.get(i, j));
        }
        let t = ToeplitzMatrix { rows, cols, diag };
        for i in 0..rows {
            for j in 0..cols {
                if m.get(i, j) != t.entry(i, j) {
                    return Err(Error::InvalidInput(format!(
                        "matrix is not diagonal-constant at ({i}, {j})"
                    )));
                }
            }
        }
        Ok(t)
    }

    /// The transpose, itself Toeplitz with the diagonal reversed.
    pub fn transpose(&self) -> ToeplitzMatrix {
        ToeplitzMatrix {
            rows: self.cols,
            cols: self.rows,
            diag: self.diag.reversed(),
        }
    }

    /// The first `k` rows.
    pub fn top_rows(&self, k: usize) -> Result<ToeplitzMatrix> {
        if k > self.rows {
            return Err(Error::Dimension(format!(
                "requested {k} rows from a matrix with {}",
                self.rows
            )));
        }
        if k == 0 {
            return Ok(Self::empty(self.cols));
        }
        Ok(ToeplitzMatrix {
            rows: k,
            cols: self.cols,
            diag: self.diag.slice(0, k + self.cols - 1),
        })
    }

    /// Rows `[start, start + k)`.
    pub fn row_block(&self, start: usize, k: usize) -> ToeplitzMatrix {
        assert!(start + k <= self.rows);
        if k == 0 {
            return Self::empty(self.cols);
        }
        ToeplitzMatrix {
            rows: k,
            cols: self.cols,
            diag: self.diag.slice(start, k + self.cols - 1),
        }
    }

    /// The first `c` columns.
    pub fn left_columns(&self, c: usize) -> Result<ToeplitzMatrix> {
        if c == 0 || c > self.cols {
            return Err(Error::Dimension(format!(
                "requested {c} columns from a matrix with {}",
                self.cols
            )));
        }
        if self.rows == 0 {
            return Ok(Self::empty(c));
        }
        Ok(ToeplitzMatrix {
            rows: self.rows,
            cols: c,
            diag: self.diag.slice(self.cols - c, self.rows + c - 1),
        })
    }

    /// Short stable identifier: first 8 bytes of SHA-256 over the file encoding.
    pub fn id(&self) -> String {
        let digest = Sha256::digest(self.to_file_string().as_bytes());
        digest[..8].iter().map(|b| format!("{b:02x}")).collect()
    }

    fn check_input(&self, v: &BitString) -> Result<()> {
        if v.len() != self.cols {
            return Err(Error::Dimension(format!(
                "hash input has {} bits, matrix has {} columns",
                v.len(),
                self.cols
            )));
        }
        Ok(())
    }

    /// `T v` by direct row products, O(m n / 64) word operations.
    pub fn apply(&self, v: &BitString) -> Result<BitString> {
        self.check_input(v)?;
        if self.rows == 0 {
            return Ok(BitString::zeros(0));
        }
        // y_i = sum_k diag[i + k] * v[n - 1 - k]
        let rv = v.reversed();
        Ok(BitString::from_bits(
            (0..self.rows).map(|i| self.diag.slice(i, self.cols).dot(&rv)),
        ))
    }

    /// `T v` through an exact number-theoretic convolution, O((m + n) log(m + n)).
    pub fn apply_fast(&self, v: &BitString) -> Result<BitString> {
        self.apply_fast_with(v, ntt::MAX_LOG_LEN)
    }

    /// As [`apply_fast`](Self::apply_fast) with the transform length capped at
    /// `2^max_log_len`; taller matrices are processed in row blocks.
    pub fn apply_fast_with(&self, v: &BitString, max_log_len: u32) -> Result<BitString> {
        self.check_input(v)?;
        if self.rows == 0 {
            return Ok(BitString::zeros(0));
        }
        let max_log_len = max_log_len.min(ntt::MAX_LOG_LEN);
        let max_len = 1usize << max_log_len;
        let n = self.cols;
        if n > max_len {
            return Err(Error::PrecisionOverflow(format!(
                "input length {n} exceeds the transform capacity 2^{max_log_len}"
            )));
        }
        if n as u64 >= ntt::MODULUS {
            return Err(Error::PrecisionOverflow(format!(
                "convolution coefficients up to {n} are not representable modulo {}",
                ntt::MODULUS
            )));
        }
        let block = max_len - n + 1;
        let mut out = BitString::zeros(0);
        let mut start = 0;
        while start < self.rows {
            let k = block.min(self.rows - start);
            out.extend_from(&self.row_block(start, k).convolve_rows(v));
            start += k;
        }
        Ok(out)
    }

    // y_i = (diag * v)[i + n - 1]; a cyclic transform of length >= m + n - 1
    // only aliases indices below n - 1.
    fn convolve_rows(&self, v: &BitString) -> BitString {
        let n = self.cols;
        let len = (self.rows + n - 1).next_power_of_two();
        let mut a = vec![0u32; len];
        for p in self.diag.ones_positions() {
            a[p] = 1;
        }
        let mut b = vec![0u32; len];
        for p in v.ones_positions() {
            b[p] = 1;
        }
        let c = ntt::cyclic_convolution(a, b);
        BitString::from_bits((0..self.rows).map(|i| c[i + n - 1] & 1 == 1))
    }

    pub fn to_file_string(&self) -> String {
        format!("toeplitz {} {}\n{}\n", self.rows, self.cols, self.diag.to_hex())
    }

    pub fn from_file_string(text: &str) -> Result<Self> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let header = lines
            .next()
            .ok_or_else(|| Error::Parse("empty matrix file".into()))?;
        let fields: Vec<&str> = header.split_whitespace().collect();
        if fields.len() != 3 || fields[0] != "toeplitz" {
            return Err(Error::Parse(format!("bad matrix header `{header}`")));
        }
        let parse = |s: &str| {
            s.parse::<usize>()
                .map_err(|_| Error::Parse(format!("bad dimension `{s}`")))
        };
        let (rows, cols) = (parse(fields[1])?, parse(fields[2])?);
        let diag = BitString::from_hex(
            lines
                .next()
                .ok_or_else(|| Error::Parse("missing diagonal".into()))?,
        )?;
        Self::new(rows, cols, diag)
    }
}

/// Linear hash family interface; Toeplitz is the shipped member.
pub trait LinearHash {
    fn output_len(&self) -> usize;
    fn input_len(&self) -> usize;
    fn hash(&self, v: &BitString) -> Result<BitString>;
}

impl LinearHash for ToeplitzMatrix {
    fn output_len(&self) -> usize {
        self.rows
    }
    fn input_len(&self) -> usize {
        self.cols
    }
    fn hash(&self, v: &BitString) -> Result<BitString> {
        self.apply(v)
    }
}

/// Monte-Carlo collision frequency of a freshly drawn `m x n` Toeplitz hash
/// over the given input pairs. Each trial draws a new matrix and tests every
/// pair; the estimate pools all `pairs.len() * trials` Bernoulli outcomes.
pub fn collision_probe(
    m: usize,
    n: usize,
    pairs: &[(BitString, BitString)],
    trials: usize,
    full_rank: bool,
    src: &mut HashSeedSource,
) -> Result<BinomialEstimate> {
    if trials == 0 || pairs.is_empty() {
        return Err(Error::InvalidInput(
            "collision probe needs at least one pair and one trial".into(),
        ));
    }
    let diffs = pairs
        .iter()
        .map(|(a, b)| {
            if a.len() != n {
                return Err(Error::LengthMismatch {
                    expected: n,
                    actual: a.len(),
                });
            }
            a.xor(b)
        })
        .collect::<Result<Vec<_>>>()?;
    let mut hits = 0u64;
    for _ in 0..trials {
        let t = if full_rank {
            ToeplitzMatrix::generate_full_rank(m, n, src)?
        } else {
            ToeplitzMatrix::generate(m, n, src)?
        };
        for d in &diffs {
            if t.apply(d)?.is_zero() {
                hits += 1;
            }
        }
    }
    Ok(BinomialEstimate::new(hits, (trials * diffs.len()) as u64))
}
