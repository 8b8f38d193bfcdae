//! Packed GF(2) vectors and dense matrices.
//!
//! Bits are packed little-endian into `u64` words: bit `i` of a string lives
//! in word `i / 64` at position `i % 64`. Bits past `len` are always zero.

use std::fmt;
use std::str::FromStr;

use rand::RngCore;

use crate::error::{Error, Result};

const WORD: usize = 64;

#[inline]
fn words_for(len: usize) -> usize {
    len.div_ceil(WORD)
}

/// A fixed-length string over GF(2).
#[derive(Clone, PartialEq, Eq, Hash, Default)]
pub struct BitString {
    len: usize,
    words: Vec<u64>,
}

impl BitString {
    pub fn zeros(len: usize) -> Self {
        BitString {
            len,
            words: vec![0; words_for(len)],
        }
    }

    pub fn ones(len: usize) -> Self {
        let mut s = BitString {
            len,
            words: vec![u64::MAX; words_for(len)],
        };
        s.mask_tail();
        s
    }

    /// Unit vector with a single one at `index`.
    pub fn unit(len: usize, index: usize) -> Self {
        let mut s = Self::zeros(len);
        s.set(index, true);
        s
    }

    pub fn from_bits<I: IntoIterator<Item = bool>>(bits: I) -> Self {
        let mut words = Vec::new();
        let mut len = 0;
        for b in bits {
            if len % WORD == 0 {
                words.push(0);
            }
            if b {
                words[len / WORD] |= 1 << (len % WORD);
            }
            len += 1;
        }
        BitString { len, words }
    }

    /// Parse a string of `0`/`1` characters, bit 0 first. Whitespace and `_` are ignored.
    pub fn from_binary(s: &str) -> Result<Self> {
        let mut bits = Vec::with_capacity(s.len());
        for ch in s.chars() {
            match ch {
                '0' => bits.push(false),
                '1' => bits.push(true),
                c if c.is_whitespace() || c == '_' => {}
                c => return Err(Error::Parse(format!("invalid binary digit `{c}`"))),
            }
        }
        Ok(Self::from_bits(bits))
    }

    /// Build from raw words; bits past `len` are cleared.
    pub fn from_words(len: usize, mut words: Vec<u64>) -> Self {
        words.resize(words_for(len), 0);
        let mut s = BitString { len, words };
        s.mask_tail();
        s
    }

    /// Low `len` bits of `value` (bit 0 = least significant).
    pub fn from_u64(len: usize, value: u64) -> Self {
        assert!(len <= WORD);
        Self::from_words(len, vec![value])
    }

    pub fn random<R: RngCore + ?Sized>(len: usize, rng: &mut R) -> Self {
        let words = (0..words_for(len)).map(|_| rng.next_u64()).collect();
        Self::from_words(len, words)
    }

    /// Each bit is one independently with probability `p`.
    pub fn bernoulli<R: RngCore + ?Sized>(len: usize, p: f64, rng: &mut R) -> Self {
        use rand::Rng;
        if p <= 0.0 {
            return Self::zeros(len);
        }
        Self::from_bits((0..len).map(|_| rng.gen_bool(p.min(1.0))))
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.len
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    #[inline]
    pub fn words(&self) -> &[u64] {
        &self.words
    }

    #[inline]
    pub fn get(&self, i: usize) -> bool {
        assert!(i < self.len, "bit index {i} out of range {}", self.len);
        (self.words[i / WORD] >> (i % WORD)) & 1 == 1
    }

    #[inline]
    pub fn set(&mut self, i: usize, value: bool) {
        assert!(i < self.len, "bit index {i} out of range {}", self.len);
        let mask = 1u64 << (i % WORD);
        if value {
            self.words[i / WORD] |= mask;
        } else {
            self.words[i / WORD] &= !mask;
        }
    }

    #[inline]
    pub fn flip(&mut self, i: usize) {
        assert!(i < self.len, "bit index {i} out of range {}", self.len);
        self.words[i / WORD] ^= 1 << (i % WORD);
    }

    pub fn iter(&self) -> impl Iterator<Item = bool> + '_ {
        (0..self.len).map(move |i| self.get(i))
    }

    /// Indices of the one bits, ascending.
    pub fn ones_positions(&self) -> Vec<usize> {
        let mut out = Vec::with_capacity(self.weight());
        for (k, &w) in self.words.iter().enumerate() {
            let mut w = w;
            while w != 0 {
                out.push(k * WORD + w.trailing_zeros() as usize);
                w &= w - 1;
            }
        }
        out
    }

    /// Hamming weight.
    pub fn weight(&self) -> usize {
        self.words.iter().map(|w| w.count_ones() as usize).sum()
    }

    pub fn is_zero(&self) -> bool {
        self.words.iter().all(|&w| w == 0)
    }

    /// Bitwise XOR of two equal-length strings.
    pub fn xor(&self, other: &BitString) -> Result<BitString> {
        let mut out = self.clone();
        out.xor_assign(other)?;
        Ok(out)
    }

    pub fn xor_assign(&mut self, other: &BitString) -> Result<()> {
        if self.len != other.len {
            return Err(Error::LengthMismatch {
                expected: self.len,
                actual: other.len,
            });
        }
        for (a, b) in self.words.iter_mut().zip(&other.words) {
            *a ^= b;
        }
        Ok(())
    }

    /// XOR `other[start..start + self.len()]` into `self`.
    pub fn xor_window_assign(&mut self, other: &BitString, start: usize) -> Result<()> {
        if start + self.len > other.len {
            return Err(Error::LengthMismatch {
                expected: start + self.len,
                actual: other.len,
            });
        }
        if start % 64 != 0 {
            return self.xor_assign(&other.slice(start, self.len));
        }
        for (a, b) in self.words.iter_mut().zip(&other.words[start / 64..]) {
            *a ^= b;
        }
        if self.len % 64 != 0 {
            if let Some(last) = self.words.last_mut() {
                *last &= (1u64 << (self.len % 64)) - 1;
            }
        }
        Ok(())
    }

    pub fn hamming_distance(&self, other: &BitString) -> Result<usize> {
        if self.len != other.len {
            return Err(Error::LengthMismatch {
                expected: self.len,
                actual: other.len,
            });
        }
        Ok(self
            .words
            .iter()
            .zip(&other.words)
            .map(|(a, b)| (a ^ b).count_ones() as usize)
            .sum())
    }

    /// Inner product over GF(2). Panics on length mismatch.
    #[inline]
    pub fn dot(&self, other: &BitString) -> bool {
        assert_eq!(self.len, other.len, "dot product length mismatch");
        let mut acc = 0u64;
        for (a, b) in self.words.iter().zip(&other.words) {
            acc ^= a & b;
        }
        acc.count_ones() & 1 == 1
    }

    /// Bits `[start, start + len)` as a new string.
    pub fn slice(&self, start: usize, len: usize) -> BitString {
        assert!(
            start + len <= self.len,
            "slice [{start}, {}) out of range {}",
            start + len,
            self.len
        );
        let mut out = BitString::zeros(len);
        let base = start / WORD;
        let shift = start % WORD;
        for (k, slot) in out.words.iter_mut().enumerate() {
            let lo = self.words[base + k] >> shift;
            let hi = if shift != 0 && base + k + 1 < self.words.len() {
                self.words[base + k + 1] << (WORD - shift)
            } else {
                0
            };
            *slot = lo | hi;
        }
        out.mask_tail();
        out
    }

    /// Bit order reversed: result bit `i` is bit `len - 1 - i` of `self`.
    pub fn reversed(&self) -> BitString {
        if self.len == 0 {
            return BitString::zeros(0);
        }
        let padded = BitString {
            len: self.words.len() * WORD,
            words: self.words.iter().rev().map(|w| w.reverse_bits()).collect(),
        };
        padded.slice(padded.len - self.len, self.len)
    }

    /// Append all bits of `other`.
    pub fn extend_from(&mut self, other: &BitString) {
        let shift = self.len % WORD;
        let new_len = self.len + other.len;
        if shift == 0 {
            self.words.extend_from_slice(&other.words);
        } else {
            for &w in &other.words {
                let last = self.words.len() - 1;
                self.words[last] |= w << shift;
                self.words.push(w >> (WORD - shift));
            }
        }
        self.len = new_len;
        self.words.truncate(words_for(new_len));
        self.mask_tail();
    }

    pub fn concat<'a, I: IntoIterator<Item = &'a BitString>>(parts: I) -> BitString {
        let mut out = BitString::zeros(0);
        for p in parts {
            out.extend_from(p);
        }
        out
    }

    pub fn truncate(&mut self, len: usize) {
        if len < self.len {
            self.len = len;
            self.words.truncate(words_for(len));
            self.mask_tail();
        }
    }

    /// Keep only the bits at the given positions, in that order.
    pub fn select(&self, positions: &[usize]) -> BitString {
        BitString::from_bits(positions.iter().map(|&i| self.get(i)))
    }

    /// Little-endian byte image: byte `k` holds bits `8k..8k+8`, bit `8k` as the LSB.
    pub fn to_le_bytes(&self) -> Vec<u8> {
        let nbytes = self.len.div_ceil(8);
        let mut out = Vec::with_capacity(nbytes);
        for k in 0..nbytes {
            out.push((self.words[k / 8] >> ((k % 8) * 8)) as u8);
        }
        out
    }

    pub fn from_le_bytes(len: usize, bytes: &[u8]) -> Result<Self> {
        if bytes.len() != len.div_ceil(8) {
            return Err(Error::LengthMismatch {
                expected: len.div_ceil(8),
                actual: bytes.len(),
            });
        }
        let mut words = vec![0u64; words_for(len)];
        for (k, &b) in bytes.iter().enumerate() {
            words[k / 8] |= (b as u64) << ((k % 8) * 8);
        }
        let s = BitString { len, words };
        let mut masked = s.clone();
        masked.mask_tail();
        if masked != s {
            return Err(Error::Parse(format!(
                "bits set beyond declared length {len}"
            )));
        }
        Ok(s)
    }

    /// `len:hex` where the hex digits spell the integer `sum(bit_i * 2^i)`,
    /// most significant nibble first, padded to whole bytes.
    pub fn to_hex(&self) -> String {
        let mut s = format!("{}:", self.len);
        for b in self.to_le_bytes().iter().rev() {
            s.push_str(&format!("{b:02x}"));
        }
        s
    }

    pub fn from_hex(text: &str) -> Result<Self> {
        let text = text.trim();
        let (len, hex) = text
            .split_once(':')
            .ok_or_else(|| Error::Parse("bit string must be `len:hex`".into()))?;
        let len: usize = len
            .parse()
            .map_err(|_| Error::Parse(format!("invalid bit-string length `{len}`")))?;
        let nbytes = len.div_ceil(8);
        if hex.len() != 2 * nbytes {
            return Err(Error::Parse(format!(
                "expected {} hex digits for {len} bits, found {}",
                2 * nbytes,
                hex.len()
            )));
        }
        if hex.chars().any(|c| c.is_ascii_uppercase()) {
            return Err(Error::Parse("hex digits must be lowercase".into()));
        }
        let mut bytes = Vec::with_capacity(nbytes);
        for k in (0..nbytes).rev() {
            let pair = &hex[2 * k..2 * k + 2];
            bytes.push(
                u8::from_str_radix(pair, 16)
                    .map_err(|_| Error::Parse(format!("invalid hex `{pair}`")))?,
            );
        }
        Self::from_le_bytes(len, &bytes)
    }

    fn mask_tail(&mut self) {
        let rem = self.len % WORD;
        if rem != 0 {
            if let Some(last) = self.words.last_mut() {
                *last &= (1u64 << rem) - 1;
            }
        }
    }
}

impl fmt::Display for BitString {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_hex())
    }
}

impl fmt::Debug for BitString {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.len <= 128 {
            let bits: String = self.iter().map(|b| if b { '1' } else { '0' }).collect();
            write!(f, "BitString({bits})")
        } else {
            write!(f, "BitString(len={}, weight={})", self.len, self.weight())
        }
    }
}

impl FromStr for BitString {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::from_hex(s)
    }
}

/// Dense row-major matrix over GF(2).
#[derive(Clone, PartialEq, Eq, Debug)]
pub struct Gf2Matrix {
    rows: usize,
    cols: usize,
    data: Vec<BitString>,
}

impl Gf2Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Gf2Matrix {
            rows,
            cols,
            data: vec![BitString::zeros(cols); rows],
        }
    }

    pub fn identity(n: usize) -> Self {
        Gf2Matrix {
            rows: n,
            cols: n,
            data: (0..n).map(|i| BitString::unit(n, i)).collect(),
        }
    }

    pub fn from_rows(cols: usize, rows: Vec<BitString>) -> Result<Self> {
        if let Some(bad) = rows.iter().find(|r| r.len() != cols) {
            return Err(Error::LengthMismatch {
                expected: cols,
                actual: bad.len(),
            });
        }
        Ok(Gf2Matrix {
            rows: rows.len(),
            cols,
            data: rows,
        })
    }

    /// Matrix whose columns are the given vectors, all of length `rows`.
    pub fn from_columns(rows: usize, columns: &[BitString]) -> Result<Self> {
        let t = Self::from_rows(rows, columns.to_vec())?;
        Ok(t.transpose())
    }

    /// Parse rows written as `0`/`1` strings, e.g. `["110", "011"]`.
    pub fn from_binary_rows(rows: &[&str]) -> Result<Self> {
        let parsed: Vec<BitString> = rows
            .iter()
            .map(|r| BitString::from_binary(r))
            .collect::<Result<_>>()?;
        let cols = parsed.first().map_or(0, |r| r.len());
        Self::from_rows(cols, parsed)
    }

    pub fn random<R: RngCore + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> Self {
        Gf2Matrix {
            rows,
            cols,
            data: (0..rows).map(|_| BitString::random(cols, rng)).collect(),
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

    pub fn row(&self, i: usize) -> &BitString {
        &self.data[i]
    }

    pub fn row_vectors(&self) -> &[BitString] {
        &self.data
    }

    pub fn column(&self, j: usize) -> BitString {
        BitString::from_bits(self.data.iter().map(|r| r.get(j)))
    }

    pub fn get(&self, i: usize, j: usize) -> bool {
        self.data[i].get(j)
    }

    pub fn set(&mut self, i: usize, j: usize, value: bool) {
        self.data[i].set(j, value)
    }

    /// `M v` over GF(2).
    pub fn mat_vec(&self, v: &BitString) -> Result<BitString> {
        if v.len() != self.cols {
            return Err(Error::Dimension(format!(
                "matrix has {} columns, vector has {} bits",
                self.cols,
                v.len()
            )));
        }
        Ok(BitString::from_bits(self.data.iter().map(|r| r.dot(v))))
    }

    /// Row-vector product `d M` over GF(2).
    pub fn vec_mat(&self, d: &BitString) -> Result<BitString> {
        if d.len() != self.rows {
            return Err(Error::Dimension(format!(
                "matrix has {} rows, vector has {} bits",
                self.rows,
                d.len()
            )));
        }
        let mut acc = BitString::zeros(self.cols);
        for i in d.ones_positions() {
            acc.xor_assign(&self.data[i]).expect("row length");
        }
        Ok(acc)
    }

    pub fn mat_mul(&self, other: &Gf2Matrix) -> Result<Gf2Matrix> {
        if self.cols != other.rows {
            return Err(Error::Dimension(format!(
                "cannot multiply {}x{} by {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        let data = self
            .data
            .iter()
            .map(|r| other.vec_mat(r))
            .collect::<Result<_>>()?;
        Ok(Gf2Matrix {
            rows: self.rows,
            cols: other.cols,
            data,
        })
    }

    pub fn transpose(&self) -> Gf2Matrix {
        let mut t = Gf2Matrix::zeros(self.cols, self.rows);
        for (i, row) in self.data.iter().enumerate() {
            for j in row.ones_positions() {
                t.data[j].set(i, true);
            }
        }
        t
    }

    pub fn is_zero(&self) -> bool {
        self.data.iter().all(BitString::is_zero)
    }

    /// Reduced row echelon form. Pivots are taken at the leftmost column that
    /// has a nonzero entry at or below the current row; the first such row is
    /// swapped up. Returns the reduced matrix and the pivot column of each
    /// nonzero row.
    pub fn rref(&self) -> (Gf2Matrix, Vec<usize>) {
        let mut m = self.clone();
        let mut pivots = Vec::new();
        let mut r = 0;
        for c in 0..m.cols {
            if r == m.rows {
                break;
            }
            let Some(p) = (r..m.rows).find(|&i| m.data[i].get(c)) else {
                continue;
            };
            m.data.swap(r, p);
            let pivot_row = m.data[r].clone();
            let first_word = c / WORD;
            for i in 0..m.rows {
                if i != r && m.data[i].get(c) {
                    let row = &mut m.data[i];
                    for k in first_word..row.words.len() {
                        row.words[k] ^= pivot_row.words[k];
                    }
                }
            }
            pivots.push(c);
            r += 1;
        }
        (m, pivots)
    }

    pub fn rank(&self) -> usize {
        self.rref().1.len()
    }

    /// Standard kernel basis: one vector per free column `f`, with `x_f = 1`,
    /// other free variables zero, and pivot variables solved from the RREF.
    pub fn kernel_basis(&self) -> Vec<BitString> {
        let (reduced, pivots) = self.rref();
        let mut is_pivot = vec![false; self.cols];
        for &p in &pivots {
            is_pivot[p] = true;
        }
        (0..self.cols)
            .filter(|&f| !is_pivot[f])
            .map(|f| {
                let mut v = BitString::unit(self.cols, f);
                for (row, &pc) in pivots.iter().enumerate() {
                    if reduced.data[row].get(f) {
                        v.set(pc, true);
                    }
                }
                v
            })
            .collect()
    }

    /// The dual matrix: `cols x nullity`, its columns a basis of `ker M`.
    pub fn nullspace(&self) -> Gf2Matrix {
        let basis = self.kernel_basis();
        Gf2Matrix::from_columns(self.cols, &basis).expect("kernel vectors have cols bits")
    }
}

impl serde::Serialize for BitString {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        serializer.serialize_str(&self.to_hex())
    }
}

impl<'de> serde::Deserialize<'de> for BitString {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let text = String::deserialize(deserializer)?;
        BitString::from_hex(&text).map_err(serde::de::Error::custom)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::tape;

    fn b(s: &str) -> BitString {
        BitString::from_binary(s).unwrap()
    }

    #[test]
    fn xor_examples() {
        assert_eq!(b("1100").xor(&b("1010")).unwrap(), b("0110"));
        let a = b("1011");
        assert_eq!(a.xor(&a).unwrap(), b("0000"));
        assert_eq!(a.xor(&b("0000")).unwrap(), a);
    }

    #[test]
    fn window_xor_matches_slice() {
        let mut rng = tape(9, "window");
        let pad = BitString::random(300, &mut rng);
        for (start, len) in [(0, 70), (64, 100), (5, 130), (128, 172), (0, 0)] {
            let chunk = BitString::random(len, &mut rng);
            let mut got = chunk.clone();
            got.xor_window_assign(&pad, start).unwrap();
            assert_eq!(got, chunk.xor(&pad.slice(start, len)).unwrap());
        }
        assert!(BitString::zeros(10).xor_window_assign(&pad, 295).is_err());
    }

    #[test]
    fn xor_rejects_length_mismatch() {
        assert_eq!(
            b("10").xor(&b("101")),
            Err(Error::LengthMismatch {
                expected: 2,
                actual: 3
            })
        );
    }

    #[test]
    fn weight_examples() {
        assert_eq!(b("0000").weight(), 0);
        assert_eq!(b("1011").weight(), 3);
        assert_eq!(BitString::ones(131).weight(), 131);
    }

    #[test]
    fn mat_vec_examples() {
        // (1,1,0).(1,0,1) = 1 and (0,1,1).(1,0,1) = 1
        let m = Gf2Matrix::from_binary_rows(&["110", "011"]).unwrap();
        assert_eq!(m.mat_vec(&b("101")).unwrap(), b("11"));
        assert_eq!(m.mat_vec(&b("100")).unwrap(), b("10"));
        let v = b("10110");
        assert_eq!(Gf2Matrix::identity(5).mat_vec(&v).unwrap(), v);
        assert!(Gf2Matrix::zeros(3, 5).mat_vec(&v).unwrap().is_zero());
        assert!(m.mat_vec(&v).is_err());
    }

    #[test]
    fn nullspace_of_identity_is_empty() {
        let v = Gf2Matrix::identity(6).nullspace();
        assert_eq!(v.rows(), 6);
        assert_eq!(v.cols(), 0);
    }

    #[test]
    fn nullspace_small_example() {
        let m = Gf2Matrix::from_binary_rows(&["110", "011"]).unwrap();
        let v = m.nullspace();
        assert_eq!(v.cols(), 1);
        assert_eq!(v.column(0), b("111"));
    }

    #[test]
    fn rank_examples() {
        assert_eq!(Gf2Matrix::identity(7).rank(), 7);
        assert_eq!(Gf2Matrix::zeros(4, 9).rank(), 0);
        let m = Gf2Matrix::from_binary_rows(&["110", "011", "101"]).unwrap();
        assert_eq!(m.rank(), 2);
    }

    #[test]
    fn hex_round_trip_and_format() {
        let s = BitString::from_u64(12, 0x0f3a);
        assert_eq!(s.to_hex(), "12:0f3a");
        assert_eq!(BitString::from_hex("12:0f3a").unwrap(), s);
        assert_eq!(BitString::zeros(0).to_hex(), "0:");
        assert_eq!(BitString::from_hex("0:").unwrap().len(), 0);
        // bit 0 is the least significant bit of the value
        assert_eq!(b("1").to_hex(), "1:01");
        assert_eq!(b("00000000 1").to_hex(), "9:0100");
    }

    #[test]
    fn hex_rejects_bad_input() {
        assert!(BitString::from_hex("12:1f3a").is_err(), "bit beyond len");
        assert!(BitString::from_hex("12:0F3A").is_err(), "uppercase");
        assert!(BitString::from_hex("12:f3a").is_err(), "digit count");
        assert!(BitString::from_hex("0f3a").is_err(), "missing prefix");
    }

    #[test]
    fn slice_reverse_extend() {
        let mut rng = tape(1, "bits");
        let s = BitString::random(300, &mut rng);
        for (start, len) in [(0, 300), (5, 70), (63, 65), (64, 64), (299, 1), (100, 0)] {
            let sl = s.slice(start, len);
            for i in 0..len {
                assert_eq!(sl.get(i), s.get(start + i));
            }
        }
        let r = s.reversed();
        for i in 0..300 {
            assert_eq!(r.get(i), s.get(299 - i));
        }
        let mut a = s.slice(0, 37);
        a.extend_from(&s.slice(37, 263));
        assert_eq!(a, s);
    }
}
