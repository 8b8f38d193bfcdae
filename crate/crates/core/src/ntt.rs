//! Exact cyclic convolution over Z_p with p = 15 * 2^27 + 1.
//!
//! Inputs are 0/1 sequences, so every convolution coefficient is a count no
//! larger than the shorter input length. As long as that count stays below
//! `MODULUS` the residue equals the integer and its parity is exact.

pub const MODULUS: u64 = 2_013_265_921;
const GENERATOR: u64 = 31;
/// Largest supported transform length is `2^MAX_LOG_LEN`.
pub const MAX_LOG_LEN: u32 = 27;

fn pow_mod(mut base: u64, mut exp: u64) -> u64 {
    let mut acc = 1u64;
    base %= MODULUS;
    while exp > 0 {
        if exp & 1 == 1 {
            acc = acc * base % MODULUS;
        }
        base = base * base % MODULUS;
        exp >>= 1;
    }
    acc
}

fn transform(a: &mut [u32], invert: bool) {
    let n = a.len();
    debug_assert!(n.is_power_of_two());
    let mut j = 0usize;
    for i in 1..n {
        let mut bit = n >> 1;
        while j & bit != 0 {
            j ^= bit;
            bit >>= 1;
        }
        j |= bit;
        if i < j {
            a.swap(i, j);
        }
    }
    let mut twiddles: Vec<u32> = Vec::with_capacity(n / 2);
    let mut len = 2;
    while len <= n {
        let mut w = pow_mod(GENERATOR, (MODULUS - 1) / len as u64);
        if invert {
            w = pow_mod(w, MODULUS - 2);
        }
        let half = len / 2;
        twiddles.clear();
        let mut cur = 1u64;
        for _ in 0..half {
            twiddles.push(cur as u32);
            cur = cur * w % MODULUS;
        }
        for block in a.chunks_exact_mut(len) {
            let (lo, hi) = block.split_at_mut(half);
            for ((x, y), &t) in lo.iter_mut().zip(hi.iter_mut()).zip(&twiddles) {
                let u = *x as u64;
                let v = *y as u64 * t as u64 % MODULUS;
                let s = u + v;
                *x = if s >= MODULUS { s - MODULUS } else { s } as u32;
                *y = if u >= v { u - v } else { u + MODULUS - v } as u32;
            }
        }
        len <<= 1;
    }
    if invert {
        let inv_n = pow_mod(n as u64, MODULUS - 2);
        for x in a.iter_mut() {
            *x = (*x as u64 * inv_n % MODULUS) as u32;
        }
    }
}

/// Cyclic convolution of `a` and `b` (both already of power-of-two length `L`).
pub fn cyclic_convolution(mut a: Vec<u32>, mut b: Vec<u32>) -> Vec<u32> {
    assert_eq!(a.len(), b.len());
    assert!(a.len().trailing_zeros() <= MAX_LOG_LEN);
    transform(&mut a, false);
    transform(&mut b, false);
    for (x, y) in a.iter_mut().zip(&b) {
        *x = (*x as u64 * *y as u64 % MODULUS) as u32;
    }
    transform(&mut a, true);
    a
}
