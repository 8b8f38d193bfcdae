//! Small statistics helpers: binomial estimates, exact binomial counts, and
//! least-squares fits.

use serde::{Deserialize, Serialize};

/// Number of successes out of a number of Bernoulli trials.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BinomialEstimate {
    pub hits: u64,
    pub trials: u64,
}

impl BinomialEstimate {
    pub fn new(hits: u64, trials: u64) -> Self {
        BinomialEstimate { hits, trials }
    }

    pub fn rate(&self) -> f64 {
        if self.trials == 0 {
            0.0
        } else {
            self.hits as f64 / self.trials as f64
        }
    }

    /// Standard error of the observed rate.
    pub fn sigma(&self) -> f64 {
        self.sigma_at(self.rate())
    }

    /// Standard error if the true rate were `p`.
    pub fn sigma_at(&self, p: f64) -> f64 {
        if self.trials == 0 {
            return f64::INFINITY;
        }
        (p * (1.0 - p) / self.trials as f64).sqrt()
    }

    /// Three-sigma half-width around the observed rate.
    pub fn half_width(&self) -> f64 {
        3.0 * self.sigma()
    }

    /// `rate <= bound + 3 sigma`, sigma evaluated at the bound.
    pub fn within(&self, bound: f64) -> bool {
        self.rate() <= bound + 3.0 * self.sigma_at(bound.min(1.0))
    }
}

/// Exact binomial coefficient; panics on overflow of `u128`.
pub fn binomial(n: u64, k: u64) -> u128 {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    let mut acc: u128 = 1;
    for i in 0..k {
        acc = acc * (n - i) as u128 / (i + 1) as u128;
    }
    acc
}

/// `sum_{k=lo}^{hi} C(n, k)`.
pub fn binomial_range_count(n: u64, lo: u64, hi: u64) -> u128 {
    (lo..=hi.min(n)).map(|k| binomial(n, k)).sum()
}

/// `Pr[Bin(n, p) > t]`.
pub fn binomial_upper_tail(n: u64, p: f64, t: u64) -> f64 {
    if t >= n {
        return 0.0;
    }
    if p <= 0.0 {
        return 0.0;
    }
    if p >= 1.0 {
        return 1.0;
    }
    let (lp, lq) = (p.ln(), (1.0 - p).ln());
    let mut ln_c = 0.0f64;
    let mut tail = 0.0;
    for k in 0..=n {
        if k > 0 {
            ln_c += ((n - k + 1) as f64).ln() - (k as f64).ln();
        }
        if k > t {
            tail += (ln_c + k as f64 * lp + (n - k) as f64 * lq).exp();
        }
    }
    tail.min(1.0)
}

/// Ordinary least squares `y = a + b x`; returns `(a, b, r_squared)`.
pub fn linear_fit(xs: &[f64], ys: &[f64]) -> (f64, f64, f64) {
    assert_eq!(xs.len(), ys.len());
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    let syy: f64 = ys.iter().map(|y| (y - my) * (y - my)).sum();
    let b = sxy / sxx;
    let a = my - b * mx;
    let r2 = if syy == 0.0 { 1.0 } else { sxy * sxy / (sxx * syy) };
    (a, b, r2)
}
