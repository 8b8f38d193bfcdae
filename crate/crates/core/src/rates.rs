//! Key-rate formulas, typical-set cardinality bounds, error-correction cost
//! and failure-probability bookkeeping. All logarithms are base 2.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Slack used when rounding a real bit count up to whole bits, so values such
/// as `30.000000000000004` still round to 30.
const CEIL_SLACK: f64 = 1e-9;

fn check_probability(name: &'static str, x: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&x) {
        return Err(Error::Domain {
            name,
            value: x,
            reason: "must lie in [0, 1]",
        });
    }
    Ok(())
}

/// Round a nonnegative real bit count up to an integer.
pub fn ceil_bits(x: f64) -> u64 {
    if x <= 0.0 {
        0
    } else {
        (x - CEIL_SLACK).ceil().max(0.0) as u64
    }
}

/// `h(x) = -x log x - (1 - x) log (1 - x)`, with `h(0) = h(1) = 0`.
pub fn binary_entropy(x: f64) -> Result<f64> {
    check_probability("x", x)?;
    if x == 0.0 || x == 1.0 {
        return Ok(0.0);
    }
    Ok(-x * x.log2() - (1.0 - x) * (1.0 - x).log2())
}

fn h(x: f64) -> f64 {
    binary_entropy(x).expect("probability checked by caller")
}

/// Bit- and phase-error rates.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ErrorRates {
    pub e_b: f64,
    pub e_p: f64,
}

impl ErrorRates {
    pub fn new(e_b: f64, e_p: f64) -> Result<Self> {
        check_probability("e_b", e_b)?;
        check_probability("e_p", e_p)?;
        Ok(ErrorRates { e_b, e_p })
    }
}

/// `1 - h(e_b) - h(e_p)`. Negative values are returned as is.
pub fn shor_preskill_rate(r: &ErrorRates) -> f64 {
    1.0 - h(r.e_b) - h(r.e_p)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GllpTag {
    /// Fraction of sifted bits carrying this tag.
    pub q: f64,
    /// Phase-error rate of the tagged bits.
    pub e_p: f64,
}

/// Tagged phase-error profile; fractions sum to one.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GllpTagProfile {
    pub tags: Vec<GllpTag>,
}

impl GllpTagProfile {
    pub const SUM_TOLERANCE: f64 = 1e-12;

    pub fn new(tags: Vec<GllpTag>) -> Result<Self> {
        let p = GllpTagProfile { tags };
        p.validate()?;
        Ok(p)
    }

    pub fn single(e_p: f64) -> Result<Self> {
        Self::new(vec![GllpTag { q: 1.0, e_p }])
    }

    pub fn validate(&self) -> Result<()> {
        if self.tags.is_empty() {
            return Err(Error::InvalidInput("tag profile is empty".into()));
        }
        for t in &self.tags {
            check_probability("q", t.q)?;
            check_probability("e_p", t.e_p)?;
        }
        let sum: f64 = self.tags.iter().map(|t| t.q).sum();
        if (sum - 1.0).abs() > Self::SUM_TOLERANCE {
            return Err(Error::Domain {
                name: "sum(q)",
                value: sum,
                reason: "tag fractions must sum to 1",
            });
        }
        Ok(())
    }

    /// `sum_g q_g h(e_p^g)`.
    pub fn phase_entropy(&self) -> f64 {
        self.tags.iter().map(|t| t.q * h(t.e_p)).sum()
    }
}

/// `-h(e_b) + sum_g q_g [1 - h(e_p^g)]`.
pub fn gllp_rate(e_b: f64, tags: &GllpTagProfile) -> Result<f64> {
    check_probability("e_b", e_b)?;
    tags.validate()?;
    Ok(-h(e_b) + tags.tags.iter().map(|t| t.q * (1.0 - h(t.e_p))).sum::<f64>())
}

/// Stream-PA seed fraction under the tagged model: `sum_g q_g h(e_p^g)`, plus
/// `h(e_b)` when reconciliation syndromes travel unencrypted.
pub fn gllp_seed_fraction(e_b: f64, tags: &GllpTagProfile, ir_encrypted: bool) -> Result<f64> {
    check_probability("e_b", e_b)?;
    tags.validate()?;
    let base = tags.phase_entropy();
    Ok(if ir_encrypted { base } else { base + h(e_b) })
}

/// Stream-PA seed length `ceil(n h(e_p))`.
pub fn seed_length(n: usize, e_p: f64) -> Result<usize> {
    Ok(ceil_bits(n as f64 * binary_entropy(e_p)?) as usize)
}

/// `log2` of the bound `|D(c)| < 2^{n h(r) + c |log(r / (1 - r))|}` on strings
/// whose weight lies in `[0, nr + c]` (for `r <= 1/2`) or `[nr - c, n]`.
pub fn cardinality_bound_general(n: usize, r: f64, c: f64) -> Result<f64> {
    if n == 0 {
        return Err(Error::Domain {
            name: "n",
            value: 0.0,
            reason: "must be at least 1",
        });
    }
    if !(r > 0.0 && r < 1.0) {
        return Err(Error::Domain {
            name: "r",
            value: r,
            reason: "must lie in (0, 1)",
        });
    }
    if c.is_nan() || c < 0.0 {
        return Err(Error::Domain {
            name: "c",
            value: c,
            reason: "must be nonnegative",
        });
    }
    Ok(n as f64 * h(r) + c * (r / (1.0 - r)).log2().abs())
}

/// `log2` of the bound `|D(c)| < 2^{n h(r + c/n)}` on strings of weight in
/// `[0, nr + c)`; valid only when `r + c/n <= 1/3`.
pub fn cardinality_bound_tight(n: usize, r: f64, c: f64) -> Result<f64> {
    if n == 0 {
        return Err(Error::Domain {
            name: "n",
            value: 0.0,
            reason: "must be at least 1",
        });
    }
    if r.is_nan() || r < 0.0 {
        return Err(Error::Domain {
            name: "r",
            value: r,
            reason: "must be nonnegative",
        });
    }
    if c.is_nan() || c < 0.0 {
        return Err(Error::Domain {
            name: "c",
            value: c,
            reason: "must be nonnegative",
        });
    }
    let x = r + c / n as f64;
    if x > 1.0 / 3.0 + 1e-12 {
        return Err(Error::Domain {
            name: "r + c/n",
            value: x,
            reason: "tight cardinality bound requires r + c/n <= 1/3",
        });
    }
    Ok(n as f64 * h(x.min(1.0 / 3.0)))
}

/// Syndrome length `I_ec = ceil(log|T| - log eps_ec)`.
pub fn ec_cost(log_cardinality: f64, eps_ec: f64) -> Result<u64> {
    if !(eps_ec > 0.0 && eps_ec <= 1.0) {
        return Err(Error::Domain {
            name: "eps_ec",
            value: eps_ec,
            reason: "must lie in (0, 1]",
        });
    }
    if log_cardinality.is_nan() || log_cardinality < 0.0 {
        return Err(Error::Domain {
            name: "log_cardinality",
            value: log_cardinality,
            reason: "must be nonnegative",
        });
    }
    Ok(ceil_bits(log_cardinality - eps_ec.log2()))
}

/// Trace-distance soundness `sqrt(eps_f (2 - eps_f))` from a fidelity deficit.
pub fn compose_soundness(eps_f: f64) -> Result<f64> {
    check_probability("eps_f", eps_f)?;
    Ok((eps_f * (2.0 - eps_f)).sqrt())
}

/// Failure bound `min(1, m eps)` for a hashing matrix reused over `m` sessions.
pub fn reuse_budget(eps_per_session: f64, sessions: u64) -> Result<f64> {
    check_probability("eps_per_session", eps_per_session)?;
    if sessions == 0 {
        return Err(Error::InvalidInput("sessions must be at least 1".into()));
    }
    Ok((sessions as f64 * eps_per_session).min(1.0))
}

/// Largest `m` with `m eps <= total_budget`.
pub fn max_sessions(eps_per_session: f64, total_budget: f64) -> Result<u64> {
    check_probability("eps_per_session", eps_per_session)?;
    check_probability("total_budget", total_budget)?;
    if eps_per_session == 0.0 {
        return Ok(u64::MAX);
    }
    let m = (total_budget / eps_per_session + CEIL_SLACK).floor();
    Ok(if m >= u64::MAX as f64 { u64::MAX } else { m as u64 })
}

/// Finite-size deviation `c` of the error count, as a function of block size
/// and parameter-estimation failure probability.
pub trait Deviation: Send + Sync {
    fn deviation(&self, n: usize, eps_pe: f64) -> f64;
}

/// `c(n, eps) = sqrt(n ln(1/eps) / 2)`, the Hoeffding deviation of a count.
#[derive(Clone, Copy, Debug, Default)]
pub struct Hoeffding;

impl Deviation for Hoeffding {
    fn deviation(&self, n: usize, eps_pe: f64) -> f64 {
        (n as f64 * (1.0 / eps_pe).ln() / 2.0).sqrt()
    }
}

/// Default deviation function.
pub fn deviation(n: usize, eps_pe: f64) -> Result<f64> {
    if !(eps_pe > 0.0 && eps_pe <= 1.0) {
        return Err(Error::Domain {
            name: "eps_pe",
            value: eps_pe,
            reason: "must lie in (0, 1]",
        });
    }
    Ok(Hoeffding.deviation(n, eps_pe))
}
