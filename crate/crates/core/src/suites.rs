//! Monte-Carlo checks of the hashing and reconciliation failure bounds.
//!
//! Each check compares an empirical frequency against its bound and passes
//! when the frequency does not exceed the bound by more than three binomial
//! standard deviations evaluated at the bound.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hashing::{HashSeedSource, ToeplitzMatrix};
use crate::reconciliation::{self, TypicalErrorSet};
use crate::stats::BinomialEstimate;
use crate::{rng, BitString};

/// Largest number of trials any single check may run.
pub const TRIAL_CAP: usize = 10_000_000;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundCheck {
    pub name: String,
    pub bound: f64,
    pub observed: f64,
    pub hits: u64,
    pub trials: u64,
    /// Binomial standard deviation at the bound.
    pub sigma: f64,
    /// `(bound - observed) / sigma`; negative when the frequency is above the bound.
    pub margin_sigmas: f64,
    pub holds: bool,
    /// Deliberately undersized parameters; a violation is expected.
    pub forced: bool,
}

impl BoundCheck {
    pub fn new(name: impl Into<String>, bound: f64, est: BinomialEstimate) -> Self {
        let sigma = est.sigma_at(bound);
        let observed = est.rate();
        let margin_sigmas = if sigma > 0.0 {
            (bound - observed) / sigma
        } else if observed <= bound {
            f64::INFINITY
        } else {
            f64::NEG_INFINITY
        };
        BoundCheck {
            name: name.into(),
            bound,
            observed,
            hits: est.hits,
            trials: est.trials,
            sigma,
            margin_sigmas,
            holds: est.within(bound),
            forced: false,
        }
    }
}

fn check_trials(trials: usize) -> Result<()> {
    if trials == 0 || trials > TRIAL_CAP {
        return Err(Error::InvalidInput(format!(
            "trial count {trials} outside 1..={TRIAL_CAP}"
        )));
    }
    Ok(())
}

/// Collision frequency of a random `m x n` Toeplitz hash on a random pair of
/// distinct inputs, drawn afresh each trial, against `2^-m`.
pub fn collision(m: usize, n: usize, trials: usize, seed: u64) -> Result<BoundCheck> {
    check_trials(trials)?;
    let mut strings = rng::tape(seed, "suite/collision/strings");
    let mut src = HashSeedSource::from_seed(seed, "suite/collision/matrices");
    let mut hits = 0u64;
    for _ in 0..trials {
        let mut d = BitString::random(n, &mut strings);
        while d.is_zero() {
            d = BitString::random(n, &mut strings);
        }
        let t = ToeplitzMatrix::generate(m, n, &mut src)?;
        if t.apply(&d)?.is_zero() {
            hits += 1;
        }
    }
    Ok(BoundCheck::new(
        format!("collision m={m} n={n}"),
        2f64.powi(-(m as i32)),
        BinomialEstimate::new(hits, trials as u64),
    ))
}

/// The planted-error set used by the decode and reuse checks: 16-bit strings
/// of weight at most two.
pub fn planted_set() -> TypicalErrorSet {
    TypicalErrorSet::up_to(16, 2).expect("valid set")
}

/// `ceil(log2 |T|)` for a set.
pub fn set_bits(set: &TypicalErrorSet) -> usize {
    set.log2_cardinality().ceil() as usize
}

/// Planted-error decode failures with `I_ec = ceil(log|T|) + extra` against
/// `2^-extra`. With `forced`, the syndrome is `shortfall` bits below
/// `ceil(log|T|)` while the target stays at `2^-extra`.
pub fn decode(extra: usize, trials: usize, forced: Option<usize>, seed: u64) -> Result<BoundCheck> {
    check_trials(trials)?;
    let set = planted_set();
    let base = set_bits(&set);
    let i_ec = match forced {
        Some(shortfall) => base.checked_sub(shortfall).filter(|&r| r > 0).ok_or_else(|| {
            Error::InvalidInput(format!("shortfall {shortfall} leaves no syndrome bits"))
        })?,
        None => base + extra,
    };
    let est = reconciliation::decode_failure_experiment(&set, i_ec, trials, seed)?;
    let mut check = BoundCheck::new(
        format!("decode n=16 w<=2 I_ec={i_ec}"),
        2f64.powi(-(extra as i32)),
        est,
    );
    check.forced = forced.is_some();
    Ok(check)
}

/// One matrix reused over `m` committed patterns: any-failure frequency
/// against `m` times an independently estimated single-pattern rate.
pub fn reuse(m: usize, draws: usize, single_trials: usize, extra: usize, seed: u64) -> Result<BoundCheck> {
    check_trials(draws)?;
    check_trials(single_trials)?;
    if m == 0 {
        return Err(Error::InvalidInput("need at least one pattern".into()));
    }
    let set = planted_set();
    let i_ec = set_bits(&set) + extra;
    let report = reconciliation::reuse_experiment(&set, i_ec, m, draws, single_trials, seed)?;
    Ok(BoundCheck::new(
        format!("reuse m={m} I_ec={i_ec} eps1={:.3e}", report.single.rate()),
        report.union_bound,
        report.any_failure,
    ))
}

/// False-pass frequency of tag verification on unequal strings against
/// `2^-tag_bits`.
pub fn verify(n: usize, tag_bits: usize, pairs: usize, seed: u64) -> Result<BoundCheck> {
    check_trials(pairs)?;
    let est = reconciliation::verify_false_pass_experiment(n, tag_bits, pairs, seed)?;
    Ok(BoundCheck::new(
        format!("verify n={n} tag={tag_bits}"),
        2f64.powi(-(tag_bits as i32)),
        est,
    ))
}

/// Sizes for a full run of the suites.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SuiteConfig {
    pub collision_trials: usize,
    pub decode_trials: usize,
    pub decode_extra: usize,
    pub reuse_patterns: usize,
    pub reuse_draws: usize,
    pub reuse_single_trials: usize,
    pub reuse_extra: usize,
    pub verify_pairs: usize,
    /// Run the decode check with a syndrome this many bits short of `ceil(log|T|)`.
    pub forced_shortfall: Option<usize>,
}

impl Default for SuiteConfig {
    fn default() -> Self {
        SuiteConfig {
            collision_trials: 100_000,
            decode_trials: 100_000,
            decode_extra: 10,
            reuse_patterns: 16,
            reuse_draws: 10_000,
            reuse_single_trials: 100_000,
            reuse_extra: 6,
            verify_pairs: 100_000,
            forced_shortfall: None,
        }
    }
}

impl SuiteConfig {
    /// Multiply every trial count by `factor`, keeping at least one trial.
    pub fn scaled(mut self, factor: f64) -> Result<Self> {
        if !(factor > 0.0 && factor.is_finite()) {
            return Err(Error::Domain {
                name: "scale",
                value: factor,
                reason: "must be positive",
            });
        }
        let s = |v: usize| ((v as f64 * factor).round() as usize).max(1);
        self.collision_trials = s(self.collision_trials);
        self.decode_trials = s(self.decode_trials);
        self.reuse_draws = s(self.reuse_draws);
        self.reuse_single_trials = s(self.reuse_single_trials);
        self.verify_pairs = s(self.verify_pairs);
        Ok(self)
    }
}

/// Every check, each on its own derived seed.
pub fn run_all(cfg: &SuiteConfig, seed: u64) -> Result<Vec<BoundCheck>> {
    let sub = |i| rng::child_seed(seed, "suites", i);
    let mut out = vec![
        collision(8, 32, cfg.collision_trials, sub(0))?,
        decode(cfg.decode_extra, cfg.decode_trials, None, sub(1))?,
    ];
    if let Some(shortfall) = cfg.forced_shortfall {
        out.push(decode(cfg.decode_extra, cfg.decode_trials, Some(shortfall), sub(2))?);
    }
    out.push(reuse(
        cfg.reuse_patterns,
        cfg.reuse_draws,
        cfg.reuse_single_trials,
        cfg.reuse_extra,
        sub(3),
    )?);
    out.push(verify(64, 8, cfg.verify_pairs, sub(4))?);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn margins_are_signed() {
        let c = BoundCheck::new("x", 0.1, BinomialEstimate::new(50, 100));
        assert!(c.margin_sigmas < 0.0);
        assert!(!c.holds);
        let c = BoundCheck::new("x", 0.5, BinomialEstimate::new(10, 100));
        assert!(c.margin_sigmas > 3.0);
        assert!(c.holds);
    }

    #[test]
    fn small_suites_hold() {
        let cfg = SuiteConfig::default().scaled(0.02).unwrap();
        let checks = run_all(&cfg, 7).unwrap();
        assert_eq!(checks.len(), 4);
        assert!(checks.iter().all(|c| c.holds), "{checks:?}");
    }

    #[test]
    fn forced_failure_is_visible() {
        let c = decode(10, 2000, Some(2), 3).unwrap();
        assert!(c.forced);
        assert!(!c.holds);
        assert!(c.observed > 100.0 * c.bound);
    }

    #[test]
    fn caps_and_domains() {
        assert!(collision(8, 32, 0, 1).is_err());
        assert!(decode(10, 10, Some(100), 1).is_err());
        assert!(SuiteConfig::default().scaled(0.0).is_err());
    }
}
