//! Trusted-relay chains with delayed privacy amplification.
//!
//! Every hop runs reconciliation only. Relays swap keys by announcing the XOR
//! of their two hop keys, so the end users share the first hop's reconciled
//! string `a`. Privacy amplification is applied afterwards by the end users
//! alone with a pad the relays never see.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::bits::BitString;
use crate::error::{Error, Result};
use crate::hashing::HashSeedSource;
use crate::privacy_amp::{PadStore, SecurityLedger};
use crate::rates;
use crate::reconciliation;
use crate::rng;
use crate::session::{self, ChannelModel, SessionParams};
use crate::stats::BinomialEstimate;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Hop {
    pub params: SessionParams,
    pub channel: ChannelModel,
}

/// Privacy amplification settings used by the end users.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EndToEndParams {
    pub predicted_e_p: f64,
    pub eps_pa: f64,
    pub eps_total: f64,
}

impl Default for EndToEndParams {
    fn default() -> Self {
        EndToEndParams {
            predicted_e_p: 0.0,
            eps_pa: 1e-10,
            eps_total: 1e-6,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RelayChain {
    /// Alice, the relays, then Bob.
    pub nodes: Vec<String>,
    /// One hop per adjacent pair of nodes.
    pub hops: Vec<Hop>,
    /// Honesty flag per relay; empty means all honest.
    #[serde(default)]
    pub honest: Vec<bool>,
    /// Relays are handed the end-to-end pad (worst case).
    #[serde(default)]
    pub pad_leaked: bool,
    /// An end user's key is exposed to the relays.
    #[serde(default)]
    pub compromised_endpoint: bool,
    #[serde(default)]
    pub end_to_end: EndToEndParams,
}

impl RelayChain {
    /// A linear chain of `relays` relays with identical hops.
    pub fn uniform(relays: usize, params: SessionParams, channel: ChannelModel) -> Self {
        let mut nodes = vec!["alice".to_string()];
        nodes.extend((1..=relays).map(|i| format!("relay-{i}")));
        nodes.push("bob".to_string());
        let hops = (0..=relays)
            .map(|i| Hop {
                params: SessionParams {
                    rng_seed: rng::child_seed(params.rng_seed, "relay/hop-rng", i as u64),
                    ..params.clone()
                },
                channel: ChannelModel {
                    seed: rng::child_seed(channel.seed, "relay/hop-channel", i as u64),
                    ..channel.clone()
                },
            })
            .collect();
        RelayChain {
            nodes,
            hops,
            honest: vec![],
            pad_leaked: false,
            compromised_endpoint: false,
            end_to_end: EndToEndParams::default(),
        }
    }

    pub fn relays(&self) -> usize {
        self.nodes.len().saturating_sub(2)
    }

    pub fn validate(&self) -> Result<()> {
        if self.nodes.len() < 3 {
            return Err(Error::InvalidInput("a chain needs at least one relay".into()));
        }
        if self.hops.len() != self.nodes.len() - 1 {
            return Err(Error::InvalidInput(format!(
                "{} nodes need {} hops, got {}",
                self.nodes.len(),
                self.nodes.len() - 1,
                self.hops.len()
            )));
        }
        if !self.honest.is_empty() && self.honest.len() != self.relays() {
            return Err(Error::InvalidInput("one honesty flag per relay".into()));
        }
        for hop in &self.hops {
            hop.params.validate()?;
            hop.channel.validate()?;
        }
        Ok(())
    }

    fn is_honest(&self, relay: usize) -> bool {
        self.honest.get(relay).copied().unwrap_or(true)
    }
}

/// Per-hop summary of an information-reconciliation-only session.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HopReport {
    pub n_key: usize,
    pub e_b_observed: f64,
    pub disclosed_bits: usize,
    pub verified: bool,
    pub aborted: Option<String>,
}

/// Sift, estimate, reconcile and verify one hop. Returns the shared
/// reconciled key when the hop succeeds.
pub fn reconcile_hop(hop: &Hop) -> Result<(Option<BitString>, HopReport)> {
    let p = &hop.params;
    p.validate()?;
    let raw = session::simulate_raw(p, &hop.channel)?;
    let mut sampler = rng::tape(p.rng_seed, "session/sample");
    let est = session::estimate_params(&raw.alice, &raw.bob, None, p.sample_fraction, p.eps_pe, &mut sampler)?;
    let a = session::remove_sampled(&raw.alice, &est.sampled);
    let b = session::remove_sampled(&raw.bob, &est.sampled);
    let mut report = HopReport {
        n_key: a.len(),
        e_b_observed: est.e_b,
        disclosed_bits: 0,
        verified: false,
        aborted: None,
    };
    let plan = match session::plan_reconciliation(
        a.len(),
        est.e_b.max(p.predicted_e_b),
        p.eps_ec,
        p.ir_segment_max,
        p.ir_work_log2,
    ) {
        Ok(plan) => plan,
        Err(e) => {
            report.aborted = Some(session::abort_reason(&e).to_string());
            return Ok((None, report));
        }
    };
    report.disclosed_bits = plan.syndrome_bits() + p.tag_bits;
    let mut matrices = HashSeedSource::from_seed(p.rng_seed, "session/ir-matrices");
    let ir = session::reconcile_segments(&a, &b, &plan, &mut matrices, None)?;
    if ir.failure.is_some() {
        report.aborted = Some("reconciliation-failed".into());
        return Ok((None, report));
    }
    let mut tags = HashSeedSource::from_seed(p.rng_seed, "session/verify");
    report.verified = reconciliation::verify(&a, &ir.corrected, p.tag_bits, &mut tags)?;
    if !report.verified {
        report.aborted = Some("verification-failed".into());
        return Ok((None, report));
    }
    Ok((Some(a), report))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Announcement {
    pub relay: String,
    /// XOR of the relay's left and right hop keys.
    pub bits: BitString,
}

/// Outcome of the key-swapping phase.
#[derive(Clone, Debug)]
pub struct ChainRun {
    pub hops: Vec<HopReport>,
    /// Hop keys truncated to the shortest hop.
    pub hop_keys: Vec<BitString>,
    pub announcements: Vec<Announcement>,
    /// `a`, held by Alice directly.
    pub alice_key: BitString,
    /// `a` as Bob recovers it from his hop key and the announcements.
    pub bob_key: BitString,
    pub aborted: Option<String>,
}

impl ChainRun {
    pub fn len(&self) -> usize {
        self.alice_key.len()
    }

    pub fn is_empty(&self) -> bool {
        self.alice_key.is_empty()
    }

    /// `k_first ^ (XOR of announcements) == k_last`.
    pub fn telescopes(&self) -> bool {
        let (Some(first), Some(last)) = (self.hop_keys.first(), self.hop_keys.last()) else {
            return false;
        };
        let mut acc = first.clone();
        for a in &self.announcements {
            if acc.xor_assign(&a.bits).is_err() {
                return false;
            }
        }
        &acc == last
    }

    /// What a relay can rebuild: its own hop key folded with announcements
    /// back to the first hop.
    pub fn relay_reconstruction(&self, relay: usize) -> BitString {
        let mut acc = self.hop_keys[relay].clone();
        for a in self.announcements[..relay].iter().rev() {
            acc.xor_assign(&a.bits).expect("equal lengths");
        }
        acc
    }
}

/// Run every hop, truncate to the shortest hop key, and swap keys.
pub fn run_chain(chain: &RelayChain) -> Result<ChainRun> {
    chain.validate()?;
    let mut reports = Vec::with_capacity(chain.hops.len());
    let mut keys = Vec::with_capacity(chain.hops.len());
    let mut aborted = None;
    for (i, hop) in chain.hops.iter().enumerate() {
        let (key, report) = reconcile_hop(hop)?;
        if aborted.is_none() {
            if let Some(reason) = &report.aborted {
                aborted = Some(format!("hop {i}: {reason}"));
            }
        }
        reports.push(report);
        keys.extend(key);
    }
    if aborted.is_some() {
        return Ok(ChainRun {
            hops: reports,
            hop_keys: vec![],
            announcements: vec![],
            alice_key: BitString::zeros(0),
            bob_key: BitString::zeros(0),
            aborted,
        });
    }
    let len = keys.iter().map(|k| k.len()).min().unwrap_or(0);
    let keys: Vec<BitString> = keys.iter().map(|k| k.slice(0, len)).collect();
    let announcements: Vec<Announcement> = (1..keys.len())
        .map(|i| {
            Ok(Announcement {
                relay: chain.nodes[i].clone(),
                bits: keys[i - 1].xor(&keys[i])?,
            })
        })
        .collect::<Result<_>>()?;
    let mut bob_key = keys.last().expect("at least two hops").clone();
    for a in &announcements {
        bob_key.xor_assign(&a.bits)?;
    }
    Ok(ChainRun {
        hops: reports,
        alice_key: keys[0].clone(),
        bob_key,
        hop_keys: keys,
        announcements,
        aborted: None,
    })
}

/// End users' keys after delayed privacy amplification.
#[derive(Clone, Debug)]
pub struct EndToEndKeys {
    pub alice: BitString,
    pub bob: BitString,
    pub pad: BitString,
    pub matrix_id: String,
    pub seed_bits: usize,
    pub disclosed_bits: usize,
    pub final_len: usize,
}

/// Stream privacy amplification by the end users: `a ^ d M` with a fresh
/// private seed, charging the phase-error seed and every hop's disclosure.
/// The full padded string is returned; the first `final_len` bits are key.
pub fn end_to_end_pa(
    chain: &RelayChain,
    run: &ChainRun,
    store: &mut PadStore,
    ledger: &SecurityLedger,
) -> Result<EndToEndKeys> {
    if let Some(reason) = &run.aborted {
        return Err(Error::InvalidInput(format!("chain aborted: {reason}")));
    }
    let n = run.len();
    let seed_bits = rates::seed_length(n, chain.end_to_end.predicted_e_p)?;
    let disclosed: usize = run.hops.iter().map(|h| h.disclosed_bits).sum();
    let rows = seed_bits + disclosed;
    if rows >= n {
        return Err(Error::PadShortfall(format!(
            "{rows} seed bits leave no key from {n} reconciled bits"
        )));
    }
    ledger.register(store.matrix_id(), chain.end_to_end.eps_pa, chain.end_to_end.eps_total)?;
    ledger.draw(store.matrix_id())?;
    let pad = store.provision(rows, n)?;
    Ok(EndToEndKeys {
        alice: run.alice_key.xor(pad.pad())?,
        bob: run.bob_key.xor(pad.pad())?,
        pad: pad.pad().clone(),
        matrix_id: store.matrix_id().to_string(),
        seed_bits,
        disclosed_bits: disclosed,
        final_len: n - rows,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RelayKnowledge {
    pub relay: String,
    pub honest: bool,
    /// Bits of `a` the relay can rebuild from its hop key and announcements.
    pub reconciled_bits_known: usize,
    pub pad_bits_known: usize,
    /// Agreement between the relay's best guess and the final key.
    pub final_match: BinomialEstimate,
    /// (reconciled, final) pairs under each matrix the relay has observed.
    pub exposure_pairs: BTreeMap<String, u64>,
}

/// Per-relay summary for one or more completed sessions. The relay's guess
/// of the final key is its reconstruction of `a`, XORed with the pad only
/// when the pad leaked or an endpoint is compromised.
pub fn relay_adversary_report(
    chain: &RelayChain,
    sessions: &[(ChainRun, EndToEndKeys)],
) -> Vec<RelayKnowledge> {
    (0..chain.relays())
        .map(|r| {
            let mut hits = 0u64;
            let mut trials = 0u64;
            let mut known = 0;
            let mut exposure = BTreeMap::new();
            let sees_pad = chain.pad_leaked || chain.compromised_endpoint;
            for (run, keys) in sessions {
                let mut guess = run.relay_reconstruction(r + 1);
                if sees_pad {
                    guess.xor_assign(&keys.pad).expect("equal lengths");
                }
                let len = keys.final_len;
                let diff = guess
                    .slice(0, len)
                    .hamming_distance(&keys.alice.slice(0, len))
                    .expect("equal lengths");
                hits += (len - diff) as u64;
                trials += len as u64;
                known = run.len();
                *exposure.entry(keys.matrix_id.clone()).or_insert(0u64) += 1;
            }
            RelayKnowledge {
                relay: chain.nodes[r + 1].clone(),
                honest: chain.is_honest(r),
                reconciled_bits_known: known,
                pad_bits_known: if sees_pad {
                    sessions.last().map_or(0, |(_, k)| k.pad.len())
                } else {
                    0
                },
                final_match: BinomialEstimate::new(hits, trials),
                exposure_pairs: exposure,
            }
        })
        .collect()
}

/// Run `sessions` chains with fresh per-session randomness, one reused end
/// matrix and a fresh seed each time.
pub fn run_campaign(
    chain: &RelayChain,
    sessions: usize,
    store: &mut PadStore,
    ledger: &SecurityLedger,
    master_seed: u64,
) -> Result<Vec<(ChainRun, EndToEndKeys)>> {
    let mut out = Vec::with_capacity(sessions);
    for s in 0..sessions {
        let mut c = chain.clone();
        for (i, hop) in c.hops.iter_mut().enumerate() {
            let idx = (s * chain.hops.len() + i) as u64;
            hop.params.rng_seed = rng::child_seed(master_seed, "relay/campaign-rng", idx);
            hop.channel.seed = rng::child_seed(master_seed, "relay/campaign-channel", idx);
        }
        let run = run_chain(&c)?;
        if run.aborted.is_some() {
            continue;
        }
        let keys = end_to_end_pa(&c, &run, store, ledger)?;
        out.push((run, keys));
    }
    Ok(out)
}

/// JSON run report.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RelayRunReport {
    pub nodes: Vec<String>,
    pub sessions: usize,
    pub telescoping: bool,
    pub endpoints_agree: bool,
    pub final_len: usize,
    pub hops: Vec<HopReport>,
    pub relays: Vec<RelayKnowledge>,
}

#[cfg(test)]
mod tests {
    use super::*;

    fn hop_params(n: usize) -> SessionParams {
        SessionParams {
            n_target: n,
            predicted_e_b: 0.0,
            predicted_e_p: 0.0,
            ..SessionParams::default()
        }
    }

    #[test]
    fn one_relay_noiseless() {
        let chain = RelayChain::uniform(1, hop_params(512), ChannelModel::new(0.0, 1));
        let run = run_chain(&chain).unwrap();
        assert!(run.aborted.is_none());
        assert_eq!(run.announcements.len(), 1);
        assert!(run.telescopes());
        assert_eq!(run.alice_key, run.bob_key);
        assert_eq!(run.relay_reconstruction(1), run.alice_key);
    }

    #[test]
    fn three_relays_noisy_hops() {
        let p = SessionParams {
            predicted_e_b: 0.01,
            ..hop_params(1024)
        };
        let chain = RelayChain::uniform(3, p, ChannelModel::new(0.01, 2));
        let run = run_chain(&chain).unwrap();
        assert!(run.aborted.is_none(), "{:?}", run.aborted);
        assert!(run.telescopes());
        assert_eq!(run.alice_key, run.bob_key);
        for r in 1..=3 {
            assert_eq!(run.relay_reconstruction(r), run.alice_key);
        }
    }

    #[test]
    fn delayed_pa_hides_final_key() {
        let chain = RelayChain::uniform(2, hop_params(4096), ChannelModel::new(0.0, 3));
        let mut store = PadStore::generate(4096, 4096, 3).unwrap();
        let ledger = SecurityLedger::new();
        let sessions = run_campaign(&chain, 4, &mut store, &ledger, 3).unwrap();
        assert_eq!(sessions.len(), 4);
        for (_, keys) in &sessions {
            assert_eq!(keys.alice, keys.bob);
        }
        let report = relay_adversary_report(&chain, &sessions);
        for r in &report {
            let m = &r.final_match;
            assert!(m.trials >= 10_000);
            assert!((m.rate() - 0.5).abs() <= 3.0 * m.sigma_at(0.5), "{}", m.rate());
            assert_eq!(r.pad_bits_known, 0);
            assert_eq!(r.exposure_pairs.values().sum::<u64>(), 4);
        }
        let leaked = RelayChain {
            pad_leaked: true,
            ..chain.clone()
        };
        for r in relay_adversary_report(&leaked, &sessions) {
            assert_eq!(r.final_match.rate(), 1.0);
        }
    }

    #[test]
    fn chain_validation() {
        let mut chain = RelayChain::uniform(1, hop_params(64), ChannelModel::new(0.0, 4));
        chain.hops.pop();
        assert!(run_chain(&chain).is_err());
        let scenario = serde_json::to_string(&RelayChain::uniform(1, hop_params(64), ChannelModel::new(0.0, 4))).unwrap();
        let back: RelayChain = serde_json::from_str(&scenario).unwrap();
        assert_eq!(back.relays(), 1);
    }
}
