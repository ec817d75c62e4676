use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{chain_rng, GaussianReference, LogWeight, PhaseDomain, SampleEnsemble, Target};
use crate::error::{param, Result};
use crate::hamiltonian::{ModelSpec, ZakharovState};
use crate::spectral::{FourierField, Lattice};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PcnConfig {
    pub beta: f64,
    pub steps: usize,
    pub burn_in: usize,
    pub thin: usize,
    pub seed: u64,
    #[serde(default)]
    pub chain: u64,
}

impl PcnConfig {
    pub fn new(beta: f64, steps: usize, burn_in: usize, thin: usize, seed: u64) -> Self {
        Self { beta, steps, burn_in, thin, seed, chain: 0 }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.beta > 0.0 && self.beta <= 1.0) {
            return param(format!("pCN step β = {} outside (0, 1]", self.beta));
        }
        if self.thin == 0 {
            return param("thinning must be at least 1");
        }
        Ok(())
    }

    /// Number of samples the chain will emit.
    pub fn sample_count(&self) -> usize {
        self.steps / self.thin
    }
}

/// Live chain: current point, counters and RNG stream.
#[derive(Clone, Debug)]
pub struct ChainState {
    pub current: FourierField,
    pub log_weight: f64,
    pub step: usize,
    pub accepted: usize,
    pub seed: u64,
    pub chain: u64,
    rng: rand_chacha::ChaCha8Rng,
}

impl ChainState {
    /// Start at the zero field, which lies in every domain with positive radii.
    pub fn start(target: &Target, seed: u64, chain: u64) -> Result<Self> {
        let r = &target.reference;
        let current = FourierField::zeros(r.lattice, r.real, r.has_zero_mode());
        Self::start_at(target, current, seed, chain)
    }

    pub fn start_at(target: &Target, current: FourierField, seed: u64, chain: u64) -> Result<Self> {
        if !target.domain.contains(&current) {
            return param("initial point is outside the domain");
        }
        let log_weight = target.weight.eval(&current)?;
        Ok(Self { current, log_weight, step: 0, accepted: 0, seed, chain, rng: chain_rng(seed, chain) })
    }

    /// One pCN proposal and Metropolis decision; returns whether it was accepted.
    pub fn step(&mut self, target: &Target, beta: f64) -> Result<bool> {
        let xi = target.reference.sample(&mut self.rng);
        let proposal = self.current.scale((1.0 - beta * beta).max(0.0).sqrt()).axpy(beta, &xi);
        // always draw the uniform so the stream does not depend on the outcome
        let u: f64 = self.rng.gen();
        self.step += 1;
        if !target.domain.contains(&proposal) {
            return Ok(false);
        }
        let phi = if target.weight.is_zero() { 0.0 } else { target.weight.eval(&proposal)? };
        let delta = phi - self.log_weight;
        if delta >= 0.0 || u.ln() < delta {
            self.current = proposal;
            self.log_weight = phi;
            self.accepted += 1;
            Ok(true)
        } else {
            Ok(false)
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ChainStats {
    pub chain: u64,
    pub burn_in_accepted: usize,
    pub burn_in_steps: usize,
    pub accepted: usize,
    pub steps: usize,
    pub warning: Option<String>,
}

impl ChainStats {
    pub fn acceptance(&self) -> f64 {
        if self.steps == 0 {
            0.0
        } else {
            self.accepted as f64 / self.steps as f64
        }
    }

    pub fn burn_in_acceptance(&self) -> f64 {
        if self.burn_in_steps == 0 {
            self.acceptance()
        } else {
            self.burn_in_accepted as f64 / self.burn_in_steps as f64
        }
    }
}

fn low_acceptance_warning(rate: f64, beta: f64) -> Option<String> {
    (rate < 0.01).then(|| {
        let suggest = (beta * (rate.max(1e-4) / 0.3).sqrt()).max(1e-4);
        format!("acceptance {:.2}% during burn-in at β = {beta}; try β ≈ {suggest:.3e}", 100.0 * rate)
    })
}

/// Single pCN chain targeting reference × e^Φ × 1_domain.
pub fn run_pcn_chain(target: &Target, config: &PcnConfig) -> Result<(SampleEnsemble, ChainStats)> {
    config.validate()?;
    let mut state = ChainState::start(target, config.seed, config.chain)?;
    let mut stats = ChainStats { chain: config.chain, ..Default::default() };
    for _ in 0..config.burn_in {
        if state.step(target, config.beta)? {
            stats.burn_in_accepted += 1;
        }
    }
    stats.burn_in_steps = config.burn_in;
    let mut samples = Vec::with_capacity(config.sample_count());
    for i in 1..=config.steps {
        if state.step(target, config.beta)? {
            stats.accepted += 1;
        }
        if i % config.thin == 0 {
            samples.push(state.current.clone());
        }
    }
    stats.steps = config.steps;
    stats.warning = low_acceptance_warning(stats.burn_in_acceptance(), config.beta);
    let ens = SampleEnsemble { samples, target: target.clone(), seed: config.seed, thin: config.thin, weights: None };
    Ok((ens, stats))
}

/// Independent chains 0..chains in parallel, merged in chain order.
pub fn run_chains(target: &Target, config: &PcnConfig, chains: usize) -> Result<(SampleEnsemble, Vec<ChainStats>)> {
    config.validate()?;
    let runs: Vec<_> = (0..chains as u64)
        .into_par_iter()
        .map(|c| run_pcn_chain(target, &PcnConfig { chain: c, ..*config }))
        .collect::<Result<_>>()?;
    let mut samples = Vec::with_capacity(runs.iter().map(|(e, _)| e.len()).sum());
    let mut stats = Vec::with_capacity(runs.len());
    for (e, s) in runs {
        samples.extend(e.samples);
        stats.push(s);
    }
    let ens = SampleEnsemble { samples, target: target.clone(), seed: config.seed, thin: config.thin, weights: None };
    Ok((ens, stats))
}

/// Pilot runs adjusting β geometrically until acceptance lands in [lo, hi].
pub fn tune_beta(target: &Target, seed: u64, pilot_steps: usize, lo: f64, hi: f64) -> Result<f64> {
    let (mut a, mut b) = (1e-4f64, 1.0f64);
    let mut beta = 0.5f64;
    for round in 0..24 {
        let mut state = ChainState::start(target, seed, 1_000_000 + round)?;
        let mut acc = 0;
        for _ in 0..pilot_steps {
            if state.step(target, beta)? {
                acc += 1;
            }
        }
        let rate = acc as f64 / pilot_steps.max(1) as f64;
        if rate > hi {
            if beta >= 1.0 {
                return Ok(1.0);
            }
            a = beta;
        } else if rate < lo {
            b = beta;
        } else {
            return Ok(beta);
        }
        beta = (a * b).sqrt();
    }
    Ok(beta)
}

/// Samples of the three-factor Zakharov measure.
#[derive(Clone, Debug, PartialEq)]
pub struct ZakharovEnsemble {
    pub states: Vec<ZakharovState>,
    pub stats: Vec<ChainStats>,
}

/// Envelope by pCN on the mass ball of radius B; ñ (white noise) and W (real
/// loop) drawn exactly and independently, then mapped back to (u, n, v).
pub fn run_zakharov_chains(b: f64, n: usize, config: &PcnConfig, chains: usize) -> Result<ZakharovEnsemble> {
    let model = ModelSpec::Zakharov { b };
    model.validate()?;
    let lat = Lattice::new(1, n, 2)?;
    let target = Target::new(
        GaussianReference::loop_measure(lat, 0.0),
        LogWeight::Model(model),
        PhaseDomain::MassBall { n: b },
    )?;
    let (ens, stats) = run_chains(&target, config, chains)?;
    let nt_ref = GaussianReference::white_noise(lat);
    let w_ref = GaussianReference::real_loop(lat);
    let mut rng = chain_rng(config.seed ^ 0x5a4b_4841_524f_5600, u64::MAX);
    let mut states = Vec::with_capacity(ens.len());
    for u in ens.samples {
        let nt = nt_ref.sample(&mut rng);
        let w = w_ref.sample(&mut rng);
        states.push(ZakharovState::from_transformed(u, &nt, &w)?);
    }
    Ok(ZakharovEnsemble { states, stats })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stats::{ks_two_sample, Estimate};

    fn loop_target(n: usize, weight: LogWeight, domain: PhaseDomain) -> Target {
        Target::new(GaussianReference::loop_measure(Lattice::line(n), 0.0), weight, domain).unwrap()
    }

    #[test]
    fn free_chain_accepts_everything() {
        let t = loop_target(8, LogWeight::Model(ModelSpec::nls(4, 0.0)), PhaseDomain::Unrestricted);
        let (ens, stats) = run_pcn_chain(&t, &PcnConfig::new(0.3, 500, 50, 5, 1)).unwrap();
        assert_eq!(stats.accepted, 500);
        assert_eq!(stats.burn_in_accepted, 50);
        assert_eq!(ens.len(), 100);
        assert!(stats.warning.is_none());
    }

    #[test]
    fn chains_are_deterministic() {
        let t = loop_target(6, LogWeight::Model(ModelSpec::nls(4, 0.5)), PhaseDomain::MassBall { n: 2.0 });
        let cfg = PcnConfig::new(0.4, 200, 10, 10, 77);
        let (a, sa) = run_chains(&t, &cfg, 3).unwrap();
        let (b, sb) = run_chains(&t, &cfg, 3).unwrap();
        assert_eq!(a.samples, b.samples);
        assert_eq!(sa, sb);
        assert!(a.samples.iter().all(|u| t.domain.contains(u)));
    }

    #[test]
    fn free_second_moments_stationary() {
        let t = loop_target(4, LogWeight::Zero, PhaseDomain::Unrestricted);
        let (ens, _) = run_chains(&t, &PcnConfig::new(0.9, 4000, 100, 4, 3), 4).unwrap();
        let lat = t.reference.lattice;
        for i in 0..lat.len() {
            let xs: Vec<f64> = ens.samples.iter().map(|u| u.coeffs()[i].norm_sqr()).collect();
            let e = Estimate::of_mean(&xs);
            let v = t.reference.variance(i);
            // thinned pCN at β = 0.9 is close to independent
            assert!((e.value - v).abs() <= 4.0 * e.stderr + 1e-15, "mode {i}: {e:?} vs {v}");
        }
    }

    #[test]
    fn mass_ball_matches_rejection() {
        let dom = PhaseDomain::MassBall { n: 1.5 };
        let t = loop_target(4, LogWeight::Zero, dom.clone());
        let (chain, _) = run_chains(&t, &PcnConfig::new(0.3, 5000, 200, 20, 21), 40).unwrap();
        let rej = SampleEnsemble::rejection(t.reference, dom, 10_000, 22).unwrap();
        let a = chain.map(|u| u.mass());
        let b = rej.map(|u| u.mass());
        let (_, p) = ks_two_sample(&a, &b);
        assert!(p > 0.01, "KS p = {p}");
    }

    #[test]
    fn low_acceptance_warns() {
        let t = loop_target(8, LogWeight::Zero, PhaseDomain::MassBall { n: 1e-3 });
        let (_, s) = run_pcn_chain(&t, &PcnConfig::new(1.0, 10, 200, 1, 1)).unwrap();
        assert!(s.warning.is_some());
    }

    #[test]
    fn tuned_beta_hits_window() {
        let t = loop_target(16, LogWeight::Zero, PhaseDomain::MassBall { n: 4.0 });
        let beta = tune_beta(&t, 5, 2000, 0.25, 0.40).unwrap();
        let (_, s) = run_pcn_chain(&t, &PcnConfig::new(beta, 4000, 0, 1, 6)).unwrap();
        assert!(s.acceptance() > 0.18 && s.acceptance() < 0.47, "β={beta} acc={}", s.acceptance());
    }

    #[test]
    fn zakharov_factors() {
        let z = run_zakharov_chains(1.0, 6, &PcnConfig::new(0.5, 400, 50, 4, 8), 2).unwrap();
        assert_eq!(z.states.len(), 200);
        for s in &z.states {
            assert!(s.mass() <= 1.0);
            let nt = s.ntilde();
            assert!(nt.get([0, 0]).norm() < 1e-12);
        }
    }

    #[test]
    fn rejects_bad_beta() {
        let t = loop_target(2, LogWeight::Zero, PhaseDomain::Unrestricted);
        assert!(run_pcn_chain(&t, &PcnConfig::new(0.0, 1, 0, 1, 1)).is_err());
        assert!(run_pcn_chain(&t, &PcnConfig::new(1.5, 1, 0, 1, 1)).is_err());
    }
}
