//! Experiment runners, one per kind.

use std::path::{Path, PathBuf};

use gibbslab::concentration::{default_dictionary, lsi_gap_report, Direction, MetricSpec, TestFunctional};
use gibbslab::flow::{evolve, gp_fixed_point, invariance_test, self_convergence, DuhamelConfig};
use gibbslab::hamiltonian::{convexity_margin, Regime};
use gibbslab::sampler::{
    estimate_n0, normalizability_probe, run_chains, run_zakharov_chains, sample_free_field, tail_mass_estimate,
    tune_beta, ChainStats, GaussianReference, PcnConfig, PhaseDomain, ProbeConfig, Target,
};
use gibbslab::stats::Estimate;
use gibbslab::transport::{relative_entropy_truncation, truncation_coupling_bound};
use gibbslab::{FlowConfig, FlowState, FourierField, ModelSpec};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::archive::{self, ArchiveError, ArchiveHeader};
use crate::config::{ExperimentConfig, ExperimentKind};
use crate::report::{num, Report, Table};

#[derive(Debug, thiserror::Error)]
pub enum RunError {
    #[error("invalid input: {0}")]
    Input(String),
    #[error(transparent)]
    Numerical(#[from] gibbslab::Error),
    #[error("archive: {0}")]
    Archive(#[from] ArchiveError),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

type Res<T> = Result<T, RunError>;

/// Paths a run reads from and writes to.
#[derive(Clone, Debug)]
pub struct Paths {
    pub report_dir: PathBuf,
    pub config_dir: PathBuf,
}

impl Paths {
    pub fn for_config(cfg: &ExperimentConfig, config_path: &Path) -> Self {
        let config_dir = config_path.parent().map(Path::to_path_buf).unwrap_or_default();
        let report_dir = match &cfg.output.dir {
            Some(d) if d.is_absolute() => d.clone(),
            Some(d) => config_dir.join(d),
            None => config_dir.clone(),
        };
        Self { report_dir, config_dir }
    }

    fn resolve(base: &Path, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            base.join(p)
        }
    }
}

pub fn execute(cfg: &ExperimentConfig, text: &str, name: &str, paths: &Paths) -> Res<Report> {
    let mut r = Report::new(cfg, text, name);
    match cfg.kind {
        ExperimentKind::Sample => sample(cfg, paths, &mut r)?,
        ExperimentKind::Flow => flow(cfg, paths, &mut r)?,
        ExperimentKind::Invariance => invariance(cfg, paths, &mut r)?,
        ExperimentKind::Lsi => lsi(cfg, paths, &mut r)?,
        ExperimentKind::Convexity => convexity(cfg, &mut r)?,
        ExperimentKind::Normalizability => normalizability(cfg, &mut r)?,
        ExperimentKind::Transport => transport(cfg, &mut r)?,
        ExperimentKind::GpSolve => gp_solve(cfg, &mut r)?,
        ExperimentKind::Zakharov => zakharov(cfg, &mut r)?,
        ExperimentKind::Tail => tail(cfg, &mut r)?,
    }
    Ok(r)
}

// validate() guarantees the tables each kind needs
fn model(cfg: &ExperimentConfig) -> &ModelSpec {
    cfg.model.as_ref().expect("validated")
}

fn cutoff(cfg: &ExperimentConfig) -> usize {
    cfg.lattice.expect("validated").n
}

fn domain(cfg: &ExperimentConfig) -> PhaseDomain {
    cfg.domain.clone().unwrap_or(PhaseDomain::Unrestricted)
}

struct Sampled {
    samples: Vec<FourierField>,
    beta: Option<f64>,
    stats: Vec<ChainStats>,
    reference: Option<GaussianReference>,
}

fn pcn_config(cfg: &ExperimentConfig, beta: f64) -> (PcnConfig, usize) {
    let s = cfg.sampler.as_ref().expect("validated");
    let per = s.samples.div_ceil(s.chains);
    let burn = s.burn_in.unwrap_or(50 * s.thin);
    (PcnConfig::new(beta, per * s.thin, burn, s.thin, cfg.seed), s.chains)
}

fn draw(cfg: &ExperimentConfig, paths: &Paths) -> Res<Sampled> {
    let s = cfg.sampler.as_ref().expect("validated");
    let m = model(cfg);
    let n = cutoff(cfg);
    if let Some(p) = &s.input_archive {
        let (h, mut samples) = archive::read(&Paths::resolve(&paths.config_dir, p))?;
        if h.n != n || h.dim != m.dim() {
            return Err(RunError::Input(format!(
                "archive holds D = {} n = {} fields, config asks for D = {} n = {n}",
                h.dim,
                h.n,
                m.dim()
            )));
        }
        samples.truncate(s.samples.max(1).min(samples.len()));
        return Ok(Sampled { samples, beta: None, stats: Vec::new(), reference: h.reference });
    }
    let target = Target::for_model(m, n, domain(cfg))?;
    let beta = match s.beta {
        Some(b) => b,
        None => tune_beta(&target, cfg.seed, 500, 0.25, 0.4)?,
    };
    let (pcn, chains) = pcn_config(cfg, beta);
    let (ens, stats) = run_chains(&target, &pcn, chains)?;
    let mut samples = ens.samples;
    samples.truncate(s.samples);
    Ok(Sampled { samples, beta: Some(beta), stats, reference: Some(target.reference) })
}

fn chain_table(r: &mut Report, stats: &[ChainStats]) {
    let mut t = Table::new(&["chain", "steps", "accepted", "acceptance", "burn_in_acceptance"]);
    for c in stats {
        t.push(vec![
            c.chain.to_string(),
            c.steps.to_string(),
            c.accepted.to_string(),
            num(c.acceptance()),
            num(c.burn_in_acceptance()),
        ]);
    }
    r.table = t;
}

fn mean_acceptance(stats: &[ChainStats]) -> Option<f64> {
    let steps: usize = stats.iter().map(|c| c.steps).sum();
    (steps > 0).then(|| stats.iter().map(|c| c.accepted).sum::<usize>() as f64 / steps as f64)
}

fn sample(cfg: &ExperimentConfig, paths: &Paths, r: &mut Report) -> Res<()> {
    let s = draw(cfg, paths)?;
    let masses: Vec<f64> = s.samples.iter().map(|u| u.mass()).collect();
    r.set("samples", s.samples.len());
    r.set("beta", s.beta);
    r.set("acceptance", mean_acceptance(&s.stats));
    r.set("mean_mass", Estimate::of_mean(&masses));
    if let Some(reference) = &s.reference {
        r.set("reference_mass", reference.expected_mass());
    }
    let warnings: Vec<&String> = s.stats.iter().filter_map(|c| c.warning.as_ref()).collect();
    r.set("warnings", warnings);
    chain_table(r, &s.stats);
    if let Some(p) = &cfg.output.archive {
        let m = model(cfg);
        let lat = gibbslab::Lattice::new(m.dim(), cutoff(cfg), 2)?;
        let (real, zero) = s
            .samples
            .first()
            .map(|u| (u.is_real(), u.has_zero_mode()))
            .unwrap_or_else(|| s.reference.map(|g| (g.real, g.has_zero_mode())).unwrap_or((false, false)));
        let mut h = ArchiveHeader::new(lat, real, zero, cfg.seed);
        h.model = Some(m.clone());
        h.domain = Some(domain(cfg));
        h.reference = s.reference;
        h.metadata.insert("tool".into(), format!("{} {}", crate::report::TOOL, crate::report::VERSION));
        h.metadata.insert("config".into(), r.name.clone());
        let path = Paths::resolve(&paths.report_dir, p);
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir)?;
        }
        archive::write(&path, &h, &s.samples)?;
        r.set("archive", p);
    }
    Ok(())
}

fn flow(cfg: &ExperimentConfig, paths: &Paths, r: &mut Report) -> Res<()> {
    let m = model(cfg);
    let fc = cfg.flow.expect("validated");
    let s = draw(cfg, paths)?;
    if s.samples.is_empty() {
        return Err(RunError::Input("flow needs at least one initial state".into()));
    }
    // only drifts are needed, so record the endpoints alone
    let quiet = FlowConfig { stride: fc.steps().max(1), ..fc };
    let drifts: Vec<(f64, f64)> = s
        .samples
        .par_iter()
        .map(|u| evolve(m, &FlowState::Field(u.clone()), &quiet).map(|t| (t.max_mass_drift, t.max_energy_drift)))
        .collect::<Result<_, _>>()?;
    let conv = self_convergence(m, &FlowState::Field(s.samples[0].clone()), &fc)?;
    let max_mass = drifts.iter().map(|d| d.0).fold(0.0, f64::max);
    let max_energy = drifts.iter().map(|d| d.1).fold(0.0, f64::max);
    r.set("states", drifts.len());
    r.set("max_mass_drift", max_mass);
    r.set("max_energy_drift", max_energy);
    r.set("energy_tolerance", fc.energy_tolerance);
    r.set("convergence", &conv);
    let mut t = Table::new(&["state", "mass_drift", "energy_drift"]);
    for (i, d) in drifts.iter().enumerate() {
        t.push(vec![i.to_string(), num(d.0), num(d.1)]);
    }
    r.table = t;
    r.pass = Some(max_energy.is_finite() && max_energy <= fc.energy_tolerance);
    Ok(())
}

fn standard_dictionary() -> Vec<TestFunctional> {
    vec![
        TestFunctional::linear([1, 0]),
        TestFunctional::linear_imag([2, 0]),
        TestFunctional::modulus([1, 0]),
        TestFunctional::modulus([3, 0]),
        TestFunctional::Composed {
            xis: vec![Direction::mode([1, 0]), Direction::mode([2, 0])],
            weights: vec![0.7, -0.4],
        },
        TestFunctional::Power { p: 4 },
        TestFunctional::Norm,
    ]
}

fn invariance_rows(r: &mut Report, rep: &gibbslab::flow::InvarianceReport) {
    let mut t = Table::new(&["functional", "before", "before_stderr", "after", "after_stderr", "z", "pass"]);
    for row in &rep.rows {
        t.push(vec![
            row.functional.clone(),
            num(row.before.value),
            num(row.before.stderr),
            num(row.after.value),
            num(row.after.stderr),
            num(row.z),
            row.pass.to_string(),
        ]);
    }
    r.table = t;
    r.set("max_energy_drift", rep.max_energy_drift);
    r.set("max_mass_drift", rep.max_mass_drift);
    r.set("invalid", rep.invalid);
    r.pass = Some(rep.pass);
}

fn dictionary(cfg: &ExperimentConfig) -> Vec<TestFunctional> {
    match &cfg.invariance {
        Some(b) if !b.functionals.is_empty() => b.functionals.clone(),
        _ => standard_dictionary(),
    }
}

fn invariance(cfg: &ExperimentConfig, paths: &Paths, r: &mut Report) -> Res<()> {
    let m = model(cfg);
    let s = draw(cfg, paths)?;
    let states: Vec<FlowState> = s.samples.into_iter().map(FlowState::Field).collect();
    let rep = invariance_test(m, &states, &cfg.flow.expect("validated"), &dictionary(cfg))?;
    r.set("samples", states.len());
    r.set("beta", s.beta);
    r.set("acceptance", mean_acceptance(&s.stats));
    invariance_rows(r, &rep);
    Ok(())
}

fn zakharov(cfg: &ExperimentConfig, r: &mut Report) -> Res<()> {
    let b = match &cfg.model {
        Some(ModelSpec::Zakharov { b }) => *b,
        _ => 1.0,
    };
    let m = ModelSpec::Zakharov { b };
    let n = cutoff(cfg);
    let s = cfg.sampler.as_ref().expect("validated");
    let beta = match s.beta {
        Some(x) => x,
        None => {
            let lat = gibbslab::Lattice::new(1, n, 2)?;
            let target = Target::new(
                GaussianReference::loop_measure(lat, 0.0),
                gibbslab::sampler::LogWeight::Model(m.clone()),
                PhaseDomain::MassBall { n: b },
            )?;
            tune_beta(&target, cfg.seed, 500, 0.25, 0.4)?
        }
    };
    let (pcn, chains) = pcn_config(cfg, beta);
    let mut ens = run_zakharov_chains(b, n, &pcn, chains)?;
    ens.states.truncate(s.samples);
    let states: Vec<FlowState> = ens.states.into_iter().map(FlowState::Zakharov).collect();
    let rep = invariance_test(&m, &states, &cfg.flow.expect("validated"), &dictionary(cfg))?;
    r.set("samples", states.len());
    r.set("beta", beta);
    r.set("acceptance", mean_acceptance(&ens.stats));
    invariance_rows(r, &rep);
    Ok(())
}

fn lsi(cfg: &ExperimentConfig, paths: &Paths, r: &mut Report) -> Res<()> {
    let b = cfg.lsi.as_ref().expect("validated");
    let s = draw(cfg, paths)?;
    let dict = default_dictionary(model(cfg).dim(), b.kmax);
    let rep = lsi_gap_report(&s.samples, &dict, &MetricSpec::h_minus(b.metric_s), b.mode)?;
    r.set("samples", s.samples.len());
    r.set("beta", s.beta);
    r.set("acceptance", mean_acceptance(&s.stats));
    r.set("alpha_predicted", b.alpha);
    r.set("alpha_hat", rep.alpha_hat);
    r.set("skipped", &rep.skipped);
    let mut t = Table::new(&["functional", "energy", "spread", "ratio", "ratio_stderr"]);
    for row in &rep.rows {
        t.push(vec![
            row.functional.clone(),
            num(row.energy.value),
            num(row.spread.value),
            num(row.ratio.value),
            num(row.ratio.stderr),
        ]);
    }
    r.table = t;
    r.pass = Some(rep.passes(b.alpha));
    Ok(())
}

fn convexity(cfg: &ExperimentConfig, r: &mut Report) -> Res<()> {
    let m = model(cfg);
    let b = cfg.convexity.expect("validated");
    let reference = GaussianReference::for_model(m, cutoff(cfg))?;
    let regime = Regime::mass(b.mass);
    let radius = gibbslab::hamiltonian::model_mass_bound(m, cutoff(cfg), &regime);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let pick = |rng: &mut ChaCha8Rng| {
        let u = reference.sample(rng);
        let target = radius * rng.gen_range(0.01..1.0);
        let mass = u.mass();
        if mass > 0.0 {
            u.scale((target / mass).sqrt())
        } else {
            u
        }
    };
    let mut t = Table::new(&["pair", "t", "gap", "bound", "margin", "in_regime"]);
    let mut min_margin = f64::INFINITY;
    let mut all_in = true;
    for i in 0..b.pairs {
        let u = pick(&mut rng);
        let v = pick(&mut rng);
        let s = rng.gen_range(0.01..0.99);
        let c = convexity_margin(m, &u, &v, s, &regime)?;
        min_margin = min_margin.min(c.margin);
        all_in &= c.in_regime;
        t.push(vec![i.to_string(), num(s), num(c.gap), num(c.bound), num(c.margin), c.in_regime.to_string()]);
    }
    r.table = t;
    r.set("pairs", b.pairs);
    r.set("radius", radius);
    r.set("min_margin", min_margin);
    r.set("in_regime", all_in);
    r.pass = Some(all_in && min_margin >= -1e-12);
    Ok(())
}

fn normalizability(cfg: &ExperimentConfig, r: &mut Report) -> Res<()> {
    let b = cfg.normalizability.as_ref().expect("validated");
    let probe = ProbeConfig { samples: b.samples, seed: cfg.seed, ascent_steps: b.ascent_steps };
    let rep = normalizability_probe(b.p, b.lambda, b.mass, &b.cutoffs, &probe)?;
    let mut t = Table::new(&["n", "log_max_weight", "z", "z_stderr"]);
    for row in &rep.rows {
        t.push(vec![row.n.to_string(), num(row.log_max_weight), num(row.partition.z), num(row.partition.stderr)]);
    }
    r.table = t;
    r.set("class", rep.class);
    r.set("partitions_consistent", rep.partitions_consistent());
    r.set("log_max_strictly_increasing", rep.log_max_strictly_increasing());
    if let Some(iters) = b.bisect_iters {
        r.set("n0_estimate", estimate_n0(b.p, b.lambda, &b.cutoffs, &probe, iters)?);
    }
    r.pass = b.expect.map(|e| e == rep.class);
    Ok(())
}

fn transport(cfg: &ExperimentConfig, r: &mut Report) -> Res<()> {
    let m = model(cfg);
    let b = cfg.transport.as_ref().expect("validated");
    let reference = GaussianReference::for_model(m, cutoff(cfg))?;
    let ent = relative_entropy_truncation(m, &domain(cfg), &reference, &b.cutoffs, b.count, cfg.seed)?;
    let free: Vec<FourierField> = (0..b.count as u64).map(|i| sample_free_field(&reference, cfg.seed, i)).collect();
    let mut t = Table::new(&[
        "n",
        "entropy",
        "entropy_stderr",
        "ess_truncated",
        "ess_full",
        "reliable",
        "coupling",
        "coupling_stderr",
    ]);
    for row in &ent.rows {
        let c = truncation_coupling_bound(&free, row.n, b.estimator)?;
        t.push(vec![
            row.n.to_string(),
            num(row.entropy.value),
            num(row.entropy.stderr),
            num(row.ess_truncated),
            num(row.ess_full),
            row.reliable.to_string(),
            num(c.value.value),
            num(c.value.stderr),
        ]);
    }
    r.table = t;
    r.set("samples", ent.samples);
    r.set("inside_domain", ent.inside_domain);
    r.set("strictly_decreasing", ent.strictly_decreasing);
    r.set("decreasing_within_errors", ent.decreasing_within_errors);
    r.pass = Some(ent.decreasing_within_errors && ent.rows.iter().all(|x| x.reliable));
    Ok(())
}

fn gp_solve(cfg: &ExperimentConfig, r: &mut Report) -> Res<()> {
    let m = model(cfg);
    let ModelSpec::Gp { potential, lambda, rho, .. } = m else {
        return Err(RunError::Input("gp-solve needs a GP model".into()));
    };
    let b = cfg.gp_solve.unwrap_or_default();
    let d = DuhamelConfig::default();
    let dc = DuhamelConfig {
        lambda: *lambda,
        horizon: b.horizon.unwrap_or(d.horizon),
        panels: b.panels.unwrap_or(d.panels),
        order: b.order.unwrap_or(d.order),
        tol: b.tol.unwrap_or(d.tol),
        max_iter: b.max_iter.unwrap_or(d.max_iter),
        norm_s: b.norm_s.unwrap_or(d.norm_s),
        lipschitz_pairs: d.lipschitz_pairs,
        seed: cfg.seed,
    };
    let reference = GaussianReference::loop_measure(gibbslab::Lattice::new(2, cutoff(cfg), 2)?, *rho);
    let phi = sample_free_field(&reference, cfg.seed, 0).scale(b.amplitude.unwrap_or(1.0));
    let res = gp_fixed_point(&phi, potential, &dc)?;
    let mut t = Table::new(&["iteration", "residual"]);
    for (i, x) in res.residuals.iter().enumerate() {
        t.push(vec![(i + 1).to_string(), num(*x)]);
    }
    r.table = t;
    r.set("converged", res.converged);
    r.set("contraction", res.contraction);
    r.set("residual_ratio", res.residual_ratio);
    r.set("contracting_horizon", res.contracting_horizon);
    r.set("phi_norm", res.phi_norm);
    r.set("w_norm", res.w_norm);
    if let Some(dt) = b.compare_dt {
        let split = ModelSpec::Gp { potential: potential.clone(), lambda: *lambda, kappa: 0.0, rho: *rho, b: 0.0 };
        let fc = FlowConfig::new(dt, dc.horizon).galerkin();
        let end = gibbslab::flow::evolve_final(&split, &FlowState::Field(phi.clone()), &fc)?;
        r.set("split_step_distance", end.u().sub(&res.solution_at_horizon(&phi)).sobolev_norm(dc.norm_s));
    }
    r.pass = Some(res.converged && res.contraction < 0.5);
    Ok(())
}

fn tail(cfg: &ExperimentConfig, r: &mut Report) -> Res<()> {
    let b = cfg.tail.as_ref().expect("validated");
    let reference = GaussianReference::for_model(model(cfg), cutoff(cfg))?;
    let samples: Vec<FourierField> =
        (0..b.samples as u64).map(|i| sample_free_field(&reference, cfg.seed, i)).collect();
    let rep = tail_mass_estimate(&samples, b.s, &b.kappas)?;
    let mut t = Table::new(&["kappa", "tail", "tail_stderr"]);
    for row in &rep.rows {
        t.push(vec![num(row.kappa), num(row.tail.value), num(row.tail.stderr)]);
    }
    r.table = t;
    r.set("fit", rep.fit);
    r.set("degenerate", rep.degenerate);
    r.pass = Some(!rep.degenerate && rep.fit.is_some_and(|f| f.slope < 0.0 && f.r_squared > 0.9));
    Ok(())
}
