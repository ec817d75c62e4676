//! Mild solutions of the truncated Hartree (GP) flow by Picard iteration on
//! the variation-of-constants map
//!
//!   Φ(u)(t) = iλ ∫_0^t e^{i(t−τ)Δ} P_n((V∗|u|²)u)(τ) dτ,
//!
//! with u = u₀ + w and u₀(t) = e^{itΔ}φ. Time integrals use Gauss–Legendre
//! panels; the propagator is applied exactly per mode.

use num_complex::Complex64 as C64;
use rand::SeedableRng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{nonlinear_gradient, schrodinger_linear};
use crate::error::{param, Error, Result};
use crate::hamiltonian::{ModelSpec, Potential};
use crate::spectral::FourierField;

/// Nodes and weights of the q-point Gauss–Legendre rule on [−1, 1].
pub fn gauss_legendre(q: usize) -> (Vec<f64>, Vec<f64>) {
    let mut x = vec![0.0; q];
    let mut w = vec![0.0; q];
    for i in 0..q {
        let mut z = (std::f64::consts::PI * (i as f64 + 0.75) / (q as f64 + 0.5)).cos();
        let mut dp = 1.0;
        for _ in 0..100 {
            // Legendre recurrence for P_q(z) and P_q'(z)
            let (mut p0, mut p1) = (1.0, z);
            for k in 2..=q {
                let p2 = ((2 * k - 1) as f64 * z * p1 - (k - 1) as f64 * p0) / k as f64;
                p0 = p1;
                p1 = p2;
            }
            let pq = if q == 1 { z } else { p1 };
            let pm = if q == 1 { 1.0 } else { p0 };
            dp = q as f64 * (z * pq - pm) / (z * z - 1.0);
            let dz = pq / dp;
            z -= dz;
            if dz.abs() < 1e-16 {
                break;
            }
        }
        x[q - 1 - i] = z;
        w[q - 1 - i] = 2.0 / ((1.0 - z * z) * dp * dp);
    }
    (x, w)
}

/// Time nodes of a panel rule on [0, T], with the partial-integral weights
/// needed to evaluate t ↦ ∫_0^t g at every node.
#[derive(Clone, Debug)]
struct PanelRule {
    q: usize,
    panels: usize,
    h: f64,
    /// Node times, panel-major.
    nodes: Vec<f64>,
    /// Full-panel weights (length q, scaled by h).
    weights: Vec<f64>,
    /// partial[j][i] = ∫_{panel start}^{node j} L_i, for j, i within a panel.
    partial: Vec<Vec<f64>>,
}

impl PanelRule {
    fn new(horizon: f64, panels: usize, q: usize) -> Self {
        let (x, w) = gauss_legendre(q);
        let h = horizon / panels as f64;
        let local: Vec<f64> = x.iter().map(|z| 0.5 * (z + 1.0)).collect();
        let lagrange = |i: usize, s: f64| -> f64 {
            (0..q).filter(|&m| m != i).map(|m| (s - local[m]) / (local[i] - local[m])).product()
        };
        let partial = (0..q)
            .map(|j| {
                let b = local[j];
                (0..q)
                    .map(|i| (0..q).map(|l| 0.5 * b * w[l] * lagrange(i, 0.5 * b * (x[l] + 1.0))).sum::<f64>() * h)
                    .collect()
            })
            .collect();
        let nodes = (0..panels).flat_map(|p| local.iter().map(move |s| (p as f64 + s) * h)).collect();
        Self { q, panels, h, nodes, weights: w.iter().map(|v| 0.5 * v * h).collect(), partial }
    }
}

fn hartree_model(potential: &Potential) -> ModelSpec {
    ModelSpec::Gp { potential: potential.clone(), lambda: 1.0, kappa: 0.0, rho: 1.0, b: 0.0 }
}

/// P_n((V∗|u|²)u).
fn hartree_term(model: &ModelSpec, u: &FourierField) -> Result<FourierField> {
    Ok(nonlinear_gradient(model, u)?.scale(-1.0))
}

fn times_i(u: &FourierField) -> FourierField {
    let mut out = u.clone();
    out.coeffs.iter_mut().for_each(|c| *c = C64::new(-c.im, c.re));
    out
}

/// Φ on a path sampled at the rule's nodes; returns values at the nodes and at T.
fn apply_phi(
    model: &ModelSpec,
    lambda: f64,
    rule: &PanelRule,
    path: &[FourierField],
) -> Result<(Vec<FourierField>, FourierField)> {
    // G(τ) = e^{−iτΔ} F(u(τ))
    let g: Vec<FourierField> = path
        .par_iter()
        .zip(&rule.nodes)
        .map(|(u, &t)| Ok(schrodinger_linear(&hartree_term(model, u)?, 0.0, -t)))
        .collect::<Result<_>>()?;
    let zero = path[0].scale(0.0);
    let mut acc = zero.clone();
    let mut out = Vec::with_capacity(path.len());
    for p in 0..rule.panels {
        let block = &g[p * rule.q..(p + 1) * rule.q];
        for j in 0..rule.q {
            let mut s = acc.clone();
            for (i, gi) in block.iter().enumerate() {
                s = s.axpy(rule.partial[j][i], gi);
            }
            let t = rule.nodes[p * rule.q + j];
            out.push(times_i(&schrodinger_linear(&s, 0.0, t)).scale(lambda));
        }
        for (i, gi) in block.iter().enumerate() {
            acc = acc.axpy(rule.weights[i], gi);
        }
    }
    let t_end = rule.h * rule.panels as f64;
    let end = times_i(&schrodinger_linear(&acc, 0.0, t_end)).scale(lambda);
    Ok((out, end))
}

fn free_path(phi: &FourierField, rule: &PanelRule) -> Vec<FourierField> {
    rule.nodes.iter().map(|&t| schrodinger_linear(phi, 0.0, t)).collect()
}

fn check_potential(potential: &Potential) -> Result<()> {
    if potential.hat_zero() != 0.0 {
        return param("the Duhamel construction needs V̂(0) = 0");
    }
    Ok(())
}

/// Φ(u₀)(t) for the free path u₀(τ) = e^{iτΔ}φ, with `panels` four-point panels.
pub fn duhamel_phi(
    phi: &FourierField,
    potential: &Potential,
    lambda: f64,
    t: f64,
    panels: usize,
) -> Result<FourierField> {
    check_potential(potential)?;
    if panels == 0 || t <= 0.0 {
        return param("need t > 0 and at least one panel");
    }
    let rule = PanelRule::new(t, panels, 4);
    let model = hartree_model(potential);
    Ok(apply_phi(&model, lambda, &rule, &free_path(phi, &rule))?.1)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QuadratureCheck {
    pub panels: Vec<usize>,
    /// ‖Φ_K − Φ_{2K}‖ in L².
    pub differences: Vec<f64>,
    pub order: f64,
    pub converged: bool,
}

/// Refine the panel count twice and measure the self-convergence order.
pub fn duhamel_quadrature_check(
    phi: &FourierField,
    potential: &Potential,
    lambda: f64,
    t: f64,
    panels: usize,
) -> Result<QuadratureCheck> {
    let ks = vec![panels, 2 * panels, 4 * panels];
    let vals: Vec<FourierField> =
        ks.iter().map(|&k| duhamel_phi(phi, potential, lambda, t, k)).collect::<Result<_>>()?;
    let differences: Vec<f64> = vals.windows(2).map(|w| w[0].sub(&w[1]).mass().sqrt()).collect();
    let scale = vals[2].mass().sqrt().max(1e-300);
    let tiny = differences[1] <= 1e-13 * scale;
    let order = (differences[0] / differences[1]).log2();
    Ok(QuadratureCheck {
        panels: ks,
        converged: tiny || order >= 2.0,
        order: if tiny { f64::INFINITY } else { order },
        differences,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DuhamelConfig {
    pub lambda: f64,
    pub horizon: f64,
    pub panels: usize,
    /// Gauss–Legendre points per panel.
    pub order: usize,
    pub tol: f64,
    pub max_iter: usize,
    /// Sobolev index of the norm for residuals and Lipschitz quotients.
    pub norm_s: f64,
    pub lipschitz_pairs: usize,
    pub seed: u64,
}

impl Default for DuhamelConfig {
    fn default() -> Self {
        Self {
            lambda: 1.0,
            horizon: 0.5,
            panels: 8,
            order: 4,
            tol: 1e-12,
            max_iter: 60,
            norm_s: -0.2,
            lipschitz_pairs: 8,
            seed: 1,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DuhamelResult {
    /// Node times followed by the horizon T.
    pub times: Vec<f64>,
    /// w at each entry of `times`.
    pub w: Vec<FourierField>,
    /// sup_t ‖w_{k+1} − w_k‖ for each Picard iteration.
    pub residuals: Vec<f64>,
    /// Largest sampled Lipschitz quotient of w ↦ Φ(u₀ + w) on the ball of radius 2 sup‖Φ(u₀)‖.
    pub contraction: f64,
    /// Largest ratio of successive residuals after the first iteration.
    pub residual_ratio: f64,
    /// Largest tested horizon T/2^j whose sampled contraction is below 1/2.
    pub contracting_horizon: f64,
    pub converged: bool,
    pub phi_norm: f64,
    pub w_norm: f64,
}

impl DuhamelResult {
    /// u₀(T) + w(T).
    pub fn solution_at_horizon(&self, phi: &FourierField) -> FourierField {
        let t = *self.times.last().unwrap();
        schrodinger_linear(phi, 0.0, t).add(self.w.last().unwrap())
    }
}

fn sup_norm(fields: &[FourierField], s: f64) -> f64 {
    fields.iter().map(|f| f.sobolev_norm(s)).fold(0.0, f64::max)
}

fn path_diff(a: &[FourierField], b: &[FourierField]) -> Vec<FourierField> {
    a.iter().zip(b).map(|(x, y)| x.sub(y)).collect()
}

/// Sampled Lipschitz constant of w ↦ Φ(u₀ + w) over constant-in-time perturbations.
fn sampled_contraction(model: &ModelSpec, phi: &FourierField, cfg: &DuhamelConfig, horizon: f64) -> Result<f64> {
    let rule = PanelRule::new(horizon, cfg.panels, cfg.order);
    let u0 = free_path(phi, &rule);
    let (phi0, _) = apply_phi(model, cfg.lambda, &rule, &u0)?;
    let radius = 2.0 * sup_norm(&phi0, cfg.norm_s);
    if radius == 0.0 {
        return Ok(0.0);
    }
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(cfg.seed);
    let lat = *phi.lattice();
    let draw = |rng: &mut rand_chacha::ChaCha8Rng| {
        let f = FourierField::from_fn(lat, false, phi.has_zero_mode(), |_| {
            C64::new(StandardNormal.sample(rng), StandardNormal.sample(rng))
        });
        let r: f64 = rand::Rng::gen::<f64>(rng);
        f.scale(radius * r / f.sobolev_norm(cfg.norm_s))
    };
    let mut worst = 0.0f64;
    for _ in 0..cfg.lipschitz_pairs {
        let (a, b) = (draw(&mut rng), draw(&mut rng));
        let pa: Vec<FourierField> = u0.iter().map(|u| u.add(&a)).collect();
        let pb: Vec<FourierField> = u0.iter().map(|u| u.add(&b)).collect();
        let (fa, _) = apply_phi(model, cfg.lambda, &rule, &pa)?;
        let (fb, _) = apply_phi(model, cfg.lambda, &rule, &pb)?;
        let num = sup_norm(&path_diff(&fa, &fb), cfg.norm_s);
        let den = a.sub(&b).sobolev_norm(cfg.norm_s);
        if den > 0.0 {
            worst = worst.max(num / den);
        }
    }
    Ok(worst)
}

/// Picard iteration w ← Φ(u₀ + w) from w = 0 on [0, T].
pub fn gp_fixed_point(phi: &FourierField, potential: &Potential, cfg: &DuhamelConfig) -> Result<DuhamelResult> {
    check_potential(potential)?;
    if phi.lattice().dim() != 2 || phi.is_real() {
        return param("GP fields are complex on T²");
    }
    if cfg.panels == 0 || cfg.order == 0 || cfg.horizon <= 0.0 {
        return param("need a positive horizon and a nonempty panel rule");
    }
    let model = hartree_model(potential);
    let contraction = sampled_contraction(&model, phi, cfg, cfg.horizon)?;
    let mut contracting_horizon = 0.0;
    let mut h = cfg.horizon;
    for _ in 0..10 {
        let c = if h == cfg.horizon { contraction } else { sampled_contraction(&model, phi, cfg, h)? };
        if c < 0.5 {
            contracting_horizon = h;
            break;
        }
        h *= 0.5;
    }
    if contraction >= 1.0 {
        return Err(Error::NotConverged(format!(
            "sampled contraction {contraction:.3} ≥ 1 at T = {}; shrink the horizon (contracting at T = {contracting_horizon})",
            cfg.horizon
        )));
    }
    let rule = PanelRule::new(cfg.horizon, cfg.panels, cfg.order);
    let u0 = free_path(phi, &rule);
    let mut w: Vec<FourierField> = u0.iter().map(|u| u.scale(0.0)).collect();
    let mut w_end = phi.scale(0.0);
    let mut residuals = Vec::new();
    let mut phi_norm = 0.0;
    let mut converged = false;
    for it in 0..cfg.max_iter {
        let path: Vec<FourierField> = u0.iter().zip(&w).map(|(a, b)| a.add(b)).collect();
        let (next, end) = apply_phi(&model, cfg.lambda, &rule, &path)?;
        let mut r = sup_norm(&path_diff(&next, &w), cfg.norm_s);
        r = r.max(end.sub(&w_end).sobolev_norm(cfg.norm_s));
        if it == 0 {
            phi_norm = sup_norm(&next, cfg.norm_s).max(end.sobolev_norm(cfg.norm_s));
        }
        w = next;
        w_end = end;
        residuals.push(r);
        if !r.is_finite() {
            return Err(Error::Numerical("Picard iterate is not finite".into()));
        }
        if r < cfg.tol {
            converged = true;
            break;
        }
    }
    let residual_ratio =
        residuals.windows(2).skip(1).filter(|p| p[0] > 1e3 * cfg.tol).map(|p| p[1] / p[0]).fold(0.0, f64::max);
    let mut times = rule.nodes.clone();
    times.push(cfg.horizon);
    w.push(w_end);
    let w_norm = sup_norm(&w, cfg.norm_s);
    Ok(DuhamelResult {
        times,
        w,
        residuals,
        contraction,
        residual_ratio,
        contracting_horizon,
        converged,
        phi_norm,
        w_norm,
    })
}
