//! Split-step integrators for the truncated Hamiltonian flows.
//!
//! Sign conventions: NLS and GP evolve by i u_t = ∇H(u), so the free part is
//! û_k ↦ e^{−i|k|²t}û_k. KdV is u_t = ∂_θ∇H(u) = −u''' − λuu', with free part
//! û_k ↦ e^{ik³t}û_k. Zakharov is i u_t = −u'' + P_n(n u), n_t = v,
//! v_t = ∂²_θ(n + P_n|u|²).

mod duhamel;

pub use duhamel::*;

use num_complex::Complex64 as C64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::concentration::TestFunctional;
use crate::error::{param, Error, Result};
use crate::hamiltonian::{
    energy, energy_zakharov, gradient, interaction, multiply_by_field, projected_density, ModelSpec, ZakharovState,
};
use crate::spectral::{analyze, synth, FourierField};
use crate::stats::Estimate;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Scheme {
    #[default]
    Strang,
    Lie,
}

/// How the nonlinear substep is carried out.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Nonlinear {
    /// Pointwise closed-form solve on the (2n+1)^D collocation grid, then
    /// read back. A bijection grid ↔ lattice, so the substep is an exact L²
    /// isometry when the zero mode is carried.
    #[default]
    Collocation,
    /// Implicit midpoint on the Galerkin vector field. Keeps the flow on the
    /// truncated phase space (including mean-zero fields) and conserves mass
    /// to the fixed-point tolerance. KdV always uses dealiased RK4.
    Galerkin,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FlowConfig {
    pub dt: f64,
    pub t_final: f64,
    #[serde(default)]
    pub scheme: Scheme,
    #[serde(default = "one")]
    pub stride: usize,
    #[serde(default)]
    pub nonlinear: Nonlinear,
    /// Relative energy drift above which an invariance run is flagged.
    #[serde(default = "default_energy_tol")]
    pub energy_tolerance: f64,
}

fn one() -> usize {
    1
}

fn default_energy_tol() -> f64 {
    1e-4
}

impl FlowConfig {
    pub fn new(dt: f64, t_final: f64) -> Self {
        Self {
            dt,
            t_final,
            scheme: Scheme::Strang,
            stride: 1,
            nonlinear: Nonlinear::Collocation,
            energy_tolerance: default_energy_tol(),
        }
    }

    pub fn galerkin(mut self) -> Self {
        self.nonlinear = Nonlinear::Galerkin;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0 && self.t_final > 0.0) {
            return param("dt and T must be positive");
        }
        if self.dt > self.t_final * (1.0 + 1e-12) {
            return param("dt exceeds T");
        }
        if self.stride == 0 {
            return param("stride must be at least 1");
        }
        Ok(())
    }

    pub fn steps(&self) -> usize {
        (self.t_final / self.dt).round() as usize
    }
}

/// State of one of the four truncated flows.
#[derive(Clone, Debug, PartialEq)]
pub enum FlowState {
    Field(FourierField),
    Zakharov(ZakharovState),
}

impl FlowState {
    pub fn u(&self) -> &FourierField {
        match self {
            Self::Field(u) => u,
            Self::Zakharov(z) => &z.u,
        }
    }

    pub fn mass(&self) -> f64 {
        self.u().mass()
    }

    pub fn energy(&self, model: &ModelSpec) -> Result<f64> {
        match self {
            Self::Field(u) => energy(model, u),
            Self::Zakharov(z) => energy_zakharov(z),
        }
    }

    /// Kinetic plus |interaction|: a size for energy errors that does not
    /// vanish when the two parts cancel.
    pub fn energy_scale(&self, model: &ModelSpec) -> Result<f64> {
        let e = self.energy(model)?;
        let i = match self {
            Self::Field(u) => interaction(model, u)?,
            Self::Zakharov(z) => interaction(&ModelSpec::Zakharov { b: 1.0 }, &z.u)?,
        };
        Ok((e - i) + i.abs())
    }

    pub fn is_finite(&self) -> bool {
        let fin = |f: &FourierField| f.coeffs().iter().all(|c| c.re.is_finite() && c.im.is_finite());
        match self {
            Self::Field(u) => fin(u),
            Self::Zakharov(z) => fin(&z.u) && fin(&z.n) && fin(&z.v),
        }
    }

    /// L² distance summed over components.
    pub fn distance(&self, other: &Self) -> f64 {
        match (self, other) {
            (Self::Field(a), Self::Field(b)) => a.sub(b).mass().sqrt(),
            (Self::Zakharov(a), Self::Zakharov(b)) => {
                (a.u.sub(&b.u).mass() + a.n.sub(&b.n).mass() + a.v.sub(&b.v).mass()).sqrt()
            }
            _ => f64::NAN,
        }
    }
}

/// Free Schrödinger propagator with an extra constant frequency shift.
pub fn schrodinger_linear(u: &FourierField, shift: f64, tau: f64) -> FourierField {
    let lat = *u.lattice();
    let mut out = u.clone();
    for (i, c) in out.coeffs.iter_mut().enumerate() {
        *c *= C64::from_polar(1.0, -(lat.k2(i) + shift) * tau);
    }
    out
}

/// Airy propagator û_k ↦ e^{ik³τ}û_k.
pub fn airy_linear(u: &FourierField, tau: f64) -> FourierField {
    u.multiply(|k| {
        let k = k[0] as f64;
        C64::from_polar(1.0, k * k * k * tau)
    })
}

/// Free wave n_t = v, v_t = ∂²n, exact per mode.
pub fn wave_linear(n: &FourierField, v: &FourierField, tau: f64) -> (FourierField, FourierField) {
    let lat = *n.lattice();
    let mut n1 = n.clone();
    let mut v1 = v.clone();
    for i in 0..lat.len() {
        let k = lat.k2(i).sqrt();
        let (a, b) = (n.coeffs[i], v.coeffs[i]);
        if k == 0.0 {
            n1.coeffs[i] = a + b * tau;
            v1.coeffs[i] = b;
        } else {
            let (s, c) = (k * tau).sin_cos();
            n1.coeffs[i] = a * c + b * (s / k);
            v1.coeffs[i] = -a * (k * s) + b * c;
        }
    }
    (n1, v1)
}

/// Frequency shift carried by the linear part: M for NLS, λC for GP.
fn linear_shift(model: &ModelSpec, u: &FourierField) -> f64 {
    match model {
        ModelSpec::Nls { mass_penalty, .. } => *mass_penalty,
        ModelSpec::Gp { lambda, .. } => lambda * model.counterterm(u.lattice().n()),
        _ => 0.0,
    }
}

fn linear_substep(model: &ModelSpec, s: &FlowState, tau: f64) -> FlowState {
    match (model, s) {
        (ModelSpec::Kdv { .. }, FlowState::Field(u)) => FlowState::Field(airy_linear(u, tau)),
        (_, FlowState::Field(u)) => FlowState::Field(schrodinger_linear(u, linear_shift(model, u), tau)),
        (_, FlowState::Zakharov(z)) => {
            let (n, v) = wave_linear(&z.n, &z.v, tau);
            FlowState::Zakharov(ZakharovState { u: schrodinger_linear(&z.u, 0.0, tau), n, v })
        }
    }
}

/// Read a collocation grid back onto the lattice of `like`.
fn from_collocation(like: &FourierField, g: &[C64]) -> FourierField {
    let lat = *like.lattice();
    let mut out = like.clone();
    out.coeffs = analyze(&lat, g, lat.side());
    out.enforce();
    out
}

/// |u|² read back from the collocation grid (aliased).
fn collocation_density(u: &FourierField, g: &[C64]) -> FourierField {
    let rho: Vec<C64> = g.iter().map(|z| C64::new(z.norm_sqr(), 0.0)).collect();
    from_collocation(&u.with_flags(true, true), &rho)
}

fn collocation_nonlinear(model: &ModelSpec, s: &FlowState, tau: f64) -> Result<FlowState> {
    match (model, s) {
        (ModelSpec::Nls { p, lambda, .. }, FlowState::Field(u)) => {
            let m = u.lattice().side();
            let mut g = synth(u.lattice(), u.coeffs(), m);
            let e = *p as i32 - 2;
            g.iter_mut().for_each(|z| *z *= C64::from_polar(1.0, lambda * z.norm().powi(e) * tau));
            Ok(FlowState::Field(from_collocation(u, &g)))
        }
        (ModelSpec::Gp { potential, lambda, .. }, FlowState::Field(u)) => {
            let lat = *u.lattice();
            let m = lat.side();
            let mut g = synth(&lat, u.coeffs(), m);
            let vr = collocation_density(u, &g).multiply(|k| C64::new(potential.hat(k), 0.0));
            let vg = synth(&lat, vr.coeffs(), m);
            g.iter_mut().zip(&vg).for_each(|(z, w)| *z *= C64::from_polar(1.0, lambda * w.re * tau));
            Ok(FlowState::Field(from_collocation(u, &g)))
        }
        (ModelSpec::Kdv { .. }, FlowState::Field(u)) => Ok(FlowState::Field(kdv_nonlinear(model, u, tau)?)),
        (ModelSpec::Zakharov { .. }, FlowState::Zakharov(z)) => {
            let lat = *z.u.lattice();
            let m = lat.side();
            let mut g = synth(&lat, z.u.coeffs(), m);
            let rho = collocation_density(&z.u, &g);
            let ng = synth(&lat, z.n.coeffs(), m);
            g.iter_mut().zip(&ng).for_each(|(a, b)| *a *= C64::from_polar(1.0, -b.re * tau));
            let u = from_collocation(&z.u, &g);
            let kick = rho.multiply(|k| C64::new(-((k[0] * k[0]) as f64) * tau, 0.0));
            let v = z.v.add(&kick).with_flags(true, z.v.has_zero_mode());
            Ok(FlowState::Zakharov(ZakharovState { u, n: z.n.clone(), v }))
        }
        _ => Err(Error::Mismatch("state kind does not match the model".into())),
    }
}

/// x₁ = x₀ + τ f((x₀+x₁)/2) by fixed-point iteration.
fn implicit_midpoint(
    x0: &[FourierField],
    tau: f64,
    f: impl Fn(&[FourierField]) -> Result<Vec<FourierField>>,
) -> Result<Vec<FourierField>> {
    let scale: f64 = 1.0 + x0.iter().map(|x| x.mass()).sum::<f64>();
    let mut x1 = x0.to_vec();
    let mut prev = f64::INFINITY;
    for _ in 0..200 {
        let mid: Vec<FourierField> = x0.iter().zip(&x1).map(|(a, b)| a.lerp(b, 0.5)).collect();
        let fx = f(&mid)?;
        let next: Vec<FourierField> = x0.iter().zip(&fx).map(|(a, d)| a.axpy(tau, d)).collect();
        let diff: f64 = next.iter().zip(&x1).map(|(a, b)| a.sub(b).mass()).sum();
        x1 = next;
        // stop at 1e-15 relative, or once updates stall at the roundoff floor
        if diff <= 1e-30 * scale || (diff <= 1e-24 * scale && diff >= prev) {
            return Ok(x1);
        }
        prev = diff;
    }
    Err(Error::NotConverged("implicit midpoint iteration did not settle; reduce dt".into()))
}

/// −i times a field.
fn times_minus_i(u: &FourierField) -> FourierField {
    let mut out = u.clone();
    out.coeffs.iter_mut().for_each(|c| *c = C64::new(c.im, -c.re));
    out
}

/// Nonlinear part of ∇H: ∇H − (|k|² + shift)u.
fn nonlinear_gradient(model: &ModelSpec, u: &FourierField) -> Result<FourierField> {
    let shift = linear_shift(model, u);
    let lat = *u.lattice();
    let mut lin = u.clone();
    for (i, c) in lin.coeffs.iter_mut().enumerate() {
        *c *= lat.k2(i) + shift;
    }
    Ok(gradient(model, u)?.sub(&lin))
}

fn galerkin_nonlinear(model: &ModelSpec, s: &FlowState, tau: f64) -> Result<FlowState> {
    match (model, s) {
        (ModelSpec::Kdv { .. }, FlowState::Field(u)) => Ok(FlowState::Field(kdv_nonlinear(model, u, tau)?)),
        (ModelSpec::Zakharov { .. }, FlowState::Zakharov(z)) => {
            let n = z.n.clone();
            let out = implicit_midpoint(&[z.u.clone(), z.v.clone()], tau, |x| {
                let du = times_minus_i(&multiply_by_field(&x[0], &n));
                let dv = projected_density(&x[0])
                    .multiply(|k| C64::new(-((k[0] * k[0]) as f64), 0.0))
                    .with_flags(true, x[1].has_zero_mode());
                Ok(vec![du, dv])
            })?;
            let mut it = out.into_iter();
            let u = it.next().unwrap();
            let v = it.next().unwrap();
            Ok(FlowState::Zakharov(ZakharovState { u, n, v }))
        }
        (_, FlowState::Field(u)) => {
            let out = implicit_midpoint(std::slice::from_ref(u), tau, |x| {
                Ok(vec![times_minus_i(&nonlinear_gradient(model, &x[0])?)])
            })?;
            Ok(FlowState::Field(out.into_iter().next().unwrap()))
        }
        _ => Err(Error::Mismatch("state kind does not match the model".into())),
    }
}

/// u_t = −λ/2 ∂_θ P_n(u²) by RK4; the product is dealiased on a 3n+1 grid.
fn kdv_nonlinear(model: &ModelSpec, u: &FourierField, tau: f64) -> Result<FourierField> {
    let f = |x: &FourierField| -> Result<FourierField> {
        Ok(nonlinear_gradient(model, x)?.multiply(|k| C64::new(0.0, k[0] as f64)))
    };
    let k1 = f(u)?;
    let k2 = f(&u.axpy(0.5 * tau, &k1))?;
    let k3 = f(&u.axpy(0.5 * tau, &k2))?;
    let k4 = f(&u.axpy(tau, &k3))?;
    Ok(u.axpy(tau / 6.0, &k1).axpy(tau / 3.0, &k2).axpy(tau / 3.0, &k3).axpy(tau / 6.0, &k4))
}

fn nonlinear_substep(model: &ModelSpec, s: &FlowState, tau: f64, how: Nonlinear) -> Result<FlowState> {
    if model.lambda() == 0.0 {
        return Ok(s.clone());
    }
    match how {
        Nonlinear::Collocation => collocation_nonlinear(model, s, tau),
        Nonlinear::Galerkin => galerkin_nonlinear(model, s, tau),
    }
}

fn check_state(model: &ModelSpec, s: &FlowState) -> Result<()> {
    match (model, s) {
        (ModelSpec::Zakharov { .. }, FlowState::Zakharov(_)) => Ok(()),
        (ModelSpec::Zakharov { .. }, _) => Err(Error::Mismatch("Zakharov flow needs a Zakharov state".into())),
        (_, FlowState::Field(u)) => {
            if u.lattice().dim() != model.dim() {
                return Err(Error::Mismatch("state dimension differs from the model".into()));
            }
            if model.is_real() != u.is_real() {
                return Err(Error::Mismatch("KdV evolves real fields; the others complex ones".into()));
            }
            Ok(())
        }
        _ => Err(Error::Mismatch("Zakharov state given to a single-field model".into())),
    }
}

/// One splitting step of size dt.
pub fn flow_step_with(
    model: &ModelSpec,
    state: &FlowState,
    dt: f64,
    scheme: Scheme,
    how: Nonlinear,
) -> Result<FlowState> {
    check_state(model, state)?;
    let out = match scheme {
        Scheme::Strang => {
            let a = linear_substep(model, state, 0.5 * dt);
            let b = nonlinear_substep(model, &a, dt, how)?;
            linear_substep(model, &b, 0.5 * dt)
        }
        Scheme::Lie => {
            let a = linear_substep(model, state, dt);
            nonlinear_substep(model, &a, dt, how)?
        }
    };
    if !out.is_finite() {
        return Err(Error::Numerical("non-finite coefficient after flow step".into()));
    }
    Ok(out)
}

/// One Strang step with the collocation nonlinear substep.
pub fn flow_step(model: &ModelSpec, state: &FlowState, dt: f64) -> Result<FlowState> {
    flow_step_with(model, state, dt, Scheme::Strang, Nonlinear::Collocation)
}

#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<FlowState>,
    pub mass: Vec<f64>,
    pub energy: Vec<f64>,
    /// max_t |m(t) − m(0)|/m(0), over every step (not just recorded ones).
    pub max_mass_drift: f64,
    pub max_energy_drift: f64,
}

impl Trajectory {
    pub fn last(&self) -> &FlowState {
        self.states.last().expect("trajectory records its initial state")
    }
}

fn rel(a: f64, b: f64) -> f64 {
    let d = (a - b).abs();
    if b == 0.0 {
        d
    } else {
        d / b.abs()
    }
}

/// Integrate to T, recording every `stride` steps and the final state.
pub fn evolve(model: &ModelSpec, state: &FlowState, config: &FlowConfig) -> Result<Trajectory> {
    config.validate()?;
    check_state(model, state)?;
    let steps = config.steps();
    let m0 = state.mass();
    let e0 = state.energy(model)?;
    let mut traj = Trajectory {
        times: vec![0.0],
        states: vec![state.clone()],
        mass: vec![m0],
        energy: vec![e0],
        max_mass_drift: 0.0,
        max_energy_drift: 0.0,
    };
    let mut s = state.clone();
    for i in 1..=steps {
        s = flow_step_with(model, &s, config.dt, config.scheme, config.nonlinear)
            .map_err(|e| Error::Numerical(format!("step {i} of {steps}: {e}")))?;
        let m = s.mass();
        let e = s.energy(model)?;
        traj.max_mass_drift = traj.max_mass_drift.max(rel(m, m0));
        traj.max_energy_drift = traj.max_energy_drift.max(rel(e, e0));
        if i % config.stride == 0 || i == steps {
            traj.times.push(i as f64 * config.dt);
            traj.states.push(s.clone());
            traj.mass.push(m);
            traj.energy.push(e);
        }
    }
    Ok(traj)
}

/// Final state only, without per-step diagnostics.
pub fn evolve_final(model: &ModelSpec, state: &FlowState, config: &FlowConfig) -> Result<FlowState> {
    config.validate()?;
    check_state(model, state)?;
    let mut s = state.clone();
    for _ in 0..config.steps() {
        s = flow_step_with(model, &s, config.dt, config.scheme, config.nonlinear)?;
    }
    Ok(s)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceReport {
    pub dts: Vec<f64>,
    /// ‖u_{dt} − u_{dt/2}‖ for successive halvings.
    pub differences: Vec<f64>,
    pub order: f64,
}

/// Richardson self-convergence: solve with dt, dt/2, dt/4 and compare.
pub fn self_convergence(model: &ModelSpec, state: &FlowState, config: &FlowConfig) -> Result<ConvergenceReport> {
    let dts = vec![config.dt, config.dt / 2.0, config.dt / 4.0];
    let finals: Vec<FlowState> =
        dts.par_iter().map(|&dt| evolve_final(model, state, &FlowConfig { dt, ..*config })).collect::<Result<_>>()?;
    let differences: Vec<f64> = finals.windows(2).map(|w| w[0].distance(&w[1])).collect();
    let order = (differences[0] / differences[1]).log2();
    Ok(ConvergenceReport { dts, differences, order })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InvarianceRow {
    pub functional: String,
    pub before: Estimate,
    pub after: Estimate,
    /// |after − before| / combined standard error.
    pub z: f64,
    pub pass: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InvarianceReport {
    pub rows: Vec<InvarianceRow>,
    /// max |ΔH| / (kinetic + |interaction|) over the ensemble.
    pub max_energy_drift: f64,
    pub max_mass_drift: f64,
    /// Energy drift exceeded the tolerance, so the comparison is not meaningful.
    pub invalid: bool,
    pub pass: bool,
}

/// Push an ensemble through the flow and compare functional means before and after.
pub fn invariance_test(
    model: &ModelSpec,
    ensemble: &[FlowState],
    config: &FlowConfig,
    functionals: &[TestFunctional],
) -> Result<InvarianceReport> {
    config.validate()?;
    if ensemble.len() < 2 {
        return param("invariance test needs at least two samples");
    }
    let pushed: Vec<(FlowState, f64, f64)> = ensemble
        .par_iter()
        .map(|s| -> Result<(FlowState, f64, f64)> {
            let m0 = s.mass();
            let e0 = s.energy(model)?;
            let scale = s.energy_scale(model)?;
            let out = evolve_final(model, s, config)?;
            let de = (out.energy(model)? - e0).abs() / scale.max(f64::MIN_POSITIVE);
            let dm = rel(out.mass(), m0);
            Ok((out, de, dm))
        })
        .collect::<Result<_>>()?;
    let max_energy_drift = pushed.iter().map(|p| p.1).fold(0.0, f64::max);
    let max_mass_drift = pushed.iter().map(|p| p.2).fold(0.0, f64::max);
    let mut rows = Vec::with_capacity(functionals.len());
    for f in functionals {
        let a: Vec<f64> = ensemble.par_iter().map(|s| f.eval(s.u())).collect();
        let b: Vec<f64> = pushed.par_iter().map(|p| f.eval(p.0.u())).collect();
        let (before, after) = (Estimate::of_mean(&a), Estimate::of_mean(&b));
        let se = (before.stderr.powi(2) + after.stderr.powi(2)).sqrt();
        let diff = (after.value - before.value).abs();
        let z = if se > 0.0 {
            diff / se
        } else if diff == 0.0 {
            0.0
        } else {
            f64::INFINITY
        };
        rows.push(InvarianceRow { functional: f.name(), before, after, z, pass: z <= 3.0 });
    }
    let invalid = max_energy_drift > config.energy_tolerance;
    let pass = !invalid && rows.iter().all(|r| r.pass);
    Ok(InvarianceReport { rows, max_energy_drift, max_mass_drift, invalid, pass })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hamiltonian::Potential;
    use crate::spectral::Lattice;

    fn smooth_1d(n: usize) -> FourierField {
        FourierField::from_fn(Lattice::line(n), false, true, |k| {
            let k = k[0] as f64;
            C64::new((-0.5 * k * k).exp(), 0.3 * k * (-0.3 * k * k).exp())
        })
    }

    #[test]
    fn free_single_mode() {
        let u = FourierField::zeros(Lattice::line(4), false, true).with_mode([1, 0], C64::new(1.0, 0.0));
        let m = ModelSpec::nls(4, 0.0);
        for dt in [0.1, 1.7] {
            let FlowState::Field(v) = flow_step(&m, &FlowState::Field(u.clone()), dt).unwrap() else { panic!() };
            let want = C64::from_polar(1.0, -dt);
            assert!((v.get([1, 0]) - want).norm() < 1e-14);
            assert!(v.mass() - 1.0 < 1e-14);
        }
    }

    #[test]
    fn nls_gp_steps_conserve_mass() {
        let s = FlowState::Field(smooth_1d(16));
        let m0 = s.mass();
        for p in [4, 6] {
            let out = flow_step(&ModelSpec::nls(p, 2.0), &s, 0.05).unwrap();
            assert!((out.mass() - m0).abs() < 1e-12 * m0);
        }
        let gp =
            ModelSpec::Gp { potential: Potential::soft_sphere(1.0, 2.0), lambda: 1.0, kappa: 1.0, rho: 1.0, b: 1.0 };
        let u = FourierField::from_fn(Lattice::square(6), false, true, |k| {
            C64::new((-((k[0] * k[0] + k[1] * k[1]) as f64) / 3.0).exp(), 0.1 * k[0] as f64)
        });
        let s = FlowState::Field(u);
        let out = flow_step(&gp, &s, 0.05).unwrap();
        assert!((out.mass() - s.mass()).abs() < 1e-12 * s.mass());
    }

    #[test]
    fn linear_substeps_are_isometries() {
        let u = smooth_1d(12);
        for s in [-0.5, 0.0, 0.7, 1.0] {
            let a = schrodinger_linear(&u, 0.3, 0.77).sobolev_norm(s);
            assert!((a - u.sobolev_norm(s)).abs() < 1e-12 * a);
        }
        let r = u.with_flags(true, false);
        let b = airy_linear(&r, 0.31);
        assert!((b.sobolev_norm(1.0) - r.sobolev_norm(1.0)).abs() < 1e-12 * r.sobolev_norm(1.0));
        assert!(b.hermitian_defect() < 1e-15);
    }

    #[test]
    fn free_flow_conserves_energy_exactly() {
        let cfg = FlowConfig::new(0.01, 1.0);
        let t = evolve(&ModelSpec::nls(4, 0.0), &FlowState::Field(smooth_1d(16)), &cfg).unwrap();
        assert!(t.max_energy_drift < 1e-12);
        assert_eq!(t.times.len(), 101);
    }

    #[test]
    fn strang_is_second_order() {
        let s = FlowState::Field(smooth_1d(16));
        let r = self_convergence(&ModelSpec::nls(4, 1.0), &s, &FlowConfig::new(0.01, 0.5)).unwrap();
        assert!((r.order - 2.0).abs() < 0.2, "{r:?}");
        let g = self_convergence(&ModelSpec::nls(4, 1.0), &s, &FlowConfig::new(0.01, 0.5).galerkin()).unwrap();
        assert!((g.order - 2.0).abs() < 0.2, "{g:?}");
        let lie = FlowConfig { scheme: Scheme::Lie, ..FlowConfig::new(0.01, 0.5) };
        let l = self_convergence(&ModelSpec::nls(4, 1.0), &s, &lie).unwrap();
        assert!((l.order - 1.0).abs() < 0.3, "{l:?}");
    }

    #[test]
    fn galerkin_keeps_mean_zero_and_mass() {
        let u = smooth_1d(8).with_flags(false, false);
        let s = FlowState::Field(u);
        let t = evolve(&ModelSpec::nls(4, 1.0), &s, &FlowConfig::new(0.01, 0.5).galerkin()).unwrap();
        assert!(t.max_mass_drift < 1e-12, "{}", t.max_mass_drift);
        assert_eq!(t.last().u().get([0, 0]), C64::new(0.0, 0.0));
    }

    #[test]
    fn kdv_and_zakharov_run() {
        let u = FourierField::from_fn(Lattice::line(16), true, false, |k| {
            C64::new(0.2 * (-0.2 * (k[0] * k[0]) as f64).exp(), 0.0)
        });
        let t = evolve(&ModelSpec::Kdv { lambda: 1.0 }, &FlowState::Field(u), &FlowConfig::new(1e-3, 0.2)).unwrap();
        assert!(t.max_mass_drift < 1e-8 && t.max_energy_drift < 1e-6, "{} {}", t.max_mass_drift, t.max_energy_drift);
        let lat = Lattice::line(16);
        let zu = smooth_1d(16).scale(0.5);
        let zn = FourierField::zeros(lat, true, true).with_mode([2, 0], C64::new(0.2, 0.1));
        let zv = FourierField::zeros(lat, true, true).with_mode([1, 0], C64::new(0.0, 0.3));
        let z = FlowState::Zakharov(ZakharovState::new(zu, zn, zv).unwrap());
        let m = ModelSpec::Zakharov { b: 10.0 };
        let t = evolve(&m, &z, &FlowConfig::new(1e-3, 0.2)).unwrap();
        assert!(t.max_mass_drift < 1e-12 && t.max_energy_drift < 1e-5, "{} {}", t.max_mass_drift, t.max_energy_drift);
        let r = self_convergence(&m, &z, &FlowConfig::new(0.02, 0.4)).unwrap();
        assert!((r.order - 2.0).abs() < 0.2, "{r:?}");
    }

    #[test]
    fn blowup_is_reported() {
        let u = smooth_1d(8).scale(50.0);
        let err = evolve(&ModelSpec::nls(6, 1.0), &FlowState::Field(u), &FlowConfig::new(0.5, 5.0).galerkin());
        assert!(err.is_err());
    }

    #[test]
    fn mismatched_state_rejected() {
        let u = smooth_1d(4);
        assert!(flow_step(&ModelSpec::Kdv { lambda: 1.0 }, &FlowState::Field(u.clone()), 0.1).is_err());
        assert!(flow_step(&ModelSpec::Zakharov { b: 1.0 }, &FlowState::Field(u), 0.1).is_err());
    }
}
