use std::f64::consts::PI;

use num_complex::Complex64 as C64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{energy, hessian_quadratic_form, kinetic, number_operator, ModelSpec};
use crate::error::{param, Error, Result};
use crate::spectral::{dyadic_block, exact_grid, synth, FourierField, Lattice, ProjectionSpec};

/// Both sides of the pointwise quartic convexity identity, integrated over T.
///
/// lhs = t(f²+g²)² + (1−t)(p²+q²)² − ((tf+(1−t)p)² + (tg+(1−t)q)²)², and rhs is
/// its factorisation through (f−p) and (g−q).
pub fn nls_convexity_identity(
    f: &FourierField,
    g: &FourierField,
    p: &FourierField,
    q: &FourierField,
    t: f64,
) -> Result<(f64, f64)> {
    let lat = *f.lattice();
    if [g, p, q].iter().any(|x| x.lattice() != &lat) {
        return Err(Error::Mismatch("identity fields on different lattices".into()));
    }
    if [f, g, p, q].iter().any(|x| !x.is_real()) {
        return param("identity takes real fields");
    }
    if !(t > 0.0 && t < 1.0) {
        return param("t must lie in (0, 1)");
    }
    let m = exact_grid(&lat, 4);
    let grids: Vec<Vec<C64>> = [f, g, p, q].iter().map(|x| synth(&lat, x.coeffs(), m)).collect();
    let (mut lhs, mut rhs) = (Vec::with_capacity(grids[0].len()), Vec::with_capacity(grids[0].len()));
    for i in 0..grids[0].len() {
        let (l, r) = quartic_identity(grids[0][i].re, grids[1][i].re, grids[2][i].re, grids[3][i].re, t);
        lhs.push(l);
        rhs.push(r);
    }
    let n = lhs.len() as f64;
    Ok((crate::stats::sum(lhs) / n, crate::stats::sum(rhs) / n))
}

/// Pointwise sides of the identity.
pub fn quartic_identity(f: f64, g: f64, p: f64, q: f64, t: f64) -> (f64, f64) {
    let s = 1.0 - t;
    let a = tf_mix(f, p, t);
    let b = tf_mix(g, q, t);
    let lhs = t * (f * f + g * g).powi(2) + s * (p * p + q * q).powi(2) - (a * a + b * b).powi(2);
    let ts = t * s;
    let c1 = 1.0 + t + t * t;
    let c2 = 2.0 + 2.0 * t - 2.0 * t * t;
    let c3 = 2.0 - t + s * s;
    let df = f - p;
    let dg = g - q;
    let rhs = ts * df * df * (c1 * f * f + c2 * f * p + c3 * p * p)
        + ts * dg * dg * (c1 * g * g + c2 * g * q + c3 * q * q)
        + 2.0 * ts * df * dg * (f + p) * ((1.0 + t) * g + s * q)
        + 2.0 * ts * dg * dg * p * p
        + 2.0 * ts * df * df * b * b;
    (lhs, rhs)
}

fn tf_mix(x: f64, y: f64, t: f64) -> f64 {
    t * x + (1.0 - t) * y
}

/// Domain and regularity parameters the closed-form bounds depend on.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Regime {
    /// N in ∫|u|² ≤ N (ignored for Zakharov and GP, whose radius is in the model).
    pub mass_bound: f64,
    /// Sobolev index s of the critical domain, s > 1/4.
    pub s: f64,
    /// κ in ‖u‖_{H^s} ≤ κ for the critical domain.
    pub kappa: f64,
}

impl Regime {
    pub fn mass(n: f64) -> Self {
        Self { mass_bound: n, s: 0.3, kappa: 1.0 }
    }
}

/// Closed-form LSI constant, or why none applies.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum Prediction {
    Value { alpha: f64 },
    OutOfRegime { reason: String },
}

impl Prediction {
    pub fn alpha(&self) -> Option<f64> {
        match self {
            Self::Value { alpha } => Some(*alpha),
            Self::OutOfRegime { .. } => None,
        }
    }
}

/// Threshold on the mass penalty that makes the critical p = 6 energy
/// uniformly convex on {∫|u|² ≤ N₀, ‖u‖_{H^s} ≤ κ}:
/// 2N₀²(40^{4s+1}(2πκ)⁴/9)^{1/(4s−1)}.
pub fn critical_mass_penalty(n0: f64, s: f64, kappa: f64) -> Result<f64> {
    if s <= 0.25 {
        return param("critical domain needs s > 1/4");
    }
    let inner = 40f64.powf(4.0 * s + 1.0) * (2.0 * PI * kappa).powi(4) / 9.0;
    Ok(2.0 * n0 * n0 * inner.powf(1.0 / (4.0 * s - 1.0)))
}

/// Mass radius of the model's own domain: B for Zakharov, N_n + B for GP.
pub fn model_mass_bound(model: &ModelSpec, n: usize, regime: &Regime) -> f64 {
    match model {
        ModelSpec::Zakharov { b } => *b,
        ModelSpec::Gp { rho, b, .. } => number_operator(n, *rho) + b,
        _ => regime.mass_bound,
    }
}

fn nls_alpha(lambda: f64, n: f64) -> Prediction {
    let x = lambda * n;
    if lambda == 0.0 {
        Prediction::Value { alpha: 1.0 }
    } else if (0.0..3.0 / (14.0 * PI * PI)).contains(&x) {
        Prediction::Value { alpha: 1.0 - 14.0 * PI * PI * x / 3.0 }
    } else {
        Prediction::OutOfRegime { reason: format!("λN = {x} outside [0, 3/(14π²))") }
    }
}

/// Predicted LSI constant α for the model's Gibbs measure.
pub fn lsi_constant_predicted(model: &ModelSpec, n: usize, regime: &Regime) -> Prediction {
    if model.validate().is_err() {
        return Prediction::OutOfRegime { reason: "invalid model parameters".into() };
    }
    match model {
        ModelSpec::Nls { p, lambda, dim, mass_penalty } => {
            if *lambda == 0.0 {
                return Prediction::Value { alpha: 1.0 };
            }
            match (p, dim) {
                (4, 1) => nls_alpha(*lambda, regime.mass_bound),
                (6, 1) => {
                    let m = if *mass_penalty > 0.0 {
                        *mass_penalty
                    } else {
                        match critical_mass_penalty(regime.mass_bound, regime.s, regime.kappa) {
                            Ok(m) => m,
                            Err(e) => return Prediction::OutOfRegime { reason: e.to_string() },
                        }
                    };
                    Prediction::Value { alpha: 0.5 * (-regime.mass_bound * m).exp() }
                }
                _ => Prediction::OutOfRegime { reason: format!("no closed form for p = {p}, D = {dim}") },
            }
        }
        ModelSpec::Kdv { lambda } => {
            let x = lambda * regime.mass_bound.sqrt();
            if x < 3.0 / (PI * PI) {
                Prediction::Value { alpha: 1.0 - PI * PI * x / 3.0 }
            } else {
                Prediction::OutOfRegime { reason: format!("λ√N = {x} ≥ 3/π²") }
            }
        }
        ModelSpec::Zakharov { b } => match nls_alpha(1.0, *b) {
            Prediction::Value { alpha } => Prediction::Value { alpha: alpha.min(1.0) },
            other => other,
        },
        ModelSpec::Gp { potential, lambda, kappa, .. } => {
            let _ = n;
            if *lambda == 0.0 {
                return Prediction::Value { alpha: 1.0 };
            }
            let lhs = kappa * potential.hat_zero();
            let rhs = 3.0 * potential.sup_norm();
            if lhs > rhs {
                Prediction::Value { alpha: 0.5 }
            } else {
                Prediction::OutOfRegime { reason: format!("κV̂(0) = {lhs} ≤ 3‖V‖∞ = {rhs}") }
            }
        }
    }
}

/// Convexity gap tH(u)+(1−t)H(v)−H(tu+(1−t)v) against the closed-form bound.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConvexityMargin {
    pub gap: f64,
    pub bound: f64,
    /// gap − bound; nonnegative in regime.
    pub margin: f64,
    /// Parameters satisfy the hypothesis and both endpoints lie in the domain.
    pub in_regime: bool,
}

pub fn convexity_margin(
    model: &ModelSpec,
    u: &FourierField,
    v: &FourierField,
    t: f64,
    regime: &Regime,
) -> Result<ConvexityMargin> {
    if !(t > 0.0 && t < 1.0) {
        return param("t must lie in (0, 1)");
    }
    if u.lattice() != v.lattice() {
        return Err(Error::Mismatch("endpoints on different lattices".into()));
    }
    let mid = u.lerp(v, t);
    let gap = t * energy(model, u)? + (1.0 - t) * energy(model, v)? - energy(model, &mid)?;
    let w = u.sub(v);
    let grad_sq = 2.0 * kinetic(&w);
    let ts = t * (1.0 - t);
    let n = u.lattice().n();
    let radius = model_mass_bound(model, n, regime);
    let inside = u.mass() <= radius * (1.0 + 1e-12) && v.mass() <= radius * (1.0 + 1e-12);
    let (bound, hypothesis) = match model {
        ModelSpec::Nls { p, lambda, mass_penalty, .. } => {
            if *lambda == 0.0 {
                (0.5 * ts * (grad_sq + mass_penalty * w.mass()), true)
            } else if *p == 6 {
                let ok = critical_mass_penalty(regime.mass_bound, regime.s, regime.kappa)
                    .map(|m| *mass_penalty >= m)
                    .unwrap_or(false);
                (0.25 * ts * (grad_sq + w.mass()), ok)
            } else {
                let alpha = 1.0 - 14.0 * PI * PI * lambda * regime.mass_bound / 3.0;
                let ok = *p == 4 && model.dim() == 1 && alpha > 0.0;
                (0.5 * ts * alpha * grad_sq, ok)
            }
        }
        ModelSpec::Kdv { lambda } => {
            let alpha = 1.0 - PI * PI * lambda * regime.mass_bound.sqrt() / 3.0;
            (0.5 * ts * alpha * grad_sq, alpha > 0.0)
        }
        ModelSpec::Zakharov { b } => {
            let alpha = 1.0 - 14.0 * PI * PI * b / 3.0;
            (0.5 * ts * alpha * grad_sq, alpha > 0.0)
        }
        ModelSpec::Gp { potential, lambda, kappa, rho, b } => {
            let coef =
                lambda * (kappa * potential.hat_zero() - 3.0 * potential.sup_norm()) * (number_operator(n, *rho) + b);
            let ok = *lambda == 0.0 || kappa * potential.hat_zero() > 3.0 * potential.sup_norm();
            (0.5 * ts * (grad_sq + coef * w.mass()), ok)
        }
    };
    Ok(ConvexityMargin { gap, bound, margin: gap - bound, in_regime: hypothesis && inside })
}

/// Minimum over random trials of the block Hessian ratio
/// d²H_{Δ(J)}(u+tv) / ∫|P_J v|² for u in the block with ∫|u|² ≤ N.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BlockProbeReport {
    pub block: Vec<i32>,
    pub block_size: usize,
    pub min_ratio: f64,
    /// (D/4)|Δ(J)|^{2/D}.
    pub scaling: f64,
    /// min_{k ∈ Δ(J)} |k|².
    pub min_k2: f64,
    pub trials: usize,
}

pub fn block_convexity_probe(
    block: &[i32],
    model: &ModelSpec,
    mass_bound: f64,
    trials: usize,
    seed: u64,
) -> Result<BlockProbeReport> {
    let ModelSpec::Nls { p, dim, .. } = model else {
        return param("block probe applies to NLS models");
    };
    if block.len() != *dim {
        return Err(Error::Mismatch(format!("block has {} indices for D = {dim}", block.len())));
    }
    if (*p as f64) > 2.0 + 4.0 / *dim as f64 {
        return param(format!("p = {p} exceeds 2 + 4/D"));
    }
    if trials == 0 {
        return param("need at least one trial");
    }
    let spec = ProjectionSpec::DyadicBlock(block.to_vec());
    let size = spec.block_size();
    let n = block.iter().map(|&j| dyadic_block(j).0.abs().max(dyadic_block(j).1.abs())).max().unwrap_or(0);
    let lat = Lattice::new(*dim, n.max(1) as usize, 2)?;
    let members: Vec<usize> = (0..lat.len()).filter(|&i| spec.multiplier(lat.mode(i), *dim) == 1.0).collect();
    if members.is_empty() {
        return Err(Error::Parameter("empty block".into()));
    }
    let min_k2 = members.iter().map(|&i| lat.k2(i)).fold(f64::INFINITY, f64::min);
    let zero_mode = members.contains(&lat.zero_index());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let draw = |rng: &mut ChaCha8Rng| {
        let mut f = FourierField::zeros(lat, false, zero_mode);
        for &i in &members {
            f.coeffs[i] = C64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
        }
        f
    };
    let mut min_ratio = f64::INFINITY;
    for _ in 0..trials {
        let u0 = draw(&mut rng);
        let r: f64 = rng.gen_range(0.0..1.0);
        let u = u0.scale((mass_bound * r).sqrt() / u0.mass().sqrt().max(1e-300));
        let v = draw(&mut rng);
        let h = hessian_quadratic_form(model, &u, &v)?;
        min_ratio = min_ratio.min(h.value / v.mass());
    }
    Ok(BlockProbeReport {
        block: block.to_vec(),
        block_size: size,
        min_ratio,
        scaling: *dim as f64 / 4.0 * (size as f64).powf(2.0 / *dim as f64),
        min_k2,
        trials,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hamiltonian::Potential;
    use proptest::prelude::*;
    use rand::Rng;

    fn constant(lat: Lattice, c: f64) -> FourierField {
        FourierField::zeros(lat, true, true).with_mode([0, 0], C64::new(c, 0.0))
    }

    #[test]
    fn identity_examples() {
        let lat = Lattice::line(3);
        let one = constant(lat, 1.0);
        let zero = constant(lat, 0.0);
        let (l, r) = nls_convexity_identity(&one, &zero, &zero, &zero, 0.5).unwrap();
        assert!((l - 7.0 / 16.0).abs() < 1e-15 && (r - 7.0 / 16.0).abs() < 1e-15);
        let (l, r) = nls_convexity_identity(&one, &one, &one, &one, 0.3).unwrap();
        assert!(l.abs() < 1e-15 && r.abs() < 1e-15);
    }

    proptest! {
        #[test]
        fn identity_is_algebraic(f in -3.0..3.0f64, g in -3.0..3.0f64, p in -3.0..3.0f64, q in -3.0..3.0f64, t in 0.001..0.999f64) {
            let (l, r) = quartic_identity(f, g, p, q, t);
            prop_assert!((l - r).abs() < 1e-12 * l.abs().max(1.0) * 100.0);
        }
    }

    #[test]
    fn identity_random_tuples() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut worst: f64 = 0.0;
        for _ in 0..10_000 {
            let x: [f64; 4] = std::array::from_fn(|_| rng.gen_range(-1.0..1.0));
            let t = rng.gen_range(0.0..1.0);
            let (l, r) = quartic_identity(x[0], x[1], x[2], x[3], t);
            worst = worst.max((l - r).abs() / l.abs().max(1.0));
        }
        assert!(worst < 1e-12, "{worst}");
    }

    #[test]
    fn lsi_formula_examples() {
        let nls = ModelSpec::nls(4, 1.0);
        let n = 3.0 / (28.0 * PI * PI);
        let a = lsi_constant_predicted(&nls, 16, &Regime::mass(n)).alpha().unwrap();
        assert!((a - 0.5).abs() < 1e-14);
        assert!(lsi_constant_predicted(&nls, 16, &Regime::mass(1.0)).alpha().is_none());
        let kdv = ModelSpec::Kdv { lambda: 1.0 };
        let n = (3.0 / (2.0 * PI * PI)).powi(2);
        let a = lsi_constant_predicted(&kdv, 16, &Regime::mass(n)).alpha().unwrap();
        assert!((a - 0.5).abs() < 1e-14);
        let gp_bad = ModelSpec::Gp { potential: Potential::cosine_pair(), lambda: 1.0, kappa: 1.0, rho: 1.0, b: 1.0 };
        assert!(lsi_constant_predicted(&gp_bad, 4, &Regime::mass(1.0)).alpha().is_none());
        let gp_ok =
            ModelSpec::Gp { potential: Potential::soft_sphere(1.0, 2.0), lambda: 1.0, kappa: 50.0, rho: 1.0, b: 1.0 };
        assert_eq!(lsi_constant_predicted(&gp_ok, 4, &Regime::mass(1.0)).alpha(), Some(0.5));
    }

    #[test]
    fn quadratic_case_saturates() {
        let lat = Lattice::line(5);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut draw = || {
            FourierField::from_fn(lat, false, false, |_| C64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)))
        };
        let (u, v) = (draw(), draw());
        let m = convexity_margin(&ModelSpec::nls(4, 0.0), &u, &v, 0.5, &Regime::mass(100.0)).unwrap();
        assert!(m.margin.abs() < 1e-12 * m.gap);
        let same = convexity_margin(&ModelSpec::nls(4, 1.0), &u, &u, 0.5, &Regime::mass(100.0)).unwrap();
        assert!(same.gap.abs() < 1e-12 && same.margin.abs() < 1e-12);
    }

    #[test]
    fn critical_penalty_grows_with_kappa() {
        let a = critical_mass_penalty(1.0, 0.3, 1.0).unwrap();
        let b = critical_mass_penalty(1.0, 0.3, 2.0).unwrap();
        assert!(b > a && a > 1e20);
        assert!(critical_mass_penalty(1.0, 0.25, 1.0).is_err());
    }

    #[test]
    fn block_probe_free_case_is_kinetic_minimum() {
        let model = ModelSpec::Nls { p: 4, lambda: 0.0, dim: 1, mass_penalty: 0.0 };
        let r = block_convexity_probe(&[3], &model, 1.0, 50, 2).unwrap();
        assert_eq!(r.block_size, 4);
        assert_eq!(r.min_k2, 16.0);
        assert!(r.min_ratio >= r.min_k2 - 1e-12);
        assert!(r.min_ratio >= r.scaling);
        assert!(block_convexity_probe(&[3, 2], &model, 1.0, 5, 2).is_err());
    }
}
