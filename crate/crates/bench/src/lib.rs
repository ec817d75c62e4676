//! Shared fixtures for the benchmarks.

use gibbslab::sampler::sample_free_field;
use gibbslab::{EmpiricalMeasure, FourierField, GaussianReference, Lattice};

/// A draw from the massive loop measure on T² at cutoff `n`.
pub fn gp_field(n: usize, seed: u64) -> FourierField {
    sample_free_field(&GaussianReference::loop_measure(Lattice::square(n), 1.0), seed, 0)
}

/// A draw from the mean-zero loop measure on T at cutoff `n`.
pub fn loop_field(n: usize, seed: u64) -> FourierField {
    sample_free_field(&GaussianReference::real_loop(Lattice::line(n)), seed, 0)
}

/// Uniform cloud of `count` loop-measure draws on T² at cutoff 4.
pub fn cloud(count: usize, seed: u64) -> EmpiricalMeasure {
    let reference = GaussianReference::loop_measure(Lattice::square(4), 1.0);
    let pts = (0..count as u64).map(|i| sample_free_field(&reference, seed, i)).collect();
    EmpiricalMeasure::uniform(pts).expect("nonempty cloud")
}

/// A draw from the massless complex loop measure on T at cutoff `n`.
pub fn nls_field(n: usize, seed: u64) -> FourierField {
    sample_free_field(&GaussianReference::loop_measure(Lattice::line(n), 0.0), seed, 0)
}
