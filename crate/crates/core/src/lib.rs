//! Gibbs measures, Hamiltonian flows and concentration diagnostics for
//! truncated periodic dispersive equations.

pub mod concentration;
pub mod error;
pub mod flow;
pub mod hamiltonian;
pub mod sampler;
pub mod spectral;
pub mod stats;
pub mod transport;

pub use concentration::{MetricSpec, TestFunctional};
pub use error::{Error, Result};
pub use flow::{FlowConfig, FlowState, Trajectory};
pub use hamiltonian::{HessianProbe, ModelSpec, Potential, ZakharovState};
pub use sampler::{GaussianReference, PcnConfig, PhaseDomain, SampleEnsemble, Target};
pub use spectral::{FourierField, GridBuffer, Lattice, Mode, ProjectionSpec};
pub use stats::Estimate;
pub use transport::{CostSpec, EmpiricalMeasure, TransportPlan};
